//! Dense linear algebra for generators of finite jump processes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::closed_proper_subset;

/// Largest Poisson mean handled in one uniformization sub-step.
const MAX_STEP_MEAN: f64 = 10.0;
/// Truncation threshold for the Poisson series, relative to the running sum.
const SERIES_TOL: f64 = 1e-18;

/// Which side of the semigroup is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `e^{tL} v` (expectations of functions).
    Backward,
    /// `(v^T e^{tL})^T` (evolution of distributions).
    Forward,
}

/// Applies `e^{tL}` to `v` by uniformization.
///
/// `l` must be a Metzler matrix (nonnegative off-diagonal). Tilted generators
/// with positive diagonal potentials qualify, so the same routine serves
/// Feynman-Kac semigroups. All series terms are nonnegative combinations of
/// `v`, so there is no cancellation for nonnegative `v`.
pub fn semigroup_apply(l: &DMatrix<f64>, v: &DVector<f64>, t: f64, side: Side) -> DVector<f64> {
    assert!(t >= 0.0, "negative time {t}");
    let n = l.nrows();
    let lambda = (0..n).map(|x| -l[(x, x)]).fold(0.0, f64::max);
    if t == 0.0 || n == 0 {
        return v.clone();
    }
    if lambda == 0.0 {
        // diagonal with nonnegative entries only
        return DVector::from_fn(n, |x, _| v[x] * (l[(x, x)] * t).exp());
    }
    let mut p = l / lambda;
    for x in 0..n {
        p[(x, x)] += 1.0;
    }
    if side == Side::Forward {
        p.transpose_mut();
    }
    let steps = (lambda * t / MAX_STEP_MEAN).ceil().max(1.0) as usize;
    let mu = lambda * t / steps as f64;
    let mut out = v.clone();
    let mut term = DVector::zeros(n);
    for _ in 0..steps {
        term.copy_from(&out);
        let mut weight = (-mu).exp();
        let mut acc = &term * weight;
        let mut k = 0usize;
        loop {
            k += 1;
            term = &p * &term;
            weight *= mu / k as f64;
            let contrib = &term * weight;
            acc += &contrib;
            if k as f64 > mu && contrib.amax() <= SERIES_TOL * acc.amax() {
                break;
            }
            if k > 10_000 {
                break;
            }
        }
        out = acc;
    }
    out
}

/// Stationary distribution of an irreducible generator by the
/// Grassmann-Taksar-Heyman elimination, which involves no subtractions.
pub fn stationary_gth(generator: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = generator.nrows();
    if let Some(closed) = closed_proper_subset(generator) {
        return Err(Error::Reducible { closed });
    }
    let mut a = generator.clone();
    for l in (1..n).rev() {
        let s: f64 = (0..l).map(|j| a[(l, j)]).sum();
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::Numerical(format!(
                "GTH elimination hit a non-positive pivot {s} at state {l}"
            )));
        }
        for i in 0..l {
            a[(i, l)] /= s;
        }
        for i in 0..l {
            let ail = a[(i, l)];
            if ail == 0.0 {
                continue;
            }
            for j in 0..l {
                if i != j {
                    a[(i, j)] += ail * a[(l, j)];
                }
            }
        }
    }
    let mut pi = DVector::zeros(n);
    pi[0] = 1.0;
    for j in 1..n {
        pi[j] = (0..j).map(|i| pi[i] * a[(i, j)]).sum();
    }
    let total = pi.sum();
    Ok(pi / total)
}

/// Solves `L v = -u` with `<v>_rho = 0`, for `u` with `<u>_rho = 0`, where
/// `rho` is the stationary distribution of `L`.
///
/// The rank-one shift `L - c 1 rho^T` is invertible and agrees with `L` on
/// `rho`-mean-zero vectors. One step of iterative refinement is applied.
pub fn mean_zero_solve(l: &DMatrix<f64>, rho: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let n = l.nrows();
    let c = (0..n).map(|x| -l[(x, x)]).fold(0.0, f64::max).max(1e-300);
    let shifted = l - DMatrix::from_fn(n, n, |_, y| c * rho[y]);
    let lu = shifted.clone().lu();
    let rhs = -u;
    let mut v = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular shifted generator".into()))?;
    let residual = &rhs - &shifted * &v;
    if let Some(dv) = lu.solve(&residual) {
        v += dv;
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite resolvent solution".into()));
    }
    Ok(v)
}

/// Spectral gap of `L` from the eigenvalues of its `rho`-symmetrization
/// `(D^{1/2} L D^{-1/2} + transpose) / 2`, `D = diag(rho)`. Exact for
/// reversible generators, an estimate otherwise.
pub fn spectral_gap(l: &DMatrix<f64>, rho: &DVector<f64>) -> f64 {
    let n = l.nrows();
    let s = DMatrix::from_fn(n, n, |x, y| l[(x, y)] * (rho[x] / rho[y]).sqrt());
    let sym = (&s + s.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    if eig.len() < 2 {
        return 0.0;
    }
    -eig[1]
}
