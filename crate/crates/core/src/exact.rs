//! Deterministic backend: stationary solves, finite-time evolution, first and
//! second order stationary corrections, tilted-generator moments and the
//! brute-force epsilon-derivative oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::finite_diff::mixed_partial;
use crate::linalg::{self, Side};
use crate::model::{JumpModel, RateMatrix};

/// Relative tolerance for the self-adjointness check of `L0`.
pub const SELF_ADJOINT_TOL: f64 = 1e-12;
/// Ratio of the default horizon to the relaxation time `1/alpha`.
pub const HORIZON_GAPS: f64 = 30.0;
/// Largest total differentiation depth of [`tilted_moment_exact`].
pub const MAX_TILT_DEPTH: usize = 6;
/// Base finite-difference step per tilt.
pub const TILT_STEP: f64 = 1e-2;

/// A backward generator with its stationary law and spectral gap estimate.
#[derive(Debug, Clone)]
pub struct Generator {
    matrix: DMatrix<f64>,
    stationary: DVector<f64>,
    gap: f64,
}

impl Generator {
    pub fn from_rates(rates: &RateMatrix) -> Result<Self> {
        let matrix = rates.generator().clone();
        let stationary = linalg::stationary_gth(&matrix)?;
        let gap = linalg::spectral_gap(&matrix, &stationary);
        Ok(Self {
            matrix,
            stationary,
            gap,
        })
    }

    /// The reference generator `L0` of a model, checked to be self-adjoint
    /// in `l2(rho0)`.
    pub fn equilibrium(model: &JumpModel) -> Result<Self> {
        let matrix = model.base_rate_matrix().generator().clone();
        let stationary = model.equilibrium_distribution();
        let n = model.n();
        for x in 0..n {
            for y in (x + 1)..n {
                let a = stationary[x] * matrix[(x, y)];
                let b = stationary[y] * matrix[(y, x)];
                if (a - b).abs() > SELF_ADJOINT_TOL * a.abs().max(b.abs()) {
                    return Err(Error::PairValidation {
                        from: model.labels()[x].clone(),
                        to: model.labels()[y].clone(),
                        reason: "reference generator is not self-adjoint in l2(rho0)".into(),
                    });
                }
            }
        }
        let gap = linalg::spectral_gap(&matrix, &stationary);
        Ok(Self {
            matrix,
            stationary,
            gap,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    /// Spectral gap estimate `alpha`.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// Default horizon `30 / alpha`.
    pub fn horizon(&self) -> f64 {
        HORIZON_GAPS / self.gap
    }

    /// `(L g)(x)`.
    pub fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.matrix * g
    }

    /// `rho`-weighted inner product.
    pub fn inner(&self, g: &DVector<f64>, h: &DVector<f64>) -> f64 {
        g.iter()
            .zip(h.iter())
            .zip(self.stationary.iter())
            .map(|((a, b), r)| a * b * r)
            .sum()
    }
}

/// Stationary distribution of an irreducible rate matrix.
pub fn stationary_solve(rates: &RateMatrix) -> Result<DVector<f64>> {
    let rho = linalg::stationary_gth(rates.generator())?;
    let residual = (rho.transpose() * rates.generator()).amax();
    let scale = rates.max_escape().max(f64::MIN_POSITIVE);
    if residual > 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "stationary residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(rho)
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time must be finite and nonnegative, got {t}"
        )));
    }
    Ok(())
}

/// `p(., T) = initial^T exp(T L)`.
pub fn evolve_distribution(rates: &RateMatrix, initial: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    check_time(t)?;
    if initial.len() != rates.n() {
        return Err(Error::InvalidArgument(format!(
            "initial distribution has {} entries for {} states",
            initial.len(),
            rates.n()
        )));
    }
    Ok(linalg::semigroup_apply(rates.generator(), initial, t, Side::Forward))
}

/// `x -> E_x[g(x_T)] = (exp(T L) g)(x)`.
pub fn evolve_observable(rates: &RateMatrix, g: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    check_time(t)?;
    if g.len() != rates.n() {
        return Err(Error::InvalidArgument(format!(
            "observable has {} entries for {} states",
            g.len(),
            rates.n()
        )));
    }
    Ok(linalg::semigroup_apply(rates.generator(), g, t, Side::Backward))
}

fn check_mean_zero(name: &str, u: &DVector<f64>, rho: &DVector<f64>) -> Result<()> {
    let mean = rho.dot(u);
    if mean.abs() > 1e-10 * u.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::Inconsistent(format!(
            "equilibrium mean of {name} is {mean:e}, expected zero"
        )));
    }
    Ok(())
}

fn resolvent(gen: &Generator, name: &str, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_mean_zero(name, u, gen.stationary())?;
    if u.amax() == 0.0 {
        return Ok(DVector::zeros(u.len()));
    }
    let v = linalg::mean_zero_solve(gen.matrix(), gen.stationary(), u)?;
    let residual = (gen.apply(&v) + u).amax();
    if residual > 1e-10 * u.amax() {
        return Err(Error::Numerical(format!(
            "resolvent residual {residual:e} for {name}"
        )));
    }
    Ok(v)
}

/// First order: `h` with `L0 h = -w`, `<h>_rho0 = 0`, where
/// `w(x) = sum_y k0(x,y) f(x,y)`. To first order `rho / rho0 = 1 - eps beta h`.
pub fn mclennan_h(model: &JumpModel) -> Result<DVector<f64>> {
    let gen = Generator::equilibrium(model)?;
    resolvent(&gen, "w", &model.forcing_rate())
}

/// Pieces of the second order correction.
#[derive(Debug, Clone)]
pub struct SecondOrder {
    /// `L0 g = -zeta`.
    pub g: DVector<f64>,
    /// `phi(x) = sum_y k0(x,y) f(x,y) g(y) + zeta(x) g(x)`.
    pub phi: DVector<f64>,
    /// `L0 H = -phi`.
    pub big_h: DVector<f64>,
    /// `(eps beta)^2 H`; the order-eps^2 term of `rho / rho0` is `h2 / 2`.
    pub h2: DVector<f64>,
}

pub fn second_order_h2(model: &JumpModel) -> Result<SecondOrder> {
    let gen = Generator::equilibrium(model)?;
    let n = model.n();
    let zeta = model.forcing_rate();
    let g = resolvent(&gen, "zeta", &zeta)?;
    let phi = DVector::from_fn(n, |x, _| {
        let jumps: f64 = (0..n)
            .filter(|&y| y != x)
            .map(|y| model.base_rate(x, y) * model.forcing(x, y) * g[y])
            .sum();
        jumps + zeta[x] * g[x]
    });
    let big_h = resolvent(&gen, "phi", &phi)?;
    let scale = (model.epsilon() * model.beta()).powi(2);
    let h2 = &big_h * scale;
    Ok(SecondOrder { g, phi, big_h, h2 })
}

/// Activity densities `tau_j(x) = 2 sum_y k0(x,y) (beta eps f(x,y) / 2)^j / j!`.
pub fn activity_density(model: &JumpModel, j: usize) -> DVector<f64> {
    activity_density_scaled(model, j) * model.epsilon().powi(j as i32)
}

/// `tau_j / eps^j`.
fn activity_density_scaled(model: &JumpModel, j: usize) -> DVector<f64> {
    let n = model.n();
    let fact: f64 = (1..=j).map(|i| i as f64).product();
    DVector::from_fn(n, |x, _| {
        (0..n)
            .filter(|&y| y != x)
            .map(|y| {
                let a = 0.5 * model.beta() * model.forcing(x, y);
                model.base_rate(x, y) * a.powi(j as i32)
            })
            .sum::<f64>()
            * 2.0
            / fact
    })
}

/// Tilted generator in the scaled variables: jump weights
/// `exp(theta_0 beta f)` and potential `sum_j theta_j tau_j / eps^j`.
/// `tilts` pairs an observable index (0 for S, j for T_j) with its tilt.
pub(crate) fn tilted_generator(model: &JumpModel, tilts: &[(usize, f64)]) -> DMatrix<f64> {
    let n = model.n();
    let theta0: f64 = tilts.iter().filter(|t| t.0 == 0).map(|t| t.1).sum();
    let mut l = DMatrix::zeros(n, n);
    for x in 0..n {
        let mut escape = 0.0;
        for y in 0..n {
            if x == y {
                continue;
            }
            let k = model.base_rate(x, y);
            escape += k;
            l[(x, y)] = if theta0 == 0.0 {
                k
            } else {
                k * (theta0 * model.beta() * model.forcing(x, y)).exp()
            };
        }
        l[(x, x)] = -escape;
    }
    for &(j, theta) in tilts.iter().filter(|t| t.0 > 0) {
        let tau = activity_density_scaled(model, j);
        for x in 0..n {
            l[(x, x)] += theta * tau[x];
        }
    }
    l
}

fn moment_order(b: &[usize]) -> usize {
    b.iter().enumerate().map(|(j, &bj)| if j == 0 { bj } else { j * bj }).sum()
}

/// `<S^{b0} T_1^{b1} ... >` under the reference process started from every
/// state, over horizon `t`.
///
/// Computed as a mixed derivative of the Feynman-Kac semigroup
/// `M(theta) = exp(t L_theta) 1` at `theta = 0`. Tilts act on `S / eps` and
/// `T_j / eps^j`, so the result is that derivative times `eps^m`.
pub fn tilted_moments_all_states(model: &JumpModel, b: &[usize], t: f64) -> Result<DVector<f64>> {
    let depth: usize = b.iter().sum();
    if depth > MAX_TILT_DEPTH {
        return Err(Error::InvalidArgument(format!(
            "differentiation depth {depth} exceeds {MAX_TILT_DEPTH}"
        )));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t}")));
    }
    let n = model.n();
    if depth == 0 {
        return Ok(DVector::from_element(n, 1.0));
    }
    let eps_m = model.epsilon().powi(moment_order(b) as i32);
    if eps_m == 0.0 || model.max_abs_forcing() == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let vars: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0).collect();
    let orders: Vec<usize> = vars.iter().map(|&j| b[j]).collect();
    let ones = DVector::from_element(n, 1.0);
    let eval = |theta: &[f64]| -> Result<DVector<f64>> {
        let tilts: Vec<(usize, f64)> = vars.iter().copied().zip(theta.iter().copied()).collect();
        let l = tilted_generator(model, &tilts);
        Ok(linalg::semigroup_apply(&l, &ones, t, Side::Backward))
    };
    let levels = if depth <= 4 { 2 } else { 1 };
    let first = mixed_partial(&orders, TILT_STEP, levels, &eval);
    let derivative = match first {
        Ok(d) => d,
        Err(Error::Numerical(_)) => mixed_partial(&orders, TILT_STEP / 4.0, levels, &eval)?,
        Err(e) => return Err(e),
    };
    Ok(derivative * eps_m)
}

/// Single-state version of [`tilted_moments_all_states`].
pub fn tilted_moment_exact(model: &JumpModel, b: &[usize], x: usize, t: f64) -> Result<f64> {
    if x >= model.n() {
        return Err(Error::InvalidArgument(format!("state {x} out of range")));
    }
    Ok(tilted_moments_all_states(model, b, t)?[x])
}

/// Stencil half-width used by the epsilon-derivative oracle.
pub fn oracle_step(model: &JumpModel) -> f64 {
    1e-2 / (model.beta() * model.max_abs_forcing()).max(1e-300)
}

/// `d^m/d eps^m (rho_eps / rho0)` at `eps = 0` for every state, by central
/// differences of exact stationary solves with Richardson extrapolation.
pub fn epsilon_derivatives_all_states(model: &JumpModel, m: usize) -> Result<DVector<f64>> {
    if !(1..=4).contains(&m) {
        return Err(Error::InvalidArgument(format!("oracle order {m} outside 1..=4")));
    }
    let n = model.n();
    if model.max_abs_forcing() == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let rho0 = model.equilibrium_distribution();
    let eval = |e: &[f64]| -> Result<DVector<f64>> {
        let rho = stationary_solve(&model.with_epsilon(e[0]).build_driven_rates())?;
        Ok(rho.component_div(&rho0))
    };
    let levels = if m <= 3 { 2 } else { 1 };
    mixed_partial(&[m], oracle_step(model), levels, &eval)
}

pub fn epsilon_derivative_oracle(model: &JumpModel, x: usize, m: usize) -> Result<f64> {
    if x >= model.n() {
        return Err(Error::InvalidArgument(format!("state {x} out of range")));
    }
    Ok(epsilon_derivatives_all_states(model, m)?[x])
}
