//! Order-by-order expansion of `rho(x) / rho0(x)` in the drive amplitude.
//!
//! Order `m` collects the moments `<S^{b0} T_1^{b1} ... T_m^{bm}>` of the
//! reference process started at `x`, over all exponent sequences with `b0` odd
//! and `b0 + sum_j j bj = m`, with coefficient
//! `2 (-1/2)^{b0 + b1 + ... + bm} / (b0! b1! ... bm!)`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exact::{self, Generator};
use crate::model::JumpModel;
use crate::sampler::{run_paths, Dynamics, McConfig, PathObservables, Start};

fn factorial(k: usize) -> BigInt {
    (1..=k).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// One expansion term: exponents `(b0, ..., bm)` and its exact coefficient.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MomentSpec {
    b: Vec<usize>,
    coefficient: BigRational,
}

impl MomentSpec {
    /// Builds a spec from exponents `(b0, b1, ...)`; trailing entries are
    /// padded or trimmed to length `m + 1`.
    pub fn new(mut b: Vec<usize>) -> Result<Self> {
        if b.is_empty() || b[0] % 2 == 0 {
            return Err(Error::InvalidArgument(format!("b0 must be odd, got {b:?}")));
        }
        let m = b[0] + b.iter().enumerate().skip(1).map(|(j, &bj)| j * bj).sum::<usize>();
        if b.len() > m + 1 {
            if b[m + 1..].iter().any(|&x| x != 0) {
                return Err(Error::InvalidArgument(format!("inconsistent exponents {b:?}")));
            }
            b.truncate(m + 1);
        }
        b.resize(m + 1, 0);
        let total: usize = b.iter().sum();
        let denominator = b.iter().fold(BigInt::one(), |acc, &k| acc * factorial(k));
        let sign = if total % 2 == 0 { 1 } else { -1 };
        let coefficient = BigRational::new(BigInt::from(2 * sign), denominator * (BigInt::one() << total));
        Ok(Self { b, coefficient })
    }

    pub fn order(&self) -> usize {
        self.b.len() - 1
    }

    /// `(b0, ..., bm)`.
    pub fn exponents(&self) -> &[usize] {
        &self.b
    }

    pub fn coefficient(&self) -> &BigRational {
        &self.coefficient
    }

    pub fn coefficient_f64(&self) -> f64 {
        self.coefficient.to_f64().expect("small rational")
    }

    /// Total number of observable factors `sum_j bj`.
    pub fn depth(&self) -> usize {
        self.b.iter().sum()
    }

    /// Largest `j >= 1` with `bj > 0`, at least 1.
    pub fn max_activity_index(&self) -> usize {
        (1..self.b.len()).rev().find(|&j| self.b[j] > 0).unwrap_or(1)
    }

    /// `S^{b0} T_1^{b1} ...` for one path.
    pub fn evaluate(&self, obs: &PathObservables) -> f64 {
        let mut v = obs.entropy_flux.powi(self.b[0] as i32);
        for (j, &bj) in self.b.iter().enumerate().skip(1) {
            if bj > 0 {
                v *= obs.activity_orders[j - 1].powi(bj as i32);
            }
        }
        v
    }

    /// Readable monomial, e.g. `S T1^2`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (j, &bj) in self.b.iter().enumerate() {
            if bj == 0 {
                continue;
            }
            let name = if j == 0 { "S".to_string() } else { format!("T{j}") };
            parts.push(if bj == 1 { name } else { format!("{name}^{bj}") });
        }
        parts.join(" ")
    }

    pub fn to_json(&self) -> Value {
        json!({
            "m": self.order(),
            "b": self.b,
            "coeff_num": big_to_json(self.coefficient.numer()),
            "coeff_den": big_to_json(self.coefficient.denom()),
        })
    }
}

fn big_to_json(x: &BigInt) -> Value {
    match x.to_i64() {
        Some(v) => Value::from(v),
        None => Value::from(x.to_string()),
    }
}

/// All terms of order `m`, with `bj = 0` for `j > cutoff` (`None` keeps every
/// order), in lexicographic order of the exponents.
pub fn enumerate_terms(m: usize, cutoff: Option<usize>) -> Result<Vec<MomentSpec>> {
    if m < 1 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    let cut = cutoff.unwrap_or(m).min(m);
    let mut out = Vec::new();
    for b0 in (1..=m).step_by(2) {
        let mut b = vec![0; m + 1];
        b[0] = b0;
        partitions(m - b0, cut, &mut b, &mut out);
    }
    let mut specs: Vec<MomentSpec> = out.into_iter().map(|b| MomentSpec::new(b).expect("valid by construction")).collect();
    specs.sort();
    Ok(specs)
}

/// Fills `b[1..=largest]` with multiplicities of parts summing to `rest`.
fn partitions(rest: usize, largest: usize, b: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if rest == 0 {
        out.push(b.clone());
        return;
    }
    if largest == 0 {
        return;
    }
    for k in 0..=rest / largest {
        b[largest] = k;
        partitions(rest - k * largest, largest - 1, b, out);
    }
    b[largest] = 0;
}

/// One partition of `m` into `k` parts: `multiplicities[l - 1]` parts equal
/// to `l`, weighted by `m! / prod_l (k_l! (l!)^{k_l})`.
#[derive(Debug, Clone, PartialEq)]
pub struct BellTerm {
    pub m: usize,
    pub k: usize,
    pub multiplicities: Vec<usize>,
    pub weight: BigInt,
}

/// The monomials of the complete Bell polynomial `B_m`.
pub fn bell_partitions(m: usize) -> Vec<BellTerm> {
    let mut out = Vec::new();
    let mut b = vec![0; m + 1];
    partitions(m, m, &mut b, &mut out);
    out.into_iter()
        .map(|b| {
            let mult: Vec<usize> = b[1..].to_vec();
            let k = mult.iter().sum();
            let denom = mult.iter().enumerate().fold(BigInt::one(), |acc, (i, &kl)| {
                acc * factorial(kl) * num_traits::pow(factorial(i + 1), kl)
            });
            BellTerm {
                m,
                k,
                multiplicities: mult,
                weight: factorial(m) / denom,
            }
        })
        .collect()
}

/// A signed monomial `coefficient * S^{b0} T_1^{b1} ...`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SignedTerm {
    pub b: Vec<usize>,
    pub coefficient: BigRational,
}

type Poly = BTreeMap<Vec<usize>, BigRational>;

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Vec<usize> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            let entry = out.entry(e).or_insert_with(BigRational::zero);
            *entry += ca * cb;
        }
    }
    out.retain(|_, c| !c.is_zero());
    out
}

/// Order-`m` coefficient of `exp(-(S+T)/2) - exp((S-T)/2)` written with
/// complete Bell polynomials, expanded over `S = eps S'`, `T_j = eps^j T_j'`
/// and collected. Activity orders above `cutoff` are set to zero.
pub fn bell_form_terms(m: usize, cutoff: Option<usize>) -> Vec<SignedTerm> {
    let cut = cutoff.unwrap_or(m);
    let var = |idx: usize, c: BigRational| -> Poly {
        let mut e = vec![0; m + 1];
        e[idx] = 1;
        Poly::from([(e, c)])
    };
    // eps^l coefficients of the two exponents
    let g = |l: usize, s_sign: i64| -> Poly {
        let half = rational(-1, 2);
        let mut p = Poly::new();
        if l == 1 {
            p.extend(var(0, rational(s_sign, 2)));
        }
        if l <= cut {
            p.extend(var(l, half));
        }
        p
    };
    let mut total = Poly::new();
    for (sign, s_sign) in [(1i64, -1i64), (-1, 1)] {
        for term in bell_partitions(m) {
            let mut p = Poly::from([(vec![0; m + 1], BigRational::from_integer(term.weight.clone()))]);
            for (i, &kl) in term.multiplicities.iter().enumerate() {
                let l = i + 1;
                let x = g(l, s_sign);
                let scale = BigRational::from_integer(factorial(l));
                let xl: Poly = x.into_iter().map(|(e, c)| (e, c * &scale)).collect();
                for _ in 0..kl {
                    p = poly_mul(&p, &xl);
                }
            }
            for (e, c) in p {
                let entry = total.entry(e).or_insert_with(BigRational::zero);
                *entry += c * BigRational::new(BigInt::from(sign), factorial(m));
            }
        }
    }
    total
        .into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|(b, coefficient)| SignedTerm { b, coefficient })
        .collect()
}

/// How moments are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    /// Tilted-generator derivatives, orders up to 4.
    Exact,
    /// Shared reference paths, orders up to 3.
    MonteCarlo(McConfig),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::MonteCarlo(_) => "mc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermValue {
    pub spec: MomentSpec,
    pub moment: f64,
    pub se: Option<f64>,
}

impl TermValue {
    pub fn contribution(&self) -> f64 {
        self.spec.coefficient_f64() * self.moment
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderContribution {
    pub m: usize,
    pub terms: Vec<TermValue>,
    pub correction: f64,
    pub correction_se: Option<f64>,
    pub partial_sum: f64,
    pub partial_sum_se: Option<f64>,
}

/// Partial sums `p_1, ..., p_M` of `rho(x) / rho0(x)` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub x: usize,
    pub horizon: f64,
    pub backend: &'static str,
    pub orders: Vec<OrderContribution>,
}

impl Assembly {
    pub fn partial_sums(&self) -> Vec<f64> {
        self.orders.iter().map(|o| o.partial_sum).collect()
    }

    pub fn terms(&self) -> impl Iterator<Item = &TermValue> {
        self.orders.iter().flat_map(|o| o.terms.iter())
    }
}

fn attach(spec: &MomentSpec, e: Error) -> Error {
    let tag = |msg: String| format!("term {} (b = {:?}): {msg}", spec.label(), spec.exponents());
    match e {
        Error::Numerical(m) => Error::Numerical(tag(m)),
        Error::InvalidArgument(m) => Error::InvalidArgument(tag(m)),
        Error::Inconsistent(m) => Error::Inconsistent(tag(m)),
        Error::Validation(m) => Error::Validation(tag(m)),
        other => other,
    }
}

fn all_specs(max_order: usize) -> Vec<Vec<MomentSpec>> {
    (1..=max_order)
        .map(|m| enumerate_terms(m, None).expect("m >= 1"))
        .collect()
}

fn check_order(max_order: usize, backend: &Backend) -> Result<()> {
    let limit = match backend {
        Backend::Exact => 4,
        Backend::MonteCarlo(_) => 3,
    };
    if max_order == 0 || max_order > limit {
        return Err(Error::InvalidArgument(format!(
            "order {max_order} outside 1..={limit} for the {} backend",
            backend.name()
        )));
    }
    Ok(())
}

fn default_horizon(model: &JumpModel, horizon: Option<f64>) -> Result<f64> {
    match horizon {
        Some(t) => Ok(t),
        None => Ok(Generator::equilibrium(model)?.horizon()),
    }
}

/// Exact-backend partial sums at every state, sharing each moment evaluation.
pub fn assemble_all_states(model: &JumpModel, max_order: usize, horizon: Option<f64>) -> Result<Vec<Assembly>> {
    check_order(max_order, &Backend::Exact)?;
    let horizon = default_horizon(model, horizon)?;
    let specs = all_specs(max_order);
    let flat: Vec<&MomentSpec> = specs.iter().flatten().collect();
    let values: Vec<_> = flat
        .par_iter()
        .map(|s| exact::tilted_moments_all_states(model, s.exponents(), horizon).map_err(|e| attach(s, e)))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(model.n());
    for x in 0..model.n() {
        let mut it = values.iter();
        let mut partial = 1.0;
        let orders = specs
            .iter()
            .enumerate()
            .map(|(i, group)| {
                let terms: Vec<TermValue> = group
                    .iter()
                    .map(|s| TermValue {
                        spec: s.clone(),
                        moment: it.next().expect("one value per spec")[x],
                        se: None,
                    })
                    .collect();
                let correction: f64 = terms.iter().map(TermValue::contribution).sum();
                partial += correction;
                OrderContribution {
                    m: i + 1,
                    terms,
                    correction,
                    correction_se: None,
                    partial_sum: partial,
                    partial_sum_se: None,
                }
            })
            .collect();
        out.push(Assembly {
            x,
            horizon,
            backend: "exact",
            orders,
        });
    }
    Ok(out)
}

/// Partial sums of `rho(x) / rho0(x)` through order `max_order`.
///
/// `horizon` defaults to `30 / alpha`. The Monte Carlo backend evaluates all
/// terms on one set of reference paths and propagates standard errors through
/// per-path combinations.
pub fn assemble(model: &JumpModel, x: usize, max_order: usize, backend: Backend, horizon: Option<f64>) -> Result<Assembly> {
    check_order(max_order, &backend)?;
    if x >= model.n() {
        return Err(Error::InvalidArgument(format!("state {x} out of range")));
    }
    let cfg = match backend {
        Backend::Exact => return Ok(assemble_all_states(model, max_order, horizon)?.swap_remove(x)),
        Backend::MonteCarlo(cfg) => cfg,
    };
    let horizon = default_horizon(model, horizon)?;
    let specs = all_specs(max_order);
    let flat: Vec<MomentSpec> = specs.iter().flatten().cloned().collect();
    let coeffs: Vec<f64> = flat.iter().map(MomentSpec::coefficient_f64).collect();
    let group_of: Vec<usize> = specs.iter().enumerate().flat_map(|(i, g)| std::iter::repeat_n(i, g.len())).collect();
    let nspec = flat.len();
    let width = nspec + 2 * max_order;
    let acc = run_paths(
        model,
        Dynamics::Reference,
        Start::State(x),
        horizon,
        max_order,
        &cfg,
        width,
        |_, obs, out| {
            out[nspec..].iter_mut().for_each(|v| *v = 0.0);
            for (i, spec) in flat.iter().enumerate() {
                let v = spec.evaluate(obs);
                out[i] = v;
                out[nspec + group_of[i]] += coeffs[i] * v;
            }
            let mut running = 1.0;
            for m in 0..max_order {
                running += out[nspec + m];
                out[nspec + max_order + m] = running;
            }
        },
    )?;
    let mut next = 0;
    let orders = specs
        .iter()
        .enumerate()
        .map(|(i, group)| {
            let terms = group
                .iter()
                .map(|s| {
                    let w = &acc[next];
                    next += 1;
                    TermValue {
                        spec: s.clone(),
                        moment: w.mean,
                        se: Some(w.se()),
                    }
                })
                .collect();
            OrderContribution {
                m: i + 1,
                terms,
                correction: acc[nspec + i].mean,
                correction_se: Some(acc[nspec + i].se()),
                partial_sum: acc[nspec + max_order + i].mean,
                partial_sum_se: Some(acc[nspec + max_order + i].se()),
            }
        })
        .collect();
    Ok(Assembly {
        x,
        horizon,
        backend: "mc",
        orders,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderBound {
    pub m: usize,
    pub c: f64,
}

/// Smallest `c` with `|moment| <= eps^m c^{sum_j bj}` over the given terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub epsilon: f64,
    pub per_order: Vec<OrderBound>,
    pub c: f64,
    /// `exp(-c / 2)`: the series is dominated by a convergent geometric
    /// series for `|eps|` below this value. `None` when `c = 0`.
    pub radius: Option<f64>,
}

pub fn convergence_diagnostic(terms: &[TermValue], epsilon: f64) -> ConvergenceReport {
    let mut per_order: BTreeMap<usize, f64> = BTreeMap::new();
    for t in terms {
        let m = t.spec.order();
        let scaled = if epsilon == 0.0 { 0.0 } else { t.moment.abs() / epsilon.abs().powi(m as i32) };
        let c = scaled.powf(1.0 / t.spec.depth() as f64);
        let entry = per_order.entry(m).or_insert(0.0);
        *entry = entry.max(c);
    }
    let c = per_order.values().copied().fold(0.0, f64::max);
    ConvergenceReport {
        epsilon,
        per_order: per_order.into_iter().map(|(m, c)| OrderBound { m, c }).collect(),
        c,
        radius: if c > 0.0 { Some((-c / 2.0).exp()) } else { None },
    }
}

/// `sum_terms |coefficient| * prod_j bj!` and the counting bound
/// `2 sum_{k<=m} (m+1)^k / (2^k k!)` it must not exceed.
pub fn coefficient_mass(m: usize) -> (BigRational, BigRational) {
    let mass = enumerate_terms(m, None)
        .expect("m >= 1")
        .iter()
        .map(|s| {
            let f = s.exponents().iter().fold(BigInt::one(), |acc, &k| acc * factorial(k));
            s.coefficient().abs() * BigRational::from_integer(f)
        })
        .fold(BigRational::zero(), |a, b| a + b);
    let bound = (0..=m)
        .map(|k| {
            BigRational::new(
                num_traits::pow(BigInt::from(m + 1), k) * 2,
                (BigInt::one() << k) * factorial(k),
            )
        })
        .fold(BigRational::zero(), |a, b| a + b);
    (mass, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::ring3;

    fn spec_set(m: usize, cutoff: Option<usize>) -> Vec<(Vec<usize>, BigRational)> {
        enumerate_terms(m, cutoff)
            .unwrap()
            .into_iter()
            .map(|s| (s.exponents().to_vec(), s.coefficient().clone()))
            .collect()
    }

    #[test]
    fn low_orders() {
        assert_eq!(spec_set(1, None), vec![(vec![1, 0], rational(-1, 1))]);
        assert_eq!(spec_set(2, Some(2)), vec![(vec![1, 1, 0], rational(1, 2))]);
        assert_eq!(
            spec_set(3, None),
            vec![
                (vec![1, 0, 1, 0], rational(1, 2)),
                (vec![1, 2, 0, 0], rational(-1, 8)),
                (vec![3, 0, 0, 0], rational(-1, 24)),
            ]
        );
        assert!(enumerate_terms(0, None).is_err());
    }

    #[test]
    fn cutoff_drops_high_activity_orders() {
        let all = enumerate_terms(5, None).unwrap();
        let cut = enumerate_terms(5, Some(2)).unwrap();
        assert!(cut.len() < all.len());
        assert!(cut.iter().all(|s| s.exponents()[3..].iter().all(|&b| b == 0)));
    }

    #[test]
    fn bell_first_order() {
        let t = bell_form_terms(1, None);
        assert_eq!(t, vec![SignedTerm { b: vec![1, 0], coefficient: rational(-1, 1) }]);
    }

    #[test]
    fn bell_matches_enumeration() {
        for cutoff in [None, Some(2)] {
            for m in 1..=5 {
                let bell: Vec<_> = bell_form_terms(m, cutoff).into_iter().map(|t| (t.b, t.coefficient)).collect();
                assert_eq!(bell, spec_set(m, cutoff), "m={m} cutoff={cutoff:?}");
                assert!(bell.iter().all(|(b, _)| b[0] % 2 == 1));
            }
        }
    }

    #[test]
    fn bell_weights() {
        // B_3 = x1^3 + 3 x1 x2 + x3
        let mut w: Vec<(Vec<usize>, i64)> = bell_partitions(3)
            .into_iter()
            .map(|t| (t.multiplicities, t.weight.to_i64().unwrap()))
            .collect();
        w.sort();
        assert_eq!(w, vec![(vec![0, 0, 1], 1), (vec![1, 1, 0], 3), (vec![3, 0, 0], 1)]);
    }

    #[test]
    fn coefficient_mass_below_bound() {
        for m in 1..=6 {
            let (mass, bound) = coefficient_mass(m);
            assert!(mass <= bound, "m={m}");
        }
    }

    #[test]
    fn json_shape() {
        let s = MomentSpec::new(vec![1, 2]).unwrap();
        assert_eq!(s.to_json().to_string(), r#"{"m":3,"b":[1,2,0,0],"coeff_num":-1,"coeff_den":8}"#);
        assert_eq!(s.label(), "S T1^2");
        assert!(MomentSpec::new(vec![2]).is_err());
    }

    #[test]
    fn zero_drive_partial_sums_are_one() {
        let m = ring3(0.0);
        for a in assemble_all_states(&m, 3, None).unwrap() {
            assert!(a.partial_sums().iter().all(|&p| p == 1.0));
        }
    }

    #[test]
    fn exact_backend_matches_closed_forms() {
        let m = ring3(0.05);
        let h = exact::mclennan_h(&m).unwrap();
        let h2 = exact::second_order_h2(&m).unwrap().h2;
        for a in assemble_all_states(&m, 2, None).unwrap() {
            let x = a.x;
            let expected = 1.0 - 0.05 * h[x] + 0.5 * h2[x];
            assert!((a.partial_sums()[1] - expected).abs() < 1e-5 * expected);
        }
    }

    #[test]
    fn partial_sums_reproduce_oracle_taylor() {
        let base = ring3(0.0);
        let d: Vec<_> = (1..=3).map(|k| exact::epsilon_derivatives_all_states(&base, k).unwrap()).collect();
        let eps = 2e-2;
        for a in assemble_all_states(&base.with_epsilon(eps), 3, None).unwrap() {
            let mut taylor = 1.0;
            let mut fact = 1.0;
            for k in 1..=3 {
                fact *= k as f64;
                taylor += d[k - 1][a.x] * eps.powi(k as i32) / fact;
                let gap = (a.partial_sums()[k - 1] - taylor).abs();
                assert!(gap < 1e-9, "order {k}: {gap:e}");
            }
        }
    }

    #[test]
    fn truncation_residual_scaling() {
        let residual = |eps: f64, order: usize| {
            let m = ring3(eps);
            let rho = exact::stationary_solve(&m.build_driven_rates()).unwrap();
            let rho0 = m.equilibrium_distribution();
            assemble_all_states(&m, order, None)
                .unwrap()
                .iter()
                .map(|a| (rho[a.x] / rho0[a.x] - a.partial_sums()[order - 1]).abs())
                .fold(0.0, f64::max)
        };
        for order in 1..=3 {
            let ratio = residual(2e-2, order) / residual(1e-2, order);
            let expected = 2f64.powi(order as i32 + 1);
            assert!((ratio / expected - 1.0).abs() < 0.25, "order {order}: {ratio}");
        }
    }

    #[test]
    fn diagnostic_behaviour() {
        let spec = MomentSpec::new(vec![1, 1]).unwrap();
        let single = [TermValue { spec, moment: 0.004, se: None }];
        let r = convergence_diagnostic(&single, 0.1);
        assert!((r.c - (0.004f64 / 0.01).sqrt()).abs() < 1e-15);
        let zero: Vec<TermValue> = single.iter().map(|t| TermValue { moment: 0.0, ..t.clone() }).collect();
        let r0 = convergence_diagnostic(&zero, 0.1);
        assert_eq!(r0.c, 0.0);
        assert_eq!(r0.radius, None);
        let c = |m: &JumpModel| {
            let a = assemble(m, 0, 3, Backend::Exact, None).unwrap();
            let terms: Vec<TermValue> = a.terms().cloned().collect();
            convergence_diagnostic(&terms, 0.1).c
        };
        let m = ring3(0.1);
        assert!(c(&m.scaled_forcing(2.0).unwrap()) >= c(&m));
    }

    #[test]
    fn order_limits() {
        let m = ring3(0.1);
        assert!(assemble(&m, 0, 5, Backend::Exact, None).is_err());
        assert!(assemble(&m, 0, 4, Backend::MonteCarlo(McConfig::new(10, 1)), None).is_err());
    }
}
