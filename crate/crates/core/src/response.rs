//! Response of `<Q(x_T)>` to a potential perturbation switched on at time
//! zero in equilibrium, to second order, with exact and Monte Carlo backends.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::exact::{epsilon_derivatives_all_states, evolve_observable, oracle_step};
use crate::finite_diff::mixed_partial;
use crate::model::{JumpModel, RateMatrix};
use crate::sampler::{run_paths, Dynamics, McConfig, Start, Trajectory};

const MIN_NODES: usize = 64;
const MAX_NODES: usize = 1 << 14;
const QUAD_TOL: f64 = 1e-6;

/// A jump model whose forcing is the potential difference `V(y) - V(x)`,
/// an observable `Q` and an observation time.
#[derive(Debug, Clone)]
pub struct PerturbationSetup {
    model: JumpModel,
    potential: DVector<f64>,
    observable: DVector<f64>,
    horizon: f64,
}

impl PerturbationSetup {
    pub fn new(base: &JumpModel, potential: &[f64], observable: &[f64], horizon: f64) -> Result<Self> {
        let model = base.with_potential_forcing(potential)?;
        if observable.len() != model.n() {
            return Err(Error::InvalidArgument(format!(
                "observable has {} entries for {} states",
                observable.len(),
                model.n()
            )));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad horizon {horizon}")));
        }
        if !model.circulation_check().conservative {
            return Err(Error::Inconsistent("potential forcing has nonzero circulation".into()));
        }
        Ok(Self {
            model,
            potential: DVector::from_column_slice(potential),
            observable: DVector::from_column_slice(observable),
            horizon,
        })
    }

    pub fn model(&self) -> &JumpModel {
        &self.model
    }

    pub fn potential(&self) -> &DVector<f64> {
        &self.potential
    }

    pub fn observable(&self) -> &DVector<f64> {
        &self.observable
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn epsilon(&self) -> f64 {
        self.model.epsilon()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            model: self.model.with_epsilon(epsilon),
            ..self.clone()
        }
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }
}

/// `(L0 V)(x) = sum_y k0(x,y) [V(y) - V(x)]`.
pub fn backward_generator_apply(model: &JumpModel, v: &[f64]) -> Result<DVector<f64>> {
    let n = model.n();
    if v.len() != n {
        return Err(Error::InvalidArgument(format!("V has {} entries for {n} states", v.len())));
    }
    Ok(DVector::from_fn(n, |x, _| {
        (0..n)
            .filter(|&y| y != x)
            .map(|y| model.base_rate(x, y) * (v[y] - v[x]))
            .sum()
    }))
}

/// `L0 V = -chi U' V' + chi V'' / beta` on the uniform periodic grid of a
/// one-dimensional diffusion, by central differences.
pub fn diffusion_backward_generator(model: &DiffusionModel, v: &[f64]) -> Result<Vec<f64>> {
    if model.dim() != 1 {
        return Err(Error::InvalidArgument("only one-dimensional models are supported".into()));
    }
    let g = v.len();
    if g < 3 {
        return Err(Error::InvalidArgument("grid needs at least three points".into()));
    }
    let dx = model.box_lengths()[0] / g as f64;
    let chi = model.mobility()[(0, 0)];
    let mut du = [0.0];
    Ok((0..g)
        .map(|i| {
            let (l, r) = (v[(i + g - 1) % g], v[(i + 1) % g]);
            model.gradient(&[i as f64 * dx], &mut du);
            -chi * du[0] * (r - l) / (2.0 * dx) + chi * (r - 2.0 * v[i] + l) / (model.beta() * dx * dx)
        })
        .collect())
}

/// `eps beta int_0^T (L0 V)(x_s) ds` along a path.
pub fn integrated_generator(setup: &PerturbationSetup, traj: &Trajectory) -> Result<f64> {
    let lv = backward_generator_apply(&setup.model, setup.potential.as_slice())?;
    let m = &setup.model;
    Ok(m.epsilon() * m.beta() * traj.sojourns().map(|(x, d)| d * lv[x]).sum::<f64>())
}

/// Largest `|T_1 - eps beta int L0 V ds|` over `paths` equilibrium paths.
pub fn activity_identity_gap(setup: &PerturbationSetup, paths: usize, seed: u64) -> Result<f64> {
    let lv = backward_generator_apply(&setup.model, setup.potential.as_slice())?;
    let scale = setup.model.epsilon() * setup.model.beta();
    let cfg = McConfig {
        samples: paths,
        seed,
        workers: 1,
    };
    let gaps = std::sync::Mutex::new(0.0f64);
    run_paths(&setup.model, Dynamics::Reference, Start::Equilibrium, setup.horizon, 1, &cfg, 1, |traj, obs, out| {
        let direct = scale * traj.sojourns().map(|(x, d)| d * lv[x]).sum::<f64>();
        let gap = (obs.activity_orders[0] - direct).abs();
        out[0] = gap;
        let mut g = gaps.lock().expect("gap lock");
        *g = g.max(gap);
    })?;
    Ok(gaps.into_inner().expect("gap lock"))
}

/// Equilibrium three-time correlation `<a(x_0) b(x_s) c(x_T)>`.
fn three_point(base: &RateMatrix, rho0: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>, s: f64, t: f64) -> Result<f64> {
    let inner = evolve_observable(base, c, t - s)?.component_mul(b);
    let outer = evolve_observable(base, &inner, s)?;
    Ok(rho0.component_mul(a).dot(&outer))
}

/// Composite Simpson rule on `[0, T]`, nodes doubling from 64 until two
/// successive values agree to `1e-6` relative. Returns the value and the
/// number of intervals used.
fn integrate<F>(horizon: f64, scale: f64, f: F) -> Result<(f64, usize)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if horizon == 0.0 {
        return Ok((0.0, 0));
    }
    let simpson = |n: usize| -> Result<f64> {
        let h = horizon / n as f64;
        let values: Vec<f64> = (0..=n)
            .into_par_iter()
            .map(|i| f(i as f64 * h))
            .collect::<Result<_>>()?;
        let mut sum = values[0] + values[n];
        for (i, v) in values.iter().enumerate().take(n).skip(1) {
            sum += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        Ok(sum * h / 3.0)
    };
    let mut n = MIN_NODES;
    let mut prev = simpson(n)?;
    while n < MAX_NODES {
        n *= 2;
        let cur = simpson(n)?;
        if (cur - prev).abs() <= QUAD_TOL * cur.abs().max(1e-8 * scale) {
            return Ok((cur, n));
        }
        prev = cur;
    }
    Err(Error::Numerical(format!("quadrature did not converge with {n} intervals")))
}

/// The three terms of the second order prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseTerms {
    /// `<Q>` in equilibrium.
    pub zeroth: f64,
    /// `beta eps <Q(x_T) [V(x_T) - V(x_0)]>`.
    pub first: f64,
    /// `-(beta eps)^2 / 2 int_0^T <Q(x_T) [V(x_T) - V(x_0)] L0V(x_s)> ds`.
    pub second: f64,
    pub first_se: Option<f64>,
    pub second_se: Option<f64>,
    /// Simpson intervals (exact backend).
    pub nodes: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

impl ResponseTerms {
    pub fn prediction(&self) -> f64 {
        self.zeroth + self.first + self.second
    }
}

/// Predictions per order against the exact driven value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseReport {
    pub epsilon: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub exact: ResponseTerms,
    pub mc: Option<ResponseTerms>,
    /// Partial sums through orders 0, 1, 2 (exact backend).
    pub predictions: [f64; 3],
    /// Driven `<Q(x_T)>` from an equilibrium start.
    pub oracle: f64,
    /// `oracle - prediction` through orders 0, 1, 2.
    pub residuals: [f64; 3],
}

/// Driven `<Q(x_T)>` from `rho0`, by exact evolution.
pub fn driven_expectation(setup: &PerturbationSetup) -> Result<f64> {
    let rho0 = setup.model.equilibrium_distribution();
    let qt = evolve_observable(&setup.model.build_driven_rates(), &setup.observable, setup.horizon)?;
    Ok(rho0.dot(&qt))
}

fn exact_terms(setup: &PerturbationSetup) -> Result<ResponseTerms> {
    let m = &setup.model;
    let base = m.base_rate_matrix();
    let rho0 = m.equilibrium_distribution();
    let t = setup.horizon;
    let q = &setup.observable;
    let v = &setup.potential;
    let lv = backward_generator_apply(m, v.as_slice())?;
    let one = DVector::from_element(m.n(), 1.0);
    let qv = q.component_mul(v);
    let be = m.beta() * m.epsilon();
    let zeroth = rho0.dot(q);
    let qt = evolve_observable(&base, q, t)?;
    let first = be * (rho0.dot(&qv) - rho0.component_mul(v).dot(&qt));
    let scale = q.amax() * v.amax() * lv.amax() * t;
    let (integral, nodes) = integrate(t, scale, |s| {
        Ok(three_point(&base, &rho0, &one, &lv, &qv, s, t)? - three_point(&base, &rho0, v, &lv, q, s, t)?)
    })?;
    Ok(ResponseTerms {
        zeroth,
        first,
        second: -0.5 * be * be * integral,
        first_se: None,
        second_se: None,
        nodes: Some(nodes),
        samples: None,
        seed: None,
    })
}

/// Monte Carlo estimates of the first and second order terms from
/// equilibrium reference paths, using `S = beta eps [V(x_T) - V(x_0)]` and the
/// first order activity `T_1` of each path.
fn mc_terms(setup: &PerturbationSetup, cfg: &McConfig) -> Result<ResponseTerms> {
    let q = &setup.observable;
    let acc = run_paths(&setup.model, Dynamics::Reference, Start::Equilibrium, setup.horizon, 1, cfg, 2, |traj, obs, out| {
        let qt = q[traj.end_state()];
        out[0] = qt * obs.entropy_flux;
        out[1] = -0.5 * qt * obs.entropy_flux * obs.activity_orders[0];
    })?;
    Ok(ResponseTerms {
        zeroth: setup.model.equilibrium_distribution().dot(q),
        first: acc[0].mean,
        second: acc[1].mean,
        first_se: Some(acc[0].se()),
        second_se: Some(acc[1].se()),
        nodes: None,
        samples: Some(cfg.samples),
        seed: Some(cfg.seed),
    })
}

/// Second order prediction of `<Q(x_T)>`, exact and optionally by Monte Carlo.
pub fn response_expansion(setup: &PerturbationSetup, mc: Option<&McConfig>) -> Result<ResponseReport> {
    let exact = exact_terms(setup)?;
    let mc = mc.map(|cfg| mc_terms(setup, cfg)).transpose()?;
    let predictions = [exact.zeroth, exact.zeroth + exact.first, exact.prediction()];
    let oracle = driven_expectation(setup)?;
    Ok(ResponseReport {
        epsilon: setup.epsilon(),
        horizon: setup.horizon,
        exact,
        mc,
        predictions,
        oracle,
        residuals: predictions.map(|p| oracle - p),
    })
}

/// `-(beta^2 / 2) int_0^T <[Q(x_T) - Q(x_0)] [V(x_T) - V(x_0)] L0V(x_s)> ds`,
/// the second epsilon-derivative of `<Q(x_T)>` at zero.
pub fn second_derivative_formula(setup: &PerturbationSetup) -> Result<f64> {
    let m = &setup.model;
    let base = m.base_rate_matrix();
    let rho0 = m.equilibrium_distribution();
    let t = setup.horizon;
    let q = &setup.observable;
    let v = &setup.potential;
    let lv = backward_generator_apply(m, v.as_slice())?;
    let one = DVector::from_element(m.n(), 1.0);
    let qv = q.component_mul(v);
    let scale = q.amax() * v.amax() * lv.amax() * t;
    let (integral, _) = integrate(t, scale, |s| {
        Ok(three_point(&base, &rho0, &one, &lv, &qv, s, t)? - three_point(&base, &rho0, v, &lv, q, s, t)?
            - three_point(&base, &rho0, q, &lv, v, s, t)?
            + three_point(&base, &rho0, &qv, &lv, &one, s, t)?)
    })?;
    Ok(-0.5 * m.beta() * m.beta() * integral)
}

/// `d^order/d eps^order` at zero of a driven exact quantity, with the same
/// stencil as the stationary oracle.
fn epsilon_derivative<F>(setup: &PerturbationSetup, order: usize, value: F) -> Result<f64>
where
    F: Fn(&JumpModel) -> Result<f64> + Sync,
{
    if setup.model.max_abs_forcing() == 0.0 {
        return Ok(0.0);
    }
    let eval = |e: &[f64]| -> Result<DVector<f64>> { Ok(DVector::from_element(1, value(&setup.model.with_epsilon(e[0]))?)) };
    let levels = if order <= 3 { 2 } else { 1 };
    Ok(mixed_partial(&[order], oracle_step(&setup.model), levels, &eval)?[0])
}

/// Second epsilon-derivative of the driven `<Q(x_T)>` by finite differences.
pub fn driven_second_derivative(setup: &PerturbationSetup) -> Result<f64> {
    epsilon_derivative(setup, 2, |m| driven_expectation(&PerturbationSetup { model: m.clone(), ..setup.clone() }))
}

/// Both sides of
/// `d^2/d eps^2 <Q(x_t)> = beta d/d eps <[Q(x_t) - Q(x_0)] [V(x_t) - V(x_0)]>`
/// at `eps = 0`, each from driven exact evolutions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdtReport {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs - rhs| / max(|lhs|, |rhs|)`, zero when both vanish.
    pub gap: f64,
    pub step: f64,
    pub richardson_levels: usize,
}

pub fn fdt_consistency_check(setup: &PerturbationSetup) -> Result<FdtReport> {
    let lhs = driven_second_derivative(setup)?;
    let q = &setup.observable;
    let v = &setup.potential;
    let t = setup.horizon;
    let rho0 = setup.model.equilibrium_distribution();
    let qv = q.component_mul(v);
    let first = epsilon_derivative(setup, 1, |m| {
        let rates = m.build_driven_rates();
        // <QV(x_t)> - <V(x_0) Q(x_t)> - <Q(x_0) V(x_t)> + <QV(x_0)>
        let qv_t = evolve_observable(&rates, &qv, t)?;
        let q_t = evolve_observable(&rates, q, t)?;
        let v_t = evolve_observable(&rates, v, t)?;
        Ok(rho0.dot(&qv_t) - rho0.component_mul(v).dot(&q_t) - rho0.component_mul(q).dot(&v_t) + rho0.dot(&qv))
    })?;
    let rhs = setup.model.beta() * first;
    let denom = lhs.abs().max(rhs.abs());
    Ok(FdtReport {
        t,
        lhs,
        rhs,
        gap: if denom == 0.0 { 0.0 } else { (lhs - rhs).abs() / denom },
        step: oracle_step(&setup.model),
        richardson_levels: 2,
    })
}

/// `d^2/d eps^2 <Q>` in the driven stationary state, from the stationary
/// epsilon-derivative oracle.
pub fn stationary_second_derivative(setup: &PerturbationSetup) -> Result<f64> {
    let d2 = epsilon_derivatives_all_states(&setup.model, 2)?;
    let rho0 = setup.model.equilibrium_distribution();
    Ok(rho0.component_mul(&d2).dot(&setup.observable))
}

/// Monte Carlo check of `<Q(x_0) S> = -<Q(x_T) S>` in equilibrium: mean and
/// standard error of `[Q(x_0) + Q(x_T)] S`.
pub fn reversal_rewrite_check(setup: &PerturbationSetup, cfg: &McConfig) -> Result<(f64, f64)> {
    let q = &setup.observable;
    let acc = run_paths(&setup.model, Dynamics::Reference, Start::Equilibrium, setup.horizon, 1, cfg, 1, |traj, obs, out| {
        out[0] = (q[traj.start()] + q[traj.end_state()]) * obs.entropy_flux;
    })?;
    Ok((acc[0].mean, acc[0].se()))
}

/// Taylor coefficients of `exp(beta eps V) / <exp(beta eps V)>_rho0` at
/// orders one and two.
pub fn tilted_boltzmann_taylor(model: &JumpModel, v: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let rho0 = model.equilibrium_distribution();
    let v = DVector::from_column_slice(v);
    let mean = rho0.dot(&v);
    let centered = v.map(|x| x - mean);
    let var = rho0.dot(&centered.component_mul(&centered));
    let b = model.beta();
    let c1 = &centered * b;
    let c2 = centered.map(|c| 0.5 * b * b * (c * c - var));
    (c1, c2)
}
