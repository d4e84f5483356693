//! Gillespie trajectories, path observables and Monte Carlo moment estimates.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::expansion::MomentSpec;
use crate::model::{JumpModel, RateMatrix};
use crate::rng::{run_replicas, Welford};
use crate::sum::ExactSum;

/// A piecewise-constant, right-continuous jump path on `[0, T]`.
///
/// Stored as the `K + 1` holding durations and the `K` destinations, so that
/// reversal is an exact permutation of the stored numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start: usize,
    horizon: f64,
    holding: Vec<f64>,
    states: Vec<usize>,
}

impl Trajectory {
    /// A path that stays at `start` for the whole horizon.
    pub fn constant(start: usize, horizon: f64) -> Self {
        Self {
            start,
            horizon,
            holding: vec![horizon],
            states: Vec::new(),
        }
    }

    /// Builds a path from absolute jump times `0 < t_1 < ... < t_K <= T`.
    pub fn from_jump_times(start: usize, horizon: f64, times: &[f64], states: &[usize]) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::InvalidArgument(format!(
                "{} jump times for {} destinations",
                times.len(),
                states.len()
            )));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad horizon {horizon}")));
        }
        let mut holding = Vec::with_capacity(times.len() + 1);
        let mut prev_t = 0.0;
        let mut prev_x = start;
        for (&t, &y) in times.iter().zip(states) {
            if t <= prev_t || t > horizon {
                return Err(Error::InvalidArgument(format!(
                    "jump times must increase within (0, {horizon}], got {t} after {prev_t}"
                )));
            }
            if y == prev_x {
                return Err(Error::InvalidArgument(format!("self-jump at state {y}")));
            }
            holding.push(t - prev_t);
            prev_t = t;
            prev_x = y;
        }
        holding.push(horizon - prev_t);
        Ok(Self {
            start,
            horizon,
            holding,
            states: states.to_vec(),
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn num_jumps(&self) -> usize {
        self.states.len()
    }

    pub fn destinations(&self) -> &[usize] {
        &self.states
    }

    /// Durations of the `K + 1` sojourns.
    pub fn holding_times(&self) -> &[f64] {
        &self.holding
    }

    /// Absolute jump times.
    pub fn jump_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.holding[..self.states.len()]
            .iter()
            .map(|d| {
                t += d;
                t
            })
            .collect()
    }

    pub fn end_state(&self) -> usize {
        self.states.last().copied().unwrap_or(self.start)
    }

    /// `(state, duration)` for every sojourn.
    pub fn sojourns(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        std::iter::once(self.start)
            .chain(self.states.iter().copied())
            .zip(self.holding.iter().copied())
    }

    /// `(from, to)` for every jump.
    pub fn jumps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.start)
            .chain(self.states.iter().copied())
            .zip(self.states.iter().copied())
    }

    /// The time-reversed path `s -> x_{T - s}`.
    pub fn reversed(&self) -> Self {
        let k = self.states.len();
        let mut visited = Vec::with_capacity(k + 1);
        visited.push(self.start);
        visited.extend_from_slice(&self.states);
        let start = visited[k];
        let states: Vec<usize> = visited[..k].iter().rev().copied().collect();
        let holding: Vec<f64> = self.holding.iter().rev().copied().collect();
        Self {
            start,
            horizon: self.horizon,
            holding,
            states,
        }
    }

    /// Checks that every jump uses an edge with positive rate.
    pub fn check_support(&self, rates: &RateMatrix) -> Result<()> {
        for (x, y) in self.jumps() {
            if x >= rates.n() || y >= rates.n() || rates.rate(x, y) <= 0.0 {
                return Err(Error::PairValidation {
                    from: x.to_string(),
                    to: y.to_string(),
                    reason: "trajectory jumps along an edge without rate".into(),
                });
            }
        }
        Ok(())
    }
}

/// Precomputed escape rates and jump tables of a rate matrix.
#[derive(Debug, Clone)]
pub struct Simulator {
    escape: Vec<f64>,
    targets: Vec<Vec<(usize, f64)>>,
}

impl Simulator {
    pub fn new(rates: &RateMatrix) -> Self {
        let n = rates.n();
        let escape: Vec<f64> = (0..n).map(|x| rates.escape(x)).collect();
        let targets = (0..n)
            .map(|x| {
                let mut acc = 0.0;
                let mut row: Vec<(usize, f64)> = (0..n)
                    .filter(|&y| y != x && rates.rate(x, y) > 0.0)
                    .map(|y| {
                        acc += rates.rate(x, y) / escape[x];
                        (y, acc)
                    })
                    .collect();
                if let Some(last) = row.last_mut() {
                    last.1 = f64::INFINITY;
                }
                row
            })
            .collect();
        Self { escape, targets }
    }

    pub fn simulate(&self, x0: usize, horizon: f64, rng: &mut impl Rng) -> Trajectory {
        let mut traj = Trajectory::constant(x0, horizon);
        self.simulate_into(x0, horizon, rng, &mut traj);
        traj
    }

    /// Overwrites `traj` with a fresh path, reusing its buffers.
    pub fn simulate_into(&self, x0: usize, horizon: f64, rng: &mut impl Rng, traj: &mut Trajectory) {
        traj.start = x0;
        traj.horizon = horizon;
        traj.holding.clear();
        traj.states.clear();
        let mut x = x0;
        let mut elapsed = 0.0;
        loop {
            let esc = self.escape[x];
            let wait: f64 = rng.sample::<f64, _>(Exp1) / esc;
            if elapsed + wait > horizon || esc == 0.0 {
                traj.holding.push(horizon - elapsed);
                return;
            }
            elapsed += wait;
            traj.holding.push(wait);
            let u: f64 = rng.random();
            let row = &self.targets[x];
            x = row.iter().find(|(_, c)| u < *c).map(|(y, _)| *y).unwrap_or(row[row.len() - 1].0);
            traj.states.push(x);
        }
    }
}

/// Exact-in-law sample of the jump process with the given rates.
pub fn simulate_path(rates: &RateMatrix, x0: usize, horizon: f64, rng: &mut impl Rng) -> Trajectory {
    Simulator::new(rates).simulate(x0, horizon, rng)
}

/// Entropy flux, activity and its order decomposition for one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathObservables {
    /// `S`.
    pub entropy_flux: f64,
    /// `T_1, ..., T_J`.
    pub activity_orders: Vec<f64>,
    /// `T`.
    pub activity: f64,
    /// `A = (T - S) / 2`.
    pub action: f64,
    /// Bound on `|T - sum_j T_j|`.
    pub truncation_bound: f64,
}

/// Per-state densities needed to evaluate observables of many paths.
#[derive(Debug, Clone)]
pub struct PathEvaluator {
    scale: f64,
    forcing: DMatrix<f64>,
    support: DMatrix<f64>,
    tau: Vec<f64>,
    tau_orders: Vec<Vec<f64>>,
    remainder: Vec<f64>,
}

impl PathEvaluator {
    /// `orders` is the number `J >= 1` of activity orders kept.
    pub fn new(model: &JumpModel, orders: usize) -> Result<Self> {
        if orders == 0 {
            return Err(Error::InvalidArgument("at least one activity order is required".into()));
        }
        let n = model.n();
        let scale = model.beta() * model.epsilon();
        let mut tau = vec![0.0; n];
        let mut tau_orders = vec![vec![0.0; n]; orders];
        let mut remainder = vec![0.0; n];
        for x in 0..n {
            for y in 0..n {
                let k = model.base_rate(x, y);
                if x == y || k == 0.0 {
                    continue;
                }
                let a = 0.5 * scale * model.forcing(x, y);
                tau[x] += 2.0 * k * a.exp_m1();
                let mut term = 1.0;
                for (j, order) in tau_orders.iter_mut().enumerate() {
                    term *= a / (j + 1) as f64;
                    order[x] += 2.0 * k * term;
                }
                // Lagrange remainder of the Taylor series of exp
                let next = term.abs() * a.abs() / (orders + 1) as f64;
                remainder[x] += 2.0 * k * next * a.abs().exp();
            }
        }
        Ok(Self {
            scale,
            forcing: model.forcing_matrix().clone(),
            support: model.base_rates().clone(),
            tau,
            tau_orders,
            remainder,
        })
    }

    pub fn orders(&self) -> usize {
        self.tau_orders.len()
    }

    fn check_jump(&self, x: usize, y: usize) -> Result<()> {
        if x >= self.support.nrows() || y >= self.support.nrows() || self.support[(x, y)] <= 0.0 {
            return Err(Error::PairValidation {
                from: x.to_string(),
                to: y.to_string(),
                reason: "jump on an edge absent from the model".into(),
            });
        }
        Ok(())
    }

    pub fn entropy_flux(&self, traj: &Trajectory) -> Result<f64> {
        let mut sum = ExactSum::new();
        for (x, y) in traj.jumps() {
            self.check_jump(x, y)?;
            sum.add(self.forcing[(x, y)]);
        }
        Ok(self.scale * sum.value())
    }

    pub fn observe(&self, traj: &Trajectory) -> Result<PathObservables> {
        let entropy_flux = self.entropy_flux(traj)?;
        let mut total = ExactSum::new();
        let mut parts = vec![ExactSum::new(); self.orders()];
        let mut bound = 0.0;
        for (x, d) in traj.sojourns() {
            if x >= self.tau.len() {
                return Err(Error::InvalidArgument(format!("state {x} out of range")));
            }
            total.add(d * self.tau[x]);
            for (p, tau) in parts.iter_mut().zip(&self.tau_orders) {
                p.add(d * tau[x]);
            }
            bound += d * self.remainder[x];
        }
        let activity = total.value();
        Ok(PathObservables {
            entropy_flux,
            activity_orders: parts.iter().map(|p| p.value()).collect(),
            activity,
            action: 0.5 * (activity - entropy_flux),
            truncation_bound: bound,
        })
    }
}

/// `S = eps beta sum_k f(x_{t_k-}, x_{t_k})`.
pub fn path_entropy_flux(traj: &Trajectory, model: &JumpModel) -> Result<f64> {
    PathEvaluator::new(model, 1)?.entropy_flux(traj)
}

/// All observables of one path with `orders` activity orders.
pub fn path_activity(traj: &Trajectory, model: &JumpModel, orders: usize) -> Result<PathObservables> {
    PathEvaluator::new(model, orders)?.observe(traj)
}

/// Log-likelihood ratio of driven versus reference rates computed from the
/// rates themselves (`lhs`), and `(S - T) / 2` from the observables (`rhs`).
pub fn girsanov_check(traj: &Trajectory, model: &JumpModel) -> Result<(f64, f64)> {
    let driven = model.build_driven_rates();
    let base = model.base_rate_matrix();
    traj.check_support(&base)?;
    let mut lhs = 0.0;
    for (x, y) in traj.jumps() {
        lhs += driven.rate(x, y).ln() - base.rate(x, y).ln();
    }
    for (x, d) in traj.sojourns() {
        lhs -= d * (driven.escape(x) - base.escape(x));
    }
    let obs = path_activity(traj, model, 1)?;
    Ok((lhs, -obs.action))
}

/// Where paths start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    State(usize),
    /// Drawn from the equilibrium distribution.
    Equilibrium,
}

/// Which rates generate the paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    Reference,
    Driven,
}

/// Sample count, master seed and number of logical workers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            workers: 8,
        }
    }
}

/// Mean and standard error of a path functional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub spec: Value,
    pub x: String,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub seed: u64,
}

/// Runs `cfg.samples` paths and accumulates `width` functionals
/// `f(start, path, observables, out)`.
#[allow(clippy::too_many_arguments)]
pub fn run_paths<F>(
    model: &JumpModel,
    dynamics: Dynamics,
    start: Start,
    horizon: f64,
    orders: usize,
    cfg: &McConfig,
    width: usize,
    f: F,
) -> Result<Vec<Welford>>
where
    F: Fn(&Trajectory, &PathObservables, &mut [f64]) + Sync,
{
    if cfg.samples < 2 {
        return Err(Error::InvalidArgument("at least two samples are required".into()));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad horizon {horizon}")));
    }
    if let Start::State(x) = start {
        if x >= model.n() {
            return Err(Error::InvalidArgument(format!("state {x} out of range")));
        }
    }
    let rates = match dynamics {
        Dynamics::Reference => model.base_rate_matrix(),
        Dynamics::Driven => model.build_driven_rates(),
    };
    let sim = Simulator::new(&rates);
    let eval = PathEvaluator::new(model, orders.max(1))?;
    let rho0 = model.equilibrium_distribution();
    let draw_start = |rng: &mut ChaCha8Rng| match start {
        Start::State(x) => x,
        Start::Equilibrium => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (x, p) in rho0.iter().enumerate() {
                acc += p;
                if u < acc {
                    return x;
                }
            }
            rho0.len() - 1
        }
    };
    run_replicas(cfg.samples, cfg.seed, cfg.workers, width, |rng, _, out| {
        let x0 = draw_start(rng);
        let traj = sim.simulate(x0, horizon, rng);
        let obs = eval.observe(&traj)?;
        f(&traj, &obs, out);
        Ok(())
    })
}

fn start_label(model: &JumpModel, start: Start) -> String {
    match start {
        Start::State(x) => model.labels()[x].clone(),
        Start::Equilibrium => "rho0".to_string(),
    }
}

fn estimate(model: &JumpModel, start: Start, horizon: f64, cfg: &McConfig, spec: Value, w: &Welford) -> MomentEstimate {
    MomentEstimate {
        spec,
        x: start_label(model, start),
        horizon,
        n: cfg.samples,
        mean: w.mean,
        se: w.se(),
        seed: cfg.seed,
    }
}

/// Estimates every moment in `specs` on one shared set of reference paths.
pub fn estimate_moments(
    model: &JumpModel,
    start: Start,
    horizon: f64,
    specs: &[MomentSpec],
    cfg: &McConfig,
) -> Result<Vec<MomentEstimate>> {
    let orders = specs.iter().map(|s| s.max_activity_index()).max().unwrap_or(1);
    let acc = run_paths(
        model,
        Dynamics::Reference,
        start,
        horizon,
        orders,
        cfg,
        specs.len(),
        |_, obs, out| {
            for (o, spec) in out.iter_mut().zip(specs) {
                *o = spec.evaluate(obs);
            }
        },
    )?;
    Ok(specs
        .iter()
        .zip(&acc)
        .map(|(s, w)| estimate(model, start, horizon, cfg, s.to_json(), w))
        .collect())
}

/// `<S^{b0} T_1^{b1} ...>` under the reference process started from `x`.
pub fn estimate_moment(
    model: &JumpModel,
    x: usize,
    horizon: f64,
    spec: &MomentSpec,
    cfg: &McConfig,
) -> Result<MomentEstimate> {
    Ok(estimate_moments(model, Start::State(x), horizon, std::slice::from_ref(spec), cfg)?.remove(0))
}

/// Mean of `exp((S - T) / 2)` over reference paths from `x`; equals one.
pub fn check_normalization(model: &JumpModel, x: usize, horizon: f64, cfg: &McConfig) -> Result<MomentEstimate> {
    let acc = run_paths(model, Dynamics::Reference, Start::State(x), horizon, 1, cfg, 1, |_, obs, out| {
        out[0] = (-obs.action).exp();
    })?;
    Ok(estimate(model, Start::State(x), horizon, cfg, Value::from("exp((S-T)/2)"), &acc[0]))
}

/// Mean of `exp(-(S + T) / 2)` over reference paths from `x`: the ratio
/// `p(x, T) / rho0(x)` for the driven process started from `rho0`.
pub fn density_ratio_estimate(model: &JumpModel, x: usize, horizon: f64, cfg: &McConfig) -> Result<MomentEstimate> {
    let acc = run_paths(model, Dynamics::Reference, Start::State(x), horizon, 1, cfg, 1, |_, obs, out| {
        out[0] = (-0.5 * (obs.entropy_flux + obs.activity)).exp();
    })?;
    Ok(estimate(model, Start::State(x), horizon, cfg, Value::from("exp(-(S+T)/2)"), &acc[0]))
}

/// Both sides of the path-measure embedding from an equilibrium start:
/// driven `P(x_T = x)` and the reference average of `1{x_T = x} e^{-A}`.
pub fn embedding_identity(
    model: &JumpModel,
    x: usize,
    horizon: f64,
    cfg: &McConfig,
) -> Result<(MomentEstimate, MomentEstimate)> {
    let driven = run_paths(model, Dynamics::Driven, Start::Equilibrium, horizon, 1, cfg, 1, |traj, _, out| {
        out[0] = if traj.end_state() == x { 1.0 } else { 0.0 };
    })?;
    let reweighted = run_paths(model, Dynamics::Reference, Start::Equilibrium, horizon, 1, cfg, 1, |traj, obs, out| {
        out[0] = if traj.end_state() == x { (-obs.action).exp() } else { 0.0 };
    })?;
    let label = Value::from(format!("1{{x_T={}}}", model.labels()[x]));
    Ok((
        estimate(model, Start::Equilibrium, horizon, cfg, label.clone(), &driven[0]),
        estimate(model, Start::Equilibrium, horizon, cfg, label, &reweighted[0]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{self, Generator};
    use crate::expansion::{enumerate_terms, MomentSpec};
    use crate::fixtures::{random_model, ring3};
    use crate::rng::path_rng;
    use nalgebra::DVector;

    fn two_state(a: f64, b: f64) -> JumpModel {
        let mut k = DMatrix::zeros(2, 2);
        k[(0, 1)] = a;
        k[(1, 0)] = b;
        let energy = vec![0.0, (b / a).ln()];
        JumpModel::new(vec!["a".into(), "b".into()], energy, 1.0, k, DMatrix::zeros(2, 2), 0.0).unwrap()
    }

    #[test]
    fn zero_horizon_has_no_jumps() {
        let m = ring3(0.1);
        let traj = simulate_path(&m.base_rate_matrix(), 1, 0.0, &mut path_rng(1, 0));
        assert_eq!(traj.num_jumps(), 0);
        assert_eq!(path_entropy_flux(&traj, &m).unwrap(), 0.0);
    }

    #[test]
    fn two_state_occupancy() {
        let (a, b) = (1.5, 0.5);
        let m = two_state(a, b);
        let cfg = McConfig::new(100_000, 3);
        let horizon = 10.0 / (a + b);
        let acc = run_paths(&m, Dynamics::Reference, Start::State(0), horizon, 1, &cfg, 1, |traj, _, out| {
            out[0] = traj.sojourns().filter(|s| s.0 == 0).map(|s| s.1).sum::<f64>() / horizon;
        })
        .unwrap();
        // expected time fraction from exact evolution, averaged over [0, T]
        let rates = m.base_rate_matrix();
        let p0 = DVector::from_vec(vec![1.0, 0.0]);
        let steps = 2000;
        let expected: f64 = (0..=steps)
            .map(|i| {
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                w * exact::evolve_distribution(&rates, &p0, horizon * i as f64 / steps as f64).unwrap()[0]
            })
            .sum::<f64>()
            / steps as f64;
        let stationary = exact::stationary_solve(&rates).unwrap()[0];
        assert!((stationary - b / (a + b)).abs() < 1e-12);
        assert!((acc[0].mean - expected).abs() < 3.0 * acc[0].se(), "{} {}", acc[0].mean, expected);
    }

    #[test]
    fn identical_seed_identical_paths() {
        let rates = ring3(0.0).base_rate_matrix();
        let a = simulate_path(&rates, 0, 5.0, &mut path_rng(7, 42));
        let b = simulate_path(&rates, 0, 5.0, &mut path_rng(7, 42));
        assert_eq!(a, b);
    }

    #[test]
    fn loop_entropy_flux() {
        let m = ring3(0.2);
        let traj = Trajectory::from_jump_times(0, 3.0, &[0.5, 1.0, 2.0], &[1, 2, 0]).unwrap();
        let s = path_entropy_flux(&traj, &m).unwrap();
        assert!((s - 0.2 * 3.0).abs() < 1e-15);
        assert_eq!(path_entropy_flux(&traj.reversed(), &m).unwrap(), -s);
        let bad = Trajectory::from_jump_times(0, 3.0, &[0.5], &[0]);
        assert!(bad.is_err());
    }

    #[test]
    fn missing_edge_is_rejected() {
        let mut k = DMatrix::zeros(3, 3);
        for (a, b) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            k[(a, b)] = 1.0;
        }
        let m = JumpModel::new(vec!["a".into(), "b".into(), "c".into()], vec![0.0; 3], 1.0, k, DMatrix::zeros(3, 3), 0.1)
            .unwrap();
        let traj = Trajectory::from_jump_times(0, 1.0, &[0.5], &[2]).unwrap();
        assert!(path_entropy_flux(&traj, &m).is_err());
    }

    #[test]
    fn single_sojourn_activity() {
        let m = random_model(4, 1.3, 2).with_epsilon(0.3);
        let traj = Trajectory::constant(2, 1.7);
        let obs = path_activity(&traj, &m, 3).unwrap();
        let direct: f64 = (0..4)
            .filter(|&y| y != 2)
            .map(|y| 2.0 * m.base_rate(2, y) * ((1.3 * 0.3 * m.forcing(2, y) / 2.0).exp() - 1.0))
            .sum::<f64>()
            * 1.7;
        assert!((obs.activity - direct).abs() < 1e-14);
        let sum: f64 = obs.activity_orders.iter().sum();
        assert!((obs.activity - sum).abs() <= obs.truncation_bound);
        let zero = path_activity(&traj, &m.with_epsilon(0.0), 3).unwrap();
        assert_eq!(zero.activity, 0.0);
        assert!(zero.activity_orders.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn reversal_symmetries_are_exact() {
        let m = random_model(6, 1.0, 9).with_epsilon(0.4);
        let sim = Simulator::new(&m.base_rate_matrix());
        let eval = PathEvaluator::new(&m, 3).unwrap();
        for i in 0..500 {
            let traj = sim.simulate(i % 6, 7.0, &mut path_rng(5, i as u64));
            let rev = traj.reversed();
            assert_eq!(rev.reversed(), traj);
            let a = eval.observe(&traj).unwrap();
            let b = eval.observe(&rev).unwrap();
            assert_eq!(a.entropy_flux, -b.entropy_flux);
            assert_eq!(a.activity, b.activity);
            assert_eq!(a.activity_orders, b.activity_orders);
        }
    }

    #[test]
    fn girsanov_on_single_jump_and_zero_drive() {
        let m = ring3(0.3);
        let traj = Trajectory::from_jump_times(0, 2.0, &[0.7], &[1]).unwrap();
        let (lhs, rhs) = girsanov_check(&traj, &m).unwrap();
        let base = m.base_rate_matrix();
        let driven = m.build_driven_rates();
        let by_hand = 0.3 / 2.0 - 0.7 * (driven.escape(0) - base.escape(0)) - 1.3 * (driven.escape(1) - base.escape(1));
        assert!((lhs - by_hand).abs() < 1e-14);
        assert!((lhs - rhs).abs() < 1e-12);
        let (l0, r0) = girsanov_check(&traj, &ring3(0.0)).unwrap();
        assert_eq!((l0, r0), (0.0, 0.0));
    }

    #[test]
    fn zero_drive_estimates_are_exact() {
        let m = ring3(0.0);
        let cfg = McConfig::new(1000, 1);
        let spec = MomentSpec::new(vec![1]).unwrap();
        let e = estimate_moment(&m, 0, 3.0, &spec, &cfg).unwrap();
        assert_eq!((e.mean, e.se), (0.0, 0.0));
        let n = check_normalization(&m, 0, 3.0, &cfg).unwrap();
        assert_eq!((n.mean, n.se), (1.0, 0.0));
    }

    #[test]
    fn first_moment_running_form() {
        let m = ring3(0.2);
        let t = 3.0;
        let cfg = McConfig::new(200_000, 12);
        let spec = MomentSpec::new(vec![1]).unwrap();
        let rates = m.base_rate_matrix();
        let w = m.forcing_rate();
        for x in 0..3 {
            let est = estimate_moment(&m, x, t, &spec, &cfg).unwrap();
            let steps = 600;
            let quad: f64 = (0..=steps)
                .map(|i| {
                    let c = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    c * exact::evolve_observable(&rates, &w, t * i as f64 / steps as f64).unwrap()[x]
                })
                .sum::<f64>()
                * t
                / steps as f64
                / 3.0;
            let scaled = est.mean / (m.epsilon() * m.beta());
            let se = est.se / (m.epsilon() * m.beta());
            assert!((scaled - quad).abs() < 3.0 * se, "x={x}: {scaled} vs {quad} ({se})");
        }
    }

    #[test]
    fn odd_moments_vanish_from_equilibrium_start() {
        let m = ring3(0.3);
        let cfg = McConfig::new(200_000, 4);
        let specs = enumerate_terms(3, None).unwrap();
        for e in estimate_moments(&m, Start::Equilibrium, 4.0, &specs, &cfg).unwrap() {
            assert!(e.mean.abs() < 3.0 * e.se, "{:?}", e);
        }
    }

    #[test]
    fn density_ratio_sums_to_one() {
        let m = ring3(0.4);
        let cfg = McConfig::new(100_000, 8);
        let rho0 = m.equilibrium_distribution();
        let t = 2.0;
        let p = exact::evolve_distribution(&m.build_driven_rates(), &rho0, t).unwrap();
        let mut total = 0.0;
        let mut var = 0.0;
        for x in 0..3 {
            let e = density_ratio_estimate(&m, x, t, &cfg).unwrap();
            assert!((e.mean - p[x] / rho0[x]).abs() < 3.0 * e.se);
            total += rho0[x] * e.mean;
            var += (rho0[x] * e.se).powi(2);
        }
        assert!((total - 1.0).abs() < 3.0 * var.sqrt());
    }

    #[test]
    fn embedding_identity_holds() {
        let m = ring3(0.5);
        let cfg = McConfig::new(100_000, 21);
        for x in 0..3 {
            let (d, r) = embedding_identity(&m, x, 1.5, &cfg).unwrap();
            let se = (d.se.powi(2) + r.se.powi(2)).sqrt();
            assert!((d.mean - r.mean).abs() < 3.0 * se, "{} {}", d.mean, r.mean);
        }
    }

    #[test]
    fn standard_error_scales_as_inverse_root_n() {
        let m = ring3(0.2);
        let spec = MomentSpec::new(vec![1]).unwrap();
        let ses: Vec<f64> = [10_000usize, 100_000, 1_000_000]
            .iter()
            .map(|&n| estimate_moment(&m, 0, 2.0, &spec, &McConfig::new(n, 2)).unwrap().se)
            .collect();
        for w in ses.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
        }
    }

    #[test]
    fn estimate_json_layout() {
        let m = ring3(0.1);
        let spec = MomentSpec::new(vec![1, 1]).unwrap();
        let e = estimate_moment(&m, 1, 1.0, &spec, &McConfig::new(100, 1)).unwrap();
        let text = serde_json::to_string(&e).unwrap();
        let keys = ["\"spec\"", "\"x\"", "\"T\"", "\"n\"", "\"mean\"", "\"se\"", "\"seed\""];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{text}");
    }

    #[test]
    fn horizon_from_gap() {
        let g = Generator::equilibrium(&ring3(0.0)).unwrap();
        assert!((g.horizon() - 30.0 / g.gap()).abs() < 1e-12);
    }
}
