//! Driven Markov jump models.
//!
//! A [`JumpModel`] couples a detailed-balance reference dynamics (energies
//! `U`, base rates `k0`, inverse temperature `beta`) to an antisymmetric edge
//! forcing `f` with amplitude `epsilon`. Driven rates follow
//! `k_eps(x, y) = k0(x, y) * exp(beta * epsilon * f(x, y) / 2)`.

mod file;

pub use file::{load_model_file, load_model_str, model_to_json, ModelFile};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance for the detailed-balance check on base rates.
pub const DETAILED_BALANCE_TOL: f64 = 1e-12;
/// Absolute tolerance on forcing circulations for calling a model conservative.
pub const CIRCULATION_TOL: f64 = 1e-12;

/// Generator of a continuous-time jump process.
///
/// Off-diagonal entries are rates `k(x, y) >= 0`; the diagonal holds minus the
/// escape rate so every row sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    generator: DMatrix<f64>,
}

impl RateMatrix {
    /// Builds a rate matrix from off-diagonal rates. The diagonal of `rates`
    /// is ignored and replaced by minus the row sum.
    pub fn from_rates(rates: &DMatrix<f64>) -> Result<Self> {
        let n = rates.nrows();
        if n != rates.ncols() || n == 0 {
            return Err(Error::Validation(format!(
                "rate matrix must be square and nonempty, got {}x{}",
                rates.nrows(),
                rates.ncols()
            )));
        }
        let mut generator = DMatrix::zeros(n, n);
        for x in 0..n {
            let mut escape = 0.0;
            for y in 0..n {
                if x == y {
                    continue;
                }
                let k = rates[(x, y)];
                if !k.is_finite() || k < 0.0 {
                    return Err(Error::PairValidation {
                        from: x.to_string(),
                        to: y.to_string(),
                        reason: format!("rate must be finite and nonnegative, got {k}"),
                    });
                }
                generator[(x, y)] = k;
                escape += k;
            }
            generator[(x, x)] = -escape;
        }
        Ok(Self { generator })
    }

    pub fn n(&self) -> usize {
        self.generator.nrows()
    }

    /// Rate of the transition `x -> y` (zero on the diagonal).
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        if x == y {
            0.0
        } else {
            self.generator[(x, y)]
        }
    }

    /// Total escape rate out of `x`.
    pub fn escape(&self, x: usize) -> f64 {
        -self.generator[(x, x)]
    }

    pub fn max_escape(&self) -> f64 {
        (0..self.n()).map(|x| self.escape(x)).fold(0.0, f64::max)
    }

    /// The backward generator `L` with `(L g)(x) = sum_y k(x,y) [g(y) - g(x)]`.
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// Largest absolute row sum; zero up to rounding by construction.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.n())
            .map(|x| self.generator.row(x).iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// A cycle of the base-rate support graph and its forcing circulation.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Cycle {
    /// Visited states; the last state connects back to the first.
    pub states: Vec<usize>,
    pub circulation: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CirculationReport {
    pub cycles: Vec<Cycle>,
    pub conservative: bool,
}

/// A driven jump model. Immutable after construction; scanning `epsilon`
/// produces new values via [`JumpModel::with_epsilon`].
#[derive(Debug, Clone, PartialEq)]
pub struct JumpModel {
    labels: Vec<String>,
    energy: Vec<f64>,
    beta: f64,
    base_rates: DMatrix<f64>,
    forcing: DMatrix<f64>,
    epsilon: f64,
}

impl JumpModel {
    /// Validates and builds a model. `base_rates` and `forcing` are `n x n`;
    /// their diagonals are ignored.
    pub fn new(
        labels: Vec<String>,
        energy: Vec<f64>,
        beta: f64,
        base_rates: DMatrix<f64>,
        forcing: DMatrix<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        let n = labels.len();
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 states, got {n}")));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Validation(format!("duplicate state label {l:?}")));
            }
        }
        if energy.len() != n {
            return Err(Error::Validation(format!(
                "energy has {} entries for {n} states",
                energy.len()
            )));
        }
        if let Some(u) = energy.iter().find(|u| !u.is_finite()) {
            return Err(Error::Validation(format!("non-finite energy {u}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Validation(format!("beta must be finite and > 0, got {beta}")));
        }
        if !epsilon.is_finite() {
            return Err(Error::Validation(format!("epsilon must be finite, got {epsilon}")));
        }
        for (name, m) in [("base_rates", &base_rates), ("forcing", &forcing)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Validation(format!(
                    "{name} must be {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let mut base_rates = base_rates;
        let mut forcing = forcing;
        for x in 0..n {
            base_rates[(x, x)] = 0.0;
            forcing[(x, x)] = 0.0;
        }

        let pair_err = |x: usize, y: usize, reason: String| Error::PairValidation {
            from: labels[x].clone(),
            to: labels[y].clone(),
            reason,
        };

        let u_min = energy.iter().cloned().fold(f64::INFINITY, f64::min);
        let boltz: Vec<f64> = energy.iter().map(|u| (-beta * (u - u_min)).exp()).collect();
        for x in 0..n {
            for y in 0..n {
                if x == y {
                    continue;
                }
                let k = base_rates[(x, y)];
                if !k.is_finite() || k < 0.0 {
                    return Err(pair_err(x, y, format!("base rate must be finite and >= 0, got {k}")));
                }
                let fxy = forcing[(x, y)];
                if !fxy.is_finite() {
                    return Err(pair_err(x, y, format!("non-finite forcing {fxy}")));
                }
                if fxy != -forcing[(y, x)] {
                    return Err(pair_err(
                        x,
                        y,
                        format!(
                            "forcing is not antisymmetric: f(x,y) = {fxy}, f(y,x) = {}",
                            forcing[(y, x)]
                        ),
                    ));
                }
                if fxy != 0.0 && k == 0.0 {
                    return Err(pair_err(x, y, "forcing on an edge with zero base rate".into()));
                }
                if y > x {
                    let a = k * boltz[x];
                    let b = base_rates[(y, x)] * boltz[y];
                    if (a - b).abs() > DETAILED_BALANCE_TOL * a.max(b) {
                        return Err(pair_err(
                            x,
                            y,
                            format!("detailed balance violated: k0(x,y)e^(-bU(x)) = {a:e}, k0(y,x)e^(-bU(y)) = {b:e}"),
                        ));
                    }
                }
            }
        }
        if let Some(closed) = closed_proper_subset(&base_rates) {
            return Err(Error::Reducible { closed });
        }
        Ok(Self {
            labels,
            energy,
            beta,
            base_rates,
            forcing,
            epsilon,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn base_rate(&self, x: usize, y: usize) -> f64 {
        self.base_rates[(x, y)]
    }

    pub fn base_rates(&self) -> &DMatrix<f64> {
        &self.base_rates
    }

    pub fn forcing(&self, x: usize, y: usize) -> f64 {
        self.forcing[(x, y)]
    }

    pub fn forcing_matrix(&self) -> &DMatrix<f64> {
        &self.forcing
    }

    /// Same reference dynamics and forcing, new drive amplitude.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        assert!(epsilon.is_finite(), "epsilon must be finite");
        Self {
            epsilon,
            ..self.clone()
        }
    }

    /// Same reference dynamics with a different forcing.
    pub fn with_forcing(&self, forcing: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.labels.clone(),
            self.energy.clone(),
            self.beta,
            self.base_rates.clone(),
            forcing,
            self.epsilon,
        )
    }

    /// Replaces the forcing by the potential difference `f(x,y) = V(y) - V(x)`
    /// on every edge of the base-rate support.
    pub fn with_potential_forcing(&self, potential: &[f64]) -> Result<Self> {
        let n = self.n();
        if potential.len() != n {
            return Err(Error::InvalidArgument(format!(
                "potential has {} entries for {n} states",
                potential.len()
            )));
        }
        let forcing = DMatrix::from_fn(n, n, |x, y| {
            if x != y && self.base_rates[(x, y)] > 0.0 {
                potential[y] - potential[x]
            } else {
                0.0
            }
        });
        self.with_forcing(forcing)
    }

    /// Forcing multiplied by `factor`.
    pub fn scaled_forcing(&self, factor: f64) -> Result<Self> {
        self.with_forcing(&self.forcing * factor)
    }

    /// Largest |f(x,y)| over all pairs.
    pub fn max_abs_forcing(&self) -> f64 {
        self.forcing.iter().fold(0.0, |a, f| a.max(f.abs()))
    }

    /// Reference (detailed-balance) rates as a generator.
    pub fn base_rate_matrix(&self) -> RateMatrix {
        RateMatrix::from_rates(&self.base_rates).expect("validated at construction")
    }

    /// Driven rates `k0(x,y) * exp(beta * epsilon * f(x,y) / 2)`.
    pub fn build_driven_rates(&self) -> RateMatrix {
        let n = self.n();
        let half = 0.5 * self.beta * self.epsilon;
        let rates = DMatrix::from_fn(n, n, |x, y| {
            let k = self.base_rates[(x, y)];
            if x == y || k == 0.0 {
                0.0
            } else if self.forcing[(x, y)] == 0.0 {
                k
            } else {
                k * (half * self.forcing[(x, y)]).exp()
            }
        });
        RateMatrix::from_rates(&rates).expect("driven rates of a validated model")
    }

    /// `rho0(x) = exp(-beta U(x)) / Z`.
    pub fn equilibrium_distribution(&self) -> DVector<f64> {
        let u_min = self.energy.iter().cloned().fold(f64::INFINITY, f64::min);
        let w = DVector::from_iterator(
            self.n(),
            self.energy.iter().map(|u| (-self.beta * (u - u_min)).exp()),
        );
        let z = w.sum();
        w / z
    }

    /// Expected forcing per unit time out of each state under the reference
    /// rates: `w(x) = sum_y k0(x,y) f(x,y)`.
    pub fn forcing_rate(&self) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(n, |x, _| {
            (0..n)
                .filter(|&y| y != x)
                .map(|y| self.base_rates[(x, y)] * self.forcing[(x, y)])
                .sum()
        })
    }

    /// Circulations of the forcing around a cycle basis of the support graph.
    ///
    /// The basis is built from a BFS spanning tree; every chord closes one
    /// fundamental cycle.
    pub fn circulation_check(&self) -> CirculationReport {
        let n = self.n();
        let adjacent = |x: usize, y: usize| x != y && self.base_rates[(x, y)] > 0.0;
        let mut parent = vec![usize::MAX; n];
        let mut depth = vec![0usize; n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(x) = queue.pop_front() {
            order.push(x);
            for y in 0..n {
                if adjacent(x, y) && !visited[y] {
                    visited[y] = true;
                    parent[y] = x;
                    depth[y] = depth[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        let is_tree_edge = |x: usize, y: usize| parent[y] == x || parent[x] == y;

        let mut cycles = Vec::new();
        for x in 0..n {
            for y in (x + 1)..n {
                if !adjacent(x, y) || is_tree_edge(x, y) {
                    continue;
                }
                // chord x -> y, then tree path y -> lca -> x
                let (mut a, mut b) = (y, x);
                let mut up_from_y = vec![y];
                let mut up_from_x = vec![x];
                while depth[a] > depth[b] {
                    a = parent[a];
                    up_from_y.push(a);
                }
                while depth[b] > depth[a] {
                    b = parent[b];
                    up_from_x.push(b);
                }
                while a != b {
                    a = parent[a];
                    b = parent[b];
                    up_from_y.push(a);
                    up_from_x.push(b);
                }
                // both climbs end at the lca; walk y -> lca -> x, then rotate
                // so the chord x -> y comes first
                up_from_x.pop();
                let mut walk = up_from_y;
                walk.extend(up_from_x.iter().rev().copied());
                let last = walk.pop().expect("walk ends at x");
                debug_assert_eq!(last, x);
                let mut states = vec![x];
                states.extend(walk);
                let circulation = (0..states.len())
                    .map(|i| self.forcing[(states[i], states[(i + 1) % states.len()])])
                    .sum();
                cycles.push(Cycle {
                    states,
                    circulation,
                });
            }
        }
        let conservative = cycles.iter().all(|c| c.circulation.abs() <= CIRCULATION_TOL);
        CirculationReport {
            cycles,
            conservative,
        }
    }
}

/// Returns a closed proper subset of states if the directed graph of positive
/// off-diagonal entries is not strongly connected.
///
/// The set reachable from any state is closed under the dynamics, so the first
/// state whose reachable set is proper yields the witness.
pub fn closed_proper_subset(rates: &DMatrix<f64>) -> Option<Vec<usize>> {
    let n = rates.nrows();
    let mut best: Option<Vec<usize>> = None;
    for start in 0..n {
        let mut seen = vec![false; n];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for y in 0..n {
                if y != x && !seen[y] && rates[(x, y)] > 0.0 {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        let set: Vec<usize> = (0..n).filter(|&y| seen[y]).collect();
        if set.len() < n && best.as_ref().is_none_or(|b| set.len() < b.len()) {
            best = Some(set);
        }
    }
    best
}
