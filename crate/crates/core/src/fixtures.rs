//! Reference models used throughout the tests, examples and CLI.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::JumpModel;

/// Three-state ring: `U = (0, 1, 2)`, `beta = 1`,
/// `k0(x, y) = exp(-(U(y) - U(x)) / 2)` on all six ordered pairs and unit
/// forcing around `0 -> 1 -> 2 -> 0`.
pub fn ring3(epsilon: f64) -> JumpModel {
    let energy = vec![0.0, 1.0, 2.0];
    let k0 = DMatrix::from_fn(3, 3, |x, y| {
        if x == y {
            0.0
        } else {
            (-(energy[y] - energy[x]) / 2.0f64).exp()
        }
    });
    let mut f = DMatrix::zeros(3, 3);
    for (a, b) in [(0, 1), (1, 2), (2, 0)] {
        f[(a, b)] = 1.0;
        f[(b, a)] = -1.0;
    }
    JumpModel::new(
        (0..3).map(|i| i.to_string()).collect(),
        energy,
        1.0,
        k0,
        f,
        epsilon,
    )
    .expect("ring3 is a valid model")
}

/// RING3 base dynamics with forcing from the potential `V = (0, 1, 0)`.
pub fn ring3_potential(epsilon: f64) -> JumpModel {
    ring3(epsilon)
        .with_potential_forcing(&[0.0, 1.0, 0.0])
        .expect("potential forcing is valid")
}

/// Random reversible model on `n` states: a ring backbone plus random chords,
/// energies in `[0, 2)`, symmetric conductances in `[0.5, 2)` and forcing
/// uniform in `[-1, 1]` on every edge. `epsilon` is zero.
pub fn random_model(n: usize, beta: f64, seed: u64) -> JumpModel {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let energy: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let mut conductance = DMatrix::zeros(n, n);
    let mut forcing = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in (x + 1)..n {
            let backbone = y == x + 1 || (x == 0 && y == n - 1);
            if backbone || rng.random_bool(0.3) {
                let c = rng.random_range(0.5..2.0);
                conductance[(x, y)] = c;
                conductance[(y, x)] = c;
                let f = rng.random_range(-1.0..1.0);
                forcing[(x, y)] = f;
                forcing[(y, x)] = -f;
            }
        }
    }
    let k0 = DMatrix::from_fn(n, n, |x, y| {
        if conductance[(x, y)] > 0.0 {
            conductance[(x, y)] * (-beta * (energy[y] - energy[x]) / 2.0).exp()
        } else {
            0.0
        }
    });
    JumpModel::new(
        (0..n).map(|i| i.to_string()).collect(),
        energy,
        beta,
        k0,
        forcing,
        0.0,
    )
    .expect("random reversible model is valid")
}
