//! Discrete activity of the ring walker against its continuum limit as the
//! mesh shrinks, for constant and for periodic forcing.

use std::f64::consts::PI;
use std::sync::Arc;

use driven_expansion::diffusion::{continuum_activity_limit, convergence_exponent, RingFunctions};

fn main() -> driven_expansion::Result<()> {
    let constant = RingFunctions::diff_ring();
    let periodic = RingFunctions {
        f: Arc::new(|x| 1.0 + (2.0 * PI * x).sin()),
        df: Arc::new(|x| 2.0 * PI * (2.0 * PI * x).cos()),
        ..RingFunctions::diff_ring()
    };
    for (name, funcs, deltas) in [
        ("f = 1", &constant, [1e-2, 5e-3, 2.5e-3]),
        ("f = 1 + sin 2 pi x", &periodic, [1e-3, 5e-4, 2.5e-4]),
    ] {
        println!("{name}");
        for x in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let rows = deltas
                .iter()
                .map(|&d| continuum_activity_limit(funcs, 1.0, 1.0, 0.5, x, d))
                .collect::<driven_expansion::Result<Vec<_>>>()?;
            let errors: Vec<String> = rows.iter().map(|r| format!("{:+.3e}", r.error)).collect();
            println!("  x = {x}: errors {}  exponent {:.3}", errors.join(" "), convergence_exponent(&rows));
        }
    }
    Ok(())
}
