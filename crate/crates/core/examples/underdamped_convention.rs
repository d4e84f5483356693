//! Inertial dynamics on the ring: which normalization of the path weight
//! holds, <exp((S-T)/2)> = 1 or <exp(S-T)> = 1.

use driven_expansion::diffusion::{likelihood_ratio_convention, underdamped_ring};
use driven_expansion::sampler::McConfig;

fn main() -> driven_expansion::Result<()> {
    let model = underdamped_ring(1.0, 1.0, 1.0, 1.0);
    let report = likelihood_ratio_convention(&model, &[0.0], &[0.0], 1.0, &[4e-3, 2e-3], &McConfig::new(4000, 3))?;
    for r in &report.rows {
        println!(
            "dt = {:.0e}: (S-T)/2 -> {:.4} +- {:.4}   S-T -> {:.4} +- {:.4}   integrator {:.4}",
            r.dt, r.half, r.half_se, r.full, r.full_se, r.discrete
        );
    }
    println!("normalized: {}", report.passing);
    Ok(())
}
