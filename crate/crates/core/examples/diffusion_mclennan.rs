//! Overdamped diffusion on the unit ring with U = cos(2 pi x) and a constant
//! drive: path-weight normalization, then the first order density against a
//! fine nearest-neighbour walker.

use driven_expansion::diffusion::{diff_ring, diffusion_normalization, jump_chain_density, mclennan_first_order_diffusion};
use driven_expansion::sampler::McConfig;

fn main() -> driven_expansion::Result<()> {
    env_logger::init();
    let model = diff_ring(0.05);

    for dt in [4e-3, 2e-3, 1e-3] {
        let n = diffusion_normalization(&model.with_epsilon(0.5), &[0.0], 1.0, dt, &McConfig::new(2000, 1))?;
        println!("dt = {dt:.0e}: <exp((S-T)/2)> = {:.4} +- {:.4}, bias {:+.2e}", n.mean, n.se, n.bias);
    }

    let dens = mclennan_first_order_diffusion(&model, 64, 1.0, 1e-3, &McConfig::new(500, 2))?;
    let chain = jump_chain_density(&model, 1024)?;
    println!("\n{:>8} {:>10} {:>10} {:>10}", "x", "rho0", "first", "walker");
    for i in (0..64).step_by(8) {
        println!("{:>8.4} {:>10.5} {:>10.5} {:>10.5}", dens.x[i], dens.rho0[i], dens.density[i], chain[i * 16]);
    }
    Ok(())
}
