//! Path sampling on the three-state ring: the normalization identity and the
//! expansion moments, each against its exact value.

use driven_expansion::exact::tilted_moment_exact;
use driven_expansion::expansion::enumerate_terms;
use driven_expansion::fixtures::ring3;
use driven_expansion::sampler::{check_normalization, estimate_moments, McConfig, Start};

fn main() -> driven_expansion::Result<()> {
    let model = ring3(0.5);
    let cfg = McConfig::new(200_000, 7);
    let t = 2.0;

    for x in 0..3 {
        let norm = check_normalization(&model, x, t, &cfg)?;
        println!("x = {x}: <exp((S-T)/2)> = {:.5} +- {:.5}", norm.mean, norm.se);
    }

    let specs: Vec<_> = (1..=3).flat_map(|m| enumerate_terms(m, None).unwrap()).collect();
    let est = estimate_moments(&model, Start::State(0), t, &specs, &cfg)?;
    println!("\nmoments from x = 0, T = {t}");
    for (s, e) in specs.iter().zip(est) {
        let exact = tilted_moment_exact(&model, s.exponents(), 0, t)?;
        println!("{:>12}: {:>11.6} +- {:.6}   exact {:>11.6}", s.label(), e.mean, e.se, exact);
    }
    Ok(())
}
