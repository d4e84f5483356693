//! Second order response of <Q(x_T)> to a potential perturbation, the
//! residual against exact driven evolution, and the consistency check.
//!
//!     cargo run --example response -- examples/data/ring3.json V Q

use driven_expansion::model::load_model_file;
use driven_expansion::response::{fdt_consistency_check, response_expansion, PerturbationSetup};

fn main() -> driven_expansion::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args.first().map(String::as_str).unwrap_or("examples/data/ring3.json");
    let (v, q) = (args.get(1).map(String::as_str).unwrap_or("V"), args.get(2).map(String::as_str).unwrap_or("Q"));
    let file = load_model_file(path)?;
    let setup = PerturbationSetup::new(&file.model, file.observable(v)?, file.observable(q)?, 2.0)?;

    for eps in [0.2, 0.1, 0.05] {
        let r = response_expansion(&setup.with_epsilon(eps), None)?;
        println!(
            "eps = {eps:<5} exact {:.8}  residuals {:+.2e} {:+.2e} {:+.2e}",
            r.oracle, r.residuals[0], r.residuals[1], r.residuals[2]
        );
    }
    let fdt = fdt_consistency_check(&setup.with_epsilon(0.0))?;
    println!("second derivative {:.8} vs {:.8}, gap {:.1e}", fdt.lhs, fdt.rhs, fdt.gap);
    Ok(())
}
