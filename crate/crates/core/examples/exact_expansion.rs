//! Order-by-order expansion of rho / rho0 on a model file, against the exact
//! stationary law.
//!
//!     cargo run --example exact_expansion -- examples/data/ring3.json 0.2

use driven_expansion::exact::stationary_solve;
use driven_expansion::expansion::assemble_all_states;
use driven_expansion::model::load_model_file;

fn main() -> driven_expansion::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "examples/data/ring3.json".into());
    let file = load_model_file(&path)?;
    let model = match args.next() {
        Some(e) => file.model.with_epsilon(e.parse().expect("epsilon")),
        None => file.model,
    };

    let rho0 = model.equilibrium_distribution();
    let rho = stationary_solve(&model.build_driven_rates())?;
    println!("epsilon = {}", model.epsilon());
    println!("{:>6} {:>14} {:>14} {:>14} {:>14}", "state", "p_1", "p_2", "p_3", "exact");
    for a in assemble_all_states(&model, 3, None)? {
        let p = a.partial_sums();
        println!(
            "{:>6} {:>14.10} {:>14.10} {:>14.10} {:>14.10}",
            model.labels()[a.x],
            p[0],
            p[1],
            p[2],
            rho[a.x] / rho0[a.x]
        );
    }
    Ok(())
}
