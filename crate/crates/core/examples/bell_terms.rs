//! Lists the expansion terms of each order with their exact coefficients and
//! checks them against the Bell-polynomial construction.

use driven_expansion::expansion::{bell_form_terms, coefficient_mass, enumerate_terms};

fn main() {
    let max = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    for m in 1..=max {
        let terms = enumerate_terms(m, None).expect("m >= 1");
        let bell = bell_form_terms(m, None);
        let same = terms
            .iter()
            .zip(&bell)
            .all(|(t, b)| t.exponents() == b.b.as_slice() && *t.coefficient() == b.coefficient);
        let (mass, bound) = coefficient_mass(m);
        println!("order {m}: {} terms, Bell form agrees: {same}, sum |c| = {mass} <= {bound}", terms.len());
        for t in &terms {
            println!("    {:>24}   {}", t.label(), t.coefficient());
        }
    }
}
