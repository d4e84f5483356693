//! The same seed and worker count give the same bytes whatever the thread
//! count.

use clap::Parser;
use driven_expansion::cli::{execute, Cli};

fn main() -> driven_expansion::Result<()> {
    let run = |threads: &str| -> driven_expansion::Result<String> {
        let cli = Cli::try_parse_from([
            "driven-expansion", "--seed", "5", "--workers", "8", "--threads", threads,
            "expand", "--model", "examples/data/ring3.json", "--order", "2", "--backend", "mc", "--samples", "20000",
        ])
        .expect("valid arguments");
        Ok(execute(&cli)?.text)
    };
    let one = run("1")?;
    let four = run("4")?;
    println!("{} bytes, identical: {}", one.len(), one == four);
    Ok(())
}
