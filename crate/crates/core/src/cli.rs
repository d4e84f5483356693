//! Command-line front end. Every artifact starts with run metadata: tool
//! version, command, model hash, seed, workers and the command parameters.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::diffusion::{
    continuum_activity_limit, convergence_exponent, diff_ring, diffusion_normalization, euler_maruyama,
    jump_chain_density, mclennan_first_order_diffusion, DiffusionModel, RingFunctions,
};
use crate::error::{Error, Result};
use crate::exact::{epsilon_derivatives_all_states, stationary_solve};
use crate::expansion::{assemble, assemble_all_states, convergence_diagnostic, Assembly, Backend};
use crate::model::{load_model_file, ModelFile, DETAILED_BALANCE_TOL};
use crate::response::{fdt_consistency_check, response_expansion, PerturbationSetup};
use crate::rng::{path_rng, with_threads};
use crate::sampler::McConfig;

#[derive(Debug, Parser, Serialize)]
#[command(name = "driven-expansion", version, about = "Stationary densities of driven Markov processes, order by order")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Master seed of all random streams.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Logical workers; results depend on this value, not on --threads.
    #[arg(long, global = true, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    /// OS threads in the pool.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Check a model file and report detailed balance and circulations.
    Validate(ValidateArgs),
    /// Exact stationary distributions for a list of driving strengths (CSV).
    Solve(SolveArgs),
    /// Order-by-order expansion of rho / rho0 (JSON).
    Expand(ExpandArgs),
    /// Overdamped ring diffusion: normalization check, first order density (JSON).
    Diffuse(DiffuseArgs),
    /// Continuum limit of the ring walker's activity (CSV).
    Continuum(ContinuumArgs),
    /// Second order response to a potential perturbation (JSON).
    Respond(RespondArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated driving strengths.
    #[arg(long = "eps", value_delimiter = ',', default_value = "0")]
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Exact,
    Mc,
}

#[derive(Debug, Args, Serialize)]
pub struct ExpandArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Highest order M.
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, value_enum, default_value_t = BackendArg::Exact)]
    pub backend: BackendArg,
    /// Horizon T (default: 30 relaxation times).
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Paths per state for the Monte Carlo backend.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Overrides the driving strength in the model file.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Restrict to one state label.
    #[arg(long)]
    pub state: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiffuseArgs {
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Forcing `1 + a sin(2 pi x)`.
    #[arg(long, default_value_t = 0.0)]
    pub forcing_amplitude: f64,
    #[arg(long, default_value_t = 0.0)]
    pub x0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Also estimate the first order density on this many grid points.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Write one driven path as raw f64 records plus a JSON sidecar.
    #[arg(long)]
    #[serde(skip)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ContinuumArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.005,0.0025")]
    pub delta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    pub x: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Forcing `1 + a sin(2 pi x)`.
    #[arg(long, default_value_t = 0.0)]
    pub forcing_amplitude: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct RespondArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Name of the potential V in the model's observables.
    #[arg(long)]
    pub potential: String,
    /// Name of the observable Q in the model's observables.
    #[arg(long)]
    pub observable: String,
    #[arg(long, default_value_t = 2.0)]
    pub horizon: f64,
    /// Overrides the driving strength in the model file.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Paths for the Monte Carlo estimates; omitted means exact only.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Largest accepted relative gap of the consistency check.
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
}

/// Text produced by a command and the exit code it asks for.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub text: String,
    pub code: u8,
}

impl Output {
    fn ok(text: String) -> Self {
        Self { text, code: 0 }
    }
}

impl Cli {
    fn mc(&self, samples: usize) -> McConfig {
        McConfig {
            samples,
            seed: self.seed,
            workers: self.workers as usize,
        }
    }

    fn metadata(&self, model_hash: &str) -> Value {
        let (name, params) = match serde_json::to_value(&self.command).expect("arguments serialize") {
            Value::Object(m) => m.into_iter().next().expect("one variant"),
            _ => unreachable!("enum variants serialize as objects"),
        };
        json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": name,
            "model_hash": model_hash,
            "seed": self.seed,
            "workers": self.workers,
            "params": params,
        })
    }

    fn csv_header(&self, model_hash: &str) -> String {
        let meta = self.metadata(model_hash);
        let mut out = String::new();
        for (k, v) in meta.as_object().expect("object") {
            let v = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out
    }
}

fn to_json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn hash_file(path: &PathBuf) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn error_json(e: &Error) -> Value {
    let mut m = Map::new();
    m.insert("message".into(), json!(e.to_string()));
    m.insert("exit_code".into(), json!(e.exit_code()));
    match e {
        Error::PairValidation { from, to, reason } => {
            m.insert("pair".into(), json!([from, to]));
            m.insert("reason".into(), json!(reason));
        }
        Error::Reducible { closed } => {
            m.insert("closed_subset".into(), json!(closed));
        }
        Error::Schema { pointer, message } => {
            m.insert("pointer".into(), json!(pointer));
            m.insert("reason".into(), json!(message));
        }
        _ => {}
    }
    Value::Object(m)
}

fn validate(cli: &Cli, args: &ValidateArgs) -> Result<Output> {
    let hash = hash_file(&args.model)?;
    let mut report = Map::new();
    report.insert("meta".into(), cli.metadata(&hash));
    match load_model_file(&args.model) {
        Ok(file) => {
            let m = &file.model;
            let labels = m.labels();
            let rho0 = m.equilibrium_distribution();
            let mut residuals = Vec::new();
            for x in 0..m.n() {
                for y in x + 1..m.n() {
                    let a = m.base_rate(x, y) * rho0[x];
                    let b = m.base_rate(y, x) * rho0[y];
                    if a == 0.0 && b == 0.0 {
                        continue;
                    }
                    residuals.push(json!({
                        "from": labels[x],
                        "to": labels[y],
                        "residual": (a - b).abs() / a.max(b),
                    }));
                }
            }
            let circ = m.circulation_check();
            let cycles: Vec<Value> = circ
                .cycles
                .iter()
                .map(|c| {
                    json!({
                        "states": c.states.iter().map(|&i| labels[i].clone()).collect::<Vec<_>>(),
                        "circulation": c.circulation,
                    })
                })
                .collect();
            report.insert("valid".into(), json!(true));
            report.insert("states".into(), json!(labels));
            report.insert("irreducible".into(), json!(true));
            report.insert("detailed_balance_tolerance".into(), json!(DETAILED_BALANCE_TOL));
            report.insert("detailed_balance".into(), json!(residuals));
            report.insert("conservative".into(), json!(circ.conservative));
            report.insert("circulation".into(), json!(cycles));
            Ok(Output::ok(to_json_text(&Value::Object(report))))
        }
        Err(e @ Error::Io(_)) => Err(e),
        Err(e) => {
            report.insert("valid".into(), json!(false));
            report.insert("error".into(), error_json(&e));
            Ok(Output {
                text: to_json_text(&Value::Object(report)),
                code: e.exit_code(),
            })
        }
    }
}

fn load(path: &PathBuf, epsilon: Option<f64>) -> Result<ModelFile> {
    let mut file = load_model_file(path)?;
    if let Some(e) = epsilon {
        if !e.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be finite, got {e}")));
        }
        file.model = file.model.with_epsilon(e);
    }
    Ok(file)
}

fn solve(cli: &Cli, args: &SolveArgs) -> Result<Output> {
    let file = load(&args.model, None)?;
    let mut eps: Vec<f64> = Vec::new();
    for &e in &args.eps {
        if !e.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be finite, got {e}")));
        }
        if !eps.contains(&e) {
            eps.push(e);
        }
    }
    let rho0 = file.model.equilibrium_distribution();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["state", "epsilon", "rho", "rho_over_rho0"])?;
    for &e in &eps {
        let rho = stationary_solve(&file.model.with_epsilon(e).build_driven_rates())?;
        for (x, label) in file.model.labels().iter().enumerate() {
            w.write_record([label.clone(), e.to_string(), rho[x].to_string(), (rho[x] / rho0[x]).to_string()])?;
        }
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf-8");
    Ok(Output::ok(cli.csv_header(&file.content_hash) + &body))
}

fn assembly_json(a: &Assembly, label: &str, exact_ratio: f64, taylor: &[f64], epsilon: f64) -> Value {
    let orders: Vec<Value> = a
        .orders
        .iter()
        .map(|o| {
            let terms: Vec<Value> = o
                .terms
                .iter()
                .map(|t| {
                    let mut m = Map::new();
                    m.insert("spec".into(), t.spec.to_json());
                    m.insert("label".into(), json!(t.spec.label()));
                    m.insert("moment".into(), json!(t.moment));
                    if let Some(se) = t.se {
                        m.insert("se".into(), json!(se));
                    }
                    m.insert("contribution".into(), json!(t.contribution()));
                    Value::Object(m)
                })
                .collect();
            let mut m = Map::new();
            m.insert("m".into(), json!(o.m));
            m.insert("terms".into(), json!(terms));
            m.insert("correction".into(), json!(o.correction));
            if let Some(se) = o.correction_se {
                m.insert("correction_se".into(), json!(se));
            }
            m.insert("partial_sum".into(), json!(o.partial_sum));
            if let Some(se) = o.partial_sum_se {
                m.insert("partial_sum_se".into(), json!(se));
            }
            m.insert("taylor_oracle".into(), json!(taylor[o.m - 1]));
            Value::Object(m)
        })
        .collect();
    let terms: Vec<_> = a.terms().cloned().collect();
    let last = a.partial_sums().last().copied().unwrap_or(1.0);
    json!({
        "state": label,
        "T": a.horizon,
        "orders": orders,
        "exact_ratio": exact_ratio,
        "residual": exact_ratio - last,
        "convergence": convergence_diagnostic(&terms, epsilon),
    })
}

fn expand(cli: &Cli, args: &ExpandArgs) -> Result<Output> {
    let file = load(&args.model, args.epsilon)?;
    let model = &file.model;
    let eps = model.epsilon();
    let states: Vec<usize> = match &args.state {
        Some(label) => vec![model
            .state_index(label)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown state {label:?}")))?],
        None => (0..model.n()).collect(),
    };
    let assemblies: Vec<Assembly> = match args.backend {
        BackendArg::Exact => {
            let all = assemble_all_states(model, args.order, args.horizon)?;
            states.iter().map(|&x| all[x].clone()).collect()
        }
        BackendArg::Mc => states
            .iter()
            .map(|&x| assemble(model, x, args.order, Backend::MonteCarlo(cli.mc(args.samples)), args.horizon))
            .collect::<Result<_>>()?,
    };
    let rho0 = model.equilibrium_distribution();
    let rho = stationary_solve(&model.build_driven_rates())?;
    let derivs: Vec<DVector<f64>> = (1..=args.order.min(4))
        .map(|m| epsilon_derivatives_all_states(model, m))
        .collect::<Result<_>>()?;
    let mut out_states = Vec::new();
    for a in &assemblies {
        let x = a.x;
        let mut taylor = Vec::new();
        let mut acc = 1.0;
        let mut fact = 1.0;
        for (m, d) in derivs.iter().enumerate() {
            fact *= (m + 1) as f64;
            acc += eps.powi(m as i32 + 1) / fact * d[x];
            taylor.push(acc);
        }
        out_states.push(assembly_json(a, &model.labels()[x], rho[x] / rho0[x], &taylor, eps));
    }
    let report = json!({
        "meta": cli.metadata(&file.content_hash),
        "epsilon": eps,
        "backend": match args.backend { BackendArg::Exact => "exact", BackendArg::Mc => "mc" },
        "states": out_states,
    });
    Ok(Output::ok(to_json_text(&report)))
}

fn ring_model(epsilon: f64, amplitude: f64) -> Result<DiffusionModel> {
    use std::f64::consts::PI;
    let base = diff_ring(epsilon);
    if amplitude == 0.0 {
        return Ok(base);
    }
    Ok(base
        .with_forcing(
            Arc::new(move |x: &[f64], f: &mut [f64]| f[0] = 1.0 + amplitude * (2.0 * PI * x[0]).sin()),
            Some(Arc::new(move |x: &[f64], j: &mut [f64]| j[0] = 2.0 * PI * amplitude * (2.0 * PI * x[0]).cos())),
        )?
        .with_description(format!("diff-ring with f = 1 + {amplitude} sin(2 pi x)")))
}

fn diffuse(cli: &Cli, args: &DiffuseArgs) -> Result<Output> {
    let model = ring_model(args.epsilon, args.forcing_amplitude)?;
    let hash = model.content_hash();
    let norm = diffusion_normalization(&model, &[args.x0], args.horizon, args.dt, &cli.mc(args.samples))?;
    let mut report = Map::new();
    report.insert("meta".into(), cli.metadata(&hash));
    report.insert("dt_threshold".into(), json!(model.dt_threshold()));
    report.insert("normalization".into(), serde_json::to_value(&norm)?);
    if let Some(grid) = args.grid {
        let dens = mclennan_first_order_diffusion(&model, grid, args.horizon, args.dt, &cli.mc(args.samples))?;
        let sites = grid * (1024 / grid).max(1);
        let chain = jump_chain_density(&model, sites)?;
        let stride = sites / grid;
        let oracle: Vec<f64> = (0..grid).map(|i| chain[i * stride]).collect();
        report.insert("first_order_density".into(), serde_json::to_value(&dens)?);
        report.insert("jump_chain_sites".into(), json!(sites));
        report.insert("jump_chain_density".into(), json!(oracle));
    }
    if let Some(path) = &args.trajectory {
        let traj = euler_maruyama(&model, &[args.x0], args.horizon, args.dt, &mut path_rng(cli.seed, 0))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        traj.write_records(&mut f)?;
        f.flush()?;
        let mut side = path.clone().into_os_string();
        side.push(".json");
        std::fs::write(side, to_json_text(&traj.sidecar(&model, cli.seed)))?;
    }
    Ok(Output::ok(to_json_text(&Value::Object(report))))
}

fn continuum(cli: &Cli, args: &ContinuumArgs) -> Result<Output> {
    use std::f64::consts::PI;
    let a = args.forcing_amplitude;
    let funcs = RingFunctions {
        f: Arc::new(move |x| 1.0 + a * (2.0 * PI * x).sin()),
        df: Arc::new(move |x| 2.0 * PI * a * (2.0 * PI * x).cos()),
        ..RingFunctions::diff_ring()
    };
    let hash = ring_model(args.epsilon, a)?.content_hash();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "delta", "discrete", "continuum", "error", "exponent"])?;
    for &x in &args.x {
        let rows: Vec<_> = args
            .delta
            .iter()
            .map(|&d| continuum_activity_limit(&funcs, 1.0, 1.0, args.epsilon, x, d))
            .collect::<Result<_>>()?;
        let p = if rows.len() >= 2 { convergence_exponent(&rows) } else { f64::NAN };
        for r in &rows {
            w.write_record([x, r.delta, r.discrete, r.continuum, r.error, p].map(|v| v.to_string()))?;
        }
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf-8");
    Ok(Output::ok(cli.csv_header(&hash) + &body))
}

fn respond(cli: &Cli, args: &RespondArgs) -> Result<Output> {
    let file = load(&args.model, args.epsilon)?;
    let setup = PerturbationSetup::new(
        &file.model,
        file.observable(&args.potential)?,
        file.observable(&args.observable)?,
        args.horizon,
    )?;
    let mc = args.samples.map(|n| cli.mc(n));
    let report = response_expansion(&setup, mc.as_ref())?;
    let fdt = fdt_consistency_check(&setup)?;
    let passed = fdt.gap <= args.threshold;
    let out = json!({
        "meta": cli.metadata(&file.content_hash),
        "response": report,
        "fdt": fdt,
        "threshold": args.threshold,
        "passed": passed,
    });
    Ok(Output {
        text: to_json_text(&out),
        code: if passed { 0 } else { 2 },
    })
}

/// Runs the parsed command on the configured thread pool.
pub fn execute(cli: &Cli) -> Result<Output> {
    let work = || match &cli.command {
        Command::Validate(a) => validate(cli, a),
        Command::Solve(a) => solve(cli, a),
        Command::Expand(a) => expand(cli, a),
        Command::Diffuse(a) => diffuse(cli, a),
        Command::Continuum(a) => continuum(cli, a),
        Command::Respond(a) => respond(cli, a),
    };
    match cli.threads {
        Some(t) => with_threads(t, work),
        None => work(),
    }
}

/// Entry point of the binary: parses `args`, writes the artifact, returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = execute(&cli).and_then(|out| {
        match &cli.out {
            Some(p) => std::fs::write(p, &out.text)?,
            None => std::io::stdout().write_all(out.text.as_bytes())?,
        }
        Ok(out.code)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::ring3;
    use crate::model::model_to_json;
    use std::collections::BTreeMap;

    fn ring3_file(dir: &tempfile::TempDir) -> PathBuf {
        let mut obs = BTreeMap::new();
        obs.insert("V".to_string(), vec![0.0, 1.0, 0.0]);
        obs.insert("Q".to_string(), vec![0.0, 0.0, 1.0]);
        let path = dir.path().join("ring3.json");
        std::fs::write(&path, serde_json::to_string_pretty(&model_to_json(&ring3(0.1), &obs)).unwrap()).unwrap();
        path
    }

    fn exec(args: &[&str]) -> Result<Output> {
        let mut full = vec!["driven-expansion"];
        full.extend_from_slice(args);
        execute(&Cli::try_parse_from(full).unwrap())
    }

    #[test]
    fn validate_pass_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        let p = ring3_file(&dir);
        let out = exec(&["validate", "--model", p.to_str().unwrap()]).unwrap();
        assert_eq!(out.code, 0);
        let v: Value = serde_json::from_str(&out.text).unwrap();
        assert_eq!(v["valid"], json!(true));
        assert_eq!(v["conservative"], json!(false));

        let bad = dir.path().join("bad.json");
        std::fs::write(
            &bad,
            r#"{"states":["a","b"],"beta":1,"epsilon":0,"energy":{"a":0,"b":0},
               "base_rates":[{"from":"a","to":"b","rate":1},{"from":"b","to":"a","rate":1}],
               "forcing":[{"from":"a","to":"b","value":1},{"from":"b","to":"a","value":1}]}"#,
        )
        .unwrap();
        let out = exec(&["validate", "--model", bad.to_str().unwrap()]).unwrap();
        assert_eq!(out.code, 1);
        assert!(out.text.contains("f(b,a)"));

        let reducible = dir.path().join("red.json");
        std::fs::write(
            &reducible,
            r#"{"states":["a","b","c"],"beta":1,"epsilon":0,"energy":{"a":0,"b":0,"c":0},
               "base_rates":[{"from":"a","to":"b","rate":1},{"from":"b","to":"a","rate":1}]}"#,
        )
        .unwrap();
        let out = exec(&["validate", "--model", reducible.to_str().unwrap()]).unwrap();
        assert_eq!(out.code, 1);
        let v: Value = serde_json::from_str(&out.text).unwrap();
        assert!(v["error"]["closed_subset"].is_array());

        let missing = exec(&["validate", "--model", "/nonexistent/model.json"]).unwrap_err();
        assert_eq!(missing.exit_code(), 3);
    }

    #[test]
    fn solve_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = ring3_file(&dir);
        let out = exec(&["solve", "--model", p.to_str().unwrap(), "--eps", "0,0.01,0.01"]).unwrap();
        let rows: Vec<&str> = out.text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "state,epsilon,rho,rho_over_rho0");
        assert_eq!(rows.len(), 1 + 6);
        for r in &rows[1..4] {
            let ratio: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
            assert!((ratio - 1.0).abs() < 1e-12);
        }
        // small-eps drift follows -beta h
        let h = crate::exact::mclennan_h(&ring3(0.0)).unwrap();
        for (x, r) in rows[4..].iter().enumerate() {
            let ratio: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
            assert_eq!((ratio - 1.0).signum(), -h[x].signum());
        }
        assert!(out.text.contains("# seed: 0"));
    }

    #[test]
    fn expand_reports() {
        let dir = tempfile::tempdir().unwrap();
        let p = ring3_file(&dir);
        let out = exec(&["expand", "--model", p.to_str().unwrap(), "--order", "1", "--epsilon", "0.01"]).unwrap();
        let v: Value = serde_json::from_str(&out.text).unwrap();
        let s = &v["states"][0];
        let p1 = s["orders"][0]["partial_sum"].as_f64().unwrap();
        let t1 = s["orders"][0]["taylor_oracle"].as_f64().unwrap();
        assert!((p1 - t1).abs() < 1e-9);
        let zero = exec(&["expand", "--model", p.to_str().unwrap(), "--order", "2", "--epsilon", "0"]).unwrap();
        let v: Value = serde_json::from_str(&zero.text).unwrap();
        for s in v["states"].as_array().unwrap() {
            for o in s["orders"].as_array().unwrap() {
                assert_eq!(o["correction"].as_f64().unwrap(), 0.0);
            }
        }
        let mc = exec(&[
            "expand", "--model", p.to_str().unwrap(), "--order", "1", "--backend", "mc", "--samples", "1000", "--state", "1",
        ])
        .unwrap();
        let v: Value = serde_json::from_str(&mc.text).unwrap();
        assert!(v["states"][0]["orders"][0]["terms"][0]["se"].is_number());
        assert_eq!(v["meta"]["params"]["samples"], json!(1000));
    }

    #[test]
    fn continuum_rows_and_respond() {
        let out = exec(&["continuum", "--delta", "0.01,0.005", "--x", "0.3"]).unwrap();
        let rows: Vec<&str> = out.text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].contains("error"));
        let dir = tempfile::tempdir().unwrap();
        let p = ring3_file(&dir);
        let out = exec(&["respond", "--model", p.to_str().unwrap(), "--potential", "V", "--observable", "V", "--horizon", "1"]).unwrap();
        assert_eq!(out.code, 0);
        let strict = exec(&[
            "respond", "--model", p.to_str().unwrap(), "--potential", "V", "--observable", "V", "--horizon", "1", "--threshold", "0",
        ])
        .unwrap();
        assert_eq!(strict.code, 2);
    }

    #[test]
    fn identical_across_thread_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = ring3_file(&dir);
        let a = exec(&["expand", "--model", p.to_str().unwrap(), "--order", "2", "--backend", "mc", "--samples", "2000", "--threads", "1"]).unwrap();
        let b = exec(&["expand", "--model", p.to_str().unwrap(), "--order", "2", "--backend", "mc", "--samples", "2000", "--threads", "3"]).unwrap();
        assert_eq!(a.text, b.text);
    }

    #[test]
    fn unknown_flags_rejected() {
        assert_eq!(run(["driven-expansion", "solve", "--bogus", "1"]), 1);
    }
}
