use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use uqh::invariants::{cmat, SliceDiagram, SurgeryPresentation};
use uqh::scalars::{DEFAULT_SEED, DEFAULT_TOL};
use uqh::verify::{run_suite, SUITES};
use uqh::{Ctx, Error, Params, Result, C64};

#[derive(Parser)]
#[command(name = "uqh", version, about = "Weight modules, modified traces and surgery invariants for unrolled quantum sl(2)")]
struct Cli {
    /// Order of the root of unity, q = exp(iπ/r).
    #[arg(long, global = true)]
    r: Option<u32>,
    #[arg(long, global = true, default_value_t = 1.0, allow_hyphen_values = true)]
    d0: f64,
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED, value_parser = parse_seed)]
    seed: u64,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a property suite.
    Verify {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUITES.iter().copied().chain(["all"])))]
        suite: String,
    },
    /// Evaluate a slice diagram.
    Eval { file: PathBuf },
    /// Renormalized invariant of a closed diagram.
    Link {
        file: PathBuf,
        #[arg(long)]
        cut: Option<usize>,
    },
    /// Surgery invariant of a presentation.
    Z { file: PathBuf },
}

fn parse_seed(s: &str) -> std::result::Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn scalar(z: C64) -> serde_json::Value {
    json!({ "re": z.re, "im": z.im })
}

fn run(cli: &Cli) -> Result<bool> {
    let r = cli.r.ok_or_else(|| Error::InvalidParams("--r is required".into()))?;
    let cx = Ctx::with_seed(Params::with(r, cli.d0, cli.tol)?, cli.seed);
    match &cli.cmd {
        Cmd::Verify { suite } => {
            let reports = run_suite(&cx, suite)?;
            let ok = reports.iter().all(|r| r.passed());
            if cli.json {
                let v = if reports.len() == 1 { json!(reports[0]) } else { json!(reports) };
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                for rep in &reports {
                    let fails = rep.checks.iter().filter(|c| !c.pass).count();
                    println!("== {} ({} checks, {} failed, worst residual {:.3e})", rep.suite, rep.checks.len(), fails, rep.worst());
                    for c in &rep.checks {
                        let mark = if c.pass { "ok  " } else { "FAIL" };
                        let note = c.note.as_deref().map(|n| format!("  [{n}]")).unwrap_or_default();
                        println!("  {mark} {:<48} {:.3e} (tol {:.0e}){note}", c.name, c.residual, c.tol);
                    }
                }
            }
            Ok(ok)
        }
        Cmd::Eval { file } => {
            let d = SliceDiagram::from_json(&read(file)?)?;
            let m = cx.rt_eval(&d)?;
            let v = if d.is_closed() { scalar(m.mat[(0, 0)]) } else { json!(cmat::to_rows(&m.mat)) };
            println!("{}", serde_json::to_string(&v)?);
            Ok(true)
        }
        Cmd::Link { file, cut } => {
            let d = SliceDiagram::from_json(&read(file)?)?;
            let (z, comp) = cx.renormalized_invariant(&d, *cut)?;
            if cli.json {
                println!("{}", json!({ "value": scalar(z), "cut": comp }));
            } else {
                println!("{}", scalar(z));
                eprintln!("cut component: {comp}");
            }
            Ok(true)
        }
        Cmd::Z { file } => {
            let pres = SurgeryPresentation::from_json(&read(file)?)?;
            let rep = cx.z_invariant(&pres)?;
            if cli.json {
                println!("{}", serde_json::to_string(&rep)?);
            } else {
                println!("{}", scalar(rep.value));
                eprintln!("m = {}, sigma = {}, n = {}, terms = {}", rep.m, rep.sigma, rep.n, rep.terms);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.r.is_none() {
        use clap::CommandFactory;
        Cli::command().error(clap::error::ErrorKind::MissingRequiredArgument, "--r <R> is required").exit();
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
