use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use fbf_core::demos;
use fbf_core::imaging::ImageGrid;
use fbf_core::linalg;
use fbf_core::problem::{self, ProblemFile};
use fbf_core::solver::{self, SolveOutput};
use fbf_core::{checks, dual_surrogate, extract_solution, primal_surrogate, FbfError, Result};

const TRACE_ENV: &str = "SOLVER_TRACE_EVERY";

#[derive(Parser)]
#[command(name = "fbf", version, about = "Primal-dual splitting solver for coupled monotone inclusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a JSON problem file.
    Solve {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, solve and check a built-in instance.
    Demo {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(demos::DEMOS))]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant battery.
    Check {
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
}

struct Outcome {
    status: solver::Status,
    out: SolveOutput,
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| FbfError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn solve_problem(pf: &ProblemFile, out_dir: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out_dir)?;
    let built = pf.build()?;
    let (beta, policy) = built.prepare()?;
    let mut opts = built.config.options();
    if let Ok(v) = std::env::var(TRACE_ENV) {
        opts.trace_every = v
            .trim()
            .parse()
            .map_err(|_| FbfError::Config(format!("{TRACE_ENV} must be a non-negative integer, got '{v}'")))?;
    }
    let start = Instant::now();
    let out = solver::solve(&built.system, &built.init, &policy, &built.errors, &opts)?;
    let wall = start.elapsed().as_secs_f64();

    let file = std::fs::File::create(out_dir.join("trace.csv"))?;
    solver::write_trace_csv(std::io::BufWriter::new(file), &out.trace)?;
    let sol = extract_solution(&out.state, &built.system);
    write_json(&out_dir.join("solution.json"), &json!(sol))?;
    write_json(&out_dir.join("final_state.json"), &json!(out.state))?;

    let defects = solver::transversality_defects(&built.system, &out.state);
    let mut summary = json!({
        "status": out.status,
        "iterations": out.iterations,
        "displacement": finite_or_null(out.displacement),
        "transversality_defect": defects.iter().map(|d| d * d).sum::<f64>().sqrt(),
        "transversality_defect_per_block": defects,
        "partial_sums": out.partial_sums,
        "beta": beta,
        "epsilon": policy.epsilon,
        "gamma": policy.gamma_at(0),
        "step_rule": policy.rule,
        "tol": opts.tol,
        "max_iter": opts.max_iter,
        "wall_time_s": wall,
        "seed": built.config.seed,
        "errors": built.errors.description(),
    });
    if let Some(ms) = &built.minimization {
        let primal = primal_surrogate(ms, &out.state.x1, &out.state.x2)?;
        summary["primal_surrogate"] = finite_or_null(primal);
        let x: Vec<f64> = out.state.x1.iter().flatten().copied().collect();
        let grad = ms.phi.gradient(&x);
        let mut w = Vec::new();
        let mut off = 0;
        for d in &ms.layout.h_dims {
            w.push(grad[off..off + d].to_vec());
            off += d;
        }
        match dual_surrogate(ms, &sol.vbar, &w) {
            Ok(d) => {
                summary["dual_surrogate"] = finite_or_null(d);
                summary["duality_gap"] = finite_or_null(primal - d);
            }
            Err(FbfError::NotComputable(why)) => summary["dual_surrogate_unavailable"] = json!(why),
            Err(e) => return Err(e),
        }
    }
    write_json(&out_dir.join("summary.json"), &summary)?;
    println!(
        "{:?} after {} iterations (displacement {:.3e}, beta {:.6}, gamma {:.6}, {:.3}s)",
        out.status,
        out.iterations,
        out.displacement,
        beta,
        policy.gamma_at(0),
        wall
    );
    Ok(Outcome { status: out.status, out })
}

fn cmd_solve(file: &Path, out_dir: &Path) -> Result<u8> {
    let pf = problem::load_problem(file)?;
    let o = solve_problem(&pf, out_dir)?;
    Ok(o.status.exit_code() as u8)
}

fn demo_check(name: &str, o: &Outcome, out_dir: &Path) -> Result<bool> {
    let x = &o.out.state.x1;
    let report = match name {
        "lasso" | "qp" => {
            let reference = if name == "lasso" { demos::lasso_oracle(0.0) } else { demos::qp_oracle()? };
            let err = linalg::norm_inf(&linalg::sub(&x[0], &reference));
            json!({ "oracle": reference, "max_error": err, "tolerance": 1e-6, "passed": err <= 1e-6 })
        }
        "deblur" => {
            let (truth, observed) = demos::deblur_data()?;
            let restored = ImageGrid::new(truth.height, truth.width, x[0].clone())?;
            truth.write_pgm(&out_dir.join("truth.pgm"))?;
            observed.write_pgm(&out_dir.join("observed.pgm"))?;
            restored.write_pgm(&out_dir.join("restored.pgm"))?;
            let rms = |a: &[f64]| linalg::dist(a, &truth.pixels) / (a.len() as f64).sqrt();
            let (before, after) = (rms(&observed.pixels), rms(&restored.pixels));
            json!({
                "rms_error_observed": before,
                "rms_error_restored": after,
                "passed": after < before,
            })
        }
        "separation" => {
            let rep = demos::run_separation(demos::SEPARATION_ITERATIONS, fbf_core::ExecPolicy::Sequential)?;
            println!("separation: {}", rep.verdict);
            let ok = rep.verdict == "identical";
            let mut v = json!(rep);
            v["passed"] = json!(ok);
            v
        }
        _ => unreachable!("demo names are validated by the parser"),
    };
    write_json(&out_dir.join("demo_report.json"), &report)?;
    Ok(report["passed"].as_bool().unwrap_or(false))
}

fn cmd_demo(name: &str, out_dir: &Path) -> Result<u8> {
    let pf = demos::demo_problem(name)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("problem.json"), pf.to_json() + "\n")?;
    let o = solve_problem(&pf, out_dir)?;
    if !demo_check(name, &o, out_dir)? {
        eprintln!("error: demo '{name}' failed its reference check (see demo_report.json)");
        return Ok(1);
    }
    Ok(o.status.exit_code() as u8)
}

fn cmd_check(corrupt: bool) -> u8 {
    let results = checks::run_checks(corrupt);
    print!("{}", checks::format_report(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    u8::from(failed > 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve { file, out } => cmd_solve(&file, &out),
        Command::Demo { name, out } => cmd_demo(&name, &out),
        Command::Check { corrupt_adjoint } => Ok(cmd_check(corrupt_adjoint)),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
