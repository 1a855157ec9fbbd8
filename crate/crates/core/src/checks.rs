//! Fast self-check battery behind `fbf check`, plus the sample catalog
//! instances shared with the test suites.

use std::sync::Arc;

use serde_json::{json, Value};

use crate::error::Result;
use crate::exec::ExecPolicy;
use crate::imaging;
use crate::linalg::{self, DenseMatrix};
use crate::linop::{self, LinOp};
use crate::oracle;
use crate::prox::{self, ProxFunction, ResolventOp};
use crate::rng;
use crate::solver::{self, ErrorSchedule};
use crate::system::{self, SpaceLayout, SystemParts, SystemSpec};
use crate::{demos, prox::LipschitzCoupling};

pub const CHECK_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// One parameterization of every catalog entry on `R^dim` (`dim ≤ 3`).
pub fn catalog_samples(dim: usize) -> Vec<(String, ProxFunction)> {
    let w = [0.7, 1.3, 0.4];
    let row = [1.0, 2.0, -1.0];
    let t = [[1.2, 0.3, -0.2], [0.1, 0.9, 0.4], [-0.3, 0.2, 1.1]];
    let tr: Vec<Vec<f64>> = (0..dim).map(|i| t[i][..dim].to_vec()).collect();
    let params: Vec<(&str, Value)> = vec![
        ("l1", json!({ "weight": w[..dim].to_vec() })),
        ("group_l12", json!({ "weight": 0.8, "block_size": dim })),
        ("indicator_box", json!({ "lo": -0.5, "hi": 0.8 })),
        ("indicator_zero", Value::Null),
        ("indicator_affine", json!({ "E": [row[..dim].to_vec()], "d": [0.3] })),
        (
            "quadratic_fidelity",
            json!({ "terms": [{ "weight": 1.5, "op": tr, "r": vec![0.4; dim] }] }),
        ),
        ("zero_function", Value::Null),
        (
            "scaled_translated",
            json!({ "inner": { "prox": "l1", "params": { "weight": 1.0 } }, "offset": vec![0.2; dim], "scale": 1.5 }),
        ),
        (
            "quadratic_augmented",
            json!({ "inner": { "prox": "l1", "params": { "weight": 0.5 } }, "mu": 0.3 }),
        ),
    ];
    params
        .into_iter()
        .map(|(n, p)| (n.to_string(), prox::prox_catalog(n, &p, dim).expect("sample parameters are valid")))
        .collect()
}

fn check_adjoints(corrupt: bool) -> Result<CheckResult> {
    let mut ops: Vec<LinOp> = vec![
        imaging::gradient_op(6, 5)?,
        imaging::second_gradient_op(5, 6)?,
        imaging::haar_analysis_op(6, 4)?,
        imaging::box_blur_op(5, 5, 1)?,
        imaging::gaussian_blur_op(6, 5, 2, 1.0)?,
    ];
    let mut g = rng::stream(CHECK_SEED, 0xad);
    let dense = DenseMatrix::new(4, 3, rng::normal_vec(&mut g, 12))?;
    if corrupt {
        // transpose with one entry perturbed
        let d = dense.clone();
        let mut bad = dense.transpose();
        bad.set(0, 0, bad.get(0, 0) + 0.5);
        ops.push(LinOp::from_fns(3, 4, "corrupted", move |x| d.matvec(x), move |y| bad.matvec(y)));
    } else {
        ops.push(LinOp::dense(dense));
    }
    let mut worst = 0.0_f64;
    for op in &ops {
        worst = worst.max(linop::adjoint_check(op, 20, CHECK_SEED)?);
    }
    Ok(CheckResult::new("adjoint identities", worst <= 1e-12, format!("max defect {worst:.2e}")))
}

fn check_moreau() -> CheckResult {
    let mut worst = 0.0_f64;
    for dim in 1..=3 {
        for (_, f) in catalog_samples(dim) {
            let op = ResolventOp::from_prox(Arc::new(f));
            let mut g = rng::stream(CHECK_SEED, 0x30 + dim as u64);
            for gamma in [0.1, 1.0, 10.0] {
                let x: Vec<f64> = rng::normal_vec(&mut g, dim).iter().map(|v| 3.0 * v).collect();
                let j = op.resolve(gamma, &x);
                let xs: Vec<f64> = x.iter().map(|v| v / gamma).collect();
                let inv = prox::resolvent_of_inverse(&op, 1.0 / gamma, &xs).unwrap_or_else(|_| vec![f64::NAN; dim]);
                let sum: Vec<f64> = j.iter().zip(&inv).map(|(a, b)| a + gamma * b).collect();
                worst = worst.max(linalg::norm_inf(&linalg::sub(&sum, &x)));
            }
        }
    }
    CheckResult::new("moreau identity", worst <= 1e-12, format!("max defect {worst:.2e}"))
}

fn check_prox_grid() -> Result<CheckResult> {
    let mut worst = 0.0_f64;
    for dim in 1..=2 {
        for (name, f) in catalog_samples(dim) {
            if !matches!(name.as_str(), "l1" | "group_l12" | "indicator_box" | "quadratic_fidelity") {
                continue;
            }
            let x: Vec<f64> = (0..dim).map(|j| 1.1 - 0.9 * j as f64).collect();
            let gamma = 1.0;
            let p = f.prox(gamma, &x);
            let obj = |y: &[f64]| f.value(y) + 0.5 / gamma * linalg::dist(y, &x).powi(2);
            let lo: Vec<f64> = x.iter().map(|v| v - 4.0).collect();
            let hi: Vec<f64> = x.iter().map(|v| v + 4.0).collect();
            let (y, _) = oracle::grid_refine_minimize(obj, &lo, &hi, 6, ExecPolicy::Parallel)?;
            worst = worst.max(linalg::norm_inf(&linalg::sub(&y, &p)));
        }
    }
    Ok(CheckResult::new("prox vs grid oracle", worst <= 2e-3, format!("max argmin gap {worst:.2e}")))
}

fn check_beta() -> Result<CheckResult> {
    let dim = 1;
    let zf = || ResolventOp::from_prox(Arc::new(ProxFunction::ZeroFunction { dim }));
    let spec = SystemSpec::new(SystemParts {
        layout: SpaceLayout::new(vec![dim], vec![dim], vec![dim], vec![dim])?,
        z: vec![vec![0.0]],
        r: vec![vec![0.0]],
        a: vec![zf()],
        c: LipschitzCoupling::zero(vec![dim]),
        b: vec![zf()],
        d: vec![zf()],
        m_op: vec![LinOp::identity(dim)],
        n_op: vec![LinOp::identity(dim)],
        l_op: vec![vec![LinOp::identity(dim)]],
    });
    let b = system::compute_beta(&spec)?;
    let exact = 3.0_f64.sqrt();
    let ok = b >= exact * (1.0 - 1e-12) && b <= exact * 1.01 * (1.0 + 1e-12);
    Ok(CheckResult::new("beta arithmetic", ok, format!("beta {b:.12} vs sqrt(3) = {exact:.12}")))
}

fn check_fixed_point() -> Result<CheckResult> {
    let built = demos::lasso_problem(0.0).build()?;
    let (_, policy) = built.prepare()?;
    let gamma = policy.gamma_at(0);
    let st = demos::lift_consensus(&built.system, &demos::lasso_oracle(0.0));
    let res = system::fixed_point_residual(&built.system, &st, gamma)?;
    let (_, rec) = solver::step(&built.system, &st, gamma, &ErrorSchedule::zero())?;
    let ok = res <= 1e-10 && rec.transversality_defect <= 1e-10;
    Ok(CheckResult::new("lifted oracle is a fixed point", ok, format!("residual {res:.2e}")))
}

fn check_lasso_solve() -> Result<CheckResult> {
    let built = demos::lasso_problem(0.0).build()?;
    let (_, policy) = built.prepare()?;
    let out = solver::solve(&built.system, &built.init, &policy, &built.errors, &built.config.options())?;
    let err = linalg::norm_inf(&linalg::sub(&out.state.x1[0], &demos::lasso_oracle(0.0)));
    Ok(CheckResult::new(
        "lasso solve vs closed form",
        out.status == solver::Status::Converged && err <= 1e-6,
        format!("{} iterations, max error {err:.2e}", out.iterations),
    ))
}

/// Runs the battery; `corrupt_adjoint` swaps in a deliberately wrong
/// adjoint so the failure path can be exercised.
pub fn run_checks(corrupt_adjoint: bool) -> Vec<CheckResult> {
    let wrap = |name: &str, r: Result<CheckResult>| r.unwrap_or_else(|e| CheckResult::new(name, false, e.to_string()));
    vec![
        wrap("adjoint identities", check_adjoints(corrupt_adjoint)),
        check_moreau(),
        wrap("prox vs grid oracle", check_prox_grid()),
        wrap("beta arithmetic", check_beta()),
        wrap("lifted oracle is a fixed point", check_fixed_point()),
        wrap("lasso solve vs closed form", check_lasso_solve()),
    ]
}

pub fn format_report(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{:<4}  {:<width$}  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        ));
    }
    s
}
