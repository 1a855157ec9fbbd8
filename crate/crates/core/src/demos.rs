//! Fixed-seed demo instances: orthonormal LASSO, equality-constrained
//! quadratic program, multi-regularizer deblurring and the block
//! separation experiment.

use serde::Serialize;
use serde_json::{json, Value};

use crate::builders::OpDesc;
use crate::error::Result;
use crate::exec::ExecPolicy;
use crate::imaging::{self, App1Weights, ImageGrid};
use crate::linalg::{self, DenseMatrix};
use crate::oracle;
use crate::problem::{ProblemFile, ProblemKind, SolverConfig, DEFAULT_SEED};
use crate::prox::ProxEntry;
use crate::rng;
use crate::solver::{self, ErrorSchedule, IterateState};
use crate::system::{self, SpaceLayout, SystemSpec};

pub const DEMOS: &[&str] = &["lasso", "qp", "deblur", "separation"];

pub const LASSO_DIM: usize = 10;
pub const LASSO_LAMBDA: f64 = 0.5;
pub const QP_DIM: usize = 4;
pub const QP_CONSTRAINTS: usize = 2;
pub const DEBLUR_SIZE: usize = 16;
pub const DEBLUR_SIGMA: f64 = 0.01;
pub const DEBLUR_WEIGHTS: App1Weights = App1Weights {
    alpha: 0.02,
    beta: 0.02,
    gamma: 0.001,
};
pub const SEPARATION_ITERATIONS: usize = 300;

fn identity(dim: usize) -> OpDesc {
    OpDesc::builder("identity", json!({ "dim": dim }))
}

fn zero(rows: usize, cols: usize) -> OpDesc {
    OpDesc::builder("zero", json!({ "rows": rows, "cols": cols }))
}

fn entry(name: &str, params: Value) -> ProxEntry {
    ProxEntry::new(name, params)
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64, stream: u64) -> DenseMatrix {
    let mut g = rng::stream(seed, stream);
    DenseMatrix::new(rows, cols, rng::normal_vec(&mut g, rows * cols)).expect("sizes match")
}

/// Square matrix with orthonormal columns from Gram–Schmidt on a Gaussian
/// draw.
pub fn random_orthonormal(n: usize, seed: u64, stream: u64) -> DenseMatrix {
    let g = gaussian_matrix(n, n, seed, stream);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut c: Vec<f64> = (0..n).map(|i| g.get(i, j)).collect();
        for _ in 0..2 {
            for q in &cols {
                let p = linalg::dot(q, &c);
                linalg::axpy(-p, q, &mut c);
            }
        }
        let nc = linalg::norm(&c);
        c.iter_mut().for_each(|v| *v /= nc);
        cols.push(c);
    }
    let mut out = DenseMatrix::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            out.set(i, j, *v);
        }
    }
    out
}

fn fidelity(op: OpDesc, target: &[f64], weight: f64) -> Value {
    json!({ "terms": [{ "weight": weight, "op": op, "r": target }] })
}

/// Single-block minimization with `L = M = N = Id`, `g = 0`, `ℓ = ι_{0}`:
/// the infimal-convolution term vanishes and the problem is
/// `min f(x) + φ(x)`.
fn consensus_problem(dim: usize, f: ProxEntry, smooth: Value) -> ProblemFile {
    ProblemFile {
        version: 1,
        kind: ProblemKind::Minimization,
        layout: SpaceLayout {
            h_dims: vec![dim],
            g_dims: vec![dim],
            y_dims: vec![dim],
            x_dims: vec![dim],
        },
        z: None,
        r: None,
        l: vec![vec![identity(dim)]],
        m: vec![identity(dim)],
        n: vec![identity(dim)],
        f: Some(vec![f]),
        smooth: Some(crate::problem::SmoothEntry {
            builder: "quadratic_fidelity".into(),
            params: smooth,
        }),
        g: Some(vec![entry("zero_function", Value::Null)]),
        ell: Some(vec![entry("indicator_zero", Value::Null)]),
        a: None,
        b: None,
        d: None,
        coupling: None,
        solver: SolverConfig::default(),
        errors: Default::default(),
        init: None,
    }
}

/// Orthonormal-design LASSO data `(T, b)`.
pub fn lasso_data() -> (DenseMatrix, Vec<f64>) {
    let t = random_orthonormal(LASSO_DIM, DEFAULT_SEED, 0x1a55);
    let mut g = rng::stream(DEFAULT_SEED, 0x1a56);
    let b = rng::normal_vec(&mut g, LASSO_DIM);
    (t, b)
}

/// `min λ‖x‖₁ + μ‖x‖² + ½‖Tx − b‖²`; `mu = 0` is the plain LASSO.
pub fn lasso_problem(mu: f64) -> ProblemFile {
    let (t, b) = lasso_data();
    let l1 = entry("l1", json!({ "weight": LASSO_LAMBDA }));
    let f = if mu > 0.0 {
        entry("quadratic_augmented", json!({ "inner": l1, "mu": mu }))
    } else {
        l1
    };
    consensus_problem(LASSO_DIM, f, fidelity(OpDesc::dense(&t), &b, 1.0))
}

pub fn lasso_oracle(mu: f64) -> Vec<f64> {
    let (t, b) = lasso_data();
    oracle::lasso_orthonormal(&t, &b, LASSO_LAMBDA, mu)
}

/// `(T, b, E, d)` of the equality-constrained least-squares demo.
pub fn qp_data() -> (DenseMatrix, Vec<f64>, DenseMatrix, Vec<f64>) {
    let mut t = gaussian_matrix(QP_DIM + 2, QP_DIM, DEFAULT_SEED, 0x9b01);
    t.data.iter_mut().for_each(|v| *v *= 0.4);
    let e = gaussian_matrix(QP_CONSTRAINTS, QP_DIM, DEFAULT_SEED, 0x9b02);
    let mut g = rng::stream(DEFAULT_SEED, 0x9b03);
    let b = rng::normal_vec(&mut g, QP_DIM + 2);
    let d = rng::normal_vec(&mut g, QP_CONSTRAINTS);
    (t, b, e, d)
}

/// `min ½‖Tx − b‖² s.t. Ex = d`.
pub fn qp_problem() -> ProblemFile {
    let (t, b, e, d) = qp_data();
    let f = entry("indicator_affine", json!({ "E": e.to_rows(), "d": d }));
    consensus_problem(QP_DIM, f, fidelity(OpDesc::dense(&t), &b, 1.0))
}

/// Dense KKT reference with `Q = TᵀT`, `c = −Tᵀb`.
pub fn qp_oracle() -> Result<Vec<f64>> {
    let (t, b, e, d) = qp_data();
    let q = t.transpose().matmul(&t)?;
    let c: Vec<f64> = t.tmatvec(&b).iter().map(|v| -v).collect();
    oracle::kkt_quadratic_solve(&q, &c, &e, &d)
}

/// Lifts a primal solution of a consensus demo to the iterate
/// `(x̄, x̄ − r, 0, 0)`: with `g = 0` the second dual block is 0 and the
/// transversality relation forces the first one to 0 as well.
pub fn lift_consensus(spec: &SystemSpec, xbar: &[f64]) -> IterateState {
    let mut st = IterateState::zeros(&spec.layout);
    st.x1[0] = xbar.to_vec();
    st.x2[0] = linalg::sub(xbar, &spec.r[0]);
    st
}

/// Ground truth and blurred noisy observation of the deblurring demo.
pub fn deblur_data() -> Result<(ImageGrid, ImageGrid)> {
    let n = DEBLUR_SIZE;
    let truth = ImageGrid::phantom(n, n);
    let blur = imaging::box_blur_op(n, n, 1)?;
    let obs = imaging::ObservationSet::synthesize(&truth, vec![blur], vec![1.0], DEBLUR_SIGMA, DEFAULT_SEED)?;
    let observed = ImageGrid::new(n, n, obs.observations[0].clone())?;
    Ok((truth, observed))
}

/// Problem-file form of the deblurring instance built by
/// [`imaging::build_app1_instance`].
pub fn app1_problem(height: usize, width: usize, blur: OpDesc, observation: &[f64], weights: App1Weights, box_bounds: (f64, f64)) -> ProblemFile {
    let k = height * width;
    let grid = json!({ "height": height, "width": width });
    ProblemFile {
        version: 1,
        kind: ProblemKind::Minimization,
        layout: SpaceLayout {
            h_dims: vec![k],
            g_dims: vec![k, k],
            y_dims: vec![2 * k, k],
            x_dims: vec![4 * k, k],
        },
        z: None,
        r: None,
        l: vec![vec![identity(k)], vec![identity(k)]],
        m: vec![OpDesc::builder("gradient", grid.clone()), OpDesc::builder("haar", grid.clone())],
        n: vec![OpDesc::builder("second_gradient", grid), identity(k)],
        f: Some(vec![entry("indicator_box", json!({ "lo": box_bounds.0, "hi": box_bounds.1 }))]),
        smooth: Some(crate::problem::SmoothEntry {
            builder: "quadratic_fidelity".into(),
            params: fidelity(blur, observation, 1.0),
        }),
        g: Some(vec![
            entry("group_l12", json!({ "weight": weights.alpha, "channels": 2 })),
            entry("l1", json!({ "weight": weights.gamma })),
        ]),
        ell: Some(vec![
            entry("group_l12", json!({ "weight": weights.beta, "channels": 4 })),
            entry("indicator_zero", Value::Null),
        ]),
        a: None,
        b: None,
        d: None,
        coupling: None,
        solver: SolverConfig {
            max_iter: 20_000,
            tol: 1e-6,
            trace_every: 10,
            ..SolverConfig::default()
        },
        errors: Default::default(),
        init: None,
    }
}

pub fn deblur_problem() -> Result<ProblemFile> {
    let (_, observed) = deblur_data()?;
    let n = DEBLUR_SIZE;
    let blur = OpDesc::builder("box_blur", json!({ "height": n, "width": n, "radius": 1 }));
    Ok(app1_problem(n, n, blur, &observed.pixels, DEBLUR_WEIGHTS, (0.0, 1.0)))
}

/// The three systems of the separation experiment: the full system with
/// every `L_{k,i} = 0`, its primal part (plus one inert coupled block) and
/// its dual part (over an inert one-dimensional primal space).
pub struct SeparationProblems {
    pub full: ProblemFile,
    pub primal_only: ProblemFile,
    pub dual_only: ProblemFile,
}

pub fn separation_problems() -> SeparationProblems {
    let seed = DEFAULT_SEED;
    let h = [3usize, 2];
    let gd = 4usize;
    let s = 2;
    let total: usize = h.iter().sum();
    let mut t = gaussian_matrix(total + 1, total, seed, 0x5e01);
    // keeps ν₀ comparable to the operator norms, so β stays small
    t.data.iter_mut().for_each(|v| *v *= 0.3);
    let mut g = rng::stream(seed, 0x5e02);
    let obs = rng::normal_vec(&mut g, total + 1);
    let r: Vec<Vec<f64>> = (0..s).map(|_| rng::normal_vec(&mut g, gd)).collect();
    let well_conditioned = |stream: u64| {
        let mut a = gaussian_matrix(gd, gd, seed, stream);
        a.data.iter_mut().for_each(|v| *v *= 0.3);
        for i in 0..gd {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        OpDesc::dense(&a)
    };
    let m_ops: Vec<OpDesc> = (0..s).map(|k| well_conditioned(0x5e10 + k as u64)).collect();
    let n_ops: Vec<OpDesc> = (0..s).map(|k| well_conditioned(0x5e20 + k as u64)).collect();
    let f = vec![
        entry("l1", json!({ "weight": 0.3 })),
        entry("indicator_box", json!({ "lo": -1.0, "hi": 1.0 })),
    ];
    let g_k: Vec<ProxEntry> = (0..s).map(|_| entry("l1", json!({ "weight": 0.5 }))).collect();
    let ell_k: Vec<ProxEntry> = (0..s)
        .map(|_| {
            entry(
                "quadratic_fidelity",
                fidelity(identity(gd), &vec![0.0; gd], 1.0),
            )
        })
        .collect();
    let smooth = crate::problem::SmoothEntry {
        builder: "quadratic_fidelity".into(),
        params: fidelity(OpDesc::dense(&t), &obs, 1.0),
    };
    let base = ProblemFile {
        version: 1,
        kind: ProblemKind::Minimization,
        layout: SpaceLayout {
            h_dims: h.to_vec(),
            g_dims: vec![gd; s],
            y_dims: vec![gd; s],
            x_dims: vec![gd; s],
        },
        z: Some(vec![vec![0.1, -0.2, 0.05], vec![0.0, 0.3]]),
        r: Some(r.clone()),
        l: (0..s).map(|_| h.iter().map(|&hi| zero(gd, hi)).collect()).collect(),
        m: m_ops.clone(),
        n: n_ops.clone(),
        f: Some(f.clone()),
        smooth: Some(smooth.clone()),
        g: Some(g_k.clone()),
        ell: Some(ell_k.clone()),
        a: None,
        b: None,
        d: None,
        coupling: None,
        solver: SolverConfig::default(),
        errors: Default::default(),
        init: None,
    };
    let primal_only = ProblemFile {
        layout: SpaceLayout {
            h_dims: h.to_vec(),
            g_dims: vec![1],
            y_dims: vec![1],
            x_dims: vec![1],
        },
        r: Some(vec![vec![0.0]]),
        l: vec![h.iter().map(|&hi| zero(1, hi)).collect()],
        m: vec![zero(1, 1)],
        n: vec![zero(1, 1)],
        g: Some(vec![entry("zero_function", Value::Null)]),
        ell: Some(vec![entry("zero_function", Value::Null)]),
        ..base.clone()
    };
    let dual_only = ProblemFile {
        layout: SpaceLayout {
            h_dims: vec![1],
            g_dims: vec![gd; s],
            y_dims: vec![gd; s],
            x_dims: vec![gd; s],
        },
        z: Some(vec![vec![0.0]]),
        l: (0..s).map(|_| vec![zero(gd, 1)]).collect(),
        f: Some(vec![entry("zero_function", Value::Null)]),
        smooth: None,
        ..base.clone()
    };
    SeparationProblems {
        full: base,
        primal_only,
        dual_only,
    }
}

/// Outcome of one separation comparison.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SeparationCase {
    pub errors: String,
    pub iterations: usize,
    pub primal_identical: bool,
    pub dual_identical: bool,
    /// first iteration where a block differed
    pub first_mismatch: Option<usize>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SeparationReport {
    pub verdict: String,
    pub gamma: f64,
    pub cases: Vec<SeparationCase>,
}

fn bits(blocks: &[Vec<f64>]) -> Vec<u64> {
    blocks.iter().flatten().map(|v| v.to_bits()).collect()
}

/// Runs the three systems side by side with one step size and compares
/// the block trajectories bit for bit, without and with injected errors.
pub fn run_separation(iterations: usize, exec: ExecPolicy) -> Result<SeparationReport> {
    let p = separation_problems();
    let full = p.full.build()?;
    let primal = p.primal_only.build()?;
    let dual = p.dual_only.build()?;
    let (_, policy) = full.prepare()?;
    let gamma = policy.gamma_at(0);
    // the same γ must be admissible for the parts as well
    for part in [&primal, &dual] {
        let beta = system::compute_beta(&part.system)?;
        solver::make_policy(beta, policy.epsilon, Some(gamma))?;
        system::ensure_valid(&part.system)?;
    }
    let schedules = [
        ErrorSchedule::zero(),
        ErrorSchedule::geometric(0.9, 0.1, p.full.solver.seed)?,
    ];
    let mut cases = Vec::new();
    for errors in schedules {
        let (mut a, mut b, mut c) = (full.init.clone(), primal.init.clone(), dual.init.clone());
        let mut case = SeparationCase {
            errors: errors.description().to_string(),
            iterations,
            primal_identical: true,
            dual_identical: true,
            first_mismatch: None,
        };
        for n in 0..iterations {
            a = solver::step_with(&full.system, &a, gamma, &errors, exec)?.0;
            b = solver::step_with(&primal.system, &b, gamma, &errors, exec)?.0;
            c = solver::step_with(&dual.system, &c, gamma, &errors, exec)?.0;
            let p_ok = bits(&a.x1) == bits(&b.x1);
            let d_ok = bits(&a.x2) == bits(&c.x2) && bits(&a.v1) == bits(&c.v1) && bits(&a.v2) == bits(&c.v2);
            if !(p_ok && d_ok) && case.first_mismatch.is_none() {
                case.first_mismatch = Some(n);
            }
            case.primal_identical &= p_ok;
            case.dual_identical &= d_ok;
        }
        cases.push(case);
    }
    let all = cases.iter().all(|c| c.primal_identical && c.dual_identical);
    Ok(SeparationReport {
        verdict: if all { "identical" } else { "different" }.into(),
        gamma,
        cases,
    })
}

pub fn demo_problem(name: &str) -> Result<ProblemFile> {
    match name {
        "lasso" => Ok(lasso_problem(0.0)),
        "qp" => Ok(qp_problem()),
        "deblur" => deblur_problem(),
        "separation" => Ok(separation_problems().full),
        other => Err(crate::error::FbfError::Config(format!(
            "unknown demo '{other}' (known: {})",
            DEMOS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_design() {
        let t = random_orthonormal(6, 1, 2);
        let g = t.transpose().matmul(&t).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn lifted_lasso_oracle_is_a_fixed_point() {
        let built = lasso_problem(0.0).build().unwrap();
        let (_, policy) = built.prepare().unwrap();
        let st = lift_consensus(&built.system, &lasso_oracle(0.0));
        let res = system::fixed_point_residual(&built.system, &st, policy.gamma_at(0)).unwrap();
        assert!(res <= 1e-12, "{res}");
        let zero = IterateState::zeros(&built.system.layout);
        assert!(system::fixed_point_residual(&built.system, &zero, policy.gamma_at(0)).unwrap() > 1e-2);
    }
}
