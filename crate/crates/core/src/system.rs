//! Data model of the coupled inclusion system, validation, the step-size
//! constant β and solution extraction.

use std::ops::Deref;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{FbfError, Result};
use crate::linalg;
use crate::linop::{self, LinOp};
use crate::prox::{LipschitzCoupling, ResolventOp};
use crate::solver::{self, IterateState};

/// Tolerance used by [`validate`] for adjoint checks.
pub const VALIDATE_ADJOINT_TOL: f64 = 1e-8;
pub const VALIDATE_ADJOINT_TRIALS: usize = 10;
pub const VALIDATE_COUPLING_TRIALS: usize = 20;
pub const VALIDATE_SEED: u64 = 42;

/// Dimensions of the spaces `H_i` (primal), `G_k` (auxiliary), `Y_k` and
/// `X_k` (the two dual families).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceLayout {
    pub h_dims: Vec<usize>,
    pub g_dims: Vec<usize>,
    pub y_dims: Vec<usize>,
    pub x_dims: Vec<usize>,
}

impl SpaceLayout {
    pub fn new(h_dims: Vec<usize>, g_dims: Vec<usize>, y_dims: Vec<usize>, x_dims: Vec<usize>) -> Result<Self> {
        let l = Self {
            h_dims,
            g_dims,
            y_dims,
            x_dims,
        };
        let bad = l.check();
        if let Some(v) = bad.first() {
            return Err(FbfError::Spec(v.to_string()));
        }
        Ok(l)
    }

    pub fn m(&self) -> usize {
        self.h_dims.len()
    }

    pub fn s(&self) -> usize {
        self.g_dims.len()
    }

    fn check(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.h_dims.is_empty() {
            out.push(Violation::new("layout/h_dims", "need m >= 1 primal spaces"));
        }
        if self.g_dims.is_empty() {
            out.push(Violation::new("layout/g_dims", "need s >= 1 coupled blocks"));
        }
        for (name, dims) in [("y_dims", &self.y_dims), ("x_dims", &self.x_dims)] {
            if dims.len() != self.g_dims.len() {
                out.push(Violation::new(
                    &format!("layout/{name}"),
                    &format!("expected {} entries, got {}", self.g_dims.len(), dims.len()),
                ));
            }
        }
        for (name, dims) in [
            ("h_dims", &self.h_dims),
            ("g_dims", &self.g_dims),
            ("y_dims", &self.y_dims),
            ("x_dims", &self.x_dims),
        ] {
            if let Some(j) = dims.iter().position(|&d| d == 0) {
                out.push(Violation::new(&format!("layout/{name}/{j}"), "dimension must be >= 1"));
            }
        }
        out
    }
}

/// One failed validation check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: &str, message: &str) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// The operator data of the system, indexed `i` over primal blocks and `k`
/// over coupled blocks; `l_op[k][i]: H_i → G_k`.
#[derive(Debug, Clone)]
pub struct SystemParts {
    pub layout: SpaceLayout,
    pub z: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub a: Vec<ResolventOp>,
    pub c: LipschitzCoupling,
    pub b: Vec<ResolventOp>,
    pub d: Vec<ResolventOp>,
    pub m_op: Vec<LinOp>,
    pub n_op: Vec<LinOp>,
    pub l_op: Vec<Vec<LinOp>>,
}

/// Immutable system; read access to the parts goes through `Deref`.
#[derive(Debug)]
pub struct SystemSpec {
    parts: SystemParts,
    raw_beta: OnceLock<std::result::Result<f64, FbfError>>,
    nr: OnceLock<Vec<Vec<f64>>>,
}

impl Clone for SystemSpec {
    fn clone(&self) -> Self {
        Self::new(self.parts.clone())
    }
}

impl Deref for SystemSpec {
    type Target = SystemParts;
    fn deref(&self) -> &SystemParts {
        &self.parts
    }
}

impl SystemSpec {
    pub fn new(parts: SystemParts) -> Self {
        Self {
            parts,
            raw_beta: OnceLock::new(),
            nr: OnceLock::new(),
        }
    }

    pub fn parts(&self) -> &SystemParts {
        &self.parts
    }

    pub fn into_parts(self) -> SystemParts {
        self.parts
    }

    /// β without the positivity requirement; cached after the first call.
    pub fn raw_beta(&self) -> Result<f64> {
        self.raw_beta.get_or_init(|| beta_formula(self)).clone()
    }

    /// `N_k r_k` per k; constant across iterations, cached.
    pub fn shifted_r(&self) -> &[Vec<f64>] {
        self.nr
            .get_or_init(|| (0..self.layout.s()).map(|k| self.n_op[k].apply(&self.r[k])).collect())
    }

    /// Total coordinates of the iterate `(x1, x2, v1, v2)`.
    pub fn state_dim(&self) -> usize {
        let l = &self.layout;
        l.h_dims.iter().sum::<usize>() + l.g_dims.iter().sum::<usize>() + l.y_dims.iter().sum::<usize>() + l.x_dims.iter().sum::<usize>()
    }
}

/// A primal–dual pair: `xbar[i] ∈ H_i`, `vbar[k] ∈ G_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPair {
    pub xbar: Vec<Vec<f64>>,
    pub vbar: Vec<Vec<f64>>,
}

fn beta_formula(spec: &SystemSpec) -> Result<f64> {
    let mut coupled = 0.0;
    for k in 0..spec.layout.s() {
        for i in 0..spec.layout.m() {
            let nl = linop::compose(&spec.n_op[k], &spec.l_op[k][i])?;
            let ub = linop::operator_norm_default(&nl)?.upper_bound;
            coupled += ub * ub;
        }
    }
    let mut worst = 0.0_f64;
    for k in 0..spec.layout.s() {
        let n = linop::operator_norm_default(&spec.n_op[k])?.upper_bound;
        let m = linop::operator_norm_default(&spec.m_op[k])?.upper_bound;
        worst = worst.max(n * n + m * m);
    }
    Ok(spec.c.nu0 + (coupled + worst).sqrt())
}

/// `β = ν₀ + √(Σ_{i,k} ‖N_k L_{k,i}‖² + max_k(‖N_k‖² + ‖M_k‖²))` from
/// inflated power-iteration norm bounds.
pub fn compute_beta(spec: &SystemSpec) -> Result<f64> {
    let beta = spec.raw_beta()?;
    if !(beta > 0.0) {
        return Err(FbfError::Hypothesis(format!("beta must be > 0, got {beta}")));
    }
    Ok(beta)
}

fn dim_violation(out: &mut Vec<Violation>, path: &str, what: &str, expected: usize, got: usize) {
    if expected != got {
        out.push(Violation::new(path, &format!("{what}: expected {expected}, got {got}")));
    }
}

fn op_violation(out: &mut Vec<Violation>, path: &str, op: &LinOp, from: (&str, usize), to: (&str, usize)) {
    if op.in_dim() != from.1 || op.out_dim() != to.1 {
        out.push(Violation::new(
            path,
            &format!(
                "operator must map {} (dim {}) to {} (dim {}), got {} -> {}",
                from.0,
                from.1,
                to.0,
                to.1,
                op.in_dim(),
                op.out_dim()
            ),
        ));
    }
}

/// All structural and stochastic checks; empty iff the system is usable.
pub fn validate(spec: &SystemSpec) -> Vec<Violation> {
    let l = &spec.layout;
    let mut out = l.check();
    if !out.is_empty() {
        return out;
    }
    let (m, s) = (l.m(), l.s());
    let counts = [
        ("z", spec.z.len(), m),
        ("r", spec.r.len(), s),
        ("A", spec.a.len(), m),
        ("B", spec.b.len(), s),
        ("D", spec.d.len(), s),
        ("M", spec.m_op.len(), s),
        ("N", spec.n_op.len(), s),
        ("L", spec.l_op.len(), s),
    ];
    for (name, got, want) in counts {
        dim_violation(&mut out, name, "number of blocks", want, got);
    }
    for (k, row) in spec.l_op.iter().enumerate() {
        dim_violation(&mut out, &format!("L/{k}"), "number of blocks", m, row.len());
    }
    if !out.is_empty() {
        return out;
    }
    for i in 0..m {
        dim_violation(&mut out, &format!("z/{i}"), "length", l.h_dims[i], spec.z[i].len());
        dim_violation(&mut out, &format!("A/{i}"), "resolvent dimension", l.h_dims[i], spec.a[i].dim());
    }
    for k in 0..s {
        dim_violation(&mut out, &format!("r/{k}"), "length", l.g_dims[k], spec.r[k].len());
        dim_violation(&mut out, &format!("B/{k}"), "resolvent dimension", l.y_dims[k], spec.b[k].dim());
        dim_violation(&mut out, &format!("D/{k}"), "resolvent dimension", l.x_dims[k], spec.d[k].dim());
        op_violation(&mut out, &format!("M/{k}"), &spec.m_op[k], (&format!("G_{k}"), l.g_dims[k]), (&format!("Y_{k}"), l.y_dims[k]));
        op_violation(&mut out, &format!("N/{k}"), &spec.n_op[k], (&format!("G_{k}"), l.g_dims[k]), (&format!("X_{k}"), l.x_dims[k]));
        for i in 0..m {
            op_violation(
                &mut out,
                &format!("L/{k}/{i}"),
                &spec.l_op[k][i],
                (&format!("H_{i}"), l.h_dims[i]),
                (&format!("G_{k}"), l.g_dims[k]),
            );
        }
    }
    if spec.c.block_dims != l.h_dims {
        out.push(Violation::new(
            "coupling",
            &format!("block dims {:?} do not match H dims {:?}", spec.c.block_dims, l.h_dims),
        ));
    }
    if !spec.c.nu0.is_finite() || spec.c.nu0 < 0.0 {
        out.push(Violation::new("coupling/nu0", &format!("must be finite and >= 0, got {}", spec.c.nu0)));
    }
    for v in spec.z.iter().chain(&spec.r) {
        if !linalg::all_finite(v) {
            out.push(Violation::new("z|r", "offsets must be finite"));
            break;
        }
    }
    if !out.is_empty() {
        return out;
    }

    let mut ops: Vec<(String, &LinOp)> = Vec::new();
    for k in 0..s {
        ops.push((format!("M/{k}"), &spec.m_op[k]));
        ops.push((format!("N/{k}"), &spec.n_op[k]));
        for i in 0..m {
            ops.push((format!("L/{k}/{i}"), &spec.l_op[k][i]));
        }
    }
    for (path, op) in ops {
        match linop::adjoint_check(op, VALIDATE_ADJOINT_TRIALS, VALIDATE_SEED) {
            Ok(d) if d <= VALIDATE_ADJOINT_TOL => {}
            Ok(d) => out.push(Violation::new(&path, &format!("adjoint defect {d:.3e} exceeds {VALIDATE_ADJOINT_TOL:e}"))),
            Err(e) => out.push(Violation::new(&path, &e.to_string())),
        }
    }
    if !spec.c.is_zero() {
        let ratio = spec.c.lipschitz_ratio(VALIDATE_COUPLING_TRIALS, VALIDATE_SEED);
        if ratio > spec.c.nu0 * (1.0 + 1e-9) + 1e-10 {
            out.push(Violation::new(
                "coupling/nu0",
                &format!("observed Lipschitz ratio {ratio:.6} exceeds nu0 = {}", spec.c.nu0),
            ));
        }
        let margin = spec.c.monotonicity_margin(VALIDATE_COUPLING_TRIALS, VALIDATE_SEED);
        if margin < -1e-10 {
            out.push(Violation::new("coupling", &format!("not monotone: <Cx - Cy, x - y> = {margin:.3e}")));
        }
    }
    match compute_beta(spec) {
        Ok(_) => {}
        Err(e) => out.push(Violation::new("beta", &e.to_string())),
    }
    out
}

/// Joins violations into one `Spec` error, or `Ok` when empty.
pub fn ensure_valid(spec: &SystemSpec) -> Result<()> {
    let v = validate(spec);
    if v.is_empty() {
        return Ok(());
    }
    let msg: Vec<String> = v.iter().map(|v| v.to_string()).collect();
    Err(FbfError::Spec(msg.join("; ")))
}

/// Norm of the displacement produced by one exact iteration from `state`.
/// Zero exactly at the fixed points of the iteration.
pub fn fixed_point_residual(spec: &SystemSpec, state: &IterateState, gamma: f64) -> Result<f64> {
    let (_, rec) = solver::step(spec, state, gamma, &solver::ErrorSchedule::zero())?;
    Ok(rec.displacement)
}

/// `xbar = x1`, `vbar_k = N_k* v1_k`.
pub fn extract_solution(state: &IterateState, spec: &SystemSpec) -> SolutionPair {
    SolutionPair {
        xbar: state.x1.clone(),
        vbar: spec.n_op.iter().zip(&state.v1).map(|(n, v)| n.adjoint(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::ProxFunction;
    use std::sync::Arc;

    pub(crate) fn identity_system(dim: usize, nu0: f64) -> SystemSpec {
        let layout = SpaceLayout::new(vec![dim], vec![dim], vec![dim], vec![dim]).unwrap();
        let zf = || ResolventOp::from_prox(Arc::new(ProxFunction::ZeroFunction { dim }));
        let c = if nu0 > 0.0 {
            crate::prox::gradient_coupling(move |x| x.iter().map(|v| nu0 * v).collect(), nu0, vec![dim]).unwrap()
        } else {
            LipschitzCoupling::zero(vec![dim])
        };
        SystemSpec::new(SystemParts {
            layout,
            z: vec![vec![0.0; dim]],
            r: vec![vec![0.0; dim]],
            a: vec![zf()],
            c,
            b: vec![zf()],
            d: vec![zf()],
            m_op: vec![LinOp::identity(dim)],
            n_op: vec![LinOp::identity(dim)],
            l_op: vec![vec![LinOp::identity(dim)]],
        })
    }

    #[test]
    fn beta_of_identities() {
        let b = compute_beta(&identity_system(1, 0.0)).unwrap();
        let exact = 3.0_f64.sqrt();
        assert!(b >= exact - 1e-12 && b <= exact * 1.01 + 1e-12, "{b}");
        let b2 = compute_beta(&identity_system(1, 2.0)).unwrap();
        assert!(b2 >= 2.0 + exact - 1e-12 && b2 <= 2.0 + exact * 1.01 + 1e-12, "{b2}");
    }

    #[test]
    fn beta_zero_is_rejected() {
        let mut p = identity_system(2, 0.0).into_parts();
        p.m_op = vec![LinOp::zero(2, 2)];
        p.n_op = vec![LinOp::zero(2, 2)];
        p.l_op = vec![vec![LinOp::zero(2, 2)]];
        let spec = SystemSpec::new(p);
        assert!(matches!(compute_beta(&spec), Err(FbfError::Hypothesis(_))));
        assert_eq!(spec.raw_beta().unwrap(), 0.0);
    }

    #[test]
    fn valid_identity_system_has_no_violations() {
        assert!(validate(&identity_system(3, 1.0)).is_empty());
    }

    #[test]
    fn transposed_l_block_is_named() {
        let mut p = identity_system(2, 0.0).into_parts();
        p.layout = SpaceLayout::new(vec![3], vec![2], vec![2], vec![2]).unwrap();
        p.z = vec![vec![0.0; 3]];
        p.a = vec![ResolventOp::from_prox(Arc::new(ProxFunction::ZeroFunction { dim: 3 }))];
        p.c = LipschitzCoupling::zero(vec![3]);
        p.l_op = vec![vec![LinOp::dense(crate::linalg::DenseMatrix::zeros(3, 2))]];
        let v = validate(&SystemSpec::new(p));
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].path, "L/0/0");
    }

    #[test]
    fn false_lipschitz_constant_is_reported() {
        let mut p = identity_system(3, 0.0).into_parts();
        let mut c = crate::prox::gradient_coupling(|x| x.to_vec(), 0.1, vec![3]).unwrap();
        c.nu0 = 0.1;
        p.c = c;
        let v = validate(&SystemSpec::new(p));
        assert!(v.iter().any(|v| v.path == "coupling/nu0"), "{v:?}");
    }

    #[test]
    fn extract_solution_applies_adjoint() {
        let mut p = identity_system(1, 0.0).into_parts();
        p.n_op = vec![LinOp::scaled(2.0, LinOp::identity(1))];
        let spec = SystemSpec::new(p);
        let mut st = IterateState::zeros(&spec.layout);
        st.v1 = vec![vec![3.0]];
        assert_eq!(extract_solution(&st, &spec).vbar, vec![vec![6.0]]);
    }
}
