//! The forward-backward-forward iteration, step-size policy, error
//! injection, traces and the solve driver.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FbfError, Result};
use crate::exec::ExecPolicy;
use crate::linalg;
use crate::rng;
use crate::system::{self, SpaceLayout, SystemSpec};

/// Default stopping tolerance on the full-state displacement.
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// `(x1, x2, v1, v2)` with `x1[i] ∈ H_i`, `x2[k] ∈ G_k`, `v1[k] ∈ X_k`,
/// `v2[k] ∈ Y_k`, and the iteration counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub x1: Vec<Vec<f64>>,
    pub x2: Vec<Vec<f64>>,
    pub v1: Vec<Vec<f64>>,
    pub v2: Vec<Vec<f64>>,
    pub n: usize,
}

impl IterateState {
    pub fn zeros(layout: &SpaceLayout) -> Self {
        let z = |d: &[usize]| d.iter().map(|&n| vec![0.0; n]).collect();
        Self {
            x1: z(&layout.h_dims),
            x2: z(&layout.g_dims),
            v1: z(&layout.x_dims),
            v2: z(&layout.y_dims),
            n: 0,
        }
    }

    pub fn check_dims(&self, layout: &SpaceLayout) -> Result<()> {
        let fam = [
            ("x1", &self.x1, &layout.h_dims),
            ("x2", &self.x2, &layout.g_dims),
            ("v1", &self.v1, &layout.x_dims),
            ("v2", &self.v2, &layout.y_dims),
        ];
        for (name, blocks, dims) in fam {
            let lens: Vec<usize> = blocks.iter().map(|b| b.len()).collect();
            if &lens != dims {
                return Err(FbfError::Spec(format!("state {name} has block lengths {lens:?}, layout needs {dims:?}")));
            }
        }
        Ok(())
    }

    /// Euclidean distance over all blocks.
    pub fn distance(&self, other: &IterateState) -> f64 {
        let mut s = 0.0;
        for (a, b) in [(&self.x1, &other.x1), (&self.x2, &other.x2), (&self.v1, &other.v1), (&self.v2, &other.v2)] {
            s += sq_dist_blocks(a, b);
        }
        s.sqrt()
    }
}

fn sq_dist_blocks(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Constant(f64),
    /// `γ_n = seq[n]`, repeating the last entry once exhausted.
    Sequence(Vec<f64>),
}

/// Step sizes `γ_n ∈ [ε, (1−ε)/β]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub epsilon: f64,
    pub beta: f64,
    pub rule: StepRule,
}

impl StepPolicy {
    pub fn gamma_at(&self, n: usize) -> f64 {
        match &self.rule {
            StepRule::Constant(g) => *g,
            StepRule::Sequence(s) => s[n.min(s.len() - 1)],
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.epsilon, (1.0 - self.epsilon) / self.beta)
    }

    /// Re-checks every invariant; used before iteration 0.
    pub fn check(&self) -> Result<()> {
        check_epsilon(self.beta, self.epsilon)?;
        let gammas: Vec<f64> = match &self.rule {
            StepRule::Constant(g) => vec![*g],
            StepRule::Sequence(s) if s.is_empty() => {
                return Err(FbfError::Config("step sequence must not be empty".into()));
            }
            StepRule::Sequence(s) => s.clone(),
        };
        for g in gammas {
            check_gamma(self.beta, self.epsilon, g)?;
        }
        Ok(())
    }
}

/// `min(0.01, 0.5/(β+1))`
pub fn default_epsilon(beta: f64) -> f64 {
    0.01_f64.min(0.5 / (beta + 1.0))
}

fn check_epsilon(beta: f64, epsilon: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(FbfError::Config(format!("beta must be finite and > 0, got {beta}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0 / (beta + 1.0)) {
        return Err(FbfError::Config(format!(
            "epsilon = {epsilon} outside (0, 1/(beta+1)) = (0, {})",
            1.0 / (beta + 1.0)
        )));
    }
    Ok(())
}

fn check_gamma(beta: f64, epsilon: f64, gamma: f64) -> Result<()> {
    let (lo, hi) = (epsilon, (1.0 - epsilon) / beta);
    if !(gamma >= lo && gamma <= hi) {
        return Err(FbfError::StepBound {
            gamma,
            lower: lo,
            upper: hi,
        });
    }
    Ok(())
}

/// Constant-step policy; `γ ≡ (1−ε)/β` unless `gamma_const` is given.
pub fn make_policy(beta: f64, epsilon: f64, gamma_const: Option<f64>) -> Result<StepPolicy> {
    check_epsilon(beta, epsilon)?;
    let gamma = gamma_const.unwrap_or((1.0 - epsilon) / beta);
    check_gamma(beta, epsilon, gamma)?;
    Ok(StepPolicy {
        epsilon,
        beta,
        rule: StepRule::Constant(gamma),
    })
}

pub fn make_sequence_policy(beta: f64, epsilon: f64, gammas: Vec<f64>) -> Result<StepPolicy> {
    let p = StepPolicy {
        epsilon,
        beta,
        rule: StepRule::Sequence(gammas),
    };
    p.check()?;
    Ok(p)
}

/// Where an error term enters the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorSite {
    A11(usize),
    B11(usize),
    C11(usize),
    A12(usize),
    C12(usize),
    A21(usize),
    B21(usize),
    C21(usize),
    A22(usize),
    B22(usize),
    C22(usize),
}

impl ErrorSite {
    fn code(self) -> (u64, usize) {
        match self {
            ErrorSite::A11(b) => (0, b),
            ErrorSite::B11(b) => (1, b),
            ErrorSite::C11(b) => (2, b),
            ErrorSite::A12(b) => (3, b),
            ErrorSite::C12(b) => (4, b),
            ErrorSite::A21(b) => (5, b),
            ErrorSite::B21(b) => (6, b),
            ErrorSite::C21(b) => (7, b),
            ErrorSite::A22(b) => (8, b),
            ErrorSite::B22(b) => (9, b),
            ErrorSite::C22(b) => (10, b),
        }
    }
}

type ErrorFn = Arc<dyn Fn(usize, ErrorSite, usize) -> Option<Vec<f64>> + Send + Sync>;

/// Generator `(n, site, dim) ↦ error vector`; `None` means zero.
#[derive(Clone)]
pub struct ErrorSchedule {
    generator: ErrorFn,
    description: String,
    is_zero: bool,
}

impl std::fmt::Debug for ErrorSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ErrorSchedule({})", self.description)
    }
}

impl ErrorSchedule {
    pub fn zero() -> Self {
        Self {
            generator: Arc::new(|_, _, _| None),
            description: "zero".into(),
            is_zero: true,
        }
    }

    /// `amplitude · ρⁿ · u` with `u` a unit vector drawn from a stream keyed
    /// by `(seed, n, site)`. Summable for `ρ < 1`.
    pub fn geometric(rho: f64, amplitude: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) || !(amplitude >= 0.0) {
            return Err(FbfError::Config(format!(
                "geometric schedule needs 0 <= rho < 1 and amplitude >= 0, got {rho}, {amplitude}"
            )));
        }
        Ok(Self {
            generator: Arc::new(move |n, site, dim| {
                let (code, block) = site.code();
                let id = ((n as u64) << 24) | (code << 16) | (block as u64 & 0xffff);
                let mut g = rng::stream(seed, id);
                let mut u = rng::normal_vec(&mut g, dim);
                let nu = linalg::norm(&u);
                let scale = if nu > 0.0 { amplitude * rho.powi(n.min(i32::MAX as usize) as i32) / nu } else { 0.0 };
                u.iter_mut().for_each(|v| *v *= scale);
                Some(u)
            }),
            description: format!("geometric(rho={rho}, amplitude={amplitude}, seed={seed})"),
            is_zero: false,
        })
    }

    pub fn from_fn<F>(description: &str, f: F) -> Self
    where
        F: Fn(usize, ErrorSite, usize) -> Option<Vec<f64>> + Send + Sync + 'static,
    {
        Self {
            generator: Arc::new(f),
            description: description.into(),
            is_zero: false,
        }
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn at(&self, n: usize, site: ErrorSite, dim: usize) -> Option<Vec<f64>> {
        if self.is_zero {
            return None;
        }
        (self.generator)(n, site, dim)
    }

    fn add(&self, n: usize, site: ErrorSite, v: &mut [f64], scale: f64) {
        if let Some(e) = self.at(n, site, v.len()) {
            linalg::axpy(scale, &e, v);
        }
    }
}

/// Diagnostics of one iteration. Block displacements are `‖x1−p11‖`,
/// `‖x2−p12‖`, `‖v1−p21‖`, `‖v2−p22‖`; partial sums accumulate their
/// squares from iteration 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n: usize,
    pub gamma: f64,
    pub displacement: f64,
    pub block_displacements: [f64; 4],
    pub partial_sums: [f64; 4],
    pub transversality_defect: f64,
}

pub const TRACE_HEADER: &str =
    "n,gamma,displacement,dx1,dx2,dv1,dv2,sum_dx1,sum_dx2,sum_dv1,sum_dv2,transversality_defect";

impl TraceRecord {
    pub fn csv_row(&self) -> String {
        let b = &self.block_displacements;
        let p = &self.partial_sums;
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.n, self.gamma, self.displacement, b[0], b[1], b[2], b[3], p[0], p[1], p[2], p[3], self.transversality_defect
        )
    }
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceRecord]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// `‖M_k* v2_k − N_k* v1_k‖` for each coupled block.
pub fn transversality_defects(spec: &SystemSpec, state: &IterateState) -> Vec<f64> {
    (0..spec.layout.s())
        .map(|k| {
            let a = spec.m_op[k].adjoint(&state.v2[k]);
            let b = spec.n_op[k].adjoint(&state.v1[k]);
            linalg::dist(&a, &b)
        })
        .collect()
}

fn total_defect(spec: &SystemSpec, state: &IterateState) -> f64 {
    transversality_defects(spec, state).iter().map(|d| d * d).sum::<f64>().sqrt()
}

fn finite<F: Fn() -> String>(v: &[f64], n: usize, block: F, line: &str) -> Result<()> {
    if linalg::all_finite(v) {
        Ok(())
    } else {
        Err(FbfError::Numeric {
            iteration: n,
            block: block(),
            line: line.into(),
        })
    }
}

// per-i buffers
struct PrimalWork {
    s11: Vec<f64>,
    p11: Vec<f64>,
    t: Vec<f64>,
    tmp: Vec<f64>,
    x1: Vec<f64>,
}

// per-k buffers; `x2`, `v1`, `v2` receive the next iterate
struct DualWork {
    nv1: Vec<f64>,
    acc: Vec<f64>,
    tg: Vec<f64>,
    p12: Vec<f64>,
    s21: Vec<f64>,
    p21: Vec<f64>,
    tx: Vec<f64>,
    s22: Vec<f64>,
    p22: Vec<f64>,
    ty: Vec<f64>,
    np21: Vec<f64>,
    x2: Vec<f64>,
    v1: Vec<f64>,
    v2: Vec<f64>,
}

/// Reusable buffers for one system; sized from the layout.
struct Workspace {
    primal: Vec<PrimalWork>,
    dual: Vec<DualWork>,
}

impl Workspace {
    fn new(layout: &SpaceLayout) -> Self {
        let z = |n: usize| vec![0.0; n];
        Self {
            primal: layout
                .h_dims
                .iter()
                .map(|&h| PrimalWork {
                    s11: z(h),
                    p11: z(h),
                    t: z(h),
                    tmp: z(h),
                    x1: z(h),
                })
                .collect(),
            dual: (0..layout.s())
                .map(|k| {
                    let (g, x, y) = (layout.g_dims[k], layout.x_dims[k], layout.y_dims[k]);
                    DualWork {
                        nv1: z(g),
                        acc: z(g),
                        tg: z(g),
                        p12: z(g),
                        s21: z(x),
                        p21: z(x),
                        tx: z(x),
                        s22: z(y),
                        p22: z(y),
                        ty: z(y),
                        np21: z(g),
                        x2: z(g),
                        v1: z(x),
                        v2: z(y),
                    }
                })
                .collect(),
        }
    }
}

/// One exact-order iteration with step `gamma` and the errors scheduled at
/// `state.n`. Couplings are evaluated at full block tuples; per-block work is
/// mapped through `exec` and all sums are taken in block order.
pub fn step_with(
    spec: &SystemSpec,
    state: &IterateState,
    gamma: f64,
    errors: &ErrorSchedule,
    exec: ExecPolicy,
) -> Result<(IterateState, TraceRecord)> {
    let beta = spec.raw_beta()?;
    if !(gamma > 0.0) || !gamma.is_finite() || gamma * beta >= 1.0 {
        return Err(FbfError::StepBound {
            gamma,
            lower: 0.0,
            upper: if beta > 0.0 { 1.0 / beta } else { f64::INFINITY },
        });
    }
    state.check_dims(&spec.layout)?;
    let mut ws = Workspace::new(&spec.layout);
    let mut next = state.clone();
    let rec = advance(spec, state, &mut next, &mut ws, gamma, errors, exec, true)?;
    Ok((next, rec))
}

/// [`step_with`] under the sequential policy.
pub fn step(spec: &SystemSpec, state: &IterateState, gamma: f64, errors: &ErrorSchedule) -> Result<(IterateState, TraceRecord)> {
    step_with(spec, state, gamma, errors, ExecPolicy::Sequential)
}

// out += L* y (or L y when `forward`), skipping zero blocks
fn add_block(l: &crate::linop::LinOp, y: &[f64], out: &mut [f64], tmp: &mut [f64], forward: bool) {
    if l.is_zero() {
        return;
    }
    if l.is_identity() {
        linalg::add_assign(out, y);
        return;
    }
    if forward {
        l.apply_into(y, tmp);
    } else {
        l.adjoint_into(y, tmp);
    }
    linalg::add_assign(out, tmp);
}

/// Writes the iterate following `state` into `next` (whose blocks must
/// already have the layout's sizes).
#[allow(clippy::too_many_arguments)]
fn advance(
    spec: &SystemSpec,
    state: &IterateState,
    next: &mut IterateState,
    ws: &mut Workspace,
    gamma: f64,
    errors: &ErrorSchedule,
    exec: ExecPolicy,
    want_defect: bool,
) -> Result<TraceRecord> {
    let n = state.n;
    let s = spec.layout.s();
    let inv = 1.0 / gamma;
    let Workspace { primal, dual } = ws;

    exec.map_mut(dual, |k, w| spec.n_op[k].adjoint_into(&state.v1[k], &mut w.nv1));

    // i-loop: s11, p11
    let cx = spec.c.apply_blocks(&state.x1);
    let dual_ro: &[DualWork] = dual;
    let res: Vec<Result<()>> = exec.map_mut(primal, |i, w| {
        w.t.copy_from_slice(&cx[i]);
        for k in 0..s {
            add_block(&spec.l_op[k][i], &dual_ro[k].nv1, &mut w.t, &mut w.tmp, false);
        }
        errors.add(n, ErrorSite::A11(i), &mut w.t, 1.0);
        for ((o, x), t) in w.s11.iter_mut().zip(&state.x1[i]).zip(&w.t) {
            *o = x - gamma * t;
        }
        finite(&w.s11, n, || format!("i={i}"), "s11")?;
        for ((o, a), z) in w.t.iter_mut().zip(&w.s11).zip(&spec.z[i]) {
            *o = a + gamma * z;
        }
        w.p11 = spec.a[i].resolve(gamma, &w.t);
        errors.add(n, ErrorSite::B11(i), &mut w.p11, 1.0);
        finite(&w.p11, n, || format!("i={i}"), "p11")
    });
    res.into_iter().collect::<Result<()>>()?;

    // k-loop
    let primal_ro: &[PrimalWork] = primal;
    let nr_all = spec.shifted_r();
    let res: Vec<Result<()>> = exec.map_mut(dual, |k, w| {
        let (mk, nk) = (&spec.m_op[k], &spec.n_op[k]);
        let (x2, v1, v2) = (&state.x2[k], &state.v1[k], &state.v2[k]);
        let blk = || format!("k={k}");
        let DualWork {
            nv1,
            acc,
            tg,
            p12,
            s21,
            p21,
            tx,
            s22,
            p22,
            ty,
            np21,
            x2: x2n,
            v1: v1n,
            v2: v2n,
        } = w;

        mk.adjoint_into(v2, tg);
        for (t, a) in tg.iter_mut().zip(nv1.iter()) {
            *t = a - *t;
        }
        errors.add(n, ErrorSite::A12(k), tg, 1.0);
        for ((o, x), t) in p12.iter_mut().zip(x2).zip(tg.iter()) {
            *o = x + gamma * t;
        }
        finite(p12, n, blk, "p12")?;

        acc.fill(0.0);
        for i in 0..spec.layout.m() {
            add_block(&spec.l_op[k][i], &state.x1[i], acc, tg, true);
        }
        for (a, x) in acc.iter_mut().zip(x2) {
            *a -= x;
        }
        nk.apply_into(acc, tx);
        errors.add(n, ErrorSite::A21(k), tx, 1.0);
        for ((o, v), t) in s21.iter_mut().zip(v1).zip(tx.iter()) {
            *o = v + gamma * t;
        }
        finite(s21, n, blk, "s21")?;

        let nr = &nr_all[k];
        for ((o, a), b) in tx.iter_mut().zip(s21.iter()).zip(nr) {
            *o = a * inv - b;
        }
        let jd = spec.d[k].resolve(inv, tx);
        for ((o, a), b) in tx.iter_mut().zip(nr).zip(&jd) {
            *o = a + b;
        }
        errors.add(n, ErrorSite::B21(k), tx, 1.0);
        for ((o, a), b) in p21.iter_mut().zip(s21.iter()).zip(tx.iter()) {
            *o = a - gamma * b;
        }
        finite(p21, n, blk, "p21")?;

        acc.fill(0.0);
        for (i, pw) in primal_ro.iter().enumerate() {
            add_block(&spec.l_op[k][i], &pw.p11, acc, tg, true);
        }
        for (a, p) in acc.iter_mut().zip(p12.iter()) {
            *a -= p;
        }
        nk.apply_into(acc, tx);
        errors.add(n, ErrorSite::C21(k), tx, 1.0);
        for ((((o, v), sv), p), t) in v1n.iter_mut().zip(v1).zip(s21.iter()).zip(p21.iter()).zip(tx.iter()) {
            *o = v - sv + (p + gamma * t);
        }
        finite(v1n, n, blk, "v1")?;

        mk.apply_into(x2, ty);
        errors.add(n, ErrorSite::A22(k), ty, 1.0);
        for ((o, v), t) in s22.iter_mut().zip(v2).zip(ty.iter()) {
            *o = v + gamma * t;
        }
        finite(s22, n, blk, "s22")?;
        for (o, a) in ty.iter_mut().zip(s22.iter()) {
            *o = a * inv;
        }
        let mut jb = spec.b[k].resolve(inv, ty);
        errors.add(n, ErrorSite::B22(k), &mut jb, 1.0);
        for ((o, a), b) in p22.iter_mut().zip(s22.iter()).zip(&jb) {
            *o = a - gamma * b;
        }
        finite(p22, n, blk, "p22")?;
        mk.apply_into(p12, ty);
        errors.add(n, ErrorSite::C22(k), ty, 1.0);
        for ((((o, v), sv), p), t) in v2n.iter_mut().zip(v2).zip(s22.iter()).zip(p22.iter()).zip(ty.iter()) {
            *o = v - sv + (p + gamma * t);
        }
        finite(v2n, n, blk, "v2")?;

        nk.adjoint_into(p21, np21);
        mk.adjoint_into(p22, tg);
        for (t, a) in tg.iter_mut().zip(np21.iter()) {
            *t = a - *t;
        }
        errors.add(n, ErrorSite::C12(k), tg, 1.0);
        for (((o, x), p), t) in x2n.iter_mut().zip(x2).zip(p12.iter()).zip(tg.iter()) {
            *o = x - p + (p + gamma * t);
        }
        finite(x2n, n, blk, "x2")
    });
    res.into_iter().collect::<Result<()>>()?;

    // final i-loop: q11 with C at the p11 tuple
    let p11s: Vec<&[f64]> = primal.iter().map(|w| w.p11.as_slice()).collect();
    let cp = spec.c.apply_block_slices(&p11s);
    let dual_ro: &[DualWork] = dual;
    let res: Vec<Result<()>> = exec.map_mut(primal, |i, w| {
        w.t.copy_from_slice(&cp[i]);
        for k in 0..s {
            add_block(&spec.l_op[k][i], &dual_ro[k].np21, &mut w.t, &mut w.tmp, false);
        }
        errors.add(n, ErrorSite::C11(i), &mut w.t, 1.0);
        for ((((o, x), sv), p), t) in w.x1.iter_mut().zip(&state.x1[i]).zip(&w.s11).zip(&w.p11).zip(&w.t) {
            *o = x - sv + (p - gamma * t);
        }
        finite(&w.x1, n, || format!("i={i}"), "x1")
    });
    res.into_iter().collect::<Result<()>>()?;

    let mut sq = [0.0; 4];
    for (i, w) in primal.iter_mut().enumerate() {
        sq[0] += linalg::dist(&state.x1[i], &w.p11).powi(2);
        std::mem::swap(&mut next.x1[i], &mut w.x1);
    }
    for (k, w) in dual.iter_mut().enumerate() {
        sq[1] += linalg::dist(&state.x2[k], &w.p12).powi(2);
        sq[2] += linalg::dist(&state.v1[k], &w.p21).powi(2);
        sq[3] += linalg::dist(&state.v2[k], &w.p22).powi(2);
        std::mem::swap(&mut next.x2[k], &mut w.x2);
        std::mem::swap(&mut next.v1[k], &mut w.v1);
        std::mem::swap(&mut next.v2[k], &mut w.v2);
    }
    next.n = n + 1;
    let displacement = next.distance(state);
    let transversality_defect = if want_defect { total_defect(spec, next) } else { f64::NAN };
    Ok(TraceRecord {
        n,
        gamma,
        displacement,
        block_displacements: sq.map(f64::sqrt),
        partial_sums: sq,
        transversality_defect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Converged => 0,
            Status::MaxIter => 2,
        }
    }
}

/// Stopping rule and trace cadence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// record every `trace_every` iterations (0 = only the final one)
    pub trace_every: usize,
    pub exec: ExecPolicy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            trace_every: 1,
            exec: ExecPolicy::Sequential,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub state: IterateState,
    pub trace: Vec<TraceRecord>,
    pub status: Status,
    /// iterations performed in this call
    pub iterations: usize,
    /// displacement of the last iteration (`NaN` when none ran)
    pub displacement: f64,
    /// final `[Σ‖x1−p11‖², Σ‖x2−p12‖², Σ‖v1−p21‖², Σ‖v2−p22‖²]`
    pub partial_sums: [f64; 4],
}

/// Iterates until the displacement drops to `opts.tol` or `opts.max_iter`
/// iterations have run. The system is validated and the policy checked
/// against the system's β before iteration 0.
pub fn solve(
    spec: &SystemSpec,
    init: &IterateState,
    policy: &StepPolicy,
    errors: &ErrorSchedule,
    opts: &SolveOptions,
) -> Result<SolveOutput> {
    system::ensure_valid(spec)?;
    let beta = system::compute_beta(spec)?;
    if (policy.beta - beta).abs() > 1e-9 * beta {
        return Err(FbfError::Config(format!(
            "policy beta {} does not match the system's beta {beta}",
            policy.beta
        )));
    }
    policy.check()?;
    init.check_dims(&spec.layout)?;
    if !(opts.tol >= 0.0) {
        return Err(FbfError::Config(format!("tol must be >= 0, got {}", opts.tol)));
    }
    solve_unchecked(spec, init, policy, errors, opts)
}

/// [`solve`] without validation; the caller vouches for the system and
/// policy.
pub fn solve_unchecked(
    spec: &SystemSpec,
    init: &IterateState,
    policy: &StepPolicy,
    errors: &ErrorSchedule,
    opts: &SolveOptions,
) -> Result<SolveOutput> {
    let mut state = init.clone();
    let mut next = init.clone();
    let mut ws = Workspace::new(&spec.layout);
    let mut trace = Vec::new();
    let mut sums = [0.0; 4];
    let mut displacement = f64::NAN;
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let gamma = policy.gamma_at(state.n);
        let record_now = opts.trace_every > 0 && iterations % opts.trace_every == 0;
        let mut rec = advance(spec, &state, &mut next, &mut ws, gamma, errors, opts.exec, record_now)?;
        for (s, v) in sums.iter_mut().zip(rec.partial_sums) {
            *s += v;
        }
        rec.partial_sums = sums;
        displacement = rec.displacement;
        std::mem::swap(&mut state, &mut next);
        iterations += 1;
        let done = displacement <= opts.tol;
        if done {
            status = Status::Converged;
        }
        let last = done || iterations == opts.max_iter;
        if last && !record_now {
            rec.transversality_defect = total_defect(spec, &state);
        }
        if record_now || last {
            trace.push(rec);
        }
        if done {
            break;
        }
    }
    Ok(SolveOutput {
        state,
        trace,
        status,
        iterations,
        displacement,
        partial_sums: sums,
    })
}
