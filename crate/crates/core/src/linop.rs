//! Bounded linear operators with adjoints.
//!
//! Dense matrices and matrix-free operators (finite differences, wavelets,
//! blurs) share the [`LinearOperator`] contract and are passed around as the
//! cheaply clonable [`LinOp`] handle.

use std::fmt;
use std::sync::Arc;

use crate::error::{FbfError, Result};
use crate::exec::ExecPolicy;
use crate::linalg::{self, DenseMatrix};
use crate::rng;

/// Default power-iteration tolerance.
pub const NORM_TOL: f64 = 1e-9;
/// Default power-iteration budget.
pub const NORM_MAX_ITER: usize = 5000;
/// Default power-iteration seed.
pub const NORM_SEED: u64 = 42;
/// Inflation applied to norm estimates so step-size bounds stay valid.
pub const NORM_SAFETY: f64 = 1.01;

pub trait LinearOperator: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, y: &[f64]) -> Vec<f64>;
    fn tag(&self) -> String;

    /// Overwrites `out` with `A x`.
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.apply(x));
    }

    /// Overwrites `out` with `A* y`.
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.adjoint(y));
    }

    /// Operators reporting `true` must map everything to `+0.0`.
    fn is_zero(&self) -> bool {
        false
    }

    /// Operators reporting `true` must return their input unchanged.
    fn is_identity(&self) -> bool {
        false
    }
}

#[derive(Clone)]
pub struct LinOp(Arc<dyn LinearOperator>);

impl fmt::Debug for LinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LinOp({}: {} -> {})", self.tag(), self.in_dim(), self.out_dim())
    }
}

impl LinOp {
    pub fn new<T: LinearOperator + 'static>(op: T) -> Self {
        LinOp(Arc::new(op))
    }

    pub fn in_dim(&self) -> usize {
        self.0.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.0.out_dim()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim(), "{}", self.tag());
        self.0.apply(x)
    }

    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.out_dim(), "{}", self.tag());
        self.0.adjoint(y)
    }

    pub fn tag(&self) -> String {
        self.0.tag()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_identity()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim());
        debug_assert_eq!(out.len(), self.out_dim());
        self.0.apply_into(x, out)
    }

    pub fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.out_dim());
        debug_assert_eq!(out.len(), self.in_dim());
        self.0.adjoint_into(y, out)
    }

    pub fn dense(m: DenseMatrix) -> Self {
        LinOp::new(Dense(m))
    }

    pub fn identity(n: usize) -> Self {
        LinOp::new(Identity(n))
    }

    pub fn zero(out_dim: usize, in_dim: usize) -> Self {
        LinOp::new(Zero { in_dim, out_dim })
    }

    pub fn scaled(alpha: f64, op: LinOp) -> Self {
        LinOp::new(Scaled { alpha, op })
    }

    /// Matrix-free operator from a pair of closures. Nothing checks that the
    /// closures are adjoint to each other; use [`adjoint_check`].
    pub fn from_fns<F, G>(in_dim: usize, out_dim: usize, tag: &str, apply: F, adjoint: G) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        LinOp::new(FnOp {
            in_dim,
            out_dim,
            tag: tag.to_string(),
            apply: Box::new(apply),
            adjoint: Box::new(adjoint),
        })
    }

    /// Materializes the operator column by column.
    pub fn to_dense(&self) -> DenseMatrix {
        let (m, n) = (self.out_dim(), self.in_dim());
        let mut out = DenseMatrix::zeros(m, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            for i in 0..m {
                out.set(i, j, col[i]);
            }
            e[j] = 0.0;
        }
        out
    }
}

struct Dense(DenseMatrix);

impl LinearOperator for Dense {
    fn in_dim(&self) -> usize {
        self.0.cols
    }
    fn out_dim(&self) -> usize {
        self.0.rows
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.matvec(x)
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.0.tmatvec(y)
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.0.matvec_into(x, out)
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.0.tmatvec_into(y, out)
    }
    fn tag(&self) -> String {
        format!("dense{}x{}", self.0.rows, self.0.cols)
    }
}

struct Identity(usize);

impl LinearOperator for Identity {
    fn in_dim(&self) -> usize {
        self.0
    }
    fn out_dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x)
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y)
    }
    fn tag(&self) -> String {
        format!("identity{}", self.0)
    }
    fn is_identity(&self) -> bool {
        true
    }
}

struct Zero {
    in_dim: usize,
    out_dim: usize,
}

impl LinearOperator for Zero {
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn apply(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.out_dim]
    }
    fn adjoint(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.in_dim]
    }
    fn apply_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0)
    }
    fn adjoint_into(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0)
    }
    fn tag(&self) -> String {
        format!("zero{}x{}", self.out_dim, self.in_dim)
    }
    fn is_zero(&self) -> bool {
        true
    }
}

struct Scaled {
    alpha: f64,
    op: LinOp,
}

impl LinearOperator for Scaled {
    fn in_dim(&self) -> usize {
        self.op.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.op.out_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        linalg::scale(self.alpha, &self.op.apply(x))
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        linalg::scale(self.alpha, &self.op.adjoint(y))
    }
    fn tag(&self) -> String {
        format!("{}*{}", self.alpha, self.op.tag())
    }
}

struct Composed {
    outer: LinOp,
    inner: LinOp,
}

impl LinearOperator for Composed {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.outer.out_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.outer.apply(&self.inner.apply(x))
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.inner.adjoint(&self.outer.adjoint(y))
    }
    fn tag(&self) -> String {
        format!("({})∘({})", self.outer.tag(), self.inner.tag())
    }
    fn is_zero(&self) -> bool {
        self.outer.is_zero() || self.inner.is_zero()
    }
}

type VecFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

struct FnOp {
    in_dim: usize,
    out_dim: usize,
    tag: String,
    apply: VecFn,
    adjoint: VecFn,
}

impl LinearOperator for FnOp {
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self.apply)(x)
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        (self.adjoint)(y)
    }
    fn tag(&self) -> String {
        self.tag.clone()
    }
}

/// `outer ∘ inner`, with adjoint `inner* ∘ outer*`.
pub fn compose(outer: &LinOp, inner: &LinOp) -> Result<LinOp> {
    if inner.out_dim() != outer.in_dim() {
        return Err(FbfError::Spec(format!(
            "cannot compose {} (in {}) after {} (out {})",
            outer.tag(),
            outer.in_dim(),
            inner.tag(),
            inner.out_dim()
        )));
    }
    if inner.is_zero() || outer.is_zero() {
        return Ok(LinOp::zero(outer.out_dim(), inner.in_dim()));
    }
    Ok(LinOp::new(Composed {
        outer: outer.clone(),
        inner: inner.clone(),
    }))
}

/// Largest relative defect `|<Lx,y> - <x,L*y>| / (1 + |<Lx,y>|)` over
/// `trials` seeded Gaussian pairs.
pub fn adjoint_check(op: &LinOp, trials: usize, seed: u64) -> Result<f64> {
    adjoint_check_with(op, trials, seed, ExecPolicy::default())
}

pub fn adjoint_check_with(op: &LinOp, trials: usize, seed: u64, exec: ExecPolicy) -> Result<f64> {
    if trials == 0 {
        return Err(FbfError::Config("adjoint_check needs at least one trial".into()));
    }
    let (n, m) = (op.in_dim(), op.out_dim());
    let defects = exec.map(trials, |t| -> Result<f64> {
        let mut r = rng::stream(seed, t as u64);
        let x = rng::normal_vec(&mut r, n);
        let y = rng::normal_vec(&mut r, m);
        let lx = op.0.apply(&x);
        let ly = op.0.adjoint(&y);
        if lx.len() != m || ly.len() != n {
            return Err(FbfError::Spec(format!(
                "{}: apply returned {} (expected {m}), adjoint returned {} (expected {n})",
                op.tag(),
                lx.len(),
                ly.len()
            )));
        }
        let lhs = linalg::dot(&lx, &y);
        let rhs = linalg::dot(&x, &ly);
        Ok((lhs - rhs).abs() / (1.0 + lhs.abs()))
    });
    let mut worst = 0.0_f64;
    for d in defects {
        worst = worst.max(d?);
    }
    Ok(worst)
}

/// Result of [`operator_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpNormEstimate {
    pub value: f64,
    /// `value * NORM_SAFETY`
    pub upper_bound: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Power iteration on `L*L` from a seeded Gaussian start.
pub fn operator_norm(op: &LinOp, tol: f64, max_iter: usize, seed: u64) -> Result<OpNormEstimate> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(FbfError::Config(format!(
            "operator_norm needs tol > 0 and max_iter >= 1 (got {tol}, {max_iter})"
        )));
    }
    let zero = OpNormEstimate {
        value: 0.0,
        upper_bound: 0.0,
        iterations_used: 0,
        converged: true,
    };
    if op.is_zero() {
        return Ok(zero);
    }
    let mut r = rng::stream(seed, 0);
    let mut x = rng::normal_vec(&mut r, op.in_dim());
    let nx = linalg::norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);

    let mut prev = f64::NAN;
    let mut rq = 0.0;
    for it in 1..=max_iter {
        let y = op.apply(&x);
        rq = linalg::dot(&y, &y);
        if !rq.is_finite() {
            return Err(FbfError::Numeric {
                iteration: it,
                block: op.tag(),
                line: "power iteration Rayleigh quotient".into(),
            });
        }
        if rq == 0.0 {
            return Ok(OpNormEstimate {
                iterations_used: it,
                ..zero
            });
        }
        let w = op.adjoint(&y);
        let nw = linalg::norm(&w);
        if !nw.is_finite() {
            return Err(FbfError::Numeric {
                iteration: it,
                block: op.tag(),
                line: "power iteration adjoint step".into(),
            });
        }
        if nw == 0.0 {
            return Ok(OpNormEstimate {
                iterations_used: it,
                ..zero
            });
        }
        if (rq - prev).abs() < tol * rq {
            let value = rq.sqrt();
            return Ok(OpNormEstimate {
                value,
                upper_bound: value * NORM_SAFETY,
                iterations_used: it,
                converged: true,
            });
        }
        prev = rq;
        x = w.into_iter().map(|v| v / nw).collect();
    }
    let value = rq.sqrt();
    Ok(OpNormEstimate {
        value,
        upper_bound: value * NORM_SAFETY,
        iterations_used: max_iter,
        converged: false,
    })
}

/// [`operator_norm`] with the library defaults.
pub fn operator_norm_default(op: &LinOp) -> Result<OpNormEstimate> {
    operator_norm(op, NORM_TOL, NORM_MAX_ITER, NORM_SEED)
}
