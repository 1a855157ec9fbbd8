//! Resolvents of maximally monotone operators and the proximity-operator
//! catalog used to describe them.
//!
//! `ResolventOp` is the solver-facing handle. Catalog entries are
//! [`ProxFunction`] values, which additionally know their function value and
//! (where a closed form exists) their convex conjugate.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Deserialize;
use serde_json::Value;

use crate::builders::{parse_params, OpDesc, ScalarOrVec};
use crate::error::{FbfError, Result};
use crate::linalg::{self, DenseMatrix};
use crate::linop::{self, LinOp};
use crate::rng;

/// Absolute tolerance used when evaluating indicator functions at points
/// produced by an iterative method.
pub const FEAS_TOL: f64 = 1e-6;

/// Catalog names accepted by [`prox_catalog`].
pub const CATALOG: &[&str] = &[
    "l1",
    "group_l12",
    "indicator_box",
    "indicator_zero",
    "indicator_affine",
    "quadratic_fidelity",
    "zero_function",
    "scaled_translated",
    "quadratic_augmented",
];

pub trait Resolvent: Send + Sync {
    fn dim(&self) -> usize;
    /// `J_{γA}(x)`
    fn resolve(&self, gamma: f64, x: &[f64]) -> Vec<f64>;
    fn tag(&self) -> String;
}

/// Maximally monotone operator accessed through its resolvent.
#[derive(Clone)]
pub struct ResolventOp(Arc<dyn Resolvent>);

impl fmt::Debug for ResolventOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ResolventOp({}, dim {})", self.tag(), self.dim())
    }
}

impl ResolventOp {
    pub fn new<T: Resolvent + 'static>(r: T) -> Self {
        ResolventOp(Arc::new(r))
    }

    pub fn from_prox(f: Arc<ProxFunction>) -> Self {
        ResolventOp(f)
    }

    /// User-supplied resolvent. Exactness and firm nonexpansiveness are the
    /// caller's responsibility; [`firm_nonexpansive_defect`] spot-checks them.
    pub fn from_fn<F>(dim: usize, tag: &str, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        ResolventOp::new(FnResolvent {
            dim,
            tag: tag.to_string(),
            f: Box::new(f),
        })
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn resolve(&self, gamma: f64, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        self.0.resolve(gamma, x)
    }

    pub fn tag(&self) -> String {
        self.0.tag()
    }
}

impl Resolvent for ProxFunction {
    fn dim(&self) -> usize {
        ProxFunction::dim(self)
    }
    fn resolve(&self, gamma: f64, x: &[f64]) -> Vec<f64> {
        self.prox(gamma, x)
    }
    fn tag(&self) -> String {
        self.name().to_string()
    }
}

type ResolveFn = Box<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

struct FnResolvent {
    dim: usize,
    tag: String,
    f: ResolveFn,
}

impl Resolvent for FnResolvent {
    fn dim(&self) -> usize {
        self.dim
    }
    fn resolve(&self, gamma: f64, x: &[f64]) -> Vec<f64> {
        (self.f)(gamma, x)
    }
    fn tag(&self) -> String {
        self.tag.clone()
    }
}

/// `J_{γA⁻¹}(x) = x − γ J_{γ⁻¹A}(γ⁻¹x)`.
pub fn resolvent_of_inverse(op: &ResolventOp, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != op.dim() {
        return Err(FbfError::Spec(format!(
            "resolvent_of_inverse: {} has dim {}, got vector of length {}",
            op.tag(),
            op.dim(),
            x.len()
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(FbfError::Config(format!("resolvent_of_inverse needs gamma > 0, got {gamma}")));
    }
    let inv = 1.0 / gamma;
    let scaled: Vec<f64> = x.iter().map(|v| v * inv).collect();
    let j = op.resolve(inv, &scaled);
    Ok(x.iter().zip(&j).map(|(xi, ji)| xi - gamma * ji).collect())
}

/// Largest violation of `‖Jx − Jy‖² ≤ <Jx − Jy, x − y>` over random pairs
/// and steps drawn from `{0.1, 1, 10}`.
pub fn firm_nonexpansive_defect(op: &ResolventOp, trials: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed, 0x5e50);
    let gammas = [0.1, 1.0, 10.0];
    let mut worst = f64::NEG_INFINITY;
    for t in 0..trials {
        let g = gammas[t % gammas.len()];
        let x = rng::normal_vec(&mut r, op.dim());
        let y = rng::normal_vec(&mut r, op.dim());
        let jx = op.resolve(g, &x);
        let jy = op.resolve(g, &y);
        let dj = linalg::sub(&jx, &jy);
        let d = linalg::sub(&x, &y);
        worst = worst.max(linalg::dot(&dj, &dj) - linalg::dot(&dj, &d));
    }
    worst
}

/// `½ Σ ω_k ‖T_k x − r_k‖²`, with `Σ ω_k T_k*T_k` diagonalized once at
/// construction so its proximity operator and conjugate are available for
/// every step size without further factorizations.
#[derive(Debug, Clone)]
pub struct QuadraticFidelity {
    pub dim: usize,
    pub terms: Vec<FidelityTerm>,
    /// `Σ ω T*r`
    linear: Vec<f64>,
    /// `½ Σ ω ‖r‖²`
    constant: f64,
    eig_values: Vec<f64>,
    /// Column-major orthonormal eigenvectors (dim × dim).
    eig_vectors: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FidelityTerm {
    pub weight: f64,
    pub op: LinOp,
    pub target: Vec<f64>,
}

impl QuadraticFidelity {
    pub fn new(terms: Vec<FidelityTerm>) -> Result<Self> {
        let dim = terms
            .first()
            .map(|t| t.op.in_dim())
            .ok_or_else(|| FbfError::Config("quadratic_fidelity needs at least one term".into()))?;
        let mut q = DenseMatrix::zeros(dim, dim);
        let mut linear = vec![0.0; dim];
        let mut constant = 0.0;
        for (k, t) in terms.iter().enumerate() {
            if t.op.in_dim() != dim || t.op.out_dim() != t.target.len() {
                return Err(FbfError::Spec(format!(
                    "quadratic_fidelity term {k}: operator {}x{} does not fit dim {dim} / target length {}",
                    t.op.out_dim(),
                    t.op.in_dim(),
                    t.target.len()
                )));
            }
            if !(t.weight >= 0.0) || !t.weight.is_finite() {
                return Err(FbfError::Config(format!(
                    "quadratic_fidelity term {k}: weight must be finite and >= 0, got {}",
                    t.weight
                )));
            }
            let dense = t.op.to_dense();
            let tt = dense.transpose().matmul(&dense)?;
            linalg::axpy(t.weight, &tt.data, &mut q.data);
            linalg::axpy(t.weight, &t.op.adjoint(&t.target), &mut linear);
            constant += 0.5 * t.weight * linalg::dot(&t.target, &t.target);
        }
        // symmetrize against rounding before the eigensolver
        let qn = q.to_nalgebra();
        let qs = (&qn + qn.transpose()) * 0.5;
        let eig = SymmetricEigen::new(qs);
        let scale = eig.eigenvalues.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
            return Err(FbfError::Config(
                "quadratic_fidelity system matrix is not positive semidefinite".into(),
            ));
        }
        Ok(Self {
            dim,
            terms,
            linear,
            constant,
            eig_values: eig.eigenvalues.iter().map(|l| l.max(0.0)).collect(),
            eig_vectors: eig.eigenvectors,
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let res = linalg::sub(&t.op.apply(x), &t.target);
                0.5 * t.weight * linalg::dot(&res, &res)
            })
            .sum()
    }

    /// `Σ ω T*(Tx − r)`
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for t in &self.terms {
            let res = linalg::sub(&t.op.apply(x), &t.target);
            linalg::axpy(t.weight, &t.op.adjoint(&res), &mut g);
        }
        g
    }

    /// Lipschitz constant of the gradient, from inflated norm estimates.
    pub fn lipschitz(&self) -> Result<f64> {
        let mut nu = 0.0;
        for t in &self.terms {
            let e = linop::operator_norm_default(&t.op)?;
            nu += t.weight * e.upper_bound * e.upper_bound;
        }
        Ok(nu)
    }

    /// Solves `(Id + γQ) y = x + γ Σ ω T*r`.
    pub fn prox(&self, gamma: f64, x: &[f64]) -> Vec<f64> {
        let rhs: Vec<f64> = x.iter().zip(&self.linear).map(|(a, b)| a + gamma * b).collect();
        let v = &self.eig_vectors;
        let coeffs = v.transpose() * DVector::from_column_slice(&rhs);
        let scaled = DVector::from_iterator(
            self.dim,
            coeffs.iter().zip(&self.eig_values).map(|(c, l)| c / (1.0 + gamma * l)),
        );
        (v * scaled).iter().copied().collect()
    }

    /// `f*(u) = ½ (u+b)ᵀ Q⁺ (u+b) − c` when `u + b ∈ ran Q`, else `+∞`.
    pub fn conjugate(&self, u: &[f64]) -> f64 {
        let w: Vec<f64> = u.iter().zip(&self.linear).map(|(a, b)| a + b).collect();
        let coeffs = self.eig_vectors.transpose() * DVector::from_column_slice(&w);
        let lmax = self.eig_values.iter().fold(0.0_f64, |m, v| m.max(*v));
        let mut val = 0.0;
        for (c, l) in coeffs.iter().zip(&self.eig_values) {
            if *l <= 1e-12 * lmax.max(1.0) {
                if c.abs() > FEAS_TOL * (1.0 + linalg::norm(&w)) {
                    return f64::INFINITY;
                }
            } else {
                val += c * c / l;
            }
        }
        0.5 * val - self.constant
    }
}

/// Orthogonal projection onto `{x : Ex = d}` through a pseudo-inverse.
#[derive(Debug, Clone)]
pub struct AffineSet {
    pub e: DenseMatrix,
    pub d: Vec<f64>,
    pinv: DenseMatrix,
    /// Minimum-norm point `E⁺d`.
    x0: Vec<f64>,
}

impl AffineSet {
    pub fn new(e: DenseMatrix, d: Vec<f64>) -> Result<Self> {
        if e.rows != d.len() {
            return Err(FbfError::Spec(format!(
                "indicator_affine: E has {} rows but d has length {}",
                e.rows,
                d.len()
            )));
        }
        let pinv = e
            .to_nalgebra()
            .pseudo_inverse(1e-12)
            .map_err(|m| FbfError::Config(format!("indicator_affine pseudo-inverse: {m}")))?;
        let pinv = DenseMatrix::from_nalgebra(&pinv);
        let x0 = pinv.matvec(&d);
        Ok(Self { e, d, pinv, x0 })
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let res = linalg::sub(&self.e.matvec(x), &self.d);
        linalg::sub(x, &self.pinv.matvec(&res))
    }

    fn contains(&self, x: &[f64]) -> bool {
        let res = linalg::sub(&self.e.matvec(x), &self.d);
        linalg::norm(&res) <= FEAS_TOL * (1.0 + linalg::norm(&self.d))
    }

    /// Support function of the affine set.
    fn support(&self, u: &[f64]) -> f64 {
        // u must lie in ran Eᵀ; its component there is E⁺E u
        let row = self.pinv.matvec(&self.e.matvec(u));
        if linalg::dist(&row, u) > FEAS_TOL * (1.0 + linalg::norm(u)) {
            return f64::INFINITY;
        }
        linalg::dot(&self.x0, &row)
    }
}

/// Proximable convex functions of the catalog.
#[derive(Debug, Clone)]
pub enum ProxFunction {
    /// `Σ w_j |x_j|`
    L1 { weights: Vec<f64> },
    /// `w Σ_G ‖x_G‖₂`; coordinates outside every group are unpenalized.
    GroupL12 {
        dim: usize,
        weight: f64,
        groups: Vec<Vec<usize>>,
    },
    IndicatorBox { lo: Vec<f64>, hi: Vec<f64> },
    /// `ι_{0}`
    IndicatorZero { dim: usize },
    IndicatorAffine(AffineSet),
    QuadraticFidelity(QuadraticFidelity),
    ZeroFunction { dim: usize },
    /// `c · f(x − b)`
    ScaledTranslated {
        inner: Box<ProxFunction>,
        offset: Vec<f64>,
        scale: f64,
    },
    /// `f + μ‖·‖²`
    QuadraticAugmented { inner: Box<ProxFunction>, mu: f64 },
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl ProxFunction {
    pub fn name(&self) -> &'static str {
        match self {
            ProxFunction::L1 { .. } => "l1",
            ProxFunction::GroupL12 { .. } => "group_l12",
            ProxFunction::IndicatorBox { .. } => "indicator_box",
            ProxFunction::IndicatorZero { .. } => "indicator_zero",
            ProxFunction::IndicatorAffine(_) => "indicator_affine",
            ProxFunction::QuadraticFidelity(_) => "quadratic_fidelity",
            ProxFunction::ZeroFunction { .. } => "zero_function",
            ProxFunction::ScaledTranslated { .. } => "scaled_translated",
            ProxFunction::QuadraticAugmented { .. } => "quadratic_augmented",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProxFunction::L1 { weights } => weights.len(),
            ProxFunction::GroupL12 { dim, .. } => *dim,
            ProxFunction::IndicatorBox { lo, .. } => lo.len(),
            ProxFunction::IndicatorZero { dim } | ProxFunction::ZeroFunction { dim } => *dim,
            ProxFunction::IndicatorAffine(a) => a.e.cols,
            ProxFunction::QuadraticFidelity(q) => q.dim,
            ProxFunction::ScaledTranslated { inner, .. } | ProxFunction::QuadraticAugmented { inner, .. } => {
                inner.dim()
            }
        }
    }

    /// Groups of `channels` entries taken with stride `dim / channels`
    /// (channel-major layout, one group per pixel).
    pub fn group_l12_channels(weight: f64, channels: usize, len: usize) -> Self {
        let groups = (0..len).map(|p| (0..channels).map(|c| c * len + p).collect()).collect();
        ProxFunction::GroupL12 {
            dim: channels * len,
            weight,
            groups,
        }
    }

    /// `prox_{γf}(x)`
    pub fn prox(&self, gamma: f64, x: &[f64]) -> Vec<f64> {
        match self {
            ProxFunction::L1 { weights } => {
                x.iter().zip(weights).map(|(v, w)| soft(*v, gamma * w)).collect()
            }
            ProxFunction::GroupL12 { weight, groups, .. } => {
                let mut out = x.to_vec();
                let t = gamma * weight;
                for g in groups {
                    let n = g.iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt();
                    let factor = if n <= t { 0.0 } else { 1.0 - t / n };
                    for &j in g {
                        out[j] = factor * x[j];
                    }
                }
                out
            }
            ProxFunction::IndicatorBox { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| v.max(*l).min(*h))
                .collect(),
            ProxFunction::IndicatorZero { dim } => vec![0.0; *dim],
            ProxFunction::IndicatorAffine(a) => a.project(x),
            ProxFunction::QuadraticFidelity(q) => q.prox(gamma, x),
            ProxFunction::ZeroFunction { .. } => x.to_vec(),
            ProxFunction::ScaledTranslated { inner, offset, scale } => {
                let shifted = linalg::sub(x, offset);
                let p = inner.prox(gamma * scale, &shifted);
                p.iter().zip(offset).map(|(a, b)| a + b).collect()
            }
            ProxFunction::QuadraticAugmented { inner, mu } => {
                let d = 1.0 + 2.0 * gamma * mu;
                let shrunk: Vec<f64> = x.iter().map(|v| v / d).collect();
                inner.prox(gamma / d, &shrunk)
            }
        }
    }

    /// Function value in `(-∞, +∞]`. Indicators accept points within
    /// [`FEAS_TOL`] of their set.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ProxFunction::L1 { weights } => x.iter().zip(weights).map(|(v, w)| w * v.abs()).sum(),
            ProxFunction::GroupL12 { weight, groups, .. } => {
                weight
                    * groups
                        .iter()
                        .map(|g| g.iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt())
                        .sum::<f64>()
            }
            ProxFunction::IndicatorBox { lo, hi } => {
                let ok = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (l, h))| *v >= l - FEAS_TOL && *v <= h + FEAS_TOL);
                if ok {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::IndicatorZero { .. } => {
                if linalg::norm_inf(x) <= FEAS_TOL {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::IndicatorAffine(a) => {
                if a.contains(x) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::QuadraticFidelity(q) => q.value(x),
            ProxFunction::ZeroFunction { .. } => 0.0,
            ProxFunction::ScaledTranslated { inner, offset, scale } => {
                scale * inner.value(&linalg::sub(x, offset))
            }
            ProxFunction::QuadraticAugmented { inner, mu } => {
                inner.value(x) + mu * linalg::dot(x, x)
            }
        }
    }

    /// Convex conjugate `f*(u)`.
    pub fn conjugate(&self, u: &[f64]) -> Result<f64> {
        let indicator = |ok: bool| if ok { 0.0 } else { f64::INFINITY };
        Ok(match self {
            ProxFunction::L1 { weights } => {
                indicator(u.iter().zip(weights).all(|(v, w)| v.abs() <= w + FEAS_TOL))
            }
            ProxFunction::GroupL12 { dim, weight, groups } => {
                let mut covered = vec![false; *dim];
                let mut ok = true;
                for g in groups {
                    let n = g.iter().map(|&j| u[j] * u[j]).sum::<f64>().sqrt();
                    ok &= n <= weight + FEAS_TOL;
                    g.iter().for_each(|&j| covered[j] = true);
                }
                ok &= u.iter().zip(&covered).all(|(v, c)| *c || v.abs() <= FEAS_TOL);
                indicator(ok)
            }
            ProxFunction::IndicatorBox { lo, hi } => {
                let mut s = 0.0;
                for (v, (l, h)) in u.iter().zip(lo.iter().zip(hi)) {
                    let bound = if *v > 0.0 {
                        v * h
                    } else if *v < 0.0 {
                        v * l
                    } else {
                        0.0
                    };
                    s += bound;
                }
                if s.is_nan() {
                    f64::INFINITY
                } else {
                    s
                }
            }
            ProxFunction::IndicatorZero { .. } => 0.0,
            ProxFunction::IndicatorAffine(a) => a.support(u),
            ProxFunction::QuadraticFidelity(q) => q.conjugate(u),
            ProxFunction::ZeroFunction { .. } => indicator(linalg::norm_inf(u) <= FEAS_TOL),
            ProxFunction::ScaledTranslated { inner, offset, scale } => {
                if *scale <= 0.0 {
                    return Err(FbfError::NotComputable(
                        "conjugate of a non-positively scaled function".into(),
                    ));
                }
                let inv: Vec<f64> = u.iter().map(|v| v / scale).collect();
                linalg::dot(offset, u) + scale * inner.conjugate(&inv)?
            }
            ProxFunction::QuadraticAugmented { inner, mu } => {
                // the supremum in sup <u,x> - f(x) - μ‖x‖² is attained at
                // prox_{f/(2μ)}(u/(2μ))
                let c = 2.0 * mu;
                let arg: Vec<f64> = u.iter().map(|v| v / c).collect();
                let x = inner.prox(1.0 / c, &arg);
                linalg::dot(u, &x) - inner.value(&x) - mu * linalg::dot(&x, &x)
            }
        })
    }
}

/// One catalog reference as it appears in problem files:
/// `{"prox": name, "params": {...}}`.
#[derive(Debug, Clone, Deserialize, serde::Serialize, PartialEq)]
pub struct ProxEntry {
    pub prox: String,
    #[serde(default)]
    pub params: Value,
}

impl ProxEntry {
    pub fn new(name: &str, params: Value) -> Self {
        Self {
            prox: name.to_string(),
            params,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightParams {
    #[serde(default = "one")]
    weight: ScalarOrVec,
}

fn one() -> ScalarOrVec {
    ScalarOrVec::Scalar(1.0)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupParams {
    #[serde(default = "one_f")]
    weight: f64,
    block_size: Option<usize>,
    channels: Option<usize>,
    blocks: Option<Vec<Vec<usize>>>,
}

fn one_f() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxParams {
    lo: ScalarOrVec,
    hi: ScalarOrVec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineParams {
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    d: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct TermParams {
    #[serde(default = "one_f")]
    pub weight: f64,
    pub op: OpDesc,
    pub r: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct FidelityParams {
    pub terms: Vec<TermParams>,
}

impl FidelityParams {
    pub(crate) fn build(self, dim: Option<usize>) -> Result<QuadraticFidelity> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            terms.push(FidelityTerm {
                weight: t.weight,
                op: t.op.build()?,
                target: t.r,
            });
        }
        let q = QuadraticFidelity::new(terms)?;
        if let Some(d) = dim {
            if q.dim != d {
                return Err(FbfError::Spec(format!(
                    "quadratic_fidelity acts on dim {} but dim {d} is required",
                    q.dim
                )));
            }
        }
        Ok(q)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaledParams {
    inner: ProxEntry,
    offset: Option<Vec<f64>>,
    #[serde(default = "one_f")]
    scale: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AugmentedParams {
    inner: ProxEntry,
    mu: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

/// Builds the exact proximity operator named `name` on `R^dim`.
pub fn prox_catalog(name: &str, params: &Value, dim: usize) -> Result<ProxFunction> {
    if dim == 0 {
        return Err(FbfError::Spec(format!("{name}: dimension must be positive")));
    }
    let f = match name {
        "l1" => {
            let p: WeightParams = parse_params(params)?;
            let weights = p.weight.expand(dim, "l1 weight")?;
            if weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(FbfError::Config("l1 weights must be >= 0".into()));
            }
            ProxFunction::L1 { weights }
        }
        "group_l12" => {
            let p: GroupParams = parse_params(params)?;
            if !(p.weight >= 0.0) {
                return Err(FbfError::Config("group_l12 weight must be >= 0".into()));
            }
            let groups: Vec<Vec<usize>> = match (p.block_size, p.channels, p.blocks) {
                (Some(b), None, None) if b > 0 && dim.is_multiple_of(b) => {
                    (0..dim / b).map(|g| (g * b..(g + 1) * b).collect()).collect()
                }
                (None, Some(c), None) if c > 0 && dim.is_multiple_of(c) => {
                    return Ok(ProxFunction::group_l12_channels(p.weight, c, dim / c));
                }
                (None, None, Some(blocks)) => blocks,
                _ => {
                    return Err(FbfError::Config(format!(
                        "group_l12 needs exactly one of block_size / channels / blocks compatible with dim {dim}"
                    )))
                }
            };
            let mut seen = vec![false; dim];
            for g in &groups {
                if g.is_empty() {
                    return Err(FbfError::Config("group_l12: empty block".into()));
                }
                for &j in g {
                    if j >= dim || seen[j] {
                        return Err(FbfError::Config(format!(
                            "group_l12: index {j} out of range or in two blocks"
                        )));
                    }
                    seen[j] = true;
                }
            }
            ProxFunction::GroupL12 {
                dim,
                weight: p.weight,
                groups,
            }
        }
        "indicator_box" => {
            let p: BoxParams = parse_params(params)?;
            let lo = p.lo.expand(dim, "indicator_box lo")?;
            let hi = p.hi.expand(dim, "indicator_box hi")?;
            if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
                return Err(FbfError::Config("indicator_box needs lo <= hi".into()));
            }
            ProxFunction::IndicatorBox { lo, hi }
        }
        "indicator_zero" => {
            let _: Empty = parse_params(params)?;
            ProxFunction::IndicatorZero { dim }
        }
        "zero_function" => {
            let _: Empty = parse_params(params)?;
            ProxFunction::ZeroFunction { dim }
        }
        "indicator_affine" => {
            let p: AffineParams = parse_params(params)?;
            let e = DenseMatrix::from_rows(&p.e)?;
            if e.cols != dim {
                return Err(FbfError::Spec(format!(
                    "indicator_affine: E has {} columns, dim is {dim}",
                    e.cols
                )));
            }
            ProxFunction::IndicatorAffine(AffineSet::new(e, p.d)?)
        }
        "quadratic_fidelity" => {
            let p: FidelityParams = parse_params(params)?;
            ProxFunction::QuadraticFidelity(p.build(Some(dim))?)
        }
        "scaled_translated" => {
            let p: ScaledParams = parse_params(params)?;
            let inner = prox_catalog(&p.inner.prox, &p.inner.params, dim)?;
            let offset = p.offset.unwrap_or_else(|| vec![0.0; dim]);
            if offset.len() != dim {
                return Err(FbfError::Spec("scaled_translated: offset length mismatch".into()));
            }
            if !(p.scale > 0.0) {
                return Err(FbfError::Config("scaled_translated: scale must be > 0".into()));
            }
            ProxFunction::ScaledTranslated {
                inner: Box::new(inner),
                offset,
                scale: p.scale,
            }
        }
        "quadratic_augmented" => {
            let p: AugmentedParams = parse_params(params)?;
            if !(p.mu >= 0.0) {
                return Err(FbfError::Config("quadratic_augmented: mu must be >= 0".into()));
            }
            ProxFunction::QuadraticAugmented {
                inner: Box::new(prox_catalog(&p.inner.prox, &p.inner.params, dim)?),
                mu: p.mu,
            }
        }
        other => {
            return Err(FbfError::Config(format!(
                "unknown prox '{other}' (known: {})",
                CATALOG.join(", ")
            )))
        }
    };
    Ok(f)
}

/// Builds a catalog entry from its problem-file form.
pub fn prox_from_entry(entry: &ProxEntry, dim: usize) -> Result<ProxFunction> {
    prox_catalog(&entry.prox, &entry.params, dim)
}

type CouplingFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// The coupling `C = (C_1, …, C_m)` on `H_1 ⊕ … ⊕ H_m`: a ν₀-Lipschitz
/// monotone single-valued map. Vectors are concatenations of the blocks.
#[derive(Clone)]
pub struct LipschitzCoupling {
    pub block_dims: Vec<usize>,
    pub nu0: f64,
    map: CouplingFn,
    is_zero: bool,
    tag: String,
}

impl fmt::Debug for LipschitzCoupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LipschitzCoupling({}, nu0 = {}, blocks {:?})", self.tag, self.nu0, self.block_dims)
    }
}

impl LipschitzCoupling {
    pub fn total_dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn is_zero(&self) -> bool {
        self.is_zero
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.is_zero {
            return vec![0.0; self.total_dim()];
        }
        (self.map)(x)
    }

    /// Evaluates `C` on a block tuple and returns the per-block components.
    pub fn apply_blocks(&self, blocks: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let flat: Vec<f64> = blocks.iter().flatten().copied().collect();
        self.split(&self.apply(&flat))
    }

    pub fn apply_block_slices(&self, blocks: &[&[f64]]) -> Vec<Vec<f64>> {
        let flat: Vec<f64> = blocks.concat();
        self.split(&self.apply(&flat))
    }

    /// Splits a concatenated vector into blocks.
    pub fn split(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.block_dims.len());
        let mut off = 0;
        for &d in &self.block_dims {
            out.push(flat[off..off + d].to_vec());
            off += d;
        }
        out
    }

    pub fn zero(block_dims: Vec<usize>) -> Self {
        Self {
            block_dims,
            nu0: 0.0,
            map: Arc::new(|_| Vec::new()),
            is_zero: true,
            tag: "zero".into(),
        }
    }

    /// Linear coupling `x ↦ Kx`; monotone iff `K + Kᵀ ⪰ 0`. The Lipschitz
    /// constant is the inflated norm estimate of `K`.
    pub fn linear(matrix: DenseMatrix, block_dims: Vec<usize>) -> Result<Self> {
        let n: usize = block_dims.iter().sum();
        if matrix.rows != n || matrix.cols != n {
            return Err(FbfError::Spec(format!(
                "linear coupling must be {n}x{n}, got {}x{}",
                matrix.rows, matrix.cols
            )));
        }
        let nu0 = linop::operator_norm_default(&LinOp::dense(matrix.clone()))?.upper_bound;
        Ok(Self {
            block_dims,
            nu0,
            map: Arc::new(move |x| matrix.matvec(x)),
            is_zero: false,
            tag: "linear".into(),
        })
    }

    /// Largest observed ratio `‖Cx − Cy‖ / ‖x − y‖` over random pairs.
    pub fn lipschitz_ratio(&self, trials: usize, seed: u64) -> f64 {
        let mut r = rng::stream(seed, 0xc0);
        let n = self.total_dim();
        let mut worst = 0.0_f64;
        for _ in 0..trials {
            let x = rng::normal_vec(&mut r, n);
            let y = rng::normal_vec(&mut r, n);
            let d = linalg::dist(&self.apply(&x), &self.apply(&y));
            worst = worst.max(d / linalg::dist(&x, &y));
        }
        worst
    }

    /// Smallest observed `<Cx − Cy, x − y>` over random pairs.
    pub fn monotonicity_margin(&self, trials: usize, seed: u64) -> f64 {
        let mut r = rng::stream(seed, 0xc1);
        let n = self.total_dim();
        let mut worst = f64::INFINITY;
        for _ in 0..trials {
            let x = rng::normal_vec(&mut r, n);
            let y = rng::normal_vec(&mut r, n);
            let dc = linalg::sub(&self.apply(&x), &self.apply(&y));
            worst = worst.min(linalg::dot(&dc, &linalg::sub(&x, &y)));
        }
        worst
    }
}

/// Wraps `∇φ` as the coupling `C_i = ∇_i φ`.
pub fn gradient_coupling<F>(phi_grad: F, nu0: f64, block_dims: Vec<usize>) -> Result<LipschitzCoupling>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
{
    if !(nu0 >= 0.0) || !nu0.is_finite() {
        return Err(FbfError::Config(format!("nu0 must be finite and >= 0, got {nu0}")));
    }
    if block_dims.is_empty() || block_dims.contains(&0) {
        return Err(FbfError::Spec("coupling block dims must be positive".into()));
    }
    let n: usize = block_dims.iter().sum();
    let probe = phi_grad(&vec![0.0; n]);
    if probe.len() != n {
        return Err(FbfError::Spec(format!(
            "gradient returns length {} on a {n}-dimensional space",
            probe.len()
        )));
    }
    Ok(LipschitzCoupling {
        block_dims,
        nu0,
        map: Arc::new(phi_grad),
        is_zero: false,
        tag: "gradient".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn cat(name: &str, params: Value, dim: usize) -> ProxFunction {
        prox_catalog(name, &params, dim).unwrap()
    }

    #[test]
    fn l1_soft_thresholds() {
        let f = cat("l1", json!({"weight": 1.0}), 3);
        assert_eq!(f.prox(1.0, &[2.0, -0.5, 0.0]), vec![1.0, 0.0, 0.0]);
        let g = cat("l1", json!({"weight": [0.5, 2.0]}), 2);
        assert_eq!(g.prox(2.0, &[3.0, -5.0]), vec![2.0, -1.0]);
    }

    #[test]
    fn box_projection_ignores_gamma() {
        let f = cat("indicator_box", json!({"lo": 0.0, "hi": 1.0}), 3);
        assert_eq!(f.prox(7.0, &[-3.0, 0.4, 9.0]), vec![0.0, 0.4, 1.0]);
        assert_eq!(f.value(&[0.5, 0.5, 2.0]), f64::INFINITY);
    }

    #[test]
    fn group_shrinkage() {
        let f = cat("group_l12", json!({"weight": 1.0, "block_size": 2}), 2);
        let p = f.prox(1.0, &[3.0, 4.0]);
        assert!((p[0] - 2.4).abs() < 1e-15 && (p[1] - 3.2).abs() < 1e-15);
        // zero block maps to zero
        assert_eq!(f.prox(1.0, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn group_of_size_one_is_soft_threshold() {
        let g = cat("group_l12", json!({"weight": 0.7, "block_size": 1}), 4);
        let l = cat("l1", json!({"weight": 0.7}), 4);
        let x = [1.5, -0.2, -3.0, 0.69];
        let d = linalg::dist(&g.prox(1.3, &x), &l.prox(1.3, &x));
        assert!(d <= 1e-15, "{d}");
    }

    #[test]
    fn channel_groups_are_strided() {
        let f = cat("group_l12", json!({"weight": 1.0, "channels": 2}), 4);
        let ProxFunction::GroupL12 { groups, .. } = &f else { panic!() };
        assert_eq!(groups, &vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn quadratic_fidelity_matches_closed_form() {
        // ½‖x‖² (T = Id, r = 0): prox = x / (1 + γ)
        let f = cat(
            "quadratic_fidelity",
            json!({"terms": [{"weight": 1.0, "op": {"builder": "identity", "params": {"dim": 2}}, "r": [0.0, 0.0]}]}),
            2,
        );
        let p = f.prox(0.5, &[3.0, -1.5]);
        assert!((p[0] - 2.0).abs() < 1e-14 && (p[1] + 1.0).abs() < 1e-14);
        // self-conjugate
        assert!((f.conjugate(&[2.0, 0.0]).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn affine_projection() {
        let f = cat("indicator_affine", json!({"E": [[1.0, 1.0]], "d": [2.0]}), 2);
        let p = f.prox(3.0, &[0.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
        assert_eq!(f.value(&p), 0.0);
        // support function of the line x1 + x2 = 2 along its normal
        assert!((f.conjugate(&[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(f.conjugate(&[1.0, 0.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn scaled_translated_shifts() {
        let f = cat(
            "scaled_translated",
            json!({"inner": {"prox": "l1", "params": {"weight": 1.0}}, "offset": [1.0], "scale": 2.0}),
            1,
        );
        // prox of 2|x - 1| at 5 with γ = 1: 1 + soft(4, 2) = 3
        assert_eq!(f.prox(1.0, &[5.0]), vec![3.0]);
        assert_eq!(f.value(&[3.0]), 4.0);
    }

    #[test]
    fn augmented_prox_and_conjugate() {
        let f = cat(
            "quadratic_augmented",
            json!({"inner": {"prox": "l1", "params": {"weight": 1.0}}, "mu": 0.5}),
            1,
        );
        // argmin |y| + ½y² + ½(y - 3)² → y = 1
        assert!((f.prox(1.0, &[3.0])[0] - 1.0).abs() < 1e-15);
        // (|·| + ½(·)²)*(u) = ½ max(|u| - 1, 0)²
        assert!((f.conjugate(&[3.0]).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(f.conjugate(&[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn catalog_errors() {
        assert!(matches!(prox_catalog("nope", &json!({}), 2), Err(FbfError::Config(_))));
        assert!(prox_catalog("group_l12", &json!({"weight": 1.0, "block_size": 3}), 4).is_err());
        assert!(prox_catalog("group_l12", &json!({"blocks": [[0, 1], [1]]}), 2).is_err());
        assert!(prox_catalog("indicator_box", &json!({"lo": 1.0, "hi": 0.0}), 2).is_err());
        assert!(prox_catalog("l1", &json!({"weight": [1.0]}), 2).is_err());
        assert!(prox_catalog("quadratic_fidelity", &json!({"terms": [{"weight": -1.0, "op": [[1.0]], "r": [0.0]}]}), 1).is_err());
    }

    #[test]
    fn resolvent_of_inverse_examples() {
        // A = ∂(½‖·‖²) is its own inverse
        let q = ResolventOp::from_prox(Arc::new(cat(
            "quadratic_fidelity",
            json!({"terms": [{"op": [[1.0]], "r": [0.0]}]}),
            1,
        )));
        assert!((resolvent_of_inverse(&q, 1.0, &[2.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        // A = ∂‖·‖₁: J_{A⁻¹} projects onto [-1, 1]
        let l1 = ResolventOp::from_prox(Arc::new(cat("l1", json!({}), 1)));
        assert_eq!(resolvent_of_inverse(&l1, 1.0, &[0.4]).unwrap(), vec![0.4]);
        assert_eq!(resolvent_of_inverse(&l1, 1.0, &[3.0]).unwrap(), vec![1.0]);
        assert!(resolvent_of_inverse(&l1, 0.0, &[3.0]).is_err());
        assert!(resolvent_of_inverse(&l1, 1.0, &[3.0, 1.0]).is_err());
    }

    #[test]
    fn coupling_examples() {
        let z = gradient_coupling(|x| vec![0.0; x.len()], 0.0, vec![2, 3]).unwrap();
        assert_eq!(z.nu0, 0.0);
        assert_eq!(z.apply(&[1.0; 5]), vec![0.0; 5]);
        let id = gradient_coupling(|x| x.to_vec(), 1.0, vec![2, 3]).unwrap();
        let blocks = id.apply_blocks(&[vec![1.0, 2.0], vec![3.0, 4.0, 5.0]]);
        assert_eq!(blocks, vec![vec![1.0, 2.0], vec![3.0, 4.0, 5.0]]);
        assert!((id.lipschitz_ratio(10, 1) - 1.0).abs() < 1e-12);
        assert!(id.monotonicity_margin(10, 1) > 0.0);
        assert!(gradient_coupling(|x| x.to_vec(), -1.0, vec![1]).is_err());
        assert!(gradient_coupling(|_| vec![0.0], 1.0, vec![2]).is_err());
    }

    #[test]
    fn skew_linear_coupling_is_monotone() {
        let k = DenseMatrix::from_rows(&[vec![0.0, 2.0], vec![-2.0, 0.0]]).unwrap();
        let c = LipschitzCoupling::linear(k, vec![1, 1]).unwrap();
        assert!((c.nu0 - 2.02).abs() < 1e-8);
        assert!(c.monotonicity_margin(20, 3).abs() < 1e-12);
    }
}
