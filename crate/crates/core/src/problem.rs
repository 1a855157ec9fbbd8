//! JSON problem files: schema, loading with path-aware errors, and
//! assembly into a solvable system.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::builders::{parse_params, pointer_of, OpDesc};
use crate::error::{FbfError, Result};
use crate::linalg::DenseMatrix;
use crate::linop::LinOp;
use crate::minimize::{self, MinimizationSpec, SmoothFunction};
use crate::prox::{self, FidelityParams, LipschitzCoupling, ProxEntry, ProxFunction, ResolventOp};
use crate::solver::{self, ErrorSchedule, IterateState, SolveOptions, StepPolicy};
use crate::system::{self, SpaceLayout, SystemParts, SystemSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Inclusion,
    Minimization,
}

/// `{"builder": "quadratic_fidelity", "params": {"terms": [...]}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothEntry {
    pub builder: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingEntry {
    Zero,
    /// `x ↦ Kx` with `K + Kᵀ ⪰ 0`
    Linear { matrix: Vec<Vec<f64>> },
    Gradient { smooth: SmoothEntry },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_sequence: Option<Vec<f64>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
}

fn default_tol() -> f64 {
    solver::DEFAULT_TOL
}
fn default_max_iter() -> usize {
    solver::DEFAULT_MAX_ITER
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_trace_every() -> usize {
    1
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            gamma: None,
            gamma_sequence: None,
            tol: default_tol(),
            max_iter: default_max_iter(),
            seed: default_seed(),
            trace_every: default_trace_every(),
        }
    }
}

impl SolverConfig {
    /// Step policy for a system with constant `beta`; ε defaults to
    /// `min(0.01, 0.5/(β+1))`.
    pub fn policy(&self, beta: f64) -> Result<StepPolicy> {
        let eps = self.epsilon.unwrap_or_else(|| solver::default_epsilon(beta));
        match (&self.gamma, &self.gamma_sequence) {
            (Some(_), Some(_)) => Err(FbfError::Config("give either gamma or gamma_sequence, not both".into())),
            (_, Some(seq)) => solver::make_sequence_policy(beta, eps, seq.clone()),
            (g, None) => solver::make_policy(beta, eps, *g),
        }
    }

    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            trace_every: self.trace_every,
            ..SolveOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorConfig {
    pub schedule: String,
    #[serde(default)]
    pub params: Value,
}

impl Default for ErrorConfig {
    fn default() -> Self {
        Self {
            schedule: "zero".into(),
            params: Value::Null,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometricParams {
    rho: f64,
    amplitude: f64,
}

impl ErrorConfig {
    pub fn build(&self, seed: u64) -> Result<ErrorSchedule> {
        match self.schedule.as_str() {
            "zero" => Ok(ErrorSchedule::zero()),
            "geometric" => {
                let p: GeometricParams = parse_params(&self.params)?;
                ErrorSchedule::geometric(p.rho, p.amplitude, seed)
            }
            other => Err(FbfError::Config(format!("unknown error schedule '{other}' (known: zero, geometric)"))),
        }
    }
}

/// On-disk problem description. Operators are dense row-major arrays or
/// named builders; functions are catalog entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: u32,
    pub kind: ProblemKind,
    pub layout: SpaceLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    /// `L[k][i]: H_i → G_k`
    #[serde(rename = "L")]
    pub l: Vec<Vec<OpDesc>>,
    #[serde(rename = "M")]
    pub m: Vec<OpDesc>,
    #[serde(rename = "N")]
    pub n: Vec<OpDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<ProxEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth: Option<SmoothEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<ProxEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<Vec<ProxEntry>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<ProxEntry>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<ProxEntry>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<ProxEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingEntry>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub errors: ErrorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<IterateState>,
}

/// A problem file turned into solver inputs.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub system: SystemSpec,
    pub minimization: Option<MinimizationSpec>,
    pub config: SolverConfig,
    pub errors: ErrorSchedule,
    pub init: IterateState,
}

fn at(path: &str, e: FbfError) -> FbfError {
    match e {
        FbfError::Schema { path: p, message } => FbfError::Schema {
            path: format!("{path}/{p}"),
            message,
        },
        FbfError::Spec(m) | FbfError::Config(m) => FbfError::Schema {
            path: path.to_string(),
            message: m,
        },
        other => other,
    }
}

fn schema(path: &str, message: &str) -> FbfError {
    FbfError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    let mut de = serde_json::Deserializer::from_str(text);
    let p: ProblemFile = serde_path_to_error::deserialize(&mut de).map_err(|e| FbfError::Schema {
        path: format!("/{}", pointer_of(e.path())),
        message: e.inner().to_string(),
    })?;
    if p.version != SCHEMA_VERSION {
        return Err(schema("/version", &format!("unsupported version {}, expected {SCHEMA_VERSION}", p.version)));
    }
    Ok(p)
}

pub fn load_problem(path: &Path) -> Result<ProblemFile> {
    let text = std::fs::read_to_string(path).map_err(|e| FbfError::Io(format!("{}: {e}", path.display())))?;
    parse_problem(&text)
}

fn smooth_from_entry(e: &SmoothEntry, dim: usize, path: &str) -> Result<SmoothFunction> {
    match e.builder.as_str() {
        "quadratic_fidelity" => {
            let p: FidelityParams = parse_params(&e.params).map_err(|err| at(path, err))?;
            let q = p.build(Some(dim)).map_err(|err| at(&format!("{path}/params"), err))?;
            Ok(SmoothFunction::Quadratic(Arc::new(q)))
        }
        other => Err(schema(&format!("{path}/builder"), &format!("unknown smooth builder '{other}' (known: quadratic_fidelity)"))),
    }
}

fn entries(list: &Option<Vec<ProxEntry>>, name: &str, dims: &[usize]) -> Result<Vec<Arc<ProxFunction>>> {
    let list = list.as_ref().ok_or_else(|| schema(&format!("/{name}"), "missing"))?;
    if list.len() != dims.len() {
        return Err(schema(&format!("/{name}"), &format!("expected {} entries, got {}", dims.len(), list.len())));
    }
    list.iter()
        .zip(dims)
        .enumerate()
        .map(|(j, (e, &d))| {
            prox::prox_from_entry(e, d)
                .map(Arc::new)
                .map_err(|err| at(&format!("/{name}/{j}"), err))
        })
        .collect()
}

fn forbid<T>(v: &Option<T>, name: &str, kind: &str) -> Result<()> {
    if v.is_some() {
        return Err(schema(&format!("/{name}"), &format!("not allowed for kind '{kind}'")));
    }
    Ok(())
}

impl ProblemFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files always serialize")
    }

    pub fn build(&self) -> Result<BuiltProblem> {
        let layout = SpaceLayout::new(
            self.layout.h_dims.clone(),
            self.layout.g_dims.clone(),
            self.layout.y_dims.clone(),
            self.layout.x_dims.clone(),
        )
        .map_err(|e| at("/layout", e))?;
        let (m, s) = (layout.m(), layout.s());
        let vecs = |v: &Option<Vec<Vec<f64>>>, dims: &[usize], name: &str| -> Result<Vec<Vec<f64>>> {
            match v {
                None => Ok(dims.iter().map(|&d| vec![0.0; d]).collect()),
                Some(v) => {
                    if v.len() != dims.len() {
                        return Err(schema(&format!("/{name}"), &format!("expected {} blocks", dims.len())));
                    }
                    for (j, (b, d)) in v.iter().zip(dims).enumerate() {
                        if b.len() != *d {
                            return Err(schema(&format!("/{name}/{j}"), &format!("expected length {d}, got {}", b.len())));
                        }
                    }
                    Ok(v.clone())
                }
            }
        };
        let z = vecs(&self.z, &layout.h_dims, "z")?;
        let r = vecs(&self.r, &layout.g_dims, "r")?;
        let ops = |list: &[OpDesc], name: &str| -> Result<Vec<LinOp>> {
            if list.len() != s {
                return Err(schema(&format!("/{name}"), &format!("expected {s} operators, got {}", list.len())));
            }
            list.iter()
                .enumerate()
                .map(|(k, o)| o.build().map_err(|e| at(&format!("/{name}/{k}"), e)))
                .collect()
        };
        let m_op = ops(&self.m, "M")?;
        let n_op = ops(&self.n, "N")?;
        if self.l.len() != s {
            return Err(schema("/L", &format!("expected {s} rows, got {}", self.l.len())));
        }
        let mut l_op = Vec::with_capacity(s);
        for (k, row) in self.l.iter().enumerate() {
            if row.len() != m {
                return Err(schema(&format!("/L/{k}"), &format!("expected {m} operators, got {}", row.len())));
            }
            let built: Result<Vec<LinOp>> = row
                .iter()
                .enumerate()
                .map(|(i, o)| o.build().map_err(|e| at(&format!("/L/{k}/{i}"), e)))
                .collect();
            l_op.push(built?);
        }
        let total: usize = layout.h_dims.iter().sum();

        let (system, minimization) = match self.kind {
            ProblemKind::Minimization => {
                for (v, n) in [(&self.a, "A"), (&self.b, "B"), (&self.d, "D")] {
                    forbid(v, n, "minimization")?;
                }
                forbid(&self.coupling, "coupling", "minimization")?;
                let f = entries(&self.f, "f", &layout.h_dims)?;
                let g = entries(&self.g, "g", &layout.y_dims)?;
                let ell = entries(&self.ell, "ell", &layout.x_dims)?;
                let phi = match &self.smooth {
                    None => SmoothFunction::Zero,
                    Some(e) => smooth_from_entry(e, total, "/smooth")?,
                };
                let ms = MinimizationSpec::new(layout.clone(), f, phi, g, ell, m_op, n_op, l_op, z, r)?;
                (minimize::build_system(&ms)?, Some(ms))
            }
            ProblemKind::Inclusion => {
                for (v, n) in [(&self.f, "f"), (&self.g, "g"), (&self.ell, "ell")] {
                    forbid(v, n, "inclusion")?;
                }
                forbid(&self.smooth, "smooth", "inclusion")?;
                let res = |v: Vec<Arc<ProxFunction>>| v.into_iter().map(ResolventOp::from_prox).collect::<Vec<_>>();
                let a = res(entries(&self.a, "A", &layout.h_dims)?);
                let b = res(entries(&self.b, "B", &layout.y_dims)?);
                let d = res(entries(&self.d, "D", &layout.x_dims)?);
                let c = match &self.coupling {
                    None | Some(CouplingEntry::Zero) => LipschitzCoupling::zero(layout.h_dims.clone()),
                    Some(CouplingEntry::Linear { matrix }) => {
                        let k = DenseMatrix::from_rows(matrix).map_err(|e| at("/coupling/matrix", e))?;
                        LipschitzCoupling::linear(k, layout.h_dims.clone()).map_err(|e| at("/coupling/matrix", e))?
                    }
                    Some(CouplingEntry::Gradient { smooth }) => {
                        let phi = smooth_from_entry(smooth, total, "/coupling/smooth")?;
                        let nu0 = phi.nu0()?;
                        prox::gradient_coupling(move |x| phi.gradient(x), nu0, layout.h_dims.clone())?
                    }
                };
                let spec = SystemSpec::new(SystemParts {
                    layout: layout.clone(),
                    z,
                    r,
                    a,
                    c,
                    b,
                    d,
                    m_op,
                    n_op,
                    l_op,
                });
                (spec, None)
            }
        };
        let errors = self.errors.build(self.solver.seed).map_err(|e| at("/errors", e))?;
        let init = match &self.init {
            Some(st) => {
                st.check_dims(&layout).map_err(|e| at("/init", e))?;
                st.clone()
            }
            None => IterateState::zeros(&layout),
        };
        Ok(BuiltProblem {
            system,
            minimization,
            config: self.solver.clone(),
            errors,
            init,
        })
    }
}

impl BuiltProblem {
    /// Validates the system and derives the step policy; every failure
    /// surfaces here, before iteration 0.
    pub fn prepare(&self) -> Result<(f64, StepPolicy)> {
        system::ensure_valid(&self.system)?;
        let beta = system::compute_beta(&self.system)?;
        let policy = self.config.policy(beta)?;
        Ok((beta, policy))
    }
}
