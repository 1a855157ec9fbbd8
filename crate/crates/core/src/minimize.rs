//! Convex minimization front end: maps `f_i, φ, g_k, ℓ_k` and the linear
//! structure onto the inclusion system, and evaluates surrogate primal and
//! dual objectives.

use std::sync::Arc;

use crate::error::{FbfError, Result};
use crate::linalg::{self, DenseMatrix};
use crate::linop::LinOp;
use crate::prox::{self, LipschitzCoupling, ProxFunction, QuadraticFidelity, ResolventOp, FEAS_TOL};
use crate::system::{SpaceLayout, SystemParts, SystemSpec};

/// Largest operator size densified when evaluating conjugates of
/// compositions.
pub const MAX_DENSE_CONJUGATE_DIM: usize = 512;

type VecFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The smooth coupling term `φ` on `H_1 ⊕ … ⊕ H_m` (concatenated blocks).
#[derive(Clone)]
pub enum SmoothFunction {
    Zero,
    Quadratic(Arc<QuadraticFidelity>),
    Custom {
        value: ScalarFn,
        gradient: VecFn,
        nu0: f64,
    },
}

impl std::fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SmoothFunction::Zero => write!(f, "Zero"),
            SmoothFunction::Quadratic(q) => write!(f, "Quadratic(dim {}, {} terms)", q.dim, q.terms.len()),
            SmoothFunction::Custom { nu0, .. } => write!(f, "Custom(nu0 = {nu0})"),
        }
    }
}

impl SmoothFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            SmoothFunction::Zero => 0.0,
            SmoothFunction::Quadratic(q) => q.value(x),
            SmoothFunction::Custom { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SmoothFunction::Zero => vec![0.0; x.len()],
            SmoothFunction::Quadratic(q) => q.gradient(x),
            SmoothFunction::Custom { gradient, .. } => gradient(x),
        }
    }

    pub fn nu0(&self) -> Result<f64> {
        match self {
            SmoothFunction::Zero => Ok(0.0),
            SmoothFunction::Quadratic(q) => q.lipschitz(),
            SmoothFunction::Custom { nu0, .. } => Ok(*nu0),
        }
    }

    pub fn conjugate(&self, u: &[f64]) -> Result<f64> {
        match self {
            SmoothFunction::Zero => Ok(if linalg::norm_inf(u) <= FEAS_TOL { 0.0 } else { f64::INFINITY }),
            SmoothFunction::Quadratic(q) => Ok(q.conjugate(u)),
            SmoothFunction::Custom { .. } => Err(FbfError::NotComputable(
                "conjugate of a user-supplied smooth function".into(),
            )),
        }
    }
}

/// `min Σ_k ((ℓ_k∘N_k) □ (g_k∘M_k))(Σ_i L_{k,i}x_i − r_k) + Σ_i (f_i(x_i) − ⟨x_i,z_i⟩) + φ(x)`.
#[derive(Debug, Clone)]
pub struct MinimizationSpec {
    pub layout: SpaceLayout,
    pub f: Vec<Arc<ProxFunction>>,
    pub phi: SmoothFunction,
    pub g: Vec<Arc<ProxFunction>>,
    pub ell: Vec<Arc<ProxFunction>>,
    pub m_op: Vec<LinOp>,
    pub n_op: Vec<LinOp>,
    /// `l_op[k][i]: H_i → G_k`
    pub l_op: Vec<Vec<LinOp>>,
    pub z: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

impl MinimizationSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layout: SpaceLayout,
        f: Vec<Arc<ProxFunction>>,
        phi: SmoothFunction,
        g: Vec<Arc<ProxFunction>>,
        ell: Vec<Arc<ProxFunction>>,
        m_op: Vec<LinOp>,
        n_op: Vec<LinOp>,
        l_op: Vec<Vec<LinOp>>,
        z: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let (m, s) = (layout.m(), layout.s());
        let bad = |what: &str| Err(FbfError::Spec(what.to_string()));
        if f.len() != m || z.len() != m {
            return bad("f and z need one entry per primal block");
        }
        if [g.len(), ell.len(), m_op.len(), n_op.len(), l_op.len(), r.len()].iter().any(|&n| n != s) {
            return bad("g, ell, M, N, L and r need one entry per coupled block");
        }
        for i in 0..m {
            if f[i].dim() != layout.h_dims[i] || z[i].len() != layout.h_dims[i] {
                return Err(FbfError::Spec(format!("f/{i} or z/{i} does not match dim {}", layout.h_dims[i])));
            }
        }
        for k in 0..s {
            if g[k].dim() != layout.y_dims[k] {
                return Err(FbfError::Spec(format!("g/{k} has dim {}, Y_{k} has {}", g[k].dim(), layout.y_dims[k])));
            }
            if ell[k].dim() != layout.x_dims[k] {
                return Err(FbfError::Spec(format!("ell/{k} has dim {}, X_{k} has {}", ell[k].dim(), layout.x_dims[k])));
            }
            if r[k].len() != layout.g_dims[k] {
                return Err(FbfError::Spec(format!("r/{k} does not match dim {}", layout.g_dims[k])));
            }
            if l_op[k].len() != m {
                return Err(FbfError::Spec(format!("L/{k} needs {m} entries")));
            }
        }
        let total: usize = layout.h_dims.iter().sum();
        if let SmoothFunction::Quadratic(q) = &phi {
            if q.dim != total {
                return Err(FbfError::Spec(format!("smooth term acts on dim {}, primal space has {total}", q.dim)));
            }
        }
        Ok(Self {
            layout,
            f,
            phi,
            g,
            ell,
            m_op,
            n_op,
            l_op,
            z,
            r,
        })
    }

    fn flat(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().flatten().copied().collect()
    }
}

/// `A_i = ∂f_i`, `C = ∇φ`, `B_k = ∂g_k`, `D_k = ∂ℓ_k`; resolvents are the
/// proximity operators.
pub fn build_system(spec: &MinimizationSpec) -> Result<SystemSpec> {
    let c = match &spec.phi {
        SmoothFunction::Zero => LipschitzCoupling::zero(spec.layout.h_dims.clone()),
        phi => {
            let nu0 = phi.nu0()?;
            let p = phi.clone();
            prox::gradient_coupling(move |x| p.gradient(x), nu0, spec.layout.h_dims.clone())?
        }
    };
    let res = |v: &[Arc<ProxFunction>]| v.iter().map(|f| ResolventOp::from_prox(f.clone())).collect();
    Ok(SystemSpec::new(SystemParts {
        layout: spec.layout.clone(),
        z: spec.z.clone(),
        r: spec.r.clone(),
        a: res(&spec.f),
        c,
        b: res(&spec.g),
        d: res(&spec.ell),
        m_op: spec.m_op.clone(),
        n_op: spec.n_op.clone(),
        l_op: spec.l_op.clone(),
    }))
}

/// `Σ_k [ℓ_k(N_k(Σ_i L_{k,i}x_i − r_k − y_k)) + g_k(M_k y_k)] + Σ_i [f_i(x_i) − ⟨x_i,z_i⟩] + φ(x)`,
/// an upper bound of the primal objective for every splitting `y`.
pub fn primal_surrogate(spec: &MinimizationSpec, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let l = &spec.layout;
    if x.len() != l.m() || y.len() != l.s() {
        return Err(FbfError::Spec("primal_surrogate: wrong number of blocks".into()));
    }
    for (i, xi) in x.iter().enumerate() {
        if xi.len() != l.h_dims[i] {
            return Err(FbfError::Spec(format!("primal_surrogate: x/{i} has wrong length")));
        }
    }
    for (k, yk) in y.iter().enumerate() {
        if yk.len() != l.g_dims[k] {
            return Err(FbfError::Spec(format!("primal_surrogate: y/{k} has wrong length")));
        }
    }
    let mut total = 0.0;
    for k in 0..l.s() {
        let mut arg = vec![0.0; l.g_dims[k]];
        for (i, xi) in x.iter().enumerate() {
            linalg::add_assign(&mut arg, &spec.l_op[k][i].apply(xi));
        }
        for ((a, r), yv) in arg.iter_mut().zip(&spec.r[k]).zip(&y[k]) {
            *a -= r + yv;
        }
        total += spec.ell[k].value(&spec.n_op[k].apply(&arg));
        total += spec.g[k].value(&spec.m_op[k].apply(&y[k]));
    }
    for (i, xi) in x.iter().enumerate() {
        total += spec.f[i].value(xi) - linalg::dot(xi, &spec.z[i]);
    }
    total += spec.phi.value(&spec.flat(x));
    Ok(total)
}

fn in_range_of_adjoint(a: &DenseMatrix, v: &[f64]) -> bool {
    // v ∈ ran Aᵀ iff A⁺A v = v
    let an = a.to_nalgebra();
    let Ok(pinv) = an.clone().pseudo_inverse(1e-12 * an.norm().max(1.0)) else {
        return false;
    };
    let proj = &pinv * (&an * nalgebra::DVector::from_column_slice(v));
    let d: f64 = proj.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    d <= FEAS_TOL * (1.0 + linalg::norm(v))
}

/// `(h∘A)*(v)` for the cases with a closed form: `h = ι_{0}` gives
/// `ι_{ran A*}`, `h = 0` gives `ι_{0}`, and invertible `A` gives
/// `h*(A^{-*}v)`.
pub fn composed_conjugate(h: &ProxFunction, op: &LinOp, v: &[f64]) -> Result<f64> {
    let indicator = |ok: bool| if ok { 0.0 } else { f64::INFINITY };
    match h {
        ProxFunction::ZeroFunction { .. } => return Ok(indicator(linalg::norm_inf(v) <= FEAS_TOL)),
        _ if op.is_zero() => return Ok(indicator(linalg::norm_inf(v) <= FEAS_TOL) - h.value(&vec![0.0; op.out_dim()])),
        _ => {}
    }
    if op.in_dim() > MAX_DENSE_CONJUGATE_DIM || op.out_dim() > MAX_DENSE_CONJUGATE_DIM {
        return Err(FbfError::NotComputable(format!("conjugate through the large operator {}", op.tag())));
    }
    let a = op.to_dense();
    if let ProxFunction::IndicatorZero { .. } = h {
        return Ok(indicator(in_range_of_adjoint(&a, v)));
    }
    if a.rows == a.cols {
        let an = a.to_nalgebra();
        let sv = an.clone().singular_values();
        let (smax, smin) = sv.iter().fold((0.0_f64, f64::INFINITY), |(hi, lo), s| (hi.max(*s), lo.min(*s)));
        if smin > 1e-10 * smax.max(1.0) {
            let at = an.transpose();
            if let Some(sol) = at.lu().solve(&nalgebra::DVector::from_column_slice(v)) {
                let w: Vec<f64> = sol.iter().copied().collect();
                return h.conjugate(&w);
            }
        }
    }
    Err(FbfError::NotComputable(format!(
        "conjugate of {} composed with the non-invertible {}",
        h.name(),
        op.tag()
    )))
}

/// Negated upper bound of the dual objective at `v` (blocks in `G_k`),
/// with `φ* □ Σf_i*` bounded through the split point `w` (blocks in
/// `H_i`): `−[φ*(w) + Σ_i f_i*(u_i − w_i) + Σ_k ((ℓ_k∘N_k)*(v_k) + (g_k∘M_k)*(v_k) + ⟨v_k, r_k⟩)]`
/// with `u_i = z_i − Σ_k L_{k,i}* v_k`. Weak duality reads
/// `primal_surrogate ≥ dual_surrogate`.
pub fn dual_surrogate(spec: &MinimizationSpec, v: &[Vec<f64>], w: &[Vec<f64>]) -> Result<f64> {
    let l = &spec.layout;
    if v.len() != l.s() || w.len() != l.m() {
        return Err(FbfError::Spec("dual_surrogate: wrong number of blocks".into()));
    }
    for (k, vk) in v.iter().enumerate() {
        if vk.len() != l.g_dims[k] {
            return Err(FbfError::Spec(format!("dual_surrogate: v/{k} has wrong length")));
        }
    }
    for (i, wi) in w.iter().enumerate() {
        if wi.len() != l.h_dims[i] {
            return Err(FbfError::Spec(format!("dual_surrogate: w/{i} has wrong length")));
        }
    }
    let mut total = spec.phi.conjugate(&spec.flat(w))?;
    for i in 0..l.m() {
        let mut u = spec.z[i].clone();
        for k in 0..l.s() {
            let op = &spec.l_op[k][i];
            if !op.is_zero() {
                linalg::axpy(-1.0, &op.adjoint(&v[k]), &mut u);
            }
        }
        total += spec.f[i].conjugate(&linalg::sub(&u, &w[i]))?;
    }
    for k in 0..l.s() {
        total += composed_conjugate(&spec.ell[k], &spec.n_op[k], &v[k])?;
        total += composed_conjugate(&spec.g[k], &spec.m_op[k], &v[k])?;
        total += linalg::dot(&v[k], &spec.r[k]);
    }
    Ok(-total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dim(f: ProxFunction, g: ProxFunction, ell: ProxFunction) -> MinimizationSpec {
        MinimizationSpec::new(
            SpaceLayout::new(vec![1], vec![1], vec![1], vec![1]).unwrap(),
            vec![Arc::new(f)],
            SmoothFunction::Zero,
            vec![Arc::new(g)],
            vec![Arc::new(ell)],
            vec![LinOp::identity(1)],
            vec![LinOp::identity(1)],
            vec![vec![LinOp::identity(1)]],
            vec![vec![0.0]],
            vec![vec![0.0]],
        )
        .unwrap()
    }

    #[test]
    fn all_zero_instance_surrogates_vanish() {
        let s = one_dim(
            ProxFunction::ZeroFunction { dim: 1 },
            ProxFunction::ZeroFunction { dim: 1 },
            ProxFunction::ZeroFunction { dim: 1 },
        );
        assert_eq!(primal_surrogate(&s, &[vec![0.0]], &[vec![0.0]]).unwrap(), 0.0);
        assert_eq!(dual_surrogate(&s, &[vec![0.0]], &[vec![0.0]]).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_dual_at_zero() {
        let s = one_dim(
            ProxFunction::IndicatorBox { lo: vec![0.0], hi: vec![1.0] },
            ProxFunction::L1 { weights: vec![1.0] },
            ProxFunction::IndicatorZero { dim: 1 },
        );
        assert_eq!(dual_surrogate(&s, &[vec![0.0]], &[vec![0.0]]).unwrap(), 0.0);
    }

    #[test]
    fn custom_smooth_conjugate_is_not_computable() {
        let mut s = one_dim(
            ProxFunction::ZeroFunction { dim: 1 },
            ProxFunction::ZeroFunction { dim: 1 },
            ProxFunction::IndicatorZero { dim: 1 },
        );
        s.phi = SmoothFunction::Custom {
            value: Arc::new(|x| x[0] * x[0]),
            gradient: Arc::new(|x| vec![2.0 * x[0]]),
            nu0: 2.0,
        };
        assert!(matches!(
            dual_surrogate(&s, &[vec![0.0]], &[vec![0.0]]),
            Err(FbfError::NotComputable(_))
        ));
    }

    #[test]
    fn composed_conjugate_cases() {
        let a = LinOp::dense(DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap());
        let iz = ProxFunction::IndicatorZero { dim: 1 };
        assert_eq!(composed_conjugate(&iz, &a, &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(composed_conjugate(&iz, &a, &[2.0, 1.0]).unwrap(), f64::INFINITY);
        let l1 = ProxFunction::L1 { weights: vec![1.0] };
        assert!(matches!(composed_conjugate(&l1, &a, &[0.0, 0.0]), Err(FbfError::NotComputable(_))));
        let two = LinOp::scaled(2.0, LinOp::identity(2));
        let l1b = ProxFunction::L1 { weights: vec![1.0, 1.0] };
        assert_eq!(composed_conjugate(&l1b, &two, &[1.9, -2.0]).unwrap(), 0.0);
        assert_eq!(composed_conjugate(&l1b, &two, &[2.1, 0.0]).unwrap(), f64::INFINITY);
    }
}
