//! Brute-force references for tests: nested grid search, dense KKT solves,
//! Jacobi singular values and closed forms. Nothing here calls the solver.

use crate::error::{FbfError, Result};
use crate::exec::ExecPolicy;
use crate::linalg::DenseMatrix;

pub const GRID_POINTS: usize = 41;
pub const GRID_SHRINK: f64 = 4.0;

/// Nested grid search over a box in 1–3 dimensions: 41 points per axis,
/// recentred on the best point and shrunk 4× per level. Points are clamped
/// into the box; the best value never increases across levels.
pub fn grid_refine_minimize<F>(objective: F, lo: &[f64], hi: &[f64], levels: usize, exec: ExecPolicy) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let d = lo.len();
    if !(1..=3).contains(&d) || hi.len() != d {
        return Err(FbfError::Config(format!("grid oracle supports 1 to 3 dims, got {d}")));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
        return Err(FbfError::Config("grid oracle needs lo <= hi".into()));
    }
    let mut center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let total = GRID_POINTS.pow(d as u32);
    let mid = (GRID_POINTS / 2) as f64;
    for _ in 0..levels.max(1) {
        let (c, h) = (center.clone(), half.clone());
        let vals = exec.map(total, |flat| {
            let mut p = vec![0.0; d];
            let mut rem = flat;
            for a in 0..d {
                let j = (rem % GRID_POINTS) as f64;
                rem /= GRID_POINTS;
                p[a] = (c[a] + (j - mid) * h[a] / mid).clamp(lo[a], hi[a]);
            }
            let v = objective(&p);
            (p, v)
        });
        for (p, v) in vals {
            if v.is_nan() {
                continue;
            }
            if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                best = Some((p, v));
            }
        }
        match &best {
            Some((p, v)) if v.is_finite() => center = p.clone(),
            _ => {}
        }
        half.iter_mut().for_each(|h| *h /= GRID_SHRINK);
    }
    match best {
        Some((p, v)) if v.is_finite() => Ok((p, v)),
        _ => Err(FbfError::Oracle("objective is +inf on every grid point (infeasible)".into())),
    }
}

/// Gaussian elimination with partial pivoting on a dense square system.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[piv][col].abs() <= 1e-13 * scale {
            return Err(FbfError::Oracle("singular linear system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[row][j] -= f * a[col][j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

/// `argmin ½xᵀQx + cᵀx s.t. Ex = d` from the dense KKT system
/// `[Q Eᵀ; E 0][x; λ] = [−c; d]`. `E` may have zero rows.
pub fn kkt_quadratic_solve(q: &DenseMatrix, c: &[f64], e: &DenseMatrix, d: &[f64]) -> Result<Vec<f64>> {
    let n = q.rows;
    let p = e.rows;
    if q.cols != n || c.len() != n || d.len() != p || (p > 0 && e.cols != n) {
        return Err(FbfError::Oracle("kkt_quadratic_solve: inconsistent dimensions".into()));
    }
    let mut k = vec![vec![0.0; n + p]; n + p];
    let mut rhs = vec![0.0; n + p];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = q.get(i, j);
        }
        rhs[i] = -c[i];
    }
    for r in 0..p {
        for j in 0..n {
            k[n + r][j] = e.get(r, j);
            k[j][n + r] = e.get(r, j);
        }
        rhs[n + r] = d[r];
    }
    let sol = gauss_solve(k, rhs)?;
    Ok(sol[..n].to_vec())
}

/// Largest singular value from cyclic Jacobi rotations on `AᵀA`.
pub fn dense_svd_norm(a: &DenseMatrix) -> f64 {
    let n = a.cols;
    if n == 0 || a.rows == 0 {
        return 0.0;
    }
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..a.rows).map(|r| a.get(r, i) * a.get(r, j)).sum();
            g[i][j] = s;
            g[j][i] = s;
        }
    }
    let frob: f64 = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return 0.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| g[i][j] * g[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if g[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (g[q][q] - g[p][p]) / (2.0 * g[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (gkp, gkq) = (g[k][p], g[k][q]);
                    g[k][p] = c * gkp - s * gkq;
                    g[k][q] = s * gkp + c * gkq;
                }
                for k in 0..n {
                    let (gpk, gqk) = (g[p][k], g[q][k]);
                    g[p][k] = c * gpk - s * gqk;
                    g[q][k] = s * gpk + c * gqk;
                }
            }
        }
    }
    (0..n).map(|i| g[i][i]).fold(0.0_f64, f64::max).sqrt()
}

pub fn soft_threshold(x: &[f64], t: f64) -> Vec<f64> {
    x.iter().map(|v| v.signum() * (v.abs() - t).max(0.0)).collect()
}

/// `argmin λ‖x‖₁ + μ‖x‖² + ½‖Tx − b‖²` for `TᵀT = Id`:
/// `soft(Tᵀb, λ) / (1 + 2μ)`.
pub fn lasso_orthonormal(t: &DenseMatrix, b: &[f64], lambda: f64, mu: f64) -> Vec<f64> {
    let tb = t.tmatvec(b);
    soft_threshold(&tb, lambda).into_iter().map(|v| v / (1.0 + 2.0 * mu)).collect()
}
