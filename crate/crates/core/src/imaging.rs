//! Image-recovery building blocks: finite-difference gradients, a Haar
//! analysis operator, blurs, observation synthesis, PGM I/O, and the
//! builder for the multi-observation infimal-convolution model.
//!
//! Images are row-major (`index = row * width + col`). Multi-channel
//! outputs are channel-major: channel `c` of pixel `p` lives at `c*K + p`.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{FbfError, Result};
use crate::linalg;
use crate::linop::{self, LinOp, LinearOperator};
use crate::minimize::{MinimizationSpec, SmoothFunction};
use crate::prox::{FidelityTerm, ProxFunction, QuadraticFidelity};
use crate::rng;
use crate::system::SpaceLayout;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(FbfError::Spec(format!(
                "image {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Piecewise-smooth test image: a bright square on a horizontal ramp
    /// with a dim disc, all values inside [0, 1].
    pub fn phantom(height: usize, width: usize) -> Self {
        let mut px = Vec::with_capacity(height * width);
        let (h, w) = (height as f64, width as f64);
        for i in 0..height {
            for j in 0..width {
                let (y, x) = ((i as f64 + 0.5) / h, (j as f64 + 0.5) / w);
                let mut v = 0.2 + 0.3 * x;
                if (0.2..0.55).contains(&y) && (0.15..0.5).contains(&x) {
                    v = 0.9;
                }
                if (y - 0.72).powi(2) + (x - 0.7).powi(2) < 0.04 {
                    v = 0.05;
                }
                px.push(v);
            }
        }
        Self {
            height,
            width,
            pixels: px,
        }
    }

    /// Writes an 8-bit binary PGM (P5), mapping [0, 1] to [0, 255].
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        f.write_all(&bytes)?;
        Ok(())
    }

    /// Reads an 8-bit binary PGM (P5) into [0, 1].
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let bad = |m: &str| FbfError::Io(format!("{}: {m}", path.display()));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&buf[start..pos]).to_string());
        }
        pos += 1;
        if fields[0] != "P5" {
            return Err(bad("only binary P5 images are supported"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit images are supported"));
        }
        let data = buf.get(pos..pos + width * height).ok_or_else(|| bad("truncated pixel data"))?;
        let pixels = data.iter().map(|&b| b as f64 / maxval as f64).collect();
        ImageGrid::new(height, width, pixels)
    }
}

// forward differences with replicate boundary; the last row/column is 0
fn diff_v(x: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let body = (h - 1) * w;
    for ((o, a), b) in out[..body].iter_mut().zip(&x[w..]).zip(&x[..body]) {
        *o = a - b;
    }
    out[body..h * w].fill(0.0);
}

fn diff_h(x: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for (o, r) in out[..h * w].chunks_exact_mut(w).zip(x.chunks_exact(w)) {
        for ((oo, a), b) in o[..w - 1].iter_mut().zip(&r[1..]).zip(&r[..w - 1]) {
            *oo = a - b;
        }
        o[w - 1] = 0.0;
    }
}

// adjoints: accumulate into `out`
fn diff_v_t(y: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let body = (h - 1) * w;
    for (o, v) in out[..w].iter_mut().zip(&y[..w]) {
        *o -= v;
    }
    for ((o, a), b) in out[w..body].iter_mut().zip(&y[..body - w]).zip(&y[w..body]) {
        *o += a - b;
    }
    for (o, v) in out[body..h * w].iter_mut().zip(&y[body - w..body]) {
        *o += v;
    }
}

fn diff_h_t(y: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for (o, r) in out[..h * w].chunks_exact_mut(w).zip(y.chunks_exact(w)) {
        o[0] -= r[0];
        for j in 1..w - 1 {
            o[j] += r[j - 1] - r[j];
        }
        o[w - 1] += r[w - 2];
    }
}

fn grad_into(x: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let k = h * w;
    let (v, hz) = out.split_at_mut(k);
    diff_v(x, h, w, v);
    diff_h(x, h, w, hz);
}

fn grad_adjoint_into(y: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let k = h * w;
    diff_v_t(&y[..k], h, w, out);
    diff_h_t(&y[k..], h, w, out);
}

struct Gradient {
    h: usize,
    w: usize,
}

impl LinearOperator for Gradient {
    fn in_dim(&self) -> usize {
        self.h * self.w
    }
    fn out_dim(&self) -> usize {
        2 * self.h * self.w
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim()];
        grad_into(x, self.h, self.w, &mut out);
        out
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_dim()];
        grad_adjoint_into(y, self.h, self.w, &mut out);
        out
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        grad_into(x, self.h, self.w, out);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        grad_adjoint_into(y, self.h, self.w, out);
    }
    fn tag(&self) -> String {
        format!("gradient{}x{}", self.h, self.w)
    }
}

/// `∇ = (D_v, D_h)`, forward differences with Neumann boundary.
pub fn gradient_op(height: usize, width: usize) -> Result<LinOp> {
    if height < 2 || width < 2 {
        return Err(FbfError::Config(format!(
            "gradient needs an image of at least 2x2, got {height}x{width}"
        )));
    }
    Ok(LinOp::new(Gradient { h: height, w: width }))
}

struct SecondGradient {
    h: usize,
    w: usize,
}

impl LinearOperator for SecondGradient {
    fn in_dim(&self) -> usize {
        self.h * self.w
    }
    fn out_dim(&self) -> usize {
        4 * self.h * self.w
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim()];
        self.apply_into(x, &mut out);
        out
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_dim()];
        self.adjoint_into(y, &mut out);
        out
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.h * self.w;
        let mut first = vec![0.0; 2 * k];
        grad_into(x, self.h, self.w, &mut first);
        let (a, b) = out.split_at_mut(2 * k);
        grad_into(&first[..k], self.h, self.w, a);
        grad_into(&first[k..], self.h, self.w, b);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let k = self.h * self.w;
        let mut first = vec![0.0; 2 * k];
        {
            let (a, b) = first.split_at_mut(k);
            grad_adjoint_into(&y[..2 * k], self.h, self.w, a);
            grad_adjoint_into(&y[2 * k..], self.h, self.w, b);
        }
        out.fill(0.0);
        grad_adjoint_into(&first, self.h, self.w, out);
    }
    fn tag(&self) -> String {
        format!("second_gradient{}x{}", self.h, self.w)
    }
}

/// `∇² = (D_vD_v, D_hD_v, D_vD_h, D_hD_h)`: the gradient applied to each
/// channel of the gradient.
pub fn second_gradient_op(height: usize, width: usize) -> Result<LinOp> {
    if height < 3 || width < 3 {
        return Err(FbfError::Config(format!(
            "second gradient needs an image of at least 3x3, got {height}x{width}"
        )));
    }
    Ok(LinOp::new(SecondGradient { h: height, w: width }))
}

struct Haar {
    h: usize,
    w: usize,
}

impl LinearOperator for Haar {
    fn in_dim(&self) -> usize {
        self.h * self.w
    }
    fn out_dim(&self) -> usize {
        self.h * self.w
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.h * self.w];
        self.apply_into(x, &mut out);
        out
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.h * self.w];
        self.adjoint_into(y, &mut out);
        out
    }
    // both write every output entry
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let (hh, hw) = (self.h / 2, self.w / 2);
        let q = hh * hw;
        for bi in 0..hh {
            for bj in 0..hw {
                let p = 2 * bi * self.w + 2 * bj;
                let (a, b, c, d) = (x[p], x[p + 1], x[p + self.w], x[p + self.w + 1]);
                let o = bi * hw + bj;
                out[o] = 0.5 * (a + b + c + d);
                out[q + o] = 0.5 * (a - b + c - d);
                out[2 * q + o] = 0.5 * (a + b - c - d);
                out[3 * q + o] = 0.5 * (a - b - c + d);
            }
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let (hh, hw) = (self.h / 2, self.w / 2);
        let q = hh * hw;
        for bi in 0..hh {
            for bj in 0..hw {
                let o = bi * hw + bj;
                let (ll, lh, hl, d) = (y[o], y[q + o], y[2 * q + o], y[3 * q + o]);
                let p = 2 * bi * self.w + 2 * bj;
                out[p] = 0.5 * (ll + lh + hl + d);
                out[p + 1] = 0.5 * (ll - lh + hl - d);
                out[p + self.w] = 0.5 * (ll + lh - hl - d);
                out[p + self.w + 1] = 0.5 * (ll - lh - hl + d);
            }
        }
    }
    fn tag(&self) -> String {
        format!("haar{}x{}", self.h, self.w)
    }
}

/// Single-level orthonormal 2-D Haar transform; subbands are stored
/// consecutively as (approximation, horizontal, vertical, diagonal).
pub fn haar_analysis_op(height: usize, width: usize) -> Result<LinOp> {
    if height == 0 || width == 0 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
        return Err(FbfError::Config(format!(
            "haar transform needs even positive dimensions, got {height}x{width}"
        )));
    }
    Ok(LinOp::new(Haar { h: height, w: width }))
}

/// Separable stencil `w1 ⊗ w1` with replicate boundary, applied as a
/// horizontal then a vertical 1-D pass.
struct Stencil {
    h: usize,
    w: usize,
    radius: usize,
    taps: Vec<f64>,
    tag: String,
}

fn clamp_index(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

fn axpy_into(t: f64, x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += t * v;
    }
}

// Interior pixels are handled as long shifted axpys over the flattened
// image; the `radius` rows/columns at each border are redone with clamping.
impl Stencil {
    fn edges(&self, n: usize) -> impl Iterator<Item = usize> {
        let r = self.radius.min(n);
        (0..r).chain(n.saturating_sub(self.radius).max(r)..n)
    }

    fn interior(&self, n: usize) -> bool {
        n > 2 * self.radius
    }

    fn row_pass(&self, x: &[f64], out: &mut [f64]) {
        let (w, r, n) = (self.w, self.radius, self.h * self.w);
        out.fill(0.0);
        if self.interior(w) {
            let len = n - 2 * r;
            for (d, &t) in self.taps.iter().enumerate() {
                axpy_into(t, &x[d..d + len], &mut out[r..r + len]);
            }
        }
        let ri = r as isize;
        for (o, row) in out.chunks_exact_mut(w).zip(x.chunks_exact(w)) {
            for j in self.edges(w) {
                let mut acc = 0.0;
                for (d, t) in (-ri..=ri).zip(&self.taps) {
                    acc += t * row[clamp_index(j as isize + d, w)];
                }
                o[j] = acc;
            }
        }
    }

    fn row_pass_t(&self, y: &[f64], out: &mut [f64]) {
        let (w, r, n) = (self.w, self.radius, self.h * self.w);
        out.fill(0.0);
        if self.interior(w) {
            let mut inner = y.to_vec();
            for row in inner.chunks_exact_mut(w) {
                for j in self.edges(w) {
                    row[j] = 0.0;
                }
            }
            let len = n - 2 * r;
            for (d, &t) in self.taps.iter().enumerate() {
                axpy_into(t, &inner[r..r + len], &mut out[d..d + len]);
            }
        }
        let ri = r as isize;
        for (o, row) in out.chunks_exact_mut(w).zip(y.chunks_exact(w)) {
            for j in self.edges(w) {
                for (d, t) in (-ri..=ri).zip(&self.taps) {
                    o[clamp_index(j as isize + d, w)] += t * row[j];
                }
            }
        }
    }

    fn col_pass(&self, x: &[f64], out: &mut [f64]) {
        let (h, w, r) = (self.h, self.w, self.radius);
        out.fill(0.0);
        if self.interior(h) {
            let len = (h - 2 * r) * w;
            for (d, &t) in self.taps.iter().enumerate() {
                axpy_into(t, &x[d * w..d * w + len], &mut out[r * w..r * w + len]);
            }
        }
        let ri = r as isize;
        for i in self.edges(h) {
            for (d, &t) in (-ri..=ri).zip(&self.taps) {
                let src = clamp_index(i as isize + d, h) * w;
                axpy_into(t, &x[src..src + w], &mut out[i * w..i * w + w]);
            }
        }
    }

    fn col_pass_t(&self, y: &[f64], out: &mut [f64]) {
        let (h, w, r) = (self.h, self.w, self.radius);
        out.fill(0.0);
        if self.interior(h) {
            let len = (h - 2 * r) * w;
            for (d, &t) in self.taps.iter().enumerate() {
                axpy_into(t, &y[r * w..r * w + len], &mut out[d * w..d * w + len]);
            }
        }
        let ri = r as isize;
        for i in self.edges(h) {
            for (d, &t) in (-ri..=ri).zip(&self.taps) {
                let dst = clamp_index(i as isize + d, h) * w;
                axpy_into(t, &y[i * w..i * w + w], &mut out[dst..dst + w]);
            }
        }
    }
}

impl LinearOperator for Stencil {
    fn in_dim(&self) -> usize {
        self.h * self.w
    }
    fn out_dim(&self) -> usize {
        self.h * self.w
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.h * self.w];
        self.apply_into(x, &mut out);
        out
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.h * self.w];
        self.adjoint_into(y, &mut out);
        out
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.h * self.w];
        self.row_pass(x, &mut tmp);
        self.col_pass(&tmp, out);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.h * self.w];
        self.col_pass_t(y, &mut tmp);
        self.row_pass_t(&tmp, out);
    }
    fn tag(&self) -> String {
        self.tag.clone()
    }
}

/// `(2r+1)×(2r+1)` moving average with replicate boundary.
pub fn box_blur_op(height: usize, width: usize, radius: usize) -> Result<LinOp> {
    if height == 0 || width == 0 {
        return Err(FbfError::Config("blur needs a non-empty image".into()));
    }
    let side = 2 * radius + 1;
    Ok(LinOp::new(Stencil {
        h: height,
        w: width,
        radius,
        taps: vec![1.0 / side as f64; side],
        tag: format!("box_blur{height}x{width}r{radius}"),
    }))
}

/// Normalized truncated Gaussian stencil with replicate boundary.
pub fn gaussian_blur_op(height: usize, width: usize, radius: usize, sigma: f64) -> Result<LinOp> {
    if height == 0 || width == 0 || !(sigma > 0.0) {
        return Err(FbfError::Config("gaussian blur needs a non-empty image and sigma > 0".into()));
    }
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|v| *v /= total);
    Ok(LinOp::new(Stencil {
        h: height,
        w: width,
        radius,
        taps,
        tag: format!("gaussian_blur{height}x{width}s{sigma}"),
    }))
}

/// Degraded observations `r_i = T_i x + w_i` with weights `ω_i`.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub observations: Vec<Vec<f64>>,
    pub blur_ops: Vec<LinOp>,
    pub weights: Vec<f64>,
}

impl ObservationSet {
    pub fn new(observations: Vec<Vec<f64>>, blur_ops: Vec<LinOp>, weights: Vec<f64>) -> Result<Self> {
        if observations.len() != blur_ops.len() || weights.len() != blur_ops.len() || blur_ops.is_empty() {
            return Err(FbfError::Spec("observation set needs matching, non-empty lists".into()));
        }
        for (i, (r, t)) in observations.iter().zip(&blur_ops).enumerate() {
            if r.len() != t.out_dim() {
                return Err(FbfError::Spec(format!(
                    "observation {i} has length {}, operator output is {}",
                    r.len(),
                    t.out_dim()
                )));
            }
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(FbfError::Config("observation weights must be > 0".into()));
        }
        Ok(Self {
            observations,
            blur_ops,
            weights,
        })
    }

    /// Synthesizes `T_i truth + σ·noise` from one seeded normal stream per
    /// observation.
    pub fn synthesize(truth: &ImageGrid, blur_ops: Vec<LinOp>, weights: Vec<f64>, sigma: f64, seed: u64) -> Result<Self> {
        let mut obs = Vec::with_capacity(blur_ops.len());
        for (i, t) in blur_ops.iter().enumerate() {
            if t.in_dim() != truth.len() {
                return Err(FbfError::Spec(format!("operator {i} does not act on the image")));
            }
            let mut r = t.apply(&truth.pixels);
            if sigma > 0.0 {
                let mut g = rng::stream(seed, 0x1a6e + i as u64);
                let noise = rng::normal_vec(&mut g, r.len());
                linalg::axpy(sigma, &noise, &mut r);
            }
            obs.push(r);
        }
        Self::new(obs, blur_ops, weights)
    }
}

/// Regularization weights of the recovery model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct App1Weights {
    /// first-order term `α‖∇·‖₁,₂`
    pub alpha: f64,
    /// second-order term `β‖∇²·‖₁,₂`
    pub beta: f64,
    /// wavelet sparsity `γ‖W·‖₁`
    pub gamma: f64,
}

/// Builds
/// `min_{x∈C} Σ ω_k/2‖r_k − T_k x‖² + γ‖Wx‖₁ + (α‖·‖₁,₂∘∇) □ (β‖·‖₁,₂∘∇²)(x)`
/// with two dual blocks: block 0 carries the infimal convolution
/// (`M = ∇, g = α‖·‖₁,₂, N = ∇², ℓ = β‖·‖₁,₂`), block 1 the wavelet term
/// (`M = W, g = γ‖·‖₁, N = Id, ℓ = ι_{0}`).
pub fn build_app1_instance(
    truth: &ImageGrid,
    obs: &ObservationSet,
    weights: App1Weights,
    box_bounds: (f64, f64),
) -> Result<MinimizationSpec> {
    let (h, w) = (truth.height, truth.width);
    let k = h * w;
    if !(weights.alpha > 0.0 && weights.beta > 0.0 && weights.gamma >= 0.0) {
        return Err(FbfError::Config("need alpha > 0, beta > 0, gamma >= 0".into()));
    }
    if !(box_bounds.0 <= box_bounds.1) {
        return Err(FbfError::Config("box needs lo <= hi".into()));
    }
    for (i, t) in obs.blur_ops.iter().enumerate() {
        if t.in_dim() != k {
            return Err(FbfError::Spec(format!("observation operator {i} does not act on a {h}x{w} image")));
        }
    }
    let terms = obs
        .blur_ops
        .iter()
        .zip(&obs.observations)
        .zip(&obs.weights)
        .map(|((t, r), wt)| FidelityTerm {
            weight: *wt,
            op: t.clone(),
            target: r.clone(),
        })
        .collect();
    let phi = SmoothFunction::Quadratic(Arc::new(QuadraticFidelity::new(terms)?));

    let layout = SpaceLayout::new(vec![k], vec![k, k], vec![2 * k, k], vec![4 * k, k])?;
    let f = ProxFunction::IndicatorBox {
        lo: vec![box_bounds.0; k],
        hi: vec![box_bounds.1; k],
    };
    let g = vec![
        Arc::new(ProxFunction::group_l12_channels(weights.alpha, 2, k)),
        Arc::new(ProxFunction::L1 {
            weights: vec![weights.gamma; k],
        }),
    ];
    let ell = vec![
        Arc::new(ProxFunction::group_l12_channels(weights.beta, 4, k)),
        Arc::new(ProxFunction::IndicatorZero { dim: k }),
    ];
    MinimizationSpec::new(
        layout,
        vec![Arc::new(f)],
        phi,
        g,
        ell,
        vec![gradient_op(h, w)?, haar_analysis_op(h, w)?],
        vec![second_gradient_op(h, w)?, LinOp::identity(k)],
        vec![vec![LinOp::identity(k)], vec![LinOp::identity(k)]],
        vec![vec![0.0; k]],
        vec![vec![0.0; k], vec![0.0; k]],
    )
}

/// Classical bound `‖∇‖ ≤ √8` for forward differences.
pub const GRADIENT_NORM_BOUND: f64 = 2.8284271247461903;

/// Norm estimate helper used by tests and reports.
pub fn norm_estimate(op: &LinOp) -> Result<f64> {
    Ok(linop::operator_norm_default(op)?.value)
}
