//! Embedding backends and guidance losses.
//!
//! A backend embeds text and images into a shared D-dimensional space and
//! exposes the vector-Jacobian product of its image encoder, which is all the
//! optimization loop needs from it. The directional loss compares the
//! prompt-minus-reference text direction with the generated-minus-source
//! image direction; the total loss sums one weighted directional term per
//! ROI, per random patch (with perspective jitter on the generated side), and
//! an optional L2 content term.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::geom::IRect;
use crate::raster::Raster;
use crate::{Error, Result};

/// Norm floor for the cosine terms; keeps the first iterations finite when
/// the rendered image still matches the source almost exactly.
pub const NORM_EPSILON: f64 = 1e-6;

/// Contract for an embedding model pair.
pub trait EmbedderBackend: Send + Sync {
    /// Side length S of the square image input.
    fn input_size(&self) -> u32;
    /// Embedding dimension D.
    fn dim(&self) -> usize;
    /// Deterministic text embedding of dimension D.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
    /// Image embedding of dimension D.
    fn embed_image(&self, raster: &Raster) -> Result<Vec<f64>>;
    /// Exact vector-Jacobian product of [`Self::embed_image`]: pushes an
    /// upstream D-vector back to a per-pixel gradient raster matching the
    /// input's dimensions.
    fn image_vjp(&self, raster: &Raster, upstream: &[f64]) -> Result<Raster>;
}

/// Deterministic linear test backend.
///
/// Images are bilinearly resized to S x S, flattened, and multiplied by a
/// fixed seeded Gaussian matrix; no normalization follows, so the encoder is
/// linear in pixels and its VJP is the transposed matrix routed back through
/// the resize adjoint. Text hashes to a pseudo-random unit vector unless an
/// explicit override was registered.
pub struct LinearMockEmbedder {
    seed: u64,
    dim: usize,
    input_size: u32,
    matrix: Vec<f64>, // dim x (3*S*S), row-major
    overrides: HashMap<String, Vec<f64>>,
}

impl LinearMockEmbedder {
    pub fn new(seed: u64, dim: usize, input_size: u32) -> Self {
        let cols = 3 * input_size as usize * input_size as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (cols as f64).sqrt();
        let matrix = (0..dim * cols)
            .map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                g * scale
            })
            .collect();
        LinearMockEmbedder { seed, dim, input_size, matrix, overrides: HashMap::new() }
    }

    /// Default geometry: D = 64, S = 32.
    pub fn with_seed(seed: u64) -> Self {
        Self::new(seed, 64, 32)
    }

    /// Pin the embedding of a specific text, for rigged test setups.
    pub fn register_text(&mut self, text: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{} components", self.dim),
                got: format!("{}", vector.len()),
            });
        }
        self.overrides.insert(text.into(), vector);
        Ok(())
    }

    fn flat(&self, raster: &Raster) -> Vec<f64> {
        if raster.width() == self.input_size && raster.height() == self.input_size {
            raster.data().to_vec()
        } else {
            resize_bilinear(raster, self.input_size, self.input_size).data().to_vec()
        }
    }
}

impl EmbedderBackend for LinearMockEmbedder {
    fn input_size(&self) -> u32 {
        self.input_size
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.overrides.get(text) {
            return Ok(v.clone());
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let word = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(word);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in v.iter_mut() {
            *x /= norm;
        }
        Ok(v)
    }

    fn embed_image(&self, raster: &Raster) -> Result<Vec<f64>> {
        let x = self.flat(raster);
        let cols = x.len();
        Ok((0..self.dim)
            .map(|row| {
                let r = &self.matrix[row * cols..(row + 1) * cols];
                r.iter().zip(&x).map(|(m, v)| m * v).sum()
            })
            .collect())
    }

    fn image_vjp(&self, raster: &Raster, upstream: &[f64]) -> Result<Raster> {
        if upstream.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{} components", self.dim),
                got: format!("{}", upstream.len()),
            });
        }
        let s = self.input_size;
        let cols = 3 * s as usize * s as usize;
        let mut grad = vec![0.0f64; cols];
        for (row, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let r = &self.matrix[row * cols..(row + 1) * cols];
            for (g, m) in grad.iter_mut().zip(r) {
                *g += u * m;
            }
        }
        let grad_s = Raster::from_data(s, s, grad)?;
        if raster.width() == s && raster.height() == s {
            Ok(grad_s)
        } else {
            Ok(resize_adjoint(&grad_s, raster.width(), raster.height()))
        }
    }
}

/// Wraps any backend with a central-finite-difference image VJP; the
/// documented numerical fallback for backends without analytic gradients.
/// Costly (two embeddings per pixel channel) but exact to O(h^2).
pub struct FiniteDifferenceVjp<B> {
    pub inner: B,
    pub step: f64,
}

impl<B: EmbedderBackend> FiniteDifferenceVjp<B> {
    pub fn new(inner: B) -> Self {
        FiniteDifferenceVjp { inner, step: 1e-4 }
    }
}

impl<B: EmbedderBackend> EmbedderBackend for FiniteDifferenceVjp<B> {
    fn input_size(&self) -> u32 {
        self.inner.input_size()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.inner.embed_text(text)
    }

    fn embed_image(&self, raster: &Raster) -> Result<Vec<f64>> {
        self.inner.embed_image(raster)
    }

    fn image_vjp(&self, raster: &Raster, upstream: &[f64]) -> Result<Raster> {
        let mut work = raster.clone();
        let mut grad = Raster::new(raster.width(), raster.height());
        let h = self.step;
        for i in 0..raster.data().len() {
            let orig = work.data()[i];
            work.data_mut()[i] = orig + h;
            let plus = self.inner.embed_image(&work)?;
            work.data_mut()[i] = orig - h;
            let minus = self.inner.embed_image(&work)?;
            work.data_mut()[i] = orig;
            let d: f64 = upstream
                .iter()
                .zip(plus.iter().zip(&minus))
                .map(|(u, (p, m))| u * (p - m) / (2.0 * h))
                .sum();
            grad.data_mut()[i] = d;
        }
        Ok(grad)
    }
}

// ---------------------------------------------------------------------------
// Differentiable raster ops

/// Copy a rectangle out of a raster; portions of the rectangle outside the
/// source are zero-filled. Errors when the rectangle misses the source
/// entirely.
pub fn crop(src: &Raster, rect: IRect) -> Result<Raster> {
    let canvas = IRect::new(0, 0, src.width(), src.height());
    if rect.intersect(&canvas).is_none() {
        return Err(Error::EmptyCrop);
    }
    let mut out = Raster::new(rect.w, rect.h);
    for y in 0..rect.h {
        let sy = rect.y + y as i64;
        if sy < 0 || sy >= src.height() as i64 {
            continue;
        }
        for x in 0..rect.w {
            let sx = rect.x + x as i64;
            if sx < 0 || sx >= src.width() as i64 {
                continue;
            }
            out.set(x, y, src.get(sx as u32, sy as u32));
        }
    }
    Ok(out)
}

/// Adjoint of [`crop`]: scatter-add a patch gradient back into the source
/// gradient buffer; out-of-bounds portions drop.
pub fn crop_adjoint_add(dst: &mut Raster, patch_grad: &Raster, rect: IRect) {
    for y in 0..rect.h.min(patch_grad.height()) {
        let sy = rect.y + y as i64;
        if sy < 0 || sy >= dst.height() as i64 {
            continue;
        }
        for x in 0..rect.w.min(patch_grad.width()) {
            let sx = rect.x + x as i64;
            if sx < 0 || sx >= dst.width() as i64 {
                continue;
            }
            dst.add(sx as u32, sy as u32, patch_grad.get(x, y));
        }
    }
}

#[inline]
fn bilinear_taps(coord: f64, size: u32) -> (usize, usize, f64) {
    // Half-pixel convention with edge clamping.
    let p = coord - 0.5;
    let i0 = p.floor();
    let f = p - i0;
    let a = (i0 as i64).clamp(0, size as i64 - 1) as usize;
    let b = (i0 as i64 + 1).clamp(0, size as i64 - 1) as usize;
    (a, b, f)
}

/// Bilinear resize with pixel-center alignment and clamped borders. Equal
/// sizes reproduce the input exactly.
pub fn resize_bilinear(src: &Raster, out_w: u32, out_h: u32) -> Raster {
    if src.width() == out_w && src.height() == out_h {
        return src.clone();
    }
    let sx = src.width() as f64 / out_w as f64;
    let sy = src.height() as f64 / out_h as f64;
    let mut out = Raster::new(out_w, out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = bilinear_taps((y as f64 + 0.5) * sy, src.height());
        for x in 0..out_w {
            let (x0, x1, fx) = bilinear_taps((x as f64 + 0.5) * sx, src.width());
            let p00 = src.get(x0 as u32, y0 as u32);
            let p10 = src.get(x1 as u32, y0 as u32);
            let p01 = src.get(x0 as u32, y1 as u32);
            let p11 = src.get(x1 as u32, y1 as u32);
            let mut px = [0.0f64; 3];
            for c in 0..3 {
                let top = p00[c] * (1.0 - fx) + p10[c] * fx;
                let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
                px[c] = top * (1.0 - fy) + bot * fy;
            }
            out.set(x, y, px);
        }
    }
    out
}

/// Exact adjoint of [`resize_bilinear`] back to `in_w` x `in_h`.
pub fn resize_adjoint(grad_out: &Raster, in_w: u32, in_h: u32) -> Raster {
    if grad_out.width() == in_w && grad_out.height() == in_h {
        return grad_out.clone();
    }
    let sx = in_w as f64 / grad_out.width() as f64;
    let sy = in_h as f64 / grad_out.height() as f64;
    let mut grad_in = Raster::new(in_w, in_h);
    for y in 0..grad_out.height() {
        let (y0, y1, fy) = bilinear_taps((y as f64 + 0.5) * sy, in_h);
        for x in 0..grad_out.width() {
            let (x0, x1, fx) = bilinear_taps((x as f64 + 0.5) * sx, in_w);
            let g = grad_out.get(x, y);
            let w00 = (1.0 - fx) * (1.0 - fy);
            let w10 = fx * (1.0 - fy);
            let w01 = (1.0 - fx) * fy;
            let w11 = fx * fy;
            grad_in.add(x0 as u32, y0 as u32, [g[0] * w00, g[1] * w00, g[2] * w00]);
            grad_in.add(x1 as u32, y0 as u32, [g[0] * w10, g[1] * w10, g[2] * w10]);
            grad_in.add(x0 as u32, y1 as u32, [g[0] * w01, g[1] * w01, g[2] * w01]);
            grad_in.add(x1 as u32, y1 as u32, [g[0] * w11, g[1] * w11, g[2] * w11]);
        }
    }
    grad_in
}

/// Quad corners in raster coordinates, ordered top-left, top-right,
/// bottom-right, bottom-left.
pub type Quad = [[f64; 2]; 4];

struct Homography {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    f: f64,
    g: f64,
    h: f64,
}

/// Projective map from the unit square onto the quad (Heckbert's closed
/// form).
fn square_to_quad(q: &Quad) -> Result<Homography> {
    let (x0, y0) = (q[0][0], q[0][1]);
    let (x1, y1) = (q[1][0], q[1][1]);
    let (x2, y2) = (q[2][0], q[2][1]);
    let (x3, y3) = (q[3][0], q[3][1]);
    let sx = x0 - x1 + x2 - x3;
    let sy = y0 - y1 + y2 - y3;
    let (g, h);
    if sx.abs() < 1e-12 && sy.abs() < 1e-12 {
        g = 0.0;
        h = 0.0;
    } else {
        let dx1 = x1 - x2;
        let dx2 = x3 - x2;
        let dy1 = y1 - y2;
        let dy2 = y3 - y2;
        let det = dx1 * dy2 - dx2 * dy1;
        if det.abs() < 1e-12 {
            return Err(Error::DegenerateQuad);
        }
        g = (sx * dy2 - dx2 * sy) / det;
        h = (dx1 * sy - sx * dy1) / det;
    }
    let hom = Homography {
        a: x1 - x0 + g * x1,
        b: x3 - x0 + h * x3,
        c: x0,
        d: y1 - y0 + g * y1,
        e: y3 - y0 + h * y3,
        f: y0,
        g,
        h,
    };
    Ok(hom)
}

fn quad_is_convex(q: &Quad) -> bool {
    let mut area = 0.0;
    for i in 0..4 {
        let a = q[i];
        let b = q[(i + 1) % 4];
        let c = q[(i + 2) % 4];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross <= 0.0 {
            return false;
        }
        area += a[0] * b[1] - b[0] * a[1];
    }
    area > 0.0
}

fn warp_sample_coords(hom: &Homography, w: u32, h: u32, x: u32, y: u32) -> Option<(f64, f64)> {
    let u = (x as f64 + 0.5) / w as f64;
    let v = (y as f64 + 0.5) / h as f64;
    let den = 1.0 + hom.g * u + hom.h * v;
    if den.abs() < 1e-12 {
        return None;
    }
    let sx = (hom.a * u + hom.b * v + hom.c) / den;
    let sy = (hom.d * u + hom.e * v + hom.f) / den;
    Some((sx, sy))
}

/// Perspective warp: the output corners map onto the quad, samples are
/// bilinear, and reads outside the raster are zero. Same output size as the
/// input; the adjoint (at fixed quad) is exact.
pub fn perspective_warp(src: &Raster, quad: &Quad) -> Result<Raster> {
    let hom = square_to_quad(quad)?;
    let (w, h) = (src.width(), src.height());
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let Some((sx, sy)) = warp_sample_coords(&hom, w, h, x, y) else {
                continue;
            };
            let px = sx - 0.5;
            let py = sy - 0.5;
            let x0 = px.floor() as i64;
            let y0 = py.floor() as i64;
            let fx = px - x0 as f64;
            let fy = py - y0 as f64;
            let mut acc = [0.0f64; 3];
            for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                    let ix = x0 + dx;
                    let iy = y0 + dy;
                    if ix >= 0 && iy >= 0 && (ix as u32) < w && (iy as u32) < h {
                        let p = src.get(ix as u32, iy as u32);
                        let wgt = wx * wy;
                        acc[0] += p[0] * wgt;
                        acc[1] += p[1] * wgt;
                        acc[2] += p[2] * wgt;
                    }
                }
            }
            out.set(x, y, acc);
        }
    }
    Ok(out)
}

/// Adjoint of [`perspective_warp`] with respect to the input raster.
pub fn warp_adjoint(grad_out: &Raster, quad: &Quad) -> Result<Raster> {
    let hom = square_to_quad(quad)?;
    let (w, h) = (grad_out.width(), grad_out.height());
    let mut grad_in = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let Some((sx, sy)) = warp_sample_coords(&hom, w, h, x, y) else {
                continue;
            };
            let g = grad_out.get(x, y);
            let px = sx - 0.5;
            let py = sy - 0.5;
            let x0 = px.floor() as i64;
            let y0 = py.floor() as i64;
            let fx = px - x0 as f64;
            let fy = py - y0 as f64;
            for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                    let ix = x0 + dx;
                    let iy = y0 + dy;
                    if ix >= 0 && iy >= 0 && (ix as u32) < w && (iy as u32) < h {
                        let wgt = wx * wy;
                        grad_in.add(ix as u32, iy as u32, [g[0] * wgt, g[1] * wgt, g[2] * wgt]);
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

// ---------------------------------------------------------------------------
// Prompt configuration

/// One region of interest: a rectangle, its prompt, and the patch-sampling
/// configuration used for the random-crop enhancement.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPrompt {
    /// Region in canvas pixels.
    pub area: IRect,
    pub prompt: String,
    /// Weight of the full-ROI directional term.
    pub roi_weight: f64,
    /// Number of random patches per iteration.
    pub patch_count: u32,
    /// Total weight shared evenly by the patch terms.
    pub patch_weight_total: f64,
    /// Patch side as a fraction of the ROI's longer edge.
    pub patch_fraction: f64,
    /// Corner jitter amplitude for perspective augmentation, in [0, 1).
    pub perspective_strength: f64,
}

impl RoiPrompt {
    pub fn new(area: IRect, prompt: impl Into<String>) -> Self {
        RoiPrompt {
            area,
            prompt: prompt.into(),
            roi_weight: 30.0,
            patch_count: 64,
            patch_weight_total: 80.0,
            patch_fraction: 0.8,
            perspective_strength: 0.3,
        }
    }

    pub fn validate(&self, canvas_w: u32, canvas_h: u32) -> Result<()> {
        if self.area.area() == 0 {
            return Err(Error::InvalidConfig("ROI must have positive area".into()));
        }
        let canvas = IRect::new(0, 0, canvas_w, canvas_h);
        if !canvas.contains(&self.area) {
            return Err(Error::InvalidConfig(format!(
                "ROI [{},{} {}x{}] lies outside the {}x{} canvas",
                self.area.x, self.area.y, self.area.w, self.area.h, canvas_w, canvas_h
            )));
        }
        if !(self.patch_fraction > 0.0 && self.patch_fraction <= 1.0) {
            return Err(Error::InvalidConfig("patch_fraction must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.perspective_strength) {
            return Err(Error::InvalidConfig("perspective_strength must be in [0, 1)".into()));
        }
        if self.roi_weight < 0.0 || self.patch_weight_total < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub rois: Vec<RoiPrompt>,
    /// Reference text the prompt direction is measured against.
    pub reference_text: String,
    /// Weight of the L2 content term; zero disables it.
    pub content_weight: f64,
    /// Warp the source patch with the same quad as the generated patch
    /// instead of leaving it unwarped.
    pub warp_source_patches: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            rois: Vec::new(),
            reference_text: "photo".into(),
            content_weight: 0.0,
            warp_source_patches: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, canvas_w: u32, canvas_h: u32) -> Result<()> {
        if self.rois.is_empty() {
            return Err(Error::InvalidConfig("at least one ROI prompt is required".into()));
        }
        for roi in &self.rois {
            roi.validate(canvas_w, canvas_h)?;
        }
        Ok(())
    }
}

/// A sampled patch: its rectangle in ROI-local pixels and the perspective
/// quad in patch-local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub rect: IRect,
    pub quad: Quad,
}

/// Sample square patches from an ROI.
///
/// The side is `round(patch_fraction * longer ROI edge)`; the top-left
/// corner is uniform over the ROI (the patch may overhang, the overhang
/// zero-pads at crop time). Each quad corner jitters by a uniform offset in
/// [-strength, +strength] x side/2; non-convex draws are rejected and
/// resampled.
pub fn sample_patches(
    area: IRect,
    patch_fraction: f64,
    patch_count: u32,
    perspective_strength: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Patch> {
    let side = (patch_fraction * area.w.max(area.h) as f64).round().max(1.0) as u32;
    let amp = perspective_strength * side as f64 / 2.0;
    (0..patch_count)
        .map(|_| {
            let x = rng.gen_range(0..area.w) as i64;
            let y = rng.gen_range(0..area.h) as i64;
            let rect = IRect::new(x, y, side, side);
            let s = side as f64;
            let base: Quad = [[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]];
            let mut quad = base;
            if amp > 0.0 {
                for _ in 0..64 {
                    for (corner, b) in quad.iter_mut().zip(base.iter()) {
                        corner[0] = b[0] + (rng.gen::<f64>() * 2.0 - 1.0) * amp;
                        corner[1] = b[1] + (rng.gen::<f64>() * 2.0 - 1.0) * amp;
                    }
                    if quad_is_convex(&quad) {
                        break;
                    }
                    quad = base;
                }
            }
            Patch { rect, quad }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Losses

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Directional loss `1 - cos(dI, dT)` between the prompt-minus-reference
/// text direction and the generated-minus-source image direction, with both
/// norms floored at [`NORM_EPSILON`]. Returns the loss and its exact
/// gradient over the generated image's pixels.
pub fn directional_loss(
    backend: &dyn EmbedderBackend,
    prompt: &str,
    reference: &str,
    image_gen: &Raster,
    image_src: &Raster,
) -> Result<(f64, Raster)> {
    let t_pr = backend.embed_text(prompt)?;
    let t_ref = backend.embed_text(reference)?;
    let dt: Vec<f64> = t_pr.iter().zip(&t_ref).map(|(a, b)| a - b).collect();
    let nt_raw = norm(&dt);
    if nt_raw < NORM_EPSILON {
        return Err(Error::DegenerateTextDirection);
    }
    let e_gen = backend.embed_image(image_gen)?;
    let e_src = backend.embed_image(image_src)?;
    let di: Vec<f64> = e_gen.iter().zip(&e_src).map(|(a, b)| a - b).collect();
    let ni_raw = norm(&di);
    let ni = ni_raw.max(NORM_EPSILON);
    let nt = nt_raw.max(NORM_EPSILON);
    let ip = dot(&di, &dt);
    let loss = 1.0 - ip / (ni * nt);

    // d(loss)/d(dI); when the norm is floored it is constant, so only the
    // numerator term survives there.
    let mut g_di = vec![0.0f64; di.len()];
    for (k, g) in g_di.iter_mut().enumerate() {
        let mut v = -dt[k] / (ni * nt);
        if ni_raw > NORM_EPSILON {
            v += ip * di[k] / (ni * ni * ni_raw * nt);
        }
        *g = v;
    }
    let grad = backend.image_vjp(image_gen, &g_di)?;
    Ok((loss, grad))
}

/// Mean squared pixel difference and its gradient w.r.t. `current`.
pub fn content_loss_l2(current: &Raster, initial: &Raster) -> Result<(f64, Raster)> {
    if !current.same_dims(initial) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", initial.width(), initial.height()),
            got: format!("{}x{}", current.width(), current.height()),
        });
    }
    let n = current.data().len() as f64;
    let mut grad = Raster::new(current.width(), current.height());
    let mut loss = 0.0;
    for ((g, c), i) in grad.data_mut().iter_mut().zip(current.data()).zip(initial.data()) {
        let d = c - i;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Cosine similarity between the image and prompt embeddings, norms floored
/// at [`NORM_EPSILON`].
pub fn clip_score(backend: &dyn EmbedderBackend, raster: &Raster, prompt: &str) -> Result<f64> {
    let s = backend.input_size();
    let resized = resize_bilinear(raster, s, s);
    let e_img = backend.embed_image(&resized)?;
    let e_txt = backend.embed_text(prompt)?;
    Ok(dot(&e_img, &e_txt) / (norm(&e_img).max(NORM_EPSILON) * norm(&e_txt).max(NORM_EPSILON)))
}

/// Per-term breakdown of one total-loss evaluation; all values are weighted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTerms {
    /// Full-ROI directional term per ROI.
    pub roi: Vec<f64>,
    /// Summed patch terms per ROI.
    pub patches: Vec<f64>,
    pub content: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.roi.iter().sum::<f64>() + self.patches.iter().sum::<f64>() + self.content
    }
}

/// One evaluation of the weighted guidance loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    /// Gradient over the current raster's pixels.
    pub pixel_grad: Raster,
    pub terms: LossTerms,
}

/// Weighted sum of directional terms over every ROI and random patch, plus
/// the optional content term.
///
/// For each ROI the full region contributes `roi_weight` times the
/// directional loss of the cropped pair; each of `patch_count` patches
/// contributes `patch_weight_total / patch_count` times the directional loss
/// of its perspective-warped crop against the same unwarped source crop.
/// Patch rectangles and quads are drawn fresh from `rng` on every call.
pub fn total_loss(
    backend: &dyn EmbedderBackend,
    config: &GuidanceConfig,
    current: &Raster,
    initial: &Raster,
    rng: &mut ChaCha8Rng,
) -> Result<LossEval> {
    if !current.same_dims(initial) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", initial.width(), initial.height()),
            got: format!("{}x{}", current.width(), current.height()),
        });
    }
    config.validate(current.width(), current.height())?;
    let s = backend.input_size();
    let mut grad = Raster::new(current.width(), current.height());
    let mut terms = LossTerms::default();

    for roi in &config.rois {
        let roi_cur = crop(current, roi.area)?;
        let roi_src = crop(initial, roi.area)?;
        let mut roi_grad = Raster::new(roi.area.w, roi.area.h);

        let rc = resize_bilinear(&roi_cur, s, s);
        let rs = resize_bilinear(&roi_src, s, s);
        let (l, mut g) = directional_loss(backend, &roi.prompt, &config.reference_text, &rc, &rs)?;
        for v in g.data_mut() {
            *v *= roi.roi_weight;
        }
        terms.roi.push(roi.roi_weight * l);
        let back = resize_adjoint(&g, roi.area.w, roi.area.h);
        for (a, b) in roi_grad.data_mut().iter_mut().zip(back.data()) {
            *a += b;
        }

        let mut patch_sum = 0.0;
        if roi.patch_count > 0 && roi.patch_weight_total > 0.0 {
            let per = roi.patch_weight_total / roi.patch_count as f64;
            for patch in sample_patches(roi.area, roi.patch_fraction, roi.patch_count, roi.perspective_strength, rng) {
                let p_cur = crop(&roi_cur, patch.rect)?;
                let p_src = crop(&roi_src, patch.rect)?;
                let warped = perspective_warp(&p_cur, &patch.quad)?;
                let src_side = if config.warp_source_patches {
                    perspective_warp(&p_src, &patch.quad)?
                } else {
                    p_src
                };
                let rc2 = resize_bilinear(&warped, s, s);
                let rs2 = resize_bilinear(&src_side, s, s);
                let (l2, mut g2) = directional_loss(backend, &roi.prompt, &config.reference_text, &rc2, &rs2)?;
                for v in g2.data_mut() {
                    *v *= per;
                }
                patch_sum += per * l2;
                let g_patch = resize_adjoint(&g2, patch.rect.w, patch.rect.h);
                let g_unwarped = warp_adjoint(&g_patch, &patch.quad)?;
                crop_adjoint_add(&mut roi_grad, &g_unwarped, patch.rect);
            }
        }
        terms.patches.push(patch_sum);
        crop_adjoint_add(&mut grad, &roi_grad, roi.area);
    }

    if config.content_weight > 0.0 {
        let (lc, gc) = content_loss_l2(current, initial)?;
        terms.content = config.content_weight * lc;
        for (a, b) in grad.data_mut().iter_mut().zip(gc.data()) {
            *a += config.content_weight * b;
        }
    }

    Ok(LossEval { loss: terms.total(), pixel_grad: grad, terms })
}
