//! Dense row-major `f64` tensors and the numerical kernels the layers use.
//!
//! Images and activations are laid out `H×W×C` (channel fastest). Convolution
//! kernels are `K×K×C×F`, so a kernel reshaped to `(K·K·C)×F` is exactly the
//! right operand for an im2col product.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn volume(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        if volume(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} elements, got {}",
                volume(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "dimensions must be positive, got {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; volume(shape)],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        if volume(shape) != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Self::new(shape.to_vec(), self.data)
    }

    /// Element at a full multi-index. Panics on rank or bounds mismatch.
    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let [m, n] = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [m, n] => Ok([m, n]),
            _ => Err(Error::Shape(format!("expected a matrix, got {:?}", self.shape))),
        }
    }

    fn dims3(&self) -> Result<[usize; 3]> {
        match self.shape[..] {
            [h, w, c] => Ok([h, w, c]),
            _ => Err(Error::Shape(format!(
                "expected an H×W×C tensor, got {:?}",
                self.shape
            ))),
        }
    }
}

/// `c = a·b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn mm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(0.0);
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += aᵀ·b` for `a: m×k`, `b: m×n`, `c: k×n`.
pub(crate) fn mm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[t * n..(t + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c = a·bᵀ` for `a: m×n`, `b: k×n`, `c: m×k`.
pub(crate) fn mm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for t in 0..k {
            let brow = &b[t * n..(t + 1) * n];
            c[i * k + t] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape_err = || {
        Error::Shape(format!(
            "matmul of {:?} and {:?}: inner dimensions differ",
            a.shape, b.shape
        ))
    };
    let [m, k] = a.dims2().map_err(|_| shape_err())?;
    let [k2, n] = b.dims2().map_err(|_| shape_err())?;
    if k != k2 {
        return Err(shape_err());
    }
    let mut c = vec![0.0; m * n];
    mm(&a.data, &b.data, &mut c, m, k, n);
    Tensor::new(vec![m, n], c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Zero padding so that the output is `ceil(H / stride)` per axis; any odd
    /// leftover goes after (bottom/right).
    Same,
}

/// Resolved geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        in_h: usize,
        in_w: usize,
        in_c: usize,
        kernel: usize,
        filters: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(Error::Shape("stride and kernel size must be positive".into()));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if kernel > in_h || kernel > in_w {
                    return Err(Error::Shape(format!(
                        "kernel {kernel}×{kernel} larger than input {in_h}×{in_w}"
                    )));
                }
                ((in_h - kernel) / stride + 1, (in_w - kernel) / stride + 1, 0, 0)
            }
            Padding::Same => {
                let out_h = in_h.div_ceil(stride);
                let out_w = in_w.div_ceil(stride);
                let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(in_h);
                let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(in_w);
                if kernel > in_h + pad_h || kernel > in_w + pad_w {
                    return Err(Error::Shape(format!(
                        "kernel {kernel}×{kernel} larger than padded input"
                    )));
                }
                (out_h, out_w, pad_h / 2, pad_w / 2)
            }
        };
        Ok(Self {
            in_h,
            in_w,
            in_c,
            kernel,
            filters,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w * self.filters
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input row/col for output position `o` and kernel offset `d`, or `None`
    /// when it falls in the zero padding.
    #[inline]
    fn src(o: usize, d: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + d).checked_sub(pad).filter(|&v| v < extent)
    }

    /// Unfold one image into an `(out_h·out_w) × (K·K·C)` patch matrix.
    pub(crate) fn im2col(&self, input: &[f64], cols: &mut Vec<f64>) {
        let (k, c) = (self.kernel, self.in_c);
        cols.clear();
        cols.resize(self.out_pixels() * self.patch_len(), 0.0);
        let mut row = 0;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let base = row * self.patch_len();
                for ky in 0..k {
                    let Some(iy) = Self::src(oy, ky, self.stride, self.pad_top, self.in_h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = Self::src(ox, kx, self.stride, self.pad_left, self.in_w)
                        else {
                            continue;
                        };
                        let src = (iy * self.in_w + ix) * c;
                        let dst = base + (ky * k + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&input[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }

    /// Scatter-add a patch matrix back onto an image (adjoint of `im2col`).
    pub(crate) fn col2im(&self, cols: &[f64], out: &mut [f64]) {
        let (k, c) = (self.kernel, self.in_c);
        out.fill(0.0);
        let mut row = 0;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let base = row * self.patch_len();
                for ky in 0..k {
                    let Some(iy) = Self::src(oy, ky, self.stride, self.pad_top, self.in_h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = Self::src(ox, kx, self.stride, self.pad_left, self.in_w)
                        else {
                            continue;
                        };
                        let dst = (iy * self.in_w + ix) * c;
                        let src = base + (ky * k + kx) * c;
                        for (o, &v) in out[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                            *o += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }

    /// Cross-correlation of one image plus per-filter bias.
    pub(crate) fn forward(
        &self,
        input: &[f64],
        kernels: &[f64],
        bias: &[f64],
        out: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        self.im2col(input, scratch);
        mm(scratch, kernels, out, self.out_pixels(), self.patch_len(), self.filters);
        if !bias.is_empty() {
            for px in out.chunks_exact_mut(self.filters) {
                for (v, b) in px.iter_mut().zip(bias) {
                    *v += b;
                }
            }
        }
    }

    /// Gradient with respect to the input; also the forward pass of the
    /// matching transposed convolution.
    pub(crate) fn backward_input(
        &self,
        grad_out: &[f64],
        kernels: &[f64],
        d_input: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        scratch.clear();
        scratch.resize(self.out_pixels() * self.patch_len(), 0.0);
        mm_nt(grad_out, kernels, scratch, self.out_pixels(), self.filters, self.patch_len());
        self.col2im(scratch, d_input);
    }

    /// Accumulate kernel and bias gradients for one image.
    pub(crate) fn backward_params(
        &self,
        input: &[f64],
        grad_out: &[f64],
        d_kernels: &mut [f64],
        d_bias: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        self.im2col(input, scratch);
        mm_tn_acc(scratch, grad_out, d_kernels, self.out_pixels(), self.patch_len(), self.filters);
        if !d_bias.is_empty() {
            for px in grad_out.chunks_exact(self.filters) {
                for (d, g) in d_bias.iter_mut().zip(px) {
                    *d += g;
                }
            }
        }
    }
}

fn conv_geom_for(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    let [h, w, c] = input.dims3()?;
    let (k, kc, f) = match kernels.shape[..] {
        [k, k2, kc, f] if k == k2 => (k, kc, f),
        _ => {
            return Err(Error::Shape(format!(
                "kernels must be K×K×C×F, got {:?}",
                kernels.shape
            )))
        }
    };
    if kc != c {
        return Err(Error::Shape(format!(
            "kernel expects {kc} input channels, input has {c}"
        )));
    }
    ConvGeom::new(h, w, c, k, f, stride, padding)
}

/// 2-D cross-correlation (no kernel flip) of an `H×W×C` image with `K×K×C×F`
/// kernels, plus an optional per-filter bias.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = conv_geom_for(input, kernels, stride, padding)?;
    let bias = bias.unwrap_or(&[]);
    if !bias.is_empty() && bias.len() != g.filters {
        return Err(Error::Shape(format!(
            "bias has {} entries for {} filters",
            bias.len(),
            g.filters
        )));
    }
    let mut out = vec![0.0; g.out_len()];
    let mut scratch = Vec::new();
    g.forward(&input.data, &kernels.data, bias, &mut out, &mut scratch);
    Tensor::new(vec![g.out_h, g.out_w, g.filters], out)
}

/// Transposed convolution: maps an `H'×W'×F` map back to `out_h×out_w×C`
/// through `K×K×C×F` kernels, the adjoint of [`conv2d`] with the same
/// geometry.
pub fn conv_transpose2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    padding: Padding,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor> {
    let (k, c, f) = match kernels.shape[..] {
        [k, k2, c, f] if k == k2 => (k, c, f),
        _ => return Err(Error::Shape(format!("bad kernel shape {:?}", kernels.shape))),
    };
    let [h, w, fin] = input.dims3()?;
    let g = ConvGeom::new(out_h, out_w, c, k, f, stride, padding)?;
    if fin != f || g.out_h != h || g.out_w != w {
        return Err(Error::Shape(format!(
            "transposed conv input {:?} does not match kernels {:?} for output {out_h}×{out_w}",
            input.shape, kernels.shape
        )));
    }
    let mut out = vec![0.0; g.in_len()];
    let mut scratch = Vec::new();
    g.backward_input(&input.data, &kernels.data, &mut out, &mut scratch);
    if let Some(bias) = bias {
        for px in out.chunks_exact_mut(c) {
            for (v, b) in px.iter_mut().zip(bias) {
                *v += b;
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Geometry of a max-pooling window sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(in_h: usize, in_w: usize, channels: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::Shape("pool window and stride must be positive".into()));
        }
        if window > in_h || window > in_w {
            return Err(Error::Shape(format!(
                "pool window {window} exceeds input {in_h}×{in_w}"
            )));
        }
        Ok(Self {
            in_h,
            in_w,
            channels,
            window,
            stride,
            out_h: (in_h - window) / stride + 1,
            out_w: (in_w - window) / stride + 1,
        })
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w * self.channels
    }

    /// Per-window maxima; `argmax` receives the flat input index of each
    /// winner (first maximum in row-major window order).
    pub(crate) fn forward(&self, input: &[f64], out: &mut [f64], argmax: &mut [usize]) {
        let c = self.channels;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for wy in 0..self.window {
                        for wx in 0..self.window {
                            let iy = oy * self.stride + wy;
                            let ix = ox * self.stride + wx;
                            let i = (iy * self.in_w + ix) * c + ch;
                            if input[i] > best {
                                best = input[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (oy * self.out_w + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
    }
}

pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let [h, w, c] = input.dims3()?;
    let g = PoolGeom::new(h, w, c, window, stride)?;
    let mut out = vec![0.0; g.out_len()];
    let mut argmax = vec![0; g.out_len()];
    g.forward(&input.data, &mut out, &mut argmax);
    Ok((Tensor::new(vec![g.out_h, g.out_w, c], out)?, argmax))
}

/// Route pooled gradients back to the winning input positions.
pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Shape("argmax does not match pooled gradient".into()));
    }
    let mut d = Tensor::zeros(input_shape);
    for (&g, &i) in grad_out.data.iter().zip(argmax) {
        d.data[i] += g;
    }
    Ok(d)
}

/// Bilinear resampling with corner-aligned sampling: output pixel `j` of `n`
/// reads source coordinate `j·(H−1)/(n−1)`, so the corner pixels map exactly
/// onto the corner pixels. A single output row/column samples the source
/// center `(H−1)/2`.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [h, w, c] = input.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "resize target must be positive, got {out_h}×{out_w}"
        )));
    }
    let ys = sample_positions(h, out_h);
    let xs = sample_positions(w, out_w);
    let mut out = vec![0.0; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let o = (oy * out_w + ox) * c;
            for ch in 0..c {
                let p = |y: usize, x: usize| input.data[(y * w + x) * c + ch];
                let top = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * fx;
                let bot = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * fx;
                out[o + ch] = top + (bot - top) * fy;
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|j| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                j as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn random(shape: &[usize], rng: &mut Prng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let b = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_expansion() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 5])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn transpose_of_product() {
        let mut rng = Prng::new(11);
        for _ in 0..20 {
            let (m, k, n) = (1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(6));
            let a = random(&[m, k], &mut rng);
            let b = random(&[k, n], &mut rng);
            let lhs = matmul(&a, &b).unwrap().transpose().unwrap();
            let rhs = matmul(&b.transpose().unwrap(), &a.transpose().unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-10);
            let ia = matmul(&Tensor::identity(m), &a).unwrap();
            assert!(ia.max_abs_diff(&a) < 1e-12);
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = Prng::new(2);
        let x = random(&[5, 4, 1], &mut rng);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &k, Some(&[0.0]), 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_valid_summation() {
        let x = Tensor::new(vec![3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        let k = Tensor::full(&[2, 2, 1, 1], 1.0);
        let y = conv2d(&x, &k, None, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv_same_shape_at_full_resolution() {
        let x = Tensor::zeros(&[224, 224, 3]);
        let k = Tensor::zeros(&[5, 5, 3, 16]);
        let y = conv2d(&x, &k, None, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[224, 224, 16]);
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::zeros(&[4, 4, 2]);
        assert!(conv2d(&x, &Tensor::zeros(&[3, 3, 3, 1]), None, 1, Padding::Same).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[5, 5, 2, 1]), None, 1, Padding::Valid).is_err());
    }

    #[test]
    fn conv_transpose_is_adjoint() {
        // <conv(x), y> == <x, convT(y)>
        let mut rng = Prng::new(8);
        for &(stride, padding) in &[(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid)] {
            let x = random(&[7, 6, 2], &mut rng);
            let k = random(&[3, 3, 2, 4], &mut rng);
            let cx = conv2d(&x, &k, None, stride, padding).unwrap();
            let y = random(cx.shape(), &mut rng);
            let ty = conv_transpose2d(&y, &k, None, stride, padding, 7, 6).unwrap();
            let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]); // (row 1, col 1)

        let c = Tensor::full(&[6, 6, 2], 0.25);
        let (y, _) = maxpool2d(&c, 3, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));

        let big = Tensor::zeros(&[224, 224, 16]);
        assert_eq!(maxpool2d(&big, 2, 2).unwrap().0.shape(), &[112, 112, 16]);

        assert!(maxpool2d(&Tensor::zeros(&[1, 3, 1]), 2, 2).is_err());
    }

    #[test]
    fn maxpool_picks_window_element() {
        let mut rng = Prng::new(4);
        let x = random(&[8, 6, 3], &mut rng);
        let (y, arg) = maxpool2d(&x, 2, 2).unwrap();
        for (o, (&v, &i)) in y.data().iter().zip(&arg).enumerate() {
            assert_eq!(x.data()[i], v);
            let ch = o % 3;
            let (oy, ox) = ((o / 3) / 3, (o / 3) % 3);
            let (iy, ix, ic) = ((i / 3) / 6, (i / 3) % 6, i % 3);
            assert_eq!(ic, ch);
            assert!(iy / 2 == oy && ix / 2 == ox);
        }
        let d = maxpool2d_backward(&Tensor::full(y.shape(), 1.0), &arg, x.shape()).unwrap();
        assert_eq!(d.data().iter().sum::<f64>(), y.len() as f64);
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut rng = Prng::new(6);
        let x = random(&[5, 7, 3], &mut rng);
        assert!(bilinear_resize(&x, 5, 7).unwrap().max_abs_diff(&x) < 1e-12);
        let c = Tensor::full(&[4, 4, 2], 0.3);
        let r = bilinear_resize(&c, 9, 3).unwrap();
        assert_eq!(r.shape(), &[9, 3, 2]);
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(bilinear_resize(&c, 0, 3).is_err());
    }

    #[test]
    fn resize_interpolates_columns() {
        let x = Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = bilinear_resize(&x, 2, 4).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in r.data().chunks(4) {
            for (a, b) in row.iter().zip(expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
