use super::{gemm, GradFn, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `lo..hi` whose kernel tap `kj` lands inside the row.
    fn valid_span(&self, kj: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if p > kj { (p - kj).div_ceil(s) } else { 0 };
        let hi = if self.width + p > kj { ((self.width + p - kj - 1) / s + 1).min(self.out_w) } else { 0 };
        (lo, hi.max(lo))
    }

    /// Unfolds sample `n` of `x` into columns `n·plane..(n+1)·plane` of the
    /// `rows × (batch·plane)` matrix `cols`.
    fn im2col(&self, x: &[f64], n: usize, cols: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let h = self.height as isize;
        let plane = self.col_cols();
        let ld = self.batch * plane;
        let x = &x[n * self.channels * self.height * self.width..];
        for c in 0..self.channels {
            let xc = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ld + n * plane..row * ld + (n + 1) * plane];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ki) as isize - p;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= h {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &xc[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let (lo, hi) = self.valid_span(kj);
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        if lo == hi {
                            continue;
                        }
                        let first = lo * s + kj - self.padding;
                        if s == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (d, &v) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(s)) {
                                *d = v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`] for sample `n`.
    fn col2im(&self, cols: &[f64], n: usize, gx: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let h = self.height as isize;
        let plane = self.col_cols();
        let ld = self.batch * plane;
        let gx = &mut gx[n * self.channels * self.height * self.width..];
        for c in 0..self.channels {
            let gc = &mut gx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ld + n * plane..row * ld + (n + 1) * plane];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ki) as isize - p;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let (lo, hi) = self.valid_span(kj);
                        if lo == hi {
                            continue;
                        }
                        let first = iy as usize * self.width + lo * s + kj - self.padding;
                        for (d, &v) in gc[first..].iter_mut().step_by(s).zip(&line[lo..hi]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// `[N, F, P]` ↔ `[F, N·P]`.
fn batch_to_filter_major(src: &[f64], batch: usize, filters: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for n in 0..batch {
        for f in 0..filters {
            let from = (n * filters + f) * plane;
            let to = f * batch * plane + n * plane;
            out[to..to + plane].copy_from_slice(&src[from..from + plane]);
        }
    }
    out
}

fn filter_to_batch_major(src: &[f64], batch: usize, filters: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for f in 0..filters {
        for n in 0..batch {
            let from = f * batch * plane + n * plane;
            let to = (n * filters + f) * plane;
            out[to..to + plane].copy_from_slice(&src[from..from + plane]);
        }
    }
    out
}

struct Conv2dFn {
    inputs: Vec<Tensor>,
    geo: Geometry,
    /// Unfolded input from the forward pass, `rows × (N·plane)`.
    cols: Vec<f64>,
}

impl GradFn for Conv2dFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let geo = self.geo;
        let (x, w) = (&self.inputs[0], &self.inputs[1]);
        let (rows, plane) = (geo.col_rows(), geo.col_cols());
        let wide = geo.batch * plane;
        let gt = batch_to_filter_major(g, geo.batch, geo.filters, plane);

        let gw = w.requires_grad().then(|| {
            let mut gw = vec![0.0; geo.filters * rows];
            gemm(geo.filters, wide, rows, &gt, false, &self.cols, true, 0.0, &mut gw);
            gw
        });
        let gx = x.requires_grad().then(|| {
            let mut gcols = vec![0.0; rows * wide];
            gemm(rows, geo.filters, wide, &w.data(), true, &gt, false, 0.0, &mut gcols);
            let mut gx = vec![0.0; x.numel()];
            for n in 0..geo.batch {
                geo.col2im(&gcols, n, &mut gx);
            }
            gx
        });

        let mut out = vec![gx, gw];
        if let Some(b) = self.inputs.get(2) {
            out.push(b.requires_grad().then(|| gt.chunks(wide).map(|gf| gf.iter().sum::<f64>()).collect()));
        }
        out
    }
}

/// Cross-correlation of `x: [N, C, H, W]` with `w: [F, C, k, k]`.
///
/// Output size is `floor((H + 2p - k) / stride) + 1`, the usual convention
/// for strided downsampling convolutions.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] {
        return Err(Error::shape("conv2d", xs, ws));
    }
    let kernel = ws[2];
    if kernel != 1 && kernel != 3 {
        return Err(Error::Config(format!("conv2d supports 1x1 and 3x3 kernels, got {kernel}x{kernel}")));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be at least 1".into()));
    }
    let (h, wd) = (xs[2], xs[3]);
    let span_h = (h + 2 * padding).checked_sub(kernel);
    let span_w = (wd + 2 * padding).checked_sub(kernel);
    let (Some(span_h), Some(span_w)) = (span_h, span_w) else {
        return Err(Error::Config(format!(
            "conv2d kernel {kernel} larger than padded input {h}x{wd} (padding {padding})"
        )));
    };
    if let Some(b) = b {
        if b.shape() != [ws[0]] {
            return Err(Error::shape("conv2d bias", b.shape(), &[ws[0]]));
        }
    }
    let geo = Geometry {
        batch: xs[0],
        channels: xs[1],
        height: h,
        width: wd,
        filters: ws[0],
        kernel,
        stride,
        padding,
        out_h: span_h / stride + 1,
        out_w: span_w / stride + 1,
    };

    let (rows, plane) = (geo.col_rows(), geo.col_cols());
    let wide = geo.batch * plane;
    let mut cols = vec![0.0; rows * wide];
    {
        let xd = x.data();
        for n in 0..geo.batch {
            geo.im2col(&xd, n, &mut cols);
        }
    }
    let mut yt = vec![0.0; geo.filters * wide];
    if let Some(b) = b {
        for (yf, &bf) in yt.chunks_mut(wide).zip(b.data().iter()) {
            yf.fill(bf);
        }
    }
    let beta = if b.is_some() { 1.0 } else { 0.0 };
    gemm(geo.filters, rows, wide, &w.data(), false, &cols, false, beta, &mut yt);
    let y = filter_to_batch_major(&yt, geo.batch, geo.filters, plane);

    let shape = vec![geo.batch, geo.filters, geo.out_h, geo.out_w];
    let mut inputs = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        inputs.push(b.clone());
    }
    Ok(Tensor::from_op(shape, y, Conv2dFn { inputs, geo, cols }))
}
