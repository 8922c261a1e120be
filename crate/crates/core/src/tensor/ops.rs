use super::{GradFn, Tensor};
use crate::error::{Error, Result};

struct LinearFn {
    inputs: Vec<Tensor>,
    has_bias: bool,
    rows: usize,
    in_dim: usize,
    out_dim: usize,
}

impl GradFn for LinearFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (&self.inputs[0], &self.inputs[1]);
        let (n, din, dout) = (self.rows, self.in_dim, self.out_dim);
        let gx = x.requires_grad().then(|| {
            let w = w.data();
            let mut gx = vec![0.0; n * din];
            for i in 0..n {
                let gi = &g[i * dout..(i + 1) * dout];
                let row = &mut gx[i * din..(i + 1) * din];
                for (o, &go) in gi.iter().enumerate() {
                    let wo = &w[o * din..(o + 1) * din];
                    row.iter_mut().zip(wo).for_each(|(r, &wv)| *r += go * wv);
                }
            }
            gx
        });
        let gw = w.requires_grad().then(|| {
            let x = x.data();
            let mut gw = vec![0.0; dout * din];
            for i in 0..n {
                let xi = &x[i * din..(i + 1) * din];
                for o in 0..dout {
                    let go = g[i * dout + o];
                    gw[o * din..(o + 1) * din]
                        .iter_mut()
                        .zip(xi)
                        .for_each(|(r, &xv)| *r += go * xv);
                }
            }
            gw
        });
        let mut out = vec![gx, gw];
        if self.has_bias {
            let gb = self.inputs[2].requires_grad().then(|| {
                let mut gb = vec![0.0; dout];
                for i in 0..n {
                    gb.iter_mut()
                        .zip(&g[i * dout..(i + 1) * dout])
                        .for_each(|(b, &gv)| *b += gv);
                }
                gb
            });
            out.push(gb);
        }
        out
    }
}

/// `y = x Wᵀ + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(Error::shape("linear", xs, ws));
    }
    let (n, din, dout) = (xs[0], xs[1], ws[0]);
    if let Some(b) = b {
        if b.shape() != [dout] {
            return Err(Error::shape("linear bias", b.shape(), &[dout]));
        }
    }
    let mut y = vec![0.0; n * dout];
    {
        let xd = x.data();
        let wd = w.data();
        let bd = b.map(|b| b.data());
        for i in 0..n {
            let xi = &xd[i * din..(i + 1) * din];
            for o in 0..dout {
                let wo = &wd[o * din..(o + 1) * din];
                let mut s = 0.0;
                for k in 0..din {
                    s += xi[k] * wo[k];
                }
                if let Some(bd) = &bd {
                    s += bd[o];
                }
                y[i * dout + o] = s;
            }
        }
    }
    let mut inputs = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        inputs.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, dout],
        y,
        LinearFn {
            inputs,
            has_bias: b.is_some(),
            rows: n,
            in_dim: din,
            out_dim: dout,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

struct ActivationFn {
    inputs: [Tensor; 1],
    kind: Activation,
    // relu: input values; tanh: output values
    saved: Vec<f64>,
}

impl GradFn for ActivationFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let gx = match self.kind {
            Activation::Relu => g
                .iter()
                .zip(&self.saved)
                .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                .collect(),
            Activation::Tanh => g
                .iter()
                .zip(&self.saved)
                .map(|(&gv, &y)| gv * (1.0 - y * y))
                .collect(),
        };
        vec![Some(gx)]
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let xd = x.data();
    let y: Vec<f64> = match kind {
        Activation::Relu => xd.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Tanh => xd.iter().map(|&v| v.tanh()).collect(),
    };
    let saved = match kind {
        Activation::Relu => xd.clone(),
        Activation::Tanh => y.clone(),
    };
    drop(xd);
    Tensor::from_op(
        x.shape().to_vec(),
        y,
        ActivationFn {
            inputs: [x.clone()],
            kind,
            saved,
        },
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    activation(x, Activation::Relu)
}

pub fn tanh(x: &Tensor) -> Tensor {
    activation(x, Activation::Tanh)
}

struct AddFn {
    inputs: [Tensor; 2],
}

impl GradFn for AddFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![
            self.inputs[0].requires_grad().then(|| g.to_vec()),
            self.inputs[1].requires_grad().then(|| g.to_vec()),
        ]
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let y = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        y,
        AddFn {
            inputs: [a.clone(), b.clone()],
        },
    ))
}

struct MulFn {
    inputs: [Tensor; 2],
}

impl GradFn for MulFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (&self.inputs[0], &self.inputs[1]);
        let ga = a
            .requires_grad()
            .then(|| g.iter().zip(b.data().iter()).map(|(g, b)| g * b).collect());
        let gb = b
            .requires_grad()
            .then(|| g.iter().zip(a.data().iter()).map(|(g, a)| g * a).collect());
        vec![ga, gb]
    }
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mul", a.shape(), b.shape()));
    }
    let y = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        y,
        MulFn {
            inputs: [a.clone(), b.clone()],
        },
    ))
}

struct ReshapeFn {
    inputs: [Tensor; 1],
}

impl GradFn for ReshapeFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.iter().product::<usize>() != x.numel() {
        return Err(Error::shape("reshape", x.shape(), shape));
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        x.to_vec(),
        ReshapeFn { inputs: [x.clone()] },
    ))
}

struct SumFn {
    inputs: [Tensor; 1],
}

impl GradFn for SumFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0]; self.inputs[0].numel()])]
    }
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum(x: &Tensor) -> Tensor {
    let s = x.data().iter().sum();
    Tensor::from_op(vec![1], vec![s], SumFn { inputs: [x.clone()] })
}

struct AvgPoolFn {
    inputs: [Tensor; 1],
}

impl GradFn for AvgPoolFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let s = self.inputs[0].shape();
        let hw = s[2] * s[3];
        let scale = 1.0 / hw as f64;
        let mut gx = vec![0.0; self.inputs[0].numel()];
        for (plane, &gv) in gx.chunks_mut(hw).zip(g) {
            plane.fill(gv * scale);
        }
        vec![Some(gx)]
    }
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("global_avg_pool", s, &[0, 0, 0, 0]));
    }
    let hw = s[2] * s[3];
    let y = x
        .data()
        .chunks(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    Ok(Tensor::from_op(
        vec![s[0], s[1]],
        y,
        AvgPoolFn { inputs: [x.clone()] },
    ))
}

struct UpsampleFn {
    inputs: [Tensor; 1],
}

impl GradFn for UpsampleFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let s = self.inputs[0].shape();
        let (h, w) = (s[2], s[3]);
        let (h2, w2) = (2 * h, 2 * w);
        let mut gx = vec![0.0; self.inputs[0].numel()];
        for (plane, gp) in gx.chunks_mut(h * w).zip(g.chunks(h2 * w2)) {
            for i in 0..h2 {
                for j in 0..w2 {
                    plane[(i / 2) * w + j / 2] += gp[i * w2 + j];
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Nearest-neighbour 2× spatial upsampling of `[N, C, H, W]`.
pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("upsample_nearest2x", s, &[0, 0, 0, 0]));
    }
    let (h, w) = (s[2], s[3]);
    let (h2, w2) = (2 * h, 2 * w);
    let xd = x.data();
    let mut y = vec![0.0; xd.len() * 4];
    for (plane, out) in xd.chunks(h * w).zip(y.chunks_mut(h2 * w2)) {
        for i in 0..h2 {
            let src = &plane[(i / 2) * w..(i / 2 + 1) * w];
            let dst = &mut out[i * w2..(i + 1) * w2];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = src[j / 2];
            }
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![s[0], s[1], h2, w2],
        y,
        UpsampleFn { inputs: [x.clone()] },
    ))
}
