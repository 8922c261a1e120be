use super::{shift_gradients_raw, simulate, CircuitParams};
use crate::error::{Error, Result};
use crate::nn::{join, Module, Role};
use crate::rng::Rng;
use crate::tensor::{GradFn, Tensor};

/// The variational block as a differentiable layer: `[N, n] -> [N, n]`.
///
/// The `n × 3` angle matrix is a trainable tensor named `theta`. Backward
/// passes run the parameter-shift rule for both the angles and the inputs.
#[derive(Debug, Clone)]
pub struct QuantumLayer {
    pub theta: Tensor,
    n_qubits: usize,
}

impl QuantumLayer {
    pub fn new(n_qubits: usize, rng: &mut Rng) -> Result<Self> {
        let params = CircuitParams::random(n_qubits, rng)?;
        Self::from_params(&params)
    }

    pub fn from_params(params: &CircuitParams) -> Result<Self> {
        Ok(QuantumLayer {
            theta: Tensor::param(&[params.n_qubits(), 3], params.as_slice().to_vec())?,
            n_qubits: params.n_qubits(),
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn params(&self) -> CircuitParams {
        CircuitParams::new(self.n_qubits, self.theta.to_vec()).expect("layer keeps a valid shape")
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let n = self.n_qubits;
        let s = z.shape();
        if s.len() != 2 || s[1] != n {
            return Err(Error::shape("quantum block input", s, &[s.first().copied().unwrap_or(0), n]));
        }
        let rows = s[0];
        let theta = self.theta.to_vec();
        let mut out = Vec::with_capacity(rows * n);
        for row in z.data().chunks(n) {
            out.extend(simulate(row, &theta)?.expectations_z());
        }
        Ok(Tensor::from_op(
            vec![rows, n],
            out,
            QuantumFn {
                inputs: [z.clone(), self.theta.clone()],
                rows,
            },
        ))
    }
}

impl Module for QuantumLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        f(&join(prefix, "theta"), &self.theta, Role::Parameter);
    }
}

struct QuantumFn {
    inputs: [Tensor; 2],
    rows: usize,
}

impl GradFn for QuantumFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let z = self.inputs[0].data();
        let theta = self.inputs[1].data();
        let grads = shift_gradients_raw(&z, self.rows, &theta, g);
        vec![Some(grads.grad_z), Some(grads.grad_theta)]
    }
}
