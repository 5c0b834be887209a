use rand::Rng;

use super::kernels;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Dense feed-forward network: tanh on hidden layers, linear output.
///
/// Weights are stored `[in, out]`; parameters are ordered `w0, b0, w1, b1, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Uniform fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// zero biases. The output layer's weights are multiplied by `out_scale`.
    pub fn new(sizes: &[usize], out_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        for (l, pair) in sizes.windows(2).enumerate() {
            let (inp, out) = (pair[0], pair[1]);
            let bound = 1.0 / (inp as f64).sqrt();
            let scale = if l == sizes.len() - 2 { out_scale } else { 1.0 };
            let w = (0..inp * out)
                .map(|_| scale * rng.random_range(-bound..bound))
                .collect();
            params.push(Tensor::from_parts(vec![inp, out], w));
            params.push(Tensor::zeros(&[out]));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    /// All-zero network of the given layout.
    pub fn zeros(sizes: &[usize]) -> Self {
        let params = sizes
            .windows(2)
            .flat_map(|p| [Tensor::zeros(&[p[0], p[1]]), Tensor::zeros(&[p[1]])])
            .collect();
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn from_params(sizes: &[usize], params: Vec<Tensor>) -> Result<Self> {
        let expected = Self::zeros(sizes);
        if expected.params.len() != params.len()
            || expected.params.iter().zip(&params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(shape_err(format!("parameters do not match layout {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Tape-free forward pass over `rows` inputs packed row-major.
    pub fn forward(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        if x.len() != rows * self.input_dim() {
            return Err(shape_err(format!(
                "mlp input has {} values, expected {rows}x{}",
                x.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.sizes.len() - 1;
        let mut h = x.to_vec();
        for l in 0..n_layers {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            h = kernels::affine(&h, self.params[2 * l].data(), self.params[2 * l + 1].data(), rows, inp, out);
            if l + 1 < n_layers {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(h)
    }

    /// Records the forward pass on `tape`. Returns the output and the
    /// parameter leaves in parameter order.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        let leaves: Vec<Var> = self.params.iter().map(|p| tape.leaf_ref(p)).collect();
        let n_layers = self.sizes.len() - 1;
        let mut h = x;
        for l in 0..n_layers {
            h = tape.affine(h, leaves[2 * l], leaves[2 * l + 1])?;
            if l + 1 < n_layers {
                h = tape.tanh(h)?;
            }
        }
        Ok((h, leaves))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_plain_forward_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 8, 8, 2], 1.0, &mut rng);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let plain = net.forward(&x, 4).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::matrix(4, 3, x).unwrap());
        let (y, _) = net.forward_tape(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y).data(), plain.as_slice());
    }

    #[test]
    fn init_is_deterministic_given_seed() {
        let a = Mlp::new(&[4, 16, 1], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = Mlp::new(&[4, 16, 1], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
