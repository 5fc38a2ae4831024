use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Fully-connected network with ReLU hidden layers and a linear output.
///
/// All weights and biases live in one flat vector; layer `l` stores its
/// `in x out` weight matrix row-major followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer inputs recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Fan-in scaled normal weights and zero biases. Hidden layers use
    /// `sqrt(2 / fan_in)`, the output layer `sqrt(1 / fan_in)`.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let mut params = Vec::with_capacity(Self::param_count(widths));
        let layers = widths.len() - 1;
        for (l, w) in widths.windows(2).enumerate() {
            let gain = if l + 1 == layers { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / w[0] as f64).sqrt()).expect("positive std");
            params.extend((0..w[0] * w[1]).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            widths: widths.to_vec(),
            params,
        }
    }

    pub fn from_parts(widths: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (widths.len() >= 2 && params.len() == Self::param_count(&widths)).then_some(Self { widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weights and biases of the last layer.
    pub fn output_layer_mut(&mut self) -> &mut [f64] {
        let off = self.offset(self.layers() - 1);
        &mut self.params[off..]
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn offset(&self, layer: usize) -> usize {
        Self::param_count(&self.widths[..=layer])
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        let off = self.offset(l);
        let w = ArrayView2::from_shape((fan_in, fan_out), &self.params[off..off + fan_in * fan_out])
            .expect("layer shape");
        let b = ArrayView1::from(&self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    pub fn forward(&self, x: &Array2<f64>) -> MlpTape {
        let layers = self.layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut h = x.clone();
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w);
            z += &b;
            if l + 1 < layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        MlpTape { inputs, output: h }
    }

    /// Back-propagates `d_out` (gradient of a scalar with respect to the
    /// network output). Parameter gradients are accumulated into `grad` when
    /// given; the input gradient is returned when `want_input` is set.
    pub fn backward(
        &self,
        tape: &MlpTape,
        d_out: Array2<f64>,
        mut grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let mut dz = d_out;
        for l in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let input = &tape.inputs[l];
            if let Some(g) = grad.as_deref_mut() {
                let off = self.offset(l);
                let (gw, gb) = g[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                let mut gw = ArrayViewMut2::from_shape((fan_in, fan_out), gw).expect("layer shape");
                general_mat_mul(1.0, &input.t(), &dz, 1.0, &mut gw);
                let mut gb = ArrayViewMut1::from(gb);
                gb += &dz.sum_axis(Axis(0));
            }
            if l == 0 && !want_input {
                return None;
            }
            let (w, _) = self.layer(l);
            let mut dh = dz.dot(&w.t());
            if l == 0 {
                return Some(dh);
            }
            // ReLU: pass gradient only where the activation was positive
            ndarray::Zip::from(&mut dh).and(input).for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
            dz = dh;
        }
        unreachable!("loop returns at layer 0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_sized_forward() {
        // 2 -> 2 (relu) -> 1
        let params = vec![
            1.0, -1.0, 2.0, 1.0, // W1
            0.0, 0.5, // b1
            1.0, 2.0, // W2
            -1.0, // b2
        ];
        let net = Mlp::from_parts(vec![2, 2, 1], params).unwrap();
        let tape = net.forward(&array![[1.0, 1.0], [1.0, -1.0]]);
        // row 1: z1 = (3, 0.5) -> out = 3 + 1 - 1 = 3
        // row 2: z1 = (-1, -1.5) -> relu 0 -> out = -1
        assert_eq!(tape.output, array![[3.0], [-1.0]]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::random(&[4, 6, 5, 3], &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6);
        let weights = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - j as f64) * 0.25 + 0.1);
        let loss = |net: &Mlp, x: &Array2<f64>| (&net.forward(x).output * &weights).sum();

        let tape = net.forward(&x);
        let mut grad = vec![0.0; net.params().len()];
        let dx = net.backward(&tape, weights.clone(), Some(&mut grad), true).unwrap();

        let h = 1e-6;
        for idx in (0..grad.len()).step_by(7) {
            let orig = net.params()[idx];
            net.params_mut()[idx] = orig + h;
            let up = loss(&net, &x);
            net.params_mut()[idx] = orig - h;
            let down = loss(&net, &x);
            net.params_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {idx}: {fd} vs {}", grad[idx]);
        }
        for (i, j) in [(0, 0), (2, 3), (4, 1)] {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - dx[[i, j]]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }
}
