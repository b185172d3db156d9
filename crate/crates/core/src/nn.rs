//! Minimal multilayer perceptron with hand-rolled backprop.
//!
//! Hidden layers are rectified-linear, the output layer is affine.  Shapes
//! are plain `Vec<f64>` in row-major order; everything is small enough that
//! explicit loops beat pulling in a tensor library, and the arithmetic stays
//! bit-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer: `y = W x + b` with `W` stored row-major, `rows` outputs
/// by `cols` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.biases[r];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward network; `dims = [input, hidden.., output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Post-activation values for every layer, starting with the input itself.
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
}

/// Per-layer gradient accumulator with the same shapes as the network.
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// He-uniform initialization.
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Domain {
                name: "mlp dims",
                reason: format!("{dims:?}"),
            });
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (cols, rows) = (win[0], win[1]);
            let bound = (6.0 / cols as f64).sqrt();
            let mut layer = Dense::zeros(rows, cols);
            for w in layer.weights.iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
            layers.push(layer);
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    /// Validate that layer shapes chain input-to-output.
    pub fn check_shapes(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Domain {
                name: "mlp",
                reason: "no layers".into(),
            });
        }
        for layer in &self.layers {
            if layer.weights.len() != layer.rows * layer.cols
                || layer.biases.len() != layer.rows
                || !layer.weights.iter().chain(&layer.biases).all(|v| v.is_finite())
            {
                return Err(Error::Domain {
                    name: "mlp layer",
                    reason: format!("bad {}x{} layer", layer.rows, layer.cols),
                });
            }
        }
        for win in self.layers.windows(2) {
            if win[1].cols != win[0].rows {
                return Err(Error::ShapeMismatch {
                    got: win[1].cols,
                    want: win[0].rows,
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x)?;
        Ok(trace.activations.into_iter().next_back().unwrap())
    }

    /// Forward pass keeping every post-activation for backprop.
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                got: x.len(),
                want: self.input_dim(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(activations.last().unwrap(), &mut out);
            if i != last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    /// Accumulate gradients for one sample given dLoss/dOutput.
    pub fn backward(&self, trace: &ForwardTrace, grad_out: &[f64], grads: &mut Gradients) {
        let mut delta = grad_out.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[k];
            let g = &mut grads.layers[k];
            for r in 0..layer.rows {
                g.biases[r] += delta[r];
                let grow = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                for (gw, v) in grow.iter_mut().zip(input) {
                    *gw += delta[r] * v;
                }
            }
            if k == 0 {
                break;
            }
            // Propagate through W^T and the ReLU mask of the layer below.
            let mut prev = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += delta[r] * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    /// One plain gradient-descent step: `w -= lr * g`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= lr * gb;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp {
            layers: vec![Dense::zeros(4, 3), Dense::zeros(3, 4)],
        };
        let y = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_selects_inputs() {
        // Identity rows pick out coordinates; output layer is affine.
        let mut layer = Dense::zeros(2, 3);
        layer.weights[0] = 1.0; // y0 = x0
        layer.weights[1 * 3 + 2] = 1.0; // y1 = x2
        let net = Mlp { layers: vec![layer] };
        let y = net.forward(&[7.0, -1.0, 4.0]).unwrap();
        assert_eq!(y, vec![7.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Mlp {
            layers: vec![Dense::zeros(2, 3)],
        };
        assert!(matches!(
            net.forward(&[0.0; 4]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    /// Squared-error loss on one sample for finite differencing.
    fn loss(net: &Mlp, x: &[f64], target: &[f64]) -> f64 {
        let y = net.forward(x).unwrap();
        y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    #[test]
    fn backprop_matches_central_finite_differences() {
        for (arch, seed) in [
            (vec![5usize, 16, 3], 31u64),
            (vec![3, 8, 8, 2], 32),
            (vec![4, 64, 3], 33),
        ] {
            let mut rng = stream(seed, "gradcheck", &[]);
            let net = Mlp::init(&arch, &mut rng).unwrap();
            let x: Vec<f64> = (0..arch[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..*arch.last().unwrap())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();

            let trace = net.forward_trace(&x).unwrap();
            let y = trace.activations.last().unwrap();
            let grad_out: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            let mut grads = net.zero_gradients();
            net.backward(&trace, &grad_out, &mut grads);

            let h = 1e-5;
            let mut max_rel = 0.0f64;
            for li in 0..net.layers.len() {
                for wi in 0..net.layers[li].weights.len() {
                    let mut plus = net.clone();
                    plus.layers[li].weights[wi] += h;
                    let mut minus = net.clone();
                    minus.layers[li].weights[wi] -= h;
                    let num = (loss(&plus, &x, &target) - loss(&minus, &x, &target)) / (2.0 * h);
                    let ana = grads.layers[li].weights[wi];
                    let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
                    max_rel = max_rel.max(rel);
                }
                for bi in 0..net.layers[li].biases.len() {
                    let mut plus = net.clone();
                    plus.layers[li].biases[bi] += h;
                    let mut minus = net.clone();
                    minus.layers[li].biases[bi] -= h;
                    let num = (loss(&plus, &x, &target) - loss(&minus, &x, &target)) / (2.0 * h);
                    let ana = grads.layers[li].biases[bi];
                    let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
                    max_rel = max_rel.max(rel);
                }
            }
            assert!(max_rel <= 1e-5, "max relative gradient error {max_rel}");
        }
    }

    #[test]
    fn sgd_descends_on_a_fixed_batch() {
        let mut rng = stream(40, "sgd", &[]);
        let mut net = Mlp::init(&[2, 16, 1], &mut rng).unwrap();
        let data: Vec<([f64; 2], f64)> = (0..32)
            .map(|_| {
                let a = rng.random_range(-1.0..1.0);
                let b = rng.random_range(-1.0..1.0);
                ([a, b], a * b)
            })
            .collect();
        let batch_loss = |net: &Mlp| -> f64 {
            data.iter().map(|(x, t)| loss(net, x, &[*t])).sum::<f64>() / data.len() as f64
        };
        let before = batch_loss(&net);
        for _ in 0..500 {
            let mut grads = net.zero_gradients();
            for (x, t) in &data {
                let trace = net.forward_trace(x).unwrap();
                let y = trace.activations.last().unwrap()[0];
                net.backward(&trace, &[2.0 * (y - t) / data.len() as f64], &mut grads);
            }
            net.sgd_step(&grads, 0.05);
        }
        let after = batch_loss(&net);
        assert!(after < before * 0.2, "loss {before} -> {after}");
    }
}
