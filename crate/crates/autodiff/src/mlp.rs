//! The neural quantum state network: a plain MLP with smooth
//! activations.
//!
//! Inputs are `[B, n+1]` rows of basis bits encoded as ±1 features plus
//! the scaled time; outputs are `[B, 2]` (real and imaginary part of one
//! amplitude per row). Every hidden layer is tanh — the physics loss
//! differentiates the network once in `t` and again in the weights, so
//! the activation must be smooth.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{NodeId, ParamStore, Tape};
use crate::AdError;

/// Layer sizes of an [`Mlp`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
        }
    }

    /// The default network for an `n`-qubit amplitude model: bits plus
    /// scaled time in, three hidden layers of 64 tanh units, (Re, Im) out.
    pub fn amplitude_default(n: usize) -> Self {
        Self::new(n + 1, vec![64, 64, 64], 2)
    }

    /// Widths of consecutive layers, input first.
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output);
        w
    }

    /// Total number of weights and biases.
    pub fn num_params(&self) -> usize {
        self.widths()
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }
}

#[derive(Clone, Debug)]
struct LayerBlock {
    weight_offset: usize,
    bias_offset: usize,
    fan_in: usize,
    fan_out: usize,
}

/// A multilayer perceptron whose parameters live in a shared
/// [`ParamStore`]. Hidden layers apply tanh; the output layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<LayerBlock>,
}

impl Mlp {
    /// Registers freshly initialized parameters into `store` and returns
    /// the network handle. Weights draw from a scaled uniform
    /// (Glorot-style) distribution; biases start at zero.
    pub fn register(
        spec: MlpSpec,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        label: &str,
    ) -> Self {
        Self::register_with_output_scale(spec, store, rng, label, 1.0)
    }

    /// [`Mlp::register`] with the output layer's weights shrunk by
    /// `output_scale`, so the freshly initialized network starts near
    /// zero. Keeps stiff residual terms (which grow quadratically with
    /// the output magnitude) from dwarfing every other loss component at
    /// the start of training.
    pub fn register_with_output_scale(
        spec: MlpSpec,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        label: &str,
        output_scale: f64,
    ) -> Self {
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let last = widths.len() - 2;
        for (idx, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if idx == last {
                limit *= output_scale;
            }
            let weight_offset = store.register(
                format!("{label}/w{idx}"),
                fan_in,
                fan_out,
                || rng.gen_range(-limit..limit),
            );
            let bias_offset =
                store.register(format!("{label}/b{idx}"), 1, fan_out, || 0.0);
            layers.push(LayerBlock {
                weight_offset,
                bias_offset,
                fan_in,
                fan_out,
            });
        }
        Self { spec, layers }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Records the forward pass on `tape` for a `[B, input]` node and
    /// returns the `[B, output]` result node. Tangents on the input (the
    /// scaled-time feature) propagate through automatically.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: NodeId,
    ) -> Result<NodeId, AdError> {
        let got = tape.value(input).ncols();
        if got != self.spec.input {
            return Err(AdError::InputWidth {
                expected: self.spec.input,
                got,
            });
        }
        let mut x = input;
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.weight_offset, layer.fan_in, layer.fan_out);
            let b = tape.param(store, layer.bias_offset, 1, layer.fan_out);
            let z = tape.matmul(x, w);
            let z = tape.add_row(z, b);
            x = if idx == last { z } else { tape.tanh(z) };
        }
        Ok(x)
    }
}

/// Builds the `[B, n+1]` input matrix for a batch of basis indices at one
/// time: each row is the n bits of the basis index as ±1 (bit 1 → +1),
/// most significant qubit first, followed by `t / t_scale`.
pub fn amplitude_inputs(basis: &[usize], n: usize, t: f64, t_scale: f64) -> Array2<f64> {
    let mut x = Array2::zeros((basis.len(), n + 1));
    for (row, &b) in basis.iter().enumerate() {
        for q in 0..n {
            let bit = (b >> (n - 1 - q)) & 1;
            x[(row, q)] = if bit == 1 { 1.0 } else { -1.0 };
        }
        x[(row, n)] = t / t_scale;
    }
    x
}

/// The tangent seed matching [`amplitude_inputs`] for differentiation in
/// raw `t`: zero on every bit feature, `1/t_scale` on the time feature
/// (the chain factor from the scaling).
pub fn amplitude_input_tangent(batch: usize, n: usize, t_scale: f64) -> Array2<f64> {
    let mut t = Array2::zeros((batch, n + 1));
    for row in 0..batch {
        t[(row, n)] = 1.0 / t_scale;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zeroed(spec: MlpSpec) -> (Mlp, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::register(spec, &mut store, &mut rng, "net");
        for v in store.data_mut() {
            *v = 0.0;
        }
        (mlp, store)
    }

    #[test]
    fn zero_network_outputs_zero_everywhere() {
        let (mlp, store) = zeroed(MlpSpec::new(3, vec![8, 8], 2));
        let mut tape = Tape::new();
        let x = tape.input(amplitude_inputs(&[0, 3, 5], 2, 0.7, 1.0), None);
        let out = mlp.forward(&mut tape, &store, x).unwrap();
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_bias_gives_constant_amplitude() {
        let (mlp, mut store) = zeroed(MlpSpec::new(3, vec![4], 2));
        // The final registered block is the output bias.
        let blocks = store.blocks().to_vec();
        let out_bias = blocks.last().unwrap().clone();
        assert_eq!(out_bias.rows * out_bias.cols, 2);
        store.data_mut()[out_bias.offset] = 0.25;
        store.data_mut()[out_bias.offset + 1] = -0.75;
        let mut tape = Tape::new();
        let x = tape.input(amplitude_inputs(&[0, 1, 2, 3], 2, 0.3, 2.0), None);
        let out = mlp.forward(&mut tape, &store, x).unwrap();
        let v = tape.value(out);
        for r in 0..4 {
            assert_eq!(v[(r, 0)], 0.25);
            assert_eq!(v[(r, 1)], -0.75);
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let (mlp, store) = zeroed(MlpSpec::new(4, vec![4], 2));
        let mut tape = Tape::new();
        let x = tape.input(Array2::zeros((2, 3)), None);
        assert!(matches!(
            mlp.forward(&mut tape, &store, x),
            Err(AdError::InputWidth {
                expected: 4,
                got: 3
            })
        ));
    }

    #[test]
    fn perturbing_a_live_first_layer_weight_changes_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::register(MlpSpec::new(3, vec![5], 2), &mut store, &mut rng, "net");
        let eval = |store: &ParamStore| {
            let mut tape = Tape::new();
            let x = tape.input(amplitude_inputs(&[1], 2, 0.4, 1.0), None);
            let out = mlp.forward(&mut tape, &store, x).unwrap();
            (tape.value(out)[(0, 0)], tape.value(out)[(0, 1)])
        };
        let before = eval(&store);
        // Input row for basis 1 of 2 qubits is (−1, +1, 0.4): every input
        // feature is nonzero, so any first-layer weight is live.
        store.data_mut()[0] += 1e-3;
        let after = eval(&store);
        assert!(before != after);
    }

    #[test]
    fn zero_t_weights_give_zero_tangent() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = MlpSpec::new(3, vec![6], 2);
        let mlp = Mlp::register(spec, &mut store, &mut rng, "net");
        // Zero out the first-layer weights on the time feature (last input
        // row of the weight matrix, which is row index input-1 = 2).
        let w0 = store.blocks()[0].clone();
        assert_eq!(w0.rows, 3);
        for c in 0..w0.cols {
            store.data_mut()[w0.offset + 2 * w0.cols + c] = 0.0;
        }
        let mut tape = Tape::new();
        let x = tape.input(
            amplitude_inputs(&[0, 1, 2, 3], 2, 0.8, 1.0),
            Some(amplitude_input_tangent(4, 2, 1.0)),
        );
        let out = mlp.forward(&mut tape, &store, x).unwrap();
        let tangent = tape.tangent(out).unwrap();
        assert!(tangent.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn time_tangent_matches_central_finite_difference() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = MlpSpec::new(4, vec![10, 10], 2);
        let mlp = Mlp::register(spec, &mut store, &mut rng, "net");
        let basis = [0usize, 2, 5, 7];
        let n = 3;
        let t_scale = 2.5;
        let t0 = 0.9;

        let eval = |t: f64| {
            let mut tape = Tape::new();
            let x = tape.input(amplitude_inputs(&basis, n, t, t_scale), None);
            let out = mlp.forward(&mut tape, &store, x).unwrap();
            tape.value(out).clone()
        };

        let mut tape = Tape::new();
        let x = tape.input(
            amplitude_inputs(&basis, n, t0, t_scale),
            Some(amplitude_input_tangent(basis.len(), n, t_scale)),
        );
        let out = mlp.forward(&mut tape, &store, x).unwrap();
        let tangent = tape.tangent(out).unwrap().clone();

        let h = 1e-5;
        let fd = (eval(t0 + h) - eval(t0 - h)) / (2.0 * h);
        for (a, b) in tangent.iter().zip(fd.iter()) {
            let rel = (a - b).abs() / b.abs().max(1e-8);
            assert!(rel < 1e-6, "tangent {a} vs fd {b}");
        }
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = MlpSpec::new(5, vec![7, 3], 2);
        assert_eq!(spec.num_params(), 5 * 7 + 7 + 7 * 3 + 3 + 3 * 2 + 2);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = Mlp::register(spec.clone(), &mut store, &mut rng, "net");
        assert_eq!(store.len(), spec.num_params());
    }
}
