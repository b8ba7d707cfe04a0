use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::dense;

/// Fully connected rectifier network with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input followed by every post-activation (the last entry is the output).
    activations: Vec<Array2<f64>>,
}

impl Mlp {
    /// All parameters zero. `dims` lists input, hidden and output widths.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(
            dims.len() >= 2,
            "an MLP needs at least input and output widths"
        );
        assert!(dims.iter().all(|&d| d > 0), "layer widths must be positive");
        let n = dims.windows(2).map(|w| dense::layer_len(w[0], w[1])).sum();
        Self {
            dims: dims.to_vec(),
            params: vec![0.0; n],
        }
    }

    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        let mut off = 0;
        for w in net.dims.clone().windows(2) {
            dense::init_uniform_fan_in(&mut net.params[off..], w[0], w[1], rng);
            off += dense::layer_len(w[0], w[1]);
        }
        net
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.dims.windows(2).map(move |w| {
            let start = off;
            off += dense::layer_len(w[0], w[1]);
            (start, w[0], w[1])
        })
    }

    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.dims.len() - 2;
        let mut h: Option<Array2<f64>> = None;
        for (l, (off, fi, fo)) in self.layers().enumerate() {
            let p = &self.params[off..];
            let input = h.as_ref().map(|a| a.view()).unwrap_or(x);
            let mut z = dense::affine(input, dense::weight(p, fi, fo), dense::bias(p, fi, fo));
            if l < last {
                dense::relu_inplace(&mut z);
            }
            h = Some(z);
        }
        h.unwrap()
    }

    pub(crate) fn forward_tape(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpTape) {
        let last = self.dims.len() - 2;
        let mut activations = vec![x.to_owned()];
        for (l, (off, fi, fo)) in self.layers().enumerate() {
            let p = &self.params[off..];
            let mut z = dense::affine(
                activations[l].view(),
                dense::weight(p, fi, fo),
                dense::bias(p, fi, fo),
            );
            if l < last {
                dense::relu_inplace(&mut z);
            }
            activations.push(z);
        }
        (activations.last().unwrap().clone(), MlpTape { activations })
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub(crate) fn backward(
        &self,
        tape: &MlpTape,
        upstream: ArrayView2<f64>,
    ) -> (Vec<f64>, Array2<f64>) {
        let layers: Vec<_> = self.layers().collect();
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_owned();
        for (l, &(off, fi, fo)) in layers.iter().enumerate().rev() {
            let (gw, gb) = dense::split_grad_mut(&mut grads[off..], fi, fo);
            dense::accumulate_param_grad(tape.activations[l].view(), delta.view(), gw, gb);
            let w = dense::weight(&self.params[off..], fi, fo);
            let mut next = delta.dot(&w);
            if l > 0 {
                dense::relu_mask(&mut next, &tape.activations[l]);
            }
            delta = next;
        }
        (grads, delta)
    }
}
