//! Differentiable function approximators with hand-written backward passes.
//!
//! All computation is in `f64`. Every network keeps its trainable parameters
//! in one contiguous slice so optimizers, target averaging, checkpoints and
//! finite-difference checks can treat them uniformly.

pub mod checkpoint;
pub mod critic;
mod dense;
pub mod mlp;
pub mod modern;
pub mod optim;
pub mod policy;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use critic::CriticEnsemble;
pub use mlp::Mlp;
pub use modern::ModernNet;
pub use optim::{polyak_update, AdamState};
pub use policy::{GaussianPolicy, PolicyGrad};

/// Architecture descriptor; also the text form stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Arch {
    /// Rectifier MLP. `dims` = input, hidden..., output.
    Simple { dims: Vec<usize> },
    /// Residual blocks with layer norm and spectrally normalized linears.
    Modern {
        input: usize,
        hidden: usize,
        blocks: usize,
        output: usize,
    },
}

impl Arch {
    pub fn input_dim(&self) -> usize {
        match self {
            Arch::Simple { dims } => dims[0],
            Arch::Modern { input, .. } => *input,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Arch::Simple { dims } => *dims.last().unwrap(),
            Arch::Modern { output, .. } => *output,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Arch::Simple { dims } => dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum(),
            Arch::Modern {
                input,
                hidden,
                blocks,
                output,
            } => ModernNet::param_len(*input, *hidden, *blocks, *output),
        }
    }

    fn simple(input: usize, layers: usize, width: usize, output: usize) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(width, layers));
        dims.push(output);
        Arch::Simple { dims }
    }
}

/// Network size presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    SimpleSmall,
    SimpleLarge,
    ModernLarge,
}

impl Preset {
    pub fn actor(self, state_dim: usize, action_dim: usize) -> Arch {
        match self {
            Preset::SimpleSmall => Arch::simple(state_dim, 2, 256, action_dim),
            Preset::SimpleLarge => Arch::simple(state_dim, 5, 1024, action_dim),
            Preset::ModernLarge => Arch::Modern {
                input: state_dim,
                hidden: 1024,
                blocks: 2,
                output: action_dim,
            },
        }
    }

    pub fn critic(self, state_dim: usize, action_dim: usize) -> Arch {
        let input = state_dim + action_dim;
        match self {
            Preset::SimpleSmall => Arch::simple(input, 2, 256, 1),
            Preset::SimpleLarge => Arch::simple(input, 3, 256, 1),
            Preset::ModernLarge => Arch::Modern {
                input,
                hidden: 256,
                blocks: 1,
                output: 1,
            },
        }
    }

    /// Value network (IQL only); always a simple MLP.
    pub fn value(self, state_dim: usize) -> Arch {
        match self {
            Preset::SimpleSmall => Arch::simple(state_dim, 2, 256, 1),
            Preset::SimpleLarge | Preset::ModernLarge => Arch::simple(state_dim, 2, 1024, 1),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple-small" => Ok(Preset::SimpleSmall),
            "simple-large" => Ok(Preset::SimpleLarge),
            "modern-large" => Ok(Preset::ModernLarge),
            other => Err(Error::invalid(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Net {
    Simple(Mlp),
    Modern(ModernNet),
}

/// Intermediate values recorded by a forward pass, consumed by `backward`.
// Tapes live for one forward/backward pair, so boxing buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Tape {
    Simple(mlp::MlpTape),
    Modern(modern::ModernTape),
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Grads {
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

impl Net {
    pub fn new<R: Rng + ?Sized>(arch: &Arch, rng: &mut R) -> Self {
        match arch {
            Arch::Simple { dims } => Net::Simple(Mlp::new(dims, rng)),
            Arch::Modern {
                input,
                hidden,
                blocks,
                output,
            } => Net::Modern(ModernNet::new(*input, *hidden, *blocks, *output, rng)),
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            Net::Simple(m) => Arch::Simple {
                dims: m.dims().to_vec(),
            },
            Net::Modern(m) => Arch::Modern {
                input: m.input_dim(),
                hidden: m.hidden_dim(),
                blocks: m.num_blocks(),
                output: m.output_dim(),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Net::Simple(m) => m.input_dim(),
            Net::Modern(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Net::Simple(m) => m.output_dim(),
            Net::Modern(m) => m.output_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Net::Simple(m) => m.params(),
            Net::Modern(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Net::Simple(m) => m.params_mut(),
            Net::Modern(m) => m.params_mut(),
        }
    }

    /// Non-trainable state (power-iteration vectors), flattened in layer order.
    pub fn buffers(&self) -> Vec<f64> {
        match self {
            Net::Simple(_) => Vec::new(),
            Net::Modern(m) => m
                .spectral_states()
                .iter()
                .flat_map(|s| s.u.iter().chain(s.v.iter()).copied())
                .collect(),
        }
    }

    pub fn set_buffers(&mut self, flat: &[f64]) -> Result<()> {
        match self {
            Net::Simple(_) if flat.is_empty() => Ok(()),
            Net::Simple(_) => Err(Error::invalid("simple networks carry no buffers")),
            Net::Modern(m) => {
                let need: usize = m
                    .spectral_states()
                    .iter()
                    .map(|s| s.u.len() + s.v.len())
                    .sum();
                if flat.len() != need {
                    return Err(Error::invalid(format!(
                        "expected {need} buffer values, got {}",
                        flat.len()
                    )));
                }
                let mut off = 0;
                for s in m.spectral_states_mut() {
                    let (nu, nv) = (s.u.len(), s.v.len());
                    s.u = Array1::from(flat[off..off + nu].to_vec());
                    s.v = Array1::from(flat[off + nu..off + nu + nv].to_vec());
                    off += nu + nv;
                }
                Ok(())
            }
        }
    }

    /// Advances spectral-norm estimates by one power-iteration step.
    /// Called once per training update; no-op for simple networks.
    pub fn refresh_spectral(&mut self) {
        if let Net::Modern(m) = self {
            m.refresh_spectral();
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects input width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Batched forward pass; one row per sample.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        Ok(match self {
            Net::Simple(m) => m.forward(x),
            Net::Modern(m) => m.forward(x),
        })
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&x)?;
        Ok(match self {
            Net::Simple(m) => {
                let (y, t) = m.forward_tape(x);
                (y, Tape::Simple(t))
            }
            Net::Modern(m) => {
                let (y, t) = m.forward_tape(x);
                (y, Tape::Modern(t))
            }
        })
    }

    /// Gradients of `Σ ⟨upstream_b, output_b⟩` w.r.t. parameters and input.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<Grads> {
        if upstream.ncols() != self.output_dim() {
            return Err(Error::invalid(format!(
                "upstream width {} does not match output width {}",
                upstream.ncols(),
                self.output_dim()
            )));
        }
        let (params, input) = match (self, tape) {
            (Net::Simple(m), Tape::Simple(t)) => m.backward(t, upstream),
            (Net::Modern(m), Tape::Modern(t)) => m.backward(t, upstream),
            _ => return Err(Error::invalid("tape does not belong to this network")),
        };
        Ok(Grads { params, input })
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    /// Parameter gradient of `⟨upstream, forward(x)⟩` for a single input.
    pub fn grad(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let xv = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let (_, tape) = self.forward_tape(xv)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).unwrap();
        Ok(self.backward(&tape, up)?.params)
    }
}

/// Concatenates two row-aligned matrices column-wise.
pub(crate) fn hstack(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[a, b]).expect("row counts must match")
}
