use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, softplus, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus,
    Tanh,
    Identity,
    /// `x^2`; lets quadratic energies be written exactly as networks.
    Square,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Square => "square",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            "square" => Ok(Activation::Square),
            _ => Err(Error::Config(format!(
                "unknown activation `{s}`; expected relu, softplus, tanh, identity or square"
            ))),
        }
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Square => x * x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Identity => 1.0,
            Activation::Square => 2.0 * x,
        }
    }

    pub fn on<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Softplus => x.softplus(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Square => x.square(),
        }
    }
}

/// Anything with a fixed, ordered list of trainable tensors.
pub trait Parameters {
    fn param_tensors(&self) -> Vec<&Tensor>;
    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor>;
    fn param_names(&self) -> Vec<String>;

    fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.param_tensors().iter().all(|t| t.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[1, out]`
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub name: String,
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases. `sizes` lists every width from
    /// input to output; all hidden layers use `hidden`.
    pub fn init(
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
                Layer {
                    weight: Tensor::from_matrix(fan_in, fan_out, w),
                    bias: Tensor::zeros(1, fan_out),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self {
            name: name.to_string(),
            layers,
        }
    }

    pub fn from_layers(name: &str, layers: Vec<Layer>) -> Result<Self> {
        let mlp = Self {
            name: name.to_string(),
            layers,
        };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("mlp", "no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.dims() != (1, l.weight.cols()) {
                return Err(Error::shape(
                    "mlp",
                    format!("layer {i}: bias {:?} vs weight {:?}", l.bias.dims(), l.weight.dims()),
                ));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.weight.rows() != l.weight.cols() {
                    return Err(Error::shape(
                        "mlp",
                        format!("layer {} output {} feeds input {}", i, l.weight.cols(), next.weight.rows()),
                    ));
                }
            }
        }
        if !self.all_finite() {
            return Err(Error::InvalidState(format!("{}: non-finite parameters", self.name)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    fn check_input(&self, dims: (usize, usize)) -> Result<()> {
        if dims.1 != self.input_dim() {
            return Err(Error::shape(
                "forward_mlp",
                format!("{}: input has {} columns, expected {}", self.name, dims.1, self.input_dim()),
            ));
        }
        Ok(())
    }

    /// Tape-free forward pass. Uses the same kernels as the taped path, so both
    /// produce identical values.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.dims())?;
        let mut h = x.clone();
        for l in &self.layers {
            let a = h.matmul(&l.weight).add(&l.bias.expand(h.rows(), l.weight.cols()));
            h = a.map(|v| l.activation.apply(v));
        }
        Ok(h)
    }

    /// Places the weights on `tape`, as registered parameters when
    /// `trainable` and as constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundMlp {
            name: self.name.clone(),
            input_dim: self.input_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| (leaf(&l.weight), leaf(&l.bias), l.activation))
                .collect(),
        }
    }
}

impl Parameters for MlpParams {
    fn param_tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| {
                [
                    format!("{}.layer{i}.weight", self.name),
                    format!("{}.layer{i}.bias", self.name),
                ]
            })
            .collect()
    }
}

/// An [`MlpParams`] whose weights live on a tape.
pub struct BoundMlp<'t> {
    name: String,
    input_dim: usize,
    layers: Vec<(Var<'t>, Var<'t>, Activation)>,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let (_, c) = x.dims();
        if c != self.input_dim {
            return Err(Error::shape(
                "forward_mlp",
                format!("{}: input has {c} columns, expected {}", self.name, self.input_dim),
            ));
        }
        let mut h = x;
        for &(w, b, act) in &self.layers {
            h = act.on(h.matmul(w).add_row(b));
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}
