use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Activation, Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Architecture of a feedforward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub dropout: f64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        Self {
            widths,
            hidden,
            output,
            batch_norm: false,
            dropout: 0.0,
        }
    }

    /// Linear-layer parameter count, `sum(w_i * w_{i+1} + w_{i+1})`.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

impl BatchNormParams {
    fn new(width: usize) -> Self {
        Self {
            gamma: Tensor::full(&[width], 1.0),
            beta: Tensor::zeros(&[width]),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
    pub norm: Option<BatchNormParams>,
}

/// Parameters of a feedforward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    dropout: f64,
}

/// Per-layer batch statistics gathered by a training-mode forward pass.
pub type BatchStats = Vec<Option<(Vec<f64>, Vec<f64>)>>;

impl Mlp {
    /// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for weights
    /// and biases.
    pub fn new(spec: &MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.widths.len() < 2 || spec.widths.contains(&0) {
            return Err(Error::Invalid(format!(
                "mlp widths must be >= 2 positive entries, got {:?}",
                spec.widths
            )));
        }
        let n = spec.widths.len() - 1;
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = |len: usize| -> Vec<f64> {
                    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
                };
                let weight = Tensor::new(vec![w[0], w[1]], draw(w[0] * w[1])).expect("sized");
                let bias = Tensor::vector(draw(w[1]));
                let last = i + 1 == n;
                Dense {
                    weight,
                    bias,
                    activation: if last { spec.output } else { spec.hidden },
                    norm: (spec.batch_norm && !last).then(|| BatchNormParams::new(w[1])),
                }
            })
            .collect();
        Ok(Self {
            layers,
            dropout: spec.dropout,
        })
    }

    /// Builds a network from explicit layers; widths must chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            let ws = l.weight.shape();
            if ws.len() != 2 || l.bias.numel() != ws[1] {
                return Err(shape_err("Mlp::from_layers", format!("layer {i}: {ws:?}")));
            }
            if i > 0 && layers[i - 1].weight.shape()[1] != ws[0] {
                return Err(shape_err("Mlp::from_layers", format!("layer {i} input width")));
            }
        }
        if layers.is_empty() {
            return Err(Error::Invalid("mlp needs at least one layer".into()));
        }
        Ok(Self {
            layers,
            dropout: 0.0,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.weight.shape()[1]).unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.weight.shape()[1]));
        w
    }

    /// Linear-layer parameter count.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum()
    }

    /// Every trainable tensor, in a fixed order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    /// Places the parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp<'_> {
        let vars = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                weight: tape.leaf(l.weight.clone()),
                bias: tape.leaf(l.bias.clone()),
                norm: l
                    .norm
                    .as_ref()
                    .map(|n| (tape.leaf(n.gamma.clone()), tape.leaf(n.beta.clone()))),
            })
            .collect();
        BoundMlp { mlp: self, vars }
    }

    /// Folds batch statistics from a training pass into the running
    /// estimates used at inference.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for (l, s) in self.layers.iter_mut().zip(stats) {
            if let (Some(n), Some((mean, var))) = (&mut l.norm, s) {
                for j in 0..mean.len() {
                    n.running_mean[j] = (1.0 - BN_MOMENTUM) * n.running_mean[j] + BN_MOMENTUM * mean[j];
                    n.running_var[j] = (1.0 - BN_MOMENTUM) * n.running_var[j] + BN_MOMENTUM * var[j];
                }
            }
        }
    }

    /// Forward pass on plain values (no tape, inference mode).
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(false);
        let bound = self.bind(&mut tape);
        let out = bound.forward(&mut tape, &Var::constant(input.clone()))?;
        Ok(out.value().clone())
    }
}

struct BoundLayer {
    weight: Var,
    bias: Var,
    norm: Option<(Var, Var)>,
}

/// An [`Mlp`] whose parameters live on a tape.
pub struct BoundMlp<'a> {
    mlp: &'a Mlp,
    vars: Vec<BoundLayer>,
}

impl BoundMlp<'_> {
    /// Bound parameters, matching the order of [`Mlp::parameters`].
    pub fn vars(&self) -> Vec<&Var> {
        let mut out = Vec::new();
        for l in &self.vars {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some((g, b)) = &l.norm {
                out.push(g);
                out.push(b);
            }
        }
        out
    }

    /// Inference-mode forward pass: batch norm uses running statistics and
    /// dropout is disabled.
    pub fn forward(&self, tape: &mut Tape, input: &Var) -> Result<Var> {
        self.run(tape, input, None).map(|(v, _)| v)
    }

    /// Training-mode forward pass with batch statistics and dropout.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        input: &Var,
        rng: &mut dyn rand::RngCore,
    ) -> Result<(Var, BatchStats)> {
        self.run(tape, input, Some(rng))
    }

    fn run(
        &self,
        tape: &mut Tape,
        input: &Var,
        mut rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Var, BatchStats)> {
        if input.value().cols() != self.mlp.input_width() {
            return Err(shape_err(
                "mlp_forward",
                format!(
                    "input width {} but first layer expects {}",
                    input.value().cols(),
                    self.mlp.input_width()
                ),
            ));
        }
        let n_layers = self.vars.len();
        let mut stats = Vec::with_capacity(n_layers);
        let mut h = input.clone();
        for (i, (layer, bound)) in self.mlp.layers.iter().zip(&self.vars).enumerate() {
            h = tape.matmul(&h, &bound.weight)?;
            h = tape.add_bias(&h, &bound.bias)?;
            let mut layer_stats = None;
            if let (Some(params), Some((g, b))) = (&layer.norm, &bound.norm) {
                if rng.is_some() {
                    let (y, mean, var) = tape.batch_norm(&h, g, b, BN_EPS)?;
                    h = y;
                    layer_stats = Some((mean, var));
                } else {
                    h = eval_norm(tape, &h, params, g, b)?;
                }
            }
            h = tape.activation(&h, layer.activation);
            if !h.value().is_finite() {
                return Err(Error::NonFinite(format!("mlp layer {i}")));
            }
            let hidden = i + 1 < n_layers;
            if hidden && self.mlp.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let keep = 1.0 - self.mlp.dropout;
                    let mask: Vec<f64> = (0..h.value().numel())
                        .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let mask = Var::constant(Tensor::new(h.shape().to_vec(), mask)?);
                    h = tape.mul(&h, &mask)?;
                }
            }
            stats.push(layer_stats);
        }
        Ok((h, stats))
    }
}

fn eval_norm(tape: &mut Tape, h: &Var, params: &BatchNormParams, g: &Var, b: &Var) -> Result<Var> {
    let c = h.value().cols();
    let inv: Vec<f64> = params
        .running_var
        .iter()
        .map(|v| 1.0 / (v + BN_EPS).sqrt())
        .collect();
    let shift: Vec<f64> = params
        .running_mean
        .iter()
        .zip(&inv)
        .map(|(m, s)| -m * s)
        .collect();
    let rows = h.value().rows();
    let scale_rows: Vec<f64> = (0..rows).flat_map(|_| inv.iter().copied()).collect();
    let scale = Var::constant(Tensor::new(h.shape().to_vec(), scale_rows)?);
    let normed = tape.mul(h, &scale)?;
    let normed = tape.add_bias(&normed, &Var::constant(Tensor::vector(shift)))?;
    // gamma stays differentiable: broadcast it through a gather.
    let index = std::rc::Rc::new((0..rows * c).map(|k| k % c).collect::<Vec<_>>());
    let gamma_b = tape.gather(g, index, h.shape().to_vec())?;
    let y = tape.mul(&normed, &gamma_b)?;
    tape.add_bias(&y, b)
}

/// Forward pass of `params` on `input`, recorded when `tape` records.
pub fn mlp_forward(params: &Mlp, input: &Var, tape: &mut Tape) -> Result<Var> {
    let bound = params.bind(tape);
    bound.forward(tape, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let mlp = Mlp::from_layers(vec![Dense {
            weight: eye,
            bias: Tensor::zeros(&[3]),
            activation: Activation::Identity,
            norm: None,
        }])
        .unwrap();
        let out = mlp.predict(&Tensor::matrix(1, 3, vec![1., 2., 3.]).unwrap()).unwrap();
        assert_eq!(out.data(), &[1., 2., 3.]);
    }

    #[test]
    fn silu_of_zero_is_zero() {
        let mlp = Mlp::from_layers(vec![Dense {
            weight: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            bias: Tensor::zeros(&[1]),
            activation: Activation::Silu,
            norm: None,
        }])
        .unwrap();
        let out = mlp.predict(&Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.0]);
    }

    #[test]
    fn input_width_is_checked() {
        let spec = MlpSpec::new(vec![2, 4, 1], Activation::Silu, Activation::Identity);
        let mlp = Mlp::new(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(mlp.predict(&Tensor::matrix(1, 3, vec![0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn non_finite_activation_is_an_error() {
        let mlp = Mlp::from_layers(vec![Dense {
            weight: Tensor::matrix(1, 1, vec![f64::MAX]).unwrap(),
            bias: Tensor::zeros(&[1]),
            activation: Activation::Identity,
            norm: None,
        }])
        .unwrap();
        let r = mlp.predict(&Tensor::matrix(1, 1, vec![10.0]).unwrap());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn param_count_matches_width_formula() {
        let spec = MlpSpec::new(vec![22, 50, 50, 20, 10, 3], Activation::Silu, Activation::Identity);
        let mlp = Mlp::new(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(mlp.param_count(), 4963);
        assert_eq!(spec.param_count(), 4963);
    }

    #[test]
    fn eval_mode_batch_norm_uses_running_stats() {
        let mut spec = MlpSpec::new(vec![2, 3, 1], Activation::Silu, Activation::Identity);
        spec.batch_norm = true;
        spec.dropout = 0.5;
        let mlp = Mlp::new(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.3, -0.1, 1.0, 2.0]).unwrap();
        // Inference is deterministic despite dropout being configured.
        assert_eq!(mlp.predict(&x).unwrap(), mlp.predict(&x).unwrap());
    }
}
