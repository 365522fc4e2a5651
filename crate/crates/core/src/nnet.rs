//! Small dense feed-forward networks with exact reverse-mode gradients,
//! Nesterov-momentum SGD and a step-decay learning-rate schedule.
//!
//! Networks operate on row batches: an input of shape `batch x in` produces
//! an output of shape `batch x out`. All arithmetic is `f64`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::validation(format!("unknown activation '{other}'"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::shape(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    l2: f64,
}

/// Activations recorded by a batched forward pass; needed by `backward`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[k + 1]` the output of layer `k`.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter-shaped buffer: gradients, velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// Parameter values in a fixed order: per layer, `W` row-major then `b`.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    fn check_finite(&self) -> Result<()> {
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    path: format!("layer{k}/W"),
                });
            }
            if l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    path: format!("layer{k}/b"),
                });
            }
        }
        Ok(())
    }

    fn congruent(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len()
            })
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>, l2: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!(
                    "layer{k} outputs {} values but layer{} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::validation("l2 strength must be finite and nonnegative"));
        }
        let net = Self { layers, l2 };
        if net.parameters_finite().is_err() {
            return Err(Error::validation("network parameters must be finite"));
        }
        Ok(net)
    }

    /// He-style uniform initialisation: `W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in))`, `b = 0`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        head: Activation,
        l2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::shape("layer sizes need an input and an output, all nonzero"));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                let activation = if k == last { head } else { hidden };
                Layer::new(weights, Array1::zeros(fan_out), activation)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, l2)
    }

    /// `hidden_layers` ReLU layers of width `units`, then an output layer with `head`.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden_layers: usize,
        units: usize,
        output: usize,
        head: Activation,
        l2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(units, hidden_layers));
        sizes.push(output);
        Self::init(&sizes, Activation::Relu, head, l2, rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Overwrites parameters from the `flatten` ordering.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape("flat parameter vector has the wrong length"));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn parameters_finite(&self) -> Result<()> {
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    path: format!("layer{k}/W"),
                });
            }
            if l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    path: format!("layer{k}/b"),
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let batch = x
            .to_owned()
            .into_shape_with_order((1, x.len()))
            .map_err(|e| Error::shape(e.to_string()))?;
        let out = self.forward_batch(batch.view())?;
        Ok(out.row(0).to_owned())
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut a = x.to_owned();
        for layer in &self.layers {
            a = Self::apply_layer(layer, &a);
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let next = Self::apply_layer(layer, activations.last().expect("nonempty"));
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn apply_layer(layer: &Layer, input: &Array2<f64>) -> Array2<f64> {
        let mut z = input.dot(&layer.weights.t());
        z += &layer.bias;
        let act = layer.activation;
        z.mapv_inplace(|v| act.apply(v));
        z
    }

    /// Reverse pass for a cached batch.
    ///
    /// `upstream` holds `dL/d output` per row. Returns parameter gradients
    /// (summed over rows, plus `l2 * theta`) and `dL/d input` per row.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.check_cache(cache)?;
        if upstream.dim() != cache.output().dim() {
            return Err(Error::shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                cache.output().dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.activations[k + 1];
            let input = &cache.activations[k];
            let act = layer.activation;
            Zip::from(&mut delta)
                .and(out)
                .for_each(|d, &a| *d *= act.derivative_from_output(a));
            let mut dw = delta.t().dot(input);
            let mut db = delta.sum_axis(Axis(0));
            if self.l2 > 0.0 {
                dw.scaled_add(self.l2, &layer.weights);
                db.scaled_add(self.l2, &layer.bias);
            }
            let next_delta = delta.dot(&layer.weights);
            grads.push(LayerGrad {
                weights: dw,
                bias: db,
            });
            delta = next_delta;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.activations.len() == self.layers.len() + 1
            && cache.activations[0].ncols() == self.input_dim()
            && self
                .layers
                .iter()
                .zip(&cache.activations[1..])
                .all(|(l, a)| a.ncols() == l.output_dim());
        if ok {
            Ok(())
        } else {
            Err(Error::State(
                "no forward cache recorded for this network".into(),
            ))
        }
    }

    /// `0.5 * l2 * |theta|^2`, the penalty whose gradient `backward` adds.
    pub fn l2_penalty(&self) -> f64 {
        let sq: f64 = self
            .layers
            .iter()
            .map(|l| l.weights.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum();
        0.5 * self.l2 * sq
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.put_meta(&format!("{prefix}layers"), self.layers.len());
        ckpt.put_meta(&format!("{prefix}l2"), self.l2);
        for (k, l) in self.layers.iter().enumerate() {
            let (rows, cols) = l.weights.dim();
            ckpt.put_array(
                &format!("{prefix}layer{k}/W"),
                vec![rows, cols],
                l.weights.iter().copied().collect(),
            );
            ckpt.put_array(
                &format!("{prefix}layer{k}/b"),
                vec![rows],
                l.bias.to_vec(),
            );
            ckpt.put_meta(&format!("{prefix}layer{k}/activation"), l.activation.name());
        }
    }

    pub fn read_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let count = ckpt.meta_usize(&format!("{prefix}layers"))?;
        let l2 = ckpt.meta_f64(&format!("{prefix}l2"))?;
        let mut layers = Vec::with_capacity(count);
        for k in 0..count {
            let (shape, data) = ckpt.array(&format!("{prefix}layer{k}/W"))?;
            let [rows, cols] = shape else {
                return Err(Error::shape(format!("layer{k}/W is not a matrix")));
            };
            let weights = Array2::from_shape_vec((*rows, *cols), data.to_vec())
                .map_err(|e| Error::shape(e.to_string()))?;
            let (_, bias) = ckpt.array(&format!("{prefix}layer{k}/b"))?;
            let activation =
                Activation::from_name(ckpt.meta(&format!("{prefix}layer{k}/activation"))?)?;
            layers.push(Layer::new(weights, Array1::from(bias.to_vec()), activation)?);
        }
        Self::new(layers, l2)
    }
}

/// `lr = lr0 * drop_rate ^ floor(epoch / epochs_drop)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub lr0: f64,
    pub drop_rate: f64,
    pub epochs_drop: usize,
}

impl StepDecay {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::validation("initial learning rate must be positive"));
        }
        if !(self.drop_rate > 0.0 && self.drop_rate < 1.0) {
            return Err(Error::validation("drop rate must lie in (0, 1)"));
        }
        if self.epochs_drop == 0 {
            return Err(Error::validation("epochs_drop must be positive"));
        }
        Ok(())
    }

    pub fn at(&self, epoch: usize) -> f64 {
        let drops = (epoch / self.epochs_drop) as i32;
        self.lr0 * self.drop_rate.powi(drops)
    }
}

/// Nesterov-momentum SGD state for one network.
///
/// Lookahead form: the caller evaluates the gradient at `lookahead(net)`,
/// i.e. at `theta + momentum * v`, then `step` applies
/// `v <- momentum * v - lr * g` and `theta <- theta + v`.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub schedule: StepDecay,
    pub momentum: f64,
    pub epoch: usize,
    velocity: Gradients,
}

impl OptimizerState {
    pub fn new(net: &DenseNet, schedule: StepDecay, momentum: f64) -> Result<Self> {
        schedule.validate()?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::validation("momentum must lie in [0, 1)"));
        }
        Ok(Self {
            schedule,
            momentum,
            epoch: 0,
            velocity: Gradients::zeros_like(net),
        })
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.schedule.at(epoch)
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }

    /// Parameters at which the next gradient should be evaluated.
    pub fn lookahead(&self, net: &DenseNet) -> DenseNet {
        let mut ahead = net.clone();
        if self.momentum != 0.0 {
            for (l, v) in ahead.layers.iter_mut().zip(&self.velocity.layers) {
                l.weights.scaled_add(self.momentum, &v.weights);
                l.bias.scaled_add(self.momentum, &v.bias);
            }
        }
        ahead
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if !grads.congruent(net) || !self.velocity.congruent(net) {
            return Err(Error::shape("gradients are not congruent with the network"));
        }
        grads.check_finite()?;
        let lr = self.lr_at_epoch(self.epoch);
        let mu = self.momentum;
        for ((l, v), g) in net
            .layers
            .iter_mut()
            .zip(&mut self.velocity.layers)
            .zip(&grads.layers)
        {
            Zip::from(&mut v.weights)
                .and(&g.weights)
                .for_each(|v, &g| *v = mu * *v - lr * g);
            Zip::from(&mut v.bias)
                .and(&g.bias)
                .for_each(|v, &g| *v = mu * *v - lr * g);
            l.weights += &v.weights;
            l.bias += &v.bias;
        }
        Ok(())
    }
}
