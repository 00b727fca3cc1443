use crate::gaussian::{GaussianDiag, GaussianVar, Rng};
use crate::ndgrad::{ops, GradError, ParamId, ParamStore, Tape, Tensor, Var};

/// Log-variance heads are clamped to this range before use.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Fully connected stack with softplus hidden units and two parallel
/// output heads (mean and log-variance) of equal width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.input > 0 && self.output > 0 && self.hidden.iter().all(|&w| w > 0)
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        let mut fan_in = self.input;
        for &w in &self.hidden {
            n += fan_in * w + w;
            fan_in = w;
        }
        n + 2 * (fan_in * self.output + self.output)
    }
}

/// Parameter initialization scheme.
pub enum Init<'a> {
    Zeros,
    /// Weights ~ N(0, 1/fan_in), biases 0.
    Random(&'a mut Rng),
}

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn build(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: &mut Init<'_>,
    ) -> Result<Self, GradError> {
        let mut w = Tensor::zeros(&[fan_in, fan_out]);
        if let Init::Random(rng) = init {
            let scale = (1.0 / fan_in as f64).sqrt();
            for v in w.data_mut() {
                *v = scale * rng.normal();
            }
        }
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?;
        Ok(Self { weight, bias })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var, GradError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let h = tape.matmul(input, w)?;
        tape.add_bias(h, b)
    }

    fn predict(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor, GradError> {
        let h = ops::matmul(input, store.value(self.weight))?;
        ops::add_bias(&h, store.value(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    prefix: String,
    hidden: Vec<Linear>,
    mean: Linear,
    logvar: Linear,
}

impl Mlp {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        spec: MlpSpec,
        init: &mut Init<'_>,
    ) -> Result<Self, GradError> {
        let mut hidden = Vec::with_capacity(spec.hidden.len());
        let mut fan_in = spec.input;
        for (i, &w) in spec.hidden.iter().enumerate() {
            hidden.push(Linear::build(store, &format!("{prefix}.hidden{i}"), fan_in, w, init)?);
            fan_in = w;
        }
        let mean = Linear::build(store, &format!("{prefix}.mu"), fan_in, spec.output, init)?;
        let logvar = Linear::build(store, &format!("{prefix}.logvar"), fan_in, spec.output, init)?;
        Ok(Self {
            spec,
            prefix: prefix.to_string(),
            hidden,
            mean,
            logvar,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Parameter ids owned by this network, in creation order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.hidden
            .iter()
            .chain([&self.mean, &self.logvar])
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<GaussianVar, GradError> {
        let mut h = input;
        for layer in &self.hidden {
            let a = layer.forward(tape, store, h)?;
            h = tape.softplus(a)?;
        }
        let mean = self.mean.forward(tape, store, h)?;
        let raw = self.logvar.forward(tape, store, h)?;
        let logvar = tape.clamp(raw, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok(GaussianVar { mean, logvar })
    }

    /// No-grad forward pass; bitwise identical to [`Mlp::forward`].
    pub fn predict(&self, store: &ParamStore, input: &Tensor) -> Result<GaussianDiag, GradError> {
        let mut h = input.clone();
        for layer in &self.hidden {
            h = ops::softplus(&layer.predict(store, &h)?);
        }
        let mean = self.mean.predict(store, &h)?;
        let logvar = ops::clamp(&self.logvar.predict(store, &h)?, LOGVAR_MIN, LOGVAR_MAX);
        Ok(GaussianDiag { mean, logvar })
    }
}
