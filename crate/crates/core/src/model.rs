//! Encoder, decoder and mixture parameters.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Encoder log-variances are clamped into this range.
pub const ENCODER_LOG_VAR_RANGE: (f64, f64) = (-10.0, 10.0);
/// Smallest decoder variance for the Gaussian likelihood.
pub const DECODER_VARIANCE_FLOOR: f64 = 1e-4;
/// Smallest per-dimension variance of a mixture component.
pub const MIXTURE_VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    #[default]
    Bernoulli,
    Gaussian,
}

/// Architecture of the encoder/decoder pair. The decoder mirrors the
/// encoder's hidden widths in reverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub decoder: DecoderKind,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize, decoder: DecoderKind) -> Self {
        NetworkSpec {
            input_dim,
            hidden,
            latent_dim,
            activation: Activation::Relu,
            decoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Config("at least one hidden layer is required".into()));
        }
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("layer widths must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(name, fan_in, fan_out)` for every linear layer, in parameter order.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut prev = self.input_dim;
        for (i, &w) in self.hidden.iter().enumerate() {
            out.push((format!("encoder.hidden.{i}"), prev, w));
            prev = w;
        }
        out.push(("encoder.mean".into(), prev, self.latent_dim));
        out.push(("encoder.log_var".into(), prev, self.latent_dim));
        prev = self.latent_dim;
        for (i, &w) in self.hidden.iter().rev().enumerate() {
            out.push((format!("decoder.hidden.{i}"), prev, w));
            prev = w;
        }
        match self.decoder {
            DecoderKind::Bernoulli => out.push(("decoder.logits".into(), prev, self.input_dim)),
            DecoderKind::Gaussian => {
                out.push(("decoder.mean".into(), prev, self.input_dim));
                out.push(("decoder.log_var".into(), prev, self.input_dim));
            }
        }
        out
    }
}

/// Network weights, stored flat as `[w0, b0, w1, b1, ...]` in the order of
/// [`NetworkSpec`]'s layer list.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    params: Vec<Tensor>,
}

/// Graph handles for a bound [`Model`], same order as [`Model::params`].
#[derive(Clone, Debug)]
pub struct ModelVars(pub Vec<Var>);

/// Variational posterior parameters as tensors.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub mean: Tensor,
    pub log_var: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub mean: Var,
    pub log_var: Var,
}

#[derive(Clone, Debug)]
pub enum DecoderOutput {
    Bernoulli { logits: Tensor },
    Gaussian { mean: Tensor, log_var: Tensor },
}

impl DecoderOutput {
    /// Expected observation: `sigmoid(logits)` or the Gaussian mean.
    pub fn expected(&self) -> Tensor {
        match self {
            DecoderOutput::Bernoulli { logits } => logits.map(|l| 1.0 / (1.0 + (-l).exp())),
            DecoderOutput::Gaussian { mean, .. } => mean.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum DecoderVars {
    Bernoulli { logits: Var },
    Gaussian { mean: Var, log_var: Var },
}

impl Model {
    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for (_, fan_in, fan_out) in spec.layers() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let w = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            params.push(Tensor::matrix(fan_in, fan_out, w)?);
            params.push(Tensor::zeros(&[1, fan_out]));
        }
        Ok(Model { spec, params })
    }

    /// All weights and biases zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for (_, fan_in, fan_out) in spec.layers() {
            params.push(Tensor::zeros(&[fan_in, fan_out]));
            params.push(Tensor::zeros(&[1, fan_out]));
        }
        Ok(Model { spec, params })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let expected = Self::zeros(spec.clone())?;
        if params.len() != expected.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                expected.params.len(),
                params.len()
            )));
        }
        for (p, e) in params.iter().zip(&expected.params) {
            if p.shape() != e.shape() {
                return Err(Error::shape("Model::from_params", e.shape(), p.shape()));
            }
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Parameter names, e.g. `encoder.hidden.0.weight`.
    pub fn param_names(&self) -> Vec<String> {
        self.spec
            .layers()
            .into_iter()
            .flat_map(|(name, _, _)| [format!("{name}.weight"), format!("{name}.bias")])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        ModelVars(
            self.params
                .iter()
                .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
                .collect(),
        )
    }

    fn n_hidden(&self) -> usize {
        self.spec.hidden.len()
    }

    fn linear(&self, g: &mut Graph, mv: &ModelVars, layer: usize, x: Var) -> Result<Var> {
        let h = g.matmul(x, mv.0[2 * layer])?;
        g.add_row(h, mv.0[2 * layer + 1])
    }

    fn activate(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self.spec.activation {
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }

    fn check_cols(&self, g: &Graph, x: Var, expected: usize, op: &'static str) -> Result<()> {
        let t = g.value(x);
        if t.cols() != expected || t.shape().len() != 2 {
            return Err(Error::shape(op, &[t.rows(), expected], t.shape()));
        }
        Ok(())
    }

    /// `q(z|x)` parameters for a `B×M` batch.
    pub fn encode_graph(&self, g: &mut Graph, mv: &ModelVars, x: Var) -> Result<EncoderVars> {
        self.check_cols(g, x, self.spec.input_dim, "encode")?;
        let mut h = x;
        for l in 0..self.n_hidden() {
            let a = self.linear(g, mv, l, h)?;
            h = self.activate(g, a)?;
        }
        let nh = self.n_hidden();
        let mean = self.linear(g, mv, nh, h)?;
        let lv = self.linear(g, mv, nh + 1, h)?;
        let (lo, hi) = ENCODER_LOG_VAR_RANGE;
        let log_var = g.clamp(lv, lo, hi)?;
        Ok(EncoderVars { mean, log_var })
    }

    /// Likelihood parameters for a `B×D` latent batch.
    pub fn decode_graph(&self, g: &mut Graph, mv: &ModelVars, z: Var) -> Result<DecoderVars> {
        self.check_cols(g, z, self.spec.latent_dim, "decode")?;
        let nh = self.n_hidden();
        let first = nh + 2;
        let mut h = z;
        for l in 0..nh {
            let a = self.linear(g, mv, first + l, h)?;
            h = self.activate(g, a)?;
        }
        let out = first + nh;
        match self.spec.decoder {
            DecoderKind::Bernoulli => Ok(DecoderVars::Bernoulli {
                logits: self.linear(g, mv, out, h)?,
            }),
            DecoderKind::Gaussian => {
                let mean = self.linear(g, mv, out, h)?;
                let lv = self.linear(g, mv, out + 1, h)?;
                let log_var = g.clamp(lv, DECODER_VARIANCE_FLOOR.ln(), 10.0)?;
                Ok(DecoderVars::Gaussian { mean, log_var })
            }
        }
    }

    pub fn encode(&self, x: &Tensor) -> Result<EncoderOutput> {
        let mut g = Graph::new();
        let mv = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let e = self.encode_graph(&mut g, &mv, xv)?;
        Ok(EncoderOutput {
            mean: g.value(e.mean).clone(),
            log_var: g.value(e.log_var).clone(),
        })
    }

    pub fn decode(&self, z: &Tensor) -> Result<DecoderOutput> {
        let mut g = Graph::new();
        let mv = self.bind(&mut g, false);
        let zv = g.constant(z.clone());
        Ok(match self.decode_graph(&mut g, &mv, zv)? {
            DecoderVars::Bernoulli { logits } => DecoderOutput::Bernoulli {
                logits: g.value(logits).clone(),
            },
            DecoderVars::Gaussian { mean, log_var } => DecoderOutput::Gaussian {
                mean: g.value(mean).clone(),
                log_var: g.value(log_var).clone(),
            },
        })
    }
}

/// `z = mean + exp(log_var / 2) ⊙ eps`.
pub fn reparameterize(g: &mut Graph, mean: Var, log_var: Var, eps: Var) -> Result<Var> {
    let half = g.scale(log_var, 0.5)?;
    let std = g.exp(half)?;
    let noise = g.mul(std, eps)?;
    g.add(mean, noise)
}

/// Standard-normal tensor of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}

/// Gaussian mixture prior over the latent space: means and log-variances
/// per component, plus log mixing weights that stay fixed during training.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub means: Tensor,
    pub log_vars: Tensor,
    pub log_weights: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct MixtureVars {
    pub means: Var,
    pub log_vars: Var,
    pub log_weights: Var,
}

impl MixtureParams {
    /// Zero means, unit variances, uniform weights.
    pub fn standard(k: usize, latent_dim: usize) -> Self {
        MixtureParams {
            means: Tensor::zeros(&[k, latent_dim]),
            log_vars: Tensor::zeros(&[k, latent_dim]),
            log_weights: Tensor::full(&[1, k], -(k as f64).ln()),
        }
    }

    pub fn new(means: Tensor, log_vars: Tensor, log_weights: Tensor) -> Result<Self> {
        let (k, _) = means.dims2()?;
        means.same_dims(&log_vars, "MixtureParams::new")?;
        if log_weights.dims2()? != (1, k) {
            return Err(Error::shape("MixtureParams::new", &[1, k], log_weights.shape()));
        }
        let total: f64 = log_weights.data().iter().map(|l| l.exp()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("mixture weights sum to {total}, not 1")));
        }
        let mut m = MixtureParams {
            means,
            log_vars,
            log_weights,
        };
        m.project();
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.means.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.means.cols()
    }

    /// Raise every log-variance to at least `ln(MIXTURE_VARIANCE_FLOOR)`.
    pub fn project(&mut self) {
        let floor = MIXTURE_VARIANCE_FLOOR.ln();
        for v in self.log_vars.data_mut() {
            if *v < floor {
                *v = floor;
            }
        }
    }

    pub fn variances(&self) -> Tensor {
        self.log_vars.map(|v| v.exp().max(MIXTURE_VARIANCE_FLOOR))
    }

    /// Means and log-variances become parameters when `trainable`; the
    /// weights are always constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> MixtureVars {
        let leaf = |g: &mut Graph, t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        MixtureVars {
            means: leaf(g, &self.means),
            log_vars: leaf(g, &self.log_vars),
            log_weights: g.constant(self.log_weights.clone()),
        }
    }
}

/// Hard labels `argmax_k p(k | z)` evaluated at the posterior mean `z = μ_φ(x)`.
pub fn cluster_assign(model: &Model, mixture: &MixtureParams, x: &Tensor) -> Result<Vec<usize>> {
    let enc = model.encode(x)?;
    assign_latent(mixture, &enc.mean)
}

/// Hard labels for latent points.
pub fn assign_latent(mixture: &MixtureParams, z: &Tensor) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let mx = mixture.bind(&mut g, false);
    let zv = g.constant(z.clone());
    let dens = g.gauss_log_density(zv, mx.means, mx.log_vars)?;
    let scores = g.add_row(dens, mx.log_weights)?;
    let s = g.value(scores);
    Ok((0..s.rows()).map(|i| argmax(s.row_slice(i))).collect())
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `n` draws from cluster `k` of the generative model: `z ~ N(μ_k, σ²_k I)`
/// decoded to expected observations.
pub fn generate<R: Rng + ?Sized>(
    model: &Model,
    mixture: &MixtureParams,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<Tensor> {
    if k >= mixture.k() {
        return Err(Error::OutOfRange {
            index: k,
            limit: mixture.k(),
        });
    }
    let d = mixture.latent_dim();
    let eps = standard_normal(rng, n, d);
    let mu = mixture.means.row_slice(k);
    let sd: Vec<f64> = mixture.log_vars.row_slice(k).iter().map(|v| (0.5 * v).exp()).collect();
    let mut z = eps.into_data();
    for i in 0..n {
        for j in 0..d {
            z[i * d + j] = mu[j] + sd[j] * z[i * d + j];
        }
    }
    let z = Tensor::matrix(n, d, z)?;
    Ok(model.decode(&z)?.expected())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(decoder: DecoderKind) -> NetworkSpec {
        NetworkSpec::new(5, vec![4, 3], 2, decoder)
    }

    #[test]
    fn zero_network_encodes_to_standard_normal() {
        let m = Model::zeros(small_spec(DecoderKind::Bernoulli)).unwrap();
        let x = Tensor::full(&[3, 5], 0.7);
        let e = m.encode(&x).unwrap();
        assert_eq!(e.mean.shape(), &[3, 2]);
        assert_eq!(e.log_var.shape(), &[3, 2]);
        assert!(e.mean.data().iter().all(|&v| v == 0.0));
        assert!(e.log_var.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_decoder_gives_half_means() {
        let m = Model::zeros(small_spec(DecoderKind::Bernoulli)).unwrap();
        let out = m.decode(&Tensor::full(&[4, 2], 1.3)).unwrap();
        let p = out.expected();
        assert_eq!(p.shape(), &[4, 5]);
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let m = Model::zeros(small_spec(DecoderKind::Gaussian)).unwrap();
        assert!(matches!(m.encode(&Tensor::zeros(&[2, 4])), Err(Error::Shape { .. })));
        assert!(matches!(m.decode(&Tensor::zeros(&[2, 3])), Err(Error::Shape { .. })));
    }

    #[test]
    fn spec_needs_hidden_layer() {
        let spec = NetworkSpec::new(5, vec![], 2, DecoderKind::Bernoulli);
        assert!(Model::zeros(spec).is_err());
    }

    #[test]
    fn reparameterize_cases() {
        let cases = [(0.0, 0.0, 1.0, 1.0), (1.0, 4f64.ln(), 0.5, 2.0), (0.7, 1.3, 0.0, 0.7)];
        for (mu, lv, e, expect) in cases {
            let mut g = Graph::new();
            let (m, l, n) = (
                g.constant(Tensor::scalar(mu)),
                g.constant(Tensor::scalar(lv)),
                g.constant(Tensor::scalar(e)),
            );
            let z = reparameterize(&mut g, m, l, n).unwrap();
            assert!((g.scalar(z).unwrap() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn single_cluster_assigns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Model::new(small_spec(DecoderKind::Bernoulli), &mut rng).unwrap();
        let mix = MixtureParams::standard(1, 2);
        let x = standard_normal(&mut rng, 6, 5);
        assert_eq!(cluster_assign(&m, &mix, &x).unwrap(), vec![0; 6]);
    }

    #[test]
    fn assignment_picks_nearest_separated_cluster() {
        let means = Tensor::matrix(2, 1, vec![-5.0, 5.0]).unwrap();
        let mix = MixtureParams::new(means, Tensor::zeros(&[2, 1]), Tensor::full(&[1, 2], 0.5f64.ln())).unwrap();
        let z = Tensor::matrix(2, 1, vec![5.0, -5.0]).unwrap();
        assert_eq!(assign_latent(&mix, &z).unwrap(), vec![1, 0]);
        // A shared shift of the log-weights does not change the argmax.
        let mut shifted = mix.clone();
        shifted.log_weights = shifted.log_weights.map(|v| v + 3.0);
        assert_eq!(assign_latent(&shifted, &z).unwrap(), vec![1, 0]);
    }

    #[test]
    fn degenerate_variance_generates_decoded_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Model::new(small_spec(DecoderKind::Gaussian), &mut rng).unwrap();
        let mut mix = MixtureParams::standard(2, 2);
        mix.means = Tensor::matrix(2, 2, vec![0.5, -0.5, 1.0, 2.0]).unwrap();
        mix.log_vars = Tensor::full(&[2, 2], -200.0);
        let out = generate(&m, &mix, 1, 3, &mut rng).unwrap();
        assert_eq!(out.shape(), &[3, 5]);
        let at_mean = m.decode(&Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap().expected();
        for i in 0..3 {
            assert_eq!(out.row_slice(i), at_mean.row_slice(0));
        }
        assert!(matches!(generate(&m, &mix, 2, 1, &mut rng), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn project_enforces_floor() {
        let mut mix = MixtureParams::standard(2, 3);
        mix.log_vars.data_mut()[4] = -50.0;
        mix.project();
        assert!(mix.variances().data().iter().all(|&v| v >= MIXTURE_VARIANCE_FLOOR * (1.0 - 1e-12)));
    }
}
