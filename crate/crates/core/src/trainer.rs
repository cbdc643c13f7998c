//! VAE pretraining, mixture initialization and constrained training.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Graph, Tensor};
use crate::constraints::{confidence_weight, DEFAULT_ALPHA, DEFAULT_MAGNITUDE, DEFAULT_N_CONSTRAINTS};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansConfig};
use crate::metrics::{score, Scores};
use crate::model::{cluster_assign, standard_normal, Activation, DecoderKind, MixtureParams, Model, NetworkSpec};
use crate::objective::{celbo_graph, vae_elbo_graph, CelboOptions, ElboBreakdown, EntropyMode};
use crate::prior::{gather_batch_weights, PairwiseWeights};

/// Floor applied to the per-dimension cluster variances found by k-means.
pub const INIT_VARIANCE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// Chunks of a fresh random permutation.
    Uniform,
    /// A quarter of every batch is spent on endpoints of constrained pairs.
    #[default]
    PairAware,
}

/// How the constraint weight magnitude is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `α ln((1 − q)/q)` when `noise > 0`, `magnitude` otherwise.
    #[default]
    Heuristic,
    /// Always `magnitude`.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintSettings {
    pub count: usize,
    /// Fraction of constraints whose kind is flipped.
    pub noise: f64,
    pub alpha: f64,
    pub magnitude: f64,
    pub weighting: Weighting,
}

impl Default for ConstraintSettings {
    fn default() -> Self {
        ConstraintSettings {
            count: DEFAULT_N_CONSTRAINTS,
            noise: 0.0,
            alpha: DEFAULT_ALPHA,
            magnitude: DEFAULT_MAGNITUDE,
            weighting: Weighting::Heuristic,
        }
    }
}

impl ConstraintSettings {
    /// Weight magnitude given to every constraint.
    pub fn weight_magnitude(&self) -> Result<f64> {
        match self.weighting {
            Weighting::Heuristic if self.noise > 0.0 => confidence_weight(self.noise, self.alpha),
            _ => Ok(self.magnitude),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub k: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub decoder: DecoderKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub pretrain_epochs: usize,
    /// Noise draws per sample; only 1 is supported.
    pub mc_samples: usize,
    pub seed: u64,
    pub batching: Batching,
    pub entropy: EntropyMode,
    pub grad_clip: f64,
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
    /// Evaluate on the test split every this many epochs (and the last one).
    pub eval_every: usize,
    pub constraints: ConstraintSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 10,
            latent_dim: 10,
            hidden: vec![500, 500, 2000],
            activation: Activation::Relu,
            decoder: DecoderKind::Bernoulli,
            batch_size: 256,
            epochs: 500,
            learning_rate: 0.001,
            decay: 0.9,
            decay_every: 20,
            pretrain_epochs: 10,
            mc_samples: 1,
            seed: 0,
            batching: Batching::PairAware,
            entropy: EntropyMode::Sample,
            grad_clip: 1e4,
            kmeans_restarts: 10,
            kmeans_iters: 100,
            eval_every: 1,
            constraints: ConstraintSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("latent_dim", self.latent_dim),
            ("batch_size", self.batch_size),
            ("decay_every", self.decay_every),
            ("kmeans_restarts", self.kmeans_restarts),
            ("kmeans_iters", self.kmeans_iters),
            ("eval_every", self.eval_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths must be non-empty and positive, got {:?}", self.hidden)));
        }
        if self.mc_samples != 1 {
            return Err(Error::Config(format!("mc_samples = {} is not supported; use 1", self.mc_samples)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config(format!("grad_clip must be positive, got {}", self.grad_clip)));
        }
        let c = &self.constraints;
        if !(0.0..0.5).contains(&c.noise) {
            return Err(Error::Config(format!("constraint noise must lie in [0, 0.5), got {}", c.noise)));
        }
        if !(c.magnitude > 0.0 && c.alpha > 0.0) {
            return Err(Error::Config("constraint magnitude and alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn network_spec(&self, input_dim: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim,
            activation: self.activation,
            decoder: self.decoder,
        }
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            restarts: self.kmeans_restarts,
            max_iters: self.kmeans_iters,
        }
    }
}

/// Step decay: `lr0 · decay^⌊epoch / decay_every⌋`.
pub fn learning_rate(cfg: &RunConfig, epoch: usize) -> f64 {
    cfg.learning_rate * cfg.decay.powi((epoch / cfg.decay_every) as i32)
}

/// Batches for one epoch.
pub fn make_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, mode: Batching, w: &PairwiseWeights, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::Config(format!("batch size {batch_size} must lie in 1..={n}")));
    }
    if w.n() != n {
        return Err(Error::shape("make_batches", &[n], &[w.n()]));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let pairs: Vec<(usize, usize)> = w.pairs().map(|(i, j, _)| (i, j)).collect();
    let n_packed = batch_size / 4;
    if mode == Batching::Uniform || pairs.is_empty() || n_packed == 0 {
        return Ok(perm.chunks(batch_size).map(<[usize]>::to_vec).collect());
    }

    let n_batches = n.div_ceil(batch_size);
    let mut cursor = 0;
    let mut out = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut batch = Vec::with_capacity(batch_size);
        let mut seen = BTreeSet::new();
        for &(i, j) in pairs.choose_multiple(rng, n_packed.min(pairs.len())) {
            for e in [i, j] {
                if batch.len() < batch_size && seen.insert(e) {
                    batch.push(e);
                }
            }
        }
        // fill from the epoch permutation, reshuffling when it runs dry
        while batch.len() < batch_size {
            if cursor == n {
                perm.shuffle(rng);
                cursor = 0;
            }
            let e = perm[cursor];
            cursor += 1;
            if seen.insert(e) {
                batch.push(e);
            }
        }
        out.push(batch);
    }
    Ok(out)
}

fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their joint norm is at most `max_norm`.
/// Returns whether clipping happened.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> bool {
    let norm = global_norm(grads);
    if norm <= max_norm {
        return false;
    }
    let s = max_norm / norm;
    for g in grads {
        for v in g.data_mut() {
            *v *= s;
        }
    }
    true
}

fn with_context(e: Error, epoch: usize, batch: usize, last: Option<&ElboBreakdown>) -> Error {
    match e {
        Error::NonFinite { what } => Error::NonFinite {
            what: format!("{what} (epoch {epoch}, batch {batch}; last finite breakdown {last:?})"),
        },
        other => other,
    }
}

/// Maximizes the standard-normal-prior VAE bound for `cfg.pretrain_epochs`
/// epochs with uniform batches. Returns the mean per-sample bound of each
/// epoch.
pub fn pretrain<R: Rng + ?Sized>(model: &mut Model, x: &Tensor, cfg: &RunConfig, rng: &mut R) -> Result<Vec<f64>> {
    let n = x.rows();
    let d = model.spec().latent_dim;
    let mut adam = AdamState::new(cfg.learning_rate, model.params().iter().map(Tensor::shape));
    let none = PairwiseWeights::new(n);
    let bs = cfg.batch_size.min(n);
    let mut history = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let mut total = 0.0;
        for (b, idx) in make_batches(n, bs, Batching::Uniform, &none, rng)?.into_iter().enumerate() {
            let xb = x.select_rows(&idx)?;
            let eps = standard_normal(rng, idx.len(), d);
            let mut g = Graph::new();
            let mv = model.bind(&mut g, true);
            let xv = g.constant(xb);
            let ev = g.constant(eps);
            let step = (|| {
                let elbo = vae_elbo_graph(&mut g, model, &mv, xv, ev)?;
                let loss = g.scale(elbo, -1.0 / idx.len() as f64)?;
                Ok::<_, Error>((g.scalar(elbo)?, g.backward(loss)?))
            })();
            let (elbo, mut grads) = step.map_err(|e| with_context(e, epoch, b, None))?;
            let mut gs: Vec<Tensor> = mv.0.iter().map(|&v| grads.take(v)).collect();
            if clip_gradients(&mut gs, cfg.grad_clip) {
                log::debug!("pretrain epoch {epoch} batch {b}: gradient clipped");
            }
            adam.step(model.params_mut().iter_mut(), &gs)?;
            total += elbo;
        }
        let mean = total / n as f64;
        log::info!("pretrain epoch {} elbo {mean:.4}", epoch + 1);
        history.push(mean);
    }
    Ok(history)
}

/// k-means on the latent means; per-dimension within-cluster variances
/// floored at [`INIT_VARIANCE_FLOOR`]; uniform weights.
pub fn init_mixture<R: Rng + ?Sized>(model: &Model, x: &Tensor, cfg: &RunConfig, rng: &mut R) -> Result<MixtureParams> {
    let mu = model.encode(x)?.mean;
    let res = kmeans(&mu, cfg.k, cfg.kmeans_config(), rng)?;
    let (k, d) = (cfg.k, mu.cols());
    let mut var = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &c) in res.labels.iter().enumerate() {
        counts[c] += 1;
        for j in 0..d {
            let diff = mu.at(i, j) - res.centroids.at(c, j);
            var[c * d + j] += diff * diff;
        }
    }
    for c in 0..k {
        for j in 0..d {
            let v = if counts[c] > 0 { var[c * d + j] / counts[c] as f64 } else { 0.0 };
            var[c * d + j] = v.max(INIT_VARIANCE_FLOOR).ln();
        }
    }
    log::info!(
        "mixture init: k-means distortion {:.4} (restart {} of {}), {} empty-cluster reseeds",
        res.distortion,
        res.best_restart + 1,
        res.restart_distortions.len(),
        res.reseeds
    );
    MixtureParams::new(res.centroids, Tensor::matrix(k, d, var)?, Tensor::row(vec![-(k as f64).ln(); k]))
}

/// One row per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Per-sample means over the batches of the epoch.
    pub breakdown: ElboBreakdown,
    pub clipped_batches: usize,
    pub test: Option<Scores>,
    /// Seconds since training started; kept out of the CSV so logs are reproducible.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub pretrain: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str =
        "epoch,lr,reconstruction,log_p_z_given_c,log_prior_pi,q_entropy,cat_entropy,pairwise,total,clipped,acc,nmi,ari";

    /// Deterministic CSV (no wall time). Missing test metrics are blank.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.epochs {
            s.push_str(&format!("{},{}", r.epoch, r.learning_rate));
            for v in r.breakdown.values() {
                s.push_str(&format!(",{v}"));
            }
            s.push_str(&format!(",{}", r.clipped_batches));
            match r.test {
                Some(t) => s.push_str(&format!(",{},{},{}", t.acc, t.nmi, t.ari)),
                None => s.push_str(",,,"),
            }
            s.push('\n');
        }
        s
    }
}

/// Held-out data used to track the best checkpoint.
#[derive(Clone, Copy, Debug)]
pub struct TestSplit<'a> {
    pub x: &'a Tensor,
    pub labels: &'a [usize],
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub model: Model,
    pub mixture: MixtureParams,
    pub epoch: usize,
    pub scores: Scores,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    /// Highest test ARI seen (earliest epoch on ties); `None` without a test split.
    pub best: Option<Snapshot>,
}

/// Maximizes the constrained bound over the network and the mixture means
/// and variances. Mixture weights never change. `model` and `mixture` hold
/// the final-epoch state on return.
#[allow(clippy::too_many_arguments)]
pub fn train<R: Rng + ?Sized>(
    model: &mut Model,
    mixture: &mut MixtureParams,
    x: &Tensor,
    w: &PairwiseWeights,
    test: Option<TestSplit<'_>>,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let n = x.rows();
    let d = model.spec().latent_dim;
    if mixture.latent_dim() != d {
        return Err(Error::shape("train", &[d], &[mixture.latent_dim()]));
    }
    let shapes: Vec<Vec<usize>> = model
        .params()
        .iter()
        .chain([&mixture.means, &mixture.log_vars])
        .map(|t| t.shape().to_vec())
        .collect();
    let mut adam = AdamState::new(cfg.learning_rate, shapes.iter().map(Vec::as_slice));
    let opts = CelboOptions { entropy: cfg.entropy };
    let log_weights = mixture.log_weights.clone();
    let start = Instant::now();
    let mut log = TrainLog::default();
    let mut best: Option<Snapshot> = None;
    let mut last: Option<ElboBreakdown> = None;

    for epoch in 0..cfg.epochs {
        adam.lr = learning_rate(cfg, epoch);
        let mut sum = ElboBreakdown::default();
        let mut seen = 0usize;
        let mut clipped = 0;
        for (b, idx) in make_batches(n, cfg.batch_size, cfg.batching, w, rng)?.into_iter().enumerate() {
            let xb = x.select_rows(&idx)?;
            let wb = gather_batch_weights(w, &idx)?;
            let eps = standard_normal(rng, idx.len(), d);
            let mut g = Graph::new();
            let mv = model.bind(&mut g, true);
            let mx = mixture.bind(&mut g, true);
            let xv = g.constant(xb);
            let ev = g.constant(eps);
            let step = (|| {
                let out = celbo_graph(&mut g, model, &mv, &mx, xv, ev, Some(&wb), opts)?;
                let br = out.breakdown(&g)?;
                let loss = g.scale(out.total, -1.0 / idx.len() as f64)?;
                Ok::<_, Error>((br, g.backward(loss)?))
            })();
            let (br, mut grads) = step.map_err(|e| with_context(e, epoch, b, last.as_ref()))?;
            let mut gs: Vec<Tensor> = mv.0.iter().chain([&mx.means, &mx.log_vars]).map(|&v| grads.take(v)).collect();
            if clip_gradients(&mut gs, cfg.grad_clip) {
                clipped += 1;
            }
            adam.step(model.params_mut().iter_mut().chain([&mut mixture.means, &mut mixture.log_vars]), &gs)?;
            mixture.project();
            sum.add_assign(&br);
            seen += idx.len();
            last = Some(br);
        }
        debug_assert_eq!(mixture.log_weights, log_weights);

        let evaluate = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let scores = match test {
            Some(t) if evaluate => Some(score(&cluster_assign(model, mixture, t.x)?, t.labels)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            learning_rate: adam.lr,
            breakdown: sum.scaled(1.0 / seen as f64),
            clipped_batches: clipped,
            test: scores,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} lr {:.3e} celbo {:.4} pairwise {:.4} clipped {}{}",
            record.epoch,
            record.learning_rate,
            record.breakdown.total,
            record.breakdown.pairwise,
            clipped,
            scores.map_or(String::new(), |s| format!(" acc {:.4} nmi {:.4} ari {:.4}", s.acc, s.nmi, s.ari))
        );
        if let Some(s) = scores {
            if best.as_ref().is_none_or(|b| s.ari > b.scores.ari) {
                best = Some(Snapshot {
                    model: model.clone(),
                    mixture: mixture.clone(),
                    epoch: epoch + 1,
                    scores: s,
                });
            }
        }
        log.epochs.push(record);
    }
    Ok(TrainOutcome { log, best })
}

/// Everything produced by [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: Model,
    pub mixture: MixtureParams,
    pub log: TrainLog,
    pub best: Option<Snapshot>,
}

impl FitOutcome {
    /// Best test-ARI snapshot if there was a test split, else the final state.
    pub fn chosen(&self) -> (&Model, &MixtureParams) {
        match &self.best {
            Some(s) => (&s.model, &s.mixture),
            None => (&self.model, &self.mixture),
        }
    }
}

/// Fresh model, pretraining, mixture initialization and training, all
/// driven by `rng`.
pub fn fit<R: Rng + ?Sized>(x: &Tensor, w: &PairwiseWeights, test: Option<TestSplit<'_>>, cfg: &RunConfig, rng: &mut R) -> Result<FitOutcome> {
    cfg.validate()?;
    if w.n() != x.rows() {
        return Err(Error::shape("fit", &[x.rows()], &[w.n()]));
    }
    let mut model = Model::new(cfg.network_spec(x.cols()), rng)?;
    let pre = pretrain(&mut model, x, cfg, rng)?;
    let mut mixture = init_mixture(&model, x, cfg, rng)?;
    let out = train(&mut model, &mut mixture, x, w, test, cfg, rng)?;
    let mut log = out.log;
    log.pretrain = pre;
    Ok(FitOutcome {
        model,
        mixture,
        log,
        best: out.best,
    })
}
