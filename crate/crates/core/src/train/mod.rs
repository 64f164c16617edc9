//! Loss assembly, Adam and the training loop.

mod loss;
mod optim;

pub use loss::{
    count_loss, kl_divergence, kl_loss, reconstruction_loss, total_loss, LossBreakdown, LossVars, LossWeights,
};
pub use optim::Adam;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result, TensorError};
use crate::graph::{pad_batch, read_dataset, Graph, PaddedBatch};
use crate::model::{Checkpoint, LatentMode, ModelConfig, ModelParams, PermMode};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// KL weight after warmup.
    pub beta: f64,
    /// Steps over which the KL weight ramps linearly from 0; `None` means 20% of `steps`.
    pub kl_warmup_steps: Option<usize>,
    /// Entropy-penalty weight.
    pub lambda: f64,
    /// Node-count loss weight.
    pub gamma: f64,
    pub lr: f64,
    /// Cosine decay of the learning rate from `lr` to zero over `steps`.
    pub lr_decay: bool,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1e-3,
            kl_warmup_steps: None,
            lambda: 0.1,
            gamma: 1.0,
            lr: 3e-4,
            lr_decay: false,
            batch_size: 32,
            steps: 10_000,
            seed: 0,
            checkpoint_every: 1000,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [("beta", self.beta), ("lambda", self.lambda), ("gamma", self.gamma), ("lr", self.lr)];
        if let Some((name, v)) = weights.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name}={v} must be finite and non-negative")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm={} must be positive", self.clip_norm)));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        self.kl_warmup_steps.unwrap_or(self.steps / 5)
    }

    /// KL weight in effect at `step` (0-based).
    pub fn beta_at(&self, step: usize) -> f64 {
        let w = self.warmup_steps();
        if w == 0 {
            self.beta
        } else {
            self.beta * ((step + 1) as f64 / w as f64).min(1.0)
        }
    }

    /// Learning rate in effect at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.lr_decay && self.steps > 0 {
            let t = (step as f64 / self.steps as f64).min(1.0);
            0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
        } else {
            self.lr
        }
    }

    pub fn weights_at(&self, step: usize) -> LossWeights {
        LossWeights { beta: self.beta_at(step), lambda: self.lambda, gamma: self.gamma }
    }
}

fn non_finite(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { op }) => Error::NonFinite { what: format!("value in `{op}`"), step },
        other => other,
    }
}

/// One optimizer update on `batch`; returns the loss before the update.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    adam: &mut Adam<T>,
    batch: &PaddedBatch<T>,
    weights: LossWeights,
    latent_seed: u64,
) -> Result<LossBreakdown> {
    let step = adam.steps() as usize;
    let cfg = params.config().clone();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true)?;
    let (_, vars) = total_loss(&mut tape, &bound, &cfg, batch, weights, LatentMode::Sample(latent_seed), PermMode::Soft)
        .map_err(non_finite(step))?;
    let losses = vars.values(&tape);
    let grads = tape.backward(vars.total)?.into_named();
    drop(tape);
    adam.step(params, &grads)?;
    Ok(losses)
}

/// In-memory training state over a fixed graph list.
#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar> {
    pub params: ModelParams<T>,
    pub adam: Adam<T>,
    pub config: TrainConfig,
    graphs: Vec<Graph>,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh parameters initialized from `train.seed`.
    pub fn new(model: &ModelConfig, train: &TrainConfig, graphs: Vec<Graph>) -> Result<Self> {
        let params = ModelParams::init(model, train.seed)?;
        Self::from_params(params, train, graphs)
    }

    pub fn from_params(params: ModelParams<T>, train: &TrainConfig, graphs: Vec<Graph>) -> Result<Self> {
        train.validate()?;
        if graphs.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let cfg = params.config();
        if let Some(g) = graphs.iter().find(|g| g.n() < cfg.n_min || g.n() > cfg.n_max || g.d_v() != cfg.node_features) {
            return Err(Error::Config(format!(
                "training graph with {} nodes x {} channels does not fit n in [{}, {}] x {}",
                g.n(),
                g.d_v(),
                cfg.n_min,
                cfg.n_max,
                cfg.node_features
            )));
        }
        Ok(Self { adam: Adam::new(train.lr, train.clip_norm), params, config: train.clone(), graphs, step: 0 })
    }

    /// Steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    /// Indices of the graphs in batch `step`: consecutive slices of per-epoch shuffles.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let len = self.graphs.len();
        let bs = self.config.batch_size;
        let mut out = Vec::with_capacity(bs);
        let mut epoch = usize::MAX;
        let mut order = Vec::new();
        for k in step * bs..(step + 1) * bs {
            if k / len != epoch {
                epoch = k / len;
                order = Rng::with_stream(self.config.seed, 1 + epoch as u64).permutation(len);
            }
            out.push(order[k % len]);
        }
        out
    }

    fn latent_seed(&self, step: usize) -> u64 {
        Rng::with_stream(self.config.seed ^ 0x6c61_7465_6e74, step as u64).next_u64()
    }

    /// Runs one update and advances the step counter.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let graphs: Vec<Graph> = self.batch_indices(self.step).into_iter().map(|i| self.graphs[i].clone()).collect();
        let batch = pad_batch::<T>(&graphs, false, self.params.config().edge_features)?;
        let weights = self.config.weights_at(self.step);
        let seed = self.latent_seed(self.step);
        let step = self.step;
        self.adam.lr = self.config.lr_at(step);
        let losses = train_step(&mut self.params, &mut self.adam, &batch, weights, seed).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, step },
            other => other,
        })?;
        self.step += 1;
        Ok(losses)
    }

    /// Loss of `graphs` under the current parameters, without an update.
    pub fn evaluate(&self, graphs: &[Graph], latent: LatentMode, perm_mode: PermMode) -> Result<LossBreakdown> {
        let cfg = self.params.config();
        let mut sum = LossBreakdown::default();
        for chunk in graphs.chunks(self.config.batch_size) {
            let batch = pad_batch::<T>(chunk, false, cfg.edge_features)?;
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false)?;
            let (_, vars) = total_loss(&mut tape, &p, cfg, &batch, self.config.weights_at(self.step), latent, perm_mode)?;
            let l = vars.values(&tape);
            let w = chunk.len() as f64 / graphs.len() as f64;
            sum.recon_edges += w * l.recon_edges;
            sum.recon_nodes += w * l.recon_nodes;
            sum.kl += w * l.kl;
            sum.perm_entropy += w * l.perm_entropy;
            sum.count_loss += w * l.count_loss;
            sum.total += w * l.total;
        }
        Ok(sum)
    }

    /// Checkpoint with optimizer moments and the step counter.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(&self.params);
        ck.extras = self.adam.export().into_iter().map(|(k, v)| (k, v.cast())).collect();
        ck.state = Some(serde_json::json!({
            "step": self.step,
            "adam_steps": self.adam.steps(),
            "train": self.config,
        }));
        ck
    }

    /// Restores parameters, optimizer moments and the step counter.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let state = ck.state.as_ref().ok_or_else(|| Error::Config("checkpoint has no training state".into()))?;
        let field = |k: &str| {
            state.get(k).and_then(serde_json::Value::as_u64).ok_or_else(|| Error::Config(format!("checkpoint state lacks `{k}`")))
        };
        let (step, adam_steps) = (field("step")?, field("adam_steps")?);
        if ck.params.config() != self.params.config() {
            return Err(Error::Config("checkpoint model configuration differs".into()));
        }
        self.params = ck.params.cast();
        let extras = ck.extras.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        self.adam.import(adam_steps, &extras);
        self.step = step as usize;
        Ok(())
    }
}

/// Outcome of [`fit`].
#[derive(Clone, Debug)]
pub struct FitReport {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps: usize,
    pub resumed_from: Option<usize>,
    pub last: Option<LossBreakdown>,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

/// Keeps the header and the first `steps` rows of a metrics log.
fn truncate_metrics(path: &Path, steps: usize) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .take(steps + 1)
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    if lines.len() != steps + 1 || lines[0] != LossBreakdown::CSV_HEADER {
        return Err(Error::Config(format!("{} does not hold {steps} logged steps", path.display())));
    }
    let mut out = lines.join("\n");
    out.push('\n');
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Trains on the dataset at `data` and writes checkpoints plus a metrics log under `out`.
///
/// Periodic checkpoints go to `out/latest.ckpt`; the final one replaces it as
/// `out/model.ckpt`. With `resume`, training continues from whichever of the two
/// is further along.
/// `on_step` sees every step's losses.
pub fn fit(
    data: impl AsRef<Path>,
    model: &ModelConfig,
    train: &TrainConfig,
    out: impl AsRef<Path>,
    resume: bool,
    mut on_step: impl FnMut(usize, &LossBreakdown),
) -> Result<FitReport> {
    let graphs = read_dataset(data)?;
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut trainer = Trainer::<f32>::new(model, train, graphs)?;
    let metrics = out.join(METRICS_FILE);
    let latest = out.join(LATEST_CHECKPOINT);
    let checkpoint = out.join(FINAL_CHECKPOINT);
    let mut resumed_from = None;
    let mut found = Vec::new();
    if resume {
        for path in [&latest, &checkpoint] {
            if path.exists() {
                found.push(Checkpoint::load(path)?);
            }
        }
    }
    let step_of = |ck: &Checkpoint| ck.state.as_ref().and_then(|s| s["step"].as_u64()).unwrap_or(0);
    if let Some(ck) = found.into_iter().max_by_key(step_of) {
        trainer.restore(&ck)?;
        truncate_metrics(&metrics, trainer.step())?;
        resumed_from = Some(trainer.step());
    } else {
        std::fs::write(&metrics, format!("{}\n", LossBreakdown::CSV_HEADER)).map_err(|e| Error::io(&metrics, e))?;
    }
    let mut log = OpenOptions::new().append(true).open(&metrics).map_err(|e| Error::io(&metrics, e))?;
    let mut last = None;
    while trainer.step() < train.steps {
        let step = trainer.step();
        let losses = trainer.train_step()?;
        writeln!(log, "{}", losses.csv_row(step)).map_err(|e| Error::io(&metrics, e))?;
        on_step(step, &losses);
        last = Some(losses);
        if train.checkpoint_every > 0 && trainer.step() % train.checkpoint_every == 0 {
            log.flush().map_err(|e| Error::io(&metrics, e))?;
            trainer.checkpoint().save(&latest)?;
        }
    }
    log.flush().map_err(|e| Error::io(&metrics, e))?;
    trainer.checkpoint().save(&checkpoint)?;
    if latest.exists() {
        std::fs::remove_file(&latest).map_err(|e| Error::io(&latest, e))?;
    }
    Ok(FitReport { checkpoint, metrics, steps: trainer.step(), resumed_from, last })
}
