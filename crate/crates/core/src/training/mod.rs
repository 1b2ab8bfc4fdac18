//! Alternating discriminator / regressor / generator training.

mod checkpoint;
mod grid;
mod objectives;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{compute_stats, find_max_pixel, Dataset, DatasetStats, HEIGHT, WIDTH};
use crate::error::{Error, Result};
use crate::losses::{GeneratorLossForm, LossBreakdown, LossWeights, DIVERSITY_EPS};
use crate::nets::{
    conditions_tensor, init_params, responses_tensor, ArchitectureConfig, Exec, Grads,
    Mode, ModelParams, Networks,
};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointMeta, TensorEntry};
pub use grid::{grid_search, run_seed, Grid, GridCell, GridOptions, GridResults, GridRun};
pub use objectives::{
    discriminator_objective, generator_objective, regressor_objective, GeneratorBatch,
    GeneratorEval,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate_g: f64,
    pub learning_rate_d: f64,
    pub learning_rate_r: f64,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub seed: u64,
    /// Sequential per-sample evaluation; bit-identical results for a seed.
    pub strict_deterministic: bool,
    pub generator_loss: GeneratorLossForm,
    pub diversity_eps: f64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub architecture: ArchitectureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate_g: 2e-4,
            learning_rate_d: 2e-4,
            learning_rate_r: 1e-3,
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::REFERENCE,
            seed: 0,
            strict_deterministic: true,
            generator_loss: GeneratorLossForm::NonSaturating,
            diversity_eps: DIVERSITY_EPS,
            checkpoint_every: 0,
            architecture: ArchitectureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        for (name, v) in [
            ("learning_rate_g", self.learning_rate_g),
            ("learning_rate_d", self.learning_rate_d),
            ("learning_rate_r", self.learning_rate_r),
            ("diversity_eps", self.diversity_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if let OptimizerConfig::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0, got {beta1}, {beta2}, {eps}"
                )));
            }
        }
        self.weights.validate()?;
        self.architecture.validate()
    }

    pub fn exec(&self) -> Exec {
        if self.strict_deterministic {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub batch_index: usize,
    pub generator: LossBreakdown,
    pub discriminator: f64,
    pub regressor: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    /// Wall-clock seconds per epoch; not part of the step log file.
    pub epoch_seconds: Vec<f64>,
}

impl TrainLog {
    /// One JSON object per step.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for s in &self.steps {
            let line = serde_json::to_string(s).map_err(|e| Error::json(path, e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Mutable state of one training run: parameters, optimizer moments, and
/// the random stream for shuffling and latent codes.
pub struct Trainer {
    config: TrainConfig,
    nets: Networks,
    params: ModelParams<f32>,
    opt_g: Optimizer<f32>,
    opt_d: Optimizer<f32>,
    opt_r: Optimizer<f32>,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(params: ModelParams<f32>, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if params.config != config.architecture {
            return Err(Error::Shape(
                "parameters were built for a different architecture".into(),
            ));
        }
        let nets = params.check_layout()?;
        let opt = |lr, set| Optimizer::new(config.optimizer, lr, set);
        Ok(Self {
            opt_g: opt(config.learning_rate_g, &params.generator),
            opt_d: opt(config.learning_rate_d, &params.discriminator),
            opt_r: opt(config.learning_rate_r, &params.regressor),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1b),
            config: config.clone(),
            nets,
            params,
            step: 0,
        })
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<f32> {
        self.params
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn latents(&mut self, n: usize) -> Tensor<f32> {
        let k = self.config.architecture.latent_dim;
        let data = (0..n * k)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut self.rng);
                v as f32
            })
            .collect();
        Tensor::from_vec(&[n, k], data)
    }

    fn batch_tensors(&self, dataset: &Dataset, batch: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (h, w) = (self.config.architecture.height, self.config.architecture.width);
        if (h, w) != (HEIGHT, WIDTH) {
            return Err(Error::Shape(format!(
                "training needs a {HEIGHT}×{WIDTH} architecture, got {h}×{w}"
            )));
        }
        if batch.len() < 2 {
            return Err(Error::InvalidArgument("batch needs at least 2 samples".into()));
        }
        let samples = dataset.samples();
        let conds = conditions_tensor(&batch.iter().map(|&i| &samples[i].condition).collect::<Vec<_>>());
        let real = responses_tensor(&batch.iter().map(|&i| &samples[i].response).collect::<Vec<_>>());
        Ok((conds, real))
    }

    /// Discriminator update on the real samples `batch` and as many fresh
    /// generations under the same conditions. Returns the loss before the
    /// update.
    pub fn discriminator_update(&mut self, dataset: &Dataset, batch: &[usize]) -> Result<f64> {
        let (conds, real) = self.batch_tensors(dataset, batch)?;
        let exec = self.config.exec();
        let z = self.latents(batch.len());
        let fake = self
            .nets
            .generator
            .forward(&self.params, &conds, &z, Mode::Train, exec);
        let (loss, grads) = discriminator_objective(
            &self.nets,
            &self.params,
            &real,
            &conds,
            fake.output(),
            &conds,
            exec,
        );
        check(loss, &grads, "discriminator loss")?;
        self.opt_d.step(&mut self.params.discriminator, &grads);
        Ok(loss as f64)
    }

    /// Regressor update on real samples, supervised by their brightest pixel.
    pub fn regressor_update(&mut self, dataset: &Dataset, batch: &[usize]) -> Result<f64> {
        let (_, real) = self.batch_tensors(dataset, batch)?;
        let targets: Vec<f32> = batch
            .iter()
            .flat_map(|&i| {
                let c = find_max_pixel(&dataset.samples()[i].response);
                [c.k as f32, c.l as f32]
            })
            .collect();
        let (loss, grads) =
            regressor_objective(&self.nets, &self.params, &real, &targets, self.config.exec());
        check(loss, &grads, "regressor loss")?;
        self.opt_r.step(&mut self.params.regressor, &grads);
        Ok(loss as f64)
    }

    /// Generator update with the discriminator and regressor frozen; also
    /// advances the generator's batch-norm running statistics.
    pub fn generator_update(
        &mut self,
        dataset: &Dataset,
        stats: &DatasetStats,
        batch: &[usize],
    ) -> Result<LossBreakdown> {
        let (conds, _) = self.batch_tensors(dataset, batch)?;
        let gb = self.generator_batch(dataset, stats, batch, &conds);
        let eval = generator_objective(
            &self.nets,
            &self.params,
            &gb,
            self.config.weights,
            self.config.generator_loss,
            self.config.diversity_eps,
            self.config.exec(),
        )
        .map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite("generator loss".into()),
            other => other,
        })?;
        if !eval.grads.is_finite() {
            return Err(Error::NonFinite("generator gradient".into()));
        }
        self.opt_g.step(&mut self.params.generator, &eval.grads);
        self.nets
            .generator
            .update_running_stats(&mut self.params, &eval.trace);
        Ok(eval.breakdown)
    }

    /// Discriminator, regressor, then generator update on the samples
    /// `batch` of `dataset`.
    pub fn step(
        &mut self,
        dataset: &Dataset,
        stats: &DatasetStats,
        batch: &[usize],
        epoch: usize,
        batch_index: usize,
    ) -> Result<StepLog> {
        let step = self.step;
        let diverged = |e: Error| match e {
            Error::NonFinite(what) => Error::Diverged {
                epoch,
                step,
                batch_index,
                what,
                sample_indices: batch.to_vec(),
            },
            other => other,
        };
        let discriminator = self.discriminator_update(dataset, batch).map_err(diverged)?;
        let regressor = self.regressor_update(dataset, batch).map_err(diverged)?;
        let generator = self.generator_update(dataset, stats, batch).map_err(diverged)?;
        if !self.params.is_finite() {
            return Err(diverged(Error::NonFinite("parameters".into())));
        }
        self.step += 1;
        Ok(StepLog {
            step,
            epoch,
            batch_index,
            generator,
            discriminator,
            regressor,
        })
    }

    /// Batch rows plus, when diversity is active, one extra row per distinct
    /// group with a fresh latent code paired against the group's first row.
    fn generator_batch(
        &mut self,
        dataset: &Dataset,
        stats: &DatasetStats,
        batch: &[usize],
        conds: &Tensor<f32>,
    ) -> GeneratorBatch<f32> {
        let samples = dataset.samples();
        let mut groups: Vec<usize> = batch.iter().map(|&i| samples[i].group_id).collect();
        let mut cond_rows: Vec<Tensor<f32>> = vec![conds.clone()];
        let mut pairs = Vec::new();
        if self.config.weights.lambda_div > 0.0 {
            let mut first: HashMap<usize, usize> = HashMap::new();
            let mut order = Vec::new();
            for (row, &g) in groups.iter().enumerate() {
                if let std::collections::hash_map::Entry::Vacant(e) = first.entry(g) {
                    e.insert(row);
                    order.push(g);
                }
            }
            for g in order {
                let row = first[&g];
                pairs.push((row, groups.len(), stats.group(g).diversity_weight as f32));
                groups.push(g);
                cond_rows.push(conds.slice_batch(row, row + 1));
            }
        }
        let refs: Vec<&Tensor<f32>> = cond_rows.iter().collect();
        let all_conds = Tensor::concat_batch(&refs);
        let z = self.latents(groups.len());
        GeneratorBatch {
            conds: all_conds,
            z,
            reference_sums: groups
                .iter()
                .map(|&g| stats.group(g).intensity as f32)
                .collect(),
            centers: groups
                .iter()
                .flat_map(|&g| {
                    let c = stats.group(g).center;
                    [c.k as f32, c.l as f32]
                })
                .collect(),
            pairs,
        }
    }
}

fn check(loss: f32, grads: &Grads<f32>, what: &str) -> Result<()> {
    if loss.is_finite() && grads.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Shuffled mini-batches of one epoch; a trailing batch smaller than 2 is
/// dropped.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

/// Initial parameters for `dataset`: seeded initialization with the
/// conditioning normalization fitted to its conditions.
pub fn initial_params(dataset: &Dataset, config: &TrainConfig) -> Result<ModelParams<f32>> {
    let mut params = init_params(&config.architecture, config.seed)?;
    params.fit_conditioning(dataset);
    Ok(params)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(ModelParams<f32>, TrainLog)> {
    train_with_checkpoints(dataset, config, None)
}

/// Full training loop. With `checkpoint_dir` set and a positive
/// `checkpoint_every`, writes `epoch_NNNN/` checkpoints under it.
pub fn train_with_checkpoints(
    dataset: &Dataset,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelParams<f32>, TrainLog)> {
    config.validate()?;
    if dataset.n_groups() < 2 {
        return Err(Error::Precondition(format!(
            "training needs at least 2 groups, dataset has {}",
            dataset.n_groups()
        )));
    }
    let stats = compute_stats(dataset)?;
    let mut trainer = Trainer::new(initial_params(dataset, config)?, config)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        for (b, batch) in epoch_batches(dataset.len(), config.batch_size, &mut shuffle)
            .iter()
            .enumerate()
        {
            log.steps.push(trainer.step(dataset, &stats, batch, epoch, b)?);
        }
        log.epoch_seconds.push(start.elapsed().as_secs_f64());
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                let meta = CheckpointMeta::new(trainer.params(), config, trainer.steps_taken(), epoch + 1);
                save_checkpoint(
                    trainer.params(),
                    &meta,
                    &dir.join(format!("epoch_{:04}", epoch + 1)),
                )?;
            }
        }
    }
    Ok((trainer.into_params(), log))
}
