//! Random-distortion pretraining and meta-training.
//!
//! Every step draws its tasks from an RNG derived from
//! `(seed, phase, epoch, step)`, so a run resumed from an epoch checkpoint
//! continues exactly as the uninterrupted run would have.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::datagen::DatasetEntry;
use crate::error::{Error, Result};
use crate::lifter::{self, LifterParams, Loss, MetaGradient, MetaOrder, WindowBatch};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::derive_seed;
use crate::taskgen::{make_meta_batch, DistortionTask, SamplerConfig, SamplingMode, TaskSampler, TaskSource};

/// Which tasks supply the outer (query) loss of a meta step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryTasks {
    /// A fresh uniformly distorted task per inner task.
    Fresh,
    /// The query windows of the same (stratified) task used for the inner step.
    Reuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Inner SGD learning rate.
    pub alpha: f64,
    /// Outer learning rate (also used for pretraining).
    pub beta: f64,
    /// Tasks per meta-batch.
    pub meta_batch: usize,
    /// Windows per task, split evenly into support and query.
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub query_tasks: QueryTasks,
    pub source: TaskSource,
    /// Stratify k1 across the tasks of a meta-batch.
    pub stratified: bool,
    /// Distortion used during pretraining.
    pub pretrain_sampling: SamplingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            beta: 0.001,
            meta_batch: 5,
            batch_size: 128,
            pretrain_epochs: 4,
            epochs: 4,
            steps_per_epoch: 50,
            lr_decay: 0.95,
            lambda1: 5.0,
            lambda2: 0.5,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            query_tasks: QueryTasks::Fresh,
            source: TaskSource::Predicted,
            stratified: true,
            pretrain_sampling: SamplingMode::Uniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr_ok = self.alpha >= 0.0 && self.beta > 0.0 && self.lr_decay > 0.0;
        if !lr_ok || self.meta_batch < 1 || self.batch_size < 2 || self.steps_per_epoch < 1 {
            return Err(Error::invalid(format!("invalid training config {self:?}")));
        }
        self.sampler().validate()
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            n_tasks: self.meta_batch,
        }
    }

    pub fn windows_per_split(&self) -> usize {
        self.batch_size / 2
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.beta * self.lr_decay.powi(epoch as i32)
    }

    /// SHA-256 over the canonical TOML form of this config and the lifter's.
    pub fn hash_with(&self, lifter: &lifter::LifterConfig) -> String {
        let text = format!(
            "{}\n{}",
            toml::to_string(self).expect("train config serializes"),
            toml::to_string(lifter).expect("lifter config serializes")
        );
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Meta,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::Pretrain => 1,
            Phase::Meta => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Meta => "meta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub lr: f64,
    /// Pretraining: mean batch loss. Meta: mean support loss before the inner step.
    pub train_loss_mm: f64,
    /// Pretraining: probe-batch loss after the epoch. Meta: mean query loss
    /// after the inner step.
    pub test_loss_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<EpochRecord>,
    /// Not written to CSV so reports stay byte-identical across runs.
    pub wall_secs: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "phase,epoch,lr,train_loss_mm,test_loss_mm,seed,config_hash";

    pub fn epochs(&self, phase: Phase) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{:.9e},{:.9e},{:.9e},{},{}",
                r.phase.name(),
                r.epoch,
                r.lr,
                r.train_loss_mm,
                r.test_loss_mm,
                self.seed,
                self.config_hash
            );
        }
        s
    }
}

/// Everything needed to continue training after an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: LifterParams,
    pub optimizer: Optimizer,
    pub phase: Phase,
    /// Epochs of `phase` already completed.
    pub epochs_done: usize,
    pub report: TrainReport,
}

impl TrainState {
    pub fn new(params: LifterParams, phase: Phase, cfg: &TrainConfig) -> Self {
        let n = params.len();
        TrainState {
            report: TrainReport {
                seed: cfg.seed,
                config_hash: cfg.hash_with(&params.config),
                records: Vec::new(),
                wall_secs: 0.0,
            },
            params,
            optimizer: Optimizer::new(cfg.optimizer, n),
            phase,
            epochs_done: 0,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.params.to_checkpoint();
        self.optimizer.write_to(&mut ck, "optim");
        ck.set_meta("train.phase", self.phase.name());
        ck.set_meta("train.epochs_done", self.epochs_done);
        ck.set_meta("train.seed", self.report.seed);
        ck.set_meta("train.config_hash", &self.report.config_hash);
        let rows: Vec<f64> = self
            .report
            .records
            .iter()
            .flat_map(|r| [r.phase.tag() as f64, r.epoch as f64, r.lr, r.train_loss_mm, r.test_loss_mm])
            .collect();
        ck.push("train.report", self.report.records.len(), 5, rows);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let params = LifterParams::from_checkpoint(ck)?;
        let optimizer = Optimizer::read_from(ck, "optim", params.len())?;
        let phase = match ck.meta_value::<String>("train.phase")?.as_str() {
            "pretrain" => Phase::Pretrain,
            "meta" => Phase::Meta,
            other => return Err(Error::invalid(format!("unknown training phase `{other}`"))),
        };
        let rows = ck
            .segment("train.report")
            .ok_or_else(|| Error::invalid("checkpoint has no training report"))?;
        let records = rows
            .values
            .chunks_exact(5)
            .map(|r| EpochRecord {
                phase: if r[0] == 1.0 { Phase::Pretrain } else { Phase::Meta },
                epoch: r[1] as usize,
                lr: r[2],
                train_loss_mm: r[3],
                test_loss_mm: r[4],
            })
            .collect();
        Ok(TrainState {
            params,
            optimizer,
            phase,
            epochs_done: ck.meta_value("train.epochs_done")?,
            report: TrainReport {
                seed: ck.meta_value("train.seed")?,
                config_hash: ck.meta_value("train.config_hash")?,
                records,
                wall_secs: 0.0,
            },
        })
    }

    /// Starts `phase` from the parameters (and report) of a finished state,
    /// with a fresh optimizer.
    pub fn continue_into(self, phase: Phase, cfg: &TrainConfig) -> Self {
        let mut next = TrainState::new(self.params, phase, cfg);
        next.report.records = self.report.records;
        next.report.wall_secs = self.report.wall_secs;
        next
    }
}

/// Where epoch checkpoints go, and an optional early stop (for split runs).
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop after this many completed epochs of the current phase.
    pub stop_after: Option<usize>,
}

impl RunOptions {
    pub fn checkpoint_path(&self, phase: Phase) -> Option<PathBuf> {
        self.checkpoint_dir
            .as_ref()
            .map(|d| d.join(format!("{}.ckpt", phase.name())))
    }
}

/// One SGD step on the support loss: `θ' = θ - α∇L_s(θ)`.
pub fn inner_adapt(params: &LifterParams, support: &WindowBatch, alpha: f64) -> Result<LifterParams> {
    let g = lifter::grad(params, Loss::Mpjpe(support))?;
    Ok(params.with_values(
        params
            .values
            .iter()
            .zip(&g.grad)
            .map(|(t, g)| t - alpha * g)
            .collect(),
    ))
}

/// Inner (task-level training) and outer (task-level testing) tasks of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaBatch {
    pub train: Vec<DistortionTask>,
    /// Query-loss tasks; empty when the train tasks' own query sets are reused.
    pub test: Vec<DistortionTask>,
}

impl MetaBatch {
    pub fn sample(sampler: &TaskSampler<'_>, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let s = cfg.sampler();
        let mode = if cfg.stratified {
            SamplingMode::Stratified
        } else {
            SamplingMode::Uniform
        };
        let train = make_meta_batch(sampler, &s, mode, derive_seed(seed, &[0]))?;
        let test = match cfg.query_tasks {
            QueryTasks::Reuse => Vec::new(),
            QueryTasks::Fresh => make_meta_batch(sampler, &s, SamplingMode::Uniform, derive_seed(seed, &[1]))?,
        };
        Ok(MetaBatch { train, test })
    }

    fn query_task(&self, i: usize) -> &DistortionTask {
        self.test.get(i).unwrap_or(&self.train[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean inner (support) loss, meters.
    pub train_loss: f64,
    /// Mean outer loss, meters.
    pub test_loss: f64,
}

/// Averages per-task meta-gradients (in task order) and applies one outer update.
pub fn meta_step(
    params: &mut LifterParams,
    optimizer: &mut Optimizer,
    batch: &MetaBatch,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepStats> {
    let frames = params.config.frames;
    let root = params.config.root;
    let order = MetaOrder::from_flag(params.config.second_order);
    let snapshot: &LifterParams = params;
    let grads: Vec<MetaGradient> = (0..batch.train.len())
        .into_par_iter()
        .map(|i| {
            let support = batch.train[i].support_batch(frames, root)?;
            let query = batch.query_task(i).query_batch(frames, root)?;
            let g = lifter::meta_grad(snapshot, &support, &query, cfg.alpha, order)?;
            debug_assert_eq!(g.inner_steps, 1);
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let n = grads.len() as f64;
    let mut total = vec![0.0; params.len()];
    for g in &grads {
        for (t, v) in total.iter_mut().zip(&g.grad) {
            *t += v / n;
        }
    }
    optimizer.step(&mut params.values, &total, lr);
    if !params.is_finite() {
        return Err(Error::Numeric("parameters became non-finite after the outer update".into()));
    }
    Ok(StepStats {
        train_loss: grads.iter().map(|g| g.support_loss).sum::<f64>() / n,
        test_loss: grads.iter().map(|g| g.query_loss).sum::<f64>() / n,
    })
}

/// One supervised step on every window of `tasks` (equal task sizes, so the
/// mean of per-task losses is the batch mean).
pub fn supervised_step(
    params: &mut LifterParams,
    optimizer: &mut Optimizer,
    tasks: &[DistortionTask],
    lr: f64,
) -> Result<f64> {
    let (frames, root) = (params.config.frames, params.config.root);
    let snapshot: &LifterParams = params;
    let grads: Vec<lifter::Gradient> = tasks
        .par_iter()
        .map(|t| lifter::grad(snapshot, Loss::Mpjpe(&t.all_windows(frames, root)?)))
        .collect::<Result<_>>()?;
    let n = grads.len() as f64;
    let mut total = vec![0.0; params.len()];
    for g in &grads {
        for (t, v) in total.iter_mut().zip(&g.grad) {
            *t += v / n;
        }
    }
    optimizer.step(&mut params.values, &total, lr);
    if !params.is_finite() {
        return Err(Error::Numeric("parameters became non-finite after the update".into()));
    }
    Ok(grads.iter().map(|g| g.loss).sum::<f64>() / n)
}

fn probe_loss(params: &LifterParams, probe: &[DistortionTask]) -> Result<f64> {
    let (frames, root) = (params.config.frames, params.config.root);
    let losses = probe
        .par_iter()
        .map(|t| {
            let b = t.all_windows(frames, root)?;
            let pred = lifter::predict(params, &b.inputs)?;
            lifter::mpjpe_loss(&pred, &b.target_poses())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Fixed uniformly distorted tasks used to track pretraining progress.
pub fn probe_tasks(sampler: &TaskSampler<'_>, cfg: &TrainConfig, mode: SamplingMode) -> Result<Vec<DistortionTask>> {
    make_meta_batch(sampler, &cfg.sampler(), mode, derive_seed(cfg.seed, &[0x70726f6265]))
}

fn save_state(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    state.to_checkpoint().save(path)
}

/// Runs `state.phase` until `total_epochs` are done (or `opts.stop_after`),
/// checkpointing after each epoch.
pub fn run_phase(
    mut state: TrainState,
    entries: &[DatasetEntry],
    cfg: &TrainConfig,
    total_epochs: usize,
    opts: &RunOptions,
) -> Result<TrainState> {
    cfg.validate()?;
    let started = Instant::now();
    let sampler = TaskSampler::new(entries, cfg.source, state.params.config.frames, cfg.windows_per_split())?;
    let probe = match state.phase {
        Phase::Pretrain => probe_tasks(&sampler, cfg, cfg.pretrain_sampling)?,
        Phase::Meta => Vec::new(),
    };
    let ckpt_path = opts.checkpoint_path(state.phase);
    let stop = opts.stop_after.map_or(total_epochs, |s| s.min(total_epochs));

    while state.epochs_done < stop {
        let epoch = state.epochs_done;
        let lr = cfg.lr_at(epoch);
        let last_good = state.clone();
        let result = (|| -> Result<(f64, f64)> {
            let (mut train, mut test) = (0.0, 0.0);
            for step in 0..cfg.steps_per_epoch {
                let seed = derive_seed(cfg.seed, &[state.phase.tag(), epoch as u64, step as u64]);
                match state.phase {
                    Phase::Pretrain => {
                        let tasks = make_meta_batch(&sampler, &cfg.sampler(), cfg.pretrain_sampling, seed)?;
                        train += supervised_step(&mut state.params, &mut state.optimizer, &tasks, lr)?;
                    }
                    Phase::Meta => {
                        let batch = MetaBatch::sample(&sampler, cfg, seed)?;
                        let s = meta_step(&mut state.params, &mut state.optimizer, &batch, cfg, lr)?;
                        train += s.train_loss;
                        test += s.test_loss;
                    }
                }
            }
            let steps = cfg.steps_per_epoch as f64;
            let mm = lifter::OUTPUT_SCALE_MM;
            match state.phase {
                Phase::Pretrain => Ok((train / steps * mm, probe_loss(&state.params, &probe)?)),
                Phase::Meta => Ok((train / steps * mm, test / steps * mm)),
            }
        })();
        let (train_loss_mm, test_loss_mm) = match result {
            Ok(v) if v.0.is_finite() && v.1.is_finite() => v,
            failure => {
                let why = match failure {
                    Err(e) => e.to_string(),
                    Ok(_) => "non-finite epoch loss".to_string(),
                };
                let saved = match &opts.checkpoint_dir {
                    Some(dir) => {
                        let p = dir.join("last_good.ckpt");
                        save_state(&last_good, &p)?;
                        format!("; last good state saved to {}", p.display())
                    }
                    None => String::new(),
                };
                return Err(Error::Numeric(format!(
                    "{} epoch {epoch} diverged: {why}{saved}",
                    state.phase.name()
                )));
            }
        };
        state.report.records.push(EpochRecord {
            phase: state.phase,
            epoch,
            lr,
            train_loss_mm,
            test_loss_mm,
        });
        state.epochs_done += 1;
        if let Some(p) = &ckpt_path {
            save_state(&state, p)?;
        }
    }
    state.report.wall_secs += started.elapsed().as_secs_f64();
    Ok(state)
}

/// Supervised training on uniformly distorted tasks.
pub fn pretrain_random_distortion(
    params: LifterParams,
    entries: &[DatasetEntry],
    cfg: &TrainConfig,
) -> Result<(LifterParams, TrainReport)> {
    let state = run_phase(
        TrainState::new(params, Phase::Pretrain, cfg),
        entries,
        cfg,
        cfg.pretrain_epochs,
        &RunOptions::default(),
    )?;
    Ok((state.params, state.report))
}

/// Meta-training from `params` (normally the pretrained parameters).
pub fn meta_train(
    params: LifterParams,
    entries: &[DatasetEntry],
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<(LifterParams, TrainReport)> {
    let state = run_phase(TrainState::new(params, Phase::Meta, cfg), entries, cfg, cfg.epochs, opts)?;
    Ok((state.params, state.report))
}

/// Pretraining followed by meta-training; one report covering both phases.
pub fn train_full(
    params: LifterParams,
    entries: &[DatasetEntry],
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<(LifterParams, TrainReport)> {
    let pre = run_phase(
        TrainState::new(params, Phase::Pretrain, cfg),
        entries,
        cfg,
        cfg.pretrain_epochs,
        opts,
    )?;
    let meta = run_phase(pre.continue_into(Phase::Meta, cfg), entries, cfg, cfg.epochs, opts)?;
    Ok((meta.params, meta.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_dataset, DataConfig};
    use crate::lifter::{init_params, meta_objective, LifterConfig};
    use crate::skeleton::default_topology;

    fn data(n: usize) -> Vec<DatasetEntry> {
        let cfg = DataConfig {
            sequences: n,
            frames: 80,
            ..DataConfig::default()
        };
        gen_dataset(&default_topology(), &cfg, 3).unwrap()
    }

    fn small_lifter() -> LifterParams {
        init_params(&LifterConfig {
            frames: 3,
            channels: 16,
            seed: 1,
            ..LifterConfig::default()
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            meta_batch: 3,
            pretrain_epochs: 2,
            epochs: 2,
            steps_per_epoch: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let d = data(2);
        let p = small_lifter();
        let cfg = TrainConfig {
            pretrain_epochs: 0,
            ..small_cfg()
        };
        let (q, report) = pretrain_random_distortion(p.clone(), &d, &cfg).unwrap();
        assert_eq!(p, q);
        assert!(report.records.is_empty());
    }

    #[test]
    fn inner_adapt_is_one_sgd_step() {
        let d = data(2);
        let p = small_lifter();
        let sampler = TaskSampler::new(&d, TaskSource::Predicted, 3, 8).unwrap();
        let tasks = make_meta_batch(&sampler, &SamplerConfig::default(), SamplingMode::Uniform, 5).unwrap();
        let support = tasks[0].support_batch(3, 0).unwrap();
        assert_eq!(inner_adapt(&p, &support, 0.0).unwrap(), p);
        let g = lifter::grad(&p, Loss::Mpjpe(&support)).unwrap();
        let adapted = inner_adapt(&p, &support, 1e-3).unwrap();
        for i in 0..p.len() {
            assert_eq!(adapted.values[i], p.values[i] - 1e-3 * g.grad[i]);
        }
        let after = lifter::grad(&adapted, Loss::Mpjpe(&support)).unwrap().loss;
        assert!(after < g.loss);
    }

    #[test]
    fn single_task_zero_alpha_meta_step_is_supervised_step() {
        let d = data(2);
        let p = small_lifter();
        let cfg = TrainConfig {
            alpha: 0.0,
            meta_batch: 1,
            batch_size: 16,
            query_tasks: QueryTasks::Reuse,
            ..TrainConfig::default()
        };
        let sampler = TaskSampler::new(&d, TaskSource::Predicted, 3, 8).unwrap();
        let batch = MetaBatch::sample(&sampler, &cfg, 9).unwrap();
        let mut a = p.clone();
        let mut oa = Optimizer::new(OptimizerKind::Adam, p.len());
        meta_step(&mut a, &mut oa, &batch, &cfg, 1e-3).unwrap();

        let query = batch.train[0].query_batch(3, 0).unwrap();
        let g = lifter::grad(&p, Loss::Mpjpe(&query)).unwrap();
        let mut b = p.clone();
        let mut ob = Optimizer::new(OptimizerKind::Adam, p.len());
        ob.step(&mut b.values, &g.grad, 1e-3);
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_then_step_is_bit_exact() {
        let d = data(2);
        let cfg = TrainConfig {
            query_tasks: QueryTasks::Reuse,
            ..small_cfg()
        };
        let mut state = TrainState::new(small_lifter(), Phase::Meta, &cfg);
        let sampler = TaskSampler::new(&d, TaskSource::Predicted, 3, 8).unwrap();
        let b0 = MetaBatch::sample(&sampler, &cfg, 1).unwrap();
        meta_step(&mut state.params, &mut state.optimizer, &b0, &cfg, 1e-3).unwrap();
        let mut restored = TrainState::from_checkpoint(&Checkpoint::from_bytes(&state.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(restored, state);
        let b1 = MetaBatch::sample(&sampler, &cfg, 2).unwrap();
        meta_step(&mut state.params, &mut state.optimizer, &b1, &cfg, 1e-3).unwrap();
        meta_step(&mut restored.params, &mut restored.optimizer, &b1, &cfg, 1e-3).unwrap();
        assert_eq!(restored.params, state.params);
    }

    #[test]
    fn stratified_train_tasks_fresh_uniform_test_tasks() {
        let d = data(2);
        let cfg = small_cfg();
        let sampler = TaskSampler::new(&d, TaskSource::Predicted, 3, 8).unwrap();
        let b = MetaBatch::sample(&sampler, &cfg, 4).unwrap();
        assert_eq!(b.train.len(), 3);
        assert_eq!(b.test.len(), 3);
        for (i, t) in b.train.iter().enumerate() {
            let (lo, hi) = cfg.sampler().k1_bin(i + 1);
            assert!(lo <= t.params.k1 && t.params.k1 <= hi);
        }
    }

    #[test]
    fn meta_train_smoke_and_resume() {
        let d = data(4);
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            stop_after: None,
        };
        let (full, report) = train_full(small_lifter(), &d, &cfg, &opts).unwrap();
        assert_eq!(report.epochs(Phase::Pretrain), 2);
        assert_eq!(report.epochs(Phase::Meta), 2);
        assert!(full.is_finite());
        let ck = Checkpoint::load(dir.path().join("meta.ckpt")).unwrap();
        assert_eq!(LifterParams::from_checkpoint(&ck).unwrap(), full);

        // same run again, interrupted after one meta epoch and resumed
        let dir2 = tempfile::tempdir().unwrap();
        let mut opts2 = RunOptions {
            checkpoint_dir: Some(dir2.path().to_path_buf()),
            stop_after: None,
        };
        let pre = run_phase(TrainState::new(small_lifter(), Phase::Pretrain, &cfg), &d, &cfg, 2, &opts2).unwrap();
        opts2.stop_after = Some(1);
        run_phase(pre.continue_into(Phase::Meta, &cfg), &d, &cfg, 2, &opts2).unwrap();
        let resumed = TrainState::from_checkpoint(&Checkpoint::load(dir2.path().join("meta.ckpt")).unwrap()).unwrap();
        assert_eq!(resumed.epochs_done, 1);
        opts2.stop_after = None;
        let finished = run_phase(resumed, &d, &cfg, 2, &opts2).unwrap();
        assert_eq!(finished.params, full);
        assert_eq!(finished.report.to_csv(), report.to_csv());
    }

    #[test]
    fn same_seed_same_result() {
        let d = data(2);
        let cfg = small_cfg();
        let a = pretrain_random_distortion(small_lifter(), &d, &cfg).unwrap();
        let b = pretrain_random_distortion(small_lifter(), &d, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_csv(), b.1.to_csv());
        let other = TrainConfig { seed: 1, ..cfg };
        assert_ne!(pretrain_random_distortion(small_lifter(), &d, &other).unwrap().0, a.0);
    }

    #[test]
    fn pretraining_reduces_probe_loss() {
        let d = data(6);
        let cfg = TrainConfig {
            batch_size: 32,
            pretrain_epochs: 6,
            steps_per_epoch: 20,
            beta: 3e-3,
            ..TrainConfig::default()
        };
        let p = small_lifter();
        let sampler = TaskSampler::new(&d, cfg.source, 3, cfg.windows_per_split()).unwrap();
        let probe = probe_tasks(&sampler, &cfg, SamplingMode::Uniform).unwrap();
        let before = probe_loss(&p, &probe).unwrap();
        let (q, report) = pretrain_random_distortion(p, &d, &cfg).unwrap();
        let after = probe_loss(&q, &probe).unwrap();
        assert!(after < 0.8 * before, "{before} -> {after}");
        assert_eq!(report.records.last().unwrap().test_loss_mm, after);
    }

    #[test]
    fn meta_objective_decreases_on_probe() {
        let d = data(6);
        let cfg = TrainConfig {
            batch_size: 32,
            epochs: 4,
            steps_per_epoch: 15,
            beta: 3e-3,
            query_tasks: QueryTasks::Reuse,
            ..TrainConfig::default()
        };
        let p = small_lifter();
        let sampler = TaskSampler::new(&d, cfg.source, 3, cfg.windows_per_split()).unwrap();
        let probe = MetaBatch::sample(&sampler, &cfg, 777).unwrap();
        let objective = |params: &LifterParams| {
            probe
                .train
                .iter()
                .map(|t| {
                    meta_objective(params, &t.support_batch(3, 0).unwrap(), &t.query_batch(3, 0).unwrap(), cfg.alpha).unwrap()
                })
                .sum::<f64>()
        };
        let before = objective(&p);
        let (q, _) = meta_train(p, &d, &cfg, &RunOptions::default()).unwrap();
        assert!(objective(&q) < before);
    }
}
