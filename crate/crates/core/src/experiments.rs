//! Scripted desk-scale experiments.
//!
//! * degradation: a lifter trained without distortion, evaluated on every preset;
//! * adaptation dynamics: per-epoch MPJPE while adapting a meta-trained and a
//!   pretrain-only lifter under both scenarios;
//! * ablation: base / +meta-learning / +stratified / +pretraining;
//! * generation path: tasks from detector-style keypoints vs clean projections.
//!
//! Each run writes into `<out>/<name>/`: the resolved config, its hash,
//! checkpoints, CSV reports, SVG plots and a `checks.csv` of trend checks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{finetune_scenario1, iso_scenario2, AdaptConfig, AdaptCurve};
use crate::config::Config;
use crate::datagen::{gen_dataset, DataConfig, DatasetEntry, Trajectory2D};
use crate::error::{Error, Result};
use crate::lifter::{self, init_params, ClipWindows, LifterParams, WindowBatch};
use crate::metrics::{self, MetricReport, MetricRow};
use crate::report::{line_plot_svg, Series};
use crate::rng::derive_seed;
use crate::skeleton::{default_topology, Pose3D, SkeletonTopology};
use crate::taskgen::{preset_or_err, task_from_predicted, SamplingMode, TaskSource};
use crate::training::{run_phase, train_full, Phase, RunOptions, TrainConfig, TrainReport, TrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Window stride over held-out sequences.
    pub stride: usize,
    /// Presets evaluated by `eval`; `none` is the undistorted camera.
    pub presets: Vec<String>,
    /// Held-out sequences used for every reported metric.
    pub test_sequences: usize,
    /// Target-camera sequences from which adaptation data is drawn.
    pub adapt_sequences: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            stride: 4,
            presets: ["none", "d1", "d2", "d3", "d4"].map(String::from).to_vec(),
            test_sequences: 6,
            adapt_sequences: 4,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.test_sequences == 0 || self.adapt_sequences == 0 {
            return Err(Error::invalid("eval stride and sequence counts must be positive"));
        }
        for p in &self.presets {
            preset_or_err(p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Which experiments `exp run` executes.
    pub run: Vec<String>,
    pub heavy: Vec<String>,
    pub moderate: Vec<String>,
    /// Minimum heavy/undistorted MPJPE ratio expected of the degradation run.
    pub degradation_ratio: f64,
    /// Minimum relative MPJPE drop expected over an adaptation run.
    pub adapt_improvement: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "desk".into(),
            run: EXPERIMENTS.map(String::from).to_vec(),
            heavy: vec!["d1".into(), "d2".into()],
            moderate: vec!["d3".into(), "d4".into()],
            degradation_ratio: 1.5,
            adapt_improvement: 0.10,
        }
    }
}

pub const EXPERIMENTS: [&str; 4] = ["degradation", "adaptation", "ablation", "generation_path"];

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::invalid(format!("invalid experiment name `{}`", self.name)));
        }
        for r in &self.run {
            if !EXPERIMENTS.contains(&r.as_str()) {
                return Err(Error::invalid(format!(
                    "unknown experiment `{r}` (known: {})",
                    EXPERIMENTS.join(", ")
                )));
            }
        }
        for p in self.heavy.iter().chain(&self.moderate) {
            preset_or_err(p)?;
        }
        if self.heavy.is_empty() {
            return Err(Error::invalid("at least one heavy preset is required"));
        }
        Ok(())
    }
}

/// One trend assertion of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl TrendCheck {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        TrendCheck {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

pub fn checks_csv(checks: &[TrendCheck]) -> String {
    let mut s = String::from("check,passed,detail\n");
    for c in checks {
        let _ = writeln!(s, "{},{},{}", c.name, c.passed, c.detail.replace(',', ";"));
    }
    s
}

/// Model variants trained by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Supervised on undistorted keypoints only.
    Undistorted,
    /// Supervised on uniformly distorted tasks.
    PretrainOnly,
    /// Meta-learning from scratch with uniform task sampling.
    MetaUniform,
    /// Meta-learning from scratch with stratified task sampling.
    MetaStratified,
    /// Pretraining followed by stratified meta-learning.
    Full,
    /// `Full` trained on clean-projection tasks.
    FullGt3d,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Undistorted => "undistorted",
            Variant::PretrainOnly => "pretrain_only",
            Variant::MetaUniform => "meta_uniform",
            Variant::MetaStratified => "meta_stratified",
            Variant::Full => "full",
            Variant::FullGt3d => "full_gt3d",
        }
    }
}

/// Datasets and evaluation windows shared by all experiments of a run.
pub struct Workbench {
    pub config: Config,
    pub topology: SkeletonTopology,
    pub train: Vec<DatasetEntry>,
    pub test: Vec<DatasetEntry>,
    pub adapt_pool: Vec<DatasetEntry>,
}

fn crop(t: &Trajectory2D, frames: usize) -> Result<Trajectory2D> {
    Trajectory2D::new(frames, t.joints, t.points[..frames * t.joints].to_vec())
}

impl Workbench {
    pub fn new(config: &Config) -> Result<Self> {
        let topology = default_topology();
        let train = gen_dataset(&topology, &config.data, config.seed)?;
        Workbench::with_train(config, train)
    }

    /// Uses `train` as the training set; held-out sets are generated.
    pub fn with_train(config: &Config, train: Vec<DatasetEntry>) -> Result<Self> {
        config.validate()?;
        let topology = default_topology();
        let held_out = |n: usize, tag: u64| {
            gen_dataset(
                &topology,
                &DataConfig {
                    sequences: n,
                    ..config.data.clone()
                },
                derive_seed(config.seed, &[tag]),
            )
        };
        Ok(Workbench {
            test: held_out(config.eval.test_sequences, 0x74657374)?,
            adapt_pool: held_out(config.eval.adapt_sequences, 0x6164617074)?,
            config: config.clone(),
            topology,
            train,
        })
    }

    fn frames(&self) -> usize {
        self.config.lifter.frames
    }

    /// Distorted detector-style windows of `entries` with center-frame targets.
    pub fn windows(&self, entries: &[DatasetEntry], preset: &str, stride: usize) -> Result<WindowBatch> {
        let d = preset_or_err(preset)?;
        let t = self.frames();
        let mut batch = WindowBatch::new(t, self.topology.num_joints(), self.topology.root());
        for e in entries {
            let task = task_from_predicted(&e.detected, &e.motion.gt3d, &e.motion.intrinsics, &d)?;
            for s in (0..=e.motion.len() - t).step_by(stride) {
                batch.push(&task.input, s, &task.intrinsics, &task.target.frames[s + t / 2])?;
            }
        }
        Ok(batch)
    }

    pub fn test_windows(&self, preset: &str) -> Result<WindowBatch> {
        self.windows(&self.test, preset, self.config.eval.stride)
    }

    /// Every `1/labeled_fraction`-th window of the target-camera pool.
    pub fn labeled_set(&self, preset: &str) -> Result<WindowBatch> {
        let every = (1.0 / self.config.adapt.labeled_fraction).round().max(1.0) as usize;
        self.windows(&self.adapt_pool, preset, every)
    }

    /// Leading `unlabeled_fraction` of every target-camera sequence, no labels.
    pub fn unlabeled_clips(&self, preset: &str) -> Result<ClipWindows> {
        let d = preset_or_err(preset)?;
        let t = self.frames();
        let clips = self
            .adapt_pool
            .iter()
            .map(|e| {
                let n = ((self.config.adapt.unlabeled_fraction * e.motion.len() as f64).round() as usize)
                    .clamp(t + 1, e.motion.len());
                let task = task_from_predicted(&e.detected, &e.motion.gt3d, &e.motion.intrinsics, &d)?;
                crop(&task.input, n)
            })
            .collect::<Result<Vec<_>>>()?;
        let k = self.adapt_pool[0].motion.intrinsics;
        ClipWindows::from_trajectories(&clips, &k, t)
    }

    pub fn evaluate(&self, params: &LifterParams, batch: &WindowBatch, distortion: &str, scenario: &str) -> Result<MetricRow> {
        let pred = lifter::predict(params, &batch.inputs)?;
        let gt = batch.target_poses();
        let (mpjpe, p_mpjpe, pckh) = metrics::evaluate(&pred, &gt, &self.topology)?;
        Ok(MetricRow {
            distortion: distortion.to_string(),
            scenario: scenario.to_string(),
            mpjpe,
            p_mpjpe,
            pckh,
        })
    }

    /// Trains `variant` from the configured initialization.
    pub fn train_variant(&self, variant: Variant, checkpoint_dir: Option<&Path>) -> Result<(LifterParams, TrainReport)> {
        let base = &self.config.train;
        let total = base.pretrain_epochs + base.epochs;
        let init = init_params(&self.config.lifter)?;
        let opts = RunOptions {
            checkpoint_dir: checkpoint_dir.map(|d| d.join(variant.name())),
            stop_after: None,
        };
        let supervised = |sampling: SamplingMode| -> Result<(LifterParams, TrainReport)> {
            let cfg = TrainConfig {
                pretrain_sampling: sampling,
                ..base.clone()
            };
            let epochs = if sampling == SamplingMode::Undistorted { total } else { base.pretrain_epochs };
            let s = run_phase(TrainState::new(init.clone(), Phase::Pretrain, &cfg), &self.train, &cfg, epochs, &opts)?;
            Ok((s.params, s.report))
        };
        let meta_only = |stratified: bool| -> Result<(LifterParams, TrainReport)> {
            let cfg = TrainConfig {
                stratified,
                ..base.clone()
            };
            let s = run_phase(TrainState::new(init.clone(), Phase::Meta, &cfg), &self.train, &cfg, total, &opts)?;
            Ok((s.params, s.report))
        };
        match variant {
            Variant::Undistorted => supervised(SamplingMode::Undistorted),
            Variant::PretrainOnly => supervised(base.pretrain_sampling),
            Variant::MetaUniform => meta_only(false),
            Variant::MetaStratified => meta_only(true),
            Variant::Full => train_full(init, &self.train, base, &opts),
            Variant::FullGt3d => {
                let cfg = TrainConfig {
                    source: TaskSource::Gt3d,
                    ..base.clone()
                };
                train_full(init, &self.train, &cfg, &opts)
            }
        }
    }

    /// Adapts to `preset` and tracks held-out MPJPE after every epoch.
    pub fn adapt(&self, params: &LifterParams, preset: &str, scenario: u8) -> Result<(LifterParams, AdaptCurve)> {
        let test = self.test_windows(preset)?;
        let gt = test.target_poses();
        let monitor = |p: &LifterParams| metrics::mpjpe(&lifter::predict(p, &test.inputs)?, &gt);
        let cfg = AdaptConfig {
            scenario,
            ..self.config.adapt.clone()
        };
        match scenario {
            1 => finetune_scenario1(params, &self.labeled_set(preset)?, &cfg, monitor),
            2 => iso_scenario2(params, &self.unlabeled_clips(preset)?, &self.topology, &cfg, monitor),
            s => Err(Error::invalid(format!("unknown scenario {s}"))),
        }
    }
}

fn mean_row(rows: &[MetricRow], distortion: &str, scenario: &str) -> MetricRow {
    let n = rows.len() as f64;
    MetricRow {
        distortion: distortion.to_string(),
        scenario: scenario.to_string(),
        mpjpe: rows.iter().map(|r| r.mpjpe).sum::<f64>() / n,
        p_mpjpe: rows.iter().map(|r| r.p_mpjpe).sum::<f64>() / n,
        pckh: rows.iter().map(|r| r.pckh).sum::<f64>() / n,
    }
}

/// Output directory for one run.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(out: &Path, config: &Config) -> Result<Self> {
        let root = out.join(&config.experiment.name);
        fs::create_dir_all(root.join("checkpoints"))?;
        fs::write(root.join("spec.toml"), config.to_toml())?;
        fs::write(root.join("config_hash.txt"), format!("{}\n", config.hash()))?;
        Ok(RunDir { root })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.root.join(name), contents)?;
        Ok(())
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    fn save_model(&self, variant: Variant, params: &LifterParams, report: &TrainReport) -> Result<()> {
        params.to_checkpoint().save(self.checkpoints().join(format!("{}.ckpt", variant.name())))?;
        self.write(&format!("train_{}.csv", variant.name()), &report.to_csv())
    }
}

/// Files every completed experiment leaves behind.
pub fn expected_files(experiment: &str) -> &'static [&'static str] {
    match experiment {
        "degradation" => &["degradation.csv", "degradation.svg", "degradation_checks.csv", "checkpoints/undistorted.ckpt"],
        "adaptation" => &[
            "adaptation_curves.csv",
            "adaptation_summary.csv",
            "adaptation_checks.csv",
            "checkpoints/full.ckpt",
            "checkpoints/pretrain_only.ckpt",
        ],
        "ablation" => &["ablation.csv", "ablation.svg", "ablation_checks.csv"],
        "generation_path" => &["generation_path.csv", "generation_path_checks.csv", "checkpoints/full_gt3d.ckpt"],
        _ => &[],
    }
}

/// Lists files missing from a run directory for the given experiments.
pub fn missing_outputs(root: &Path, experiments: &[String]) -> Vec<String> {
    let mut missing: Vec<String> = ["spec.toml", "config_hash.txt"]
        .iter()
        .filter(|f| !root.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    for e in experiments {
        missing.extend(
            expected_files(e)
                .iter()
                .filter(|f| !root.join(f).is_file())
                .map(|f| f.to_string()),
        );
    }
    if experiments.iter().any(|e| e == "adaptation") && !has_svg(root, "adaptation_") {
        missing.push("adaptation_*.svg".into());
    }
    missing
}

fn has_svg(root: &Path, prefix: &str) -> bool {
    fs::read_dir(root).is_ok_and(|it| {
        it.flatten().any(|e| {
            let n = e.file_name().to_string_lossy().into_owned();
            n.starts_with(prefix) && n.ends_with(".svg")
        })
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricReport,
    pub checks: Vec<TrendCheck>,
}

/// Trained models are cached across experiments of one run.
pub struct Runner<'a> {
    pub bench: &'a Workbench,
    pub dir: RunDir,
    cache: std::sync::Mutex<Vec<(Variant, LifterParams)>>,
}

impl<'a> Runner<'a> {
    pub fn new(bench: &'a Workbench, out: &Path) -> Result<Self> {
        Ok(Runner {
            dir: RunDir::create(out, &bench.config)?,
            bench,
            cache: std::sync::Mutex::new(Vec::new()),
        })
    }

    pub fn model(&self, variant: Variant) -> Result<LifterParams> {
        if let Some((_, p)) = self.cache.lock().expect("cache").iter().find(|(v, _)| *v == variant) {
            return Ok(p.clone());
        }
        let (p, report) = self.bench.train_variant(variant, Some(&self.dir.checkpoints()))?;
        self.dir.save_model(variant, &p, &report)?;
        self.cache.lock().expect("cache").push((variant, p.clone()));
        Ok(p)
    }

    fn models(&self, variants: &[Variant]) -> Result<Vec<LifterParams>> {
        variants.par_iter().map(|&v| self.model(v)).collect()
    }

    fn finish(&self, name: &str, report: MetricReport, checks: Vec<TrendCheck>) -> Result<ExperimentOutcome> {
        self.dir.write(&format!("{name}.csv"), &report.to_csv())?;
        self.dir.write(&format!("{name}_checks.csv"), &checks_csv(&checks))?;
        Ok(ExperimentOutcome { report, checks })
    }

    pub fn run(&self, name: &str) -> Result<ExperimentOutcome> {
        match name {
            "degradation" => self.degradation_trend(),
            "adaptation" => self.adaptation_dynamics().map(|(o, _)| o),
            "ablation" => self.ablation(),
            "generation_path" => self.generation_path_comparison(),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }

    /// Undistorted training, evaluation on `none` and every distorted preset.
    pub fn degradation_trend(&self) -> Result<ExperimentOutcome> {
        let b = self.bench;
        let params = self.model(Variant::Undistorted)?;
        let ec = &b.config.experiment;
        let mut presets = vec!["none".to_string()];
        for p in ec.heavy.iter().chain(&ec.moderate) {
            if !presets.contains(p) {
                presets.push(p.clone());
            }
        }
        let rows = presets
            .par_iter()
            .map(|p| b.evaluate(&params, &b.test_windows(p)?, p, "undistorted_training"))
            .collect::<Result<Vec<_>>>()?;
        let base = rows[0].mpjpe;
        let mut checks = vec![TrendCheck::new(
            "undistorted_finite",
            base.is_finite(),
            format!("undistorted MPJPE {base:.2} mm"),
        )];
        for r in rows.iter().filter(|r| ec.heavy.contains(&r.distortion)) {
            let ratio = r.mpjpe / base;
            checks.push(TrendCheck::new(
                &format!("heavy_ratio_{}", r.distortion),
                ratio >= ec.degradation_ratio,
                format!(
                    "{}: {:.2} mm vs {:.2} mm = {ratio:.2}x (need >= {})",
                    r.distortion, r.mpjpe, base, ec.degradation_ratio
                ),
            ));
        }
        let series = [Series {
            label: "MPJPE (mm)".into(),
            points: rows.iter().enumerate().map(|(i, r)| (i as f64, r.mpjpe)).collect(),
            dashed: false,
        }];
        let order = presets.join(", ");
        self.dir.write(
            "degradation.svg",
            &line_plot_svg(&format!("Undistorted training: {order}"), "preset index", "MPJPE (mm)", &series),
        )?;
        self.finish("degradation", MetricReport { rows }, checks)
    }

    /// Per-epoch adaptation curves for both initializations and scenarios.
    pub fn adaptation_dynamics(&self) -> Result<(ExperimentOutcome, Vec<CurveRecord>)> {
        let b = self.bench;
        let ec = &b.config.experiment;
        let models = self.models(&[Variant::Full, Variant::PretrainOnly])?;
        let inits = [("meta", &models[0]), ("pretrain_only", &models[1])];
        let mut jobs = Vec::new();
        for preset in ec.heavy.iter().chain(&ec.moderate) {
            for scenario in [1u8, 2] {
                for (init, params) in inits {
                    jobs.push((preset.clone(), scenario, init, params));
                }
            }
        }
        let curves = jobs
            .par_iter()
            .map(|(preset, scenario, init, params)| {
                let (adapted, curve) = b.adapt(params, preset, *scenario)?;
                let test = b.test_windows(preset)?;
                let label = |stage: &str| format!("s{scenario}_{init}_{stage}");
                Ok(CurveRecord {
                    preset: preset.clone(),
                    scenario: *scenario,
                    init: init.to_string(),
                    before: b.evaluate(params, &test, preset, &label("epoch0"))?,
                    after: b.evaluate(&adapted, &test, preset, &label("final"))?,
                    curve,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut long = String::from("preset,scenario,init,epoch,mpjpe_mm,objective\n");
        let mut summary = String::from("preset,scenario,init,epoch0_mpjpe_mm,final_mpjpe_mm,relative_change,diverged_at\n");
        for c in &curves {
            for (i, (e, o)) in c.curve.eval.iter().zip(&c.curve.objective).enumerate() {
                let _ = writeln!(long, "{},{},{},{i},{e:.6},{o:.9e}", c.preset, c.scenario, c.init);
            }
            let _ = writeln!(
                summary,
                "{},{},{},{:.6},{:.6},{:.6},{}",
                c.preset,
                c.scenario,
                c.init,
                c.curve.first(),
                c.curve.last(),
                c.curve.last() / c.curve.first() - 1.0,
                c.curve.diverged_at.map_or(String::new(), |e| e.to_string())
            );
        }
        self.dir.write("adaptation_curves.csv", &long)?;
        self.dir.write("adaptation_summary.csv", &summary)?;
        for preset in ec.heavy.iter().chain(&ec.moderate) {
            for scenario in [1u8, 2] {
                let series: Vec<Series> = curves
                    .iter()
                    .filter(|c| &c.preset == preset && c.scenario == scenario)
                    .map(|c| {
                        let s = Series::new(&c.init, &c.curve.eval);
                        if c.init == "meta" {
                            s
                        } else {
                            s.dashed()
                        }
                    })
                    .collect();
                self.dir.write(
                    &format!("adaptation_{preset}_s{scenario}.svg"),
                    &line_plot_svg(&format!("{preset}, scenario {scenario}"), "epoch", "MPJPE (mm)", &series),
                )?;
            }
        }

        let mut checks = Vec::new();
        let mut rows = Vec::new();
        for c in &curves {
            rows.push(c.before.clone());
            rows.push(c.after.clone());
        }
        for preset in &ec.heavy {
            for scenario in [1u8, 2] {
                let find = |init: &str| {
                    curves
                        .iter()
                        .find(|c| &c.preset == preset && c.scenario == scenario && c.init == init)
                        .expect("curve for every job")
                };
                let (m, p) = (find("meta"), find("pretrain_only"));
                let drop = 1.0 - m.curve.last() / m.curve.first();
                checks.push(TrendCheck::new(
                    &format!("meta_improves_{preset}_s{scenario}"),
                    drop >= ec.adapt_improvement,
                    format!(
                        "{:.2} -> {:.2} mm ({:.1}% drop; need >= {:.0}%)",
                        m.curve.first(),
                        m.curve.last(),
                        100.0 * drop,
                        100.0 * ec.adapt_improvement
                    ),
                ));
                checks.push(TrendCheck::new(
                    &format!("meta_beats_pretrain_{preset}_s{scenario}"),
                    m.curve.last() < p.curve.last(),
                    format!("final {:.2} mm (meta) vs {:.2} mm (pretrain only)", m.curve.last(), p.curve.last()),
                ));
            }
        }
        Ok((self.finish("adaptation", MetricReport { rows }, checks)?, curves))
    }

    /// Scenario-1 adaptation on every heavy preset, averaged.
    fn adapted_heavy(&self, params: &LifterParams, label: &str) -> Result<MetricRow> {
        let b = self.bench;
        let rows = b
            .config
            .experiment
            .heavy
            .par_iter()
            .map(|p| {
                let (adapted, _) = b.adapt(params, p, 1)?;
                b.evaluate(&adapted, &b.test_windows(p)?, p, label)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_row(&rows, "heavy", label))
    }

    pub fn ablation(&self) -> Result<ExperimentOutcome> {
        let variants = [Variant::Undistorted, Variant::MetaUniform, Variant::MetaStratified, Variant::Full];
        let labels = ["base", "+meta", "+stratified", "+pretraining"];
        let models = self.models(&variants)?;
        let rows = models
            .iter()
            .zip(labels)
            .map(|(m, l)| self.adapted_heavy(m, l))
            .collect::<Result<Vec<_>>>()?;
        let checks = vec![TrendCheck::new(
            "full_not_worse_than_base",
            rows[3].mpjpe <= rows[0].mpjpe,
            format!("full {:.2} mm vs base {:.2} mm", rows[3].mpjpe, rows[0].mpjpe),
        )];
        let series = [Series {
            label: "MPJPE after scenario 1 (mm)".into(),
            points: rows.iter().enumerate().map(|(i, r)| (i as f64, r.mpjpe)).collect(),
            dashed: false,
        }];
        self.dir.write(
            "ablation.svg",
            &line_plot_svg(&format!("Ablation: {}", labels.join(", ")), "variant index", "MPJPE (mm)", &series),
        )?;
        self.finish("ablation", MetricReport { rows }, checks)
    }

    pub fn generation_path_comparison(&self) -> Result<ExperimentOutcome> {
        let models = self.models(&[Variant::Full, Variant::FullGt3d])?;
        let rows = vec![
            self.adapted_heavy(&models[0], "predicted_2d")?,
            self.adapted_heavy(&models[1], "gt3d_projection")?,
        ];
        let checks = vec![TrendCheck::new(
            "predicted_path_not_worse",
            rows[0].mpjpe <= rows[1].mpjpe,
            format!("predicted {:.2} mm vs gt3d {:.2} mm", rows[0].mpjpe, rows[1].mpjpe),
        )];
        self.finish("generation_path", MetricReport { rows }, checks)
    }
}

#[derive(Debug, Clone)]
pub struct CurveRecord {
    pub preset: String,
    pub scenario: u8,
    pub init: String,
    pub curve: AdaptCurve,
    /// All metrics on the test windows before and after adaptation.
    pub before: MetricRow,
    pub after: MetricRow,
}

/// Runs every experiment listed in the config; returns all outcomes.
pub fn run_experiments(config: &Config, out: &Path) -> Result<Vec<(String, ExperimentOutcome)>> {
    let bench = Workbench::new(config)?;
    let runner = Runner::new(&bench, out)?;
    let mut outcomes = Vec::new();
    for name in &config.experiment.run {
        outcomes.push((name.clone(), runner.run(name)?));
    }
    let all: Vec<TrendCheck> = outcomes.iter().flat_map(|(_, o)| o.checks.clone()).collect();
    runner.dir.write("checks.csv", &checks_csv(&all))?;
    let missing = missing_outputs(&runner.dir.root, &config.experiment.run);
    if !missing.is_empty() {
        return Err(Error::Numeric(format!("run directory is incomplete: {}", missing.join(", "))));
    }
    Ok(outcomes)
}

/// Evaluates `params` on every configured preset.
pub fn evaluate_presets(bench: &Workbench, params: &LifterParams, label: &str) -> Result<MetricReport> {
    let rows = bench
        .config
        .eval
        .presets
        .par_iter()
        .map(|p| bench.evaluate(params, &bench.test_windows(p)?, p, label))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { rows })
}

/// Convenience for predictions as a flat list.
pub fn predict_batch(params: &LifterParams, batch: &WindowBatch) -> Result<Vec<Pose3D>> {
    lifter::predict(params, &batch.inputs)
}
