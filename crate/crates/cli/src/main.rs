//! `metalift` — data generation, training, adaptation, evaluation and
//! experiment scripts for the distortion-robust lifter.
//!
//! Settings come from (highest first): command-line flags, the `--config`
//! TOML file, built-in defaults. Outputs go to `--out`, else `$METALIFT_OUT`,
//! else `./runs`.
//!
//! Exit status: 0 success, 1 usage error, 2 runtime or numeric error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use metalift::adaptation::AdaptCurve;
use metalift::camera::{distort_pixel, DistortionParams};
use metalift::checkpoint::Checkpoint;
use metalift::config::Config;
use metalift::datagen::{gen_dataset, DatasetEntry};
use metalift::dataset::{load_dataset, load_trajectory, save_dataset, save_trajectory};
use metalift::experiments::{evaluate_presets, run_experiments, Workbench};
use metalift::lifter::{init_params, LifterParams};
use metalift::report::{line_plot_svg, merge_tables, plot_table, Series, Table};
use metalift::skeleton::default_topology;
use metalift::taskgen::preset_or_err;
use metalift::training::{run_phase, Phase, RunOptions, TrainState};

const OUT_ENV: &str = "METALIFT_OUT";

#[derive(Parser, Debug)]
#[command(name = "metalift", version, about = "Distortion-robust 3D pose lifting", arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for data, initialization and training (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: $METALIFT_OUT or ./runs].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Number of sequences [default: from the config].
        #[arg(long)]
        sequences: Option<usize>,
        /// Frames per sequence [default: from the config].
        #[arg(long)]
        frames: Option<usize>,
        /// Dataset file [default: <out>/dataset.txt].
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write each sequence's detected 2D trajectory into this directory.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Apply lens distortion to a trajectory file.
    Distort {
        /// Trajectory file to distort.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the distorted trajectory.
        #[arg(long)]
        output: PathBuf,
        /// Named preset: none, d1..d4, h36m.
        #[arg(long, conflicts_with = "params", required_unless_present = "params")]
        preset: Option<String>,
        /// Custom coefficients `k1,k2,k3,p1,p2`.
        #[arg(long, value_name = "K1,K2,K3,P1,P2", allow_hyphen_values = true, value_parser = parse_coefficients)]
        params: Option<[f64; 5]>,
    },
    /// Supervised training on randomly distorted tasks.
    Pretrain(TrainArgs),
    /// Second-order meta-training on stratified distortion tasks.
    MetaTrain(TrainArgs),
    /// Adapt a checkpoint to one distortion.
    Adapt {
        /// 1: few labeled windows; 2: unlabeled clips with the ISO losses.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        scenario: u8,
        /// Checkpoint to adapt [default: <out>/meta.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Target distortion [default: first heavy preset of the config].
        #[arg(long)]
        preset: Option<String>,
        /// Target-camera sequences [default: generated].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Adaptation epochs [default: from the config].
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// MPJPE / P-MPJPE / PCKh of a checkpoint on every configured preset.
    Eval {
        /// Checkpoint to evaluate [default: <out>/meta.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test sequences [default: generated held-out set].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Value of the `scenario` column.
        #[arg(long, default_value = "eval")]
        label: String,
        /// Report file [default: <out>/eval.csv].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Experiment scripts.
    #[command(subcommand)]
    Exp(ExpCommand),
    /// Merge CSV reports and plot them.
    Report {
        /// CSV files with a header row.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Merged CSV [default: <out>/report.csv].
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also plot every numeric column of each input against this one
        /// (`report_<input>.svg` next to the merged CSV).
        #[arg(long)]
        plot: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum ExpCommand {
    /// Run the experiments listed in a spec file (same format as --config).
    Run {
        /// Spec file: a config with an [experiment] section; outputs go to <out>/<experiment.name>/.
        spec: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training dataset [default: generated from the config].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Starting parameters [default: fresh initialization].
    #[arg(long)]
    init: Option<PathBuf>,
    /// Epochs for this phase.
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from this phase's checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many epochs (the checkpoint can be resumed).
    #[arg(long)]
    stop_after: Option<usize>,
}

struct Ctx {
    config: Config,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common, config_path: Option<&Path>) -> Result<Ctx> {
        let mut config = match config_path {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(seed) = common.seed {
            config = config.with_seed(seed);
        }
        let out = common
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        Ok(Ctx { config, out })
    }

    fn validated(mut self, edit: impl FnOnce(&mut Config)) -> Result<Ctx> {
        edit(&mut self.config);
        self.config.validate()?;
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self)
    }

    fn path(&self, given: Option<PathBuf>, name: &str) -> PathBuf {
        given.unwrap_or_else(|| self.out.join(name))
    }

    fn train_set(&self, data: Option<&Path>) -> Result<Vec<DatasetEntry>> {
        match data {
            Some(p) => Ok(load_dataset(p)?),
            None => Ok(gen_dataset(&default_topology(), &self.config.data, self.config.seed)?),
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_params(path: &Path) -> Result<LifterParams> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(LifterParams::from_checkpoint(&ck)?)
}

fn gen_data(ctx: Ctx, output: Option<PathBuf>, trajectories: Option<PathBuf>) -> Result<()> {
    let entries = ctx.train_set(None)?;
    let path = ctx.path(output, "dataset.txt");
    save_dataset(&path, &entries)?;
    if let Some(dir) = trajectories {
        fs::create_dir_all(&dir)?;
        for (i, e) in entries.iter().enumerate() {
            save_trajectory(dir.join(format!("seq{i:03}.txt")), &e.detected, &e.motion.intrinsics)?;
        }
    }
    println!("wrote {} sequences to {}", entries.len(), path.display());
    Ok(())
}

fn parse_coefficients(s: &str) -> std::result::Result<[f64; 5], String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 5 coefficients, got {}", v.len()))
}

fn distort(input: &Path, output: &Path, preset: Option<String>, params: Option<[f64; 5]>) -> Result<()> {
    let d = match (preset, params) {
        (Some(name), _) => preset_or_err(&name)?,
        (None, Some(p)) => {
            let d = DistortionParams::new(p[0], p[1], p[2], p[3], p[4]);
            d.validate()?;
            d
        }
        (None, None) => unreachable!("clap requires one of --preset/--params"),
    };
    let (t, k) = load_trajectory(input)?;
    let out = t.map_points(|p| distort_pixel(p, &k, &d))?;
    save_trajectory(output, &out, &k)?;
    println!("wrote {}", output.display());
    Ok(())
}

fn train(ctx: Ctx, phase: Phase, args: TrainArgs) -> Result<()> {
    let ctx = ctx.validated(|c| {
        if let Some(e) = args.epochs {
            match phase {
                Phase::Pretrain => c.train.pretrain_epochs = e,
                Phase::Meta => c.train.epochs = e,
            }
        }
    })?;
    let cfg = &ctx.config.train;
    let entries = ctx.train_set(args.data.as_deref())?;
    let opts = RunOptions {
        checkpoint_dir: Some(ctx.out.clone()),
        stop_after: args.stop_after,
    };
    let ckpt = opts.checkpoint_path(phase).expect("checkpoint dir is set");
    let state = if args.resume && ckpt.is_file() {
        let state = TrainState::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
        if state.phase != phase {
            bail!("{} holds a {} state", ckpt.display(), state.phase.name());
        }
        if state.report.config_hash != cfg.hash_with(&state.params.config) {
            bail!("{} was written with a different training config", ckpt.display());
        }
        println!("resuming {} after epoch {}", phase.name(), state.epochs_done);
        state
    } else {
        let params = match &args.init {
            Some(p) => load_params(p)?,
            None => init_params(&ctx.config.lifter)?,
        };
        TrainState::new(params, phase, cfg)
    };
    let total = match phase {
        Phase::Pretrain => cfg.pretrain_epochs,
        Phase::Meta => cfg.epochs,
    };
    let state = run_phase(state, &entries, cfg, total, &opts)?;
    let report = ctx.out.join(format!("{}_report.csv", phase.name()));
    write(&report, &state.report.to_csv())?;
    if let Some(r) = state.report.records.last() {
        println!(
            "{} epoch {}: train {:.2} mm, held-out {:.2} mm",
            phase.name(),
            r.epoch,
            r.train_loss_mm,
            r.test_loss_mm
        );
    }
    println!("checkpoint {}, report {}", ckpt.display(), report.display());
    Ok(())
}

fn adapt(
    ctx: Ctx,
    scenario: u8,
    checkpoint: Option<PathBuf>,
    preset: Option<String>,
    data: Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<()> {
    let ctx = ctx.validated(|c| {
        if let Some(e) = epochs {
            c.adapt.epochs = e;
        }
    })?;
    let params = load_params(&ctx.path(checkpoint, "meta.ckpt"))?;
    let preset = preset.unwrap_or_else(|| ctx.config.experiment.heavy[0].clone());
    let mut bench = Workbench::with_train(&ctx.config, Vec::new())?;
    if let Some(p) = data {
        bench.adapt_pool = load_dataset(p)?;
    }
    let (adapted, curve) = bench.adapt(&params, &preset, scenario)?;
    let stem = format!("adapt_s{scenario}_{preset}");
    write(&ctx.out.join(format!("{stem}.csv")), &curve.to_csv())?;
    write(&ctx.out.join(format!("{stem}.svg")), &curve_svg(&stem, &curve))?;
    adapted.to_checkpoint().save(ctx.out.join(format!("{stem}.ckpt")))?;
    if let Some(e) = curve.diverged_at {
        eprintln!("warning: adaptation diverged at epoch {e}; kept the best parameters");
    }
    println!(
        "{preset} scenario {scenario}: held-out MPJPE {:.2} -> {:.2} mm ({stem}.csv)",
        curve.first(),
        curve.last()
    );
    Ok(())
}

fn curve_svg(title: &str, curve: &AdaptCurve) -> String {
    line_plot_svg(title, "epoch", "held-out MPJPE (mm)", &[Series::new("MPJPE", &curve.eval)])
}

fn eval(ctx: Ctx, checkpoint: Option<PathBuf>, data: Option<PathBuf>, label: &str, output: Option<PathBuf>) -> Result<()> {
    let ctx = ctx.validated(|_| {})?;
    let params = load_params(&ctx.path(checkpoint, "meta.ckpt"))?;
    let mut bench = Workbench::with_train(&ctx.config, Vec::new())?;
    if let Some(p) = data {
        bench.test = load_dataset(p)?;
    }
    let report = evaluate_presets(&bench, &params, label)?;
    let path = ctx.path(output, "eval.csv");
    write(&path, &report.to_csv())?;
    for r in &report.rows {
        println!(
            "{:>5}: MPJPE {:8.2} mm  P-MPJPE {:8.2} mm  PCKh {:6.2} %",
            r.distortion, r.mpjpe, r.p_mpjpe, r.pckh
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn exp_run(ctx: Ctx) -> Result<()> {
    let ctx = ctx.validated(|_| {})?;
    let outcomes = run_experiments(&ctx.config, &ctx.out)?;
    let mut failed = 0;
    for (name, o) in &outcomes {
        for c in &o.checks {
            println!("[{}] {name}/{}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            failed += usize::from(!c.passed);
        }
    }
    println!(
        "{} trend checks, {failed} failed; outputs in {}",
        outcomes.iter().map(|(_, o)| o.checks.len()).sum::<usize>(),
        ctx.out.join(&ctx.config.experiment.name).display()
    );
    Ok(())
}

fn report(ctx: Ctx, inputs: &[PathBuf], output: Option<PathBuf>, plot: Option<String>) -> Result<()> {
    let tables = inputs
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, Table::parse(&text).with_context(|| p.display().to_string())?))
        })
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_tables(&tables)?;
    fs::create_dir_all(&ctx.out)?;
    let path = ctx.path(output, "report.csv");
    write(&path, &merged.to_csv())?;
    println!("wrote {} ({} rows)", path.display(), merged.rows.len());
    if let Some(x) = plot {
        for (name, t) in &tables {
            let svg = path.with_file_name(format!("report_{name}.svg"));
            write(&svg, &plot_table(name, t, &x)?)?;
            println!("wrote {}", svg.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    let ctx = || Ctx::new(&common, common.config.as_deref());
    match cli.command {
        Command::GenData {
            sequences,
            frames,
            output,
            trajectories,
        } => {
            // Only the data section matters here: a short dataset may not
            // satisfy the training-window constraints of the full config.
            let mut ctx = ctx()?;
            let data = &mut ctx.config.data;
            data.sequences = sequences.unwrap_or(data.sequences);
            data.frames = frames.unwrap_or(data.frames);
            data.validate()?;
            fs::create_dir_all(&ctx.out)?;
            gen_data(ctx, output, trajectories)
        }
        Command::Distort {
            input,
            output,
            preset,
            params,
        } => distort(&input, &output, preset, params),
        Command::Pretrain(args) => train(ctx()?, Phase::Pretrain, args),
        Command::MetaTrain(args) => train(ctx()?, Phase::Meta, args),
        Command::Adapt {
            scenario,
            checkpoint,
            preset,
            data,
            epochs,
        } => adapt(ctx()?, scenario, checkpoint, preset, data, epochs),
        Command::Eval {
            checkpoint,
            data,
            label,
            output,
        } => eval(ctx()?, checkpoint, data, &label, output),
        Command::Exp(ExpCommand::Run { spec }) => {
            if common.config.is_some() {
                bail!("`exp run` takes its configuration from the spec file; drop --config");
            }
            exp_run(Ctx::new(&common, Some(&spec))?)
        }
        Command::Report { inputs, output, plot } => report(ctx()?, &inputs, output, plot),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
