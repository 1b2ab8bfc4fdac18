use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::Serialize;
use zdcgan_core::data::{compute_stats, load_dataset, save_dataset, save_stats, synth_dataset, Dataset};
use zdcgan_core::evaluation::{
    evaluate_model_with, sample_grid, write_histogram, write_report, read_report, EvalSettings,
    N_CHANNELS,
};
use zdcgan_core::losses::{GeneratorLossForm, LossWeights};
use zdcgan_core::nets::OutputActivation;
use zdcgan_core::optim::OptimizerConfig;
use zdcgan_core::training::{
    grid_search, load_checkpoint, run_seed, save_checkpoint, train_with_checkpoints,
    CheckpointMeta, Grid, GridOptions, TrainConfig,
};
use zdcgan_core::Error;

use crate::args::{
    ActivationArg, Cli, Command, EvalArgs, GeneratorLossArg, GridArgs, OptimizerArg, PlotArgs,
    StatsArgs, SynthArgs, TrainArgs, TrainingFlags, DATA_ROOT_ENV,
};
use crate::config::{self, RunConfig};

/// Exit code 2 for usage and configuration problems, 1 for failures while
/// running.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn classify(e: Error) -> Failure {
    match e {
        Error::InvalidArgument(_) | Error::Precondition(_) | Error::Shape(_) => usage(e),
        other => runtime(other),
    }
}

/// Tracks which flags were typed on the command line; those win over the
/// config file, which wins over environment variables and flag defaults.
struct Flags<'a>(&'a ArgMatches);

impl Flags<'_> {
    fn given(&self, id: &str) -> bool {
        self.0.value_source(id) == Some(ValueSource::CommandLine)
    }

    fn set<T: Clone>(&self, id: &str, dst: &mut T, flag: &T) {
        if self.given(id) {
            *dst = flag.clone();
        }
    }

    fn path(&self, id: &str, flag: &Option<PathBuf>, config: &Option<PathBuf>) -> Option<PathBuf> {
        if self.given(id) {
            flag.clone()
        } else {
            config.clone().or_else(|| flag.clone())
        }
    }
}

fn required(value: Option<PathBuf>, key: &str, flag: &str) -> Outcome<PathBuf> {
    value.ok_or_else(|| {
        let env = if flag == "data" {
            format!(", or set {DATA_ROOT_ENV}")
        } else {
            String::new()
        };
        usage(format!(
            "missing required setting `{key}`: pass --{flag} or set it in the config file{env}"
        ))
    })
}

fn load_data(dir: &Path) -> Outcome<Dataset> {
    load_dataset(dir).map_err(|e| usage(format!("cannot load dataset {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(path, text + "\n").map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn run(cli: Cli, m: &ArgMatches) -> Outcome {
    let cfg = match &cli.config {
        Some(path) => config::load(path).map_err(usage)?,
        None => RunConfig::default(),
    };
    let flags = Flags(m);
    match &cli.command {
        Command::Synth(a) => synth(a, &flags, cfg),
        Command::Stats(a) => stats(a, &flags, cfg),
        Command::Train(a) => train(a, &flags, cfg),
        Command::Eval(a) => eval(a, &flags, cfg),
        Command::Gridsearch(a) => gridsearch(a, &flags, cfg),
        Command::Plot(a) => plot(a, &flags, cfg),
    }
}

fn synth(a: &SynthArgs, f: &Flags, cfg: RunConfig) -> Outcome {
    let mut s = cfg.synth;
    f.set("seed", &mut s.seed, &a.seed);
    f.set("groups", &mut s.groups, &a.groups);
    f.set("per_group", &mut s.per_group, &a.per_group);
    let out = required(f.path("out", &a.out, &s.out), "synth.out", "out")?;
    let ds = synth_dataset(s.seed, s.groups, s.per_group, &s.profile).map_err(classify)?;
    save_dataset(&ds, &out).map_err(runtime)?;
    println!(
        "wrote {} samples in {} groups ({}×{}, seed {}) to {}",
        ds.len(),
        ds.n_groups(),
        zdcgan_core::data::HEIGHT,
        zdcgan_core::data::WIDTH,
        s.seed,
        out.display()
    );
    Ok(())
}

fn stats(a: &StatsArgs, f: &Flags, cfg: RunConfig) -> Outcome {
    let data = required(f.path("data", &a.data, &cfg.stats.data), "stats.data", "data")?;
    let out = f
        .path("out", &a.out, &cfg.stats.out)
        .unwrap_or_else(|| data.join("stats.json"));
    let ds = load_data(&data)?;
    let st = compute_stats(&ds).map_err(classify)?;
    save_stats(&st, &out).map_err(runtime)?;
    let w: Vec<f64> = st.per_group.iter().map(|g| g.diversity_weight).collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{} groups, normalization {}, diversity weight min {min:.6} mean {mean:.6} max {max:.6}",
        st.per_group.len(),
        st.normalization_constant
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn apply_training_flags(f: &Flags, t: &TrainingFlags, c: &mut TrainConfig) {
    f.set("epochs", &mut c.epochs, &t.epochs);
    f.set("batch_size", &mut c.batch_size, &t.batch_size);
    f.set("lr_g", &mut c.learning_rate_g, &t.lr_g);
    f.set("lr_d", &mut c.learning_rate_d, &t.lr_d);
    f.set("lr_r", &mut c.learning_rate_r, &t.lr_r);
    f.set("seed", &mut c.seed, &t.seed);
    f.set("strict", &mut c.strict_deterministic, &t.strict);
    if f.given("generator_loss") {
        c.generator_loss = match t.generator_loss {
            GeneratorLossArg::NonSaturating => GeneratorLossForm::NonSaturating,
            GeneratorLossArg::Saturating => GeneratorLossForm::Saturating,
        };
    }
    if f.given("optimizer") && t.optimizer == OptimizerArg::Sgd {
        c.optimizer = OptimizerConfig::Sgd;
    } else if (f.given("optimizer") && t.optimizer == OptimizerArg::Adam)
        || ["adam_beta1", "adam_beta2", "adam_eps"].iter().any(|id| f.given(id))
    {
        let (mut beta1, mut beta2, mut eps) = match c.optimizer {
            OptimizerConfig::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            OptimizerConfig::Sgd => (t.adam_beta1, t.adam_beta2, t.adam_eps),
        };
        f.set("adam_beta1", &mut beta1, &t.adam_beta1);
        f.set("adam_beta2", &mut beta2, &t.adam_beta2);
        f.set("adam_eps", &mut eps, &t.adam_eps);
        c.optimizer = OptimizerConfig::Adam { beta1, beta2, eps };
    }
    let arch = &mut c.architecture;
    f.set("latent_dim", &mut arch.latent_dim, &t.latent_dim);
    f.set("base_channels", &mut arch.base_channels, &t.base_channels);
    f.set("embed_dim", &mut arch.conditioning_embed_dim, &t.embed_dim);
    if f.given("output_activation") {
        arch.output_activation = match t.output_activation {
            ActivationArg::Softplus => OutputActivation::Softplus,
            ActivationArg::Relu => OutputActivation::Relu,
        };
    }
}

#[derive(Serialize)]
struct DivergenceDump<'a> {
    epoch: usize,
    step: usize,
    batch_index: usize,
    what: &'a str,
    sample_indices: &'a [usize],
}

fn train(a: &TrainArgs, f: &Flags, cfg: RunConfig) -> Outcome {
    let section = cfg.train;
    let data = required(f.path("data", &a.data, &section.data), "train.data", "data")?;
    let out = required(f.path("out", &a.out, &section.out), "train.out", "out")?;
    let mut c = section.config;
    apply_training_flags(f, &a.training, &mut c);
    f.set("lambda_div", &mut c.weights.lambda_div, &a.lambda_div);
    f.set("lambda_in", &mut c.weights.lambda_in, &a.lambda_in);
    f.set("lambda_aux", &mut c.weights.lambda_aux, &a.lambda_aux);
    f.set("checkpoint_every", &mut c.checkpoint_every, &a.checkpoint_every);
    c.validate().map_err(classify)?;
    let ds = load_data(&data)?;
    fs::create_dir_all(&out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;

    let (params, log) = match train_with_checkpoints(&ds, &c, Some(&out)) {
        Ok(v) => v,
        Err(Error::Diverged {
            epoch,
            step,
            batch_index,
            what,
            sample_indices,
        }) => {
            let dump = out.join("divergence.json");
            write_json(
                &dump,
                &DivergenceDump {
                    epoch,
                    step,
                    batch_index,
                    what: &what,
                    sample_indices: &sample_indices,
                },
            )?;
            return Err(runtime(format!(
                "training diverged at epoch {epoch}, step {step} (batch {batch_index}): \
                 non-finite {what}; diagnostics in {}",
                dump.display()
            )));
        }
        Err(e) => return Err(classify(e)),
    };
    let meta = CheckpointMeta::new(&params, &c, log.steps.len(), c.epochs);
    save_checkpoint(&params, &meta, &out).map_err(runtime)?;
    log.write_jsonl(&out.join("train_log.jsonl")).map_err(runtime)?;
    let secs: f64 = log.epoch_seconds.iter().sum();
    match log.steps.last() {
        Some(s) => println!(
            "{} steps in {secs:.1}s; final losses: generator {:.6} (adv {:.6}), discriminator {:.6}, regressor {:.6}",
            log.steps.len(),
            s.generator.total,
            s.generator.adv,
            s.discriminator,
            s.regressor
        ),
        None => println!("0 steps; wrote initial parameters"),
    }
    println!(
        "weights: lambda_div {:e}, lambda_in {:e}, lambda_aux {:e}",
        c.weights.lambda_div, c.weights.lambda_in, c.weights.lambda_aux
    );
    println!("checkpoint: {}", out.display());
    Ok(())
}

fn eval(a: &EvalArgs, f: &Flags, cfg: RunConfig) -> Outcome {
    let mut s = cfg.eval;
    let checkpoint = required(f.path("checkpoint", &a.checkpoint, &s.checkpoint), "eval.checkpoint", "checkpoint")?;
    let data = required(f.path("data", &a.data, &s.data), "eval.data", "data")?;
    let out = f
        .path("out", &a.out, &s.out)
        .unwrap_or_else(|| checkpoint.join("report"));
    f.set("samples_per_condition", &mut s.samples_per_condition, &a.samples_per_condition);
    f.set("seed", &mut s.seed, &a.seed);
    f.set("bins", &mut s.bins, &a.bins);
    let (params, _) = load_checkpoint(&checkpoint)
        .map_err(|e| usage(format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
    let ds = load_data(&data)?;
    let settings = EvalSettings {
        samples_per_condition: s.samples_per_condition,
        seed: s.seed,
        n_bins: s.bins,
        channel_map: s.channel_map,
    };
    let report = evaluate_model_with(&params, &ds, &settings).map_err(classify)?;
    write_report(&report, &out).map_err(runtime)?;
    println!("{:<8}{:>18}", "channel", "ws1");
    for (c, ws) in report.per_channel_ws.iter().enumerate() {
        println!("{:<8}{:>18.9}", format!("ch{}", c + 1), ws);
    }
    println!("{:<8}{:>18.9}", "mean", report.mean_ws);
    println!("center error {:.6} px, intensity gap {:.6}", report.center_error_mean, report.intensity_gap);
    println!("report: {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct PlannedCell {
    cell_index: usize,
    weights: LossWeights,
    seeds: Vec<u64>,
}

#[derive(Serialize)]
struct GridPlan {
    runs_per_cell: usize,
    cells: Vec<PlannedCell>,
}

fn gridsearch(a: &GridArgs, f: &Flags, cfg: RunConfig) -> Outcome {
    let mut s = cfg.gridsearch;
    let out = required(f.path("out", &a.out, &s.out), "gridsearch.out", "out")?;
    f.set("runs_per_cell", &mut s.runs_per_cell, &a.runs_per_cell);
    f.set("grid_div", &mut s.grid_div, &a.grid_div);
    f.set("grid_in", &mut s.grid_in, &a.grid_in);
    f.set("grid_aux", &mut s.grid_aux, &a.grid_aux);
    f.set("jobs", &mut s.jobs, &a.jobs);
    f.set("split_ratio", &mut s.split_ratio, &a.split_ratio);
    f.set("samples_per_condition", &mut s.samples_per_condition, &a.samples_per_condition);
    let mut base = cfg.train.config;
    apply_training_flags(f, &a.training, &mut base);
    base.validate().map_err(classify)?;
    let grid = Grid {
        lambda_div: s.grid_div.clone(),
        lambda_in: s.grid_in.clone(),
        lambda_aux: s.grid_aux.clone(),
    };
    grid.validate().map_err(classify)?;
    if s.runs_per_cell == 0 {
        return Err(usage("runs_per_cell must be positive"));
    }
    fs::create_dir_all(&out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;

    if a.dry_run {
        let plan = GridPlan {
            runs_per_cell: s.runs_per_cell,
            cells: grid
                .cells()
                .into_iter()
                .enumerate()
                .map(|(i, weights)| PlannedCell {
                    cell_index: i,
                    weights,
                    seeds: (0..s.runs_per_cell).map(|r| run_seed(base.seed, i, r)).collect(),
                })
                .collect(),
        };
        let path = out.join("grid_plan.json");
        write_json(&path, &plan)?;
        println!(
            "{} cells × {} runs planned; wrote {}",
            plan.cells.len(),
            s.runs_per_cell,
            path.display()
        );
        return Ok(());
    }

    let data = required(f.path("data", &a.data, &s.data), "gridsearch.data", "data")?;
    let ds = load_data(&data)?;
    let options = GridOptions {
        runs_per_cell: s.runs_per_cell,
        split_ratio: s.split_ratio,
        eval: EvalSettings {
            samples_per_condition: s.samples_per_condition,
            ..EvalSettings::default()
        },
        jobs: s.jobs,
    };
    let results = grid_search(&ds, &base, &grid, &options).map_err(classify)?;
    let path = out.join("grid_results.json");
    results.write(&path).map_err(runtime)?;
    println!("{:>4} {:>12} {:>12} {:>12} {:>16}", "rank", "lambda_div", "lambda_in", "lambda_aux", "mean_ws");
    for c in &results.cells {
        let ws = c.mean_ws.map_or("failed".to_string(), |v| format!("{v:.9}"));
        println!(
            "{:>4} {:>12e} {:>12e} {:>12e} {:>16}",
            c.rank, c.weights.lambda_div, c.weights.lambda_in, c.weights.lambda_aux, ws
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn plot(a: &PlotArgs, f: &Flags, cfg: RunConfig) -> Outcome {
    let mut s = cfg.plot;
    let report_dir = required(f.path("report", &a.report, &s.report), "plot.report", "report")?;
    let out = f.path("out", &a.out, &s.out).unwrap_or_else(|| report_dir.join("plot"));
    f.set("channels", &mut s.channels, &a.channels);
    f.set("samples", &mut s.samples, &a.samples);
    f.set("seed", &mut s.seed, &a.seed);
    if let Some(c) = s.channels.iter().find(|c| !(1..=N_CHANNELS).contains(*c)) {
        return Err(usage(format!("channel {c} is outside 1..={N_CHANNELS}")));
    }
    let report = read_report(&report_dir)
        .map_err(|e| usage(format!("cannot read report in {}: {e}", report_dir.display())))?;
    fs::create_dir_all(&out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
    for &c in &s.channels {
        let h = report
            .histograms
            .iter()
            .find(|h| h.channel == c)
            .ok_or_else(|| usage(format!("report has no histogram for channel {c}")))?;
        write_histogram(h, &out).map_err(runtime)?;
        println!("wrote {}", out.join(format!("hist_ch{c}.csv")).display());
    }
    let checkpoint = f.path("checkpoint", &a.checkpoint, &s.checkpoint);
    let data = f.path("data", &a.data, &s.data);
    if let (Some(checkpoint), Some(data)) = (checkpoint, data) {
        let (params, _) = load_checkpoint(&checkpoint)
            .map_err(|e| usage(format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
        let ds = load_data(&data)?;
        let triples = sample_grid(&params, &ds, s.samples, s.seed).map_err(classify)?;
        let path = out.join("samples.json");
        write_json(&path, &triples)?;
        println!("wrote {} (condition, true, generated) triples to {}", triples.len(), path.display());
    }
    Ok(())
}
