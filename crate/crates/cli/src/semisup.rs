use std::path::PathBuf;

use anyhow::Context;
use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use serde::Serialize;

use seqjoint::rng;
use seqjoint::tabular::{
    forward_marginal, joint_kl, posterior_quality, sample_joint, supervised_baseline,
    train as run_training, PosteriorQuality, SyntheticTask, TabularJointModel, TabularPosterior,
    TrainConfig,
};

use crate::io::{create_dir, emit_json, read_json, read_text, write_text};
use crate::{usage, OutArg};

/// One `--<key> VALUE` flag per training config key.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides(Vec<(&'static str, String)>);

impl FromArgMatches for ConfigOverrides {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let set = TrainConfig::KEYS
            .iter()
            .filter_map(|&k| m.get_one::<String>(k).map(|v| (k, v.clone())))
            .collect();
        Ok(Self(set))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigOverrides {
    fn augment_args(cmd: Command) -> Command {
        TrainConfig::KEYS.iter().fold(cmd, |cmd, &key| {
            cmd.arg(
                Arg::new(key)
                    .long(key.replace('_', "-"))
                    .value_name("VALUE")
                    .allow_hyphen_values(true)
                    .help_heading("Config overrides")
                    .help(format!("Overrides `{key}` from the config file")),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Hidden alphabet size of the synthetic truth.
    #[arg(long, default_value_t = 5)]
    nx: usize,
    /// Observed alphabet size of the synthetic truth.
    #[arg(long, default_value_t = 7)]
    ny: usize,
    #[arg(long, default_value_t = 50_000)]
    n_train: usize,
    #[arg(long, default_value_t = 200)]
    n_probe: usize,
    /// Also train on the paired bucket alone and report the KL ratio.
    #[arg(long)]
    baseline: bool,
    /// Receives config.txt, truth.json, model.json, posterior.json,
    /// trace.csv and summary.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct TrainSummary {
    x_only: usize,
    y_only: usize,
    paired: usize,
    joint_kl: f64,
    initial_posterior_kl: Option<f64>,
    final_posterior_kl: Option<f64>,
    final_probe_logpy: Option<f64>,
    truncated_samples: usize,
    aborted_at: Option<usize>,
    baseline_joint_kl: Option<f64>,
    kl_ratio: Option<f64>,
}

fn load_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &a.config {
        config
            .apply_kv(&read_text(path)?)
            .with_context(|| format!("in {}", path.display()))
            .map_err(|e| usage(format!("{e:#}")))?;
    }
    for (k, v) in &a.overrides.0 {
        config
            .set(k, v)
            .map_err(|e| usage(format!("--{}: {e}", k.replace('_', "-"))))?;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let config = load_config(&a)?;
    let task = SyntheticTask::generate(a.nx, a.ny, a.n_train, a.n_probe, config.gamma, config.seed)
        .map_err(|e| usage(e.to_string()))?;
    let out = run_training(&task.data, &config)?;
    let joint = joint_kl(&task.truth, &out.model)?;
    let baseline_joint_kl = if a.baseline {
        let base = supervised_baseline(&task.data, &config)?;
        Some(joint_kl(&task.truth, &base.model)?)
    } else {
        None
    };
    let summary = TrainSummary {
        x_only: task.data.x_only.len(),
        y_only: task.data.y_only.len(),
        paired: task.data.paired.len(),
        joint_kl: joint,
        initial_posterior_kl: out.initial_posterior_kl(),
        final_posterior_kl: out.final_posterior_kl(),
        final_probe_logpy: out.trace.iter().rev().find_map(|r| r.probe_logpy),
        truncated_samples: out.truncated_samples,
        aborted_at: out.aborted_at,
        baseline_joint_kl,
        kl_ratio: baseline_joint_kl.map(|b| joint / b),
    };

    let dir = &a.out_dir;
    create_dir(dir)?;
    write_text(&dir.join("config.txt"), &config.to_kv())?;
    emit_json(Some(&dir.join("truth.json")), &task.truth)?;
    emit_json(Some(&dir.join("model.json")), &out.model)?;
    emit_json(Some(&dir.join("posterior.json")), &out.posterior)?;
    let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
    for row in &out.trace {
        w.serialize(row)?;
    }
    w.flush()?;
    emit_json(Some(&dir.join("summary.json")), &summary)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    posterior: Option<PathBuf>,
    /// Observation sequences drawn from the truth for the probe metrics.
    #[arg(long, default_value_t = 200)]
    n_probe: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Serialize)]
struct EvalOutput {
    joint_kl: f64,
    probe_logpy_model: f64,
    probe_logpy_truth: f64,
    posterior: Option<PosteriorQuality>,
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    if a.n_probe == 0 {
        return Err(usage("--n-probe must be positive"));
    }
    let truth: TabularJointModel = read_json(&a.truth)?;
    let model: TabularJointModel = read_json(&a.model)?;
    truth.validate()?;
    model.validate()?;
    if (truth.nx, truth.ny) != (model.nx, model.ny) {
        return Err(usage("truth and model alphabets differ"));
    }
    let mut rng = rng::stream(a.seed, "probe");
    let mut probe = Vec::with_capacity(a.n_probe);
    while probe.len() < a.n_probe {
        let s = sample_joint(&truth, 1.0, 256, &mut rng);
        if !s.truncated {
            probe.push(s.y);
        }
    }
    let mean = |m: &TabularJointModel| {
        probe.iter().map(|y| forward_marginal(m, y)).sum::<f64>() / probe.len() as f64
    };
    let posterior = match &a.posterior {
        Some(path) => {
            let q: TabularPosterior = read_json(path)?;
            q.validate()?;
            if (q.nx, q.ny) != (model.nx, model.ny) {
                return Err(usage("posterior and model alphabets differ"));
            }
            Some(posterior_quality(&q, &model, &probe)?)
        }
        None => None,
    };
    let out = EvalOutput {
        joint_kl: joint_kl(&truth, &model)?,
        probe_logpy_model: mean(&model),
        probe_logpy_truth: mean(&truth),
        posterior,
    };
    emit_json(a.out.out.as_deref(), &out)
}
