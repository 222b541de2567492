//! Command-line front end: configuration resolution, the four workflows
//! (synth, train-forecaster, train-agent, evaluate) and report emission.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.

use std::cell::{Cell, RefCell};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::OnceLock;

use clap::{Parser, Subcommand};

use crate::agent::{ReplayBuffer, SacAgent};
use crate::config::{default_config_toml, ConfigFile};
use crate::env::Environment;
use crate::forecast::{self, SpikeAwareLstm, TrainOpts};
use crate::orchestrator::{
    self, curves_to_csv, evaluate_policies, kpi_stream_to_string, load_kpi_stream, train_agent,
    FineTuneOptions, LstmForecastSource, Manifest, TrainLoopOptions,
};
use crate::policy::PolicyKind;
use crate::rng::RngHub;
use crate::trace::{self, SynthKind, SynthOptions};
use crate::{Error, Real, Result};

fn defaults_help() -> &'static str {
    static HELP: OnceLock<String> = OnceLock::new();
    HELP.get_or_init(|| {
        format!(
            "CONFIG KEYS AND DEFAULTS (TOML; any key may be omitted):\n\n{}",
            default_config_toml()
        )
    })
}

#[derive(Parser)]
#[command(
    name = "airan-sim",
    version,
    about = "Trace-driven simulator for forecast-aware orchestration of shared \
             RAN/AI compute",
    after_help = defaults_help(),
    after_long_help = defaults_help()
)]
pub struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic RNTI trace file.
    Synth {
        /// Trace family: event-spike | diurnal | flat.
        #[arg(long)]
        kind: String,
        /// Number of rows (one row per control step).
        #[arg(long, default_value_t = 1200)]
        steps: usize,
        /// Oscillation period for the diurnal kind.
        #[arg(long)]
        period: Option<usize>,
        /// Output trace file.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit the demand forecaster on a training trace, evaluate on a test
    /// trace, and write a checkpoint.
    TrainForecaster {
        /// Training-period trace file.
        #[arg(long)]
        train: PathBuf,
        /// Held-out evaluation trace file.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Output directory (checkpoint, evaluation report, manifest).
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train the SAC agent against a trace using a pre-trained forecaster.
    TrainAgent {
        /// Training trace file (falls back to [run].train_trace).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Forecaster checkpoint (falls back to [run].forecaster_checkpoint).
        #[arg(long)]
        forecaster: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Steps per training episode.
        #[arg(long)]
        steps: Option<usize>,
        /// AI-demand oscillation period in steps.
        #[arg(long)]
        ai_period: Option<usize>,
        /// Output directory (checkpoints, curves, manifest).
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compare policies on a held-out trace with a trained agent.
    Evaluate {
        /// Held-out trace file (falls back to [run].eval_trace).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        forecaster: Option<PathBuf>,
        /// Agent checkpoint; required unless --policy excludes sac.
        #[arg(long)]
        agent: Option<PathBuf>,
        /// Restrict to one policy: sac | balanced | ran_priority.
        #[arg(long)]
        policy: Option<String>,
        /// Evaluation episode length (default: the full profile).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        ai_period: Option<usize>,
        /// Record the per-step KPI stream next to the telemetry.
        #[arg(long)]
        record_kpi: bool,
        /// Drive the run from a recorded KPI stream instead of the trace.
        #[arg(long)]
        replay_kpi: Option<PathBuf>,
        /// Output directory (telemetry, comparison table, manifest).
        #[arg(long, short)]
        out: PathBuf,
    },
}

/// Parse argv and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with exit 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::Missing(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    cfg.validate()?;
    match cli.command {
        Command::Synth { kind, steps, period, out } => cmd_synth(cfg, kind, steps, period, out),
        Command::TrainForecaster { train, test, epochs, batch, lr, out } => {
            if let Some(e) = epochs {
                cfg.forecaster.epochs = e;
            }
            if let Some(b) = batch {
                cfg.forecaster.batch = b;
            }
            if let Some(l) = lr {
                cfg.forecaster.lr = l;
            }
            cmd_train_forecaster(cfg, train, test, out)
        }
        Command::TrainAgent { trace, forecaster, episodes, steps, ai_period, out } => {
            if let Some(t) = trace {
                cfg.run.train_trace = Some(t);
            }
            if let Some(f) = forecaster {
                cfg.run.forecaster_checkpoint = Some(f);
            }
            if let Some(e) = episodes {
                cfg.run.episodes = e;
            }
            if let Some(s) = steps {
                cfg.run.steps_per_episode = s;
            }
            if let Some(p) = ai_period {
                cfg.run.ai_period = Some(p);
            }
            cmd_train_agent(cfg, out)
        }
        Command::Evaluate {
            trace,
            forecaster,
            agent,
            policy,
            steps,
            ai_period,
            record_kpi,
            replay_kpi,
            out,
        } => {
            if let Some(t) = trace {
                cfg.run.eval_trace = Some(t);
            }
            if let Some(f) = forecaster {
                cfg.run.forecaster_checkpoint = Some(f);
            }
            if let Some(a) = agent {
                cfg.run.agent_checkpoint = Some(a);
            }
            if let Some(p) = policy {
                cfg.run.policy = Some(PolicyKind::parse(&p)?);
            }
            if let Some(s) = steps {
                cfg.run.eval_steps = Some(s);
            }
            if let Some(p) = ai_period {
                cfg.run.ai_period = Some(p);
            }
            if record_kpi {
                cfg.run.record_kpi = true;
            }
            cmd_evaluate(cfg, replay_kpi, out)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_text(
        path,
        &serde_json::to_string_pretty(value)
            .map_err(|e| Error::Config(format!("serialization: {e}")))?,
    )
}

fn cmd_synth(
    cfg: ConfigFile,
    kind: String,
    steps: usize,
    period: Option<usize>,
    out: PathBuf,
) -> Result<()> {
    let kind = SynthKind::parse(&kind)?;
    let mut opts = SynthOptions::default();
    if let Some(p) = period {
        opts.period = p;
    }
    let series = trace::synth_trace(kind, steps, cfg.run.seed, opts);
    write_text(&out, &trace::trace_to_string(&series))?;

    let mut manifest = Manifest::new("synth", cfg.run.seed, cfg.to_json());
    manifest.add_file("trace", &out)?;
    let manifest_dir = out.parent().filter(|p| !p.as_os_str().is_empty());
    match manifest_dir {
        Some(dir) => manifest.write(dir)?,
        None => manifest.write(Path::new("."))?,
    }
    println!("wrote {} rows to {}", series.len(), out.display());
    Ok(())
}

fn cmd_train_forecaster(
    cfg: ConfigFile,
    train: PathBuf,
    test: PathBuf,
    out: PathBuf,
) -> Result<()> {
    // Validate both inputs before any training starts.
    let train_series = trace::load_trace(&train)?;
    let test_series = trace::load_trace(&test)?;
    let hub = RngHub::new(cfg.run.seed);

    let prepared = forecast::prepare::<Real>(&train_series, &test_series, &cfg.forecaster)?;
    let mut model = SpikeAwareLstm::<Real>::new(cfg.forecaster.clone(), &hub);
    model.set_scaler(prepared.scaler);
    model.set_spike_tau(prepared.spike_tau);

    let opts = TrainOpts {
        epochs: cfg.forecaster.epochs,
        batch: cfg.forecaster.batch,
        lr: cfg.forecaster.lr,
    };
    let history = model.train(&prepared.train, opts, &hub)?;
    let report = model.evaluate(&prepared.test)?;

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ckpt = out.join("forecaster.ckpt");
    model.save(&ckpt)?;

    let mut loss_csv = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        loss_csv.push_str(&format!("{e},{l}\n"));
    }
    write_text(&out.join("training_loss.csv"), &loss_csv)?;

    // per-sample evaluation rows for inspection
    let mut eval_csv = String::from("i,actual,predicted,spike_label,spike_prob\n");
    {
        let b = prepared.test.len();
        let mut wvals = Vec::with_capacity(b * prepared.test.seq_len);
        for input in &prepared.test.inputs {
            wvals.extend_from_slice(input);
        }
        let windows = crate::nn::Tensor::new(vec![b, prepared.test.seq_len], wvals)?;
        let (reg, prob) = model.forward(&windows)?;
        let scaler = model.scaler();
        for i in 0..b {
            eval_csv.push_str(&format!(
                "{i},{},{},{},{}\n",
                scaler.inverse_one(prepared.test.targets[i]),
                scaler.inverse_one(reg[i]),
                prepared.test.spike_labels[i],
                prob[i]
            ));
        }
    }
    write_text(&out.join("forecast_eval.csv"), &eval_csv)?;

    let summary = serde_json::json!({
        "mse": report.mse,
        "persistence_mse": report.persistence_mse,
        "spike_precision": report.spike_precision,
        "spike_recall": report.spike_recall,
        "spike_f1": report.spike_f1,
        "samples": report.samples,
        "spike_tau": model.spike_tau(),
        "scaler_mean": model.scaler().mean,
        "scaler_std": model.scaler().std,
        "final_train_loss": history.last(),
        "epochs": cfg.forecaster.epochs,
    });
    write_json(&out.join("summary.json"), &summary)?;

    let mut manifest = Manifest::new("train-forecaster", cfg.run.seed, cfg.to_json());
    manifest.add_trace("train", orchestrator::demand_sha(&prepared.train_demand, &[]));
    manifest.add_trace("test", orchestrator::demand_sha(&prepared.test_demand, &[]));
    manifest.add_file("forecaster", &ckpt)?;
    manifest.write(&out)?;

    println!(
        "mse {:.6} (persistence {:.6})  spike precision {:.3} recall {:.3} f1 {:.3}",
        report.mse,
        report.persistence_mse,
        report.spike_precision,
        report.spike_recall,
        report.spike_f1
    );
    Ok(())
}

fn load_forecaster(cfg: &ConfigFile) -> Result<SpikeAwareLstm<Real>> {
    let path = cfg
        .run
        .forecaster_checkpoint
        .as_ref()
        .ok_or_else(|| Error::Missing("forecaster checkpoint (--forecaster)".into()))?;
    SpikeAwareLstm::load(path, cfg.forecaster.clone())
}

fn cmd_train_agent(cfg: ConfigFile, out: PathBuf) -> Result<()> {
    let trace_path = cfg
        .run
        .train_trace
        .clone()
        .ok_or_else(|| Error::Missing("training trace (--trace)".into()))?;
    let model = load_forecaster(&cfg)?;
    let series = trace::load_trace(&trace_path)?;
    let d_ran: Vec<Real> = trace::normalize_ran_demand(&series, cfg.forecaster.norm_eps)?;
    let trace_sha = orchestrator::demand_sha(&d_ran, &[]);

    let hub = RngHub::new(cfg.run.seed);
    let model = Rc::new(RefCell::new(model));
    let version = Rc::new(Cell::new(0u64));
    let source =
        Box::new(LstmForecastSource::new(Rc::clone(&model), Rc::clone(&version)));
    let mut env =
        Environment::from_ran_profile(cfg.env.clone(), d_ran, cfg.run.ai_period, source)?;

    let state_dim = crate::env::OrchestratorState::<Real>::dim(cfg.env.horizon);
    let mut agent = match &cfg.run.agent_checkpoint {
        Some(path) => SacAgent::load(path, cfg.sac.clone(), &hub)?,
        None => SacAgent::new(state_dim, cfg.sac.clone(), &hub)?,
    };
    let mut buffer = ReplayBuffer::new(cfg.sac.buffer_capacity);

    let opts = TrainLoopOptions {
        episodes: cfg.run.episodes,
        steps_per_episode: cfg.run.steps_per_episode,
        terminal_truncation: false,
        random_offsets: true,
        fine_tune: cfg.run.lstm_finetune_every.map(|every| FineTuneOptions {
            every_steps: every,
            lr: cfg.run.lstm_finetune_lr,
            batch: 16,
        }),
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let outcome = train_agent(
        &mut env,
        &mut agent,
        &mut buffer,
        &opts,
        &hub,
        Some(&out),
        Some((Rc::clone(&model), version)),
    )?;
    write_text(&out.join("curves.csv"), &curves_to_csv(&outcome.curves))?;

    let mut manifest = Manifest::new("train-agent", cfg.run.seed, cfg.to_json());
    manifest.add_trace("train", trace_sha);
    manifest.add_file("agent_best", &out.join("checkpoints/best.ckpt"))?;
    manifest.add_file("agent_final", &out.join("checkpoints/final.ckpt"))?;
    if let Some(f) = &cfg.run.forecaster_checkpoint {
        manifest.add_file("forecaster", f)?;
    }
    manifest.write(&out)?;

    println!(
        "trained {} episodes; best mean reward {:.4} at episode {}",
        outcome.curves.len(),
        outcome.best_mean_reward,
        outcome.best_episode
    );
    Ok(())
}

fn cmd_evaluate(cfg: ConfigFile, replay_kpi: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let model = load_forecaster(&cfg)?;
    let policies: Vec<PolicyKind> = match cfg.run.policy {
        Some(kind) => vec![kind],
        None => PolicyKind::report_order().to_vec(),
    };

    // Demands come from the replayed KPI stream when given, otherwise from
    // the trace file plus the analytic AI channel.
    let (d_ran, d_ai, ai_period, trace_label): (Vec<Real>, Vec<Real>, usize, String) =
        match &replay_kpi {
            Some(path) => {
                let msgs = load_kpi_stream(path)?;
                let d_ran = msgs.iter().map(|m| m.d_ran).collect();
                let d_ai = msgs.iter().map(|m| m.d_ai).collect();
                let period = cfg.run.ai_period.unwrap_or_else(|| (msgs.len() / 2).max(1));
                (d_ran, d_ai, period, format!("replay:{}", path.display()))
            }
            None => {
                let trace_path = cfg
                    .run
                    .eval_trace
                    .clone()
                    .ok_or_else(|| Error::Missing("evaluation trace (--trace)".into()))?;
                let series = trace::load_trace(&trace_path)?;
                let d_ran: Vec<Real> =
                    trace::normalize_ran_demand(&series, cfg.forecaster.norm_eps)?;
                let n = d_ran.len();
                let period = cfg.run.ai_period.unwrap_or_else(|| (n / 2).max(1));
                let d_ai = (0..n).map(|t| trace::ai_demand_at(t, 2 * period)).collect();
                (d_ran, d_ai, period, trace_path.display().to_string())
            }
        };

    let hub = RngHub::new(cfg.run.seed);
    let mut agent = if policies.contains(&PolicyKind::Sac) {
        let path = cfg
            .run
            .agent_checkpoint
            .as_ref()
            .ok_or_else(|| Error::Missing("agent checkpoint (--agent)".into()))?;
        Some(SacAgent::<Real>::load(path, cfg.sac.clone(), &hub)?)
    } else {
        None
    };

    let eval_steps = cfg.run.eval_steps.unwrap_or(d_ran.len());
    let model = Rc::new(RefCell::new(model));
    let evaluation = evaluate_policies(
        &cfg.env,
        d_ran,
        d_ai,
        ai_period,
        model,
        agent.as_mut(),
        &policies,
        eval_steps,
        (cfg.run.init_alloc_ran, cfg.run.init_alloc_ai),
    )?;

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for (policy, telemetry) in &evaluation.telemetry {
        orchestrator::write_telemetry(&out, policy, telemetry)?;
    }
    if cfg.run.record_kpi {
        for (policy, kpi) in &evaluation.kpi {
            write_text(&out.join(format!("kpi_{policy}.csv")), &kpi_stream_to_string(kpi))?;
        }
    }
    write_text(&out.join("comparison.txt"), &evaluation.table)?;
    let report_json = serde_json::json!({
        "trace": trace_label,
        "trace_sha256": evaluation.trace_sha256,
        "eval_steps": eval_steps,
        "reports": evaluation.reports,
    });
    write_json(&out.join("report.json"), &report_json)?;

    let mut manifest = Manifest::new("evaluate", cfg.run.seed, cfg.to_json());
    manifest.add_trace(&trace_label, evaluation.trace_sha256.clone());
    if let Some(f) = &cfg.run.forecaster_checkpoint {
        manifest.add_file("forecaster", f)?;
    }
    if let Some(a) = &cfg.run.agent_checkpoint {
        manifest.add_file("agent", a)?;
    }
    manifest.write(&out)?;

    print!("{}", evaluation.table);
    Ok(())
}
