//! The control loop: per step, KPI collection feeds the forecaster, the
//! policy acts on the assembled state, the environment applies the
//! constrained allocation and reward, and (when learning) the agent stores
//! the transition and updates. Also owns episode management, the simulated
//! KPI channel with file replay, checkpoints and run manifests.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{ReplayBuffer, SacAgent, Transition};
use crate::env::{Environment, ForecastSource, StepRecord, TELEMETRY_HEADER};
use crate::forecast::SpikeAwareLstm;
use crate::metrics::EpisodeReport;
use crate::policy::{Policy, PolicyKind, SacPolicy, StaticSplitPolicy};
use crate::rng::RngHub;
use crate::{Error, Result, Scalar};

/// Run-level settings: traces, episode shape, seeding and artifact paths.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_trace: Option<PathBuf>,
    pub eval_trace: Option<PathBuf>,
    /// Restrict evaluation to one policy (default: all three).
    pub policy: Option<PolicyKind>,
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Evaluation episode length; `None` replays the full held-out profile.
    pub eval_steps: Option<usize>,
    pub seed: u64,
    pub forecaster_checkpoint: Option<PathBuf>,
    pub agent_checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// AI-demand oscillation period in steps; `None` derives half the
    /// profile length (two oscillations per horizon).
    pub ai_period: Option<usize>,
    /// Allocation episodes start from when the policy has no preference.
    pub init_alloc_ran: f64,
    pub init_alloc_ai: f64,
    /// Fine-tune the forecaster every this many environment steps during
    /// agent training (off by default; the forecaster is pre-trained).
    pub lstm_finetune_every: Option<usize>,
    pub lstm_finetune_lr: f64,
    /// Record the KPI stream next to evaluation telemetry.
    pub record_kpi: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_trace: None,
            eval_trace: None,
            policy: None,
            episodes: 1000,
            steps_per_episode: 100,
            eval_steps: None,
            seed: 42,
            forecaster_checkpoint: None,
            agent_checkpoint: None,
            out_dir: None,
            ai_period: None,
            init_alloc_ran: 0.5,
            init_alloc_ai: 0.5,
            lstm_finetune_every: None,
            lstm_finetune_lr: 1e-4,
            record_kpi: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return Err(Error::Config("episodes and steps_per_episode must be >= 1".into()));
        }
        Ok(())
    }
}

/// One KPI sample exposed by the monitoring channel. The proxies are
/// derived indicators: `latency_proxy = d_ran^2` (convex congestion proxy)
/// and `load_proxy = (d_ran + d_ai) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpiMessage {
    pub t: usize,
    pub d_ran: f64,
    pub d_ai: f64,
    pub latency_proxy: f64,
    pub load_proxy: f64,
}

impl KpiMessage {
    pub fn derive(t: usize, d_ran: f64, d_ai: f64) -> Self {
        Self { t, d_ran, d_ai, latency_proxy: d_ran * d_ran, load_proxy: (d_ran + d_ai) / 2.0 }
    }
}

pub const KPI_HEADER: &str = "t,d_ran,d_ai,latency_proxy,load_proxy";

/// Render a KPI stream as line-delimited text (floats round-trip exactly).
pub fn kpi_stream_to_string(msgs: &[KpiMessage]) -> String {
    let mut out = String::from(KPI_HEADER);
    out.push('\n');
    for m in msgs {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            m.t, m.d_ran, m.d_ai, m.latency_proxy, m.load_proxy
        );
    }
    out
}

/// Parse a recorded KPI stream; step indices must be exactly 0, 1, 2, ...
/// (gaps and reordering are rejected).
pub fn parse_kpi_stream(text: &str, path: &Path) -> Result<Vec<KpiMessage>> {
    let mut msgs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line == KPI_HEADER {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(path, idx + 1, "expected 5 fields"));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, idx + 1, "bad step index"))?;
        let f = |j: usize| -> Result<f64> {
            fields[j]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad float {:?}", fields[j])))
        };
        let msg = KpiMessage {
            t,
            d_ran: f(1)?,
            d_ai: f(2)?,
            latency_proxy: f(3)?,
            load_proxy: f(4)?,
        };
        if msg.t != msgs.len() {
            return Err(Error::Replay(format!(
                "{}: step {} out of order (expected {})",
                path.display(),
                msg.t,
                msgs.len()
            )));
        }
        msgs.push(msg);
    }
    if msgs.is_empty() {
        return Err(Error::Replay(format!("{}: empty KPI stream", path.display())));
    }
    Ok(msgs)
}

pub fn load_kpi_stream(path: &Path) -> Result<Vec<KpiMessage>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kpi_stream(&text, path)
}

/// Forecast source backed by the LSTM, with per-position caching (the
/// forecast at a trace position is deterministic while the model is
/// unchanged; `version` invalidates after fine-tuning).
pub struct LstmForecastSource<S: Scalar> {
    model: Rc<RefCell<SpikeAwareLstm<S>>>,
    version: Rc<Cell<u64>>,
    seen_version: u64,
    cache: std::collections::HashMap<usize, (Vec<S>, S)>,
}

impl<S: Scalar> LstmForecastSource<S> {
    pub fn new(model: Rc<RefCell<SpikeAwareLstm<S>>>, version: Rc<Cell<u64>>) -> Self {
        Self { model, version, seen_version: 0, cache: std::collections::HashMap::new() }
    }
}

impl<S: Scalar> ForecastSource<S> for LstmForecastSource<S> {
    fn ran_forecast(
        &mut self,
        history: &[S],
        t_global: usize,
        horizon: usize,
    ) -> Result<(Vec<S>, S)> {
        if self.version.get() != self.seen_version {
            self.cache.clear();
            self.seen_version = self.version.get();
        }
        if let Some(hit) = self.cache.get(&t_global) {
            return Ok(hit.clone());
        }
        let model = self.model.borrow();
        let seq_len = model.config().seq_len;
        let result = if history.len() >= seq_len {
            model.predict_ran(history, horizon)?
        } else {
            // early-episode padding: repeat the earliest observation
            let mut padded = vec![history[0]; seq_len - history.len()];
            padded.extend_from_slice(history);
            model.predict_ran(&padded, horizon)?
        };
        let clamped: Vec<S> =
            result.0.iter().map(|&v| v.max(S::zero()).min(S::one())).collect();
        let out = (clamped, result.1);
        self.cache.insert(t_global, out.clone());
        Ok(out)
    }
}

/// Telemetry plus the KPI stream emitted by one episode.
pub struct EpisodeRun<S: Scalar> {
    pub telemetry: Vec<StepRecord<S>>,
    pub kpi: Vec<KpiMessage>,
    pub total_reward: f64,
}

/// Run one episode of a non-learning policy: KPI collection, forecast and
/// state assembly happen inside the environment; the policy sees only the
/// state.
pub fn run_episode<S: Scalar>(
    env: &mut Environment<S>,
    policy: &mut dyn Policy<S>,
    offset: usize,
    steps: usize,
    default_init: (f64, f64),
) -> Result<EpisodeRun<S>> {
    let init = policy.initial_allocation().unwrap_or(default_init);
    let mut state = env.reset(offset, steps, init)?;
    let v_max = env.config().v_max;
    let mut telemetry = Vec::with_capacity(env.episode_len());
    let mut kpi = Vec::with_capacity(env.episode_len());
    let mut total_reward = 0.0;
    loop {
        let (d_ran, d_ai) = env.current_demands().expect("reset assembles demands");
        kpi.push(KpiMessage::derive(env.local_t(), d_ran.f64(), d_ai.f64()));
        let a = policy.action(&state)?;
        let delta = [a[0] * S::c(v_max), a[1] * S::c(v_max)];
        let out = env.step(delta)?;
        total_reward += out.reward.f64();
        telemetry.push(out.record);
        state = out.state;
        if out.done {
            break;
        }
    }
    Ok(EpisodeRun { telemetry, kpi, total_reward })
}

/// Per-episode training curve entry.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpisodeCurve {
    pub episode: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub mean_critic_loss: f64,
    pub mean_actor_loss: f64,
}

pub fn curves_to_csv(curves: &[EpisodeCurve]) -> String {
    let mut out = String::from("episode,steps,mean_reward,mean_critic_loss,mean_actor_loss\n");
    for c in curves {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.episode, c.steps, c.mean_reward, c.mean_critic_loss, c.mean_actor_loss
        );
    }
    out
}

/// Knobs for [`train_agent`] beyond the agent's own config.
pub struct TrainLoopOptions {
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Mark the final step of each episode as terminal. Leave off for
    /// continuing workloads (time-limited episodes bootstrap across the
    /// boundary); turn on for genuinely finite-horizon tasks.
    pub terminal_truncation: bool,
    /// Random episode start offsets (training); fixed offset 0 otherwise.
    pub random_offsets: bool,
    pub fine_tune: Option<FineTuneOptions>,
}

pub struct FineTuneOptions {
    pub every_steps: usize,
    pub lr: f64,
    pub batch: usize,
}

/// Trailing-mean window (episodes) for checkpoint ranking.
const SMOOTH_WINDOW: usize = 20;

/// Result of a training run. `best` is the highest-mean-reward episode.
pub struct TrainOutcome {
    pub curves: Vec<EpisodeCurve>,
    pub best_episode: usize,
    pub best_mean_reward: f64,
}

/// SAC training over an environment: warmup with uniform random actions,
/// then one stochastic rollout step plus `updates_per_step` gradient steps
/// per environment step. Checkpoints (when `out_dir` is given) are written
/// as `checkpoints/best.ckpt` (highest mean episode reward so far, kept on
/// divergence) and `checkpoints/final.ckpt`.
#[allow(clippy::too_many_arguments)]
pub fn train_agent<S: Scalar>(
    env: &mut Environment<S>,
    agent: &mut SacAgent<S>,
    buffer: &mut ReplayBuffer<S>,
    opts: &TrainLoopOptions,
    hub: &RngHub,
    out_dir: Option<&Path>,
    forecaster: Option<(Rc<RefCell<SpikeAwareLstm<S>>>, Rc<Cell<u64>>)>,
) -> Result<TrainOutcome> {
    let mut offsets_rng = hub.stream("orchestrator.offsets");
    let v_max = env.config().v_max;
    let warmup = agent.config().warmup_steps;
    let updates_per_step = agent.config().updates_per_step;
    let profile_len = env.profile_len();
    let ckpt_dir = out_dir.map(|d| d.join("checkpoints"));
    if let Some(dir) = &ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.clone(), e))?;
    }

    let mut curves = Vec::with_capacity(opts.episodes);
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut total_steps = 0usize;
    let mut tune_counter = 0usize;

    for episode in 0..opts.episodes {
        let offset = if opts.random_offsets && profile_len > opts.steps_per_episode {
            offsets_rng.gen_range(0..=profile_len - opts.steps_per_episode)
        } else {
            0
        };
        let mut state = env.reset(offset, opts.steps_per_episode, (0.5, 0.5))?;
        let mut ep_reward = 0.0;
        let mut ep_closs = 0.0;
        let mut ep_aloss = 0.0;
        let mut ep_updates = 0usize;
        let mut steps = 0usize;
        loop {
            let a = if total_steps < warmup {
                agent.random_action()
            } else {
                agent.act(&state.flatten(), true)?
            };
            let delta = [a[0] * S::c(v_max), a[1] * S::c(v_max)];
            let out = env.step(delta)?;
            let done_flag = out.done && opts.terminal_truncation;
            buffer.store(Transition {
                state: state.flatten(),
                action: a,
                reward: out.reward,
                next_state: out.state.flatten(),
                done: done_flag,
            })?;
            ep_reward += out.reward.f64();
            state = out.state;
            total_steps += 1;
            steps += 1;

            if total_steps >= warmup {
                for _ in 0..updates_per_step {
                    match agent.update(buffer) {
                        Ok(Some(stats)) => {
                            ep_closs += stats.critic_loss;
                            ep_aloss += stats.actor_loss;
                            ep_updates += 1;
                        }
                        Ok(None) => {}
                        Err(e) => {
                            // best.ckpt from earlier episodes stays on disk
                            return Err(e);
                        }
                    }
                }
            }

            if let (Some(tune), Some((model, version))) = (&opts.fine_tune, &forecaster) {
                tune_counter += 1;
                if tune_counter % tune.every_steps == 0 {
                    fine_tune_forecaster(env, model, tune, offset + steps, hub)?;
                    version.set(version.get() + 1);
                }
            }

            if out.done {
                break;
            }
        }
        let mean_reward = ep_reward / steps as f64;
        let denom = ep_updates.max(1) as f64;
        curves.push(EpisodeCurve {
            episode,
            steps,
            mean_reward,
            mean_critic_loss: ep_closs / denom,
            mean_actor_loss: ep_aloss / denom,
        });
        // Episodes start at random offsets, so single-episode reward mostly
        // measures window difficulty; rank checkpoints by a trailing mean.
        let window = SMOOTH_WINDOW.min(curves.len());
        let smoothed = curves[curves.len() - window..]
            .iter()
            .map(|c| c.mean_reward)
            .sum::<f64>()
            / window as f64;
        if curves.len() >= SMOOTH_WINDOW && smoothed > best.1 {
            best = (episode, smoothed);
            if let Some(dir) = &ckpt_dir {
                agent.save(&dir.join("best.ckpt"))?;
            }
        }
    }
    if best.1 == f64::NEG_INFINITY {
        // short runs: fall back to the final parameters
        best = (opts.episodes.saturating_sub(1), f64::NAN);
        if let Some(dir) = &ckpt_dir {
            agent.save(&dir.join("best.ckpt"))?;
        }
    }
    if let Some(dir) = &ckpt_dir {
        agent.save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome { curves, best_episode: best.0, best_mean_reward: best.1 })
}

/// One small gradient step on recent windows of the live demand history.
fn fine_tune_forecaster<S: Scalar>(
    env: &Environment<S>,
    model: &Rc<RefCell<SpikeAwareLstm<S>>>,
    tune: &FineTuneOptions,
    upto: usize,
    hub: &RngHub,
) -> Result<()> {
    let mut model = model.borrow_mut();
    let seq_len = model.config().seq_len;
    let (d_ran, _) = env.demands();
    let upto = upto.min(d_ran.len());
    let need = seq_len + tune.batch + 1;
    if upto < need {
        return Ok(());
    }
    let recent = &d_ran[upto - need..upto];
    let scaler = model.scaler();
    let tau = model.spike_tau();
    let z: Vec<S> = scaler.transform(recent);
    let labels = crate::trace::label_spikes_with_threshold(recent, tau);
    let ds = crate::trace::make_windows(&z, &labels, seq_len)?;
    let opts =
        crate::forecast::TrainOpts { epochs: 1, batch: tune.batch, lr: tune.lr };
    model.train(&ds, opts, hub)?;
    Ok(())
}

/// sha-256 hex digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Hash of a demand profile (both channels, exact bit patterns).
pub fn demand_sha<S: Scalar>(d_ran: &[S], d_ai: &[S]) -> String {
    let mut bytes = Vec::with_capacity((d_ran.len() + d_ai.len()) * 8);
    for v in d_ran.iter().chain(d_ai) {
        bytes.extend_from_slice(&v.f64().to_le_bytes());
    }
    sha256_hex(&bytes)
}

/// Reproducibility record written alongside every run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub trace_sha256: BTreeMap<String, String>,
    pub checkpoint_sha256: BTreeMap<String, String>,
    pub effective_config: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, effective_config: serde_json::Value) -> Self {
        let config_sha256 = sha256_hex(effective_config.to_string().as_bytes());
        Self {
            command: command.to_string(),
            seed,
            config_sha256,
            trace_sha256: BTreeMap::new(),
            checkpoint_sha256: BTreeMap::new(),
            effective_config,
        }
    }

    pub fn add_trace(&mut self, label: &str, sha: String) {
        self.trace_sha256.insert(label.to_string(), sha);
    }

    pub fn add_file(&mut self, label: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.checkpoint_sha256.insert(label.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, json).map_err(|e| Error::io(path, e))
    }
}

/// Everything `evaluate` produces before any files are written.
pub struct Evaluation<S: Scalar> {
    pub reports: Vec<EpisodeReport>,
    pub telemetry: BTreeMap<String, Vec<StepRecord<S>>>,
    pub kpi: BTreeMap<String, Vec<KpiMessage>>,
    pub table: String,
    pub trace_sha256: String,
}

/// Compare policies on one demand profile. Every policy consumes the
/// identical demand sequence (hash recorded); the SAC policy runs its
/// deterministic head.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policies<S: Scalar>(
    env_cfg: &crate::env::EnvConfig,
    d_ran: Vec<S>,
    d_ai: Vec<S>,
    ai_period: usize,
    model: Rc<RefCell<SpikeAwareLstm<S>>>,
    agent: Option<&mut SacAgent<S>>,
    policies: &[PolicyKind],
    eval_steps: usize,
    default_init: (f64, f64),
) -> Result<Evaluation<S>> {
    let trace_sha = demand_sha(&d_ran, &d_ai);
    let mut reports = Vec::new();
    let mut telemetry = BTreeMap::new();
    let mut kpi = BTreeMap::new();
    let spike_tau = model.borrow().spike_tau();
    let mut agent = agent;
    for kind in policies {
        let source = Box::new(LstmForecastSource::new(
            Rc::clone(&model),
            Rc::new(Cell::new(0)),
        ));
        let mut env =
            Environment::new(env_cfg.clone(), d_ran.clone(), d_ai.clone(), ai_period, source)?;
        let run = match kind {
            PolicyKind::Sac => {
                let agent = agent
                    .as_deref_mut()
                    .ok_or_else(|| Error::Missing("sac policy requires a checkpoint".into()))?;
                let mut policy = SacPolicy::new(agent, false);
                run_episode(&mut env, &mut policy, 0, eval_steps, default_init)?
            }
            PolicyKind::Balanced => {
                let mut policy = StaticSplitPolicy::balanced(env_cfg.v_max);
                run_episode(&mut env, &mut policy, 0, eval_steps, default_init)?
            }
            PolicyKind::RanPriority => {
                let mut policy = StaticSplitPolicy::ran_priority(env_cfg.v_max);
                run_episode(&mut env, &mut policy, 0, eval_steps, default_init)?
            }
        };
        reports.push(crate::metrics::episode_report(
            kind.name(),
            &run.telemetry,
            env_cfg.r_max,
            spike_tau,
        )?);
        telemetry.insert(kind.name().to_string(), run.telemetry);
        kpi.insert(kind.name().to_string(), run.kpi);
    }
    let reports = crate::metrics::order_reports(reports);
    let table = crate::metrics::comparison_table(&reports);
    Ok(Evaluation { reports, telemetry, kpi, table, trace_sha256: trace_sha })
}

/// Write telemetry to `<dir>/telemetry_<policy>.csv`.
pub fn write_telemetry<S: Scalar>(
    dir: &Path,
    policy: &str,
    telemetry: &[StepRecord<S>],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("telemetry_{policy}.csv"));
    let mut text = String::from(TELEMETRY_HEADER);
    text.push('\n');
    for r in telemetry {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(path.clone(), e))?;
    Ok(path)
}

pub fn read_telemetry<S: Scalar>(path: &Path) -> Result<Vec<StepRecord<S>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if !line.trim().is_empty() {
            rows.push(StepRecord::parse_csv_row(line)?);
        }
    }
    Ok(rows)
}
