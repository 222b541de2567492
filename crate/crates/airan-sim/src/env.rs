//! The coexistence environment: demand presentation, rate-limited and
//! MIG-quantized allocation, completion accounting, contention and
//! freed-resource prediction, state assembly and the proactive reward.
//!
//! All resource quantities are fractions of total capacity; integer MIG
//! quanta appear only at actuation and in telemetry. The physical grant can
//! never exceed capacity even when borrowing widens the pre-quantization
//! target.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::forecast::ForecastBundle;
use crate::trace::ai_demand_at;
use crate::{Error, Result, Scalar};

pub const RAN: usize = 0;
pub const AI: usize = 1;

/// Environment parameters.
///
/// Capacity is 21 MIG quanta. Reward shape: `kappa = 2.5`, future discount
/// `beta_fut = 0.9`; the remaining coefficients (`mu`, `lambda_pen`, `eta`),
/// the per-step rate limit, borrowing schedule and service lifetimes are
/// exposed knobs with the defaults below.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Capacity in MIG quanta.
    pub r_max: u32,
    /// Max allocation change per service per step (fraction of capacity).
    pub v_max: f64,
    pub p_ran: f64,
    pub p_ai: f64,
    /// Anticipated-QoS weight.
    pub mu: f64,
    /// Overprovision penalty coefficient.
    pub lambda_pen: f64,
    /// Contention penalty coefficient.
    pub eta: f64,
    /// Penalty curvature (> 1).
    pub kappa: f64,
    /// Future contention discount.
    pub beta_fut: f64,
    /// Borrowing coefficient per lookahead step delta is
    /// `alpha_borrow_base^delta`.
    pub alpha_borrow_base: f64,
    /// Cap on total borrowed headroom (fraction of capacity).
    pub borrow_cap: f64,
    /// Forecast horizon H.
    pub horizon: usize,
    /// Mean task lifetimes (steps) behind the completion-probability model
    /// `P_c(x, delta) = 1 - exp(-delta / lifetime_x)`.
    pub mean_lifetime_ran: f64,
    pub mean_lifetime_ai: f64,
    /// Below this demand the QoS ratios switch to their vacuous-demand
    /// definitions.
    pub demand_eps: f64,
    /// Weight completion QoS by priority (the executable control-loop
    /// form); `false` restores the unweighted completion ratio.
    pub priority_weighted_qos: bool,
    /// Use the previous total allocation instead of current total demand as
    /// the instantaneous term of the contention factor.
    pub contention_on_allocation: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            r_max: 21,
            v_max: 0.1,
            p_ran: 1.0,
            p_ai: 0.5,
            mu: 0.5,
            lambda_pen: 1.0,
            eta: 0.5,
            kappa: 2.5,
            beta_fut: 0.9,
            alpha_borrow_base: 0.5,
            borrow_cap: 0.2,
            horizon: 3,
            mean_lifetime_ran: 2.0,
            mean_lifetime_ai: 10.0,
            demand_eps: 1e-6,
            priority_weighted_qos: true,
            contention_on_allocation: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.r_max < 1 {
            return bad(format!("r_max {} must be >= 1", self.r_max));
        }
        if !(self.v_max > 0.0 && self.v_max <= 1.0) {
            return bad(format!("v_max {} outside (0, 1]", self.v_max));
        }
        if !(0.0..=1.0).contains(&self.p_ai)
            || !(0.0..=1.0).contains(&self.p_ran)
            || self.p_ran < self.p_ai
        {
            return bad(format!(
                "priorities must satisfy 0 <= p_ai <= p_ran <= 1, got ({}, {})",
                self.p_ran, self.p_ai
            ));
        }
        if self.kappa <= 1.0 {
            return bad(format!("kappa {} must exceed 1", self.kappa));
        }
        if !(self.beta_fut > 0.0 && self.beta_fut < 1.0) {
            return bad(format!("beta_fut {} outside (0, 1)", self.beta_fut));
        }
        if !(0.0..=1.0).contains(&self.alpha_borrow_base) {
            return bad(format!("alpha_borrow_base {} outside [0, 1]", self.alpha_borrow_base));
        }
        if self.borrow_cap < 0.0 {
            return bad(format!("borrow_cap {} must be nonnegative", self.borrow_cap));
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if self.mean_lifetime_ran <= 0.0 || self.mean_lifetime_ai <= 0.0 {
            return bad("mean task lifetimes must be positive".into());
        }
        Ok(())
    }

    pub fn quantum(&self) -> f64 {
        1.0 / self.r_max as f64
    }

    pub fn priorities<S: Scalar>(&self) -> [S; 2] {
        [S::c(self.p_ran), S::c(self.p_ai)]
    }

    fn lifetime(&self, service: usize) -> f64 {
        if service == RAN {
            self.mean_lifetime_ran
        } else {
            self.mean_lifetime_ai
        }
    }
}

/// The agent's observation: current demands, the 2xH forecast block and the
/// previous allocation, flattened as
/// `(d_ran, d_ai, dhat_ran(+1..+H), dhat_ai(+1..+H), r_prev_ran, r_prev_ai)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrchestratorState<S: Scalar> {
    pub d_ran: S,
    pub d_ai: S,
    pub d_hat_ran: Vec<S>,
    pub d_hat_ai: Vec<S>,
    pub r_prev_ran: S,
    pub r_prev_ai: S,
}

impl<S: Scalar> OrchestratorState<S> {
    pub fn new(
        d_ran: S,
        d_ai: S,
        d_hat_ran: Vec<S>,
        d_hat_ai: Vec<S>,
        r_prev: [S; 2],
    ) -> Result<Self> {
        if d_hat_ran.len() != d_hat_ai.len() {
            return Err(Error::Shape("forecast blocks differ in length".into()));
        }
        let unit = |v: S| (S::zero()..=S::one()).contains(&v);
        let all_ok = unit(d_ran)
            && unit(d_ai)
            && unit(r_prev[0])
            && unit(r_prev[1])
            && d_hat_ran.iter().all(|&v| unit(v))
            && d_hat_ai.iter().all(|&v| unit(v));
        if !all_ok {
            return Err(Error::Config("state entries must lie in [0, 1]".into()));
        }
        Ok(Self { d_ran, d_ai, d_hat_ran, d_hat_ai, r_prev_ran: r_prev[0], r_prev_ai: r_prev[1] })
    }

    pub fn dim(horizon: usize) -> usize {
        2 + 2 * horizon + 2
    }

    pub fn horizon(&self) -> usize {
        self.d_hat_ran.len()
    }

    pub fn flatten(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(Self::dim(self.horizon()));
        v.push(self.d_ran);
        v.push(self.d_ai);
        v.extend_from_slice(&self.d_hat_ran);
        v.extend_from_slice(&self.d_hat_ai);
        v.push(self.r_prev_ran);
        v.push(self.r_prev_ai);
        v
    }

    pub fn decode(flat: &[S], horizon: usize) -> Result<Self> {
        if flat.len() != Self::dim(horizon) {
            return Err(Error::Shape(format!(
                "state of length {} cannot decode with horizon {horizon}",
                flat.len()
            )));
        }
        Ok(Self {
            d_ran: flat[0],
            d_ai: flat[1],
            d_hat_ran: flat[2..2 + horizon].to_vec(),
            d_hat_ai: flat[2 + horizon..2 + 2 * horizon].to_vec(),
            r_prev_ran: flat[2 + 2 * horizon],
            r_prev_ai: flat[2 + 2 * horizon + 1],
        })
    }
}

/// Completion probability of service `x`'s running work by `delta` steps
/// ahead under the exponential-lifetime model.
pub fn completion_probability(cfg: &EnvConfig, service: usize, delta: usize) -> f64 {
    1.0 - (-(delta as f64) / cfg.lifetime(service)).exp()
}

/// Resources expected to free up `delta` steps ahead:
/// `sum_x P_c(x, delta) * r_x(t-1)`.
pub fn predicted_free<S: Scalar>(r_prev: [S; 2], cfg: &EnvConfig, delta: usize) -> S {
    let mut total = S::zero();
    for x in [RAN, AI] {
        total += S::c(completion_probability(cfg, x, delta)) * r_prev[x];
    }
    total
}

/// Pre-quantization allocation budget: capacity plus discounted anticipated
/// frees, with total borrowing capped.
pub fn total_budget<S: Scalar>(r_prev: [S; 2], cfg: &EnvConfig) -> S {
    let mut borrow = 0.0;
    for delta in 1..=cfg.horizon {
        let alpha = cfg.alpha_borrow_base.powi(delta as i32);
        borrow += alpha * predicted_free(r_prev, cfg, delta).f64();
    }
    S::c(1.0 + borrow.min(cfg.borrow_cap))
}

/// Discounted current-plus-forecast total demand relative to capacity:
/// `Delta_total(t) + sum_delta beta^delta * Delta_total(t+delta)` with all
/// demands already expressed as capacity fractions.
pub fn contention_factor<S: Scalar>(d_total_now: S, d_total_forecasts: &[S], beta: f64) -> S {
    let mut c = d_total_now.f64();
    for (i, d) in d_total_forecasts.iter().enumerate() {
        c += beta.powi(i as i32 + 1) * d.f64();
    }
    S::c(c)
}

/// Scarcity resolution: scale requests in proportion to priority weights,
/// then cap any service above its own request and grant the remainder to
/// the other service (up to its request).
pub fn scale_by_priority<S: Scalar>(r_temp: [S; 2], p: [S; 2], r_total: S) -> [S; 2] {
    let w = [p[0] * r_temp[0], p[1] * r_temp[1]];
    let ws = w[0] + w[1];
    if ws <= S::zero() {
        return [S::zero(), S::zero()];
    }
    let mut r = [r_total * w[0] / ws, r_total * w[1] / ws];
    for x in [RAN, AI] {
        let other = 1 - x;
        if r[x] > r_temp[x] {
            r[x] = r_temp[x];
            r[other] = r_temp[other].min(r_total - r[x]);
        }
    }
    r
}

/// Result of one constrained allocation: pre-quantization targets, integer
/// grants and granted fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation<S: Scalar> {
    pub r_target: [S; 2],
    pub mig: [u32; 2],
    pub r: [S; 2],
}

/// Constrained allocation pipeline: clip the requested deltas to the rate
/// limit, clamp targets to `[0, 1]`, resolve scarcity against the borrowed
/// budget, then floor-quantize to MIG quanta under the hard capacity cap
/// (excess quanta are stripped from the lower-priority service first).
pub fn apply_action<S: Scalar>(
    r_prev: [S; 2],
    delta_request: [S; 2],
    cfg: &EnvConfig,
) -> Allocation<S> {
    let vmax = S::c(cfg.v_max);
    let mut r_temp = [S::zero(); 2];
    for x in [RAN, AI] {
        let dr = if delta_request[x].is_finite() { delta_request[x] } else { S::zero() };
        let dr = dr.max(-vmax).min(vmax);
        r_temp[x] = (r_prev[x] + dr).max(S::zero()).min(S::one());
    }

    let r_total = total_budget(r_prev, cfg);
    let r_target = if r_temp[0] + r_temp[1] > r_total {
        scale_by_priority(r_temp, cfg.priorities(), r_total)
    } else {
        r_temp
    };

    // Floor quantization; the epsilon absorbs representation error in
    // values that are exact multiples of a quantum.
    let rm = cfg.r_max as f64;
    let mut mig = [0u32; 2];
    for x in [RAN, AI] {
        mig[x] = ((r_target[x].f64() * rm + 1e-9).floor() as u32).min(cfg.r_max);
    }
    if mig[0] + mig[1] > cfg.r_max {
        let mut excess = mig[0] + mig[1] - cfg.r_max;
        let take = excess.min(mig[AI]);
        mig[AI] -= take;
        excess -= take;
        mig[RAN] -= excess.min(mig[RAN]);
    }
    let r = [S::c(mig[0] as f64 / rm), S::c(mig[1] as f64 / rm)];
    Allocation { r_target, mig, r }
}

/// Completed fraction: demand served up to the granted allocation.
pub fn completed<S: Scalar>(r: S, d: S) -> S {
    r.min(d)
}

/// Reward components, kept separately for telemetry and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParts<S: Scalar> {
    pub qos: S,
    pub penalty: S,
    pub contention: S,
    pub total: S,
}

/// Overprovision penalty: zero exactly on the soft capacity boundary,
/// positive and increasing beyond it, negative (a bonus) below it.
pub fn overprovision_penalty<S: Scalar>(r_alloc: S, r_hat_alloc: S, cfg: &EnvConfig) -> S {
    let x = r_alloc.f64() + cfg.beta_fut * r_hat_alloc.f64();
    S::c(cfg.lambda_pen * (x.powf(cfg.kappa) - 1.0))
}

/// Proactive reward for one step.
///
/// `reward = sum_x [ p_x * C_x/d_x + mu * min(p_x r_x, dhat_x(t+1))/d_x ]
///           - lambda * ((R_alloc + beta * R_hat_alloc)^kappa - 1)
///           - eta * C_pred`
///
/// with `R_hat_alloc = sum_x dhat_x(t+1)`. When a demand is vacuous
/// (`d < demand_eps`) its completion term is 1 only if backed by a nonzero
/// allocation, and its anticipation term is 0.
pub fn reward<S: Scalar>(
    c: [S; 2],
    r: [S; 2],
    d: [S; 2],
    d_hat1: [S; 2],
    c_pred: S,
    cfg: &EnvConfig,
) -> RewardParts<S> {
    let eps = S::c(cfg.demand_eps);
    let p = cfg.priorities::<S>();
    let mut qos = S::zero();
    for x in [RAN, AI] {
        let completion_ratio = if d[x] >= eps {
            c[x] / d[x]
        } else if r[x] >= eps {
            S::one()
        } else {
            S::zero()
        };
        let weighted =
            if cfg.priority_weighted_qos { p[x] * completion_ratio } else { completion_ratio };
        let anticipation = if d[x] >= eps {
            S::c(cfg.mu) * (p[x] * r[x]).min(d_hat1[x]) / d[x]
        } else {
            S::zero()
        };
        qos += weighted + anticipation;
    }
    let r_alloc = r[0] + r[1];
    let r_hat_alloc = d_hat1[0] + d_hat1[1];
    let penalty = overprovision_penalty(r_alloc, r_hat_alloc, cfg);
    let contention = S::c(cfg.eta) * c_pred;
    RewardParts { qos, penalty, contention, total: qos - penalty - contention }
}

/// Per-step telemetry row.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<S: Scalar> {
    pub t: usize,
    pub d_ran: S,
    pub d_ai: S,
    pub dhat_ran1: S,
    pub dhat_ai1: S,
    pub r_ran: S,
    pub r_ai: S,
    pub mig_ran: u32,
    pub mig_ai: u32,
    pub c_ran: S,
    pub c_ai: S,
    pub reward: S,
    pub c_pred: S,
    pub spike_prob: S,
    pub w: S,
}

pub const TELEMETRY_HEADER: &str =
    "t,d_ran,d_ai,dhat_ran_1,dhat_ai_1,r_ran,r_ai,mig_ran,mig_ai,c_ran,c_ai,reward,c_pred,spike_prob,w";

impl<S: Scalar> StepRecord<S> {
    pub fn to_csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.d_ran.f64(),
            self.d_ai.f64(),
            self.dhat_ran1.f64(),
            self.dhat_ai1.f64(),
            self.r_ran.f64(),
            self.r_ai.f64(),
            self.mig_ran,
            self.mig_ai,
            self.c_ran.f64(),
            self.c_ai.f64(),
            self.reward.f64(),
            self.c_pred.f64(),
            self.spike_prob.f64(),
            self.w.f64()
        );
        s
    }

    pub fn parse_csv_row(line: &str) -> Result<StepRecord<S>> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(Error::Config(format!("telemetry row has {} fields", fields.len())));
        }
        let f = |i: usize| -> Result<S> {
            fields[i]
                .parse::<f64>()
                .map(S::c)
                .map_err(|_| Error::Config(format!("bad telemetry field {:?}", fields[i])))
        };
        let u = |i: usize| -> Result<u32> {
            fields[i]
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("bad telemetry field {:?}", fields[i])))
        };
        Ok(StepRecord {
            t: fields[0]
                .parse()
                .map_err(|_| Error::Config(format!("bad telemetry t {:?}", fields[0])))?,
            d_ran: f(1)?,
            d_ai: f(2)?,
            dhat_ran1: f(3)?,
            dhat_ai1: f(4)?,
            r_ran: f(5)?,
            r_ai: f(6)?,
            mig_ran: u(7)?,
            mig_ai: u(8)?,
            c_ran: f(9)?,
            c_ai: f(10)?,
            reward: f(11)?,
            c_pred: f(12)?,
            spike_prob: f(13)?,
            w: f(14)?,
        })
    }
}

/// Supplies the RAN-channel forecast (and internal spike probability) from
/// the demand history up to the current step. The AI channel is analytic
/// and assembled by the environment.
pub trait ForecastSource<S: Scalar> {
    fn ran_forecast(&mut self, history: &[S], t_global: usize, horizon: usize)
        -> Result<(Vec<S>, S)>;
}

/// Oracle source that reads the true future of the profile (clamping at the
/// end). Spike probability is a constant 0.5 (uninformative).
pub struct TrueFutureSource<S: Scalar> {
    d_ran: Vec<S>,
}

impl<S: Scalar> TrueFutureSource<S> {
    pub fn new(d_ran: Vec<S>) -> Self {
        Self { d_ran }
    }
}

impl<S: Scalar> ForecastSource<S> for TrueFutureSource<S> {
    fn ran_forecast(
        &mut self,
        _history: &[S],
        t_global: usize,
        horizon: usize,
    ) -> Result<(Vec<S>, S)> {
        let last = *self.d_ran.last().expect("nonempty profile");
        let values = (1..=horizon)
            .map(|delta| self.d_ran.get(t_global + delta).copied().unwrap_or(last))
            .collect();
        Ok((values, S::c(0.5)))
    }
}

/// Outcome of one environment step.
pub struct StepOutcome<S: Scalar> {
    pub state: OrchestratorState<S>,
    pub reward: S,
    pub record: StepRecord<S>,
    pub done: bool,
}

/// One episode-scoped simulation over a demand profile.
pub struct Environment<S: Scalar> {
    cfg: EnvConfig,
    d_ran: Vec<S>,
    d_ai: Vec<S>,
    ai_period: usize,
    source: Box<dyn ForecastSource<S>>,
    offset: usize,
    t: usize,
    steps: usize,
    r_prev: [S; 2],
    mig_prev: [u32; 2],
    w_accum: f64,
    current: Option<(S, S, ForecastBundle<S>)>,
    done: bool,
}

impl<S: Scalar> Environment<S> {
    /// Build from explicit demand channels. `ai_period` is the oscillation
    /// period (steps) used for analytic AI-demand lookahead; it must match
    /// how `d_ai` was generated.
    pub fn new(
        cfg: EnvConfig,
        d_ran: Vec<S>,
        d_ai: Vec<S>,
        ai_period: usize,
        source: Box<dyn ForecastSource<S>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if d_ran.is_empty() || d_ran.len() != d_ai.len() {
            return Err(Error::Shape("demand channels empty or mismatched".into()));
        }
        Ok(Self {
            cfg,
            d_ran,
            d_ai,
            ai_period,
            source,
            offset: 0,
            t: 0,
            steps: 0,
            r_prev: [S::zero(); 2],
            mig_prev: [0; 2],
            w_accum: 0.0,
            current: None,
            done: true,
        })
    }

    /// Analytic AI channel over the whole profile: two oscillations per
    /// `profile_len` horizon (period `profile_len / 2`).
    pub fn from_ran_profile(
        cfg: EnvConfig,
        d_ran: Vec<S>,
        ai_period: Option<usize>,
        source: Box<dyn ForecastSource<S>>,
    ) -> Result<Self> {
        let n = d_ran.len();
        let period = ai_period.unwrap_or_else(|| (n / 2).max(1));
        let d_ai = (0..n).map(|t| ai_demand_at(t, 2 * period)).collect();
        Self::new(cfg, d_ran, d_ai, period, source)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn profile_len(&self) -> usize {
        self.d_ran.len()
    }

    pub fn ai_period(&self) -> usize {
        self.ai_period
    }

    pub fn demands(&self) -> (&[S], &[S]) {
        (&self.d_ran, &self.d_ai)
    }

    /// Steps this episode will run: `min(profile_len - offset, steps)`.
    pub fn episode_len(&self) -> usize {
        self.steps
    }

    pub fn local_t(&self) -> usize {
        self.t
    }

    pub fn allocation(&self) -> ([S; 2], [u32; 2]) {
        (self.r_prev, self.mig_prev)
    }

    /// Current demands (the pair the next step will act against).
    pub fn current_demands(&self) -> Option<(S, S)> {
        self.current.as_ref().map(|(dr, da, _)| (*dr, *da))
    }

    /// Start an episode at `offset` with at most `steps` steps and an
    /// initial allocation target (quantized immediately).
    pub fn reset(
        &mut self,
        offset: usize,
        steps: usize,
        init_alloc: (f64, f64),
    ) -> Result<OrchestratorState<S>> {
        if offset >= self.d_ran.len() {
            return Err(Error::Config(format!(
                "offset {offset} beyond profile of {} steps",
                self.d_ran.len()
            )));
        }
        if steps == 0 {
            return Err(Error::Config("episode needs at least one step".into()));
        }
        self.offset = offset;
        self.t = 0;
        self.steps = steps.min(self.d_ran.len() - offset);
        let rm = self.cfg.r_max as f64;
        let mig0 = ((init_alloc.0.clamp(0.0, 1.0) * rm + 1e-9).floor() as u32).min(self.cfg.r_max);
        let mig1 = ((init_alloc.1.clamp(0.0, 1.0) * rm + 1e-9).floor() as u32)
            .min(self.cfg.r_max - mig0);
        self.mig_prev = [mig0, mig1];
        self.r_prev = [S::c(mig0 as f64 / rm), S::c(mig1 as f64 / rm)];
        self.w_accum = 0.0;
        self.done = false;
        self.assemble_current()?;
        self.build_state()
    }

    fn global_t(&self) -> usize {
        self.offset + self.t
    }

    fn assemble_current(&mut self) -> Result<()> {
        let g = self.global_t();
        let d_ran = self.d_ran[g];
        let d_ai = self.d_ai[g];
        let (ran_vals, spike) =
            self.source.ran_forecast(&self.d_ran[..=g], g, self.cfg.horizon)?;
        if ran_vals.len() != self.cfg.horizon {
            return Err(Error::Shape(format!(
                "forecast source returned {} values for horizon {}",
                ran_vals.len(),
                self.cfg.horizon
            )));
        }
        // The AI channel is a known model, so its lookahead is exact: read
        // the series itself, holding the final value past the profile end.
        let last_ai = *self.d_ai.last().expect("nonempty profile");
        let ai_future: Vec<S> = (1..=self.cfg.horizon)
            .map(|delta| self.d_ai.get(g + delta).copied().unwrap_or(last_ai))
            .collect();
        let bundle = ForecastBundle::new(ran_vals, ai_future, spike)?;
        self.current = Some((d_ran, d_ai, bundle));
        Ok(())
    }

    fn build_state(&self) -> Result<OrchestratorState<S>> {
        let (d_ran, d_ai, bundle) =
            self.current.as_ref().ok_or_else(|| Error::Config("environment not reset".into()))?;
        OrchestratorState::new(
            *d_ran,
            *d_ai,
            bundle.d_ran().to_vec(),
            bundle.d_ai().to_vec(),
            self.r_prev,
        )
    }

    /// Spike probability attached to the pending step's forecast.
    pub fn current_spike_prob(&self) -> Option<S> {
        self.current.as_ref().map(|(_, _, b)| b.spike_prob())
    }

    /// Advance one timestep with a requested allocation delta (fractions of
    /// capacity; clipped to the rate limit).
    pub fn step(&mut self, delta_request: [S; 2]) -> Result<StepOutcome<S>> {
        if self.done {
            return Err(Error::Config("episode finished; reset the environment".into()));
        }
        let (d_ran, d_ai, bundle) = self.current.take().expect("reset precedes step");
        let d = [d_ran, d_ai];

        let alloc = apply_action(self.r_prev, delta_request, &self.cfg);
        let c = [completed(alloc.r[0], d[0]), completed(alloc.r[1], d[1])];

        let d_totals: Vec<S> = bundle
            .d_ran()
            .iter()
            .zip(bundle.d_ai())
            .map(|(&a, &b)| a + b)
            .collect();
        let now_total = if self.cfg.contention_on_allocation {
            self.r_prev[0] + self.r_prev[1]
        } else {
            d[0] + d[1]
        };
        let c_pred = contention_factor(now_total, &d_totals, self.cfg.beta_fut);

        let d_hat1 = [bundle.d_ran()[0], bundle.d_ai()[0]];
        let parts = reward(c, alloc.r, d, d_hat1, c_pred, &self.cfg);

        // Workload accumulator (diagnostic only): fused real and spike-
        // discounted predicted demand, minus completion-weighted allocation
        // under contention.
        let spike = bundle.spike_prob();
        let fused = 0.5
            * (d[0].f64() + d[1].f64()
                + (d_hat1[0].f64() + d_hat1[1].f64()) * (1.0 - spike.f64()));
        let freeing = completion_probability(&self.cfg, RAN, 1) * alloc.r[0].f64()
            + completion_probability(&self.cfg, AI, 1) * alloc.r[1].f64();
        self.w_accum += fused - freeing * c_pred.f64();

        let record = StepRecord {
            t: self.t,
            d_ran: d[0],
            d_ai: d[1],
            dhat_ran1: d_hat1[0],
            dhat_ai1: d_hat1[1],
            r_ran: alloc.r[0],
            r_ai: alloc.r[1],
            mig_ran: alloc.mig[0],
            mig_ai: alloc.mig[1],
            c_ran: c[0],
            c_ai: c[1],
            reward: parts.total,
            c_pred,
            spike_prob: spike,
            w: S::c(self.w_accum),
        };

        self.r_prev = alloc.r;
        self.mig_prev = alloc.mig;
        self.t += 1;
        self.done = self.t >= self.steps;
        let state = if !self.done {
            self.assemble_current()?;
            self.build_state()?
        } else if self.global_t() < self.d_ran.len() {
            // Terminal observation: real next demands where available.
            self.assemble_current()?;
            self.build_state()?
        } else {
            OrchestratorState::new(
                d[0],
                d[1],
                bundle.d_ran().to_vec(),
                bundle.d_ai().to_vec(),
                self.r_prev,
            )?
        };

        Ok(StepOutcome { state, reward: parts.total, record, done: self.done })
    }
}
