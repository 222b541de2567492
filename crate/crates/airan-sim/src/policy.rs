//! Allocation policies behind a single interface: the learned agent and
//! the two static baselines.

use serde::{Deserialize, Serialize};

use crate::agent::SacAgent;
use crate::env::OrchestratorState;
use crate::{Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Sac,
    Balanced,
    RanPriority,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Sac => "sac",
            PolicyKind::Balanced => "balanced",
            PolicyKind::RanPriority => "ran_priority",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sac" => Ok(PolicyKind::Sac),
            "balanced" => Ok(PolicyKind::Balanced),
            "ran_priority" | "ran-priority" => Ok(PolicyKind::RanPriority),
            other => Err(crate::Error::Config(format!(
                "unknown policy {other:?} (expected sac | balanced | ran_priority)"
            ))),
        }
    }

    /// Evaluation order in comparison reports.
    pub fn report_order() -> [PolicyKind; 3] {
        [PolicyKind::Sac, PolicyKind::Balanced, PolicyKind::RanPriority]
    }
}

/// Maps a state to an action in `[-1, 1]^2` (the environment scales it by
/// the rate limit).
pub trait Policy<S: Scalar> {
    fn name(&self) -> &'static str;

    fn action(&mut self, state: &OrchestratorState<S>) -> Result<[S; 2]>;

    /// Allocation the episode starts from; `None` keeps the run default.
    fn initial_allocation(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Fixed-target splitter: always steers toward a constant split, expressed
/// as the rate-limited action that moves the previous allocation toward the
/// target. Ignores demand content entirely.
pub struct StaticSplitPolicy {
    name: &'static str,
    target: (f64, f64),
    v_max: f64,
}

impl StaticSplitPolicy {
    /// 50/50 split.
    pub fn balanced(v_max: f64) -> Self {
        Self { name: PolicyKind::Balanced.name(), target: (0.5, 0.5), v_max }
    }

    /// 70/30 split favoring RAN.
    pub fn ran_priority(v_max: f64) -> Self {
        Self { name: PolicyKind::RanPriority.name(), target: (0.7, 0.3), v_max }
    }

    pub fn target(&self) -> (f64, f64) {
        self.target
    }
}

impl<S: Scalar> Policy<S> for StaticSplitPolicy {
    fn name(&self) -> &'static str {
        self.name
    }

    fn action(&mut self, state: &OrchestratorState<S>) -> Result<[S; 2]> {
        let to_unit = |target: f64, prev: S| -> S {
            let gap = (target - prev.f64()) / self.v_max;
            S::c(gap.clamp(-1.0, 1.0))
        };
        Ok([to_unit(self.target.0, state.r_prev_ran), to_unit(self.target.1, state.r_prev_ai)])
    }

    fn initial_allocation(&self) -> Option<(f64, f64)> {
        Some(self.target)
    }
}

/// The trained agent as a policy. Evaluation uses the deterministic
/// (squashed-mean) action; training rollouts sample.
pub struct SacPolicy<'a, S: Scalar> {
    agent: &'a mut SacAgent<S>,
    stochastic: bool,
}

impl<'a, S: Scalar> SacPolicy<'a, S> {
    pub fn new(agent: &'a mut SacAgent<S>, stochastic: bool) -> Self {
        Self { agent, stochastic }
    }
}

impl<S: Scalar> Policy<S> for SacPolicy<'_, S> {
    fn name(&self) -> &'static str {
        PolicyKind::Sac.name()
    }

    fn action(&mut self, state: &OrchestratorState<S>) -> Result<[S; 2]> {
        self.agent.act(&state.flatten(), self.stochastic)
    }

    fn initial_allocation(&self) -> Option<(f64, f64)> {
        Some((0.5, 0.5))
    }
}
