//! Completion, adaptability and utilization metrics over telemetry, plus
//! report assembly across policies.

use serde::Serialize;
use std::fmt::Write as _;

use crate::env::StepRecord;
use crate::policy::PolicyKind;
use crate::{Error, Result, Scalar};

/// Ratio-of-sums completion percentage: `100 * sum(C) / sum(d)`. A zero
/// total demand is vacuously met (100%), flagged by the second return.
pub fn completion_rate<S: Scalar>(completed: &[S], demanded: &[S]) -> Result<(f64, bool)> {
    if completed.len() != demanded.len() {
        return Err(Error::Shape("completion series differ in length".into()));
    }
    let c: f64 = completed.iter().map(|v| v.f64()).sum();
    let d: f64 = demanded.iter().map(|v| v.f64()).sum();
    if d <= 0.0 {
        return Ok((100.0, true));
    }
    Ok(((100.0 * c / d).min(100.0), false))
}

/// Mean-absolute-deviation complement between ideal and actual allocation
/// ratios: `1 - (1/T) * sum |ideal - actual|`.
pub fn adaptability<S: Scalar>(ideal: &[S], actual: &[S]) -> Result<f64> {
    if ideal.len() != actual.len() {
        return Err(Error::Shape("ratio series differ in length".into()));
    }
    if ideal.is_empty() {
        return Err(Error::Config("adaptability needs at least one step".into()));
    }
    let gap: f64 =
        ideal.iter().zip(actual).map(|(a, b)| (a.f64() - b.f64()).abs()).sum::<f64>();
    Ok(1.0 - gap / ideal.len() as f64)
}

/// RAN share of a two-channel quantity; 0.5 when both are (near) zero.
pub fn ran_share<S: Scalar>(ran: S, ai: S) -> f64 {
    let (r, a) = (ran.f64(), ai.f64());
    if r + a <= 1e-12 {
        0.5
    } else {
        r / (r + a)
    }
}

/// Mean occupied fraction of capacity, as a percentage.
pub fn utilization(mig_ran: &[u32], mig_ai: &[u32], r_max: u32) -> f64 {
    if mig_ran.is_empty() {
        return 0.0;
    }
    let total: f64 = mig_ran.iter().zip(mig_ai).map(|(&a, &b)| (a + b) as f64).sum();
    100.0 * total / (r_max as f64 * mig_ran.len() as f64)
}

/// Per-policy episode summary.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpisodeReport {
    pub policy: String,
    pub steps: usize,
    pub completion_ran_pct: f64,
    pub completion_ai_pct: f64,
    pub adaptability: f64,
    pub mean_reward: f64,
    pub utilization_pct: f64,
    /// Completion restricted to steps whose demand is spike-labeled; a
    /// proxy for proactive behavior around surges, together with
    /// utilization.
    pub spike_completion_ran_pct: f64,
    pub vacuous_ran_demand: bool,
    pub vacuous_ai_demand: bool,
}

/// Compute an [`EpisodeReport`] from raw telemetry. `spike_threshold`
/// (demand units) selects the surge steps for the spike-window completion
/// figure; pass the training split's threshold.
pub fn episode_report<S: Scalar>(
    policy: &str,
    telemetry: &[StepRecord<S>],
    r_max: u32,
    spike_threshold: f64,
) -> Result<EpisodeReport> {
    if telemetry.is_empty() {
        return Err(Error::Config("empty telemetry".into()));
    }
    let series = |f: &dyn Fn(&StepRecord<S>) -> S| -> Vec<S> {
        telemetry.iter().map(f).collect()
    };
    let c_ran = series(&|r| r.c_ran);
    let d_ran = series(&|r| r.d_ran);
    let c_ai = series(&|r| r.c_ai);
    let d_ai = series(&|r| r.d_ai);
    let (completion_ran_pct, vac_ran) = completion_rate(&c_ran, &d_ran)?;
    let (completion_ai_pct, vac_ai) = completion_rate(&c_ai, &d_ai)?;

    let ideal: Vec<f64> = telemetry.iter().map(|r| ran_share(r.d_ran, r.d_ai)).collect();
    let actual: Vec<f64> = telemetry.iter().map(|r| ran_share(r.r_ran, r.r_ai)).collect();
    let adapt = adaptability(&ideal, &actual)?;

    let mig_ran: Vec<u32> = telemetry.iter().map(|r| r.mig_ran).collect();
    let mig_ai: Vec<u32> = telemetry.iter().map(|r| r.mig_ai).collect();
    let mean_reward =
        telemetry.iter().map(|r| r.reward.f64()).sum::<f64>() / telemetry.len() as f64;

    let spikes: Vec<&StepRecord<S>> =
        telemetry.iter().filter(|r| r.d_ran.f64() > spike_threshold).collect();
    let spike_completion_ran_pct = if spikes.is_empty() {
        100.0
    } else {
        let c: f64 = spikes.iter().map(|r| r.c_ran.f64()).sum();
        let d: f64 = spikes.iter().map(|r| r.d_ran.f64()).sum();
        (100.0 * c / d.max(1e-12)).min(100.0)
    };

    Ok(EpisodeReport {
        policy: policy.to_string(),
        steps: telemetry.len(),
        completion_ran_pct,
        completion_ai_pct,
        adaptability: adapt,
        mean_reward,
        utilization_pct: utilization(&mig_ran, &mig_ai, r_max),
        spike_completion_ran_pct,
        vacuous_ran_demand: vac_ran,
        vacuous_ai_demand: vac_ai,
    })
}

/// Rows ordered sac, balanced, ran_priority (present policies only).
pub fn order_reports(mut reports: Vec<EpisodeReport>) -> Vec<EpisodeReport> {
    let rank = |name: &str| {
        PolicyKind::report_order()
            .iter()
            .position(|k| k.name() == name)
            .unwrap_or(usize::MAX)
    };
    reports.sort_by_key(|r| rank(&r.policy));
    reports
}

/// Human-readable comparison table.
pub fn comparison_table(reports: &[EpisodeReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>6} {:>10} {:>10} {:>12} {:>12} {:>12} {:>14}",
        "policy",
        "steps",
        "ran_cmp%",
        "ai_cmp%",
        "adaptability",
        "mean_reward",
        "util%",
        "spike_ran_cmp%"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>10.2} {:>10.2} {:>12.4} {:>12.4} {:>12.2} {:>14.2}",
            r.policy,
            r.steps,
            r.completion_ran_pct,
            r.completion_ai_pct,
            r.adaptability,
            r.mean_reward,
            r.utilization_pct,
            r.spike_completion_ran_pct
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_rate_cases() {
        let d = vec![0.5f64, 0.25, 0.75];
        let (pct, vac) = completion_rate(&d, &d).unwrap();
        assert_eq!(pct, 100.0);
        assert!(!vac);
        let (pct, _) = completion_rate(&[0.0f64, 0.0, 0.0], &d).unwrap();
        assert_eq!(pct, 0.0);
        let (pct, vac) = completion_rate(&[0.0f64], &[0.0]).unwrap();
        assert_eq!(pct, 100.0);
        assert!(vac, "zero demand flagged as vacuous");
    }

    #[test]
    fn completion_rate_monotone_in_completed() {
        let d = vec![0.5f64, 0.5];
        let (lo, _) = completion_rate(&[0.1f64, 0.2], &d).unwrap();
        let (hi, _) = completion_rate(&[0.1f64, 0.3], &d).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn adaptability_cases() {
        let a = vec![0.3f64, 0.7, 0.5];
        assert_eq!(adaptability(&a, &a).unwrap(), 1.0);
        let (i, c) = (vec![1.0f64, 1.0], vec![0.5f64, 0.5]);
        assert!((adaptability(&i, &c).unwrap() - 0.5).abs() < 1e-12);
        let (i, c) = (vec![0.4f64, 0.8], vec![0.5f64, 0.5]);
        assert!((adaptability(&i, &c).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn adaptability_symmetric_under_channel_exchange() {
        // swapping both channels maps each ratio x to 1-x, preserving gaps
        let ideal = vec![0.3f64, 0.9, 0.6];
        let actual = vec![0.5f64, 0.7, 0.2];
        let swapped_i: Vec<f64> = ideal.iter().map(|v| 1.0 - v).collect();
        let swapped_a: Vec<f64> = actual.iter().map(|v| 1.0 - v).collect();
        let a1 = adaptability(&ideal, &actual).unwrap();
        let a2 = adaptability(&swapped_i, &swapped_a).unwrap();
        assert!((a1 - a2).abs() < 1e-12);
    }

    #[test]
    fn ideal_ratio_cases() {
        assert_eq!(ran_share(0.4f64, 0.4), 0.5);
        assert_eq!(ran_share(0.4f64, 0.0), 1.0);
        assert!((ran_share(0.6f64, 0.2) - 0.75).abs() < 1e-12);
        assert_eq!(ran_share(0.0f64, 0.0), 0.5, "both-zero convention");
    }

    #[test]
    fn utilization_cases() {
        assert_eq!(utilization(&[21, 21], &[0, 0], 21), 100.0);
        assert_eq!(utilization(&[0, 0], &[0, 0], 21), 0.0);
        assert_eq!(utilization(&[21, 0], &[0, 0], 21), 50.0);
    }

    fn record(t: usize, d: (f64, f64), r: (f64, f64), mig: (u32, u32)) -> StepRecord<f64> {
        StepRecord {
            t,
            d_ran: d.0,
            d_ai: d.1,
            dhat_ran1: d.0,
            dhat_ai1: d.1,
            r_ran: r.0,
            r_ai: r.1,
            mig_ran: mig.0,
            mig_ai: mig.1,
            c_ran: r.0.min(d.0),
            c_ai: r.1.min(d.1),
            reward: 1.0,
            c_pred: 0.0,
            spike_prob: 0.5,
            w: 0.0,
        }
    }

    #[test]
    fn report_recomputable_from_telemetry() {
        let telemetry = vec![
            record(0, (0.4, 0.2), (0.3, 0.3), (6, 6)),
            record(1, (0.8, 0.1), (0.5, 0.2), (10, 4)),
        ];
        let rep = episode_report("sac", &telemetry, 21, 0.7).unwrap();
        // recount by hand
        let ran_pct = 100.0 * (0.3 + 0.5) / (0.4 + 0.8);
        let ai_pct = 100.0 * (0.2 + 0.1) / (0.2 + 0.1);
        assert!((rep.completion_ran_pct - ran_pct).abs() < 1e-9);
        assert!((rep.completion_ai_pct - ai_pct).abs() < 1e-9);
        let ideal = [0.4 / 0.6, 0.8 / 0.9];
        let actual = [0.5, 0.5 / 0.7];
        let adapt = 1.0
            - (((ideal[0] - actual[0]) as f64).abs() + ((ideal[1] - actual[1]) as f64).abs())
                / 2.0;
        assert!((rep.adaptability - adapt).abs() < 1e-9);
        assert!((rep.utilization_pct - 100.0 * 26.0 / 42.0).abs() < 1e-9);
        // only step 1 exceeds the 0.7 spike threshold
        assert!((rep.spike_completion_ran_pct - 100.0 * 0.5 / 0.8).abs() < 1e-9);
    }

    #[test]
    fn reports_ordered_sac_balanced_ran_priority() {
        let mk = |name: &str| EpisodeReport {
            policy: name.to_string(),
            steps: 1,
            completion_ran_pct: 0.0,
            completion_ai_pct: 0.0,
            adaptability: 0.0,
            mean_reward: 0.0,
            utilization_pct: 0.0,
            spike_completion_ran_pct: 0.0,
            vacuous_ran_demand: false,
            vacuous_ai_demand: false,
        };
        let ordered = order_reports(vec![mk("ran_priority"), mk("sac"), mk("balanced")]);
        let names: Vec<&str> = ordered.iter().map(|r| r.policy.as_str()).collect();
        assert_eq!(names, vec!["sac", "balanced", "ran_priority"]);
        let table = comparison_table(&ordered);
        assert_eq!(table.lines().count(), 4, "header plus one row per policy");
    }
}
