//! Cell-trace ingestion, demand profiles, spike labeling, windowing and
//! synthetic trace generation.
//!
//! Trace files are two-column delimited text (`timestamp, rnti_count`):
//! the timestamp is either an integer epoch-seconds value or ISO-8601, the
//! count a nonnegative integer. A header line and `#` comments are allowed.
//! One row corresponds to one control timestep; a single missing step at
//! the file's native cadence is forward-filled.

use std::fmt::Write as _;
use std::path::Path;

use chrono::DateTime;
use rand::Rng;

use crate::rng::RngHub;
use crate::{Error, Result, Scalar};

/// Timestamped RNTI counts from one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    timestamps: Vec<i64>,
    rnti_count: Vec<u64>,
    source_label: String,
}

impl TraceSeries {
    pub fn new(timestamps: Vec<i64>, rnti_count: Vec<u64>, source_label: &str) -> Result<Self> {
        if timestamps.len() != rnti_count.len() {
            return Err(Error::Shape("timestamp/count length mismatch".into()));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("timestamps not strictly increasing".into()));
        }
        Ok(Self { timestamps, rnti_count, source_label: source_label.to_string() })
    }

    pub fn len(&self) -> usize {
        self.rnti_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rnti_count.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.rnti_count
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }
}

/// Per-step normalized demand pair, each channel in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile<S: Scalar> {
    pub d_ran: Vec<S>,
    pub d_ai: Vec<S>,
}

impl<S: Scalar> DemandProfile<S> {
    pub fn new(d_ran: Vec<S>, d_ai: Vec<S>) -> Result<Self> {
        if d_ran.len() != d_ai.len() {
            return Err(Error::Shape("demand channels differ in length".into()));
        }
        let in_unit = |v: &S| *v >= S::zero() && *v <= S::one();
        if !d_ran.iter().all(in_unit) || !d_ai.iter().all(in_unit) {
            return Err(Error::Config("demand values outside [0, 1]".into()));
        }
        Ok(Self { d_ran, d_ai })
    }

    pub fn len(&self) -> usize {
        self.d_ran.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_ran.is_empty()
    }

    /// Delimited export: `t,d_ran,d_ai,spike_label` with a header row.
    pub fn export_csv(&self, spike_labels: &[u8]) -> String {
        let mut out = String::from("t,d_ran,d_ai,spike_label\n");
        for t in 0..self.len() {
            let s = spike_labels.get(t).copied().unwrap_or(0);
            let _ = writeln!(out, "{t},{},{},{s}", self.d_ran[t].f64(), self.d_ai[t].f64());
        }
        out
    }
}

/// Sliding-window supervised dataset: each input is `seq_len` consecutive
/// values, the target is the next value, and the spike label is aligned to
/// the target step.
#[derive(Debug, Clone)]
pub struct WindowedDataset<S: Scalar> {
    pub inputs: Vec<Vec<S>>,
    pub targets: Vec<S>,
    pub spike_labels: Vec<u8>,
    pub seq_len: usize,
}

impl<S: Scalar> WindowedDataset<S> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Z-score scaler fitted on a training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

impl Scaler {
    pub fn fit<S: Scalar>(train: &[S]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("cannot fit scaler on empty series".into()));
        }
        let n = train.len() as f64;
        let mean = train.iter().map(|v| v.f64()).sum::<f64>() / n;
        let var = train.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt().max(1e-8) })
    }

    pub fn transform<S: Scalar>(&self, values: &[S]) -> Vec<S> {
        values.iter().map(|v| S::c((v.f64() - self.mean) / self.std)).collect()
    }

    pub fn inverse_one<S: Scalar>(&self, z: S) -> S {
        S::c(z.f64() * self.std + self.mean)
    }

    pub fn transform_one<S: Scalar>(&self, v: S) -> S {
        S::c((v.f64() - self.mean) / self.std)
    }
}

/// Parse a trace file. Malformed rows are reported with their line number;
/// a single missing step at the native cadence is forward-filled.
pub fn load_trace(path: &Path) -> Result<TraceSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());

    let mut timestamps = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (ts_raw, count_raw) = if let Some((a, b)) = line.split_once(',') {
            (a, b)
        } else {
            line.split_once(|c: char| c.is_whitespace()).unwrap_or((line, ""))
        };
        let ts_str = ts_raw.trim();
        let count_str = count_raw.trim();
        if count_str.is_empty() {
            if timestamps.is_empty() {
                continue; // header
            }
            return Err(Error::parse(path, lineno, "expected two columns"));
        }
        let ts = match parse_timestamp(ts_str) {
            Some(ts) => ts,
            None if timestamps.is_empty() && count_str.parse::<u64>().is_err() => continue,
            None => return Err(Error::parse(path, lineno, format!("bad timestamp {ts_str:?}"))),
        };
        let count: u64 = count_str.parse().map_err(|_| {
            Error::parse(path, lineno, format!("bad rnti count {count_str:?} (nonnegative integer)"))
        })?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("timestamp {ts} not strictly increasing (previous {prev})"),
                ));
            }
        }
        timestamps.push(ts);
        counts.push(count);
    }
    if timestamps.is_empty() {
        return Err(Error::parse(path, 0, "no data rows"));
    }

    let (timestamps, counts) = forward_fill_single_gaps(timestamps, counts);
    TraceSeries::new(timestamps, counts, &label)
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(epoch) = s.parse::<i64>() {
        return Some(epoch);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    // ISO-8601 without zone, e.g. "2019-01-12 17:12:00" or with 'T'
    let patched = s.replace(' ', "T");
    if let Ok(naive) =
        chrono::NaiveDateTime::parse_from_str(&patched, "%Y-%m-%dT%H:%M:%S")
    {
        return Some(naive.and_utc().timestamp());
    }
    None
}

/// Insert one forward-filled row wherever exactly one step at the median
/// cadence is missing. Wider gaps are left alone (rows stay control steps).
fn forward_fill_single_gaps(timestamps: Vec<i64>, counts: Vec<u64>) -> (Vec<i64>, Vec<u64>) {
    if timestamps.len() < 3 {
        return (timestamps, counts);
    }
    let mut deltas: Vec<i64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    deltas.sort_unstable();
    let cadence = deltas[deltas.len() / 2];
    if cadence <= 0 {
        return (timestamps, counts);
    }
    let mut ts_out = Vec::with_capacity(timestamps.len());
    let mut c_out = Vec::with_capacity(counts.len());
    ts_out.push(timestamps[0]);
    c_out.push(counts[0]);
    for i in 1..timestamps.len() {
        let gap = timestamps[i] - timestamps[i - 1];
        if gap == 2 * cadence {
            ts_out.push(timestamps[i - 1] + cadence);
            c_out.push(counts[i - 1]);
        }
        ts_out.push(timestamps[i]);
        c_out.push(counts[i]);
    }
    (ts_out, c_out)
}

/// Min-max normalization with an epsilon-padded denominator:
/// `d(t) = (c_t - min) / (max - min + eps)`. Constant series map to zero.
pub fn normalize_ran_demand<S: Scalar>(series: &TraceSeries, eps: f64) -> Result<Vec<S>> {
    if series.is_empty() {
        return Err(Error::Config("cannot normalize empty series".into()));
    }
    let min = *series.counts().iter().min().unwrap() as f64;
    let max = *series.counts().iter().max().unwrap() as f64;
    let denom = max - min + eps;
    Ok(series.counts().iter().map(|&c| S::c((c as f64 - min) / denom)).collect())
}

/// Periodic AI demand: `d(t) = (sin(4 pi t / n) + 1) / 2` for `t = 0..n`,
/// i.e. two full oscillations over an `n`-step horizon.
pub fn ai_demand<S: Scalar>(n: usize) -> Vec<S> {
    (0..n).map(|t| ai_demand_at::<S>(t, n)).collect()
}

/// The same oscillation evaluated at an arbitrary step (used for analytic
/// lookahead past the profile end).
pub fn ai_demand_at<S: Scalar>(t: usize, n: usize) -> S {
    let x = 4.0 * std::f64::consts::PI * t as f64 / n.max(1) as f64;
    S::c((x.sin() + 1.0) / 2.0)
}

/// Percentile threshold via the nearest-rank method on the given split.
pub fn spike_threshold<S: Scalar>(train: &[S], percentile: f64) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Config("cannot take percentile of empty series".into()));
    }
    if !(0.0 < percentile && percentile < 100.0) {
        return Err(Error::Config(format!("percentile {percentile} outside (0, 100)")));
    }
    let mut sorted: Vec<f64> = train.iter().map(|v| v.f64()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.saturating_sub(1).min(sorted.len() - 1)])
}

/// Binary labels: 1 where the value strictly exceeds the threshold.
pub fn label_spikes_with_threshold<S: Scalar>(values: &[S], threshold: f64) -> Vec<u8> {
    values.iter().map(|v| u8::from(v.f64() > threshold)).collect()
}

/// Threshold on the training split (default 90th percentile), labels for it.
pub fn label_spikes<S: Scalar>(values: &[S], percentile: f64) -> Result<(Vec<u8>, f64)> {
    let tau = spike_threshold(values, percentile)?;
    Ok((label_spikes_with_threshold(values, tau), tau))
}

/// Z-score `apply_to` with statistics fitted on `train` only.
pub fn standardize<S: Scalar>(train: &[S], apply_to: &[S]) -> Result<(Vec<S>, Scaler)> {
    let scaler = Scaler::fit(train)?;
    Ok((scaler.transform(apply_to), scaler))
}

/// Slide a window of `seq_len` over `values`; sample `i` is
/// `values[i..i+seq_len]` with target `values[i+seq_len]` and the spike
/// label aligned to the target step.
pub fn make_windows<S: Scalar>(
    values: &[S],
    labels: &[u8],
    seq_len: usize,
) -> Result<WindowedDataset<S>> {
    if seq_len == 0 {
        return Err(Error::Config("seq_len must be positive".into()));
    }
    if values.len() <= seq_len {
        return Err(Error::Config(format!(
            "series of length {} too short for seq_len {seq_len}",
            values.len()
        )));
    }
    if labels.len() != values.len() {
        return Err(Error::Shape("labels length differs from values".into()));
    }
    let n = values.len() - seq_len;
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut spike_labels = Vec::with_capacity(n);
    for i in 0..n {
        inputs.push(values[i..i + seq_len].to_vec());
        targets.push(values[i + seq_len]);
        spike_labels.push(labels[i + seq_len]);
    }
    Ok(WindowedDataset { inputs, targets, spike_labels, seq_len })
}

/// Synthetic trace families, stand-ins for real cell traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Low baseline with recurring multi-step surges (ramp, plateau, decay).
    EventSpike,
    /// Dominant daily oscillation plus noise.
    Diurnal,
    /// Low-variance noise around a constant level.
    Flat,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "event-spike" | "event_spike" | "event" => Ok(Self::EventSpike),
            "diurnal" => Ok(Self::Diurnal),
            "flat" => Ok(Self::Flat),
            other => Err(Error::Config(format!(
                "unknown synthetic kind {other:?} (expected event-spike | diurnal | flat)"
            ))),
        }
    }
}

/// Options for [`synth_trace`]. `period` only affects the diurnal kind.
#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub period: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { period: 288 }
    }
}

/// Deterministic synthetic RNTI trace of length `n` for a given seed.
pub fn synth_trace(kind: SynthKind, n: usize, seed: u64, opts: SynthOptions) -> TraceSeries {
    let hub = RngHub::new(seed);
    let mut rng = hub.stream("trace-synth");
    let timestamps: Vec<i64> = (0..n as i64).map(|t| t * 60).collect();
    let mut counts = Vec::with_capacity(n);
    match kind {
        SynthKind::Flat => {
            // Steady residential pattern: a gentle slow swell plus noise.
            // Min-max normalization stretches whatever range exists, so a
            // mild deterministic component keeps the normalized profile
            // from degenerating into full-range white noise.
            for t in 0..n {
                let swell = 25.0 * (2.0 * std::f64::consts::PI * t as f64 / 400.0).sin();
                let noise: f64 = rng.gen_range(-8.0..8.0);
                counts.push((120.0 + swell + noise).round().max(0.0) as u64);
            }
        }
        SynthKind::Diurnal => {
            let period = opts.period.max(2) as f64;
            for t in 0..n {
                let phase = 2.0 * std::f64::consts::PI * t as f64 / period;
                let level = 220.0 + 160.0 * phase.sin();
                let noise: f64 = rng.gen_range(-12.0..12.0);
                counts.push((level + noise).round().max(0.0) as u64);
            }
        }
        SynthKind::EventSpike => {
            // Slow wander plus surges: ~8-step ramp, plateau, ~8-step decay.
            // Surge inter-arrival keeps at least one event per 100 steps.
            let mut surge = vec![0.0f64; n];
            let mut t = 0usize;
            loop {
                t += rng.gen_range(40..85);
                if t + 40 >= n {
                    break;
                }
                let amp: f64 = rng.gen_range(280.0..420.0);
                let plateau = rng.gen_range(10..20);
                for k in 0..8 {
                    let x = (k + 1) as f64 / 8.0;
                    surge[t + k] = surge[t + k].max(amp * x * x * (3.0 - 2.0 * x));
                }
                for k in 0..plateau {
                    let idx = t + 8 + k;
                    if idx < n {
                        surge[idx] = surge[idx].max(amp * rng.gen_range(0.93..1.0));
                    }
                }
                for k in 0..8 {
                    let idx = t + 8 + plateau + k;
                    if idx < n {
                        surge[idx] = surge[idx].max(amp * (1.0 - (k + 1) as f64 / 8.0));
                    }
                }
                t += 8 + plateau + 8;
            }
            for (t, s) in surge.iter().enumerate() {
                let wander =
                    20.0 * (2.0 * std::f64::consts::PI * t as f64 / 240.0).sin();
                let noise: f64 = rng.gen_range(-6.0..6.0);
                counts.push((90.0 + wander + s + noise).round().max(0.0) as u64);
            }
        }
    }
    TraceSeries::new(timestamps, counts, &format!("synthetic-{kind:?}")).expect("monotone by construction")
}

/// Render a trace as the same delimited text accepted by [`load_trace`].
pub fn trace_to_string(series: &TraceSeries) -> String {
    let mut out = String::from("timestamp,rnti_count\n");
    for (ts, c) in series.timestamps().iter().zip(series.counts()) {
        let _ = writeln!(out, "{ts},{c}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn load_well_formed_file() {
        let (_d, p) = write_tmp("timestamp,rnti_count\n0,10\n60,20\n120,30\n");
        let s = load_trace(&p).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.counts(), &[10, 20, 30]);
    }

    #[test]
    fn load_iso_timestamps() {
        let (_d, p) =
            write_tmp("2019-01-12 17:12:00,5\n2019-01-12 17:13:00,6\n2019-01-12 17:14:00,7\n");
        let s = load_trace(&p).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.timestamps()[1] - s.timestamps()[0], 60);
    }

    #[test]
    fn negative_count_reports_line() {
        let (_d, p) = write_tmp("0,10\n60,-3\n");
        match load_trace(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_timestamp_is_non_monotone_error() {
        let (_d, p) = write_tmp("0,10\n0,11\n");
        match load_trace(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("strictly increasing"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn single_gap_is_forward_filled() {
        let (_d, p) = write_tmp("0,10\n60,20\n180,40\n240,50\n");
        let s = load_trace(&p).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.counts(), &[10, 20, 20, 40, 50]);
        assert_eq!(s.timestamps(), &[0, 60, 120, 180, 240]);
    }

    #[test]
    fn normalize_basic_and_constant() {
        let s = TraceSeries::new(vec![0, 1, 2], vec![10, 20, 30], "t").unwrap();
        let d: Vec<f64> = normalize_ran_demand(&s, 1e-8).unwrap();
        assert!((d[0] - 0.0).abs() < 1e-12);
        assert!((d[1] - 0.5).abs() < 1e-9);
        assert!((d[2] - 20.0 / (20.0 + 1e-8)).abs() < 1e-12);

        let c = TraceSeries::new(vec![0, 1, 2], vec![7, 7, 7], "c").unwrap();
        let d: Vec<f64> = normalize_ran_demand(&c, 1e-8).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ai_demand_shape() {
        let d: Vec<f64> = ai_demand(100);
        assert!((d[0] - 0.5).abs() < 1e-12, "sin(0) = 0 -> 0.5");
        assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let x = (0.48 * std::f64::consts::PI).sin();
        assert!((d[12] - (x + 1.0) / 2.0).abs() < 1e-12);
        // two maxima and two minima over one horizon (n = 200 puts the
        // extrema of sin(4 pi t / n) on grid points t = 25, 75, 125, 175)
        let d: Vec<f64> = ai_demand(200);
        let mut maxima = 0;
        let mut minima = 0;
        for t in 1..199 {
            if d[t] > d[t - 1] && d[t] > d[t + 1] {
                maxima += 1;
            }
            if d[t] < d[t - 1] && d[t] < d[t + 1] {
                minima += 1;
            }
        }
        assert_eq!((maxima, minima), (2, 2));
        assert!((d[25] - 1.0).abs() < 1e-12);
        assert!(d[75].abs() < 1e-12);
    }

    #[test]
    fn spike_labels_rank_arithmetic() {
        let values: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let (labels, tau) = label_spikes(&values, 90.0).unwrap();
        assert_eq!(tau, 9.0);
        assert_eq!(labels, vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn constant_series_has_no_spikes() {
        let values = vec![3.0f64; 20];
        let (labels, _tau) = label_spikes(&values, 90.0).unwrap();
        assert!(labels.iter().all(|&l| l == 0), "strict inequality keeps constants unlabeled");
    }

    #[test]
    fn spike_percentile_validation() {
        let values = vec![1.0f64, 2.0];
        assert!(label_spikes(&values, 0.0).is_err());
        assert!(label_spikes(&values, 100.0).is_err());
    }

    #[test]
    fn iid_spike_fraction_near_ten_percent() {
        let hub = RngHub::new(8);
        let mut rng = hub.stream("iid");
        let values: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
        let (labels, _) = label_spikes(&values, 90.0).unwrap();
        let frac = labels.iter().map(|&l| l as usize).sum::<usize>() as f64 / 1e5;
        assert!((frac - 0.10).abs() < 0.01, "labeled fraction {frac}");
    }

    #[test]
    fn standardize_self_and_round_trip() {
        let train: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 10.0];
        let (z, scaler) = standardize(&train, &train).unwrap();
        let mean: f64 = z.iter().sum::<f64>() / z.len() as f64;
        let var: f64 = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
        for (&orig, &zz) in train.iter().zip(&z) {
            assert!((scaler.inverse_one(zz) - orig).abs() < 1e-12);
        }
    }

    #[test]
    fn test_split_uses_train_statistics() {
        let train: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0];
        let test: Vec<f64> = vec![10.0, 20.0];
        let (z, scaler) = standardize(&train, &test).unwrap();
        let mean = 1.5;
        let std = (train.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0).sqrt();
        assert!((scaler.mean - mean).abs() < 1e-12);
        assert!((scaler.std - std).abs() < 1e-12);
        assert!((z[0] - (10.0 - mean) / std).abs() < 1e-12);
        assert!((z[1] - (20.0 - mean) / std).abs() < 1e-12);
    }

    #[test]
    fn window_counts_and_alignment() {
        let values: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let labels = vec![0u8; 12];
        let ds = make_windows(&values, &labels, 10).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.inputs[0], values[0..10]);
        assert_eq!(ds.targets[0], values[10]);
        // targets never fall inside their own window
        for (i, input) in ds.inputs.iter().enumerate() {
            assert!(!input.iter().any(|&v| v == ds.targets[i]));
        }
    }

    #[test]
    fn window_reconstruction_identity() {
        let values: Vec<f64> = (0..40).map(|v| (v as f64 * 0.7).sin()).collect();
        let labels = vec![0u8; 40];
        let ds = make_windows(&values, &labels, 10).unwrap();
        let mut rebuilt = ds.inputs[0].clone();
        rebuilt.extend_from_slice(&ds.targets);
        assert_eq!(rebuilt, values);
    }

    #[test]
    fn window_too_short_errors() {
        let values = vec![1.0f64; 10];
        let labels = vec![0u8; 10];
        assert!(make_windows(&values, &labels, 10).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_trace(SynthKind::EventSpike, 500, 7, SynthOptions::default());
        let b = synth_trace(SynthKind::EventSpike, 500, 7, SynthOptions::default());
        assert_eq!(a, b);
        let c = synth_trace(SynthKind::EventSpike, 500, 8, SynthOptions::default());
        assert_ne!(a, c);
    }

    #[test]
    fn event_spike_kind_produces_labeled_spikes() {
        let s = synth_trace(SynthKind::EventSpike, 600, 3, SynthOptions::default());
        let d: Vec<f64> = normalize_ran_demand(&s, 1e-8).unwrap();
        let (labels, _) = label_spikes(&d, 90.0).unwrap();
        let spikes: usize = labels.iter().map(|&l| l as usize).sum();
        assert!(spikes > 0, "event-spike trace must contain labeled spikes");
    }

    #[test]
    fn diurnal_kind_has_dominant_period_component() {
        let period = 96;
        let n = 960;
        let s = synth_trace(SynthKind::Diurnal, n, 5, SynthOptions { period });
        let x: Vec<f64> = s.counts().iter().map(|&c| c as f64).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        // naive DFT magnitude at integer frequencies 1..n/2
        let mag = |k: usize| -> f64 {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in x.iter().enumerate() {
                let ang = 2.0 * std::f64::consts::PI * k as f64 * t as f64 / n as f64;
                re += (v - mean) * ang.cos();
                im -= (v - mean) * ang.sin();
            }
            (re * re + im * im).sqrt()
        };
        let k_expected = n / period;
        let m_exp = mag(k_expected);
        for k in 1..(n / 2) {
            if k != k_expected {
                assert!(
                    mag(k) < m_exp,
                    "component at k={k} should be below the configured period's"
                );
            }
        }
    }

    #[test]
    fn trace_round_trips_through_text() {
        let s = synth_trace(SynthKind::Flat, 50, 9, SynthOptions::default());
        let text = trace_to_string(&s);
        let (_d, p) = write_tmp(&text);
        let loaded = load_trace(&p).unwrap();
        assert_eq!(loaded.counts(), s.counts());
        assert_eq!(loaded.timestamps(), s.timestamps());
    }
}
