//! Monte Carlo SNR sweeps with paired protocol comparisons.
//!
//! Every `(SNR point, trial)` owns one channel draw and one noise source, both
//! derived from the master seed alone. All selected protocols run on that
//! same draw and noise, so per-protocol differences come from the protocols
//! and not from sampling. Aggregates are integer sums, which makes the
//! result independent of how trials are scheduled across threads.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channel, ArrayGeometry};
use crate::codebook::{AngleGrid, HierarchicalCodebook};
use crate::error::{Error, Result};
use crate::protocols::{
    run_multistage, run_single_stage, DirectedFeedback, PairedNoise, ProtocolConfig, ProtocolKind,
    ProtocolTrace,
};

/// Sweep configuration. SNR is `10 log10(P / N0)` with `N0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_antennas: usize,
    pub k: usize,
    pub gamma: f64,
    pub m_max: usize,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub snr_db_step: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub protocols: Vec<ProtocolKind>,
    /// Stage simulated in isolation; ignored when `multistage` is set.
    pub stage: usize,
    pub multistage: bool,
    pub directed_feedback: DirectedFeedback,
    pub parallel: bool,
    pub output_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_antennas: 64,
            k: 2,
            gamma: 1e-2,
            m_max: 264,
            snr_db_min: -15.0,
            snr_db_max: 15.0,
            snr_db_step: 2.5,
            trials: 10_000,
            master_seed: 0,
            protocols: ProtocolKind::ALL.to_vec(),
            stage: 1,
            multistage: false,
            directed_feedback: DirectedFeedback::OnChange,
            parallel: true,
            output_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if !(self.snr_db_step > 0.0) || !self.snr_db_step.is_finite() {
            return fail(format!(
                "SNR step must be positive, got {}",
                self.snr_db_step
            ));
        }
        if !self.snr_db_min.is_finite() || !self.snr_db_max.is_finite() {
            return fail("SNR bounds must be finite".into());
        }
        if self.snr_db_max < self.snr_db_min {
            return fail(format!(
                "SNR range is empty: {} > {}",
                self.snr_db_min, self.snr_db_max
            ));
        }
        if self.protocols.is_empty() {
            return fail("select at least one protocol".into());
        }
        let mut seen = self.protocols.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.protocols.len() {
            return fail("protocol list contains duplicates".into());
        }
        ArrayGeometry::half_wavelength(self.n_antennas)?;
        self.protocol_config(0.0).validate()?;
        if !self.multistage {
            let stages = crate::codebook::stage_count(self.n_antennas, self.k);
            if self.stage == 0 || self.stage > stages {
                return Err(Error::StageOutOfRange {
                    stage: self.stage,
                    stages,
                });
            }
        }
        Ok(())
    }

    /// SNR grid in dB, inclusive of both ends.
    pub fn snr_points(&self) -> Vec<f64> {
        let span = (self.snr_db_max - self.snr_db_min) / self.snr_db_step;
        let count = (span + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| self.snr_db_min + i as f64 * self.snr_db_step)
            .collect()
    }

    pub fn protocol_config(&self, snr_db: f64) -> ProtocolConfig {
        ProtocolConfig {
            gamma: self.gamma,
            m_max: self.m_max,
            k: self.k,
            stage: self.stage,
            pilot_power: 10f64.powf(snr_db / 10.0),
            noise_var: 1.0,
            alpha_prior_variance: 1.0,
            directed_feedback: self.directed_feedback,
        }
    }
}

/// Seeds for the channel draw and the measurement noise of one trial.
pub fn trial_seeds(master_seed: u64, snr_index: usize, trial: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(snr_index as u64);
    rng.set_word_pos(trial as u128 * 4);
    (rng.next_u64(), rng.next_u64())
}

/// Per-protocol result of one trial, summed over stages in multistage mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialOutcome {
    pub correct: bool,
    pub outage: bool,
    pub measurements: usize,
    pub feedback_bits: usize,
}

impl TrialOutcome {
    fn from_traces(traces: &[ProtocolTrace]) -> Self {
        Self {
            correct: traces.iter().all(|t| t.outcome.correct),
            outage: traces.iter().any(|t| t.outcome.outage),
            measurements: traces.iter().map(|t| t.measurements).sum(),
            feedback_bits: traces.iter().map(|t| t.feedback_bits).sum(),
        }
    }
}

/// Shared, immutable inputs for every trial of a sweep.
pub struct Simulator {
    config: ExperimentConfig,
    geom: ArrayGeometry,
    grid: AngleGrid,
    codebook: HierarchicalCodebook,
}

impl Simulator {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let geom = ArrayGeometry::half_wavelength(config.n_antennas)?;
        let grid = AngleGrid::uniform_cosine(config.n_antennas);
        let codebook = HierarchicalCodebook::new(&geom, &grid, config.k)?;
        Ok(Self {
            config,
            geom,
            grid,
            codebook,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn codebook(&self) -> &HierarchicalCodebook {
        &self.codebook
    }

    /// Full traces of every selected protocol for one trial.
    pub fn run_trial_traces(
        &self,
        snr_db: f64,
        snr_index: usize,
        trial: usize,
    ) -> Result<Vec<Vec<ProtocolTrace>>> {
        let (channel_seed, noise_seed) = trial_seeds(self.config.master_seed, snr_index, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(channel_seed);
        let channel = draw_channel(&self.geom, &mut rng, &self.grid)?;
        let protocol_config = self.config.protocol_config(snr_db);
        let noise = PairedNoise::new(noise_seed, protocol_config.noise_var);
        self.config
            .protocols
            .iter()
            .map(|&protocol| {
                if self.config.multistage {
                    run_multistage(protocol, &channel, &self.codebook, &protocol_config, &noise)
                } else {
                    run_single_stage(protocol, &channel, &self.codebook, &protocol_config, &noise)
                        .map(|t| vec![t])
                }
            })
            .collect()
    }

    pub fn run_trial(
        &self,
        snr_db: f64,
        snr_index: usize,
        trial: usize,
    ) -> Result<Vec<TrialOutcome>> {
        Ok(self
            .run_trial_traces(snr_db, snr_index, trial)?
            .iter()
            .map(|traces| TrialOutcome::from_traces(traces))
            .collect())
    }

    pub fn run(&self) -> Result<RunMetrics> {
        let protocols = &self.config.protocols;
        let mut points = Vec::new();
        for (snr_index, snr_db) in self.config.snr_points().into_iter().enumerate() {
            let trial = |t: usize| self.run_trial(snr_db, snr_index, t);
            let outcomes: Vec<Vec<TrialOutcome>> = if self.config.parallel {
                (0..self.config.trials)
                    .into_par_iter()
                    .map(trial)
                    .collect::<Result<_>>()?
            } else {
                (0..self.config.trials).map(trial).collect::<Result<_>>()?
            };
            for (p, &protocol) in protocols.iter().enumerate() {
                let mut point = ProtocolPoint::empty(protocol, snr_db);
                for per_trial in &outcomes {
                    point.record(&per_trial[p]);
                }
                points.push(point);
            }
        }
        points.sort_by(|a, b| {
            a.protocol
                .name()
                .cmp(b.protocol.name())
                .then(a.snr_db.total_cmp(&b.snr_db))
        });
        Ok(RunMetrics { points })
    }
}

/// Runs the full sweep described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunMetrics> {
    Simulator::new(config.clone())?.run()
}

/// Aggregated outcome of one protocol at one SNR point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolPoint {
    pub protocol: ProtocolKind,
    pub snr_db: f64,
    pub trials: u64,
    pub errors: u64,
    pub outages: u64,
    pub measurements: u64,
    pub feedback_bits: u64,
}

impl ProtocolPoint {
    fn empty(protocol: ProtocolKind, snr_db: f64) -> Self {
        Self {
            protocol,
            snr_db,
            trials: 0,
            errors: 0,
            outages: 0,
            measurements: 0,
            feedback_bits: 0,
        }
    }

    fn record(&mut self, outcome: &TrialOutcome) {
        self.trials += 1;
        self.errors += u64::from(!outcome.correct);
        self.outages += u64::from(outcome.outage);
        self.measurements += outcome.measurements as u64;
        self.feedback_bits += outcome.feedback_bits as u64;
    }

    /// Empirical probability of estimation error; outages count as errors.
    pub fn pee(&self) -> f64 {
        self.errors as f64 / self.trials as f64
    }

    pub fn outage_rate(&self) -> f64 {
        self.outages as f64 / self.trials as f64
    }

    pub fn mean_measurements(&self) -> f64 {
        self.measurements as f64 / self.trials as f64
    }

    pub fn mean_feedback_bits(&self) -> f64 {
        self.feedback_bits as f64 / self.trials as f64
    }

    pub fn mean_time_slots(&self) -> f64 {
        (self.measurements + self.feedback_bits) as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    /// Sorted by protocol name, then SNR.
    pub points: Vec<ProtocolPoint>,
}

impl RunMetrics {
    pub fn for_protocol(&self, protocol: ProtocolKind) -> impl Iterator<Item = &ProtocolPoint> {
        self.points.iter().filter(move |p| p.protocol == protocol)
    }

    pub fn point(&self, protocol: ProtocolKind, snr_db: f64) -> Option<&ProtocolPoint> {
        self.for_protocol(protocol)
            .find(|p| (p.snr_db - snr_db).abs() < 1e-9)
    }

    /// Per-SNR and sweep-averaged deltas of `candidate` relative to
    /// `baseline`. Returns `None` if either protocol was not run.
    pub fn compare(&self, candidate: ProtocolKind, baseline: ProtocolKind) -> Option<Comparison> {
        let rows: Vec<ComparisonRow> = self
            .for_protocol(candidate)
            .filter_map(|c| {
                self.point(baseline, c.snr_db)
                    .map(|b| ComparisonRow::new(c.snr_db, Means::of(c), Means::of(b)))
            })
            .collect();
        if rows.is_empty() {
            return None;
        }
        let average = |f: fn(&ComparisonRow) -> Means| {
            let n = rows.len() as f64;
            let sum = rows.iter().map(f).fold(Means::default(), |a, m| a.add(&m));
            sum.scale(1.0 / n)
        };
        let candidate_avg = average(|r| r.candidate);
        let baseline_avg = average(|r| r.baseline);
        Some(Comparison {
            candidate,
            baseline,
            average: ComparisonRow::new(f64::NAN, candidate_avg, baseline_avg),
            rows,
        })
    }
}

/// Mean per-trial costs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Means {
    pub measurements: f64,
    pub feedback_bits: f64,
    pub time_slots: f64,
}

impl Means {
    fn of(p: &ProtocolPoint) -> Self {
        Self {
            measurements: p.mean_measurements(),
            feedback_bits: p.mean_feedback_bits(),
            time_slots: p.mean_time_slots(),
        }
    }

    fn add(&self, other: &Self) -> Self {
        Self {
            measurements: self.measurements + other.measurements,
            feedback_bits: self.feedback_bits + other.feedback_bits,
            time_slots: self.time_slots + other.time_slots,
        }
    }

    fn scale(&self, s: f64) -> Self {
        Self {
            measurements: self.measurements * s,
            feedback_bits: self.feedback_bits * s,
            time_slots: self.time_slots * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub snr_db: f64,
    pub candidate: Means,
    pub baseline: Means,
    pub feedback_reduction_pct: f64,
    pub measurement_increase_pct: f64,
    pub time_reduction_pct: f64,
}

impl ComparisonRow {
    fn new(snr_db: f64, candidate: Means, baseline: Means) -> Self {
        Self {
            snr_db,
            candidate,
            baseline,
            feedback_reduction_pct: 100.0
                * (1.0 - candidate.feedback_bits / baseline.feedback_bits),
            measurement_increase_pct: 100.0
                * (candidate.measurements / baseline.measurements - 1.0),
            time_reduction_pct: 100.0 * (1.0 - candidate.time_slots / baseline.time_slots),
        }
    }
}

/// Candidate-vs-baseline trade-off across the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub candidate: ProtocolKind,
    pub baseline: ProtocolKind,
    pub rows: Vec<ComparisonRow>,
    /// Percentages computed from the sweep-averaged means of each protocol.
    pub average: ComparisonRow,
}

/// Formats `x` in fixed-point notation with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let text = format!("{x:.decimals$}");
    // Rounding can carry into a new digit (9.999995 -> 10.00000).
    let rounded: f64 = text.parse().unwrap_or(x);
    if rounded != 0.0 && rounded.abs().log10().floor() as i32 > magnitude && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        text
    }
}

pub const CSV_HEADER: &str =
    "protocol,snr_db,pee,mean_measurements,mean_feedback_bits,mean_time_slots,outage_rate,trials";

/// Writes the sweep CSV (UTF-8, LF line endings).
pub fn write_csv<W: Write>(metrics: &RunMetrics, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in &metrics.points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.protocol,
            format_sig6(p.snr_db),
            format_sig6(p.pee()),
            format_sig6(p.mean_measurements()),
            format_sig6(p.mean_feedback_bits()),
            format_sig6(p.mean_time_slots()),
            format_sig6(p.outage_rate()),
            p.trials
        )?;
    }
    Ok(())
}

pub fn emit_csv(metrics: &RunMetrics, path: &Path) -> Result<()> {
    write_file(path, |out| write_csv(metrics, out))
}

pub const COMPARISON_HEADER: &str = "snr_db,candidate_feedback_bits,baseline_feedback_bits,feedback_reduction_pct,candidate_measurements,baseline_measurements,measurement_increase_pct,candidate_time_slots,baseline_time_slots,time_reduction_pct";

/// Writes the trade-off table, one row per SNR plus a final `average` row.
pub fn write_comparison_csv<W: Write>(comparison: &Comparison, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "# candidate={} baseline={}",
        comparison.candidate, comparison.baseline
    )?;
    writeln!(out, "{COMPARISON_HEADER}")?;
    let row = |out: &mut W, label: String, r: &ComparisonRow| {
        writeln!(
            out,
            "{label},{},{},{},{},{},{},{},{},{}",
            format_sig6(r.candidate.feedback_bits),
            format_sig6(r.baseline.feedback_bits),
            format_sig6(r.feedback_reduction_pct),
            format_sig6(r.candidate.measurements),
            format_sig6(r.baseline.measurements),
            format_sig6(r.measurement_increase_pct),
            format_sig6(r.candidate.time_slots),
            format_sig6(r.baseline.time_slots),
            format_sig6(r.time_reduction_pct),
        )
    };
    for r in &comparison.rows {
        row(&mut out, format_sig6(r.snr_db), r)?;
    }
    row(&mut out, "average".to_string(), &comparison.average)
}

pub fn emit_comparison_csv(comparison: &Comparison, path: &Path) -> Result<()> {
    write_file(path, |out| write_comparison_csv(comparison, out))
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    body(&mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}
