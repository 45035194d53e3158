//! Pilot/feedback protocols for one search stage, and the multistage driver.
//!
//! Every pilot and every feedback bit costs one time slot. Candidates are
//! 1-based and ordered as `d = K (k_t - 1) + k_r`; the initial sweep visits
//! them in that order and round-robin continuation repeats it.

mod link;
mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::codebook::HierarchicalCodebook;
use crate::error::{Error, Result};
use crate::estimator::{
    angles_to_candidate, candidate_to_angles, measurement_lower_bound, round_robin_candidate,
    snr_stage, EstimatorState, ObservationLedger,
};

pub use link::{PairedNoise, PilotLink, StageLink};
pub use trace::{aod_report_bits, EventKind, FeedbackKind, Outcome, ProtocolTrace, TraceEvent};

use trace::Recorder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    /// Single K² sweep, largest-magnitude decision.
    Fixed,
    /// Round-robin pilots until the posterior target is met, one AoD report.
    Optimal,
    /// Rate-adaptive surrogate: one continue bit per extra pilot.
    RateAdaptive,
    /// Coefficient-driven pilot budget followed by directed pilots.
    Raf,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] = [
        ProtocolKind::Fixed,
        ProtocolKind::Optimal,
        ProtocolKind::RateAdaptive,
        ProtocolKind::Raf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Fixed => "fixed",
            ProtocolKind::Optimal => "optimal",
            ProtocolKind::RateAdaptive => "rate-adaptive",
            ProtocolKind::Raf => "raf",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProtocolKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown protocol `{s}` (expected fixed, optimal, rate-adaptive or raf)"
                ))
            })
    }
}

/// When the receiver repeats its AoD report during the directed phase of
/// [`run_raf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectedFeedback {
    /// Only when the MAP AoD subrange changes.
    #[default]
    OnChange,
    /// After every directed pilot.
    EveryPilot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    /// Target probability of estimation error.
    pub gamma: f64,
    pub m_max: usize,
    pub k: usize,
    pub stage: usize,
    pub pilot_power: f64,
    pub noise_var: f64,
    pub alpha_prior_variance: f64,
    pub directed_feedback: DirectedFeedback,
}

impl ProtocolConfig {
    pub fn new(k: usize, pilot_power: f64, noise_var: f64) -> Self {
        Self {
            gamma: 1e-2,
            m_max: 264,
            k,
            stage: 1,
            pilot_power,
            noise_var,
            alpha_prior_variance: 1.0,
            directed_feedback: DirectedFeedback::OnChange,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!(
                "branching factor must be at least 2, got {}",
                self.k
            )));
        }
        if self.m_max < self.k * self.k {
            return Err(Error::InvalidConfig(format!(
                "m_max = {} is below the K² = {} sweep",
                self.m_max,
                self.k * self.k
            )));
        }
        if self.stage == 0 {
            return Err(Error::InvalidConfig("stages are numbered from 1".into()));
        }
        if !(self.pilot_power > 0.0) || !self.pilot_power.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "pilot power must be positive, got {}",
                self.pilot_power
            )));
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(Error::NonPositiveNoise(self.noise_var));
        }
        if !(self.alpha_prior_variance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "coefficient prior variance must be positive, got {}",
                self.alpha_prior_variance
            )));
        }
        Ok(())
    }

    fn threshold(&self) -> f64 {
        1.0 - self.gamma
    }
}

/// Shared bookkeeping for one protocol run.
struct Session<'a, L: PilotLink> {
    link: &'a mut L,
    config: &'a ProtocolConfig,
    ledger: ObservationLedger,
    recorder: Recorder,
}

impl<'a, L: PilotLink> Session<'a, L> {
    fn new(link: &'a mut L, config: &'a ProtocolConfig) -> Self {
        debug_assert_eq!(link.k(), config.k);
        let ledger =
            ObservationLedger::new(config.k, link.gain_constant(), config.alpha_prior_variance);
        Self {
            link,
            config,
            ledger,
            recorder: Recorder::new(),
        }
    }

    fn m(&self) -> usize {
        self.ledger.m()
    }

    fn send(&mut self, candidate: usize) {
        let y = self.link.measure(self.ledger.m(), candidate);
        self.recorder.pilot(candidate);
        self.ledger
            .append_measurement(candidate, y)
            .expect("protocols only address candidates in 1..=K²");
    }

    fn send_round_robin(&mut self) {
        self.send(round_robin_candidate(self.m(), self.config.k));
    }

    fn sweep(&mut self) {
        for _ in 0..self.config.k * self.config.k {
            self.send_round_robin();
        }
    }

    fn state(&self) -> EstimatorState {
        self.ledger
            .posteriors(self.config.noise_var)
            .expect("validated noise variance and non-empty ledger")
    }

    fn report_aod(&mut self, candidate: usize) -> usize {
        let (k_t, _) = candidate_to_angles(candidate, self.config.k).expect("valid candidate");
        self.recorder
            .feedback(FeedbackKind::Aod, k_t - 1, aod_report_bits(self.config.k));
        k_t
    }

    fn finish(self, protocol: ProtocolKind, estimate: usize, outage: bool) -> ProtocolTrace {
        let truth = self.link.true_candidate();
        self.recorder.finish(
            protocol,
            self.config.stage,
            self.config.k,
            estimate,
            truth,
            outage,
        )
    }
}

/// K² sweep, pick the strongest observation, report its AoD.
pub fn run_fixed<L: PilotLink>(link: &mut L, config: &ProtocolConfig) -> ProtocolTrace {
    let mut session = Session::new(link, config);
    session.sweep();
    let observations = session.ledger.observations();
    let mut best = 0;
    for (i, y) in observations.iter().enumerate() {
        if y.norm_sqr() > observations[best].norm_sqr() {
            best = i;
        }
    }
    let estimate = session.ledger.rows()[best];
    session.report_aod(estimate);
    session.finish(ProtocolKind::Fixed, estimate, false)
}

/// Round-robin pilots until the MAP posterior exceeds `1 - γ`, then a single
/// AoD report. Gives up at `m_max` without feedback.
pub fn run_optimal<L: PilotLink>(link: &mut L, config: &ProtocolConfig) -> ProtocolTrace {
    let mut session = Session::new(link, config);
    session.sweep();
    loop {
        let state = session.state();
        if state.map_posterior() > config.threshold() {
            session.report_aod(state.map_index);
            return session.finish(ProtocolKind::Optimal, state.map_index, false);
        }
        if session.m() >= config.m_max {
            return session.finish(ProtocolKind::Optimal, state.map_index, true);
        }
        session.send_round_robin();
    }
}

/// Same pilot schedule as [`run_optimal`], but every extra pilot is
/// requested with a one-bit continue message.
pub fn run_rate_adaptive<L: PilotLink>(link: &mut L, config: &ProtocolConfig) -> ProtocolTrace {
    let mut session = Session::new(link, config);
    session.sweep();
    loop {
        let state = session.state();
        if state.map_posterior() > config.threshold() {
            session.report_aod(state.map_index);
            return session.finish(ProtocolKind::RateAdaptive, state.map_index, false);
        }
        if session.m() >= config.m_max {
            return session.finish(ProtocolKind::RateAdaptive, state.map_index, true);
        }
        session.recorder.feedback(FeedbackKind::Continue, 1, 1);
        session.send_round_robin();
    }
}

/// Coefficient-driven protocol.
///
/// The transmitter keeps sending round-robin pilots with no feedback until
/// the pilot count reaches the capacity bound computed from the running
/// coefficient estimate. From then on the receiver checks the posterior: if
/// it already clears `1 - γ` it sends the AoD plus a stop bit; otherwise it
/// reports the AoD and the transmitter switches to pilots on that AoD beam,
/// received on the current MAP AoA beam, until the target is met.
pub fn run_raf<L: PilotLink>(link: &mut L, config: &ProtocolConfig) -> ProtocolTrace {
    let k = config.k;
    let mut session = Session::new(link, config);
    session.sweep();

    let mut state = session.state();
    loop {
        let alpha_hat = session
            .ledger
            .estimate_alpha(state.map_index)
            .expect("every candidate is measured during the sweep");
        let snr = snr_stage(
            alpha_hat,
            config.pilot_power,
            config.noise_var,
            config.stage,
            k,
        );
        let bound = measurement_lower_bound(snr, k, config.m_max);
        if session.m() >= bound.count() {
            break;
        }
        session.send_round_robin();
        state = session.state();
    }

    let stop = |mut session: Session<'_, L>, estimate: usize| {
        let (k_t, _) = candidate_to_angles(estimate, k).expect("valid candidate");
        session
            .recorder
            .feedback(FeedbackKind::Aod, k_t - 1, aod_report_bits(k));
        session.recorder.feedback(FeedbackKind::Stop, 1, 1);
        session.finish(ProtocolKind::Raf, estimate, false)
    };

    if state.map_posterior() > config.threshold() {
        return stop(session, state.map_index);
    }
    if session.m() >= config.m_max {
        return session.finish(ProtocolKind::Raf, state.map_index, true);
    }

    let mut reported_aod = session.report_aod(state.map_index);
    loop {
        let (_, k_r) = candidate_to_angles(state.map_index, k).expect("valid candidate");
        session.send(angles_to_candidate(reported_aod, k_r, k));
        state = session.state();
        if state.map_posterior() > config.threshold() {
            return stop(session, state.map_index);
        }
        if session.m() >= config.m_max {
            return session.finish(ProtocolKind::Raf, state.map_index, true);
        }
        let (map_aod, _) = candidate_to_angles(state.map_index, k).expect("valid candidate");
        if map_aod != reported_aod || config.directed_feedback == DirectedFeedback::EveryPilot {
            reported_aod = session.report_aod(state.map_index);
        }
    }
}

/// Runs `protocol` for one stage.
pub fn run_protocol<L: PilotLink>(
    protocol: ProtocolKind,
    link: &mut L,
    config: &ProtocolConfig,
) -> ProtocolTrace {
    match protocol {
        ProtocolKind::Fixed => run_fixed(link, config),
        ProtocolKind::Optimal => run_optimal(link, config),
        ProtocolKind::RateAdaptive => run_rate_adaptive(link, config),
        ProtocolKind::Raf => run_raf(link, config),
    }
}

/// Runs `config.stage` in isolation, with the search windows placed on the
/// blocks that contain the true AoD and AoA (earlier stages assumed correct).
pub fn run_single_stage(
    protocol: ProtocolKind,
    channel: &ChannelRealization,
    codebook: &HierarchicalCodebook,
    config: &ProtocolConfig,
    noise: &PairedNoise,
) -> Result<ProtocolTrace> {
    config.validate()?;
    check_codebook(codebook, config)?;
    let stage = config.stage;
    let stage_cb = codebook.stage_codebook(
        stage,
        codebook.window_block(stage, channel.aod_index),
        codebook.window_block(stage, channel.aoa_index),
    )?;
    let mut link = StageLink::new(
        channel,
        &stage_cb,
        config.pilot_power,
        noise.for_stage(stage),
    );
    Ok(run_protocol(protocol, &mut link, config))
}

/// Runs every stage in turn, narrowing the windows to the estimated
/// subranges after each one. A wrong decision leaves the truth outside all
/// later windows, so every later stage is counted as incorrect.
pub fn run_multistage(
    protocol: ProtocolKind,
    channel: &ChannelRealization,
    codebook: &HierarchicalCodebook,
    config: &ProtocolConfig,
    noise: &PairedNoise,
) -> Result<Vec<ProtocolTrace>> {
    config.validate()?;
    check_codebook(codebook, config)?;
    let k = config.k;
    let (mut tx_block, mut rx_block) = (0, 0);
    let mut traces = Vec::with_capacity(codebook.n_stages());
    for stage in 1..=codebook.n_stages() {
        let stage_cb = codebook.stage_codebook(stage, tx_block, rx_block)?;
        let stage_config = ProtocolConfig { stage, ..*config };
        let mut link = StageLink::new(
            channel,
            &stage_cb,
            config.pilot_power,
            noise.for_stage(stage),
        );
        let trace = run_protocol(protocol, &mut link, &stage_config);
        let (k_t, k_r) = candidate_to_angles(trace.outcome.estimate, k)?;
        tx_block = tx_block * k + k_t - 1;
        rx_block = rx_block * k + k_r - 1;
        traces.push(trace);
    }
    Ok(traces)
}

fn check_codebook(codebook: &HierarchicalCodebook, config: &ProtocolConfig) -> Result<()> {
    if codebook.k() != config.k {
        return Err(Error::InvalidConfig(format!(
            "codebook branching factor {} differs from protocol K = {}",
            codebook.k(),
            config.k
        )));
    }
    if config.stage > codebook.n_stages() {
        return Err(Error::StageOutOfRange {
            stage: config.stage,
            stages: codebook.n_stages(),
        });
    }
    Ok(())
}
