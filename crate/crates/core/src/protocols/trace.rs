use std::fmt;
use std::io::Write;

use super::ProtocolKind;
use crate::estimator::candidate_to_angles;

/// Why a feedback bit was sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackKind {
    /// Request for one more pilot.
    Continue,
    /// Part of an AoD subrange report.
    Aod,
    /// Tells the transmitter to stop sending pilots.
    Stop,
}

impl fmt::Display for FeedbackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackKind::Continue => "continue",
            FeedbackKind::Aod => "aod",
            FeedbackKind::Stop => "stop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Pilot { candidate: usize },
    Feedback { kind: FeedbackKind, bit: bool },
}

/// One occupied time slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub slot: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    /// Final MAP candidate (1-based).
    pub estimate: usize,
    pub truth: Option<usize>,
    pub correct: bool,
    pub outage: bool,
}

/// Everything one protocol run did in one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolTrace {
    pub protocol: ProtocolKind,
    pub stage: usize,
    pub k: usize,
    pub events: Vec<TraceEvent>,
    pub measurements: usize,
    pub feedback_bits: usize,
    pub time_slots: usize,
    pub outcome: Outcome,
}

impl ProtocolTrace {
    /// Checks `time_slots = measurements + feedback_bits` and that the event
    /// log agrees with the totals.
    pub fn accounting_holds(&self) -> bool {
        let pilots = self
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Pilot { .. }))
            .count();
        let bits = self.events.len() - pilots;
        let slots_in_order = self.events.iter().enumerate().all(|(i, e)| e.slot == i);
        self.time_slots == self.measurements + self.feedback_bits
            && pilots == self.measurements
            && bits == self.feedback_bits
            && self.events.len() == self.time_slots
            && slots_in_order
    }

    /// Number of feedback bits of the given kind.
    pub fn bits_of(&self, kind: FeedbackKind) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Feedback { kind: k, .. } if k == kind))
            .count()
    }

    /// Line-oriented event log: a `#` header, one tab-separated line per
    /// slot (`slot`, `pilot`/`feedback`, payload), and a `#` summary.
    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# protocol={} stage={} k={}",
            self.protocol, self.stage, self.k
        )?;
        for event in &self.events {
            match event.kind {
                EventKind::Pilot { candidate } => {
                    let (k_t, k_r) = candidate_to_angles(candidate, self.k)
                        .expect("trace candidates are in range");
                    writeln!(
                        out,
                        "{}\tpilot\tcandidate={candidate} k_t={k_t} k_r={k_r}",
                        event.slot
                    )?;
                }
                EventKind::Feedback { kind, bit } => {
                    writeln!(out, "{}\tfeedback\t{kind}={}", event.slot, u8::from(bit))?;
                }
            }
        }
        let truth = self
            .outcome
            .truth
            .map_or_else(|| "none".to_string(), |t| t.to_string());
        writeln!(
            out,
            "# measurements={} feedback_bits={} time_slots={} estimate={} truth={} correct={} outage={}",
            self.measurements,
            self.feedback_bits,
            self.time_slots,
            self.outcome.estimate,
            truth,
            self.outcome.correct,
            self.outcome.outage
        )
    }
}

/// `⌈log₂ K⌉`, the size of one AoD report.
pub fn aod_report_bits(k: usize) -> usize {
    (usize::BITS - (k - 1).leading_zeros()) as usize
}

/// Accumulates events while a protocol runs.
#[derive(Debug)]
pub(crate) struct Recorder {
    events: Vec<TraceEvent>,
    measurements: usize,
    feedback_bits: usize,
}

impl Recorder {
    pub fn new() -> Self {
        Self {
            events: Vec::new(),
            measurements: 0,
            feedback_bits: 0,
        }
    }

    fn push(&mut self, kind: EventKind) {
        let slot = self.events.len();
        self.events.push(TraceEvent { slot, kind });
    }

    pub fn pilot(&mut self, candidate: usize) {
        self.measurements += 1;
        self.push(EventKind::Pilot { candidate });
    }

    /// Sends `value` as `width` bits, most significant first.
    pub fn feedback(&mut self, kind: FeedbackKind, value: usize, width: usize) {
        for i in (0..width).rev() {
            self.feedback_bits += 1;
            self.push(EventKind::Feedback {
                kind,
                bit: (value >> i) & 1 == 1,
            });
        }
    }

    pub fn finish(
        self,
        protocol: ProtocolKind,
        stage: usize,
        k: usize,
        estimate: usize,
        truth: Option<usize>,
        outage: bool,
    ) -> ProtocolTrace {
        let correct = !outage && truth == Some(estimate);
        ProtocolTrace {
            protocol,
            stage,
            k,
            time_slots: self.measurements + self.feedback_bits,
            events: self.events,
            measurements: self.measurements,
            feedback_bits: self.feedback_bits,
            outcome: Outcome {
                estimate,
                truth,
                correct,
                outage,
            },
        }
    }
}
