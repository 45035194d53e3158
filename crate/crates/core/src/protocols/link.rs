//! Pilot transport between the protocols and the channel.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{complex_gaussian, ChannelRealization};
use crate::codebook::StageCodebook;

/// Source of pilot observations for one stage.
///
/// `index` is the 0-based pilot number within the stage and `candidate` the
/// 1-based beam pair the pilot is sent and received on.
pub trait PilotLink {
    fn k(&self) -> usize;

    /// `√P N C_s²`, the noiseless amplitude seen on the active candidate per
    /// unit channel coefficient.
    fn gain_constant(&self) -> f64;

    /// Candidate that actually contains the path, if it lies in this stage's
    /// search windows.
    fn true_candidate(&self) -> Option<usize>;

    fn measure(&mut self, index: usize, candidate: usize) -> Complex64;
}

// Words of keystream reserved per pilot; a complex normal needs at most a few.
const WORDS_PER_PILOT: u128 = 64;

/// Measurement noise addressed by `(stage, pilot index, candidate)` instead
/// of by draw order, so protocols that take different pilot paths still see
/// identical noise wherever their paths coincide.
#[derive(Debug, Clone)]
pub struct PairedNoise {
    base: ChaCha8Rng,
    variance: f64,
    stream_offset: u64,
}

impl PairedNoise {
    pub fn new(seed: u64, variance: f64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
            variance,
            stream_offset: 0,
        }
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Independent noise for stage `stage` of a multistage run.
    pub fn for_stage(&self, stage: usize) -> Self {
        Self {
            base: self.base.clone(),
            variance: self.variance,
            stream_offset: (stage as u64) << 32,
        }
    }

    /// Effective noise `w^H n` on a unit-norm combiner, which is
    /// `CN(0, N0)` whatever the combiner.
    pub fn sample(&self, index: usize, candidate: usize) -> Complex64 {
        let mut rng = self.base.clone();
        rng.set_stream(self.stream_offset + candidate as u64);
        rng.set_word_pos(index as u128 * WORDS_PER_PILOT);
        complex_gaussian(&mut rng, self.variance)
    }
}

/// Pilots over a drawn channel with one stage's codebook.
#[derive(Debug, Clone)]
pub struct StageLink {
    k: usize,
    gain_constant: f64,
    responses: Vec<Complex64>,
    truth: Option<usize>,
    noise: PairedNoise,
}

impl StageLink {
    pub fn new(
        channel: &ChannelRealization,
        codebook: &StageCodebook,
        pilot_power: f64,
        noise: PairedNoise,
    ) -> Self {
        let amplitude = pilot_power.sqrt();
        let responses = (1..=codebook.n_candidates())
            .map(|d| {
                let (f, w) = codebook.beams_for(d);
                channel.effective_gain(f, w) * amplitude
            })
            .collect();
        let n = channel.n_antennas() as f64;
        Self {
            k: codebook.k,
            gain_constant: amplitude * n * codebook.c_s * codebook.c_s,
            responses,
            truth: codebook.candidate_for(channel.aod_index, channel.aoa_index),
            noise,
        }
    }

    /// Noiseless `√P w^H H f` for each candidate.
    pub fn responses(&self) -> &[Complex64] {
        &self.responses
    }
}

impl PilotLink for StageLink {
    fn k(&self) -> usize {
        self.k
    }

    fn gain_constant(&self) -> f64 {
        self.gain_constant
    }

    fn true_candidate(&self) -> Option<usize> {
        self.truth
    }

    fn measure(&mut self, index: usize, candidate: usize) -> Complex64 {
        self.responses[candidate - 1] + self.noise.sample(index, candidate)
    }
}
