//! Maximum-likelihood detection of the active (AoD, AoA) subrange pair.
//!
//! After `M` pilots the observations are modelled as
//! `y ~ CN(0, c g_d g_d^H + N0 I)` under candidate `d`, where `g_d` marks
//! the pilots sent on candidate `d` and `c = P N² C_s⁴ E|α|²`. The
//! covariance is a rank-1 update of a scaled identity, so the determinant and
//! the quadratic form reduce to running per-candidate sums.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Maps a 1-based candidate `d ∈ 1..=K²` to its 1-based (AoD, AoA) subrange
/// pair `(k_t, k_r)`.
pub fn candidate_to_angles(d: usize, k: usize) -> Result<(usize, usize)> {
    if d == 0 || d > k * k {
        return Err(Error::CandidateOutOfRange {
            candidate: d,
            max: k * k,
        });
    }
    let k_t = d.div_ceil(k);
    let k_r = d - k * (k_t - 1);
    Ok((k_t, k_r))
}

/// Inverse of [`candidate_to_angles`].
pub fn angles_to_candidate(k_t: usize, k_r: usize, k: usize) -> usize {
    debug_assert!((1..=k).contains(&k_t) && (1..=k).contains(&k_r));
    k * (k_t - 1) + k_r
}

/// Candidate probed by the `index`-th (0-based) pilot of the round-robin
/// schedule that starts with the initial K² sweep.
pub fn round_robin_candidate(index: usize, k: usize) -> usize {
    index % (k * k) + 1
}

/// Pilot observations and the candidate each one was measured on.
#[derive(Debug, Clone)]
pub struct ObservationLedger {
    k: usize,
    gain_constant: f64,
    signal_variance: f64,
    y: Vec<Complex64>,
    rows: Vec<usize>,
    sums: Vec<Complex64>,
    counts: Vec<usize>,
    energy: f64,
}

impl ObservationLedger {
    /// `gain_constant` is the noiseless per-pilot amplitude scale
    /// `√P N C_s²`; `alpha_prior_variance` is `E|α|²`.
    pub fn new(k: usize, gain_constant: f64, alpha_prior_variance: f64) -> Self {
        let n = k * k;
        Self {
            k,
            gain_constant,
            signal_variance: gain_constant * gain_constant * alpha_prior_variance,
            y: Vec::new(),
            rows: Vec::new(),
            sums: vec![Complex64::new(0.0, 0.0); n],
            counts: vec![0; n],
            energy: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_candidates(&self) -> usize {
        self.k * self.k
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn observations(&self) -> &[Complex64] {
        &self.y
    }

    /// 1-based candidate of each recorded pilot.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn gain_constant(&self) -> f64 {
        self.gain_constant
    }

    /// `c = P N² C_s⁴ E|α|²`, the signal variance on the active candidate.
    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    /// Number of pilots recorded on candidate `d`.
    pub fn count(&self, d: usize) -> usize {
        self.counts[d - 1]
    }

    /// `Σ y` over the pilots recorded on candidate `d`.
    pub fn sum(&self, d: usize) -> Complex64 {
        self.sums[d - 1]
    }

    pub fn append_measurement(&mut self, candidate_row: usize, value: Complex64) -> Result<()> {
        if candidate_row == 0 || candidate_row > self.n_candidates() {
            return Err(Error::CandidateOutOfRange {
                candidate: candidate_row,
                max: self.n_candidates(),
            });
        }
        self.y.push(value);
        self.rows.push(candidate_row);
        self.sums[candidate_row - 1] += value;
        self.counts[candidate_row - 1] += 1;
        self.energy += value.norm_sqr();
        Ok(())
    }

    /// `log f(y | d)` including every constant.
    pub fn log_likelihood(&self, candidate: usize, noise_var: f64) -> Result<f64> {
        if !(noise_var > 0.0) {
            return Err(Error::NonPositiveNoise(noise_var));
        }
        if candidate == 0 || candidate > self.n_candidates() {
            return Err(Error::CandidateOutOfRange {
                candidate,
                max: self.n_candidates(),
            });
        }
        let m = self.m() as f64;
        Ok(-m * PI.ln() - m * noise_var.ln() - self.energy / noise_var
            + self.candidate_term(candidate - 1, noise_var))
    }

    // Candidate-dependent part: c|g^H y|² / (N0 (N0 + c m_d)) - ln(1 + c m_d / N0).
    fn candidate_term(&self, idx: usize, noise_var: f64) -> f64 {
        let c = self.signal_variance;
        let m_d = self.counts[idx] as f64;
        let denom = noise_var + c * m_d;
        c * self.sums[idx].norm_sqr() / (noise_var * denom) - (c * m_d / noise_var).ln_1p()
    }

    /// Posterior over all K² candidates under a uniform prior.
    pub fn posteriors(&self, noise_var: f64) -> Result<EstimatorState> {
        if !(noise_var > 0.0) {
            return Err(Error::NonPositiveNoise(noise_var));
        }
        if self.m() == 0 {
            return Err(Error::InvalidConfig(
                "posterior requested before any measurement".into(),
            ));
        }
        let m = self.m() as f64;
        let shared = -m * PI.ln() - m * noise_var.ln() - self.energy / noise_var;
        let log_likelihoods: Vec<f64> = (0..self.n_candidates())
            .map(|i| shared + self.candidate_term(i, noise_var))
            .collect();
        Ok(EstimatorState::from_log_likelihoods(log_likelihoods))
    }

    /// `α̂ = mean(y on candidate d) / (√P N C_s²)`.
    pub fn estimate_alpha(&self, map_index: usize) -> Result<Complex64> {
        if map_index == 0 || map_index > self.n_candidates() {
            return Err(Error::CandidateOutOfRange {
                candidate: map_index,
                max: self.n_candidates(),
            });
        }
        let count = self.counts[map_index - 1];
        if count == 0 {
            return Err(Error::NoObservations(map_index));
        }
        Ok(self.sums[map_index - 1] / (count as f64 * self.gain_constant))
    }
}

/// Log-likelihoods, normalised posteriors and the MAP candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub log_likelihoods: Vec<f64>,
    pub posteriors: Vec<f64>,
    /// 1-based; ties go to the lowest index.
    pub map_index: usize,
}

impl EstimatorState {
    pub fn from_log_likelihoods(log_likelihoods: Vec<f64>) -> Self {
        let mut map = 0;
        for (i, &ll) in log_likelihoods.iter().enumerate() {
            if ll > log_likelihoods[map] {
                map = i;
            }
        }
        let peak = log_likelihoods[map];
        let weights: Vec<f64> = log_likelihoods.iter().map(|ll| (ll - peak).exp()).collect();
        let total: f64 = weights.iter().sum();
        let posteriors = weights.into_iter().map(|w| w / total).collect();
        Self {
            log_likelihoods,
            posteriors,
            map_index: map + 1,
        }
    }

    pub fn map_posterior(&self) -> f64 {
        self.posteriors[self.map_index - 1]
    }
}

/// `SNR_s = |α̂|² P K^(2s-2) / N0`.
pub fn snr_stage(
    alpha_hat: Complex64,
    pilot_power: f64,
    noise_var: f64,
    stage: usize,
    k: usize,
) -> f64 {
    let exponent = 2 * stage as i32 - 2;
    alpha_hat.norm_sqr() * pilot_power * (k as f64).powi(exponent) / noise_var
}

/// Outcome of the capacity bound on the number of pilots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementBound {
    /// `⌈K² / log₂(1 + SNR)⌉`, clamped to `K²..=m_max`.
    Measurements(usize),
    /// The bound reached or exceeded `m_max` (including `SNR = 0`).
    OutageCapped(usize),
}

impl MeasurementBound {
    pub fn count(self) -> usize {
        match self {
            MeasurementBound::Measurements(m) | MeasurementBound::OutageCapped(m) => m,
        }
    }

    pub fn is_outage_capped(self) -> bool {
        matches!(self, MeasurementBound::OutageCapped(_))
    }
}

/// Minimum pilot count implied by `K²/M ≤ log₂(1 + SNR)`.
pub fn measurement_lower_bound(snr: f64, k: usize, m_max: usize) -> MeasurementBound {
    let floor = k * k;
    let rate = (snr.max(0.0)).ln_1p() / std::f64::consts::LN_2;
    if !(rate > 0.0) {
        return MeasurementBound::OutageCapped(m_max);
    }
    let raw = (floor as f64 / rate).ceil();
    if raw >= m_max as f64 {
        return MeasurementBound::OutageCapped(m_max);
    }
    MeasurementBound::Measurements((raw as usize).max(floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense evaluation: build Σ_d explicitly, take its determinant and
    /// inverse, and evaluate the CSCG density.
    fn dense_log_likelihood(ledger: &ObservationLedger, d: usize, n0: f64) -> f64 {
        let m = ledger.m();
        let c = ledger.signal_variance();
        let g = DVector::from_fn(m, |i, _| {
            Complex64::from(if ledger.rows()[i] == d { 1.0 } else { 0.0 })
        });
        let sigma: DMatrix<Complex64> =
            (&g * g.adjoint()) * Complex64::from(c) + DMatrix::identity(m, m) * Complex64::from(n0);
        let det = sigma.determinant().re;
        let inv = sigma.try_inverse().unwrap();
        let y = DVector::from_column_slice(ledger.observations());
        let quad = (y.adjoint() * inv * &y)[(0, 0)].re;
        -(m as f64) * PI.ln() - det.ln() - quad
    }

    fn random_ledger(rng: &mut ChaCha8Rng, k: usize, m: usize) -> ObservationLedger {
        let gain = rng.random_range(0.1..3.0);
        let mut ledger = ObservationLedger::new(k, gain, 1.0);
        for _ in 0..m {
            let row = rng.random_range(1..=k * k);
            let y = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            ledger.append_measurement(row, y).unwrap();
        }
        ledger
    }

    #[test]
    fn angles_from_candidates() {
        assert_eq!(candidate_to_angles(1, 2).unwrap(), (1, 1));
        assert_eq!(candidate_to_angles(2, 2).unwrap(), (1, 2));
        assert_eq!(candidate_to_angles(3, 2).unwrap(), (2, 1));
        assert_eq!(candidate_to_angles(4, 2).unwrap(), (2, 2));
        assert_eq!(candidate_to_angles(9, 3).unwrap(), (3, 3));
        assert!(candidate_to_angles(0, 2).is_err());
        assert!(candidate_to_angles(5, 2).is_err());
    }

    #[test]
    fn candidate_mapping_is_bijective() {
        for k in 2..=5 {
            let mut seen = std::collections::HashSet::new();
            for d in 1..=k * k {
                let (t, r) = candidate_to_angles(d, k).unwrap();
                assert!((1..=k).contains(&t) && (1..=k).contains(&r));
                assert_eq!(angles_to_candidate(t, r, k), d);
                assert!(seen.insert((t, r)));
            }
        }
    }

    #[test]
    fn sweep_rows_are_identity_order() {
        let mut ledger = ObservationLedger::new(2, 1.0, 1.0);
        for i in 0..4 {
            ledger
                .append_measurement(round_robin_candidate(i, 2), Complex64::from(i as f64))
                .unwrap();
        }
        assert_eq!(ledger.rows(), &[1, 2, 3, 4]);
        assert_eq!(round_robin_candidate(4, 2), 1);
        assert_eq!(round_robin_candidate(6, 2), 3);
        assert!(ledger.append_measurement(5, Complex64::from(0.0)).is_err());
    }

    #[test]
    fn rank_one_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.random_range(2..=3);
            let m = rng.random_range(1..=20);
            let ledger = random_ledger(&mut rng, k, m);
            let n0 = rng.random_range(0.2..2.0);
            for d in 1..=k * k {
                let fast = ledger.log_likelihood(d, n0).unwrap();
                let dense = dense_log_likelihood(&ledger, d, n0);
                assert!(((fast - dense) / dense).abs() < 1e-9, "{fast} vs {dense}");
            }
        }
    }

    #[test]
    fn unmeasured_candidate_is_pure_noise() {
        let mut ledger = ObservationLedger::new(2, 1.5, 1.0);
        ledger
            .append_measurement(1, Complex64::new(0.3, -0.4))
            .unwrap();
        ledger
            .append_measurement(2, Complex64::new(1.0, 0.2))
            .unwrap();
        let n0 = 0.7;
        let noise_only: f64 = ledger
            .observations()
            .iter()
            .map(|y| -(PI * n0).ln() - y.norm_sqr() / n0)
            .sum();
        assert!((ledger.log_likelihood(3, n0).unwrap() - noise_only).abs() < 1e-12);
    }

    #[test]
    fn zero_observations_depend_only_on_counts() {
        let mut ledger = ObservationLedger::new(2, 1.0, 1.0);
        for row in [1, 1, 2, 3, 3, 3] {
            ledger
                .append_measurement(row, Complex64::from(0.0))
                .unwrap();
        }
        let n0 = 0.5;
        let c = ledger.signal_variance();
        let base = ledger.log_likelihood(4, n0).unwrap();
        for (d, m_d) in [(1, 2.0), (2, 1.0), (3, 3.0)] {
            let diff = base - ledger.log_likelihood(d, n0).unwrap();
            assert!((diff - (1.0 + c * m_d / n0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_posterior_for_silent_sweep() {
        let mut ledger = ObservationLedger::new(2, 1.0, 1.0);
        for d in 1..=4 {
            ledger.append_measurement(d, Complex64::from(0.0)).unwrap();
        }
        let state = ledger.posteriors(1.0).unwrap();
        for p in &state.posteriors {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(state.map_index, 1);
    }

    #[test]
    fn brute_force_single_spike() {
        // K = 2, M = 4, y = (g, 0, 0, 0): compare against normalising the
        // dense densities directly.
        for g in [0.1, 0.8, 2.5, 6.0] {
            let mut ledger = ObservationLedger::new(2, 1.2, 1.0);
            for (d, y) in [(1, g), (2, 0.0), (3, 0.0), (4, 0.0)] {
                ledger
                    .append_measurement(d, Complex64::new(y, 0.0))
                    .unwrap();
            }
            let n0 = 0.9;
            let dens: Vec<f64> = (1..=4)
                .map(|d| dense_log_likelihood(&ledger, d, n0).exp())
                .collect();
            let total: f64 = dens.iter().sum();
            let state = ledger.posteriors(n0).unwrap();
            for (p, dense) in state.posteriors.iter().zip(&dens) {
                assert!((p - dense / total).abs() < 1e-12);
            }
            assert_eq!(state.map_index, 1);
        }
    }

    #[test]
    fn noiseless_sweep_picks_truth() {
        let gain = 2.0;
        let alpha = Complex64::new(0.4, -0.9);
        let mut ledger = ObservationLedger::new(2, gain, 1.0);
        for d in 1..=4 {
            let y = if d == 3 {
                alpha * gain
            } else {
                Complex64::from(0.0)
            };
            ledger.append_measurement(d, y).unwrap();
        }
        let state = ledger.posteriors(1e-9).unwrap();
        assert_eq!(state.map_index, 3);
        assert!(state.map_posterior() > 1.0 - 1e-12);
        assert!((ledger.estimate_alpha(3).unwrap() - alpha).norm() < 1e-10);
    }

    #[test]
    fn long_ledgers_do_not_underflow() {
        let mut ledger = ObservationLedger::new(2, 1.0, 1.0);
        for i in 0..400 {
            ledger
                .append_measurement(round_robin_candidate(i, 2), Complex64::new(3.0, 1.0))
                .unwrap();
        }
        let state = ledger.posteriors(1.0).unwrap();
        assert!(state.posteriors.iter().all(|p| p.is_finite()));
        assert!((state.posteriors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_estimate_examples() {
        let mut ledger = ObservationLedger::new(2, 1.0, 1.0);
        ledger
            .append_measurement(2, Complex64::new(1.0, 1.0))
            .unwrap();
        // P = 1, N = 2, C_s² = 1/2 gives unit gain.
        assert_eq!(ledger.estimate_alpha(2).unwrap(), Complex64::new(1.0, 1.0));
        assert!(matches!(
            ledger.estimate_alpha(1),
            Err(Error::NoObservations(1))
        ));

        let mut zeros = ObservationLedger::new(2, 3.0, 1.0);
        zeros.append_measurement(1, Complex64::from(0.0)).unwrap();
        assert_eq!(zeros.estimate_alpha(1).unwrap(), Complex64::from(0.0));
    }

    #[test]
    fn stage_snr_examples() {
        let one = Complex64::from(1.0);
        assert_eq!(snr_stage(one, 1.0, 1.0, 1, 2), 1.0);
        assert_eq!(snr_stage(one, 1.0, 1.0, 2, 2), 4.0);
        assert_eq!(snr_stage(Complex64::from(0.0), 5.0, 1.0, 3, 2), 0.0);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(
            measurement_lower_bound(1.0, 2, 264),
            MeasurementBound::Measurements(4)
        );
        assert_eq!(
            measurement_lower_bound(3.0, 2, 264),
            MeasurementBound::Measurements(4)
        );
        assert_eq!(
            measurement_lower_bound(0.0, 2, 264),
            MeasurementBound::OutageCapped(264)
        );
        assert_eq!(
            measurement_lower_bound(0.1, 2, 264),
            MeasurementBound::Measurements(30)
        );
        assert_eq!(
            measurement_lower_bound(1e-3, 2, 264),
            MeasurementBound::OutageCapped(264)
        );
    }

    #[test]
    fn non_positive_noise_is_rejected() {
        let mut ledger = ObservationLedger::new(2, 1.0, 1.0);
        ledger.append_measurement(1, Complex64::from(1.0)).unwrap();
        assert!(matches!(
            ledger.log_likelihood(1, 0.0),
            Err(Error::NonPositiveNoise(_))
        ));
        assert!(ledger.posteriors(-1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn ledger_strategy() -> impl Strategy<Value = (usize, f64, Vec<(usize, f64, f64)>)> {
            (2usize..=3, 0.05f64..4.0).prop_flat_map(|(k, gain)| {
                let entries = prop::collection::vec((1..=k * k, -3.0f64..3.0, -3.0f64..3.0), 1..32);
                (Just(k), Just(gain), entries)
            })
        }

        fn build(k: usize, gain: f64, entries: &[(usize, f64, f64)]) -> ObservationLedger {
            let mut ledger = ObservationLedger::new(k, gain, 1.0);
            for &(d, re, im) in entries {
                ledger
                    .append_measurement(d, Complex64::new(re, im))
                    .unwrap();
            }
            ledger
        }

        proptest! {
            #[test]
            fn posteriors_sum_to_one((k, gain, entries) in ledger_strategy(), n0 in 0.01f64..5.0) {
                let state = build(k, gain, &entries).posteriors(n0).unwrap();
                let total: f64 = state.posteriors.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(state.posteriors.iter().all(|p| *p >= 0.0));
                let best = state.posteriors.iter().cloned().fold(f64::MIN, f64::max);
                prop_assert_eq!(state.posteriors[state.map_index - 1], best);
            }

            #[test]
            fn global_phase_is_irrelevant((k, gain, entries) in ledger_strategy(), phase in 0.0f64..6.3) {
                let rot = Complex64::from_polar(1.0, phase);
                let a = build(k, gain, &entries).posteriors(1.0).unwrap();
                let rotated: Vec<_> = entries.iter().map(|&(d, re, im)| {
                    let z = Complex64::new(re, im) * rot;
                    (d, z.re, z.im)
                }).collect();
                let b = build(k, gain, &rotated).posteriors(1.0).unwrap();
                for (p, q) in a.posteriors.iter().zip(&b.posteriors) {
                    prop_assert!((p - q).abs() < 1e-9);
                }
            }

            #[test]
            fn aligned_pilot_never_lowers_truth((k, gain, entries) in ledger_strategy(), truth_seed in 0usize..9, phase in 0.0f64..6.3) {
                let truth = truth_seed % (k * k) + 1;
                let alpha = Complex64::from_polar(1.0, phase);
                // Noiseless history consistent with the true candidate.
                let clean: Vec<_> = entries.iter().map(|&(d, _, _)| {
                    let z = if d == truth { alpha * gain } else { Complex64::from(0.0) };
                    (d, z.re, z.im)
                }).collect();
                // Noiseless regime: N0 far below the per-pilot signal power.
                let n0 = gain * gain * 1e-3;
                let mut ledger = build(k, gain, &clean);
                let before = ledger.posteriors(n0).unwrap().posteriors[truth - 1];
                ledger.append_measurement(truth, alpha * gain).unwrap();
                let after = ledger.posteriors(n0).unwrap().posteriors[truth - 1];
                prop_assert!(after >= before - 1e-12);
            }

            #[test]
            fn bound_is_nonincreasing(a in 0.0f64..1e4, b in 0.0f64..1e4, k in 2usize..5) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(measurement_lower_bound(lo, k, 264).count() >= measurement_lower_bound(hi, k, 264).count());
            }
        }
    }
}
