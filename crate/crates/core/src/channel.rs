//! Single-path ULA channel: steering vectors, channel draws and beamformed
//! pilot observations.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::codebook::AngleGrid;
use crate::error::{Error, Result};
use crate::{ComplexMatrix, ComplexVector};

/// Uniform linear array shared by transmitter and receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    n_antennas: usize,
    spacing_over_wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n_antennas: usize, spacing_over_wavelength: f64) -> Result<Self> {
        if n_antennas == 0 {
            return Err(Error::InvalidGeometry(
                "array needs at least one antenna".into(),
            ));
        }
        if !(spacing_over_wavelength > 0.0) || !spacing_over_wavelength.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "element spacing must be positive, got {spacing_over_wavelength}"
            )));
        }
        Ok(Self {
            n_antennas,
            spacing_over_wavelength,
        })
    }

    /// Half-wavelength spaced array.
    pub fn half_wavelength(n_antennas: usize) -> Result<Self> {
        Self::new(n_antennas, 0.5)
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn spacing_over_wavelength(&self) -> f64 {
        self.spacing_over_wavelength
    }
}

/// Additive white Gaussian noise with per-antenna variance `n0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    n0: f64,
}

impl NoiseModel {
    pub fn new(n0: f64) -> Result<Self> {
        if !(n0 > 0.0) || !n0.is_finite() {
            return Err(Error::NonPositiveNoise(n0));
        }
        Ok(Self { n0 })
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }
}

/// Array response toward `angle` (radians from the array axis).
///
/// Element `n` is `exp(-j 2π (d/λ) n cos(angle)) / √N`, so the result always
/// has unit Euclidean norm.
pub fn steering_vector(geom: &ArrayGeometry, angle: f64) -> ComplexVector {
    steering_vector_from_cosine(geom, angle.cos())
}

/// Same as [`steering_vector`] but parameterised directly by `cos(angle)`.
pub fn steering_vector_from_cosine(geom: &ArrayGeometry, cosine: f64) -> ComplexVector {
    let n = geom.n_antennas;
    let scale = 1.0 / (n as f64).sqrt();
    let step = -2.0 * PI * geom.spacing_over_wavelength * cosine;
    ComplexVector::from_iterator(
        n,
        (0..n).map(|i| Complex64::from_polar(scale, step * i as f64)),
    )
}

/// Circularly symmetric complex Gaussian sample with total variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sigma = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sigma * re, sigma * im)
}

/// One draw of the single-path channel `H = N α a_r(θ) a_t(φ)^H` with both
/// angles on the grid.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub alpha: Complex64,
    pub aoa_index: usize,
    pub aod_index: usize,
    pub channel: ComplexMatrix,
    rx_response: ComplexVector,
    tx_response: ComplexVector,
}

impl ChannelRealization {
    /// Assembles the channel for a given coefficient and grid indices.
    pub fn new(
        geom: &ArrayGeometry,
        grid: &AngleGrid,
        alpha: Complex64,
        aoa_index: usize,
        aod_index: usize,
    ) -> Result<Self> {
        let n = geom.n_antennas();
        if grid.len() != n {
            return Err(Error::InvalidGeometry(format!(
                "grid has {} points but the array has {n} antennas",
                grid.len()
            )));
        }
        for index in [aoa_index, aod_index] {
            if index >= n {
                return Err(Error::InvalidGeometry(format!(
                    "grid index {index} outside 0..{n}"
                )));
            }
        }
        let rx_response = steering_vector(geom, grid.angles()[aoa_index]);
        let tx_response = steering_vector(geom, grid.angles()[aod_index]);
        let channel = (&rx_response * tx_response.adjoint()) * (alpha * n as f64);
        Ok(Self {
            alpha,
            aoa_index,
            aod_index,
            channel,
            rx_response,
            tx_response,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.rx_response.len()
    }

    /// Noise-free beamformed response `w^H H f`, evaluated through the rank-1
    /// factorisation rather than the dense matrix.
    pub fn effective_gain(&self, f: &ComplexVector, w: &ComplexVector) -> Complex64 {
        let n = self.n_antennas() as f64;
        let rx = w.dotc(&self.rx_response);
        let tx = self.tx_response.dotc(f);
        self.alpha * n * rx * tx
    }
}

/// Draws `α ~ CN(0, 1)` and uniform on-grid AoA/AoD indices.
pub fn draw_channel<R: Rng + ?Sized>(
    geom: &ArrayGeometry,
    rng: &mut R,
    grid: &AngleGrid,
) -> Result<ChannelRealization> {
    let alpha = complex_gaussian(rng, 1.0);
    let n = geom.n_antennas();
    let aoa_index = rng.random_range(0..n);
    let aod_index = rng.random_range(0..n);
    ChannelRealization::new(geom, grid, alpha, aoa_index, aod_index)
}

/// Processed pilot `√P w^H H f + w^H n` with pilot symbol `x = 1` and
/// `n ~ CN(0, N0 I)` drawn per antenna.
pub fn observe<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    f: &ComplexVector,
    w: &ComplexVector,
    pilot_power: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> Complex64 {
    let received = &channel.channel * f * Complex64::from(pilot_power.sqrt());
    let n = ComplexVector::from_iterator(
        received.len(),
        (0..received.len()).map(|_| complex_gaussian(rng, noise.n0())),
    );
    w.dotc(&(received + n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn broadside_two_elements() {
        let geom = ArrayGeometry::half_wavelength(2).unwrap();
        let v = steering_vector(&geom, PI / 2.0);
        let expect = Complex64::from(1.0 / 2f64.sqrt());
        assert!(close(v[0], expect, 1e-12));
        assert!(close(v[1], expect, 1e-12));
    }

    #[test]
    fn single_element_is_one() {
        let geom = ArrayGeometry::half_wavelength(1).unwrap();
        for angle in [0.0, 0.3, 2.0, PI] {
            assert!(close(
                steering_vector(&geom, angle)[0],
                Complex64::from(1.0),
                1e-15
            ));
        }
    }

    #[test]
    fn endfire_alternates_sign() {
        let geom = ArrayGeometry::half_wavelength(4).unwrap();
        let v = steering_vector(&geom, 0.0);
        for (i, want) in [0.5, -0.5, 0.5, -0.5].into_iter().enumerate() {
            assert!(
                close(v[i], Complex64::from(want), 1e-12),
                "element {i}: {}",
                v[i]
            );
        }
    }

    #[test]
    fn cosine_negation_conjugates() {
        let geom = ArrayGeometry::new(7, 0.37).unwrap();
        for c in [-0.9, -0.2, 0.0, 0.45, 1.0] {
            let a = steering_vector_from_cosine(&geom, -c);
            let b = steering_vector_from_cosine(&geom, c);
            for i in 0..7 {
                assert!(close(a[i], b[i].conj(), 1e-12));
            }
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ArrayGeometry::new(0, 0.5).is_err());
        assert!(ArrayGeometry::new(4, 0.0).is_err());
        assert!(ArrayGeometry::new(4, f64::NAN).is_err());
        assert!(NoiseModel::new(0.0).is_err());
        assert!(NoiseModel::new(-1.0).is_err());
    }

    #[test]
    fn zero_alpha_gives_zero_channel() {
        let geom = ArrayGeometry::half_wavelength(8).unwrap();
        let grid = AngleGrid::uniform_cosine(8);
        let ch = ChannelRealization::new(&geom, &grid, Complex64::from(0.0), 3, 5).unwrap();
        assert!(ch.channel.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn scalar_channel() {
        let geom = ArrayGeometry::half_wavelength(1).unwrap();
        let grid = AngleGrid::uniform_cosine(1);
        let ch = ChannelRealization::new(&geom, &grid, Complex64::from(1.0), 0, 0).unwrap();
        assert!(close(ch.channel[(0, 0)], Complex64::from(1.0), 1e-15));
    }

    #[test]
    fn frobenius_norm_identity() {
        let geom = ArrayGeometry::half_wavelength(16).unwrap();
        let grid = AngleGrid::uniform_cosine(16);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let ch = draw_channel(&geom, &mut rng, &grid).unwrap();
            let ratio = ch.channel.norm() / ch.alpha.norm();
            assert_relative_eq!(ratio, 16.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn factorised_gain_matches_dense_product() {
        let geom = ArrayGeometry::half_wavelength(8).unwrap();
        let grid = AngleGrid::uniform_cosine(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = draw_channel(&geom, &mut rng, &grid).unwrap();
        let f = steering_vector(&geom, 0.4);
        let w = steering_vector(&geom, 1.3);
        let dense = w.dotc(&(&ch.channel * &f));
        assert!(close(dense, ch.effective_gain(&f, &w), 1e-12));
    }

    #[test]
    fn noise_only_observation_variance() {
        let geom = ArrayGeometry::half_wavelength(8).unwrap();
        let grid = AngleGrid::uniform_cosine(8);
        let ch = ChannelRealization::new(&geom, &grid, Complex64::from(0.0), 0, 0).unwrap();
        let f = steering_vector(&geom, 0.7);
        let w = steering_vector(&geom, 2.1);
        let noise = NoiseModel::new(0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 100_000;
        let mut mean = Complex64::from(0.0);
        let mut power = 0.0;
        for _ in 0..trials {
            let y = observe(&ch, &f, &w, 1.0, &noise, &mut rng);
            mean += y;
            power += y.norm_sqr();
        }
        let mean = mean / trials as f64;
        let var = power / trials as f64 - mean.norm_sqr();
        assert!((var / 0.25 - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn noiseless_observation_is_bilinear() {
        let geom = ArrayGeometry::half_wavelength(4).unwrap();
        let grid = AngleGrid::uniform_cosine(4);
        let ch = ChannelRealization::new(&geom, &grid, Complex64::new(0.3, -1.1), 1, 2).unwrap();
        let noise = NoiseModel::new(1e-300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f1 = steering_vector(&geom, 0.2);
        let f2 = steering_vector(&geom, 2.2);
        let w = steering_vector(&geom, 1.0);
        let a = Complex64::new(0.6, 0.8);
        let fsum = &f1 * a + &f2;
        let lhs = observe(&ch, &fsum, &w, 2.0, &noise, &mut rng);
        let rhs = observe(&ch, &f1, &w, 2.0, &noise, &mut rng) * a
            + observe(&ch, &f2, &w, 2.0, &noise, &mut rng);
        assert!(close(lhs, rhs, 1e-12));
    }
}
