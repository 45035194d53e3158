//! Hierarchical beamforming codebooks.
//!
//! Each beam is the least-squares solution of `A^H f = z`, where `A` is the
//! steering dictionary over the angle grid and `z` is a flat indicator on the
//! subrange the beam should cover, scaled so that `‖f‖ = 1`.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DVector, SVD};
use num_complex::Complex64;

use crate::channel::{steering_vector_from_cosine, ArrayGeometry};
use crate::error::{Error, Result};
use crate::{ComplexMatrix, ComplexVector};

const COSINE_COLLISION_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;

/// Grid of candidate AoA/AoD directions.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    angles: Vec<f64>,
    cosines: Vec<f64>,
}

impl AngleGrid {
    /// `n` directions with cosines evenly spaced over `[-1, 1)`. With
    /// half-wavelength spacing the resulting dictionary is a permuted DFT
    /// and therefore unitary.
    pub fn uniform_cosine(n: usize) -> Self {
        let cosines: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
        let angles = cosines.iter().map(|c| c.acos()).collect();
        Self { angles, cosines }
    }

    /// Arbitrary grid of angles in radians.
    pub fn from_angles(angles: Vec<f64>) -> Self {
        let cosines = angles.iter().map(|a| a.cos()).collect();
        Self { angles, cosines }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn cosines(&self) -> &[f64] {
        &self.cosines
    }

    fn check_distinct(&self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.cosines[a].total_cmp(&self.cosines[b]));
        for pair in order.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if (self.cosines[b] - self.cosines[a]).abs() <= COSINE_COLLISION_TOL {
                return Err(Error::DegenerateGrid {
                    first: a.min(b),
                    second: a.max(b),
                    cosine: self.cosines[a],
                });
            }
        }
        Ok(())
    }
}

/// Number of stages `⌈log_K N⌉` needed to resolve a single grid point.
pub fn stage_count(n: usize, k: usize) -> usize {
    assert!(k >= 2, "branching factor must be at least 2");
    let mut stages = 0;
    let mut reach = 1usize;
    while reach < n {
        reach = reach.saturating_mul(k);
        stages += 1;
    }
    stages
}

fn is_power_of(n: usize, k: usize) -> bool {
    let mut reach = 1usize;
    while reach < n {
        reach = reach.saturating_mul(k);
    }
    reach == n
}

/// Steering dictionary `[a(θ_0), …, a(θ_{N-1})]`, one column per grid point.
pub fn dictionary_matrix(grid: &AngleGrid, geom: &ArrayGeometry) -> Result<ComplexMatrix> {
    grid.check_distinct()?;
    let n = geom.n_antennas();
    let columns: Vec<ComplexVector> = grid
        .cosines()
        .iter()
        .map(|&c| steering_vector_from_cosine(geom, c))
        .collect();
    if columns.is_empty() {
        return Ok(ComplexMatrix::zeros(n, 0));
    }
    Ok(ComplexMatrix::from_columns(&columns))
}

/// Steering dictionary together with an SVD of `A^H`, reused for every
/// beam solved against it.
pub struct Dictionary {
    matrix: ComplexMatrix,
    adjoint_svd: SVD<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Dictionary {
    pub fn new(grid: &AngleGrid, geom: &ArrayGeometry) -> Result<Self> {
        let matrix = dictionary_matrix(grid, geom)?;
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidGeometry(format!(
                "grid has {} points but the array has {} antennas",
                matrix.ncols(),
                matrix.nrows()
            )));
        }
        let adjoint_svd = SVD::new(matrix.adjoint(), true, true);
        let sv = &adjoint_svd.singular_values;
        let largest = sv.max();
        let smallest = sv.min();
        if !(smallest > RANK_TOL * largest.max(1.0)) {
            return Err(Error::RankDeficient(smallest));
        }
        Ok(Self {
            matrix,
            adjoint_svd,
        })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    fn least_squares(&self, target: &DVector<f64>) -> Result<ComplexVector> {
        let rhs = target.map(Complex64::from);
        self.adjoint_svd
            .solve(&rhs, RANK_TOL)
            .map_err(|_| Error::RankDeficient(self.adjoint_svd.singular_values.min()))
    }
}

/// 0/1 indicator of the `k`-th (1-based) of `branching` equal contiguous
/// blocks of `window`, over a grid of `n_points`.
pub fn subrange_indicator(
    branching: usize,
    k: usize,
    n_points: usize,
    window: Range<usize>,
) -> Result<DVector<f64>> {
    let block = subrange(branching, k, window)?;
    if block.end > n_points {
        return Err(Error::InvalidConfig(format!(
            "window ends at {} but the grid has {n_points} points",
            block.end
        )));
    }
    Ok(DVector::from_fn(n_points, |i, _| {
        if block.contains(&i) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Grid indices covered by the `k`-th (1-based) subrange of `window`.
pub fn subrange(branching: usize, k: usize, window: Range<usize>) -> Result<Range<usize>> {
    let size = window.len();
    if branching == 0 || size == 0 || !size.is_multiple_of(branching) {
        return Err(Error::IndivisibleWindow {
            window: size,
            k: branching,
        });
    }
    if k == 0 || k > branching {
        return Err(Error::SubrangeOutOfRange { k, max: branching });
    }
    let width = size / branching;
    let start = window.start + (k - 1) * width;
    Ok(start..start + width)
}

/// Target response for subrange `k` of `window`: `C_s` on the subrange and
/// zero elsewhere, with `C_s` the value that makes the solved beam unit-norm.
/// Returns the target and `C_s`.
pub fn target_vector(
    dict: &Dictionary,
    branching: usize,
    k: usize,
    window: Range<usize>,
) -> Result<(DVector<f64>, f64)> {
    let indicator = subrange_indicator(branching, k, dict.len(), window)?;
    let raw = dict.least_squares(&indicator)?;
    let c_s = 1.0 / raw.norm();
    Ok((indicator * c_s, c_s))
}

/// Least-squares solution of `A^H f = target`, rescaled to unit norm.
pub fn solve_beamformer(dict: &Dictionary, target: &DVector<f64>) -> Result<ComplexVector> {
    let f = dict.least_squares(target)?;
    let norm = f.norm();
    if !(norm > 0.0) {
        return Err(Error::InvalidConfig(
            "target vector is identically zero".into(),
        ));
    }
    Ok(f.unscale(norm))
}

/// Transmit and receive beams for one stage of the search.
#[derive(Debug, Clone)]
pub struct StageCodebook {
    pub stage: usize,
    pub k: usize,
    pub beamformers: Vec<ComplexVector>,
    pub combiners: Vec<ComplexVector>,
    pub c_s: f64,
    pub tx_subranges: Vec<Range<usize>>,
    pub rx_subranges: Vec<Range<usize>>,
}

impl StageCodebook {
    pub fn n_candidates(&self) -> usize {
        self.k * self.k
    }

    pub fn tx_window(&self) -> Range<usize> {
        self.tx_subranges[0].start..self.tx_subranges[self.k - 1].end
    }

    pub fn rx_window(&self) -> Range<usize> {
        self.rx_subranges[0].start..self.rx_subranges[self.k - 1].end
    }

    /// 1-based candidate `d = K (k_t - 1) + k_r` covering the given grid
    /// indices, or `None` when either lies outside this stage's windows.
    pub fn candidate_for(&self, aod_index: usize, aoa_index: usize) -> Option<usize> {
        let k_t = self
            .tx_subranges
            .iter()
            .position(|r| r.contains(&aod_index))?
            + 1;
        let k_r = self
            .rx_subranges
            .iter()
            .position(|r| r.contains(&aoa_index))?
            + 1;
        Some(self.k * (k_t - 1) + k_r)
    }

    /// Beam pair `(f, w)` used to measure candidate `d` (1-based).
    pub fn beams_for(&self, candidate: usize) -> (&ComplexVector, &ComplexVector) {
        let (k_t, k_r) = crate::estimator::candidate_to_angles(candidate, self.k)
            .expect("candidate within 1..=K²");
        (&self.beamformers[k_t - 1], &self.combiners[k_r - 1])
    }
}

fn check_stage_window(
    n: usize,
    branching: usize,
    stage: usize,
    window: &Range<usize>,
) -> Result<()> {
    if !is_power_of(n, branching) {
        return Err(Error::NotPowerOfK { n, k: branching });
    }
    let stages = stage_count(n, branching);
    if stage == 0 || stage > stages {
        return Err(Error::StageOutOfRange { stage, stages });
    }
    let expected = n / branching.pow(stage as u32 - 1);
    if window.len() != expected || window.end > n {
        return Err(Error::InvalidConfig(format!(
            "stage {stage} window {window:?} must span {expected} grid points inside 0..{n}"
        )));
    }
    Ok(())
}

/// Builds the stage-`stage` codebook for the given transmit/receive windows
/// directly from the dictionary.
pub fn build_stage_codebook(
    stage: usize,
    branching: usize,
    grid: &AngleGrid,
    geom: &ArrayGeometry,
    tx_window: Range<usize>,
    rx_window: Range<usize>,
) -> Result<StageCodebook> {
    let n = geom.n_antennas();
    check_stage_window(n, branching, stage, &tx_window)?;
    check_stage_window(n, branching, stage, &rx_window)?;
    let dict = Dictionary::new(grid, geom)?;

    let solve_side =
        |window: &Range<usize>| -> Result<(Vec<ComplexVector>, Vec<Range<usize>>, f64)> {
            let mut beams = Vec::with_capacity(branching);
            let mut ranges = Vec::with_capacity(branching);
            let mut c_s = 0.0;
            for k in 1..=branching {
                let (target, c) = target_vector(&dict, branching, k, window.clone())?;
                beams.push(solve_beamformer(&dict, &target)?);
                ranges.push(subrange(branching, k, window.clone())?);
                if k == 1 {
                    c_s = c;
                }
            }
            Ok((beams, ranges, c_s))
        };
    let (beamformers, tx_subranges, c_s) = solve_side(&tx_window)?;
    let (combiners, rx_subranges, _) = solve_side(&rx_window)?;
    Ok(StageCodebook {
        stage,
        k: branching,
        beamformers,
        combiners,
        c_s,
        tx_subranges,
        rx_subranges,
    })
}

#[derive(Debug, Clone)]
struct Beam {
    vector: ComplexVector,
    c_s: f64,
}

/// Every beam of every stage for one `(N, K)`, solved once.
///
/// Stage `s` has `K^s` beams; beam `j` covers grid indices
/// `[j N / K^s, (j + 1) N / K^s)`.
#[derive(Debug, Clone)]
pub struct HierarchicalCodebook {
    n: usize,
    k: usize,
    stages: Vec<Vec<Beam>>,
}

impl HierarchicalCodebook {
    pub fn new(geom: &ArrayGeometry, grid: &AngleGrid, branching: usize) -> Result<Self> {
        if branching < 2 {
            return Err(Error::InvalidConfig(format!(
                "branching factor must be at least 2, got {branching}"
            )));
        }
        let n = geom.n_antennas();
        if !is_power_of(n, branching) {
            return Err(Error::NotPowerOfK { n, k: branching });
        }
        let dict = Dictionary::new(grid, geom)?;
        let mut stages = Vec::new();
        for stage in 1..=stage_count(n, branching) {
            let parent_width = n / branching.pow(stage as u32 - 1);
            let mut beams = Vec::with_capacity(branching.pow(stage as u32));
            for parent in 0..branching.pow(stage as u32 - 1) {
                let window = parent * parent_width..(parent + 1) * parent_width;
                for k in 1..=branching {
                    let (target, c_s) = target_vector(&dict, branching, k, window.clone())?;
                    let vector = solve_beamformer(&dict, &target)?;
                    beams.push(Beam { vector, c_s });
                }
            }
            stages.push(beams);
        }
        Ok(Self {
            n,
            k: branching,
            stages,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Width in grid points of a stage-`stage` search window.
    pub fn window_width(&self, stage: usize) -> usize {
        self.n / self.k.pow(stage as u32 - 1)
    }

    /// Index of the stage-`stage` window that contains grid index `index`.
    pub fn window_block(&self, stage: usize, index: usize) -> usize {
        index / self.window_width(stage)
    }

    /// Assembles the stage codebook for the given window blocks
    /// (`0..K^(stage-1)` on each side).
    pub fn stage_codebook(
        &self,
        stage: usize,
        tx_block: usize,
        rx_block: usize,
    ) -> Result<StageCodebook> {
        if stage == 0 || stage > self.n_stages() {
            return Err(Error::StageOutOfRange {
                stage,
                stages: self.n_stages(),
            });
        }
        let blocks = self.k.pow(stage as u32 - 1);
        for block in [tx_block, rx_block] {
            if block >= blocks {
                return Err(Error::InvalidConfig(format!(
                    "window block {block} outside 0..{blocks} at stage {stage}"
                )));
            }
        }
        let beams = &self.stages[stage - 1];
        let width = self.n / self.k.pow(stage as u32);
        let side = |block: usize| -> (Vec<ComplexVector>, Vec<Range<usize>>) {
            (0..self.k)
                .map(|j| {
                    let idx = block * self.k + j;
                    (beams[idx].vector.clone(), idx * width..(idx + 1) * width)
                })
                .unzip()
        };
        let (beamformers, tx_subranges) = side(tx_block);
        let (combiners, rx_subranges) = side(rx_block);
        Ok(StageCodebook {
            stage,
            k: self.k,
            beamformers,
            combiners,
            c_s: beams[tx_block * self.k].c_s,
            tx_subranges,
            rx_subranges,
        })
    }

    /// Writes one CSV row per beam: stage, subrange index within the stage,
    /// covered grid indices, `C_s`, then interleaved real/imaginary weights.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "stage,subrange,first_index,last_index,c_s")?;
        for i in 0..self.n {
            write!(out, ",re_{i},im_{i}")?;
        }
        writeln!(out)?;
        for (s, beams) in self.stages.iter().enumerate() {
            let width = self.n / self.k.pow(s as u32 + 1);
            for (j, beam) in beams.iter().enumerate() {
                write!(
                    out,
                    "{},{},{},{},{}",
                    s + 1,
                    j + 1,
                    j * width,
                    (j + 1) * width - 1,
                    beam.c_s
                )?;
                for z in beam.vector.iter() {
                    write!(out, ",{},{}", z.re, z.im)?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}
