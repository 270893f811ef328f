//! Particle clouds, control grids and the self-normalized importance weights
//! that interpolate the value function between particles.
//!
//! For a predicted mean `m = f(x, u)` the weight of particle `j` is
//! `c_j ∝ W(ξ_j - m) / X(ξ_j)` where `W` is the noise density and `X` the
//! density the cloud was drawn from. Rows are normalized to sum to one, so the
//! normalizing constants of both densities cancel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bellman::WeightVector;
use crate::error::{ensure_dim, Error, Result};
use crate::model::{ControlDensity, ControlSpace, ControlVector, NoiseDensity, SamplingDensity, StateSpace, StateVector};

/// Rejection attempts allowed per particle when the sampling density is not
/// confined to the state set.
pub const MAX_REJECTIONS: usize = 1000;

/// I.i.d. particles inside the state set together with the log of the
/// sampling density at each of them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    positions: Vec<f64>,
    log_density: Vec<f64>,
    seed: Option<u64>,
    rejected_draws: u64,
}

impl ParticleCloud {
    /// Builds a cloud from given positions (row-major, `dim` values per
    /// particle), evaluating `density` at each of them.
    pub fn from_positions(
        dim: usize,
        positions: Vec<f64>,
        density: &SamplingDensity,
        space: &StateSpace,
    ) -> Result<Self> {
        ensure_dim("sampling density", space.dim(), density.dim())?;
        ensure_dim("particle dimension", space.dim(), dim)?;
        if positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} coordinates do not form whole {dim}-dimensional particles",
                positions.len()
            )));
        }
        let mut log_density = Vec::with_capacity(positions.len() / dim);
        for p in positions.chunks_exact(dim) {
            if !space.contains(p) {
                return Err(Error::OutsideStateSpace { state: p.to_vec() });
            }
            let ld = density.log_density(p);
            if ld == f64::NEG_INFINITY || ld.is_nan() {
                return Err(Error::Config(format!(
                    "sampling density vanishes at particle {p:?}"
                )));
            }
            log_density.push(ld);
        }
        Ok(Self {
            dim,
            positions,
            log_density,
            seed: None,
            rejected_draws: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.log_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_density.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Draws rejected because they fell outside the state set.
    pub fn rejected_draws(&self) -> u64 {
        self.rejected_draws
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.positions[j * self.dim..(j + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn log_density_at(&self, j: usize) -> f64 {
        self.log_density[j]
    }

    pub fn log_densities(&self) -> &[f64] {
        &self.log_density
    }

    pub fn density_at(&self, j: usize) -> f64 {
        self.log_density[j].exp()
    }

    /// Index of and distance to the particle closest to `point`.
    pub fn nearest(&self, point: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, p) in self.iter().enumerate() {
            let d2: f64 = p.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (j, d2);
            }
        }
        (best.0, best.1.sqrt())
    }
}

/// Draws `n` particles from `density` restricted to `space`.
///
/// Proposals outside the state set are redrawn, at most [`MAX_REJECTIONS`]
/// times per particle. The same `(density, n, seed)` always reproduces the
/// same cloud bit for bit.
pub fn draw_particles(
    density: &SamplingDensity,
    space: &StateSpace,
    n: usize,
    seed: u64,
) -> Result<ParticleCloud> {
    if n == 0 {
        return Err(Error::Config("particle count must be at least 1".into()));
    }
    ensure_dim("sampling density", space.dim(), density.dim())?;
    if !density.covers(space) {
        return Err(Error::Config(
            "sampling density must be strictly positive on the whole state set".into(),
        ));
    }
    let dim = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = vec![0.0; n * dim];
    let mut log_density = Vec::with_capacity(n);
    let mut rejected = 0u64;
    for chunk in positions.chunks_exact_mut(dim) {
        let mut attempts = 0;
        loop {
            density.sample(&mut rng, chunk);
            if space.contains(chunk) {
                break;
            }
            attempts += 1;
            rejected += 1;
            if attempts > MAX_REJECTIONS {
                return Err(Error::Sampling(format!(
                    "no draw landed inside the state set after {MAX_REJECTIONS} retries"
                )));
            }
        }
        log_density.push(density.log_density(chunk));
    }
    if rejected > 0 {
        log::debug!("particle draw rejected {rejected} proposals outside the state set");
    }
    Ok(ParticleCloud {
        dim,
        positions,
        log_density,
        seed: Some(seed),
        rejected_draws: rejected,
    })
}

/// Fills `out[j] = exp(log M_j - max_i log M_i)` and returns
/// `(sum_j out[j], max_i log M_i)`. The sum is zero when no particle lies in
/// the noise support around `mean`.
///
/// The sum runs over `j` in index order; every caller relies on this to keep
/// results independent of how work is split across threads.
#[inline]
pub(crate) fn fill_row(cloud: &ParticleCloud, noise: &NoiseDensity, mean: &[f64], out: &mut [f64]) -> (f64, f64) {
    let dim = cloud.dim;
    let mut max = f64::NEG_INFINITY;
    match noise {
        // Fast path for the common scalar Gaussian case.
        NoiseDensity::Gaussian(g) if dim == 1 => {
            let m = mean[0];
            for ((o, &x), &ld) in out.iter_mut().zip(&cloud.positions).zip(&cloud.log_density) {
                let v = g.log_density_shifted(&[x], &[m]) - ld;
                *o = v;
                if v > max {
                    max = v;
                }
            }
        }
        _ => {
            for ((o, p), &ld) in out
                .iter_mut()
                .zip(cloud.positions.chunks_exact(dim))
                .zip(&cloud.log_density)
            {
                let v = noise.log_density_shifted(p, mean) - ld;
                *o = v;
                if v > max {
                    max = v;
                }
            }
        }
    }
    if max == f64::NEG_INFINITY {
        out.fill(0.0);
        return (0.0, max);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    (sum, max)
}

/// Normalized importance likelihoods `c_j` for one predicted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodRow {
    pub values: Vec<f64>,
    /// `sum_i M_i`; may under- or overflow, see `log_raw_mass`.
    pub raw_mass: f64,
    pub log_raw_mass: f64,
}

impl LikelihoodRow {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Computes the normalized row `c_j(x, u)` for `predicted_mean = f(x, u)`.
pub fn likelihood_row(
    cloud: &ParticleCloud,
    noise: &NoiseDensity,
    predicted_mean: &StateVector,
) -> Result<LikelihoodRow> {
    if cloud.is_empty() {
        return Err(Error::Config("particle cloud is empty".into()));
    }
    ensure_dim("predicted mean", cloud.dim(), predicted_mean.dim())?;
    ensure_dim("noise density", cloud.dim(), noise.dim())?;
    let mean = predicted_mean.as_slice();
    let mut values = vec![0.0; cloud.len()];
    let (sum, max) = fill_row(cloud, noise, mean, &mut values);
    if sum == 0.0 {
        return Err(Error::NoSupportOverlap {
            predicted_mean: mean.to_vec(),
            nearest_distance: cloud.nearest(mean).1,
        });
    }
    for v in &mut values {
        *v /= sum;
    }
    let log_raw_mass = max + sum.ln();
    Ok(LikelihoodRow {
        values,
        raw_mass: log_raw_mass.exp(),
        log_raw_mass,
    })
}

/// `sum_j Ω_j c_j`, the importance-sampling estimate of the expected next value.
pub fn estimate_expectation(cloud: &ParticleCloud, weights: &WeightVector, row: &LikelihoodRow) -> Result<f64> {
    ensure_dim("weight vector", cloud.len(), weights.values.len())?;
    ensure_dim("likelihood row", cloud.len(), row.values.len())?;
    Ok(weights
        .values
        .iter()
        .zip(&row.values)
        .map(|(w, c)| w * c)
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub enum GridProvenance {
    ExplicitFinite,
    SampledFromCompact { seed: u64, count: usize },
    /// Subset of another grid, e.g. after chance-constraint filtering.
    Filtered,
}

/// The finite set of candidate controls shared by every backup of a solve.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlGrid {
    dim: usize,
    controls: Vec<f64>,
    pub provenance: GridProvenance,
}

impl ControlGrid {
    pub fn from_controls(controls: &[ControlVector], provenance: GridProvenance) -> Result<Self> {
        let Some(first) = controls.first() else {
            return Err(Error::Config("control grid is empty".into()));
        };
        let dim = first.dim();
        let mut flat = Vec::with_capacity(controls.len() * dim);
        for c in controls {
            ensure_dim("control", dim, c.dim())?;
            flat.extend_from_slice(c.as_slice());
        }
        Ok(Self {
            dim,
            controls: flat,
            provenance,
        })
    }

    /// Grid with no controls, used to report that nothing is admissible.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            controls: Vec::new(),
            provenance: GridProvenance::Filtered,
        }
    }

    pub fn len(&self) -> usize {
        self.controls.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn control(&self, q: usize) -> &[f64] {
        &self.controls[q * self.dim..(q + 1) * self.dim]
    }

    pub fn control_vector(&self, q: usize) -> ControlVector {
        ControlVector::new(self.control(q).to_vec()).expect("grid controls are finite")
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.controls.chunks_exact(self.dim)
    }

    pub fn subset(&self, keep: &[usize]) -> Self {
        let mut controls = Vec::with_capacity(keep.len() * self.dim);
        for &q in keep {
            controls.extend_from_slice(self.control(q));
        }
        Self {
            dim: self.dim,
            controls,
            provenance: GridProvenance::Filtered,
        }
    }
}

/// Realizes the control space as a finite grid. Finite lists pass through;
/// compact boxes are sampled `count` times from their density with `seed`.
pub fn sample_control_grid(space: &ControlSpace, seed: u64) -> Result<ControlGrid> {
    space.validate()?;
    match space {
        ControlSpace::FiniteList(list) => ControlGrid::from_controls(list, GridProvenance::ExplicitFinite),
        ControlSpace::CompactBox { bounds, density, count } => {
            let dim = bounds.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut controls = vec![0.0; count * dim];
            for chunk in controls.chunks_exact_mut(dim) {
                match density {
                    ControlDensity::Uniform => {
                        for (i, v) in chunk.iter_mut().enumerate() {
                            *v = rng.random_range(bounds.lower()[i]..=bounds.upper()[i]);
                        }
                    }
                    ControlDensity::Gaussian(g) => {
                        let mut attempts = 0;
                        loop {
                            g.sample(&mut rng, chunk);
                            if bounds.contains(chunk) {
                                break;
                            }
                            attempts += 1;
                            if attempts > MAX_REJECTIONS {
                                return Err(Error::Sampling(
                                    "control draw never landed inside the control box".into(),
                                ));
                            }
                        }
                    }
                }
            }
            Ok(ControlGrid {
                dim,
                controls,
                provenance: GridProvenance::SampledFromCompact { seed, count: *count },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxRegion;
    use crate::model::Gaussian;
    use nalgebra::DMatrix;

    fn space(pairs: &[[f64; 2]]) -> StateSpace {
        StateSpace::new(BoxRegion::from_pairs(pairs).unwrap())
    }

    fn gaussian_noise(var: f64) -> NoiseDensity {
        NoiseDensity::gaussian(vec![0.0], DMatrix::from_element(1, 1, var)).unwrap()
    }

    fn cloud_1d(points: &[f64], pairs: [f64; 2]) -> ParticleCloud {
        let s = space(&[pairs]);
        ParticleCloud::from_positions(1, points.to_vec(), &SamplingDensity::UniformBox(s.bounds.clone()), &s)
            .unwrap()
    }

    #[test]
    fn uniform_draw_stays_inside_and_centers() {
        let s = space(&[[-10.0, 10.0], [-5.0, 15.0]]);
        let cloud = draw_particles(&SamplingDensity::UniformBox(s.bounds.clone()), &s, 2000, 7).unwrap();
        assert_eq!(cloud.len(), 2000);
        assert!(cloud.iter().all(|p| s.contains(p)));
        for (axis, (center, width)) in [(0.0, 20.0), (5.0, 20.0)].into_iter().enumerate() {
            let mean: f64 = cloud.iter().map(|p| p[axis]).sum::<f64>() / 2000.0;
            let sigma = width / 12f64.sqrt();
            assert!((mean - center).abs() < 3.0 * sigma / 2000f64.sqrt());
        }
    }

    #[test]
    fn single_particle_cloud() {
        let s = space(&[[-1.0, 1.0]]);
        let g = SamplingDensity::Gaussian(Gaussian::isotropic(1, 1.0).unwrap());
        let cloud = draw_particles(&g, &s, 1, 3).unwrap();
        assert_eq!(cloud.len(), 1);
        assert!(cloud.density_at(0) > 0.0);
    }

    #[test]
    fn uniform_draw_passes_ks_test() {
        let s = space(&[[0.0, 1.0]]);
        let n = 100_000;
        let cloud = draw_particles(&SamplingDensity::UniformBox(s.bounds.clone()), &s, n, 42).unwrap();
        let mut xs: Vec<f64> = cloud.positions().to_vec();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (x - lo).abs().max((hi - x).abs())
            })
            .fold(0.0, f64::max);
        // 99% Kolmogorov–Smirnov critical value
        assert!(d < 1.6276 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn density_that_misses_part_of_the_space_is_rejected() {
        let s = space(&[[-1.0, 1.0]]);
        let narrow = SamplingDensity::UniformBox(BoxRegion::from_pairs(&[[0.0, 1.0]]).unwrap());
        assert!(draw_particles(&narrow, &s, 10, 1).is_err());
    }

    #[test]
    fn rejection_cap_is_reported() {
        let s = space(&[[100.0, 100.001]]);
        let far = SamplingDensity::Gaussian(Gaussian::isotropic(1, 1.0).unwrap());
        assert!(matches!(draw_particles(&far, &s, 1, 1), Err(Error::Sampling(_))));
    }

    #[test]
    fn single_particle_row_is_one() {
        let cloud = cloud_1d(&[0.3], [-1.0, 1.0]);
        let row = likelihood_row(&cloud, &gaussian_noise(0.5), &StateVector::new(vec![0.0]).unwrap()).unwrap();
        assert_eq!(row.values, vec![1.0]);
    }

    #[test]
    fn symmetric_particles_split_evenly() {
        let cloud = cloud_1d(&[-0.5, 1.5], [-3.0, 3.0]);
        let row = likelihood_row(&cloud, &gaussian_noise(0.7), &StateVector::new(vec![0.5]).unwrap()).unwrap();
        assert_eq!(row.values, vec![0.5, 0.5]);
    }

    #[test]
    fn three_particle_row_matches_hand_values() {
        let cloud = cloud_1d(&[0.0, 1.0, 2.0], [-5.0, 5.0]);
        let row = likelihood_row(&cloud, &gaussian_noise(0.5), &StateVector::new(vec![1.0]).unwrap()).unwrap();
        let expected = [0.211_941_557_617_085_4, 0.576_116_884_765_829_1, 0.211_941_557_617_085_4];
        for (v, e) in row.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
        // raw mass = sum of W/X with X = 1/10
        let w = |d: f64| (-d * d).exp() / std::f64::consts::PI.sqrt();
        let raw = 10.0 * (w(1.0) + w(0.0) + w(1.0));
        assert!((row.raw_mass - raw).abs() < 1e-12);
    }

    #[test]
    fn bounded_noise_without_nearby_particles_errors() {
        let cloud = cloud_1d(&[-4.0, -3.5], [-5.0, 5.0]);
        let noise = NoiseDensity::uniform(BoxRegion::from_pairs(&[[-1.0, 1.0]]).unwrap());
        match likelihood_row(&cloud, &noise, &StateVector::new(vec![2.0]).unwrap()) {
            Err(Error::NoSupportOverlap { nearest_distance, .. }) => assert_eq!(nearest_distance, 5.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn far_gaussian_rows_do_not_underflow() {
        // every raw likelihood underflows in linear space, the log-space row does not
        let cloud = cloud_1d(&[-4.0, -3.0], [-5.0, 5.0]);
        let row = likelihood_row(&cloud, &gaussian_noise(1e-4), &StateVector::new(vec![4.0]).unwrap()).unwrap();
        assert_eq!(row.raw_mass, 0.0);
        assert!((row.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(row.values[1], 1.0);
    }

    #[test]
    fn finite_control_list_passes_through() {
        let list: Vec<ControlVector> = [-1.0, 0.0, 1.0]
            .iter()
            .map(|&u| ControlVector::new(vec![u]).unwrap())
            .collect();
        let grid = sample_control_grid(&ControlSpace::FiniteList(list), 9).unwrap();
        assert_eq!(grid.len(), 3);
        assert_eq!(grid.control(2), &[1.0]);
        assert_eq!(grid.provenance, GridProvenance::ExplicitFinite);
        assert!(sample_control_grid(&ControlSpace::FiniteList(vec![]), 0).is_err());
    }

    #[test]
    fn compact_box_grid_draws_inside_bounds() {
        let bounds = BoxRegion::from_pairs(&[[-3.0, 3.0]]).unwrap();
        let space = ControlSpace::CompactBox {
            bounds: bounds.clone(),
            density: ControlDensity::Uniform,
            count: 50,
        };
        let grid = sample_control_grid(&space, 3).unwrap();
        assert_eq!(grid.len(), 50);
        assert!(grid.iter().all(|u| bounds.contains(u)));
        assert_eq!(grid, sample_control_grid(&space, 3).unwrap());
    }

    #[test]
    fn dense_control_grid_has_vanishing_cell_diameter() {
        let space = ControlSpace::CompactBox {
            bounds: BoxRegion::from_pairs(&[[-1.0, 1.0]]).unwrap(),
            density: ControlDensity::Uniform,
            count: 10_000,
        };
        let grid = sample_control_grid(&space, 17).unwrap();
        let samples: Vec<f64> = grid.iter().map(|u| u[0]).collect();
        let reference = 4001;
        let ds = (0..reference)
            .map(|i| -1.0 + 2.0 * i as f64 / (reference - 1) as f64)
            .map(|u| samples.iter().map(|s| (u - s).abs()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        assert!(ds < 0.01, "d_s = {ds}");
    }

    #[test]
    fn expectation_of_constant_and_one_hot() {
        let cloud = cloud_1d(&[0.0, 1.0, 2.0], [-5.0, 5.0]);
        let row = likelihood_row(&cloud, &gaussian_noise(0.5), &StateVector::new(vec![0.4]).unwrap()).unwrap();
        let constant = WeightVector::new(vec![5.0; 3], 0);
        assert!((estimate_expectation(&cloud, &constant, &row).unwrap() - 5.0).abs() < 1e-12);

        let one_hot = LikelihoodRow {
            values: vec![0.0, 1.0, 0.0],
            raw_mass: 1.0,
            log_raw_mass: 0.0,
        };
        let w = WeightVector::new(vec![3.0, 7.5, -1.0], 0);
        assert_eq!(estimate_expectation(&cloud, &w, &one_hot).unwrap(), 7.5);

        let short = WeightVector::new(vec![1.0; 2], 0);
        assert!(matches!(
            estimate_expectation(&cloud, &short, &row),
            Err(Error::Dimension { .. })
        ));
    }
}
