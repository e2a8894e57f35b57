//! Dense-grid representation of the d-dimensional Bayesian posterior.
//!
//! The posterior lives on a regular grid of cell midpoints over a hypercube
//! domain. Round zero covers the full torus `[0, 2π)^d`; after the first
//! domain cut, coordinates are unwrapped reals and the domain never spans the
//! full circle again. All integrals use the midpoint rule.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use crate::circuit::NoiseModel;
use crate::linalg::symmetric_eigenvalues;
use crate::phase::{wrap_to_pi, PhasePoint};
use crate::{Error, Result};

/// Minimum points per axis that still resolve the O(1) likelihood
/// oscillations left on a cut domain.
pub const MIN_GRID_POINTS: usize = 8;

const MEAN_RESULTANT_FLOOR: f64 = 1e-12;

/// Bayesian covariance matrix
/// `V_ij = 4 ∫ sin((ϑ_i-θ̄_i)/2) sin((ϑ_j-θ̄_j)/2) P(ϑ) dϑ`.
///
/// Diagonal entries approximate the Holevo variance when small; off-diagonal
/// entries quantify correlations in the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    d: usize,
    entries: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn from_entries(d: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: entries.len(),
            });
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (entries[i * d + j] - entries[j * d + i]).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(
                        "covariance entries are not symmetric".into(),
                    ));
                }
            }
        }
        Ok(CovarianceMatrix { d, entries })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.d + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.d).map(|i| self.get(i, i)).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(&self.entries, self.d)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Variance of the linear combination `n · θ`, i.e. `nᵀ V n`.
    ///
    /// Values in `[-1e-10, 0)` are rounding noise and clamp to zero; anything
    /// below that signals a broken covariance.
    pub fn linear_combination_variance(&self, n: &[f64]) -> Result<f64> {
        if n.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: n.len(),
            });
        }
        let mut value = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                value += n[i] * self.get(i, j) * n[j];
            }
        }
        if value < -1e-10 {
            return Err(Error::NotPositiveSemidefinite { value });
        }
        Ok(value.max(0.0))
    }
}

/// Dense posterior density over a hypercube phase domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    d: usize,
    points_per_dim: usize,
    /// Lower corner per axis; unwrapped (may leave `[0, 2π)` after cuts).
    lower: Vec<f64>,
    /// Common side length, radians.
    side: f64,
    /// Probability density at cell midpoints, row-major (axis 0 slowest).
    density: Vec<f64>,
    /// True only while the domain is the full torus (before the first cut).
    wrapped: bool,
    /// Number of domain cuts applied so far.
    cuts: u32,
}

impl PosteriorGrid {
    /// Uniform prior `1/(2π)^d` on the full torus.
    pub fn uniform(d: usize, points_per_dim: usize) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidDimension { got: d, min: 1 });
        }
        if points_per_dim < MIN_GRID_POINTS {
            return Err(Error::Resolution {
                got: points_per_dim,
                min: MIN_GRID_POINTS,
            });
        }
        let cells = points_per_dim.pow(d as u32);
        Ok(PosteriorGrid {
            d,
            points_per_dim,
            lower: vec![0.0; d],
            side: TAU,
            density: vec![TAU.powi(-(d as i32)); cells],
            wrapped: true,
            cuts: 0,
        })
    }

    /// Build a grid from raw parts, normalizing the density to unit mass.
    pub fn from_parts(
        lower: Vec<f64>,
        side: f64,
        points_per_dim: usize,
        density: Vec<f64>,
        wrapped: bool,
    ) -> Result<Self> {
        let d = lower.len();
        if d < 1 {
            return Err(Error::InvalidDimension { got: d, min: 1 });
        }
        if points_per_dim < MIN_GRID_POINTS {
            return Err(Error::Resolution {
                got: points_per_dim,
                min: MIN_GRID_POINTS,
            });
        }
        if !(side.is_finite() && side > 0.0 && side <= TAU) {
            return Err(Error::InvalidConfig(format!(
                "domain side {side} must lie in (0, 2π]"
            )));
        }
        if density.len() != points_per_dim.pow(d as u32) {
            return Err(Error::DimensionMismatch {
                expected: points_per_dim.pow(d as u32),
                got: density.len(),
            });
        }
        if density.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(
                "density values must be finite and nonnegative".into(),
            ));
        }
        let mut grid = PosteriorGrid {
            d,
            points_per_dim,
            lower,
            side,
            density,
            wrapped,
            cuts: u32::from(!wrapped),
        };
        let mass = grid.mass();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidConfig("density has no mass".into()));
        }
        for v in &mut grid.density {
            *v /= mass;
        }
        Ok(grid)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn points_per_dim(&self) -> usize {
        self.points_per_dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn is_wrapped(&self) -> bool {
        self.wrapped
    }

    pub fn cuts(&self) -> u32 {
        self.cuts
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cell_width(&self) -> f64 {
        self.side / self.points_per_dim as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_width().powi(self.d as i32)
    }

    pub fn midpoint(&self, axis: usize, index: usize) -> f64 {
        self.lower[axis] + (index as f64 + 0.5) * self.cell_width()
    }

    pub fn domain_center(&self) -> PhasePoint {
        PhasePoint::new(self.lower.iter().map(|l| l + self.side / 2.0).collect())
    }

    /// Midpoint-rule total mass; 1 up to rounding after every update.
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_volume()
    }

    /// Multiply the density by the outcome likelihood `P(o | ϑ, φ, M)` at
    /// every midpoint (dephased form when the noise model is nonzero), then
    /// renormalize.
    pub fn bayes_update(
        &mut self,
        outcome: usize,
        phi: &[f64],
        gate_reps: u64,
        noise: &NoiseModel,
    ) -> Result<()> {
        if outcome > self.d {
            return Err(Error::InvalidConfig(format!(
                "outcome {outcome} out of range for d = {}",
                self.d
            )));
        }
        if phi.len() != self.d + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.d + 1,
                got: phi.len(),
            });
        }
        if noise.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: noise.dim(),
            });
        }
        let tables = LikelihoodTables::build(self, outcome, phi, gate_reps, noise);
        let g = self.points_per_dim;
        let mut sum = 0.0;
        for_each_cell(self.d, g, |idx, digits| {
            let like = tables.evaluate(digits);
            let v = self.density[idx] * like.max(0.0);
            self.density[idx] = v;
            sum += v;
        });
        let mass = sum * self.cell_volume();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::DegenerateUpdate { outcome });
        }
        for v in &mut self.density {
            *v /= mass;
        }
        Ok(())
    }

    /// Per-axis circular mean `θ̄_j = arg Σ e^{iϑ_j} P(ϑ) dϑ`, reported in the
    /// grid's unwrapped coordinates.
    pub fn circular_mean(&self) -> Result<PhasePoint> {
        let g = self.points_per_dim;
        let mut marginals = vec![vec![0.0f64; g]; self.d];
        for_each_cell(self.d, g, |idx, digits| {
            let w = self.density[idx];
            for (axis, &i) in digits.iter().enumerate() {
                marginals[axis][i] += w;
            }
        });
        let vol = self.cell_volume();
        let mut mean = Vec::with_capacity(self.d);
        for (axis, marginal) in marginals.iter().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, w) in marginal.iter().enumerate() {
                let angle = self.midpoint(axis, i);
                re += w * angle.cos();
                im += w * angle.sin();
            }
            re *= vol;
            im *= vol;
            let resultant = (re * re + im * im).sqrt();
            if resultant <= MEAN_RESULTANT_FLOOR {
                return Err(Error::UndefinedMean { axis, resultant });
            }
            let arg = im.atan2(re);
            let center = self.lower[axis] + self.side / 2.0;
            mean.push(center + wrap_to_pi(arg - center));
        }
        Ok(PhasePoint::new(mean))
    }

    /// Posterior mass of the hypercube of half-width `π/2^{k+1}` around
    /// `center`. A cell counts if and only if its midpoint lies inside;
    /// distances use the nearest image while the domain is the full torus.
    pub fn p_half(&self, center: &PhasePoint, round: usize) -> f64 {
        let half = PI * 0.5f64.powi(round as i32 + 1);
        let g = self.points_per_dim;
        let masks = self.axis_masks(center, half);
        let mut mass = 0.0;
        for_each_cell(self.d, g, |idx, digits| {
            if digits.iter().enumerate().all(|(axis, &i)| masks[axis][i]) {
                mass += self.density[idx];
            }
        });
        mass * self.cell_volume()
    }

    fn axis_masks(&self, center: &PhasePoint, half: f64) -> Vec<Vec<bool>> {
        let g = self.points_per_dim;
        (0..self.d)
            .map(|axis| {
                (0..g)
                    .map(|i| {
                        let delta = self.midpoint(axis, i) - center[axis];
                        let dist = if self.wrapped {
                            wrap_to_pi(delta).abs()
                        } else {
                            delta.abs()
                        };
                        dist <= half
                    })
                    .collect()
            })
            .collect()
    }

    /// Bayesian covariance around `center` (normally the circular mean).
    pub fn covariance(&self, center: &PhasePoint) -> CovarianceMatrix {
        let g = self.points_per_dim;
        let sines: Vec<Vec<f64>> = (0..self.d)
            .map(|axis| {
                (0..g)
                    .map(|i| {
                        let delta = self.midpoint(axis, i) - center[axis];
                        let delta = if self.wrapped { wrap_to_pi(delta) } else { delta };
                        (delta / 2.0).sin()
                    })
                    .collect()
            })
            .collect();
        let d = self.d;
        let mut acc = vec![0.0f64; d * d];
        for_each_cell(d, g, |idx, digits| {
            let w = self.density[idx];
            for a in 0..d {
                let sa = sines[a][digits[a]];
                for b in a..d {
                    acc[a * d + b] += sa * sines[b][digits[b]] * w;
                }
            }
        });
        let vol = self.cell_volume();
        let mut entries = vec![0.0f64; d * d];
        for a in 0..d {
            for b in a..d {
                let v = 4.0 * acc[a * d + b] * vol;
                entries[a * d + b] = v;
                entries[b * d + a] = v;
            }
        }
        CovarianceMatrix { d, entries }
    }

    /// Cut the domain to the hypercube of side `π/2^k` around `center` and
    /// resample the density at the new midpoints by multilinear
    /// interpolation (modular indexing while the domain is still the torus;
    /// zero outside the old support afterwards), then renormalize.
    pub fn cut_and_regrid(&mut self, center: &PhasePoint, round: usize) -> Result<()> {
        let new_side = PI * 0.5f64.powi(round as i32);
        let g = self.points_per_dim;
        let new_lower: Vec<f64> = (0..self.d)
            .map(|axis| center[axis] - new_side / 2.0)
            .collect();
        let h_new = new_side / g as f64;
        let h_old = self.cell_width();
        let old_side = self.side;
        let old_lower = self.lower.clone();
        let wrapped = self.wrapped;

        let mut new_density = vec![0.0f64; self.density.len()];
        let mut corners = vec![(0usize, 0usize, 0.0f64); self.d]; // (i0, i1, frac)
        let mut corner_digits = vec![0usize; self.d];
        for_each_cell(self.d, g, |idx, digits| {
            let mut outside = false;
            for axis in 0..self.d {
                let x = new_lower[axis] + (digits[axis] as f64 + 0.5) * h_new;
                if !wrapped && (x < old_lower[axis] || x > old_lower[axis] + old_side) {
                    outside = true;
                    break;
                }
                let u = (x - old_lower[axis]) / h_old - 0.5;
                let base = u.floor();
                let frac = u - base;
                let i0 = base as i64;
                let (a, b) = if wrapped {
                    (
                        i0.rem_euclid(g as i64) as usize,
                        (i0 + 1).rem_euclid(g as i64) as usize,
                    )
                } else {
                    (
                        i0.clamp(0, g as i64 - 1) as usize,
                        (i0 + 1).clamp(0, g as i64 - 1) as usize,
                    )
                };
                corners[axis] = (a, b, frac);
            }
            if outside {
                return;
            }
            // accumulate the 2^d corner contributions
            let mut value = 0.0;
            for corner in 0..(1usize << self.d) {
                let mut weight = 1.0;
                for (axis, digit) in corner_digits.iter_mut().enumerate() {
                    let (a, b, frac) = corners[axis];
                    if corner >> axis & 1 == 0 {
                        weight *= 1.0 - frac;
                        *digit = a;
                    } else {
                        weight *= frac;
                        *digit = b;
                    }
                }
                if weight != 0.0 {
                    value += weight * self.density[linear_index(&corner_digits, g)];
                }
            }
            new_density[idx] = value.max(0.0);
        });

        let mass = new_density.iter().sum::<f64>() * h_new.powi(self.d as i32);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::DegenerateCut);
        }
        for v in &mut new_density {
            *v /= mass;
        }
        self.density = new_density;
        self.lower = new_lower;
        self.side = new_side;
        self.wrapped = false;
        self.cuts += 1;
        Ok(())
    }

    /// Dump the grid as a text table: one row per cell, the `d` midpoint
    /// coordinates followed by the density, in row-major order.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = self.points_per_dim;
        let mut err = None;
        for_each_cell(self.d, g, |idx, digits| {
            if err.is_some() {
                return;
            }
            let mut line = String::new();
            for (axis, &i) in digits.iter().enumerate() {
                line.push_str(&format!("{} ", self.midpoint(axis, i)));
            }
            line.push_str(&format!("{}\n", self.density[idx]));
            if let Err(e) = w.write_all(line.as_bytes()) {
                err = Some(e);
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn linear_index(digits: &[usize], g: usize) -> usize {
    digits.iter().fold(0, |acc, &i| acc * g + i)
}

/// Visit every cell in row-major order with its linear index and digits.
fn for_each_cell(d: usize, g: usize, mut f: impl FnMut(usize, &[usize])) {
    let total = g.pow(d as u32);
    let mut digits = vec![0usize; d];
    for idx in 0..total {
        f(idx, &digits);
        for axis in (0..d).rev() {
            digits[axis] += 1;
            if digits[axis] < g {
                break;
            }
            digits[axis] = 0;
        }
    }
}

/// Per-axis trigonometric tables for one likelihood evaluation sweep.
///
/// The outcome likelihood decomposes into per-axis cosines plus pair terms
/// `cos(Mϑ_j - Mϑ_k + γ)`, which expand into products of per-axis tables, so
/// the per-cell work is table lookups and multiplies only.
struct LikelihoodTables {
    constant: f64,
    single: Vec<Vec<f64>>,
    pairs: Vec<PairTables>,
}

struct PairTables {
    axis_a: usize,
    axis_b: usize,
    cos_a: Vec<f64>,
    sin_a: Vec<f64>,
    cos_b: Vec<f64>,
    sin_b: Vec<f64>,
}

impl LikelihoodTables {
    fn build(
        grid: &PosteriorGrid,
        outcome: usize,
        phi: &[f64],
        gate_reps: u64,
        noise: &NoiseModel,
    ) -> Self {
        let d = grid.d;
        let n = d + 1;
        let nf = n as f64;
        let m = gate_reps as f64;
        let g = grid.points_per_dim;
        let of = outcome as f64;
        let damp: Vec<f64> = noise.gammas().iter().map(|&ga| (-ga * m).exp()).collect();

        let scaled: Vec<Vec<f64>> = (0..d)
            .map(|axis| (0..g).map(|i| m * grid.midpoint(axis, i)).collect())
            .collect();

        let constant = 1.0 / nf;
        let single = (0..d)
            .map(|axis| {
                let j = axis + 1;
                let beta = phi[j] - phi[0] + TAU * (j as f64) * of / nf;
                let amp = 2.0 * damp[axis] / (nf * nf);
                (0..g).map(|i| amp * (scaled[axis][i] + beta).cos()).collect()
            })
            .collect();

        let mut pairs = Vec::new();
        for j in 1..=d {
            for k in (j + 1)..=d {
                let gamma = phi[j] - phi[k] + TAU * (j as f64 - k as f64) * of / nf;
                let amp = 2.0 * damp[j - 1] * damp[k - 1] / (nf * nf);
                let (axis_a, axis_b) = (j - 1, k - 1);
                pairs.push(PairTables {
                    axis_a,
                    axis_b,
                    cos_a: (0..g)
                        .map(|i| amp * (scaled[axis_a][i] + gamma).cos())
                        .collect(),
                    sin_a: (0..g)
                        .map(|i| amp * (scaled[axis_a][i] + gamma).sin())
                        .collect(),
                    cos_b: (0..g).map(|i| scaled[axis_b][i].cos()).collect(),
                    sin_b: (0..g).map(|i| scaled[axis_b][i].sin()).collect(),
                });
            }
        }
        LikelihoodTables {
            constant,
            single,
            pairs,
        }
    }

    #[inline]
    fn evaluate(&self, digits: &[usize]) -> f64 {
        let mut acc = self.constant;
        for (axis, table) in self.single.iter().enumerate() {
            acc += table[digits[axis]];
        }
        for p in &self.pairs {
            let ia = digits[p.axis_a];
            let ib = digits[p.axis_b];
            acc += p.cos_a[ia] * p.cos_b[ib] + p.sin_a[ia] * p.sin_b[ib];
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{noisy_outcome_probabilities, CircuitSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_phi(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..=d).map(|_| rng.random_range(0.0..TAU)).collect()
    }

    #[test]
    fn uniform_grid_has_flat_density() {
        let grid = PosteriorGrid::uniform(1, 100).unwrap();
        assert_eq!(grid.density().len(), 100);
        for &v in grid.density() {
            assert_abs_diff_eq!(v, 1.0 / TAU, epsilon = 1e-15);
        }
    }

    #[test]
    fn uniform_grid_is_normalized() {
        let grid = PosteriorGrid::uniform(3, 32).unwrap();
        assert_abs_diff_eq!(grid.mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        assert!(matches!(
            PosteriorGrid::uniform(2, 7),
            Err(Error::Resolution { got: 7, min: 8 })
        ));
    }

    #[test]
    fn uniform_grid_mean_is_undefined() {
        let grid = PosteriorGrid::uniform(2, 64).unwrap();
        assert!(matches!(
            grid.circular_mean(),
            Err(Error::UndefinedMean { .. })
        ));
    }

    #[test]
    fn flat_likelihood_leaves_grid_unchanged() {
        let mut grid = PosteriorGrid::uniform(2, 32).unwrap();
        grid.bayes_update(1, &[0.4, 1.2, 5.0], 4, &NoiseModel::noiseless(2))
            .unwrap();
        let before = grid.clone();
        // overwhelming dephasing flattens the likelihood to 1/(d+1)
        let noise = NoiseModel::new(vec![30.0, 40.0]).unwrap();
        grid.bayes_update(0, &[0.1, 2.0, 3.0], 2, &noise).unwrap();
        for (a, b) in grid.density().iter().zip(before.density().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_update_is_proportional_to_likelihood() {
        let d = 2;
        let mut grid = PosteriorGrid::uniform(d, 32).unwrap();
        let phi = [0.3, 1.0, 2.2];
        let noise = NoiseModel::noiseless(d);
        grid.bayes_update(1, &phi, 2, &noise).unwrap();
        assert_abs_diff_eq!(grid.mass(), 1.0, epsilon = 1e-12);

        // compare to the closed-form likelihood from the circuit model
        let g = grid.points_per_dim();
        let mut max_ratio: f64 = 0.0;
        let mut min_ratio = f64::INFINITY;
        let mut argmax_grid = 0;
        let mut argmax_like = 0;
        let mut best_density = 0.0;
        let mut best_like = 0.0;
        for idx in 0..grid.density().len() {
            let digits = [idx / g, idx % g];
            let theta =
                PhasePoint::new(vec![grid.midpoint(0, digits[0]), grid.midpoint(1, digits[1])]);
            let spec = CircuitSpec::new(theta, phi.to_vec(), 2).unwrap();
            let like = noisy_outcome_probabilities(&spec, &noise).unwrap()[1];
            let density = grid.density()[idx];
            if like > 1e-6 {
                let ratio = density / like;
                max_ratio = max_ratio.max(ratio);
                min_ratio = min_ratio.min(ratio);
            }
            if density > best_density {
                best_density = density;
                argmax_grid = idx;
            }
            if like > best_like {
                best_like = like;
                argmax_like = idx;
            }
        }
        assert!(max_ratio - min_ratio < 1e-9 * max_ratio);
        assert_eq!(argmax_grid, argmax_like);
    }

    #[test]
    fn updates_commute() {
        let noise = NoiseModel::noiseless(2);
        let mut a = PosteriorGrid::uniform(2, 32).unwrap();
        let mut b = a.clone();
        let phi1 = [0.0, 1.3, 2.6];
        let phi2 = [4.0, 0.2, 5.5];
        a.bayes_update(0, &phi1, 4, &noise).unwrap();
        a.bayes_update(2, &phi2, 4, &noise).unwrap();
        b.bayes_update(2, &phi2, 4, &noise).unwrap();
        b.bayes_update(0, &phi1, 4, &noise).unwrap();
        for (x, y) in a.density().iter().zip(b.density().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn vanishing_likelihood_is_degenerate() {
        // all mass in one cell, and a control phase that zeroes the
        // likelihood exactly at that midpoint
        let g = 16;
        let mut density = vec![0.0; g];
        density[5] = 1.0;
        let mut grid = PosteriorGrid::from_parts(vec![0.0], TAU, g, density, true).unwrap();
        let mid = grid.midpoint(0, 5);
        let phi = [0.0, PI - mid];
        let err = grid
            .bayes_update(0, &phi, 1, &NoiseModel::noiseless(1))
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateUpdate { outcome: 0 }));
    }

    #[test]
    fn concentrated_mass_estimates_cell_midpoint() {
        let g = 64;
        let mut density = vec![0.0; g];
        density[17] = 1.0;
        let grid = PosteriorGrid::from_parts(vec![0.0], TAU, g, density, true).unwrap();
        let mean = grid.circular_mean().unwrap();
        assert_abs_diff_eq!(mean[0], grid.midpoint(0, 17), epsilon = 1e-12);
    }

    #[test]
    fn symmetric_peaks_average_to_center() {
        let g = 64;
        let mut density = vec![0.0; g];
        density[20] = 1.0;
        density[28] = 1.0;
        let grid = PosteriorGrid::from_parts(vec![0.0], TAU, g, density, true).unwrap();
        let mean = grid.circular_mean().unwrap();
        let expected = (grid.midpoint(0, 20) + grid.midpoint(0, 28)) / 2.0;
        assert_abs_diff_eq!(mean[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn wraparound_peaks_average_across_zero() {
        // equal mass near 0.1 and 2π - 0.1: the circular mean is ~0, not π
        let g = 628;
        let mut density = vec![0.0; g];
        let h = TAU / g as f64;
        let i_left = (0.1 / h - 0.5).round() as usize;
        let i_right = ((TAU - 0.1) / h - 0.5).round() as usize;
        density[i_left] = 1.0;
        density[i_right] = 1.0;
        let grid = PosteriorGrid::from_parts(vec![0.0], TAU, g, density, true).unwrap();
        let mean = grid.circular_mean().unwrap();
        assert!(wrap_to_pi(mean[0]).abs() < 0.02);
    }

    #[test]
    fn p_half_of_concentrated_mass_is_one() {
        let g = 64;
        let mut density = vec![0.0; g * g];
        density[10 * g + 40] = 1.0;
        let grid = PosteriorGrid::from_parts(vec![0.0, 0.0], TAU, g, density, true).unwrap();
        let center = PhasePoint::new(vec![grid.midpoint(0, 10), grid.midpoint(1, 40)]);
        assert_abs_diff_eq!(grid.p_half(&center, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn p_half_of_uniform_torus_is_volume_fraction() {
        let grid = PosteriorGrid::uniform(2, 64).unwrap();
        let center = grid.domain_center();
        let p = grid.p_half(&center, 0);
        assert!((p - 0.25).abs() <= 2.0 / 64.0, "p = {p}");
    }

    #[test]
    fn p_half_outside_support_is_zero() {
        let g = 64;
        let mut density = vec![0.0; g];
        density[2] = 1.0;
        let grid = PosteriorGrid::from_parts(vec![0.0], PI / 4.0, g, density, false).unwrap();
        let far = PhasePoint::new(vec![grid.midpoint(0, 2) + 2.0]);
        assert_eq!(grid.p_half(&far, 3), 0.0);
    }

    #[test]
    fn p_half_is_monotone_in_round() {
        let mut grid = PosteriorGrid::uniform(2, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = NoiseModel::noiseless(2);
        for _ in 0..4 {
            let phi = uniform_phi(&mut rng, 2);
            grid.bayes_update(rng.random_range(0..3), &phi, 1, &noise)
                .unwrap();
        }
        let center = grid.circular_mean().unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..8 {
            let p = grid.p_half(&center, k);
            assert!(p <= prev + 1e-15);
            prev = p;
        }
    }

    #[test]
    fn covariance_of_concentrated_mass_vanishes() {
        let g = 64;
        let mut density = vec![0.0; g * g];
        density[5 * g + 9] = 1.0;
        let grid = PosteriorGrid::from_parts(vec![0.0, 0.0], TAU, g, density, true).unwrap();
        let center = PhasePoint::new(vec![grid.midpoint(0, 5), grid.midpoint(1, 9)]);
        let v = grid.covariance(&center);
        let tol = grid.cell_width().powi(2);
        for i in 0..2 {
            for j in 0..2 {
                assert!(v.get(i, j).abs() <= tol);
            }
        }
    }

    #[test]
    fn covariance_of_uniform_torus_is_twice_identity() {
        let grid = PosteriorGrid::uniform(2, 64).unwrap();
        let center = PhasePoint::new(vec![1.234, 4.321]);
        let v = grid.covariance(&center);
        assert_abs_diff_eq!(v.get(0, 0), 2.0, epsilon = 1e-3);
        assert_abs_diff_eq!(v.get(1, 1), 2.0, epsilon = 1e-3);
        assert_abs_diff_eq!(v.get(0, 1), 0.0, epsilon = 1e-3);
    }

    fn gaussian_grid(sigma: f64, g: usize) -> PosteriorGrid {
        let side = 16.0 * sigma;
        let mu = 1.0;
        let lower = mu - side / 2.0;
        let h = side / g as f64;
        let density: Vec<f64> = (0..g)
            .map(|i| {
                let x = lower + (i as f64 + 0.5) * h;
                (-((x - mu) / sigma).powi(2) / 2.0).exp()
            })
            .collect();
        PosteriorGrid::from_parts(vec![lower], side, g, density, false).unwrap()
    }

    #[test]
    fn covariance_of_narrow_gaussian_matches_sigma_squared() {
        let sigma = 0.01;
        let grid = gaussian_grid(sigma, 64);
        let center = grid.circular_mean().unwrap();
        let v = grid.covariance(&center);
        assert!((v.get(0, 0) - sigma * sigma).abs() < 0.05 * sigma * sigma);
    }

    #[test]
    fn covariance_is_stable_under_grid_refinement() {
        let sigma = 0.05;
        let coarse = gaussian_grid(sigma, 64);
        let fine = gaussian_grid(sigma, 128);
        let vc = coarse
            .covariance(&coarse.circular_mean().unwrap())
            .get(0, 0);
        let vf = fine.covariance(&fine.circular_mean().unwrap()).get(0, 0);
        assert!((vc - vf).abs() / vf < 0.01);
    }

    #[test]
    fn linear_combination_contracts_covariance() {
        let v = CovarianceMatrix::from_entries(2, vec![3.0, 0.5, 0.5, 3.0]).unwrap();
        assert_abs_diff_eq!(
            v.linear_combination_variance(&[1.0, 0.0]).unwrap(),
            3.0,
            epsilon = 1e-15
        );
        // correlated-structure contraction: n = (1, -1) on unit-diagonal
        // covariance with off-diagonal 0.47 gives 2(1 - 0.47) = 1.06
        let c = 103.0;
        let v = CovarianceMatrix::from_entries(
            2,
            vec![c, 0.47 * c, 0.47 * c, c],
        )
        .unwrap();
        let combo = v.linear_combination_variance(&[1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(combo, 1.06 * c, epsilon = 1e-9);

        let uniform = CovarianceMatrix::from_entries(
            3,
            vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0],
        )
        .unwrap();
        assert_abs_diff_eq!(
            uniform
                .linear_combination_variance(&[1.0, 1.0, 1.0])
                .unwrap(),
            6.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn broken_covariance_fails_psd_check() {
        let v = CovarianceMatrix::from_entries(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(v.min_eigenvalue() < 0.0);
        assert!(matches!(
            v.linear_combination_variance(&[1.0, -1.0]),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn cut_of_uniform_torus_gives_uniform_half_domain() {
        let mut grid = PosteriorGrid::uniform(2, 32).unwrap();
        let center = PhasePoint::new(vec![3.0, 4.0]);
        grid.cut_and_regrid(&center, 0).unwrap();
        assert!(!grid.is_wrapped());
        assert_abs_diff_eq!(grid.side(), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(grid.mass(), 1.0, epsilon = 1e-12);
        for &v in grid.density() {
            assert_abs_diff_eq!(v, PI.powi(-2), epsilon = 1e-9);
        }
    }

    #[test]
    fn cut_preserves_contained_peak() {
        // a narrow peak well inside C: cutting renormalizes by ~1 and the
        // interpolated peak moves by less than one old cell width
        let g = 64;
        let grid_ref = PosteriorGrid::uniform(1, g).unwrap();
        let mu = 2.7;
        let sigma = 0.15;
        let density: Vec<f64> = (0..g)
            .map(|i| {
                let x = grid_ref.midpoint(0, i);
                (-((x - mu) / sigma).powi(2) / 2.0).exp()
            })
            .collect();
        let mut grid = PosteriorGrid::from_parts(vec![0.0], TAU, g, density, true).unwrap();
        let before = grid.circular_mean().unwrap();
        let cell = grid.cell_width();
        grid.cut_and_regrid(&before, 0).unwrap();
        assert_abs_diff_eq!(grid.mass(), 1.0, epsilon = 1e-12);
        let after = grid.circular_mean().unwrap();
        assert!(wrap_to_pi(after[0] - before[0]).abs() < cell);
    }

    #[test]
    fn cut_conditions_on_the_hypercube() {
        // mass 1-ε inside C, ε outside: the cut posterior approximates the
        // conditional distribution on C
        let g = 64;
        let eps = 0.05;
        let mut density = vec![0.0; g];
        let grid_ref = PosteriorGrid::uniform(1, g).unwrap();
        let center = 3.0;
        let half = PI / 2.0;
        let sigma = 0.3;
        for (i, v) in density.iter_mut().enumerate() {
            let x = grid_ref.midpoint(0, i);
            *v = (-((x - center) / sigma).powi(2) / 2.0).exp();
        }
        // park ε of the mass far outside C
        let far = ((center + PI) % TAU / (TAU / g as f64) - 0.5).round() as usize;
        let inside_mass: f64 = density.iter().sum::<f64>() * TAU / g as f64;
        density[far] += eps * inside_mass / (1.0 - eps) / (TAU / g as f64);
        let mut grid = PosteriorGrid::from_parts(vec![0.0], TAU, g, density, true).unwrap();

        let c = PhasePoint::new(vec![center]);
        let p = grid.p_half(&c, 0);
        assert!((p - (1.0 - eps)).abs() < 0.01);
        grid.cut_and_regrid(&c, 0).unwrap();
        // conditional density at the peak: normal pdf / (1 - eps tail), on C
        let mean = grid.circular_mean().unwrap();
        assert!((mean[0] - center).abs() < 2.0 * grid.cell_width());
        let v = grid.covariance(&mean);
        assert!((v.get(0, 0) - sigma * sigma).abs() < 0.05 * sigma * sigma);
        assert!(grid.p_half(&c, 0) > 1.0 - 1e-9);
        assert!(!grid.is_wrapped());
        assert_eq!(grid.cuts(), 1);
        assert!((half - grid.side() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cut_with_no_interior_mass_is_degenerate() {
        let g = 64;
        let mut density = vec![0.0; g];
        density[0] = 1.0; // all mass near 0
        let mut grid = PosteriorGrid::from_parts(vec![0.0], TAU, g, density, true).unwrap();
        let err = grid
            .cut_and_regrid(&PhasePoint::new(vec![PI]), 2)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateCut));
    }

    #[test]
    fn first_cut_may_straddle_the_wrap_point() {
        // concentrated near 0: C straddles 0/2π and uses modular indexing
        let g = 64;
        let grid_ref = PosteriorGrid::uniform(1, g).unwrap();
        let sigma = 0.2;
        let density: Vec<f64> = (0..g)
            .map(|i| {
                let x = grid_ref.midpoint(0, i);
                let delta = wrap_to_pi(x);
                (-(delta / sigma).powi(2) / 2.0).exp()
            })
            .collect();
        let mut grid = PosteriorGrid::from_parts(vec![0.0], TAU, g, density, true).unwrap();
        let mean = grid.circular_mean().unwrap();
        assert!(wrap_to_pi(mean[0]).abs() < 0.05);
        grid.cut_and_regrid(&mean, 0).unwrap();
        let mean_after = grid.circular_mean().unwrap();
        assert!(wrap_to_pi(mean_after[0]).abs() < 0.05);
        let v = grid.covariance(&mean_after);
        assert!((v.get(0, 0) - sigma * sigma).abs() < 0.1 * sigma * sigma);
    }

    #[test]
    fn grid_table_round_trips() {
        let mut grid = PosteriorGrid::uniform(2, 8).unwrap();
        grid.bayes_update(0, &[0.0, 1.0, 2.0], 2, &NoiseModel::noiseless(2))
            .unwrap();
        let mut buf = Vec::new();
        grid.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut cells = 0;
        for (idx, line) in text.lines().enumerate() {
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().unwrap())
                .collect();
            assert_eq!(fields.len(), 3);
            assert_eq!(fields[2], grid.density()[idx]);
            cells += 1;
        }
        assert_eq!(cells, 64);
    }

    proptest! {
        #[test]
        fn update_conserves_mass(seed in any::<u64>(), d in 1usize..=3, o in 0usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = if d == 3 { 16 } else { 32 };
            let mut grid = PosteriorGrid::uniform(d, g).unwrap();
            let noise = NoiseModel::noiseless(d);
            let outcome = o.min(d);
            for _ in 0..3 {
                let phi: Vec<f64> = (0..=d).map(|_| rng.random_range(0.0..TAU)).collect();
                grid.bayes_update(outcome, &phi, rng.random_range(1..=16), &noise).unwrap();
                prop_assert!((grid.mass() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn estimator_is_shift_equivariant(seed in any::<u64>(), delta in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = 32;
            let density: Vec<f64> = (0..g).map(|_| rng.random_range(0.1..1.0)).collect();
            let base = PosteriorGrid::from_parts(vec![1.0], PI / 2.0, g, density.clone(), false)
                .unwrap();
            let shifted = PosteriorGrid::from_parts(
                vec![1.0 + delta],
                PI / 2.0,
                g,
                density,
                false,
            )
            .unwrap();
            let m0 = base.circular_mean().unwrap();
            let m1 = shifted.circular_mean().unwrap();
            prop_assert!(wrap_to_pi(m1[0] - m0[0] - delta).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_tables_match_circuit_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let d = rng.random_range(1..=3);
            let g = 8;
            let grid = PosteriorGrid::uniform(d, g).unwrap();
            let phi: Vec<f64> = (0..=d).map(|_| rng.random_range(0.0..TAU)).collect();
            let m = rng.random_range(1..=64);
            let gammas: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..0.1)).collect();
            let noise = NoiseModel::new(gammas).unwrap();
            let outcome = rng.random_range(0..=d);
            let tables = LikelihoodTables::build(&grid, outcome, &phi, m, &noise);
            for_each_cell(d, g, |_, digits| {
                let theta = PhasePoint::new(
                    (0..d).map(|axis| grid.midpoint(axis, digits[axis])).collect(),
                );
                let spec = CircuitSpec::new(theta, phi.clone(), m).unwrap();
                let expected = noisy_outcome_probabilities(&spec, &noise).unwrap()[outcome];
                let got = tables.evaluate(digits);
                assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
            });
        }
    }
}
