//! Measurement statistics of the qudit multiphase circuit.
//!
//! The circuit prepares a (d+1)-dimensional ancilla with a generalized
//! Hadamard gate, imprints control phases and `M` rounds of controlled-U
//! eigenphases, applies the Hadamard again and measures. This module provides
//! the closed-form outcome distribution, a full state-vector oracle over the
//! joint ancilla-register space, the dephased variant (closed form and
//! Kraus-channel oracle), and the equivalent multiport-interferometer and
//! NOON-state realizations.

use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{unit_root, DensityMatrix, GateMatrix};
use crate::phase::PhasePoint;
use crate::{Error, Result};

/// Per-register dephasing rates `Γ_1..Γ_d`, per controlled-gate application.
///
/// All-zero rates mean a noiseless circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    gammas: Vec<f64>,
}

impl NoiseModel {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        for (index, &rate) in gammas.iter().enumerate() {
            if !rate.is_finite() || rate < 0.0 {
                return Err(Error::InvalidNoise {
                    rate,
                    index: index + 1,
                });
            }
        }
        Ok(NoiseModel { gammas })
    }

    pub fn noiseless(d: usize) -> Self {
        NoiseModel {
            gammas: vec![0.0; d],
        }
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn dim(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_noiseless(&self) -> bool {
        self.gammas.iter().all(|&g| g == 0.0)
    }

    pub fn max_gamma(&self) -> f64 {
        self.gammas.iter().fold(0.0, |a: f64, &b| a.max(b))
    }

    /// `min_j ⌊1/Γ_j⌋` over noisy registers, clamped to at least 1.
    ///
    /// `None` when every rate is zero (no cap on the gate repetitions).
    pub fn gate_rep_cap(&self) -> Option<u64> {
        self.gammas
            .iter()
            .filter(|&&g| g > 0.0)
            .map(|&g| ((1.0 / g).floor() as u64).max(1))
            .min()
    }
}

/// One basic measurement configuration: `d` eigenphases, `d+1` control
/// phases, and the number `M` of controlled-gate applications.
///
/// Phases are reduced to `[0, 2π)` on construction. The reference eigenphase
/// is fixed at zero, so only `θ_1..θ_d` are stored; all `d+1` control phases
/// are kept even though the outcome distribution depends only on their
/// differences (fixing `φ_0 = 0` is statistically equivalent).
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSpec {
    pub d: usize,
    pub theta: PhasePoint,
    pub phi: Vec<f64>,
    pub gate_reps: u64,
}

impl CircuitSpec {
    pub fn new(theta: PhasePoint, phi: Vec<f64>, gate_reps: u64) -> Result<Self> {
        let d = theta.dim();
        if d < 1 {
            return Err(Error::InvalidDimension { got: d, min: 1 });
        }
        if phi.len() != d + 1 {
            return Err(Error::DimensionMismatch {
                expected: d + 1,
                got: phi.len(),
            });
        }
        if gate_reps < 1 {
            return Err(Error::InvalidConfig(
                "need at least one controlled-gate application".into(),
            ));
        }
        let theta = PhasePoint::wrapped(theta.as_slice().to_vec());
        let phi = phi.into_iter().map(crate::phase::wrap_to_tau).collect();
        Ok(CircuitSpec {
            d,
            theta,
            phi,
            gate_reps,
        })
    }

    /// Uniformly random phases and gate repetitions, for oracle batteries.
    pub fn random<R: Rng>(rng: &mut R, d: usize, max_reps: u64) -> CircuitSpec {
        let theta = PhasePoint::new((0..d).map(|_| rng.random_range(0.0..TAU)).collect());
        let phi = (0..=d).map(|_| rng.random_range(0.0..TAU)).collect();
        let gate_reps = rng.random_range(1..=max_reps);
        CircuitSpec::new(theta, phi, gate_reps).expect("random spec is valid")
    }
}

/// The (d+1)-dimensional generalized Hadamard gate with entries
/// `⟨k|H|l⟩ = e^{i 2π k l / (d+1)} / √(d+1)`.
pub fn hadamard_matrix(d: usize) -> Result<GateMatrix> {
    if d < 1 {
        return Err(Error::InvalidDimension { got: d, min: 1 });
    }
    let n = d + 1;
    let norm = 1.0 / (n as f64).sqrt();
    Ok(GateMatrix::from_fn(n, |k, l| {
        unit_root((k as u64) * (l as u64), n as u64) * norm
    }))
}

/// Multiport beam-splitter transformation realizing the Hadamard gate
/// optically.
///
/// For `d = 2` this is the tritter, identical to the 3-dimensional Hadamard.
/// For `d = 3` it is the quarter `BS_4(γ)`; at `γ = π/2` the quarter
/// coincides with the 4-dimensional Hadamard and is constructed identically.
/// Other dimensions delegate to [`hadamard_matrix`] (`γ` ignored).
pub fn multiport_bs_matrix(d: usize, gamma: f64) -> Result<GateMatrix> {
    if d == 3 && gamma != FRAC_PI_2 {
        let e = Complex64::from_polar(1.0, gamma);
        let one = Complex64::new(1.0, 0.0);
        let rows = [
            [one, one, one, one],
            [one, e, -one, -e],
            [one, -one, one, -one],
            [one, -e, -one, e],
        ];
        return Ok(GateMatrix::from_fn(4, |r, c| rows[r][c] * 0.5));
    }
    hadamard_matrix(d)
}

/// Ideal outcome distribution of the basic measurement step, in closed form.
///
/// For outcome `o`:
/// `P(o) = [d+1 + 2 Σ_j cos(Mθ_j + β_j) + 2 Σ_{j<k} cos(M(θ_j-θ_k) + γ_jk)] / (d+1)²`
/// with `β_j = φ_j - φ_0 + 2πjo/(d+1)` and `γ_jk = φ_j - φ_k + 2π(j-k)o/(d+1)`.
pub fn outcome_probabilities(spec: &CircuitSpec) -> Vec<f64> {
    damped_probabilities(spec, None)
}

/// Dephased outcome distribution: single-phase terms damped by `e^{-Γ_j M}`,
/// cross terms by `e^{-(Γ_j+Γ_k) M}`.
pub fn noisy_outcome_probabilities(spec: &CircuitSpec, noise: &NoiseModel) -> Result<Vec<f64>> {
    if noise.dim() != spec.d {
        return Err(Error::DimensionMismatch {
            expected: spec.d,
            got: noise.dim(),
        });
    }
    Ok(damped_probabilities(spec, Some(noise)))
}

/// Low word of 2π: `2π = TAU + TAU_LO` to double-double precision.
const TAU_LO: f64 = 2.449_293_598_294_706_4e-16;

/// Reduce an angle modulo 2π with a two-word representation of 2π. Plain
/// `x % TAU` leaves an error of `q·(2π - TAU)` that grows with the quotient;
/// at gate powers of 2^20 that already exceeds the closed-form tolerances,
/// and adding small phase offsets to an unreduced argument rounds at
/// `ulp(x)`.
fn reduce_angle(x: f64) -> f64 {
    let r = x % TAU;
    let q = ((x - r) / TAU).round();
    r - q * TAU_LO
}

fn damped_probabilities(spec: &CircuitSpec, noise: Option<&NoiseModel>) -> Vec<f64> {
    let d = spec.d;
    let n = d + 1;
    let nf = n as f64;
    let m = spec.gate_reps as f64;
    let phi = &spec.phi;
    let scaled: Vec<f64> = spec.theta.iter().map(|&t| reduce_angle(m * t)).collect();
    let damp: Vec<f64> = match noise {
        Some(nm) => nm.gammas().iter().map(|&g| (-g * m).exp()).collect(),
        None => vec![1.0; d],
    };

    let mut probs = Vec::with_capacity(n);
    for o in 0..n {
        let of = o as f64;
        let mut acc = nf;
        for j in 1..=d {
            let beta = phi[j] - phi[0] + TAU * (j as f64) * of / nf;
            acc += 2.0 * damp[j - 1] * (scaled[j - 1] + beta).cos();
        }
        for j in 1..=d {
            for k in (j + 1)..=d {
                let gamma = phi[j] - phi[k] + TAU * (j as f64 - k as f64) * of / nf;
                acc += 2.0
                    * damp[j - 1]
                    * damp[k - 1]
                    * (scaled[j - 1] - scaled[k - 1] + gamma).cos();
            }
        }
        probs.push(acc / (nf * nf));
    }
    probs
}

/// Representation of the register unitary in the state-vector oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegisterMode {
    /// `U = diag(1, e^{iθ_1}, ..., e^{iθ_d})` with basis-vector eigenstates —
    /// the canonical representative of the eigenstructure.
    Diagonal,
    /// `U = V diag(1, e^{iθ_j}) V†` for a seeded random unitary `V`, with the
    /// planted eigenvectors as register states. Exercises basis independence.
    Conjugated { seed: u64 },
}

/// How the oracle applies the `M` controlled-gate repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateApplication {
    /// One controlled application of `U^M`. Exact and fast for any `M`.
    SinglePower,
    /// `M` successive controlled applications of `U`. Only sensible for
    /// small `M`; kept as an equivalence check on the single-power path.
    Repeated,
}

/// Full joint-evolution result: the ancilla outcome distribution and the
/// overlap of the reduced register state with the prepared eigenstate
/// product (1 when the register is left unchanged, as it must be).
#[derive(Debug, Clone)]
pub struct CircuitSimulation {
    pub probabilities: Vec<f64>,
    pub register_fidelity: f64,
}

/// State-vector oracle: evolve ancilla ⊗ register through
/// `H`, `Z(φ)`, `M × controlled-U`, `H`, then measure the ancilla.
///
/// The joint space has dimension `(d+1)^{d+1}`; intended for small `d`.
pub fn simulate_circuit(
    spec: &CircuitSpec,
    mode: RegisterMode,
    application: GateApplication,
) -> Result<CircuitSimulation> {
    let d = spec.d;
    let n = d + 1;
    let reg_dim = n.pow(d as u32);
    let total = n * reg_dim;
    let m = spec.gate_reps;

    // register unitary (single application and M-th power) plus the planted
    // eigenvector for each register slot
    let theta_angles: Vec<f64> = std::iter::once(0.0)
        .chain(spec.theta.iter().copied())
        .collect();
    let m_angles: Vec<f64> = theta_angles.iter().map(|&t| m as f64 * t).collect();
    let (u_single, u_power, eigvecs) = match mode {
        RegisterMode::Diagonal => {
            let u1 = GateMatrix::phase_diagonal(&theta_angles);
            let um = GateMatrix::phase_diagonal(&m_angles);
            let vecs: Vec<Vec<Complex64>> = (1..=d)
                .map(|j| {
                    let mut v = vec![Complex64::new(0.0, 0.0); n];
                    v[j] = Complex64::new(1.0, 0.0);
                    v
                })
                .collect();
            (u1, um, vecs)
        }
        RegisterMode::Conjugated { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_unitary(&mut rng, n);
            let u1 = v
                .matmul(&GateMatrix::phase_diagonal(&theta_angles))
                .matmul(&v.dagger());
            let um = v
                .matmul(&GateMatrix::phase_diagonal(&m_angles))
                .matmul(&v.dagger());
            let dev = u1.unitarity_deviation().max(um.unitarity_deviation());
            if dev > 1e-12 {
                return Err(Error::NotUnitary { deviation: dev });
            }
            let vecs: Vec<Vec<Complex64>> = (1..=d)
                .map(|j| (0..n).map(|r| v.get(r, j)).collect())
                .collect();
            (u1, um, vecs)
        }
    };

    // product of the register eigenvectors, indexed by the register digits
    let mut reg_product = vec![Complex64::new(1.0, 0.0); reg_dim];
    for (r, amp) in reg_product.iter_mut().enumerate() {
        let mut rest = r;
        for slot in (1..=d).rev() {
            let digit = rest % n;
            rest /= n;
            *amp *= eigvecs[slot - 1][digit];
        }
    }

    // initial state: ancilla |0> ⊗ register eigenstates
    let mut state = vec![Complex64::new(0.0, 0.0); total];
    state[..reg_dim].copy_from_slice(&reg_product);

    let h = hadamard_matrix(d)?;
    apply_ancilla_gate(&mut state, n, reg_dim, &h);
    apply_ancilla_phases(&mut state, n, reg_dim, &spec.phi);
    match application {
        GateApplication::SinglePower => {
            for anc in 1..=d {
                apply_to_register_slot(&mut state, anc, anc, d, n, &u_power);
            }
        }
        GateApplication::Repeated => {
            for _ in 0..m {
                for anc in 1..=d {
                    apply_to_register_slot(&mut state, anc, anc, d, n, &u_single);
                }
            }
        }
    }
    apply_ancilla_gate(&mut state, n, reg_dim, &h);

    let mut probabilities = Vec::with_capacity(n);
    let mut register_fidelity = 0.0;
    for a in 0..n {
        let block = &state[a * reg_dim..(a + 1) * reg_dim];
        probabilities.push(block.iter().map(|z| z.norm_sqr()).sum());
        let overlap: Complex64 = block
            .iter()
            .zip(reg_product.iter())
            .map(|(z, v)| v.conj() * z)
            .sum();
        register_fidelity += overlap.norm_sqr();
    }
    Ok(CircuitSimulation {
        probabilities,
        register_fidelity,
    })
}

/// Outcome distribution from the state-vector oracle (single-power path).
pub fn simulate_circuit_probabilities(spec: &CircuitSpec, mode: RegisterMode) -> Result<Vec<f64>> {
    simulate_circuit(spec, mode, GateApplication::SinglePower).map(|sim| sim.probabilities)
}

fn apply_ancilla_gate(state: &mut [Complex64], n: usize, reg_dim: usize, gate: &GateMatrix) {
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..reg_dim {
        for (a, s) in scratch.iter_mut().enumerate() {
            *s = state[a * reg_dim + r];
        }
        for a in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (b, s) in scratch.iter().enumerate() {
                acc += gate.get(a, b) * s;
            }
            state[a * reg_dim + r] = acc;
        }
    }
}

fn apply_ancilla_phases(state: &mut [Complex64], n: usize, reg_dim: usize, phi: &[f64]) {
    for a in 0..n {
        let factor = Complex64::from_polar(1.0, phi[a]);
        for z in &mut state[a * reg_dim..(a + 1) * reg_dim] {
            *z *= factor;
        }
    }
}

/// Apply `u` to register slot `slot` (1-based) inside the ancilla block `anc`.
fn apply_to_register_slot(
    state: &mut [Complex64],
    anc: usize,
    slot: usize,
    d: usize,
    n: usize,
    u: &GateMatrix,
) {
    let reg_dim = n.pow(d as u32);
    let offset = anc * reg_dim;
    let stride = n.pow((d - slot) as u32);
    let block = stride * n;
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    let mut outer = 0;
    while outer < reg_dim {
        for inner in 0..stride {
            let base = offset + outer + inner;
            for (l, s) in scratch.iter_mut().enumerate() {
                *s = state[base + l * stride];
            }
            for r in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, s) in scratch.iter().enumerate() {
                    acc += u.get(r, c) * s;
                }
                state[base + r * stride] = acc;
            }
        }
        outer += block;
    }
}

/// Seeded random unitary by Gram-Schmidt on complex Gaussian columns.
fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> GateMatrix {
    let mut gaussian = || {
        let u1: f64 = loop {
            let u = rng.random::<f64>();
            if u > f64::MIN_POSITIVE {
                break u;
            }
        };
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        Complex64::new(r * (TAU * u2).cos(), r * (TAU * u2).sin())
    };
    let mut cols: Vec<Vec<Complex64>> = (0..n).map(|_| (0..n).map(|_| gaussian()).collect()).collect();
    for j in 0..n {
        // two orthogonalization passes keep the basis clean
        for _ in 0..2 {
            for k in 0..j {
                let proj: Complex64 = cols[k]
                    .iter()
                    .zip(cols[j].iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let reference = cols[k].clone();
                for (value, base) in cols[j].iter_mut().zip(reference.iter()) {
                    *value -= proj * base;
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in &mut cols[j] {
            *z /= norm;
        }
    }
    GateMatrix::from_fn(n, |r, c| cols[c][r])
}

/// Kraus operators of the qudit dephasing channel after `M` gate
/// applications: `(K_0)_{mn} = e^{-Γ_m M} δ_{mn}` (with `Γ_0 = 0`) and
/// `(K_j)_{mn} = √(1 - e^{-2Γ_j M}) δ_{mj} δ_{nj}` for `j = 1..d`.
pub fn dephasing_kraus_operators(
    noise: &NoiseModel,
    gate_reps: u64,
    dim: usize,
) -> Result<Vec<GateMatrix>> {
    if dim != noise.dim() + 1 {
        return Err(Error::DimensionMismatch {
            expected: noise.dim() + 1,
            got: dim,
        });
    }
    let m = gate_reps as f64;
    let zero = Complex64::new(0.0, 0.0);
    let mut ops = Vec::with_capacity(dim);
    ops.push(GateMatrix::from_fn(dim, |r, c| {
        if r == c {
            let gamma = if r == 0 { 0.0 } else { noise.gammas()[r - 1] };
            Complex64::new((-gamma * m).exp(), 0.0)
        } else {
            zero
        }
    }));
    for j in 1..dim {
        let gamma = noise.gammas()[j - 1];
        let weight = (1.0 - (-2.0 * gamma * m).exp()).max(0.0).sqrt();
        ops.push(GateMatrix::from_fn(dim, |r, c| {
            if r == j && c == j {
                Complex64::new(weight, 0.0)
            } else {
                zero
            }
        }));
    }
    Ok(ops)
}

/// Apply the dephasing channel `E(ρ) = Σ_j K_j ρ K_j†` to a density matrix.
pub fn apply_dephasing_channel(
    rho: &DensityMatrix,
    noise: &NoiseModel,
    gate_reps: u64,
) -> Result<DensityMatrix> {
    let dim = rho.dim();
    let ops = dephasing_kraus_operators(noise, gate_reps, dim)?;
    let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
    for k in &ops {
        let term = rho.conjugate_by(k);
        for r in 0..dim {
            for c in 0..dim {
                entries[r * dim + c] += term.get(r, c);
            }
        }
    }
    DensityMatrix::from_entries(dim, entries)
}

/// Density-matrix oracle for the dephased circuit: the ancilla state is
/// evolved through `H`, `Z(φ)`, the `M`-fold phase imprint, the dephasing
/// channel, and the final `H`; outcome probabilities are the diagonal.
pub fn simulate_noisy_probabilities(spec: &CircuitSpec, noise: &NoiseModel) -> Result<Vec<f64>> {
    if noise.dim() != spec.d {
        return Err(Error::DimensionMismatch {
            expected: spec.d,
            got: noise.dim(),
        });
    }
    let n = spec.d + 1;
    let h = hadamard_matrix(spec.d)?;
    let z = GateMatrix::phase_diagonal(&spec.phi);
    let m = spec.gate_reps as f64;
    let imprint_angles: Vec<f64> = std::iter::once(0.0)
        .chain(spec.theta.iter().map(|&t| m * t))
        .collect();
    let imprint = GateMatrix::phase_diagonal(&imprint_angles);

    let mut ancilla = vec![Complex64::new(0.0, 0.0); n];
    ancilla[0] = Complex64::new(1.0, 0.0);
    let mut rho = DensityMatrix::from_pure(&ancilla);
    rho = rho.conjugate_by(&h);
    rho = rho.conjugate_by(&z);
    rho = rho.conjugate_by(&imprint);
    rho = apply_dephasing_channel(&rho, noise, spec.gate_reps)?;
    rho = rho.conjugate_by(&h);
    Ok((0..n).map(|o| rho.get(o, o).re).collect())
}

/// Outcome distribution of the NOON-state realization: each mode acquires
/// `e^{i M (θ_j + φ_j)}` from a single pass of the phase shifts, and the
/// final state is projected onto the `d+1` orthonormal outcome states.
///
/// Outcomes are indexed to match the circuit convention: the projector for
/// outcome `o` carries the conjugate roots `e^{-i 2π j o/(d+1)}`, so the
/// statistics reproduce the circuit's closed form with control phases `Mφ`.
pub fn noon_outcome_probabilities(
    theta: &PhasePoint,
    phi: &[f64],
    photons: u64,
) -> Result<Vec<f64>> {
    let d = theta.dim();
    if d < 1 {
        return Err(Error::InvalidDimension { got: d, min: 1 });
    }
    if phi.len() != d + 1 {
        return Err(Error::DimensionMismatch {
            expected: d + 1,
            got: phi.len(),
        });
    }
    if photons < 1 {
        return Err(Error::InvalidConfig("need at least one photon".into()));
    }
    let n = d + 1;
    let nf = n as f64;
    let m = photons as f64;
    // imprinted NOON amplitudes, with the reference phase θ_0 = 0
    let modes: Vec<Complex64> = (0..n)
        .map(|j| {
            let t = if j == 0 { 0.0 } else { theta[j - 1] };
            let angle = reduce_angle(m * t) + reduce_angle(m * phi[j]);
            Complex64::from_polar(1.0 / nf.sqrt(), angle)
        })
        .collect();
    let mut probs = Vec::with_capacity(n);
    for o in 0..n {
        let amp: Complex64 = modes
            .iter()
            .enumerate()
            .map(|(j, &c)| unit_root((j * o) as u64, n as u64) / nf.sqrt() * c)
            .sum();
        probs.push(amp.norm_sqr());
    }
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::wrap_to_pi;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn spec(theta: &[f64], phi: &[f64], m: u64) -> CircuitSpec {
        CircuitSpec::new(PhasePoint::new(theta.to_vec()), phi.to_vec(), m).unwrap()
    }

    #[test]
    fn hadamard_d1_is_standard() {
        let h = hadamard_matrix(1).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(h.get(0, 0), Complex64::new(s, 0.0));
        assert_eq!(h.get(0, 1), Complex64::new(s, 0.0));
        assert_eq!(h.get(1, 0), Complex64::new(s, 0.0));
        assert_eq!(h.get(1, 1), Complex64::new(-s, 0.0));
    }

    #[test]
    fn hadamard_d2_matches_tritter() {
        let h = hadamard_matrix(2).unwrap();
        let w = Complex64::from_polar(1.0, TAU / 3.0);
        let s = 1.0 / 3f64.sqrt();
        let expected = [
            [Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)],
            [Complex64::new(1.0, 0.0), w, w * w],
            [Complex64::new(1.0, 0.0), w * w, w],
        ];
        for (r, row) in expected.iter().enumerate() {
            for (c, entry) in row.iter().enumerate() {
                assert!((h.get(r, c) - entry * s).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn hadamard_is_unitary_up_to_d6() {
        for d in 1..=6 {
            let h = hadamard_matrix(d).unwrap();
            assert!(h.unitarity_deviation() < 1e-12, "d = {d}");
        }
    }

    #[test]
    fn hadamard_rejects_zero_dimension() {
        assert!(matches!(
            hadamard_matrix(0),
            Err(Error::InvalidDimension { .. })
        ));
    }

    #[test]
    fn quarter_at_half_pi_equals_hadamard() {
        let bs = multiport_bs_matrix(3, FRAC_PI_2).unwrap();
        let h = hadamard_matrix(3).unwrap();
        assert_eq!(bs.max_entry_deviation(&h), 0.0);
    }

    #[test]
    fn quarter_is_unitary_for_generic_angle() {
        let bs = multiport_bs_matrix(3, 0.7).unwrap();
        assert!(bs.unitarity_deviation() < 1e-12);
        // and matches the parametrized pattern
        assert_eq!(bs.get(1, 1), Complex64::from_polar(1.0, 0.7) * 0.5);
        assert_eq!(bs.get(2, 3), Complex64::new(-0.5, 0.0));
    }

    #[test]
    fn multiport_other_dims_delegate_to_hadamard() {
        let bs = multiport_bs_matrix(4, 1.3).unwrap();
        let h = hadamard_matrix(4).unwrap();
        assert_eq!(bs.max_entry_deviation(&h), 0.0);
    }

    #[test]
    fn zero_phases_concentrate_on_outcome_zero() {
        for m in [1, 3, 17] {
            let p = outcome_probabilities(&spec(&[0.0, 0.0], &[0.0; 3], m));
            assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(p[2], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn pi_phase_flips_single_qubit_outcome() {
        let p = outcome_probabilities(&spec(&[PI], &[0.0, 0.0], 1));
        assert_abs_diff_eq!(p[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn closed_form_matches_state_vector_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let d = rng.random_range(1..=3);
            let s = CircuitSpec::random(&mut rng, d, 1 << 10);
            let closed = outcome_probabilities(&s);
            let oracle = simulate_circuit_probabilities(&s, RegisterMode::Diagonal).unwrap();
            for (a, b) in closed.iter().zip(oracle.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_and_conjugated_oracles_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for i in 0..20 {
            let d = rng.random_range(1..=3);
            let s = CircuitSpec::random(&mut rng, d, 1 << 8);
            let diag = simulate_circuit_probabilities(&s, RegisterMode::Diagonal).unwrap();
            let conj =
                simulate_circuit_probabilities(&s, RegisterMode::Conjugated { seed: 1000 + i })
                    .unwrap();
            for (a, b) in diag.iter().zip(conj.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn oracle_leaves_register_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for i in 0..10 {
            let d = rng.random_range(1..=3);
            let s = CircuitSpec::random(&mut rng, d, 64);
            for mode in [RegisterMode::Diagonal, RegisterMode::Conjugated { seed: i }] {
                let sim = simulate_circuit(&s, mode, GateApplication::SinglePower).unwrap();
                assert_abs_diff_eq!(sim.register_fidelity, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn repeated_application_matches_single_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for i in 0..10 {
            let d = rng.random_range(1..=2);
            let s = CircuitSpec::random(&mut rng, d, 32);
            let mode = if i % 2 == 0 {
                RegisterMode::Diagonal
            } else {
                RegisterMode::Conjugated { seed: i }
            };
            let once = simulate_circuit(&s, mode, GateApplication::SinglePower).unwrap();
            let many = simulate_circuit(&s, mode, GateApplication::Repeated).unwrap();
            for (a, b) in once.probabilities.iter().zip(many.probabilities.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn trivial_single_qubit_circuit() {
        let p = simulate_circuit_probabilities(&spec(&[0.0], &[0.0, 0.0], 1), RegisterMode::Diagonal)
            .unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_noise_reduces_to_ideal_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = rng.random_range(1..=3);
            let s = CircuitSpec::random(&mut rng, d, 1 << 12);
            let ideal = outcome_probabilities(&s);
            let noisy = noisy_outcome_probabilities(&s, &NoiseModel::noiseless(d)).unwrap();
            assert_eq!(ideal, noisy);
        }
    }

    #[test]
    fn strong_noise_flattens_distribution() {
        let s = spec(&[1.0, 2.5], &[0.3, 0.9, 4.4], 10);
        let noise = NoiseModel::new(vec![5.0, 6.0]).unwrap();
        let p = noisy_outcome_probabilities(&s, &noise).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn noise_model_rejects_negative_rate() {
        assert!(matches!(
            NoiseModel::new(vec![0.1, -0.01]),
            Err(Error::InvalidNoise { index: 2, .. })
        ));
    }

    #[test]
    fn noisy_closed_form_matches_kraus_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let d = rng.random_range(1..=3);
            let s = CircuitSpec::random(&mut rng, d, 64);
            let gammas: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..0.2)).collect();
            let noise = NoiseModel::new(gammas).unwrap();
            let closed = noisy_outcome_probabilities(&s, &noise).unwrap();
            let oracle = simulate_noisy_probabilities(&s, &noise).unwrap();
            for (a, b) in closed.iter().zip(oracle.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn fig_parameters_kraus_check() {
        let s = spec(&[2.1, 0.8], &[0.2, 1.1, 3.0], 16);
        let noise = NoiseModel::new(vec![0.02, 0.01]).unwrap();
        let closed = noisy_outcome_probabilities(&s, &noise).unwrap();
        let oracle = simulate_noisy_probabilities(&s, &noise).unwrap();
        for (a, b) in closed.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn channel_leaves_diagonal_states_unchanged() {
        let mut rho = DensityMatrix::from_entries(
            3,
            vec![Complex64::new(0.0, 0.0); 9],
        )
        .unwrap();
        rho.set(0, 0, Complex64::new(0.5, 0.0));
        rho.set(1, 1, Complex64::new(0.3, 0.0));
        rho.set(2, 2, Complex64::new(0.2, 0.0));
        let noise = NoiseModel::new(vec![0.4, 0.9]).unwrap();
        let out = apply_dephasing_channel(&rho, &noise, 7).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((out.get(r, c) - rho.get(r, c)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn channel_halves_coherence_at_log_two() {
        let state = [
            Complex64::new(1.0 / 2f64.sqrt(), 0.0),
            Complex64::new(1.0 / 2f64.sqrt(), 0.0),
        ];
        let rho = DensityMatrix::from_pure(&state);
        assert_abs_diff_eq!(rho.get(0, 1).re, 0.5, epsilon = 1e-15);
        let noise = NoiseModel::new(vec![2f64.ln()]).unwrap();
        let out = apply_dephasing_channel(&rho, &noise, 1).unwrap();
        assert_abs_diff_eq!(out.get(0, 1).re, 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(out.get(0, 0).re, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn channel_preserves_density_matrix_validity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.random_range(2..=4);
            // random mixed state from a random pure ensemble
            let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
            let mut weights = vec![0.0; n];
            for w in &mut weights {
                *w = rng.random::<f64>();
            }
            let total: f64 = weights.iter().sum();
            for weight in &weights {
                let vec: Vec<Complex64> = (0..n)
                    .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                    .collect();
                let norm: f64 = vec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                for r in 0..n {
                    for c in 0..n {
                        entries[r * n + c] +=
                            weight / total * vec[r] * vec[c].conj() / (norm * norm);
                    }
                }
            }
            let rho = DensityMatrix::from_entries(n, entries).unwrap();
            rho.validate(1e-10).unwrap();
            let gammas: Vec<f64> = (0..n - 1).map(|_| rng.random_range(0.0..1.0)).collect();
            let noise = NoiseModel::new(gammas).unwrap();
            let m = rng.random_range(1..=32);
            let out = apply_dephasing_channel(&rho, &noise, m).unwrap();
            assert!((out.trace().re - 1.0).abs() < 1e-12);
            assert!(out.hermiticity_deviation() < 1e-12);
            assert!(out.min_eigenvalue() > -1e-10);
        }
    }

    #[test]
    fn channel_rejects_dimension_mismatch() {
        let rho = DensityMatrix::from_pure(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let noise = NoiseModel::new(vec![0.1, 0.2]).unwrap();
        assert!(matches!(
            apply_dephasing_channel(&rho, &noise, 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn noon_with_zero_control_phases_matches_circuit() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let d = rng.random_range(1..=4);
            let theta = PhasePoint::new((0..d).map(|_| rng.random_range(0.0..TAU)).collect());
            let m = rng.random_range(1..=256);
            let noon = noon_outcome_probabilities(&theta, &vec![0.0; d + 1], m).unwrap();
            let circuit = outcome_probabilities(&spec(theta.as_slice(), &vec![0.0; d + 1], m));
            for (a, b) in noon.iter().zip(circuit.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn noon_control_phase_rescaling_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..30 {
            let d = rng.random_range(1..=4);
            let theta = PhasePoint::new((0..d).map(|_| rng.random_range(0.0..TAU)).collect());
            let phi: Vec<f64> = (0..=d).map(|_| rng.random_range(0.0..TAU)).collect();
            let m = rng.random_range(1..=512);
            let scaled: Vec<f64> = phi.iter().map(|p| p / m as f64).collect();
            let noon = noon_outcome_probabilities(&theta, &scaled, m).unwrap();
            let circuit = outcome_probabilities(
                &CircuitSpec::new(theta.clone(), phi, m).unwrap(),
            );
            let mut sum = 0.0;
            for (a, b) in noon.iter().zip(circuit.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                sum += a;
            }
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spec_wraps_phases_and_requires_reps() {
        let s = spec(&[TAU + 1.0], &[-1.0, 0.5], 4);
        assert!((s.theta[0] - 1.0).abs() < 1e-15);
        assert!((s.phi[0] - (TAU - 1.0)).abs() < 1e-15);
        assert!(CircuitSpec::new(PhasePoint::new(vec![0.1]), vec![0.0, 0.0], 0).is_err());
        assert!(CircuitSpec::new(PhasePoint::new(vec![]), vec![0.0], 1).is_err());
    }

    #[test]
    fn probabilities_periodic_in_theta_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for &m in &[2u64, 4, 8, 64, 512] {
            let d = rng.random_range(1..=3);
            let shift = TAU / m as f64;
            let theta: Vec<f64> = (0..d)
                .map(|_| rng.random_range(0.0..TAU - shift))
                .collect();
            let phi: Vec<f64> = (0..=d).map(|_| rng.random_range(0.0..TAU)).collect();
            let base = outcome_probabilities(&spec(&theta, &phi, m));
            let shifted: Vec<f64> = theta.iter().map(|&t| t + shift).collect();
            let moved = outcome_probabilities(&spec(&shifted, &phi, m));
            for (a, b) in base.iter().zip(moved.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn probabilities_are_normalized(
            d in 1usize..=6,
            seed in any::<u64>(),
            log_m in 0u32..=20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = CircuitSpec::random(&mut rng, d, 1u64 << log_m);
            let p = outcome_probabilities(&s);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for v in &p {
                prop_assert!(*v >= -1e-14 && *v <= 1.0 + 1e-14);
            }
            let gammas: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..0.5)).collect();
            let noise = NoiseModel::new(gammas).unwrap();
            let q = noisy_outcome_probabilities(&s, &noise).unwrap();
            let sum: f64 = q.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for v in &q {
                prop_assert!(*v >= -1e-14 && *v <= 1.0 + 1e-14);
            }
        }

        #[test]
        fn noon_probabilities_are_normalized(
            d in 1usize..=5,
            seed in any::<u64>(),
            m in 1u64..=1024,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = PhasePoint::new((0..d).map(|_| rng.random_range(0.0..TAU)).collect());
            let phi: Vec<f64> = (0..=d).map(|_| rng.random_range(0.0..TAU)).collect();
            let p = noon_outcome_probabilities(&theta, &phi, m).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_rep_cap_follows_floor_rule() {
        let noise = NoiseModel::new(vec![0.02, 0.01]).unwrap();
        assert_eq!(noise.gate_rep_cap(), Some(50));
        assert_eq!(NoiseModel::noiseless(2).gate_rep_cap(), None);
        let strong = NoiseModel::new(vec![3.0]).unwrap();
        assert_eq!(strong.gate_rep_cap(), Some(1));
    }

    #[test]
    fn wrapped_estimates_match_reference_direction() {
        // consistency helper used by protocol diagnostics
        assert!(wrap_to_pi(0.1 - (TAU - 0.1)).abs() - 0.2 < 1e-12);
    }
}
