//! Small dense complex-matrix helpers sized for (d+1)-dimensional qudits.

use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::{Error, Result};

/// `e^{i 2π m / n}` with exact values on the real and imaginary axes.
///
/// The exponent is reduced mod `n` first, so large `m` (e.g. `k*l` in a DFT
/// matrix) loses no accuracy to argument growth.
pub fn unit_root(m: u64, n: u64) -> Complex64 {
    let r = m % n;
    if r == 0 {
        return Complex64::new(1.0, 0.0);
    }
    if 2 * r == n {
        return Complex64::new(-1.0, 0.0);
    }
    if 4 * r == n {
        return Complex64::new(0.0, 1.0);
    }
    if 4 * r == 3 * n {
        return Complex64::new(0.0, -1.0);
    }
    Complex64::from_polar(1.0, TAU * r as f64 / n as f64)
}

/// A square complex matrix representing a gate, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl GateMatrix {
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut entries = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                entries.push(f(r, c));
            }
        }
        GateMatrix { dim, entries }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |r, c| {
            if r == c {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// Diagonal matrix from phase angles: `diag(e^{i a_0}, ..., e^{i a_{n-1}})`.
    pub fn phase_diagonal(angles: &[f64]) -> Self {
        let dim = angles.len();
        Self::from_fn(dim, |r, c| {
            if r == c {
                Complex64::from_polar(1.0, angles[r])
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.entries[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.entries[r * self.dim + c] = v;
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                (0..self.dim)
                    .map(|c| self.get(r, c) * v[c])
                    .sum::<Complex64>()
            })
            .collect()
    }

    pub fn matmul(&self, other: &GateMatrix) -> GateMatrix {
        assert_eq!(self.dim, other.dim);
        GateMatrix::from_fn(self.dim, |r, c| {
            (0..self.dim)
                .map(|k| self.get(r, k) * other.get(k, c))
                .sum()
        })
    }

    pub fn dagger(&self) -> GateMatrix {
        GateMatrix::from_fn(self.dim, |r, c| self.get(c, r).conj())
    }

    /// Max per-entry deviation of `U† U` from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let prod = self.dagger().matmul(self);
        let mut max = 0.0f64;
        for r in 0..self.dim {
            for c in 0..self.dim {
                let expect = if r == c { 1.0 } else { 0.0 };
                let dev = (prod.get(r, c) - Complex64::new(expect, 0.0)).norm();
                max = max.max(dev);
            }
        }
        max
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_deviation() <= tol
    }

    /// Max per-entry modulus of the difference to `other`.
    pub fn max_entry_deviation(&self, other: &GateMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// A density matrix (Hermitian, unit trace, positive semidefinite), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn from_entries(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Ok(DensityMatrix { dim, entries })
    }

    pub fn from_pure(state: &[Complex64]) -> Self {
        let dim = state.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                entries.push(state[r] * state[c].conj());
            }
        }
        DensityMatrix { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.entries[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.entries[r * self.dim + c] = v;
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `G ρ G†` for a gate `G`.
    pub fn conjugate_by(&self, gate: &GateMatrix) -> DensityMatrix {
        assert_eq!(self.dim, gate.dim());
        let n = self.dim;
        // tmp = G ρ
        let mut tmp = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += gate.get(r, k) * self.get(k, c);
                }
                tmp[r * n + c] = acc;
            }
        }
        // out = tmp G†
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += tmp[r * n + k] * gate.get(c, k).conj();
                }
                out[r * n + c] = acc;
            }
        }
        DensityMatrix {
            dim: n,
            entries: out,
        }
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let mut max = 0.0f64;
        for r in 0..self.dim {
            for c in r..self.dim {
                let dev = (self.get(r, c) - self.get(c, r).conj()).norm();
                max = max.max(dev);
            }
        }
        max
    }

    /// Eigenvalues via the real symmetric embedding `[[Re, -Im], [Im, Re]]`,
    /// which carries each Hermitian eigenvalue twice.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.dim;
        let m = 2 * n;
        let mut emb = vec![0.0f64; m * m];
        for r in 0..n {
            for c in 0..n {
                let z = self.get(r, c);
                emb[r * m + c] = z.re;
                emb[(r + n) * m + (c + n)] = z.re;
                emb[r * m + (c + n)] = -z.im;
                emb[(r + n) * m + c] = z.im;
            }
        }
        let mut all = symmetric_eigenvalues(&emb, m);
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // keep one copy of each doubled eigenvalue
        all.into_iter().step_by(2).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Check Hermiticity, unit trace, and spectrum bounds.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let herm = self.hermiticity_deviation();
        if herm > tol {
            return Err(Error::InvalidConfig(format!(
                "density matrix not Hermitian (deviation {herm:.3e})"
            )));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::InvalidConfig(format!(
                "density matrix trace {} != 1",
                tr.re
            )));
        }
        let min = self.min_eigenvalue();
        if min < -1e-10 {
            return Err(Error::InvalidConfig(format!(
                "density matrix has eigenvalue {min:.3e} below -1e-10"
            )));
        }
        Ok(())
    }
}

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi sweeps.
pub fn symmetric_eigenvalues(mat: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(mat.len(), n * n);
    let mut a = mat.to_vec();
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[p * n + q].abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}
