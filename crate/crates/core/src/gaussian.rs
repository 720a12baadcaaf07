//! Gaussian pure states in the graph picture.
//!
//! A state is fixed by `Z = V + iU` and centers `(c_q, c_p)` through the
//! nullifier `(p̂ − c_p − Z(q̂ − c_q))|ψ⟩ = 0`. Restricted symplectic maps
//! `S = diag(Wᵀ, W⁻¹)` keep `V = 0`.
//!
//! The wavefunction uses `p̂ = −i∂` so that the nullifier holds literally; a
//! graph state with real adjacency `A` in `ħ = 1/2` units has `Z = 2A`.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-9;
pub const MAX_CONDITION: f64 = 1e12;
pub const DEFAULT_DET_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomodyneConfig {
    /// Multiplies `Π_Y U⁻¹ Π_Yᵀ`; 0.5 gives the Born-rule marginal of the
    /// wavefunction.
    pub covariance_scale: f64,
    /// Multiplies `U` before sampling, sharpening the outcome distribution.
    pub squeeze_scale: f64,
    /// Shift the surviving centers by the conditional mean
    /// `−U_HH⁻¹ U_HY (y − c_Y)` instead of projecting them.
    pub conditional_centers: bool,
}

impl Default for HomodyneConfig {
    fn default() -> Self {
        Self { covariance_scale: 1.0, squeeze_scale: 1.0, conditional_centers: false }
    }
}

impl HomodyneConfig {
    /// The training-pipeline setting: strongly squeezed inputs.
    pub fn squeezed() -> Self {
        Self { squeeze_scale: 1e3, ..Self::default() }
    }
}

/// Spectral condition number of a symmetric or general square matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// LU inverse behind a condition-number guard.
pub fn guarded_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular(format!("{what}: condition number {cond:.3e}")));
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what}: LU failed")))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows.iter())
}

pub fn select_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows.iter()).select_columns(cols.iter())
}

pub fn complement(n: usize, modes: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !modes.contains(i)).collect()
}

pub fn check_modes(n: usize, modes: &[usize]) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::InvalidArgument("no modes to measure".into()));
    }
    let mut seen = vec![false; n];
    for &m in modes {
        if m >= n || seen[m] {
            return Err(Error::InvalidArgument(format!("bad or repeated mode index {m}")));
        }
        seen[m] = true;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestrictedSymplectic {
    w: DMatrix<f64>,
}

impl RestrictedSymplectic {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        Self::with_floor(w, DEFAULT_DET_FLOOR)
    }

    pub fn with_floor(w: DMatrix<f64>, delta: f64) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::InvalidArgument("W must be square".into()));
        }
        let det = w.determinant();
        if !(det.abs() > delta) {
            return Err(Error::Singular(format!("|det W| = {:.3e}", det.abs())));
        }
        Ok(Self { w })
    }

    pub fn identity(n: usize) -> Self {
        Self { w: DMatrix::identity(n, n) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `W⁻ᵀ`.
    pub fn inverse_transpose(&self) -> Result<DMatrix<f64>> {
        Ok(guarded_inverse(&self.w, "W")?.transpose())
    }

    /// `self ∘ first`, i.e. the map with matrix `W_self · W_first`.
    pub fn after(&self, first: &Self) -> Result<Self> {
        Self::new(&self.w * &first.w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphGaussianState {
    n: usize,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    cq: DVector<f64>,
    cp: DVector<f64>,
}

impl GraphGaussianState {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>, cq: DVector<f64>, cp: DVector<f64>) -> Result<Self> {
        let n = u.nrows();
        if u.shape() != (n, n) || v.shape() != (n, n) || cq.len() != n || cp.len() != n {
            return Err(Error::InvalidArgument("state shapes do not match".into()));
        }
        let s = Self { n, u, v, cq, cp };
        s.check()?;
        Ok(s)
    }

    /// `V = 0`, `c_p = 0`.
    pub fn restricted(u: DMatrix<f64>, cq: DVector<f64>) -> Result<Self> {
        let n = u.nrows();
        Self::new(u, DMatrix::zeros(n, n), cq, DVector::zeros(n))
    }

    fn check(&self) -> Result<()> {
        if !is_symmetric(&self.u, SYMMETRY_TOL) || !is_symmetric(&self.v, SYMMETRY_TOL) {
            return Err(Error::InvalidArgument("U and V must be symmetric".into()));
        }
        let sym = (&self.u + self.u.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        if eig.iter().any(|&l| !(l > SYMMETRY_TOL)) {
            return Err(Error::InvalidArgument("U must be positive definite".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }
    pub fn cq(&self) -> &DVector<f64> {
        &self.cq
    }
    pub fn cp(&self) -> &DVector<f64> {
        &self.cp
    }

    pub fn is_restricted(&self) -> bool {
        self.v.amax() <= SYMMETRY_TOL
    }

    /// `Z = V + iU`.
    pub fn z(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n, self.n, |i, j| Complex64::new(self.v[(i, j)], self.u[(i, j)]))
    }

    pub fn apply_symplectic(&self, w: &RestrictedSymplectic) -> Result<Self> {
        if !self.is_restricted() {
            return Err(Error::InvalidArgument("restricted evolution needs V = 0".into()));
        }
        if w.w.nrows() != self.n {
            return Err(Error::ModeMismatch(self.n, w.w.nrows()));
        }
        let wit = w.inverse_transpose()?;
        let u = &w.w * &self.u * w.w.transpose();
        if !is_symmetric(&u, 1e-6) {
            return Err(Error::Singular("transformed U lost symmetry".into()));
        }
        let u = (&u + u.transpose()) * 0.5;
        let cq = wit * &self.cq;
        Self::new(u, self.v.clone(), cq, self.cp.clone())
    }

    /// Homodyne mean `Π_Y c_q` and covariance `scale · Π_Y (sU)⁻¹ Π_Yᵀ`.
    pub fn homodyne_moments(
        &self,
        modes: &[usize],
        cfg: &HomodyneConfig,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_modes(self.n, modes)?;
        let uinv = guarded_inverse(&(&self.u * cfg.squeeze_scale), "U")?;
        let cov = select_block(&uinv, modes, modes) * cfg.covariance_scale;
        let mean = DVector::from_iterator(modes.len(), modes.iter().map(|&i| self.cq[i]));
        Ok((mean, cov))
    }

    /// Samples the measured quadratures and returns the state of the
    /// unmeasured modes (`None` when every mode was measured).
    pub fn homodyne_sample<R: Rng + ?Sized>(
        &self,
        modes: &[usize],
        cfg: &HomodyneConfig,
        rng: &mut R,
    ) -> Result<(DVector<f64>, Option<Self>)> {
        if !self.is_restricted() {
            return Err(Error::InvalidArgument("homodyne sampling needs V = 0".into()));
        }
        let (mean, cov) = self.homodyne_moments(modes, cfg)?;
        let chol = Cholesky::new(cov).ok_or_else(|| Error::Singular("homodyne covariance".into()))?;
        let z = DVector::from_iterator(modes.len(), (0..modes.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = mean + chol.l() * z;
        let keep = complement(self.n, modes);
        if keep.is_empty() {
            return Ok((y, None));
        }
        let u = select_block(&self.u, &keep, &keep);
        let mut cq = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.cq[i]));
        if cfg.conditional_centers {
            let uhy = select_block(&self.u, &keep, modes);
            let dy = DVector::from_iterator(modes.len(), modes.iter().zip(y.iter()).map(|(&i, v)| v - self.cq[i]));
            cq -= guarded_inverse(&u, "U_HH")? * uhy * dy;
        }
        let cp = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.cp[i]));
        let post = Self::new(u, select_block(&self.v, &keep, &keep), cq, cp)?;
        Ok((y, Some(post)))
    }

    /// `π^{−n/4} (det U)^{1/4} exp(i c_p·q + (i/2)(q−c_q)ᵀ Z (q−c_q))`.
    pub fn wavefunction(&self, points: &[DVector<f64>]) -> Result<Vec<Complex64>> {
        let det = self.u.determinant();
        let norm = std::f64::consts::PI.powf(-(self.n as f64) / 4.0) * det.powf(0.25);
        points
            .iter()
            .map(|q| {
                if q.len() != self.n {
                    return Err(Error::ModeMismatch(self.n, q.len()));
                }
                let d = q - &self.cq;
                let quad_v = d.dot(&(&self.v * &d));
                let quad_u = d.dot(&(&self.u * &d));
                let phase = self.cp.dot(q) + 0.5 * quad_v;
                Ok(Complex64::from_polar(norm * (-0.5 * quad_u).exp(), phase))
            })
            .collect()
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("state json")
    }
}
