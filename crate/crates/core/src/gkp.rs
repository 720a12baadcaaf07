//! Lattice superpositions of Gaussian branches.
//!
//! A state is a uniform superposition over `ℓ ∈ ℤⁿ` of Gaussians with
//! adjacency `A` and position centers `α + Jℓ`, in the infinite-squeezing
//! limit where branches are orthogonal.
//!
//! Measuring the modes `Y` keeps the branches with `Π_Y(α + Jℓ) = y`. When
//! `J_YY` is invertible the survivors are parametrized by `ℓ_H`: their centers
//! are `α_H + J_HY J_YY⁻¹(y − α_Y) + J' ℓ_H` with the Schur complement
//! `J' = J_HH − J_HY J_YY⁻¹ J_YH`. If `J = W⁻ᵀ diag(L_HH, L_YY)`, then
//! `J' = ((Wᵀ)_HH)⁻¹ L_HH`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    check_modes, complement, guarded_inverse, is_symmetric, select_block, select_rows, RestrictedSymplectic,
    SYMMETRY_TOL,
};

/// Enumeration cap for [`enumerate_fiber`].
pub const MAX_FIBER_CANDIDATES: u64 = 10_000_000;
pub const FIBER_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GkpLatticeState {
    a: DMatrix<f64>,
    j: DMatrix<f64>,
    alpha: DVector<f64>,
}

/// Structured readout of a lattice measurement: `Π_Y J` and `Π_Y α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeReadout {
    pub lattice: DMatrix<f64>,
    pub centers: DVector<f64>,
}

impl LatticeReadout {
    /// Row-major lattice block followed by the centers.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.lattice.len() + self.centers.len());
        for r in 0..self.lattice.nrows() {
            out.extend(self.lattice.row(r).iter());
        }
        out.extend(self.centers.iter());
        out
    }
}

impl GkpLatticeState {
    pub fn new(a: DMatrix<f64>, j: DMatrix<f64>, alpha: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.shape() != (n, n) || j.shape() != (n, n) || alpha.len() != n {
            return Err(Error::InvalidArgument("lattice state shapes do not match".into()));
        }
        if !is_symmetric(&a, SYMMETRY_TOL) {
            return Err(Error::InvalidArgument("A must be symmetric".into()));
        }
        if a.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument("A must be positive definite".into()));
        }
        if !(j.determinant().abs() > 1e-8) {
            return Err(Error::Singular("lattice J".into()));
        }
        Ok(Self { a, j, alpha })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn j(&self) -> &DMatrix<f64> {
        &self.j
    }
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Center of the branch `ℓ`.
    pub fn branch_center(&self, l: &[i64]) -> DVector<f64> {
        let lv = DVector::from_iterator(l.len(), l.iter().map(|&x| x as f64));
        &self.alpha + &self.j * lv
    }

    pub fn apply_symplectic(&self, w: &RestrictedSymplectic) -> Result<Self> {
        let wm = w.matrix();
        if wm.nrows() != self.n() {
            return Err(Error::ModeMismatch(self.n(), wm.nrows()));
        }
        let wit = w.inverse_transpose()?;
        let a = wm * &self.a * wm.transpose();
        let a = (&a + a.transpose()) * 0.5;
        Self::new(a, &wit * &self.j, &wit * &self.alpha)
    }

    /// Conditions on `Π_Y x = y` (default `y = Π_Y α`, the branch through
    /// `ℓ = 0`) and returns the readout with the state of the kept modes.
    pub fn measure_lattice(
        &self,
        modes: &[usize],
        y: Option<&DVector<f64>>,
    ) -> Result<(LatticeReadout, Option<Self>)> {
        let n = self.n();
        check_modes(n, modes)?;
        let keep = complement(n, modes);
        let readout = LatticeReadout {
            lattice: select_rows(&self.j, modes),
            centers: DVector::from_iterator(modes.len(), modes.iter().map(|&i| self.alpha[i])),
        };
        if keep.is_empty() {
            return Ok((readout, None));
        }
        let jyy_inv = guarded_inverse(&select_block(&self.j, modes, modes), "J_YY")?;
        let jhy = select_block(&self.j, &keep, modes);
        let jyh = select_block(&self.j, modes, &keep);
        let j = select_block(&self.j, &keep, &keep) - &jhy * &jyy_inv * jyh;
        let mut alpha = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.alpha[i]));
        if let Some(y) = y {
            if y.len() != modes.len() {
                return Err(Error::InvalidArgument("outcome length does not match modes".into()));
            }
            alpha += &jhy * &jyy_inv * (y - &readout.centers);
        }
        let a = select_block(&self.a, &keep, &keep);
        Ok((readout, Some(Self::new(a, j, alpha)?)))
    }
}

/// A lattice state described before the symplectic map: `W`, the
/// block-diagonal `L` and the centers `c_q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeFrame {
    pub w: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub cq: DVector<f64>,
}

impl LatticeFrame {
    /// `(W⁻ᵀ c_q, W⁻ᵀ L)`.
    pub fn transformed(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let wit = guarded_inverse(&self.w, "W")?.transpose();
        Ok((&wit * &self.cq, &wit * &self.l))
    }

    /// The post-measurement lattice `((Wᵀ)_HH)⁻¹ L_HH`.
    pub fn closed_form_lattice(&self, modes: &[usize]) -> Result<DMatrix<f64>> {
        let keep = complement(self.w.nrows(), modes);
        let wt_hh = select_block(&self.w.transpose(), &keep, &keep);
        Ok(guarded_inverse(&wt_hh, "W_HH")? * select_block(&self.l, &keep, &keep))
    }
}

/// Every `ℓ ∈ [−box, box]^N` whose branch center matches `y` on `modes`.
pub fn enumerate_fiber(
    frame: &LatticeFrame,
    modes: &[usize],
    y: &DVector<f64>,
    radius: i64,
) -> Result<Vec<Vec<i64>>> {
    let n = frame.w.nrows();
    check_modes(n, modes)?;
    if radius < 1 {
        return Err(Error::InvalidArgument("box radius must be at least 1".into()));
    }
    let width = (2 * radius + 1) as u64;
    let total = (0..n).try_fold(1u64, |acc, _| acc.checked_mul(width)).unwrap_or(u64::MAX);
    if total > MAX_FIBER_CANDIDATES {
        return Err(Error::InvalidArgument(format!("{total} fiber candidates exceed the cap")));
    }
    let (c, j) = frame.transformed()?;
    let jy = select_rows(&j, modes);
    let cy = DVector::from_iterator(modes.len(), modes.iter().map(|&i| c[i]));
    let mut out = Vec::new();
    let mut l = vec![-radius; n];
    for _ in 0..total {
        let lv = DVector::from_iterator(n, l.iter().map(|&x| x as f64));
        let dev = (&cy + &jy * lv - y).amax();
        if dev <= FIBER_TOL {
            out.push(l.clone());
        }
        for x in l.iter_mut() {
            *x += 1;
            if *x <= radius {
                break;
            }
            *x = -radius;
        }
    }
    Ok(out)
}

/// Largest distance between each brute-force fiber center and the
/// closed-form parametrization `α' + J' ℓ_H`, plus whether `ℓ ↦ ℓ_H` is
/// injective on the fiber.
pub fn fiber_deviation(
    frame: &LatticeFrame,
    modes: &[usize],
    y: &DVector<f64>,
    radius: i64,
) -> Result<(f64, usize, bool)> {
    let n = frame.w.nrows();
    let (c, j) = frame.transformed()?;
    let a = DMatrix::identity(n, n);
    let state = GkpLatticeState::new(a, j.clone(), c.clone())?;
    let (_, post) = state.measure_lattice(modes, Some(y))?;
    let post = post.ok_or_else(|| Error::InvalidArgument("no modes left".into()))?;
    let keep = complement(n, modes);
    let closed = frame.closed_form_lattice(modes)?;
    let lattice_gap = (&closed - post.j()).amax();
    let fiber = enumerate_fiber(frame, modes, y, radius)?;
    let mut worst = lattice_gap;
    let mut seen = std::collections::HashSet::new();
    let mut injective = true;
    for l in &fiber {
        let center = &c + &j * DVector::from_iterator(n, l.iter().map(|&x| x as f64));
        let brute = DVector::from_iterator(keep.len(), keep.iter().map(|&i| center[i]));
        let lh: Vec<i64> = keep.iter().map(|&i| l[i]).collect();
        let formula = post.branch_center(&lh);
        worst = worst.max((brute - formula).amax());
        injective &= seen.insert(lh);
    }
    Ok((worst, fiber.len(), injective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn two_pi(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n) * (2.0 * PI)
    }

    #[test]
    fn identity_map_and_scaling() {
        let s = GkpLatticeState::new(DMatrix::identity(2, 2), two_pi(2), DVector::zeros(2)).unwrap();
        assert_eq!(s.apply_symplectic(&RestrictedSymplectic::identity(2)).unwrap(), s);
        let w = RestrictedSymplectic::new(DMatrix::identity(2, 2) * 2.0).unwrap();
        let t = s.apply_symplectic(&w).unwrap();
        assert!((t.j() - DMatrix::identity(2, 2) * PI).amax() < 1e-15);
        assert!((t.a() - DMatrix::identity(2, 2) * 4.0).amax() < 1e-15);
    }

    #[test]
    fn measuring_one_of_two_identity_modes() {
        let s = GkpLatticeState::new(DMatrix::identity(2, 2), two_pi(2), DVector::zeros(2)).unwrap();
        let (r, post) = s.measure_lattice(&[1], None).unwrap();
        let post = post.unwrap();
        assert!((post.j()[(0, 0)] - 2.0 * PI).abs() < 1e-15);
        assert_eq!(r.lattice, DMatrix::from_row_slice(1, 2, &[0.0, 2.0 * PI]));
        assert_eq!(r.flatten(), vec![0.0, 2.0 * PI, 0.0]);
    }

    #[test]
    fn identity_fiber_counts() {
        let frame = LatticeFrame { w: DMatrix::identity(2, 2), l: two_pi(2), cq: DVector::zeros(2) };
        let y = DVector::from_element(1, 2.0 * PI);
        let fiber = enumerate_fiber(&frame, &[1], &y, 3).unwrap();
        assert_eq!(fiber.len(), 7);
        assert!(fiber.iter().all(|l| l[1] == 1));
        let none = enumerate_fiber(&frame, &[1], &DVector::from_element(1, 1.0), 3).unwrap();
        assert!(none.is_empty());
        assert!(enumerate_fiber(&frame, &[1], &y, 5000).is_err());
    }

    #[test]
    fn closed_form_matches_unimodular_fiber() {
        // W⁻ᵀ integral and unimodular, so consistent ℓ form a rich fiber.
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0, -1.0]);
        let w = m.clone().try_inverse().unwrap().transpose();
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 1.0]));
        let frame = LatticeFrame { w, l, cq: DVector::from_vec(vec![0.1, -0.3, 0.2]) };
        let (c, j) = frame.transformed().unwrap();
        let y = DVector::from_element(1, c[2] + (j.row(2) * DVector::from_vec(vec![1.0, -1.0, 2.0]))[0]);
        let (dev, count, injective) = fiber_deviation(&frame, &[2], &y, 4).unwrap();
        assert!(count > 1 && injective);
        assert!(dev <= 1e-9, "{dev}");
    }
}
