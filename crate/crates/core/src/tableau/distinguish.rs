//! Graph-state tableaux and length-two distinguishing suffixes.

use serde::{Deserialize, Serialize};

use super::{continuous_word, Continuous, Membership, StabilizerTableau};
use crate::error::{Error, Result};
use crate::pauli::{pauli_mul, pauli_product, PauliWord};
use crate::scalar::{phase_eq, reduce_phase, Backend, Coeff, Rational, Scalar, Unit};

/// Weighted loopless graph with optional nullifier centers: the state obeys
/// `p̂_i − Σ_j A_ij q̂_j = c_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSpec<C> {
    pub adjacency: Vec<Vec<C>>,
    pub centers: Vec<C>,
}

impl<C: Coeff> GraphSpec<C> {
    pub fn new(adjacency: Vec<Vec<C>>) -> Self {
        let n = adjacency.len();
        Self { adjacency, centers: vec![C::zero(); n] }
    }

    pub fn with_centers(mut self, centers: Vec<C>) -> Self {
        self.centers = centers;
        self
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidArgument("empty graph".into()));
        }
        if self.centers.len() != n || self.adjacency.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("graph shapes do not match".into()));
        }
        for i in 0..n {
            if !self.adjacency[i][i].is_zero() {
                return Err(Error::InvalidArgument(format!("graph has a loop at vertex {i}")));
            }
            for j in 0..i {
                if !self.adjacency[i][j].sub(&self.adjacency[j][i]).is_zero() {
                    return Err(Error::InvalidArgument("adjacency is not symmetric".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            adjacency: self
                .adjacency
                .iter()
                .map(|r| r.iter().map(|x| x.to_scalar(Unit::One)).collect())
                .collect(),
            centers: self.centers.iter().map(|c| c.to_scalar(Unit::Pi)).collect(),
        }
    }

    pub fn from_snapshot(s: &GraphSnapshot) -> Result<Self> {
        let adjacency = s
            .adjacency
            .iter()
            .map(|r| r.iter().map(|x| C::from_scalar(x, Unit::One)).collect())
            .collect::<Result<Vec<Vec<C>>>>()?;
        let centers =
            s.centers.iter().map(|c| C::from_scalar(c, Unit::Pi)).collect::<Result<Vec<C>>>()?;
        let g = Self { adjacency, centers };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSnapshot {
    pub adjacency: Vec<Vec<Scalar>>,
    pub centers: Vec<Scalar>,
}

/// Continuous directions `u_i = (−A_i | e_i)` with the graph's centers.
pub fn graph_tableau<C: Coeff>(g: &GraphSpec<C>, kappa: C) -> Result<StabilizerTableau<C>> {
    g.validate()?;
    let n = g.n();
    let continuous = (0..n)
        .map(|i| {
            let mut u: Vec<C> = g.adjacency[i].iter().map(|x| x.neg()).collect();
            u.extend((0..n).map(|j| if i == j { C::one() } else { C::zero() }));
            Continuous { u, c: g.centers[i].clone() }
        })
        .collect();
    StabilizerTableau::from_parts(n, kappa, continuous, vec![])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `m1 = S_i S_j`, `m2 = s'_i s'_j m1`.
    Pair,
    /// `m1 = S_j`, `m2 = s'_j m1`.
    SingleJ,
    /// `m1 = S_i`, `m2 = s'_i m1`.
    SingleI,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistinguishingSequence<C> {
    pub m1: PauliWord<C>,
    pub m2: PauliWord<C>,
    pub branch: Branch,
    pub pivot: (usize, usize),
    /// Unit-system constant the words were built in.
    pub kappa: C,
    /// Scale of the stabilizers `s^α` in the word frame.
    pub alpha: C,
    /// Outcome of `m1` the suffix conditions on.
    pub m1_outcome: C,
    /// Forced phase of `m2` on each state after `m1` returned `m1_outcome`.
    pub phases: [C; 2],
}

fn differs_mod_pi<C: Coeff>(z: &C) -> bool {
    match C::BACKEND {
        // π is irrational, so a rational difference is a multiple of π only at 0.
        Backend::Exact => !z.is_zero(),
        Backend::Float => !z.div(&C::half_turn()).is_integer(),
    }
}

/// `(α, κ)` making `s'_i` and `s''_j` anticommute: `α² = π / (2|ζ|)`.
fn rescale_for_pi<C: Coeff>(zeta: &C) -> Result<(C, C)> {
    let abs = if zeta.to_f64() < 0.0 { zeta.neg() } else { zeta.clone() };
    match C::BACKEND {
        Backend::Exact => Ok((C::one(), C::one().div(&C::from_i64(2).mul(&abs)))),
        Backend::Float => {
            let a = (std::f64::consts::PI / (2.0 * abs.to_f64())).sqrt();
            Ok((C::from_scalar(&Scalar::Float(a), Unit::One)?, C::one()))
        }
    }
}

/// Forced phase of `m2` after postselecting `m1` on `outcome`.
pub fn replay_suffix<C: Coeff>(
    t: &StabilizerTableau<C>,
    m1: &PauliWord<C>,
    outcome: &C,
    m2: &PauliWord<C>,
) -> Result<C> {
    let mut t = t.clone();
    t.measure_pauli_forced(m1, outcome)?;
    match t.contains(m2)? {
        Membership::Deterministic(phi) => Ok(phi),
        _ => Err(Error::Inconsistent("suffix word is not forced".into())),
    }
}

/// Phase in `(−π, π]`.
fn centered<C: Coeff>(x: &C) -> C {
    let r = reduce_phase(x);
    if r.to_f64() > C::half_turn().to_f64() {
        r.sub(&C::full_turn())
    } else {
        r
    }
}

/// Outcome of `m1` that makes the two forced phases of `m2` differ by π.
///
/// The phase difference is affine in the `m1` outcome with an integer slope,
/// which a small probe recovers unambiguously.
fn splitting_outcome<C: Coeff>(
    t1: &StabilizerTableau<C>,
    t2: &StabilizerTableau<C>,
    m1: &PauliWord<C>,
    m2: &PauliWord<C>,
) -> Result<Option<(C, [C; 2])>> {
    let diff = |o: &C| -> Result<(C, [C; 2])> {
        let p1 = replay_suffix(t1, m1, o, m2)?;
        let p2 = replay_suffix(t2, m1, o, m2)?;
        Ok((p2.sub(&p1), [p1, p2]))
    };
    let (d0, phases) = diff(&C::zero())?;
    if phase_eq(&d0, &C::half_turn()) {
        return Ok(Some((C::zero(), phases)));
    }
    let probe = C::full_turn().div(&C::from_i64(512));
    let (dp, _) = diff(&probe)?;
    let slope = centered(&dp.sub(&d0)).div(&probe).round_int();
    if slope.is_zero() {
        return Ok(None);
    }
    let target = reduce_phase(&C::half_turn().sub(&d0).div(&slope));
    let (d, phases) = diff(&target)?;
    Ok(phase_eq(&d, &C::half_turn()).then_some((target, phases)))
}

/// A two-word suffix on which the graph states of `g1` and `g2` (both
/// reached from `|0⟩_q`, where the Z-type `m1` is forced to 0) give opposite
/// forced phases for `m2` once `m1` returns `m1_outcome`.
pub fn distinguishing_sequence<C: Coeff>(
    g1: &GraphSpec<C>,
    g2: &GraphSpec<C>,
) -> Result<DistinguishingSequence<C>> {
    g1.validate()?;
    g2.validate()?;
    let n = g1.n();
    if g2.n() != n {
        return Err(Error::ModeMismatch(n, g2.n()));
    }
    let pivot = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .find(|&(i, j)| differs_mod_pi(&g1.adjacency[i][j].sub(&g2.adjacency[i][j])))
        .ok_or_else(|| Error::InvalidArgument("graphs agree modulo π".into()))?;
    let (i, j) = pivot;
    let zeta = g1.adjacency[i][j].sub(&g2.adjacency[i][j]);
    let (alpha, kappa) = rescale_for_pi(&zeta)?;
    let t1 = graph_tableau(g1, kappa.clone())?;
    let t2 = graph_tableau(g2, kappa.clone())?;
    let tau = alpha.mul(&C::from_i64(-2));
    let stab = |t: &StabilizerTableau<C>, k: usize| {
        let c = &t.continuous()[k];
        continuous_word(&c.u, &c.c, &tau, &kappa)
    };
    let z_diff = |k: usize| -> Result<PauliWord<C>> {
        let v: Vec<C> =
            stab(&t1, k).vector().iter().zip(stab(&t2, k).vector()).map(|(x, y)| x.sub(y)).collect();
        PauliWord::from_vector(v, C::zero(), kappa.clone())
    };
    let (si, sj) = (z_diff(i)?, z_diff(j)?);
    let pair_m1 = pauli_mul(&si, &sj)?;
    let candidates = [
        (Branch::Pair, pair_m1.clone(), pauli_product(&[stab(&t1, i), stab(&t1, j), pair_m1])?),
        (Branch::SingleJ, sj.clone(), pauli_mul(&stab(&t1, j), &sj)?),
        (Branch::SingleI, si.clone(), pauli_mul(&stab(&t1, i), &si)?),
    ];
    for (branch, m1, m2) in candidates {
        if let Ok(Some((m1_outcome, phases))) = splitting_outcome(&t1, &t2, &m1, &m2) {
            return Ok(DistinguishingSequence { m1, m2, branch, pivot, kappa, alpha, m1_outcome, phases });
        }
    }
    Err(Error::Inconsistent("no length-two suffix separates the graph states".into()))
}

impl DistinguishingSequence<Rational> {
    /// The unit system of the exact words: the symmetric frame of `κ`.
    pub fn units(&self) -> Result<crate::scalar::UnitSystem> {
        crate::scalar::UnitSystem::symmetric(self.kappa.clone())
    }
}
