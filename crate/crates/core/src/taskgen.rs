//! Stabilizer measurement translation instances.
//!
//! An instance measures the `n` rows of `Q = (B + H/2 | ‖B‖_F I)` as
//! nullifiers on the squeezed (or GKP) state, then `k` CV Pauli words. The
//! oracle transcript records every outcome, so replaying the inputs with the
//! recorded outcomes forced reproduces it.

use std::io::{BufRead, Write};

use num_traits::Signed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::PauliWord;
use crate::scalar::{phase_eq, reduce_phase, Backend, Coeff, Rational, Scalar, Unit};
use crate::tableau::{
    distinguishing_sequence, Branch, GraphSnapshot, GraphSpec, Membership, NullifierStatus, OutcomeKind,
    StabilizerTableau, TranscriptRecord,
};

pub const SCHEMA_VERSION: u32 = 1;
/// Edge weights are drawn from `{j / 32 : |j| ≤ 8}`.
pub const EDGE_GRID_DEN: i64 = 32;
pub const EDGE_GRID_MAX: i64 = 8;
/// Bound on rejection-sampling draws.
pub const MAX_DRAWS: usize = 20_000;
/// Phase tolerance of the consistency check in float mode.
pub const FLOAT_PHASE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitState {
    Squeezed,
    Gkp,
}

/// The all-ones hollow matrix `H`.
pub fn hollow_ones<C: Coeff>(n: usize) -> Vec<Vec<C>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { C::zero() } else { C::one() }).collect()).collect()
}

pub fn validate_b<C: Coeff>(b: &[Vec<C>]) -> Result<()> {
    let n = b.len();
    let quarter = C::one().div(&C::from_i64(4));
    for (i, row) in b.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidArgument("B must be square".into()));
        }
        if !row[i].is_zero() {
            return Err(Error::InvalidArgument(format!("B has a nonzero diagonal at {i}")));
        }
        for (j, x) in row.iter().enumerate() {
            if x.magnitude() > quarter.to_f64() + 1e-12 {
                return Err(Error::InvalidArgument(format!("B[{i}][{j}] lies outside [-1/4, 1/4]")));
            }
            if !x.sub(&b[j][i]).is_zero() {
                return Err(Error::InvalidArgument("B must be symmetric".into()));
            }
        }
    }
    Ok(())
}

fn exact_sqrt(r: &Rational) -> Option<Rational> {
    if r.is_negative() {
        return None;
    }
    let (n, d) = (r.numer().sqrt(), r.denom().sqrt());
    (&n * &n == *r.numer() && &d * &d == *r.denom()).then(|| Rational::new(n, d))
}

/// `‖B‖_F`; exact mode needs it rational.
pub fn frobenius_norm<C: Coeff>(b: &[Vec<C>]) -> Result<C> {
    let sq = b.iter().flatten().fold(C::zero(), |acc, x| acc.add(&x.mul(x)));
    match C::BACKEND {
        Backend::Exact => {
            let r = sq.to_rational().ok_or(Error::Incommensurate)?;
            exact_sqrt(&r)
                .map(|s| C::from_rational(&s))
                .ok_or_else(|| Error::NotRepresentable("‖B‖_F is irrational".into()))
        }
        Backend::Float => C::from_scalar(&Scalar::Float(sq.to_f64().sqrt()), Unit::One),
    }
}

/// `Q = (B + H/2 | ‖B‖_F I)`.
pub fn build_q<C: Coeff>(b: &[Vec<C>]) -> Result<Vec<Vec<C>>> {
    validate_b(b)?;
    let n = b.len();
    let norm = frobenius_norm(b)?;
    let half = C::one().div(&C::from_i64(2));
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<C> =
                (0..n).map(|j| if i == j { C::zero() } else { b[i][j].add(&half) }).collect();
            row.extend((0..n).map(|j| if i == j { norm.clone() } else { C::zero() }));
            row
        })
        .collect())
}

/// The graph prepared by measuring `Q`'s rows with the given outcomes:
/// `A = −(B + H/2)/‖B‖_F` with centers `outcome/‖B‖_F`.
pub fn q_graph<C: Coeff>(b: &[Vec<C>], outcomes: &[C]) -> Result<GraphSpec<C>> {
    let norm = frobenius_norm(b)?;
    if norm.is_zero() {
        return Err(Error::InvalidArgument("B = 0 prepares no graph state".into()));
    }
    let q = build_q(b)?;
    let n = b.len();
    let adjacency = q.iter().map(|row| row[..n].iter().map(|x| x.neg().div(&norm)).collect()).collect();
    let centers = outcomes.iter().map(|o| o.div(&norm)).collect();
    let g = GraphSpec::new(adjacency).with_centers(centers);
    g.validate()?;
    Ok(g)
}

/// Nonzero hollow symmetric `B` on the edge grid with rational `‖B‖_F`.
///
/// At `n = 2` the norm is `√2 |b₀₁|`, so exact mode has no admissible draw.
pub fn sample_b<C: Coeff, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<Vec<C>>> {
    if n < 2 || (n == 2 && C::BACKEND == Backend::Exact) {
        return Err(Error::NotRepresentable(format!("no nonzero B at n = {n} has a rational norm")));
    }
    for _ in 0..MAX_DRAWS {
        let mut b = vec![vec![C::zero(); n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = C::from_rational(&Rational::new(
                    rng.random_range(-EDGE_GRID_MAX..=EDGE_GRID_MAX).into(),
                    EDGE_GRID_DEN.into(),
                ));
                b[i][j] = v.clone();
                b[j][i] = v;
            }
        }
        match frobenius_norm(&b) {
            Ok(norm) if !norm.is_zero() => return Ok(b),
            _ => continue,
        }
    }
    Err(Error::SamplingFailed(MAX_DRAWS, "no grid matrix with rational nonzero norm".into()))
}

/// Elementwise `1[x≠0]/x`.
pub fn modified_transform<C: Coeff>(row: &[C]) -> Vec<C> {
    row.iter().map(|x| if x.is_zero() { C::zero() } else { C::one().div(x) }).collect()
}

fn to_scalars<C: Coeff>(v: &[C]) -> Vec<Scalar> {
    let n = v.len() / 2;
    v.iter().enumerate().map(|(i, x)| x.to_scalar(if i < n { Unit::Gq } else { Unit::Gp })).collect()
}

fn from_scalars<C: Coeff>(v: &[Scalar]) -> Result<Vec<C>> {
    let n = v.len() / 2;
    v.iter().enumerate().map(|(i, x)| C::from_scalar(x, if i < n { Unit::Gq } else { Unit::Gp })).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_matrix: Option<Vec<Vec<Scalar>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple_id: Option<usize>,
    /// 0 for the `B = 0` prefix, 1 and 2 for the two graphs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInstance {
    pub schema_version: u32,
    pub n: usize,
    pub k: usize,
    pub backend: Backend,
    pub kappa: Scalar,
    pub init_state: InitState,
    /// Measured rows are `modified_transform` of the inputs.
    pub modified: bool,
    /// `(n + k) × 2n`: nullifier rows, then Pauli exponent vectors.
    pub inputs: Vec<Vec<Scalar>>,
    pub transcript: Vec<TranscriptRecord>,
    pub metadata: InstanceMetadata,
}

impl TaskInstance {
    pub fn outcomes(&self) -> Vec<Scalar> {
        self.transcript.iter().map(|r| r.outcome.clone()).collect()
    }

    pub fn kind_of(&self, step: usize) -> OutcomeKind {
        if step < self.n { OutcomeKind::Nullifier } else { OutcomeKind::Pauli }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub k: usize,
    pub init_state: InitState,
    pub modified: bool,
}

fn init_tableau<C: Coeff>(state: InitState, n: usize, kappa: C) -> Result<StabilizerTableau<C>> {
    match state {
        InitState::Squeezed => StabilizerTableau::init_squeezed(n, kappa),
        InitState::Gkp => StabilizerTableau::init_gkp(n, kappa),
    }
}

/// A random nonzero Pauli exponent vector with entries in `{−1, −½, 0, ½, 1}`.
fn random_pauli_vector<C: Coeff, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<C> {
    loop {
        let v: Vec<C> =
            (0..2 * n).map(|_| C::from_rational(&Rational::new(rng.random_range(-2..=2).into(), 2.into()))).collect();
        if v.iter().any(|x| !x.is_zero()) {
            return v;
        }
    }
}

/// Measures the prefix rows of `b` and the `suffix` words (random when
/// `None`) on a fresh state, sampling every free outcome from `rng`.
pub fn gen_instance<C: Coeff, R: Rng + ?Sized>(
    cfg: &GenConfig,
    b: Option<Vec<Vec<C>>>,
    suffix: Option<Vec<Vec<C>>>,
    kappa: C,
    rng: &mut R,
) -> Result<TaskInstance> {
    let n = cfg.n;
    if n < 2 {
        return Err(Error::InvalidArgument("instances need n ≥ 2".into()));
    }
    let b = match b {
        Some(b) => b,
        None => sample_b(n, rng)?,
    };
    if b.len() != n {
        return Err(Error::ModeMismatch(n, b.len()));
    }
    let prefix = build_q(&b)?;
    let suffix = match suffix {
        Some(s) => s,
        None => (0..cfg.k).map(|_| random_pauli_vector(n, rng)).collect(),
    };
    if suffix.len() != cfg.k || suffix.iter().any(|v| v.len() != 2 * n) {
        return Err(Error::InvalidArgument("suffix shape does not match (k, 2n)".into()));
    }
    let mut t = init_tableau(cfg.init_state, n, kappa.clone())?;
    let mut transcript = Vec::with_capacity(n + cfg.k);
    let mut inputs = Vec::with_capacity(n + cfg.k);
    for (step, row) in prefix.iter().chain(&suffix).enumerate() {
        let measured = if cfg.modified { modified_transform(row) } else { row.clone() };
        let o = if step < n {
            t.measure_nullifier(&measured, rng)?
        } else {
            t.measure_pauli(&PauliWord::from_vector(measured.clone(), C::zero(), kappa.clone())?, rng)?
        };
        inputs.push(to_scalars(row));
        transcript.push(TranscriptRecord::new(step, &measured, &o));
    }
    // Plain squeezed prefixes prepare a graph state centered at outcome/‖B‖.
    let graph = if cfg.modified || cfg.init_state != InitState::Squeezed {
        None
    } else {
        let outcomes: Vec<C> = transcript[..n]
            .iter()
            .map(|r: &TranscriptRecord| C::from_scalar(&r.outcome, Unit::Pi))
            .collect::<Result<_>>()?;
        q_graph(&b, &outcomes).ok().map(|g| g.to_snapshot())
    };
    Ok(TaskInstance {
        schema_version: SCHEMA_VERSION,
        n,
        k: cfg.k,
        backend: C::BACKEND,
        kappa: kappa.to_scalar(Unit::One),
        init_state: cfg.init_state,
        modified: cfg.modified,
        inputs,
        transcript,
        metadata: InstanceMetadata {
            b_matrix: Some(b.iter().map(|r| r.iter().map(|x| x.to_scalar(Unit::One)).collect()).collect()),
            graph,
            ..Default::default()
        },
    })
}

/// Three instances sharing a two-word suffix: the prefixes prepare `|0⟩_q`
/// (`B = 0`) and two distinct graph states, and the suffix's forced outcomes
/// disagree across the graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialTriple {
    pub id: usize,
    pub instances: [TaskInstance; 3],
}

impl AdversarialTriple {
    /// The suffix outcome pairs `(m1, m2)` of the three members.
    pub fn suffix_outcomes(&self) -> [(Scalar, Scalar); 3] {
        self.instances.clone().map(|i| {
            let t = &i.transcript;
            (t[t.len() - 2].outcome.clone(), t[t.len() - 1].outcome.clone())
        })
    }

    /// At least two members disagree on the suffix.
    pub fn disagrees(&self) -> bool {
        let s = self.suffix_outcomes();
        s[0] != s[1] || s[1] != s[2]
    }
}

fn is_proportional<C: Coeff>(b1: &[Vec<C>], b2: &[Vec<C>]) -> Result<bool> {
    let (n1, n2) = (frobenius_norm(b1)?, frobenius_norm(b2)?);
    let h: Vec<Vec<C>> = hollow_ones(b1.len());
    let half = C::one().div(&C::from_i64(2));
    // A' = A'' ⇔ (B' + H/2)/‖B'‖ = (B'' + H/2)/‖B''‖.
    Ok(b1.iter().zip(b2).zip(&h).all(|((r1, r2), hr)| {
        r1.iter().zip(r2).zip(hr).all(|((x, y), hh)| {
            let hx = hh.mul(&half);
            x.add(&hx).mul(&n2).sub(&y.add(&hx).mul(&n1)).is_zero()
        })
    }))
}

/// Draws an adversarial triple at `n` modes.
///
/// Prefix outcomes are postselected to 0 (each is a free outcome), so the
/// graphs carry zero centers and `m1` is forced to 0 on `|0⟩_q`.
pub fn gen_adversarial_triple<C: Coeff, R: Rng + ?Sized>(n: usize, id: usize, rng: &mut R) -> Result<AdversarialTriple> {
    if n < 2 {
        return Err(Error::InvalidArgument("triples need n ≥ 2".into()));
    }
    for _ in 0..MAX_DRAWS {
        let b1: Vec<Vec<C>> = sample_b(n, rng)?;
        let b2: Vec<Vec<C>> = sample_b(n, rng)?;
        if is_proportional(&b1, &b2)? {
            continue;
        }
        let zeros = vec![C::zero(); n];
        let (g1, g2) = (q_graph(&b1, &zeros)?, q_graph(&b2, &zeros)?);
        // Which graph supplies the stabilizers of m2 is randomized.
        let swap = rng.random_bool(0.5);
        let d = match if swap { distinguishing_sequence(&g2, &g1) } else { distinguishing_sequence(&g1, &g2) } {
            Ok(d) => d,
            Err(_) => continue,
        };
        if !d.m1_outcome.is_zero() {
            continue;
        }
        let zero_b = vec![vec![C::zero(); n]; n];
        let mut out = Vec::with_capacity(3);
        let mut ok = true;
        for (member, b) in [zero_b, b1.clone(), b2.clone()].into_iter().enumerate() {
            match triple_member(n, &b, &d.m1, &d.m2, d.kappa.clone(), rng) {
                Ok(mut inst) => {
                    inst.metadata.triple_id = Some(id);
                    inst.metadata.member = Some(member);
                    inst.metadata.branch = Some(d.branch);
                    inst.metadata.pivot = Some(d.pivot);
                    if member > 0 {
                        let g = if member == 1 { &g1 } else { &g2 };
                        inst.metadata.graph = Some(g.to_snapshot());
                    }
                    out.push(inst);
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let instances: [TaskInstance; 3] = out.try_into().expect("three members");
        let triple = AdversarialTriple { id, instances };
        let [_, a, b] = triple.suffix_outcomes();
        let both_forced = triple.instances[1..].iter().all(|i| i.transcript.last().is_some_and(|r| r.deterministic));
        let split = match (C::from_scalar(&a.1, Unit::Pi), C::from_scalar(&b.1, Unit::Pi)) {
            (Ok(x), Ok(y)) => phase_eq(&y.sub(&x), &C::half_turn()),
            _ => false,
        };
        if both_forced && split {
            return Ok(triple);
        }
        return Err(Error::Inconsistent("replayed suffix does not split the graph states".into()));
    }
    Err(Error::SamplingFailed(MAX_DRAWS, "no admissible graph pair".into()))
}

fn triple_member<C: Coeff, R: Rng + ?Sized>(
    n: usize,
    b: &[Vec<C>],
    m1: &PauliWord<C>,
    m2: &PauliWord<C>,
    kappa: C,
    rng: &mut R,
) -> Result<TaskInstance> {
    let mut t = StabilizerTableau::init_squeezed(n, kappa.clone())?;
    let mut transcript = Vec::with_capacity(n + 2);
    let mut inputs = Vec::with_capacity(n + 2);
    let rows = if b.iter().flatten().all(Coeff::is_zero) {
        // B = 0: ‖B‖ = 0, so Q = (H/2 | 0).
        let h: Vec<Vec<C>> = hollow_ones(n);
        let half = C::one().div(&C::from_i64(2));
        h.iter().map(|r| r.iter().map(|x| x.mul(&half)).chain(std::iter::repeat_n(C::zero(), n)).collect()).collect()
    } else {
        build_q(b)?
    };
    for (step, row) in rows.iter().enumerate() {
        let o = t.measure_nullifier_forced(row, &C::zero())?;
        inputs.push(to_scalars(row));
        transcript.push(TranscriptRecord::new(step, row, &o));
    }
    let o1 = t.measure_pauli_forced(m1, &C::zero())?;
    inputs.push(to_scalars(m1.vector()));
    transcript.push(TranscriptRecord::new(n, m1.vector(), &o1));
    let o2 = t.measure_pauli(&m2.clone().with_theta(C::zero()), rng)?;
    inputs.push(to_scalars(m2.vector()));
    transcript.push(TranscriptRecord::new(n + 1, m2.vector(), &o2));
    Ok(TaskInstance {
        schema_version: SCHEMA_VERSION,
        n,
        k: 2,
        backend: C::BACKEND,
        kappa: kappa.to_scalar(Unit::One),
        init_state: InitState::Squeezed,
        modified: false,
        inputs,
        transcript,
        metadata: InstanceMetadata {
            b_matrix: Some(b.iter().map(|r| r.iter().map(|x| x.to_scalar(Unit::One)).collect()).collect()),
            ..Default::default()
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    /// Forced step answered with the forced value.
    Forced,
    /// Free step; the state is conditioned on the answer.
    Accepted,
    /// Forced step answered wrongly.
    Mismatch { expected: Scalar },
    /// Free step answered outside the allowed values.
    Forbidden { reason: String },
    /// Not replayed after an earlier failure.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub steps: Vec<Verdict>,
    pub consistent: bool,
    pub first_failure: Option<usize>,
}

fn phases_match<C: Coeff>(a: &C, b: &C) -> bool {
    match C::BACKEND {
        Backend::Exact => phase_eq(a, b),
        Backend::Float => {
            let d = reduce_phase(&a.sub(b)).to_f64();
            d.min(C::full_turn().to_f64() - d) <= FLOAT_PHASE_TOL
        }
    }
}

fn values_match<C: Coeff>(a: &C, b: &C) -> bool {
    match C::BACKEND {
        Backend::Exact => a.sub(b).is_zero(),
        Backend::Float => a.sub(b).magnitude() <= FLOAT_PHASE_TOL,
    }
}

/// Replays `candidate` outcomes through the oracle. Forced steps must match;
/// free steps accept any allowed value and condition the state on it.
pub fn consistency_check(inst: &TaskInstance, candidate: &[Scalar]) -> Result<ConsistencyReport> {
    if candidate.len() != inst.transcript.len() {
        return Err(Error::InvalidArgument(format!(
            "candidate has {} outcomes, transcript has {}",
            candidate.len(),
            inst.transcript.len()
        )));
    }
    match inst.backend {
        Backend::Exact => check_generic::<Rational>(inst, candidate),
        Backend::Float => check_generic::<f64>(inst, candidate),
    }
}

fn check_generic<C: Coeff>(inst: &TaskInstance, candidate: &[Scalar]) -> Result<ConsistencyReport> {
    let kappa = C::from_scalar(&inst.kappa, Unit::One)?;
    let mut t = init_tableau(inst.init_state, inst.n, kappa.clone())?;
    let mut steps = Vec::with_capacity(candidate.len());
    let mut first_failure = None;
    for (i, (rec, cand)) in inst.transcript.iter().zip(candidate).enumerate() {
        if first_failure.is_some() {
            steps.push(Verdict::Skipped);
            continue;
        }
        let v: Vec<C> = from_scalars(&rec.vector)?;
        let c = C::from_scalar(cand, Unit::Pi)?;
        let verdict = match rec.kind {
            OutcomeKind::Nullifier => match t.nullifier_status(&v)? {
                NullifierStatus::Deterministic(x) if values_match(&x, &c) => Verdict::Forced,
                NullifierStatus::Deterministic(x) => Verdict::Mismatch { expected: x.to_scalar(Unit::Pi) },
                _ => match t.measure_nullifier_forced(&v, &c) {
                    Ok(_) => Verdict::Accepted,
                    Err(e) => Verdict::Forbidden { reason: e.to_string() },
                },
            },
            OutcomeKind::Pauli => {
                let w = PauliWord::from_vector(v, C::zero(), kappa.clone())?;
                match t.contains(&w)? {
                    Membership::Deterministic(x) if phases_match(&x, &c) => Verdict::Forced,
                    Membership::Deterministic(x) => Verdict::Mismatch { expected: x.to_scalar(Unit::Pi) },
                    _ => match t.measure_pauli_forced(&w, &c) {
                        Ok(_) => Verdict::Accepted,
                        Err(e) => Verdict::Forbidden { reason: e.to_string() },
                    },
                }
            }
        };
        if matches!(verdict, Verdict::Mismatch { .. } | Verdict::Forbidden { .. }) {
            first_failure = Some(i);
        }
        steps.push(verdict);
    }
    Ok(ConsistencyReport { consistent: first_failure.is_none(), steps, first_failure })
}

fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r
}

/// `count` instances, each from its own seeded stream, plus the number of
/// redraws. Float instances whose stabilizer group stops being discrete
/// modulo its continuous part cannot be represented and are redrawn from the
/// same stream.
pub fn gen_dataset(cfg: &GenConfig, backend: Backend, count: usize, seed: u64) -> Result<(Vec<TaskInstance>, usize)> {
    if backend == Backend::Float && cfg.init_state == InitState::Gkp {
        return Err(Error::NotRepresentable(
            "GKP prefixes in the float frame pair 4π lattice shifts with rational rows, \
             leaving a non-discrete group; use the exact backend"
                .into(),
        ));
    }
    let results: Vec<(TaskInstance, usize)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut r = instance_rng(seed, i);
            for redraws in 0..MAX_DRAWS {
                let inst = match backend {
                    Backend::Exact => {
                        gen_instance::<Rational, _>(cfg, None, None, Rational::from_integer(1.into()), &mut r)
                    }
                    Backend::Float => gen_instance::<f64, _>(cfg, None, None, 1.0, &mut r),
                };
                match inst {
                    Err(Error::Incommensurate | Error::IllConditioned(_)) if backend == Backend::Float => continue,
                    other => return other.map(|x| (x, redraws)),
                }
            }
            Err(Error::SamplingFailed(MAX_DRAWS, "every draw left a non-discrete or ill-conditioned group".into()))
        })
        .collect::<Result<_>>()?;
    let redraws = results.iter().map(|(_, k)| k).sum();
    Ok((results.into_iter().map(|(x, _)| x).collect(), redraws))
}

/// `count` adversarial triples with ids `first_id..`.
pub fn gen_triples(n: usize, backend: Backend, count: usize, seed: u64, first_id: usize) -> Result<Vec<AdversarialTriple>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let id = first_id + i;
            let mut r = instance_rng(seed, id);
            match backend {
                Backend::Exact => gen_adversarial_triple::<Rational, _>(n, id, &mut r),
                Backend::Float => gen_adversarial_triple::<f64, _>(n, id, &mut r),
            }
        })
        .collect()
}

pub fn write_jsonl<W: Write>(mut w: W, instances: &[TaskInstance]) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TaskInstance>> {
    let mut out = vec![];
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: TaskInstance = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", i + 1)))?;
        if inst.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "line {}: schema version {} is not {SCHEMA_VERSION}",
                i + 1,
                inst.schema_version
            )));
        }
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::symplectic_form;
    use crate::scalar::{rat, rat_int};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cfg(n: usize, k: usize) -> GenConfig {
        GenConfig { n, k, init_state: InitState::Squeezed, modified: false }
    }

    #[test]
    fn q_for_zero_and_single_edge() {
        let z = vec![vec![rat_int(0); 2]; 2];
        let err = build_q(&z).unwrap();
        assert_eq!(err[0], [rat_int(0), rat(1, 2), rat_int(0), rat_int(0)]);
        assert_eq!(err[1], [rat(1, 2), rat_int(0), rat_int(0), rat_int(0)]);
        // ‖B‖ = ¼√2 is irrational: exact mode refuses, float mode builds it.
        let q = vec![vec![0.0, 0.25], vec![0.25, 0.0]];
        let qf = build_q(&q).unwrap();
        assert!((qf[0][2] - 0.25 * 2f64.sqrt()).abs() < 1e-15 && qf[0][3] == 0.0);
        let qe = vec![vec![rat_int(0), rat(1, 4)], vec![rat(1, 4), rat_int(0)]];
        assert!(matches!(build_q(&qe), Err(Error::NotRepresentable(_))));
        assert!(build_q(&[vec![rat(1, 2), rat_int(0)], vec![rat_int(0), rat_int(0)]]).is_err());
    }

    #[test]
    fn q_rows_are_orthogonal_and_full_rank() {
        let mut r = rng(4);
        assert!(matches!(sample_b::<Rational, _>(2, &mut r), Err(Error::NotRepresentable(_))));
        let bf: Vec<Vec<f64>> = sample_b(2, &mut r).unwrap();
        assert_eq!(crate::linalg::rank(&build_q(&bf).unwrap()), 2);
        for n in 3..=6 {
            let b: Vec<Vec<Rational>> = sample_b(n, &mut r).unwrap();
            let q = build_q(&b).unwrap();
            let k = rat_int(1);
            let words: Vec<_> = q.iter().map(|v| PauliWord::from_vector(v.clone(), rat_int(0), k.clone()).unwrap()).collect();
            for i in 0..n {
                for j in 0..n {
                    assert!(Coeff::is_zero(&symplectic_form(&words[i], &words[j]).unwrap()));
                }
            }
            assert_eq!(crate::linalg::rank(&q), n);
        }
    }

    #[test]
    fn transform_examples() {
        let row = [rat_int(1), rat_int(2), rat_int(0), rat(-1, 2)];
        assert_eq!(modified_transform(&row), [rat_int(1), rat(1, 2), rat_int(0), rat_int(-2)]);
        assert!(modified_transform(&[0.0; 3]).iter().all(|x| *x == 0.0));
        let s = [1.0, -1.0, 0.0];
        assert_eq!(modified_transform(&modified_transform(&s)), s);
    }

    #[test]
    fn zero_graph_instance_and_z_suffix() {
        let z = vec![vec![rat_int(0); 2]; 2];
        let inst = gen_instance(&cfg(2, 0), Some(z.clone()), None, rat_int(1), &mut rng(0)).unwrap();
        assert_eq!(inst.transcript.len(), 2);
        assert!(inst.transcript.iter().all(|r| r.deterministic));
        let suffix = vec![
            vec![rat_int(1), rat_int(0), rat_int(0), rat_int(0)],
            vec![rat_int(0), rat_int(1), rat_int(0), rat_int(0)],
            vec![rat_int(1), rat_int(1), rat_int(0), rat_int(0)],
        ];
        let inst = gen_instance(&cfg(2, 3), Some(z), Some(suffix), rat_int(1), &mut rng(0)).unwrap();
        for r in &inst.transcript[2..] {
            assert!(r.deterministic && r.outcome.is_zero());
        }
    }

    #[test]
    fn own_transcript_is_consistent_and_flips_are_caught() {
        for backend in [Backend::Exact, Backend::Float] {
            let (data, _) = gen_dataset(&cfg(3, 3), backend, 10, 9).unwrap();
            for inst in &data {
                let rep = consistency_check(inst, &inst.outcomes()).unwrap();
                assert!(rep.consistent, "{rep:?}");
            }
        }
        let (data, _) = gen_dataset(&cfg(2, 3), Backend::Float, 40, 1).unwrap();
        assert!(data.iter().all(|i| consistency_check(i, &i.outcomes()).unwrap().consistent));
        let gkp = GenConfig { init_state: InitState::Gkp, ..cfg(3, 2) };
        assert!(matches!(gen_dataset(&gkp, Backend::Float, 1, 0), Err(Error::NotRepresentable(_))));
        assert_eq!(gen_dataset(&gkp, Backend::Exact, 5, 0).unwrap().1, 0);
        let z = vec![vec![rat_int(0); 2]; 2];
        let suffix = vec![vec![rat_int(1), rat_int(1), rat_int(0), rat_int(0)]];
        let inst = gen_instance(&cfg(2, 1), Some(z), Some(suffix), rat_int(1), &mut rng(0)).unwrap();
        let mut bad = inst.outcomes();
        bad[2] = Scalar::exact(rat_int(1), Unit::Pi);
        let rep = consistency_check(&inst, &bad).unwrap();
        assert!(!rep.consistent);
        assert_eq!(rep.first_failure, Some(2));
        assert!(consistency_check(&inst, &bad[..2]).is_err());
    }

    #[test]
    fn triples_split_the_graph_states() {
        for (n, backend) in [(2, Backend::Float), (3, Backend::Exact), (4, Backend::Exact), (4, Backend::Float)] {
            let t = gen_triples(n, backend, 3, 1, 0).unwrap();
            for tr in &t {
                assert!(tr.disagrees());
                for inst in &tr.instances {
                    assert!(consistency_check(inst, &inst.outcomes()).unwrap().consistent);
                }
                // No single suffix answer is consistent for all three members.
                let cands: Vec<_> = tr.suffix_outcomes().into_iter().map(|p| p.1).collect();
                for c in &cands {
                    let all = tr.instances.iter().all(|inst| {
                        let mut o = inst.outcomes();
                        *o.last_mut().unwrap() = c.clone();
                        consistency_check(inst, &o).unwrap().consistent
                    });
                    assert!(!all);
                }
            }
        }
    }

    #[test]
    fn proportional_pairs_are_rejected() {
        let mut r = rng(2);
        let b: Vec<Vec<Rational>> = sample_b(3, &mut r).unwrap();
        assert!(is_proportional(&b, &b).unwrap());
    }

    #[test]
    fn jsonl_round_trip_and_determinism() {
        let (a, _) = gen_dataset(&cfg(4, 2), Backend::Exact, 5, 3).unwrap();
        let (b, _) = gen_dataset(&cfg(4, 2), Backend::Exact, 5, 3).unwrap();
        let mut buf = vec![];
        write_jsonl(&mut buf, &a).unwrap();
        let mut buf2 = vec![];
        write_jsonl(&mut buf2, &b).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), a);
    }
}
