//! CV stabilizer tableau.
//!
//! The stabilizer group is `Λ · V`: `V` is spanned by continuous nullifier
//! directions `u` with centers `c` (every `exp(iτ(u·x̂ − c))` stabilizes), and
//! `Λ` is generated by discrete Pauli words normalized to eigenvalue 1.
//! Discrete generators are kept linearly independent modulo `V`, so every
//! membership question reduces to a unique linear solve followed by an
//! integrality test.
//!
//! Centers and phases use the backend's phase unit: `exp(iλ u·x̂)` has
//! eigenphase `λ c`.

mod distinguish;

pub use distinguish::{
    distinguishing_sequence, graph_tableau, replay_suffix, Branch, DistinguishingSequence, GraphSnapshot,
    GraphSpec,
};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{float_integer_relations, integer_kernel, integer_rows, rank, reduce_float_basis, row_reduce_integer, solve_in_span, QuotientMap};
use crate::pauli::{omega_commutes, omega_raw, pauli_mul, pauli_power, PauliWord};
use crate::scalar::{phase_eq, rat, reduce_phase, Backend, Coeff, Rational, Scalar, Unit};

/// Largest entry a FLOAT pivot generator `τ·u` may reach. The pairings of
/// the other generators with `u` carry rounding residuals near 1e-13, which
/// `τ` amplifies; above this bound they approach the float tolerance.
pub const PIVOT_GROWTH_LIMIT: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Standard deviation of unconstrained nullifier outcomes.
    pub nullifier_sigma: f64,
    /// Unconstrained nullifier outcomes are rounded to multiples of
    /// `2^-nullifier_bits` phase units.
    pub nullifier_bits: u32,
    /// Unconstrained Pauli phases are drawn from a `2^phase_prec` grid.
    pub phase_prec: u32,
    /// Largest root order tried for coset-constrained Pauli outcomes.
    pub max_root_order: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { nullifier_sigma: 1.0, nullifier_bits: 10, phase_prec: 8, max_root_order: 1 << 16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Continuous<C> {
    pub u: Vec<C>,
    pub c: C,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Nullifier,
    Pauli,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementOutcome<C> {
    pub kind: OutcomeKind,
    pub value: C,
    pub deterministic: bool,
}

/// Outcome phases allowed by `p^order` being a stabilizer with phase `phase`:
/// `{(phase + 2πm)/order}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coset<C> {
    pub order: u64,
    pub phase: C,
}

impl<C: Coeff> Coset<C> {
    pub fn allows(&self, phi: &C) -> bool {
        phase_eq(&phi.mul(&C::from_i64(self.order as i64)), &self.phase)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Membership<C> {
    Deterministic(C),
    Free(Option<Coset<C>>),
    Clash(Option<Coset<C>>),
}

/// Lattice constraint on a nullifier outcome: `exp(iτ s·x̂)` is a stabilizer
/// with eigenphase `phase`, so `τ c ≡ phase (mod 2π)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NullifierConstraint<C> {
    pub tau: C,
    pub phase: C,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NullifierStatus<C> {
    Deterministic(C),
    Constrained(NullifierConstraint<C>),
    Free,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizerTableau<C> {
    n: usize,
    kappa: C,
    continuous: Vec<Continuous<C>>,
    discrete: Vec<PauliWord<C>>,
    config: OracleConfig,
}

/// The stabilizer `e^{-iτc} exp(iτ u·x̂)`.
pub fn continuous_word<C: Coeff>(u: &[C], c: &C, tau: &C, kappa: &C) -> PauliWord<C> {
    let v = u.iter().map(|x| x.mul(tau)).collect();
    PauliWord::from_vector(v, tau.mul(c).neg(), kappa.clone())
        .expect("continuous direction has even length")
}

fn big_to_coeff<C: Coeff>(v: &BigInt) -> C {
    C::from_rational(&Rational::from_integer(v.clone()))
}

fn snap_all<C: Coeff>(xs: &[C]) -> Result<Vec<Rational>> {
    xs.iter().map(|x| x.to_rational().ok_or(Error::Incommensurate)).collect()
}

impl<C: Coeff> StabilizerTableau<C> {
    /// The `q̂`-squeezed vacuum: continuous `q̂_j` with centers 0.
    pub fn init_squeezed(n: usize, kappa: C) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let continuous = (0..n)
            .map(|j| {
                let mut u = vec![C::zero(); 2 * n];
                u[j] = C::one();
                Continuous { u, c: C::zero() }
            })
            .collect();
        Ok(Self { n, kappa, continuous, discrete: vec![], config: OracleConfig::default() })
    }

    /// The grid state supported on `q ≡ 0 (mod 2π)`: generators `e^{iq̂_j}`
    /// and `e^{-4πip̂_j}`. Exact words read `g_q = 1`.
    pub fn init_gkp(n: usize, kappa: C) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let shift = C::half_turn().mul(&C::from_i64(-4)).div(&kappa);
        let mut discrete = Vec::with_capacity(2 * n);
        for j in 0..n {
            let mut v = vec![C::zero(); 2 * n];
            v[j] = C::one();
            discrete.push(PauliWord::from_vector(v, C::zero(), kappa.clone())?);
            let mut v = vec![C::zero(); 2 * n];
            v[n + j] = shift.clone();
            discrete.push(PauliWord::from_vector(v, C::zero(), kappa.clone())?);
        }
        let t = Self { n, kappa, continuous: vec![], discrete, config: OracleConfig::default() };
        t.check_invariants()?;
        Ok(t)
    }

    /// A tableau from explicit generators; invariants are checked.
    pub fn from_parts(
        n: usize,
        kappa: C,
        continuous: Vec<Continuous<C>>,
        discrete: Vec<PauliWord<C>>,
    ) -> Result<Self> {
        let t = Self { n, kappa, continuous, discrete, config: OracleConfig::default() };
        t.check_invariants()?;
        Ok(t)
    }

    pub fn with_config(mut self, config: OracleConfig) -> Self {
        self.config = config;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn kappa(&self) -> &C {
        &self.kappa
    }
    pub fn continuous(&self) -> &[Continuous<C>] {
        &self.continuous
    }
    pub fn discrete(&self) -> &[PauliWord<C>] {
        &self.discrete
    }
    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    /// A pure state has `dim V + rank Λ = 2n − dim V`.
    pub fn is_pure(&self) -> bool {
        self.continuous.len() + self.discrete.len() == 2 * self.n - self.continuous.len()
    }

    fn omega(&self, u: &[C], v: &[C]) -> C {
        self.kappa.mul(&omega_raw(u, v))
    }

    fn check_word(&self, p: &PauliWord<C>) -> Result<()> {
        if p.n() != self.n {
            return Err(Error::ModeMismatch(self.n, p.n()));
        }
        if !p.kappa().sub(&self.kappa).is_zero() {
            return Err(Error::BackendMismatch);
        }
        Ok(())
    }

    fn check_vector(&self, s: &[C]) -> Result<()> {
        if s.len() != 2 * self.n {
            return Err(Error::ModeMismatch(self.n, s.len() / 2));
        }
        Ok(())
    }

    /// Mutual commutation, independence and the dimension bound.
    pub fn check_invariants(&self) -> Result<()> {
        let cu: Vec<Vec<C>> = self.continuous.iter().map(|c| c.u.clone()).collect();
        for (i, a) in cu.iter().enumerate() {
            for b in &cu[i + 1..] {
                if !self.omega(a, b).is_zero() {
                    return Err(Error::Inconsistent("continuous directions do not commute".into()));
                }
            }
            for w in &self.discrete {
                if !self.omega(a, w.vector()).is_zero() {
                    return Err(Error::Inconsistent(
                        "discrete generator does not commute with a continuous direction".into(),
                    ));
                }
            }
        }
        for (i, a) in self.discrete.iter().enumerate() {
            for b in &self.discrete[i + 1..] {
                if !omega_commutes(&self.omega(a.vector(), b.vector())) {
                    return Err(Error::Inconsistent("discrete generators do not commute".into()));
                }
            }
        }
        if rank(&cu) != cu.len() {
            return Err(Error::Inconsistent("continuous directions are dependent".into()));
        }
        let mut all = cu;
        all.extend(self.discrete.iter().map(|w| w.vector().to_vec()));
        if rank(&all) != all.len() {
            return Err(Error::Inconsistent("discrete generators dependent modulo V".into()));
        }
        if self.continuous.len() * 2 + self.discrete.len() > 2 * self.n {
            return Err(Error::Inconsistent("too many stabilizer directions".into()));
        }
        Ok(())
    }

    fn debug_check(&self) {
        #[cfg(debug_assertions)]
        if let Err(e) = self.check_invariants() {
            panic!("tableau invariant violated: {e}");
        }
    }

    fn continuous_span(&self, v: &[C]) -> Option<Vec<C>> {
        let cu: Vec<Vec<C>> = self.continuous.iter().map(|c| c.u.clone()).collect();
        solve_in_span(&cu, v)
    }

    /// Unique `(x, λ)` with `v = Σ x_j w_j + Σ λ_k u_k`.
    fn decompose(&self, v: &[C]) -> Option<(Vec<C>, Vec<C>)> {
        let mut basis: Vec<Vec<C>> = self.discrete.iter().map(|w| w.vector().to_vec()).collect();
        basis.extend(self.continuous.iter().map(|c| c.u.clone()));
        let sol = solve_in_span(&basis, v)?;
        let (x, l) = sol.split_at(self.discrete.len());
        Some((x.to_vec(), l.to_vec()))
    }

    /// The group element with lattice coordinates `x` (must be integers) and
    /// continuous coefficients `λ`.
    fn stabilizer_for(&self, x: &[C], lambda: &[C]) -> Result<PauliWord<C>> {
        let mut acc = PauliWord::identity(self.n, self.kappa.clone());
        for (w, xi) in self.discrete.iter().zip(x) {
            if !xi.is_zero() {
                acc = pauli_mul(&acc, &pauli_power(w, &xi.round_int()))?;
            }
        }
        for (c, l) in self.continuous.iter().zip(lambda) {
            if !l.is_zero() {
                acc = pauli_mul(&acc, &continuous_word(&c.u, &c.c, l, &self.kappa))?;
            }
        }
        Ok(acc)
    }

    fn product_of_powers(&self, m: &[BigInt]) -> Result<PauliWord<C>> {
        let mut acc = PauliWord::identity(self.n, self.kappa.clone());
        for (w, e) in self.discrete.iter().zip(m) {
            if !e.is_zero() {
                acc = pauli_mul(&acc, &pauli_power(w, &big_to_coeff(e)))?;
            }
        }
        Ok(acc)
    }

    /// Smallest `k ≥ 1` with `k·x` integral, if within the configured cap.
    fn root_order(&self, x: &[C]) -> Result<Option<u64>> {
        let den = x
            .iter()
            .map(|v| v.to_rational().map(|r| r.denom().clone()))
            .try_fold(BigInt::one(), |acc, d| d.map(|d| acc.lcm(&d)));
        let Some(den) = den else { return Ok(None) };
        Ok(u64::try_from(den).ok().filter(|&k| k <= self.config.max_root_order))
    }

    /// Membership of `p` in the stabilizer group.
    pub fn contains(&self, p: &PauliWord<C>) -> Result<Membership<C>> {
        self.check_word(p)?;
        let v = p.vector();
        let mut coset = None;
        if let Some((x, lambda)) = self.decompose(v) {
            if x.iter().all(|xi| xi.is_integer()) {
                let s = self.stabilizer_for(&x, &lambda)?;
                return Ok(Membership::Deterministic(reduce_phase(&p.theta().sub(s.theta()))));
            }
            if let Some(k) = self.root_order(&x)? {
                let kc = C::from_i64(k as i64);
                let kx: Vec<C> = x.iter().map(|xi| xi.mul(&kc)).collect();
                let kl: Vec<C> = lambda.iter().map(|l| l.mul(&kc)).collect();
                let s = self.stabilizer_for(&kx, &kl)?;
                let pk = pauli_power(p, &kc);
                coset = Some(Coset { order: k, phase: reduce_phase(&pk.theta().sub(s.theta())) });
            }
        }
        let clash = self.continuous.iter().any(|c| !self.omega(&c.u, v).is_zero())
            || self.discrete.iter().any(|w| !omega_commutes(&self.omega(w.vector(), v)));
        Ok(if clash { Membership::Clash(coset) } else { Membership::Free(coset) })
    }

    /// Status of the real observable `s·x̂`.
    pub fn nullifier_status(&self, s: &[C]) -> Result<NullifierStatus<C>> {
        self.check_vector(s)?;
        if let Some(lambda) = self.continuous_span(s) {
            let value = self
                .continuous
                .iter()
                .zip(&lambda)
                .fold(C::zero(), |acc, (c, l)| acc.add(&l.mul(&c.c)));
            return Ok(NullifierStatus::Deterministic(value));
        }
        let Some((x, lambda)) = self.decompose(s) else { return Ok(NullifierStatus::Free) };
        // Smallest τ > 0 with τ·x integral: lcm(den)/gcd(num). Incommensurate
        // coordinates admit no such τ.
        let Ok(xs) = snap_all(&x) else { return Ok(NullifierStatus::Free) };
        let mut den = BigInt::one();
        let mut num = BigInt::zero();
        for r in xs.iter().filter(|r| !Zero::is_zero(*r)) {
            den = den.lcm(r.denom());
            num = num.gcd(r.numer());
        }
        let tau_r = Rational::new(den, num.abs());
        let tau = C::from_rational(&tau_r);
        let tx: Vec<C> = x.iter().map(|v| v.mul(&tau).round_int()).collect();
        let tl: Vec<C> = lambda.iter().map(|v| v.mul(&tau)).collect();
        let st = self.stabilizer_for(&tx, &tl)?;
        Ok(NullifierStatus::Constrained(NullifierConstraint { tau, phase: st.theta().neg() }))
    }

    fn sample_normal<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        z * self.config.nullifier_sigma * C::half_turn().to_f64() / std::f64::consts::PI
    }

    fn grid_value(&self, z: f64) -> C {
        let scale = (1i64 << self.config.nullifier_bits) as f64;
        C::from_rational(&rat((z * scale).round() as i64, scale as i64))
    }

    /// Measures the real observable `s·x̂`.
    pub fn measure_nullifier<R: Rng + ?Sized>(
        &mut self,
        s: &[C],
        rng: &mut R,
    ) -> Result<MeasurementOutcome<C>> {
        if s.iter().all(|x| x.is_zero()) {
            return Err(Error::InvalidArgument("zero nullifier direction".into()));
        }
        let value = match self.nullifier_status(s)? {
            NullifierStatus::Deterministic(v) => {
                return Ok(MeasurementOutcome { kind: OutcomeKind::Nullifier, value: v, deterministic: true })
            }
            NullifierStatus::Constrained(k) => {
                let z = self.sample_normal(rng);
                let turn = C::full_turn();
                let target = z * k.tau.to_f64() - k.phase.to_f64();
                let m = (target / turn.to_f64()).round() as i64;
                k.phase.add(&turn.mul(&C::from_i64(m))).div(&k.tau)
            }
            NullifierStatus::Free => {
                let z = self.sample_normal(rng);
                self.grid_value(z)
            }
        };
        self.condition_nullifier(s, value.clone())?;
        Ok(MeasurementOutcome { kind: OutcomeKind::Nullifier, value, deterministic: false })
    }

    /// Measures `s·x̂` with a prescribed outcome, rejecting values the state
    /// forbids.
    pub fn measure_nullifier_forced(&mut self, s: &[C], value: &C) -> Result<MeasurementOutcome<C>> {
        if s.iter().all(|x| x.is_zero()) {
            return Err(Error::InvalidArgument("zero nullifier direction".into()));
        }
        match self.nullifier_status(s)? {
            NullifierStatus::Deterministic(v) => {
                if !v.sub(value).is_zero() {
                    return Err(Error::Inconsistent(format!(
                        "nullifier forced to {v:?}, got {value:?}"
                    )));
                }
                return Ok(MeasurementOutcome { kind: OutcomeKind::Nullifier, value: v, deterministic: true });
            }
            NullifierStatus::Constrained(k) => {
                if !phase_eq(&k.tau.mul(value), &k.phase) {
                    return Err(Error::Inconsistent("nullifier value off its lattice".into()));
                }
            }
            NullifierStatus::Free => {}
        }
        self.condition_nullifier(s, value.clone())?;
        Ok(MeasurementOutcome { kind: OutcomeKind::Nullifier, value: value.clone(), deterministic: false })
    }

    /// Shared pivot step: removes the first continuous direction with
    /// `ω(u, v) ≠ 0`, corrects the other directions and all discrete
    /// generators so they commute exactly with `v`. Returns the pivot.
    fn pivot_out(&mut self, v: &[C]) -> Result<Option<(Continuous<C>, C)>> {
        let ws: Vec<C> = self.continuous.iter().map(|c| self.omega(&c.u, v)).collect();
        // Float pivots on the largest pairing to keep the corrections small.
        let p0 = match C::BACKEND {
            Backend::Exact => ws.iter().position(|w| !w.is_zero()),
            Backend::Float => ws
                .iter()
                .enumerate()
                .filter(|(_, w)| !w.is_zero())
                .max_by(|a, b| a.1.magnitude().total_cmp(&b.1.magnitude()))
                .map(|(i, _)| i),
        };
        let Some(p0) = p0 else { return Ok(None) };
        let w0 = ws[p0].clone();
        let piv = self.continuous[p0].clone();
        for (k, wk) in ws.iter().enumerate() {
            if k != p0 && !wk.is_zero() {
                let beta = wk.div(&w0);
                let c = &mut self.continuous[k];
                for (x, y) in c.u.iter_mut().zip(&piv.u) {
                    *x = x.sub(&y.mul(&beta));
                }
                c.c = c.c.sub(&piv.c.mul(&beta));
            }
        }
        for j in 0..self.discrete.len() {
            let d = self.omega(self.discrete[j].vector(), v);
            if !d.is_zero() {
                let tau = d.div(&w0).neg();
                let fix = continuous_word(&piv.u, &piv.c, &tau, &self.kappa);
                self.discrete[j] = pauli_mul(&self.discrete[j], &fix)?;
            }
        }
        self.continuous.remove(p0);
        Ok(Some((piv, w0)))
    }

    fn condition_nullifier(&mut self, s: &[C], value: C) -> Result<()> {
        if self.pivot_out(s)?.is_none() {
            let ds: Vec<C> = self.discrete.iter().map(|w| self.omega(w.vector(), s)).collect();
            if ds.iter().any(|d| !d.is_zero()) {
                self.restrict_lattice(&ds, None)?;
            }
        }
        self.continuous.push(Continuous { u: s.to_vec(), c: value });
        self.canonicalize()?;
        self.debug_check();
        Ok(())
    }

    /// Keeps the sublattice `{m : Σ m_j δ_j ∈ modulus·ℤ}` (exact vanishing when
    /// `modulus` is `None`).
    fn restrict_lattice(&mut self, ds: &[C], modulus: Option<&C>) -> Result<()> {
        let kernel = match C::BACKEND {
            Backend::Exact => {
                let (scaled, d): (Vec<Rational>, Option<BigInt>) = match modulus {
                    Some(m) => {
                        let r = snap_all(&ds.iter().map(|x| x.div(m)).collect::<Vec<_>>())?;
                        let den = crate::linalg::lcm_of_denominators(&r);
                        (r, Some(den))
                    }
                    None => {
                        let reference = ds.iter().find(|x| !x.is_zero()).expect("nonzero pairing").clone();
                        (snap_all(&ds.iter().map(|x| x.div(&reference)).collect::<Vec<_>>())?, None)
                    }
                };
                let ints = integer_rows(&[scaled]).pop().expect("one row");
                integer_kernel(&ints, d.as_ref())
            }
            // Pairings may mix incommensurate scales, so relations come from
            // lattice reduction rather than snapping each ratio.
            Backend::Float => {
                let m = modulus.map_or(1.0, |m| m.to_f64());
                let xs: Vec<f64> = ds.iter().map(|x| x.to_f64() / m).collect();
                float_integer_relations(&xs, modulus.is_some())
            }
        };
        let gens = kernel
            .iter()
            .map(|m| self.product_of_powers(m))
            .collect::<Result<Vec<_>>>()?;
        self.discrete = gens;
        Ok(())
    }

    /// Reduces the discrete generators to a basis modulo `V`, checking that
    /// every relation is consistent with the continuous centers.
    fn canonicalize(&mut self) -> Result<()> {
        self.lattice_basis()?;
        if C::BACKEND == Backend::Float && self.discrete.len() > 1 {
            // Repeated restrictions grow the generators until ω cancels
            // below float resolution; a reduced basis keeps them short.
            let cu: Vec<Vec<C>> = self.continuous.iter().map(|c| c.u.clone()).collect();
            let q = QuotientMap::new(&cu, 2 * self.n);
            let coords: Vec<Vec<f64>> = self
                .discrete
                .iter()
                .map(|w| q.coords(w.vector()).iter().map(|x| x.to_f64()).collect())
                .collect();
            self.discrete = reduce_float_basis(&coords)
                .iter()
                .map(|m| self.product_of_powers(m))
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(())
    }

    fn lattice_basis(&mut self) -> Result<()> {
        self.discrete.retain(|w| !w.has_zero_vector() || !phase_eq(w.theta(), &C::zero()));
        if let Some(w) = self.discrete.iter().find(|w| w.has_zero_vector()) {
            return Err(Error::Inconsistent(format!("scalar stabilizer with phase {:?}", w.theta())));
        }
        if self.discrete.is_empty() {
            return Ok(());
        }
        let cu: Vec<Vec<C>> = self.continuous.iter().map(|c| c.u.clone()).collect();
        let q = QuotientMap::new(&cu, 2 * self.n);
        let coords: Vec<Vec<C>> = self.discrete.iter().map(|w| q.coords(w.vector())).collect();
        let mut chosen: Vec<Vec<C>> = Vec::new();
        for c in &coords {
            let mut trial = chosen.clone();
            trial.push(c.clone());
            if rank(&trial) == trial.len() {
                chosen = trial;
            }
        }
        if chosen.len() == coords.len() {
            return Ok(());
        }
        let rows = coords
            .iter()
            .map(|c| {
                let x = solve_in_span(&chosen, c)
                    .ok_or_else(|| Error::Inconsistent("lattice coordinate solve failed".into()))?;
                snap_all(&x)
            })
            .collect::<Result<Vec<_>>>()?;
        let ints = integer_rows(&rows);
        let (basis, relations) = row_reduce_integer(&ints);
        for rel in &relations {
            let s = self.product_of_powers(rel)?;
            let lambda = self
                .continuous_span(s.vector())
                .ok_or_else(|| Error::Inconsistent("lattice relation outside V".into()))?;
            let implied = self
                .continuous
                .iter()
                .zip(&lambda)
                .fold(s.theta().clone(), |acc, (c, l)| acc.add(&l.mul(&c.c)));
            if !phase_eq(&implied, &C::zero()) {
                return Err(Error::Inconsistent("lattice relation has a nonzero phase".into()));
            }
        }
        self.discrete = basis
            .iter()
            .map(|m| self.product_of_powers(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    fn sample_phase<R: Rng + ?Sized>(&self, coset: Option<&Coset<C>>, rng: &mut R) -> C {
        let turn = C::full_turn();
        match coset {
            Some(k) => {
                let m = rng.random_range(0..k.order) as i64;
                reduce_phase(&k.phase.add(&turn.mul(&C::from_i64(m))).div(&C::from_i64(k.order as i64)))
            }
            None => {
                let grid = 1u64 << self.config.phase_prec;
                let j = rng.random_range(0..grid) as i64;
                turn.mul(&C::from_i64(j)).div(&C::from_i64(grid as i64))
            }
        }
    }

    /// Measures the unitary `p`; the outcome is its eigenphase.
    pub fn measure_pauli<R: Rng + ?Sized>(
        &mut self,
        p: &PauliWord<C>,
        rng: &mut R,
    ) -> Result<MeasurementOutcome<C>> {
        if p.has_zero_vector() {
            return Err(Error::InvalidArgument("cannot measure a scalar word".into()));
        }
        let coset = match self.contains(p)? {
            Membership::Deterministic(phi) => {
                return Ok(MeasurementOutcome { kind: OutcomeKind::Pauli, value: phi, deterministic: true })
            }
            Membership::Free(c) | Membership::Clash(c) => c,
        };
        let phi = self.sample_phase(coset.as_ref(), rng);
        self.condition_pauli(p, &phi)?;
        Ok(MeasurementOutcome { kind: OutcomeKind::Pauli, value: phi, deterministic: false })
    }

    /// Measures `p` with a prescribed outcome phase.
    pub fn measure_pauli_forced(&mut self, p: &PauliWord<C>, phi: &C) -> Result<MeasurementOutcome<C>> {
        if p.has_zero_vector() {
            return Err(Error::InvalidArgument("cannot measure a scalar word".into()));
        }
        match self.contains(p)? {
            Membership::Deterministic(f) => {
                if !phase_eq(&f, phi) {
                    return Err(Error::Inconsistent(format!("phase forced to {f:?}, got {phi:?}")));
                }
                return Ok(MeasurementOutcome { kind: OutcomeKind::Pauli, value: f, deterministic: true });
            }
            Membership::Free(Some(k)) | Membership::Clash(Some(k)) if !k.allows(phi) => {
                return Err(Error::Inconsistent("phase outside the allowed coset".into()));
            }
            _ => {}
        }
        let phi = reduce_phase(phi);
        self.condition_pauli(p, &phi)?;
        Ok(MeasurementOutcome { kind: OutcomeKind::Pauli, value: phi, deterministic: false })
    }

    fn condition_pauli(&mut self, p: &PauliWord<C>, phi: &C) -> Result<()> {
        self.check_word(p)?;
        let v = p.vector().to_vec();
        if let Some((piv, w0)) = self.pivot_out(&v)? {
            let tau = C::half_turn().mul(&C::from_i64(4)).div(&w0);
            if C::BACKEND == Backend::Float {
                let growth = piv.u.iter().fold(0.0f64, |a, x| a.max(x.mul(&tau).magnitude()));
                if growth > PIVOT_GROWTH_LIMIT {
                    return Err(Error::IllConditioned(format!("pivot generator grows to {growth:.1e}")));
                }
            }
            self.discrete.push(continuous_word(&piv.u, &piv.c, &tau, &self.kappa));
        } else {
            let ds: Vec<C> = self.discrete.iter().map(|w| self.omega(w.vector(), &v)).collect();
            if ds.iter().any(|d| !omega_commutes(d)) {
                let four_pi = C::half_turn().mul(&C::from_i64(4));
                self.restrict_lattice(&ds, Some(&four_pi))?;
            }
        }
        self.discrete.push(p.clone().phased(&phi.neg()));
        self.canonicalize()?;
        self.debug_check();
        Ok(())
    }

    /// A word forced to phase `φ` by `self` and `φ + π` by `other`.
    ///
    /// Searches small integer combinations of `self`'s lattice generators,
    /// completing each with continuous directions of `self` so the vector
    /// lands in `other`'s group.
    pub fn orthogonal_witness(&self, other: &Self) -> Result<Option<PauliWord<C>>> {
        if self.n != other.n {
            return Err(Error::ModeMismatch(self.n, other.n));
        }
        let mut cands: Vec<PauliWord<C>> = Vec::new();
        for c in &self.continuous {
            if let NullifierStatus::Deterministic(v) = other.nullifier_status(&c.u)? {
                let diff = v.sub(&c.c);
                if !diff.is_zero() {
                    let tau = C::half_turn().div(&diff);
                    cands.push(continuous_word(&c.u, &c.c, &tau, &self.kappa));
                }
            }
        }
        let d = self.discrete.len();
        let radius: i64 = if d <= 4 { 2 } else { 1 };
        let width = (2 * radius + 1) as usize;
        let total = width.checked_pow(d as u32).unwrap_or(usize::MAX).min(50_000);
        let mut basis: Vec<Vec<C>> = self.continuous.iter().map(|c| c.u.clone()).collect();
        basis.extend(other.discrete.iter().map(|w| w.vector().to_vec()));
        basis.extend(other.continuous.iter().map(|c| c.u.clone()));
        let k = self.continuous.len();
        for idx in 1..total {
            let mut rem = idx;
            let x: Vec<BigInt> = (0..d)
                .map(|_| {
                    let v = (rem % width) as i64 - radius;
                    rem /= width;
                    BigInt::from(v)
                })
                .collect();
            let w = self.product_of_powers(&x)?;
            let target: Vec<C> = w.vector().iter().map(|v| v.neg()).collect();
            let Some(sol) = solve_in_span(&basis, &target) else { continue };
            let mut p = w;
            for (c, l) in self.continuous.iter().zip(&sol[..k]) {
                if !l.is_zero() {
                    p = pauli_mul(&p, &continuous_word(&c.u, &c.c, l, &self.kappa))?;
                }
            }
            cands.push(p);
        }
        for p in cands {
            if p.has_zero_vector() {
                continue;
            }
            let (Membership::Deterministic(a), Membership::Deterministic(b)) =
                (self.contains(&p)?, other.contains(&p)?)
            else {
                continue;
            };
            if phase_eq(&b.sub(&a), &C::half_turn()) {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }

    pub fn snapshot(&self) -> TableauSnapshot {
        let split = |u: &[C]| -> Vec<Scalar> {
            u.iter()
                .enumerate()
                .map(|(i, x)| x.to_scalar(if i < self.n { Unit::Gq } else { Unit::Gp }))
                .collect()
        };
        TableauSnapshot {
            n: self.n,
            backend: C::BACKEND,
            kappa: self.kappa.to_scalar(Unit::One),
            continuous: self
                .continuous
                .iter()
                .map(|c| ContinuousSnapshot { u: split(&c.u), c: c.c.to_scalar(Unit::Pi) })
                .collect(),
            discrete: self.discrete.iter().map(|w| serde_json::to_value(w).expect("word json")).collect(),
        }
    }

    pub fn from_snapshot(s: &TableauSnapshot) -> Result<Self> {
        if s.backend != C::BACKEND {
            return Err(Error::BackendMismatch);
        }
        let kappa = C::from_scalar(&s.kappa, Unit::One)?;
        let unsplit = |u: &[Scalar]| -> Result<Vec<C>> {
            u.iter()
                .enumerate()
                .map(|(i, x)| C::from_scalar(x, if i < s.n { Unit::Gq } else { Unit::Gp }))
                .collect()
        };
        let continuous = s
            .continuous
            .iter()
            .map(|c| Ok(Continuous { u: unsplit(&c.u)?, c: C::from_scalar(&c.c, Unit::Pi)? }))
            .collect::<Result<Vec<_>>>()?;
        let discrete = s
            .discrete
            .iter()
            .map(|w| Ok(serde_json::from_value(w.clone())?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(s.n, kappa, continuous, discrete)
    }
}

impl StabilizerTableau<Rational> {
    pub fn squeezed_exact(n: usize, kappa: Rational) -> Result<Self> {
        Self::init_squeezed(n, kappa)
    }
}

impl StabilizerTableau<f64> {
    pub fn squeezed_float(n: usize) -> Result<Self> {
        Self::init_squeezed(n, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousSnapshot {
    pub u: Vec<Scalar>,
    pub c: Scalar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableauSnapshot {
    pub n: usize,
    pub backend: Backend,
    pub kappa: Scalar,
    pub continuous: Vec<ContinuousSnapshot>,
    pub discrete: Vec<serde_json::Value>,
}

/// One line of a measurement transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub step: usize,
    pub kind: OutcomeKind,
    pub vector: Vec<Scalar>,
    pub outcome: Scalar,
    pub deterministic: bool,
}

impl TranscriptRecord {
    pub fn new<C: Coeff>(step: usize, vector: &[C], o: &MeasurementOutcome<C>) -> Self {
        let n = vector.len() / 2;
        Self {
            step,
            kind: o.kind,
            vector: vector
                .iter()
                .enumerate()
                .map(|(i, x)| x.to_scalar(if i < n { Unit::Gq } else { Unit::Gp }))
                .collect(),
            outcome: o.value.to_scalar(Unit::Pi),
            deterministic: o.deterministic,
        }
    }
}
