//! CV Pauli words `e^{iθ} exp(i(a·q̂ + b·p̂))` in `ħ = 1/2` units.
//!
//! `X_j(t) = e^{-2itp̂_j}` has `b_j = -2t`; `Z_j(t) = e^{2itq̂_j}` has `a_j = 2t`.
//! The symplectic form is `ω(v1, v2) = a1·b2 − b1·a2` and words satisfy
//! `P1 P2 = e^{-iω/2} P2 P1`, so they commute iff `ω ∈ 4πℤ`.
//!
//! Vectors are stored in the unit frame of the backend: for exact words the
//! `a` entries count `g_q` and the `b` entries count `g_p`, and `κ` converts a
//! raw pairing into phase units (multiples of `π`). Float words carry `κ = 1`
//! and radians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{phase_eq, reduce_phase, Backend, Coeff, Rational, Scalar, Unit, UnitSystem};

#[derive(Clone, Debug, PartialEq)]
pub struct PauliWord<C> {
    n: usize,
    v: Vec<C>,
    theta: C,
    kappa: C,
}

/// Raw pairing `a1·b2 − b1·a2` of two `2n` vectors laid out as `(a | b)`.
pub fn omega_raw<C: Coeff>(u: &[C], v: &[C]) -> C {
    let n = u.len() / 2;
    let mut acc = C::zero();
    for j in 0..n {
        acc = acc.add(&u[j].mul(&v[n + j])).sub(&u[n + j].mul(&v[j]));
    }
    acc
}

impl<C: Coeff> PauliWord<C> {
    pub fn new(a: Vec<C>, b: Vec<C>, theta: C, kappa: C) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::ModeMismatch(a.len(), b.len()));
        }
        if a.is_empty() {
            return Err(Error::InvalidArgument("a word needs at least one mode".into()));
        }
        let n = a.len();
        let mut v = a;
        v.extend(b);
        Ok(Self { n, v, theta, kappa })
    }

    pub fn from_vector(v: Vec<C>, theta: C, kappa: C) -> Result<Self> {
        if v.is_empty() || !v.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("vector length {} is not 2n", v.len())));
        }
        Ok(Self { n: v.len() / 2, v, theta, kappa })
    }

    pub fn identity(n: usize, kappa: C) -> Self {
        Self { n, v: vec![C::zero(); 2 * n], theta: C::zero(), kappa }
    }

    /// `X_j(t)`.
    pub fn x(n: usize, j: usize, t: C, kappa: C) -> Self {
        let mut w = Self::identity(n, kappa);
        w.v[n + j] = t.mul(&C::from_i64(-2));
        w
    }

    /// `Z_j(t)`.
    pub fn z(n: usize, j: usize, t: C, kappa: C) -> Self {
        let mut w = Self::identity(n, kappa);
        w.v[j] = t.mul(&C::from_i64(2));
        w
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn a(&self) -> &[C] {
        &self.v[..self.n]
    }
    pub fn b(&self) -> &[C] {
        &self.v[self.n..]
    }
    pub fn vector(&self) -> &[C] {
        &self.v
    }
    pub fn theta(&self) -> &C {
        &self.theta
    }
    pub fn kappa(&self) -> &C {
        &self.kappa
    }

    pub fn with_theta(mut self, theta: C) -> Self {
        self.theta = theta;
        self
    }

    /// Multiplies by the global phase `e^{iφ}`.
    pub fn phased(mut self, phi: &C) -> Self {
        self.theta = self.theta.add(phi);
        if C::BACKEND == Backend::Exact {
            self.theta = reduce_phase(&self.theta);
        }
        self
    }

    pub fn has_zero_vector(&self) -> bool {
        self.v.iter().all(|x| x.is_zero())
    }

    pub fn is_identity(&self) -> bool {
        self.has_zero_vector() && phase_eq(&self.theta, &C::zero())
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::ModeMismatch(self.n, other.n));
        }
        if !self.kappa.sub(&other.kappa).is_zero() {
            return Err(Error::BackendMismatch);
        }
        Ok(())
    }

    /// Converts an exact word to floats under a unit system.
    pub fn to_float(&self, units: &UnitSystem) -> Result<PauliWord<f64>> {
        let kappa = self.kappa.to_rational().ok_or(Error::BackendMismatch)?;
        if kappa != units.kappa {
            return Err(Error::BackendMismatch);
        }
        let (gq, gp) = match C::BACKEND {
            Backend::Exact => (units.gq, units.gp()),
            Backend::Float => (1.0, 1.0),
        };
        let theta_unit = if C::BACKEND == Backend::Exact { std::f64::consts::PI } else { 1.0 };
        let a = self.a().iter().map(|x| x.to_f64() * gq).collect();
        let b = self.b().iter().map(|x| x.to_f64() * gp).collect();
        PauliWord::new(a, b, self.theta.to_f64() * theta_unit, 1.0)
    }
}

/// `ω(p1, p2)` in phase units.
pub fn symplectic_form<C: Coeff>(p1: &PauliWord<C>, p2: &PauliWord<C>) -> Result<C> {
    p1.check(p2)?;
    Ok(p1.kappa.mul(&omega_raw(&p1.v, &p2.v)))
}

/// Whether `ω` lies in `4πℤ + offset`.
fn omega_class<C: Coeff>(omega: &C, offset: i64) -> bool {
    let four_pi = C::half_turn().mul(&C::from_i64(4));
    omega
        .sub(&C::half_turn().mul(&C::from_i64(offset)))
        .div(&four_pi)
        .is_integer()
}

pub fn omega_commutes<C: Coeff>(omega: &C) -> bool {
    omega_class(omega, 0)
}

pub fn commutes<C: Coeff>(p1: &PauliWord<C>, p2: &PauliWord<C>) -> Result<bool> {
    Ok(omega_class(&symplectic_form(p1, p2)?, 0))
}

pub fn anticommutes<C: Coeff>(p1: &PauliWord<C>, p2: &PauliWord<C>) -> Result<bool> {
    Ok(omega_class(&symplectic_form(p1, p2)?, 2))
}

/// Product with the BCH phase `θ1 + θ2 − ω/4`.
pub fn pauli_mul<C: Coeff>(p1: &PauliWord<C>, p2: &PauliWord<C>) -> Result<PauliWord<C>> {
    let omega = symplectic_form(p1, p2)?;
    let v = p1.v.iter().zip(&p2.v).map(|(x, y)| x.add(y)).collect();
    let mut theta = p1.theta.add(&p2.theta).sub(&omega.div(&C::from_i64(4)));
    if C::BACKEND == Backend::Exact {
        theta = reduce_phase(&theta);
    }
    Ok(PauliWord { n: p1.n, v, theta, kappa: p1.kappa.clone() })
}

/// Left-to-right product of a nonempty list.
pub fn pauli_product<C: Coeff>(words: &[PauliWord<C>]) -> Result<PauliWord<C>> {
    let (first, rest) = words
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty product".into()))?;
    rest.iter().try_fold(first.clone(), |acc, w| pauli_mul(&acc, w))
}

pub fn pauli_adjoint<C: Coeff>(p: &PauliWord<C>) -> PauliWord<C> {
    pauli_power(p, &C::from_i64(-1))
}

/// `p^t`: scales vector and phase by `t`.
pub fn pauli_power<C: Coeff>(p: &PauliWord<C>, t: &C) -> PauliWord<C> {
    let v = p.v.iter().map(|x| x.mul(t)).collect();
    let mut theta = p.theta.mul(t);
    if C::BACKEND == Backend::Exact {
        theta = reduce_phase(&theta);
    }
    PauliWord { n: p.n, v, theta, kappa: p.kappa.clone() }
}

/// `p^t` for a tagged exponent; exact words accept only dimensionless
/// rational exponents.
pub fn pauli_power_scalar<C: Coeff>(p: &PauliWord<C>, t: &Scalar) -> Result<PauliWord<C>> {
    let t = C::from_scalar(t, Unit::One)?;
    Ok(pauli_power(p, &t))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordJson {
    n: usize,
    a: Vec<Scalar>,
    b: Vec<Scalar>,
    theta: Scalar,
    backend: Backend,
    #[serde(default)]
    kappa: Option<Scalar>,
}

impl<C: Coeff> Serialize for PauliWord<C> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WordJson {
            n: self.n,
            a: self.a().iter().map(|x| x.to_scalar(Unit::Gq)).collect(),
            b: self.b().iter().map(|x| x.to_scalar(Unit::Gp)).collect(),
            theta: self.theta.to_scalar(Unit::Pi),
            backend: C::BACKEND,
            kappa: Some(self.kappa.to_scalar(Unit::One)),
        }
        .serialize(s)
    }
}

impl<'de, C: Coeff> Deserialize<'de> for PauliWord<C> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = WordJson::deserialize(d)?;
        if w.backend != C::BACKEND {
            return Err(D::Error::custom(format!("expected backend {}", C::BACKEND)));
        }
        if w.a.len() != w.n || w.b.len() != w.n {
            return Err(D::Error::custom("vector length does not match n"));
        }
        let conv = |s: &Scalar, u: Unit| C::from_scalar(s, u).map_err(D::Error::custom);
        let a = w.a.iter().map(|s| conv(s, Unit::Gq)).collect::<std::result::Result<Vec<_>, _>>()?;
        let b = w.b.iter().map(|s| conv(s, Unit::Gp)).collect::<std::result::Result<Vec<_>, _>>()?;
        let theta = conv(&w.theta, Unit::Pi)?;
        let kappa = match &w.kappa {
            Some(k) => conv(k, Unit::One)?,
            None => C::one(),
        };
        PauliWord::new(a, b, theta, kappa).map_err(D::Error::custom)
    }
}

/// The 3×3 grid of two-mode words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MagicSquare<C: Coeff> {
    pub grid: [[PauliWord<C>; 3]; 3],
}

/// Builds the square for `X(α)` and `Z(π/(2α))`.
///
/// For exact words `alpha` counts `g_p`, so `π/(2α)` is `1/(2κα)` in units of
/// `g_q`; for float words `kappa` must be 1.
pub fn build_magic_square<C: Coeff>(alpha: &C, kappa: &C) -> Result<MagicSquare<C>> {
    if alpha.is_zero() {
        return Err(Error::InvalidArgument("alpha must be nonzero".into()));
    }
    let t = C::half_turn().div(&C::from_i64(2).mul(alpha).mul(kappa));
    let k = kappa.clone();
    let x1 = PauliWord::x(2, 0, alpha.clone(), k.clone());
    let x2 = PauliWord::x(2, 1, alpha.clone(), k.clone());
    let z1 = PauliWord::z(2, 0, t.clone(), k.clone());
    let z2 = PauliWord::z(2, 1, t, k);
    let dag = pauli_adjoint::<C>;
    let minus = C::half_turn();
    let grid = [
        [x1.clone(), x2.clone(), pauli_mul(&dag(&x1), &dag(&x2))?],
        [
            pauli_mul(&dag(&x1), &dag(&z2))?,
            pauli_mul(&dag(&z1), &dag(&x2))?,
            pauli_product(&[x1, z1.clone(), x2, z2.clone()])?.phased(&minus),
        ],
        [z2.clone(), z1.clone(), pauli_mul(&dag(&z1), &dag(&z2))?],
    ];
    Ok(MagicSquare { grid })
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "")]
pub struct LineReport<C: Coeff> {
    pub label: String,
    /// Commutation of the pairs (0,1), (0,2), (1,2).
    pub pairwise_commute: [bool; 3],
    pub product: PauliWord<C>,
    /// `+1` or `-1` when the product is a scalar of that value.
    pub sign: Option<i8>,
    pub expected_sign: i8,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "")]
pub struct VerificationReport<C: Coeff> {
    pub lines: Vec<LineReport<C>>,
    pub classical_assignments: usize,
    pub passed: bool,
}

fn scalar_sign<C: Coeff>(w: &PauliWord<C>) -> Option<i8> {
    if !w.has_zero_vector() {
        return None;
    }
    if phase_eq(w.theta(), &C::zero()) {
        Some(1)
    } else if phase_eq(w.theta(), &C::half_turn()) {
        Some(-1)
    } else {
        None
    }
}

/// Checks commutation and line products, then brute-forces all `±1`
/// assignments to the nine entries against the six product constraints.
pub fn verify_magic_square<C: Coeff>(m: &MagicSquare<C>) -> VerificationReport<C> {
    let g = &m.grid;
    let mut lines = Vec::with_capacity(6);
    let mut signs = [0i8; 6];
    for l in 0..6 {
        let cells: [&PauliWord<C>; 3] = if l < 3 {
            [&g[l][0], &g[l][1], &g[l][2]]
        } else {
            [&g[0][l - 3], &g[1][l - 3], &g[2][l - 3]]
        };
        let label = if l < 3 { format!("row {}", l + 1) } else { format!("column {}", l - 2) };
        let pair = |i: usize, j: usize| commutes(cells[i], cells[j]).unwrap_or(false);
        let pairwise_commute = [pair(0, 1), pair(0, 2), pair(1, 2)];
        let product = cells[1..]
            .iter()
            .try_fold(cells[0].clone(), |acc, w| pauli_mul(&acc, w))
            .unwrap_or_else(|_| cells[0].clone());
        let sign = scalar_sign(&product);
        let expected_sign = if l == 5 { -1 } else { 1 };
        let ok = pairwise_commute.iter().all(|&b| b) && sign == Some(expected_sign);
        signs[l] = sign.unwrap_or(0);
        lines.push(LineReport { label, pairwise_commute, product, sign, expected_sign, ok });
    }
    let classical_assignments = count_classical_assignments(&signs);
    let passed = lines.iter().all(|l| l.ok) && classical_assignments == 0;
    VerificationReport { lines, classical_assignments, passed }
}

/// Number of `±1` fillings of the grid whose six line products equal `signs`
/// (rows then columns). A zero entry in `signs` is an unsatisfiable line.
pub fn count_classical_assignments(signs: &[i8; 6]) -> usize {
    let mut count = 0;
    for mask in 0u32..512 {
        let val = |r: usize, c: usize| if mask >> (3 * r + c) & 1 == 1 { -1i8 } else { 1 };
        let ok = (0..3).all(|r| val(r, 0) * val(r, 1) * val(r, 2) == signs[r])
            && (0..3).all(|c| val(0, c) * val(1, c) * val(2, c) == signs[3 + c]);
        if ok {
            count += 1;
        }
    }
    count
}

/// Exact square with `α = r·g_p` in the unit system `g_q g_p = κπ`.
pub fn exact_magic_square(r: &Rational, kappa: &Rational) -> Result<MagicSquare<Rational>> {
    build_magic_square(r, kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, rat_int};
    use std::f64::consts::PI;

    fn k1() -> Rational {
        rat_int(1)
    }

    #[test]
    fn x_and_z_anticommute_with_bch_phase() {
        // α = g_p, π/(2α) = g_q/2 when κ = 1.
        let x = PauliWord::x(1, 0, rat_int(1), k1());
        let z = PauliWord::z(1, 0, rat(1, 2), k1());
        assert_eq!(symplectic_form(&x, &z).unwrap(), rat_int(2));
        assert!(anticommutes(&x, &z).unwrap());
        let xz = pauli_mul(&x, &z).unwrap();
        // −π/2 reduced into [0, 2π).
        assert_eq!(xz.theta(), &rat(3, 2));
    }

    #[test]
    fn float_bch_phase_matches_exact() {
        let alpha = 1.7;
        let x = PauliWord::x(1, 0, alpha, 1.0);
        let z = PauliWord::z(1, 0, PI / (2.0 * alpha), 1.0);
        assert!((symplectic_form(&x, &z).unwrap() - 2.0 * PI).abs() < 1e-12);
        assert!((pauli_mul(&x, &z).unwrap().theta() + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_and_like_words_commute() {
        let x1 = PauliWord::x(2, 0, 0.8, 1.0);
        let x2 = PauliWord::x(2, 1, 0.8, 1.0);
        assert_eq!(symplectic_form(&x1, &x2).unwrap(), 0.0);
        let z1 = PauliWord::z(2, 0, 0.3, 1.0);
        let z1b = PauliWord::z(2, 0, -1.9, 1.0);
        assert_eq!(symplectic_form(&z1, &z1b).unwrap(), 0.0);
    }

    #[test]
    fn adjoint_and_power() {
        let x = PauliWord::x(1, 0, rat(3, 2), k1());
        assert_eq!(pauli_adjoint(&x), PauliWord::x(1, 0, rat(-3, 2), k1()));
        let z = PauliWord::z(1, 0, rat(1, 5), k1());
        assert_eq!(pauli_power(&z, &rat_int(2)), PauliWord::z(1, 0, rat(2, 5), k1()));
        assert!(pauli_mul(&x, &pauli_adjoint(&x)).unwrap().is_identity());
        let bad = Scalar::exact(rat_int(1), Unit::Gq);
        assert!(pauli_power_scalar(&x, &bad).is_err());
    }

    #[test]
    fn mode_and_unit_mismatches_are_errors() {
        let a = PauliWord::x(1, 0, rat_int(1), k1());
        let b = PauliWord::x(2, 0, rat_int(1), k1());
        assert!(matches!(symplectic_form(&a, &b), Err(Error::ModeMismatch(1, 2))));
        let c = PauliWord::x(1, 0, rat_int(1), rat(1, 2));
        assert!(matches!(pauli_mul(&a, &c), Err(Error::BackendMismatch)));
    }

    #[test]
    fn table_entries_for_unit_alpha() {
        let sq = build_magic_square(&1.0, &1.0).unwrap();
        let t = PI / 2.0;
        assert_eq!(sq.grid[0][0], PauliWord::x(2, 0, 1.0, 1.0));
        assert_eq!(sq.grid[2][0], PauliWord::z(2, 1, t, 1.0));
        let corner = &sq.grid[2][2];
        assert_eq!(corner.a(), &[-PI, -PI]);
        assert!(corner.b().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exact_square_verifies() {
        for (r, k) in [(rat_int(1), rat_int(1)), (rat_int(2), rat_int(1)), (rat(1, 3), rat(5, 7))] {
            let sq = exact_magic_square(&r, &k).unwrap();
            let rep = verify_magic_square(&sq);
            assert!(rep.passed, "{rep:?}");
            assert_eq!(rep.lines[5].product.theta(), &rat_int(1));
        }
    }

    #[test]
    fn replacing_an_entry_breaks_the_square() {
        let mut sq = build_magic_square(&1.3, &1.0).unwrap();
        sq.grid[1][1] = PauliWord::identity(2, 1.0);
        let rep = verify_magic_square(&sq);
        assert!(!rep.passed);
    }

    #[test]
    fn parity_constraints_have_no_classical_solution() {
        assert_eq!(count_classical_assignments(&[1, 1, 1, 1, 1, -1]), 0);
        // Consistent parities admit 2^4 fillings.
        assert_eq!(count_classical_assignments(&[1, 1, 1, 1, 1, 1]), 16);
    }

    #[test]
    fn exact_to_float_agrees() {
        let units = UnitSystem::new(rat_int(1), 1.3).unwrap();
        let sq = exact_magic_square(&rat_int(1), &rat_int(1)).unwrap();
        let fsq = build_magic_square(&units.gp(), &1.0).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let conv = sq.grid[r][c].to_float(&units).unwrap();
                let f = &fsq.grid[r][c];
                for (x, y) in conv.vector().iter().zip(f.vector()) {
                    assert!((x - y).abs() < 1e-9);
                }
                assert!(phase_eq(conv.theta(), f.theta()));
            }
        }
    }

    #[test]
    fn word_json_round_trip() {
        let w = pauli_mul(
            &PauliWord::x(2, 0, rat(1, 3), rat(1, 2)),
            &PauliWord::z(2, 0, rat(3, 4), rat(1, 2)),
        )
        .unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert!(s.contains(r#""backend":"exact""#));
        let back: PauliWord<Rational> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
        assert!(serde_json::from_str::<PauliWord<f64>>(&s).is_err());
    }
}
