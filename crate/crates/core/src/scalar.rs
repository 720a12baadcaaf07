//! Scalar backends.
//!
//! The exact backend stores every quantity as a rational multiple of a formal
//! unit. Quadrature coefficients of `q̂` live in units of `g_q`, those of `p̂`
//! in units of `g_p`, and phases in units of `π`. The unit system declares
//! `g_q · g_p = κ π` for a rational `κ`, which is all the symplectic form ever
//! needs. The float backend stores plain `f64` values and compares with
//! [`FLOAT_TOL`].

use std::f64::consts::PI;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Absolute tolerance for float comparisons.
pub const FLOAT_TOL: f64 = 1e-9;

/// Largest denominator accepted when a float is snapped to a rational.
/// With [`SNAP_TOL`] an irrational snaps spuriously with probability about
/// `SNAP_TOL · MAX_SNAP_DENOMINATOR²`.
pub const MAX_SNAP_DENOMINATOR: i64 = 10_000;

/// Tolerance for snapping floats to rationals.
pub const SNAP_TOL: f64 = 1e-11;

pub fn rat(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(v: i64) -> Rational {
    BigRational::from_integer(BigInt::from(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Exact,
    Float,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Exact => write!(f, "exact"),
            Backend::Float => write!(f, "float"),
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Backend::Exact),
            "float" => Ok(Backend::Float),
            other => Err(Error::InvalidArgument(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    One,
    Gq,
    Gp,
    Pi,
}

/// Numeric meaning of the formal units: `g_q` has value `gq` and
/// `g_p = κ π / g_q`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitSystem {
    pub kappa: Rational,
    pub gq: f64,
}

impl UnitSystem {
    pub fn new(kappa: Rational, gq: f64) -> Result<Self> {
        if !kappa.is_positive() || !(gq > 0.0) {
            return Err(Error::InvalidArgument(
                "unit system needs κ > 0 and g_q > 0".into(),
            ));
        }
        Ok(Self { kappa, gq })
    }

    /// `g_q = g_p = sqrt(κ π)`; the frame in which real nullifier directions
    /// keep their geometric meaning.
    pub fn symmetric(kappa: Rational) -> Result<Self> {
        let g = (ToPrimitive::to_f64(&kappa).unwrap_or(f64::NAN) * PI).sqrt();
        Self::new(kappa, g)
    }

    pub fn gp(&self) -> f64 {
        ToPrimitive::to_f64(&self.kappa).unwrap_or(f64::NAN) * PI / self.gq
    }

    pub fn value_of(&self, unit: Unit) -> f64 {
        match unit {
            Unit::One => 1.0,
            Unit::Gq => self.gq,
            Unit::Gp => self.gp(),
            Unit::Pi => PI,
        }
    }
}

/// A tagged scalar, the interchange type of the public surface.
#[derive(Clone, Debug, PartialEq)]
pub enum Scalar {
    Exact { value: Rational, unit: Unit },
    Float(f64),
}

impl Scalar {
    pub fn exact(value: Rational, unit: Unit) -> Self {
        Scalar::Exact { value, unit }
    }

    pub fn backend(&self) -> Backend {
        match self {
            Scalar::Exact { .. } => Backend::Exact,
            Scalar::Float(_) => Backend::Float,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Exact { value, .. } => Zero::is_zero(value),
            Scalar::Float(v) => v.abs() <= FLOAT_TOL,
        }
    }

    pub fn to_f64(&self, units: &UnitSystem) -> f64 {
        match self {
            Scalar::Exact { value, unit } => {
                ToPrimitive::to_f64(value).unwrap_or(f64::NAN) * units.value_of(*unit)
            }
            Scalar::Float(v) => *v,
        }
    }

    pub fn add(&self, other: &Scalar) -> Result<Scalar> {
        match (self, other) {
            (Scalar::Float(a), Scalar::Float(b)) => Ok(Scalar::Float(a + b)),
            (Scalar::Exact { value: a, unit: ua }, Scalar::Exact { value: b, unit: ub }) => {
                if ua == ub || Zero::is_zero(b) {
                    Ok(Scalar::exact(a + b, *ua))
                } else if Zero::is_zero(a) {
                    Ok(Scalar::exact(b.clone(), *ub))
                } else {
                    Err(Error::NotRepresentable(format!(
                        "sum of {ua:?} and {ub:?} quantities"
                    )))
                }
            }
            _ => Err(Error::BackendMismatch),
        }
    }

    /// Product under the unit algebra `g_q g_p = κ π`.
    pub fn mul(&self, other: &Scalar, kappa: &Rational) -> Result<Scalar> {
        match (self, other) {
            (Scalar::Float(a), Scalar::Float(b)) => Ok(Scalar::Float(a * b)),
            (Scalar::Exact { value: a, unit: ua }, Scalar::Exact { value: b, unit: ub }) => {
                let v = a * b;
                let unit = match (ua, ub) {
                    (Unit::One, u) | (u, Unit::One) => *u,
                    (Unit::Gq, Unit::Gp) | (Unit::Gp, Unit::Gq) => {
                        return Ok(Scalar::exact(v * kappa, Unit::Pi))
                    }
                    _ if Zero::is_zero(&v) => Unit::One,
                    _ => {
                        return Err(Error::NotRepresentable(format!(
                            "product of {ua:?} and {ub:?} units"
                        )))
                    }
                };
                Ok(Scalar::exact(v, unit))
            }
            _ => Err(Error::BackendMismatch),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Float(v) => write!(f, "{v}"),
            Scalar::Exact { value, unit } => match unit {
                Unit::One => write!(f, "{value}"),
                Unit::Gq => write!(f, "{value}·g_q"),
                Unit::Gp => write!(f, "{value}·g_p"),
                Unit::Pi => write!(f, "{value}·π"),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum IntRepr {
    Small(i64),
    Big(String),
}

impl IntRepr {
    fn from_big(v: &BigInt) -> Self {
        match v.to_i64() {
            Some(x) => IntRepr::Small(x),
            None => IntRepr::Big(v.to_string()),
        }
    }

    fn to_big(&self) -> std::result::Result<BigInt, String> {
        match self {
            IntRepr::Small(x) => Ok(BigInt::from(*x)),
            IntRepr::Big(s) => s.parse().map_err(|_| format!("bad integer `{s}`")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExactRepr {
    num: IntRepr,
    den: IntRepr,
    unit: Unit,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarRepr {
    Float(f64),
    Exact(ExactRepr),
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Scalar::Float(v) => ScalarRepr::Float(*v).serialize(s),
            Scalar::Exact { value, unit } => ScalarRepr::Exact(ExactRepr {
                num: IntRepr::from_big(value.numer()),
                den: IntRepr::from_big(value.denom()),
                unit: *unit,
            })
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match ScalarRepr::deserialize(d)? {
            ScalarRepr::Float(v) => Ok(Scalar::Float(v)),
            ScalarRepr::Exact(e) => {
                let num = e.num.to_big().map_err(D::Error::custom)?;
                let den = e.den.to_big().map_err(D::Error::custom)?;
                if den.is_zero() {
                    return Err(D::Error::custom("zero denominator"));
                }
                Ok(Scalar::exact(BigRational::new(num, den), e.unit))
            }
        }
    }
}

/// Continued-fraction snap of `x` to the simplest rational within `tol`.
pub fn rationalize(x: f64, tol: f64, max_den: i64) -> Option<Rational> {
    if !x.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let ai = a as i128;
        let h2 = ai * h1 + h0;
        let k2 = ai * k1 + k0;
        if k2 > max_den as i128 {
            return None;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if ((h1 as f64) / (k1 as f64) - x).abs() <= tol {
            return Some(BigRational::new(BigInt::from(h1), BigInt::from(k1)));
        }
        let frac = r - a;
        if frac.abs() < 1e-300 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

/// Field operations shared by the two backends. Phases are measured in the
/// backend's phase unit: multiples of `π` for exact values, radians for
/// floats; [`Coeff::half_turn`] is `π` in that unit.
pub trait Coeff: Clone + fmt::Debug + PartialEq + Send + Sync + 'static {
    const BACKEND: Backend;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(v: i64) -> Self;
    fn from_rational(r: &Rational) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn is_zero(&self) -> bool;
    fn is_integer(&self) -> bool;
    fn round_int(&self) -> Self;
    fn floor_int(&self) -> Self;
    fn half_turn() -> Self;
    fn to_f64(&self) -> f64;
    /// Exact value, or a tolerant snap for floats.
    fn to_rational(&self) -> Option<Rational>;
    fn to_scalar(&self, unit: Unit) -> Scalar;
    fn from_scalar(s: &Scalar, unit: Unit) -> Result<Self>;

    fn magnitude(&self) -> f64 {
        self.to_f64().abs()
    }

    fn full_turn() -> Self {
        Self::half_turn().mul(&Self::from_i64(2))
    }
}

impl Coeff for Rational {
    const BACKEND: Backend = Backend::Exact;

    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_i64(v: i64) -> Self {
        rat_int(v)
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn is_integer(&self) -> bool {
        BigRational::is_integer(self)
    }
    fn round_int(&self) -> Self {
        BigRational::round(self)
    }
    fn floor_int(&self) -> Self {
        BigRational::floor(self)
    }
    fn half_turn() -> Self {
        One::one()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn to_rational(&self) -> Option<Rational> {
        Some(self.clone())
    }
    fn to_scalar(&self, unit: Unit) -> Scalar {
        Scalar::exact(self.clone(), unit)
    }
    fn from_scalar(s: &Scalar, unit: Unit) -> Result<Self> {
        match s {
            Scalar::Exact { value, unit: u } if *u == unit || Zero::is_zero(value) => {
                Ok(value.clone())
            }
            Scalar::Exact { unit: u, .. } => Err(Error::NotRepresentable(format!(
                "expected a {unit:?} quantity, got {u:?}"
            ))),
            Scalar::Float(_) => Err(Error::BackendMismatch),
        }
    }
}

impl Coeff for f64 {
    const BACKEND: Backend = Backend::Float;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn from_rational(r: &Rational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn is_zero(&self) -> bool {
        self.abs() <= FLOAT_TOL
    }
    fn is_integer(&self) -> bool {
        (self - f64::round(*self)).abs() <= FLOAT_TOL
    }
    fn round_int(&self) -> Self {
        f64::round(*self)
    }
    fn floor_int(&self) -> Self {
        f64::floor(*self)
    }
    fn half_turn() -> Self {
        PI
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn to_rational(&self) -> Option<Rational> {
        rationalize(*self, SNAP_TOL, MAX_SNAP_DENOMINATOR)
    }
    fn to_scalar(&self, _unit: Unit) -> Scalar {
        Scalar::Float(*self)
    }
    fn from_scalar(s: &Scalar, _unit: Unit) -> Result<Self> {
        match s {
            Scalar::Float(v) => Ok(*v),
            Scalar::Exact { .. } => Err(Error::BackendMismatch),
        }
    }
}

/// Reduces a phase into `[0, 2π)`; float values within tolerance of a full
/// turn snap to zero.
pub fn reduce_phase<C: Coeff>(x: &C) -> C {
    let turn = C::full_turn();
    let r = x.sub(&turn.mul(&x.div(&turn).floor_int()));
    if r.sub(&turn).is_zero() {
        C::zero()
    } else {
        r
    }
}

/// Equality of phases modulo `2π`.
pub fn phase_eq<C: Coeff>(a: &C, b: &C) -> bool {
    reduce_phase(&a.sub(b)).is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_algebra_pairs_gq_with_gp() {
        let k = rat(1, 2);
        let a = Scalar::exact(rat(3, 1), Unit::Gq);
        let b = Scalar::exact(rat(2, 3), Unit::Gp);
        assert_eq!(a.mul(&b, &k).unwrap(), Scalar::exact(rat(1, 1), Unit::Pi));
        assert!(a.mul(&a, &k).is_err());
        assert!(b.mul(&b, &k).is_err());
        let one = Scalar::exact(rat(5, 1), Unit::One);
        assert_eq!(one.mul(&a, &k).unwrap(), Scalar::exact(rat(15, 1), Unit::Gq));
    }

    #[test]
    fn exact_sums_need_like_units() {
        let a = Scalar::exact(rat(1, 2), Unit::Pi);
        let b = Scalar::exact(rat(1, 3), Unit::Pi);
        assert_eq!(a.add(&b).unwrap(), Scalar::exact(rat(5, 6), Unit::Pi));
        assert!(a.add(&Scalar::exact(rat(1, 1), Unit::Gq)).is_err());
        assert!(a.add(&Scalar::Float(1.0)).is_err());
    }

    #[test]
    fn rationalize_recovers_small_fractions() {
        assert_eq!(rationalize(0.75, 1e-12, 100), Some(rat(3, 4)));
        assert_eq!(rationalize(-2.0 / 3.0, 1e-12, 100), Some(rat(-2, 3)));
        assert_eq!(rationalize(std::f64::consts::SQRT_2, 1e-12, 1000), None);
    }

    #[test]
    fn phase_reduction_is_canonical() {
        assert_eq!(reduce_phase(&rat(-1, 2)), rat(3, 2));
        assert_eq!(reduce_phase(&rat(5, 1)), rat(1, 1));
        assert!(phase_eq(&(2.0 * PI - 1e-12), &0.0));
        assert!((reduce_phase(&(-PI / 2.0)) - 1.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn scalar_json_round_trip() {
        let s = Scalar::exact(rat(-7, 3), Unit::Gp);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"num":-7,"den":3,"unit":"gp"}"#);
        assert_eq!(serde_json::from_str::<Scalar>(&j).unwrap(), s);
        let f = Scalar::Float(0.25);
        assert_eq!(serde_json::from_str::<Scalar>("0.25").unwrap(), f);
    }

    #[test]
    fn symmetric_units_have_equal_scales() {
        let u = UnitSystem::symmetric(rat(1, 2)).unwrap();
        assert!((u.gq - u.gp()).abs() < 1e-12);
        assert!((u.gq * u.gp() - PI / 2.0).abs() < 1e-12);
    }
}
