//! Backend-generic elimination and integer lattice reduction.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::scalar::{Coeff, Rational};

/// Finds `λ` with `Σ λ_k basis_k = target`, if one exists. Free coordinates
/// are set to zero.
pub fn solve_in_span<C: Coeff>(basis: &[Vec<C>], target: &[C]) -> Option<Vec<C>> {
    let k = basis.len();
    let d = target.len();
    let mut m: Vec<Vec<C>> = (0..d)
        .map(|r| {
            let mut row: Vec<C> = basis.iter().map(|b| b[r].clone()).collect();
            row.push(target[r].clone());
            row
        })
        .collect();
    let pivots = rref(&mut m, k);
    if m[pivots.len()..].iter().any(|row| !row[k].is_zero()) {
        return None;
    }
    let mut lambda = vec![C::zero(); k];
    for (r, &c) in pivots.iter().enumerate() {
        lambda[c] = m[r][k].clone();
    }
    // Guard against float elimination accepting a near miss.
    for r in 0..d {
        let mut acc = C::zero();
        for (b, l) in basis.iter().zip(&lambda) {
            acc = acc.add(&b[r].mul(l));
        }
        if !acc.sub(&target[r]).is_zero() {
            return None;
        }
    }
    Some(lambda)
}

/// Reduced row echelon form over the first `ncols` columns, in place.
/// Returns the pivot column of each leading row.
pub fn rref<C: Coeff>(m: &mut [Vec<C>], ncols: usize) -> Vec<usize> {
    let rows = m.len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == rows {
            break;
        }
        let best = (r..rows)
            .filter(|&i| !m[i][c].is_zero())
            .max_by(|&i, &j| m[i][c].magnitude().total_cmp(&m[j][c].magnitude()));
        let Some(p) = best else { continue };
        m.swap(r, p);
        let inv = C::one().div(&m[r][c]);
        for x in m[r].iter_mut() {
            *x = x.mul(&inv);
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in 0..m[i].len() {
                    let t = m[r][j].mul(&f);
                    m[i][j] = m[i][j].sub(&t);
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn rank<C: Coeff>(vectors: &[Vec<C>]) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let mut m = vectors.to_vec();
    let cols = m[0].len();
    rref(&mut m, cols).len()
}

/// Linear map with kernel `span(basis)`: reduces a vector against the RREF of
/// the basis and keeps the non-pivot coordinates.
pub struct QuotientMap<C> {
    rows: Vec<Vec<C>>,
    pivots: Vec<usize>,
    dim: usize,
}

impl<C: Coeff> QuotientMap<C> {
    pub fn new(basis: &[Vec<C>], dim: usize) -> Self {
        let mut rows = basis.to_vec();
        let pivots = rref(&mut rows, dim);
        rows.truncate(pivots.len());
        Self { rows, pivots, dim }
    }

    pub fn coords(&self, v: &[C]) -> Vec<C> {
        let mut r = v.to_vec();
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            let f = r[p].clone();
            if !f.is_zero() {
                for j in 0..self.dim {
                    r[j] = r[j].sub(&row[j].mul(&f));
                }
            }
        }
        (0..self.dim)
            .filter(|j| !self.pivots.contains(j))
            .map(|j| r[j].clone())
            .collect()
    }
}

pub fn lcm_of_denominators(values: &[Rational]) -> BigInt {
    values.iter().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()))
}

/// Scales rational rows by a common denominator into integer rows.
pub fn integer_rows(rows: &[Vec<Rational>]) -> Vec<Vec<BigInt>> {
    let all: Vec<Rational> = rows.iter().flatten().cloned().collect();
    let d = lcm_of_denominators(&all);
    rows.iter()
        .map(|r| r.iter().map(|x| (x * Rational::from_integer(d.clone())).to_integer()).collect())
        .collect()
}

/// Basis of `{m ∈ ℤ^D : Σ m_j s_j ≡ 0 (mod d)}`; `d = None` asks for exact
/// vanishing.
pub fn integer_kernel(s: &[BigInt], d: Option<&BigInt>) -> Vec<Vec<BigInt>> {
    let dim = s.len();
    let mut vals = s.to_vec();
    let mut t: Vec<Vec<BigInt>> = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect())
        .collect();
    // Euclid on the entries with matching column operations on `t`.
    let pivot = loop {
        let Some(p) = (0..dim)
            .filter(|&i| !vals[i].is_zero())
            .min_by(|&i, &j| vals[i].abs().cmp(&vals[j].abs()))
        else {
            break None;
        };
        let mut done = true;
        for k in 0..dim {
            if k != p && !vals[k].is_zero() {
                let q = vals[k].div_floor(&vals[p]);
                vals[k] = &vals[k] - &q * &vals[p];
                let tp = t[p].clone();
                for (x, y) in t[k].iter_mut().zip(&tp) {
                    *x -= &q * y;
                }
                if !vals[k].is_zero() {
                    done = false;
                }
            }
        }
        if done {
            break Some(p);
        }
    };
    let mut out = Vec::new();
    for k in 0..dim {
        if Some(k) != pivot {
            out.push(t[k].clone());
        }
    }
    if let (Some(p), Some(d)) = (pivot, d) {
        let g = vals[p].gcd(d);
        let f = d / g;
        out.push(t[p].iter().map(|x| x * &f).collect());
    }
    out
}

/// Weight on the residual coordinate in [`float_integer_relations`].
const RELATION_WEIGHT: f64 = 1e10;

/// Relative residual below which a float combination counts as a relation.
pub const RELATION_TOL: f64 = 1e-11;

/// Largest coefficient accepted in a float relation; longer ones are either
/// spurious or too ill-conditioned to multiply out in floating point.
pub const RELATION_MAX_COEFF: i128 = 64;

/// Basis of `{m ∈ ℤ^D : Σ m_j x_j ∈ ℤ}` (`modular`) or `{m : Σ m_j x_j = 0}`
/// for float `x`, found by LLL on the rows `(e_j | W·x_j)`. Relations with
/// coefficients above [`RELATION_MAX_COEFF`] are dropped, so the result may
/// be a sublattice of the true one.
pub fn float_integer_relations(xs: &[f64], modular: bool) -> Vec<Vec<BigInt>> {
    let mut x = xs.to_vec();
    if modular {
        x.push(1.0);
    }
    let d = x.len();
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let unit = |i: usize| -> Vec<i128> { (0..d).map(|j| (i == j) as i128).collect() };
    let mut b: Vec<Vec<i128>> = (0..d).map(unit).collect();
    let is_relation = |m: &[i128]| {
        let r: f64 = m.iter().zip(&x).map(|(&k, v)| k as f64 * v).sum();
        r.abs() <= RELATION_TOL * scale && m.iter().all(|k| k.abs() <= RELATION_MAX_COEFF)
    };
    if scale > 0.0 {
        let y: Vec<f64> = x.iter().map(|v| v / scale).collect();
        let embed = |m: &[i128]| -> Vec<f64> {
            let mut e: Vec<f64> = m.iter().map(|&k| k as f64).collect();
            e.push(RELATION_WEIGHT * m.iter().zip(&y).map(|(&k, v)| k as f64 * v).sum::<f64>());
            e
        };
        lll(&mut b, &embed);
    }
    b.into_iter()
        .filter(|m| is_relation(m))
        .map(|m| m[..xs.len()].iter().map(|&k| BigInt::from(k)).collect::<Vec<_>>())
        .filter(|m| m.iter().any(|k| !k.is_zero()))
        .collect()
}

/// Unimodular rows `T` such that the lattice rows `T·vecs` are LLL-reduced.
pub fn reduce_float_basis(vecs: &[Vec<f64>]) -> Vec<Vec<BigInt>> {
    let d = vecs.len();
    let mut b: Vec<Vec<i128>> = (0..d).map(|i| (0..d).map(|j| (i == j) as i128).collect()).collect();
    let embed = |m: &[i128]| -> Vec<f64> {
        let dim = vecs.first().map_or(0, Vec::len);
        (0..dim).map(|c| m.iter().zip(vecs).map(|(&k, v)| k as f64 * v[c]).sum()).collect()
    };
    lll(&mut b, &embed);
    b.into_iter().map(|r| r.into_iter().map(BigInt::from).collect()).collect()
}

/// LLL reduction with `δ = 3/4` of integer rows under `embed`; Gram–Schmidt
/// runs in floating point, which is adequate for the small dimensions here.
fn lll(b: &mut [Vec<i128>], embed: &dyn Fn(&[i128]) -> Vec<f64>) {
    let n = b.len();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let gso = |b: &[Vec<i128>]| {
        let e: Vec<Vec<f64>> = b.iter().map(|r| embed(r)).collect();
        let mut star: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut mu = vec![vec![0.0; n]; n];
        let mut norms = vec![0.0; n];
        for i in 0..n {
            let mut v = e[i].clone();
            for j in 0..i {
                mu[i][j] = if norms[j] > 0.0 { dot(&e[i], &star[j]) / norms[j] } else { 0.0 };
                for (x, y) in v.iter_mut().zip(&star[j]) {
                    *x -= mu[i][j] * y;
                }
            }
            norms[i] = dot(&v, &v);
            star.push(v);
        }
        (mu, norms)
    };
    let (mut mu, mut norms) = gso(b);
    let mut k = 1;
    let mut steps = 0;
    while k < n && steps < 100_000 {
        steps += 1;
        for j in (0..k).rev() {
            let q = mu[k][j].round();
            if q != 0.0 {
                let qi = q as i128;
                let bj = b[j].clone();
                for (x, y) in b[k].iter_mut().zip(&bj) {
                    *x -= qi * y;
                }
                for i in 0..j {
                    mu[k][i] -= q * mu[j][i];
                }
                mu[k][j] -= q;
            }
        }
        if norms[k] >= (0.75 - mu[k][k - 1].powi(2)) * norms[k - 1] {
            k += 1;
        } else {
            b.swap(k, k - 1);
            (mu, norms) = gso(b);
            k = (k - 1).max(1);
        }
    }
}

/// Integer row reduction with a unimodular transform `U`. Returns the rows of
/// `U` that produce a lattice basis and the rows that produce zero.
pub fn row_reduce_integer(rows: &[Vec<BigInt>]) -> (Vec<Vec<BigInt>>, Vec<Vec<BigInt>>) {
    let r = rows.len();
    if r == 0 {
        return (vec![], vec![]);
    }
    let cols = rows[0].len();
    let mut m = rows.to_vec();
    let mut u: Vec<Vec<BigInt>> = (0..r)
        .map(|i| (0..r).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect())
        .collect();
    let mut prow = 0;
    for c in 0..cols {
        if prow == r {
            break;
        }
        loop {
            let Some(p) = (prow..r)
                .filter(|&i| !m[i][c].is_zero())
                .min_by(|&i, &j| m[i][c].abs().cmp(&m[j][c].abs()))
            else {
                break;
            };
            m.swap(prow, p);
            u.swap(prow, p);
            let mut clean = true;
            for i in prow + 1..r {
                if !m[i][c].is_zero() {
                    let q = m[i][c].div_floor(&m[prow][c]);
                    let (mp, up) = (m[prow].clone(), u[prow].clone());
                    for (x, y) in m[i].iter_mut().zip(&mp) {
                        *x -= &q * y;
                    }
                    for (x, y) in u[i].iter_mut().zip(&up) {
                        *x -= &q * y;
                    }
                    if !m[i][c].is_zero() {
                        clean = false;
                    }
                }
            }
            if clean {
                prow += 1;
                break;
            }
        }
    }
    let relations = u.split_off(prow);
    (u, relations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, rat_int};

    fn bi(v: &[i64]) -> Vec<BigInt> {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    #[test]
    fn span_membership_exact() {
        let basis = vec![vec![rat_int(1), rat_int(1), rat_int(0)], vec![rat_int(0), rat_int(1), rat_int(1)]];
        let target = vec![rat_int(2), rat(5, 2), rat(1, 2)];
        assert_eq!(solve_in_span(&basis, &target), Some(vec![rat_int(2), rat(1, 2)]));
        assert_eq!(solve_in_span(&basis, &[rat_int(1), rat_int(0), rat_int(1)]), None);
    }

    #[test]
    fn span_membership_float() {
        let basis = vec![vec![1.0, 2.0], vec![0.5, 0.0]];
        let l = solve_in_span(&basis, &[3.0, 4.0]).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-12 && (l[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn float_relations_mix_incommensurate_scales() {
        let r = std::f64::consts::SQRT_2 - 1.0;
        // r and 1 − r are each irrational but sum to an integer.
        let rel = float_integer_relations(&[r, 1.0 - r], true);
        assert_eq!(rel.len(), 1);
        assert_eq!(rel[0][0].abs(), rel[0][1].abs());
        assert!(float_integer_relations(&[std::f64::consts::SQRT_2, 1.0], false).is_empty());
        let rel = float_integer_relations(&[0.5, 0.25, std::f64::consts::PI], false);
        assert!(rel == vec![bi(&[1, -2, 0])] || rel == vec![bi(&[-1, 2, 0])], "{rel:?}");
        assert_eq!(float_integer_relations(&[0.0, 0.0], false).len(), 2);
    }

    #[test]
    fn kernel_mod_d() {
        // m1/2 + 0·m2 ∈ ℤ  →  generated by (2,0) and (0,1).
        let k = integer_kernel(&bi(&[1, 0]), Some(&BigInt::from(2)));
        for v in &k {
            assert!(v[0].is_even());
        }
        assert_eq!(k.len(), 2);
        let exact = integer_kernel(&bi(&[2, 3]), None);
        assert_eq!(exact.len(), 1);
        assert!(Zero::is_zero(&(&exact[0][0] * 2 + &exact[0][1] * 3)));
    }

    #[test]
    fn integer_row_reduction_finds_relations() {
        let rows = vec![bi(&[2, 0]), bi(&[1, 0]), bi(&[0, 3])];
        let (basis, rel) = row_reduce_integer(&rows);
        assert_eq!(basis.len(), 2);
        assert_eq!(rel.len(), 1);
        let combo: Vec<BigInt> = (0..2)
            .map(|c| (0..3).map(|i| &rel[0][i] * &rows[i][c]).sum())
            .collect();
        assert!(combo.iter().all(|x| x.is_zero()));
    }

    #[test]
    fn quotient_map_kills_subspace() {
        let q = QuotientMap::new(&[vec![rat_int(1), rat_int(1), rat_int(0)]], 3);
        assert!(q.coords(&[rat_int(3), rat_int(3), rat_int(0)]).iter().all(Zero::is_zero));
        assert_eq!(q.coords(&[rat_int(0), rat_int(0), rat_int(1)]).len(), 2);
    }
}
