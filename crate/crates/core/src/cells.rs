//! Recurrent cells on the differentiation tape.
//!
//! The CRNN cell keeps a lattice state `(A, J, α)` over `n` hidden modes and
//! reads `m` input modes per step. The Gaussian cell is the same recurrence
//! with `J = K = 0`. GRU and ORNN are classical baselines over a hidden vector.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{apply_givens, givens_pairs, Tape, Var};
use crate::error::{Error, Result};
use crate::gkp::GkpLatticeState;

/// Ridge added to `A` and `W_HH` before inversion while training.
pub const TRAIN_GUARD: f64 = 1e-6;
/// Relative tolerance for matching classical widths to the CRNN count.
pub const WIDTH_MATCH_TOL: f64 = 0.025;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Crnn,
    Gaussian,
    Gru,
    Ornn,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::Crnn, CellKind::Gaussian, CellKind::Gru, CellKind::Ornn];

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Crnn => "crnn",
            CellKind::Gaussian => "gaussian",
            CellKind::Gru => "gru",
            CellKind::Ornn => "ornn",
        }
    }

    pub fn is_lattice(self) -> bool {
        matches!(self, CellKind::Crnn | CellKind::Gaussian)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown cell kind {s:?}")))
    }
}

/// Trainable scalar count of a cell with hidden width `n` and input width `m`.
pub fn param_count(kind: CellKind, n: usize, m: usize) -> usize {
    match kind {
        CellKind::Crnn | CellKind::Gaussian => (n + m) * (n + m) + n * m + m * m,
        CellKind::Gru => 3 * (n + m + 1) * n,
        CellKind::Ornn => n * (n.saturating_sub(1)) / 2 + n * m,
    }
}

/// Hidden width of a classical cell whose count matches a CRNN with `n`
/// hidden and `m` input modes: the smallest width within 2.5%, otherwise the
/// closest.
pub fn matched_width(kind: CellKind, n: usize, m: usize) -> usize {
    if kind.is_lattice() {
        return n;
    }
    let target = param_count(CellKind::Crnn, n, m) as f64;
    let rel = |h: usize| (param_count(kind, h, m) as f64 - target).abs() / target;
    let limit = 4 * (n + m) + 8;
    (1..=limit).find(|&h| rel(h) <= WIDTH_MATCH_TOL).unwrap_or_else(|| {
        (1..=limit).min_by(|&a, &b| rel(a).total_cmp(&rel(b))).expect("nonempty range")
    })
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let d = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    DMatrix::from_fn(rows, cols, |_, _| d.sample(rng))
}

fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column signs so the draw is Haar.
    let signs = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| r[(i, i)].signum()));
    q * signs
}

/// `[[c I, −s P], [s Pᵀ, c I]]` with a random orthogonal `P`; needs `m = n`
/// for `P` to be square, otherwise falls back to a Haar draw.
fn mixing_orthogonal<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> DMatrix<f64> {
    if n != m {
        return random_orthogonal(n + m, rng);
    }
    let (s, c) = 0.5f64.sin_cos();
    let p = random_orthogonal(n, rng);
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    w.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) * c));
    w.view_mut((0, n), (n, n)).copy_from(&(&p * -s));
    w.view_mut((n, 0), (n, n)).copy_from(&(p.transpose() * s));
    w.view_mut((n, n), (n, n)).copy_from(&(DMatrix::identity(n, n) * c));
    w
}

fn identity_column(m: usize) -> DMatrix<f64> {
    DMatrix::identity(m, m).reshape_generic(nalgebra::Dyn(m * m), nalgebra::Dyn(1))
}

/// Cell parameters. Lattice cells hold `[W, f, g]` trainable and `[h, h_bias,
/// r, r_bias]` frozen; GRU holds `[W_z, b_z, W_r, b_r, W_h, b_h]`; ORNN holds
/// `[θ, U]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub kind: CellKind,
    pub n: usize,
    pub m: usize,
    pub params: Vec<DMatrix<f64>>,
    pub consts: Vec<DMatrix<f64>>,
    /// Ridge for `A` and `W_HH` inversions; 0 disables it.
    pub guard: f64,
}

/// A cell's parameters and per-tape precomputations.
pub struct BoundCell {
    pub params: Vec<Var>,
    lattice: Option<LatticeVars>,
    pairs: Rc<Vec<(usize, usize)>>,
}

struct LatticeVars {
    h: Var,
    h_bias: Var,
    r: Var,
    r_bias: Var,
    w_hh: Var,
    w_hh_t: Var,
    w_hy: Var,
    w_hy_t: Var,
    wit_h: Var,
    wit_y: Var,
    j_step: Var,
    ridge_n: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub enum StateVar {
    Lattice { a: Var, j: Option<Var>, alpha: Var },
    Hidden(Var),
}

impl Cell {
    /// Seeded initialization: Glorot for dense maps, an orthogonal `W`.
    pub fn new<R: Rng + ?Sized>(kind: CellKind, n: usize, m: usize, rng: &mut R) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument("cell widths must be positive".into()));
        }
        let (params, consts) = match kind {
            CellKind::Crnn | CellKind::Gaussian => {
                let w = mixing_orthogonal(n, m, rng);
                let f = glorot(n, m, rng);
                let g = glorot(m, m, rng);
                let h = glorot(m * m, m, rng);
                let r = glorot(m * m, m, rng);
                (vec![w, f, g], vec![h, identity_column(m), r, identity_column(m)])
            }
            CellKind::Gru => {
                let mut p = Vec::with_capacity(6);
                for _ in 0..3 {
                    p.push(glorot(n, n + m, rng));
                    p.push(DMatrix::zeros(n, 1));
                }
                (p, vec![])
            }
            CellKind::Ornn => {
                let k = n * (n - 1) / 2;
                let d = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI).expect("finite range");
                let theta = DMatrix::from_fn(k, 1, |_, _| d.sample(rng));
                (vec![theta, glorot(n, m, rng)], vec![])
            }
        };
        Ok(Self { kind, n, m, params, consts, guard: TRAIN_GUARD })
    }

    pub fn with_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Length of `y`: `m(n+m) + m` for lattice cells, `n` otherwise.
    pub fn output_dim(&self) -> usize {
        if self.kind.is_lattice() {
            self.m * (self.n + self.m) + self.m
        } else {
            self.n
        }
    }

    /// Records the parameters as leaves and precomputes the per-`W` blocks.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundCell> {
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let (n, m) = (self.n, self.m);
        let lattice = if self.kind.is_lattice() {
            let c: Vec<Var> = self.consts.iter().map(|p| tape.leaf(p.clone())).collect();
            let w = params[0];
            let winv = tape.inverse(w)?;
            let wit = tape.transpose(winv);
            let w_hh = tape.block(w, 0, 0, n, n);
            let w_hy = tape.block(w, 0, n, n, m);
            let w_hh_t = tape.transpose(w_hh);
            let w_hy_t = tape.transpose(w_hy);
            let ridge_n = (self.guard > 0.0).then(|| tape.leaf(DMatrix::identity(n, n) * self.guard));
            let guarded = match ridge_n {
                Some(r) => tape.add(w_hh_t, r),
                None => w_hh_t,
            };
            let j_step = tape.inverse(guarded)?;
            Some(LatticeVars {
                h: c[0],
                h_bias: c[1],
                r: c[2],
                r_bias: c[3],
                w_hh,
                w_hh_t,
                w_hy,
                w_hy_t,
                wit_h: tape.block(wit, 0, 0, n, n + m),
                wit_y: tape.block(wit, n, 0, m, n + m),
                j_step,
                ridge_n,
            })
        } else {
            None
        };
        let pairs = Rc::new(if self.kind == CellKind::Ornn { givens_pairs(n) } else { vec![] });
        Ok(BoundCell { params, lattice, pairs })
    }

    /// Initial state from the latent vector `λ₀` (length `n`): `A = I`,
    /// `J = I` (CRNN only) and `α = λ₀` for lattice cells, `h = λ₀` otherwise.
    pub fn initial_state(&self, tape: &mut Tape, lambda0: &DVector<f64>) -> StateVar {
        let l = tape.leaf(DMatrix::from_column_slice(self.n, 1, lambda0.as_slice()));
        match self.kind {
            CellKind::Crnn | CellKind::Gaussian => StateVar::Lattice {
                a: tape.leaf(DMatrix::identity(self.n, self.n)),
                j: (self.kind == CellKind::Crnn).then(|| tape.leaf(DMatrix::identity(self.n, self.n))),
                alpha: l,
            },
            _ => StateVar::Hidden(l),
        }
    }

    /// One recurrence step on input `x` (an `m×1` node).
    pub fn step(&self, tape: &mut Tape, b: &BoundCell, state: StateVar, x: Var) -> Result<(StateVar, Var)> {
        match (self.kind, state) {
            (CellKind::Crnn | CellKind::Gaussian, StateVar::Lattice { a, j, alpha }) => {
                self.lattice_step(tape, b, a, j, alpha, x)
            }
            (CellKind::Gru, StateVar::Hidden(h)) => Ok(gru_step(tape, &b.params, h, x)),
            (CellKind::Ornn, StateVar::Hidden(h)) => {
                let q = tape.givens(h, b.params[0], b.pairs.clone());
                let ux = tape.matmul(b.params[1], x);
                let h2 = tape.add(q, ux);
                Ok((StateVar::Hidden(h2), h2))
            }
            _ => Err(Error::InvalidArgument("state does not match cell kind".into())),
        }
    }

    fn lattice_step(
        &self,
        tape: &mut Tape,
        b: &BoundCell,
        a: Var,
        j: Option<Var>,
        alpha: Var,
        x: Var,
    ) -> Result<(StateVar, Var)> {
        let lv = b.lattice.as_ref().expect("lattice cell is bound with lattice vars");
        let (n, m) = (self.n, self.m);
        let (f, g) = (b.params[1], b.params[2]);
        // Mode shift α ← α + A⁻¹ f(x).
        let a_g = match lv.ridge_n {
            Some(r) => tape.add(a, r),
            None => a,
        };
        let a_inv = tape.inverse(a_g)?;
        let fx = tape.matmul(f, x);
        let shift = tape.matmul(a_inv, fx);
        let alpha = tape.add(alpha, shift);
        // Input register.
        let beta = tape.matmul(g, x);
        let rx = tape.matmul(lv.r, x);
        let rx = tape.add(rx, lv.r_bias);
        let s = tape.reshape(rx, m, m);
        let s_t = tape.transpose(s);
        let bm = tape.matmul(s, s_t);
        // A' = W_HH A W_HHᵀ + W_HY B W_HYᵀ.
        let t1 = tape.matmul(lv.w_hh, a);
        let t1 = tape.matmul(t1, lv.w_hh_t);
        let t2 = tape.matmul(lv.w_hy, bm);
        let t2 = tape.matmul(t2, lv.w_hy_t);
        let a2 = tape.add(t1, t2);
        let gamma = tape.vstack(&[alpha, beta]);
        let centers = tape.matmul(lv.wit_y, gamma);
        let alpha2 = tape.matmul(lv.wit_h, gamma);
        let (lattice, j2) = match j {
            Some(j) => {
                let hx = tape.matmul(lv.h, x);
                let hx = tape.add(hx, lv.h_bias);
                let k = tape.reshape(hx, m, m);
                let l = tape.direct_sum(j, k);
                let yl = tape.matmul(lv.wit_y, l);
                let flat = tape.reshape(yl, m * (n + m), 1);
                (flat, Some(tape.matmul(lv.j_step, j)))
            }
            None => (tape.leaf(DMatrix::zeros(m * (n + m), 1)), None),
        };
        let y = tape.vstack(&[lattice, centers]);
        Ok((StateVar::Lattice { a: a2, j: j2, alpha: alpha2 }, y))
    }

    /// Runs the cell over `xs` from `λ₀`, returning every output and the final
    /// state values.
    pub fn unroll(&self, lambda0: &DVector<f64>, xs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let mut s = self.initial_state(&mut tape, lambda0);
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let xv = tape.leaf(DMatrix::from_column_slice(self.m, 1, x.as_slice()));
            let (s2, y) = self.step(&mut tape, &b, s, xv)?;
            s = s2;
            out.push(DVector::from_column_slice(tape.value(y).as_slice()));
        }
        Ok(out)
    }
}

fn gru_step(tape: &mut Tape, p: &[Var], h: Var, x: Var) -> (StateVar, Var) {
    let xh = tape.vstack(&[x, h]);
    let gate = |tape: &mut Tape, w: Var, bias: Var, inp: Var| {
        let z = tape.matmul(w, inp);
        tape.add(z, bias)
    };
    let zl = gate(tape, p[0], p[1], xh);
    let z = tape.sigmoid(zl);
    let rl = gate(tape, p[2], p[3], xh);
    let r = tape.sigmoid(rl);
    let rh = tape.hadamard(r, h);
    let xrh = tape.vstack(&[x, rh]);
    let cl = gate(tape, p[4], p[5], xrh);
    let c = tape.tanh(cl);
    let zh = tape.hadamard(z, h);
    let zc = tape.hadamard(z, c);
    let keep = tape.sub(h, zh);
    let h2 = tape.add(keep, zc);
    (StateVar::Hidden(h2), h2)
}

/// Values of a lattice cell's memory; `j` is zero for the Gaussian cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeCellState {
    pub a: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

impl LatticeCellState {
    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn to_lattice(&self) -> Result<GkpLatticeState> {
        GkpLatticeState::new(self.a.clone(), self.j.clone(), self.alpha.clone())
    }
}

/// One lattice-cell step on plain values.
pub fn crnn_step(cell: &Cell, state: &LatticeCellState, x: &DVector<f64>) -> Result<(LatticeCellState, DVector<f64>)> {
    if !cell.kind.is_lattice() {
        return Err(Error::InvalidArgument(format!("{} is not a lattice cell", cell.kind)));
    }
    if state.n() != cell.n || x.len() != cell.m {
        return Err(Error::ModeMismatch(cell.n, state.n()));
    }
    let mut tape = Tape::new();
    let b = cell.bind(&mut tape)?;
    let s = StateVar::Lattice {
        a: tape.leaf(state.a.clone()),
        j: (cell.kind == CellKind::Crnn).then(|| tape.leaf(state.j.clone())),
        alpha: tape.leaf(DMatrix::from_column_slice(cell.n, 1, state.alpha.as_slice())),
    };
    let xv = tape.leaf(DMatrix::from_column_slice(cell.m, 1, x.as_slice()));
    let (s2, y) = cell.step(&mut tape, &b, s, xv)?;
    let StateVar::Lattice { a, j, alpha } = s2 else { unreachable!("lattice step keeps lattice state") };
    let a = tape.value(a);
    let a = (a + a.transpose()) * 0.5;
    let j = j.map_or_else(|| DMatrix::zeros(cell.n, cell.n), |j| tape.value(j).clone());
    let post = LatticeCellState { a, j, alpha: DVector::from_column_slice(tape.value(alpha).as_slice()) };
    Ok((post, DVector::from_column_slice(tape.value(y).as_slice())))
}

/// `gaussian_step`: the CRNN step with `J = K = 0`.
pub fn gaussian_step(cell: &Cell, state: &LatticeCellState, x: &DVector<f64>) -> Result<(LatticeCellState, DVector<f64>)> {
    if cell.kind != CellKind::Gaussian {
        return Err(Error::InvalidArgument("gaussian_step needs a Gaussian cell".into()));
    }
    crnn_step(cell, state, x)
}

/// `h' = (1−z)⊙h + z⊙tanh(W_h[x, r⊙h] + b_h)` on plain values.
pub fn gru_step_values(cell: &Cell, h: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut tape = Tape::new();
    let p: Vec<Var> = cell.params.iter().map(|m| tape.leaf(m.clone())).collect();
    let hv = tape.leaf(DMatrix::from_column_slice(cell.n, 1, h.as_slice()));
    let xv = tape.leaf(DMatrix::from_column_slice(cell.m, 1, x.as_slice()));
    let (_, y) = gru_step(&mut tape, &p, hv, xv);
    DVector::from_column_slice(tape.value(y).as_slice())
}

/// The ORNN recurrence matrix `Q(θ)`.
pub fn ornn_matrix(n: usize, theta: &[f64]) -> DMatrix<f64> {
    let mut q = DMatrix::identity(n, n);
    apply_givens(&mut q, theta, &givens_pairs(n));
    q
}

/// The direct-sum state and map that `crnn_step` composes: the lattice state
/// over `n + m` modes after the mode shift and input preparation, and `W`.
pub fn crnn_composition_inputs(
    cell: &Cell,
    state: &LatticeCellState,
    x: &DVector<f64>,
) -> Result<(GkpLatticeState, DMatrix<f64>)> {
    let (n, m) = (cell.n, cell.m);
    let (w, f, g) = (&cell.params[0], &cell.params[1], &cell.params[2]);
    let (h, hb, r, rb) = (&cell.consts[0], &cell.consts[1], &cell.consts[2], &cell.consts[3]);
    let a_inv = crate::gaussian::guarded_inverse(&state.a, "A")?;
    let alpha = &state.alpha + a_inv * (f * x);
    let beta = g * x;
    let from_rm = |v: DVector<f64>| DMatrix::from_row_slice(m, m, v.as_slice());
    let k = from_rm(h * x + hb.column(0));
    let s = from_rm(r * x + rb.column(0));
    let bm = &s * s.transpose();
    let mut u = DMatrix::zeros(n + m, n + m);
    u.view_mut((0, 0), (n, n)).copy_from(&state.a);
    u.view_mut((n, n), (m, m)).copy_from(&bm);
    let mut l = DMatrix::zeros(n + m, n + m);
    if cell.kind == CellKind::Crnn {
        l.view_mut((0, 0), (n, n)).copy_from(&state.j);
        l.view_mut((n, n), (m, m)).copy_from(&k);
    }
    let mut gamma = DVector::zeros(n + m);
    gamma.rows_mut(0, n).copy_from(&alpha);
    gamma.rows_mut(n, m).copy_from(&beta);
    Ok((GkpLatticeState::new(u, l, gamma)?, w.clone()))
}

/// On-disk parameter bundle: little-endian `f64` blob plus a JSON manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub cell_kind: CellKind,
    pub n: usize,
    pub m: usize,
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
    pub seed: u64,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Row-major little-endian concatenation of `tensors`.
pub fn tensors_to_blob(tensors: &[DMatrix<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tensors.iter().map(|t| t.len() * 8).sum());
    for t in tensors {
        for r in 0..t.nrows() {
            for x in t.row(r).iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn tensors_from_blob(blob: &[u8], shapes: &[(usize, usize)]) -> Result<Vec<DMatrix<f64>>> {
    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    if blob.len() != total * 8 {
        return Err(Error::InvalidArgument(format!(
            "blob holds {} bytes, manifest needs {}",
            blob.len(),
            total * 8
        )));
    }
    let mut vals = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    Ok(shapes
        .iter()
        .map(|&(r, c)| {
            let v: Vec<f64> = vals.by_ref().take(r * c).collect();
            DMatrix::from_row_slice(r, c, &v)
        })
        .collect())
}
