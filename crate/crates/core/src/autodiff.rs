//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] returns the
//! gradient of a `1×1` node with respect to every recorded node. Vectors are
//! column matrices.

use std::rc::Rc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Inverse(Var),
    Sigmoid(Var),
    Tanh(Var),
    Block { src: Var, r0: usize, c0: usize },
    DirectSum(Var, Var),
    VStack(Vec<Var>),
    Reshape { src: Var },
    SoftmaxCe { logits: Var, target: usize, probs: DMatrix<f64> },
    Sum(Var),
    Givens { x: Var, angles: Var, pairs: Rc<Vec<(usize, usize)>> },
}

struct Node {
    value: DMatrix<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node.
pub struct Grads(Vec<Option<DMatrix<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&DMatrix<f64>> {
        self.0[v.0].as_ref()
    }

    /// Gradient of `v`, zero if the loss does not depend on it.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> DMatrix<f64> {
        self.0[v.0].clone().unwrap_or_else(|| DMatrix::zeros(shape.0, shape.1))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Applies the rotations in order: `(x_i, x_j) ← (c x_i − s x_j, s x_i + c x_j)`.
pub fn apply_givens(x: &mut DMatrix<f64>, angles: &[f64], pairs: &[(usize, usize)]) {
    for (&(i, j), &t) in pairs.iter().zip(angles) {
        let (s, c) = t.sin_cos();
        for col in 0..x.ncols() {
            let (a, b) = (x[(i, col)], x[(j, col)]);
            x[(i, col)] = c * a - s * b;
            x[(j, col)] = s * a + c * b;
        }
    }
}

/// All `n(n−1)/2` coordinate pairs in a fixed order.
pub fn givens_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn inverse(&mut self, a: Var) -> Result<Var> {
        let v = self
            .value(a)
            .clone()
            .lu()
            .try_inverse()
            .filter(|m| m.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::Singular("tape inverse".into()))?;
        Ok(self.push(v, Op::Inverse(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// The `rows × cols` block starting at `(r0, c0)`.
    pub fn block(&mut self, src: Var, r0: usize, c0: usize, rows: usize, cols: usize) -> Var {
        let v = self.value(src).view((r0, c0), (rows, cols)).into_owned();
        self.push(v, Op::Block { src, r0, c0 })
    }

    pub fn direct_sum(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let mut v = DMatrix::zeros(ra + rb, ca + cb);
        v.view_mut((0, 0), (ra, ca)).copy_from(self.value(a));
        v.view_mut((ra, ca), (rb, cb)).copy_from(self.value(b));
        self.push(v, Op::DirectSum(a, b))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let rows: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut v = DMatrix::zeros(rows, cols);
        let mut r = 0;
        for &p in parts {
            let pr = self.shape(p).0;
            v.view_mut((r, 0), (pr, cols)).copy_from(self.value(p));
            r += pr;
        }
        self.push(v, Op::VStack(parts.to_vec()))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, src: Var, rows: usize, cols: usize) -> Var {
        let s = self.value(src);
        assert_eq!(s.len(), rows * cols, "reshape size mismatch");
        let flat = row_major(s);
        let v = DMatrix::from_row_slice(rows, cols, &flat);
        self.push(v, Op::Reshape { src })
    }

    /// `−log softmax(logits)[target]` for a column of logits.
    pub fn softmax_ce(&mut self, logits: Var, target: usize) -> Var {
        let l = self.value(logits);
        let max = l.max();
        let exps = l.map(|x| (x - max).exp());
        let z: f64 = exps.sum();
        let probs = exps / z;
        let loss = -(probs[target].max(f64::MIN_POSITIVE)).ln();
        self.push(DMatrix::from_element(1, 1, loss), Op::SoftmaxCe { logits, target, probs })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = DMatrix::from_element(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn add_all(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// `Q(θ) x` for a product of Givens rotations over `pairs`.
    pub fn givens(&mut self, x: Var, angles: Var, pairs: Rc<Vec<(usize, usize)>>) -> Var {
        let mut v = self.value(x).clone();
        let th: Vec<f64> = self.value(angles).iter().copied().collect();
        apply_givens(&mut v, &th, &pairs);
        self.push(v, Op::Givens { x, angles, pairs })
    }

    pub fn backward(&self, loss: Var) -> Grads {
        let mut g: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(DMatrix::from_element(1, 1, 1.0));
        fn acc(g: &mut [Option<DMatrix<f64>>], v: Var, d: DMatrix<f64>) {
            match &mut g[v.0] {
                Some(x) => *x += d,
                slot => *slot = Some(d),
            }
        }
        for idx in (0..=loss.0).rev() {
            let Some(gy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut g, *a, &gy * self.value(*b).transpose());
                    acc(&mut g, *b, self.value(*a).transpose() * &gy);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, gy.clone());
                    acc(&mut g, *b, gy.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *a, gy.clone());
                    acc(&mut g, *b, -&gy);
                }
                Op::Hadamard(a, b) => {
                    acc(&mut g, *a, gy.component_mul(self.value(*b)));
                    acc(&mut g, *b, gy.component_mul(self.value(*a)));
                }
                Op::Scale(a, s) => acc(&mut g, *a, &gy * *s),
                Op::Transpose(a) => acc(&mut g, *a, gy.transpose()),
                Op::Inverse(a) => {
                    let yt = node.value.transpose();
                    acc(&mut g, *a, -(&yt * &gy * &yt));
                }
                Op::Sigmoid(a) => {
                    let d = node.value.map(|y| y * (1.0 - y));
                    acc(&mut g, *a, gy.component_mul(&d));
                }
                Op::Tanh(a) => {
                    let d = node.value.map(|y| 1.0 - y * y);
                    acc(&mut g, *a, gy.component_mul(&d));
                }
                Op::Block { src, r0, c0 } => {
                    let (r, c) = self.shape(*src);
                    let mut d = DMatrix::zeros(r, c);
                    d.view_mut((*r0, *c0), gy.shape()).copy_from(&gy);
                    acc(&mut g, *src, d);
                }
                Op::DirectSum(a, b) => {
                    let (ra, ca) = self.shape(*a);
                    let (rb, cb) = self.shape(*b);
                    acc(&mut g, *a, gy.view((0, 0), (ra, ca)).into_owned());
                    acc(&mut g, *b, gy.view((ra, ca), (rb, cb)).into_owned());
                }
                Op::VStack(parts) => {
                    let mut r = 0;
                    for &p in parts {
                        let (pr, pc) = self.shape(p);
                        acc(&mut g, p, gy.view((r, 0), (pr, pc)).into_owned());
                        r += pr;
                    }
                }
                Op::Reshape { src } => {
                    let (r, c) = self.shape(*src);
                    acc(&mut g, *src, DMatrix::from_row_slice(r, c, &row_major(&gy)));
                }
                Op::SoftmaxCe { logits, target, probs } => {
                    let mut d = probs.clone();
                    d[*target] -= 1.0;
                    acc(&mut g, *logits, d * gy[(0, 0)]);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut g, *a, DMatrix::from_element(r, c, gy[(0, 0)]));
                }
                Op::Givens { x, angles, pairs } => {
                    let th: Vec<f64> = self.value(*angles).iter().copied().collect();
                    let mut y = node.value.clone();
                    let mut gx = gy.clone();
                    let mut gth = DMatrix::zeros(th.len(), 1);
                    for (k, &(i, j)) in pairs.iter().enumerate().rev() {
                        let (s, c) = th[k].sin_cos();
                        for col in 0..y.ncols() {
                            // Undo rotation k to recover its input.
                            let (a, b) = (y[(i, col)], y[(j, col)]);
                            let (xi, xj) = (c * a + s * b, -s * a + c * b);
                            y[(i, col)] = xi;
                            y[(j, col)] = xj;
                            let (gi, gj) = (gx[(i, col)], gx[(j, col)]);
                            gth[k] += gi * (-s * xi - c * xj) + gj * (c * xi - s * xj);
                            gx[(i, col)] = c * gi + s * gj;
                            gx[(j, col)] = -s * gi + c * gj;
                        }
                    }
                    acc(&mut g, *x, gx);
                    acc(&mut g, *angles, gth);
                }
            }
            g[idx] = Some(gy);
        }
        Grads(g)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` around `x`.
    fn numeric(f: &dyn Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>) -> DMatrix<f64> {
        let h = 1e-6;
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let mut p = x.clone();
            p[(i, j)] += h;
            let mut m = x.clone();
            m[(i, j)] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
    }

    fn check(build: &dyn Fn(&mut Tape, Var) -> Var, x: DMatrix<f64>) {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let out = build(&mut t, xv);
        let g = t.backward(out).wrt(xv, x.shape());
        let f = |p: &DMatrix<f64>| {
            let mut t = Tape::new();
            let v = t.leaf(p.clone());
            let o = build(&mut t, v);
            t.value(o)[(0, 0)]
        };
        let n = numeric(&f, &x);
        let err = (&g - &n).amax() / (1.0 + n.amax());
        assert!(err < 1e-6, "analytic {g} numeric {n}");
    }

    fn sample(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |i, j| (((i * 7 + j * 13) as f64 + seed as f64) * 0.37).sin())
    }

    #[test]
    fn inverse_and_products() {
        let m = sample(3, 3, 1) + DMatrix::identity(3, 3) * 2.0;
        check(
            &|t, x| {
                let inv = t.inverse(x).unwrap();
                let tr = t.transpose(x);
                let p = t.matmul(inv, tr);
                let p = t.hadamard(p, x);
                t.sum(p)
            },
            m,
        );
    }

    #[test]
    fn gates_blocks_and_reshape() {
        check(
            &|t, x| {
                let s = t.sigmoid(x);
                let h = t.tanh(x);
                let d = t.direct_sum(s, h);
                let b = t.block(d, 1, 1, 3, 2);
                let r = t.reshape(b, 2, 3);
                let v = t.vstack(&[r, r]);
                let w = t.scale(v, 0.7);
                let q = t.hadamard(w, w);
                t.sum(q)
            },
            sample(2, 2, 3),
        );
    }

    #[test]
    fn softmax_cross_entropy() {
        check(&|t, x| t.softmax_ce(x, 2), sample(5, 1, 4));
        let mut t = Tape::new();
        let l = t.leaf(DMatrix::zeros(4, 1));
        let ce = t.softmax_ce(l, 1);
        assert!((t.value(ce)[(0, 0)] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn givens_gradient_in_angles_and_input() {
        let pairs = Rc::new(givens_pairs(4));
        let theta = sample(6, 1, 5);
        let x = sample(4, 1, 6);
        let p = pairs.clone();
        check(
            &move |t, a| {
                let xv = t.leaf(x.clone());
                let y = t.givens(xv, a, p.clone());
                let w = t.leaf(sample(4, 1, 9));
                let d = t.hadamard(y, w);
                t.sum(d)
            },
            theta.clone(),
        );
        check(
            &move |t, xv| {
                let a = t.leaf(theta.clone());
                let y = t.givens(xv, a, pairs.clone());
                let q = t.hadamard(y, y);
                let w = t.leaf(sample(4, 1, 2));
                let d = t.hadamard(q, w);
                t.sum(d)
            },
            sample(4, 1, 6),
        );
    }
}
