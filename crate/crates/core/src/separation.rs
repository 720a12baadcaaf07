//! Latent-dimension sweep on adversarial triples.
//!
//! A GRU reads a triple member's measurement rows and recorded outcomes and
//! answers the final word's outcome as a class in `{0, π}`. A triple counts
//! as inconsistent when any of its three answered transcripts fails
//! [`consistency_check`]. The oracle row replays the tableau transcript.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::cells::{Cell, CellKind, StateVar};
use crate::error::{Error, Result};
use crate::scalar::{rat_int, Backend, Scalar, Unit};
use crate::seq2seq::Adam;
use crate::taskgen::{consistency_check, gen_triples, AdversarialTriple, TaskInstance};

pub const SEPARATION_HEADER: &str = "latent_dim,cell_kind,inconsistency_rate";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparationConfig {
    pub n: usize,
    pub latent_dims: Vec<usize>,
    pub train_triples: usize,
    pub test_triples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub backend: Backend,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            n: 6,
            latent_dims: vec![4, 8, 16, 40],
            train_triples: 600,
            test_triples: 200,
            epochs: 40,
            batch_size: 32,
            lr: 1e-2,
            seed: 0,
            backend: Backend::Exact,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.latent_dims.is_empty() || self.latent_dims.contains(&0) {
            return Err(Error::InvalidArgument("separation: need n ≥ 2 and positive latent dims".into()));
        }
        if self.train_triples == 0 || self.test_triples == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("separation: counts must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("separation: lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub latent_dim: usize,
    pub cell_kind: String,
    pub inconsistency_rate: f64,
}

/// Per-dimension training diagnostics kept beside the CSV rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimSummary {
    pub latent_dim: usize,
    pub param_count: usize,
    pub final_train_ce: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub config: SeparationConfig,
    pub rows: Vec<SeparationRow>,
    pub summaries: Vec<DimSummary>,
}

pub fn write_separation_csv<W: std::io::Write>(w: W, rows: &[SeparationRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_separation_csv<R: std::io::Read>(r: R) -> Result<Vec<SeparationRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    if header.iter().collect::<Vec<_>>().join(",") != SEPARATION_HEADER {
        return Err(Error::InvalidArgument("separation header does not match the schema".into()));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::InvalidArgument(format!("csv: {e}"))))
        .collect()
}

fn scalar_f64(s: &Scalar) -> f64 {
    match s {
        Scalar::Float(v) => *v,
        Scalar::Exact { value, unit } => {
            let v = num_traits::ToPrimitive::to_f64(value).unwrap_or(f64::NAN);
            if *unit == Unit::Pi { v * std::f64::consts::PI } else { v }
        }
    }
}

/// `sign(x) ln(1 + |x|)` keeps the large suffix scales in range.
fn squash(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Per-step inputs `[row ; outcome/π ; is_query]`; the last step's outcome is
/// hidden.
pub fn features(inst: &TaskInstance) -> Vec<DVector<f64>> {
    let last = inst.transcript.len() - 1;
    inst.transcript
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut v: Vec<f64> = r.vector.iter().map(|s| squash(scalar_f64(s))).collect();
            let query = i == last;
            v.push(if query { 0.0 } else { scalar_f64(&r.outcome) / std::f64::consts::PI });
            v.push(if query { 1.0 } else { 0.0 });
            DVector::from_vec(v)
        })
        .collect()
}

/// Class of the final forced outcome: 0 for phase 0, 1 for phase π.
pub fn label(inst: &TaskInstance) -> Option<usize> {
    let r = inst.transcript.last()?;
    if !r.deterministic {
        return None;
    }
    let phase = scalar_f64(&r.outcome).rem_euclid(2.0 * std::f64::consts::PI);
    let d0 = phase.min(2.0 * std::f64::consts::PI - phase);
    Some(if d0 < 1e-6 { 0 } else { 1 })
}

fn answer(inst: &TaskInstance, class: usize) -> Vec<Scalar> {
    let mut out = inst.outcomes();
    let last = out.len() - 1;
    out[last] = match inst.backend {
        Backend::Exact => Scalar::exact(rat_int(class as i64), Unit::Pi),
        Backend::Float => Scalar::Float(class as f64 * std::f64::consts::PI),
    };
    out
}

/// Fraction of triples with at least one inconsistent member under `respond`.
pub fn inconsistency_rate<F>(triples: &[AdversarialTriple], respond: F) -> Result<f64>
where
    F: Fn(&TaskInstance) -> Result<Vec<Scalar>> + Sync,
{
    let bad: Vec<bool> = triples
        .par_iter()
        .map(|t| -> Result<bool> {
            for inst in &t.instances {
                if !consistency_check(inst, &respond(inst)?)?.consistent {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect::<Result<_>>()?;
    Ok(bad.iter().filter(|b| **b).count() as f64 / triples.len().max(1) as f64)
}

/// GRU over the feature sequence with a two-class head on the final state.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleClassifier {
    pub cell: Cell,
    pub head_w: DMatrix<f64>,
    pub head_b: DMatrix<f64>,
}

impl TripleClassifier {
    pub fn new(latent_dim: usize, input_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = Cell::new(CellKind::Gru, latent_dim, input_dim, &mut rng)?;
        let s = (6.0 / (latent_dim + 2) as f64).sqrt();
        let head_w = DMatrix::from_fn(2, latent_dim, |_, _| rand::Rng::random_range(&mut rng, -s..s));
        Ok(Self { cell, head_w, head_b: DMatrix::zeros(2, 1) })
    }

    fn params(&self) -> Vec<DMatrix<f64>> {
        let mut p = self.cell.params.clone();
        p.push(self.head_w.clone());
        p.push(self.head_b.clone());
        p
    }

    fn set_params(&mut self, mut p: Vec<DMatrix<f64>>) {
        self.head_b = p.pop().expect("head bias");
        self.head_w = p.pop().expect("head weights");
        self.cell.params = p;
    }

    /// Loss (or logits when `target` is `None`) and gradients for one sequence.
    fn run(&self, xs: &[DVector<f64>], target: Option<usize>) -> Result<(f64, DVector<f64>, Vec<DMatrix<f64>>)> {
        let mut tape = Tape::new();
        let bound = self.cell.bind(&mut tape)?;
        let hw = tape.leaf(self.head_w.clone());
        let hb = tape.leaf(self.head_b.clone());
        let mut state = self.cell.initial_state(&mut tape, &DVector::zeros(self.cell.n));
        for x in xs {
            let xv = tape.leaf(DMatrix::from_column_slice(x.len(), 1, x.as_slice()));
            state = self.cell.step(&mut tape, &bound, state, xv)?.0;
        }
        let StateVar::Hidden(h) = state else {
            return Err(Error::InvalidArgument("classifier cell must carry a hidden vector".into()));
        };
        let logits = tape.matmul(hw, h);
        let logits = tape.add(logits, hb);
        let lv = DVector::from_column_slice(tape.value(logits).as_slice());
        let Some(t) = target else {
            return Ok((0.0, lv, vec![]));
        };
        let ce = tape.softmax_ce(logits, t);
        let loss = tape.value(ce)[(0, 0)];
        let g = tape.backward(ce);
        let mut vars = bound.params.clone();
        vars.push(hw);
        vars.push(hb);
        let grads = vars.iter().zip(self.params()).map(|(v, p)| g.wrt(*v, p.shape())).collect();
        Ok((loss, lv, grads))
    }

    pub fn predict(&self, inst: &TaskInstance) -> Result<usize> {
        let (_, l, _) = self.run(&features(inst), None)?;
        Ok(if l[1] > l[0] { 1 } else { 0 })
    }

    /// Adam on the mean batch cross entropy; returns the last epoch's mean loss.
    pub fn train(&mut self, data: &[(Vec<DVector<f64>>, usize)], cfg: &SeparationConfig, seed: u64) -> Result<f64> {
        let shapes: Vec<_> = self.params().iter().map(|p| p.shape()).collect();
        let mut adam = Adam::new(&shapes, cfg.lr, 0.9, 0.999, 1e-7);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut last = f64::NAN;
        for epoch in 0..cfg.epochs {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(epoch as u64 + 1);
            order.shuffle(&mut r);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let parts: Vec<Result<(f64, DVector<f64>, Vec<DMatrix<f64>>)>> =
                    chunk.par_iter().map(|&i| self.run(&data[i].0, Some(data[i].1))).collect();
                let mut acc: Option<Vec<DMatrix<f64>>> = None;
                for p in parts {
                    let (l, _, g) = p?;
                    total += l;
                    match &mut acc {
                        Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                        None => acc = Some(g),
                    }
                }
                let scale = 1.0 / chunk.len() as f64;
                let grads: Vec<_> = acc.unwrap_or_default().into_iter().map(|g| g * scale).collect();
                let mut p = self.params();
                adam.step(&mut p, &grads);
                self.set_params(p);
            }
            last = total / data.len().max(1) as f64;
            if !last.is_finite() {
                return Err(Error::Divergence(format!("classifier loss at epoch {epoch}")));
            }
        }
        Ok(last)
    }
}

/// Labeled sequences from the two graph members of each triple.
pub fn training_data(triples: &[AdversarialTriple]) -> Vec<(Vec<DVector<f64>>, usize)> {
    triples
        .iter()
        .flat_map(|t| t.instances[1..].iter().filter_map(|i| label(i).map(|l| (features(i), l))))
        .collect()
}

/// Runs the sweep: the oracle row first, then one GRU row per latent dim.
pub fn run_separation(cfg: &SeparationConfig) -> Result<SeparationReport> {
    cfg.validate()?;
    let train = gen_triples(cfg.n, cfg.backend, cfg.train_triples, cfg.seed, 0)?;
    let test = gen_triples(cfg.n, cfg.backend, cfg.test_triples, cfg.seed, cfg.train_triples)?;
    let data = training_data(&train);
    let input_dim = 2 * cfg.n + 2;
    let mut rows = vec![SeparationRow {
        latent_dim: cfg.n,
        cell_kind: CellKind::Crnn.as_str().to_string(),
        inconsistency_rate: inconsistency_rate(&test, |i| Ok(i.outcomes()))?,
    }];
    let mut summaries = vec![];
    for &d in &cfg.latent_dims {
        let seed = cfg.seed ^ ((d as u64) << 32);
        let mut clf = TripleClassifier::new(d, input_dim, seed)?;
        let final_train_ce = clf.train(&data, cfg, seed)?;
        let rate = inconsistency_rate(&test, |i| Ok(answer(i, clf.predict(i)?)))?;
        let labeled: Vec<_> = training_data(&test);
        let correct = labeled
            .iter()
            .filter(|(xs, l)| clf.run(xs, None).map(|(_, lg, _)| (lg[1] > lg[0]) as usize == *l).unwrap_or(false))
            .count();
        rows.push(SeparationRow { latent_dim: d, cell_kind: CellKind::Gru.as_str().to_string(), inconsistency_rate: rate });
        summaries.push(DimSummary {
            latent_dim: d,
            param_count: clf.cell.param_count() + clf.head_w.len() + clf.head_b.len(),
            final_train_ce,
            test_accuracy: correct as f64 / labeled.len().max(1) as f64,
        });
    }
    Ok(SeparationReport { config: cfg.clone(), rows, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SeparationConfig {
        SeparationConfig {
            n: 3,
            latent_dims: vec![2],
            train_triples: 20,
            test_triples: 10,
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        }
    }

    #[test]
    fn oracle_row_is_zero_and_flipped_answers_fail() {
        let t = gen_triples(3, Backend::Exact, 10, 5, 0).unwrap();
        assert_eq!(inconsistency_rate(&t, |i| Ok(i.outcomes())).unwrap(), 0.0);
        // Any constant answer fails one graph member of every triple.
        for c in 0..2 {
            assert_eq!(inconsistency_rate(&t, |i| Ok(answer(i, c))).unwrap(), 1.0);
        }
        let flipped = |i: &TaskInstance| Ok(answer(i, 1 - label(i).unwrap_or(0)));
        assert_eq!(inconsistency_rate(&t, flipped).unwrap(), 1.0);
    }

    #[test]
    fn labels_and_features_have_the_expected_shape() {
        let t = gen_triples(3, Backend::Float, 4, 2, 0).unwrap();
        for tr in &t {
            let (a, b) = (label(&tr.instances[1]).unwrap(), label(&tr.instances[2]).unwrap());
            assert_eq!(a + b, 1);
            let f = features(&tr.instances[1]);
            assert_eq!(f.len(), 3 + 2);
            assert!(f.iter().all(|x| x.len() == 8));
            assert_eq!(f.last().unwrap()[7], 1.0);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_csv_round_trips() {
        let a = run_separation(&small()).unwrap();
        let b = run_separation(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows[0].inconsistency_rate, 0.0);
        let mut buf = vec![];
        write_separation_csv(&mut buf, &a.rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(SEPARATION_HEADER));
        assert_eq!(read_separation_csv(buf.as_slice()).unwrap(), a.rows);
    }

    #[test]
    fn training_lowers_the_loss() {
        let t = gen_triples(3, Backend::Float, 30, 8, 0).unwrap();
        let data = training_data(&t);
        let cfg = SeparationConfig { epochs: 1, lr: 1e-2, ..small() };
        let mut clf = TripleClassifier::new(8, 8, 1).unwrap();
        let before: f64 = data.iter().map(|(x, l)| clf.run(x, Some(*l)).unwrap().0).sum();
        clf.train(&data, &SeparationConfig { epochs: 30, ..cfg }, 1).unwrap();
        let after: f64 = data.iter().map(|(x, l)| clf.run(x, Some(*l)).unwrap().0).sum();
        assert!(after < before, "{after} !< {before}");
    }
}
