//! Encoder-decoder translation on the recurrent cells.
//!
//! Encoder and decoder share one cell. The encoder reads the source followed
//! by `[End]`; the decoder starts from the encoder's final state, reads
//! `[Begin]` and the gold target (teacher forcing), and a dense head maps each
//! cell output to vocabulary logits.

pub mod corpus;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::{matched_width, param_count, tensors_from_blob, tensors_to_blob, Cell, CellKind, CheckpointManifest};
use crate::error::{Error, Result};
use corpus::{tokenize, Pair};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BEGIN: usize = 2;
pub const END: usize = 3;
pub const SPECIALS: [&str; 4] = ["[Pad]", "[Unk]", "[Begin]", "[End]"];
pub const MAX_VOCAB: usize = 5000;
pub const DECODE_CAP: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Frequency-ranked ids after the specials, ties broken by first
    /// occurrence, capped at [`MAX_VOCAB`] ordinary words.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        for s in sentences {
            for t in tokenize(s) {
                let next = counts.len();
                counts.entry(t).or_insert((0, next)).0 += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidArgument("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        let tokens: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(MAX_VOCAB).map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    pub fn from_pairs(pairs: &[Pair]) -> Result<Self> {
        Self::build(pairs.iter().flat_map(|p| [p.source.as_str(), p.target.as_str()]))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, s: &str) -> Vec<usize> {
        tokenize(s).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined tokens, stopping at `[End]` and dropping `[Begin]`/`[Pad]`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != END)
            .filter(|&&i| i != BEGIN && i != PAD)
            .map(|&i| self.tokens.get(i).map_or(SPECIALS[UNK], String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A tokenized pair framed for teacher forcing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<usize>,
    pub decoder_in: Vec<usize>,
    pub decoder_out: Vec<usize>,
}

impl Example {
    pub fn new(vocab: &Vocabulary, pair: &Pair) -> Self {
        let mut source = vocab.encode(&pair.source);
        source.push(END);
        let tgt = vocab.encode(&pair.target);
        let decoder_in = std::iter::once(BEGIN).chain(tgt.iter().copied()).collect();
        let decoder_out = tgt.into_iter().chain(std::iter::once(END)).collect();
        Self { source, decoder_in, decoder_out }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Use only the first `max_pairs` pairs of the corpus.
    pub max_pairs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 10,
            epochs: 80,
            batch_size: 64,
            train_fraction: 0.8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            seed: 0,
            max_pairs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if self.n == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("n, epochs and batch_size must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if !(self.lr > 0.0 && self.eps > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer constants out of range");
        }
        if self.max_pairs == Some(0) {
            return bad("max_pairs must be positive");
        }
        Ok(())
    }
}

/// Bias-corrected Adam over a list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect();
        Self { lr, beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    pub fn from_config(shapes: &[(usize, usize)], c: &TrainConfig) -> Self {
        Self::new(shapes, c.lr, c.beta1, c.beta2, c.eps)
    }

    pub fn step(&mut self, params: &mut [DMatrix<f64>], grads: &[DMatrix<f64>]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    pub vocab: Vocabulary,
    pub cell: Cell,
    /// `V × m`, one row per token.
    pub embedding: DMatrix<f64>,
    /// `V × output_dim`.
    pub head_w: DMatrix<f64>,
    pub head_b: DMatrix<f64>,
    /// Frozen initial latent.
    pub lambda0: DVector<f64>,
    /// Model dimension `n` the cell widths were matched at.
    pub model_n: usize,
    pub seed: u64,
}

/// Per-example recording on a tape.
struct Recorded {
    params: Vec<Var>,
    emb: Vec<(usize, Var)>,
    ce: Vec<Var>,
    logits: Vec<Var>,
}

impl Seq2Seq {
    /// Lattice cells get `n` hidden and `n` input modes; classical cells get
    /// the hidden width matching the CRNN count at the same `n`.
    pub fn new(kind: CellKind, n: usize, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = matched_width(kind, n, n);
        let cell = Cell::new(kind, hidden, n, &mut rng)?;
        let v = vocab.len();
        let scale = 1.0 / (n as f64).sqrt();
        let embedding = DMatrix::from_fn(v, n, |_, _| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
        let out = cell.output_dim();
        let limit = (6.0 / (v + out) as f64).sqrt();
        let head_w = DMatrix::from_fn(v, out, |_, _| {
            let u: f64 = rand::Rng::random(&mut rng);
            limit * (2.0 * u - 1.0)
        });
        let lambda0 = DVector::from_fn(hidden, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
        Ok(Self { vocab, cell, embedding, head_w, head_b: DMatrix::zeros(v, 1), lambda0, model_n: n, seed })
    }

    /// Trainable scalars of the recurrent cell.
    pub fn param_count(&self) -> usize {
        debug_assert_eq!(self.cell.param_count(), param_count(self.cell.kind, self.cell.n, self.cell.m));
        self.cell.param_count()
    }

    pub fn trainable(&self) -> Vec<DMatrix<f64>> {
        let mut out = vec![self.embedding.clone()];
        out.extend(self.cell.params.iter().cloned());
        out.push(self.head_w.clone());
        out.push(self.head_b.clone());
        out
    }

    pub fn trainable_shapes(&self) -> Vec<(usize, usize)> {
        self.trainable().iter().map(|t| t.shape()).collect()
    }

    pub fn set_trainable(&mut self, mut ts: Vec<DMatrix<f64>>) {
        assert!(ts.len() >= 4, "trainable tensor count");
        self.head_b = ts.pop().expect("head bias");
        self.head_w = ts.pop().expect("head weights");
        self.cell.params = ts.split_off(1);
        self.embedding = ts.pop().expect("embedding");
    }

    fn record(&self, tape: &mut Tape, ex: &Example) -> Result<Recorded> {
        let bound = self.cell.bind(tape)?;
        let head_w = tape.leaf(self.head_w.clone());
        let head_b = tape.leaf(self.head_b.clone());
        let mut emb: Vec<(usize, Var)> = vec![];
        let mut lookup = |tape: &mut Tape, tok: usize| -> Var {
            if let Some(&(_, v)) = emb.iter().find(|(t, _)| *t == tok) {
                return v;
            }
            let v = tape.leaf(DMatrix::from_iterator(self.embedding.ncols(), 1, self.embedding.row(tok).iter().copied()));
            emb.push((tok, v));
            v
        };
        let mut state = self.cell.initial_state(tape, &self.lambda0);
        for &tok in &ex.source {
            let x = lookup(tape, tok);
            state = self.cell.step(tape, &bound, state, x)?.0;
        }
        let mut ce = vec![];
        let mut logits = vec![];
        for (&tin, &tout) in ex.decoder_in.iter().zip(&ex.decoder_out) {
            let x = lookup(tape, tin);
            let (s2, y) = self.cell.step(tape, &bound, state, x)?;
            state = s2;
            let l = tape.matmul(head_w, y);
            let l = tape.add(l, head_b);
            ce.push(tape.softmax_ce(l, tout));
            logits.push(l);
        }
        let mut params = vec![];
        params.extend(bound.params.iter().copied());
        params.push(head_w);
        params.push(head_b);
        Ok(Recorded { params, emb, ce, logits })
    }

    /// Summed cross entropy, token count and gradients of the sum.
    fn example_grads(&self, ex: &Example) -> Result<(f64, usize, Vec<DMatrix<f64>>)> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, ex)?;
        let total = tape.add_all(&rec.ce);
        let loss = tape.value(total)[(0, 0)];
        let g = tape.backward(total);
        let mut grads = Vec::with_capacity(rec.params.len() + 1);
        let mut ge = DMatrix::zeros(self.embedding.nrows(), self.embedding.ncols());
        for &(tok, v) in &rec.emb {
            if let Some(d) = g.get(v) {
                let mut row = ge.row_mut(tok);
                row += d.transpose();
            }
        }
        grads.push(ge);
        let shapes = self.trainable_shapes();
        for (v, s) in rec.params.iter().zip(&shapes[1..]) {
            grads.push(g.wrt(*v, *s));
        }
        Ok((loss, rec.ce.len(), grads))
    }

    /// Mean token cross entropy over `batch` and its gradient, reduced in
    /// example order.
    pub fn loss_and_grads(&self, batch: &[Example]) -> Result<(f64, usize, Vec<DMatrix<f64>>)> {
        let parts: Vec<Result<(f64, usize, Vec<DMatrix<f64>>)>> =
            batch.par_iter().map(|ex| self.example_grads(ex)).collect();
        let mut loss = 0.0;
        let mut count = 0;
        let mut acc: Option<Vec<DMatrix<f64>>> = None;
        for p in parts {
            let (l, c, g) = p?;
            loss += l;
            count += c;
            match &mut acc {
                Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                None => acc = Some(g),
            }
        }
        let count = count.max(1);
        let scale = 1.0 / count as f64;
        let grads = acc.unwrap_or_default().into_iter().map(|g| g * scale).collect();
        Ok((loss * scale, count, grads))
    }

    /// Mean token cross entropy and the per-position logits.
    pub fn forward_loss(&self, batch: &[Example]) -> Result<(f64, Vec<Vec<DVector<f64>>>)> {
        let parts: Vec<Result<(f64, usize, Vec<DVector<f64>>)>> = batch
            .par_iter()
            .map(|ex| {
                let mut tape = Tape::new();
                let rec = self.record(&mut tape, ex)?;
                let loss = rec.ce.iter().map(|&v| tape.value(v)[(0, 0)]).sum();
                let logits = rec.logits.iter().map(|&v| DVector::from_column_slice(tape.value(v).as_slice())).collect();
                Ok((loss, rec.ce.len(), logits))
            })
            .collect();
        let (mut loss, mut count, mut all) = (0.0, 0usize, vec![]);
        for p in parts {
            let (l, c, lg) = p?;
            loss += l;
            count += c;
            all.push(lg);
        }
        Ok((loss / count.max(1) as f64, all))
    }

    pub fn cross_entropy(&self, examples: &[Example]) -> Result<f64> {
        Ok(self.forward_loss(examples)?.0)
    }

    /// Argmax decoding until `[End]` or [`DECODE_CAP`] tokens; each produced
    /// token's embedding is the next input.
    pub fn greedy_decode(&self, source: &[usize]) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let bound = self.cell.bind(&mut tape)?;
        let head_w = tape.leaf(self.head_w.clone());
        let head_b = tape.leaf(self.head_b.clone());
        let emb = |tape: &mut Tape, tok: usize| tape.leaf(DMatrix::from_iterator(self.embedding.ncols(), 1, self.embedding.row(tok).iter().copied()));
        let mut state = self.cell.initial_state(&mut tape, &self.lambda0);
        for &tok in source.iter().chain(std::iter::once(&END)) {
            let x = emb(&mut tape, tok);
            state = self.cell.step(&mut tape, &bound, state, x)?.0;
        }
        let mut out = vec![];
        let mut prev = BEGIN;
        while out.len() < DECODE_CAP {
            let x = emb(&mut tape, prev);
            let (s2, y) = self.cell.step(&mut tape, &bound, state, x)?;
            state = s2;
            let l = tape.matmul(head_w, y);
            let l = tape.add(l, head_b);
            let v = tape.value(l);
            let tok = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a))).unwrap_or(END);
            if tok == END {
                break;
            }
            out.push(tok);
            prev = tok;
        }
        Ok(out)
    }
}

/// Seeded shuffle then an 80/20-style cut.
pub fn split_pairs(pairs: &[Pair], train_fraction: f64, seed: u64) -> (Vec<Pair>, Vec<Pair>) {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001));
    let cut = ((pairs.len() as f64) * train_fraction).round() as usize;
    let cut = cut.clamp(1.min(pairs.len()), pairs.len().saturating_sub(1).max(1));
    let pick = |r: &[usize]| r.iter().map(|&i| pairs[i].clone()).collect();
    (pick(&idx[..cut]), pick(&idx[cut..]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub cell_kind: CellKind,
    pub n: usize,
    pub param_count: usize,
    pub cross_entropy: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "epoch,split,cell_kind,n,param_count,cross_entropy,seed";

pub fn write_metrics_csv<W: std::io::Write>(w: W, records: &[MetricRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(r: R) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(Error::InvalidArgument("metrics header does not match the schema".into()));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::InvalidArgument(format!("csv: {e}"))))
        .collect()
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(epoch as u64 + 1);
    r
}

/// Training state that survives a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Seq2Seq,
    pub adam: Adam,
    /// Epochs completed.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: Seq2Seq, cfg: &TrainConfig) -> Self {
        let adam = Adam::from_config(&model.trainable_shapes(), cfg);
        Self { model, adam, epoch: 0 }
    }

    /// One epoch of minibatch Adam. Returns the token-weighted mean training
    /// loss seen during the epoch.
    pub fn run_epoch(&mut self, train: &[Example], cfg: &TrainConfig) -> Result<f64> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, self.epoch));
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, c, grads) = self.model.loss_and_grads(&batch)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::Divergence(format!(
                    "non-finite loss or gradient at epoch {} ({} cell, n = {})",
                    self.epoch + 1,
                    self.model.cell.kind,
                    self.model.model_n
                )));
            }
            let mut params = self.model.trainable();
            self.adam.step(&mut params, &grads);
            self.model.set_trainable(params);
            total += loss * c as f64;
            count += c;
        }
        self.epoch += 1;
        Ok(total / count.max(1) as f64)
    }

    /// Runs until `cfg.epochs`, logging train and test cross entropy per
    /// epoch. `on_epoch` sees the state after each epoch.
    pub fn train(
        &mut self,
        train: &[Example],
        test: &[Example],
        cfg: &TrainConfig,
        mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
    ) -> Result<Vec<MetricRecord>> {
        let mut out = vec![];
        while self.epoch < cfg.epochs {
            let tr = self.run_epoch(train, cfg)?;
            let te = self.model.cross_entropy(test)?;
            if !te.is_finite() {
                return Err(Error::Divergence(format!("non-finite test loss at epoch {}", self.epoch)));
            }
            let rec = |split: &str, ce: f64| MetricRecord {
                epoch: self.epoch,
                split: split.into(),
                cell_kind: self.model.cell.kind,
                n: self.model.model_n,
                param_count: self.model.param_count(),
                cross_entropy: ce,
                seed: cfg.seed,
            };
            out.push(rec("train", tr));
            out.push(rec("test", te));
            on_epoch(self)?;
        }
        Ok(out)
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let m = &self.model;
        let mut names: Vec<String> = vec!["embedding".into()];
        names.extend((0..m.cell.params.len()).map(|i| format!("cell.param{i}")));
        names.extend(["head.w".into(), "head.b".into()]);
        names.extend((0..m.cell.consts.len()).map(|i| format!("cell.const{i}")));
        names.push("lambda0".into());
        let k = m.trainable().len();
        names.extend((0..k).map(|i| format!("adam.m{i}")));
        names.extend((0..k).map(|i| format!("adam.v{i}")));
        let mut tensors = m.trainable();
        tensors.extend(m.cell.consts.iter().cloned());
        tensors.push(DMatrix::from_column_slice(m.lambda0.len(), 1, m.lambda0.as_slice()));
        tensors.extend(self.adam.m.iter().cloned());
        tensors.extend(self.adam.v.iter().cloned());
        let manifest = CheckpointManifest {
            cell_kind: m.cell.kind,
            n: m.cell.n,
            m: m.cell.m,
            names,
            shapes: tensors.iter().map(|t| t.shape()).collect(),
            seed: m.seed,
            extra: serde_json::json!({
                "model_n": m.model_n,
                "epoch": self.epoch,
                "guard": m.cell.guard,
                "adam": {"t": self.adam.t, "lr": self.adam.lr, "beta1": self.adam.beta1,
                         "beta2": self.adam.beta2, "eps": self.adam.eps},
                "vocab": m.vocab.tokens(),
            }),
        };
        fs::write(dir.join(format!("{stem}.bin")), tensors_to_blob(&tensors))?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let blob = fs::read(dir.join(format!("{stem}.bin")))?;
        let mut ts = tensors_from_blob(&blob, &manifest.shapes)?.into_iter();
        let bad = |w: &str| Error::InvalidArgument(format!("checkpoint: {w}"));
        let x = &manifest.extra;
        let get_u = |k: &str| x[k].as_u64().ok_or_else(|| bad(k));
        let vocab: Vec<String> = serde_json::from_value(x["vocab"].clone())?;
        let adam_cfg = &x["adam"];
        let f = |k: &str| adam_cfg[k].as_f64().ok_or_else(|| bad(k));
        let kind = manifest.cell_kind;
        let n_params = match kind {
            CellKind::Crnn | CellKind::Gaussian => 3,
            CellKind::Gru => 6,
            CellKind::Ornn => 2,
        };
        let n_consts = if kind.is_lattice() { 4 } else { 0 };
        let mut take = |k: usize| -> Result<Vec<DMatrix<f64>>> {
            let v: Vec<DMatrix<f64>> = ts.by_ref().take(k).collect();
            if v.len() == k { Ok(v) } else { Err(bad("too few tensors")) }
        };
        let trainable = take(n_params + 3)?;
        let consts = take(n_consts)?;
        let lambda0 = take(1)?.remove(0);
        let am = take(n_params + 3)?;
        let av = take(n_params + 3)?;
        let cell = Cell {
            kind,
            n: manifest.n,
            m: manifest.m,
            params: vec![],
            consts,
            guard: x["guard"].as_f64().ok_or_else(|| bad("guard"))?,
        };
        let mut model = Seq2Seq {
            vocab: Vocabulary::from_tokens(vocab),
            cell,
            embedding: DMatrix::zeros(0, 0),
            head_w: DMatrix::zeros(0, 0),
            head_b: DMatrix::zeros(0, 0),
            lambda0: DVector::from_column_slice(lambda0.as_slice()),
            model_n: get_u("model_n")? as usize,
            seed: manifest.seed,
        };
        model.set_trainable(trainable);
        let adam = Adam {
            lr: f("lr")?,
            beta1: f("beta1")?,
            beta2: f("beta2")?,
            eps: f("eps")?,
            t: adam_cfg["t"].as_u64().ok_or_else(|| bad("adam.t"))?,
            m: am,
            v: av,
        };
        Ok(Self { model, adam, epoch: get_u("epoch")? as usize })
    }
}

/// Frames a split into examples.
pub fn examples(vocab: &Vocabulary, pairs: &[Pair]) -> Vec<Example> {
    pairs.iter().map(|p| Example::new(vocab, p)).collect()
}

/// A corpus split and framed against the training vocabulary.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Truncates to `max_pairs`, splits under `cfg.seed` and builds the vocabulary
/// from the training side. Evaluation calls this too, so both see one split.
pub fn prepare(pairs: &[Pair], cfg: &TrainConfig) -> Result<Prepared> {
    cfg.validate()?;
    let pairs = &pairs[..cfg.max_pairs.unwrap_or(pairs.len()).min(pairs.len())];
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument("corpus needs at least two pairs".into()));
    }
    let (tr, te) = split_pairs(pairs, cfg.train_fraction, cfg.seed);
    let vocab = Vocabulary::from_pairs(&tr)?;
    Ok(Prepared { train: examples(&vocab, &tr), test: examples(&vocab, &te), vocab })
}

#[cfg(test)]
mod tests {
    use super::corpus::synthetic_corpus;
    use super::*;

    fn tiny(kind: CellKind, n: usize, pairs: usize) -> (Seq2Seq, Vec<Example>) {
        let corpus = synthetic_corpus(3, pairs);
        let vocab = Vocabulary::from_pairs(&corpus).unwrap();
        let model = Seq2Seq::new(kind, n, vocab.clone(), 9).unwrap();
        (model, examples(&vocab, &corpus))
    }

    #[test]
    fn vocabulary_ranks_and_caps() {
        // a and b tie on count; b occurs first.
        let v = Vocabulary::build(["b a", "a c", "b"]).unwrap();
        assert_eq!(&v.tokens()[..4], SPECIALS.map(String::from).as_slice());
        assert_eq!(&v.tokens()[4..], ["b", "a", "c"]);
        assert_eq!(v.encode("a zzz"), [5, UNK]);
        assert_eq!(v.decode(&v.encode("c b a")), "c b a");
        assert!(Vocabulary::build(["  "]).is_err());
        let many: Vec<String> = (0..MAX_VOCAB + 3).map(|i| format!("w{i}")).collect();
        let big = Vocabulary::build(many.iter().map(String::as_str)).unwrap();
        assert_eq!(big.len(), MAX_VOCAB + 4);
        assert_eq!(big.id(&format!("w{}", MAX_VOCAB + 1)), UNK);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let (mut m, ex) = tiny(CellKind::Gru, 3, 2);
        m.head_w.fill(0.0);
        let (loss, logits) = m.forward_loss(&ex).unwrap();
        assert!((loss - (m.vocab.len() as f64).ln()).abs() < 1e-12);
        for l in logits.iter().flatten() {
            let p = l.map(|x| x.exp());
            assert!((p.sum() / p.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut a = Adam::new(&[(1, 2)], 1e-3, 0.9, 0.999, 1e-7);
        let mut p = vec![DMatrix::from_row_slice(1, 2, &[0.5, -1.0])];
        a.step(&mut p, &[DMatrix::from_element(1, 2, 1.0)]);
        assert!((p[0][0] - (0.5 - 1e-3)).abs() < 1e-9);
        let before = p.clone();
        let mut b = Adam::new(&[(1, 2)], 1e-3, 0.9, 0.999, 1e-7);
        b.step(&mut p, &[DMatrix::zeros(1, 2)]);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut a = Adam::new(&[(3, 1)], 1e-3, 0.9, 0.999, 1e-7);
        let mut p = vec![DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5])];
        for _ in 0..5000 {
            let g = p[0].clone() * 2.0;
            a.step(&mut p, &[g]);
        }
        assert!(p[0].norm() <= 1e-3, "{}", p[0].norm());
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        for kind in CellKind::ALL {
            let (model, ex) = tiny(kind, 3, 2);
            let (_, _, g) = model.loss_and_grads(&ex).unwrap();
            let base = model.trainable();
            let h = 1e-5;
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for (ti, t) in base.iter().enumerate() {
                // Spot-check a spread of entries per tensor.
                for idx in (0..t.len()).step_by(t.len().div_ceil(12)) {
                    let eval = |d: f64| {
                        let mut ps = base.clone();
                        ps[ti][idx] += d;
                        let mut m = model.clone();
                        m.set_trainable(ps);
                        m.cross_entropy(&ex).unwrap()
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    num += (fd - g[ti][idx]).powi(2);
                    den = den.max(fd.abs()).max(g[ti][idx].abs());
                }
            }
            let rel = num.sqrt() / den;
            assert!(rel <= 1e-4, "{kind}: {rel:e}");
        }
    }

    #[test]
    fn loss_decreases_on_toy_corpus() {
        for kind in CellKind::ALL {
            let (model, ex) = tiny(kind, 4, 10);
            let cfg = TrainConfig { n: 4, batch_size: 10, epochs: 50, seed: 1, ..Default::default() };
            let mut st = TrainState::new(model, &cfg);
            let before = st.model.cross_entropy(&ex).unwrap();
            for _ in 0..50 {
                st.run_epoch(&ex, &cfg).unwrap();
            }
            let after = st.model.cross_entropy(&ex).unwrap();
            assert!(after < before, "{kind}: {before} -> {after}");
        }
    }

    #[test]
    fn checkpoint_resume_reproduces_next_epoch() {
        let (model, ex) = tiny(CellKind::Crnn, 3, 6);
        let cfg = TrainConfig { n: 3, batch_size: 4, epochs: 2, seed: 5, ..Default::default() };
        let mut st = TrainState::new(model, &cfg);
        st.run_epoch(&ex, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        st.save(dir.path(), "ckpt").unwrap();
        let mut back = TrainState::load(dir.path(), "ckpt").unwrap();
        assert_eq!(back, st);
        let a = st.run_epoch(&ex, &cfg).unwrap();
        let b = back.run_epoch(&ex, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn overfit_echo_pair_decodes_exactly() {
        let pair = Pair { source: "uno dos tres".into(), target: "uno dos tres".into() };
        let vocab = Vocabulary::from_pairs(std::slice::from_ref(&pair)).unwrap();
        let ex = examples(&vocab, std::slice::from_ref(&pair));
        let model = Seq2Seq::new(CellKind::Gru, 6, vocab.clone(), 2).unwrap();
        let cfg = TrainConfig { n: 6, batch_size: 1, lr: 1e-2, ..Default::default() };
        let mut st = TrainState::new(model, &cfg);
        for _ in 0..300 {
            st.run_epoch(&ex, &cfg).unwrap();
        }
        let out = st.model.greedy_decode(&vocab.encode(&pair.source)).unwrap();
        assert_eq!(vocab.decode(&out), "uno dos tres");
        assert_eq!(st.model.greedy_decode(&vocab.encode(&pair.source)).unwrap(), out);
        assert!(st.model.greedy_decode(&[]).unwrap().len() <= DECODE_CAP);
    }

    #[test]
    fn metrics_csv_schema() {
        let r = MetricRecord {
            epoch: 1,
            split: "test".into(),
            cell_kind: CellKind::Crnn,
            n: 10,
            param_count: 600,
            cross_entropy: 1.25,
            seed: 3,
        };
        let mut buf = vec![];
        write_metrics_csv(&mut buf, std::slice::from_ref(&r)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(METRICS_HEADER));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), vec![r]);
    }

    #[test]
    fn matched_models_share_param_counts() {
        let vocab = Vocabulary::build(["a b"]).unwrap();
        let c = Seq2Seq::new(CellKind::Crnn, 26, vocab.clone(), 0).unwrap();
        let g = Seq2Seq::new(CellKind::Gaussian, 26, vocab.clone(), 0).unwrap();
        let r = Seq2Seq::new(CellKind::Gru, 26, vocab, 0).unwrap();
        assert_eq!(c.param_count(), g.param_count());
        let rel = (r.param_count() as f64 - c.param_count() as f64).abs() / c.param_count() as f64;
        assert!(rel <= 0.025);
    }
}
