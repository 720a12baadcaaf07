use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crnn_core::pauli::{build_magic_square, verify_magic_square, MagicSquare, VerificationReport};
use crnn_core::separation::{run_separation, write_separation_csv};
use crnn_core::seq2seq::corpus::{bundled_corpus, load_tsv, Pair};
use crnn_core::seq2seq::{prepare, read_metrics_csv, write_metrics_csv, Prepared, Seq2Seq, TrainState};
use crnn_core::taskgen::{
    consistency_check, gen_dataset, gen_triples, read_jsonl, write_jsonl, GenConfig, InitState, TaskInstance,
};
use crnn_core::{Backend, Coeff, Rational};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, EvalArgs, GenTaskArgs, SeparationArgs, TrainArgs, VerifyArgs};

const CHECKPOINT_STEM: &str = "checkpoint";
const RUN_FILE: &str = "run.json";
const METRICS_FILE: &str = "metrics.csv";

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::VerifyContextuality(a) => verify(cli, a, &cfg),
        Command::GenTask(a) => gen_task(cli, a, cfg),
        Command::Train(a) => train(cli, a, cfg),
        Command::Separation(a) => separation(cli, a, cfg),
        Command::Eval(a) => eval(cli, a),
    }
}

fn emit<T: Serialize>(cli: &Cli, report: &T, human: impl FnOnce() -> String) -> Result<(), CliError> {
    if cli.human {
        print!("{}", human());
    } else {
        println!("{}", serde_json::to_string_pretty(report)?);
    }
    Ok(())
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> Option<PathBuf> {
    cli.out.clone().or_else(|| cfg.io.out.clone())
}

fn require_out(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let d = out_dir(cli, cfg).ok_or_else(|| CliError::Usage("--out (or io.out) is required".into()))?;
    fs::create_dir_all(&d)?;
    Ok(d)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        let s: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        s.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

#[derive(Serialize)]
struct SquareCase {
    backend: Backend,
    alpha: String,
    passed: bool,
    classical_assignments: usize,
    failed_lines: Vec<String>,
}

fn square_case<C: Coeff>(alpha: String, mut m: MagicSquare<C>, fault: bool) -> SquareCase {
    if fault {
        m.grid[1][2] = m.grid[1][2].clone().phased(&C::half_turn());
    }
    let r: VerificationReport<C> = verify_magic_square(&m);
    SquareCase {
        backend: C::BACKEND,
        alpha,
        passed: r.passed,
        classical_assignments: r.classical_assignments,
        failed_lines: r.lines.iter().filter(|l| !l.ok).map(|l| l.label.clone()).collect(),
    }
}

fn parse_alpha(s: &str) -> Result<Rational, CliError> {
    let r: Rational = s.trim().parse().map_err(|_| CliError::Usage(format!("cannot parse α `{s}`")))?;
    if r <= Rational::from_integer(0.into()) {
        return Err(CliError::Usage(format!("α must be positive, got `{s}`")));
    }
    Ok(r)
}

fn verify(cli: &Cli, a: &VerifyArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let alphas: Vec<(String, Rational)> =
        a.alphas.iter().map(|s| parse_alpha(s).map(|r| (s.trim().to_string(), r))).collect::<Result<_, _>>()?;
    let backends = match cli.backend {
        Some(b) => vec![b],
        None => vec![Backend::Exact, Backend::Float],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
    let random: Vec<(u32, u32, f64)> = (0..a.random)
        .map(|_| {
            let q = rng.random_range(1..=10u32);
            (rng.random_range(1..=10 * q), q, 10.0 * (1.0 - rng.random::<f64>()))
        })
        .collect();
    let mut cases = vec![];
    for b in &backends {
        match b {
            Backend::Exact => {
                let one = Rational::from_integer(1.into());
                let rand_exact = random.iter().map(|&(p, q, _)| {
                    let r = Rational::new(p.into(), q.into());
                    (r.to_string(), r)
                });
                for (label, r) in alphas.iter().cloned().chain(rand_exact) {
                    cases.push(square_case(label, build_magic_square(&r, &one)?, a.self_test_fault));
                }
            }
            Backend::Float => {
                let fixed = alphas.iter().map(|(l, r)| (l.clone(), Coeff::to_f64(r)));
                let rand_float = random.iter().map(|&(_, _, x)| (format!("{x}"), x));
                for (label, x) in fixed.chain(rand_float) {
                    cases.push(square_case(label, build_magic_square(&x, &1.0)?, a.self_test_fault));
                }
            }
        }
    }
    let passed = cases.iter().all(|c| c.passed);
    let report = json!({ "passed": passed, "cases": cases.len(), "failures": cases.iter().filter(|c| !c.passed).count(),
                         "self_test_fault": a.self_test_fault, "results": cases });
    if let Some(d) = out_dir(cli, cfg) {
        fs::create_dir_all(&d)?;
        fs::write(d.join("contextuality.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    emit(cli, &report, || {
        let rows: Vec<Vec<String>> = cases
            .iter()
            .map(|c| {
                vec![
                    c.backend.to_string(),
                    c.alpha.clone(),
                    if c.passed { "pass".into() } else { "FAIL".into() },
                    c.classical_assignments.to_string(),
                    c.failed_lines.join("; "),
                ]
            })
            .collect();
        table(&["backend", "alpha", "result", "assignments", "failed lines"], &rows)
    })?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Failure("magic-square verification failed".into()))
    }
}

fn gen_task(cli: &Cli, a: &GenTaskArgs, cfg: RunConfig) -> Result<(), CliError> {
    let mut t = cfg.task.clone();
    t.n = a.n.unwrap_or(t.n);
    t.k = a.k.unwrap_or(t.k);
    t.count = a.count.unwrap_or(t.count);
    t.init_state = a.init_state.unwrap_or(t.init_state);
    t.modified |= a.modified;
    t.seed = cli.seed.unwrap_or(t.seed);
    t.backend = cli.backend.unwrap_or(t.backend);
    if t.n < 2 {
        return Err(CliError::Usage("n must be at least 2".into()));
    }
    let out = require_out(cli, &cfg)?;
    let mut redraws = 0;
    let (file, instances, triples) = match a.adversarial_triples {
        Some(count) => {
            if a.k.is_some() || a.modified {
                return Err(CliError::Usage("--k and --modified do not apply to adversarial triples".into()));
            }
            let tr = gen_triples(t.n, t.backend, count, t.seed, 0)?;
            ("triples.jsonl", tr.into_iter().flat_map(|x| x.instances).collect::<Vec<_>>(), Some(count))
        }
        None => {
            if t.backend == Backend::Float && t.init_state == InitState::Gkp {
                return Err(CliError::Usage("GKP initial states need the exact backend".into()));
            }
            let g = GenConfig { n: t.n, k: t.k, init_state: t.init_state, modified: t.modified };
            let (data, k) = gen_dataset(&g, t.backend, t.count, t.seed)?;
            redraws = k;
            ("tasks.jsonl", data, None)
        }
    };
    let mut buf = vec![];
    write_jsonl(&mut buf, &instances)?;
    fs::write(out.join(file), buf)?;
    let forced: usize = instances.iter().map(|i| i.transcript.iter().filter(|r| r.deterministic).count()).sum();
    let total: usize = instances.iter().map(|i| i.transcript.len()).sum();
    let report = json!({
        "file": file, "instances": instances.len(), "triples": triples, "n": t.n,
        "backend": t.backend, "seed": t.seed, "outcomes": total, "deterministic_outcomes": forced,
        "redraws": redraws,
    });
    emit(cli, &report, || {
        format!(
            "wrote {} instances{} to {file}\noutcomes: {total} ({forced} deterministic)\nredraws: {redraws}\n",
            instances.len(),
            triples.map(|c| format!(" in {c} triples")).unwrap_or_default()
        )
    })
}

fn load_pairs(cfg: &RunConfig) -> Result<Vec<Pair>, CliError> {
    Ok(match &cfg.io.corpus {
        Some(p) => load_tsv(p)?,
        None => bundled_corpus(),
    })
}

fn prepared(cfg: &RunConfig) -> Result<Prepared, CliError> {
    Ok(prepare(&load_pairs(cfg)?, &cfg.train_config())?)
}

fn train(cli: &Cli, a: &TrainArgs, cfg: RunConfig) -> Result<(), CliError> {
    let out = require_out(cli, &cfg)?;
    let (run_cfg, mut state, mut metrics) = if a.resume {
        if a.cell.is_some() || a.n.is_some() || a.corpus.is_some() || a.max_pairs.is_some() || cli.seed.is_some() {
            return Err(CliError::Usage("--resume keeps the stored run; only --epochs may change".into()));
        }
        let mut stored = RunConfig::load(&out.join(RUN_FILE))?;
        if let Some(e) = a.epochs {
            stored.train.epochs = e;
        }
        let state = TrainState::load(&out, CHECKPOINT_STEM)?;
        let metrics = read_metrics_csv(fs::File::open(out.join(METRICS_FILE))?)?;
        let metrics: Vec<_> = metrics.into_iter().filter(|r| r.epoch <= state.epoch).collect();
        (stored, state, metrics)
    } else {
        let mut c = cfg;
        c.model.cell_kind = a.cell.unwrap_or(c.model.cell_kind);
        c.model.n = a.n.or(c.model.n);
        if let Some(e) = a.epochs {
            c.train.epochs = e;
        }
        if let Some(s) = cli.seed {
            c.train.seed = s;
        }
        c.io.corpus = a.corpus.clone().or(c.io.corpus);
        c.train.max_pairs = a.max_pairs.or(c.train.max_pairs);
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let tc = c.train_config();
        let p = prepared(&c)?;
        let model = Seq2Seq::new(c.model.cell_kind, tc.n, p.vocab, tc.seed)?;
        (c, TrainState::new(model, &tc), vec![])
    };
    let tc = run_cfg.train_config();
    let p = prepared(&run_cfg)?;
    if p.vocab != state.model.vocab {
        return Err(CliError::Usage("checkpoint vocabulary does not match the configured corpus".into()));
    }
    fs::write(out.join(RUN_FILE), serde_json::to_string_pretty(&run_cfg)? + "\n")?;
    let new = state.train(&p.train, &p.test, &tc, |s| s.save(&out, CHECKPOINT_STEM))?;
    state.save(&out, CHECKPOINT_STEM)?;
    metrics.extend(new);
    let mut buf = vec![];
    write_metrics_csv(&mut buf, &metrics)?;
    fs::write(out.join(METRICS_FILE), buf)?;
    let last = |split: &str| metrics.iter().rev().find(|r| r.split == split).map(|r| r.cross_entropy);
    let report = json!({
        "cell_kind": state.model.cell.kind, "n": tc.n, "param_count": state.model.param_count(),
        "epochs": state.epoch, "seed": tc.seed, "train_pairs": p.train.len(), "test_pairs": p.test.len(),
        "vocab": p.vocab.len(), "final_train_ce": last("train"), "final_test_ce": last("test"),
    });
    emit(cli, &report, || {
        let rows: Vec<Vec<String>> = metrics
            .iter()
            .map(|r| vec![r.epoch.to_string(), r.split.clone(), format!("{:.6}", r.cross_entropy)])
            .collect();
        format!(
            "{} cell, n = {}, {} cell parameters\n{}",
            state.model.cell.kind,
            tc.n,
            state.model.param_count(),
            table(&["epoch", "split", "cross_entropy"], &rows)
        )
    })
}

fn separation(cli: &Cli, a: &SeparationArgs, cfg: RunConfig) -> Result<(), CliError> {
    let mut s = cfg.separation.clone();
    s.n = a.n.unwrap_or(s.n);
    if let Some(d) = &a.latent_dims {
        s.latent_dims = d.clone();
    }
    s.train_triples = a.train_triples.unwrap_or(s.train_triples);
    s.test_triples = a.test_triples.unwrap_or(s.test_triples);
    s.epochs = a.epochs.unwrap_or(s.epochs);
    s.seed = cli.seed.unwrap_or(s.seed);
    s.backend = cli.backend.unwrap_or(s.backend);
    s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let report = run_separation(&s)?;
    if let Some(d) = out_dir(cli, &cfg) {
        fs::create_dir_all(&d)?;
        let mut buf = vec![];
        write_separation_csv(&mut buf, &report.rows)?;
        fs::write(d.join("separation.csv"), buf)?;
        fs::write(d.join("separation.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    emit(cli, &report, || {
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| vec![r.latent_dim.to_string(), r.cell_kind.clone(), format!("{:.4}", r.inconsistency_rate)])
            .collect();
        table(&["latent_dim", "cell_kind", "inconsistency_rate"], &rows)
    })
}

fn dataset_report(path: &Path) -> Result<serde_json::Value, CliError> {
    let data: Vec<TaskInstance> = read_jsonl(BufReader::new(fs::File::open(path)?))?;
    let mut failures = vec![];
    for (i, inst) in data.iter().enumerate() {
        let rep = consistency_check(inst, &inst.outcomes())?;
        if let Some(step) = rep.first_failure {
            failures.push(json!({ "index": i, "step": step, "verdict": rep.steps[step] }));
        }
    }
    let consistent = data.len() - failures.len();
    Ok(json!({
        "instances": data.len(), "consistent": consistent,
        "consistency_rate": consistent as f64 / data.len().max(1) as f64, "failures": failures,
    }))
}

fn checkpoint_report(dir: &Path) -> Result<serde_json::Value, CliError> {
    let run_cfg = RunConfig::load(&dir.join(RUN_FILE))?;
    let state = TrainState::load(dir, CHECKPOINT_STEM)?;
    let p = prepared(&run_cfg)?;
    if p.vocab != state.model.vocab {
        return Err(CliError::Usage("checkpoint vocabulary does not match the configured corpus".into()));
    }
    let test_ce = state.model.cross_entropy(&p.test)?;
    let logged = fs::File::open(dir.join(METRICS_FILE))
        .ok()
        .and_then(|f| read_metrics_csv(f).ok())
        .and_then(|m| m.into_iter().find(|r| r.epoch == state.epoch && r.split == "test"))
        .map(|r| r.cross_entropy);
    Ok(json!({
        "cell_kind": state.model.cell.kind, "epoch": state.epoch, "test_cross_entropy": test_ce,
        "logged_test_cross_entropy": logged, "abs_deviation": logged.map(|l| (l - test_ce).abs()),
    }))
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<(), CliError> {
    if a.dataset.is_none() && a.checkpoint.is_none() {
        return Err(CliError::Usage("eval needs --dataset and/or --checkpoint".into()));
    }
    let dataset = a.dataset.as_deref().map(dataset_report).transpose()?;
    let checkpoint = a.checkpoint.as_deref().map(checkpoint_report).transpose()?;
    let report = json!({ "dataset": dataset, "checkpoint": checkpoint });
    emit(cli, &report, || {
        let mut s = String::new();
        if let Some(d) = &dataset {
            s += &format!("transcripts consistent: {} / {}\n", d["consistent"], d["instances"]);
        }
        if let Some(c) = &checkpoint {
            s += &format!("epoch {} test cross entropy {}\n", c["epoch"], c["test_cross_entropy"]);
        }
        s
    })
}
