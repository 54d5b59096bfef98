use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use seqjoint::cipher::{
    encipher as encipher_seq, random_permutation, round_to_permutation, Permutation,
};
use seqjoint::corpus::{
    accumulate_ngrams, normalize_lines, split_corpus, DataSplit, NGramStats, Sequence, SymbolTable,
};
use seqjoint::grad_solver::{
    solve, CipherTask, CorpusScorer, DecodeScorer, KeyScorer, RunReport, SolverConfig,
};
use seqjoint::metrics::{median, spearman};
use seqjoint::svd_solver::{recover_svd, SpectrumDiagnostics};

use crate::io::{create_dir, emit_json, read_json, read_text, write_text};
use crate::{usage, OutArg};

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Highest n-gram order (1 to 3).
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Lines are already in the alphabet (e.g. ciphertext); encode them
    /// glyph by glyph instead of normalising.
    #[arg(long)]
    exact: bool,
    /// Glyphs of the alphabet, boundary first.
    #[arg(long)]
    alphabet: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

fn symbol_table(alphabet: Option<&str>) -> anyhow::Result<SymbolTable> {
    match alphabet {
        Some(a) => SymbolTable::new(a).map_err(|e| usage(e.to_string())),
        None => Ok(SymbolTable::english()),
    }
}

fn encode_lines(table: &SymbolTable, text: &str, exact: bool) -> anyhow::Result<Vec<Sequence>> {
    if !exact {
        return Ok(normalize_lines(table, text));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            table
                .encode_exact(l)
                .with_context(|| format!("line {}", n + 1))
        })
        .collect()
}

pub fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    if !(1..=3).contains(&a.order) {
        return Err(usage("--order must be 1, 2 or 3"));
    }
    let table = symbol_table(a.alphabet.as_deref())?;
    let seqs = encode_lines(&table, &read_text(&a.corpus)?, a.exact)?;
    let stats = accumulate_ngrams(&seqs, table.len(), a.order)?.with_symbols(&table);
    emit_json(a.out.out.as_deref(), &stats)
}

#[derive(Debug, Args)]
pub struct EncipherArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of lines kept as plaintext; the rest is enciphered.
    #[arg(long, default_value_t = 0.5)]
    plain_fraction: f64,
    /// Receives key.json, plain.txt, cipher.txt and reference.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn encipher(a: EncipherArgs) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&a.plain_fraction) {
        return Err(usage("--plain-fraction must lie in [0, 1]"));
    }
    let table = SymbolTable::english();
    let lines = normalize_lines(&table, &read_text(&a.corpus)?);
    let buckets = split_corpus(
        &lines,
        &DataSplit::new(a.plain_fraction, 1.0 - a.plain_fraction, 0.0, a.seed)?,
    );
    let key = random_permutation(table.len() - 1, a.seed);
    let render =
        |seqs: &[Sequence]| -> String { seqs.iter().map(|s| table.render(s) + "\n").collect() };
    let cipher: Vec<Sequence> = buckets
        .y_only
        .iter()
        .map(|s| encipher_seq(s, &key))
        .collect::<Result<_, _>>()?;
    create_dir(&a.out_dir)?;
    emit_json(Some(&a.out_dir.join("key.json")), &key)?;
    write_text(&a.out_dir.join("plain.txt"), &render(&buckets.x_only))?;
    write_text(&a.out_dir.join("cipher.txt"), &render(&cipher))?;
    write_text(&a.out_dir.join("reference.txt"), &render(&buckets.y_only))
}

/// How decoding errors are measured.
#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Key from `encipher`: error rate expected under the cipher unigram.
    #[arg(long, conflicts_with_all = ["cipher_text", "reference_text"])]
    key: Option<PathBuf>,
    /// Ciphertext lines to decode, scored against `--reference-text`.
    #[arg(long, requires = "reference_text")]
    cipher_text: Option<PathBuf>,
    #[arg(long, requires = "cipher_text")]
    reference_text: Option<PathBuf>,
}

fn scorer(
    a: &ScoreArgs,
    task: &CipherTask,
) -> anyhow::Result<Option<Box<dyn DecodeScorer + Sync>>> {
    if let Some(path) = &a.key {
        let key: Permutation = read_json(path)?;
        if key.len() != task.plain_unigram.len() {
            return Err(usage("key size does not match the statistics"));
        }
        return Ok(Some(Box::new(KeyScorer {
            key,
            cipher_unigram: task.cipher_unigram.clone(),
            prior: task.plain_unigram.clone(),
        })));
    }
    let (Some(c), Some(r)) = (&a.cipher_text, &a.reference_text) else {
        return Ok(None);
    };
    let table = SymbolTable::english();
    let cipher = encode_lines(&table, &read_text(c)?, true)?;
    let reference = encode_lines(&table, &read_text(r)?, true)?;
    if cipher.len() != reference.len() {
        return Err(usage(
            "cipher and reference texts have different line counts",
        ));
    }
    Ok(Some(Box::new(CorpusScorer::from_padded(
        &cipher,
        &reference,
        task.plain_unigram.clone(),
    ))))
}

fn load_task(plain: &Path, cipher: &Path) -> anyhow::Result<CipherTask> {
    let plain: NGramStats = read_json(plain)?;
    let cipher: NGramStats = read_json(cipher)?;
    Ok(CipherTask::from_stats(&plain, &cipher)?)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Args)]
pub struct SolveSvdArgs {
    #[arg(long)]
    plain_stats: PathBuf,
    #[arg(long)]
    cipher_stats: PathBuf,
    #[command(flatten)]
    score: ScoreArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Serialize)]
struct SvdOutput {
    /// Plaintext symbol `i` (without boundary) maps to ciphertext `permutation[i]`.
    permutation: Permutation,
    estimate: Vec<Vec<f64>>,
    left_signs: Vec<f64>,
    right_signs: Vec<f64>,
    diagnostics: SpectrumDiagnostics,
    error_rate: Option<f64>,
}

pub fn solve_svd(a: SolveSvdArgs) -> anyhow::Result<()> {
    let task = load_task(&a.plain_stats, &a.cipher_stats)?;
    let scorer = scorer(&a.score, &task)?;
    let rec = recover_svd(&task.plain_bigram, &task.cipher_bigram)?;
    let permutation = round_to_permutation(&rec.estimate)?;
    let error_rate = scorer.map(|s| s.error_rate(&permutation.to_matrix()));
    let out = SvdOutput {
        estimate: rows(&rec.estimate),
        permutation,
        left_signs: rec.left_signs,
        right_signs: rec.right_signs,
        diagnostics: rec.diagnostics,
        error_rate,
    };
    emit_json(a.out.out.as_deref(), &out)
}

#[derive(Debug, Args)]
pub struct SolveGradArgs {
    #[arg(long)]
    plain_stats: PathBuf,
    #[arg(long)]
    cipher_stats: PathBuf,
    #[arg(long, default_value_t = 20)]
    runs: u64,
    /// Run `k` uses seed `seed + k`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    perturb_scale: Option<f64>,
    #[arg(long)]
    sgd_lr: Option<f64>,
    #[arg(long)]
    sgd_steps: Option<usize>,
    #[arg(long)]
    adam_lr: Option<f64>,
    #[arg(long)]
    adam_steps: Option<usize>,
    #[arg(long)]
    success_kl: Option<f64>,
    #[command(flatten)]
    score: ScoreArgs,
    /// CSV with columns seed, final_loss, bigram_kl, error_rate, succeeded.
    #[arg(long)]
    out: PathBuf,
}

pub fn solve_grad(a: SolveGradArgs) -> anyhow::Result<()> {
    if a.parallel == 0 {
        return Err(usage("--parallel must be at least 1"));
    }
    let task = load_task(&a.plain_stats, &a.cipher_stats)?;
    let scorer = scorer(&a.score, &task)?
        .ok_or_else(|| usage("pass --key or --cipher-text with --reference-text"))?;
    let defaults = SolverConfig::default();
    let base = SolverConfig {
        perturb_scale: a.perturb_scale.unwrap_or(defaults.perturb_scale),
        sgd_lr: a.sgd_lr.unwrap_or(defaults.sgd_lr),
        sgd_steps: a.sgd_steps.unwrap_or(defaults.sgd_steps),
        adam_lr: a.adam_lr.unwrap_or(defaults.adam_lr),
        adam_steps: a.adam_steps.unwrap_or(defaults.adam_steps),
        success_kl_threshold: a.success_kl.unwrap_or(defaults.success_kl_threshold),
        seed: a.seed,
    };
    base.validate().map_err(|e| usage(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.parallel)
        .build()?;
    let reports: Vec<RunReport> = pool.install(|| {
        (0..a.runs)
            .into_par_iter()
            .map(|k| {
                let config = SolverConfig {
                    seed: a.seed + k,
                    ..base.clone()
                };
                solve(&task, &config, scorer.as_ref()).map(|r| r.0)
            })
            .collect::<Result<_, _>>()
    })?;
    let mut w =
        csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    for r in &reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// CSV written by solve-grad.
    #[arg(long)]
    runs: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunRow {
    seed: u64,
    final_loss: f64,
    bigram_kl: f64,
    error_rate: f64,
    succeeded: bool,
}

#[derive(Serialize)]
struct Summary {
    runs: usize,
    successes: usize,
    success_fraction: f64,
    /// Runs with final KL in [0.05, 0.5] nats.
    intermediate_runs: usize,
    median_bigram_kl: f64,
    median_error_rate: f64,
    /// `null` when either column is constant.
    spearman_kl_error: Option<f64>,
    /// Rows sorted by increasing final loss.
    sorted: Vec<RunRow>,
}

pub fn report(a: ReportArgs) -> anyhow::Result<()> {
    let mut reader =
        csv::Reader::from_path(&a.runs).with_context(|| format!("reading {}", a.runs.display()))?;
    let mut runs: Vec<RunRow> = reader.deserialize().collect::<Result<_, _>>()?;
    if runs.is_empty() {
        anyhow::bail!("{} has no runs", a.runs.display());
    }
    runs.sort_by(|x, y| {
        x.final_loss
            .total_cmp(&y.final_loss)
            .then(x.seed.cmp(&y.seed))
    });
    let kl: Vec<f64> = runs.iter().map(|r| r.bigram_kl).collect();
    let err: Vec<f64> = runs.iter().map(|r| r.error_rate).collect();
    let successes = runs.iter().filter(|r| r.succeeded).count();
    let rho = spearman(&kl, &err);
    let summary = Summary {
        runs: runs.len(),
        successes,
        success_fraction: successes as f64 / runs.len() as f64,
        intermediate_runs: kl.iter().filter(|k| (0.05..=0.5).contains(*k)).count(),
        median_bigram_kl: median(&kl),
        median_error_rate: median(&err),
        spearman_kl_error: rho.is_finite().then_some(rho),
        sorted: runs,
    };
    emit_json(a.out.out.as_deref(), &summary)
}
