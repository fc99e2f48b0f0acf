//! Loading either system from disk, batch k-best prediction and the
//! prediction TSV format `base<TAB>tag<TAB>rank<TAB>prediction<TAB>log_prob`.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::baseline::Transducer;
use crate::config::ModelKind;
use crate::corpus::Triple;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, EvalReport, Scored};
use crate::numeric::checkpoint;
use crate::parallel::{self, Execution};
use crate::seq2seq::Seq2SeqModel;

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    Baseline(Transducer),
    Seq2seq(Seq2SeqModel),
}

impl System {
    /// Loads a model, telling the two formats apart by their leading bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut head = [0u8; 32];
        let n = fs::File::open(path)
            .and_then(|mut f| f.read(&mut head))
            .map_err(|e| Error::file(path, e))?;
        let head = &head[..n];
        if checkpoint::is_checkpoint(head) {
            Ok(System::Seq2seq(Seq2SeqModel::load(path)?))
        } else if Transducer::sniff(&String::from_utf8_lossy(head)) {
            Ok(System::Baseline(Transducer::load(path)?))
        } else {
            Err(Error::Model(format!("{}: not a model file", path.display())))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            System::Baseline(t) => t.save(path),
            System::Seq2seq(m) => m.save(path),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            System::Baseline(_) => ModelKind::Baseline,
            System::Seq2seq(_) => ModelKind::Seq2seq,
        }
    }

    /// Up to `k` ranked outputs with scores. The baseline's score is its
    /// perceptron score, and it only supports `k == 1`.
    pub fn predict(&self, base: &str, tag: &str, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        match self {
            System::Baseline(_) if k > 1 => Err(Error::GreedyOnly),
            System::Baseline(t) => Ok(vec![t.predict(base, tag)]),
            System::Seq2seq(m) if k == 1 => Ok(vec![m.greedy(base, tag)?]),
            System::Seq2seq(m) => m.kbest(base, tag, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub base: String,
    pub tag: String,
}

impl From<&Triple> for Query {
    fn from(t: &Triple) -> Self {
        Query {
            base: t.base.clone(),
            tag: t.tag.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub base: String,
    pub tag: String,
    /// 1-based.
    pub rank: usize,
    pub form: String,
    pub log_prob: f64,
}

/// Predictions for every query, grouped by query in input order.
pub fn predict_all(system: &System, queries: &[Query], k: usize, exec: Execution) -> Result<Vec<Prediction>> {
    if matches!(system, System::Baseline(_)) && k > 1 {
        return Err(Error::GreedyOnly);
    }
    let lists = parallel::map(exec, queries, |q| system.predict(&q.base, &q.tag, k));
    let mut out = Vec::new();
    for (q, list) in queries.iter().zip(lists) {
        for (i, (form, log_prob)) in list?.into_iter().enumerate() {
            out.push(Prediction {
                base: q.base.clone(),
                tag: q.tag.clone(),
                rank: i + 1,
                form,
                log_prob,
            });
        }
    }
    Ok(out)
}

/// Reads `base<TAB>tag[<TAB>...]` rows; extra columns are ignored, so a
/// gold split file doubles as a query file.
pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(base), Some(tag)) if !base.is_empty() && !tag.is_empty() => out.push(Query {
                base: base.to_string(),
                tag: tag.to_string(),
            }),
            _ => return Err(Error::malformed(path, i + 1, "expected base<TAB>tag")),
        }
    }
    Ok(out)
}

pub fn format_predictions(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", p.base, p.tag, p.rank, p.form, p.log_prob);
    }
    out
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_predictions(preds)).map_err(|e| Error::file(path, e))
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::malformed(path, i + 1, msg);
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 tab-separated columns"));
        }
        let rank: usize = cols[2].parse().map_err(|_| bad("rank is not a positive integer"))?;
        if rank == 0 {
            return Err(bad("rank is not a positive integer"));
        }
        let log_prob: f64 = cols[4].parse().map_err(|_| bad("score is not a number"))?;
        out.push(Prediction {
            base: cols[0].to_string(),
            tag: cols[1].to_string(),
            rank,
            form: cols[3].to_string(),
            log_prob,
        });
    }
    Ok(out)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_predictions(&text, path)
}

/// Splits a prediction list into per-query k-best lists. A new query starts
/// at every rank-1 row; ranks within a query must run 1, 2, 3, ...
pub fn group_predictions(preds: &[Prediction]) -> Result<Vec<&[Prediction]>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for (i, p) in preds.iter().enumerate() {
        if p.rank == 1 {
            if i > start {
                groups.push(&preds[start..i]);
            }
            start = i;
        } else if i == start
            || p.rank != preds[i - 1].rank + 1
            || p.base != preds[start].base
            || p.tag != preds[start].tag
        {
            return Err(Error::Misaligned(format!(
                "row {} breaks the rank sequence of its query",
                i + 1
            )));
        }
    }
    if start < preds.len() {
        groups.push(&preds[start..]);
    }
    Ok(groups)
}

/// Scores grouped predictions against gold triples row by row.
pub fn evaluate_predictions(preds: &[Prediction], gold: &[Triple], opts: &EvalOptions<'_>) -> Result<EvalReport> {
    let groups = group_predictions(preds)?;
    if groups.len() != gold.len() {
        return Err(Error::LengthMismatch {
            predicted: groups.len(),
            gold: gold.len(),
        });
    }
    let lists: Vec<Vec<String>> = groups
        .iter()
        .map(|g| g.iter().map(|p| p.form.clone()).collect())
        .collect();
    let mut items = Vec::with_capacity(gold.len());
    for (i, (g, t)) in groups.iter().zip(gold).enumerate() {
        if g[0].base != t.base || g[0].tag != t.tag {
            return Err(Error::Misaligned(format!(
                "query {} is {}/{} in the predictions but {}/{} in the gold file",
                i + 1,
                g[0].base,
                g[0].tag,
                t.base,
                t.tag
            )));
        }
        items.push(Scored {
            tag: &t.tag,
            gold: &t.derived,
            kbest: &lists[i],
        });
    }
    evaluate(&items, opts)
}
