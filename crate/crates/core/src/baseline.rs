//! Non-neural baseline: an averaged-perceptron edit-action transducer.
//!
//! Each training pair is aligned into a per-character edit script. The
//! transducer walks the base form left to right; at every state a linear
//! classifier over contextual string features picks the next action
//! (substitute/copy, delete, insert, or end-of-input). Decoding is greedy.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Triple;
use crate::error::{Error, Result};

/// One step of a transduction program.
///
/// `Sub` and `Del` consume one input character, `Ins` consumes none. `End`
/// is only legal once the input is exhausted and stops the transducer.
/// The derived ordering (`Sub < Del < Ins < End`, then by character) is the
/// tie-break order used by the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EditAction {
    Sub(char),
    Del,
    Ins(char),
    End,
}

impl EditAction {
    pub fn consumes(self) -> bool {
        matches!(self, EditAction::Sub(_) | EditAction::Del)
    }

    pub fn output(self) -> Option<char> {
        match self {
            EditAction::Sub(c) | EditAction::Ins(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for EditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditAction::Sub(c) => write!(f, "S:{c}"),
            EditAction::Del => f.write_str("D"),
            EditAction::Ins(c) => write!(f, "I:{c}"),
            EditAction::End => f.write_str("E"),
        }
    }
}

impl FromStr for EditAction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let single = |rest: &str| {
            let mut it = rest.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(format!("bad action `{s}`")),
            }
        };
        match s {
            "D" => Ok(EditAction::Del),
            "E" => Ok(EditAction::End),
            _ => {
                if let Some(rest) = s.strip_prefix("S:") {
                    single(rest).map(EditAction::Sub)
                } else if let Some(rest) = s.strip_prefix("I:") {
                    single(rest).map(EditAction::Ins)
                } else {
                    Err(format!("bad action `{s}`"))
                }
            }
        }
    }
}

/// A source string and the actions that rewrite it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditScript {
    pub source: String,
    pub actions: Vec<EditAction>,
}

impl EditScript {
    /// Runs the script. Returns `None` if the actions do not consume the
    /// source exactly once.
    pub fn apply(&self) -> Option<String> {
        let source: Vec<char> = self.source.chars().collect();
        let mut pos = 0;
        let mut out = String::new();
        for &a in &self.actions {
            match a {
                EditAction::Sub(c) => {
                    source.get(pos)?;
                    out.push(c);
                    pos += 1;
                }
                EditAction::Del => {
                    source.get(pos)?;
                    pos += 1;
                }
                EditAction::Ins(c) => out.push(c),
                EditAction::End => break,
            }
        }
        (pos == source.len()).then_some(out)
    }

    /// Number of actions other than copies.
    pub fn cost(&self) -> usize {
        let source: Vec<char> = self.source.chars().collect();
        let mut pos = 0;
        let mut cost = 0;
        for &a in &self.actions {
            match a {
                EditAction::Sub(c) => {
                    cost += usize::from(source.get(pos) != Some(&c));
                    pos += 1;
                }
                EditAction::Del => {
                    cost += 1;
                    pos += 1;
                }
                EditAction::Ins(_) => cost += 1,
                EditAction::End => {}
            }
        }
        cost
    }
}

/// Minimal unit-cost edit script from `base` to `derived`.
///
/// The table holds suffix distances and is traced from the start, preferring
/// copy, then substitution, then deletion, then insertion. Tracing forwards
/// places insertions as late as possible, so appended suffixes become
/// trailing insertions.
pub fn align(base: &str, derived: &str) -> EditScript {
    let a: Vec<char> = base.chars().collect();
    let b: Vec<char> = derived.chars().collect();
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    // dist[i * w + j] = levenshtein(a[i..], b[j..])
    let mut dist = vec![0usize; (n + 1) * w];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            dist[i * w + j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let sub = dist[(i + 1) * w + j + 1] + usize::from(a[i] != b[j]);
                let del = dist[(i + 1) * w + j] + 1;
                let ins = dist[i * w + j + 1] + 1;
                sub.min(del).min(ins)
            };
        }
    }
    let mut actions = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let here = dist[i * w + j];
        let diag = |cost: usize| i < n && j < m && dist[(i + 1) * w + j + 1] + cost == here;
        // copy or substitution
        if (diag(0) && a[i] == b[j]) || diag(1) {
            actions.push(EditAction::Sub(b[j]));
            i += 1;
            j += 1;
        } else if i < n && dist[(i + 1) * w + j] + 1 == here {
            actions.push(EditAction::Del);
            i += 1;
        } else {
            actions.push(EditAction::Ins(b[j]));
            j += 1;
        }
    }
    EditScript {
        source: base.to_string(),
        actions,
    }
}

/// Output-side context of a transducer state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    /// Output characters emitted so far.
    pub output: Vec<char>,
    /// Consecutive insertions at the current input position.
    pub insertions: usize,
}

impl History {
    fn record(&mut self, action: EditAction) {
        if let Some(c) = action.output() {
            self.output.push(c);
        }
        if matches!(action, EditAction::Ins(_)) {
            self.insertions += 1;
        } else {
            self.insertions = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window: usize,
    pub history: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { window: 3, history: 2 }
    }
}

const LEFT_PAD: &str = "<BOS>";
const RIGHT_PAD: &str = "<EOS>";

/// String features of a transducer state.
///
/// Window features are named by signed offset (`c-1=a`, `c+0=b`, ...), each
/// also conjoined with the tag. History features cover the last `history`
/// output characters and the current insertion run.
pub fn featurize(
    source: &[char],
    tag: &str,
    position: usize,
    history: &History,
    config: &FeatureConfig,
) -> Vec<String> {
    let w = config.window as isize;
    let at = |off: isize| -> String {
        let idx = position as isize + off;
        if idx < 0 {
            LEFT_PAD.to_string()
        } else {
            source
                .get(idx as usize)
                .map(|c| c.to_string())
                .unwrap_or_else(|| RIGHT_PAD.to_string())
        }
    };
    let mut feats = Vec::with_capacity(8 + 4 * config.window + 2 * config.history);
    feats.push("bias".to_string());
    feats.push(format!("t={tag}"));
    for off in -w..=w {
        let c = at(off);
        feats.push(format!("c{off:+}={c}"));
        feats.push(format!("t&c{off:+}={tag}|{c}"));
    }
    feats.push(format!("t&c+0c+1={tag}|{}|{}", at(0), at(1)));
    let mut hist = Vec::with_capacity(config.history);
    for k in 1..=config.history {
        let h = history
            .output
            .len()
            .checked_sub(k)
            .map(|i| history.output[i].to_string())
            .unwrap_or_else(|| LEFT_PAD.to_string());
        feats.push(format!("h{k}={h}"));
        hist.push(h);
    }
    if !hist.is_empty() {
        feats.push(format!("t&h={tag}|{}", hist.join("|")));
    }
    let run = history.insertions;
    feats.push(format!("ins={run}"));
    feats.push(format!("t&ins={tag}|{run}"));
    feats.push(format!("t&ins&c+0={tag}|{run}|{}", at(0)));
    if let Some(h1) = hist.first() {
        feats.push(format!("t&ins&h1={tag}|{run}|{h1}"));
    }
    feats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub features: FeatureConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Train one classifier per tag instead of one tag-conjoined classifier.
    pub per_tag: bool,
    pub max_insertions: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            features: FeatureConfig::default(),
            epochs: 10,
            seed: 1,
            per_tag: false,
            max_insertions: 5,
        }
    }
}

/// Finalized averaged perceptron.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerceptronModel {
    weights: HashMap<String, BTreeMap<EditAction, f64>>,
    actions: BTreeSet<EditAction>,
    updates: u64,
}

impl PerceptronModel {
    pub fn actions(&self) -> &BTreeSet<EditAction> {
        &self.actions
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn weight(&self, feature: &str, action: EditAction) -> f64 {
        self.weights
            .get(feature)
            .and_then(|m| m.get(&action))
            .copied()
            .unwrap_or(0.0)
    }

    /// Number of nonzero weights.
    pub fn len(&self) -> usize {
        self.weights.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scores(&self, features: &[String], candidates: &[EditAction]) -> Vec<f64> {
        let mut scores = vec![0.0; candidates.len()];
        for f in features {
            if let Some(row) = self.weights.get(f) {
                for (s, a) in scores.iter_mut().zip(candidates) {
                    if let Some(w) = row.get(a) {
                        *s += w;
                    }
                }
            }
        }
        scores
    }

    /// Highest-scoring candidate; ties go to the earliest candidate, so
    /// callers pass candidates in [`EditAction`] order.
    pub fn best(&self, features: &[String], candidates: &[EditAction]) -> Option<(EditAction, f64)> {
        let scores = self.scores(features, candidates);
        let mut best: Option<(EditAction, f64)> = None;
        for (&a, &s) in candidates.iter().zip(&scores) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((a, s));
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    weight: f64,
    total: f64,
    stamp: u64,
}

/// Multiclass perceptron with weight averaging: after every observed state
/// the current weights are added to a running total (lazily, per cell) and
/// the final model is `total / update_count`.
#[derive(Debug, Default)]
pub struct PerceptronTrainer {
    cells: HashMap<String, BTreeMap<EditAction, Cell>>,
    actions: BTreeSet<EditAction>,
    updates: u64,
}

impl PerceptronTrainer {
    pub fn new(actions: impl IntoIterator<Item = EditAction>) -> Self {
        PerceptronTrainer {
            actions: actions.into_iter().collect(),
            ..Default::default()
        }
    }

    /// Number of observed states folded into the average.
    pub fn update_count(&self) -> u64 {
        self.updates
    }

    /// Raw (unaveraged) weight.
    pub fn weight(&self, feature: &str, action: EditAction) -> f64 {
        self.cells
            .get(feature)
            .and_then(|m| m.get(&action))
            .map_or(0.0, |c| c.weight)
    }

    pub fn predict(&self, features: &[String], candidates: &[EditAction]) -> Option<EditAction> {
        let mut scores = vec![0.0; candidates.len()];
        for f in features {
            if let Some(row) = self.cells.get(f) {
                for (s, a) in scores.iter_mut().zip(candidates) {
                    if let Some(c) = row.get(a) {
                        *s += c.weight;
                    }
                }
            }
        }
        let mut best: Option<(EditAction, f64)> = None;
        for (&a, &s) in candidates.iter().zip(&scores) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((a, s));
            }
        }
        best.map(|(a, _)| a)
    }

    /// Predicts among `candidates` and updates on a mistake. Returns whether
    /// the prediction was correct.
    pub fn observe(&mut self, features: &[String], gold: EditAction, candidates: &[EditAction]) -> bool {
        let predicted = self.predict(features, candidates);
        self.updates += 1;
        if predicted == Some(gold) {
            return true;
        }
        let before = self.updates - 1;
        for f in features {
            let row = self.cells.entry(f.clone()).or_default();
            Self::bump(row.entry(gold).or_default(), before, 1.0);
            if let Some(p) = predicted {
                Self::bump(row.entry(p).or_default(), before, -1.0);
            }
        }
        false
    }

    fn bump(cell: &mut Cell, before: u64, delta: f64) {
        cell.total += cell.weight * (before - cell.stamp) as f64;
        cell.stamp = before;
        cell.weight += delta;
    }

    pub fn finalize(self) -> PerceptronModel {
        let updates = self.updates;
        let mut weights = HashMap::new();
        if updates > 0 {
            for (feature, row) in self.cells {
                let avg: BTreeMap<EditAction, f64> = row
                    .into_iter()
                    .map(|(a, c)| (a, (c.total + c.weight * (updates - c.stamp) as f64) / updates as f64))
                    .filter(|(_, w)| *w != 0.0)
                    .collect();
                if !avg.is_empty() {
                    weights.insert(feature, avg);
                }
            }
        }
        PerceptronModel {
            weights,
            actions: self.actions,
            updates,
        }
    }
}

/// Legal actions at a state, in tie-break order.
fn candidates(
    actions: &BTreeSet<EditAction>,
    at_end: bool,
    insertions: usize,
    max_insertions: usize,
) -> Vec<EditAction> {
    actions
        .iter()
        .copied()
        .filter(|a| match a {
            EditAction::Sub(_) | EditAction::Del => !at_end,
            EditAction::Ins(_) => insertions < max_insertions,
            EditAction::End => at_end,
        })
        .collect()
}

/// A training state: features of the state plus its gold action and the
/// legal alternatives.
struct State {
    features: Vec<String>,
    gold: EditAction,
    at_end: bool,
    insertions: usize,
}

fn states(t: &Triple, features: &FeatureConfig) -> Vec<State> {
    let script = align(&t.base, &t.derived);
    let source: Vec<char> = t.base.chars().collect();
    let mut out = Vec::with_capacity(script.actions.len() + 1);
    let mut pos = 0;
    let mut hist = History::default();
    for action in script.actions.into_iter().chain(std::iter::once(EditAction::End)) {
        out.push(State {
            features: featurize(&source, &t.tag, pos, &hist, features),
            gold: action,
            at_end: pos == source.len(),
            insertions: hist.insertions,
        });
        hist.record(action);
        if action.consumes() {
            pos += 1;
        }
    }
    out
}

/// Trains one averaged perceptron on `data`.
pub fn train_perceptron(data: &[Triple], config: &BaselineConfig) -> Result<PerceptronModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.epochs == 0 {
        return Err(Error::Config("baseline epochs must be positive".into()));
    }
    let per_triple: Vec<Vec<State>> = data.iter().map(|t| states(t, &config.features)).collect();
    let mut trainer = PerceptronTrainer::new(per_triple.iter().flatten().map(|s| s.gold));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            for s in &per_triple[i] {
                let legal = candidates(&trainer.actions, s.at_end, s.insertions, usize::MAX);
                trainer.observe(&s.features, s.gold, &legal);
            }
        }
    }
    Ok(trainer.finalize())
}

/// Greedy decoding with one finalized perceptron. Returns the output and the
/// summed score of the chosen actions.
pub fn decode_greedy(
    model: &PerceptronModel,
    base: &str,
    tag: &str,
    features: &FeatureConfig,
    max_insertions: usize,
) -> (String, f64) {
    let source: Vec<char> = base.chars().collect();
    let mut pos = 0;
    let mut hist = History::default();
    let mut score = 0.0;
    loop {
        let at_end = pos == source.len();
        let legal = candidates(&model.actions, at_end, hist.insertions, max_insertions);
        let feats = featurize(&source, tag, pos, &hist, features);
        let chosen = match model.best(&feats, &legal) {
            Some((a, s)) => {
                score += s;
                a
            }
            // nothing legal: copy through, or stop at the end
            None if at_end => EditAction::End,
            None => EditAction::Sub(source[pos]),
        };
        if chosen == EditAction::End {
            break;
        }
        hist.record(chosen);
        if chosen.consumes() {
            pos += 1;
        }
    }
    (hist.output.into_iter().collect(), score)
}

/// The baseline system: one shared classifier, or one per tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Transducer {
    pub config: BaselineConfig,
    /// Keyed by tag when `per_tag`, else a single entry under [`SHARED`].
    pub models: BTreeMap<String, PerceptronModel>,
}

pub const SHARED: &str = "*";
const FORMAT_TAG: &str = "paradigm-baseline";
const FORMAT_VERSION: &str = "v1";

impl Transducer {
    pub fn train(data: &[Triple], config: BaselineConfig) -> Result<Self> {
        let mut models = BTreeMap::new();
        if config.per_tag {
            let mut by_tag: BTreeMap<&str, Vec<Triple>> = BTreeMap::new();
            for t in data {
                by_tag.entry(&t.tag).or_default().push(t.clone());
            }
            for (tag, subset) in by_tag {
                models.insert(tag.to_string(), train_perceptron(&subset, &config)?);
            }
        } else {
            models.insert(SHARED.to_string(), train_perceptron(data, &config)?);
        }
        Ok(Transducer { config, models })
    }

    fn model_for(&self, tag: &str) -> Option<&PerceptronModel> {
        if self.config.per_tag {
            self.models.get(tag)
        } else {
            self.models.get(SHARED)
        }
    }

    /// Greedy output and its score. An unseen tag under per-tag training
    /// falls back to copying the base.
    pub fn predict(&self, base: &str, tag: &str) -> (String, f64) {
        match self.model_for(tag) {
            Some(m) => decode_greedy(m, base, tag, &self.config.features, self.config.max_insertions),
            None => (base.to_string(), 0.0),
        }
    }

    /// Sorted, versioned text serialization: a header line, then per model a
    /// `model` line, an `actions` line and one `feature<TAB>action<TAB>weight`
    /// line per nonzero averaged weight.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "{FORMAT_TAG}\t{FORMAT_VERSION}\twindow={}\thistory={}\tepochs={}\tseed={}\tper_tag={}\tmax_insertions={}\n",
            c.features.window, c.features.history, c.epochs, c.seed, c.per_tag, c.max_insertions
        );
        for (key, model) in &self.models {
            out.push_str(&format!("model\t{key}\tupdates={}\n", model.updates));
            out.push_str("actions");
            for a in &model.actions {
                out.push('\t');
                out.push_str(&a.to_string());
            }
            out.push('\n');
            let mut features: Vec<&String> = model.weights.keys().collect();
            features.sort();
            for f in features {
                for (a, w) in &model.weights[f] {
                    out.push_str(&format!("{f}\t{a}\t{w}\n"));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Model(format!("baseline model line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(FORMAT_TAG) || fields.next() != Some(FORMAT_VERSION) {
            return Err(bad(1, "unrecognized header"));
        }
        let mut config = BaselineConfig::default();
        for kv in fields {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(1, "expected key=value"))?;
            let parse_err = |_| bad(1, &format!("bad value for {k}"));
            match k {
                "window" => config.features.window = v.parse().map_err(parse_err)?,
                "history" => config.features.history = v.parse().map_err(parse_err)?,
                "epochs" => config.epochs = v.parse().map_err(parse_err)?,
                "seed" => config.seed = v.parse().map_err(parse_err)?,
                "max_insertions" => config.max_insertions = v.parse().map_err(parse_err)?,
                "per_tag" => config.per_tag = v.parse().map_err(|_| bad(1, "bad value for per_tag"))?,
                _ => return Err(bad(1, &format!("unknown key {k}"))),
            }
        }
        let mut models = BTreeMap::new();
        let mut current: Option<(String, PerceptronModel)> = None;
        for (no, line) in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            match cols.as_slice() {
                ["model", key, updates] => {
                    if let Some((k, m)) = current.take() {
                        models.insert(k, m);
                    }
                    let updates = updates
                        .strip_prefix("updates=")
                        .and_then(|u| u.parse().ok())
                        .ok_or_else(|| bad(no, "bad update count"))?;
                    current = Some((
                        key.to_string(),
                        PerceptronModel {
                            updates,
                            ..Default::default()
                        },
                    ));
                }
                ["actions", rest @ ..] => {
                    let (_, m) = current.as_mut().ok_or_else(|| bad(no, "actions before model"))?;
                    for a in rest {
                        m.actions.insert(a.parse().map_err(|e: String| bad(no, &e))?);
                    }
                }
                [feature, action, weight] => {
                    let (_, m) = current.as_mut().ok_or_else(|| bad(no, "weight before model"))?;
                    let action: EditAction = action.parse().map_err(|e: String| bad(no, &e))?;
                    let weight: f64 = weight.parse().map_err(|_| bad(no, "bad weight"))?;
                    m.weights.entry(feature.to_string()).or_default().insert(action, weight);
                }
                _ => return Err(bad(no, "unexpected line")),
            }
        }
        if let Some((k, m)) = current {
            models.insert(k, m);
        }
        if models.is_empty() {
            return Err(bad(1, "no model sections"));
        }
        Ok(Transducer { config, models })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }

    /// True when `text` looks like a serialized baseline model.
    pub fn sniff(text: &str) -> bool {
        text.starts_with(FORMAT_TAG)
    }
}
