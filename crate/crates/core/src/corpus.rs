//! Derivational triples: reading, mis-annotation filtering, splitting and
//! integer encoding.
//!
//! Files are UTF-8 TSV with one `base<TAB>tag<TAB>derived` triple per line.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Derivational slots listed in the reference tag inventory. Datasets may use
/// any closed tag set; this list is what [`TagInventory::standard`] returns.
pub const STANDARD_TAGS: &[&str] = &[
    "NEGATION",
    "ORIGIN",
    "RELATION",
    "DIMINUTIVE",
    "REPEAT",
    "PATIENT",
    "RESULT",
    "AGENT",
    "POTENTIAL",
    "NOMINAL",
    "ADVERB",
];

/// One supervised example: a base form, a derivational slot and the derived
/// surface form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub base: String,
    pub tag: String,
    pub derived: String,
}

impl Triple {
    pub fn new(base: impl Into<String>, tag: impl Into<String>, derived: impl Into<String>) -> Self {
        Triple {
            base: base.into(),
            tag: tag.into(),
            derived: derived.into(),
        }
    }
}

/// Closed set of derivation tags.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagInventory {
    tags: BTreeSet<String>,
}

impl TagInventory {
    pub fn standard() -> Self {
        TagInventory {
            tags: STANDARD_TAGS.iter().map(|t| t.to_string()).collect(),
        }
    }

    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        TagInventory {
            tags: triples.into_iter().map(|t| t.tag.clone()).collect(),
        }
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub(crate) fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    // single rolling row
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let above = row[j + 1];
            let sub = diag + usize::from(ca != cb);
            row[j + 1] = sub.min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[b.len()]
}

/// True when the pair is close enough to be kept: distance must not exceed
/// half the summed lengths. Compared as `2 * d <= |a| + |b|` so ties survive.
pub fn within_distance_bound(base: &str, derived: &str) -> bool {
    let d = levenshtein(base, derived);
    2 * d <= base.chars().count() + derived.chars().count()
}

/// Drops likely mis-annotations, preserving input order.
pub fn filter_triples(raw: &[Triple]) -> Vec<Triple> {
    raw.iter()
        .filter(|t| within_distance_bound(&t.base, &t.derived))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    /// One shuffle over the whole dataset.
    #[default]
    Uniform,
    /// Shuffle and cut each tag separately, then concatenate in tag order.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Triple>,
    pub dev: Vec<Triple>,
    pub test: Vec<Triple>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cut points `(floor(0.70 n), floor(0.85 n))` in exact integer arithmetic.
pub fn split_points(n: usize) -> (usize, usize) {
    (n * 70 / 100, n * 85 / 100)
}

pub fn split_dataset(data: &[Triple], seed: u64) -> Result<DatasetSplit> {
    split_dataset_with(data, seed, SplitStrategy::Uniform)
}

/// Fisher-Yates shuffle (ChaCha8 seeded from `seed`), then 70/15/15 cuts.
pub fn split_dataset_with(data: &[Triple], seed: u64, strategy: SplitStrategy) -> Result<DatasetSplit> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        seed,
    };
    let groups: Vec<Vec<Triple>> = match strategy {
        SplitStrategy::Uniform => vec![data.to_vec()],
        SplitStrategy::Stratified => {
            let mut by_tag: BTreeMap<&str, Vec<Triple>> = BTreeMap::new();
            for t in data {
                by_tag.entry(&t.tag).or_default().push(t.clone());
            }
            by_tag.into_values().collect()
        }
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let (a, b) = split_points(group.len());
        let test = group.split_off(b);
        let dev = group.split_off(a);
        split.train.extend(group);
        split.dev.extend(dev);
        split.test.extend(test);
    }
    Ok(split)
}

/// Bidirectional symbol tables. Reserved symbols, characters and tags share
/// one id space: `PAD`, `BOS`, `EOS`, `UNK`, then characters by codepoint,
/// then tags in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    chars: Vec<char>,
    tags: Vec<String>,
    char_to_id: HashMap<char, usize>,
    tag_to_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    chars: Vec<char>,
    tags: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_parts(r.chars, r.tags)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            chars: v.chars,
            tags: v.tags,
        }
    }
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
    pub const RESERVED: usize = 4;

    /// Builds a vocabulary from sorted, de-duplicated symbol lists.
    pub fn from_parts(mut chars: Vec<char>, mut tags: Vec<String>) -> Self {
        chars.sort_unstable();
        chars.dedup();
        tags.sort();
        tags.dedup();
        let char_to_id = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, Self::RESERVED + i))
            .collect();
        let offset = Self::RESERVED + chars.len();
        let tag_to_id = tags.iter().enumerate().map(|(i, t)| (t.clone(), offset + i)).collect();
        Vocab {
            chars,
            tags,
            char_to_id,
            tag_to_id,
        }
    }

    pub fn len(&self) -> usize {
        Self::RESERVED + self.chars.len() + self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_to_id.get(&c).copied().unwrap_or(Self::UNK)
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tag_to_id.get(tag).copied()
    }

    /// Character for `id`, or `None` for reserved and tag ids.
    pub fn id_to_char(&self, id: usize) -> Option<char> {
        id.checked_sub(Self::RESERVED).and_then(|i| self.chars.get(i)).copied()
    }

    pub fn is_char_id(&self, id: usize) -> bool {
        self.id_to_char(id).is_some()
    }

    /// Printable name of any id.
    pub fn symbol(&self, id: usize) -> String {
        match id {
            Self::PAD => "<pad>".into(),
            Self::BOS => "<s>".into(),
            Self::EOS => "</s>".into(),
            Self::UNK => "<unk>".into(),
            _ => match self.id_to_char(id) {
                Some(c) => c.to_string(),
                None => self
                    .tags
                    .get(id - Self::RESERVED - self.chars.len())
                    .cloned()
                    .unwrap_or_else(|| format!("<{id}>")),
            },
        }
    }

    /// Character ids of `s`, unknown characters mapped to `UNK`.
    pub fn encode_chars(&self, s: &str) -> Vec<usize> {
        s.chars().map(|c| self.char_id(c)).collect()
    }

    /// Target sequence: character ids followed by `EOS`.
    pub fn encode_target(&self, derived: &str) -> Vec<usize> {
        let mut ids = self.encode_chars(derived);
        ids.push(Self::EOS);
        ids
    }

    /// Inverse of [`Vocab::encode_chars`]; stops at `EOS`, skips other
    /// non-character ids.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&id| id != Self::EOS)
            .filter_map(|&id| self.id_to_char(id))
            .collect()
    }
}

/// Vocabulary over every character of the training forms and every tag.
pub fn build_vocab(train: &[Triple]) -> Vocab {
    let chars: BTreeSet<char> = train
        .iter()
        .flat_map(|t| t.base.chars().chain(t.derived.chars()))
        .collect();
    let tags: BTreeSet<String> = train.iter().map(|t| t.tag.clone()).collect();
    Vocab::from_parts(chars.into_iter().collect(), tags.into_iter().collect())
}

/// Source sequence: base characters, then the tag token, then `EOS`.
pub fn encode_source(t: &Triple, v: &Vocab) -> Result<Vec<usize>> {
    encode_source_parts(&t.base, &t.tag, v)
}

pub fn encode_source_parts(base: &str, tag: &str, v: &Vocab) -> Result<Vec<usize>> {
    let tag_id = v.tag_id(tag).ok_or_else(|| Error::UnknownTag(tag.to_string()))?;
    let mut ids = v.encode_chars(base);
    ids.push(tag_id);
    ids.push(Vocab::EOS);
    Ok(ids)
}

/// Parses TSV triples. `path` is only used for error messages.
pub fn parse_triples(text: &str, path: &Path) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::malformed(
                path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::malformed(path, line_no, "empty field"));
        }
        out.push(Triple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

pub fn read_triples(path: impl AsRef<Path>) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_triples(&text, path)
}

pub fn write_triples(path: impl AsRef<Path>, triples: &[Triple]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for t in triples {
        writeln!(buf, "{}\t{}\t{}", t.base, t.tag, t.derived)?;
    }
    fs::write(path, buf).map_err(|e| Error::file(path, e))
}

/// JSON sidecar written next to the three split files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub strategy: SplitStrategy,
    pub retained: usize,
    pub removed: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

pub const TRAIN_FILE: &str = "train.tsv";
pub const DEV_FILE: &str = "dev.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Filters `raw`, splits the survivors and writes `train.tsv`, `dev.tsv`,
/// `test.tsv` and `manifest.json` into `out_dir`.
pub fn write_split(
    raw: &[Triple],
    seed: u64,
    strategy: SplitStrategy,
    out_dir: impl AsRef<Path>,
) -> Result<SplitManifest> {
    let out_dir = out_dir.as_ref();
    let kept = filter_triples(raw);
    let split = split_dataset_with(&kept, seed, strategy)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    write_triples(out_dir.join(TRAIN_FILE), &split.train)?;
    write_triples(out_dir.join(DEV_FILE), &split.dev)?;
    write_triples(out_dir.join(TEST_FILE), &split.test)?;
    let manifest = SplitManifest {
        seed,
        strategy,
        retained: kept.len(),
        removed: raw.len() - kept.len(),
        train: split.train.len(),
        dev: split.dev.len(),
        test: split.test.len(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::file(&path, e))?;
    Ok(manifest)
}

/// Loads a split directory written by [`write_split`].
pub fn read_split(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let seed = match fs::read_to_string(&manifest_path) {
        Ok(text) => serde_json::from_str::<SplitManifest>(&text)?.seed,
        Err(_) => 0,
    };
    Ok(DatasetSplit {
        train: read_triples(dir.join(TRAIN_FILE))?,
        dev: read_triples(dir.join(DEV_FILE))?,
        test: read_triples(dir.join(TEST_FILE))?,
        seed,
    })
}
