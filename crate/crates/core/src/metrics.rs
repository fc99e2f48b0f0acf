//! Exact-match accuracy, mean edit distance, k-best accuracy and per-affix F1.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::levenshtein;
use crate::error::{Error, Result};

/// Suffixes scored by default: the derivational suffixes of the reference
/// inventory plus the affixes reported in the per-affix F1 table.
pub const DEFAULT_AFFIXES: &[&str] = &[
    "ly", "er", "or", "ation", "ity", "ment", "ist", "ness", "ence", "ure", "ee", "age", "ion", "tion", "al", "able",
    "ible", "ant", "ette", "an", "ian", "ish", "ese", "ous", "ious", "eous",
];

pub fn default_inventory() -> Vec<String> {
    DEFAULT_AFFIXES.iter().map(|s| s.to_string()).collect()
}

fn check_lengths(pred: usize, gold: usize) -> Result<()> {
    if pred != gold {
        return Err(Error::LengthMismatch { predicted: pred, gold });
    }
    if gold == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub fn accuracy<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> Result<f64> {
    check_lengths(pred.len(), gold.len())?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p.as_ref() == g.as_ref()).count();
    Ok(hits as f64 / gold.len() as f64)
}

pub fn avg_edit_distance<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> Result<f64> {
    check_lengths(pred.len(), gold.len())?;
    let total: usize = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| levenshtein(p.as_ref(), g.as_ref()))
        .sum();
    Ok(total as f64 / gold.len() as f64)
}

/// Fraction of items whose gold form appears among the first `k` entries of
/// its candidate list.
pub fn kbest_accuracy<G: AsRef<str>>(kbest: &[Vec<String>], gold: &[G], k: usize) -> Result<f64> {
    check_lengths(kbest.len(), gold.len())?;
    let hits = kbest
        .iter()
        .zip(gold)
        .filter(|(list, g)| list.iter().take(k).any(|p| p == g.as_ref()))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Longest inventory suffix that ends `form`.
pub fn extract_affix<'a, S: AsRef<str>>(form: &str, inventory: &'a [S]) -> Option<&'a str> {
    inventory
        .iter()
        .map(AsRef::as_ref)
        .filter(|a| !a.is_empty() && form.ends_with(*a))
        .max_by_key(|a| a.chars().count())
}

/// When a prediction counts as correct for an affix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffixMatch {
    /// Predicted and gold affixes agree.
    #[default]
    Affix,
    /// Predicted and gold affixes agree and the whole word is right.
    WholeWord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffixF1Row {
    pub affix: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold forms carrying this affix.
    pub support: usize,
    pub predicted: usize,
    pub correct: usize,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Per-affix precision, recall and F1, sorted by descending F1 (then affix).
/// Forms matching no inventory suffix are left out.
pub fn affix_f1<P: AsRef<str>, G: AsRef<str>, S: AsRef<str>>(
    pred: &[P],
    gold: &[G],
    inventory: &[S],
    criterion: AffixMatch,
) -> Result<Vec<AffixF1Row>> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            predicted: pred.len(),
            gold: gold.len(),
        });
    }
    // (predicted, gold, correct)
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gold) {
        let pa = extract_affix(p.as_ref(), inventory);
        let ga = extract_affix(g.as_ref(), inventory);
        if let Some(a) = pa {
            counts.entry(a).or_default().0 += 1;
        }
        if let Some(a) = ga {
            counts.entry(a).or_default().1 += 1;
        }
        if let (Some(a), Some(b)) = (pa, ga) {
            let word_ok = criterion == AffixMatch::Affix || p.as_ref() == g.as_ref();
            if a == b && word_ok {
                counts.entry(a).or_default().2 += 1;
            }
        }
    }
    let mut rows: Vec<AffixF1Row> = counts
        .into_iter()
        .map(|(affix, (predicted, support, correct))| {
            let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
            let precision = ratio(correct, predicted);
            let recall = ratio(correct, support);
            AffixF1Row {
                affix: affix.to_string(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
                predicted,
                correct,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.f1.total_cmp(&a.f1).then_with(|| a.affix.cmp(&b.affix)));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagScore {
    pub count: usize,
    pub accuracy: f64,
    pub avg_edit: f64,
    pub kbest_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub accuracy: f64,
    pub avg_edit: f64,
    pub k: usize,
    pub kbest_accuracy: f64,
    pub per_tag: BTreeMap<String, TagScore>,
    pub affixes: Vec<AffixF1Row>,
}

/// One evaluated item: the gold triple's tag and form plus the ranked
/// system outputs (best first).
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<'a> {
    pub tag: &'a str,
    pub gold: &'a str,
    pub kbest: &'a [String],
}

pub struct EvalOptions<'a> {
    pub k: usize,
    pub inventory: &'a [String],
    pub affix_match: AffixMatch,
}

/// Scores ranked outputs against gold forms. Items with an empty candidate
/// list count as predicting the empty string.
pub fn evaluate(items: &[Scored<'_>], opts: &EvalOptions<'_>) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let top = |s: &Scored<'_>| s.kbest.first().map(String::as_str).unwrap_or("").to_string();
    let score = |subset: &[&Scored<'_>]| -> Result<TagScore> {
        let pred: Vec<String> = subset.iter().map(|s| top(s)).collect();
        let gold: Vec<&str> = subset.iter().map(|s| s.gold).collect();
        let lists: Vec<Vec<String>> = subset.iter().map(|s| s.kbest.to_vec()).collect();
        Ok(TagScore {
            count: subset.len(),
            accuracy: accuracy(&pred, &gold)?,
            avg_edit: avg_edit_distance(&pred, &gold)?,
            kbest_accuracy: kbest_accuracy(&lists, &gold, opts.k)?,
        })
    };
    let all: Vec<&Scored<'_>> = items.iter().collect();
    let overall = score(&all)?;
    let mut by_tag: HashMap<&str, Vec<&Scored<'_>>> = HashMap::new();
    for s in items {
        by_tag.entry(s.tag).or_default().push(s);
    }
    let mut per_tag = BTreeMap::new();
    for (tag, subset) in by_tag {
        per_tag.insert(tag.to_string(), score(&subset)?);
    }
    let pred: Vec<String> = items.iter().map(top).collect();
    let gold: Vec<&str> = items.iter().map(|s| s.gold).collect();
    Ok(EvalReport {
        count: overall.count,
        accuracy: overall.accuracy,
        avg_edit: overall.avg_edit,
        k: opts.k,
        kbest_accuracy: overall.kbest_accuracy,
        per_tag,
        affixes: affix_f1(&pred, &gold, opts.inventory, opts.affix_match)?,
    })
}

impl EvalReport {
    pub fn affix(&self, affix: &str) -> Option<&AffixF1Row> {
        self.affixes.iter().find(|r| r.affix == affix)
    }

    /// Plain-text rendering: an accuracy/edit table by tag, then the affix
    /// F1 table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let kcol = format!("{}-best", self.k);
        let _ = writeln!(out, "{:<14} {:>6} {:>8} {:>6} {:>8}", "", "n", "acc", "edit", kcol);
        let mut row = |name: &str, s: &TagScore| {
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>7.1}% {:>6.2} {:>7.1}%",
                name,
                s.count,
                100.0 * s.accuracy,
                s.avg_edit,
                100.0 * s.kbest_accuracy
            );
        };
        row(
            "all",
            &TagScore {
                count: self.count,
                accuracy: self.accuracy,
                avg_edit: self.avg_edit,
                kbest_accuracy: self.kbest_accuracy,
            },
        );
        for (tag, s) in &self.per_tag {
            row(tag, s);
        }
        if !self.affixes.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<8} {:>5} {:>5} {:>5} {:>6}", "affix", "F1", "P", "R", "gold");
            for r in &self.affixes {
                let _ = writeln!(
                    out,
                    "-{:<7} {:>5.2} {:>5.2} {:>5.2} {:>6}",
                    r.affix, r.f1, r.precision, r.recall, r.support
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv() -> Vec<String> {
        default_inventory()
    }

    #[test]
    fn accuracy_extremes() {
        assert_eq!(accuracy(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(accuracy(&["x", "y"], &["a", "b"]).unwrap(), 0.0);
        assert!(matches!(
            accuracy(&["a"], &["a", "b"]),
            Err(Error::LengthMismatch { predicted: 1, gold: 2 })
        ));
    }

    #[test]
    fn avg_edit_examples() {
        assert_eq!(avg_edit_distance(&["take", "x"], &["take", "x"]).unwrap(), 0.0);
        // distances 1 ("cat"/"cut") and 3 ("abc"/"")
        assert_eq!(avg_edit_distance(&["cat", "abc"], &["cut", ""]).unwrap(), 2.0);
        assert!(avg_edit_distance(&["a"], &[] as &[&str]).is_err());
    }

    #[test]
    fn affix_extraction() {
        assert_eq!(extract_affix("quickly", &inv()), Some("ly"));
        assert_eq!(extract_affix("animation", &inv()), Some("ation"));
        assert_eq!(extract_affix("content", &inv()), None);
        assert_eq!(extract_affix("employee", &inv()), Some("ee"));
    }

    #[test]
    fn perfect_predictions_give_unit_f1() {
        let words = ["quickly", "runner", "animation", "employee"];
        let rows = affix_f1(&words, &words, &inv(), AffixMatch::Affix).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.f1 == 1.0));
    }

    #[test]
    fn affix_counts() {
        let pred = ["employer", "employment", "draination", "quickly"];
        let gold = ["employee", "employment", "drainage", "quickly"];
        let rows = affix_f1(&pred, &gold, &inv(), AffixMatch::Affix).unwrap();
        let get = |a: &str| rows.iter().find(|r| r.affix == a).unwrap().clone();
        assert_eq!(get("ment").f1, 1.0);
        let ee = get("ee");
        assert_eq!((ee.predicted, ee.support, ee.correct, ee.f1), (0, 1, 0, 0.0));
        let er = get("er");
        assert_eq!((er.predicted, er.support, er.precision), (1, 0, 0.0));
        assert_eq!(get("ation").predicted, 1);
        assert_eq!(rows[0].f1, 1.0);

        let pred = ["walker", "runer"];
        let gold = ["walker", "runner"];
        let loose = affix_f1(&pred, &gold, &inv(), AffixMatch::Affix).unwrap();
        let strict = affix_f1(&pred, &gold, &inv(), AffixMatch::WholeWord).unwrap();
        assert_eq!(loose[0].f1, 1.0);
        assert_eq!(strict[0].f1, 0.5);
    }

    #[test]
    fn report_and_table() {
        let lists = [
            vec!["quickly".to_string()],
            vec!["runer".to_string(), "runner".to_string()],
        ];
        let items = [
            Scored {
                tag: "ADVERB",
                gold: "quickly",
                kbest: &lists[0],
            },
            Scored {
                tag: "AGENT",
                gold: "runner",
                kbest: &lists[1],
            },
        ];
        let inventory = inv();
        let opts = EvalOptions {
            k: 10,
            inventory: &inventory,
            affix_match: AffixMatch::Affix,
        };
        let r = evaluate(&items, &opts).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.kbest_accuracy, 1.0);
        assert_eq!(r.avg_edit, 0.5);
        assert_eq!(r.per_tag["AGENT"].accuracy, 0.0);
        let table = r.to_table();
        assert!(table.contains("ADVERB"));
        assert!(table.contains("-ly"));
        let json = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.per_tag.len(), 2);
    }

    #[test]
    fn single_row_report_has_only_present_tags() {
        let list = [String::from("x")];
        let items = [Scored {
            tag: "RESULT",
            gold: "x",
            kbest: &list,
        }];
        let inventory = inv();
        let opts = EvalOptions {
            k: 1,
            inventory: &inventory,
            affix_match: AffixMatch::Affix,
        };
        let r = evaluate(&items, &opts).unwrap();
        assert_eq!(r.per_tag.keys().collect::<Vec<_>>(), vec!["RESULT"]);
        assert_eq!((r.accuracy, r.avg_edit), (1.0, 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn permutation_equivariance(pairs in prop::collection::vec(("[ab]{0,4}", "[ab]{0,4}"), 1..12), rot in 0usize..12) {
                let (p, g): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
                let r = rot % pairs.len();
                let mut pp = p.clone();
                let mut gg = g.clone();
                pp.rotate_left(r);
                gg.rotate_left(r);
                prop_assert_eq!(accuracy(&p, &g).unwrap(), accuracy(&pp, &gg).unwrap());
                prop_assert!((avg_edit_distance(&p, &g).unwrap() - avg_edit_distance(&pp, &gg).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn f1_rows_are_bounded(pairs in prop::collection::vec(("[a-z]{0,3}(ly|er|ee|ment|ation|ion)?", "[a-z]{0,3}(ly|er|ee|ment|ation|ion)?"), 0..20)) {
                let (p, g): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
                for row in affix_f1(&p, &g, &inv(), AffixMatch::Affix).unwrap() {
                    prop_assert!(row.correct <= row.predicted.min(row.support));
                    prop_assert!((0.0..=1.0).contains(&row.f1));
                    prop_assert!(row.f1 <= row.precision.max(row.recall) + 1e-12);
                }
            }

            #[test]
            fn kbest_is_monotone(lists in prop::collection::vec(prop::collection::vec("[ab]{0,2}", 1..6), 1..10), gold_seed in prop::collection::vec("[ab]{0,2}", 10)) {
                let gold = &gold_seed[..lists.len()];
                let mut prev = 0.0;
                for k in 1..=6 {
                    let acc = kbest_accuracy(&lists, gold, k).unwrap();
                    prop_assert!(acc >= prev);
                    prev = acc;
                }
                let top: Vec<String> = lists.iter().map(|l| l[0].clone()).collect();
                prop_assert!(kbest_accuracy(&lists, gold, 1).unwrap() == accuracy(&top, gold).unwrap());
            }
        }
    }
}
