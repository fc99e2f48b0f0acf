//! A small artificial derivational grammar for smoke tests and benchmarks.
//!
//! Six suffix rules over pseudo-words. Three attach their suffix verbatim.
//! The other three start with a vowel and trigger two spelling changes: a
//! final silent `e` is dropped (`bake` + `er` = `baker`), and the final
//! consonant of a one-syllable consonant-vowel-consonant word is doubled
//! (`bat` + `er` = `batter`, but `kobat` + `er` = `kobater`).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Triple;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuffixRule {
    pub tag: &'static str,
    pub suffix: &'static str,
    /// Whether e-deletion and consonant doubling apply.
    pub orthographic: bool,
}

pub const RULES: [SuffixRule; 6] = [
    SuffixRule {
        tag: "ADVERB",
        suffix: "ly",
        orthographic: false,
    },
    SuffixRule {
        tag: "NOMINAL",
        suffix: "ness",
        orthographic: false,
    },
    SuffixRule {
        tag: "RESULT",
        suffix: "ment",
        orthographic: false,
    },
    SuffixRule {
        tag: "AGENT",
        suffix: "er",
        orthographic: true,
    },
    SuffixRule {
        tag: "POTENTIAL",
        suffix: "able",
        orthographic: true,
    },
    SuffixRule {
        tag: "RELATION",
        suffix: "al",
        orthographic: true,
    },
];

const ONSETS: &[char] = &[
    'b', 'c', 'd', 'f', 'g', 'h', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'w',
];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
/// Final consonants that double before a vowel-initial suffix.
const DOUBLING: &[char] = &['b', 'd', 'g', 'm', 'n', 'p', 't'];
const PLAIN_CODAS: &[char] = &['k', 'l', 'r', 's'];

pub fn rule(tag: &str) -> Option<&'static SuffixRule> {
    RULES.iter().find(|r| r.tag == tag)
}

/// True for tags whose suffix is attached without spelling changes.
pub fn is_concatenative(tag: &str) -> bool {
    rule(tag).is_some_and(|r| !r.orthographic)
}

fn is_vowel(c: char) -> bool {
    VOWELS.contains(&c)
}

/// Monosyllabic word ending in consonant, single vowel, doubling consonant.
/// Only monosyllables qualify, a stand-in for the stressed-final-syllable
/// condition of English spelling (`bat` doubles, `kobat` does not).
fn doubles(chars: &[char]) -> bool {
    let vowels = chars.iter().filter(|c| is_vowel(**c)).count();
    match chars {
        [.., a, b, c] => vowels == 1 && !is_vowel(*a) && is_vowel(*b) && DOUBLING.contains(c),
        _ => false,
    }
}

pub fn derive(base: &str, rule: &SuffixRule) -> String {
    let starts_with_vowel = rule.suffix.starts_with(is_vowel);
    if !rule.orthographic || !starts_with_vowel {
        return format!("{base}{}", rule.suffix);
    }
    let chars: Vec<char> = base.chars().collect();
    if let Some(stem) = base.strip_suffix('e') {
        format!("{stem}{}", rule.suffix)
    } else if doubles(&chars) {
        let last = chars[chars.len() - 1];
        format!("{base}{last}{}", rule.suffix)
    } else {
        format!("{base}{}", rule.suffix)
    }
}

/// A random pseudo-word of at least three letters. Roughly a quarter end in
/// silent `e`, a quarter in a doubling context.
pub fn base_word<R: Rng>(rng: &mut R) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..rng.gen_range(1..=2) {
            w.push(*ONSETS.choose(rng).unwrap());
            w.push(*VOWELS.choose(rng).unwrap());
        }
        match rng.gen_range(0..4) {
            0 => {
                w.push(*ONSETS.choose(rng).unwrap());
                w.push('e');
            }
            1 => w.push(*DOUBLING.choose(rng).unwrap()),
            2 => w.push(*PLAIN_CODAS.choose(rng).unwrap()),
            _ => {}
        }
        if w.chars().count() >= 3 && !w.ends_with("ee") {
            return w;
        }
    }
}

/// `n` distinct triples, tags assigned round-robin over [`RULES`], bases
/// drawn from a pool of about `n / 2` pseudo-words.
pub fn generate(n: usize, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool_size = (n / 2).max(RULES.len());
    let mut pool = BTreeSet::new();
    while pool.len() < pool_size {
        pool.insert(base_word(&mut rng));
    }
    let pool: Vec<String> = pool.into_iter().collect();
    let mut used = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while out.len() < n {
        let r = &RULES[i % RULES.len()];
        let base = pool.choose(&mut rng).unwrap();
        if used.insert((base.clone(), r.tag)) {
            out.push(Triple::new(base.clone(), r.tag, derive(base, r)));
            i += 1;
        }
    }
    out
}
