use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numeric::Var;

use super::network::Seq2SeqParams;

/// A decoded output sequence. `tokens` ends in EOS unless the search hit
/// its length limit first.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Decoder state after the last token.
    pub state: Vec<f64>,
}

impl Hypothesis {
    /// Tokens without the trailing EOS.
    pub fn body(&self, eos: usize) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == eos => rest,
            _ => &self.tokens,
        }
    }
}

/// Ranking used everywhere: higher log-probability, then shorter, then
/// lexicographically smaller ids.
pub fn rank(a_lp: f64, a: &[usize], b_lp: f64, b: &[usize]) -> Ordering {
    b_lp.total_cmp(&a_lp).then(a.len().cmp(&b.len())).then_with(|| a.cmp(b))
}

struct Live {
    tokens: Vec<usize>,
    log_prob: f64,
    state: Var,
}

struct Candidate {
    parent: usize,
    token: usize,
    log_prob: f64,
    state: Var,
}

impl Seq2SeqParams {
    /// k-best search keeping `beam` live prefixes per step. Outputs are at
    /// most `max_len` tokens long, EOS included.
    pub fn beam_search(&self, source: &[usize], beam: usize, k: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
        if k == 0 || beam < k || max_len == 0 {
            return Err(Error::Config(format!(
                "beam search needs beam >= k >= 1 and max_len >= 1 (beam={beam}, k={k}, max_len={max_len})"
            )));
        }
        let eos = self.specials().eos;
        let mask = self.output_mask();
        let mut g = self.graph();
        let enc = self.encode(&mut g, source)?;
        let s0 = self.initial_state(&mut g, &enc)?;
        let mut live = vec![Live {
            tokens: Vec::new(),
            log_prob: 0.0,
            state: s0,
        }];
        let mut finished: Vec<Hypothesis> = Vec::new();
        let mut stopped_early = false;

        for _ in 0..max_len {
            let mut cands = Vec::new();
            for (parent, h) in live.iter().enumerate() {
                let prev = h.tokens.last().copied().unwrap_or(self.specials().bos);
                let step = self.decode_step(&mut g, prev, h.state, &enc)?;
                let dist = g.value(step.log_dist);
                for (token, &lp) in dist.iter().enumerate() {
                    if mask[token] {
                        cands.push(Candidate {
                            parent,
                            token,
                            log_prob: h.log_prob + lp,
                            state: step.state,
                        });
                    }
                }
            }
            cands.sort_by(|a, b| {
                b.log_prob
                    .total_cmp(&a.log_prob)
                    .then_with(|| live[a.parent].tokens.cmp(&live[b.parent].tokens))
                    .then(a.token.cmp(&b.token))
            });

            let mut next = Vec::with_capacity(beam);
            for (i, c) in cands.iter().enumerate() {
                if c.token == eos {
                    if i < beam {
                        let mut tokens = live[c.parent].tokens.clone();
                        tokens.push(eos);
                        finished.push(Hypothesis {
                            tokens,
                            log_prob: c.log_prob,
                            state: g.value(c.state).to_vec(),
                        });
                    }
                } else if next.len() < beam {
                    let mut tokens = live[c.parent].tokens.clone();
                    tokens.push(c.token);
                    next.push(Live {
                        tokens,
                        log_prob: c.log_prob,
                        state: c.state,
                    });
                }
                if i + 1 >= beam && next.len() == beam {
                    break;
                }
            }
            live = next;

            if finished.len() >= k {
                sort_hypotheses(&mut finished);
                let kth = finished[k - 1].log_prob;
                if live.first().is_none_or(|best| kth >= best.log_prob) {
                    stopped_early = true;
                    break;
                }
            }
            if live.is_empty() {
                break;
            }
        }

        if !stopped_early {
            for h in live {
                finished.push(Hypothesis {
                    tokens: h.tokens,
                    log_prob: h.log_prob,
                    state: g.value(h.state).to_vec(),
                });
            }
        }
        sort_hypotheses(&mut finished);
        finished.dedup_by(|a, b| a.tokens == b.tokens);
        finished.truncate(k);
        Ok(finished)
    }

    /// Argmax decoding; ties go to the smaller id.
    pub fn greedy(&self, source: &[usize], max_len: usize) -> Result<Hypothesis> {
        let eos = self.specials().eos;
        let mask = self.output_mask();
        let mut g = self.graph();
        let enc = self.encode(&mut g, source)?;
        let mut state = self.initial_state(&mut g, &enc)?;
        let mut prev = self.specials().bos;
        let mut tokens = Vec::new();
        let mut log_prob = 0.0;
        for _ in 0..max_len {
            let step = self.decode_step(&mut g, prev, state, &enc)?;
            let dist = g.value(step.log_dist);
            let mut best: Option<(usize, f64)> = None;
            for (token, &lp) in dist.iter().enumerate() {
                if mask[token] && best.is_none_or(|(_, b)| lp > b) {
                    best = Some((token, lp));
                }
            }
            let (token, lp) = best.expect("EOS is always allowed");
            tokens.push(token);
            log_prob += lp;
            state = step.state;
            prev = token;
            if token == eos {
                break;
            }
        }
        Ok(Hypothesis {
            tokens,
            log_prob,
            state: g.value(state).to_vec(),
        })
    }
}

fn sort_hypotheses(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| rank(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
}
