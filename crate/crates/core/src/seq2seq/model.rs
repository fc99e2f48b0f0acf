use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Triple, Vocab};
use crate::error::{Error, Result};
use crate::numeric::{checkpoint, AdadeltaConfig};

use super::beam::Hypothesis;
use super::network::{Dims, Seq2SeqParams, Specials};

/// Hyperparameters of the encoder-decoder and its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2SeqConfig {
    pub embedding: usize,
    pub hidden: usize,
    pub attention: usize,
    pub readout: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub beam: usize,
    pub rho: f64,
    pub eps: f64,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip: Option<f64>,
    pub init_scale: f64,
    pub seed: u64,
    /// Decoding stops after `len(base) + max_extra_len` output symbols.
    pub max_extra_len: usize,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        let adadelta = AdadeltaConfig::default();
        Seq2SeqConfig {
            embedding: 300,
            hidden: 100,
            attention: 100,
            readout: 100,
            batch_size: 20,
            epochs: 300,
            beam: 12,
            rho: adadelta.rho,
            eps: adadelta.eps,
            clip: None,
            init_scale: 0.08,
            seed: 1,
            max_extra_len: 10,
        }
    }
}

impl Seq2SeqConfig {
    pub fn dims(&self, vocab: usize) -> Dims {
        Dims {
            vocab,
            embedding: self.embedding,
            hidden: self.hidden,
            attention: self.attention,
            readout: self.readout,
        }
    }

    pub fn adadelta(&self) -> AdadeltaConfig {
        AdadeltaConfig {
            rho: self.rho,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("embedding", self.embedding),
            ("hidden", self.hidden),
            ("attention", self.attention),
            ("readout", self.readout),
            ("batch_size", self.batch_size),
            ("beam", self.beam),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 {
            return Err(Error::Config("adadelta needs 0 <= rho < 1 and eps > 0".into()));
        }
        if matches!(self.clip, Some(c) if c <= 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        Ok(())
    }
}

/// Dev-set scores of the epoch a model was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub epoch: usize,
    pub dev_accuracy: f64,
    pub dev_edit: f64,
}

/// Network plus vocabulary: the string-level seq2seq system.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub vocab: Vocab,
    pub config: Seq2SeqConfig,
    pub net: Seq2SeqParams,
    pub selection: Option<Selection>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    vocab: Vocab,
    config: Seq2SeqConfig,
    selection: Option<Selection>,
}

const FORMAT: &str = "paradigm-seq2seq";
const VERSION: u32 = 1;

/// Path of the JSON file stored next to a checkpoint.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn output_mask(vocab: &Vocab) -> Vec<bool> {
    (0..vocab.len())
        .map(|id| id == Vocab::EOS || vocab.is_char_id(id))
        .collect()
}

impl Seq2SeqModel {
    /// Freshly initialized model over `vocab`.
    pub fn new(vocab: Vocab, config: Seq2SeqConfig) -> Result<Self> {
        config.validate()?;
        let net = Seq2SeqParams::new(
            config.dims(vocab.len()),
            Specials::default(),
            config.init_scale,
            config.seed,
        )?
        .with_output_mask(output_mask(&vocab))?;
        Ok(Seq2SeqModel {
            vocab,
            config,
            net,
            selection: None,
        })
    }

    /// Base characters, tag and EOS. Tags never seen in training map to UNK.
    pub fn encode_source(&self, base: &str, tag: &str) -> Vec<usize> {
        let mut ids = self.vocab.encode_chars(base);
        ids.push(self.vocab.tag_id(tag).unwrap_or(Vocab::UNK));
        ids.push(Vocab::EOS);
        ids
    }

    pub fn max_len(&self, base: &str) -> usize {
        base.chars().count() + self.config.max_extra_len
    }

    /// Negative log-likelihood of `t.derived`.
    pub fn loss(&self, t: &Triple) -> Result<f64> {
        let src = self.encode_source(&t.base, &t.tag);
        self.net.loss(&src, &self.vocab.encode_target(&t.derived))
    }

    pub fn greedy(&self, base: &str, tag: &str) -> Result<(String, f64)> {
        let h = self.net.greedy(&self.encode_source(base, tag), self.max_len(base))?;
        Ok((self.vocab.decode(&h.tokens), h.log_prob))
    }

    /// Up to `k` hypotheses from a beam of `max(beam, k)`.
    pub fn kbest(&self, base: &str, tag: &str, k: usize) -> Result<Vec<(String, f64)>> {
        Ok(self
            .hypotheses(base, tag, k)?
            .into_iter()
            .map(|h| (self.vocab.decode(&h.tokens), h.log_prob))
            .collect())
    }

    pub fn hypotheses(&self, base: &str, tag: &str, k: usize) -> Result<Vec<Hypothesis>> {
        let src = self.encode_source(base, tag);
        self.net
            .beam_search(&src, self.config.beam.max(k), k, self.max_len(base))
    }

    /// Writes the parameter checkpoint to `path` and a JSON sidecar beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save_params(self.net.params(), path)?;
        let sidecar = Sidecar {
            format: FORMAT.to_string(),
            version: VERSION,
            vocab: self.vocab.clone(),
            config: self.config.clone(),
            selection: self.selection,
        };
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&sidecar)?;
        fs::write(&side, json + "\n").map_err(|e| Error::file(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::file(&side, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        if sidecar.format != FORMAT || sidecar.version != VERSION {
            return Err(Error::Model(format!(
                "{}: unsupported model format {} v{}",
                side.display(),
                sidecar.format,
                sidecar.version
            )));
        }
        let params = checkpoint::load_params(path)?;
        let dims = sidecar.config.dims(sidecar.vocab.len());
        let net = Seq2SeqParams::from_params(dims, Specials::default(), params)?
            .with_output_mask(output_mask(&sidecar.vocab))?;
        Ok(Seq2SeqModel {
            vocab: sidecar.vocab,
            config: sidecar.config,
            net,
            selection: sidecar.selection,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    fn small() -> Seq2SeqModel {
        let train = vec![
            Triple::new("walk", "AGENT", "walker"),
            Triple::new("kind", "NOMINAL", "kindness"),
        ];
        let config = Seq2SeqConfig {
            embedding: 5,
            hidden: 4,
            attention: 3,
            readout: 4,
            ..Seq2SeqConfig::default()
        };
        Seq2SeqModel::new(build_vocab(&train), config).unwrap()
    }

    #[test]
    fn defaults_match_the_reference_recipe() {
        let c = Seq2SeqConfig::default();
        assert_eq!(
            (c.embedding, c.hidden, c.batch_size, c.epochs, c.beam),
            (300, 100, 20, 300, 12)
        );
        assert_eq!((c.rho, c.eps, c.clip), (0.95, 1e-6, None));
    }

    #[test]
    fn validation_catches_nonsense() {
        for bad in [
            Seq2SeqConfig {
                hidden: 0,
                ..Default::default()
            },
            Seq2SeqConfig {
                rho: 1.0,
                ..Default::default()
            },
            Seq2SeqConfig {
                clip: Some(0.0),
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn decoding_emits_only_characters() {
        let m = small();
        for (form, lp) in m.kbest("walk", "AGENT", 5).unwrap() {
            assert!(lp <= 0.0);
            assert!(form.chars().all(|c| m.vocab.chars().contains(&c)));
        }
        let mask = m.net.output_mask();
        assert!(mask[Vocab::EOS] && !mask[Vocab::BOS] && !mask[Vocab::PAD] && !mask[Vocab::UNK]);
        assert!(!mask[m.vocab.tag_id("AGENT").unwrap()]);
    }

    #[test]
    fn unseen_tag_maps_to_unk() {
        let m = small();
        let ids = m.encode_source("ab", "MYSTERY");
        assert_eq!(ids[ids.len() - 2], Vocab::UNK);
        assert!(m.greedy("ab", "MYSTERY").is_ok());
    }

    #[test]
    fn save_load_round_trip() {
        let mut m = small();
        m.selection = Some(Selection {
            epoch: 3,
            dev_accuracy: 0.5,
            dev_edit: 1.25,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        m.save(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = Seq2SeqModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.kbest("kind", "NOMINAL", 3).unwrap(),
            m.kbest("kind", "NOMINAL", 3).unwrap()
        );
    }

    #[test]
    fn load_reports_missing_sidecar() {
        let m = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        m.save(&path).unwrap();
        fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(matches!(Seq2SeqModel::load(&path), Err(Error::File { .. })));
    }
}
