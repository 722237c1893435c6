//! Pseudo-parallel corpora: machine-generated sentence pairs with a
//! direction tag and per-pair reward weights.

use std::path::Path;

use crate::corpus::{Direction, Vocabulary};
use crate::error::{Error, Result};

/// Where a pair came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    /// Input side generated by the reverse model; output side authentic.
    /// Always weight 1.
    BackTranslated,
    /// Output side sampled from the model being trained; weighted by the
    /// reward classifier.
    SelfSample,
}

/// One training pair for a directional model.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoPair {
    pub input: Vec<u32>,
    pub output: Vec<u32>,
    pub weight: f64,
    pub provenance: Provenance,
}

/// Generated pairs destined for one directional model.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoCorpus {
    /// Direction of the model these pairs train.
    pub direction: Direction,
    /// Back-translation round that produced the pairs (0 for the SMT stage).
    pub epoch: usize,
    pub pairs: Vec<PseudoPair>,
}

impl PseudoCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn mean_weight(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.weight).sum::<f64>() / self.pairs.len() as f64
    }

    /// Dump as two line-aligned files `pseudo.<dir>.src` / `pseudo.<dir>.tgt`.
    pub fn write_files(&self, dir: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let dir = dir.as_ref();
        let tag = self.direction.tag();
        let mut src = String::new();
        let mut tgt = String::new();
        for pair in &self.pairs {
            src.push_str(&vocab.decode(&pair.input));
            src.push('\n');
            tgt.push_str(&vocab.decode(&pair.output));
            tgt.push('\n');
        }
        let src_path = dir.join(format!("pseudo.{tag}.src"));
        std::fs::write(&src_path, src)
            .map_err(|e| Error::io(src_path.display().to_string(), e))?;
        let tgt_path = dir.join(format!("pseudo.{tag}.tgt"));
        std::fs::write(&tgt_path, tgt)
            .map_err(|e| Error::io(tgt_path.display().to_string(), e))?;
        Ok(())
    }

    /// Read a line-aligned dump back. Weights are not stored in the files;
    /// loaded pairs are weight-1 back-translations (the stage-1 contract).
    pub fn read_files(
        dir: impl AsRef<Path>,
        direction: Direction,
        vocab: &Vocabulary,
    ) -> Result<PseudoCorpus> {
        let dir = dir.as_ref();
        let tag = direction.tag();
        let read = |name: String| -> Result<Vec<Vec<u32>>> {
            let path = dir.join(&name);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            Ok(text
                .lines()
                .map(|l| {
                    l.split_whitespace()
                        .map(|t| vocab.id(t))
                        .collect::<Vec<u32>>()
                })
                .collect())
        };
        let inputs = read(format!("pseudo.{tag}.src"))?;
        let outputs = read(format!("pseudo.{tag}.tgt"))?;
        if inputs.len() != outputs.len() {
            return Err(Error::Parse {
                path: dir.display().to_string(),
                detail: format!(
                    "pseudo.{tag}.src and pseudo.{tag}.tgt are not line-aligned"
                ),
            });
        }
        let pairs = inputs
            .into_iter()
            .zip(outputs)
            .map(|(input, output)| PseudoPair {
                input,
                output,
                weight: 1.0,
                provenance: Provenance::BackTranslated,
            })
            .collect();
        Ok(PseudoCorpus {
            direction,
            epoch: 0,
            pairs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize_line, Vocabulary};

    #[test]
    fn file_round_trip_is_line_aligned() {
        let src: Vec<Vec<String>> = vec![tokenize_line("a b c", true)];
        let tgt: Vec<Vec<String>> = vec![tokenize_line("d e", true)];
        let vocab = Vocabulary::build(&src, &tgt, 100, 1).unwrap();
        let corpus = PseudoCorpus {
            direction: Direction::SourceToTarget,
            epoch: 0,
            pairs: vec![
                PseudoPair {
                    input: vocab.encode(&src[0]),
                    output: vocab.encode(&tgt[0]),
                    weight: 1.0,
                    provenance: Provenance::BackTranslated,
                },
                PseudoPair {
                    input: vocab.encode(&tgt[0]),
                    output: vocab.encode(&src[0]),
                    weight: 1.0,
                    provenance: Provenance::BackTranslated,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        corpus.write_files(dir.path(), &vocab).unwrap();
        let loaded =
            PseudoCorpus::read_files(dir.path(), Direction::SourceToTarget, &vocab).unwrap();
        assert_eq!(corpus, loaded);
    }
}
