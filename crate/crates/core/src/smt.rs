//! Monotone word-for-word beam decoder over five weighted features: two
//! lexicon probabilities, two style language models, and a word-count
//! penalty. Fabricates the stage-1 pseudo-parallel corpus.

use crate::corpus::{Direction, StyleCorpus};
use crate::error::{Error, Result};
use crate::lexicon::TransferTable;
use crate::ngram::NGramLm;
use crate::pseudo::{Provenance, PseudoCorpus, PseudoPair};

/// ln probability assigned to candidates a table gives zero mass.
pub const LOG_FLOOR: f64 = -30.0;
/// Lexicon probability floor for identity candidates missing from a table.
pub const IDENTITY_FLOOR: f64 = 1e-4;

/// Weights of the five decoder features, named relative to the decode
/// direction: `lm_dest` scores the style being produced, `lm_origin` the
/// style being left behind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureWeights {
    pub lex_fwd: f64,
    pub lex_bwd: f64,
    pub lm_dest: f64,
    pub lm_origin: f64,
    pub word_count: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights {
            lex_fwd: 1.0,
            lex_bwd: 1.0,
            lm_dest: 1.0,
            lm_origin: -1.0,
            word_count: 1.0,
        }
    }
}

/// One directional SMT transfer system.
pub struct SmtSystem<'a> {
    pub direction: Direction,
    /// Origin word -> destination candidates.
    pub fwd_table: &'a TransferTable,
    /// Destination word -> origin candidates.
    pub bwd_table: &'a TransferTable,
    /// Language model of the style being produced.
    pub lm_dest: &'a NGramLm,
    /// Language model of the style being left.
    pub lm_origin: &'a NGramLm,
    pub weights: FeatureWeights,
    pub beam: usize,
}

/// Stage-1 artifacts bundled for convenient system construction.
pub struct SmtContext<'a> {
    pub fwd: &'a TransferTable,
    pub bwd: &'a TransferTable,
    pub lm_source: &'a NGramLm,
    pub lm_target: &'a NGramLm,
}

impl<'a> SmtContext<'a> {
    /// Wire up one direction. With default weights the origin-style LM gets
    /// -1 and everything else +1, for either direction.
    pub fn system(
        &self,
        direction: Direction,
        weights: FeatureWeights,
        beam: usize,
    ) -> SmtSystem<'a> {
        match direction {
            Direction::SourceToTarget => SmtSystem {
                direction,
                fwd_table: self.fwd,
                bwd_table: self.bwd,
                lm_dest: self.lm_target,
                lm_origin: self.lm_source,
                weights,
                beam,
            },
            Direction::TargetToSource => SmtSystem {
                direction,
                fwd_table: self.bwd,
                bwd_table: self.fwd,
                lm_dest: self.lm_source,
                lm_origin: self.lm_target,
                weights,
                beam,
            },
        }
    }
}

fn lex_logp(table: &TransferTable, src: u32, candidate: u32) -> f64 {
    match table.lookup(src, candidate) {
        Some(p) => p.ln(),
        None if src == candidate => IDENTITY_FLOOR.ln(),
        None => LOG_FLOOR,
    }
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<u32>,
    score: f64,
}

impl<'a> SmtSystem<'a> {
    /// Candidate set at one position: table candidates plus identity.
    fn position_candidates(&self, x_i: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .fwd_table
            .candidates(x_i)
            .iter()
            .map(|e| e.candidate)
            .collect();
        if !out.contains(&x_i) {
            out.push(x_i);
        }
        out
    }

    /// Translate one sentence, returning the best hypothesis and its score.
    pub fn translate_scored(&self, x: &[u32]) -> Result<(Vec<u32>, f64)> {
        if self.beam == 0 {
            return Err(Error::InvalidConfig("beam must be >= 1".into()));
        }
        let w = &self.weights;
        for v in [w.lex_fwd, w.lex_bwd, w.lm_dest, w.lm_origin, w.word_count] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig("feature weights must be finite".into()));
            }
        }

        let mut beam = vec![Hypothesis {
            tokens: Vec::with_capacity(x.len()),
            score: 0.0,
        }];
        for &x_i in x {
            let candidates = self.position_candidates(x_i);
            let mut expanded = Vec::with_capacity(beam.len() * candidates.len());
            for hyp in &beam {
                for &y_i in &candidates {
                    let delta = w.lex_fwd * lex_logp(self.fwd_table, x_i, y_i)
                        + w.lex_bwd * lex_logp(self.bwd_table, y_i, x_i)
                        + w.lm_dest * self.lm_dest.logp_next(&hyp.tokens, y_i)
                        + w.lm_origin * self.lm_origin.logp_next(&hyp.tokens, y_i)
                        + w.word_count;
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(y_i);
                    expanded.push(Hypothesis {
                        tokens,
                        score: hyp.score + delta,
                    });
                }
            }
            expanded.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap()
                    .then_with(|| a.tokens.cmp(&b.tokens))
            });
            expanded.truncate(self.beam);
            beam = expanded;
        }

        // Sentence-end transitions of both language models.
        for hyp in beam.iter_mut() {
            hyp.score += w.lm_dest
                * self
                    .lm_dest
                    .logp_next(&hyp.tokens, crate::corpus::EOS)
                + w.lm_origin
                    * self
                        .lm_origin
                        .logp_next(&hyp.tokens, crate::corpus::EOS);
        }
        let best = beam
            .into_iter()
            .min_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap()
                    .then_with(|| a.tokens.cmp(&b.tokens))
            })
            .expect("beam never empties");
        Ok((best.tokens, best.score))
    }

    pub fn translate(&self, x: &[u32]) -> Result<Vec<u32>> {
        Ok(self.translate_scored(x)?.0)
    }

    /// From-scratch evaluation of the five weighted features for a given
    /// output; the beam search score of a returned hypothesis matches this.
    pub fn score_sequence(&self, x: &[u32], y: &[u32]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::InvalidConfig(
                "monotone decoding requires equal lengths".into(),
            ));
        }
        let w = &self.weights;
        let mut lex = 0.0;
        for (&x_i, &y_i) in x.iter().zip(y) {
            lex += w.lex_fwd * lex_logp(self.fwd_table, x_i, y_i)
                + w.lex_bwd * lex_logp(self.bwd_table, y_i, x_i);
        }
        Ok(lex
            + w.lm_dest * self.lm_dest.score(y)?
            + w.lm_origin * self.lm_origin.score(y)?
            + w.word_count * y.len() as f64)
    }
}

/// Pairing used when fabricating stage-1 training data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairingMode {
    /// Inputs are machine back-translations, outputs authentic text. The
    /// trained decoder then learns to emit human sentences.
    BackTranslation,
    /// Ablation: authentic inputs, machine outputs.
    Forward,
}

/// Translate both corpora and pair the results into one pseudo corpus per
/// NMT direction.
pub fn build_pseudo_corpus(
    x: &StyleCorpus,
    y: &StyleCorpus,
    s2t: &SmtSystem,
    t2s: &SmtSystem,
    pairing: PairingMode,
) -> Result<(PseudoCorpus, PseudoCorpus)> {
    let translate_all = |system: &SmtSystem, corpus: &StyleCorpus| -> Result<Vec<Vec<u32>>> {
        corpus
            .sentences
            .iter()
            .map(|s| system.translate(s))
            .collect()
    };
    let pair = |inputs: Vec<Vec<u32>>, outputs: &[Vec<u32>]| -> Vec<PseudoPair> {
        inputs
            .into_iter()
            .zip(outputs.iter().cloned())
            .map(|(input, output)| PseudoPair {
                input,
                output,
                weight: 1.0,
                provenance: Provenance::BackTranslated,
            })
            .collect()
    };

    let (for_s2t, for_t2s) = match pairing {
        PairingMode::BackTranslation => (
            pair(translate_all(t2s, y)?, &y.sentences),
            pair(translate_all(s2t, x)?, &x.sentences),
        ),
        PairingMode::Forward => (
            pair(x.sentences.clone(), &translate_all(s2t, x)?),
            pair(y.sentences.clone(), &translate_all(t2s, y)?),
        ),
    };
    Ok((
        PseudoCorpus {
            direction: Direction::SourceToTarget,
            epoch: 0,
            pairs: for_s2t,
        },
        PseudoCorpus {
            direction: Direction::TargetToSource,
            epoch: 0,
            pairs: for_t2s,
        },
    ))
}
