//! Word-level transfer tables: style preference from relative corpus
//! frequencies times normalized embedding similarity, pruned to
//! high-confidence candidates.
//!
//! Candidate scoring for one source word, in order:
//!
//! 1. pool = top-k candidates by clamped cosine (ties by token id); if every
//!    cosine clamps to zero the pool is the word itself with similarity 1
//! 2. sim(y) = clamped cosine / pool sum
//! 3. raw(y) = pref_src(x) * sim(y) * pref_tgt(y)
//! 4. the word itself always stays a candidate, with raw score floored at
//!    `identity_floor` so content words can pass through the decoder
//! 5. candidates with raw = 0 or raw < threshold * max are pruned (the
//!    identity candidate is exempt), the list is cut to `top_k` keeping the
//!    identity, and survivors renormalize to probabilities

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{Direction, StyleId, Vocabulary};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// How strongly a word leans toward each style (Frequency ratio).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StylePreference {
    pub p_source: f64,
    pub p_target: f64,
}

/// Style preference of one word from its per-style corpus frequencies.
pub fn style_preference(vocab: &Vocabulary, w: u32) -> Result<StylePreference> {
    if w as usize >= vocab.len() {
        return Err(Error::BadTokenId(w));
    }
    let fs = vocab.freq(StyleId::Source, w) as f64;
    let ft = vocab.freq(StyleId::Target, w) as f64;
    let total = fs + ft;
    if total == 0.0 {
        return Err(Error::Numerical(format!(
            "word `{}` has zero total frequency",
            vocab.token(w)
        )));
    }
    Ok(StylePreference {
        p_source: fs / total,
        p_target: ft / total,
    })
}

/// Clamped-cosine similarity distribution of `x_w` over the top-k of
/// `candidates`. Falls back to `{x_w: 1}` when everything clamps to zero.
pub fn similarity_distribution(
    emb: &EmbeddingMatrix,
    x_w: u32,
    candidates: &[u32],
    k: usize,
) -> Result<Vec<(u32, f64)>> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("empty candidate set".into()));
    }
    let mut scored: Vec<(u32, f64)> = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let cos = emb.cosine(x_w, c)?;
        scored.push((c, cos.max(0.0)));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    let sum: f64 = scored.iter().map(|(_, s)| s).sum();
    if sum <= 0.0 {
        return Ok(vec![(x_w, 1.0)]);
    }
    Ok(scored.into_iter().map(|(c, s)| (c, s / sum)).collect())
}

/// One candidate with its transfer probability and score components.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferEntry {
    pub candidate: u32,
    pub probability: f64,
    pub pref_src: f64,
    pub sim: f64,
    pub pref_tgt: f64,
}

/// Sparse word -> candidate-distribution table for one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferTable {
    pub direction: Direction,
    pub top_k: usize,
    entries: Vec<Vec<TransferEntry>>,
}

/// Table construction settings.
#[derive(Clone, Debug, PartialEq)]
pub struct LexiconConfig {
    pub top_k: usize,
    /// Candidates scoring below `threshold * max` are pruned.
    pub threshold: f64,
    /// Raw-score floor for the identity candidate.
    pub identity_floor: f64,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        LexiconConfig {
            top_k: 10,
            threshold: 0.2,
            identity_floor: 1e-4,
        }
    }
}

impl TransferTable {
    /// Assemble a table from explicit candidate lists (tests, stubs).
    pub fn from_lists(
        direction: Direction,
        top_k: usize,
        vocab_len: usize,
        lists: impl IntoIterator<Item = (u32, Vec<TransferEntry>)>,
    ) -> TransferTable {
        let mut entries = vec![Vec::new(); vocab_len];
        for (src, list) in lists {
            entries[src as usize] = list;
        }
        TransferTable {
            direction,
            top_k,
            entries,
        }
    }

    pub fn candidates(&self, w: u32) -> &[TransferEntry] {
        self.entries
            .get(w as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn lookup(&self, src: u32, candidate: u32) -> Option<f64> {
        self.candidates(src)
            .iter()
            .find(|e| e.candidate == candidate)
            .map(|e| e.probability)
    }

    /// Words with at least one candidate, ascending.
    pub fn source_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(i, _)| i as u32)
    }

    /// TSV dump: `src cand prob pref_src sim pref_tgt`, sorted by source id
    /// then probability descending.
    pub fn write_tsv(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        for src in self.source_ids() {
            for e in self.candidates(src) {
                writeln!(
                    w,
                    "{}\t{}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}",
                    vocab.token(src),
                    vocab.token(e.candidate),
                    e.probability,
                    e.pref_src,
                    e.sim,
                    e.pref_tgt
                )
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
        }
        Ok(())
    }

    pub fn read_tsv(
        path: impl AsRef<Path>,
        vocab: &Vocabulary,
        direction: Direction,
        top_k: usize,
    ) -> Result<TransferTable> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut entries: Vec<Vec<TransferEntry>> = vec![Vec::new(); vocab.len()];
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = |detail: String| Error::Parse {
                path: path.display().to_string(),
                detail: format!("line {}: {detail}", lineno + 1),
            };
            if parts.len() != 6 {
                return Err(bad("expected 6 fields".into()));
            }
            for tok in [parts[0], parts[1]] {
                if !vocab.contains(tok) {
                    return Err(bad(format!("unknown token `{tok}`")));
                }
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| bad(format!("bad number `{s}`")))
            };
            entries[vocab.id(parts[0]) as usize].push(TransferEntry {
                candidate: vocab.id(parts[1]),
                probability: parse(parts[2])?,
                pref_src: parse(parts[3])?,
                sim: parse(parts[4])?,
                pref_tgt: parse(parts[5])?,
            });
        }
        Ok(TransferTable {
            direction,
            top_k,
            entries,
        })
    }
}

/// Build the transfer table for one direction over the whole vocabulary.
pub fn build_transfer_table(
    vocab: &Vocabulary,
    emb: &EmbeddingMatrix,
    direction: Direction,
    config: &LexiconConfig,
) -> Result<TransferTable> {
    if config.top_k == 0 {
        return Err(Error::InvalidConfig("lexicon top_k must be >= 1".into()));
    }
    let origin = direction.from_style();
    let candidates: Vec<u32> = vocab.word_ids().filter(|&id| emb.is_trained(id)).collect();

    let mut entries: Vec<Vec<TransferEntry>> = vec![Vec::new(); vocab.len()];
    for w in vocab.word_ids() {
        let pref = style_preference(vocab, w)?;
        let pref_src = match origin {
            StyleId::Source => pref.p_source,
            StyleId::Target => pref.p_target,
        };
        if !emb.is_trained(w) {
            entries[w as usize].push(TransferEntry {
                candidate: w,
                probability: 1.0,
                pref_src,
                sim: 0.0,
                pref_tgt: match origin.other() {
                    StyleId::Source => pref.p_source,
                    StyleId::Target => pref.p_target,
                },
            });
            continue;
        }

        let sims = similarity_distribution(emb, w, &candidates, config.top_k)?;
        let mut scored: Vec<TransferEntry> = Vec::with_capacity(sims.len() + 1);
        let mut identity_seen = false;
        for (candidate, sim) in sims {
            let cand_pref = style_preference(vocab, candidate)?;
            let pref_tgt = match origin.other() {
                StyleId::Source => cand_pref.p_source,
                StyleId::Target => cand_pref.p_target,
            };
            let mut raw = pref_src * sim * pref_tgt;
            if candidate == w {
                identity_seen = true;
                raw = raw.max(config.identity_floor);
            }
            scored.push(TransferEntry {
                candidate,
                probability: raw,
                pref_src,
                sim,
                pref_tgt,
            });
        }
        if !identity_seen {
            let self_pref = match origin.other() {
                StyleId::Source => pref.p_source,
                StyleId::Target => pref.p_target,
            };
            scored.push(TransferEntry {
                candidate: w,
                probability: config.identity_floor,
                pref_src,
                sim: 0.0,
                pref_tgt: self_pref,
            });
        }

        let max_raw = scored.iter().map(|e| e.probability).fold(0.0, f64::max);
        scored.retain(|e| {
            e.candidate == w
                || (e.probability > 0.0 && e.probability >= config.threshold * max_raw)
        });
        scored.sort_by(|a, b| {
            b.probability
                .partial_cmp(&a.probability)
                .unwrap()
                .then(a.candidate.cmp(&b.candidate))
        });
        if scored.len() > config.top_k {
            let identity_pos = scored.iter().position(|e| e.candidate == w).unwrap();
            if identity_pos >= config.top_k {
                let identity = scored.remove(identity_pos);
                scored.truncate(config.top_k - 1);
                scored.push(identity);
            } else {
                scored.truncate(config.top_k);
            }
        }
        let total: f64 = scored.iter().map(|e| e.probability).sum();
        for e in scored.iter_mut() {
            e.probability /= total;
        }
        entries[w as usize] = scored;
    }

    Ok(TransferTable {
        direction,
        top_k: config.top_k,
        entries,
    })
}

/// Convenience: both direction tables from corpora already in memory.
pub fn build_bidirectional_tables(
    vocab: &Vocabulary,
    emb: &EmbeddingMatrix,
    config: &LexiconConfig,
) -> Result<(TransferTable, TransferTable)> {
    Ok((
        build_transfer_table(vocab, emb, Direction::SourceToTarget, config)?,
        build_transfer_table(vocab, emb, Direction::TargetToSource, config)?,
    ))
}

/// Top-1 retrieval rate of planted swap pairs, for diagnostics.
pub fn planted_top1_rate(
    table: &TransferTable,
    vocab: &Vocabulary,
    pairs: &[(String, String)],
) -> f64 {
    let mut hits = 0usize;
    for (s, t) in pairs {
        let (src, tgt) = match table.direction {
            Direction::SourceToTarget => (vocab.id(s), vocab.id(t)),
            Direction::TargetToSource => (vocab.id(t), vocab.id(s)),
        };
        if table.candidates(src).first().map(|e| e.candidate) == Some(tgt) {
            hits += 1;
        }
    }
    hits as f64 / pairs.len().max(1) as f64
}
