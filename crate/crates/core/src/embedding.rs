//! Skip-gram word embeddings with negative sampling, trained on the union
//! of both style corpora so style-equivalent words share one vector space.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{StyleCorpus, Vocabulary, NUM_SPECIALS};
use crate::error::{Error, Result};

/// Skip-gram training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 1,
        }
    }
}

/// Trained word vectors with cached row norms.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    dim: usize,
    vectors: Vec<f64>,
    norms: Vec<f64>,
    trained: Vec<bool>,
}

/// Trainer output: the matrix plus the mean loss per epoch.
#[derive(Clone, Debug)]
pub struct SgnsOutcome {
    pub embeddings: EmbeddingMatrix,
    pub epoch_loss: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Build a matrix from explicit rows; absent ids stay untrained.
    pub fn from_rows(vocab_len: usize, dim: usize, rows: &[(u32, Vec<f64>)]) -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix {
            dim,
            vectors: vec![0.0; vocab_len * dim],
            norms: vec![0.0; vocab_len],
            trained: vec![false; vocab_len],
        };
        for (id, row) in rows {
            assert_eq!(row.len(), dim, "row length must match dim");
            let base = *id as usize * dim;
            m.vectors[base..base + dim].copy_from_slice(row);
            m.trained[*id as usize] = true;
        }
        m.recompute_norms();
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.trained.len()
    }

    pub fn is_trained(&self, id: u32) -> bool {
        self.trained
            .get(id as usize)
            .copied()
            .unwrap_or(false)
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let base = id as usize * self.dim;
        &self.vectors[base..base + self.dim]
    }

    fn recompute_norms(&mut self) {
        for id in 0..self.trained.len() {
            let base = id * self.dim;
            let sq: f64 = self.vectors[base..base + self.dim]
                .iter()
                .map(|x| x * x)
                .sum();
            self.norms[id] = sq.sqrt();
            if self.trained[id] && self.norms[id] <= 0.0 {
                self.trained[id] = false;
            }
        }
    }

    /// Cosine similarity between two trained rows, exactly 1 for `a == b`.
    pub fn cosine(&self, a: u32, b: u32) -> Result<f64> {
        for id in [a, b] {
            if id as usize >= self.trained.len() {
                return Err(Error::BadTokenId(id));
            }
            if !self.trained[id as usize] {
                return Err(Error::UntrainedToken(id));
            }
        }
        if a == b {
            return Ok(1.0);
        }
        let dot: f64 = self
            .row(a)
            .iter()
            .zip(self.row(b))
            .map(|(x, y)| x * y)
            .sum();
        Ok(dot / (self.norms[a as usize] * self.norms[b as usize]))
    }

    /// Text dump: header `V d`, then `token v1 .. vd` per row.
    pub fn write_text(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let werr = |e: std::io::Error| Error::io(path.display().to_string(), e);
        writeln!(w, "{} {}", self.vocab_len(), self.dim).map_err(werr)?;
        for id in 0..self.vocab_len() as u32 {
            let row: Vec<String> = self.row(id).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{} {}", vocab.token(id), row.join(" ")).map_err(werr)?;
        }
        Ok(())
    }

    pub fn read_text(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |detail: String| Error::Parse {
            path: path.display().to_string(),
            detail,
        };
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .ok_or_else(|| parse_err("empty file".into()))?;
        let mut parts = header.split_whitespace();
        let v: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad header".into()))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad header".into()))?;
        if v != vocab.len() {
            return Err(parse_err(format!(
                "embedding rows ({v}) do not match the vocabulary ({})",
                vocab.len()
            )));
        }
        let mut rows = Vec::with_capacity(v);
        for line in lines {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().ok_or_else(|| parse_err("empty row".into()))?;
            if !vocab.contains(token) {
                return Err(parse_err(format!("unknown token `{token}`")));
            }
            let values: Vec<f64> = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(format!("bad value: {e}")))?;
            if values.len() != dim {
                return Err(parse_err(format!("row for `{token}` has wrong width")));
            }
            rows.push((vocab.id(token), values));
        }
        let mut m = EmbeddingMatrix::from_rows(vocab.len(), dim, &rows);
        // Specials and all-zero rows stay untrained regardless of the file.
        for id in 0..NUM_SPECIALS {
            m.trained[id] = false;
        }
        Ok(m)
    }
}

/// Train skip-gram with negative sampling over both corpora concatenated.
/// Single-threaded and bit-reproducible under the seed.
pub fn train_sgns(
    source: &StyleCorpus,
    target: &StyleCorpus,
    vocab: &Vocabulary,
    config: &EmbeddingConfig,
) -> Result<SgnsOutcome> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCorpus("embedding training input".into()));
    }
    if config.dim < 2 {
        return Err(Error::InvalidConfig("embedding dim must be >= 2".into()));
    }
    if config.window == 0 || config.negatives == 0 || config.epochs == 0 {
        return Err(Error::InvalidConfig(
            "window, negatives, and epochs must be positive".into(),
        ));
    }

    let vocab_len = vocab.len();
    let dim = config.dim;
    let sentences: Vec<&Vec<u32>> = source
        .sentences
        .iter()
        .chain(target.sentences.iter())
        .collect();

    // Unigram^0.75 table for negative sampling, over the actual stream.
    let mut counts = vec![0u64; vocab_len];
    for sentence in &sentences {
        for &id in sentence.iter() {
            counts[id as usize] += 1;
        }
    }
    let mut cumulative = Vec::with_capacity(vocab_len);
    let mut acc = 0.0;
    for &c in &counts {
        acc += (c as f64).powf(0.75);
        cumulative.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::EmptyCorpus("embedding training stream".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input = vec![0.0f64; vocab_len * dim];
    let mut output = vec![0.0f64; vocab_len * dim];
    for v in input.iter_mut() {
        *v = (rng.gen::<f64>() - 0.5) / dim as f64;
    }

    let total_positions: usize =
        sentences.iter().map(|s| s.len()).sum::<usize>() * config.epochs;
    let mut done = 0usize;
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut grad_center = vec![0.0f64; dim];

    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut loss_count = 0u64;
        for sentence in &sentences {
            for (pos, &center) in sentence.iter().enumerate() {
                let alpha = (config.lr
                    * (1.0 - done as f64 / (total_positions as f64 + 1.0)))
                    .max(config.lr * 1e-4);
                done += 1;
                let reach = rng.gen_range(1..=config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sentence.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = sentence[ctx_pos];
                    grad_center.iter_mut().for_each(|g| *g = 0.0);
                    let cbase = center as usize * dim;
                    for neg in 0..=config.negatives {
                        let (word, label) = if neg == 0 {
                            (context, 1.0)
                        } else {
                            let mut sample;
                            loop {
                                let r = rng.gen::<f64>() * acc;
                                sample = match cumulative
                                    .binary_search_by(|probe| probe.partial_cmp(&r).unwrap())
                                {
                                    Ok(i) => i as u32,
                                    Err(i) => i as u32,
                                };
                                if sample != context {
                                    break;
                                }
                            }
                            (sample, 0.0)
                        };
                        let obase = word as usize * dim;
                        let dot: f64 = (0..dim)
                            .map(|i| input[cbase + i] * output[obase + i])
                            .sum();
                        let pred = sigmoid(dot);
                        loss_sum -= if label > 0.5 {
                            pred.max(1e-12).ln()
                        } else {
                            (1.0 - pred).max(1e-12).ln()
                        };
                        let g = (label - pred) * alpha;
                        for i in 0..dim {
                            grad_center[i] += g * output[obase + i];
                            output[obase + i] += g * input[cbase + i];
                        }
                    }
                    loss_count += 1;
                    for i in 0..dim {
                        input[cbase + i] += grad_center[i];
                    }
                }
            }
        }
        epoch_loss.push(loss_sum / loss_count.max(1) as f64);
    }

    let mut trained = vec![false; vocab_len];
    for id in NUM_SPECIALS..vocab_len {
        trained[id] = counts[id] > 0;
    }
    // <unk> participates whenever the stream contains it.
    trained[crate::corpus::UNK as usize] = counts[crate::corpus::UNK as usize] > 0;

    let mut matrix = EmbeddingMatrix {
        dim,
        vectors: input,
        norms: vec![0.0; vocab_len],
        trained,
    };
    matrix.recompute_norms();
    Ok(SgnsOutcome {
        embeddings: matrix,
        epoch_loss,
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{index_corpus, tokenize_line, StyleId, StyleLabel};

    fn planted_task() -> (StyleCorpus, StyleCorpus, Vocabulary) {
        // "alpha" and "beta" only ever occur in identical contexts.
        let mut src_lines = Vec::new();
        let mut tgt_lines = Vec::new();
        for i in 0..120 {
            let filler = ["red", "blue", "green"][i % 3];
            src_lines.push(format!("the {filler} alpha stone path"));
            tgt_lines.push(format!("the {filler} beta stone path"));
        }
        let src: Vec<Vec<String>> = src_lines.iter().map(|l| tokenize_line(l, true)).collect();
        let tgt: Vec<Vec<String>> = tgt_lines.iter().map(|l| tokenize_line(l, true)).collect();
        let vocab = Vocabulary::build(&src, &tgt, 10_000, 1).unwrap();
        let s = index_corpus(&src, StyleLabel::new(StyleId::Source, "s"), &vocab).unwrap();
        let t = index_corpus(&tgt, StyleLabel::new(StyleId::Target, "t"), &vocab).unwrap();
        (s, t, vocab)
    }

    fn small_config() -> EmbeddingConfig {
        EmbeddingConfig {
            dim: 16,
            window: 3,
            negatives: 5,
            epochs: 8,
            lr: 0.05,
            seed: 7,
        }
    }

    #[test]
    fn shared_context_words_end_up_close() {
        let (s, t, vocab) = planted_task();
        let out = train_sgns(&s, &t, &vocab, &small_config()).unwrap();
        let cos = out
            .embeddings
            .cosine(vocab.id("alpha"), vocab.id("beta"))
            .unwrap();
        assert!(cos > 0.8, "cosine(alpha, beta) = {cos}");
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let (s, t, vocab) = planted_task();
        let out = train_sgns(&s, &t, &vocab, &small_config()).unwrap();
        let first = out.epoch_loss.first().unwrap();
        let last = out.epoch_loss.last().unwrap();
        assert!(last < first, "epoch loss went {first} -> {last}");
    }

    #[test]
    fn self_cosine_is_exactly_one() {
        let (s, t, vocab) = planted_task();
        let out = train_sgns(&s, &t, &vocab, &small_config()).unwrap();
        assert_eq!(out.embeddings.cosine(vocab.id("alpha"), vocab.id("alpha")).unwrap(), 1.0);
    }

    #[test]
    fn hand_checked_cosine() {
        let m = EmbeddingMatrix::from_rows(6, 2, &[(4, vec![1.0, 0.0]), (5, vec![1.0, 1.0])]);
        let cos = m.cosine(4, 5).unwrap();
        assert!((cos - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        // Orthogonal rows.
        let m = EmbeddingMatrix::from_rows(6, 2, &[(4, vec![1.0, 0.0]), (5, vec![0.0, 2.0])]);
        assert_eq!(m.cosine(4, 5).unwrap(), 0.0);
    }

    #[test]
    fn cosine_is_symmetric_and_bounded() {
        let (s, t, vocab) = planted_task();
        let out = train_sgns(&s, &t, &vocab, &small_config()).unwrap();
        let ids: Vec<u32> = vocab.word_ids().collect();
        for &a in &ids {
            for &b in &ids {
                let ab = out.embeddings.cosine(a, b).unwrap();
                let ba = out.embeddings.cosine(b, a).unwrap();
                assert_eq!(ab, ba);
                assert!(ab.abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (s, t, vocab) = planted_task();
        let a = train_sgns(&s, &t, &vocab, &small_config()).unwrap();
        let b = train_sgns(&s, &t, &vocab, &small_config()).unwrap();
        assert_eq!(a.embeddings.vectors, b.embeddings.vectors);
        assert_eq!(a.epoch_loss, b.epoch_loss);
    }

    #[test]
    fn degenerate_configs_error() {
        let (s, t, vocab) = planted_task();
        for bad in [
            EmbeddingConfig { dim: 0, ..small_config() },
            EmbeddingConfig { dim: 1, ..small_config() },
            EmbeddingConfig { window: 0, ..small_config() },
            EmbeddingConfig { negatives: 0, ..small_config() },
        ] {
            assert!(train_sgns(&s, &t, &vocab, &bad).is_err());
        }
    }

    #[test]
    fn untrained_and_special_ids_error() {
        let (s, t, vocab) = planted_task();
        let out = train_sgns(&s, &t, &vocab, &small_config()).unwrap();
        assert!(out.embeddings.cosine(crate::corpus::BOS, vocab.id("alpha")).is_err());
        assert!(out.embeddings.cosine(9999, vocab.id("alpha")).is_err());
    }

    #[test]
    fn text_dump_round_trips() {
        let (s, t, vocab) = planted_task();
        let out = train_sgns(&s, &t, &vocab, &small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.txt");
        out.embeddings.write_text(&path, &vocab).unwrap();
        let loaded = EmbeddingMatrix::read_text(&path, &vocab).unwrap();
        assert_eq!(out.embeddings.vectors, loaded.vectors);
        for id in vocab.word_ids() {
            assert_eq!(out.embeddings.is_trained(id), loaded.is_trained(id));
        }
    }
}
