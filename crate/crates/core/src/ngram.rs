//! Per-style n-gram language models with interpolated modified Kneser-Ney
//! smoothing, plus ARPA dump/load for inspection and interoperability.
//!
//! Counts: the top order keeps raw counts; every lower order uses
//! continuation counts (number of distinct left extensions in the raw
//! (k+1)-gram table). Discounts follow the counts-of-counts estimates
//! `Y = n1/(n1+2*n2)`, `D1 = 1-2*Y*n2/n1`, `D2 = 2-3*Y*n3/n2`,
//! `D3+ = 3-4*Y*n4/n3`, computed per order; when any of n1..n4 is zero the
//! order falls back to absolute discounting with D = 0.75. Interpolation
//! bottoms out at a uniform distribution over the prediction space
//! (vocabulary plus `</s>`, minus `<s>`/`<pad>`).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{StyleCorpus, StyleLabel, Vocabulary, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};

const FALLBACK_DISCOUNT: f64 = 0.75;

#[derive(Clone, Debug, Default)]
struct ContextStats {
    total: u64,
    n1: u32,
    n2: u32,
    n3p: u32,
}

/// Interpolated modified-KN language model over one style's corpus.
#[derive(Clone, Debug)]
pub struct NGramLm {
    pub style: StyleLabel,
    order: usize,
    vocab_len: usize,
    /// Adjusted counts per order (index k-1): raw at the top, continuation
    /// counts below.
    grams: Vec<HashMap<Box<[u32]>, u64>>,
    /// Per order: context prefix -> aggregate stats over its continuations.
    contexts: Vec<HashMap<Box<[u32]>, ContextStats>>,
    /// Per order: [D1, D2, D3+].
    discounts: Vec<[f64; 3]>,
}

/// Train a model of the given order on one style corpus.
pub fn train_lm(corpus: &StyleCorpus, vocab: &Vocabulary, order: usize) -> Result<NGramLm> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "language-model corpus `{}`",
            corpus.style.name
        )));
    }
    if order < 1 {
        return Err(Error::InvalidConfig("LM order must be >= 1".into()));
    }

    let vocab_len = vocab.len();
    let mut raw: Vec<HashMap<Box<[u32]>, u64>> = vec![HashMap::new(); order];
    for sentence in &corpus.sentences {
        let mut padded: Vec<u32> = Vec::with_capacity(order + sentence.len());
        padded.extend(std::iter::repeat(BOS).take(order - 1));
        for &id in sentence {
            if id as usize >= vocab_len {
                return Err(Error::BadTokenId(id));
            }
            // Sentence-internal markers would corrupt the event space.
            padded.push(if id == BOS || id == EOS || id == PAD { UNK } else { id });
        }
        padded.push(EOS);
        for k in 1..=order {
            for window in padded.windows(k) {
                if *window.last().unwrap() == BOS {
                    continue;
                }
                *raw[k - 1].entry(window.into()).or_insert(0) += 1;
            }
        }
    }

    let mut grams: Vec<HashMap<Box<[u32]>, u64>> = Vec::with_capacity(order);
    for k in 1..=order {
        if k == order {
            grams.push(raw[k - 1].clone());
        } else {
            // Continuation counts: distinct left extensions in the raw
            // (k+1)-gram table.
            let mut cont: HashMap<Box<[u32]>, u64> = HashMap::new();
            for key in raw[k].keys() {
                *cont.entry(key[1..].into()).or_insert(0) += 1;
            }
            grams.push(cont);
        }
    }

    let discounts = grams.iter().map(|table| estimate_discounts(table)).collect();

    let mut contexts: Vec<HashMap<Box<[u32]>, ContextStats>> = Vec::with_capacity(order);
    for table in &grams {
        let mut ctx: HashMap<Box<[u32]>, ContextStats> = HashMap::new();
        for (key, &count) in table {
            let stats = ctx.entry(key[..key.len() - 1].into()).or_default();
            stats.total += count;
            match count {
                1 => stats.n1 += 1,
                2 => stats.n2 += 1,
                _ => stats.n3p += 1,
            }
        }
        contexts.push(ctx);
    }

    Ok(NGramLm {
        style: corpus.style.clone(),
        order,
        vocab_len,
        grams,
        contexts,
        discounts,
    })
}

fn estimate_discounts(table: &HashMap<Box<[u32]>, u64>) -> [f64; 3] {
    let mut n = [0u64; 4];
    for &count in table.values() {
        if (1..=4).contains(&count) {
            n[(count - 1) as usize] += 1;
        }
    }
    if n.iter().any(|&x| x == 0) {
        return [FALLBACK_DISCOUNT; 3];
    }
    let (n1, n2, n3, n4) = (n[0] as f64, n[1] as f64, n[2] as f64, n[3] as f64);
    let y = n1 / (n1 + 2.0 * n2);
    [
        (1.0 - 2.0 * y * n2 / n1).max(0.0),
        (2.0 - 3.0 * y * n3 / n2).max(0.0),
        (3.0 - 4.0 * y * n4 / n3).max(0.0),
    ]
}

impl NGramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Ids the model may predict: everything except `<s>` and `<pad>`.
    pub fn event_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.vocab_len as u32).filter(|&id| id != BOS && id != PAD)
    }

    fn event_space(&self) -> f64 {
        (self.vocab_len - 2) as f64
    }

    /// Discounts `[D1, D2, D3+]` in effect at order `k` (1-based).
    pub fn discounts(&self, k: usize) -> [f64; 3] {
        self.discounts[k - 1]
    }

    /// Observed contexts at order `k` (1-based), sorted for determinism.
    pub fn observed_contexts(&self, k: usize) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = self.contexts[k - 1].keys().map(|c| c.to_vec()).collect();
        out.sort();
        out
    }

    /// p(w | history), natural scale. The history may be any length; only
    /// its last `order - 1` tokens matter.
    pub fn cond_prob(&self, history: &[u32], w: u32) -> f64 {
        let keep = (self.order - 1).min(history.len());
        self.prob_at(&history[history.len() - keep..], w)
    }

    /// ln p(w | history).
    pub fn cond_logp(&self, history: &[u32], w: u32) -> f64 {
        self.cond_prob(history, w).ln()
    }

    /// ln p(w | emitted prefix of a sentence), padding short prefixes with
    /// `<s>` exactly like [`NGramLm::score`] does.
    pub fn logp_next(&self, emitted: &[u32], w: u32) -> f64 {
        let need = self.order - 1;
        if emitted.len() >= need {
            return self.cond_logp(emitted, w);
        }
        let mut history = vec![BOS; need - emitted.len()];
        history.extend_from_slice(emitted);
        self.cond_logp(&history, w)
    }

    fn prob_at(&self, context: &[u32], w: u32) -> f64 {
        let k = context.len() + 1;
        let lower = |lm: &Self| {
            if k == 1 {
                1.0 / lm.event_space()
            } else {
                lm.prob_at(&context[1..], w)
            }
        };
        let Some(stats) = self.contexts[k - 1].get(context) else {
            // Unseen context: pure backoff with weight 1.
            return lower(self);
        };
        let mut key = Vec::with_capacity(k);
        key.extend_from_slice(context);
        key.push(w);
        let count = self.grams[k - 1].get(key.as_slice()).copied().unwrap_or(0);
        let [d1, d2, d3] = self.discounts[k - 1];
        let discount = match count {
            0 => 0.0,
            1 => d1,
            2 => d2,
            _ => d3,
        };
        let total = stats.total as f64;
        let gamma =
            (d1 * stats.n1 as f64 + d2 * stats.n2 as f64 + d3 * stats.n3p as f64) / total;
        (count as f64 - discount).max(0.0) / total + gamma * lower(self)
    }

    /// Natural-log probability of each scored transition, ending with the
    /// `</s>` transition.
    pub fn score_tokens(&self, sentence: &[u32]) -> Result<Vec<f64>> {
        let mut history: Vec<u32> = vec![BOS; self.order - 1];
        let mut out = Vec::with_capacity(sentence.len() + 1);
        for &id in sentence {
            if id as usize >= self.vocab_len {
                return Err(Error::BadTokenId(id));
            }
            let id = if id == BOS || id == EOS || id == PAD { UNK } else { id };
            out.push(self.cond_logp(&history, id));
            history.push(id);
        }
        out.push(self.cond_logp(&history, EOS));
        Ok(out)
    }

    /// Total natural-log probability of the sentence including the `</s>`
    /// transition. An empty sentence scores just that transition.
    pub fn score(&self, sentence: &[u32]) -> Result<f64> {
        Ok(self.score_tokens(sentence)?.iter().sum())
    }

    /// exp of the per-transition average negative log probability.
    pub fn perplexity(&self, corpus: &StyleCorpus) -> Result<f64> {
        let mut total = 0.0;
        let mut events = 0usize;
        for sentence in &corpus.sentences {
            total += self.score(sentence)?;
            events += sentence.len() + 1;
        }
        Ok((-total / events as f64).exp())
    }

    /// Dump in ARPA format (log10 in the file). Pure `<s>` prefixes and
    /// other never-predicted entries carry the conventional -99 probability.
    pub fn write_arpa(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let werr = |e: std::io::Error| Error::io(path.display().to_string(), e);

        // Entries per order: every counted gram, every pure-<s> context
        // prefix, and (at order 1) the whole vocabulary.
        let mut sections: Vec<Vec<Vec<u32>>> = Vec::with_capacity(self.order);
        for k in 1..=self.order {
            let mut keys: Vec<Vec<u32>> = self.grams[k - 1].keys().map(|g| g.to_vec()).collect();
            if k == 1 {
                for id in 0..self.vocab_len as u32 {
                    if !self.grams[0].contains_key([id].as_slice()) {
                        keys.push(vec![id]);
                    }
                }
            } else if k < self.order {
                keys.push(vec![BOS; k]);
            }
            keys.sort();
            sections.push(keys);
        }

        writeln!(w, "\\data\\").map_err(werr)?;
        for (k, keys) in sections.iter().enumerate() {
            writeln!(w, "ngram {}={}", k + 1, keys.len()).map_err(werr)?;
        }
        for (k, keys) in sections.iter().enumerate() {
            let k = k + 1;
            writeln!(w).map_err(werr)?;
            writeln!(w, "\\{}-grams:", k).map_err(werr)?;
            for gram in keys {
                let last = *gram.last().unwrap();
                let log10p = if last == BOS || last == PAD {
                    -99.0
                } else {
                    self.prob_at(&gram[..k - 1], last).log10()
                };
                let words: Vec<&str> = gram.iter().map(|&id| vocab.token(id)).collect();
                let bow = if k < self.order {
                    self.contexts[k].get(gram.as_slice()).map(|stats| {
                        let [d1, d2, d3] = self.discounts[k];
                        ((d1 * stats.n1 as f64 + d2 * stats.n2 as f64 + d3 * stats.n3p as f64)
                            / stats.total as f64)
                            .log10()
                    })
                } else {
                    None
                };
                match bow {
                    Some(b) => writeln!(w, "{:.10}\t{}\t{:.10}", log10p, words.join(" "), b)
                        .map_err(werr)?,
                    None => writeln!(w, "{:.10}\t{}", log10p, words.join(" ")).map_err(werr)?,
                }
            }
        }
        writeln!(w).map_err(werr)?;
        writeln!(w, "\\end\\").map_err(werr)?;
        Ok(())
    }
}

/// Backoff model reconstructed from an ARPA file. Scores agree with the
/// model that wrote the file.
#[derive(Clone, Debug)]
pub struct BackoffLm {
    order: usize,
    /// Per order: gram -> (ln prob, ln backoff weight).
    maps: Vec<HashMap<Box<[u32]>, (f64, f64)>>,
}

pub fn read_arpa(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<BackoffLm> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let parse_err = |lineno: usize, detail: &str| Error::Parse {
        path: path.display().to_string(),
        detail: format!("line {}: {}", lineno + 1, detail),
    };

    let mut maps: Vec<HashMap<Box<[u32]>, (f64, f64)>> = Vec::new();
    let mut current: Option<usize> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let line = line.trim_end();
        if line.is_empty() || line == "\\data\\" || line.starts_with("ngram ") {
            continue;
        }
        if line == "\\end\\" {
            break;
        }
        if let Some(rest) = line.strip_prefix('\\') {
            if let Some(k) = rest.strip_suffix("-grams:").and_then(|s| s.parse::<usize>().ok()) {
                while maps.len() < k {
                    maps.push(HashMap::new());
                }
                current = Some(k);
                continue;
            }
        }
        let k = current.ok_or_else(|| parse_err(lineno, "entry before any section"))?;
        let mut fields = line.split('\t');
        let p: f64 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(lineno, "bad probability"))?;
        let words = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "missing n-gram"))?;
        let bow: f64 = match fields.next() {
            Some(s) => s.parse().map_err(|_| parse_err(lineno, "bad backoff"))?,
            None => 0.0,
        };
        let gram: Vec<u32> = words
            .split(' ')
            .map(|t| {
                if vocab.contains(t) {
                    Ok(vocab.id(t))
                } else {
                    Err(parse_err(lineno, &format!("unknown token `{t}`")))
                }
            })
            .collect::<Result<_>>()?;
        if gram.len() != k {
            return Err(parse_err(lineno, "n-gram length does not match section"));
        }
        maps[k - 1].insert(
            gram.into_boxed_slice(),
            (p * std::f64::consts::LN_10, bow * std::f64::consts::LN_10),
        );
    }
    if maps.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            detail: "no n-gram sections".into(),
        });
    }
    Ok(BackoffLm { order: maps.len(), maps })
}

impl BackoffLm {
    pub fn order(&self) -> usize {
        self.order
    }

    /// ln p(w | history) under standard ARPA backoff semantics.
    pub fn cond_logp(&self, history: &[u32], w: u32) -> f64 {
        let keep = (self.order - 1).min(history.len());
        self.logp_at(&history[history.len() - keep..], w)
    }

    fn logp_at(&self, context: &[u32], w: u32) -> f64 {
        let k = context.len() + 1;
        let mut key = Vec::with_capacity(k);
        key.extend_from_slice(context);
        key.push(w);
        if let Some(&(p, _)) = self.maps[k - 1].get(key.as_slice()) {
            return p;
        }
        if context.is_empty() {
            // Complete 1-gram sections make this unreachable for valid ids.
            return f64::NEG_INFINITY;
        }
        let bow = self
            .maps[context.len() - 1]
            .get(context)
            .map(|&(_, b)| b)
            .unwrap_or(0.0);
        bow + self.logp_at(&context[1..], w)
    }

    pub fn score(&self, sentence: &[u32]) -> f64 {
        let mut history: Vec<u32> = vec![BOS; self.order - 1];
        let mut total = 0.0;
        for &id in sentence {
            total += self.cond_logp(&history, id);
            history.push(id);
        }
        total + self.cond_logp(&history, EOS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize_line, StyleId};

    fn mini_task(lines_s: &[&str], lines_t: &[&str]) -> (StyleCorpus, StyleCorpus, Vocabulary) {
        let stream = |lines: &[&str]| -> Vec<Vec<String>> {
            lines.iter().map(|l| tokenize_line(l, true)).collect()
        };
        let src = stream(lines_s);
        let tgt = stream(lines_t);
        let vocab = Vocabulary::build(&src, &tgt, 10_000, 1).unwrap();
        let s = crate::corpus::index_corpus(&src, StyleLabel::new(StyleId::Source, "s"), &vocab)
            .unwrap();
        let t = crate::corpus::index_corpus(&tgt, StyleLabel::new(StyleId::Target, "t"), &vocab)
            .unwrap();
        (s, t, vocab)
    }

    #[test]
    fn hand_computed_bigram_case() {
        // Corpus "a b", order 2. Every count-of-counts n2 is zero, so both
        // orders use the 0.75 fallback discount. Event space has 4 members
        // (a, b, <unk>, </s>), so the uniform floor is 1/4.
        //
        //   p1(b)   = (1-0.75)/3 + 0.75*(3/3)*(1/4) = 1/12 + 3/16
        //   p(b|a)  = (1-0.75)/1 + 0.75*(1/1)*p1(b) = 1/4 + 13/64 = 29/64
        let (s, _, vocab) = mini_task(&["a b"], &["a b"]);
        let lm = train_lm(&s, &vocab, 2).unwrap();
        assert_eq!(lm.discounts(1), [0.75; 3]);
        assert_eq!(lm.discounts(2), [0.75; 3]);
        let a = vocab.id("a");
        let b = vocab.id("b");
        assert!((lm.cond_prob(&[a], b) - 29.0 / 64.0).abs() < 1e-9);
    }

    #[test]
    fn conditionals_normalize_over_every_observed_context() {
        let (s, _, vocab) = mini_task(
            &[
                "the meal is bad",
                "the room is bad",
                "the meal was cold",
                "a meal is a meal",
                "bad meal bad room",
                "so so",
            ],
            &["fine room"],
        );
        let lm = train_lm(&s, &vocab, 4).unwrap();
        for k in 1..=4 {
            for context in lm.observed_contexts(k) {
                let sum: f64 = lm.event_ids().map(|w| lm.prob_at(&context, w)).sum();
                assert!(
                    (sum - 1.0).abs() < 1e-6,
                    "order {k} context {context:?} sums to {sum}"
                );
            }
        }
    }

    #[test]
    fn unseen_context_backs_off_with_weight_one() {
        let (s, _, vocab) = mini_task(&["a b c", "b c a"], &["a"]);
        let lm = train_lm(&s, &vocab, 3).unwrap();
        let a = vocab.id("a");
        let b = vocab.id("b");
        let c = vocab.id("c");
        // (c, c) never occurs as a context.
        assert_eq!(lm.cond_prob(&[c, c], a), lm.cond_prob(&[c], a));
        // Seen context, for contrast.
        assert_ne!(lm.cond_prob(&[a, b], c), lm.cond_prob(&[b], c));
    }

    #[test]
    fn unigram_model_is_symmetric_on_a_uniform_corpus() {
        let (s, _, vocab) = mini_task(&["a b", "b a"], &["a b"]);
        let lm = train_lm(&s, &vocab, 1).unwrap();
        let pa = lm.cond_prob(&[], vocab.id("a"));
        let pb = lm.cond_prob(&[], vocab.id("b"));
        assert!((pa - pb).abs() < 1e-12);
        let sum: f64 = lm.event_ids().map(|w| lm.cond_prob(&[], w)).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn training_sentence_beats_uniform_baseline() {
        let (s, _, vocab) = mini_task(
            &["the meal is bad", "the room is bad", "the meal was bad"],
            &["x"],
        );
        let lm = train_lm(&s, &vocab, 4).unwrap();
        let sent = &s.sentences[0];
        let uniform = ((sent.len() + 1) as f64) * (1.0 / (vocab.len() as f64 - 2.0)).ln();
        assert!(lm.score(sent).unwrap() >= uniform);
    }

    #[test]
    fn transitions_are_log_probabilities() {
        let (s, _, vocab) = mini_task(&["a b c a", "c b a"], &["a"]);
        let lm = train_lm(&s, &vocab, 3).unwrap();
        let tokens = lm.score_tokens(&s.sentences[0]).unwrap();
        assert_eq!(tokens.len(), s.sentences[0].len() + 1);
        for t in &tokens {
            assert!(*t <= 0.0 && t.is_finite());
        }
        // Each appended transition can only lower the running total.
        let mut running = 0.0;
        for t in &tokens {
            let next = running + t;
            assert!(next <= running);
            running = next;
        }
    }

    #[test]
    fn scoring_is_deterministic_and_total_matches_tokens() {
        let (s, _, vocab) = mini_task(&["a b a b", "b a"], &["a"]);
        let lm = train_lm(&s, &vocab, 4).unwrap();
        let sent = vec![vocab.id("a"), vocab.id("b"), vocab.id("a")];
        assert_eq!(lm.score(&sent).unwrap(), lm.score(&sent).unwrap());
        let total: f64 = lm.score_tokens(&sent).unwrap().iter().sum();
        assert_eq!(lm.score(&sent).unwrap(), total);
    }

    #[test]
    fn empty_sentence_scores_the_terminal_transition() {
        let (s, _, vocab) = mini_task(&["a b"], &["a"]);
        let lm = train_lm(&s, &vocab, 2).unwrap();
        let empty = lm.score(&[]).unwrap();
        assert_eq!(empty, lm.cond_logp(&[BOS], EOS));
        assert!(empty.is_finite());
    }

    #[test]
    fn empty_corpus_and_bad_order_error() {
        let (s, _, vocab) = mini_task(&["a"], &["b"]);
        assert!(train_lm(&s, &vocab, 0).is_err());
        let empty = StyleCorpus {
            style: StyleLabel::new(StyleId::Source, "s"),
            sentences: vec![],
        };
        assert!(train_lm(&empty, &vocab, 2).is_err());
    }

    #[test]
    fn arpa_round_trip_preserves_scores() {
        let (s, _, vocab) = mini_task(
            &[
                "the meal is bad",
                "the room was cold",
                "a bad meal",
                "the meal was bad bad",
            ],
            &["fine"],
        );
        let lm = train_lm(&s, &vocab, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.arpa");
        lm.write_arpa(&path, &vocab).unwrap();
        let loaded = read_arpa(&path, &vocab).unwrap();
        assert_eq!(loaded.order(), 4);
        let probes: Vec<Vec<u32>> = vec![
            s.sentences[0].clone(),
            s.sentences[2].clone(),
            vec![vocab.id("meal"), vocab.id("meal"), vocab.id("cold")],
            vec![vocab.id("fine"), UNK],
            vec![],
        ];
        for probe in probes {
            let a = lm.score(&probe).unwrap();
            let b = loaded.score(&probe);
            assert!((a - b).abs() < 1e-9, "score drift: {a} vs {b}");
        }
    }
}
