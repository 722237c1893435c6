//! Style-labeled corpora: tokenization, shared vocabulary with per-style
//! frequencies, and file ingestion for the published one-sentence-per-line
//! layout (`<task>.<split>.<0|1>`).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id for out-of-vocabulary tokens.
pub const UNK: u32 = 0;
/// Reserved id for the sentence-start marker.
pub const BOS: u32 = 1;
/// Reserved id for the sentence-end marker.
pub const EOS: u32 = 2;
/// Reserved id for padding.
pub const PAD: u32 = 3;
/// Number of reserved ids at the front of every vocabulary.
pub const NUM_SPECIALS: usize = 4;

const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<unk>", "<s>", "</s>", "<pad>"];

/// One of the two styles of a transfer task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StyleId {
    /// Style `0` in the file layout (the transfer source style).
    Source,
    /// Style `1` in the file layout (the transfer target style).
    Target,
}

impl StyleId {
    pub fn index(self) -> usize {
        match self {
            StyleId::Source => 0,
            StyleId::Target => 1,
        }
    }

    pub fn other(self) -> StyleId {
        match self {
            StyleId::Source => StyleId::Target,
            StyleId::Target => StyleId::Source,
        }
    }
}

/// A style with a display name, e.g. `negative` / `positive`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleLabel {
    pub id: StyleId,
    pub name: String,
}

impl StyleLabel {
    pub fn new(id: StyleId, name: impl Into<String>) -> Self {
        StyleLabel {
            id,
            name: name.into(),
        }
    }
}

/// Transfer direction between the two styles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    SourceToTarget,
    TargetToSource,
}

impl Direction {
    /// Style the input sentences are in.
    pub fn from_style(self) -> StyleId {
        match self {
            Direction::SourceToTarget => StyleId::Source,
            Direction::TargetToSource => StyleId::Target,
        }
    }

    /// Style the output sentences should be in.
    pub fn to_style(self) -> StyleId {
        self.from_style().other()
    }

    pub fn reverse(self) -> Direction {
        match self {
            Direction::SourceToTarget => Direction::TargetToSource,
            Direction::TargetToSource => Direction::SourceToTarget,
        }
    }

    /// Short tag used in artifact file names.
    pub fn tag(self) -> &'static str {
        match self {
            Direction::SourceToTarget => "s2t",
            Direction::TargetToSource => "t2s",
        }
    }
}

/// What to do with sentences longer than `max_len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthPolicy {
    /// Skip the sentence (training splits).
    Drop,
    /// Keep the first `max_len` tokens.
    Truncate,
    /// Keep the sentence untouched (test splits).
    Keep,
}

/// Whitespace tokenizer settings. The published datasets are pre-tokenized,
/// so splitting on whitespace is the whole job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub max_len: usize,
    pub long_sentences: LengthPolicy,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            max_len: 30,
            long_sentences: LengthPolicy::Drop,
        }
    }
}

impl TokenizerConfig {
    /// Same settings with the length policy used for evaluation splits.
    pub fn for_test_split(&self) -> Self {
        TokenizerConfig {
            long_sentences: LengthPolicy::Keep,
            ..self.clone()
        }
    }
}

/// Split one line into tokens, lowercasing when configured.
pub fn tokenize_line(line: &str, lowercase: bool) -> Vec<String> {
    line.split_whitespace()
        .map(|t| {
            if lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Read a corpus file into raw token streams, applying lowercasing and the
/// length policy. Empty lines are skipped.
pub fn read_raw_corpus(path: impl AsRef<Path>, config: &TokenizerConfig) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut sentences = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let tokens = tokenize_line(&line, config.lowercase);
        if tokens.is_empty() {
            continue;
        }
        if let Some(tokens) = apply_length_policy(tokens, config) {
            sentences.push(tokens);
        }
    }
    Ok(sentences)
}

fn apply_length_policy(mut tokens: Vec<String>, config: &TokenizerConfig) -> Option<Vec<String>> {
    if tokens.len() <= config.max_len {
        return Some(tokens);
    }
    match config.long_sentences {
        LengthPolicy::Drop => None,
        LengthPolicy::Truncate => {
            tokens.truncate(config.max_len);
            Some(tokens)
        }
        LengthPolicy::Keep => Some(tokens),
    }
}

/// Shared token/id bijection over both styles, with per-style frequencies.
///
/// Ids are dense in `[0, len)`; the first [`NUM_SPECIALS`] ids are reserved
/// and never carry style frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    freq: Vec<[u64; 2]>,
}

impl Vocabulary {
    /// Build the vocabulary from raw token streams of both styles.
    ///
    /// Tokens are ranked by total frequency; the top `cap` survive. Ties at
    /// the cap break by first occurrence across the concatenated streams,
    /// source style first. Tokens seen fewer than `min_count` times map to
    /// `<unk>` later.
    pub fn build(
        source_stream: &[Vec<String>],
        target_stream: &[Vec<String>],
        cap: usize,
        min_count: u64,
    ) -> Result<Vocabulary> {
        if source_stream.is_empty() {
            return Err(Error::EmptyCorpus("source-style token stream".into()));
        }
        if target_stream.is_empty() {
            return Err(Error::EmptyCorpus("target-style token stream".into()));
        }

        let mut counts: HashMap<&str, [u64; 2]> = HashMap::new();
        let mut first_seen: Vec<&str> = Vec::new();
        for (style, stream) in [(0usize, source_stream), (1usize, target_stream)] {
            for sentence in stream {
                for token in sentence {
                    let entry = counts.entry(token.as_str()).or_insert_with(|| {
                        first_seen.push(token.as_str());
                        [0, 0]
                    });
                    entry[style] += 1;
                }
            }
        }

        // Stable rank: total frequency descending, first-seen order on ties.
        let mut order: Vec<usize> = (0..first_seen.len()).collect();
        let totals: Vec<u64> = first_seen
            .iter()
            .map(|t| {
                let c = counts[t];
                c[0] + c[1]
            })
            .collect();
        order.sort_by(|&a, &b| totals[b].cmp(&totals[a]).then(a.cmp(&b)));

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut freq: Vec<[u64; 2]> = vec![[0, 0]; NUM_SPECIALS];
        for &slot in &order {
            if tokens.len() - NUM_SPECIALS >= cap {
                break;
            }
            let token = first_seen[slot];
            if totals[slot] < min_count {
                continue;
            }
            tokens.push(token.to_string());
            freq.push(counts[token]);
        }

        if tokens.len() == NUM_SPECIALS {
            return Err(Error::EmptyCorpus(
                "no token survived the frequency cutoff".into(),
            ));
        }

        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            tokens,
            index,
            freq,
        })
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == NUM_SPECIALS
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Id for a token, `UNK` when absent.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Frequency of `id` in the given style's corpus. Specials report zero.
    pub fn freq(&self, style: StyleId, id: u32) -> u64 {
        self.freq[id as usize][style.index()]
    }

    pub fn total_freq(&self, id: u32) -> u64 {
        let f = self.freq[id as usize];
        f[0] + f[1]
    }

    /// Non-special ids, in id order.
    pub fn word_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (NUM_SPECIALS as u32..self.len() as u32).into_iter()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Dump as TSV: `token<TAB>id<TAB>F(source)<TAB>F(target)`.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        for (id, token) in self.tokens.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{}", token, id, self.freq[id][0], self.freq[id][1])
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Vocabulary> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut tokens = Vec::new();
        let mut freq = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = |detail: String| Error::Parse {
                path: path.display().to_string(),
                detail,
            };
            if parts.len() != 4 {
                return Err(bad(format!("line {}: expected 4 fields", lineno + 1)));
            }
            let id: usize = parts[1]
                .parse()
                .map_err(|_| bad(format!("line {}: bad id", lineno + 1)))?;
            if id != tokens.len() {
                return Err(bad(format!("line {}: ids must be dense", lineno + 1)));
            }
            let fs: u64 = parts[2]
                .parse()
                .map_err(|_| bad(format!("line {}: bad count", lineno + 1)))?;
            let ft: u64 = parts[3]
                .parse()
                .map_err(|_| bad(format!("line {}: bad count", lineno + 1)))?;
            tokens.push(parts[0].to_string());
            freq.push([fs, ft]);
        }
        if tokens.len() < NUM_SPECIALS
            || (0..NUM_SPECIALS).any(|i| tokens[i] != SPECIAL_TOKENS[i])
        {
            return Err(Error::Parse {
                path: path.display().to_string(),
                detail: "missing or misplaced special tokens".into(),
            });
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            tokens,
            index,
            freq,
        })
    }
}

/// Ordered collection of id-encoded sentences in one style.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCorpus {
    pub style: StyleLabel,
    pub sentences: Vec<Vec<u32>>,
}

impl StyleCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }
}

/// Map raw token streams to ids under `vocab`, skipping sentences the length
/// policy rejects and erroring when nothing survives.
pub fn index_corpus(
    raw: &[Vec<String>],
    style: StyleLabel,
    vocab: &Vocabulary,
) -> Result<StyleCorpus> {
    let sentences: Vec<Vec<u32>> = raw
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().map(|t| vocab.id(t)).collect())
        .collect();
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "style `{}` after filtering",
            style.name
        )));
    }
    Ok(StyleCorpus { style, sentences })
}

/// Load one style's corpus file and encode it under an existing vocabulary.
pub fn load_corpus(
    path: impl AsRef<Path>,
    style: StyleLabel,
    config: &TokenizerConfig,
    vocab: &Vocabulary,
) -> Result<StyleCorpus> {
    let raw = read_raw_corpus(&path, config)?;
    index_corpus(&raw, style, vocab)
}

/// Write a corpus back to the one-sentence-per-line layout.
pub fn write_corpus(
    path: impl AsRef<Path>,
    corpus: &StyleCorpus,
    vocab: &Vocabulary,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for sentence in &corpus.sentences {
        writeln!(w, "{}", vocab.decode(sentence))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| tokenize_line(l, true))
            .collect()
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(
            tokenize_line("Good food .", true),
            vec!["good", "food", "."]
        );
        assert_eq!(tokenize_line("Good", false), vec!["Good"]);
    }

    #[test]
    fn per_style_counts_are_exact() {
        let vocab = Vocabulary::build(&stream(&["a a b"]), &stream(&["a c"]), 100, 1).unwrap();
        assert_eq!(vocab.freq(StyleId::Source, vocab.id("a")), 2);
        assert_eq!(vocab.freq(StyleId::Target, vocab.id("a")), 1);
        assert_eq!(vocab.freq(StyleId::Source, vocab.id("b")), 1);
        assert_eq!(vocab.freq(StyleId::Target, vocab.id("b")), 0);
        assert_eq!(vocab.freq(StyleId::Target, vocab.id("c")), 1);
    }

    #[test]
    fn cap_ties_break_by_first_seen() {
        // b and c both occur once; b was seen first, so cap=2 keeps {a, b}.
        let vocab = Vocabulary::build(&stream(&["a a b"]), &stream(&["a c"]), 2, 1).unwrap();
        assert_eq!(vocab.len(), NUM_SPECIALS + 2);
        assert!(vocab.contains("a"));
        assert!(vocab.contains("b"));
        assert!(!vocab.contains("c"));
    }

    #[test]
    fn empty_stream_is_an_error() {
        let err = Vocabulary::build(&stream(&["a"]), &[], 10, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus(_)));
    }

    #[test]
    fn min_count_maps_rare_tokens_to_unk() {
        let vocab = Vocabulary::build(&stream(&["a a b"]), &stream(&["a"]), 100, 2).unwrap();
        assert!(!vocab.contains("b"));
        assert_eq!(vocab.id("b"), UNK);
        let ids = vocab.encode(&tokenize_line("a b", true));
        assert_eq!(ids, vec![vocab.id("a"), UNK]);
    }

    #[test]
    fn style_frequency_sums_match_token_counts() {
        let src = stream(&["a a b .", "b c ."]);
        let tgt = stream(&["a c c .", "c ."]);
        let vocab = Vocabulary::build(&src, &tgt, 100, 1).unwrap();
        let total_src: u64 = vocab.word_ids().map(|id| vocab.freq(StyleId::Source, id)).sum();
        let total_tgt: u64 = vocab.word_ids().map(|id| vocab.freq(StyleId::Target, id)).sum();
        assert_eq!(total_src as usize, src.iter().map(Vec::len).sum::<usize>());
        assert_eq!(total_tgt as usize, tgt.iter().map(Vec::len).sum::<usize>());
    }

    #[test]
    fn detokenize_round_trips_in_vocab_text() {
        let src = stream(&["good food ."]);
        let tgt = stream(&["bad food ."]);
        let vocab = Vocabulary::build(&src, &tgt, 100, 1).unwrap();
        let line = "good   food .";
        let ids = vocab.encode(&tokenize_line(line, true));
        assert_eq!(vocab.decode(&ids), "good food .");
    }

    #[test]
    fn length_policy_applies_per_split() {
        let config = TokenizerConfig {
            max_len: 3,
            ..TokenizerConfig::default()
        };
        let long = tokenize_line("a b c d e", true);
        assert_eq!(apply_length_policy(long.clone(), &config), None);
        let truncate = TokenizerConfig {
            long_sentences: LengthPolicy::Truncate,
            ..config.clone()
        };
        assert_eq!(
            apply_length_policy(long.clone(), &truncate).unwrap().len(),
            3
        );
        let keep = config.for_test_split();
        assert_eq!(apply_length_policy(long.clone(), &keep).unwrap().len(), 5);
    }

    #[test]
    fn vocab_tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let vocab = Vocabulary::build(&stream(&["a a b"]), &stream(&["a c"]), 100, 1).unwrap();
        vocab.write_tsv(&path).unwrap();
        let loaded = Vocabulary::read_tsv(&path).unwrap();
        assert_eq!(vocab, loaded);
    }

    #[test]
    fn load_corpus_missing_file_errors() {
        let config = TokenizerConfig::default();
        let vocab = Vocabulary::build(&stream(&["a"]), &stream(&["b"]), 10, 1).unwrap();
        let style = StyleLabel::new(StyleId::Source, "s");
        let err = load_corpus("/nonexistent/corpus.txt", style, &config, &vocab).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
