//! Synthetic two-style benchmark with a planted word-swap lexicon and known
//! ground-truth transfers, used for desk-scale end-to-end runs.
//!
//! Sentences are built from templates. Each template carries exactly one
//! marker slot (filled from the planted lexicon) plus content slots filled
//! from neutral word banks. Two knobs shape the difficulty:
//!
//! - `marker_affinity`: how strongly each marker sticks to its home template
//!   in the training data. Evaluation splits pair markers and templates
//!   uniformly, so context-driven decoders get stressed on combinations the
//!   style language models have rarely seen.
//! - `content_skew`: neutral bank words lean toward one style in frequency,
//!   which tempts frequency-based transfer away from content preservation.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    index_corpus, Direction, StyleCorpus, StyleId, StyleLabel, Vocabulary,
};
use crate::error::{Error, Result};

const OPENERS: [&str; 8] = ["the", "my", "this", "that", "our", "their", "every", "some"];

const MIDS: [&str; 20] = [
    "is", "was", "looks", "feels", "seems", "sounds", "smells", "tastes", "stays", "gets",
    "remains", "appears", "proves", "felt", "looked", "seemed", "sounded", "stayed", "got",
    "turned",
];

const VERBS: [&str; 6] = ["tried", "visited", "watched", "ordered", "booked", "joined"];

const NOUNS: [&str; 20] = [
    "meal", "room", "staff", "movie", "plot", "song", "phone", "screen", "menu", "story",
    "driver", "coffee", "park", "hotel", "ride", "band", "pool", "lobby", "cake", "bus",
];

const ADJUNCTS: [&str; 16] = [
    "today", "tonight", "yesterday", "lately", "overall", "honestly", "frankly", "somehow",
    "truly", "clearly", "really", "simply", "indeed", "apparently", "evidently", "certainly",
];

const SOURCE_MARKERS: [&str; 24] = [
    "awful", "dull", "rude", "broken", "noisy", "dirty", "bitter", "cramped", "stale", "gloomy",
    "slack", "bland", "harsh", "messy", "weak", "sour", "chilly", "rough", "shabby", "grim",
    "ugly", "dreary", "lousy", "poor",
];

const TARGET_MARKERS: [&str; 24] = [
    "superb", "lively", "kind", "sturdy", "quiet", "clean", "sweet", "roomy", "fresh", "sunny",
    "brisk", "tasty", "gentle", "tidy", "strong", "mellow", "cozy", "smooth", "classy", "bright",
    "lovely", "cheerful", "splendid", "great",
];

/// One element of a sentence template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TemplateItem {
    Literal(String),
    Marker,
    Content(ContentBank),
}

/// Which neutral word bank a content slot draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContentBank {
    Nouns,
    Adjuncts,
}

impl ContentBank {
    fn words(self) -> &'static [&'static str] {
        match self {
            ContentBank::Nouns => &NOUNS,
            ContentBank::Adjuncts => &ADJUNCTS,
        }
    }
}

/// A sentence template with exactly one marker slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub items: Vec<TemplateItem>,
}

/// Generator settings.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_templates: usize,
    /// Training sentences per style.
    pub n_sentences: usize,
    pub lexicon_size: usize,
    /// Dev sentences per style (metrics during training).
    pub n_dev: usize,
    /// Test sentences per style (final evaluation).
    pub n_test: usize,
    /// Probability that a training sentence uses its marker's home template.
    pub marker_affinity: f64,
    /// Probability that a content slot picks a word leaning toward the
    /// sentence's own style. 0.5 disables the skew.
    pub content_skew: f64,
    /// Probability that a content slot draws from the template's own slice
    /// of the bank instead of the whole bank. Differentiates content words
    /// in embedding space; 0 makes all bank words context-twins.
    pub content_affinity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 17,
            n_templates: 20,
            n_sentences: 2000,
            lexicon_size: 20,
            n_dev: 150,
            n_test: 200,
            marker_affinity: 0.85,
            content_skew: 0.65,
            content_affinity: 0.5,
        }
    }
}

/// The planted task: swap lexicon, templates, and the shared vocabulary.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub vocab: Vocabulary,
    /// Bijective source-style word -> target-style word pairs.
    pub swap: Vec<(String, String)>,
    pub templates: Vec<Template>,
    swap_fwd: HashMap<u32, u32>,
    swap_bwd: HashMap<u32, u32>,
}

impl SyntheticTask {
    /// Ground-truth transfer: the lexicon swap applied in place.
    pub fn ground_truth(&self, sentence: &[u32], direction: Direction) -> Vec<u32> {
        let map = match direction {
            Direction::SourceToTarget => &self.swap_fwd,
            Direction::TargetToSource => &self.swap_bwd,
        };
        sentence
            .iter()
            .map(|id| map.get(id).copied().unwrap_or(*id))
            .collect()
    }

    /// Detokenized ground-truth references for every sentence of a corpus.
    pub fn references(&self, corpus: &StyleCorpus, direction: Direction) -> Vec<String> {
        corpus
            .sentences
            .iter()
            .map(|s| self.vocab.decode(&self.ground_truth(s, direction)))
            .collect()
    }

    /// Dump the swap lexicon as TSV: `source<TAB>target`.
    pub fn write_lexicon_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (s, t) in &self.swap {
            out.push_str(s);
            out.push('\t');
            out.push_str(t);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Everything one benchmark instance provides.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub train: [StyleCorpus; 2],
    pub dev: [StyleCorpus; 2],
    pub test: [StyleCorpus; 2],
    pub task: SyntheticTask,
}

/// Spec-shaped convenience wrapper over [`generate`].
pub fn generate_synthetic(
    seed: u64,
    n_templates: usize,
    n_sentences: usize,
    lexicon_size: usize,
) -> Result<(StyleCorpus, StyleCorpus, SyntheticTask)> {
    let cfg = SynthConfig {
        seed,
        n_templates,
        n_sentences,
        lexicon_size,
        ..SynthConfig::default()
    };
    let out = generate(&cfg)?;
    let [train_s, train_t] = out.train;
    Ok((train_s, train_t, out.task))
}

/// Generate the benchmark deterministically from the seed.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    if cfg.lexicon_size < 2 {
        return Err(Error::InvalidConfig("lexicon_size must be >= 2".into()));
    }
    if cfg.n_sentences == 0 {
        return Err(Error::InvalidConfig("n_sentences must be >= 1".into()));
    }
    if cfg.n_templates == 0 {
        return Err(Error::InvalidConfig("n_templates must be >= 1".into()));
    }
    for (name, value) in [
        ("marker_affinity", cfg.marker_affinity),
        ("content_skew", cfg.content_skew),
        ("content_affinity", cfg.content_affinity),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
        }
    }

    let swap = build_swap_lexicon(cfg.lexicon_size);
    let templates = build_templates(cfg.n_templates, cfg.seed);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen_split = |rng: &mut ChaCha8Rng, n: usize, affinity: f64| -> [Vec<Vec<String>>; 2] {
        let src = gen_style(rng, cfg, &templates, &swap, StyleId::Source, n, affinity);
        let tgt = gen_style(rng, cfg, &templates, &swap, StyleId::Target, n, affinity);
        [src, tgt]
    };

    let train_raw = gen_split(&mut rng, cfg.n_sentences, cfg.marker_affinity);
    // Dev and test pair markers with templates uniformly.
    let dev_raw = gen_split(&mut rng, cfg.n_dev, 0.0);
    let test_raw = gen_split(&mut rng, cfg.n_test, 0.0);

    let vocab = Vocabulary::build(&train_raw[0], &train_raw[1], 10_000, 1)?;

    let swap_fwd: HashMap<u32, u32> = swap
        .iter()
        .map(|(s, t)| (vocab.id(s), vocab.id(t)))
        .collect();
    let swap_bwd: HashMap<u32, u32> = swap_fwd.iter().map(|(&a, &b)| (b, a)).collect();

    let label = |style: StyleId| match style {
        StyleId::Source => StyleLabel::new(style, "style0"),
        StyleId::Target => StyleLabel::new(style, "style1"),
    };
    let to_corpora = |raw: &[Vec<Vec<String>>; 2]| -> Result<[StyleCorpus; 2]> {
        Ok([
            index_corpus(&raw[0], label(StyleId::Source), &vocab)?,
            index_corpus(&raw[1], label(StyleId::Target), &vocab)?,
        ])
    };

    let train = to_corpora(&train_raw)?;
    let dev = to_corpora(&dev_raw)?;
    let test = to_corpora(&test_raw)?;

    debug_assert!(marker_counts_ok(&train_raw, &swap, cfg));

    let task = SyntheticTask {
        vocab,
        swap,
        templates,
        swap_fwd,
        swap_bwd,
    };
    Ok(SynthOutput {
        train,
        dev,
        test,
        task,
    })
}

fn build_swap_lexicon(size: usize) -> Vec<(String, String)> {
    (0..size)
        .map(|i| {
            let base = i % SOURCE_MARKERS.len();
            let round = i / SOURCE_MARKERS.len();
            if round == 0 {
                (SOURCE_MARKERS[base].to_string(), TARGET_MARKERS[base].to_string())
            } else {
                (
                    format!("{}{}", SOURCE_MARKERS[base], round),
                    format!("{}{}", TARGET_MARKERS[base], round),
                )
            }
        })
        .collect()
}

fn build_templates(n: usize, seed: u64) -> Vec<Template> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7e11));
    let lit = |s: &str| TemplateItem::Literal(s.to_string());
    (0..n)
        .map(|j| {
            let opener = lit(OPENERS[rng.gen_range(0..OPENERS.len())]);
            let mid = lit(MIDS[j % MIDS.len()]);
            let verb = lit(VERBS[rng.gen_range(0..VERBS.len())]);
            let items = match j % 4 {
                0 => vec![
                    opener,
                    TemplateItem::Content(ContentBank::Nouns),
                    mid,
                    TemplateItem::Marker,
                    lit("."),
                ],
                1 => vec![
                    lit("i"),
                    verb,
                    lit("the"),
                    TemplateItem::Content(ContentBank::Nouns),
                    lit("and"),
                    lit("it"),
                    mid,
                    TemplateItem::Marker,
                    lit("."),
                ],
                2 => vec![
                    TemplateItem::Content(ContentBank::Adjuncts),
                    opener,
                    TemplateItem::Content(ContentBank::Nouns),
                    mid,
                    TemplateItem::Marker,
                    lit("."),
                ],
                _ => vec![
                    opener,
                    TemplateItem::Content(ContentBank::Nouns),
                    mid,
                    TemplateItem::Marker,
                    TemplateItem::Content(ContentBank::Adjuncts),
                    lit("."),
                ],
            };
            Template { items }
        })
        .collect()
}

fn gen_style(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    templates: &[Template],
    swap: &[(String, String)],
    style: StyleId,
    n: usize,
    affinity: f64,
) -> Vec<Vec<String>> {
    (0..n)
        .map(|j| {
            // Round-robin over markers keeps every lexicon entry frequent.
            let marker = j % swap.len();
            let home = marker % templates.len();
            let template = if rng.gen_bool(affinity) {
                home
            } else {
                rng.gen_range(0..templates.len())
            };
            render(rng, cfg, &templates[template], template, swap, style, marker)
        })
        .collect()
}

fn render(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    template: &Template,
    template_idx: usize,
    swap: &[(String, String)],
    style: StyleId,
    marker: usize,
) -> Vec<String> {
    template
        .items
        .iter()
        .map(|item| match item {
            TemplateItem::Literal(w) => w.clone(),
            TemplateItem::Marker => {
                let (s, t) = &swap[marker];
                match style {
                    StyleId::Source => s.clone(),
                    StyleId::Target => t.clone(),
                }
            }
            TemplateItem::Content(bank) => pick_content(rng, cfg, *bank, template_idx, style),
        })
        .collect()
}

/// Even-indexed bank words lean toward the source style, odd toward the
/// target style; `content_skew` is the chance of picking from the own-style
/// half. With probability `content_affinity` the draw is further confined
/// to the template's slice of the bank, giving content words distinct
/// contexts.
fn pick_content(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    bank: ContentBank,
    template_idx: usize,
    style: StyleId,
) -> String {
    let words = bank.words();
    let own = rng.gen_bool(cfg.content_skew);
    let want_source_leaning = match style {
        StyleId::Source => own,
        StyleId::Target => !own,
    };
    let parity = if want_source_leaning { 0 } else { 1 };
    let half: Vec<&str> = words
        .iter()
        .copied()
        .enumerate()
        .filter(|(i, _)| i % 2 == parity)
        .map(|(_, w)| w)
        .collect();
    if rng.gen_bool(cfg.content_affinity) {
        // A window of 3 consecutive half-bank words per template; windows
        // overlap so the differentiation stays soft.
        let start = (template_idx * 2) % half.len();
        let slice: Vec<&str> = (0..3.min(half.len()))
            .map(|o| half[(start + o) % half.len()])
            .collect();
        slice[rng.gen_range(0..slice.len())].to_string()
    } else {
        half[rng.gen_range(0..half.len())].to_string()
    }
}

fn marker_counts_ok(raw: &[Vec<Vec<String>>; 2], swap: &[(String, String)], cfg: &SynthConfig) -> bool {
    let floor = (cfg.n_sentences / cfg.lexicon_size).min(10);
    for (style, stream) in raw.iter().enumerate() {
        for (s, t) in swap {
            let word = if style == 0 { s } else { t };
            let count = stream.iter().flatten().filter(|w| *w == word).count();
            if count < floor {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn word_pools_are_disjoint() {
        let mut seen = HashSet::new();
        for w in OPENERS
            .iter()
            .chain(MIDS.iter())
            .chain(VERBS.iter())
            .chain(NOUNS.iter())
            .chain(ADJUNCTS.iter())
            .chain(SOURCE_MARKERS.iter())
            .chain(TARGET_MARKERS.iter())
        {
            assert!(seen.insert(*w), "duplicate pool word: {w}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            n_sentences: 50,
            n_dev: 10,
            n_test: 10,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.train[0].sentences, b.train[0].sentences);
        assert_eq!(a.train[1].sentences, b.train[1].sentences);
        assert_eq!(a.test[0].sentences, b.test[0].sentences);
        assert_eq!(a.task.swap, b.task.swap);
    }

    #[test]
    fn swap_lexicon_is_a_bijection() {
        let swap = build_swap_lexicon(40);
        let sources: HashSet<_> = swap.iter().map(|(s, _)| s).collect();
        let targets: HashSet<_> = swap.iter().map(|(_, t)| t).collect();
        assert_eq!(sources.len(), 40);
        assert_eq!(targets.len(), 40);
        assert!(sources.is_disjoint(&targets));
    }

    #[test]
    fn every_sentence_contains_a_marker() {
        let cfg = SynthConfig {
            n_sentences: 80,
            n_dev: 20,
            n_test: 20,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let marker_ids: HashSet<u32> = out
            .task
            .swap
            .iter()
            .flat_map(|(s, t)| [out.task.vocab.id(s), out.task.vocab.id(t)])
            .collect();
        for corpus in out.train.iter().chain(out.dev.iter()).chain(out.test.iter()) {
            for sentence in &corpus.sentences {
                assert!(sentence.iter().any(|id| marker_ids.contains(id)));
            }
        }
    }

    #[test]
    fn lexicon_entries_stay_frequent() {
        let cfg = SynthConfig {
            n_sentences: 2000,
            lexicon_size: 20,
            n_dev: 10,
            n_test: 10,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        for (s, t) in &out.task.swap {
            for (corpus, word) in [(&out.train[0], s), (&out.train[1], t)] {
                let id = out.task.vocab.id(word);
                let count = corpus
                    .sentences
                    .iter()
                    .flatten()
                    .filter(|&&x| x == id)
                    .count();
                assert!(count >= 10, "{word} appears only {count} times");
            }
        }
    }

    #[test]
    fn ground_truth_swaps_in_place() {
        let cfg = SynthConfig {
            n_sentences: 40,
            n_dev: 5,
            n_test: 5,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let task = &out.task;
        for sentence in &out.train[0].sentences {
            let fwd = task.ground_truth(sentence, Direction::SourceToTarget);
            assert_eq!(fwd.len(), sentence.len());
            assert_ne!(&fwd, sentence, "sentence should contain a swapped word");
            let back = task.ground_truth(&fwd, Direction::TargetToSource);
            assert_eq!(&back, sentence, "swap must be involutive");
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        let bad = SynthConfig {
            lexicon_size: 1,
            ..SynthConfig::default()
        };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig {
            n_sentences: 0,
            ..SynthConfig::default()
        };
        assert!(generate(&bad).is_err());
    }
}
