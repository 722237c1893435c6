//! Automatic evaluation: case-insensitive corpus BLEU (multi-bleu semantics:
//! corpus-level BLEU-4, no smoothing) and style-transfer accuracy under a
//! held-out classifier.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{StyleCorpus, StyleId, Vocabulary};
use crate::error::{Error, Result};

const MAX_NGRAM: usize = 4;

/// Anything that can judge how strongly a sentence reads as the target
/// style. Implemented by the trained classifier; tests stub it.
pub trait StyleScorer {
    /// Probability that the sentence belongs to [`StyleId::Target`].
    fn target_prob(&self, sentence: &[u32]) -> Result<f64>;
}

/// Case-insensitive corpus-level BLEU-4 in percent, one reference per
/// hypothesis. Unsmoothed: any zero n-gram precision zeroes the score.
pub fn corpus_bleu(hypotheses: &[String], references: &[String]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidConfig(format!(
            "hypothesis/reference length mismatch: {} vs {}",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus("BLEU input".into()));
    }

    let mut correct = [0u64; MAX_NGRAM];
    let mut total = [0u64; MAX_NGRAM];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;

    for (hyp, reference) in hypotheses.iter().zip(references) {
        let hyp: Vec<String> = hyp.split_whitespace().map(str::to_lowercase).collect();
        let rf: Vec<String> = reference
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        hyp_len += hyp.len() as u64;
        ref_len += rf.len() as u64;
        for n in 1..=MAX_NGRAM {
            let (c, t) = clipped_matches(&hyp, &rf, n);
            correct[n - 1] += c;
            total[n - 1] += t;
        }
    }

    let mut log_sum = 0.0;
    for n in 0..MAX_NGRAM {
        if total[n] == 0 || correct[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (correct[n] as f64 / total[n] as f64).ln();
    }
    let precision = (log_sum / MAX_NGRAM as f64).exp();
    let brevity = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * precision * brevity)
}

/// Modified (clipped) n-gram matches of one hypothesis against one
/// reference, plus the number of hypothesis n-grams.
fn clipped_matches(hyp: &[String], rf: &[String], n: usize) -> (u64, u64) {
    if hyp.len() < n {
        return (0, 0);
    }
    let total = (hyp.len() - n + 1) as u64;
    let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
    if rf.len() >= n {
        for window in rf.windows(n) {
            *ref_counts.entry(window).or_insert(0) += 1;
        }
    }
    let mut hyp_counts: HashMap<&[String], u64> = HashMap::new();
    for window in hyp.windows(n) {
        *hyp_counts.entry(window).or_insert(0) += 1;
    }
    let correct = hyp_counts
        .iter()
        .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (correct, total)
}

/// Fraction of outputs the scorer assigns to `target` with probability
/// strictly above 0.5. Empty outputs count as failures.
pub fn transfer_accuracy(
    outputs: &[Vec<u32>],
    target: StyleId,
    scorer: &dyn StyleScorer,
) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::EmptyCorpus("transfer-accuracy input".into()));
    }
    let mut hits = 0usize;
    for sentence in outputs {
        if sentence.is_empty() {
            continue;
        }
        let p_target = scorer.target_prob(sentence)?;
        let p = match target {
            StyleId::Target => p_target,
            StyleId::Source => 1.0 - p_target,
        };
        if p > 0.5 {
            hits += 1;
        }
    }
    Ok(hits as f64 / outputs.len() as f64)
}

/// Per-sentence evaluation record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub input: String,
    pub output: Option<String>,
    pub reference: Option<String>,
    /// Classifier probability of the target style for the output.
    pub target_prob: Option<f64>,
    pub error: Option<String>,
}

/// Evaluation result for one system on one test corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub transfer_accuracy: f64,
    pub bleu: Option<f64>,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numerical(format!("report serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// TSV dump for error analysis: input, output, reference, probability.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                r.input,
                r.output.as_deref().unwrap_or(""),
                r.reference.as_deref().unwrap_or(""),
                r.target_prob.map(|p| format!("{p:.6}")).unwrap_or_default(),
            )
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    /// Short human-readable summary table.
    pub fn table(&self) -> String {
        let bleu = self
            .bleu
            .map(|b| format!("{b:.2}"))
            .unwrap_or_else(|| "-".into());
        format!(
            "system: {}\n  transfer accuracy: {:.1}%\n  BLEU: {}\n  sentences: {}\n",
            self.system,
            100.0 * self.transfer_accuracy,
            bleu,
            self.records.len()
        )
    }
}

/// Run a transfer system over a test corpus and assemble the report.
/// System failures are recorded per sentence, never fatal.
pub fn evaluate_system<F>(
    name: &str,
    mut system: F,
    test: &StyleCorpus,
    references: Option<&[String]>,
    scorer: &dyn StyleScorer,
    vocab: &Vocabulary,
) -> Result<EvalReport>
where
    F: FnMut(&[u32]) -> Result<Vec<u32>>,
{
    if test.is_empty() {
        return Err(Error::EmptyCorpus(format!("test corpus for `{name}`")));
    }
    if let Some(refs) = references {
        if refs.len() != test.len() {
            return Err(Error::InvalidConfig(format!(
                "{} references for {} test sentences",
                refs.len(),
                test.len()
            )));
        }
    }

    let target = test.style.id.other();
    let mut records = Vec::with_capacity(test.len());
    let mut outputs: Vec<Vec<u32>> = Vec::with_capacity(test.len());
    for (i, sentence) in test.sentences.iter().enumerate() {
        let reference = references.map(|r| r[i].clone());
        match system(sentence) {
            Ok(output) => {
                let prob = if output.is_empty() {
                    None
                } else {
                    Some(scorer.target_prob(&output)?)
                };
                records.push(EvalRecord {
                    input: vocab.decode(sentence),
                    output: Some(vocab.decode(&output)),
                    reference,
                    target_prob: prob,
                    error: None,
                });
                outputs.push(output);
            }
            Err(e) => {
                records.push(EvalRecord {
                    input: vocab.decode(sentence),
                    output: None,
                    reference,
                    target_prob: None,
                    error: Some(e.to_string()),
                });
                outputs.push(Vec::new());
            }
        }
    }

    let transfer_accuracy = {
        let mut hits = 0usize;
        for (output, record) in outputs.iter().zip(&records) {
            if output.is_empty() {
                continue;
            }
            let p_target = record.target_prob.expect("scored above");
            let p = match target {
                StyleId::Target => p_target,
                StyleId::Source => 1.0 - p_target,
            };
            if p > 0.5 {
                hits += 1;
            }
        }
        hits as f64 / outputs.len() as f64
    };

    let bleu = match references {
        Some(refs) => {
            let hyps: Vec<String> = records
                .iter()
                .map(|r| r.output.clone().unwrap_or_default())
                .collect();
            Some(corpus_bleu(&hyps, refs)?)
        }
        None => None,
    };

    Ok(EvalReport {
        system: name.to_string(),
        transfer_accuracy,
        bleu,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reference BLEU, written before the implementation above
    /// and kept structurally different: BTreeMap counting over owned n-gram
    /// vectors, precisions collected into a list, explicit geometric mean.
    pub fn reference_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
        use std::collections::BTreeMap;
        let mut precisions = Vec::new();
        for n in 1..=4usize {
            let mut matched = 0u64;
            let mut candidates = 0u64;
            for (h, r) in hyps.iter().zip(refs) {
                let grams = |s: &[String]| -> BTreeMap<Vec<String>, u64> {
                    let mut m = BTreeMap::new();
                    if s.len() >= n {
                        for i in 0..=(s.len() - n) {
                            *m.entry(s[i..i + n].to_vec()).or_insert(0) += 1;
                        }
                    }
                    m
                };
                let hg = grams(h);
                let rg = grams(r);
                for (g, c) in &hg {
                    matched += (*c).min(rg.get(g).copied().unwrap_or(0));
                    candidates += c;
                }
            }
            if candidates == 0 {
                return 0.0;
            }
            precisions.push(matched as f64 / candidates as f64);
        }
        if precisions.iter().any(|&p| p == 0.0) {
            return 0.0;
        }
        let geo = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        let c: usize = hyps.iter().map(Vec::len).sum();
        let r: usize = refs.iter().map(Vec::len).sum();
        let bp = if c < r {
            (1.0 - r as f64 / c as f64).exp()
        } else {
            1.0
        };
        100.0 * geo.exp() * bp
    }

    fn join(tokens: &[&str]) -> String {
        tokens.join(" ")
    }

    #[test]
    fn identical_corpus_scores_100() {
        let refs = vec![join(&["a", "b", "c", "d"]), join(&["x", "y", "z", "w", "v"])];
        assert_eq!(corpus_bleu(&refs, &refs).unwrap(), 100.0);
    }

    #[test]
    fn disjoint_corpus_scores_0() {
        let hyp = vec![join(&["a", "b", "c", "d"])];
        let rf = vec![join(&["x", "y", "z", "w"])];
        assert_eq!(corpus_bleu(&hyp, &rf).unwrap(), 0.0);
    }

    #[test]
    fn single_fourgram_miss_zeroes_unsmoothed_bleu() {
        // p4 = 0/1, so the unsmoothed geometric mean collapses.
        let hyp = vec![join(&["a", "b", "c", "d"])];
        let rf = vec![join(&["a", "b", "c", "e"])];
        assert_eq!(corpus_bleu(&hyp, &rf).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_precisions() {
        // p1=4/5, p2=3/4, p3=2/3, p4=1/2, c=r → BLEU = 100 * 0.2^(1/4).
        let hyp = vec![join(&["a", "b", "c", "d", "e"])];
        let rf = vec![join(&["a", "b", "c", "d", "f"])];
        let expected = 100.0 * 0.2f64.powf(0.25);
        assert!((corpus_bleu(&hyp, &rf).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn counts_are_clipped() {
        // "the" appears once in the reference: clipped p1 = 1/3.
        let hyp = vec![join(&["the", "the", "the"])];
        let rf = vec![join(&["the", "cat", "sat"])];
        let hyps: Vec<Vec<String>> = vec![vec!["the".into(), "the".into(), "the".into()]];
        let refs: Vec<Vec<String>> = vec![vec!["the".into(), "cat".into(), "sat".into()]];
        assert_eq!(corpus_bleu(&hyp, &rf).unwrap(), reference_bleu(&hyps, &refs));
    }

    #[test]
    fn case_insensitive() {
        let hyp = vec![join(&["A", "B", "C", "D", "e"])];
        let upper = vec![join(&["a", "b", "C", "D", "E"])];
        let rf = vec![join(&["a", "b", "c", "d", "f"])];
        assert_eq!(
            corpus_bleu(&hyp, &rf).unwrap(),
            corpus_bleu(&upper, &rf).unwrap()
        );
    }

    #[test]
    fn brevity_penalty_applies_only_to_short_output() {
        let hyp = vec![join(&["a", "b", "c", "d"])];
        let rf = vec![join(&["a", "b", "c", "d", "e"])];
        // All precisions 1, c=4 < r=5.
        let expected = 100.0 * (1.0f64 - 5.0 / 4.0).exp();
        assert!((corpus_bleu(&hyp, &rf).unwrap() - expected).abs() < 1e-9);
        // Longer-than-reference output pays through precision, not BP.
        let hyp = vec![join(&["a", "b", "c", "d", "e", "e"])];
        let rf2 = vec![join(&["a", "b", "c", "d", "e"])];
        let score = corpus_bleu(&hyp, &rf2).unwrap();
        assert!(score < 100.0 && score > 0.0);
    }

    #[test]
    fn corpus_level_permutation_invariance() {
        let hyp = vec![
            join(&["a", "b", "c", "d", "x"]),
            join(&["p", "q", "r", "s"]),
            join(&["m", "n", "o", "p", "q", "z"]),
        ];
        let rf = vec![
            join(&["a", "b", "c", "d", "e"]),
            join(&["p", "q", "r", "s"]),
            join(&["m", "n", "o", "p", "q", "y"]),
        ];
        let base = corpus_bleu(&hyp, &rf).unwrap();
        let perm = [2usize, 0, 1];
        let hyp_p: Vec<String> = perm.iter().map(|&i| hyp[i].clone()).collect();
        let rf_p: Vec<String> = perm.iter().map(|&i| rf[i].clone()).collect();
        assert_eq!(base, corpus_bleu(&hyp_p, &rf_p).unwrap());
    }

    #[test]
    fn matches_reference_bleu_on_random_corpora() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let alphabet = ["a", "b", "c", "d", "e", "f", "g", "h"];
        for _ in 0..20 {
            let n_sents = rng.gen_range(1..8);
            let mut hyps = Vec::new();
            let mut refs = Vec::new();
            for _ in 0..n_sents {
                let len = rng.gen_range(1..12);
                let rf: Vec<String> = (0..len)
                    .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
                    .collect();
                // Perturb the reference so overlaps are common but imperfect.
                let mut hyp = rf.clone();
                for tok in hyp.iter_mut() {
                    if rng.gen_bool(0.25) {
                        *tok = alphabet[rng.gen_range(0..alphabet.len())].to_string();
                    }
                }
                if rng.gen_bool(0.2) {
                    hyp.push(alphabet[rng.gen_range(0..alphabet.len())].to_string());
                }
                hyps.push(hyp);
                refs.push(rf);
            }
            let expected = reference_bleu(&hyps, &refs);
            let got = corpus_bleu(
                &hyps.iter().map(|s| s.join(" ")).collect::<Vec<_>>(),
                &refs.iter().map(|s| s.join(" ")).collect::<Vec<_>>(),
            )
            .unwrap();
            assert!(
                (got - expected).abs() < 0.01,
                "BLEU mismatch: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn length_mismatch_and_empty_error() {
        assert!(corpus_bleu(&["a".into()], &[]).is_err());
        assert!(corpus_bleu(&[], &[]).is_err());
    }

    struct FixedScorer(f64);
    impl StyleScorer for FixedScorer {
        fn target_prob(&self, _sentence: &[u32]) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn accuracy_counts_strict_majority_only() {
        let outputs = vec![vec![5, 6], vec![7]];
        assert_eq!(
            transfer_accuracy(&outputs, StyleId::Target, &FixedScorer(0.7)).unwrap(),
            1.0
        );
        // Exactly 0.5 counts against the system.
        assert_eq!(
            transfer_accuracy(&outputs, StyleId::Target, &FixedScorer(0.5)).unwrap(),
            0.0
        );
        // Source-style accuracy uses the complement.
        assert_eq!(
            transfer_accuracy(&outputs, StyleId::Source, &FixedScorer(0.2)).unwrap(),
            1.0
        );
    }

    #[test]
    fn empty_outputs_count_as_failures() {
        let outputs = vec![vec![5, 6], vec![]];
        assert_eq!(
            transfer_accuracy(&outputs, StyleId::Target, &FixedScorer(0.9)).unwrap(),
            0.5
        );
    }
}
