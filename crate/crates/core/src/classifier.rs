//! Bidirectional-GRU style classifier with average pooling and a sigmoid
//! output. Supplies reward weights during back-translation training and the
//! transfer-accuracy metric during evaluation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::checkpoint;
use crate::corpus::{StyleCorpus, StyleId};
use crate::error::{Error, Result};
use crate::eval::StyleScorer;
use crate::optim::{Adadelta, AdadeltaConfig};
use crate::seq2seq::glorot_std;

/// Model dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl ClassifierConfig {
    pub fn new(vocab_size: usize, dim: usize) -> ClassifierConfig {
        ClassifierConfig {
            vocab_size,
            embed_dim: dim,
            hidden_dim: dim,
        }
    }
}

/// Training loop settings.
#[derive(Clone, Debug)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Held-out fraction per class for early stopping.
    pub dev_fraction: f64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub adadelta: AdadeltaConfig,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 30,
            batch_size: 32,
            dev_fraction: 0.1,
            patience: 5,
            adadelta: AdadeltaConfig::default(),
            seed: 101,
        }
    }
}

fn param_shapes(config: &ClassifierConfig) -> Vec<(String, (usize, usize))> {
    let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
    let mut shapes = vec![("embed".to_string(), (v, e))];
    for prefix in ["fwd", "bwd"] {
        for gate in ["z", "r", "n"] {
            shapes.push((format!("{prefix}.w{gate}"), (e, h)));
            shapes.push((format!("{prefix}.u{gate}"), (h, h)));
            shapes.push((format!("{prefix}.b{gate}"), (1, h)));
        }
    }
    shapes.push(("out_w".to_string(), (2 * h, 1)));
    shapes.push(("out_b".to_string(), (1, 1)));
    shapes
}

/// The classifier: config plus parameters in canonical order.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    params: Vec<Tensor>,
}

/// Fresh random parameters (normal weights, zero biases).
pub fn init_classifier(config: &ClassifierConfig, seed: u64) -> ClassifierModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = param_shapes(config)
        .into_iter()
        .map(|(name, (rows, cols))| {
            if name.contains(".b") || name.ends_with("_b") {
                Tensor::zeros(rows, cols)
            } else {
                Tensor::randn(rows, cols, glorot_std(rows, cols), &mut rng)
            }
        })
        .collect();
    ClassifierModel {
        config: config.clone(),
        params,
    }
}

struct GruNodes {
    wz: NodeId,
    uz: NodeId,
    bz: NodeId,
    wr: NodeId,
    ur: NodeId,
    br: NodeId,
    wn: NodeId,
    un: NodeId,
    bn: NodeId,
}

struct Nodes {
    embed: NodeId,
    fwd: GruNodes,
    bwd: GruNodes,
    out_w: NodeId,
    out_b: NodeId,
}

fn nodes_from_ids(ids: &[NodeId]) -> Nodes {
    let gru = |s: &[NodeId]| GruNodes {
        wz: s[0],
        uz: s[1],
        bz: s[2],
        wr: s[3],
        ur: s[4],
        br: s[5],
        wn: s[6],
        un: s[7],
        bn: s[8],
    };
    Nodes {
        embed: ids[0],
        fwd: gru(&ids[1..10]),
        bwd: gru(&ids[10..19]),
        out_w: ids[19],
        out_b: ids[20],
    }
}

fn gru_step(tape: &mut Tape, g: &GruNodes, x: NodeId, h: NodeId) -> NodeId {
    let gate = |tape: &mut Tape, w, u, b| {
        let xw = tape.matmul(x, w);
        let hu = tape.matmul(h, u);
        let s = tape.add(xw, hu);
        tape.add(s, b)
    };
    let z_pre = gate(tape, g.wz, g.uz, g.bz);
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, g.wr, g.ur, g.br);
    let r = tape.sigmoid(r_pre);
    let xw = tape.matmul(x, g.wn);
    let rh = tape.mul(r, h);
    let rhu = tape.matmul(rh, g.un);
    let pre = tape.add(xw, rhu);
    let pre = tape.add(pre, g.bn);
    let n = tape.tanh(pre);
    let zn = tape.mul(z, n);
    let zh = tape.mul(z, h);
    let diff = tape.sub(n, zn);
    tape.add(diff, zh)
}

/// Logit for one sentence: BiGRU states, average pooling, linear readout.
fn sentence_logit(
    tape: &mut Tape,
    nodes: &Nodes,
    config: &ClassifierConfig,
    sentence: &[u32],
) -> NodeId {
    let h = config.hidden_dim;
    let embedded = tape.embed_lookup(nodes.embed, sentence);
    let mut fwd_states = Vec::with_capacity(sentence.len());
    let mut state = tape.leaf(Tensor::zeros(1, h));
    for i in 0..sentence.len() {
        let xi = tape.row(embedded, i);
        state = gru_step(tape, &nodes.fwd, xi, state);
        fwd_states.push(state);
    }
    let mut bwd_states = Vec::with_capacity(sentence.len());
    let mut state = tape.leaf(Tensor::zeros(1, h));
    for i in (0..sentence.len()).rev() {
        let xi = tape.row(embedded, i);
        state = gru_step(tape, &nodes.bwd, xi, state);
        bwd_states.push(state);
    }
    bwd_states.reverse();
    let per_pos: Vec<NodeId> = (0..sentence.len())
        .map(|i| tape.concat_cols(&[fwd_states[i], bwd_states[i]]))
        .collect();
    let stacked = tape.concat_rows(&per_pos);
    let pooled = tape.mean_rows(stacked);
    let logit = tape.matmul(pooled, nodes.out_w);
    tape.add(logit, nodes.out_b)
}

/// Mean binary cross entropy over a labeled batch. Public so gradient
/// checks can drive the full loss.
pub fn build_classifier_loss(
    config: &ClassifierConfig,
    tape: &mut Tape,
    params: &[NodeId],
    batch: &[(Vec<u32>, f64)],
) -> NodeId {
    let nodes = nodes_from_ids(params);
    let mut sum: Option<NodeId> = None;
    for (sentence, label) in batch {
        let logit = sentence_logit(tape, &nodes, config, sentence);
        let loss = tape.bce_with_logit(logit, *label);
        sum = Some(match sum {
            Some(acc) => tape.add(acc, loss),
            None => loss,
        });
    }
    let sum = sum.expect("non-empty batch");
    tape.scale(sum, 1.0 / batch.len() as f64)
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrace {
    pub dev_accuracy: Vec<f64>,
    pub train_accuracy: f64,
    pub stopped_early: bool,
}

impl ClassifierModel {
    fn names(&self) -> Vec<String> {
        param_shapes(&self.config).into_iter().map(|(n, _)| n).collect()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        param_shapes(&self.config).into_iter().map(|(_, s)| s).collect()
    }

    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        self.names().into_iter().zip(self.params.iter().cloned()).collect()
    }

    /// Probability the sentence reads as the target style.
    pub fn predict_target(&self, sentence: &[u32]) -> Result<f64> {
        if sentence.is_empty() {
            return Err(Error::EmptyCorpus("classifier input".into()));
        }
        for &id in sentence {
            if id as usize >= self.config.vocab_size {
                return Err(Error::BadTokenId(id));
            }
        }
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let nodes = nodes_from_ids(&ids);
        let logit = sentence_logit(&mut tape, &nodes, &self.config, sentence);
        let z = tape.value(logit).item();
        Ok(1.0 / (1.0 + (-z).exp()))
    }

    /// Complement probability; exactly `1 - predict_target`.
    pub fn predict_source(&self, sentence: &[u32]) -> Result<f64> {
        Ok(1.0 - self.predict_target(sentence)?)
    }

    /// Probability that the sentence belongs to `style`.
    pub fn predict_style(&self, sentence: &[u32], style: StyleId) -> Result<f64> {
        match style {
            StyleId::Target => self.predict_target(sentence),
            StyleId::Source => self.predict_source(sentence),
        }
    }

    /// Decision-threshold accuracy on labeled examples.
    pub fn accuracy(&self, examples: &[(Vec<u32>, f64)]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::EmptyCorpus("accuracy input".into()));
        }
        let mut hits = 0usize;
        for (sentence, label) in examples {
            let p = self.predict_target(sentence)?;
            if (p > 0.5) == (*label > 0.5) {
                hits += 1;
            }
        }
        Ok(hits as f64 / examples.len() as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let config_json = serde_json::to_string(&self.config)
            .map_err(|e| Error::Numerical(format!("config serialization: {e}")))?;
        checkpoint::save(path, "classifier", &config_json, &self.tensors())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ClassifierModel> {
        let ckpt = checkpoint::load(&path)?;
        let bad = |detail: String| Error::Parse {
            path: path.as_ref().display().to_string(),
            detail,
        };
        if ckpt.kind != "classifier" {
            return Err(bad(format!(
                "expected a classifier checkpoint, got `{}`",
                ckpt.kind
            )));
        }
        let config: ClassifierConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| bad(format!("bad config: {e}")))?;
        let mut params = Vec::new();
        for (name, (rows, cols)) in param_shapes(&config) {
            let tensor = ckpt
                .tensor(&name)
                .ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
            if tensor.shape() != (rows, cols) {
                return Err(bad(format!("tensor `{name}` has the wrong shape")));
            }
            params.push(tensor.clone());
        }
        Ok(ClassifierModel { config, params })
    }
}

impl StyleScorer for ClassifierModel {
    fn target_prob(&self, sentence: &[u32]) -> Result<f64> {
        self.predict_target(sentence)
    }
}

/// Train by MLE on the two style corpora (source label 0, target label 1),
/// with a stratified dev split and early stopping on dev accuracy.
pub fn train_classifier(
    x: &StyleCorpus,
    y: &StyleCorpus,
    config: &ClassifierConfig,
    train: &ClassifierTrainConfig,
    seed: u64,
) -> Result<(ClassifierModel, ClassifierTrace)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCorpus(
            "classifier training needs both styles".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut split = |corpus: &StyleCorpus, label: f64| -> (Vec<(Vec<u32>, f64)>, Vec<(Vec<u32>, f64)>) {
        let mut examples: Vec<(Vec<u32>, f64)> = corpus
            .sentences
            .iter()
            .map(|s| (s.clone(), label))
            .collect();
        examples.shuffle(&mut rng);
        let dev_len = ((examples.len() as f64 * train.dev_fraction) as usize)
            .min(examples.len() - 1);
        let dev = examples.split_off(examples.len() - dev_len);
        (examples, dev)
    };
    let (mut train_set, mut dev_set) = split(x, 0.0);
    let (train_y, dev_y) = split(y, 1.0);
    train_set.extend(train_y);
    dev_set.extend(dev_y);

    let mut model = init_classifier(config, seed);
    let mut optimizer = Adadelta::new(train.adadelta, &model.shapes());
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut dev_accuracy = Vec::new();
    let mut stale = 0usize;
    let mut stopped_early = false;

    for _ in 0..train.epochs {
        train_set.shuffle(&mut rng);
        for batch in train_set.chunks(train.batch_size) {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = model.params.iter().map(|p| tape.param(p.clone())).collect();
            let loss = build_classifier_loss(config, &mut tape, &ids, batch);
            if !tape.value(loss).item().is_finite() {
                return Err(Error::Numerical("non-finite classifier loss".into()));
            }
            tape.backward(loss)?;
            let grads: Vec<Tensor> = ids
                .iter()
                .zip(model.shapes())
                .map(|(&id, (r, c))| {
                    tape.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(r, c))
                })
                .collect();
            let mut refs: Vec<&mut Tensor> = model.params.iter_mut().collect();
            optimizer.step(&mut refs, grads);
        }
        let acc = if dev_set.is_empty() {
            model.accuracy(&train_set)?
        } else {
            model.accuracy(&dev_set)?
        };
        dev_accuracy.push(acc);
        // Ties refresh the snapshot: accuracy saturates well before the
        // probabilities sharpen, and later parameters are the better ones.
        let improved = best.as_ref().map(|(b, _)| acc >= *b).unwrap_or(true);
        if improved {
            best = Some((acc, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= train.patience {
                stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    let train_accuracy = model.accuracy(&train_set)?;
    Ok((
        model,
        ClassifierTrace {
            dev_accuracy,
            train_accuracy,
            stopped_early,
        },
    ))
}
