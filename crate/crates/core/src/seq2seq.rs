//! Attention-based GRU encoder-decoder: a bidirectional single-layer
//! encoder, additive attention, teacher-forced likelihoods, weighted-example
//! Adadelta training, and length-bounded beam decoding.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::checkpoint;
use crate::corpus::{BOS, EOS, PAD};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::optim::{Adadelta, AdadeltaConfig};

/// Model dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
}

impl Seq2SeqConfig {
    pub fn new(vocab_size: usize, dim: usize) -> Seq2SeqConfig {
        Seq2SeqConfig {
            vocab_size,
            embed_dim: dim,
            hidden_dim: dim,
            attn_dim: dim,
        }
    }
}

/// Weight shapes for one GRU cell, input width `input` and state `hidden`.
fn gru_shapes(prefix: &str, input: usize, hidden: usize) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::with_capacity(9);
    for gate in ["z", "r", "n"] {
        out.push((format!("{prefix}.w{gate}"), (input, hidden)));
        out.push((format!("{prefix}.u{gate}"), (hidden, hidden)));
        out.push((format!("{prefix}.b{gate}"), (1, hidden)));
    }
    out
}

/// Canonical (name, shape) list for every parameter tensor.
pub fn param_shapes(config: &Seq2SeqConfig) -> Vec<(String, (usize, usize))> {
    let (v, e, h, a) = (
        config.vocab_size,
        config.embed_dim,
        config.hidden_dim,
        config.attn_dim,
    );
    let mut shapes = vec![
        ("src_embed".to_string(), (v, e)),
        ("tgt_embed".to_string(), (v, e)),
    ];
    shapes.extend(gru_shapes("enc_fwd", e, h));
    shapes.extend(gru_shapes("enc_bwd", e, h));
    shapes.push(("init_w".to_string(), (2 * h, h)));
    shapes.push(("init_b".to_string(), (1, h)));
    shapes.extend(gru_shapes("dec", e + 2 * h, h));
    shapes.push(("attn_w".to_string(), (h, a)));
    shapes.push(("attn_u".to_string(), (2 * h, a)));
    shapes.push(("attn_b".to_string(), (1, a)));
    shapes.push(("attn_v".to_string(), (a, 1)));
    shapes.push(("out_w".to_string(), (h + 2 * h + e, v)));
    shapes.push(("out_b".to_string(), (1, v)));
    shapes
}

/// One directional transfer model: config plus parameter tensors in
/// canonical order.
#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    pub config: Seq2SeqConfig,
    params: Vec<Tensor>,
}

/// Draw a weight matrix from N(0, sqrt(6/(rows+cols))); the expression is
/// read as the standard deviation.
pub fn glorot_std(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Initialize all parameters: normal matrices, zero biases. Deterministic
/// under the seed.
pub fn init_params(config: &Seq2SeqConfig, seed: u64) -> Seq2SeqModel {
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
    Seq2SeqModel {
        config: config.clone(),
        params,
    }
}

/// Node handles for one registered GRU cell.
#[derive(Clone, Copy)]
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

impl GruNodes {
    fn from_slice(ids: &[NodeId]) -> GruNodes {
        GruNodes {
            wz: ids[0],
            uz: ids[1],
            bz: ids[2],
            wr: ids[3],
            ur: ids[4],
            br: ids[5],
            wn: ids[6],
            un: ids[7],
            bn: ids[8],
        }
    }
}

/// All registered parameters, grouped by role.
struct ModelNodes {
    src_embed: NodeId,
    tgt_embed: NodeId,
    enc_fwd: GruNodes,
    enc_bwd: GruNodes,
    init_w: NodeId,
    init_b: NodeId,
    dec: GruNodes,
    attn_w: NodeId,
    attn_u: NodeId,
    attn_b: NodeId,
    attn_v: NodeId,
    out_w: NodeId,
    out_b: NodeId,
}

impl ModelNodes {
    fn from_ids(ids: &[NodeId]) -> ModelNodes {
        ModelNodes {
            src_embed: ids[0],
            tgt_embed: ids[1],
            enc_fwd: GruNodes::from_slice(&ids[2..11]),
            enc_bwd: GruNodes::from_slice(&ids[11..20]),
            init_w: ids[20],
            init_b: ids[21],
            dec: GruNodes::from_slice(&ids[22..31]),
            attn_w: ids[31],
            attn_u: ids[32],
            attn_b: ids[33],
            attn_v: ids[34],
            out_w: ids[35],
            out_b: ids[36],
        }
    }
}

fn gru_step(tape: &mut Tape, g: &GruNodes, x: NodeId, h: NodeId) -> NodeId {
    let step_gate = |tape: &mut Tape, w, u, b| {
        let xw = tape.matmul(x, w);
        let hu = tape.matmul(h, u);
        let s = tape.add(xw, hu);
        tape.add(s, b)
    };
    let z_pre = step_gate(tape, g.wz, g.uz, g.bz);
    let z = tape.sigmoid(z_pre);
    let r_pre = step_gate(tape, g.wr, g.ur, g.br);
    let r = tape.sigmoid(r_pre);
    let xw = tape.matmul(x, g.wn);
    let rh = tape.mul(r, h);
    let rhu = tape.matmul(rh, g.un);
    let n_pre = tape.add(xw, rhu);
    let n_pre = tape.add(n_pre, g.bn);
    let n = tape.tanh(n_pre);
    // h' = n - z*n + z*h
    let zn = tape.mul(z, n);
    let zh = tape.mul(z, h);
    let diff = tape.sub(n, zn);
    tape.add(diff, zh)
}

/// Encoder output: per-position bidirectional states and the projected
/// initial decoder state.
struct Encoded {
    states: NodeId,
    states_proj: NodeId,
    dec_init: NodeId,
}

fn encode(tape: &mut Tape, nodes: &ModelNodes, config: &Seq2SeqConfig, x: &[u32]) -> Encoded {
    let h = config.hidden_dim;
    let embedded = tape.embed_lookup(nodes.src_embed, x);
    let mut fwd_states = Vec::with_capacity(x.len());
    let mut state = tape.leaf(Tensor::zeros(1, h));
    for i in 0..x.len() {
        let xi = tape.row(embedded, i);
        state = gru_step(tape, &nodes.enc_fwd, xi, state);
        fwd_states.push(state);
    }
    let fwd_final = state;
    let mut bwd_states = Vec::with_capacity(x.len());
    let mut state = tape.leaf(Tensor::zeros(1, h));
    for i in (0..x.len()).rev() {
        let xi = tape.row(embedded, i);
        state = gru_step(tape, &nodes.enc_bwd, xi, state);
        bwd_states.push(state);
    }
    let bwd_final = state;
    bwd_states.reverse();

    let per_pos: Vec<NodeId> = (0..x.len())
        .map(|i| tape.concat_cols(&[fwd_states[i], bwd_states[i]]))
        .collect();
    let states = tape.concat_rows(&per_pos);
    let proj = tape.matmul(states, nodes.attn_u);
    let states_proj = tape.add_row(proj, nodes.attn_b);

    let summary = tape.concat_cols(&[fwd_final, bwd_final]);
    let init = tape.matmul(summary, nodes.init_w);
    let init = tape.add(init, nodes.init_b);
    let dec_init = tape.tanh(init);
    Encoded {
        states,
        states_proj,
        dec_init,
    }
}

/// One attention read: alignment over source positions and the context row.
fn attend(
    tape: &mut Tape,
    nodes: &ModelNodes,
    state: NodeId,
    enc: &Encoded,
) -> (NodeId, NodeId) {
    let sp = tape.matmul(state, nodes.attn_w);
    let pre = tape.add_row(enc.states_proj, sp);
    let act = tape.tanh(pre);
    let scores = tape.matmul(act, nodes.attn_v);
    let scores_row = tape.transpose(scores);
    let alpha = tape.softmax_rows(scores_row);
    let context = tape.matmul(alpha, enc.states);
    (context, alpha)
}

/// One decoder step from `state` after consuming `prev_embed`.
fn decode_step(
    tape: &mut Tape,
    nodes: &ModelNodes,
    state: NodeId,
    prev_embed: NodeId,
    enc: &Encoded,
) -> (NodeId, NodeId, NodeId) {
    let (context, alpha) = attend(tape, nodes, state, enc);
    let input = tape.concat_cols(&[prev_embed, context]);
    let next_state = gru_step(tape, &nodes.dec, input, state);
    let readout = tape.concat_cols(&[next_state, context, prev_embed]);
    let logits = tape.matmul(readout, nodes.out_w);
    let logits = tape.add(logits, nodes.out_b);
    (next_state, logits, alpha)
}

/// Graph for the weighted batch NLL: sum_i w_i * nll_i / sum_i w_i.
/// Public so gradient checks can drive the full loss through arbitrary
/// parameter nodes.
pub fn build_weighted_nll(
    config: &Seq2SeqConfig,
    tape: &mut Tape,
    params: &[NodeId],
    batch: &[(Vec<u32>, Vec<u32>, f64)],
) -> NodeId {
    let nodes = ModelNodes::from_ids(params);
    let total_weight: f64 = batch.iter().map(|(_, _, w)| w).sum();
    let mut sum: Option<NodeId> = None;
    for (x, y, weight) in batch {
        let enc = encode(tape, &nodes, config, x);
        let mut state = enc.dec_init;
        let mut prev = vec![BOS];
        prev.extend_from_slice(y);
        let mut nll: Option<NodeId> = None;
        for (j, &target) in y.iter().chain(std::iter::once(&EOS)).enumerate() {
            let prev_embed = tape.embed_lookup(nodes.tgt_embed, &[prev[j]]);
            let (next_state, logits, _) = decode_step(tape, &nodes, state, prev_embed, &enc);
            state = next_state;
            let ce = tape.cross_entropy(logits, target as usize);
            nll = Some(match nll {
                Some(acc) => tape.add(acc, ce),
                None => ce,
            });
        }
        let weighted = tape.scale(nll.expect("non-empty target"), *weight);
        sum = Some(match sum {
            Some(acc) => tape.add(acc, weighted),
            None => weighted,
        });
    }
    let sum = sum.expect("non-empty batch");
    tape.scale(sum, 1.0 / total_weight)
}

/// Ranked decode hypotheses.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedHyp {
    pub tokens: Vec<u32>,
    pub total_logp: f64,
    pub step_logps: Vec<f64>,
}

/// Beam search output, best hypothesis first.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub hyps: Vec<DecodedHyp>,
}

/// Diagnostics from one teacher-forced pass.
pub struct ForwardDiagnostics {
    pub total_logp: f64,
    pub step_logps: Vec<f64>,
    /// Attention row per decode step.
    pub attention: Vec<Vec<f64>>,
    /// Softmax mass per decode step (should be 1).
    pub prob_sums: Vec<f64>,
}

/// Per-step info returned by [`Seq2SeqModel::train_step`].
pub struct TrainStepInfo {
    pub loss: f64,
    pub grad_norm: f64,
}

impl Seq2SeqModel {
    pub fn names(&self) -> Vec<String> {
        param_shapes(&self.config)
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        param_shapes(&self.config)
            .into_iter()
            .map(|(_, s)| s)
            .collect()
    }

    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        self.names().into_iter().zip(self.params.iter().cloned()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names()
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    fn validate_sentence(&self, sentence: &[u32]) -> Result<()> {
        if sentence.is_empty() {
            return Err(Error::EmptyCorpus("seq2seq input sentence".into()));
        }
        for &id in sentence {
            if id as usize >= self.config.vocab_size {
                return Err(Error::BadTokenId(id));
            }
        }
        Ok(())
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.leaf(p.clone())
                }
            })
            .collect()
    }

    /// Teacher-forced log probability: total and per-step values.
    pub fn log_prob(&self, x: &[u32], y: &[u32]) -> Result<(f64, Vec<f64>)> {
        let d = self.forward_diagnostics(x, y)?;
        Ok((d.total_logp, d.step_logps))
    }

    /// Teacher-forced pass with attention rows and softmax mass per step.
    pub fn forward_diagnostics(&self, x: &[u32], y: &[u32]) -> Result<ForwardDiagnostics> {
        self.validate_sentence(x)?;
        self.validate_sentence(y)?;
        let mut tape = Tape::new();
        let ids = self.register(&mut tape, false);
        let nodes = ModelNodes::from_ids(&ids);
        let enc = encode(&mut tape, &nodes, &self.config, x);
        let mut state = enc.dec_init;
        let mut prev = vec![BOS];
        prev.extend_from_slice(y);
        let mut step_logps = Vec::with_capacity(y.len() + 1);
        let mut attention = Vec::with_capacity(y.len() + 1);
        let mut prob_sums = Vec::with_capacity(y.len() + 1);
        for (j, &target) in y.iter().chain(std::iter::once(&EOS)).enumerate() {
            let prev_embed = tape.embed_lookup(nodes.tgt_embed, &[prev[j]]);
            let (next_state, logits, alpha) = decode_step(&mut tape, &nodes, state, prev_embed, &enc);
            state = next_state;
            let logp = log_softmax_row(tape.value(logits).data());
            step_logps.push(logp[target as usize]);
            prob_sums.push(logp.iter().map(|v| v.exp()).sum());
            attention.push(tape.value(alpha).data().to_vec());
        }
        Ok(ForwardDiagnostics {
            total_logp: step_logps.iter().sum(),
            step_logps,
            attention,
            prob_sums,
        })
    }

    /// One weighted mini-batch update: gradients of the normalized weighted
    /// NLL, clipped to the optimizer's bound, applied with Adadelta.
    pub fn train_step(
        &mut self,
        batch: &[(Vec<u32>, Vec<u32>, f64)],
        optimizer: &mut Adadelta,
    ) -> Result<TrainStepInfo> {
        if batch.is_empty() {
            return Err(Error::EmptyCorpus("training batch".into()));
        }
        for (i, (x, y, w)) in batch.iter().enumerate() {
            self.validate_sentence(x)?;
            self.validate_sentence(y)?;
            if !(0.0..=1.0).contains(w) {
                return Err(Error::Numerical(format!(
                    "pair {i}: weight {w} outside [0, 1]"
                )));
            }
        }
        let total_weight: f64 = batch.iter().map(|(_, _, w)| w).sum();
        if total_weight == 0.0 {
            return Ok(TrainStepInfo {
                loss: 0.0,
                grad_norm: 0.0,
            });
        }

        let mut tape = Tape::new();
        let ids = self.register(&mut tape, true);
        let loss = build_weighted_nll(&self.config, &mut tape, &ids, batch);
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            let offender = batch
                .iter()
                .position(|(x, y, _)| {
                    self.log_prob(x, y)
                        .map(|(t, _)| !t.is_finite())
                        .unwrap_or(true)
                })
                .unwrap_or(0);
            return Err(Error::Numerical(format!(
                "non-finite loss; first offending pair index {offender}"
            )));
        }
        tape.backward(loss)?;
        let grads: Vec<Tensor> = ids
            .iter()
            .zip(self.shapes())
            .map(|(&id, (r, c))| tape.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(r, c)))
            .collect();
        let mut refs: Vec<&mut Tensor> = self.params.iter_mut().collect();
        let grad_norm = optimizer.step(&mut refs, grads);
        Ok(TrainStepInfo {
            loss: loss_value,
            grad_norm,
        })
    }

    /// Next-token log distribution after teacher-forcing `prefix`.
    pub fn next_token_logps(&self, x: &[u32], prefix: &[u32]) -> Result<Vec<f64>> {
        self.validate_sentence(x)?;
        for &id in prefix {
            if id as usize >= self.config.vocab_size {
                return Err(Error::BadTokenId(id));
            }
        }
        let mut tape = Tape::new();
        let ids = self.register(&mut tape, false);
        let nodes = ModelNodes::from_ids(&ids);
        let enc = encode(&mut tape, &nodes, &self.config, x);
        let mut state = enc.dec_init;
        let mut prev = vec![BOS];
        prev.extend_from_slice(prefix);
        let mut logits_value = None;
        for (j, _) in prev.iter().enumerate() {
            let prev_embed = tape.embed_lookup(nodes.tgt_embed, &[prev[j]]);
            let (next_state, logits, _) = decode_step(&mut tape, &nodes, state, prev_embed, &enc);
            state = next_state;
            logits_value = Some(tape.value(logits).data().to_vec());
        }
        Ok(log_softmax_row(&logits_value.expect("at least one step")))
    }

    /// Length-bounded beam search; raw log-probability scoring, ties broken
    /// by token sequence, hypotheses end at `</s>` or `max_len`.
    pub fn beam_decode(
        &self,
        x: &[u32],
        beam: usize,
        k: usize,
        max_len: usize,
    ) -> Result<DecodeResult> {
        if beam == 0 || k == 0 || k > beam {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= k <= beam, got k={k} beam={beam}"
            )));
        }
        self.validate_sentence(x)?;
        let mut tape = Tape::new();
        let ids = self.register(&mut tape, false);
        let nodes = ModelNodes::from_ids(&ids);
        let enc = encode(&mut tape, &nodes, &self.config, x);

        struct Live {
            tokens: Vec<u32>,
            steps: Vec<f64>,
            total: f64,
            state: NodeId,
            prev: u32,
        }
        let mut live = vec![Live {
            tokens: Vec::new(),
            steps: Vec::new(),
            total: 0.0,
            state: enc.dec_init,
            prev: BOS,
        }];
        let mut finished: Vec<DecodedHyp> = Vec::new();

        for _ in 0..max_len {
            if live.is_empty() {
                break;
            }
            let mut expansions: Vec<(usize, u32, f64)> = Vec::new();
            let mut next_states = Vec::with_capacity(live.len());
            for (li, hyp) in live.iter().enumerate() {
                let prev_embed = tape.embed_lookup(nodes.tgt_embed, &[hyp.prev]);
                let (next_state, logits, _) =
                    decode_step(&mut tape, &nodes, hyp.state, prev_embed, &enc);
                next_states.push(next_state);
                let logps = log_softmax_row(tape.value(logits).data());
                for (token, &logp) in logps.iter().enumerate() {
                    let token = token as u32;
                    if token == BOS || token == PAD {
                        continue;
                    }
                    expansions.push((li, token, logp));
                }
            }
            expansions.sort_by(|a, b| {
                let sa = live[a.0].total + a.2;
                let sb = live[b.0].total + b.2;
                sb.partial_cmp(&sa).unwrap().then_with(|| {
                    let ta = (&live[a.0].tokens, a.1);
                    let tb = (&live[b.0].tokens, b.1);
                    ta.cmp(&tb)
                })
            });

            let mut next_live: Vec<Live> = Vec::with_capacity(beam);
            for (li, token, logp) in expansions {
                if next_live.len() >= beam {
                    break;
                }
                let src = &live[li];
                let mut steps = src.steps.clone();
                steps.push(logp);
                let total = src.total + logp;
                if token == EOS {
                    finished.push(DecodedHyp {
                        tokens: src.tokens.clone(),
                        total_logp: total,
                        step_logps: steps,
                    });
                    continue;
                }
                let mut tokens = src.tokens.clone();
                tokens.push(token);
                next_live.push(Live {
                    tokens,
                    steps,
                    total,
                    state: next_states[li],
                    prev: token,
                });
            }
            live = next_live;
        }
        // Hypotheses cut off at max_len end without the terminal transition.
        for hyp in live {
            finished.push(DecodedHyp {
                tokens: hyp.tokens,
                total_logp: hyp.total,
                step_logps: hyp.steps,
            });
        }
        finished.sort_by(|a, b| {
            b.total_logp
                .partial_cmp(&a.total_logp)
                .unwrap()
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        finished.truncate(k);
        Ok(DecodeResult { hyps: finished })
    }

    /// Default decode length bound: transfer is near length-preserving.
    pub fn default_max_len(source_len: usize) -> usize {
        source_len + source_len / 2 + 5
    }

    /// Copy pretrained word vectors into both embedding tables.
    pub fn warm_start_embeddings(&mut self, emb: &EmbeddingMatrix) -> Result<()> {
        if emb.dim() != self.config.embed_dim {
            return Err(Error::InvalidConfig(format!(
                "warm start dim {} does not match embed dim {}",
                emb.dim(),
                self.config.embed_dim
            )));
        }
        if emb.vocab_len() != self.config.vocab_size {
            return Err(Error::InvalidConfig(
                "warm start vocabulary does not match the model".into(),
            ));
        }
        for slot in [0usize, 1] {
            let table = &mut self.params[slot];
            for id in 0..emb.vocab_len() as u32 {
                if emb.is_trained(id) {
                    let row = emb.row(id);
                    for (c, &v) in row.iter().enumerate() {
                        table.set(id as usize, c, v);
                    }
                }
            }
        }
        Ok(())
    }

    /// Write a bit-exact checkpoint, optionally with optimizer state.
    pub fn save(&self, path: impl AsRef<Path>, optimizer: Option<&Adadelta>) -> Result<()> {
        let config_json = serde_json::to_string(&self.config)
            .map_err(|e| Error::Numerical(format!("config serialization: {e}")))?;
        let mut tensors = self.tensors();
        if let Some(opt) = optimizer {
            tensors.extend(opt.state_tensors(&self.names()));
        }
        checkpoint::save(path, "seq2seq", &config_json, &tensors)
    }

    /// Load a checkpoint; returns the model and, when present, the
    /// optimizer state restored into a fresh Adadelta.
    pub fn load(
        path: impl AsRef<Path>,
        adadelta: AdadeltaConfig,
    ) -> Result<(Seq2SeqModel, Adadelta)> {
        let ckpt = checkpoint::load(&path)?;
        let bad = |detail: String| Error::Parse {
            path: path.as_ref().display().to_string(),
            detail,
        };
        if ckpt.kind != "seq2seq" {
            return Err(bad(format!("expected a seq2seq checkpoint, got `{}`", ckpt.kind)));
        }
        let config: Seq2SeqConfig = serde_json::from_str(&ckpt.config_json)
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
        let model = Seq2SeqModel { config, params };
        let mut opt = Adadelta::new(adadelta, &model.shapes());
        opt.load_state(&model.names(), &ckpt.tensors);
        Ok((model, opt))
    }

    pub fn new_optimizer(&self, config: AdadeltaConfig) -> Adadelta {
        Adadelta::new(config, &self.shapes())
    }
}

/// Log softmax of one logits row, shift-normalized.
pub fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_relative_error;

    fn tiny_config() -> Seq2SeqConfig {
        Seq2SeqConfig::new(10, 12)
    }

    fn toy_pairs(n: usize) -> Vec<(Vec<u32>, Vec<u32>, f64)> {
        // Deterministic toy mapping over ids 4..9: reverse and shift.
        (0..n)
            .map(|i| {
                let a = 4 + (i % 5) as u32;
                let b = 4 + ((i + 2) % 5) as u32;
                let c = 4 + ((i + 4) % 5) as u32;
                (vec![a, b, c], vec![c, a], 1.0)
            })
            .collect()
    }

    #[test]
    fn init_matches_declared_distribution() {
        let config = Seq2SeqConfig::new(12, 300);
        let model = init_params(&config, 3);
        // 300x300 recurrent matrix: std sqrt(6/600) ~ 0.1 within 5%.
        let uz = model.param("enc_fwd.uz").unwrap();
        assert_eq!(uz.shape(), (300, 300));
        let mean = uz.data().iter().sum::<f64>() / uz.numel() as f64;
        let std = (uz.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / uz.numel() as f64)
            .sqrt();
        let target = glorot_std(300, 300);
        assert!((std - target).abs() / target < 0.05, "std {std} vs {target}");
        // Biases are exactly zero.
        assert!(model.param("dec.bz").unwrap().data().iter().all(|&v| v == 0.0));
        // Same seed, same parameters.
        let again = init_params(&config, 3);
        assert_eq!(model.tensors(), again.tensors());
    }

    #[test]
    fn log_prob_is_a_log_probability() {
        let model = init_params(&tiny_config(), 1);
        let d = model.forward_diagnostics(&[4, 5, 6], &[7, 8]).unwrap();
        assert!(d.total_logp <= 0.0);
        assert_eq!(d.step_logps.len(), 3);
        for (s, p) in d.step_logps.iter().zip(&d.prob_sums) {
            assert!(*s <= 0.0);
            assert!((p - 1.0).abs() < 1e-9, "softmax mass {p}");
        }
        let (total, steps) = model.log_prob(&[4, 5, 6], &[7, 8]).unwrap();
        assert!((total - steps.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_normalize() {
        let model = init_params(&tiny_config(), 2);
        let d = model.forward_diagnostics(&[4, 5, 6, 7], &[8, 9, 4]).unwrap();
        for row in &d.attention {
            assert_eq!(row.len(), 4);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_token_ids_error() {
        let model = init_params(&tiny_config(), 1);
        assert!(model.log_prob(&[4, 99], &[5]).is_err());
        assert!(model.log_prob(&[4], &[99]).is_err());
        assert!(model.beam_decode(&[99], 2, 1, 5).is_err());
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let mut model = init_params(&tiny_config(), 1);
        let before = model.tensors();
        let mut opt = model.new_optimizer(AdadeltaConfig::default());
        let batch: Vec<_> = toy_pairs(4)
            .into_iter()
            .map(|(x, y, _)| (x, y, 0.0))
            .collect();
        let info = model.train_step(&batch, &mut opt).unwrap();
        assert_eq!(info.loss, 0.0);
        assert_eq!(model.tensors(), before);
    }

    #[test]
    fn toy_training_loss_descends() {
        let mut model = init_params(&tiny_config(), 5);
        let mut opt = model.new_optimizer(AdadeltaConfig::default());
        let batch = toy_pairs(10);
        let mut losses = Vec::new();
        for _ in 0..20 {
            losses.push(model.train_step(&batch, &mut opt).unwrap().loss);
        }
        let non_decreasing = losses
            .windows(2)
            .filter(|w| w[1] >= w[0] - 1e-12)
            .count();
        assert!(
            non_decreasing <= 2,
            "{non_decreasing} non-decreasing steps in {losses:?}"
        );
    }

    #[test]
    fn single_pair_memorization() {
        let mut model = init_params(&tiny_config(), 7);
        let mut opt = model.new_optimizer(AdadeltaConfig::default());
        let pair = (vec![4u32, 5, 6], vec![6u32, 4], 1.0);
        for _ in 0..200 {
            model.train_step(std::slice::from_ref(&pair), &mut opt).unwrap();
        }
        let (total, _) = model.log_prob(&pair.0, &pair.1).unwrap();
        let per_token = (total / (pair.1.len() + 1) as f64).exp();
        assert!(per_token >= 0.9, "memorization reached only {per_token}");
    }

    #[test]
    fn full_loss_passes_finite_difference_check() {
        let config = Seq2SeqConfig::new(8, 5);
        let batch = vec![
            (vec![4u32, 5], vec![6u32], 1.0),
            (vec![6u32, 7, 4], vec![5u32, 4], 0.5),
        ];
        let shapes: Vec<(usize, usize)> = param_shapes(&config).into_iter().map(|(_, s)| s).collect();
        let build = move |tape: &mut Tape, ids: &[NodeId]| -> NodeId {
            build_weighted_nll(&config, tape, ids, &batch)
        };
        let err = max_relative_error(&shapes, 19, &build);
        assert!(err < 1e-3, "fd error {err}");
    }

    #[test]
    fn greedy_equals_beam_one() {
        let model = init_params(&tiny_config(), 11);
        let x = vec![4u32, 7, 5];
        let max_len = 6;
        // Test-local greedy loop over next-token distributions.
        let mut prefix: Vec<u32> = Vec::new();
        let mut total = 0.0;
        for _ in 0..max_len {
            let logps = model.next_token_logps(&x, &prefix).unwrap();
            let (best, logp) = logps
                .iter()
                .enumerate()
                .filter(|(t, _)| *t as u32 != BOS && *t as u32 != PAD)
                .fold(None::<(usize, f64)>, |acc, (t, &l)| match acc {
                    None => Some((t, l)),
                    Some((bt, bl)) => {
                        if l > bl {
                            Some((t, l))
                        } else {
                            Some((bt, bl))
                        }
                    }
                })
                .unwrap();
            total += logp;
            if best as u32 == EOS {
                break;
            }
            prefix.push(best as u32);
        }
        let result = model.beam_decode(&x, 1, 1, max_len).unwrap();
        assert_eq!(result.hyps[0].tokens, prefix);
        assert!((result.hyps[0].total_logp - total).abs() < 1e-9);
    }

    #[test]
    fn wider_beam_never_scores_worse() {
        let model = init_params(&tiny_config(), 13);
        for x in [vec![4u32, 5], vec![6u32, 7, 8], vec![9u32]] {
            let max_len = Seq2SeqModel::default_max_len(x.len());
            let narrow = model.beam_decode(&x, 1, 1, max_len).unwrap();
            let wide = model.beam_decode(&x, 12, 1, max_len).unwrap();
            assert!(wide.hyps[0].total_logp >= narrow.hyps[0].total_logp - 1e-12);
        }
    }

    #[test]
    fn beam_matches_exhaustive_enumeration() {
        // Vocabulary: specials + 3 real tokens; generatable set is
        // {<unk>, </s>, a, b, c}. All sequences of length <= 2 are scored
        // by brute force through next_token_logps.
        let config = Seq2SeqConfig::new(7, 6);
        let model = init_params(&config, 17);
        let x = vec![4u32, 6];
        let max_len = 2;
        let gen_tokens: Vec<u32> = (0..7u32).filter(|&t| t != BOS && t != PAD && t != EOS).collect();

        let mut oracle: Vec<DecodedHyp> = Vec::new();
        let mut stack: Vec<(Vec<u32>, Vec<f64>)> = vec![(Vec::new(), Vec::new())];
        while let Some((prefix, steps)) = stack.pop() {
            let logps = model.next_token_logps(&x, &prefix).unwrap();
            // Ending here is one hypothesis.
            let mut done_steps = steps.clone();
            done_steps.push(logps[EOS as usize]);
            oracle.push(DecodedHyp {
                tokens: prefix.clone(),
                total_logp: done_steps.iter().sum(),
                step_logps: done_steps,
            });
            if prefix.len() < max_len {
                for &t in &gen_tokens {
                    let mut tokens = prefix.clone();
                    tokens.push(t);
                    let mut s = steps.clone();
                    s.push(logps[t as usize]);
                    if tokens.len() == max_len {
                        // Cut off at max_len: no terminal transition.
                        oracle.push(DecodedHyp {
                            tokens: tokens.clone(),
                            total_logp: s.iter().sum(),
                            step_logps: s.clone(),
                        });
                    } else {
                        stack.push((tokens, s));
                    }
                }
            }
        }
        oracle.sort_by(|a, b| {
            b.total_logp
                .partial_cmp(&a.total_logp)
                .unwrap()
                .then_with(|| a.tokens.cmp(&b.tokens))
        });

        let beam = 64;
        let k = oracle.len().min(beam);
        let result = model.beam_decode(&x, beam, k, max_len).unwrap();
        assert_eq!(result.hyps.len(), oracle.len().min(k));
        for (got, expected) in result.hyps.iter().zip(&oracle) {
            assert_eq!(got.tokens, expected.tokens);
            assert!((got.total_logp - expected.total_logp).abs() < 1e-9);
            let step_sum: f64 = got.step_logps.iter().sum();
            assert!((got.total_logp - step_sum).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_log_prob_bits() {
        let mut model = init_params(&tiny_config(), 23);
        let mut opt = model.new_optimizer(AdadeltaConfig::default());
        model.train_step(&toy_pairs(6), &mut opt).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path, Some(&opt)).unwrap();
        let (loaded, _opt) = Seq2SeqModel::load(&path, AdadeltaConfig::default()).unwrap();
        let probe = toy_pairs(3);
        for (x, y, _) in &probe {
            let (a, _) = model.log_prob(x, y).unwrap();
            let (b, _) = loaded.log_prob(x, y).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn warm_start_copies_trained_rows() {
        let mut model = init_params(&tiny_config(), 1);
        let rows: Vec<(u32, Vec<f64>)> = (4..10u32)
            .map(|id| (id, (0..12).map(|c| (id * 100 + c) as f64).collect()))
            .collect();
        let emb = EmbeddingMatrix::from_rows(10, 12, &rows);
        model.warm_start_embeddings(&emb).unwrap();
        assert_eq!(model.param("src_embed").unwrap().get(4, 0), 400.0);
        assert_eq!(model.param("tgt_embed").unwrap().get(9, 11), 911.0);
        // Dim mismatch is rejected.
        let bad = EmbeddingMatrix::from_rows(10, 5, &[(4, vec![0.0; 5])]);
        assert!(model.warm_start_embeddings(&bad).is_err());
    }
}
