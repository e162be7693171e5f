//! A small encoder-decoder transformer with exact gradients.
//!
//! Pre-norm layers, learned positions, GELU feed-forward blocks and an output
//! projection tied to the token embedding. All arithmetic is f64 so finite
//! differences can check every gradient; checkpoints store f32.

mod checkpoint;
pub mod graph;
pub mod tensor;
pub mod vocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::ReformulationProblem;
use crate::error::{Error, Result};
use graph::{Graph, NodeId, ParamSet};
use tensor::Tensor;
pub use vocab::Vocabulary;

pub const DEFAULT_MAX_SRC_LEN: usize = 256;
pub const DEFAULT_MAX_TGT_LEN: usize = 64;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub max_src_len: usize,
    /// Longest generated sequence, EOS included.
    pub max_tgt_len: usize,
}

impl Arch {
    pub fn small(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            heads: 2,
            d_ff: 128,
            enc_layers: 1,
            dec_layers: 1,
            max_src_len: DEFAULT_MAX_SRC_LEN,
            max_tgt_len: DEFAULT_MAX_TGT_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 6 {
            return Err(Error::Config("vocabulary needs at least the special tokens".into()));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_src_len < 3 || self.max_tgt_len < 1 {
            return Err(Error::Config("sequence limits too small".into()));
        }
        Ok(())
    }

    /// Expected tensor shapes in parameter order.
    pub fn param_shapes(&self) -> Vec<(String, [usize; 2])> {
        let (d, f, v) = (self.d_model, self.d_ff, self.vocab_size);
        let mut out = vec![
            ("tok_emb".to_string(), [v, d]),
            ("enc_pos".to_string(), [self.max_src_len, d]),
            ("dec_pos".to_string(), [self.max_tgt_len, d]),
            ("out_bias".to_string(), [1, v]),
        ];
        let ln = |out: &mut Vec<(String, [usize; 2])>, p: &str| {
            out.push((format!("{p}.gain"), [1, d]));
            out.push((format!("{p}.bias"), [1, d]));
        };
        let attn = |out: &mut Vec<(String, [usize; 2])>, p: &str| {
            for w in ["q", "k", "v", "o"] {
                out.push((format!("{p}.w{w}"), [d, d]));
                out.push((format!("{p}.b{w}"), [1, d]));
            }
        };
        let ffn = |out: &mut Vec<(String, [usize; 2])>, p: &str| {
            out.push((format!("{p}.w1"), [d, f]));
            out.push((format!("{p}.b1"), [1, f]));
            out.push((format!("{p}.w2"), [f, d]));
            out.push((format!("{p}.b2"), [1, d]));
        };
        for l in 0..self.enc_layers {
            ln(&mut out, &format!("enc{l}.ln1"));
            attn(&mut out, &format!("enc{l}.self"));
            ln(&mut out, &format!("enc{l}.ln2"));
            ffn(&mut out, &format!("enc{l}.ffn"));
        }
        ln(&mut out, "enc.ln_f");
        for l in 0..self.dec_layers {
            ln(&mut out, &format!("dec{l}.ln1"));
            attn(&mut out, &format!("dec{l}.self"));
            ln(&mut out, &format!("dec{l}.ln2"));
            attn(&mut out, &format!("dec{l}.cross"));
            ln(&mut out, &format!("dec{l}.ln3"));
            ffn(&mut out, &format!("dec{l}.ffn"));
        }
        ln(&mut out, "dec.ln_f");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LnIds {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AttnIds {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FfnIds {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct EncLayer {
    ln1: LnIds,
    attn: AttnIds,
    ln2: LnIds,
    ffn: FfnIds,
}

#[derive(Debug, Clone, PartialEq)]
struct DecLayer {
    ln1: LnIds,
    self_attn: AttnIds,
    ln2: LnIds,
    cross: AttnIds,
    ln3: LnIds,
    ffn: FfnIds,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok_emb: usize,
    enc_pos: usize,
    dec_pos: usize,
    out_bias: usize,
    enc: Vec<EncLayer>,
    enc_ln: LnIds,
    dec: Vec<DecLayer>,
    dec_ln: LnIds,
}

impl Layout {
    fn resolve(params: &ParamSet, arch: &Arch) -> Self {
        let id = |n: String| params.index_of(&n).unwrap_or_else(|| panic!("missing parameter {n}"));
        let ln = |p: &str| LnIds {
            gain: id(format!("{p}.gain")),
            bias: id(format!("{p}.bias")),
        };
        let attn = |p: &str| AttnIds {
            wq: id(format!("{p}.wq")),
            bq: id(format!("{p}.bq")),
            wk: id(format!("{p}.wk")),
            bk: id(format!("{p}.bk")),
            wv: id(format!("{p}.wv")),
            bv: id(format!("{p}.bv")),
            wo: id(format!("{p}.wo")),
            bo: id(format!("{p}.bo")),
        };
        let ffn = |p: &str| FfnIds {
            w1: id(format!("{p}.w1")),
            b1: id(format!("{p}.b1")),
            w2: id(format!("{p}.w2")),
            b2: id(format!("{p}.b2")),
        };
        Self {
            tok_emb: id("tok_emb".into()),
            enc_pos: id("enc_pos".into()),
            dec_pos: id("dec_pos".into()),
            out_bias: id("out_bias".into()),
            enc: (0..arch.enc_layers)
                .map(|l| EncLayer {
                    ln1: ln(&format!("enc{l}.ln1")),
                    attn: attn(&format!("enc{l}.self")),
                    ln2: ln(&format!("enc{l}.ln2")),
                    ffn: ffn(&format!("enc{l}.ffn")),
                })
                .collect(),
            enc_ln: ln("enc.ln_f"),
            dec: (0..arch.dec_layers)
                .map(|l| DecLayer {
                    ln1: ln(&format!("dec{l}.ln1")),
                    self_attn: attn(&format!("dec{l}.self")),
                    ln2: ln(&format!("dec{l}.ln2")),
                    cross: attn(&format!("dec{l}.cross")),
                    ln3: ln(&format!("dec{l}.ln3")),
                    ffn: ffn(&format!("dec{l}.ffn")),
                })
                .collect(),
            dec_ln: ln("dec.ln_f"),
        }
    }
}

/// Source token ids of a serialized problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedProblem {
    pub ids: Vec<usize>,
    /// All ones: sequences are processed one at a time, never padded.
    pub mask: Vec<u8>,
}

impl EncodedProblem {
    pub fn from_ids(ids: Vec<usize>) -> Self {
        let mask = vec![1; ids.len()];
        Self { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `[BOS] q_1 [A] r_1 [SEP] … [SEP] q_k [EOS]`, dropping whole turns oldest
/// first until the sequence fits in `budget` tokens.
pub fn serialize_problem(problem: &ReformulationProblem, vocab: &Vocabulary, budget: usize) -> Result<EncodedProblem> {
    let query = vocab.encode(&problem.current_query);
    if budget < query.len() + 2 {
        return Err(Error::BudgetTooSmall {
            budget,
            needed: query.len() + 2,
        });
    }
    let turns: Vec<Vec<usize>> = problem
        .history
        .iter()
        .map(|h| {
            let mut t = vocab.encode(&h.query);
            t.push(vocab::ANS);
            t.extend(vocab.encode(&h.answer));
            t.push(vocab::SEP);
            t
        })
        .collect();
    let mut used = query.len() + 2;
    let mut first_kept = turns.len();
    for (i, t) in turns.iter().enumerate().rev() {
        if used + t.len() > budget {
            break;
        }
        used += t.len();
        first_kept = i;
    }
    let mut ids = Vec::with_capacity(used);
    ids.push(vocab::BOS);
    for t in &turns[first_kept..] {
        ids.extend_from_slice(t);
    }
    ids.extend(query);
    ids.push(vocab::EOS);
    Ok(EncodedProblem::from_ids(ids))
}

/// Projected cross-attention keys and values, one pair per decoder layer.
pub struct Memory(Vec<(NodeId, NodeId)>);

#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    arch: Arch,
    vocab: Vocabulary,
    params: ParamSet,
    layout: Layout,
}

impl SeqModel {
    /// Gaussian weights (std 0.02), zero biases, unit layer-norm gains.
    pub fn new(vocab: Vocabulary, mut arch: Arch, seed: u64) -> Result<Self> {
        arch.vocab_size = vocab.len();
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamSet::new();
        for (name, [r, c]) in arch.param_shapes() {
            let t = if name.ends_with(".gain") {
                Tensor::full(r, c, 1.0)
            } else if is_bias(&name) {
                Tensor::zeros(r, c)
            } else {
                Tensor::from_vec(r, c, (0..r * c).map(|_| normal.sample(&mut rng)).collect())
            };
            params.push(name, t);
        }
        Ok(Self::from_parts(arch, vocab, params))
    }

    pub(crate) fn from_parts(arch: Arch, vocab: Vocabulary, params: ParamSet) -> Self {
        let layout = Layout::resolve(&params, &arch);
        Self {
            arch,
            vocab,
            params,
            layout,
        }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn encode_problem(&self, problem: &ReformulationProblem) -> Result<EncodedProblem> {
        serialize_problem(problem, &self.vocab, self.arch.max_src_len)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.arch.vocab_size) {
            Some(&bad) => Err(Error::UnknownToken(bad)),
            None => Ok(()),
        }
    }

    fn layer_norm(g: &mut Graph<'_>, x: NodeId, ids: LnIds) -> NodeId {
        let (gain, bias) = (g.param(ids.gain), g.param(ids.bias));
        g.layer_norm(x, gain, bias)
    }

    fn project(g: &mut Graph<'_>, x: NodeId, w: usize, b: usize) -> NodeId {
        let (w, b) = (g.param(w), g.param(b));
        g.linear(x, w, b)
    }

    fn ffn(g: &mut Graph<'_>, x: NodeId, ids: FfnIds) -> NodeId {
        let h = Self::project(g, x, ids.w1, ids.b1);
        let h = g.gelu(h);
        Self::project(g, h, ids.w2, ids.b2)
    }

    fn embed(&self, g: &mut Graph<'_>, ids: &[usize], pos_table: usize) -> NodeId {
        let tok = g.param(self.layout().tok_emb);
        let pos = g.param(pos_table);
        let x = g.gather(tok, ids);
        let p = g.head_rows(pos, ids.len());
        g.add(x, p)
    }

    /// Encoder states for `src` (L×d).
    pub fn encode(&self, g: &mut Graph<'_>, src: &[usize]) -> NodeId {
        let layout = &self.layout;
        let mut x = self.embed(g, src, layout.enc_pos);
        for layer in &layout.enc {
            let h = Self::layer_norm(g, x, layer.ln1);
            let q = Self::project(g, h, layer.attn.wq, layer.attn.bq);
            let k = Self::project(g, h, layer.attn.wk, layer.attn.bk);
            let v = Self::project(g, h, layer.attn.wv, layer.attn.bv);
            let a = g.attention(q, k, v, self.arch.heads, false);
            let a = Self::project(g, a, layer.attn.wo, layer.attn.bo);
            x = g.add(x, a);
            let h = Self::layer_norm(g, x, layer.ln2);
            let f = Self::ffn(g, h, layer.ffn);
            x = g.add(x, f);
        }
        Self::layer_norm(g, x, layout.enc_ln)
    }

    pub fn memory(&self, g: &mut Graph<'_>, enc: NodeId) -> Memory {
        let layout = self.layout();
        Memory(
            layout
                .dec
                .iter()
                .map(|l| {
                    let k = Self::project(g, enc, l.cross.wk, l.cross.bk);
                    let v = Self::project(g, enc, l.cross.wv, l.cross.bv);
                    (k, v)
                })
                .collect(),
        )
    }

    /// Final decoder states for decoder input `tgt_in` (already BOS-prefixed).
    pub fn decode_states(&self, g: &mut Graph<'_>, memory: &Memory, tgt_in: &[usize]) -> NodeId {
        let layout = &self.layout;
        let mut y = self.embed(g, tgt_in, layout.dec_pos);
        for (layer, &(mk, mv)) in layout.dec.iter().zip(&memory.0) {
            let h = Self::layer_norm(g, y, layer.ln1);
            let q = Self::project(g, h, layer.self_attn.wq, layer.self_attn.bq);
            let k = Self::project(g, h, layer.self_attn.wk, layer.self_attn.bk);
            let v = Self::project(g, h, layer.self_attn.wv, layer.self_attn.bv);
            let a = g.attention(q, k, v, self.arch.heads, true);
            let a = Self::project(g, a, layer.self_attn.wo, layer.self_attn.bo);
            y = g.add(y, a);
            let h = Self::layer_norm(g, y, layer.ln2);
            let q = Self::project(g, h, layer.cross.wq, layer.cross.bq);
            let a = g.attention(q, mk, mv, self.arch.heads, false);
            let a = Self::project(g, a, layer.cross.wo, layer.cross.bo);
            y = g.add(y, a);
            let h = Self::layer_norm(g, y, layer.ln3);
            let f = Self::ffn(g, h, layer.ffn);
            y = g.add(y, f);
        }
        Self::layer_norm(g, y, layout.dec_ln)
    }

    /// Log-probabilities over the vocabulary for each row of `states`.
    pub fn output_logprobs(&self, g: &mut Graph<'_>, states: NodeId) -> NodeId {
        let layout = self.layout();
        let emb = g.param(layout.tok_emb);
        let bias = g.param(layout.out_bias);
        let logits = g.matmul_bt(states, emb);
        let logits = g.add_row(logits, bias);
        g.log_softmax(logits)
    }

    /// Teacher-forced log-probabilities (|target|×N) for predicting `target`,
    /// which should already end in EOS.
    pub fn teacher_forced(&self, g: &mut Graph<'_>, memory: &Memory, target: &[usize]) -> NodeId {
        let tgt_in = decoder_input(target);
        let states = self.decode_states(g, memory, &tgt_in);
        self.output_logprobs(g, states)
    }

    /// Next-token distribution (log space) after `prefix`.
    pub fn token_logprobs(&self, encoded: &EncodedProblem, prefix: &[usize]) -> Result<Vec<f64>> {
        self.check_ids(&encoded.ids)?;
        self.check_ids(prefix)?;
        if prefix.len() >= self.arch.max_tgt_len {
            return Err(Error::Invalid(format!(
                "prefix of {} tokens exceeds the target limit {}",
                prefix.len(),
                self.arch.max_tgt_len
            )));
        }
        Ok(self.session(encoded)?.next_logprobs(prefix))
    }

    /// Length-normalized log-likelihood `Σ_t log p(c_t | P, c_<t) / |C|^α`.
    pub fn sequence_score(&self, encoded: &EncodedProblem, candidate: &[usize], alpha: f64) -> Result<f64> {
        let lp = self.candidate_token_logprobs(encoded, candidate)?;
        Ok(length_normalized(&lp, alpha))
    }

    /// Per-token teacher-forced log-probabilities of `candidate`.
    pub fn candidate_token_logprobs(&self, encoded: &EncodedProblem, candidate: &[usize]) -> Result<Vec<f64>> {
        self.check_ids(&encoded.ids)?;
        self.check_ids(candidate)?;
        if candidate.is_empty() || candidate.len() > self.arch.max_tgt_len {
            return Err(Error::Invalid(format!(
                "candidate length {} outside 1..={}",
                candidate.len(),
                self.arch.max_tgt_len
            )));
        }
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &encoded.ids);
        let mem = self.memory(&mut g, enc);
        let lp = self.teacher_forced(&mut g, &mem, candidate);
        let v = g.value(lp);
        Ok(candidate.iter().enumerate().map(|(t, &c)| v.get(t, c)).collect())
    }

    /// Runs the encoder once and keeps the cross-attention memory for decoding.
    pub fn session(&self, encoded: &EncodedProblem) -> Result<Session<'_>> {
        self.check_ids(&encoded.ids)?;
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &encoded.ids);
        let mem = self.memory(&mut g, enc);
        let memory = mem.0.iter().map(|&(k, v)| (g.value(k).clone(), g.value(v).clone())).collect();
        Ok(Session { model: self, memory })
    }

    /// Mean encoder state of `text`, used as a frozen dense embedding.
    pub fn mean_encoding(&self, text: &str, budget: usize) -> Result<Vec<f64>> {
        let mut ids = self.vocab.encode(text);
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        ids.truncate(budget.min(self.arch.max_src_len - 2));
        let mut src = vec![vocab::BOS];
        src.extend(ids);
        src.push(vocab::EOS);
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &src);
        let states = g.value(enc);
        let mut mean = vec![0.0; states.cols()];
        for r in 0..states.rows() {
            for (m, x) in mean.iter_mut().zip(states.row(r)) {
                *m += x / states.rows() as f64;
            }
        }
        Ok(mean)
    }

    /// Text of a generated token sequence.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        self.vocab.decode(ids)
    }

    /// Zeroes the tied output projection and its bias.
    pub fn zero_output_layer(&mut self) {
        for id in [self.layout.tok_emb, self.layout.out_bias] {
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|(_, t)| t.all_finite())
    }
}

fn is_bias(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    name == "out_bias" || last == "bias" || (last.starts_with('b') && last.len() == 2)
}

/// Decoder input for predicting `target`: BOS followed by all but the last token.
pub fn decoder_input(target: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(target.len());
    v.push(vocab::BOS);
    v.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    v
}

/// `Σ lp / len^α`.
pub fn length_normalized(logprobs: &[f64], alpha: f64) -> f64 {
    let sum: f64 = logprobs.iter().sum();
    sum / (logprobs.len() as f64).powf(alpha)
}

/// Encoder output cached for step-by-step decoding.
pub struct Session<'m> {
    model: &'m SeqModel,
    memory: Vec<(Tensor, Tensor)>,
}

impl Session<'_> {
    pub fn model(&self) -> &SeqModel {
        self.model
    }

    /// Log-distribution of the token following `prefix` (generated tokens only).
    pub fn next_logprobs(&self, prefix: &[usize]) -> Vec<f64> {
        let model = self.model;
        let mut g = Graph::new(&model.params);
        let mem = Memory(
            self.memory
                .iter()
                .map(|(k, v)| (g.input(k.clone()), g.input(v.clone())))
                .collect(),
        );
        let mut tgt_in = vec![vocab::BOS];
        tgt_in.extend_from_slice(prefix);
        let states = model.decode_states(&mut g, &mem, &tgt_in);
        let last = g.slice_rows(states, tgt_in.len() - 1, 1);
        let lp = model.output_logprobs(&mut g, last);
        g.value(lp).data().to_vec()
    }
}
