//! Transformer emitter: embeddings, a context encoder, an utterance decoder
//! with interaction attention, and a two-layer head producing per-token
//! label log-scores.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_uniform, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::{attach_context, ContextWindow, Snippet, Vocab};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    /// Width of the hidden layer of the emission head.
    pub head_hidden: usize,
    pub max_len: usize,
    pub max_speakers: usize,
    /// Residual connection plus layer normalization around every sub-layer.
    pub residual_norm: bool,
    /// Encoder and decoder read the same embedding tables.
    pub share_embeddings: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 2,
            layers: 2,
            ff_dim: 64,
            head_hidden: 32,
            max_len: 128,
            max_speakers: crate::corpus::DEFAULT_MAX_SPEAKERS,
            residual_norm: true,
            share_embeddings: true,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.ff_dim == 0 || self.head_hidden == 0 {
            return bad("model dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.max_len == 0 || self.max_speakers == 0 {
            return bad("max_len and max_speakers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingIds {
    pub word: ParamId,
    pub position: ParamId,
    pub speaker: ParamId,
}

#[derive(Clone, Debug)]
pub struct AttentionIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Clone, Debug)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct FeedForwardIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: AttentionIds,
    pub norm1: NormIds,
    pub ff: FeedForwardIds,
    pub norm2: NormIds,
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub attention: AttentionIds,
    pub norm1: NormIds,
    pub interaction: AttentionIds,
    pub norm2: NormIds,
    pub ff: FeedForwardIds,
    pub norm3: NormIds,
}

/// `tanh(S·W2 + b2)·W1 + b1`, weights stored input-major.
#[derive(Clone, Debug)]
pub struct HeadIds {
    pub w2: ParamId,
    pub b2: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
}

/// Parameter ids of the whole emitter inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Emitter {
    config: ModelConfig,
    pub encoder_embedding: EmbeddingIds,
    pub decoder_embedding: EmbeddingIds,
    pub encoder: Vec<EncoderBlock>,
    pub decoder: Vec<DecoderBlock>,
    pub head: HeadIds,
}

/// Registers parameters on init or resolves them by name on load.
enum Builder<'a> {
    Init {
        store: &'a mut ParamStore,
        rng: &'a mut ChaCha8Rng,
    },
    Load {
        store: &'a ParamStore,
    },
}

impl Builder<'_> {
    fn get(&mut self, name: &str, shape: &[usize], fill: Option<f64>) -> Result<ParamId> {
        match self {
            Builder::Init { store, rng } => {
                let value = match (fill, shape) {
                    (Some(v), _) => Tensor::filled(shape, v),
                    (None, [r, c]) => glorot_uniform(*r, *c, &mut **rng),
                    (None, _) => unreachable!("random init is for matrices"),
                };
                store.insert(name, value)
            }
            Builder::Load { store } => {
                let id = store.id(name)?;
                if store.value(id).shape() != shape {
                    return Err(Error::shape("load_param", &[store.value(id).shape(), shape]));
                }
                Ok(id)
            }
        }
    }

    fn matrix(&mut self, name: &str, r: usize, c: usize) -> Result<ParamId> {
        self.get(name, &[r, c], None)
    }

    fn vector(&mut self, name: &str, n: usize, fill: f64) -> Result<ParamId> {
        self.get(name, &[n], Some(fill))
    }

    fn embedding(&mut self, prefix: &str, cfg: &ModelConfig, vocab: usize) -> Result<EmbeddingIds> {
        Ok(EmbeddingIds {
            word: self.matrix(&format!("{prefix}.word"), vocab, cfg.d_model)?,
            position: self.matrix(&format!("{prefix}.pos"), cfg.max_len, cfg.d_model)?,
            speaker: self.matrix(&format!("{prefix}.speaker"), cfg.max_speakers, cfg.d_model)?,
        })
    }

    fn attention(&mut self, prefix: &str, d: usize) -> Result<AttentionIds> {
        let mut proj = |p: &str| -> Result<(ParamId, ParamId)> {
            Ok((
                self.matrix(&format!("{prefix}.{p}.w"), d, d)?,
                self.vector(&format!("{prefix}.{p}.b"), d, 0.0)?,
            ))
        };
        let (wq, bq) = proj("q")?;
        let (wk, bk) = proj("k")?;
        let (wv, bv) = proj("v")?;
        let (wo, bo) = proj("o")?;
        Ok(AttentionIds {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        })
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<NormIds> {
        Ok(NormIds {
            gain: self.vector(&format!("{prefix}.g"), d, 1.0)?,
            bias: self.vector(&format!("{prefix}.b"), d, 0.0)?,
        })
    }

    fn feed_forward(&mut self, prefix: &str, d: usize, inner: usize) -> Result<FeedForwardIds> {
        Ok(FeedForwardIds {
            w1: self.matrix(&format!("{prefix}.w1"), d, inner)?,
            b1: self.vector(&format!("{prefix}.b1"), inner, 0.0)?,
            w2: self.matrix(&format!("{prefix}.w2"), inner, d)?,
            b2: self.vector(&format!("{prefix}.b2"), d, 0.0)?,
        })
    }

    fn emitter(mut self, config: &ModelConfig, vocab: usize, k: usize) -> Result<Emitter> {
        config.validate()?;
        let d = config.d_model;
        let encoder_embedding = self.embedding("emb", config, vocab)?;
        let decoder_embedding = if config.share_embeddings {
            encoder_embedding.clone()
        } else {
            self.embedding("dec_emb", config, vocab)?
        };
        let mut encoder = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            encoder.push(EncoderBlock {
                attention: self.attention(&format!("enc.{l}.self"), d)?,
                norm1: self.norm(&format!("enc.{l}.ln1"), d)?,
                ff: self.feed_forward(&format!("enc.{l}.ff"), d, config.ff_dim)?,
                norm2: self.norm(&format!("enc.{l}.ln2"), d)?,
            });
        }
        let mut decoder = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            decoder.push(DecoderBlock {
                attention: self.attention(&format!("dec.{l}.self"), d)?,
                norm1: self.norm(&format!("dec.{l}.ln1"), d)?,
                interaction: self.attention(&format!("dec.{l}.inter"), d)?,
                norm2: self.norm(&format!("dec.{l}.ln2"), d)?,
                ff: self.feed_forward(&format!("dec.{l}.ff"), d, config.ff_dim)?,
                norm3: self.norm(&format!("dec.{l}.ln3"), d)?,
            });
        }
        let head = HeadIds {
            w2: self.matrix("head.w2", d, config.head_hidden)?,
            b2: self.vector("head.b2", config.head_hidden, 0.0)?,
            w1: self.matrix("head.w1", config.head_hidden, k)?,
            b1: self.vector("head.b1", k, 0.0)?,
        };
        Ok(Emitter {
            config: config.clone(),
            encoder_embedding,
            decoder_embedding,
            encoder,
            decoder,
            head,
        })
    }
}

/// Per-head attention weight matrices of one attention call.
pub type HeadWeights = Vec<Var>;

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// One `[queries, keys]` matrix per head.
    pub weights: HeadWeights,
}

/// Emissions and traces for one utterance.
#[derive(Clone, Debug)]
pub struct UtteranceEmission {
    /// `[m, k]` log-scores.
    pub logits: Var,
    /// Context actually fed to the encoder, after truncation.
    pub context: ContextWindow,
    /// Interaction attention per decoder layer; empty without context.
    pub interaction: Vec<HeadWeights>,
}

/// Optional inverted dropout applied to sub-layer outputs during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).shape().to_vec();
        let n = shape.iter().product();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul_const(x, Tensor::new(shape, mask)?)
    }
}

fn affine(tape: &mut Tape, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let w = tape.param(store, w);
    let b = tape.param(store, b);
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Scaled dot-product attention with `heads` heads. `query` is `[q, d]`,
/// `source` is `[s, d]`.
pub fn multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    ids: &AttentionIds,
    heads: usize,
    query: Var,
    source: Var,
) -> Result<AttentionOutput> {
    let d = tape.value(query).cols();
    if heads == 0 || !d.is_multiple_of(heads) || tape.value(source).rank() != 2 || tape.value(source).cols() != d {
        return Err(Error::shape(
            "multi_head_attention",
            &[tape.value(query).shape(), tape.value(source).shape(), &[heads]],
        ));
    }
    let dh = d / heads;
    let q = affine(tape, store, query, ids.wq, ids.bq)?;
    let k = affine(tape, store, source, ids.wk, ids.bk)?;
    let v = affine(tape, store, source, ids.wv, ids.bv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice(q, 1, lo, hi)?;
        let kh = tape.slice(k, 1, lo, hi)?;
        let vh = tape.slice(v, 1, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let w = tape.softmax(scores)?;
        outputs.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    let joined = if heads == 1 { outputs[0] } else { tape.concat(&outputs, 1)? };
    let output = affine(tape, store, joined, ids.wo, ids.bo)?;
    Ok(AttentionOutput { output, weights })
}

impl Emitter {
    pub fn init(config: &ModelConfig, vocab_size: usize, k: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        Builder::Init { store, rng }.emitter(config, vocab_size, k)
    }

    /// Resolves every parameter by name and checks its shape.
    pub fn from_store(config: &ModelConfig, vocab_size: usize, k: usize, store: &ParamStore) -> Result<Self> {
        Builder::Load { store }.emitter(config, vocab_size, k)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `WE[ids] + POE[positions] + PAE[speakers]`.
    pub fn embed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tables: &EmbeddingIds,
        ids: &[usize],
        positions: &[usize],
        speakers: &[usize],
    ) -> Result<Var> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.config.max_len) {
            return Err(Error::Data(format!("position {p} exceeds max_len {}", self.config.max_len)));
        }
        if let Some(&s) = speakers.iter().find(|&&s| s >= self.config.max_speakers) {
            return Err(Error::Data(format!("speaker {s} exceeds max_speakers {}", self.config.max_speakers)));
        }
        let word = tape.param(store, tables.word);
        let pos = tape.param(store, tables.position);
        let spk = tape.param(store, tables.speaker);
        let w = tape.embedding(word, ids)?;
        let p = tape.embedding(pos, positions)?;
        let s = tape.embedding(spk, speakers)?;
        let ws = tape.add(w, p)?;
        tape.add(ws, s)
    }

    fn sublayer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        y: Var,
        norm: &NormIds,
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<Var> {
        let y = match dropout {
            Some(d) => d.apply(tape, y)?,
            None => y,
        };
        if !self.config.residual_norm {
            return Ok(y);
        }
        let sum = tape.add(x, y)?;
        let g = tape.param(store, norm.gain);
        let b = tape.param(store, norm.bias);
        tape.layer_norm(sum, g, b, LN_EPS)
    }

    fn feed_forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ids: &FeedForwardIds) -> Result<Var> {
        let h = affine(tape, store, x, ids.w1, ids.b1)?;
        let h = tape.relu(h);
        affine(tape, store, h, ids.w2, ids.b2)
    }

    /// Runs the encoder stack over embedded context `h0`. Returns the final
    /// states and each layer's self-attention weights.
    pub fn encode_context(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h0: Var,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<(Var, Vec<HeadWeights>)> {
        let mut h = h0;
        let mut traces = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let att = multi_head_attention(tape, store, &block.attention, self.config.heads, h, h)?;
            h = self.sublayer(tape, store, h, att.output, &block.norm1, &mut dropout)?;
            let f = self.feed_forward(tape, store, h, &block.ff)?;
            h = self.sublayer(tape, store, h, f, &block.norm2, &mut dropout)?;
            traces.push(att.weights);
        }
        Ok((h, traces))
    }

    /// Runs the decoder stack over embedded utterance `s0`, attending to the
    /// encoder output when there is one. Returns the final states and each
    /// layer's interaction-attention weights.
    pub fn decode_utterance(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        s0: Var,
        context: Option<Var>,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<(Var, Vec<HeadWeights>)> {
        let mut s = s0;
        let mut traces = Vec::new();
        for block in &self.decoder {
            let att = multi_head_attention(tape, store, &block.attention, self.config.heads, s, s)?;
            s = self.sublayer(tape, store, s, att.output, &block.norm1, &mut dropout)?;
            if let Some(h) = context {
                let inter = multi_head_attention(tape, store, &block.interaction, self.config.heads, s, h)?;
                s = self.sublayer(tape, store, s, inter.output, &block.norm2, &mut dropout)?;
                traces.push(inter.weights);
            }
            let f = self.feed_forward(tape, store, s, &block.ff)?;
            s = self.sublayer(tape, store, s, f, &block.norm3, &mut dropout)?;
        }
        Ok((s, traces))
    }

    /// `tanh(S·W2 + b2)·W1 + b1`, one row of label log-scores per token.
    pub fn emission_logits(&self, tape: &mut Tape, store: &ParamStore, s: Var) -> Result<Var> {
        let hidden = affine(tape, store, s, self.head.w2, self.head.b2)?;
        let hidden = tape.tanh(hidden);
        affine(tape, store, hidden, self.head.w1, self.head.b1)
    }

    /// Encodes utterance `i` of `snippet` with its own context window.
    /// Contexts longer than `max_len` keep their most recent tokens.
    pub fn emit_utterance(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        snippet: &Snippet,
        i: usize,
        vocab: &Vocab,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<UtteranceEmission> {
        if i >= snippet.len() {
            return Err(Error::Data(format!(
                "utterance {i} out of range for snippet {} with {} utterances",
                snippet.id,
                snippet.len()
            )));
        }
        let utt = &snippet.utterances[i];
        if utt.len() > self.config.max_len {
            return Err(Error::Data(format!(
                "utterance {i} of snippet {} has {} tokens, max_len is {}",
                snippet.id,
                utt.len(),
                self.config.max_len
            )));
        }
        let mut context = attach_context(snippet, i, vocab);
        if context.tokens.len() > self.config.max_len {
            let cut = context.tokens.len() - self.config.max_len;
            context.tokens.drain(..cut);
            context.sep_positions = context.sep_positions.iter().filter(|&&p| p >= cut).map(|p| p - cut).collect();
        }
        let encoded = if context.is_empty() {
            None
        } else {
            let ids: Vec<usize> = context.tokens.iter().map(|t| t.vocab_id).collect();
            let speakers: Vec<usize> = context.tokens.iter().map(|t| t.speaker).collect();
            let positions: Vec<usize> = (0..ids.len()).collect();
            let h0 = self.embed(tape, store, &self.encoder_embedding, &ids, &positions, &speakers)?;
            let reborrow = dropout.as_mut().map(|d| Dropout { rate: d.rate, rng: &mut *d.rng });
            Some(self.encode_context(tape, store, h0, reborrow)?.0)
        };
        let ids: Vec<usize> = utt.tokens.iter().map(|t| t.vocab_id).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let speakers = vec![utt.speaker; ids.len()];
        let s0 = self.embed(tape, store, &self.decoder_embedding, &ids, &positions, &speakers)?;
        let (s, interaction) = self.decode_utterance(tape, store, s0, encoded, dropout)?;
        let logits = self.emission_logits(tape, store, s)?;
        Ok(UtteranceEmission {
            logits,
            context,
            interaction,
        })
    }

    /// Per-utterance emissions for a whole snippet.
    pub fn emit_snippet(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        snippet: &Snippet,
        vocab: &Vocab,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<Vec<UtteranceEmission>> {
        (0..snippet.len())
            .map(|i| {
                let d = dropout.as_mut().map(|d| Dropout { rate: d.rate, rng: &mut *d.rng });
                self.emit_utterance(tape, store, snippet, i, vocab, d)
            })
            .collect()
    }
}
