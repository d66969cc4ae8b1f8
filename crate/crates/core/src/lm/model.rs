use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::vocab::{TokenSequence, Vocabulary, BOS, EOS};
use crate::diff::{DiffValue, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 128,
            max_seq_len: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::contract(format!(
                "d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            )));
        }
        if self.ffn_dim == 0 || self.max_seq_len == 0 {
            return Err(Error::contract("ffn_dim and max_seq_len must be positive"));
        }
        Ok(())
    }
}

/// SHA-256 over every parameter's name, shape and little-endian bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WeightDigest(pub [u8; 32]);

impl fmt::Display for WeightDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

pub(crate) fn digest_tensors<'a>(tensors: impl IntoIterator<Item = (String, &'a DiffValue)>) -> WeightDigest {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update((name.len() as u32).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.shape().len() as u32).to_le_bytes());
        for &s in t.shape() {
            h.update((s as u64).to_le_bytes());
        }
        for x in t.data() {
            h.update(x.to_le_bytes());
        }
    }
    WeightDigest(h.finalize().into())
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> DiffValue {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    DiffValue::param(shape, data).expect("positive shape")
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> DiffValue {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, vec![fan_in, fan_out], bound)
}

fn filled(shape: Vec<usize>, v: f64) -> DiffValue {
    let n = shape.iter().product();
    DiffValue::param(shape, vec![v; n]).expect("positive shape")
}

/// Fixed sinusoidal position table, used as the initial value of the
/// (trainable) positional parameters.
pub fn sinusoidal_table(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

// ----- transformer block ------------------------------------------------

/// Pre-norm self-attention block with a GELU feed-forward.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub ln1_gamma: DiffValue,
    pub ln1_beta: DiffValue,
    pub wq: DiffValue,
    pub wk: DiffValue,
    pub wv: DiffValue,
    pub wo: DiffValue,
    pub ln2_gamma: DiffValue,
    pub ln2_beta: DiffValue,
    pub w1: DiffValue,
    pub b1: DiffValue,
    pub w2: DiffValue,
    pub b2: DiffValue,
}

const BLOCK_NAMES: [&str; 12] = [
    "ln1_gamma", "ln1_beta", "wq", "wk", "wv", "wo", "ln2_gamma", "ln2_beta", "w1", "b1", "w2", "b2",
];

impl BlockParams {
    fn init(rng: &mut ChaCha8Rng, d: usize, ffn: usize) -> Self {
        Self {
            ln1_gamma: filled(vec![d], 1.0),
            ln1_beta: filled(vec![d], 0.0),
            wq: xavier(rng, d, d),
            wk: xavier(rng, d, d),
            wv: xavier(rng, d, d),
            wo: xavier(rng, d, d),
            ln2_gamma: filled(vec![d], 1.0),
            ln2_beta: filled(vec![d], 0.0),
            w1: xavier(rng, d, ffn),
            b1: filled(vec![ffn], 0.0),
            w2: xavier(rng, ffn, d),
            b2: filled(vec![d], 0.0),
        }
    }

    fn tensors(&self) -> [&DiffValue; 12] {
        [
            &self.ln1_gamma, &self.ln1_beta, &self.wq, &self.wk, &self.wv, &self.wo,
            &self.ln2_gamma, &self.ln2_beta, &self.w1, &self.b1, &self.w2, &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut DiffValue; 12] {
        [
            &mut self.ln1_gamma, &mut self.ln1_beta, &mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo,
            &mut self.ln2_gamma, &mut self.ln2_beta, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2,
        ]
    }
}

fn bind_all<'p>(tape: &mut Tape<'p>, tensors: &[&'p DiffValue], trainable: bool) -> Vec<Var> {
    tensors
        .iter()
        .map(|t| if trainable { tape.bind(t) } else { tape.bind_frozen(t) })
        .collect()
}

fn block_forward(tape: &mut Tape<'_>, x: Var, p: &[Var], heads: usize, causal: bool) -> Result<Var> {
    let [g1, be1, wq, wk, wv, wo, g2, be2, w1, b1, w2, b2] = p else {
        return Err(Error::contract("block expects 12 bound tensors"));
    };
    let d = tape.shape(x)[1];
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let h = tape.layer_norm(x, *g1, *be1)?;
    let q = tape.matmul(h, *wq)?;
    let k = tape.matmul(h, *wk)?;
    let v = tape.matmul(h, *wv)?;
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = tape.slice_cols(q, head * dh, dh)?;
        let kh = tape.slice_cols(k, head * dh, dh)?;
        let vh = tape.slice_cols(v, head * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = if causal {
            tape.causal_softmax(scores)?
        } else {
            tape.softmax(scores)?
        };
        outs.push(tape.matmul(attn, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let att = tape.matmul(cat, *wo)?;
    let x = tape.add(x, att)?;

    let h = tape.layer_norm(x, *g2, *be2)?;
    let f = tape.matmul(h, *w1)?;
    let f = tape.add_row(f, *b1)?;
    let f = tape.gelu(f);
    let f = tape.matmul(f, *w2)?;
    let f = tape.add_row(f, *b2)?;
    tape.add(x, f)
}

// ----- encoder ------------------------------------------------------------

/// Token + position embeddings, self-attention blocks, final layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub embed: DiffValue,
    pub pos: DiffValue,
    pub blocks: Vec<BlockParams>,
    pub final_gamma: DiffValue,
    pub final_beta: DiffValue,
}

/// Tape handles for an [`EncoderParams`], in [`EncoderParams::named_tensors`] order.
#[derive(Clone, Debug)]
pub struct BoundEncoder {
    vars: Vec<Var>,
    layers: usize,
}

impl BoundEncoder {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl EncoderParams {
    pub fn init(rng: &mut ChaCha8Rng, vocab_len: usize, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let embed = uniform(rng, vec![vocab_len, d], 3f64.sqrt());
        let pos = DiffValue::param(vec![cfg.max_seq_len, d], sinusoidal_table(cfg.max_seq_len, d)).expect("shape");
        let blocks = (0..cfg.encoder_layers).map(|_| BlockParams::init(rng, d, cfg.ffn_dim)).collect();
        Self {
            embed,
            pos,
            blocks,
            final_gamma: filled(vec![d], 1.0),
            final_beta: filled(vec![d], 0.0),
        }
    }

    pub fn d_model(&self) -> usize {
        self.embed.shape()[1]
    }

    pub fn tensors(&self) -> Vec<&DiffValue> {
        let mut v = vec![&self.embed, &self.pos];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.push(&self.final_gamma);
        v.push(&self.final_beta);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DiffValue> {
        let mut v = vec![&mut self.embed, &mut self.pos];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.push(&mut self.final_gamma);
        v.push(&mut self.final_beta);
        v
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &DiffValue)> {
        let mut names = vec![format!("{prefix}.embed"), format!("{prefix}.pos")];
        for i in 0..self.blocks.len() {
            names.extend(BLOCK_NAMES.iter().map(|n| format!("{prefix}.block{i}.{n}")));
        }
        names.push(format!("{prefix}.final_gamma"));
        names.push(format!("{prefix}.final_beta"));
        names.into_iter().zip(self.tensors()).collect()
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.tensors_mut().into_iter().for_each(|t| t.set_requires_grad(flag));
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> BoundEncoder {
        BoundEncoder {
            vars: bind_all(tape, &self.tensors(), trainable),
            layers: self.blocks.len(),
        }
    }

    /// Layout of the flat tensor list; must match the checkpoint loader.
    pub(crate) fn from_tensors(mut tensors: Vec<DiffValue>, layers: usize) -> Result<Self> {
        if tensors.len() != 4 + 12 * layers {
            return Err(Error::Checkpoint(format!("encoder expects {} tensors, found {}", 4 + 12 * layers, tensors.len())));
        }
        let final_beta = tensors.pop().unwrap();
        let final_gamma = tensors.pop().unwrap();
        let mut it = tensors.into_iter();
        let embed = it.next().unwrap();
        let pos = it.next().unwrap();
        let blocks = (0..layers).map(|_| block_from_iter(&mut it)).collect();
        Ok(Self {
            embed,
            pos,
            blocks,
            final_gamma,
            final_beta,
        })
    }
}

fn block_from_iter(it: &mut impl Iterator<Item = DiffValue>) -> BlockParams {
    let mut next = || it.next().expect("length checked by caller");
    BlockParams {
        ln1_gamma: next(),
        ln1_beta: next(),
        wq: next(),
        wk: next(),
        wv: next(),
        wo: next(),
        ln2_gamma: next(),
        ln2_beta: next(),
        w1: next(),
        b1: next(),
        w2: next(),
        b2: next(),
    }
}

/// Runs the encoder over `ids`; returns `(per_token [n×d], pooled [d])` where
/// `pooled` is the arithmetic mean of the per-token rows.
pub fn encoder_forward(tape: &mut Tape<'_>, enc: &BoundEncoder, ids: &[usize], heads: usize) -> Result<(Var, Var)> {
    if ids.is_empty() {
        return Err(Error::contract("cannot embed empty input"));
    }
    let v = &enc.vars;
    let max_len = tape.shape(v[1])[0];
    if ids.len() > max_len {
        return Err(Error::contract(format!(
            "sequence of {} tokens exceeds max_seq_len {max_len}",
            ids.len()
        )));
    }
    let tok = tape.gather(v[0], ids)?;
    let pos = tape.slice_rows(v[1], 0, ids.len())?;
    let mut x = tape.add(tok, pos)?;
    for layer in 0..enc.layers {
        let p = &v[2 + 12 * layer..2 + 12 * (layer + 1)];
        x = block_forward(tape, x, p, heads, false)?;
    }
    let n = v.len();
    let per_token = tape.layer_norm(x, v[n - 2], v[n - 1])?;
    let pooled = tape.mean_rows(per_token)?;
    Ok((per_token, pooled))
}

// ----- decoder ------------------------------------------------------------

/// Causal decoder conditioned by adding a context vector to every input row.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub embed: DiffValue,
    pub pos: DiffValue,
    pub blocks: Vec<BlockParams>,
    pub final_gamma: DiffValue,
    pub final_beta: DiffValue,
    pub out_proj: DiffValue,
    pub out_bias: DiffValue,
}

#[derive(Clone, Debug)]
pub struct BoundDecoder {
    vars: Vec<Var>,
    layers: usize,
}

impl BoundDecoder {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl DecoderParams {
    pub fn init(rng: &mut ChaCha8Rng, vocab_len: usize, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let embed = uniform(rng, vec![vocab_len, d], 3f64.sqrt());
        let pos = DiffValue::param(vec![cfg.max_seq_len, d], sinusoidal_table(cfg.max_seq_len, d)).expect("shape");
        let blocks = (0..cfg.decoder_layers).map(|_| BlockParams::init(rng, d, cfg.ffn_dim)).collect();
        Self {
            embed,
            pos,
            blocks,
            final_gamma: filled(vec![d], 1.0),
            final_beta: filled(vec![d], 0.0),
            out_proj: xavier(rng, d, vocab_len),
            out_bias: filled(vec![vocab_len], 0.0),
        }
    }

    pub fn tensors(&self) -> Vec<&DiffValue> {
        let mut v = vec![&self.embed, &self.pos];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.extend([&self.final_gamma, &self.final_beta, &self.out_proj, &self.out_bias]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DiffValue> {
        let mut v = vec![&mut self.embed, &mut self.pos];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.extend([
            &mut self.final_gamma,
            &mut self.final_beta,
            &mut self.out_proj,
            &mut self.out_bias,
        ]);
        v
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &DiffValue)> {
        let mut names = vec![format!("{prefix}.embed"), format!("{prefix}.pos")];
        for i in 0..self.blocks.len() {
            names.extend(BLOCK_NAMES.iter().map(|n| format!("{prefix}.block{i}.{n}")));
        }
        names.extend(["final_gamma", "final_beta", "out_proj", "out_bias"].map(|n| format!("{prefix}.{n}")));
        names.into_iter().zip(self.tensors()).collect()
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.tensors_mut().into_iter().for_each(|t| t.set_requires_grad(flag));
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> BoundDecoder {
        BoundDecoder {
            vars: bind_all(tape, &self.tensors(), trainable),
            layers: self.blocks.len(),
        }
    }

    pub(crate) fn from_tensors(mut tensors: Vec<DiffValue>, layers: usize) -> Result<Self> {
        if tensors.len() != 6 + 12 * layers {
            return Err(Error::Checkpoint(format!("decoder expects {} tensors, found {}", 6 + 12 * layers, tensors.len())));
        }
        let out_bias = tensors.pop().unwrap();
        let out_proj = tensors.pop().unwrap();
        let final_beta = tensors.pop().unwrap();
        let final_gamma = tensors.pop().unwrap();
        let mut it = tensors.into_iter();
        let embed = it.next().unwrap();
        let pos = it.next().unwrap();
        let blocks = (0..layers).map(|_| block_from_iter(&mut it)).collect();
        Ok(Self {
            embed,
            pos,
            blocks,
            final_gamma,
            final_beta,
            out_proj,
            out_bias,
        })
    }
}

/// Logits `[rows×V]` for the prefix `ids` (starting with BOS) given `context`.
/// With `last_only`, only the final position is projected.
pub fn decoder_forward(
    tape: &mut Tape<'_>,
    dec: &BoundDecoder,
    context: Var,
    ids: &[usize],
    heads: usize,
    last_only: bool,
) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::contract("decoder needs at least the BOS token"));
    }
    let v = &dec.vars;
    let max_len = tape.shape(v[1])[0];
    if ids.len() > max_len {
        return Err(Error::contract(format!("decoder prefix of {} exceeds max_seq_len {max_len}", ids.len())));
    }
    let tok = tape.gather(v[0], ids)?;
    let pos = tape.slice_rows(v[1], 0, ids.len())?;
    let x = tape.add(tok, pos)?;
    let mut x = tape.add_row(x, context)?;
    for layer in 0..dec.layers {
        let p = &v[2 + 12 * layer..2 + 12 * (layer + 1)];
        x = block_forward(tape, x, p, heads, true)?;
    }
    let n = v.len();
    let mut h = tape.layer_norm(x, v[n - 4], v[n - 3])?;
    if last_only {
        h = tape.slice_rows(h, ids.len() - 1, 1)?;
    }
    let logits = tape.matmul(h, v[n - 2])?;
    tape.add_row(logits, v[n - 1])
}

// ----- the frozen model -----------------------------------------------------

/// Output of [`FrozenLm::encode`].
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub per_token: DiffValue,
    pub pooled: DiffValue,
}

/// The encoder-decoder surrogate. Parameters are trainable until
/// [`FrozenLm::freeze`] is called; afterwards they are never mutated.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenLm {
    pub(crate) config: ModelConfig,
    pub(crate) vocab: Vocabulary,
    pub(crate) encoder: EncoderParams,
    pub(crate) decoder: DecoderParams,
    pub(crate) frozen: bool,
    pub(crate) digest: Option<WeightDigest>,
}

impl FrozenLm {
    pub fn new_random(vocab: Vocabulary, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(&mut rng, vocab.len(), &config);
        let decoder = DecoderParams::init(&mut rng, vocab.len(), &config);
        Ok(Self {
            config,
            vocab,
            encoder,
            decoder,
            frozen: false,
            digest: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &DecoderParams {
        &self.decoder
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Mutable parameter access, refused once frozen.
    pub fn params_mut(&mut self) -> Result<(&mut EncoderParams, &mut DecoderParams)> {
        if self.frozen {
            return Err(Error::contract("model is frozen"));
        }
        Ok((&mut self.encoder, &mut self.decoder))
    }

    pub fn named_tensors(&self) -> Vec<(String, &DiffValue)> {
        let mut v = self.encoder.named_tensors("enc");
        v.extend(self.decoder.named_tensors("dec"));
        v
    }

    /// Recomputes the digest from the current parameters.
    pub fn compute_digest(&self) -> WeightDigest {
        digest_tensors(self.named_tensors())
    }

    /// The digest recorded at freeze time.
    pub fn weight_digest(&self) -> Option<WeightDigest> {
        self.digest
    }

    pub fn freeze(&mut self) {
        self.encoder.set_requires_grad(false);
        self.decoder.set_requires_grad(false);
        self.frozen = true;
        self.digest = Some(self.compute_digest());
    }

    fn require_frozen(&self, what: &str) -> Result<()> {
        if !self.frozen {
            return Err(Error::contract(format!("{what} requires a frozen model")));
        }
        Ok(())
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.vocab.tokenize(text)
    }

    /// Encodes with the frozen parameters; never records gradients for them.
    pub fn encode_on<'p>(&'p self, tape: &mut Tape<'p>, ids: &[usize]) -> Result<(Var, Var)> {
        let bound = self.encoder.bind(tape, false);
        encoder_forward(tape, &bound, ids, self.config.heads)
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<Encoded> {
        let mut tape = Tape::new();
        let (per_token, pooled) = self.encode_on(&mut tape, &seq.ids)?;
        Ok(Encoded {
            per_token: DiffValue::constant(tape.shape(per_token).to_vec(), tape.value(per_token).to_vec())?,
            pooled: DiffValue::constant(tape.shape(pooled).to_vec(), tape.value(pooled).to_vec())?,
        })
    }

    pub fn pooled(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (_, pooled) = self.encode_on(&mut tape, ids)?;
        Ok(tape.value(pooled).to_vec())
    }

    /// Next-token logits after `prefix` (which starts with BOS).
    pub fn next_logits(&self, context: &[f64], prefix: &[usize]) -> Result<Vec<f64>> {
        if context.len() != self.d_model() {
            return Err(Error::shape("next_logits", &[context.len()], &[self.d_model()]));
        }
        let mut tape = Tape::new();
        let bound = self.decoder.bind(&mut tape, false);
        let ctx = tape.constant(vec![context.len()], context.to_vec())?;
        let logits = decoder_forward(&mut tape, &bound, ctx, prefix, self.config.heads, true)?;
        Ok(tape.value(logits).to_vec())
    }

    /// Greedy autoregressive decoding. The returned ids exclude BOS and end
    /// with EOS unless `max_len` was reached first.
    pub fn decode_greedy(&self, context: &[f64], max_len: usize) -> Result<TokenSequence> {
        self.require_frozen("decode_greedy")?;
        if max_len == 0 {
            return Err(Error::contract("max_len must be at least 1"));
        }
        let limit = max_len.min(self.config.max_seq_len - 1);
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        while out.len() < limit {
            let logits = self.next_logits(context, &prefix)?;
            let next = argmax(&logits);
            out.push(next);
            if next == EOS {
                break;
            }
            prefix.push(next);
        }
        Ok(TokenSequence::new(out))
    }

    /// Vocabulary id whose encoder embedding row is nearest to `v`
    /// (Euclidean; ties go to the lowest id).
    pub fn nearest_token_projection(&self, v: &[f64]) -> Result<usize> {
        self.require_frozen("nearest_token_projection")?;
        nearest_row(self.encoder.embed.data(), self.d_model(), v)
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn nearest_row(table: &[f64], d: usize, v: &[f64]) -> Result<usize> {
    if v.len() != d {
        return Err(Error::shape("nearest_token_projection", &[v.len()], &[d]));
    }
    let mut best = (0, f64::INFINITY);
    for (id, row) in table.chunks(d).enumerate() {
        let dist: f64 = row.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.1 {
            best = (id, dist);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> FrozenLm {
        let vocab = Vocabulary::from_words(["a", "b", "c", "d", "e"].map(String::from));
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_dim: 16,
            max_seq_len: 12,
        };
        let mut lm = FrozenLm::new_random(vocab, cfg, seed).unwrap();
        lm.freeze();
        lm
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(tiny(3).weight_digest(), tiny(3).weight_digest());
        assert_ne!(tiny(3).weight_digest(), tiny(4).weight_digest());
    }

    #[test]
    fn pooled_is_row_mean() {
        let lm = tiny(1);
        let ids = [5, 6, 7, 5];
        let enc = lm.encode(&TokenSequence::new(ids.to_vec())).unwrap();
        let d = lm.d_model();
        for j in 0..d {
            let m: f64 = (0..ids.len()).map(|i| enc.per_token.data()[i * d + j]).sum::<f64>() / ids.len() as f64;
            assert!((m - enc.pooled.data()[j]).abs() < 1e-12);
        }
        let single = lm.encode(&TokenSequence::new(vec![6])).unwrap();
        assert_eq!(single.per_token.data(), single.pooled.data());
    }

    #[test]
    fn encode_rejects_empty_and_overlong() {
        let lm = tiny(1);
        assert!(lm.pooled(&[]).is_err());
        assert!(lm.pooled(&[5; 13]).is_err());
        assert!(lm.pooled(&[5; 12]).is_ok());
    }

    #[test]
    fn greedy_matches_stepwise_argmax() {
        let lm = tiny(2);
        let ctx = lm.pooled(&[5, 7, 9]).unwrap();
        let out = lm.decode_greedy(&ctx, 6).unwrap();
        let mut prefix = vec![BOS];
        for &id in &out.ids {
            let logits = lm.next_logits(&ctx, &prefix).unwrap();
            let best = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(logits[id], best);
            assert!(logits[..id].iter().all(|&x| x < best));
            prefix.push(id);
        }
        assert!(out.ids.len() == 6 || out.ids.last() == Some(&EOS));
    }

    #[test]
    fn last_only_matches_full_projection() {
        let lm = tiny(5);
        let ctx = lm.pooled(&[6, 8]).unwrap();
        let prefix = [BOS, 6, 7];
        let mut tape = Tape::new();
        let bound = lm.decoder.bind(&mut tape, false);
        let c = tape.constant(vec![ctx.len()], ctx.clone()).unwrap();
        let full = decoder_forward(&mut tape, &bound, c, &prefix, lm.config.heads, false).unwrap();
        let v = lm.vocab().len();
        let last = &tape.value(full)[2 * v..3 * v];
        assert_eq!(last, lm.next_logits(&ctx, &prefix).unwrap().as_slice());
    }

    #[test]
    fn unfrozen_model_refuses_decoding() {
        let vocab = Vocabulary::from_words(["a"].map(String::from));
        let lm = FrozenLm::new_random(vocab, ModelConfig { d_model: 4, heads: 1, encoder_layers: 1, decoder_layers: 1, ffn_dim: 4, max_seq_len: 4 }, 0).unwrap();
        assert!(lm.decode_greedy(&[0.0; 4], 2).is_err());
        assert!(lm.nearest_token_projection(&[0.0; 4]).is_err());
    }

    #[test]
    fn nearest_row_ties_go_low() {
        let table = [1.0, 0.0, -1.0, 0.0, 0.0, 3.0];
        assert_eq!(nearest_row(&table, 2, &[0.0, 0.0]).unwrap(), 0);
        assert_eq!(nearest_row(&table, 2, &[-0.9, 0.1]).unwrap(), 1);
        assert_eq!(nearest_row(&table, 2, &[0.0, 2.0]).unwrap(), 2);
        assert!(nearest_row(&table, 2, &[0.0]).is_err());
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn frozen_projection_returns_own_rows() {
        let lm = tiny(7);
        let d = lm.d_model();
        for id in 0..lm.vocab().len() {
            let row = &lm.encoder.embed.data()[id * d..(id + 1) * d];
            assert_eq!(lm.nearest_token_projection(row).unwrap(), id);
        }
    }
}
