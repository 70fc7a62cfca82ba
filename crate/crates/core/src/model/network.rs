//! The SignBart network.
//!
//! ```text
//! x coords ─ projection ─ +PE ─ encoder ───────────────┐
//!                                                      │ K, V
//! y coords ─ projection ─ +PE ─ decoder (causal) ─ cross-attn ─ … ─ pool ─ linear ─ softmax
//! ```
//!
//! Blocks are post-norm: `LN(h + sublayer(h))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::mask::{causal_mask, padding_mask, AttentionMask};
use super::params::{BoundParams, ModelParameters};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::skeleton::Batch;

/// Sinusoidal position table, `frames × d_model`:
/// `PE(t, 2i) = sin(t / 10000^(2i/d))`, `PE(t, 2i+1) = cos(t / 10000^(2i/d))`.
pub fn positional_encoding<T: Scalar>(frames: usize, d_model: usize, max_len: usize) -> Result<Tensor<T>> {
    if frames > max_len {
        return Err(Error::Length(format!(
            "sequence of {frames} frames exceeds max_len {max_len}"
        )));
    }
    let mut data = Vec::with_capacity(frames * d_model);
    for t in 0..frames {
        for c in 0..d_model {
            let pair = (c / 2 * 2) as f64;
            let angle = t as f64 / 10000f64.powf(pair / d_model as f64);
            data.push(if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_f64(vec![frames, d_model], &data)
}

/// `coords · W + b`, collapsing the keypoint axis: `[B, T, K] → [B, T, d]`.
pub fn project_coordinates<T: Scalar>(tape: &mut Tape<T>, coords: Var, weight: Var, bias: Var) -> Result<Var> {
    let k = *tape.shape(coords).last().unwrap_or(&0);
    if tape.shape(weight).len() != 2 || tape.shape(weight)[0] != k {
        return Err(Error::dim(
            "project_coordinates",
            format!(
                "coordinates {:?} against weight {:?}",
                tape.shape(coords),
                tape.shape(weight)
            ),
        ));
    }
    tape.linear(coords, weight, bias)
}

/// Handles for one attention sublayer's weights.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub q_weight: Var,
    pub q_bias: Var,
    pub k_weight: Var,
    pub k_bias: Var,
    pub v_weight: Var,
    pub v_bias: Var,
    pub out_weight: Var,
    pub out_bias: Var,
}

impl AttentionWeights {
    pub fn bound(params: &BoundParams, prefix: &str) -> Self {
        let g = |p: &str, w: &str| params.get(&format!("{prefix}.{p}.{w}"));
        AttentionWeights {
            q_weight: g("q_proj", "weight"),
            q_bias: g("q_proj", "bias"),
            k_weight: g("k_proj", "weight"),
            k_bias: g("k_proj", "bias"),
            v_weight: g("v_proj", "weight"),
            v_bias: g("v_proj", "bias"),
            out_weight: g("out_proj", "weight"),
            out_bias: g("out_proj", "bias"),
        }
    }
}

/// Splits `[B, T, d]` into heads. With `transpose_keys` the result is
/// `[B, H, d_head, T]`, otherwise `[B, H, T, d_head]`.
fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, heads: usize, transpose_keys: bool) -> Result<Var> {
    let (b, t, d) = dims3(tape, x)?;
    let x = tape.reshape(x, &[b, t, heads, d / heads])?;
    tape.permute(x, if transpose_keys { &[0, 2, 3, 1] } else { &[0, 2, 1, 3] })
}

fn dims3<T: Scalar>(tape: &Tape<T>, x: Var) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [b, t, d] => Ok((b, t, d)),
        ref s => Err(Error::dim("attention", format!("expected [B, T, d], got {s:?}"))),
    }
}

/// Multi-head scaled dot-product attention. Queries come from `q_input`,
/// keys and values from `kv_input`; `mask` is `[B or 1, 1, T_q, T_k]`.
/// Output goes through the out projection and then dropout.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    q_input: Var,
    kv_input: Var,
    mask: Var,
    weights: &AttentionWeights,
    heads: usize,
    dropout: f64,
    rng: &mut R,
    training: bool,
) -> Result<Var> {
    let (b, tq, d) = dims3(tape, q_input)?;
    let (bk, tk, dk) = dims3(tape, kv_input)?;
    if b != bk || d != dk {
        return Err(Error::dim(
            "attention",
            format!("queries {:?} vs keys {:?}", tape.shape(q_input), tape.shape(kv_input)),
        ));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim("attention", format!("{heads} heads do not divide d_model {d}")));
    }
    match *tape.shape(mask) {
        [mb, 1, mq, mk] if (mb == b || mb == 1) && mq == tq && mk == tk => {}
        ref s => {
            return Err(Error::dim(
                "attention",
                format!("mask {s:?} does not cover {tq}x{tk} for batch {b}"),
            ))
        }
    }
    let q = tape.linear(q_input, weights.q_weight, weights.q_bias)?;
    let k = tape.linear(kv_input, weights.k_weight, weights.k_bias)?;
    let v = tape.linear(kv_input, weights.v_weight, weights.v_bias)?;
    let q = split_heads(tape, q, heads, false)?;
    let k = split_heads(tape, k, heads, true)?;
    let v = split_heads(tape, v, heads, false)?;

    let scores = tape.matmul(q, k)?;
    let scale = T::one() / T::from_usize(d / heads).unwrap().sqrt();
    let scores = tape.scale(scores, scale)?;
    let scores = tape.add(scores, mask)?;
    let attn = tape.softmax_last_dim(scores)?;

    let o = tape.matmul(attn, v)?;
    let o = tape.permute(o, &[0, 2, 1, 3])?;
    let o = tape.reshape(o, &[b, tq, d])?;
    let o = tape.linear(o, weights.out_weight, weights.out_bias)?;
    tape.dropout(o, dropout, training, rng)
}

/// Masks for one batch, already on the tape.
#[derive(Debug, Clone, Copy)]
pub struct BatchMasks {
    /// Padding on keys.
    pub padding: Var,
    /// Padding on keys combined with the causal rule.
    pub causal: Var,
}

impl BatchMasks {
    pub fn new<T: Scalar>(tape: &mut Tape<T>, frame_mask: &[bool], batch: usize) -> Result<Self> {
        let pad = padding_mask(frame_mask, batch)?;
        let causal = pad.combine(&causal_mask(pad.queries)?)?;
        Ok(BatchMasks {
            padding: tape.constant(&pad.to_tensor()),
            causal: tape.constant(&causal.to_tensor()),
        })
    }

    pub fn from_masks<T: Scalar>(tape: &mut Tape<T>, padding: &AttentionMask, causal: &AttentionMask) -> Self {
        BatchMasks {
            padding: tape.constant(&padding.to_tensor()),
            causal: tape.constant(&causal.to_tensor()),
        }
    }
}

/// Graph handles produced by [`SignBart::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub logits: Var,
    pub probabilities: Var,
}

/// Which coordinate stream a projection belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    X,
    Y,
}

/// SignBart weights plus their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SignBart<T> {
    config: ModelConfig,
    params: ModelParameters<T>,
}

impl<T: Scalar> SignBart<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParameters::init(&config, seed)?;
        Ok(SignBart { config, params })
    }

    pub fn from_parameters(config: ModelConfig, params: ModelParameters<T>) -> Result<Self> {
        config.validate()?;
        let tensors = params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let params = ModelParameters::from_tensors(&config, tensors)?;
        Ok(SignBart { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Changes the dropout rate used by training-mode forward passes.
    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let mut config = self.config.clone();
        config.dropout = rate;
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn params(&self) -> &ModelParameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParameters<T> {
        &mut self.params
    }

    pub fn into_parameters(self) -> ModelParameters<T> {
        self.params
    }

    /// Projects one coordinate plane and adds positions: `[B, T, K] → [B, T, d]`.
    pub fn embed(&self, tape: &mut Tape<T>, p: &BoundParams, coords: Var, stream: Stream) -> Result<Var> {
        let shape = tape.shape(coords).to_vec();
        let [_, t, k] = shape[..] else {
            return Err(Error::dim("embed", format!("expected [B, T, K], got {shape:?}")));
        };
        if k != self.config.num_keypoints {
            return Err(Error::dim(
                "embed",
                format!("batch has {k} keypoints, model expects {}", self.config.num_keypoints),
            ));
        }
        let h = if self.config.projection {
            let name = match stream {
                Stream::X => "x_projection",
                Stream::Y => "y_projection",
            };
            let (w, b) = (p.get(&format!("{name}.weight")), p.get(&format!("{name}.bias")));
            project_coordinates(tape, coords, w, b)?
        } else {
            coords
        };
        let h = tape.scale(h, T::from_usize(self.config.d_model).unwrap().sqrt())?;
        let pe = positional_encoding(t, self.config.d_model, self.config.max_len)?;
        let pe = tape.constant(&pe);
        tape.add(h, pe)
    }

    fn feed_forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        prefix: &str,
        h: Var,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        let g = |n: &str| p.get(&format!("{prefix}.{n}"));
        let f = tape.linear(h, g("fc1.weight"), g("fc1.bias"))?;
        let f = tape.gelu(f)?;
        let f = tape.linear(f, g("fc2.weight"), g("fc2.bias"))?;
        tape.dropout(f, self.config.dropout, training, rng)
    }

    fn add_norm(&self, tape: &mut Tape<T>, p: &BoundParams, name: &str, h: Var, sub: Var) -> Result<Var> {
        let s = tape.add(h, sub)?;
        let (g, b) = (p.get(&format!("{name}.weight")), p.get(&format!("{name}.bias")));
        tape.layer_norm(s, g, b, self.config.layer_norm_eps)
    }

    /// Encoder stack over the embedded x stream.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        x_emb: Var,
        masks: &BatchMasks,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        let mut h = x_emb;
        for i in 0..self.config.encoder_layers {
            let prefix = format!("encoder.layers.{i}");
            let w = AttentionWeights::bound(p, &format!("{prefix}.self_attn"));
            let a = multi_head_attention(
                tape,
                h,
                h,
                masks.padding,
                &w,
                self.config.heads,
                self.config.dropout,
                rng,
                training,
            )?;
            h = self.add_norm(tape, p, &format!("{prefix}.self_attn_layer_norm"), h, a)?;
            let f = self.feed_forward(tape, p, &prefix, h, rng, training)?;
            h = self.add_norm(tape, p, &format!("{prefix}.final_layer_norm"), h, f)?;
        }
        Ok(h)
    }

    /// Decoder stack over the embedded y stream; every layer cross-attends
    /// to the final encoder output.
    #[allow(clippy::too_many_arguments)]
    pub fn decode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        y_emb: Var,
        encoder_out: Var,
        masks: &BatchMasks,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        let mut h = y_emb;
        for i in 0..self.config.decoder_layers {
            let prefix = format!("decoder.layers.{i}");
            let w = AttentionWeights::bound(p, &format!("{prefix}.self_attn"));
            let a = multi_head_attention(
                tape,
                h,
                h,
                masks.causal,
                &w,
                self.config.heads,
                self.config.dropout,
                rng,
                training,
            )?;
            h = self.add_norm(tape, p, &format!("{prefix}.self_attn_layer_norm"), h, a)?;
            let w = AttentionWeights::bound(p, &format!("{prefix}.encoder_attn"));
            let c = multi_head_attention(
                tape,
                h,
                encoder_out,
                masks.padding,
                &w,
                self.config.heads,
                self.config.dropout,
                rng,
                training,
            )?;
            h = self.add_norm(tape, p, &format!("{prefix}.encoder_attn_layer_norm"), h, c)?;
            let f = self.feed_forward(tape, p, &prefix, h, rng, training)?;
            h = self.add_norm(tape, p, &format!("{prefix}.final_layer_norm"), h, f)?;
        }
        Ok(h)
    }

    /// Mean over valid frames, then the linear classifier and softmax.
    pub fn classify(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        decoder_out: Var,
        frame_mask: &[bool],
    ) -> Result<ForwardOutput> {
        let (b, t, d) = dims3(tape, decoder_out)?;
        if frame_mask.len() != b * t {
            return Err(Error::dim(
                "classify",
                format!("mask of {} entries for {b}x{t} frames", frame_mask.len()),
            ));
        }
        let mut weights = Vec::with_capacity(b * t);
        for (bi, row) in frame_mask.chunks(t).enumerate() {
            let valid = row.iter().filter(|&&m| m).count();
            if valid == 0 {
                return Err(Error::Contract(format!("sequence {bi} has no valid frames")));
            }
            let w = 1.0 / valid as f64;
            weights.extend(row.iter().map(|&m| if m { w } else { 0.0 }));
        }
        let pool = tape.constant(&Tensor::from_f64(vec![b, 1, t], &weights)?);
        let pooled = tape.matmul(pool, decoder_out)?;
        let pooled = tape.reshape(pooled, &[b, d])?;
        let logits = tape.linear(pooled, p.get("classifier.weight"), p.get("classifier.bias"))?;
        let probabilities = tape.softmax_last_dim(logits)?;
        Ok(ForwardOutput {
            logits,
            probabilities,
        })
    }

    /// Decoder output for a batch, `[B, T, d]`.
    pub fn decoder_states<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        batch: &Batch,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        let masks = BatchMasks::new(tape, &batch.frame_mask, batch.batch_size)?;
        let x = tape.constant(&batch.x_tensor());
        let y = tape.constant(&batch.y_tensor());
        let x_emb = self.embed(tape, p, x, Stream::X)?;
        let enc = self.encode(tape, p, x_emb, &masks, rng, training)?;
        let y_emb = self.embed(tape, p, y, Stream::Y)?;
        self.decode(tape, p, y_emb, enc, &masks, rng, training)
    }

    /// Full forward pass. In eval mode (`training == false`) the result is a
    /// pure function of the weights and the batch.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        batch: &Batch,
        rng: &mut R,
        training: bool,
    ) -> Result<ForwardOutput> {
        let dec = self.decoder_states(tape, p, batch, rng, training)?;
        self.classify(tape, p, dec, &batch.frame_mask)
    }

    /// Eval-mode class probabilities, one row per sequence.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<Vec<T>>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &p, batch, &mut ChaCha8Rng::seed_from_u64(0), false)?;
        let c = self.config.num_classes;
        Ok(tape.values(out.probabilities).chunks(c).map(<[T]>::to_vec).collect())
    }

    /// Eval-mode decoder output as a tensor.
    pub fn decoder_output(&self, batch: &Batch) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let dec = self.decoder_states(&mut tape, &p, batch, &mut ChaCha8Rng::seed_from_u64(0), false)?;
        Ok(tape.value(dec))
    }
}
