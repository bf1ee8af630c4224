//! Transformer building blocks: linear maps, layer norm, multi-head
//! attention, the feed-forward network, the mixed global/local attention
//! operator and the encoder block that wraps both sublayers.
//!
//! All sequence tensors are `[batch, tokens, channels]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diff::{Activation, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Seeded parameter initializer: truncated normal (cut at two standard
/// deviations) for weights, zeros for biases.
pub struct Init {
    rng: ChaCha8Rng,
    pub std: f64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: 0.02,
        }
    }

    pub fn trunc_normal<T: Real>(&mut self, shape: &[usize]) -> Tensor<T> {
        let normal = Normal::new(0.0, self.std).expect("positive std");
        let bound = 2.0 * self.std;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v: f64 = normal.sample(&mut self.rng);
                if v.abs() <= bound {
                    break T::from_f64_lossy(v);
                }
            })
            .collect();
        Tensor::new(shape, data).expect("consistent shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Relu,
    Gelu,
}

impl From<ActivationKind> for Activation {
    fn from(kind: ActivationKind) -> Self {
        match kind {
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Gelu => Activation::Gelu,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init.trunc_normal(&[in_dim, out_dim]))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    pub fn param_count(&self) -> u128 {
        ((self.in_dim + 1) * self.out_dim) as u128
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(&[dim], T::one()))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?;
        Ok(LayerNorm { gamma, beta, dim })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Same-length 1D convolution over tokens with a dense `kernel x in x out`
/// weight and a bias.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Conv1d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        in_dim: usize,
        out_dim: usize,
        init: &mut Init,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("conv kernel must be odd, got {kernel}")));
        }
        let weight = store.add(
            format!("{name}.weight"),
            init.trunc_normal(&[kernel, in_dim, out_dim]),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Conv1d {
            weight,
            bias,
            kernel,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv1d_same(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsaConfig {
    pub width: usize,
    pub heads: usize,
}

impl MsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "{} heads do not divide attention width {}",
                self.heads, self.width
            )));
        }
        Ok(())
    }

    /// Per-head key and value width.
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

/// Multi-head attention with query, key, value and output projections.
/// Used as self-attention in the backbone and as cross-attention in the head.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub cfg: MsaConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: MsaConfig,
        init: &mut Init,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.width;
        Ok(MultiHeadAttention {
            cfg,
            query: Linear::new(store, &format!("{name}.query"), d, d, init)?,
            key: Linear::new(store, &format!("{name}.key"), d, d, init)?,
            value: Linear::new(store, &format!("{name}.value"), d, d, init)?,
            output: Linear::new(store, &format!("{name}.output"), d, d, init)?,
        })
    }

    /// `queries [B, n, d]` attend over `context [B, l, d]`. Each head's
    /// attention matrix `[B, n, l]` is pushed to `maps` when given.
    pub fn attend<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        queries: Var,
        context: Var,
        mut maps: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let d = self.cfg.width;
        for v in [queries, context] {
            let s = tape.shape(v);
            if s.len() != 3 || s[2] != d {
                return Err(Error::shape("attention", s, &[d]));
            }
        }
        if tape.shape(queries)[0] != tape.shape(context)[0] {
            return Err(Error::shape("attention", tape.shape(queries), tape.shape(context)));
        }
        let q = self.query.forward(tape, store, queries)?;
        let k = self.key.forward(tape, store, context)?;
        let v = self.value.forward(tape, store, context)?;
        let dk = self.cfg.head_dim();
        let scale = T::from_f64_lossy(1.0 / (dk as f64).sqrt());
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (qh, kh, vh) = if self.cfg.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice(q, h * dk, dk)?,
                    tape.slice(k, h * dk, dk)?,
                    tape.slice(v, h * dk, dk)?,
                )
            };
            let scores = tape.batch_matmul(qh, kh, true)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores);
            if let Some(maps) = maps.as_deref_mut() {
                maps.push(attn);
            }
            heads.push(tape.batch_matmul(attn, vh, false)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { tape.concat(&heads)? };
        self.output.forward(tape, store, merged)
    }

    pub fn param_count(&self) -> u128 {
        4 * self.query.param_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnConfig {
    pub width: usize,
    pub ratio: usize,
    pub activation: ActivationKind,
}

/// Position-wise two-layer network: `act(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub cfg: FfnConfig,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: FfnConfig,
        init: &mut Init,
    ) -> Result<Self> {
        if cfg.ratio == 0 {
            return Err(Error::InvalidConfig("ffn ratio must be at least 1".into()));
        }
        let hidden = cfg.width * cfg.ratio;
        Ok(FeedForward {
            cfg,
            fc1: Linear::new(store, &format!("{name}.fc1"), cfg.width, hidden, init)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, cfg.width, init)?,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.activation(h, self.cfg.activation.into());
        self.fc2.forward(tape, store, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedAttentionConfig {
    pub width: usize,
    pub local_ratio: f64,
    pub kernel: usize,
    pub heads: usize,
    /// Activation after the local convolution; off by default.
    pub local_activation: Option<ActivationKind>,
}

impl MixedAttentionConfig {
    pub fn new(width: usize, local_ratio: f64, kernel: usize, heads: usize) -> Self {
        MixedAttentionConfig {
            width,
            local_ratio,
            kernel,
            heads,
            local_activation: None,
        }
    }

    /// Channels routed to the local path, `floor(p * d)`.
    pub fn local_width(&self) -> usize {
        local_width(self.width, self.local_ratio)
    }

    /// Channels routed to global attention; odd splits favour this path.
    pub fn global_width(&self) -> usize {
        self.width - self.local_width()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.local_ratio) {
            return Err(Error::InvalidConfig(format!(
                "local ratio {} outside [0, 1]",
                self.local_ratio
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        let d1 = self.global_width();
        if self.heads == 0 || !d1.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "{} heads do not divide global width {d1}",
                self.heads
            )));
        }
        Ok(())
    }
}

/// `floor(p * d)`, robust to binary rounding of `p * d`.
pub fn local_width(width: usize, ratio: f64) -> usize {
    ((ratio * width as f64) + 1e-9).floor().min(width as f64) as usize
}

/// Channel-split operator: the first `d1` channels go through multi-head
/// self-attention, the last `d2` through a pointwise linear followed by a
/// same-length 1D convolution; the results are concatenated back to `d`.
#[derive(Debug, Clone)]
pub struct MixedAttention {
    pub cfg: MixedAttentionConfig,
    pub global: Option<MultiHeadAttention>,
    pub local_proj: Option<Linear>,
    pub local_conv: Option<Conv1d>,
}

impl MixedAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: MixedAttentionConfig,
        init: &mut Init,
    ) -> Result<Self> {
        cfg.validate()?;
        let (d1, d2) = (cfg.global_width(), cfg.local_width());
        let global = if d1 > 0 {
            Some(MultiHeadAttention::new(
                store,
                &format!("{name}.global"),
                MsaConfig {
                    width: d1,
                    heads: cfg.heads,
                },
                init,
            )?)
        } else {
            None
        };
        let (local_proj, local_conv) = if d2 > 0 {
            (
                Some(Linear::new(store, &format!("{name}.local.proj"), d2, d2, init)?),
                Some(Conv1d::new(store, &format!("{name}.local.conv"), cfg.kernel, d2, d2, init)?),
            )
        } else {
            (None, None)
        };
        Ok(MixedAttention {
            cfg,
            global,
            local_proj,
            local_conv,
        })
    }

    /// Applies both paths to already-normalized `y [B, l, d]`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        y: Var,
        maps: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let s = tape.shape(y);
        if s.len() != 3 || s[2] != self.cfg.width {
            return Err(Error::shape("mixed_attention", s, &[self.cfg.width]));
        }
        let (d1, d2) = (self.cfg.global_width(), self.cfg.local_width());
        let mut parts = Vec::with_capacity(2);
        if let Some(global) = &self.global {
            let yg = if d2 == 0 { y } else { tape.slice(y, 0, d1)? };
            parts.push(global.attend(tape, store, yg, yg, maps)?);
        }
        if let (Some(proj), Some(conv)) = (&self.local_proj, &self.local_conv) {
            let yl = if d1 == 0 { y } else { tape.slice(y, d1, d2)? };
            let h = proj.forward(tape, store, yl)?;
            let mut h = conv.forward(tape, store, h)?;
            if let Some(act) = self.cfg.local_activation {
                h = tape.activation(h, act.into());
            }
            parts.push(h);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            tape.concat(&parts)
        }
    }

    pub fn param_count(&self) -> u128 {
        self.global.as_ref().map_or(0, |g| g.param_count())
            + self.local_proj.as_ref().map_or(0, |p| p.param_count())
            + self.local_conv.as_ref().map_or(0, |c| {
                ((c.kernel * c.in_dim + 1) * c.out_dim) as u128
            })
    }
}

/// Pre-norm encoder layer:
/// `x = x + MA(LN(x))`, then `x = x + FFN(LN(x))`.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub mixer: MixedAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        mixer: MixedAttentionConfig,
        ffn: FfnConfig,
        init: &mut Init,
    ) -> Result<Self> {
        if ffn.width != mixer.width {
            return Err(Error::InvalidConfig(format!(
                "ffn width {} differs from attention width {}",
                ffn.width, mixer.width
            )));
        }
        let d = mixer.width;
        Ok(EncoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            mixer: MixedAttention::new(store, &format!("{name}.mixer"), mixer, init)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), ffn, init)?,
        })
    }

    /// The attention sublayer with its residual: `x + MA(LN(x))`.
    pub fn mixed_attention_residual<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        maps: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let y = self.norm1.forward(tape, store, x)?;
        let m = self.mixer.forward(tape, store, y, maps)?;
        tape.add(x, m)
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        maps: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let x = self.mixed_attention_residual(tape, store, x, maps)?;
        let y = self.norm2.forward(tape, store, x)?;
        let f = self.ffn.forward(tape, store, y)?;
        tape.add(x, f)
    }
}

/// Projects consecutive runs of `slice_len` serialized pixels to tokens and
/// adds a learned position table.
#[derive(Debug, Clone)]
pub struct SliceEmbedding {
    pub proj: Linear,
    pub positions: ParamId,
    pub slice_len: usize,
    pub channels: usize,
    pub tokens: usize,
}

impl SliceEmbedding {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        seq_len: usize,
        slice_len: usize,
        channels: usize,
        width: usize,
        init: &mut Init,
    ) -> Result<Self> {
        if slice_len == 0 || !seq_len.is_multiple_of(slice_len) {
            return Err(Error::InvalidConfig(format!(
                "slice length {slice_len} does not divide sequence length {seq_len}"
            )));
        }
        let tokens = seq_len / slice_len;
        let proj = Linear::new(store, &format!("{name}.proj"), slice_len * channels, width, init)?;
        let positions = store.add(format!("{name}.positions"), init.trunc_normal(&[tokens, width]))?;
        Ok(SliceEmbedding {
            proj,
            positions,
            slice_len,
            channels,
            tokens,
        })
    }

    /// `seq [B, L, C] -> [B, L/s, d]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, seq: Var) -> Result<Var> {
        let s = tape.shape(seq).to_vec();
        if s.len() != 3 || s[2] != self.channels {
            return Err(Error::shape("slice_embed", &s, &[self.channels]));
        }
        if s[1] != self.tokens * self.slice_len {
            return Err(Error::LengthMismatch {
                expected: self.tokens * self.slice_len,
                actual: s[1],
            });
        }
        let flat = tape.reshape(seq, &[s[0], self.tokens, self.slice_len * self.channels])?;
        let tokens = self.proj.forward(tape, store, flat)?;
        let pos = tape.param(store, self.positions);
        tape.add(tokens, pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(tape: &mut Tape<f64>, shape: &[usize], seed: u64) -> Var {
        let mut init = Init::new(seed);
        init.std = 1.0;
        let t = init.trunc_normal(shape);
        tape.constant(t)
    }

    #[test]
    fn single_token_attention_is_value_then_output() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(1);
        init.std = 0.5;
        let mha = MultiHeadAttention::new(&mut store, "a", MsaConfig { width: 4, heads: 1 }, &mut init).unwrap();
        let mut tape = Tape::new();
        let x = input(&mut tape, &[1, 1, 4], 2);
        let mut maps = Vec::new();
        let y = mha.attend(&mut tape, &store, x, x, Some(&mut maps)).unwrap();
        assert_eq!(tape.value(maps[0]).data(), &[1.0]);
        let v = mha.value.forward(&mut tape, &store, x).unwrap();
        let o = mha.output.forward(&mut tape, &store, v).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(o).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_attend_uniformly() {
        let mut store = ParamStore::<f64>::new();
        let mha = MultiHeadAttention::new(&mut store, "a", MsaConfig { width: 6, heads: 3 }, &mut Init::new(0)).unwrap();
        let mut tape = Tape::new();
        let row = [0.3, -0.2, 1.0, 0.5, 0.0, -1.0];
        let data: Vec<f64> = (0..5).flat_map(|_| row).collect();
        let x = tape.constant(Tensor::new(&[1, 5, 6], data).unwrap());
        let mut maps = Vec::new();
        mha.attend(&mut tape, &store, x, x, Some(&mut maps)).unwrap();
        assert_eq!(maps.len(), 3);
        for m in maps {
            for &v in tape.value(m).data() {
                assert!((v - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixed_shapes_and_split() {
        let cfg = MixedAttentionConfig::new(192, 0.5, 3, 2);
        assert_eq!((cfg.global_width(), cfg.local_width()), (96, 96));
        let odd = MixedAttentionConfig::new(7, 0.5, 3, 1);
        assert_eq!((odd.global_width(), odd.local_width()), (4, 3));
        assert!(MixedAttentionConfig::new(8, 0.5, 3, 3).validate().is_err());
        assert!(MixedAttentionConfig::new(8, 0.5, 2, 1).validate().is_err());

        let mut store = ParamStore::<f64>::new();
        let mixer = MixedAttention::new(&mut store, "m", cfg, &mut Init::new(0)).unwrap();
        let mut tape = Tape::inference();
        let x = input(&mut tape, &[1, 196, 192], 3);
        let y = mixer.forward(&mut tape, &store, x, None).unwrap();
        assert_eq!(tape.shape(y), &[1, 196, 192]);
    }

    #[test]
    fn mixed_param_count_matches_closed_form() {
        for (d, p, k) in [(192usize, 0.5, 3usize), (64, 0.25, 5), (10, 0.0, 3), (12, 1.0, 3)] {
            let cfg = MixedAttentionConfig::new(d, p, k, 1);
            let mut store = ParamStore::<f32>::new();
            let mixer = MixedAttention::new(&mut store, "m", cfg, &mut Init::new(0)).unwrap();
            let (d1, d2) = (cfg.global_width() as u128, cfg.local_width() as u128);
            let k = k as u128;
            let expected = 4 * (d1 + 1) * d1 + (d2 + 1) * d2 + (k * d2 + 1) * d2;
            assert_eq!(store.census(), expected);
            assert_eq!(mixer.param_count(), expected);
        }
    }

    #[test]
    fn zero_projections_give_identity_block() {
        let mut store = ParamStore::<f64>::new();
        let block = EncoderBlock::new(
            &mut store,
            "b",
            MixedAttentionConfig::new(8, 0.5, 3, 2),
            FfnConfig {
                width: 8,
                ratio: 4,
                activation: ActivationKind::Relu,
            },
            &mut Init::new(0),
        )
        .unwrap();
        for p in store.iter_mut() {
            if !p.name.ends_with("gamma") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let x = input(&mut tape, &[2, 5, 8], 9);
        let y = block.forward(&mut tape, &store, x, None).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn slice_embedding_token_count() {
        let mut store = ParamStore::<f32>::new();
        let emb = SliceEmbedding::new(&mut store, "e", 224 * 224, 256, 3, 8, &mut Init::new(0)).unwrap();
        assert_eq!(emb.tokens, 196);
        assert!(SliceEmbedding::new(&mut store, "f", 10, 3, 1, 8, &mut Init::new(0)).is_err());

        let mut store = ParamStore::<f64>::new();
        let emb = SliceEmbedding::new(&mut store, "e", 12, 12, 1, 4, &mut Init::new(0)).unwrap();
        let mut tape = Tape::new();
        let x = input(&mut tape, &[1, 12, 1], 0);
        let y = emb.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 4]);
    }
}
