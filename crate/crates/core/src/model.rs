//! Full EAT models: curve serialization, slice embedding, encoder stack,
//! final norm and task head.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::head::{AttentionRecorder, HeadConfig, TaskHead};
use crate::layers::{
    local_width, ActivationKind, EncoderBlock, FfnConfig, Init, LayerNorm, MixedAttentionConfig,
    SliceEmbedding,
};
use crate::sfc::{gather_table, CurveKind, Grid};

/// Model geometry and seed. Serialized as snake_case JSON; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EatConfig {
    pub variant: String,
    pub image_size: usize,
    pub channels: usize,
    pub sfc_mode: CurveKind,
    pub slice_len: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub head_depth: usize,
    pub ffn_ratio: usize,
    pub local_ratio: f64,
    pub kernel_size: usize,
    pub num_classes: usize,
    pub seed: u64,
    #[serde(default)]
    pub activation: ActivationKind,
    /// Cross-attention heads in the task head; `heads` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_heads: Option<usize>,
}

pub const VARIANTS: [&str; 4] = ["eat-ti", "eat-s", "eat-m", "eat-b"];

impl EatConfig {
    /// One of the four named ImageNet-scale variants.
    pub fn variant(name: &str) -> Result<Self> {
        let (embed_dim, heads) = match name.to_ascii_lowercase().as_str() {
            "eat-ti" | "ti" => (192, 2),
            "eat-s" | "s" => (384, 3),
            "eat-m" | "m" => (576, 4),
            "eat-b" | "b" => (768, 6),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown variant {other:?}; expected one of {}",
                    VARIANTS.join(", ")
                )))
            }
        };
        Ok(EatConfig {
            variant: VARIANTS[[192, 384, 576, 768].iter().position(|&d| d == embed_dim).unwrap()].into(),
            image_size: 224,
            channels: 3,
            sfc_mode: CurveKind::SweepInSweep(16),
            slice_len: 256,
            embed_dim,
            depth: 12,
            heads,
            head_depth: 2,
            ffn_ratio: 4,
            local_ratio: 0.5,
            kernel_size: 3,
            num_classes: 1000,
            seed: 0,
            activation: ActivationKind::Relu,
            head_heads: Some(8),
        })
    }

    /// The desk-scale digit classifier: 28x28 grayscale, SIS side 4, 49 tokens.
    pub fn micro() -> Self {
        EatConfig {
            variant: "micro".into(),
            image_size: 28,
            channels: 1,
            sfc_mode: CurveKind::SweepInSweep(4),
            slice_len: 16,
            embed_dim: 64,
            depth: 4,
            heads: 2,
            head_depth: 2,
            ffn_ratio: 4,
            local_ratio: 0.5,
            kernel_size: 3,
            num_classes: 10,
            seed: 0,
            activation: ActivationKind::Relu,
            head_heads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EatConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Grid {
        Grid::square(self.image_size)
    }

    pub fn seq_len(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn tokens(&self) -> usize {
        self.seq_len() / self.slice_len.max(1)
    }

    pub fn pixels_per_image(&self) -> usize {
        self.seq_len() * self.channels
    }

    pub fn head_heads(&self) -> usize {
        self.head_heads.unwrap_or(self.heads)
    }

    pub fn mixer_config(&self) -> MixedAttentionConfig {
        MixedAttentionConfig::new(self.embed_dim, self.local_ratio, self.kernel_size, self.heads)
    }

    pub fn ffn_config(&self) -> FfnConfig {
        FfnConfig {
            width: self.embed_dim,
            ratio: self.ffn_ratio,
            activation: self.activation,
        }
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            width: self.embed_dim,
            depth: self.head_depth,
            heads: self.head_heads(),
            task_tokens: 1,
            classes: self.num_classes,
            ffn_ratio: self.ffn_ratio,
            activation: self.activation,
        }
    }

    /// Checks every geometric constraint and names the first one violated.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.image_size == 0 || self.channels == 0 || self.embed_dim == 0 {
            return fail("image_size, channels and embed_dim must be positive".into());
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        self.sfc_mode
            .validate(self.grid())
            .or_else(|e| fail(format!("sfc_mode {} invalid for image_size {}: {e}", self.sfc_mode, self.image_size)))?;
        if self.slice_len == 0 || !self.seq_len().is_multiple_of(self.slice_len) {
            return fail(format!(
                "slice_len {} must divide the sequence length {}",
                self.slice_len,
                self.seq_len()
            ));
        }
        if self.ffn_ratio == 0 {
            return fail("ffn_ratio must be at least 1".into());
        }
        let d2 = local_width(self.embed_dim, self.local_ratio);
        let d1 = self.embed_dim - d2;
        self.mixer_config()
            .validate()
            .or_else(|e| fail(format!("mixed attention (d1 = {d1}, d2 = {d2}): {e}")))?;
        self.head_config().validate().or_else(|e| fail(format!("head: {e}")))
    }
}

/// One named tensor in a model's parameter inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: u128,
}

/// Prefix shared by every head parameter except the classifier.
pub const HEAD_PREFIX: &str = "head.";

#[derive(Debug, Clone)]
pub struct EatModel<T> {
    pub cfg: EatConfig,
    pub store: ParamStore<T>,
    pub embed: SliceEmbedding,
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
    pub head: TaskHead,
    gather: Vec<usize>,
}

impl<T: Real> EatModel<T> {
    /// Deterministic initialization from `cfg.seed`.
    pub fn build(cfg: EatConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(cfg.seed);
        let mut store = ParamStore::new();
        let d = cfg.embed_dim;
        let embed = SliceEmbedding::new(&mut store, "embed", cfg.seq_len(), cfg.slice_len, cfg.channels, d, &mut init)?;
        let blocks = (0..cfg.depth)
            .map(|i| {
                EncoderBlock::new(
                    &mut store,
                    &format!("blocks.{i}"),
                    cfg.mixer_config(),
                    cfg.ffn_config(),
                    &mut init,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(&mut store, "norm", d)?;
        let head = TaskHead::new(&mut store, "head", "classifier", cfg.head_config(), &mut init)?;
        let gather = gather_table(cfg.sfc_mode, cfg.grid())?;
        Ok(EatModel {
            cfg,
            store,
            embed,
            blocks,
            norm,
            head,
            gather,
        })
    }

    pub fn inventory(&self) -> Vec<ParamInfo> {
        self.store
            .iter()
            .map(|(_, p)| ParamInfo {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                count: p.value.numel() as u128,
            })
            .collect()
    }

    pub fn census(&self) -> u128 {
        self.store.census()
    }

    /// Task token and head layers; the classifier counts with the backbone.
    pub fn head_census(&self) -> u128 {
        self.store.census_prefix(HEAD_PREFIX)
    }

    pub fn backbone_census(&self) -> u128 {
        self.census() - self.head_census()
    }

    /// Serializes a batch of row-major `H x W x C` images along the curve:
    /// `[B, L, C]`.
    pub fn serialize_batch(&self, pixels: &[T]) -> Result<Tensor<T>> {
        let per = self.cfg.pixels_per_image();
        if pixels.is_empty() || !pixels.len().is_multiple_of(per) {
            return Err(Error::shape("forward", &[pixels.len()], &[per]));
        }
        let batch = pixels.len() / per;
        let c = self.cfg.channels;
        let mut data = Vec::with_capacity(pixels.len());
        for img in pixels.chunks_exact(per) {
            for &offset in &self.gather {
                data.extend_from_slice(&img[offset * c..(offset + 1) * c]);
            }
        }
        Tensor::new(&[batch, self.cfg.seq_len(), c], data)
    }

    /// Backbone features after the final norm, `[B, tokens, d]`.
    pub fn features(
        &self,
        tape: &mut Tape<T>,
        pixels: &[T],
        mut recorder: Option<&mut AttentionRecorder>,
    ) -> Result<Var> {
        let seq = tape.constant(self.serialize_batch(pixels)?);
        let mut x = self.embed.forward(tape, &self.store, seq)?;
        for block in &self.blocks {
            let mut maps = Vec::new();
            x = block.forward(tape, &self.store, x, Some(&mut maps))?;
            if let Some(rec) = recorder.as_deref_mut() {
                rec.backbone.push(maps);
            }
        }
        self.norm.forward(tape, &self.store, x)
    }

    /// `pixels` holds whole images back to back; returns logits `[B, classes]`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        pixels: &[T],
        mut recorder: Option<&mut AttentionRecorder>,
    ) -> Result<Var> {
        if let Some(rec) = recorder.as_deref_mut() {
            *rec = AttentionRecorder::new();
        }
        let features = self.features(tape, pixels, recorder.as_deref_mut())?;
        let logits = self
            .head
            .forward(tape, &self.store, features, recorder.as_deref_mut().map(|r| &mut r.head))?;
        if let Some(rec) = recorder {
            rec.mark_recorded();
        }
        Ok(logits)
    }

    /// Inference-only logits.
    pub fn logits(&self, pixels: &[T]) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let out = self.forward(&mut tape, pixels, None)?;
        Ok(tape.value(out).clone())
    }

    /// Argmax class per image; ties go to the lowest index.
    pub fn predict(&self, pixels: &[T]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(pixels)?))
    }
}

pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.last_dim();
    logits
        .data()
        .chunks(c.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
