//! Task-related head: a learned task token queries the backbone features
//! through stacked cross-attention layers, and a linear classifier reads the
//! final token.

use crate::diff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{
    ActivationKind, FeedForward, FfnConfig, Init, LayerNorm, Linear, MsaConfig, MultiHeadAttention,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub task_tokens: usize,
    pub classes: usize,
    pub ffn_ratio: usize,
    pub activation: ActivationKind,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("head depth must be at least 1".into()));
        }
        if self.task_tokens == 0 {
            return Err(Error::InvalidConfig("head needs at least one task token".into()));
        }
        if self.classes == 0 {
            return Err(Error::InvalidConfig("class count must be at least 1".into()));
        }
        MsaConfig {
            width: self.width,
            heads: self.heads,
        }
        .validate()
    }
}

/// `q = q + CA(LN(q), LN(features))`, then `q = q + FFN(LN(q))`.
#[derive(Debug, Clone)]
pub struct HeadLayer {
    pub norm_query: LayerNorm,
    pub norm_context: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl HeadLayer {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &HeadConfig, init: &mut Init) -> Result<Self> {
        let d = cfg.width;
        Ok(HeadLayer {
            norm_query: LayerNorm::new(store, &format!("{name}.norm_query"), d)?,
            norm_context: LayerNorm::new(store, &format!("{name}.norm_context"), d)?,
            attn: MultiHeadAttention::new(
                store,
                &format!("{name}.attn"),
                MsaConfig {
                    width: d,
                    heads: cfg.heads,
                },
                init,
            )?,
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), d)?,
            ffn: FeedForward::new(
                store,
                &format!("{name}.ffn"),
                FfnConfig {
                    width: d,
                    ratio: cfg.ffn_ratio,
                    activation: cfg.activation,
                },
                init,
            )?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        q: Var,
        features: Var,
        maps: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let nq = self.norm_query.forward(tape, store, q)?;
        let nf = self.norm_context.forward(tape, store, features)?;
        let a = self.attn.attend(tape, store, nq, nf, maps)?;
        let q = tape.add(q, a)?;
        let y = self.norm_ffn.forward(tape, store, q)?;
        let f = self.ffn.forward(tape, store, y)?;
        tape.add(q, f)
    }
}

#[derive(Debug, Clone)]
pub struct TaskHead {
    pub cfg: HeadConfig,
    pub token: ParamId,
    pub layers: Vec<HeadLayer>,
    pub classifier: Linear,
}

impl TaskHead {
    /// Registers the task token and the `depth` layers under `name`, and the
    /// classifier under `classifier_name`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        classifier_name: &str,
        cfg: HeadConfig,
        init: &mut Init,
    ) -> Result<Self> {
        cfg.validate()?;
        let token = store.add(
            format!("{name}.task_token"),
            init.trunc_normal(&[cfg.task_tokens, cfg.width]),
        )?;
        let layers = (0..cfg.depth)
            .map(|m| HeadLayer::new(store, &format!("{name}.layers.{m}"), &cfg, init))
            .collect::<Result<Vec<_>>>()?;
        let classifier = Linear::new(store, classifier_name, cfg.width, cfg.classes, init)?;
        Ok(TaskHead {
            cfg,
            token,
            layers,
            classifier,
        })
    }

    /// The task-token stream after all layers, `[B, n_q, d]`.
    pub fn tokens<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: Var,
        mut maps: Option<&mut Vec<Vec<Var>>>,
    ) -> Result<Var> {
        let s = tape.shape(features).to_vec();
        if s.len() != 3 || s[2] != self.cfg.width {
            return Err(Error::shape("head", &s, &[self.cfg.width]));
        }
        let zeros = tape.constant(Tensor::zeros(&[s[0], self.cfg.task_tokens, self.cfg.width]));
        let token = tape.param(store, self.token);
        let mut q = tape.add(zeros, token)?;
        for layer in &self.layers {
            let mut layer_maps = Vec::new();
            q = layer.forward(tape, store, q, features, Some(&mut layer_maps))?;
            if let Some(maps) = maps.as_deref_mut() {
                maps.push(layer_maps);
            }
        }
        Ok(q)
    }

    /// `features [B, l, d] -> logits [B, classes]`, read from the last task token.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: Var,
        maps: Option<&mut Vec<Vec<Var>>>,
    ) -> Result<Var> {
        let q = self.tokens(tape, store, features, maps)?;
        let last = tape.select_row(q, self.cfg.task_tokens - 1)?;
        self.classifier.forward(tape, store, last)
    }
}

/// Attention maps from one recorded forward pass for a single sample.
/// Stored densely as `layers x heads x queries x keys`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub layers: usize,
    pub heads: usize,
    pub queries: usize,
    pub keys: usize,
    pub values: Vec<f64>,
}

impl AttentionMaps {
    pub fn shape(&self) -> [usize; 4] {
        [self.layers, self.heads, self.queries, self.keys]
    }

    pub fn get(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        self.values[((layer * self.heads + head) * self.queries + query) * self.keys + key]
    }

    /// One `queries x keys` map.
    pub fn map(&self, layer: usize, head: usize) -> &[f64] {
        let n = self.queries * self.keys;
        let start = (layer * self.heads + head) * n;
        &self.values[start..start + n]
    }

    /// Per-layer mean over heads, `queries x keys`.
    pub fn head_mean(&self, layer: usize) -> Vec<f64> {
        let n = self.queries * self.keys;
        let mut out = vec![0.0; n];
        for h in 0..self.heads {
            for (o, v) in out.iter_mut().zip(self.map(layer, h)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.heads as f64);
        out
    }

    /// Largest deviation of any row sum from 1 and the most negative entry.
    pub fn stochasticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for row in self.values.chunks(self.keys.max(1)) {
            let sum: f64 = row.iter().sum();
            worst = worst.max((sum - 1.0).abs());
            for &v in row {
                worst = worst.max(-v);
            }
        }
        worst
    }
}

/// Collects attention matrices while a forward pass is built. Backbone
/// entries come from the global path of each encoder block, head entries
/// from each cross-attention layer.
#[derive(Debug, Default)]
pub struct AttentionRecorder {
    pub(crate) backbone: Vec<Vec<Var>>,
    pub(crate) head: Vec<Vec<Var>>,
    recorded: bool,
}

impl AttentionRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn mark_recorded(&mut self) {
        self.recorded = true;
    }

    pub fn is_recorded(&self) -> bool {
        self.recorded
    }

    /// Head cross-attention maps of `sample`, `M x h x n_q x l`.
    pub fn head_maps<T: Real>(&self, tape: &Tape<T>, sample: usize) -> Result<AttentionMaps> {
        self.collect(tape, &self.head, sample)
    }

    /// Backbone self-attention maps of `sample`, `N x h x l x l`.
    pub fn backbone_maps<T: Real>(&self, tape: &Tape<T>, sample: usize) -> Result<AttentionMaps> {
        self.collect(tape, &self.backbone, sample)
    }

    fn collect<T: Real>(&self, tape: &Tape<T>, vars: &[Vec<Var>], sample: usize) -> Result<AttentionMaps> {
        if !self.recorded {
            return Err(Error::NoRecordedPass);
        }
        let layers = vars.len();
        let heads = vars.first().map_or(0, Vec::len);
        let (queries, keys) = match vars.first().and_then(|l| l.first()) {
            Some(&v) => {
                let s = tape.shape(v);
                if sample >= s[0] {
                    return Err(Error::IndexOutOfRange {
                        index: sample,
                        len: s[0],
                    });
                }
                (s[1], s[2])
            }
            None => (0, 0),
        };
        let n = queries * keys;
        let mut values = Vec::with_capacity(layers * heads * n);
        for layer in vars {
            for &v in layer {
                let data = tape.value(v).data();
                values.extend(data[sample * n..(sample + 1) * n].iter().map(|x| x.to_f64_lossy()));
            }
        }
        Ok(AttentionMaps {
            layers,
            heads,
            queries,
            keys,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(store: &mut ParamStore<f64>, depth: usize, heads: usize) -> TaskHead {
        TaskHead::new(
            store,
            "head",
            "classifier",
            HeadConfig {
                width: 8,
                depth,
                heads,
                task_tokens: 1,
                classes: 5,
                ffn_ratio: 4,
                activation: ActivationKind::Relu,
            },
            &mut Init::new(4),
        )
        .unwrap()
    }

    fn features(tape: &mut Tape<f64>, b: usize, l: usize) -> Var {
        let mut init = Init::new(8);
        init.std = 1.0;
        let t = init.trunc_normal(&[b, l, 8]);
        tape.constant(t)
    }

    #[test]
    fn zero_projections_read_the_task_token() {
        let mut store = ParamStore::<f64>::new();
        let h = head(&mut store, 2, 2);
        for p in store.iter_mut() {
            let keep = p.name.ends_with("gamma") || p.name.contains("task_token") || p.name.starts_with("classifier");
            if !keep {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let f = features(&mut tape, 1, 6);
        let logits = h.forward(&mut tape, &store, f, None).unwrap();
        let token = tape.param(&store, h.token);
        let direct = h.classifier.forward(&mut tape, &store, token).unwrap();
        assert_eq!(tape.value(logits).data(), tape.value(direct).data());
    }

    #[test]
    fn map_shapes_and_mean() {
        let mut store = ParamStore::<f64>::new();
        let h = head(&mut store, 2, 2);
        let mut tape = Tape::inference();
        let f = features(&mut tape, 3, 7);
        let mut rec = AttentionRecorder::new();
        assert!(matches!(rec.head_maps(&tape, 0), Err(Error::NoRecordedPass)));
        let logits = h.forward(&mut tape, &store, f, Some(&mut rec.head)).unwrap();
        rec.mark_recorded();
        assert_eq!(tape.shape(logits), &[3, 5]);
        let maps = rec.head_maps(&tape, 2).unwrap();
        assert_eq!(maps.shape(), [2, 2, 1, 7]);
        assert!(maps.stochasticity_error() < 1e-12);
        let mean = maps.head_mean(1);
        for (k, m) in mean.iter().enumerate() {
            let expected = (maps.get(1, 0, 0, k) + maps.get(1, 1, 0, k)) / 2.0;
            assert!((m - expected).abs() < 1e-15);
        }
        assert!(rec.head_maps(&tape, 3).is_err());
    }

    #[test]
    fn uniform_features_give_uniform_maps() {
        let mut store = ParamStore::<f64>::new();
        let h = head(&mut store, 2, 4);
        let mut tape = Tape::inference();
        let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let data: Vec<f64> = (0..5).flat_map(|_| row.clone()).collect();
        let f = tape.constant(Tensor::new(&[1, 5, 8], data).unwrap());
        let mut rec = AttentionRecorder::new();
        h.forward(&mut tape, &store, f, Some(&mut rec.head)).unwrap();
        rec.mark_recorded();
        for v in rec.head_maps(&tape, 0).unwrap().values {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs() {
        let base = HeadConfig {
            width: 8,
            depth: 2,
            heads: 2,
            task_tokens: 1,
            classes: 10,
            ffn_ratio: 4,
            activation: ActivationKind::Relu,
        };
        assert!(base.validate().is_ok());
        assert!(HeadConfig { depth: 0, ..base }.validate().is_err());
        assert!(HeadConfig { heads: 3, ..base }.validate().is_err());
        assert!(HeadConfig { classes: 0, ..base }.validate().is_err());
    }
}
