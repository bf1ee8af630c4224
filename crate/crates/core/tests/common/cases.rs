//! Gradient-check cases shared by the gradient tests and the acceptance run.

use eat_core::diff::{ParamStore, Tape, Var};
use eat_core::head::{HeadConfig, TaskHead};
use eat_core::layers::{
    ActivationKind, Conv1d, EncoderBlock, FeedForward, FfnConfig, Init, MixedAttentionConfig, MsaConfig,
    MultiHeadAttention,
};
use eat_core::{CurveKind, EatConfig, EatModel};

use super::{check, random, weighted_sum, GradCheck};

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const LAYER_TOL: f64 = 1e-4;

pub struct Case {
    pub name: &'static str,
    pub tol: f64,
    pub run: fn() -> GradCheck,
}

fn unary(shape: &[usize], seed: u64, op: fn(&mut Tape<f64>, Var) -> Var) -> GradCheck {
    let mut store = ParamStore::new();
    check(&mut store, &[random(shape, seed)], usize::MAX, move |t, _, v| {
        let y = op(t, v[0]);
        weighted_sum(t, y, seed)
    })
}

fn binary(a: &[usize], b: &[usize], seed: u64, op: fn(&mut Tape<f64>, Var, Var) -> Var) -> GradCheck {
    let mut store = ParamStore::new();
    check(&mut store, &[random(a, seed), random(b, seed + 1)], usize::MAX, move |t, _, v| {
        let y = op(t, v[0], v[1]);
        weighted_sum(t, y, seed)
    })
}

fn layer_init(seed: u64) -> Init {
    let mut init = Init::new(seed);
    init.std = 0.4;
    init
}

fn msa() -> GradCheck {
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "msa", MsaConfig { width: 8, heads: 2 }, &mut layer_init(7)).unwrap();
    check(&mut store, &[random(&[2, 5, 8], 7)], usize::MAX, |t, s, v| {
        let y = mha.attend(t, s, v[0], v[0], None).unwrap();
        weighted_sum(t, y, 7)
    })
}

fn ffn() -> GradCheck {
    let mut store = ParamStore::new();
    let cfg = FfnConfig {
        width: 6,
        ratio: 4,
        activation: ActivationKind::Relu,
    };
    let f = FeedForward::new(&mut store, "ffn", cfg, &mut layer_init(11)).unwrap();
    check(&mut store, &[random(&[2, 4, 6], 11)], usize::MAX, |t, s, v| {
        let y = f.forward(t, s, v[0]).unwrap();
        weighted_sum(t, y, 11)
    })
}

fn conv1d() -> GradCheck {
    let mut store = ParamStore::new();
    let c = Conv1d::new(&mut store, "conv", 3, 5, 4, &mut layer_init(5)).unwrap();
    check(&mut store, &[random(&[2, 7, 5], 5)], usize::MAX, |t, s, v| {
        let y = c.forward(t, s, v[0]).unwrap();
        weighted_sum(t, y, 5)
    })
}

fn block(d: usize, seed: u64) -> (ParamStore<f64>, EncoderBlock) {
    let mut store = ParamStore::new();
    let b = EncoderBlock::new(
        &mut store,
        "block",
        MixedAttentionConfig::new(d, 0.5, 3, 2),
        FfnConfig {
            width: d,
            ratio: 4,
            activation: ActivationKind::Relu,
        },
        &mut layer_init(seed),
    )
    .unwrap();
    (store, b)
}

fn mixed_block() -> GradCheck {
    let (mut store, b) = block(16, 3);
    check(&mut store, &[random(&[1, 8, 16], 3)], usize::MAX, |t, s, v| {
        let y = b.mixed_attention_residual(t, s, v[0], None).unwrap();
        weighted_sum(t, y, 3)
    })
}

fn encoder_block() -> GradCheck {
    let (mut store, b) = block(16, 4);
    check(&mut store, &[random(&[2, 8, 16], 4)], usize::MAX, |t, s, v| {
        let y = b.forward(t, s, v[0], None).unwrap();
        weighted_sum(t, y, 4)
    })
}

fn cross_attention() -> GradCheck {
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "ca", MsaConfig { width: 8, heads: 2 }, &mut layer_init(13)).unwrap();
    check(
        &mut store,
        &[random(&[1, 1, 8], 13), random(&[1, 6, 8], 14)],
        usize::MAX,
        |t, s, v| {
            let y = mha.attend(t, s, v[0], v[1], None).unwrap();
            weighted_sum(t, y, 13)
        },
    )
}

fn task_head() -> GradCheck {
    let mut store = ParamStore::new();
    let cfg = HeadConfig {
        width: 8,
        depth: 2,
        heads: 2,
        task_tokens: 1,
        classes: 3,
        ffn_ratio: 4,
        activation: ActivationKind::Relu,
    };
    let h = TaskHead::new(&mut store, "head", "classifier", cfg, &mut layer_init(13)).unwrap();
    check(&mut store, &[random(&[2, 6, 8], 13)], usize::MAX, |t, s, v| {
        let logits = h.forward(t, s, v[0], None).unwrap();
        t.cross_entropy_mean(logits, &[2, 0]).unwrap()
    })
}

/// The smallest full model: 8x8 grayscale, d = 8, one block, 4 classes.
pub fn micro_model() -> EatModel<f64> {
    let mut model = EatModel::<f64>::build(EatConfig {
        variant: "grad".into(),
        image_size: 8,
        channels: 1,
        sfc_mode: CurveKind::SweepInSweep(4),
        slice_len: 16,
        embed_dim: 8,
        depth: 1,
        heads: 2,
        head_depth: 2,
        ffn_ratio: 4,
        local_ratio: 0.5,
        kernel_size: 3,
        num_classes: 4,
        seed: 0,
        activation: ActivationKind::Relu,
        head_heads: None,
    })
    .unwrap();
    for (k, p) in model.store.iter_mut().enumerate() {
        let noise = random(p.value.shape(), 100 + k as u64);
        let gamma = p.name.ends_with("gamma");
        for (v, n) in p.value.data_mut().iter_mut().zip(noise.data()) {
            *v = if gamma { 1.0 + 0.1 * n } else { 0.3 * n };
        }
    }
    model
}

fn full_model() -> GradCheck {
    let mut model = micro_model();
    let pixels: Vec<f64> = random(&[2, 64], 21).data().iter().map(|v| v.abs().min(1.0)).collect();
    let cfg_model = model.clone();
    check(&mut model.store, &[], usize::MAX, move |t, s, _| {
        let mut m = cfg_model.clone();
        m.store = s.clone();
        let logits = m.forward(t, &pixels, None).unwrap();
        t.cross_entropy_mean(logits, &[1, 3]).unwrap()
    })
}

pub fn primitive_cases() -> Vec<Case> {
    vec![
        Case { name: "matmul", tol: PRIMITIVE_TOL, run: || binary(&[2, 3, 4], &[4, 5], 1, |t, a, b| t.matmul(a, b).unwrap()) },
        Case { name: "batch_matmul", tol: PRIMITIVE_TOL, run: || binary(&[2, 3, 4], &[2, 4, 5], 2, |t, a, b| t.batch_matmul(a, b, false).unwrap()) },
        Case { name: "batch_matmul_transposed", tol: PRIMITIVE_TOL, run: || binary(&[2, 3, 4], &[2, 5, 4], 3, |t, a, b| t.batch_matmul(a, b, true).unwrap()) },
        Case { name: "add_broadcast", tol: PRIMITIVE_TOL, run: || binary(&[2, 3, 4], &[4], 4, |t, a, b| t.add(a, b).unwrap()) },
        Case { name: "mul", tol: PRIMITIVE_TOL, run: || binary(&[3, 4], &[3, 4], 5, |t, a, b| t.mul(a, b).unwrap()) },
        Case { name: "scale", tol: PRIMITIVE_TOL, run: || unary(&[3, 4], 6, |t, a| t.scale(a, -1.7)) },
        Case { name: "concat", tol: PRIMITIVE_TOL, run: || binary(&[2, 3, 2], &[2, 3, 3], 7, |t, a, b| t.concat(&[a, b]).unwrap()) },
        Case { name: "slice", tol: PRIMITIVE_TOL, run: || unary(&[2, 3, 6], 8, |t, a| t.slice(a, 2, 3).unwrap()) },
        Case { name: "select_row", tol: PRIMITIVE_TOL, run: || unary(&[2, 3, 4], 9, |t, a| t.select_row(a, 1).unwrap()) },
        Case { name: "transpose", tol: PRIMITIVE_TOL, run: || unary(&[2, 3, 4], 10, |t, a| t.transpose(a).unwrap()) },
        Case { name: "reshape", tol: PRIMITIVE_TOL, run: || unary(&[2, 3, 4], 11, |t, a| t.reshape(a, &[6, 4]).unwrap()) },
        Case { name: "softmax", tol: PRIMITIVE_TOL, run: || unary(&[3, 5], 12, |t, a| t.softmax(a)) },
        Case { name: "relu", tol: PRIMITIVE_TOL, run: || unary(&[4, 5], 13, |t, a| t.relu(a)) },
        Case { name: "gelu", tol: PRIMITIVE_TOL, run: || unary(&[4, 5], 14, |t, a| t.gelu(a)) },
        Case { name: "mean", tol: PRIMITIVE_TOL, run: || unary(&[4, 5], 15, |t, a| t.mean(a)) },
        Case { name: "sum", tol: PRIMITIVE_TOL, run: || unary(&[4, 5], 16, |t, a| t.sum(a)) },
        Case { name: "layer_norm", tol: PRIMITIVE_TOL, run: layer_norm },
        Case { name: "conv1d_same", tol: PRIMITIVE_TOL, run: conv_primitive },
        Case { name: "cross_entropy_mean", tol: PRIMITIVE_TOL, run: cross_entropy },
    ]
}

fn layer_norm() -> GradCheck {
    let mut store = ParamStore::new();
    let inputs = [random(&[2, 3, 5], 17), random(&[5], 18), random(&[5], 19)];
    check(&mut store, &inputs, usize::MAX, |t, _, v| {
        let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
        weighted_sum(t, y, 17)
    })
}

fn conv_primitive() -> GradCheck {
    let mut store = ParamStore::new();
    let inputs = [random(&[2, 6, 3], 20), random(&[3, 3, 4], 21), random(&[4], 22)];
    check(&mut store, &inputs, usize::MAX, |t, _, v| {
        let y = t.conv1d_same(v[0], v[1], v[2]).unwrap();
        weighted_sum(t, y, 20)
    })
}

fn cross_entropy() -> GradCheck {
    let mut store = ParamStore::new();
    check(&mut store, &[random(&[4, 5], 23)], usize::MAX, |t, _, v| {
        t.cross_entropy_mean(v[0], &[0, 4, 2, 2]).unwrap()
    })
}

pub fn layer_cases() -> Vec<Case> {
    vec![
        Case { name: "msa", tol: LAYER_TOL, run: msa },
        Case { name: "ffn", tol: PRIMITIVE_TOL, run: ffn },
        Case { name: "conv1d_layer", tol: LAYER_TOL, run: conv1d },
        Case { name: "mixed_block", tol: LAYER_TOL, run: mixed_block },
        Case { name: "encoder_block", tol: LAYER_TOL, run: encoder_block },
        Case { name: "cross_attention", tol: LAYER_TOL, run: cross_attention },
        Case { name: "task_head", tol: LAYER_TOL, run: task_head },
        Case { name: "full_micro_model", tol: LAYER_TOL, run: full_model },
    ]
}

pub fn all_cases() -> Vec<Case> {
    let mut v = primitive_cases();
    v.extend(layer_cases());
    v
}
