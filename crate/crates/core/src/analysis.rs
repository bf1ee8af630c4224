//! Exact integer parameter and FLOP accounting, and optimal channel-split
//! solvers for the mixed attention operator.
//!
//! FLOPs count multiply and add separately and cover projections,
//! attention products, softmax and convolutions only. Layer norm, residual
//! additions and activations are free.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::local_width;
use crate::model::EatConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostReport {
    pub params: u128,
    pub flops: u128,
}

impl CostReport {
    pub fn new(params: u128, flops: u128) -> Self {
        CostReport { params, flops }
    }

    pub fn times(self, n: u128) -> Self {
        CostReport::new(self.params * n, self.flops * n)
    }
}

impl std::ops::Add for CostReport {
    type Output = CostReport;
    fn add(self, o: CostReport) -> CostReport {
        CostReport::new(self.params + o.params, self.flops + o.flops)
    }
}

impl std::iter::Sum for CostReport {
    fn sum<I: Iterator<Item = CostReport>>(iter: I) -> Self {
        iter.fold(CostReport::default(), |a, b| a + b)
    }
}

/// A layer with its geometry: width `d`, sequence length `l`, kernel `k`,
/// query count `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Affine map `d_in -> d_out` applied to `l` tokens.
    Linear { d_in: usize, d_out: usize, l: usize },
    Conv1d { d: usize, l: usize, k: usize },
    SelfAttention { d: usize, l: usize },
    LocalSelfAttention { d: usize, l: usize, k: usize },
    CrossAttention { d: usize, l: usize, n: usize },
}

impl LayerKind {
    /// Square `d -> d` linear layer.
    pub fn linear(d: usize, l: usize) -> Self {
        LayerKind::Linear { d_in: d, d_out: d, l }
    }
}

fn positive(what: &str, v: usize) -> Result<u128> {
    if v == 0 {
        Err(Error::InvalidGeometry(format!("{what} must be positive")))
    } else {
        Ok(v as u128)
    }
}

pub fn layer_cost(kind: LayerKind) -> Result<CostReport> {
    Ok(match kind {
        LayerKind::Linear { d_in, d_out, l } => {
            let (i, o, l) = (positive("d_in", d_in)?, positive("d_out", d_out)?, positive("l", l)?);
            CostReport::new((i + 1) * o, 2 * i * o * l)
        }
        LayerKind::Conv1d { d, l, k } => {
            let (d, l, k) = (positive("d", d)?, positive("l", l)?, positive("k", k)?);
            CostReport::new((k * d + 1) * d, 2 * d * d * l * k)
        }
        LayerKind::SelfAttention { d, l } => {
            let (d, l) = (positive("d", d)?, positive("l", l)?);
            CostReport::new(4 * (d + 1) * d, 8 * d * d * l + 4 * d * l * l + 3 * l * l)
        }
        LayerKind::LocalSelfAttention { d, l, k } => {
            let (d, l, k) = (positive("d", d)?, positive("l", l)?, positive("k", k)?);
            CostReport::new(4 * (d + 1) * d, 8 * d * d * l + 4 * d * l * k + 3 * l * d)
        }
        LayerKind::CrossAttention { d, l, n } => {
            let (d, l, n) = (positive("d", d)?, positive("l", l)?, positive("n", n)?);
            CostReport::new(
                4 * (d + 1) * d,
                4 * d * d * l + (4 * d * l + 2 * d * d + 3 * l) * n,
            )
        }
    })
}

/// Cost of one mixed attention operator with `d1` global and `d2` local
/// channels, excluding its layer norm.
pub fn mixed_cost(d1: usize, d2: usize, l: usize, k: usize) -> Result<CostReport> {
    if d1 + d2 == 0 {
        return Err(Error::InvalidGeometry("d1 + d2 must be positive".into()));
    }
    Ok(CostReport::new(
        mixed_params(d1 as u128, d2 as u128, k as u128),
        mixed_flops(d1 as u128, d2 as u128, l as u128, k as u128),
    ))
}

fn mixed_params(d1: u128, d2: u128, k: u128) -> u128 {
    4 * (d1 + 1) * d1 + (d2 + 1) * d2 + (k * d2 + 1) * d2
}

fn mixed_flops(d1: u128, d2: u128, l: u128, k: u128) -> u128 {
    8 * d1 * d1 * l + 4 * d1 * l * l + 3 * l * l + 2 * d2 * d2 * l + 2 * d2 * d2 * l * k
}

/// Which closed form the exhaustive minimizer agreed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitForm {
    /// Local width `d2 = d/2 + 1/8` for `k = 3`: both channel groups take `d/2`.
    EvenSplit,
    /// Local width carries the sequence term, `d2 = d/2 + l/8` for `k = 3`.
    LocalCarriesLength,
    /// Global width carries the sequence term, `d1 = d/2 + l/8` for `k = 3`.
    GlobalCarriesLength,
    /// Neither closed form brackets the integer optimum.
    Neither,
}

impl fmt::Display for SplitForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitForm::EvenSplit => "d1 = d2 = d/2",
            SplitForm::LocalCarriesLength => "d2 = d/2 + l/8 (local width carries l/8)",
            SplitForm::GlobalCarriesLength => "d1 = d/2 + l/8 (global width carries l/8)",
            SplitForm::Neither => "no closed form matched",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSolution {
    pub d: usize,
    /// Smallest minimizing local width.
    pub d2_star: usize,
    pub d1_star: usize,
    pub minimum: u128,
    /// Every local width attaining `minimum`, ascending.
    pub ties: Vec<usize>,
    /// Real stationary point of the objective as a local width.
    pub vertex: f64,
    pub matched: SplitForm,
    /// Objective at the even split `d2 = floor(d/2)`.
    pub even_split_value: u128,
}

impl SplitSolution {
    /// Explains which placement of the `l/8` term the exhaustive optimum
    /// supports, when the answer depends on it.
    pub fn discrepancy_note(&self) -> Option<String> {
        match self.matched {
            SplitForm::LocalCarriesLength => Some(
                "optimum matches d2 = d/2 + l/8; the form that gives d1 = d/2 + l/8 swaps the two widths and is not supported"
                    .into(),
            ),
            SplitForm::GlobalCarriesLength => Some(
                "optimum matches d1 = d/2 + l/8; the form that gives d2 = d/2 + l/8 is not supported".into(),
            ),
            _ => None,
        }
    }

    /// Every minimizer is `floor(vertex)` or `ceil(vertex)`.
    pub fn vertex_brackets(&self) -> bool {
        in_bracket(&self.ties, self.vertex)
    }
}

fn scan(d: usize, objective: impl Fn(u128, u128) -> u128) -> (usize, u128, Vec<usize>, u128) {
    let values: Vec<u128> = (0..=d)
        .map(|d2| objective((d - d2) as u128, d2 as u128))
        .collect();
    let minimum = *values.iter().min().expect("d2 range is non-empty");
    let ties: Vec<usize> = (0..=d).filter(|&d2| values[d2] == minimum).collect();
    (ties[0], minimum, ties, values[d / 2])
}

fn in_bracket(ties: &[usize], v: f64) -> bool {
    let (lo, hi) = (v.floor(), v.ceil());
    ties.iter().all(|&t| t as f64 == lo || t as f64 == hi)
}

/// Exhaustive minimization of the mixed parameter count over `d2 in [0, d]`.
pub fn optimal_split_params(d: usize, k: usize) -> SplitSolution {
    let vertex = (8.0 * d as f64 + 2.0) / (2.0 * (5.0 + k as f64));
    let k = k as u128;
    let (d2_star, minimum, ties, even) = scan(d, |d1, d2| mixed_params(d1, d2, k));
    let matched = if ties.contains(&(d / 2)) {
        SplitForm::EvenSplit
    } else {
        SplitForm::Neither
    };
    SplitSolution {
        d,
        d2_star,
        d1_star: d - d2_star,
        minimum,
        ties,
        vertex,
        matched,
        even_split_value: even,
    }
}

/// Exhaustive minimization of the mixed FLOP count over `d2 in [0, d]`.
pub fn optimal_split_flops(d: usize, l: usize, k: usize) -> SplitSolution {
    let vertex = (16.0 * d as f64 + 4.0 * l as f64) / (2.0 * (10.0 + 2.0 * k as f64));
    let (lw, kw) = (l as u128, k as u128);
    let (d2_star, minimum, ties, even) = scan(d, |d1, d2| mixed_flops(d1, d2, lw, kw));
    // the mirrored assignment puts the same stationary point on d1
    let mirrored = d as f64 - vertex;
    let matched = if l == 0 {
        SplitForm::Neither
    } else if in_bracket(&ties, vertex) {
        SplitForm::LocalCarriesLength
    } else if in_bracket(&ties, mirrored) {
        SplitForm::GlobalCarriesLength
    } else {
        SplitForm::Neither
    };
    SplitSolution {
        d,
        d2_star,
        d1_star: d - d2_star,
        minimum,
        ties,
        vertex,
        matched,
        even_split_value: even,
    }
}

/// Attention FLOPs of one self-attention layer, used to compare sequence
/// lengths with and without a class token.
pub fn attention_flops(d: usize, l: usize) -> Result<u128> {
    Ok(layer_cost(LayerKind::SelfAttention { d, l })?.flops)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentCost {
    pub name: String,
    /// How many copies the model holds.
    pub count: usize,
    /// Cost of one copy.
    pub each: CostReport,
    pub in_head: bool,
}

impl ComponentCost {
    pub fn total(&self) -> CostReport {
        self.each.times(self.count as u128)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelCost {
    pub components: Vec<ComponentCost>,
    pub total: CostReport,
    /// Task token and head layers.
    pub head: CostReport,
    /// Everything else, classifier included.
    pub backbone: CostReport,
}

/// Analytic cost of the model `cfg` describes. Parameter totals equal the
/// built model's census.
pub fn model_cost(cfg: &EatConfig) -> Result<ModelCost> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let l = cfg.tokens();
    let r = cfg.ffn_ratio;
    let d2 = local_width(d, cfg.local_ratio);
    let d1 = d - d2;
    let norm = CostReport::new(2 * d as u128, 0);
    let ffn = |tokens: usize| -> Result<CostReport> {
        Ok(layer_cost(LayerKind::Linear { d_in: d, d_out: r * d, l: tokens })?
            + layer_cost(LayerKind::Linear { d_in: r * d, d_out: d, l: tokens })?)
    };
    let n = cfg.head_config().task_tokens;
    let comp = |name: &str, count: usize, each: CostReport, in_head: bool| ComponentCost {
        name: name.into(),
        count,
        each,
        in_head,
    };
    let components = vec![
        comp(
            "embedding",
            1,
            layer_cost(LayerKind::Linear {
                d_in: cfg.slice_len * cfg.channels,
                d_out: d,
                l,
            })?,
            false,
        ),
        comp("positions", 1, CostReport::new((l * d) as u128, 0), false),
        comp("block mixed attention", cfg.depth, mixed_cost(d1, d2, l, cfg.kernel_size)?, false),
        comp("block norms", cfg.depth, norm.times(2), false),
        comp("block ffn", cfg.depth, ffn(l)?, false),
        comp("final norm", 1, norm, false),
        comp("head task token", 1, CostReport::new((n * d) as u128, 0), true),
        comp(
            "head cross attention",
            cfg.head_depth,
            layer_cost(LayerKind::CrossAttention { d, l, n })?,
            true,
        ),
        comp("head norms", cfg.head_depth, norm.times(3), true),
        comp("head ffn", cfg.head_depth, ffn(n)?, true),
        comp(
            "classifier",
            1,
            layer_cost(LayerKind::Linear {
                d_in: d,
                d_out: cfg.num_classes,
                l: n,
            })?,
            false,
        ),
    ];
    let total: CostReport = components.iter().map(ComponentCost::total).sum();
    let head: CostReport = components.iter().filter(|c| c.in_head).map(ComponentCost::total).sum();
    Ok(ModelCost {
        components,
        total,
        head,
        backbone: CostReport::new(total.params - head.params, total.flops - head.flops),
    })
}
