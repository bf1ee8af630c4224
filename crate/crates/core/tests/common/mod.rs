//! Central finite differences, used as the reference for every analytic
//! gradient in the test suites.
#![allow(dead_code)]

pub mod cases;

use eat_core::diff::{ParamStore, Tape, Tensor, Var};
use eat_core::layers::Init;

pub const STEP: f64 = 1e-5;

/// Denominator floor relative to the largest gradient entry of a check.
/// Entries whose true gradient is exactly zero (attention key biases, for
/// example) are then judged against the check's own scale rather than
/// against finite-difference roundoff.
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR * scale.max(1.0))
}

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut init = Init::new(seed);
    init.std = 1.0;
    init.trunc_normal(shape)
}

/// Reduces any output to a scalar with fixed random weights so every
/// output entry contributes a distinct amount.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let w = tape.constant(random(tape.shape(out), seed ^ 0x5eed));
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    pub worst: String,
}

fn summarize(records: Vec<(String, f64, f64)>) -> GradCheck {
    let scale = records.iter().fold(0.0f64, |m, r| m.max(r.1.abs()));
    let mut report = GradCheck {
        max_rel: 0.0,
        checked: records.len(),
        worst: String::new(),
    };
    for (what, analytic, numeric) in records {
        let e = rel_err(analytic, numeric, scale);
        if e > report.max_rel {
            report.max_rel = e;
            report.worst = format!("{what}: analytic {analytic:e} numeric {numeric:e}");
        }
    }
    report
}

/// Compares backward against central differences for every input entry
/// and every parameter entry (at most `per_tensor` evenly spaced entries
/// per tensor).
pub fn check<F>(store: &mut ParamStore<f64>, inputs: &[Tensor<f64>], per_tensor: usize, loss: F) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>, &[Var]) -> Var,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let l = loss(&mut tape, store, &vars);
        tape.value(l).data()[0]
    };
    store.zero_grad();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let l = loss(&mut tape, store, &vars);
    let grads = tape.backward(l, store).unwrap();

    let mut records = Vec::new();
    let picks = |n: usize| -> Vec<usize> {
        if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|i| i * n / per_tensor).collect()
        }
    };
    let mut inputs = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in picks(inputs[k].numel()) {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + STEP;
            let up = eval(store, &inputs);
            inputs[k].data_mut()[i] = orig - STEP;
            let down = eval(store, &inputs);
            inputs[k].data_mut()[i] = orig;
            records.push((format!("input {k}[{i}]"), analytic[i], (up - down) / (2.0 * STEP)));
        }
    }
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let analytic = store.get(id).grad.data().to_vec();
        let name = store.get(id).name.clone();
        for i in picks(analytic.len()) {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + STEP;
            let up = eval(store, &inputs);
            store.get_mut(id).value.data_mut()[i] = orig - STEP;
            let down = eval(store, &inputs);
            store.get_mut(id).value.data_mut()[i] = orig;
            records.push((format!("{name}[{i}]"), analytic[i], (up - down) / (2.0 * STEP)));
        }
    }
    summarize(records)
}
