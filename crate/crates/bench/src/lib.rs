//! Fixtures shared by the benchmarks.

use eat_core::diff::Tensor;
use eat_core::layers::Init;

/// Deterministic grayscale images in `[0, 1]`, back to back.
pub fn pixels(batch: usize, side: usize) -> Vec<f32> {
    (0..batch * side * side)
        .map(|i| ((i * 2654435761usize) % 256) as f32 / 255.0)
        .collect()
}

/// Unit-variance activations of the given shape.
pub fn activations(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut init = Init::new(seed);
    init.std = 1.0;
    init.trunc_normal(shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_sizes() {
        let p = pixels(2, 28);
        assert_eq!(p.len(), 2 * 784);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(activations(&[2, 3, 4], 0).shape(), &[2, 3, 4]);
    }
}
