//! Independent checks the test suite and the `oracle` CLI subcommand lean on.
//!
//! Nothing here reuses engine internals beyond the public forward pass:
//! gradients come from central finite differences of the batch loss, flip
//! counts from a direct scan of a weight trajectory, and noise statistics
//! from sample moments.

use crate::nn::{softmax_cross_entropy, Mode, Model};
use crate::params::Grads;
use crate::tensor::Tensor;

/// Relative error with an absolute floor: pairs whose magnitudes both sit
/// below the floor are compared absolutely, so structurally-zero gradients
/// (e.g. a bias feeding straight into batch norm, where only rounding
/// residue survives) do not register as disagreement.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Central-difference gradients of the training-mode batch loss with respect
/// to every parameter.
pub fn finite_diff_grads(model: &Model, x: &Tensor, labels: &[usize], h: f64) -> Grads {
    let mut probe = model.clone();
    let mut grads = Grads::zeros_like(&probe.params);
    for gi in 0..probe.params.groups.len() {
        for i in 0..probe.params.groups[gi].tensor.numel() {
            let orig = probe.params.groups[gi].tensor.data[i];
            probe.params.groups[gi].tensor.data[i] = orig + h;
            let (logits, _) = probe.forward(x, Mode::Train);
            let plus = softmax_cross_entropy(&logits, labels).0;
            probe.params.groups[gi].tensor.data[i] = orig - h;
            let (logits, _) = probe.forward(x, Mode::Train);
            let minus = softmax_cross_entropy(&logits, labels).0;
            probe.params.groups[gi].tensor.data[i] = orig;
            grads.tensors[gi].data[i] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

/// Worst-case comparison between analytic and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compare the backward pass against [`finite_diff_grads`] on one batch.
pub fn gradcheck(model: &Model, x: &Tensor, labels: &[usize], h: f64) -> GradCheckReport {
    let mut train = model.clone();
    let (logits, cache) = train.forward(x, Mode::Train);
    let (_, dlogits) = softmax_cross_entropy(&logits, labels);
    let analytic = train.backward(&cache.unwrap(), &dlogits);
    let numeric = finite_diff_grads(model, x, labels, h);

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for (gi, group) in model.params.groups.iter().enumerate() {
        for i in 0..group.tensor.numel() {
            let err = relative_error(numeric.tensors[gi].data[i], analytic.tensors[gi].data[i]);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{}[{}]", group.name, i);
            }
        }
    }
    report
}

/// Sign-flip count of one weight trajectory, scanned directly: a flip is a
/// step whose sign is nonzero, follows a nonzero sign, and differs from it.
/// The reference sign always moves to the current sign, so a weight that
/// lands exactly on zero breaks the chain.
pub fn recount_flips(trajectory: &[f64]) -> u64 {
    if trajectory.is_empty() {
        return 0;
    }
    let sign = |v: f64| -> i8 {
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };
    let mut flips = 0;
    let mut prev = sign(trajectory[0]);
    for &v in &trajectory[1..] {
        let s = sign(v);
        if s != 0 && prev != 0 && s != prev {
            flips += 1;
        }
        prev = s;
    }
    flips
}

/// Sample mean and (biased) variance.
pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recount_handles_zero_crossings() {
        assert_eq!(recount_flips(&[1.0, -1.0, 1.0, -1.0]), 3);
        assert_eq!(recount_flips(&[1.0, 2.0, 3.0]), 0);
        // Passing through exact zero breaks the sign chain on both sides.
        assert_eq!(recount_flips(&[1.0, 0.0, -1.0]), 0);
        assert_eq!(recount_flips(&[0.0, 1.0, -1.0]), 1);
        assert_eq!(recount_flips(&[]), 0);
        assert_eq!(recount_flips(&[5.0]), 0);
    }

    #[test]
    fn moments_match_closed_form() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, v) = moments(&xs);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((v - 1.25).abs() < 1e-12);
    }

    #[test]
    fn relative_error_is_symmetric_and_floored() {
        assert!(relative_error(1.0, 1.0) < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(relative_error(1.0, 2.0), relative_error(2.0, 1.0));
        assert!(relative_error(0.0, 1e-9) < 1e-2);
    }
}
