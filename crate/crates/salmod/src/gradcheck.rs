//! Central finite-difference gradient checking.
//!
//! The checker never touches the backward pass: callers hand it a closure
//! that rebuilds the forward computation from plain tensors, plus the
//! analytic gradients under test. Perturbation is symmetric (central
//! differences), so the truncation error is O(eps^2).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Default perturbation step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Summary of one finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error between a numeric and an analytic derivative:
/// |n - a| / max(|n| + |a|, 1e-12). Both near zero counts as a match.
pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    let scale = (numeric.abs() + analytic.abs()).max(1e-12);
    let diff = (numeric - analytic).abs();
    if diff < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Check every element of every input tensor.
///
/// `f` evaluates the scalar forward value for the given inputs; `analytic[i]`
/// is the claimed gradient w.r.t. `inputs[i]`.
pub fn finite_difference_check<F>(f: &F, inputs: &[Tensor], analytic: &[Tensor], eps: f64) -> CheckReport
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel = 0.0_f64;
    let mut checked = 0usize;
    for t in 0..work.len() {
        for i in 0..work[t].numel() {
            let original = work[t].data()[i];
            work[t].data_mut()[i] = original + eps;
            let up = f(&work);
            work[t].data_mut()[i] = original - eps;
            let down = f(&work);
            work[t].data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * eps);
            let rel = relative_error(numeric, analytic[t].data()[i]);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    CheckReport {
        max_rel_err: max_rel,
        checked,
    }
}

/// Like `finite_difference_check` but probing at most `per_tensor` randomly
/// chosen coordinates of each tensor — for whole-network checks where the
/// full sweep would be needlessly slow.
///
/// Two classes of coordinate are excluded, because there the central
/// difference itself is invalid rather than the analytic gradient wrong:
///
/// * `atol` ignores coordinates whose numeric/analytic disagreement is below
///   it: deep in a network true gradients can sit under the difference
///   quotient's f64 noise floor (~|f|·1e-16/eps), where relative error is
///   meaningless.
/// * Coordinates whose probe interval straddles a kink (relu, pooling argmax)
///   are detected by splitting the central difference into its two one-sided
///   halves. For smooth f they agree to O(eps·f''); a kink inside (x-eps,
///   x+eps) skews them by twice the central estimate's contamination. When
///   that asymmetry exceeds the numeric/analytic gap, the gap is explained by
///   the kink and the coordinate says nothing about the backward pass. A
///   genuinely wrong gradient still fails: there the two halves agree and the
///   gap stands on its own.
pub fn finite_difference_check_sampled<F>(
    f: &F,
    inputs: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    atol: f64,
    per_tensor: usize,
    seed: u64,
) -> CheckReport
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let center = f(&work);
    let mut max_rel = 0.0_f64;
    let mut checked = 0usize;
    for t in 0..work.len() {
        let n = work[t].numel();
        let mut coords: Vec<usize> = (0..n).collect();
        coords.shuffle(&mut rng);
        coords.truncate(per_tensor.min(n));
        coords.sort_unstable();
        for i in coords {
            let original = work[t].data()[i];
            work[t].data_mut()[i] = original + eps;
            let up = f(&work);
            work[t].data_mut()[i] = original - eps;
            let down = f(&work);
            work[t].data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * eps);
            let analytic_v = analytic[t].data()[i];
            let gap = (numeric - analytic_v).abs();
            let asymmetry = ((up - center) / eps - (center - down) / eps).abs();
            if gap >= atol && asymmetry <= gap {
                max_rel = max_rel.max(relative_error(numeric, analytic_v));
            }
            checked += 1;
        }
    }
    CheckReport {
        max_rel_err: max_rel,
        checked,
    }
}
