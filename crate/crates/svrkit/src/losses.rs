//! Differentiable losses for pose regression.
//!
//! Three loss families: a per-axis geodesic distance on Euler angles, a
//! sign-ambiguity-aware chordal distance on unit quaternions, and the
//! three-headed squared landmark loss on anchor triplets. Each returns its
//! value together with the analytic gradient with respect to the prediction;
//! at non-differentiable points (zero loss, distance kinks, branch ties) the
//! gradient component is the zero subgradient.

use crate::error::{Result, SvrError};
use crate::geometry::{wrap_angle, AnchorTriplet};

/// A loss value plus its gradient with respect to the prediction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Wrapped per-axis distance `min(|a-b|, 2 pi - |a-b|)`, never above pi.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let diff = (wrap_angle(a) - wrap_angle(b)).abs();
    diff.min(2.0 * std::f64::consts::PI - diff)
}

/// Derivative of [`angle_distance`] with respect to its first argument;
/// zero at the kinks (`a = b` and `|a-b| = pi`).
fn angle_distance_grad(a: f64, b: f64) -> f64 {
    let diff = wrap_angle(a) - wrap_angle(b);
    -sgn(diff.abs() - std::f64::consts::PI) * sgn(diff)
}

/// Euclidean norm of the per-axis wrapped distances between two Euler
/// triples, with the analytic gradient with respect to `pred`.
pub fn euler_loss(pred: &[f64; 3], target: &[f64; 3]) -> LossValueGrad {
    let d: Vec<f64> = pred
        .iter()
        .zip(target.iter())
        .map(|(&a, &b)| angle_distance(a, b))
        .collect();
    let value = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let grad = if value == 0.0 {
        vec![0.0; 3]
    } else {
        (0..3)
            .map(|i| d[i] / value * angle_distance_grad(pred[i], target[i]))
            .collect()
    };
    LossValueGrad { value, grad }
}

/// Chordal quaternion distance `min(||q1 - q2||, ||q1 + q2||)`.
///
/// Both inputs must be unit quaternions within 1e-6. The minus branch wins
/// ties; the gradient is `(q1 - s q2) / value` with `s = +1` on the minus
/// branch and `-1` otherwise, and zero at `value = 0`.
pub fn quaternion_loss(pred: &[f64; 4], target: &[f64; 4]) -> Result<LossValueGrad> {
    for (name, q) in [("pred", pred), ("target", target)] {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(SvrError::InvalidArgument(format!(
                "{name} quaternion norm {norm} not within 1e-6 of 1"
            )));
        }
    }
    let mut dm_sq = 0.0;
    let mut dp_sq = 0.0;
    for i in 0..4 {
        let m = pred[i] - target[i];
        let p = pred[i] + target[i];
        dm_sq += m * m;
        dp_sq += p * p;
    }
    let (value, s) = if dm_sq <= dp_sq {
        (dm_sq.sqrt(), 1.0)
    } else {
        (dp_sq.sqrt(), -1.0)
    };
    let grad = if value == 0.0 {
        vec![0.0; 4]
    } else {
        (0..4).map(|i| (pred[i] - s * target[i]) / value).collect()
    };
    Ok(LossValueGrad { value, grad })
}

/// One anchor head: `1/2 ||p_pred - p_gt||^2` with gradient `p_pred - p_gt`.
fn anchor_head(pred: &nalgebra::Vector3<f64>, gt: &nalgebra::Vector3<f64>) -> (f64, [f64; 3]) {
    let d = pred - gt;
    (0.5 * d.norm_squared(), [d.x, d.y, d.z])
}

/// Summed three-head landmark loss over an anchor triplet.
///
/// Per-head values are reported alongside the total; the gradient is laid
/// out `[pc, pl, pr]`, matching [`AnchorTriplet::to_array`].
pub fn anchor_loss(pred: &AnchorTriplet, target: &AnchorTriplet) -> (LossValueGrad, [f64; 3]) {
    let heads = [
        anchor_head(&pred.pc, &target.pc),
        anchor_head(&pred.pl, &target.pl),
        anchor_head(&pred.pr, &target.pr),
    ];
    let per_head = [heads[0].0, heads[1].0, heads[2].0];
    let mut grad = Vec::with_capacity(9);
    for (_, g) in &heads {
        grad.extend_from_slice(g);
    }
    (
        LossValueGrad { value: per_head.iter().sum(), grad },
        per_head,
    )
}

/// Maximum relative error between the analytic gradient and central finite
/// differences of `loss` at `point`.
///
/// The relative error per component uses `max(|analytic|, 1e-8)` as the
/// denominator. The point should sit at least `10 h` away from the loss's
/// non-differentiable loci.
pub fn finite_difference_check(
    loss: &dyn Fn(&[f64]) -> LossValueGrad,
    point: &[f64],
    h: f64,
) -> f64 {
    let analytic = loss(point).grad;
    assert_eq!(analytic.len(), point.len(), "gradient length mismatch");
    let mut max_rel = 0.0_f64;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let plus = loss(&x).value;
        x[i] = point[i] - h;
        let minus = loss(&x).value;
        x[i] = point[i];
        let fd = (plus - minus) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / analytic[i].abs().max(1e-8);
        max_rel = max_rel.max(rel);
    }
    max_rel
}
