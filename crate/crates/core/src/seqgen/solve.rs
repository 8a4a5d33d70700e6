use serde::{Deserialize, Serialize};

use crate::embedder::dot;

/// `|rᵀz|` at or above `1 - COLLINEAR_TOLERANCE` counts as collinear.
pub const COLLINEAR_TOLERANCE: f64 = 1e-6;
/// Candidates whose combined norm is off from 1 by more than this are
/// discarded.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// Mixing weights for `r_next = alpha * r + beta * z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub alpha: f64,
    pub beta: f64,
    /// `<alpha r + beta z, r*>`.
    pub objective: f64,
    /// `r` and `z` were collinear; the solution is `sign(w) r`.
    pub degenerate: bool,
}

/// Maximizes `<alpha r + beta z, r*>` subject to `|alpha r + beta z| = 1`.
///
/// With `q = rᵀz`, `v = zᵀr*` and `w = rᵀr*`, the optimum is one of
///
/// ```text
/// alpha = ±(w - qv) / sqrt((q²-1)² v² - (w-qv)² (q²-1))
/// beta  = -alpha q ± sqrt((alpha q)² - alpha² + 1)
/// ```
///
/// All four sign combinations are evaluated and the feasible one with the
/// largest objective wins.
pub fn solve_weights(r: &[f64], z: &[f64], r_star: &[f64]) -> WeightSolution {
    let q = dot(r, z);
    let v = dot(z, r_star);
    let w = dot(r, r_star);

    let identity = WeightSolution {
        alpha: 1.0,
        beta: 0.0,
        objective: w,
        degenerate: false,
    };

    if q.abs() >= 1.0 - COLLINEAR_TOLERANCE {
        let alpha = if w >= 0.0 { 1.0 } else { -1.0 };
        return WeightSolution {
            alpha,
            beta: 0.0,
            objective: alpha * w,
            degenerate: true,
        };
    }

    let q2m1 = q * q - 1.0;
    let wqv = w - q * v;
    let denom_sq = q2m1 * q2m1 * v * v - wqv * wqv * q2m1;
    if denom_sq.is_nan() || denom_sq <= 0.0 {
        // r* is orthogonal to span{r, z}: every feasible point scores 0.
        return identity;
    }
    let denom = denom_sq.sqrt();

    let mut best: Option<WeightSolution> = None;
    for alpha_sign in [1.0, -1.0] {
        let alpha = alpha_sign * wqv / denom;
        let disc = (alpha * q).powi(2) - alpha * alpha + 1.0;
        let root = disc.max(0.0).sqrt();
        for beta_sign in [1.0, -1.0] {
            let beta = -alpha * q + beta_sign * root;
            let norm = (alpha * alpha + 2.0 * alpha * beta * q + beta * beta).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > FEASIBILITY_TOLERANCE {
                continue;
            }
            let objective = alpha * w + beta * v;
            if best.is_none_or(|b| objective > b.objective) {
                best = Some(WeightSolution {
                    alpha,
                    beta,
                    objective,
                    degenerate: false,
                });
            }
        }
    }
    best.unwrap_or(identity)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_in_span() {
        let r = [1.0, 0.0, 0.0];
        let z = [0.0, 1.0, 0.0];
        let sol = solve_weights(&r, &z, &z);
        assert!(sol.alpha.abs() < 1e-12);
        assert!((sol.beta - 1.0).abs() < 1e-12);
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_step() {
        let r = [1.0, 0.0, 0.0];
        let z = [0.0, 1.0, 0.0];
        let sol = solve_weights(&r, &z, &r);
        assert!((sol.alpha - 1.0).abs() < 1e-12);
        assert!(sol.beta.abs() < 1e-12);
    }

    #[test]
    fn collinear_inputs_are_degenerate() {
        let r = [0.6, 0.8];
        let neg = [-0.6, -0.8];
        let sol = solve_weights(&r, &r, &neg);
        assert!(sol.degenerate);
        assert_eq!((sol.alpha, sol.beta), (-1.0, 0.0));
        assert!((sol.objective - 1.0).abs() < 1e-12);
        let sol = solve_weights(&r, &neg, &r);
        assert!(sol.degenerate);
        assert_eq!((sol.alpha, sol.beta), (1.0, 0.0));
    }

    #[test]
    fn target_orthogonal_to_span() {
        let sol = solve_weights(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]);
        assert_eq!((sol.alpha, sol.beta), (1.0, 0.0));
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn negative_beta_moves_away() {
        // z points partly away from the target: the best move subtracts it.
        let s = 0.5f64.sqrt();
        let r = [1.0, 0.0, 0.0];
        let z = [s, -s, 0.0];
        let r_star = [0.0, 1.0, 0.0];
        let sol = solve_weights(&r, &z, &r_star);
        assert!(sol.beta < 0.0, "{sol:?}");
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }
}
