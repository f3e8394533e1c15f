//! Closed-form Euclidean projections used on every executed action.

use crate::channel::{CVec, C64};

/// Project a set of beamformers onto `{Σ‖w‖² ≤ P}` by radial scaling.
pub fn project_power_ball(w: &[CVec], p_max: f64) -> Vec<CVec> {
    let p: f64 = w.iter().map(|v| v.norm_squared()).sum();
    if p <= p_max {
        return w.to_vec();
    }
    // Shrink until rounding cannot leave the result outside the ball, so a
    // second projection is a no-op.
    let mut s = (p_max / p).sqrt();
    loop {
        let out: Vec<CVec> = w.iter().map(|v| v.map(|x| x * C64::from(s))).collect();
        if out.iter().map(|v| v.norm_squared()).sum::<f64>() <= p_max {
            return out;
        }
        s = s.next_down();
    }
}

/// Elementwise clamp of `δ̃` into `[0, ξ]`.
pub fn box_project(delta: &[f64], xi: &[f64]) -> Vec<f64> {
    delta.iter().zip(xi).map(|(&d, &x)| d.max(0.0).min(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(scale: f64) -> Vec<CVec> {
        vec![
            CVec::from_vec(vec![C64::new(scale, 0.0), C64::new(0.0, scale)]),
            CVec::from_vec(vec![C64::new(0.0, 0.0), C64::new(scale, -scale)]),
        ]
    }

    #[test]
    fn inside_ball_is_unchanged() {
        let w = vecs(0.5);
        let p: f64 = w.iter().map(|v| v.norm_squared()).sum();
        assert_eq!(project_power_ball(&w, 2.0 * p), w);
    }

    #[test]
    fn four_times_budget_halves() {
        let w = vecs(1.0);
        let p: f64 = w.iter().map(|v| v.norm_squared()).sum();
        let out = project_power_ball(&w, p / 4.0);
        for (a, b) in out.iter().zip(&w) {
            assert!((a * C64::from(2.0) - b).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let w = vec![CVec::zeros(3); 2];
        assert_eq!(project_power_ball(&w, 1.0), w);
    }

    #[test]
    fn box_examples() {
        assert_eq!(box_project(&[1.7, 0.3, 0.3], &[1.0, 0.0, 1.0]), vec![1.0, 0.0, 0.3]);
    }
}
