//! Reach-and-push reward and success indicator for the drawer tasks.
//!
//! These are the scalar functions only; no simulator is attached.

use serde::{Deserialize, Serialize};

/// Effector, object and goal positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawerGeometry {
    pub hand: [f64; 3],
    pub object: [f64; 3],
    pub goal: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Hand-object distance under which the push term switches on.
    pub eps_reach: f64,
    pub c1: f64,
    pub c2: f64,
    /// Object-goal distance under which the task counts as solved (metres).
    pub eps_success: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            eps_reach: 0.08,
            c1: 1000.0,
            c2: 0.01,
            eps_success: 0.08,
        }
    }
}

/// Sign of the push-term exponent.
///
/// `Negative` gives the bounded `exp(-d²/c2)` form and is the default.
/// `Positive` reproduces the literal `exp(+d²/c2)` form, which grows without bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExponentSign {
    #[default]
    Negative,
    Positive,
}

impl ExponentSign {
    fn factor(self) -> f64 {
        match self {
            ExponentSign::Negative => -1.0,
            ExponentSign::Positive => 1.0,
        }
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `-‖h-p‖ + 1{‖h-p‖ < eps_reach} · c1 · exp(sign · ‖p-g‖² / c2)`.
pub fn drawer_reward(geom: &DrawerGeometry, params: &RewardParams, sign: ExponentSign) -> f64 {
    let reach = distance(&geom.hand, &geom.object);
    let push_dist = distance(&geom.object, &geom.goal);
    let push = if reach < params.eps_reach {
        params.c1 * (sign.factor() * push_dist * push_dist / params.c2).exp()
    } else {
        0.0
    };
    -reach + push
}

/// Strict `‖p-g‖ < eps`.
pub fn drawer_success(object: &[f64; 3], goal: &[f64; 3], eps_success: f64) -> bool {
    distance(object, goal) < eps_success
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(hand: [f64; 3], object: [f64; 3], goal: [f64; 3]) -> DrawerGeometry {
        DrawerGeometry { hand, object, goal }
    }

    #[test]
    fn optimum_is_c1() {
        let g = geom([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], [0.1, 0.2, 0.3]);
        let r = drawer_reward(&g, &RewardParams::default(), ExponentSign::Negative);
        assert_eq!(r, 1000.0);
    }

    #[test]
    fn push_term_gated_off_when_far() {
        let g = geom([0.5, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]);
        let r = drawer_reward(&g, &RewardParams::default(), ExponentSign::Negative);
        assert!((r + 0.5).abs() < 1e-12);
    }

    #[test]
    fn push_term_at_ten_centimetres() {
        let g = geom([0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.1, 0.0, 0.0]);
        let r = drawer_reward(&g, &RewardParams::default(), ExponentSign::Negative);
        // 1000·e⁻¹
        assert!((r - 367.879_441_171_442_3).abs() < 1e-6);
        let literal = drawer_reward(&g, &RewardParams::default(), ExponentSign::Positive);
        assert!((literal - 1000.0 * std::f64::consts::E).abs() < 1e-6);
    }

    #[test]
    fn success_boundary_is_strict() {
        let o = [0.0, 0.0, 0.0];
        assert!(drawer_success(&o, &o, 0.08));
        assert!(!drawer_success(&o, &[0.08, 0.0, 0.0], 0.08));
        assert!(drawer_success(&o, &[0.0, 0.05, 0.0], 0.08));
    }

    #[test]
    fn reach_term_nonincreasing_in_distance() {
        let p = RewardParams::default();
        let mut last = f64::INFINITY;
        for i in 0..200 {
            let d = 0.1 + i as f64 * 0.01;
            let r = drawer_reward(&geom([d, 0.0, 0.0], [0.0; 3], [0.3, 0.0, 0.0]), &p, ExponentSign::Negative);
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn bounded_by_c1_with_negative_sign() {
        let p = RewardParams::default();
        for i in 0..50 {
            let t = i as f64 * 0.013;
            let g = geom([t, 0.0, 0.01], [t * 0.9, 0.0, 0.0], [0.2 - t, 0.1, 0.0]);
            assert!(drawer_reward(&g, &p, ExponentSign::Negative) <= p.c1);
        }
    }
}
