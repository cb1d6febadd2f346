use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// How the value regression is clipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ValueLossMode {
    /// Clip the new prediction to within `ε_v` of `V_old`.
    #[default]
    Standard,
    /// Clip the residual `V_new − Ĝ` itself. The max then always selects the
    /// unclipped term, so this is plain squared error.
    Literal,
}

impl FromStr for ValueLossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ValueLossMode::Standard),
            "literal" => Ok(ValueLossMode::Literal),
            other => Err(Error::UnknownValueLossMode(other.to_string())),
        }
    }
}

impl TryFrom<String> for ValueLossMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ValueLossMode> for String {
    fn from(m: ValueLossMode) -> String {
        m.to_string()
    }
}

impl fmt::Display for ValueLossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueLossMode::Standard => "standard",
            ValueLossMode::Literal => "literal",
        })
    }
}

/// `min(ρÂ, clip(ρ, 1−ε_l, 1+ε_u)Â)`.
pub fn policy_surrogate(ratio: f64, advantage: f64, eps_l: f64, eps_u: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_l, 1.0 + eps_u);
    (ratio * advantage).min(clipped * advantage)
}

fn value_term(v_new: f64, v_old: f64, target: f64, eps_v: f64, mode: ValueLossMode) -> f64 {
    let plain = (v_new - target).powi(2);
    let clipped = match mode {
        ValueLossMode::Literal => (v_new - target).clamp(-eps_v, eps_v).powi(2),
        ValueLossMode::Standard => (v_old + (v_new - v_old).clamp(-eps_v, eps_v) - target).powi(2),
    };
    plain.max(clipped)
}

/// `½ · mean(max(unclipped², clipped²))` over aligned predictions.
pub fn value_loss(
    v_new: &[f64],
    v_old: &[f64],
    targets: &[f64],
    eps_v: f64,
    mode: ValueLossMode,
) -> Result<f64> {
    for (what, other) in [("v_new vs v_old", v_old.len()), ("v_new vs targets", targets.len())] {
        if v_new.len() != other {
            return Err(Error::LengthMismatch {
                what,
                left: v_new.len(),
                right: other,
            });
        }
    }
    if v_new.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = (0..v_new.len())
        .map(|i| value_term(v_new[i], v_old[i], targets[i], eps_v, mode))
        .sum();
    Ok(0.5 * sum / v_new.len() as f64)
}

/// `−J_clip + α · J_value`.
pub fn total_loss(policy_term: f64, value_term: f64, alpha: f64) -> f64 {
    -policy_term + alpha * value_term
}

/// Surrogate for one token on the tape; `logp_new` is the scalar log-prob
/// under the live policy.
pub fn surrogate_on_tape(
    tape: &mut Tape,
    logp_new: Var,
    logp_old: f64,
    advantage: f64,
    eps_l: f64,
    eps_u: f64,
) -> Var {
    let old = tape.constant(logp_old);
    let diff = tape.sub(logp_new, old);
    let ratio = tape.exp(diff);
    let clipped = tape.clamp(ratio, 1.0 - eps_l, 1.0 + eps_u);
    let a = tape.scale(ratio, advantage);
    let b = tape.scale(clipped, advantage);
    tape.min(a, b)
}

/// Unhalved `max(unclipped², clipped²)` for one prediction on the tape.
pub fn value_term_on_tape(
    tape: &mut Tape,
    v_new: Var,
    v_old: f64,
    target: f64,
    eps_v: f64,
    mode: ValueLossMode,
) -> Var {
    let t = tape.constant(target);
    let resid = tape.sub(v_new, t);
    let plain = tape.square(resid);
    let clipped = match mode {
        ValueLossMode::Literal => {
            let c = tape.clamp(resid, -eps_v, eps_v);
            tape.square(c)
        }
        ValueLossMode::Standard => {
            let old = tape.constant(v_old);
            let step = tape.sub(v_new, old);
            let step = tape.clamp(step, -eps_v, eps_v);
            let shift = tape.constant(v_old - target);
            let r = tape.add(step, shift);
            tape.square(r)
        }
    };
    tape.max(plain, clipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_examples() {
        assert_eq!(policy_surrogate(1.0, 0.7, 0.2, 0.5), 0.7);
        assert!((policy_surrogate(2.0, 1.0, 0.2, 0.2) - 1.2).abs() < 1e-15);
        assert!((policy_surrogate(0.5, -1.0, 0.2, 0.2) + 0.8).abs() < 1e-15);
        // pessimistic branch keeps the unclipped value when it is lower
        assert_eq!(policy_surrogate(0.5, 1.0, 0.2, 0.2), 0.5);
    }

    #[test]
    fn value_loss_examples() {
        for mode in [ValueLossMode::Standard, ValueLossMode::Literal] {
            assert_eq!(value_loss(&[1.5], &[1.4], &[1.5], 0.2, mode).unwrap(), 0.0);
        }
        // an exact fit reached by a step larger than the clip still pays
        let far = value_loss(&[1.5], &[0.2], &[1.5], 0.2, ValueLossMode::Standard).unwrap();
        assert!((far - 0.5 * 1.1f64.powi(2)).abs() < 1e-12);
        assert_eq!(value_loss(&[1.5], &[0.2], &[1.5], 0.2, ValueLossMode::Literal).unwrap(), 0.0);
        let lit = value_loss(&[1.5], &[0.0], &[1.0], 0.2, ValueLossMode::Literal).unwrap();
        assert!((lit - 0.125).abs() < 1e-15);
        let std = value_loss(&[3.0], &[2.0], &[2.0], 0.2, ValueLossMode::Standard).unwrap();
        assert!((std - 0.5).abs() < 1e-15);
        assert!(value_loss(&[1.0], &[], &[1.0], 0.2, ValueLossMode::Standard).is_err());
    }

    #[test]
    fn standard_mode_penalizes_overshoot_past_clip() {
        // V_old = 0, target = 1, V_new = 0.5: clipped prediction 0.2 is
        // further from the target, so the clipped term dominates.
        let l = value_loss(&[0.5], &[0.0], &[1.0], 0.2, ValueLossMode::Standard).unwrap();
        assert!((l - 0.5 * 0.64).abs() < 1e-15);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("literal".parse::<ValueLossMode>().unwrap(), ValueLossMode::Literal);
        assert!(matches!(
            "huber".parse::<ValueLossMode>(),
            Err(Error::UnknownValueLossMode(m)) if m == "huber"
        ));
        let bad: std::result::Result<ValueLossMode, _> = serde_json::from_str("\"clipped\"");
        assert!(bad.is_err());
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(1.2, 0.125, 1.0) + 1.075).abs() < 1e-15);
        assert_eq!(total_loss(1.2, 9.0, 0.0), -1.2);
        assert_eq!(total_loss(0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn tape_forms_match_scalar_forms() {
        for (lp_new, lp_old, adv) in [(-0.1, -0.9, 1.0), (-2.0, -0.3, -0.5), (-1.0, -1.0, 2.0)] {
            let mut tape = Tape::new();
            let x = tape.input(vec![lp_new]);
            let s = surrogate_on_tape(&mut tape, x, lp_old, adv, 0.2, 0.5);
            let want = policy_surrogate(f64::exp(lp_new - lp_old), adv, 0.2, 0.5);
            assert!((tape.scalar(s) - want).abs() < 1e-15);
        }
        for mode in [ValueLossMode::Standard, ValueLossMode::Literal] {
            for (vn, vo, g) in [(0.5, 0.0, 1.0), (3.0, 2.0, 2.0), (-1.0, 0.4, 0.2)] {
                let mut tape = Tape::new();
                let x = tape.input(vec![vn]);
                let t = value_term_on_tape(&mut tape, x, vo, g, 0.2, mode);
                let want = 2.0 * value_loss(&[vn], &[vo], &[g], 0.2, mode).unwrap();
                assert!((tape.scalar(t) - want).abs() < 1e-15);
            }
        }
    }
}
