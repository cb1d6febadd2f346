use crate::error::{Error, Result};

/// Generalized advantage estimates for one response. `values[l]` is
/// `V(s_l)`; the state after the last token is terminal with value 0.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::LengthMismatch {
            what: "rewards vs values",
            left: rewards.len(),
            right: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = 0.0;
    let mut running = 0.0;
    for l in (0..n).rev() {
        let delta = rewards[l] + gamma * next_value - values[l];
        running = delta + gamma * lambda * running;
        adv[l] = running;
        next_value = values[l];
    }
    Ok(adv)
}

/// TD residuals `δ_l = r_l + γ V(s_{l+1}) − V(s_l)`.
pub fn td_residuals(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>> {
    gae(rewards, values, gamma, 0.0)
}

/// `Ĝ_l = Â_l + V(s_l)`.
pub fn lambda_returns(advantages: &[f64], values: &[f64]) -> Vec<f64> {
    advantages.iter().zip(values).map(|(a, v)| a + v).collect()
}

/// Discounted reward-to-go, the advantage used without a critic.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for l in (0..rewards.len()).rev() {
        acc = rewards[l] + gamma * acc;
        out[l] = acc;
    }
    out
}

pub const STD_FLOOR: f64 = 1e-8;

/// In-place shift to mean 0 and scale to (population) std 1.
pub fn standardize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    for x in xs.iter_mut() {
        *x = (*x - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_example() {
        let adv = gae(&[1.0, 2.0], &[0.5, 0.5], 1.0, 1.0).unwrap();
        assert_eq!(td_residuals(&[1.0, 2.0], &[0.5, 0.5], 1.0).unwrap(), [1.0, 1.5]);
        assert_eq!(adv, [2.5, 1.5]);
    }

    #[test]
    fn zero_case_and_mismatch() {
        assert_eq!(gae(&[0.0; 4], &[0.0; 4], 0.9, 0.95).unwrap(), [0.0; 4]);
        assert!(gae(&[0.0; 3], &[0.0; 2], 0.9, 0.95).is_err());
    }

    #[test]
    fn returns_identity() {
        let v = [0.3, -0.2, 1.0];
        let a = gae(&[0.1, 0.0, 2.0], &v, 0.999, 0.95).unwrap();
        let g = lambda_returns(&a, &v);
        for l in 0..3 {
            assert!((g[l] - a[l] - v[l]).abs() <= 1e-12);
        }
    }

    #[test]
    fn no_critic_returns() {
        assert_eq!(discounted_returns(&[1.0, 0.0, 2.0], 0.5), [1.5, 1.0, 2.0]);
        assert_eq!(
            gae(&[1.0, 0.0, 2.0], &[0.0; 3], 0.5, 1.0).unwrap(),
            discounted_returns(&[1.0, 0.0, 2.0], 0.5)
        );
    }

    #[test]
    fn standardize_moments_and_floor() {
        let mut x = vec![1.0, 2.0, 3.0, 10.0];
        standardize(&mut x);
        let mean = x.iter().sum::<f64>() / 4.0;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() <= 1e-12);
        assert!((std - 1.0).abs() <= 1e-12);
        let mut c = vec![5.0; 3];
        standardize(&mut c);
        assert_eq!(c, [0.0; 3]);
        let mut one = vec![7.0];
        standardize(&mut one);
        assert_eq!(one, [0.0]);
    }
}
