use super::TrainError;

/// Generalized advantage estimates for one value stream.
///
/// `flags[t] == true` marks step `t` as the last of its episode, so the
/// successor value is taken as zero and accumulation restarts. The value
/// after the final step is `bootstrap`. Returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    flags: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let n = rewards.len();
    if values.len() != n || flags.len() != n {
        return Err(TrainError::Length(format!(
            "rewards {n}, values {}, flags {} must match",
            values.len(),
            flags.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if flags[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[1.0], &[0.3], &[true], 5.0, 0.99, 0.95).unwrap();
        assert_eq!(a, vec![1.0 - 0.3]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let rewards = [0.5, -1.0, 0.25, 2.0];
        let values = [0.1, 0.4, -0.3, 0.8];
        let flags = [false, true, false, false];
        let boot = 0.6;
        let g = 0.9;
        let (a, _) = compute_gae(&rewards, &values, &flags, boot, g, 0.0).unwrap();
        let next = [values[1], 0.0, values[3], boot];
        for t in 0..4 {
            assert_eq!(a[t], rewards[t] + g * next[t] - values[t]);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(compute_gae(&[1.0, 2.0], &[0.0], &[false, false], 0.0, 0.9, 0.9).is_err());
    }
}
