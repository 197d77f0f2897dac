use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, DenseNet, GradientTape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Stochastic,
    Greedy,
}

/// Action probabilities of one actor for one state.
pub fn actor_forward(actor: &DenseNet, obs: &[f64]) -> Result<Vec<f64>> {
    softmax(&actor.forward(obs)?)
}

/// Draws from `probs` (stochastic) or takes the most likely action, the
/// smallest index on ties (greedy).
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], mode: ActionMode, rng: &mut R) -> Result<usize> {
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Invalid(
            "action probabilities must be finite and >= 0".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("action probabilities sum to {total}")));
    }
    match mode {
        ActionMode::Greedy => Ok(argmax_first(probs)),
        ActionMode::Stochastic => {
            let u: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Ok(i);
                }
            }
            // rounding left u at the very top: last action with mass
            Ok(probs.iter().rposition(|p| *p > 0.0).unwrap_or(0))
        }
    }
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise probabilities and log-probabilities for a batch of states.
pub fn batch_policy(actor: &DenseNet, obs: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let logits = actor.predict_batch(obs)?;
    Ok(policy_from_logits(&logits))
}

fn policy_from_logits(logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut logp = logits.clone();
    for mut row in logp.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row -= lse;
    }
    (logp.mapv(f64::exp), logp)
}

/// Entropy-regularized policy loss
/// `mean_b sum_a pi(a|s) * (alpha * log pi(a|s) - Q(s, a))` with `Q` held
/// fixed, and its gradient.
pub fn actor_loss(
    actor: &DenseNet,
    obs: ArrayView2<f64>,
    q: ArrayView2<f64>,
    alpha: f64,
) -> Result<(f64, GradientTape)> {
    let trace = actor.forward_batch(obs)?;
    if q.dim() != trace.output.dim() {
        return Err(Error::shape("actor q values", trace.output.len(), q.len()));
    }
    let (p, logp) = policy_from_logits(&trace.output);
    let b = obs.nrows() as f64;
    let c = &logp * alpha - q;
    let per_row = (&p * &c).sum_axis(Axis(1));
    let loss = per_row.sum() / b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("actor loss"));
    }
    // d/dz_k sum_a p_a c_a = p_k (c_k - sum_a p_a c_a); the log-prob term
    // inside c contributes nothing extra since sum_a p_a d(log p_a) = 0.
    let grad = &p * &(&c - &per_row.insert_axis(Axis(1))) / b;
    let mut tape = actor.zero_tape();
    actor.backward_batch(&trace, grad.view(), &mut tape)?;
    Ok((loss, tape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{entropy, Activation, Adam, ParamSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> DenseNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseNet::new(&[3, 8, 2], Activation::LeakyRelu, Activation::Linear, &mut rng).unwrap()
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut a = net(1);
        let last = a.layers_mut().last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        assert_eq!(actor_forward(&a, &[0.3, -1.0, 2.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn sampling_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(
                sample_action(&[1.0, 0.0], ActionMode::Stochastic, &mut rng).unwrap(),
                0
            );
        }
        assert_eq!(
            sample_action(&[0.3, 0.7], ActionMode::Greedy, &mut rng).unwrap(),
            1
        );
        assert_eq!(
            sample_action(&[0.5, 0.5], ActionMode::Greedy, &mut rng).unwrap(),
            0
        );
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| sample_action(&[0.5, 0.5], ActionMode::Stochastic, &mut rng).unwrap() == 1)
            .count();
        assert!(((ones as f64 / n as f64) - 0.5).abs() < 0.01);
        assert!(sample_action(&[0.5, 0.6], ActionMode::Greedy, &mut rng).is_err());
    }

    #[test]
    fn gradient_matches_differences() {
        let mut a = net(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obs = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let q = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0));
        let (_, tape) = actor_loss(&a, obs.view(), q.view(), 0.2).unwrap();
        let analytic = tape.slices().concat();
        let lens: Vec<usize> = a.param_slices().iter().map(|s| s.len()).collect();
        let h = 1e-5;
        let mut k = 0;
        for (s, len) in lens.iter().enumerate() {
            for i in 0..*len {
                let orig = a.param_slices()[s][i];
                a.param_slices_mut()[s][i] = orig + h;
                let up = actor_loss(&a, obs.view(), q.view(), 0.2).unwrap().0;
                a.param_slices_mut()[s][i] = orig - h;
                let dn = actor_loss(&a, obs.view(), q.view(), 0.2).unwrap().0;
                a.param_slices_mut()[s][i] = orig;
                let fd = (up - dn) / (2.0 * h);
                let scale = fd.abs().max(analytic[k].abs()).max(1e-6);
                assert!((fd - analytic[k]).abs() / scale < 1e-4, "{fd} vs {}", analytic[k]);
                k += 1;
            }
        }
    }

    #[test]
    fn greedy_limit_without_entropy() {
        let mut a = net(3);
        let mut opt = Adam::new(1e-2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = Array2::from_shape_fn((16, 3), |_| rng.gen_range(-1.0..1.0));
        let q = Array2::from_shape_fn((16, 2), |(_, c)| if c == 1 { 1.0 } else { 0.0 });
        for _ in 0..2000 {
            let (_, tape) = actor_loss(&a, obs.view(), q.view(), 0.0).unwrap();
            opt.step_net(&mut a, &tape).unwrap();
        }
        let (p, _) = batch_policy(&a, obs.view()).unwrap();
        assert!(p.column(1).iter().all(|v| *v > 0.99));
    }

    #[test]
    fn equal_q_pushes_toward_uniform() {
        let mut a = net(5);
        let mut opt = Adam::new(1e-2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let obs = Array2::from_shape_fn((16, 3), |_| rng.gen_range(-1.0..1.0));
        let q = Array2::from_elem((16, 2), 0.4);
        let mean_entropy = |a: &DenseNet| {
            let (p, _) = batch_policy(a, obs.view()).unwrap();
            p.rows()
                .into_iter()
                .map(|r| entropy(r.as_slice().unwrap()))
                .sum::<f64>()
                / 16.0
        };
        let before = mean_entropy(&a);
        for _ in 0..500 {
            let (_, tape) = actor_loss(&a, obs.view(), q.view(), 0.5).unwrap();
            opt.step_net(&mut a, &tape).unwrap();
        }
        let after = mean_entropy(&a);
        assert!(after > before && after <= 2f64.ln() + 1e-12);
        assert!(after > 2f64.ln() - 1e-3);
    }
}
