//! Convergence diagnostics: split R-hat, autocorrelation-based effective
//! sample size, and Monte-Carlo standard error.

/// Split every chain in half, discarding one trailing element from
/// odd-length chains.
fn split_chains(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for chain in chains {
        let half = chain.len() / 2;
        out.push(&chain[..half]);
        out.push(&chain[half..2 * half]);
    }
    out
}

fn seq_mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn seq_var(x: &[f64], mean: f64) -> f64 {
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (x.len() - 1) as f64
}

/// Split R-hat (between/within variance ratio). Degenerate zero-variance
/// input returns 1 by convention.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let seqs = split_chains(chains);
    let m = seqs.len();
    if m < 2 || seqs.iter().any(|s| s.len() < 2) {
        return f64::NAN;
    }
    let n = seqs[0].len();
    let means: Vec<f64> = seqs.iter().map(|s| seq_mean(s)).collect();
    let vars: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, &mu)| seq_var(s, mu))
        .collect();
    let w = seq_mean(&vars);
    let grand = seq_mean(&means);
    let b = n as f64 / (m as f64 - 1.0)
        * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
    if w <= 1e-300 {
        return 1.0;
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

/// Autocovariance at a given lag with denominator n.
fn autocov(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let mut acc = 0.0;
    for t in 0..n - lag {
        acc += (x[t] - mean) * (x[t + lag] - mean);
    }
    acc / n as f64
}

/// Effective sample size across chains using split-chain autocorrelations
/// with Geyer's initial monotone positive-pair truncation. Constant input
/// returns 0.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let seqs = split_chains(chains);
    let m = seqs.len();
    if m == 0 || seqs.iter().any(|s| s.len() < 4) {
        return f64::NAN;
    }
    let n = seqs[0].len();
    let total = (m * n) as f64;

    let means: Vec<f64> = seqs.iter().map(|s| seq_mean(s)).collect();
    let vars: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, &mu)| seq_var(s, mu))
        .collect();
    let w = seq_mean(&vars);
    if w <= 1e-300 {
        return 0.0;
    }
    let var_plus = if m >= 2 {
        let grand = seq_mean(&means);
        let b = n as f64 / (m as f64 - 1.0)
            * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
        (n as f64 - 1.0) / n as f64 * w + b / n as f64
    } else {
        (n as f64 - 1.0) / n as f64 * w
    };

    let mean_acov = |lag: usize| -> f64 {
        seqs.iter()
            .zip(&means)
            .map(|(s, &mu)| autocov(s, mu, lag))
            .sum::<f64>()
            / m as f64
    };

    let rho = |lag: usize| -> f64 { 1.0 - (w - mean_acov(lag)) / var_plus };

    // Pair sums rho_{2k} + rho_{2k+1}; stop at the first non-positive pair
    // and enforce monotone non-increase.
    let max_lag = n - 1;
    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0usize;
    loop {
        let l0 = 2 * k;
        let l1 = 2 * k + 1;
        if l0 > max_lag {
            break;
        }
        let r0 = if l0 == 0 { 1.0 } else { rho(l0) };
        let r1 = if l1 <= max_lag { rho(l1) } else { 0.0 };
        let mut pair = r0 + r1;
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        tau += pair;
        prev_pair = pair;
        k += 1;
        if l1 >= max_lag {
            break;
        }
    }
    let tau = 2.0 * tau - 1.0;
    if tau <= 0.0 {
        return total;
    }
    (total / tau).clamp(0.0, total)
}

/// Monte-Carlo standard error: pooled sample SD divided by sqrt(ESS).
pub fn mcse(draws: &[f64], ess: f64) -> f64 {
    if ess <= 0.0 || draws.len() < 2 {
        return 0.0;
    }
    crate::numeric::sample_sd(draws) / ess.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_chains(n_chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_chains)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn rhat_near_one_for_iid_chains() {
        let chains = normal_chains(4, 2000, 1);
        let r = split_rhat(&chains);
        assert!((r - 1.0).abs() < 0.01, "rhat {r}");
    }

    #[test]
    fn rhat_detects_offset_chains() {
        let mut chains = normal_chains(2, 1000, 2);
        for v in &mut chains[1] {
            *v += 10.0;
        }
        let r = split_rhat(&chains);
        assert!(r > 1.1, "rhat {r}");
    }

    #[test]
    fn rhat_constant_chains_return_one() {
        let chains = vec![vec![2.0; 100], vec![2.0; 100]];
        assert_eq!(split_rhat(&chains), 1.0);
    }

    #[test]
    fn ess_iid_close_to_sample_size() {
        let chains = normal_chains(2, 2000, 3);
        let e = ess(&chains);
        assert!((e - 4000.0).abs() / 4000.0 < 0.15, "ess {e}");
    }

    #[test]
    fn ess_ar1_matches_analytic_autocorrelation_time() {
        // AR(1) with phi = 0.9: tau = (1+phi)/(1-phi) = 19, ESS ~ n/19.
        // Single-sequence ESS estimates are noisy, so average a few seeds.
        let phi: f64 = 0.9;
        let innovation_sd = (1.0 - phi * phi).sqrt();
        let n = 4000;
        let mut total = 0.0;
        let n_seeds = 10;
        for seed in 0..n_seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = vec![0.0; n];
            for t in 1..n {
                let z: f64 = rng.sample(StandardNormal);
                x[t] = phi * x[t - 1] + innovation_sd * z;
            }
            total += ess(&[x]);
        }
        let e = total / n_seeds as f64;
        let expected = n as f64 * (1.0 - phi) / (1.0 + phi);
        assert!(
            (e - expected).abs() / expected < 0.30,
            "ess {e}, expected {expected}"
        );
    }

    #[test]
    fn ess_constant_sequence_is_zero() {
        assert_eq!(ess(&[vec![1.0; 200]]), 0.0);
    }

    #[test]
    fn mcse_hand_values() {
        let chains = normal_chains(1, 10_000, 5);
        let pooled = chains[0].clone();
        let e = ess(&[pooled.clone()]);
        let m = mcse(&pooled, e);
        assert!((m - 0.01).abs() < 0.004, "mcse {m}");
        assert_eq!(mcse(&vec![3.0; 50], 0.0), 0.0);
        let sd = crate::numeric::sample_sd(&pooled);
        assert!((mcse(&pooled, 1.0) - sd).abs() < 1e-12);
    }
}
