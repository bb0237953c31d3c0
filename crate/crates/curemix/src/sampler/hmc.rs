//! Single-chain Hamiltonian Monte Carlo with dual-averaging step-size
//! adaptation and windowed diagonal mass-matrix estimation during warmup.
//! Adaptation is frozen after warmup.

use super::{GradientTarget, SamplerConfig, SamplerError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Hamiltonian error beyond which a proposal is counted as divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;
/// Dual-averaging constants (Hoffman & Gelman 2014).
const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;
const INIT_RETRIES: usize = 100;

pub struct ChainOutput {
    /// Post-warmup draws, iteration-major: n_kept x dim.
    pub draws: Vec<f64>,
    pub stats: ChainStats,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ChainStats {
    pub accept_rate: f64,
    pub divergences: usize,
    pub divergences_warmup: usize,
    pub step_size_at_freeze: f64,
    pub step_size_final: f64,
    pub inv_mass_at_freeze: Vec<f64>,
    pub inv_mass_final: Vec<f64>,
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            log_eps: eps.ln(),
            log_eps_bar: eps.ln(),
            h_bar: 0.0,
            m: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_prob: f64) {
        self.m += 1.0;
        let eta = 1.0 / (self.m + DA_T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob);
        self.log_eps = self.mu - self.m.sqrt() / DA_GAMMA * self.h_bar;
        let w = self.m.powf(-DA_KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    fn eps(&self) -> f64 {
        self.log_eps.exp()
    }

    fn eps_bar(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Running mean/variance accumulator.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    /// Regularised variance estimate, shrunk toward a small diagonal the
    /// way Stan does during warmup windows.
    fn regularized_variance(&self) -> Option<Vec<f64>> {
        if self.n < 3 {
            return None;
        }
        let n = self.n as f64;
        Some(
            self.m2
                .iter()
                .map(|m2| {
                    let var = m2 / (n - 1.0);
                    (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                })
                .collect(),
        )
    }
}

/// Warmup window plan: an initial step-size-only buffer, doubling
/// mass-estimation windows, and a terminal step-size-only buffer.
fn mass_window_ends(warmup: usize) -> Vec<usize> {
    if warmup < 20 {
        return Vec::new();
    }
    let init = ((warmup as f64 * 0.15).round() as usize).max(1);
    let term = ((warmup as f64 * 0.10).round() as usize).max(1);
    let middle = warmup - init - term;
    let mut ends = Vec::new();
    let mut size = (middle / 5).max(5);
    let mut at = init;
    loop {
        let remaining = init + middle - at;
        if remaining < size || remaining < 2 * size {
            ends.push(init + middle);
            break;
        }
        at += size;
        ends.push(at);
        size *= 2;
    }
    ends
}

struct Hamiltonian<'a, T: GradientTarget + ?Sized> {
    target: &'a T,
    inv_mass: Vec<f64>,
}

impl<'a, T: GradientTarget + ?Sized> Hamiltonian<'a, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_mass)
            .map(|(p, im)| p * p * im)
            .sum::<f64>()
    }

    fn sample_momentum(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inv_mass
            .iter()
            .map(|im| {
                let z: f64 = rng.sample(StandardNormal);
                z / im.sqrt()
            })
            .collect()
    }
}

/// One leapfrog step in place; returns the new log density.
pub(crate) fn leapfrog_step<T: GradientTarget + ?Sized>(
    target: &T,
    inv_mass: &[f64],
    eps: f64,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
) -> f64 {
    for i in 0..p.len() {
        p[i] += 0.5 * eps * grad[i];
    }
    for i in 0..q.len() {
        q[i] += eps * inv_mass[i] * p[i];
    }
    let logp = target.log_density_grad(q, grad);
    for i in 0..p.len() {
        p[i] += 0.5 * eps * grad[i];
    }
    logp
}

/// Double/halve the step size until one leapfrog step crosses 50%
/// acceptance (Hoffman & Gelman's heuristic).
fn find_reasonable_epsilon<T: GradientTarget + ?Sized>(
    ham: &Hamiltonian<'_, T>,
    q: &[f64],
    logp: f64,
    grad: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut eps = 1.0;
    let p0 = ham.sample_momentum(rng);
    let h0 = -logp + ham.kinetic(&p0);

    let log_ratio = |eps: f64| -> f64 {
        let mut q1 = q.to_vec();
        let mut p1 = p0.clone();
        let mut g1 = grad.to_vec();
        let logp1 = leapfrog_step(ham.target, &ham.inv_mass, eps, &mut q1, &mut p1, &mut g1);
        if !logp1.is_finite() {
            return f64::NEG_INFINITY;
        }
        let h1 = -logp1 + ham.kinetic(&p1);
        h0 - h1
    };

    let mut lr = log_ratio(eps);
    let dir: f64 = if lr > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..60 {
        eps *= 2f64.powf(dir);
        if !(1e-10..=1e10).contains(&eps) {
            break;
        }
        lr = log_ratio(eps);
        if (dir > 0.0 && lr <= (0.5f64).ln()) || (dir < 0.0 && lr > (0.5f64).ln()) {
            break;
        }
    }
    eps.clamp(1e-10, 1e10)
}

/// Run one chain. `chain_index` selects the RNG stream, so chains are
/// independent and the result is reproducible regardless of scheduling.
pub(crate) fn run_chain<T, F>(
    target: &T,
    cfg: &SamplerConfig,
    chain_index: usize,
    init_fn: &F,
) -> Result<ChainOutput, SamplerError>
where
    T: GradientTarget + ?Sized,
    F: Fn(&mut ChaCha8Rng) -> Vec<f64>,
{
    use rand::SeedableRng;
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 + chain_index as u64);

    // Initial point: draw until the target is finite, within bounded retries.
    let mut q = Vec::new();
    let mut grad = vec![0.0; dim];
    let mut logp = f64::NEG_INFINITY;
    for attempt in 0..=INIT_RETRIES {
        q = init_fn(&mut rng);
        if q.len() != dim {
            return Err(SamplerError::InitDimension {
                got: q.len(),
                want: dim,
            });
        }
        logp = target.log_density_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            break;
        }
        if attempt == INIT_RETRIES {
            return Err(SamplerError::NonFiniteInit {
                chain: chain_index,
                attempts: INIT_RETRIES,
            });
        }
    }

    let mut ham = Hamiltonian {
        target,
        inv_mass: vec![1.0; dim],
    };
    let mut eps = find_reasonable_epsilon(&ham, &q, logp, &grad, &mut rng);
    let mut da = DualAveraging::new(eps, cfg.target_accept);

    let window_ends = mass_window_ends(cfg.warmup);
    let mut welford = Welford::new(dim);
    let mut next_window = 0usize;

    let n_kept = cfg.iterations - cfg.warmup;
    let mut draws = Vec::with_capacity(n_kept * dim);
    let mut divergences = 0usize;
    let mut divergences_warmup = 0usize;
    let mut accepted_proposals = 0.0f64;
    let mut step_size_at_freeze = eps;
    let mut inv_mass_at_freeze = ham.inv_mass.clone();

    for iter in 0..cfg.iterations {
        let warming = iter < cfg.warmup;
        let p0 = ham.sample_momentum(&mut rng);
        let h0 = -logp + ham.kinetic(&p0);

        let n_steps = rng.random_range(1..=cfg.max_leapfrog);
        let mut q1 = q.clone();
        let mut p1 = p0.clone();
        let mut g1 = grad.clone();
        let mut logp1 = logp;
        let mut broke = false;
        for _ in 0..n_steps {
            logp1 = leapfrog_step(target, &ham.inv_mass, eps, &mut q1, &mut p1, &mut g1);
            if !logp1.is_finite() {
                broke = true;
                break;
            }
        }

        let delta_h = if broke {
            f64::INFINITY
        } else {
            let h1 = -logp1 + ham.kinetic(&p1);
            if h1.is_finite() {
                h1 - h0
            } else {
                f64::INFINITY
            }
        };
        let divergent = !(delta_h < DIVERGENCE_THRESHOLD);
        let accept_prob = if divergent {
            0.0
        } else {
            (-delta_h).exp().min(1.0)
        };
        if divergent {
            if warming {
                divergences_warmup += 1;
            } else {
                divergences += 1;
            }
        }
        if !divergent && rng.random::<f64>() < accept_prob {
            q = q1;
            grad = g1;
            logp = logp1;
        }

        if warming {
            da.update(accept_prob);
            eps = da.eps();
            if !window_ends.is_empty() && next_window < window_ends.len() {
                welford.push(&q);
                if iter + 1 == window_ends[next_window] {
                    if let Some(var) = welford.regularized_variance() {
                        ham.inv_mass = var;
                        eps = find_reasonable_epsilon(&ham, &q, logp, &grad, &mut rng);
                        da = DualAveraging::new(eps, cfg.target_accept);
                    }
                    welford = Welford::new(dim);
                    next_window += 1;
                }
            }
            if iter + 1 == cfg.warmup {
                // Freeze: dual-averaged step size, current mass matrix.
                eps = da.eps_bar();
                step_size_at_freeze = eps;
                inv_mass_at_freeze = ham.inv_mass.clone();
            }
        } else {
            accepted_proposals += accept_prob;
            draws.extend_from_slice(&q);
        }
    }

    Ok(ChainOutput {
        draws,
        stats: ChainStats {
            accept_rate: if n_kept > 0 {
                accepted_proposals / n_kept as f64
            } else {
                f64::NAN
            },
            divergences,
            divergences_warmup,
            step_size_at_freeze,
            step_size_final: eps,
            inv_mass_at_freeze,
            inv_mass_final: ham.inv_mass.clone(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormalTarget {
        dim: usize,
    }

    impl GradientTarget for StdNormalTarget {
        fn dim(&self) -> usize {
            self.dim
        }

        fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..x.len() {
                lp -= 0.5 * x[i] * x[i];
                grad[i] = -x[i];
            }
            lp
        }
    }

    #[test]
    fn leapfrog_conserves_energy_with_tiny_steps() {
        let target = StdNormalTarget { dim: 3 };
        let inv_mass = vec![1.0; 3];
        let mut q = vec![0.3, -1.2, 0.7];
        let mut p = vec![0.5, 0.1, -0.9];
        let mut grad = vec![0.0; 3];
        let logp0 = target.log_density_grad(&q, &mut grad);
        let ke = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        let mut h_prev = -logp0 + ke(&p);
        for _ in 0..100 {
            let logp = leapfrog_step(&target, &inv_mass, 1e-4, &mut q, &mut p, &mut grad);
            let h = -logp + ke(&p);
            assert!((h - h_prev).abs() < 1e-6, "energy drift {}", h - h_prev);
            h_prev = h;
        }
    }

    #[test]
    fn mass_windows_cover_middle_of_warmup() {
        let ends = mass_window_ends(100);
        assert!(!ends.is_empty());
        assert_eq!(*ends.last().unwrap(), 90);
        assert!(ends.iter().all(|&e| e > 15 && e <= 90));
        let ends = mass_window_ends(500);
        assert_eq!(*ends.last().unwrap(), 450);
        assert!(mass_window_ends(10).is_empty());
    }
}
