//! Self-contained gradient-based MCMC: Hamiltonian Monte Carlo with
//! dual-averaging step-size adaptation, diagonal mass estimation, and
//! convergence diagnostics.

mod diagnostics;
mod hmc;

pub use diagnostics::{ess, mcse, split_rhat};
pub use hmc::ChainStats;
#[cfg(test)]
pub(crate) use hmc::leapfrog_step;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("chain {chain}: target was non-finite at every initial point after {attempts} retries")]
    NonFiniteInit { chain: usize, attempts: usize },
    #[error("initializer produced a vector of length {got}, target dimension is {want}")]
    InitDimension { got: usize, want: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A log target density with analytic gradient. Return negative infinity
/// off support; the sampler treats those points as rejections.
pub trait GradientTarget: Sync {
    fn dim(&self) -> usize;
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Total iterations per chain, warmup included.
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_leapfrog: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            iterations: 2000,
            warmup: 100,
            seed: 0,
            target_accept: 0.8,
            max_leapfrog: 32,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.chains == 0 {
            return Err(SamplerError::Config("chains must be >= 1".into()));
        }
        if self.warmup >= self.iterations {
            return Err(SamplerError::Config(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(SamplerError::Config(
                "target_accept must lie in (0,1)".into(),
            ));
        }
        if self.max_leapfrog == 0 {
            return Err(SamplerError::Config("max_leapfrog must be >= 1".into()));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        self.iterations - self.warmup
    }
}

/// Posterior draws from all chains plus acceptance statistics and an
/// optional per-draw pointwise log-likelihood matrix.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub dim: usize,
    pub n_chains: usize,
    pub n_per_chain: usize,
    /// Chain-major, then iteration, then parameter.
    values: Vec<f64>,
    /// Flat draws x records matrix; empty when not computed.
    pub loglik: Vec<f64>,
    pub n_records: usize,
    pub chain_stats: Vec<ChainStats>,
}

impl PosteriorDraws {
    /// Assemble draws directly (used by tests and synthetic summaries).
    pub fn from_parts(dim: usize, n_chains: usize, n_per_chain: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), dim * n_chains * n_per_chain);
        PosteriorDraws {
            dim,
            n_chains,
            n_per_chain,
            values,
            loglik: Vec::new(),
            n_records: 0,
            chain_stats: Vec::new(),
        }
    }

    pub fn total_draws(&self) -> usize {
        self.n_chains * self.n_per_chain
    }

    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let at = (chain * self.n_per_chain + iter) * self.dim;
        &self.values[at..at + self.dim]
    }

    /// Draw by flat index over all chains.
    pub fn draw_flat(&self, s: usize) -> &[f64] {
        &self.values[s * self.dim..(s + 1) * self.dim]
    }

    /// One parameter's draws, per chain.
    pub fn param_chains(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| {
                (0..self.n_per_chain)
                    .map(|i| self.draw(c, i)[param])
                    .collect()
            })
            .collect()
    }

    /// One parameter's draws pooled over chains.
    pub fn param_pooled(&self, param: usize) -> Vec<f64> {
        (0..self.total_draws())
            .map(|s| self.draw_flat(s)[param])
            .collect()
    }

    pub fn loglik_row(&self, s: usize) -> &[f64] {
        &self.loglik[s * self.n_records..(s + 1) * self.n_records]
    }

    pub fn total_divergences(&self) -> usize {
        self.chain_stats.iter().map(|c| c.divergences).sum()
    }
}

/// Sample with standard-normal chain initialization.
pub fn sample<T: GradientTarget + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws, SamplerError> {
    let dim = target.dim();
    sample_with_init(target, cfg, move |rng: &mut ChaCha8Rng| {
        (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    })
}

/// Sample with a custom per-chain initializer (drawn repeatedly until the
/// target is finite, within a bounded number of retries).
pub fn sample_with_init<T, F>(
    target: &T,
    cfg: &SamplerConfig,
    init_fn: F,
) -> Result<PosteriorDraws, SamplerError>
where
    T: GradientTarget + ?Sized,
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    let outputs: Vec<Result<hmc::ChainOutput, SamplerError>> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| hmc::run_chain(target, cfg, chain, &init_fn))
        .collect();

    let dim = target.dim();
    let n_per_chain = cfg.kept_per_chain();
    let mut values = Vec::with_capacity(cfg.chains * n_per_chain * dim);
    let mut chain_stats = Vec::with_capacity(cfg.chains);
    for output in outputs {
        let output = output?;
        values.extend_from_slice(&output.draws);
        chain_stats.push(output.stats);
    }
    Ok(PosteriorDraws {
        dim,
        n_chains: cfg.chains,
        n_per_chain,
        values,
        loglik: Vec::new(),
        n_records: 0,
        chain_stats,
    })
}

/// Per-parameter posterior summary with convergence diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub lower95: f64,
    pub upper95: f64,
    pub rhat: f64,
    pub ess: f64,
    pub mcse: f64,
    pub degenerate: bool,
}

/// Summaries for every parameter; `names` must align with the layout.
pub fn diagnose(draws: &PosteriorDraws, names: &[String]) -> Vec<ParamDiagnostics> {
    assert_eq!(names.len(), draws.dim);
    (0..draws.dim)
        .map(|p| {
            let chains = draws.param_chains(p);
            let pooled = draws.param_pooled(p);
            let mut sorted = pooled.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let e = ess(&chains);
            let sd = crate::numeric::sample_sd(&pooled);
            ParamDiagnostics {
                name: names[p].clone(),
                mean: crate::numeric::mean(&pooled),
                sd,
                lower95: crate::numeric::quantile_sorted(&sorted, 0.025),
                upper95: crate::numeric::quantile_sorted(&sorted, 0.975),
                rhat: split_rhat(&chains),
                ess: e,
                mcse: mcse(&pooled, e),
                degenerate: sd <= 1e-300,
            }
        })
        .collect()
}

/// Persist draws as columnar delimited text: `chain,iter,param_name,value`.
pub fn write_draws_csv<W: Write>(
    draws: &PosteriorDraws,
    names: &[String],
    mut writer: W,
) -> Result<(), SamplerError> {
    writeln!(writer, "chain,iter,param_name,value")?;
    for chain in 0..draws.n_chains {
        for iter in 0..draws.n_per_chain {
            let row = draws.draw(chain, iter);
            for (name, value) in names.iter().zip(row) {
                writeln!(writer, "{chain},{iter},{name},{value}")?;
            }
        }
    }
    Ok(())
}

/// Attach a pointwise log-likelihood matrix computed per retained draw.
pub fn attach_loglik(draws: &mut PosteriorDraws, loglik: Vec<f64>, n_records: usize) {
    assert_eq!(loglik.len(), draws.total_draws() * n_records);
    draws.loglik = loglik;
    draws.n_records = n_records;
}
