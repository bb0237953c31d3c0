//! Glue between the model and the sampler: wraps the log-posterior as a
//! gradient target, runs the chains, and attaches the pointwise
//! log-likelihood matrix needed for WAIC/LOO.

use crate::data::TrialDataset;
use crate::model::{self, BackgroundCurve, BackgroundModel, ModelError, ModelSpec};
use crate::sampler::{
    self, diagnose, GradientTarget, ParamDiagnostics, PosteriorDraws, SamplerConfig, SamplerError,
};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// The model's unnormalised log-posterior as a sampler target. Evaluation
/// failures (overflow excursions) map to negative infinity, which the
/// sampler treats as rejections.
pub struct ModelTarget<'a> {
    spec: &'a ModelSpec,
    data: &'a TrialDataset,
    bg: &'a BackgroundCurve,
    dim: usize,
}

impl<'a> ModelTarget<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a TrialDataset, bg: &'a BackgroundCurve) -> Self {
        let dim = spec.layout().dim();
        ModelTarget {
            spec,
            data,
            bg,
            dim,
        }
    }
}

impl GradientTarget for ModelTarget<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match model::log_posterior_and_gradient(self.spec, self.data, self.bg, x) {
            Ok((lp, g)) => {
                grad.copy_from_slice(&g);
                lp
            }
            Err(_) => {
                grad.fill(0.0);
                f64::NEG_INFINITY
            }
        }
    }
}

pub struct FitResult {
    pub draws: PosteriorDraws,
    pub param_names: Vec<String>,
    pub diagnostics: Vec<ParamDiagnostics>,
    pub bg_curve: BackgroundCurve,
}

/// Fit the model by HMC. When `compute_loglik` is set, the per-draw
/// pointwise log-likelihood matrix is evaluated for WAIC/LOO.
pub fn fit_model(
    spec: &ModelSpec,
    data: &TrialDataset,
    background: &BackgroundModel,
    cfg: &SamplerConfig,
    compute_loglik: bool,
) -> Result<FitResult, FitError> {
    spec.validate()?;
    spec.validate_cells(data)?;
    let bg = background.curve(data)?;
    let target = ModelTarget::new(spec, data, &bg);
    let mut draws = sampler::sample_with_init(&target, cfg, |rng| model::initialize(spec, rng))?;

    if compute_loglik {
        let n_records = data.records.len();
        let rows: Vec<Vec<f64>> = (0..draws.total_draws())
            .into_par_iter()
            .map(|s| {
                model::pointwise_loglik(spec, data, &bg, draws.draw_flat(s))
                    .unwrap_or_else(|_| vec![f64::NEG_INFINITY; n_records])
            })
            .collect();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        sampler::attach_loglik(&mut draws, flat, n_records);
    }

    let layout = spec.layout();
    let param_names = layout.param_names(spec);
    let diagnostics = diagnose(&draws, &param_names);
    Ok(FitResult {
        draws,
        param_names,
        diagnostics,
        bg_curve: bg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sex, SubjectRecord};
    use crate::dists::{sample_time, Family, LatencyParams};
    use crate::model::{PoolingMode, PriorSettings};
    use crate::numeric::inv_logit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simulate_dataset(
        n_per_cell: usize,
        pi: f64,
        rate: f64,
        tau: f64,
        seed: u64,
    ) -> TrialDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        for j in 0..2 {
            for i in 0..n_per_cell {
                let cured = rng.random::<f64>() < pi;
                let p = LatencyParams::exponential(rate);
                let (time, event) = if cured {
                    (tau, false)
                } else {
                    let t = sample_time(Family::Exponential, &p, &mut rng).unwrap();
                    if t > tau {
                        (tau, false)
                    } else {
                        (t, true)
                    }
                };
                records.push(SubjectRecord {
                    id: format!("s{j}-{i}"),
                    endpoint: j,
                    arm: 0,
                    time: time.max(1e-4),
                    event,
                    age: 60.0,
                    sex: Sex::Female,
                    country: "GB".into(),
                });
            }
        }
        TrialDataset::new(
            records,
            vec!["OS".into(), "PFS".into()],
            vec!["arm".into()],
        )
        .unwrap()
    }

    #[test]
    fn recovers_cure_fraction_on_simulated_data() {
        // pi = 0.3, exponential rate 1, censor-at-tau DGP.
        let data = simulate_dataset(150, 0.3, 1.0, 20.0, 8);
        let spec = ModelSpec {
            endpoints: data.endpoints.clone(),
            arms: data.arms.clone(),
            families: vec![Family::Exponential; 2],
            pooling: PoolingMode::Separate,
            priors: PriorSettings::default(),
            age_center: data.age_mean,
            age_covariate: false,
            background: crate::model::BackgroundMode::None,
        };
        let cfg = SamplerConfig {
            chains: 2,
            iterations: 900,
            warmup: 300,
            seed: 11,
            ..SamplerConfig::default()
        };
        let fit = fit_model(&spec, &data, &BackgroundModel::None, &cfg, true).unwrap();
        let layout = spec.layout();
        for j in 0..2 {
            let idx = layout.idx_logit_pi_sep(0, j);
            let pooled = fit.draws.param_pooled(idx);
            let mean_pi = pooled.iter().map(|&l| inv_logit(l)).sum::<f64>() / pooled.len() as f64;
            assert!(
                (mean_pi - 0.3).abs() < 0.08,
                "endpoint {j}: posterior mean pi {mean_pi}"
            );
        }
        for d in &fit.diagnostics {
            assert!(d.rhat < 1.1, "{}: rhat {}", d.name, d.rhat);
        }
        assert_eq!(
            fit.draws.loglik.len(),
            fit.draws.total_draws() * data.records.len()
        );
    }

    #[test]
    fn fit_rejects_empty_cells() {
        let mut data = simulate_dataset(5, 0.2, 1.0, 10.0, 3);
        data.records.retain(|r| r.endpoint == 0);
        let spec = ModelSpec {
            endpoints: vec!["OS".into(), "PFS".into()],
            arms: vec!["arm".into()],
            families: vec![Family::Exponential; 2],
            pooling: PoolingMode::Separate,
            priors: PriorSettings::default(),
            age_center: 60.0,
            age_covariate: false,
            background: crate::model::BackgroundMode::None,
        };
        let cfg = SamplerConfig {
            chains: 1,
            iterations: 20,
            warmup: 10,
            ..SamplerConfig::default()
        };
        match fit_model(&spec, &data, &BackgroundModel::None, &cfg, false) {
            Err(FitError::Model(ModelError::EmptyCell { endpoint, .. })) => {
                assert_eq!(endpoint, "PFS")
            }
            Err(other) => panic!("expected empty-cell error, got {other:?}"),
            Ok(_) => panic!("expected empty-cell error, fit succeeded"),
        }
    }
}
