//! The mixture cure model: joint log-posterior over all end-points, arms,
//! and pooling modes, with analytic gradients.
//!
//! The population survival for a subject is
//! `S(t) = S_b(t) [pi + (1 - pi) S_u(t)]`, with `S_b` the fixed background
//! survival, `pi` the cure fraction for the subject's (arm, end-point)
//! cell, and `S_u` the parametric latency survival. The event-time density
//! implied by that survival is
//! `f(t) = S_b(t) [h_b(t)(pi + (1 - pi) S_u(t)) + (1 - pi) f_u(t)]`.

mod layout;
mod likelihood;

pub use layout::{BlockId, ParamLayout};
pub use likelihood::{
    log_likelihood, log_posterior_and_gradient, log_prior, log_prior_hyper_block,
    pointwise_loglik,
};

use crate::data::TrialDataset;
use crate::dists::Family;
use crate::lifetable::LifeTableSet;
use crate::numeric::LN_2PI;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("record {record}: {detail}")]
    Record { record: usize, detail: String },
    #[error("non-finite log-likelihood at record {record} ({block})")]
    NonFinite { record: usize, block: String },
    #[error("empty (arm `{arm}`, endpoint `{endpoint}`) cell referenced by the fit")]
    EmptyCell { arm: String, endpoint: String },
    #[error("parameter vector has length {got}, layout requires {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    LifeTable(#[from] crate::lifetable::LifeTableError),
}

/// How cure fractions are shared across end-points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Separate,
    Pooled,
    Hierarchical,
}

impl PoolingMode {
    pub fn name(self) -> &'static str {
        match self {
            PoolingMode::Separate => "separate",
            PoolingMode::Pooled => "pooled",
            PoolingMode::Hierarchical => "hierarchical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -self.sd.ln() - 0.5 * LN_2PI - 0.5 * z * z
    }

    pub fn grad(&self, x: f64) -> f64 {
        -(x - self.mean) / (self.sd * self.sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    /// Log density on the unconstrained scale u = ln(phi), Jacobian included.
    pub fn log_density_unconstrained(&self, u: f64) -> f64 {
        let phi = u.exp();
        self.shape * self.rate.ln() - ln_gamma(self.shape) + self.shape * u - self.rate * phi
    }

    pub fn grad_unconstrained(&self, u: f64) -> f64 {
        self.shape - self.rate * u.exp()
    }
}

/// Hyperprior for the between-end-point SD sigma_k, evaluated on the
/// unconstrained scale s = ln(sigma) with the Jacobian included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaPrior {
    #[serde(rename = "halfnormal")]
    HalfNormal { sd: f64 },
    #[serde(rename = "pc")]
    PcExponential { sigma0: f64, alpha: f64 },
    #[serde(rename = "lognormal")]
    LogNormal { log_mean: f64, log_sd: f64 },
    CauchyTrunc { location: f64, scale: f64 },
}

impl SigmaPrior {
    pub fn log_density_unconstrained(&self, s: f64) -> f64 {
        let sigma = s.exp();
        match *self {
            SigmaPrior::HalfNormal { sd } => {
                std::f64::consts::LN_2 - sd.ln() - 0.5 * LN_2PI
                    - 0.5 * (sigma / sd) * (sigma / sd)
                    + s
            }
            SigmaPrior::PcExponential { sigma0, alpha } => {
                let rate = pc_prior_rate(sigma0, alpha).expect("validated at construction");
                rate.ln() - rate * sigma + s
            }
            SigmaPrior::LogNormal { log_mean, log_sd } => {
                let z = (s - log_mean) / log_sd;
                -log_sd.ln() - 0.5 * LN_2PI - 0.5 * z * z
            }
            SigmaPrior::CauchyTrunc { location, scale } => {
                let u = (sigma - location) / scale;
                let f0 = ((0.0 - location) / scale).atan() / std::f64::consts::PI + 0.5;
                -std::f64::consts::PI.ln() - scale.ln() - (u * u).ln_1p() - (1.0 - f0).ln() + s
            }
        }
    }

    pub fn grad_unconstrained(&self, s: f64) -> f64 {
        let sigma = s.exp();
        match *self {
            SigmaPrior::HalfNormal { sd } => 1.0 - sigma * sigma / (sd * sd),
            SigmaPrior::PcExponential { sigma0, alpha } => {
                let rate = pc_prior_rate(sigma0, alpha).expect("validated at construction");
                1.0 - rate * sigma
            }
            SigmaPrior::LogNormal { log_mean, log_sd } => -(s - log_mean) / (log_sd * log_sd),
            SigmaPrior::CauchyTrunc { location, scale } => {
                let u = (sigma - location) / scale;
                1.0 - sigma * 2.0 * u / (scale * (1.0 + u * u))
            }
        }
    }

    /// Draw sigma from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SigmaPrior::HalfNormal { sd } => {
                let z: f64 = rng.sample(StandardNormal);
                (z * sd).abs()
            }
            SigmaPrior::PcExponential { sigma0, alpha } => {
                let rate = pc_prior_rate(sigma0, alpha).expect("validated at construction");
                let u: f64 = rng.random();
                -(-u).ln_1p() / rate
            }
            SigmaPrior::LogNormal { log_mean, log_sd } => {
                let z: f64 = rng.sample(StandardNormal);
                (log_mean + log_sd * z).exp()
            }
            SigmaPrior::CauchyTrunc { location, scale } => {
                let f0 = ((0.0 - location) / scale).atan() / std::f64::consts::PI + 0.5;
                let u: f64 = rng.random();
                let p = f0 + u * (1.0 - f0);
                location + scale * (std::f64::consts::PI * (p - 0.5)).tan()
            }
        }
    }
}

/// Rate of the penalised-complexity exponential prior from the tail
/// condition p(sigma > sigma0) = alpha.
pub fn pc_prior_rate(sigma0: f64, alpha: f64) -> Result<f64, ModelError> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(ModelError::Argument(format!(
            "sigma0 must be positive, got {sigma0}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ModelError::Argument(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    Ok(-alpha.ln() / sigma0)
}

/// Prior settings for every parameter block. Global defaults can be
/// overridden per end-point (used by the simulation study, where latency
/// priors depend on each end-point's underlying truth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSettings {
    pub beta_pi: NormalPrior,
    pub sigma: SigmaPrior,
    pub beta_lambda0: NormalPrior,
    #[serde(default)]
    pub beta_lambda0_by_endpoint: Option<Vec<NormalPrior>>,
    pub beta_age: NormalPrior,
    /// Ancillary (shape/SD) priors keyed by family name.
    pub phi: std::collections::BTreeMap<String, GammaPrior>,
    #[serde(default)]
    pub phi_by_endpoint: Option<Vec<Option<GammaPrior>>>,
}

/// Ancillary prior defaults: Gamma(1,1) for Weibull and log-logistic,
/// Gamma(1,1000) for Gompertz, Gamma(1,2) for the log-normal SD.
pub fn default_phi_prior(family: Family) -> GammaPrior {
    match family {
        Family::Weibull | Family::Loglogistic | Family::Exponential => GammaPrior {
            shape: 1.0,
            rate: 1.0,
        },
        Family::Gompertz => GammaPrior {
            shape: 1.0,
            rate: 1000.0,
        },
        Family::Lognormal => GammaPrior {
            shape: 1.0,
            rate: 2.0,
        },
    }
}

impl Default for PriorSettings {
    fn default() -> Self {
        let mut phi = std::collections::BTreeMap::new();
        for family in Family::ALL {
            if family.has_ancillary() {
                phi.insert(family.name().to_string(), default_phi_prior(family));
            }
        }
        PriorSettings {
            beta_pi: NormalPrior {
                mean: -0.1,
                sd: 0.2,
            },
            sigma: SigmaPrior::HalfNormal { sd: 2.5 },
            beta_lambda0: NormalPrior {
                mean: -3.0,
                sd: 0.5,
            },
            beta_lambda0_by_endpoint: None,
            beta_age: NormalPrior {
                mean: 0.0,
                sd: 0.01,
            },
            phi,
            phi_by_endpoint: None,
        }
    }
}

impl PriorSettings {
    pub fn beta_lambda0_for(&self, endpoint: usize) -> NormalPrior {
        self.beta_lambda0_by_endpoint
            .as_ref()
            .and_then(|v| v.get(endpoint).copied())
            .unwrap_or(self.beta_lambda0)
    }

    pub fn phi_for(&self, family: Family, endpoint: usize) -> GammaPrior {
        if let Some(by_ep) = &self.phi_by_endpoint {
            if let Some(Some(p)) = by_ep.get(endpoint) {
                return *p;
            }
        }
        self.phi
            .get(family.name())
            .copied()
            .unwrap_or_else(|| default_phi_prior(family))
    }
}

/// Whether the uncured population is subject to life-table background
/// mortality or none (S_b = 1, h_b = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    Lifetable,
    None,
}

/// The full model specification for one fit.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub endpoints: Vec<String>,
    pub arms: Vec<String>,
    /// Latency family per end-point.
    pub families: Vec<Family>,
    pub pooling: PoolingMode,
    pub priors: PriorSettings,
    /// Covariate centering constant (mean age).
    pub age_center: f64,
    /// Whether the latency rate regresses on centred age.
    pub age_covariate: bool,
    pub background: BackgroundMode,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.endpoints.is_empty() || self.arms.is_empty() {
            return Err(ModelError::Argument(
                "model requires at least one arm and one end-point".into(),
            ));
        }
        if self.families.len() != self.endpoints.len() {
            return Err(ModelError::Argument(format!(
                "{} families specified for {} end-points",
                self.families.len(),
                self.endpoints.len()
            )));
        }
        Ok(())
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn n_endpoints(&self) -> usize {
        self.endpoints.len()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::for_spec(self)
    }

    /// Check that every (arm, end-point) cell referenced by this spec has
    /// at least one record.
    pub fn validate_cells(&self, data: &TrialDataset) -> Result<(), ModelError> {
        let mut seen = vec![false; self.n_arms() * self.n_endpoints()];
        for r in &data.records {
            if r.arm < self.n_arms() && r.endpoint < self.n_endpoints() {
                seen[r.arm * self.n_endpoints() + r.endpoint] = true;
            }
        }
        for k in 0..self.n_arms() {
            for j in 0..self.n_endpoints() {
                if !seen[k * self.n_endpoints() + j] {
                    return Err(ModelError::EmptyCell {
                        arm: self.arms[k].clone(),
                        endpoint: self.endpoints[j].clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Background mortality source for a fit: life tables with an optional
/// hazard multiplier, or none at all (S_b = 1, h_b = 0).
#[derive(Debug, Clone)]
pub enum BackgroundModel {
    None,
    Lifetable {
        tables: LifeTableSet,
        multiplier: f64,
    },
}

impl BackgroundModel {
    pub fn mode(&self) -> BackgroundMode {
        match self {
            BackgroundModel::None => BackgroundMode::None,
            BackgroundModel::Lifetable { .. } => BackgroundMode::Lifetable,
        }
    }

    /// Per-record background terms at the observed times.
    pub fn curve(&self, data: &TrialDataset) -> Result<BackgroundCurve, ModelError> {
        match self {
            BackgroundModel::None => Ok(BackgroundCurve::none(data.records.len())),
            BackgroundModel::Lifetable { tables, multiplier } => {
                BackgroundCurve::from_lifetables(tables, data, *multiplier)
            }
        }
    }

    /// Background survival for one subject at an arbitrary time.
    pub fn survival_for(
        &self,
        record: &crate::data::SubjectRecord,
        t: f64,
    ) -> Result<f64, ModelError> {
        match self {
            BackgroundModel::None => Ok(1.0),
            BackgroundModel::Lifetable { tables, multiplier } => {
                let table = tables.get(&record.country, record.sex)?;
                Ok(table.log_survival(record.age, t, *multiplier).exp())
            }
        }
    }
}

/// Fixed background terms evaluated at each record's observed time.
#[derive(Debug, Clone)]
pub struct BackgroundCurve {
    /// log S_b(t_i) per record.
    pub log_sb: Vec<f64>,
    /// Background hazard per month at t_i per record.
    pub hazard_month: Vec<f64>,
}

impl BackgroundCurve {
    /// No background mortality: S_b = 1, h_b = 0.
    pub fn none(n_records: usize) -> BackgroundCurve {
        BackgroundCurve {
            log_sb: vec![0.0; n_records],
            hazard_month: vec![0.0; n_records],
        }
    }

    /// Evaluate life-table background terms per record. Errors if any
    /// subject's attained age reaches the 100-year cap (S_b = 0 there).
    pub fn from_lifetables(
        tables: &LifeTableSet,
        data: &TrialDataset,
        multiplier: f64,
    ) -> Result<BackgroundCurve, ModelError> {
        let mut log_sb = Vec::with_capacity(data.records.len());
        let mut hazard_month = Vec::with_capacity(data.records.len());
        for (i, r) in data.records.iter().enumerate() {
            let table = tables.get(&r.country, r.sex)?;
            let ls = table.log_survival(r.age, r.time, multiplier);
            if ls == f64::NEG_INFINITY {
                return Err(ModelError::Record {
                    record: i + 1,
                    detail: format!(
                        "attained age {} reaches the 100-year cap; background survival is zero",
                        r.age + r.time / 12.0
                    ),
                });
            }
            let h = table.hazard_at(r.age + r.time / 12.0) * multiplier / 12.0;
            log_sb.push(ls);
            hazard_month.push(h);
        }
        Ok(BackgroundCurve {
            log_sb,
            hazard_month,
        })
    }

    pub fn len(&self) -> usize {
        self.log_sb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_sb.is_empty()
    }
}

/// Draw an initial parameter vector from the priors, with sigma floored at
/// 1e-3 to avoid starting inside the funnel neck.
pub fn initialize<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Vec<f64> {
    let layout = spec.layout();
    let mut theta = vec![0.0; layout.dim()];
    let normal = |rng: &mut R, p: &NormalPrior| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        p.mean + p.sd * z
    };
    for k in 0..spec.n_arms() {
        match spec.pooling {
            PoolingMode::Separate => {
                for j in 0..spec.n_endpoints() {
                    theta[layout.idx_logit_pi_sep(k, j)] = normal(rng, &spec.priors.beta_pi);
                }
            }
            PoolingMode::Pooled => {
                theta[layout.idx_nu(k)] = normal(rng, &spec.priors.beta_pi);
            }
            PoolingMode::Hierarchical => {
                theta[layout.idx_nu(k)] = normal(rng, &spec.priors.beta_pi);
                let sigma = spec.priors.sigma.sample(rng).max(1e-3);
                theta[layout.idx_log_sigma(k)] = sigma.ln();
                for j in 0..spec.n_endpoints() {
                    theta[layout.idx_z(k, j)] = rng.sample(StandardNormal);
                }
            }
        }
        for j in 0..spec.n_endpoints() {
            theta[layout.idx_beta0(k, j)] = normal(rng, &spec.priors.beta_lambda0_for(j));
        }
    }
    for j in 0..spec.n_endpoints() {
        if let Some(idx) = layout.idx_beta_age(j) {
            theta[idx] = normal(rng, &spec.priors.beta_age);
        }
        if let Some(idx) = layout.idx_log_phi(j) {
            let prior = spec.priors.phi_for(spec.families[j], j);
            let gamma = Gamma::new(prior.shape, 1.0 / prior.rate).expect("valid gamma prior");
            let phi: f64 = gamma.sample(rng).max(1e-6);
            theta[idx] = phi.ln();
        }
    }
    theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_spec(pooling: PoolingMode, families: Vec<Family>) -> ModelSpec {
        let endpoints: Vec<String> = (0..families.len()).map(|j| format!("EP{j}")).collect();
        ModelSpec {
            endpoints,
            arms: vec!["a".into(), "b".into()],
            families,
            pooling,
            priors: PriorSettings::default(),
            age_center: 60.0,
            age_covariate: true,
            background: BackgroundMode::None,
        }
    }

    #[test]
    fn pc_prior_rate_paper_values() {
        let r = pc_prior_rate(0.18, 0.01).unwrap();
        assert!((r - 25.584278811044947).abs() < 1e-12);
        let r = pc_prior_rate(0.08, 0.01).unwrap();
        assert!((r - 57.564627324851124).abs() < 1e-12);
        // alpha -> 1 gives no penalisation.
        assert!(pc_prior_rate(0.18, 0.9999999).unwrap() < 1e-6);
        assert!(pc_prior_rate(0.0, 0.01).is_err());
        assert!(pc_prior_rate(0.18, 0.0).is_err());
        assert!(pc_prior_rate(0.18, 1.0).is_err());
    }

    #[test]
    fn sigma_prior_densities_at_reference_points() {
        // Half-normal density at 0+ is twice the untruncated normal density.
        let hn = SigmaPrior::HalfNormal { sd: 2.5 };
        let s = (1e-12f64).ln();
        let lp = hn.log_density_unconstrained(s) - s; // remove Jacobian
        let untruncated = -2.5f64.ln() - 0.5 * LN_2PI;
        assert!((lp - (std::f64::consts::LN_2 + untruncated)).abs() < 1e-9);

        // PC exponential at sigma = 0 has log-density log(rate).
        let pc = SigmaPrior::PcExponential {
            sigma0: 0.18,
            alpha: 0.01,
        };
        let rate = pc_prior_rate(0.18, 0.01).unwrap();
        let s = (1e-14f64).ln();
        let lp = pc.log_density_unconstrained(s) - s;
        assert!((lp - rate.ln()).abs() < 1e-9);
    }

    #[test]
    fn sigma_prior_gradients_match_finite_differences() {
        let priors = [
            SigmaPrior::HalfNormal { sd: 2.5 },
            SigmaPrior::PcExponential {
                sigma0: 0.18,
                alpha: 0.01,
            },
            SigmaPrior::LogNormal {
                log_mean: 0.05,
                log_sd: 0.3,
            },
            SigmaPrior::CauchyTrunc {
                location: 0.4,
                scale: 2.4,
            },
        ];
        for prior in priors {
            for &s in &[-2.0, -0.5, 0.0, 0.7] {
                let h = 1e-6;
                let fd = (prior.log_density_unconstrained(s + h)
                    - prior.log_density_unconstrained(s - h))
                    / (2.0 * h);
                let g = prior.grad_unconstrained(s);
                assert!((fd - g).abs() < 1e-5, "{prior:?} s={s}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn sigma_priors_integrate_to_one() {
        // Trapezoid over the unconstrained scale; catches missing Jacobians
        // and truncation constants.
        let priors = [
            SigmaPrior::HalfNormal { sd: 2.5 },
            SigmaPrior::PcExponential {
                sigma0: 0.18,
                alpha: 0.01,
            },
            SigmaPrior::LogNormal {
                log_mean: 0.05,
                log_sd: 0.3,
            },
            SigmaPrior::CauchyTrunc {
                location: 0.4,
                scale: 2.4,
            },
        ];
        for prior in priors {
            // Piecewise panels so the adaptive rule cannot miss the region
            // where a concentrated prior carries its mass.
            let cuts = [-40.0, -20.0, -10.0, -5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0, 25.0];
            let total: f64 = cuts
                .windows(2)
                .map(|w| {
                    crate::numeric::adaptive_simpson(
                        |s| prior.log_density_unconstrained(s).exp(),
                        w[0],
                        w[1],
                        1e-10,
                    )
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "{prior:?}: integral {total}");
        }
    }

    #[test]
    fn gamma_prior_unconstrained_density_integrates_to_one() {
        let prior = GammaPrior {
            shape: 1000.0,
            rate: 1000.0,
        };
        let total = crate::numeric::adaptive_simpson(
            |u| prior.log_density_unconstrained(u).exp(),
            -1.0,
            1.0,
            1e-10,
        );
        assert!((total - 1.0).abs() < 1e-8, "integral {total}");
    }

    #[test]
    fn normal_prior_log_density_at_mean() {
        let p = NormalPrior {
            mean: -0.1,
            sd: 0.2,
        };
        // -ln(0.2) - 0.5 ln(2 pi)
        assert!((p.log_density(-0.1) - 0.6904993792294276).abs() < 1e-12);
    }

    #[test]
    fn initialize_is_reproducible_and_in_support() {
        let spec = toy_spec(
            PoolingMode::Hierarchical,
            vec![Family::Weibull, Family::Exponential],
        );
        let a = initialize(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        let b = initialize(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let layout = spec.layout();
        for k in 0..2 {
            for j in 0..2 {
                let l = a[layout.idx_nu(k)]
                    + a[layout.idx_log_sigma(k)].exp() * a[layout.idx_z(k, j)];
                let pi = crate::numeric::inv_logit(l);
                assert!(pi > 0.0 && pi < 1.0);
            }
            assert!(a[layout.idx_log_sigma(k)].exp() >= 1e-3);
        }
    }

    #[test]
    fn initial_beta_pi_samples_center_on_prior_mean() {
        let spec = toy_spec(PoolingMode::Pooled, vec![Family::Exponential]);
        let layout = spec.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let mut total = 0.0;
        for _ in 0..n {
            total += initialize(&spec, &mut rng)[layout.idx_nu(0)];
        }
        let mean = total / n as f64;
        let se = 0.2 / (n as f64).sqrt();
        assert!(
            (mean + 0.1).abs() < 3.0 * se,
            "mean {mean}, prior mean -0.1, se {se}"
        );
    }
}
