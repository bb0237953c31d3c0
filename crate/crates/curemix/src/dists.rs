//! Parametric survival families for the uncured latency model.
//!
//! Parameterisations are fixed so that `rate` is the covariate-linked
//! parameter for every family:
//! - exponential: S(t) = exp(-rate * t)
//! - weibull:     S(t) = exp(-rate * t^shape)
//! - gompertz:    S(t) = exp(-(rate/shape) (e^{shape t} - 1)), shape > 0
//! - lognormal:   S(t) = 1 - Phi((ln t - mu)/sd) with mu = ln(rate)
//! - loglogistic: S(t) = 1 / (1 + (rate t)^shape)
//!
//! All densities are evaluated in log space. The `*_terms` functions also
//! return derivatives with respect to eta = ln(rate) and u = ln(ancillary),
//! which is what the model gradient needs.

use crate::numeric::{
    inv_logit, log1p_exp, log_std_normal_sf, std_normal_mills_ratio, LN_2PI,
};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("invalid parameters for {family}: {detail}")]
    InvalidParams { family: Family, detail: String },
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
}

/// The five NICE-recommended latency families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Weibull,
    Gompertz,
    #[serde(alias = "log-normal")]
    Lognormal,
    #[serde(alias = "log-logistic")]
    Loglogistic,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Exponential,
        Family::Weibull,
        Family::Gompertz,
        Family::Lognormal,
        Family::Loglogistic,
    ];

    /// Whether the family carries an ancillary (shape/SD) parameter.
    pub fn has_ancillary(self) -> bool {
        !matches!(self, Family::Exponential)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::Gompertz => "gompertz",
            Family::Lognormal => "lognormal",
            Family::Loglogistic => "loglogistic",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" => Some(Family::Exponential),
            "weibull" => Some(Family::Weibull),
            "gompertz" => Some(Family::Gompertz),
            "lognormal" | "log-normal" => Some(Family::Lognormal),
            "loglogistic" | "log-logistic" => Some(Family::Loglogistic),
            _ => None,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Rate plus optional ancillary parameter of one latency distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyParams {
    pub rate: f64,
    pub ancillary: Option<f64>,
}

impl LatencyParams {
    pub fn exponential(rate: f64) -> Self {
        LatencyParams {
            rate,
            ancillary: None,
        }
    }

    pub fn with_ancillary(rate: f64, ancillary: f64) -> Self {
        LatencyParams {
            rate,
            ancillary: Some(ancillary),
        }
    }

    fn checked(&self, family: Family) -> Result<(f64, f64), DistError> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(DistError::InvalidParams {
                family,
                detail: format!("rate must be positive and finite, got {}", self.rate),
            });
        }
        if family.has_ancillary() {
            match self.ancillary {
                Some(a) if a > 0.0 && a.is_finite() => Ok((self.rate, a)),
                other => Err(DistError::InvalidParams {
                    family,
                    detail: format!("ancillary must be positive and finite, got {other:?}"),
                }),
            }
        } else {
            Ok((self.rate, f64::NAN))
        }
    }
}

/// Covariate link for the rate: eta = intercept + age_coeff * (age - center),
/// rate = exp(eta).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub age_coeff: f64,
    pub age_center: f64,
}

impl LinearPredictor {
    pub fn eta(&self, age: f64) -> f64 {
        self.intercept + self.age_coeff * (age - self.age_center)
    }
}

/// rate = exp(intercept + age_coeff * (age - center)).
pub fn rate_from_covariates(lp: &LinearPredictor, age: f64) -> f64 {
    lp.eta(age).exp()
}

/// Log survival and its derivatives w.r.t. eta = ln(rate), u = ln(ancillary).
#[derive(Debug, Clone, Copy)]
pub struct LogSurvTerms {
    pub log_s: f64,
    pub d_eta: f64,
    pub d_u: f64,
}

/// Log density and its derivatives w.r.t. eta = ln(rate), u = ln(ancillary).
#[derive(Debug, Clone, Copy)]
pub struct LogPdfTerms {
    pub log_f: f64,
    pub d_eta: f64,
    pub d_u: f64,
}

// Gompertz helper: G = (e^{phi t} - 1)/phi and D = t e^{phi t} - G, with a
// series branch for small phi*t where the direct form cancels.
fn gompertz_g_and_d(phi: f64, t: f64) -> (f64, f64) {
    let x = phi * t;
    if x < 1e-4 {
        let g = t * (1.0 + x * (0.5 + x * (1.0 / 6.0 + x / 24.0)));
        let d = t * x * (0.5 + x * (1.0 / 3.0 + x / 8.0));
        return (g, d);
    }
    let ex = x.exp();
    let g = (ex - 1.0) / phi;
    (g, t * ex - g)
}

/// log S(t) with derivatives; t >= 0 assumed, parameters assumed valid.
pub fn log_survival_terms(family: Family, rate: f64, anc: f64, t: f64) -> LogSurvTerms {
    match family {
        Family::Exponential => {
            let h = rate * t;
            LogSurvTerms {
                log_s: -h,
                d_eta: -h,
                d_u: 0.0,
            }
        }
        Family::Weibull => {
            let k = anc;
            let h = if t == 0.0 { 0.0 } else { rate * t.powf(k) };
            let d_u = if t == 0.0 { 0.0 } else { -h * k * t.ln() };
            LogSurvTerms {
                log_s: -h,
                d_eta: -h,
                d_u,
            }
        }
        Family::Gompertz => {
            let (g, d) = gompertz_g_and_d(anc, t);
            LogSurvTerms {
                log_s: -rate * g,
                d_eta: -rate * g,
                d_u: -rate * d,
            }
        }
        Family::Lognormal => {
            if t == 0.0 {
                return LogSurvTerms {
                    log_s: 0.0,
                    d_eta: 0.0,
                    d_u: 0.0,
                };
            }
            let mu = rate.ln();
            let z = (t.ln() - mu) / anc;
            let mills = std_normal_mills_ratio(z);
            LogSurvTerms {
                log_s: log_std_normal_sf(z),
                d_eta: mills / anc,
                d_u: mills * z,
            }
        }
        Family::Loglogistic => {
            if t == 0.0 {
                return LogSurvTerms {
                    log_s: 0.0,
                    d_eta: 0.0,
                    d_u: 0.0,
                };
            }
            let lw = anc * (rate * t).ln();
            let r = inv_logit(lw);
            LogSurvTerms {
                log_s: -log1p_exp(lw),
                d_eta: -anc * r,
                d_u: -lw * r,
            }
        }
    }
}

/// log f(t) with derivatives; t > 0 assumed, parameters assumed valid.
pub fn log_pdf_terms(family: Family, rate: f64, anc: f64, t: f64) -> LogPdfTerms {
    match family {
        Family::Exponential => {
            let h = rate * t;
            LogPdfTerms {
                log_f: rate.ln() - h,
                d_eta: 1.0 - h,
                d_u: 0.0,
            }
        }
        Family::Weibull => {
            let k = anc;
            let lt = t.ln();
            let h = rate * t.powf(k);
            LogPdfTerms {
                log_f: k.ln() + rate.ln() + (k - 1.0) * lt - h,
                d_eta: 1.0 - h,
                d_u: 1.0 + k * lt * (1.0 - h),
            }
        }
        Family::Gompertz => {
            let (g, d) = gompertz_g_and_d(anc, t);
            LogPdfTerms {
                log_f: rate.ln() + anc * t - rate * g,
                d_eta: 1.0 - rate * g,
                d_u: anc * t - rate * d,
            }
        }
        Family::Lognormal => {
            let mu = rate.ln();
            let z = (t.ln() - mu) / anc;
            LogPdfTerms {
                log_f: -t.ln() - anc.ln() - 0.5 * LN_2PI - 0.5 * z * z,
                d_eta: z / anc,
                d_u: z * z - 1.0,
            }
        }
        Family::Loglogistic => {
            let lw = anc * (rate * t).ln();
            let r = inv_logit(lw);
            LogPdfTerms {
                log_f: anc.ln() + lw - t.ln() - 2.0 * log1p_exp(lw),
                d_eta: anc * (1.0 - 2.0 * r),
                d_u: 1.0 + lw * (1.0 - 2.0 * r),
            }
        }
    }
}

/// Survival probability S(t); S(0) = 1, non-increasing in t.
pub fn survival(family: Family, params: &LatencyParams, t: f64) -> Result<f64, DistError> {
    if t < 0.0 {
        return Err(DistError::NegativeTime(t));
    }
    let (rate, anc) = params.checked(family)?;
    Ok(log_survival_terms(family, rate, anc, t).log_s.exp())
}

/// Log density ln f(t).
pub fn log_pdf(family: Family, params: &LatencyParams, t: f64) -> Result<f64, DistError> {
    if t <= 0.0 {
        return Err(DistError::NonPositiveTime(t));
    }
    let (rate, anc) = params.checked(family)?;
    Ok(log_pdf_terms(family, rate, anc, t).log_f)
}

/// Hazard f(t)/S(t), computed on the log scale.
pub fn hazard(family: Family, params: &LatencyParams, t: f64) -> Result<f64, DistError> {
    if t <= 0.0 {
        return Err(DistError::NonPositiveTime(t));
    }
    let (rate, anc) = params.checked(family)?;
    let log_f = log_pdf_terms(family, rate, anc, t).log_f;
    let log_s = log_survival_terms(family, rate, anc, t).log_s;
    Ok((log_f - log_s).exp())
}

/// Draw an event time by inverse-transform sampling.
pub fn sample_time<R: Rng + ?Sized>(
    family: Family,
    params: &LatencyParams,
    rng: &mut R,
) -> Result<f64, DistError> {
    let (rate, anc) = params.checked(family)?;
    let u: f64 = rng.random();
    // Standard exponential draw; u in [0,1) so 1-u in (0,1].
    let e = -(-u).ln_1p();
    let t = match family {
        Family::Exponential => e / rate,
        Family::Weibull => (e / rate).powf(1.0 / anc),
        Family::Gompertz => (anc * e / rate).ln_1p() / anc,
        Family::Lognormal => {
            let z: f64 = rng.sample(StandardNormal);
            (rate.ln() + anc * z).exp()
        }
        Family::Loglogistic => {
            // S(t) = v  =>  (rate t)^shape = (1-v)/v
            let v: f64 = rng.random();
            let odds = (1.0 - v) / v.max(f64::MIN_POSITIVE);
            odds.powf(1.0 / anc) / rate
        }
    };
    Ok(t.max(f64::MIN_POSITIVE))
}
