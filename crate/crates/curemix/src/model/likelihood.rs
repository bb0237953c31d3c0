//! Mixture cure log-likelihood, log-prior, and analytic gradients on the
//! unconstrained parameter scale.
//!
//! Per record, with A = pi + (1 - pi) S_u(t):
//! - censored: log S_b + log A
//! - event:    log S_b + log[h_b A + (1 - pi) f_u(t)]
//! with h_b the background hazard per month. Everything is assembled from
//! log-space pieces so tiny survival probabilities and extreme logits stay
//! finite.

use super::{BackgroundCurve, ModelError, ModelSpec, ParamLayout, PoolingMode};
use crate::data::TrialDataset;
use crate::dists::{log_pdf_terms, log_survival_terms, Family};
use crate::numeric::{log_inv_logit, log_sum_exp2, LN_2PI};

struct RecordTerms {
    ll: f64,
    d_logit: f64,
    d_eta: f64,
    d_u: f64,
}

#[allow(clippy::too_many_arguments)]
fn record_terms(
    family: Family,
    logit_pi: f64,
    rate: f64,
    phi: f64,
    t: f64,
    event: bool,
    log_sb: f64,
    hb_month: f64,
) -> RecordTerms {
    let log_pi = log_inv_logit(logit_pi);
    let log1m_pi = log_inv_logit(-logit_pi);
    let pi = log_pi.exp();

    let st = log_survival_terms(family, rate, phi, t);
    let log_a = log_sum_exp2(log_pi, log1m_pi + st.log_s);

    // pi (1 - pi) (1 - S_u) / A
    let d_loga_dlogit = {
        let c = (log_pi + log1m_pi - log_a).exp();
        if c > 0.0 {
            c * (-st.log_s.exp_m1())
        } else {
            0.0
        }
    };
    // (1 - pi) S_u / A, the weight of the uncured-survivor component.
    let w_su = (log1m_pi + st.log_s - log_a).exp();
    let d_loga_deta = if w_su > 0.0 { w_su * st.d_eta } else { 0.0 };
    let d_loga_du = if w_su > 0.0 { w_su * st.d_u } else { 0.0 };

    let (ll, d_logit, d_eta, d_u) = if !event {
        (log_sb + log_a, d_loga_dlogit, d_loga_deta, d_loga_du)
    } else {
        let ft = log_pdf_terms(family, rate, phi, t);
        let g_event = log1m_pi + ft.log_f;
        if hb_month > 0.0 {
            let g_bg = hb_month.ln() + log_a;
            let log_b = log_sum_exp2(g_bg, g_event);
            let w_bg = (g_bg - log_b).exp();
            let w_ev = (g_event - log_b).exp();
            let d_logit = w_bg * d_loga_dlogit + w_ev * (-pi);
            let d_eta = w_bg * d_loga_deta + if w_ev > 0.0 { w_ev * ft.d_eta } else { 0.0 };
            let d_u = w_bg * d_loga_du + if w_ev > 0.0 { w_ev * ft.d_u } else { 0.0 };
            (log_sb + log_b, d_logit, d_eta, d_u)
        } else {
            (log_sb + g_event, -pi, ft.d_eta, ft.d_u)
        }
    };

    if ll.is_finite() {
        RecordTerms {
            ll,
            d_logit,
            d_eta,
            d_u,
        }
    } else {
        // Impossible data under these parameters (-inf) or an overflow
        // excursion; gradients are meaningless either way.
        RecordTerms {
            ll: if ll.is_nan() { f64::NAN } else { ll },
            d_logit: 0.0,
            d_eta: 0.0,
            d_u: 0.0,
        }
    }
}

fn check_dim(layout: &ParamLayout, theta: &[f64]) -> Result<(), ModelError> {
    if theta.len() != layout.dim() {
        return Err(ModelError::DimensionMismatch {
            got: theta.len(),
            want: layout.dim(),
        });
    }
    Ok(())
}

fn record_inputs(
    spec: &ModelSpec,
    layout: &ParamLayout,
    theta: &[f64],
    record: &crate::data::SubjectRecord,
) -> (Family, f64, f64, f64, f64) {
    let (k, j) = (record.arm, record.endpoint);
    let family = spec.families[j];
    let logit_pi = layout.logit_pi(theta, k, j);
    let mut eta = theta[layout.idx_beta0(k, j)];
    let age_centered = record.age - spec.age_center;
    if let Some(idx) = layout.idx_beta_age(j) {
        eta += theta[idx] * age_centered;
    }
    let phi = layout
        .idx_log_phi(j)
        .map(|idx| theta[idx].exp())
        .unwrap_or(f64::NAN);
    (family, logit_pi, eta, phi, age_centered)
}

/// Sum over records of the mixture cure log-likelihood.
pub fn log_likelihood(
    spec: &ModelSpec,
    data: &TrialDataset,
    bg: &BackgroundCurve,
    theta: &[f64],
) -> Result<f64, ModelError> {
    let layout = spec.layout();
    check_dim(&layout, theta)?;
    let mut total = 0.0;
    for (i, record) in data.records.iter().enumerate() {
        let (family, logit_pi, eta, phi, _) = record_inputs(spec, &layout, theta, record);
        let terms = record_terms(
            family,
            logit_pi,
            eta.exp(),
            phi,
            record.time,
            record.event,
            bg.log_sb[i],
            bg.hazard_month[i],
        );
        if terms.ll.is_nan() {
            return Err(ModelError::NonFinite {
                record: i + 1,
                block: format!("likelihood for ({}, {})", spec.arms[record.arm], spec.endpoints[record.endpoint]),
            });
        }
        total += terms.ll;
    }
    Ok(total)
}

/// Per-record log-likelihood contributions, row-aligned with the dataset.
pub fn pointwise_loglik(
    spec: &ModelSpec,
    data: &TrialDataset,
    bg: &BackgroundCurve,
    theta: &[f64],
) -> Result<Vec<f64>, ModelError> {
    let layout = spec.layout();
    check_dim(&layout, theta)?;
    let mut out = Vec::with_capacity(data.records.len());
    for (i, record) in data.records.iter().enumerate() {
        let (family, logit_pi, eta, phi, _) = record_inputs(spec, &layout, theta, record);
        let terms = record_terms(
            family,
            logit_pi,
            eta.exp(),
            phi,
            record.time,
            record.event,
            bg.log_sb[i],
            bg.hazard_month[i],
        );
        if terms.ll.is_nan() {
            return Err(ModelError::NonFinite {
                record: i + 1,
                block: "pointwise likelihood".into(),
            });
        }
        out.push(terms.ll);
    }
    Ok(out)
}

fn log_prior_impl(spec: &ModelSpec, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
    let layout = spec.layout();
    let mut total = 0.0;
    let mut add = |idx: usize, lp: f64, g: f64, grad: &mut Option<&mut [f64]>| {
        total += lp;
        if let Some(grad) = grad {
            grad[idx] += g;
        }
    };

    for k in 0..spec.n_arms() {
        match spec.pooling {
            PoolingMode::Separate => {
                for j in 0..spec.n_endpoints() {
                    let idx = layout.idx_logit_pi_sep(k, j);
                    let x = theta[idx];
                    add(
                        idx,
                        spec.priors.beta_pi.log_density(x),
                        spec.priors.beta_pi.grad(x),
                        &mut grad,
                    );
                }
            }
            PoolingMode::Pooled => {
                let idx = layout.idx_nu(k);
                let x = theta[idx];
                add(
                    idx,
                    spec.priors.beta_pi.log_density(x),
                    spec.priors.beta_pi.grad(x),
                    &mut grad,
                );
            }
            PoolingMode::Hierarchical => {
                let idx = layout.idx_nu(k);
                let x = theta[idx];
                add(
                    idx,
                    spec.priors.beta_pi.log_density(x),
                    spec.priors.beta_pi.grad(x),
                    &mut grad,
                );
                let idx = layout.idx_log_sigma(k);
                let s = theta[idx];
                add(
                    idx,
                    spec.priors.sigma.log_density_unconstrained(s),
                    spec.priors.sigma.grad_unconstrained(s),
                    &mut grad,
                );
                for j in 0..spec.n_endpoints() {
                    let idx = layout.idx_z(k, j);
                    let z = theta[idx];
                    add(idx, -0.5 * z * z - 0.5 * LN_2PI, -z, &mut grad);
                }
            }
        }
        for j in 0..spec.n_endpoints() {
            let prior = spec.priors.beta_lambda0_for(j);
            let idx = layout.idx_beta0(k, j);
            let x = theta[idx];
            add(idx, prior.log_density(x), prior.grad(x), &mut grad);
        }
    }
    for j in 0..spec.n_endpoints() {
        if let Some(idx) = layout.idx_beta_age(j) {
            let x = theta[idx];
            add(
                idx,
                spec.priors.beta_age.log_density(x),
                spec.priors.beta_age.grad(x),
                &mut grad,
            );
        }
        if let Some(idx) = layout.idx_log_phi(j) {
            let prior = spec.priors.phi_for(spec.families[j], j);
            let u = theta[idx];
            add(
                idx,
                prior.log_density_unconstrained(u),
                prior.grad_unconstrained(u),
                &mut grad,
            );
        }
    }
    total
}

/// Sum of log prior densities over all blocks, with Jacobian adjustments
/// for log-transformed parameters.
pub fn log_prior(spec: &ModelSpec, theta: &[f64]) -> f64 {
    log_prior_impl(spec, theta, None)
}

/// The hierarchical-only prior terms (sigma hyperprior plus z auxiliaries);
/// zero in pooled and separate modes. Subtracting this from a hierarchical
/// log-posterior leaves the blocks a pooled layout shares.
pub fn log_prior_hyper_block(spec: &ModelSpec, theta: &[f64]) -> f64 {
    if spec.pooling != PoolingMode::Hierarchical {
        return 0.0;
    }
    let layout = spec.layout();
    let mut total = 0.0;
    for k in 0..spec.n_arms() {
        total += spec
            .priors
            .sigma
            .log_density_unconstrained(theta[layout.idx_log_sigma(k)]);
        for j in 0..spec.n_endpoints() {
            let z = theta[layout.idx_z(k, j)];
            total += -0.5 * z * z - 0.5 * LN_2PI;
        }
    }
    total
}

/// Log-posterior and its gradient with respect to the unconstrained
/// parameter vector.
pub fn log_posterior_and_gradient(
    spec: &ModelSpec,
    data: &TrialDataset,
    bg: &BackgroundCurve,
    theta: &[f64],
) -> Result<(f64, Vec<f64>), ModelError> {
    let layout = spec.layout();
    check_dim(&layout, theta)?;
    let mut grad = vec![0.0; layout.dim()];
    let mut total = 0.0;

    for (i, record) in data.records.iter().enumerate() {
        let (family, logit_pi, eta, phi, age_centered) =
            record_inputs(spec, &layout, theta, record);
        let terms = record_terms(
            family,
            logit_pi,
            eta.exp(),
            phi,
            record.time,
            record.event,
            bg.log_sb[i],
            bg.hazard_month[i],
        );
        if terms.ll.is_nan() {
            return Err(ModelError::NonFinite {
                record: i + 1,
                block: "likelihood gradient".into(),
            });
        }
        total += terms.ll;
        let (k, j) = (record.arm, record.endpoint);
        layout.scatter_logit_pi_grad(&mut grad, theta, k, j, terms.d_logit);
        grad[layout.idx_beta0(k, j)] += terms.d_eta;
        if let Some(idx) = layout.idx_beta_age(j) {
            grad[idx] += terms.d_eta * age_centered;
        }
        if let Some(idx) = layout.idx_log_phi(j) {
            grad[idx] += terms.d_u;
        }
    }

    total += log_prior_impl(spec, theta, Some(&mut grad));
    Ok((total, grad))
}
