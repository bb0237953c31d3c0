//! Posterior functionals: survival curves with credible bands, cure
//! fractions, cure-adjusted RMST and median, and WAIC/LOO model scores.

use crate::data::TrialDataset;
use crate::model::{BackgroundModel, ModelError, ModelSpec, PoolingMode};
use crate::numeric::{
    adaptive_simpson, bisect, inv_logit, log_sum_exp2, mean, quantile_sorted, sample_variance,
};
use crate::sampler::PosteriorDraws;
use serde::Serialize;
use thiserror::Error;

/// Absolute quadrature tolerance used for RMST integrals (months). The
/// documented contract is 1e-6; the internal target is tighter.
const RMST_QUAD_TOL: f64 = 1e-8;
/// Bracket for median root-finding, months.
const MEDIAN_BRACKET: (f64, f64) = (1e-9, 1e6);

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Posterior mean with equal-tailed 95% credible interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub lower95: f64,
    pub upper95: f64,
}

impl Estimate {
    pub fn from_draws(values: &[f64]) -> Estimate {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Estimate {
            mean: mean(values),
            lower95: quantile_sorted(&sorted, 0.025),
            upper95: quantile_sorted(&sorted, 0.975),
        }
    }
}

/// Per-cell parameter extraction shared by the posterior functionals.
struct CellDraws {
    arm: usize,
    endpoint: usize,
    /// (pi, rate, phi) per draw at the cell's mean age.
    params: Vec<(f64, f64, f64)>,
}

fn cell_mean_age(data: &TrialDataset, arm: usize, endpoint: usize) -> f64 {
    let rows = data.cell_records(arm, endpoint);
    if rows.is_empty() {
        return data.age_mean;
    }
    rows.iter().map(|&i| data.records[i].age).sum::<f64>() / rows.len() as f64
}

fn collect_cells(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    data: &TrialDataset,
) -> Result<Vec<CellDraws>, PosteriorError> {
    if draws.total_draws() == 0 {
        return Err(PosteriorError::Argument("no posterior draws".into()));
    }
    let layout = spec.layout();
    let mut cells = Vec::new();
    for k in 0..spec.n_arms() {
        for j in 0..spec.n_endpoints() {
            let age = cell_mean_age(data, k, j);
            let mut params = Vec::with_capacity(draws.total_draws());
            for s in 0..draws.total_draws() {
                let theta = draws.draw_flat(s);
                let pi = inv_logit(layout.logit_pi(theta, k, j));
                let mut eta = theta[layout.idx_beta0(k, j)];
                if let Some(idx) = layout.idx_beta_age(j) {
                    eta += theta[idx] * (age - spec.age_center);
                }
                let phi = layout
                    .idx_log_phi(j)
                    .map(|idx| theta[idx].exp())
                    .unwrap_or(f64::NAN);
                params.push((pi, eta.exp(), phi));
            }
            cells.push(CellDraws {
                arm: k,
                endpoint: j,
                params,
            });
        }
    }
    Ok(cells)
}

/// Cell-average background survival on arbitrary times, precomputed on a
/// fine grid and interpolated linearly on the log scale.
struct CellBackground {
    grid_step: f64,
    log_sbar: Vec<f64>,
}

impl CellBackground {
    fn build(
        bg: &BackgroundModel,
        data: &TrialDataset,
        arm: usize,
        endpoint: usize,
        t_max: f64,
    ) -> Result<CellBackground, PosteriorError> {
        if matches!(bg, BackgroundModel::None) {
            return Ok(CellBackground {
                grid_step: t_max.max(1.0),
                log_sbar: vec![0.0, 0.0],
            });
        }
        let rows = data.cell_records(arm, endpoint);
        let grid_step = 0.25;
        let n = (t_max / grid_step).ceil() as usize + 2;
        let mut log_sbar = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 * grid_step;
            let mut total = 0.0;
            for &r in &rows {
                total += bg.survival_for(&data.records[r], t)?;
            }
            let avg = if rows.is_empty() {
                1.0
            } else {
                total / rows.len() as f64
            };
            log_sbar.push(avg.max(0.0).ln());
        }
        Ok(CellBackground {
            grid_step,
            log_sbar,
        })
    }

    fn survival(&self, t: f64) -> f64 {
        let x = t / self.grid_step;
        let i = (x.floor() as usize).min(self.log_sbar.len() - 2);
        let w = x - i as f64;
        ((1.0 - w) * self.log_sbar[i] + w * self.log_sbar[i + 1]).exp()
    }
}

fn uncured_survival(family: crate::dists::Family, rate: f64, phi: f64, t: f64) -> f64 {
    crate::dists::log_survival_terms(family, rate, phi, t)
        .log_s
        .exp()
}

/// Mixture survival pi + (1-pi) S_u scaled by the background.
fn mixture_survival(
    family: crate::dists::Family,
    pi: f64,
    rate: f64,
    phi: f64,
    sb: f64,
    t: f64,
) -> f64 {
    sb * (pi + (1.0 - pi) * uncured_survival(family, rate, phi, t))
}

/// Survival-curve summaries over a strictly increasing grid: posterior
/// mean and equal-tailed 95% band of the mixture per cell, plus the
/// uncured component band and the fixed cell-average background.
#[derive(Debug, Clone, Serialize)]
pub struct CellCurves {
    pub arm: String,
    pub endpoint: String,
    pub mixture: Vec<Estimate>,
    pub uncured: Vec<Estimate>,
    pub background: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveSummary {
    pub grid: Vec<f64>,
    pub cells: Vec<CellCurves>,
}

pub fn survival_curves(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    data: &TrialDataset,
    bg: &BackgroundModel,
    grid: &[f64],
) -> Result<CurveSummary, PosteriorError> {
    if grid.is_empty() || grid[0] < 0.0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PosteriorError::Argument(
            "grid must be non-empty, start at t >= 0, and increase strictly".into(),
        ));
    }
    let cells = collect_cells(draws, spec, data)?;
    let t_max = *grid.last().unwrap();
    let mut out = Vec::new();
    for cell in &cells {
        let family = spec.families[cell.endpoint];
        let cell_bg = CellBackground::build(bg, data, cell.arm, cell.endpoint, t_max)?;
        let mut mixture = Vec::with_capacity(grid.len());
        let mut uncured = Vec::with_capacity(grid.len());
        let mut background = Vec::with_capacity(grid.len());
        let mut mix_buf = vec![0.0; cell.params.len()];
        let mut unc_buf = vec![0.0; cell.params.len()];
        for &t in grid {
            let sb = cell_bg.survival(t);
            for (s, &(pi, rate, phi)) in cell.params.iter().enumerate() {
                let su = uncured_survival(family, rate, phi, t);
                unc_buf[s] = su;
                mix_buf[s] = sb * (pi + (1.0 - pi) * su);
            }
            mixture.push(Estimate::from_draws(&mix_buf));
            uncured.push(Estimate::from_draws(&unc_buf));
            background.push(sb);
        }
        out.push(CellCurves {
            arm: spec.arms[cell.arm].clone(),
            endpoint: spec.endpoints[cell.endpoint].clone(),
            mixture,
            uncured,
            background,
        });
    }
    Ok(CurveSummary {
        grid: grid.to_vec(),
        cells: out,
    })
}

/// Cure-adjusted restricted mean survival time up to `tau` per cell:
/// the integral of the mixture survival, plus the uncured-only and
/// cured-only component integrals.
#[derive(Debug, Clone, Serialize)]
pub struct RmstSummary {
    pub arm: String,
    pub endpoint: String,
    pub tau: f64,
    pub mixture: Estimate,
    pub uncured: Estimate,
    /// Integral of the background alone; parameter-free once S_b is fixed.
    pub cured: f64,
}

pub fn rmst(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    data: &TrialDataset,
    bg: &BackgroundModel,
    tau: f64,
) -> Result<Vec<RmstSummary>, PosteriorError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(PosteriorError::Argument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let cells = collect_cells(draws, spec, data)?;
    let mut out = Vec::new();
    for cell in &cells {
        let family = spec.families[cell.endpoint];
        let cell_bg = CellBackground::build(bg, data, cell.arm, cell.endpoint, tau)?;
        let cured = adaptive_simpson(|t| cell_bg.survival(t), 0.0, tau, RMST_QUAD_TOL);
        let mut mix = Vec::with_capacity(cell.params.len());
        let mut unc = Vec::with_capacity(cell.params.len());
        for &(pi, rate, phi) in &cell.params {
            let uncured_integral = adaptive_simpson(
                |t| cell_bg.survival(t) * uncured_survival(family, rate, phi, t),
                0.0,
                tau,
                RMST_QUAD_TOL,
            );
            // With S_b = 1 this is pi tau + (1 - pi) * integral of S_u.
            mix.push(pi * cured + (1.0 - pi) * uncured_integral);
            unc.push(uncured_integral);
        }
        out.push(RmstSummary {
            arm: spec.arms[cell.arm].clone(),
            endpoint: spec.endpoints[cell.endpoint].clone(),
            tau,
            mixture: Estimate::from_draws(&mix),
            uncured: Estimate::from_draws(&unc),
            cured,
        });
    }
    Ok(out)
}

/// Cure-adjusted median survival per cell, assuming no extra background
/// mortality: the median solves S_u(t) = (0.5 - pi)/(1 - pi) and is
/// flagged "not reached" for draws with pi >= 0.5.
#[derive(Debug, Clone, Serialize)]
pub struct MedianSummary {
    pub arm: String,
    pub endpoint: String,
    /// Summary over draws whose median is reached; None if no draw reaches.
    pub median: Option<Estimate>,
    pub not_reached_prop: f64,
}

pub fn median_survival(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    data: &TrialDataset,
) -> Result<Vec<MedianSummary>, PosteriorError> {
    let cells = collect_cells(draws, spec, data)?;
    let mut out = Vec::new();
    for cell in &cells {
        let family = spec.families[cell.endpoint];
        let mut reached = Vec::new();
        let mut not_reached = 0usize;
        for &(pi, rate, phi) in &cell.params {
            if pi >= 0.5 {
                not_reached += 1;
                continue;
            }
            let target = (0.5 - pi) / (1.0 - pi);
            let f = |t: f64| uncured_survival(family, rate, phi, t) - target;
            match bisect(f, MEDIAN_BRACKET.0, MEDIAN_BRACKET.1, 1e-8) {
                Some(t) => reached.push(t),
                None => not_reached += 1,
            }
        }
        out.push(MedianSummary {
            arm: spec.arms[cell.arm].clone(),
            endpoint: spec.endpoints[cell.endpoint].clone(),
            median: if reached.is_empty() {
                None
            } else {
                Some(Estimate::from_draws(&reached))
            },
            not_reached_prop: not_reached as f64 / cell.params.len() as f64,
        });
    }
    Ok(out)
}

/// Posterior cure-fraction summaries: one per (arm, end-point), plus the
/// per-arm global fraction in the pooled and hierarchical modes.
#[derive(Debug, Clone, Serialize)]
pub struct CureFractionSummary {
    pub per_cell: Vec<CellCureFraction>,
    /// Absent in separate mode.
    pub global: Option<Vec<ArmCureFraction>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellCureFraction {
    pub arm: String,
    pub endpoint: String,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmCureFraction {
    pub arm: String,
    pub estimate: Estimate,
}

pub fn cure_fraction_summary(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
) -> Result<CureFractionSummary, PosteriorError> {
    if draws.total_draws() == 0 {
        return Err(PosteriorError::Argument("no posterior draws".into()));
    }
    let layout = spec.layout();
    let mut per_cell = Vec::new();
    for k in 0..spec.n_arms() {
        for j in 0..spec.n_endpoints() {
            let values: Vec<f64> = (0..draws.total_draws())
                .map(|s| inv_logit(layout.logit_pi(draws.draw_flat(s), k, j)))
                .collect();
            per_cell.push(CellCureFraction {
                arm: spec.arms[k].clone(),
                endpoint: spec.endpoints[j].clone(),
                estimate: Estimate::from_draws(&values),
            });
        }
    }
    let global = match spec.pooling {
        PoolingMode::Separate => None,
        PoolingMode::Pooled | PoolingMode::Hierarchical => Some(
            (0..spec.n_arms())
                .map(|k| {
                    let values: Vec<f64> = (0..draws.total_draws())
                        .map(|s| inv_logit(draws.draw_flat(s)[layout.idx_nu(k)]))
                        .collect();
                    ArmCureFraction {
                        arm: spec.arms[k].clone(),
                        estimate: Estimate::from_draws(&values),
                    }
                })
                .collect(),
        ),
    };
    Ok(CureFractionSummary { per_cell, global })
}

/// Widely applicable information criterion from a draws x records
/// pointwise log-likelihood matrix.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WaicScore {
    pub waic: f64,
    pub p_waic: f64,
    pub lppd: f64,
}

pub fn waic(loglik_rows: &[Vec<f64>]) -> Result<WaicScore, PosteriorError> {
    let n_draws = loglik_rows.len();
    if n_draws < 2 {
        return Err(PosteriorError::Argument(
            "waic requires at least two draws".into(),
        ));
    }
    let n_records = loglik_rows[0].len();
    if loglik_rows.iter().any(|r| r.len() != n_records) {
        return Err(PosteriorError::Argument(
            "ragged log-likelihood matrix".into(),
        ));
    }
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut column = vec![0.0; n_draws];
    for i in 0..n_records {
        for (s, row) in loglik_rows.iter().enumerate() {
            column[s] = row[i];
        }
        let lse = column
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &v| log_sum_exp2(acc, v));
        lppd += lse - (n_draws as f64).ln();
        p_waic += sample_variance(&column);
    }
    Ok(WaicScore {
        waic: -2.0 * (lppd - p_waic),
        p_waic,
        lppd,
    })
}

/// Importance-sampling leave-one-out cross-validation with truncated
/// weights (raw-weight mean times S^{3/4}).
#[derive(Debug, Clone, Serialize)]
pub struct LooScore {
    pub elpd_loo: f64,
    /// Deviance scale, -2 elpd; smaller is better, comparable to WAIC.
    pub looic: f64,
    pub p_loo: f64,
    /// Records whose importance weights are dominated by a single draw.
    pub unreliable_records: Vec<usize>,
}

pub fn loo(loglik_rows: &[Vec<f64>]) -> Result<LooScore, PosteriorError> {
    let n_draws = loglik_rows.len();
    if n_draws < 2 {
        return Err(PosteriorError::Argument(
            "loo requires at least two draws".into(),
        ));
    }
    let n_records = loglik_rows[0].len();
    if loglik_rows.iter().any(|r| r.len() != n_records) {
        return Err(PosteriorError::Argument(
            "ragged log-likelihood matrix".into(),
        ));
    }
    let s_f = n_draws as f64;
    let mut elpd = 0.0;
    let mut lppd = 0.0;
    let mut unreliable = Vec::new();
    for i in 0..n_records {
        // Raw importance ratios r_s = 1 / p(y_i | theta_s) in log space.
        let log_r: Vec<f64> = loglik_rows.iter().map(|row| -row[i]).collect();
        let lse_r = log_r
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &v| log_sum_exp2(acc, v));
        let log_mean_r = lse_r - s_f.ln();
        // Reliability: one draw carrying most of the normalized weight.
        let max_share = (log_r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - lse_r).exp();
        if max_share > 0.5 {
            unreliable.push(i);
        }
        // Truncate at mean * S^(3/4).
        let cap = log_mean_r + 0.75 * s_f.ln();
        let mut num = f64::NEG_INFINITY;
        let mut den = f64::NEG_INFINITY;
        for (s, row) in loglik_rows.iter().enumerate() {
            let lw = log_r[s].min(cap);
            num = log_sum_exp2(num, lw + row[i]);
            den = log_sum_exp2(den, lw);
        }
        elpd += num - den;

        let lse_l = loglik_rows
            .iter()
            .fold(f64::NEG_INFINITY, |acc, row| log_sum_exp2(acc, row[i]));
        lppd += lse_l - s_f.ln();
    }
    Ok(LooScore {
        elpd_loo: elpd,
        looic: -2.0 * elpd,
        p_loo: lppd - elpd,
        unreliable_records: unreliable,
    })
}

/// Adapter: per-draw log-likelihood rows from a draws container.
pub fn loglik_rows(draws: &PosteriorDraws) -> Vec<Vec<f64>> {
    (0..draws.total_draws())
        .map(|s| draws.loglik_row(s).to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::Family;
    use crate::model::{BackgroundMode, PriorSettings};
    use crate::data::{Sex, SubjectRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_cell_spec(family: Family) -> ModelSpec {
        ModelSpec {
            endpoints: vec!["EP".into()],
            arms: vec!["arm".into()],
            families: vec![family],
            pooling: PoolingMode::Separate,
            priors: PriorSettings::default(),
            age_center: 60.0,
            age_covariate: false,
            background: BackgroundMode::None,
        }
    }

    fn one_cell_data() -> TrialDataset {
        TrialDataset::new(
            vec![SubjectRecord {
                id: "s".into(),
                endpoint: 0,
                arm: 0,
                time: 1.0,
                event: true,
                age: 60.0,
                sex: Sex::Female,
                country: "GB".into(),
            }],
            vec!["EP".into()],
            vec!["arm".into()],
        )
        .unwrap()
    }

    /// Draws with explicit (logit pi, beta0) pairs for the one-cell
    /// separate exponential spec.
    fn draws_from_pairs(pairs: &[(f64, f64)]) -> PosteriorDraws {
        let values: Vec<f64> = pairs.iter().flat_map(|&(l, b)| [l, b]).collect();
        PosteriorDraws::from_parts(2, 1, pairs.len(), values)
    }

    #[test]
    fn rmst_matches_exponential_closed_form() {
        // pi tau + (1 - pi)(1 - e^{-rate tau})/rate with S_b = 1.
        let spec = one_cell_spec(Family::Exponential);
        let data = one_cell_data();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let pi: f64 = rng.random::<f64>() * 0.95;
            let rate: f64 = 0.05 + 3.0 * rng.random::<f64>();
            let tau: f64 = 0.5 + 20.0 * rng.random::<f64>();
            let draws = draws_from_pairs(&[(crate::numeric::logit(pi), rate.ln())]);
            let got = rmst(&draws, &spec, &data, &BackgroundModel::None, tau).unwrap();
            let closed = pi * tau + (1.0 - pi) * (1.0 - (-rate * tau).exp()) / rate;
            assert!(
                (got[0].mixture.mean - closed).abs() < 1e-6,
                "pi={pi} rate={rate} tau={tau}: {} vs {closed}",
                got[0].mixture.mean
            );
        }
    }

    #[test]
    fn rmst_cured_population_equals_tau() {
        let spec = one_cell_spec(Family::Exponential);
        let data = one_cell_data();
        let draws = draws_from_pairs(&[(40.0, 0.0)]); // pi ~ 1
        let got = rmst(&draws, &spec, &data, &BackgroundModel::None, 5.0).unwrap();
        assert!((got[0].mixture.mean - 5.0).abs() < 1e-8);
        // pi = 0 with a huge rate drives RMST to zero.
        let draws = draws_from_pairs(&[(-40.0, 8.0)]);
        let got = rmst(&draws, &spec, &data, &BackgroundModel::None, 5.0).unwrap();
        assert!(got[0].mixture.mean < 1e-3);
        assert!(rmst(&draws, &spec, &data, &BackgroundModel::None, 0.0).is_err());
    }

    #[test]
    fn rmst_is_monotone_in_cure_fraction() {
        let spec = one_cell_spec(Family::Exponential);
        let data = one_cell_data();
        let mut prev = -1.0;
        for &pi in &[0.05, 0.2, 0.4, 0.6, 0.9] {
            let draws = draws_from_pairs(&[(crate::numeric::logit(pi), 0.0)]);
            let got = rmst(&draws, &spec, &data, &BackgroundModel::None, 8.0).unwrap();
            assert!(got[0].mixture.mean > prev, "pi={pi}");
            prev = got[0].mixture.mean;
        }
    }

    #[test]
    fn median_closed_forms_and_consistency() {
        let spec = one_cell_spec(Family::Exponential);
        let data = one_cell_data();
        // pi = 0, rate 1: median = ln 2.
        let draws = draws_from_pairs(&[(-40.0, 0.0)]);
        let got = median_survival(&draws, &spec, &data).unwrap();
        let m = got[0].median.as_ref().unwrap().mean;
        assert!((m - std::f64::consts::LN_2).abs() < 1e-6, "median {m}");
        assert_eq!(got[0].not_reached_prop, 0.0);

        // pi = 0.25, rate 1: solve e^-t = 1/3, median = ln 3.
        let draws = draws_from_pairs(&[(crate::numeric::logit(0.25), 0.0)]);
        let got = median_survival(&draws, &spec, &data).unwrap();
        let m = got[0].median.as_ref().unwrap().mean;
        assert!((m - 3.0f64.ln()).abs() < 1e-6, "median {m}");
        // Back-substitution consistency.
        let su = (-m).exp();
        assert!((su - (0.5 - 0.25) / 0.75).abs() < 1e-6);

        // pi = 0.6: not reached.
        let draws = draws_from_pairs(&[(crate::numeric::logit(0.6), 0.0)]);
        let got = median_survival(&draws, &spec, &data).unwrap();
        assert!(got[0].median.is_none());
        assert_eq!(got[0].not_reached_prop, 1.0);
    }

    #[test]
    fn median_consistency_across_families() {
        let data = one_cell_data();
        for family in [Family::Weibull, Family::Lognormal, Family::Loglogistic] {
            let mut spec = one_cell_spec(family);
            spec.families = vec![family];
            let layout = spec.layout();
            let mut values = vec![0.0; layout.dim()];
            values[layout.idx_logit_pi_sep(0, 0)] = crate::numeric::logit(0.3);
            values[layout.idx_beta0(0, 0)] = -0.5;
            values[layout.idx_log_phi(0).unwrap()] = 0.4f64.ln();
            let draws = PosteriorDraws::from_parts(layout.dim(), 1, 1, values);
            let got = median_survival(&draws, &spec, &data).unwrap();
            let m = got[0].median.as_ref().unwrap().mean;
            let su = uncured_survival(family, (-0.5f64).exp(), 0.4, m);
            let target = (0.5 - 0.3) / 0.7;
            assert!((su - target).abs() < 1e-6, "{family}: {su} vs {target}");
        }
    }

    #[test]
    fn curves_boundary_and_degenerate_cases() {
        let spec = one_cell_spec(Family::Exponential);
        let data = one_cell_data();
        let draws = draws_from_pairs(&[(0.3, -0.2)]);
        let grid = [0.0, 1.0, 5.0];
        let got = survival_curves(&draws, &spec, &data, &BackgroundModel::None, &grid).unwrap();
        let mix = &got.cells[0].mixture;
        // t = 0: survival 1 with zero-width interval.
        assert_eq!(mix[0].mean, 1.0);
        assert_eq!(mix[0].lower95, 1.0);
        assert_eq!(mix[0].upper95, 1.0);
        // Single draw: zero-width interval everywhere.
        assert_eq!(mix[1].lower95, mix[1].upper95);

        // pi -> 1 with S_b = 1: curve identically one.
        let draws = draws_from_pairs(&[(40.0, 0.0)]);
        let got = survival_curves(&draws, &spec, &data, &BackgroundModel::None, &grid).unwrap();
        for e in &got.cells[0].mixture {
            assert!((e.mean - 1.0).abs() < 1e-12);
        }

        assert!(
            survival_curves(&draws, &spec, &data, &BackgroundModel::None, &[1.0, 1.0]).is_err()
        );
        assert!(survival_curves(&draws, &spec, &data, &BackgroundModel::None, &[]).is_err());
    }

    #[test]
    fn curves_stay_below_background() {
        let spec = {
            let mut s = one_cell_spec(Family::Exponential);
            s.background = BackgroundMode::Lifetable;
            s
        };
        let data = one_cell_data();
        let bands = (0..17).map(|i| (i as f64 * 5.0, 0.05)).collect();
        let table = crate::lifetable::LifeTable::from_bands(bands, 0.3).unwrap();
        let mut tables = crate::lifetable::LifeTableSet::default();
        tables.insert("GB", Sex::Female, table);
        let bg = BackgroundModel::Lifetable {
            tables,
            multiplier: 1.0,
        };
        let draws = draws_from_pairs(&[(0.5, -1.0), (-0.3, 0.2)]);
        let grid: Vec<f64> = (0..=60).map(|i| i as f64).collect();
        let got = survival_curves(&draws, &spec, &data, &bg, &grid).unwrap();
        let cell = &got.cells[0];
        for (i, est) in cell.mixture.iter().enumerate() {
            assert!(est.upper95 <= cell.background[i] + 1e-9, "t={}", grid[i]);
            assert!(est.mean <= cell.background[i] + 1e-12);
        }
    }

    #[test]
    fn cure_fraction_summary_modes() {
        let spec = one_cell_spec(Family::Exponential);
        // All draws at logit 0: mean 0.5, zero width.
        let draws = draws_from_pairs(&[(0.0, 0.0), (0.0, 0.0)]);
        let got = cure_fraction_summary(&draws, &spec).unwrap();
        assert_eq!(got.per_cell[0].estimate.mean, 0.5);
        assert_eq!(
            got.per_cell[0].estimate.lower95,
            got.per_cell[0].estimate.upper95
        );
        assert!(got.global.is_none(), "separate mode has no global entry");

        let mut pooled = one_cell_spec(Family::Exponential);
        pooled.pooling = PoolingMode::Pooled;
        let got = cure_fraction_summary(&draws, &pooled).unwrap();
        assert!(got.global.is_some());
    }

    #[test]
    fn waic_hand_matrix() {
        // Two records, two draws: ll = [[0, 0], [-2, 0]].
        let rows = vec![vec![0.0, 0.0], vec![-2.0, 0.0]];
        let got = waic(&rows).unwrap();
        let lppd1 = ((1.0 + (-2.0f64).exp()) / 2.0).ln();
        assert!((got.lppd - lppd1).abs() < 1e-12);
        assert!((got.p_waic - 2.0).abs() < 1e-12);
        assert!((got.waic - 5.132438).abs() < 1e-6, "waic {}", got.waic);
        // Identity holds by construction.
        assert!((got.waic - (-2.0 * (got.lppd - got.p_waic))).abs() < 1e-10);
    }

    #[test]
    fn waic_identical_draws_and_translation() {
        let rows = vec![vec![-1.0, -2.0]; 4];
        let got = waic(&rows).unwrap();
        assert_eq!(got.p_waic, 0.0);
        assert!((got.waic - (-2.0 * (-3.0))).abs() < 1e-12);

        // Adding c to one record's column shifts lppd by c, p_waic unchanged.
        let rows = vec![vec![0.0, -0.5], vec![-2.0, -0.1]];
        let base = waic(&rows).unwrap();
        let shifted = vec![vec![3.0, -0.5], vec![1.0, -0.1]];
        let got = waic(&shifted).unwrap();
        assert!((got.lppd - (base.lppd + 3.0)).abs() < 1e-12);
        assert!((got.p_waic - base.p_waic).abs() < 1e-12);

        assert!(waic(&rows[..1].to_vec()).is_err());
    }

    #[test]
    fn loo_identical_draws_and_flags() {
        let rows = vec![vec![-1.0, -2.0]; 6];
        let got = loo(&rows).unwrap();
        assert!((got.elpd_loo - (-3.0)).abs() < 1e-10);
        assert!(got.unreliable_records.is_empty());

        // One draw dominating the weights of record 0 gets flagged.
        let rows = vec![vec![-500.0, -1.0], vec![-1.0, -1.0], vec![-1.2, -1.0]];
        let got = loo(&rows).unwrap();
        assert_eq!(got.unreliable_records, vec![0]);
    }
}
