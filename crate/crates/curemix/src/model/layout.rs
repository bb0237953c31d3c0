//! Deterministic flattened parameter layout for a model specification.
//!
//! Unconstrained scale throughout: positives (sigma, phi) are stored as
//! logs, everything else as-is. Block order is fixed for a given spec:
//! incidence (mode-dependent), then latency intercepts, age coefficients,
//! and log ancillaries.

use super::{ModelSpec, PoolingMode};

/// Named parameter block, used for diagnostics output and error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    /// logit(pi_kj) in separate mode.
    LogitPi,
    /// Global per-arm incidence coefficient nu_k (pooled and hierarchical).
    Nu,
    /// log sigma_k (hierarchical only).
    LogSigma,
    /// Standard-normal auxiliaries z_kj (hierarchical only).
    Z,
    /// Latency intercepts beta0_kj.
    Beta0,
    /// Per-end-point age coefficients.
    BetaAge,
    /// log phi_j for families with an ancillary parameter.
    LogPhi,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pooling: PoolingMode,
    n_arms: usize,
    n_endpoints: usize,
    logit_pi_sep: usize,
    nu: usize,
    log_sigma: usize,
    z: usize,
    beta0: usize,
    beta_age: Option<usize>,
    /// Slot of log phi_j per end-point; None for exponential end-points.
    log_phi: Vec<Option<usize>>,
    dim: usize,
}

impl ParamLayout {
    pub fn for_spec(spec: &ModelSpec) -> ParamLayout {
        let k = spec.n_arms();
        let j = spec.n_endpoints();
        let mut next = 0;
        let mut take = |count: usize| {
            let at = next;
            next += count;
            at
        };

        let (logit_pi_sep, nu, log_sigma, z) = match spec.pooling {
            PoolingMode::Separate => (take(k * j), 0, 0, 0),
            PoolingMode::Pooled => (0, take(k), 0, 0),
            PoolingMode::Hierarchical => (0, take(k), take(k), take(k * j)),
        };
        let beta0 = take(k * j);
        let beta_age = spec.age_covariate.then(|| take(j));
        let log_phi = spec
            .families
            .iter()
            .map(|f| f.has_ancillary().then(|| take(1)))
            .collect();

        ParamLayout {
            pooling: spec.pooling,
            n_arms: k,
            n_endpoints: j,
            logit_pi_sep,
            nu,
            log_sigma,
            z,
            beta0,
            beta_age,
            log_phi,
            dim: next,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pooling(&self) -> PoolingMode {
        self.pooling
    }

    pub fn idx_logit_pi_sep(&self, arm: usize, endpoint: usize) -> usize {
        debug_assert_eq!(self.pooling, PoolingMode::Separate);
        self.logit_pi_sep + arm * self.n_endpoints + endpoint
    }

    pub fn idx_nu(&self, arm: usize) -> usize {
        debug_assert_ne!(self.pooling, PoolingMode::Separate);
        self.nu + arm
    }

    pub fn idx_log_sigma(&self, arm: usize) -> usize {
        debug_assert_eq!(self.pooling, PoolingMode::Hierarchical);
        self.log_sigma + arm
    }

    pub fn idx_z(&self, arm: usize, endpoint: usize) -> usize {
        debug_assert_eq!(self.pooling, PoolingMode::Hierarchical);
        self.z + arm * self.n_endpoints + endpoint
    }

    pub fn idx_beta0(&self, arm: usize, endpoint: usize) -> usize {
        self.beta0 + arm * self.n_endpoints + endpoint
    }

    pub fn idx_beta_age(&self, endpoint: usize) -> Option<usize> {
        self.beta_age.map(|at| at + endpoint)
    }

    pub fn idx_log_phi(&self, endpoint: usize) -> Option<usize> {
        self.log_phi[endpoint]
    }

    /// logit(pi) for cell (arm, endpoint) under the layout's pooling mode.
    pub fn logit_pi(&self, theta: &[f64], arm: usize, endpoint: usize) -> f64 {
        match self.pooling {
            PoolingMode::Separate => theta[self.idx_logit_pi_sep(arm, endpoint)],
            PoolingMode::Pooled => theta[self.idx_nu(arm)],
            PoolingMode::Hierarchical => {
                theta[self.idx_nu(arm)]
                    + theta[self.idx_log_sigma(arm)].exp() * theta[self.idx_z(arm, endpoint)]
            }
        }
    }

    /// Scatter a d(log target)/d(logit pi) contribution into the gradient.
    pub fn scatter_logit_pi_grad(
        &self,
        grad: &mut [f64],
        theta: &[f64],
        arm: usize,
        endpoint: usize,
        d_logit: f64,
    ) {
        match self.pooling {
            PoolingMode::Separate => grad[self.idx_logit_pi_sep(arm, endpoint)] += d_logit,
            PoolingMode::Pooled => grad[self.idx_nu(arm)] += d_logit,
            PoolingMode::Hierarchical => {
                let sigma = theta[self.idx_log_sigma(arm)].exp();
                let z = theta[self.idx_z(arm, endpoint)];
                grad[self.idx_nu(arm)] += d_logit;
                grad[self.idx_log_sigma(arm)] += d_logit * sigma * z;
                grad[self.idx_z(arm, endpoint)] += d_logit * sigma;
            }
        }
    }

    /// Human-readable parameter names, aligned with vector indices.
    pub fn param_names(&self, spec: &ModelSpec) -> Vec<String> {
        let mut names = vec![String::new(); self.dim];
        for k in 0..self.n_arms {
            let arm = &spec.arms[k];
            match self.pooling {
                PoolingMode::Separate => {
                    for j in 0..self.n_endpoints {
                        names[self.idx_logit_pi_sep(k, j)] =
                            format!("logit_pi[{arm},{}]", spec.endpoints[j]);
                    }
                }
                PoolingMode::Pooled => names[self.idx_nu(k)] = format!("nu[{arm}]"),
                PoolingMode::Hierarchical => {
                    names[self.idx_nu(k)] = format!("nu[{arm}]");
                    names[self.idx_log_sigma(k)] = format!("log_sigma[{arm}]");
                    for j in 0..self.n_endpoints {
                        names[self.idx_z(k, j)] = format!("z[{arm},{}]", spec.endpoints[j]);
                    }
                }
            }
            for j in 0..self.n_endpoints {
                names[self.idx_beta0(k, j)] = format!("beta0[{arm},{}]", spec.endpoints[j]);
            }
        }
        for j in 0..self.n_endpoints {
            if let Some(i) = self.idx_beta_age(j) {
                names[i] = format!("beta_age[{}]", spec.endpoints[j]);
            }
            if let Some(i) = self.idx_log_phi(j) {
                names[i] = format!("log_phi[{}]", spec.endpoints[j]);
            }
        }
        names
    }
}
