//! Bayes-risk lower bounds from per-client information ceilings.
//!
//! Each client contributes at most
//!     min( g(rho_l) * n_l^2 * ||I_x||_op ,  n_l * Tr I_x )
//! to the information in the transcript, where g depends on the variant:
//! the exact variant g(rho) = e^{2 rho} - 1 is the certified ceiling, while
//! the rho-linear variant g(rho) = rho is a non-certified display used for
//! rate comparisons. The van Trees assembly divides p^2 by the total
//! information plus the prior term Tr J_pi.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::FisherMatrix;
use crate::numeric::ls_slope;
use crate::priors::ProductPrior;
use crate::protocol::ClientSpec;

/// Which growth function multiplies the privacy budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// g(rho) = e^{2 rho} - 1: the certified ceiling.
    Exact,
    /// g(rho) = rho: display-only, for rate comparisons.
    RhoLinear,
}

impl BoundVariant {
    pub fn g(self, rho: f64) -> f64 {
        match self {
            BoundVariant::Exact => (2.0 * rho).exp_m1(),
            BoundVariant::RhoLinear => rho,
        }
    }

    pub fn is_certified(self) -> bool {
        matches!(self, BoundVariant::Exact)
    }
}

impl std::fmt::Display for BoundVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundVariant::Exact => "exact",
            BoundVariant::RhoLinear => "rho_linear",
        })
    }
}

/// Scalar summary of a single-observation information matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoProfile {
    pub op_norm: f64,
    pub trace: f64,
}

impl InfoProfile {
    pub fn new(op_norm: f64, trace: f64) -> Result<Self> {
        if !op_norm.is_finite() || op_norm < 0.0 || !trace.is_finite() || trace < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "information profile needs finite op_norm >= 0 and trace >= 0, got ({op_norm}, {trace})"
            )));
        }
        Ok(InfoProfile { op_norm, trace })
    }

    pub fn from_fisher(fisher: &FisherMatrix) -> Self {
        InfoProfile { op_norm: fisher.op_norm, trace: fisher.trace }
    }
}

/// Which side of the per-client min binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    PrivacyLimited,
    SampleLimited,
}

/// One client's ceiling with both candidate terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClientTerm {
    pub client: usize,
    pub privacy_term: f64,
    pub sample_term: f64,
    pub value: f64,
    pub branch: Branch,
}

/// Per-client ceilings and their sum.
#[derive(Debug, Clone, Serialize)]
pub struct ClientwiseInfo {
    pub total: f64,
    pub per_client: Vec<ClientTerm>,
    pub variant: BoundVariant,
}

/// min(g(rho_l) n_l^2 op, n_l trace) per client. Ties resolve to the
/// privacy branch so reports are deterministic.
pub fn clientwise_info(
    profile: InfoProfile,
    clients: &[ClientSpec],
    variant: BoundVariant,
) -> Result<ClientwiseInfo> {
    if clients.is_empty() {
        return Err(Error::InvalidInput("clientwise information needs at least one client".into()));
    }
    let per_client: Vec<ClientTerm> = clients
        .iter()
        .map(|c| {
            let n = c.n as f64;
            let privacy_term = variant.g(c.rho_budget.rho()) * n * n * profile.op_norm;
            let sample_term = n * profile.trace;
            let (value, branch) = if privacy_term <= sample_term {
                (privacy_term, Branch::PrivacyLimited)
            } else {
                (sample_term, Branch::SampleLimited)
            };
            ClientTerm { client: c.id, privacy_term, sample_term, value, branch }
        })
        .collect();
    let total = per_client.iter().map(|t| t.value).sum();
    Ok(ClientwiseInfo { total, per_client, variant })
}

/// p^2 / (prior_avg_info + trace_jpi), the van Trees assembly.
pub fn van_trees_bound(p: usize, prior_avg_info: f64, trace_jpi: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidParameter("parameter dimension must be >= 1".into()));
    }
    if !prior_avg_info.is_finite() || prior_avg_info < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "prior-averaged information must be finite and >= 0, got {prior_avg_info}"
        )));
    }
    if !trace_jpi.is_finite() || trace_jpi < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "prior information trace must be finite and >= 0, got {trace_jpi}"
        )));
    }
    let den = prior_avg_info + trace_jpi;
    if den <= 0.0 {
        return Err(Error::InvalidInput("risk bound denominator is zero".into()));
    }
    Ok((p * p) as f64 / den)
}

/// A computed lower bound with its decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub value: f64,
    pub variant: BoundVariant,
    pub param_dim: usize,
    /// Sum of the per-client ceilings (denominator minus the prior term).
    pub info_total: f64,
    /// Tr J_pi for parametric bounds; the approximation term p^{2a/d}/R^2
    /// at the maximizing p for the nonparametric bound.
    pub prior_term: f64,
    pub per_client: Vec<ClientTerm>,
    /// Harmonic-sum display value, reported for the mean bound.
    pub harmonic_display: Option<f64>,
    /// Maximizing truncation level of the nonparametric search.
    pub best_p: Option<usize>,
    /// The nonparametric argmax hit the search limit: the sup is truncated.
    pub at_p_max: bool,
}

fn check_clients(clients: &[ClientSpec]) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::InvalidInput("bound needs at least one client".into()));
    }
    Ok(())
}

/// Mean estimation: I_x = sigma^{-2} I_d, prior = isotropic cosine-squared
/// product with radius `r`, so Tr J_pi = d pi^2 / r^2. Also evaluates the
/// harmonic-sum display sigma^2 [ sum_l (d/n_l + d^2/(rho_l n_l^2))^{-1} ]^{-1}.
pub fn mean_estimation_bound(
    d: usize,
    sigma: f64,
    clients: &[ClientSpec],
    r: f64,
    variant: BoundVariant,
) -> Result<BoundReport> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!("sigma must be finite and > 0, got {sigma}")));
    }
    check_clients(clients)?;
    let profile = InfoProfile::new(1.0 / (sigma * sigma), d as f64 / (sigma * sigma))?;
    let prior = ProductPrior::isotropic(d, r)?;
    let info = clientwise_info(profile, clients, variant)?;
    let trace_jpi = prior.information();
    let value = van_trees_bound(d, info.total, trace_jpi)?;

    let mut harmonic_sum = 0.0;
    for c in clients {
        let n = c.n as f64;
        let rho = c.rho_budget.rho();
        let term = d as f64 / n + (d * d) as f64 / (rho * n * n);
        harmonic_sum += 1.0 / term; // rho = 0 gives term = inf, contribution 0
    }
    let harmonic_display = if harmonic_sum > 0.0 {
        Some(sigma * sigma / harmonic_sum)
    } else {
        None
    };

    Ok(BoundReport {
        value,
        variant,
        param_dim: d,
        info_total: info.total,
        prior_term: trace_jpi,
        per_client: info.per_client,
        harmonic_display,
        best_p: None,
        at_p_max: false,
    })
}

/// Linear regression with design second moment `design`: I_x = design / sigma^2.
pub fn linreg_bound(
    design: &nalgebra::DMatrix<f64>,
    sigma: f64,
    clients: &[ClientSpec],
    r: f64,
    variant: BoundVariant,
) -> Result<BoundReport> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!("sigma must be finite and > 0, got {sigma}")));
    }
    check_clients(clients)?;
    let d = design.nrows();
    let fisher = FisherMatrix::new(design / (sigma * sigma))?;
    let profile = InfoProfile::from_fisher(&fisher);
    let prior = ProductPrior::isotropic(d, r)?;
    let info = clientwise_info(profile, clients, variant)?;
    let trace_jpi = prior.information();
    let value = van_trees_bound(d, info.total, trace_jpi)?;
    Ok(BoundReport {
        value,
        variant,
        param_dim: d,
        info_total: info.total,
        prior_term: trace_jpi,
        per_client: info.per_client,
        harmonic_display: None,
        best_p: None,
        at_p_max: false,
    })
}

/// Nonparametric regression over a smoothness-`alpha` class of radius `R` on
/// a `d`-dimensional domain: the supremum over truncation levels
/// 1 <= p <= p_max of
/// `[p^{2a/d}/R^2 + (1/sigma^2) sum_l (max(p/n_l, p^2/(rho_l n_l^2)))^{-1}]^{-1}`.
/// The budget enters linearly here; the report is labeled rho-linear and is
/// not a certified constant.
pub fn nonparam_bound(
    alpha: f64,
    d: usize,
    radius: f64,
    sigma: f64,
    clients: &[ClientSpec],
    p_max: usize,
) -> Result<BoundReport> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!("smoothness must be > 0, got {alpha}")));
    }
    if d == 0 || p_max == 0 {
        return Err(Error::InvalidParameter("domain dimension and p_max must be >= 1".into()));
    }
    if !radius.is_finite() || radius <= 0.0 || !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "radius and sigma must be finite and > 0, got ({radius}, {sigma})"
        )));
    }
    check_clients(clients)?;

    let exponent = 2.0 * alpha / d as f64;
    let inv_r2 = 1.0 / (radius * radius);
    let inv_s2 = 1.0 / (sigma * sigma);
    let denominator = |p: f64| -> f64 {
        let mut est = 0.0;
        for c in clients {
            let n = c.n as f64;
            let rho = c.rho_budget.rho();
            let cap = (p / n).max(p * p / (rho * n * n)); // rho = 0 -> inf
            est += 1.0 / cap;
        }
        p.powf(exponent) * inv_r2 + inv_s2 * est
    };

    let mut best_p = 1;
    let mut best_value = 1.0 / denominator(1.0);
    for p in 2..=p_max {
        let v = 1.0 / denominator(p as f64);
        if v > best_value {
            best_value = v;
            best_p = p;
        }
    }
    let p = best_p as f64;
    let per_client: Vec<ClientTerm> = clients
        .iter()
        .map(|c| {
            let n = c.n as f64;
            let rho = c.rho_budget.rho();
            let sample = p / n;
            let privacy = p * p / (rho * n * n);
            let (cap, branch) = if privacy >= sample {
                (privacy, Branch::PrivacyLimited)
            } else {
                (sample, Branch::SampleLimited)
            };
            let value = if cap.is_finite() { inv_s2 / cap } else { 0.0 };
            ClientTerm {
                client: c.id,
                privacy_term: privacy,
                sample_term: sample,
                value,
                branch,
            }
        })
        .collect();
    let info_total = per_client.iter().map(|t| t.value).sum();
    Ok(BoundReport {
        value: best_value,
        variant: BoundVariant::RhoLinear,
        param_dim: d,
        info_total,
        prior_term: p.powf(exponent) * inv_r2,
        per_client,
        harmonic_display: None,
        best_p: Some(best_p),
        at_p_max: best_p == p_max,
    })
}

/// Default truncation-search limit for the nonparametric bound.
pub const NONPARAM_P_MAX: usize = 1_000_000;

/// Homogeneous display: sigma^2 * max(d/(mn), d^2/(g(rho) m n^2)).
/// Matches the clientwise sum exactly when every client is identical and the
/// prior term is dropped.
pub fn homogeneous_reduction(
    d: usize,
    sigma: f64,
    m: usize,
    n: usize,
    rho: f64,
    variant: BoundVariant,
) -> Result<f64> {
    if d == 0 || m == 0 || n == 0 {
        return Err(Error::InvalidParameter("d, m, n must all be >= 1".into()));
    }
    if !sigma.is_finite() || sigma <= 0.0 || !rho.is_finite() || rho < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "need sigma > 0 and rho >= 0, got ({sigma}, {rho})"
        )));
    }
    let mn = (m * n) as f64;
    let sample = d as f64 / mn;
    let privacy = (d * d) as f64 / (variant.g(rho) * m as f64 * (n * n) as f64);
    Ok(sigma * sigma * sample.max(privacy))
}

/// Which resource the rate experiment exhausts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateRegime {
    /// Budget effectively unlimited; the bound should decay like
    /// (mn)^{-2a/(2a+d)}.
    SampleLimited,
    /// Tiny per-client budget with rho * n <= 1, so the privacy term binds at
    /// every truncation level; decay is (rho m n^2)^{-a/(a+d)}.
    PrivacyLimited,
}

/// A fitted log-log decay rate of the nonparametric bound.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub regime: RateRegime,
    pub slope: f64,
    pub expected: f64,
    /// (resource, bound value) pairs entering the fit.
    pub points: Vec<(f64, f64)>,
}

fn log_spaced(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (k - 1) as f64).exp())
        .collect()
}

/// Sweeps the nonparametric bound along one resource axis (R = sigma = 1,
/// one client) and fits the decay exponent by least squares on logs.
pub fn nonparam_rate_fit(
    alpha: f64,
    d: usize,
    regime: RateRegime,
    grid_points: usize,
) -> Result<RateFit> {
    if grid_points < 2 {
        return Err(Error::InvalidParameter("rate fit needs at least two grid points".into()));
    }
    let mut points = Vec::with_capacity(grid_points);
    for v in log_spaced(1e3, 1e6, grid_points) {
        let (n, rho, resource) = match regime {
            RateRegime::SampleLimited => (v.round() as usize, 1e12, v.round()),
            RateRegime::PrivacyLimited => {
                // rho m n^2 = v with rho fixed at 1e-6 keeps rho * n <= 1
                // across the sweep, so privacy binds at every p >= 1.
                let n = (v * 1e6).sqrt().round() as usize;
                (n, 1e-6, 1e-6 * (n * n) as f64)
            }
        };
        let client = ClientSpec::new(0, n, crate::privacy::ZcdpBudget::new(rho)?)?;
        let report = nonparam_bound(alpha, d, 1.0, 1.0, &[client], NONPARAM_P_MAX)?;
        if report.at_p_max {
            return Err(Error::EstimationFailed(format!(
                "rate fit hit the truncation limit at resource {resource}"
            )));
        }
        points.push((resource, report.value));
    }
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let slope = ls_slope(&xs, &ys);
    let a = alpha;
    let expected = match regime {
        RateRegime::SampleLimited => -2.0 * a / (2.0 * a + d as f64),
        RateRegime::PrivacyLimited => -a / (a + d as f64),
    };
    Ok(RateFit { regime, slope, expected, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::ZcdpBudget;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn clients(specs: &[(usize, f64)]) -> Vec<ClientSpec> {
        specs
            .iter()
            .enumerate()
            .map(|(id, &(n, rho))| {
                ClientSpec::new(id, n, ZcdpBudget::new(rho).unwrap()).unwrap()
            })
            .collect()
    }

    fn homogeneous(m: usize, n: usize, rho: f64) -> Vec<ClientSpec> {
        clients(&vec![(n, rho); m])
    }

    #[test]
    fn clientwise_info_point_values() {
        let profile = InfoProfile::new(1.0, 1.0).unwrap();
        let info =
            clientwise_info(profile, &homogeneous(1, 100, 0.5), BoundVariant::RhoLinear).unwrap();
        assert_relative_eq!(info.total, 100.0);
        assert_eq!(info.per_client[0].branch, Branch::SampleLimited);
        assert_relative_eq!(info.per_client[0].privacy_term, 5000.0);

        // Zero budget contributes nothing, on the privacy side.
        let z = clientwise_info(profile, &homogeneous(1, 100, 0.0), BoundVariant::Exact).unwrap();
        assert_eq!(z.total, 0.0);
        assert_eq!(z.per_client[0].branch, Branch::PrivacyLimited);

        let p5 = InfoProfile::new(1.0, 5.0).unwrap();
        let info10 =
            clientwise_info(p5, &homogeneous(10, 100, 0.1), BoundVariant::RhoLinear).unwrap();
        assert_relative_eq!(info10.per_client[0].value, 500.0);
        assert_relative_eq!(info10.total, 5000.0);
    }

    #[test]
    fn ties_resolve_to_privacy_branch() {
        let profile = InfoProfile::new(1.0, 1.0).unwrap();
        // rho n^2 = 0.1 * 100 = 10 = n * trace.
        let info =
            clientwise_info(profile, &homogeneous(1, 10, 0.1), BoundVariant::RhoLinear).unwrap();
        assert_relative_eq!(info.per_client[0].privacy_term, info.per_client[0].sample_term);
        assert_eq!(info.per_client[0].branch, Branch::PrivacyLimited);
    }

    #[test]
    fn van_trees_point_values() {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert_relative_eq!(
            van_trees_bound(1, 100.0, pi2).unwrap(),
            0.009101698376462753,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            van_trees_bound(5, 5000.0, 5.0 * pi2).unwrap(),
            0.004951134263482746,
            max_relative = 1e-12
        );
        // Prior-only bound.
        assert_relative_eq!(van_trees_bound(2, 0.0, 8.0).unwrap(), 0.5);
        assert!(van_trees_bound(1, 0.0, 0.0).is_err());
    }

    #[test]
    fn mean_bound_frozen_values() {
        let b1 = mean_estimation_bound(
            1, 1.0, &homogeneous(1, 100, 0.5), 1.0, BoundVariant::RhoLinear,
        )
        .unwrap();
        assert_relative_eq!(b1.value, 0.009101698376462753, max_relative = 1e-12);
        // The sample side binds, so both variants agree.
        let b1e =
            mean_estimation_bound(1, 1.0, &homogeneous(1, 100, 0.5), 1.0, BoundVariant::Exact)
                .unwrap();
        assert_eq!(b1.value, b1e.value);
        assert_eq!(b1e.per_client[0].branch, Branch::SampleLimited);

        let b2 = mean_estimation_bound(
            5, 1.0, &homogeneous(10, 100, 0.1), 1.0, BoundVariant::Exact,
        )
        .unwrap();
        assert_relative_eq!(b2.value, 0.004951134263482746, max_relative = 1e-12);
        assert_relative_eq!(b2.info_total, 5000.0);
        // Contributions sum to the denominator minus the prior term.
        let sum: f64 = b2.per_client.iter().map(|t| t.value).sum();
        assert_relative_eq!(sum, 25.0 / b2.value - b2.prior_term, max_relative = 1e-10);
    }

    #[test]
    fn harmonic_display_frozen_and_sandwiched() {
        let cs = clients(&[(50, 0.1), (200, 1.0)]);
        let b = mean_estimation_bound(1, 1.0, &cs, 1.0, BoundVariant::RhoLinear).unwrap();
        let h = b.harmonic_display.unwrap();
        assert_relative_eq!(h, 0.0041550387596899225, max_relative = 1e-12);
        // Min-form value without the prior sits within a factor two below.
        let min_form = van_trees_bound(1, b.info_total, 0.0).unwrap();
        assert!(h >= min_form - 1e-15 && h <= 2.0 * min_form + 1e-15);
    }

    #[test]
    fn sigma_scaling_in_privacy_regime() {
        // All clients privacy-limited; with a negligible prior the bound
        // scales as sigma^2.
        let cs = homogeneous(2, 10, 0.001);
        let b1 = mean_estimation_bound(1, 1.0, &cs, 1e6, BoundVariant::RhoLinear).unwrap();
        let b2 = mean_estimation_bound(1, 2.0, &cs, 1e6, BoundVariant::RhoLinear).unwrap();
        assert!(b1.per_client.iter().all(|t| t.branch == Branch::PrivacyLimited));
        assert_relative_eq!(b2.value / b1.value, 4.0, max_relative = 1e-6);
    }

    #[test]
    fn linreg_identity_design_matches_mean_bound() {
        let cs = homogeneous(3, 40, 0.3);
        let eye = DMatrix::identity(2, 2);
        let lr = linreg_bound(&eye, 1.0, &cs, 1.5, BoundVariant::Exact).unwrap();
        let mean = mean_estimation_bound(2, 1.0, &cs, 1.5, BoundVariant::Exact).unwrap();
        assert_relative_eq!(lr.value, mean.value, max_relative = 1e-12);
    }

    #[test]
    fn linreg_bound_values() {
        // diag(4, 1), sigma = 1, one client n=10, rho=10 (rho-linear):
        // op = 4, trace = 5, min(10 * 100 * 4, 10 * 5) = 50.
        let design = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]));
        let b = linreg_bound(&design, 1.0, &homogeneous(1, 10, 10.0), 1.0, BoundVariant::RhoLinear)
            .unwrap();
        assert_relative_eq!(b.per_client[0].value, 50.0);
        assert_eq!(b.per_client[0].branch, Branch::SampleLimited);

        // Frozen composite: diag(4,1), sigma=2, m=2, n=50, rho=0.2, r=2, exact.
        let b2 = linreg_bound(&design, 2.0, &homogeneous(2, 50, 0.2), 2.0, BoundVariant::Exact)
            .unwrap();
        assert_relative_eq!(b2.value, 0.030784669944133199, max_relative = 1e-12);
    }

    #[test]
    fn linreg_rejects_non_psd_design() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(linreg_bound(&bad, 1.0, &homogeneous(1, 5, 0.5), 1.0, BoundVariant::Exact)
            .is_err());
    }

    #[test]
    fn nonparam_frozen_point() {
        let b = nonparam_bound(1.0, 1, 1.0, 1.0, &homogeneous(1, 1000, 1.0), 1000).unwrap();
        assert_eq!(b.best_p, Some(8));
        assert_relative_eq!(b.value, 1.0 / 189.0, max_relative = 1e-12);
        assert!(!b.at_p_max);
        // Local maximality around p*.
        for p_cap in [7usize, 9] {
            let probe =
                nonparam_bound(1.0, 1, 1.0, 1.0, &homogeneous(1, 1000, 1.0), p_cap).unwrap();
            assert!(probe.value <= b.value);
        }
    }

    #[test]
    fn nonparam_boundary_and_degenerate_budget() {
        let b = nonparam_bound(1.0, 1, 1.0, 1.0, &homogeneous(1, 1000, 1.0), 5).unwrap();
        assert!(b.at_p_max);
        assert_eq!(b.best_p, Some(5));
        // A zero-budget client adds no information.
        let with_dead = clients(&[(1000, 1.0), (500, 0.0)]);
        let b2 = nonparam_bound(1.0, 1, 1.0, 1.0, &with_dead, 1000).unwrap();
        let b1 = nonparam_bound(1.0, 1, 1.0, 1.0, &homogeneous(1, 1000, 1.0), 1000).unwrap();
        assert_relative_eq!(b2.value, b1.value, max_relative = 1e-12);
        assert_eq!(b2.per_client[1].value, 0.0);
    }

    #[test]
    fn homogeneous_reduction_matches_sum_form() {
        assert_relative_eq!(
            homogeneous_reduction(1, 1.0, 10, 100, 1.0, BoundVariant::RhoLinear).unwrap(),
            1e-3,
            max_relative = 1e-12
        );
        // Exact identity with the clientwise sum when the prior is dropped.
        for (d, m, n, rho) in [(1usize, 10usize, 100usize, 1.0f64), (3, 4, 25, 0.05), (2, 1, 7, 2.0)] {
            for variant in [BoundVariant::Exact, BoundVariant::RhoLinear] {
                let disp = homogeneous_reduction(d, 1.0, m, n, rho, variant).unwrap();
                let info = clientwise_info(
                    InfoProfile::new(1.0, d as f64).unwrap(),
                    &homogeneous(m, n, rho),
                    variant,
                )
                .unwrap();
                let value = van_trees_bound(d, info.total, 0.0).unwrap();
                assert_relative_eq!(disp, value, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn local_dp_scaling_branch() {
        // n_l = 1 with g(rho) op < trace puts every client on the privacy branch.
        let profile = InfoProfile::new(1.0, 3.0).unwrap();
        let cs = homogeneous(20, 1, 0.5);
        let info = clientwise_info(profile, &cs, BoundVariant::Exact).unwrap();
        assert!((0.5f64 * 2.0).exp_m1() < 3.0);
        assert!(info.per_client.iter().all(|t| t.branch == Branch::PrivacyLimited));
    }

    #[test]
    fn quick_rate_fit_sample_limited() {
        let fit = nonparam_rate_fit(1.0, 1, RateRegime::SampleLimited, 8).unwrap();
        assert!(
            (fit.slope - fit.expected).abs() < 0.02,
            "slope {} vs expected {}",
            fit.slope,
            fit.expected
        );
    }

    proptest! {
        #[test]
        fn exact_variant_never_exceeds_rho_linear(
            d in 1usize..4,
            m in 1usize..5,
            n in 1usize..200,
            rho in 0.01f64..3.0,
            r in 0.5f64..4.0,
        ) {
            let cs = homogeneous(m, n, rho);
            let exact = mean_estimation_bound(d, 1.0, &cs, r, BoundVariant::Exact).unwrap();
            let linear = mean_estimation_bound(d, 1.0, &cs, r, BoundVariant::RhoLinear).unwrap();
            prop_assert!(exact.value <= linear.value * (1.0 + 1e-12));
        }

        #[test]
        fn bound_monotone_in_resources(
            d in 1usize..4,
            m in 1usize..5,
            n in 2usize..200,
            rho in 0.01f64..3.0,
        ) {
            let base = mean_estimation_bound(
                d, 1.0, &homogeneous(m, n, rho), 1.0, BoundVariant::Exact,
            ).unwrap().value;
            let more_n = mean_estimation_bound(
                d, 1.0, &homogeneous(m, n + 50, rho), 1.0, BoundVariant::Exact,
            ).unwrap().value;
            let more_rho = mean_estimation_bound(
                d, 1.0, &homogeneous(m, n, rho + 1.0), 1.0, BoundVariant::Exact,
            ).unwrap().value;
            let more_m = mean_estimation_bound(
                d, 1.0, &homogeneous(m + 1, n, rho), 1.0, BoundVariant::Exact,
            ).unwrap().value;
            let wider_sigma = mean_estimation_bound(
                d, 2.0, &homogeneous(m, n, rho), 1.0, BoundVariant::Exact,
            ).unwrap().value;
            let tol = 1.0 + 1e-12;
            prop_assert!(more_n <= base * tol);
            prop_assert!(more_rho <= base * tol);
            prop_assert!(more_m <= base * tol);
            prop_assert!(wider_sigma * tol >= base);
        }

        #[test]
        fn harmonic_display_within_factor_two(
            n1 in 2usize..500,
            n2 in 2usize..500,
            rho1 in 0.01f64..5.0,
            rho2 in 0.01f64..5.0,
        ) {
            let cs = clients(&[(n1, rho1), (n2, rho2)]);
            let b = mean_estimation_bound(1, 1.0, &cs, 1.0, BoundVariant::RhoLinear).unwrap();
            let h = b.harmonic_display.unwrap();
            let min_form = van_trees_bound(1, b.info_total, 0.0).unwrap();
            prop_assert!(h >= min_form * (1.0 - 1e-12));
            prop_assert!(h <= 2.0 * min_form * (1.0 + 1e-12));
        }
    }
}
