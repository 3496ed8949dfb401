//! Zero-concentrated differential privacy: orders, budgets, Renyi
//! divergences, Gaussian calibration, composition, and mechanism audits.
//!
//! A mechanism satisfies rho-zCDP when the Renyi divergence between its
//! output laws on adjacent datasets obeys `D_alpha <= rho * alpha` for every
//! order `alpha > 1`. Adjacent means the datasets differ in one sample.
//! Audits check that linear envelope on a finite order grid, either through
//! the Gaussian closed form or through quadrature over densities on a shared
//! grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, log_sum_exp};

/// Renyi order: a finite real strictly greater than 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RenyiOrder(f64);

impl RenyiOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 1.0 {
            return Err(Error::InvalidOrder(alpha));
        }
        Ok(RenyiOrder(alpha))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Nonnegative finite zCDP budget.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZcdpBudget(f64);

impl ZcdpBudget {
    pub fn new(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "zCDP budget must be finite and >= 0, got {rho}"
            )));
        }
        Ok(ZcdpBudget(rho))
    }

    pub const ZERO: ZcdpBudget = ZcdpBudget(0.0);

    pub fn rho(self) -> f64 {
        self.0
    }
}

/// Per-client cumulative budgets of a protocol or transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetVector {
    pub per_client: Vec<ZcdpBudget>,
}

impl BudgetVector {
    pub fn clients(&self) -> usize {
        self.per_client.len()
    }

    pub fn total(&self) -> f64 {
        compensated_sum(&self.per_client.iter().map(|b| b.rho()).collect::<Vec<_>>())
    }
}

/// Default audit order grid.
pub fn default_alpha_grid() -> Vec<RenyiOrder> {
    [1.1, 1.5, 2.0, 4.0, 8.0, 16.0, 32.0]
        .iter()
        .map(|&a| RenyiOrder::new(a).expect("static grid"))
        .collect()
}

/// Audit slack for divergences obtained from closed forms or exact sums.
pub const CLOSED_FORM_AUDIT_TOL: f64 = 1e-6;
/// Audit slack for divergences obtained by quadrature.
pub const QUADRATURE_AUDIT_TOL: f64 = 1e-4;
/// Minimum number of quadrature points on the continuous audit grid.
pub const AUDIT_GRID_MIN_POINTS: usize = 4096;
/// Half-width of the audit grid around each output law, in noise standard deviations.
pub const AUDIT_GRID_HALF_WIDTH_SDS: f64 = 10.0;

/// A Renyi divergence value; likelihood-ratio blowups are reported
/// explicitly instead of as a large float.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn is_finite(self) -> bool {
        matches!(self, Divergence::Finite(_))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Divergence::Finite(v) => Some(v),
            Divergence::Infinite => None,
        }
    }
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Divergence::Finite(v) => write!(f, "{v}"),
            Divergence::Infinite => write!(f, "inf"),
        }
    }
}

/// A density (or mass function) tabulated on a fixed grid.
///
/// Values are held in log space so that far tails stay representable; a true
/// zero is `-inf`. For continuous laws, `weights` are quadrature weights; for
/// discrete laws every weight is 1 and the values are point masses. Two
/// densities are comparable only when their points and weights match bit for
/// bit.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    points: Vec<f64>,
    weights: Vec<f64>,
    log_values: Vec<f64>,
}

fn check_log_values(log_values: &[f64]) -> Result<()> {
    if log_values.iter().any(|&v| v.is_nan() || v == f64::INFINITY) {
        return Err(Error::InvalidInput(
            "log densities must be < +inf and not NaN".into(),
        ));
    }
    Ok(())
}

impl GridDensity {
    /// Discrete law: point masses at `points`.
    pub fn discrete(points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() || points.is_empty() {
            return Err(Error::InvalidInput(
                "discrete density needs matching non-empty points and masses".into(),
            ));
        }
        if masses.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::InvalidInput("masses must be finite and >= 0".into()));
        }
        let weights = vec![1.0; points.len()];
        let log_values = masses.iter().map(|&m| m.ln()).collect();
        Ok(GridDensity { points, weights, log_values })
    }

    fn trapezoid_weights(points: &[f64]) -> Result<Vec<f64>> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(
                "grid density needs >= 2 matching points and values".into(),
            ));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("grid points must be strictly increasing".into()));
        }
        let n = points.len();
        let mut weights = vec![0.0; n];
        for i in 0..n - 1 {
            let h = points[i + 1] - points[i];
            weights[i] += 0.5 * h;
            weights[i + 1] += 0.5 * h;
        }
        Ok(weights)
    }

    /// Continuous law tabulated at strictly increasing `points`, integrated
    /// with trapezoid weights.
    pub fn on_grid(points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::InvalidInput(
                "grid density needs >= 2 matching points and values".into(),
            ));
        }
        if values.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidInput("density values must be finite and >= 0".into()));
        }
        let weights = Self::trapezoid_weights(&points)?;
        let log_values = values.iter().map(|&v| v.ln()).collect();
        Ok(GridDensity { points, weights, log_values })
    }

    /// Same as [`GridDensity::on_grid`] but from log densities, which keeps
    /// deep tails from flushing to zero.
    pub fn on_grid_log(points: Vec<f64>, log_values: Vec<f64>) -> Result<Self> {
        if points.len() != log_values.len() {
            return Err(Error::InvalidInput(
                "grid density needs >= 2 matching points and values".into(),
            ));
        }
        check_log_values(&log_values)?;
        let weights = Self::trapezoid_weights(&points)?;
        Ok(GridDensity { points, weights, log_values })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Linear density values (exp of the stored logs).
    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|&v| v.exp()).collect()
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.points == other.points && self.weights == other.weights
    }
}

/// Renyi divergence of two Gaussians with common standard deviation:
/// `alpha * gap^2 / (2 sd^2)`.
pub fn renyi_divergence_gaussian(gap: f64, sd: f64, alpha: RenyiOrder) -> Result<f64> {
    if !gap.is_finite() {
        return Err(Error::InvalidParameter(format!("mean gap must be finite, got {gap}")));
    }
    if !sd.is_finite() || sd <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "standard deviation must be finite and > 0, got {sd}"
        )));
    }
    Ok(alpha.get() * gap * gap / (2.0 * sd * sd))
}

/// Renyi divergence `D_alpha(p || q)` from densities on a shared grid.
///
/// Where `q` vanishes but `p` does not, the likelihood ratio blows up and the
/// result is `Divergence::Infinite`.
pub fn numeric_renyi_divergence(
    p: &GridDensity,
    q: &GridDensity,
    alpha: RenyiOrder,
) -> Result<Divergence> {
    if !p.same_grid(q) {
        return Err(Error::InvalidInput(
            "renyi divergence needs both densities on the same grid".into(),
        ));
    }
    let a = alpha.get();
    let mut log_terms = Vec::with_capacity(p.log_values.len());
    for i in 0..p.log_values.len() {
        let (lp, lq, wi) = (p.log_values[i], q.log_values[i], p.weights[i]);
        if lp == f64::NEG_INFINITY || wi == 0.0 {
            continue;
        }
        if lq == f64::NEG_INFINITY {
            return Ok(Divergence::Infinite);
        }
        // w * q * (p/q)^alpha accumulated in log space.
        log_terms.push(wi.ln() + a * lp + (1.0 - a) * lq);
    }
    if log_terms.is_empty() {
        return Err(Error::InvalidInput("density p is identically zero on the grid".into()));
    }
    let log_integral = log_sum_exp(&log_terms);
    if log_integral == f64::INFINITY {
        return Ok(Divergence::Infinite);
    }
    Ok(Divergence::Finite(log_integral / (a - 1.0)))
}

/// zCDP of a Gaussian mechanism with the given worst-case output shift
/// (sensitivity) and per-release noise level: `rho = sens^2 / (2 sd^2)`.
pub fn gaussian_mechanism_rho(sensitivity: f64, noise_sd: f64) -> Result<ZcdpBudget> {
    if !sensitivity.is_finite() || sensitivity < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sensitivity must be finite and >= 0, got {sensitivity}"
        )));
    }
    if !noise_sd.is_finite() || noise_sd <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "noise standard deviation must be finite and > 0, got {noise_sd}"
        )));
    }
    ZcdpBudget::new(sensitivity * sensitivity / (2.0 * noise_sd * noise_sd))
}

/// Noise level for a Gaussian mechanism that spends exactly `rho` on a
/// release with the given sensitivity.
pub fn gaussian_noise_sd(sensitivity: f64, rho: ZcdpBudget) -> Result<f64> {
    if !sensitivity.is_finite() || sensitivity <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sensitivity must be finite and > 0, got {sensitivity}"
        )));
    }
    if rho.rho() <= 0.0 {
        return Err(Error::InvalidParameter(
            "a noisy release needs a strictly positive budget".into(),
        ));
    }
    Ok(sensitivity / (2.0 * rho.rho()).sqrt())
}

/// Adaptive sequential composition: budgets add.
pub fn compose_rounds(budgets: &[ZcdpBudget]) -> Result<ZcdpBudget> {
    ZcdpBudget::new(compensated_sum(
        &budgets.iter().map(|b| b.rho()).collect::<Vec<_>>(),
    ))
}

/// Conversion of a pure-DP guarantee: `eps`-DP implies `(eps^2/2)`-zCDP.
pub fn pure_dp_to_zcdp(epsilon: f64) -> Result<ZcdpBudget> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    ZcdpBudget::new(epsilon * epsilon / 2.0)
}

/// A mechanism whose output law on a given dataset can be tabulated, so that
/// a claimed budget can be audited on an adjacent pair.
///
/// Scalar outputs only; mechanisms with vector outputs audit a representative
/// coordinate or are checked through their closed form.
pub trait Auditable {
    /// Point masses of a discrete output law, if the output is discrete.
    fn discrete_output(&self, data: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)>;

    /// Rough location of a continuous output law: (center, halfwidth holding
    /// essentially all mass). Unused when `discrete_output` is `Some`.
    fn continuous_hint(&self, data: &[Vec<f64>]) -> Option<(f64, f64)>;

    /// Continuous output log-density at `y` for the given dataset.
    fn output_log_density(&self, data: &[Vec<f64>], y: f64) -> f64;
}

/// Result of auditing one mechanism on one adjacent pair.
#[derive(Debug, Clone, Serialize)]
pub struct MechanismAudit {
    pub claimed_rho: ZcdpBudget,
    pub alphas: Vec<f64>,
    pub divergences: Vec<Divergence>,
    /// Linear envelope `alpha * rho` per order.
    pub envelopes: Vec<f64>,
    /// Slack applied to the envelope before declaring a violation.
    pub tolerance: f64,
    /// Largest `D_alpha - alpha * rho` over the grid (infinite ratios force a fail).
    pub max_excess: f64,
    pub passed: bool,
}

fn assemble_audit(
    claimed: ZcdpBudget,
    alphas: &[RenyiOrder],
    divergences: Vec<Divergence>,
    tolerance: f64,
) -> MechanismAudit {
    let envelopes: Vec<f64> = alphas.iter().map(|a| a.get() * claimed.rho()).collect();
    let mut max_excess = f64::NEG_INFINITY;
    let mut passed = true;
    for (d, e) in divergences.iter().zip(&envelopes) {
        match d {
            Divergence::Finite(v) => {
                let excess = v - e;
                max_excess = max_excess.max(excess);
                if excess > tolerance {
                    passed = false;
                }
            }
            Divergence::Infinite => {
                max_excess = f64::INFINITY;
                passed = false;
            }
        }
    }
    MechanismAudit {
        claimed_rho: claimed,
        alphas: alphas.iter().map(|a| a.get()).collect(),
        divergences,
        envelopes,
        tolerance,
        max_excess,
        passed,
    }
}

/// Audits `claimed` zCDP for a mechanism on one adjacent dataset pair, over
/// the given order grid.
///
/// Discrete outputs are summed exactly; continuous outputs are integrated by
/// trapezoid quadrature on a grid that covers both laws out to
/// [`AUDIT_GRID_HALF_WIDTH_SDS`] halfwidths plus the tilt induced by the
/// largest order, refined once to confirm convergence.
pub fn audit_mechanism(
    mechanism: &dyn Auditable,
    data_a: &[Vec<f64>],
    data_b: &[Vec<f64>],
    claimed: ZcdpBudget,
    alphas: &[RenyiOrder],
) -> Result<MechanismAudit> {
    if alphas.is_empty() {
        return Err(Error::InvalidInput("audit needs a non-empty order grid".into()));
    }
    if let (Some((pa, ma)), Some((pb, mb))) = (
        mechanism.discrete_output(data_a),
        mechanism.discrete_output(data_b),
    ) {
        // Exact sums on the union support.
        let mut support: Vec<f64> = pa.iter().chain(pb.iter()).cloned().collect();
        support.sort_by(|a, b| a.partial_cmp(b).expect("NaN support point"));
        support.dedup();
        let mass_on = |pts: &[f64], ms: &[f64]| -> Vec<f64> {
            support
                .iter()
                .map(|s| {
                    pts.iter()
                        .position(|p| p == s)
                        .map(|i| ms[i])
                        .unwrap_or(0.0)
                })
                .collect()
        };
        let (masses_a, masses_b) = (mass_on(&pa, &ma), mass_on(&pb, &mb));
        let p = GridDensity::discrete(support.clone(), masses_a)?;
        let q = GridDensity::discrete(support, masses_b)?;
        let divergences = alphas
            .iter()
            .map(|&a| numeric_renyi_divergence(&p, &q, a))
            .collect::<Result<Vec<_>>>()?;
        return Ok(assemble_audit(claimed, alphas, divergences, CLOSED_FORM_AUDIT_TOL));
    }

    let (ca, ha) = mechanism.continuous_hint(data_a).ok_or_else(|| {
        Error::Unsupported("mechanism reports neither discrete nor continuous output".into())
    })?;
    let (cb, hb) = mechanism.continuous_hint(data_b).ok_or_else(|| {
        Error::Unsupported("mechanism reports neither discrete nor continuous output".into())
    })?;
    let alpha_max = alphas.iter().map(|a| a.get()).fold(1.0, f64::max);
    let gap = (ca - cb).abs();
    // The integrand of order alpha concentrates near the alpha-tilted center;
    // stretch the window so the largest order stays covered.
    let lo = ca.min(cb) - ha.max(hb) - alpha_max * gap;
    let hi = ca.max(cb) + ha.max(hb) + alpha_max * gap;
    let base_spacing = 2.0 * ha.min(hb) / AUDIT_GRID_MIN_POINTS as f64;

    let eval = |n_points: usize| -> Result<Vec<Divergence>> {
        let step = (hi - lo) / (n_points - 1) as f64;
        let points: Vec<f64> = (0..n_points).map(|i| lo + step * i as f64).collect();
        let pv: Vec<f64> = points
            .iter()
            .map(|&y| mechanism.output_log_density(data_a, y))
            .collect();
        let qv: Vec<f64> = points
            .iter()
            .map(|&y| mechanism.output_log_density(data_b, y))
            .collect();
        let p = GridDensity::on_grid_log(points.clone(), pv)?;
        let q = GridDensity::on_grid_log(points, qv)?;
        alphas
            .iter()
            .map(|&a| numeric_renyi_divergence(&p, &q, a))
            .collect()
    };

    let n1 = (((hi - lo) / base_spacing).ceil() as usize + 1).max(AUDIT_GRID_MIN_POINTS + 1);
    let coarse = eval(n1)?;
    let fine = eval(2 * n1 - 1)?;
    for (c, f) in coarse.iter().zip(&fine) {
        match (c, f) {
            (Divergence::Finite(a), Divergence::Finite(b)) => {
                if (a - b).abs() > 0.25 * QUADRATURE_AUDIT_TOL {
                    return Err(Error::InvalidInput(format!(
                        "audit quadrature did not converge: {a} vs {b}"
                    )));
                }
            }
            (Divergence::Infinite, Divergence::Infinite) => {}
            _ => {
                return Err(Error::InvalidInput(
                    "audit quadrature did not converge on divergence finiteness".into(),
                ))
            }
        }
    }
    Ok(assemble_audit(claimed, alphas, fine, QUADRATURE_AUDIT_TOL))
}
