//! Concrete client-side mechanisms and ready-made protocol bundles.
//!
//! Every noisy mechanism here is a Gaussian mechanism: clip the statistic to
//! a known-sensitivity set, add isotropic noise calibrated as
//! sd = sensitivity / sqrt(2 rho). The deterministic mechanisms (constant,
//! identity release) exist as reference points and carry explicit caveats.

use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::numeric::normal_log_pdf;
use crate::privacy::{
    gaussian_noise_sd, pure_dp_to_zcdp, Auditable, ZcdpBudget, AUDIT_GRID_HALF_WIDTH_SDS,
};
use crate::protocol::{
    ClientSpec, HistoryView, LocalMechanism, MechanismGrid, Message, Round, Schedule, ServerPolicy,
};
use crate::rng::standard_normal;

/// Projects `x` onto the closed ball of radius `tau` around `center`.
pub fn clip_to_ball(x: &[f64], center: &[f64], tau: f64) -> Vec<f64> {
    debug_assert_eq!(x.len(), center.len());
    let dist_sq: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
    let dist = dist_sq.sqrt();
    if dist <= tau {
        x.to_vec()
    } else {
        let scale = tau / dist;
        x.iter().zip(center).map(|(a, c)| c + (a - c) * scale).collect()
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::InvalidParameter(format!("{name} must be finite and > 0, got {v}")));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Clipped sum of scalar observations.
// ---------------------------------------------------------------------------

/// Releases sum(clip(x_i, lo, hi)) + N(0, sd^2); replacing one sample moves
/// the sum by at most hi - lo, so sd = (hi - lo) / sqrt(2 rho).
pub struct GaussianSumMechanism {
    lo: f64,
    hi: f64,
    rho: ZcdpBudget,
    noise_sd: f64,
}

impl GaussianSumMechanism {
    pub fn new(lo: f64, hi: f64, rho: ZcdpBudget) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidParameter(format!(
                "clip bounds must be finite with lo < hi, got [{lo}, {hi}]"
            )));
        }
        let noise_sd = gaussian_noise_sd(hi - lo, rho)?;
        Ok(GaussianSumMechanism { lo, hi, rho, noise_sd })
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    fn clipped_sum(&self, data: &[Vec<f64>]) -> f64 {
        data.iter().map(|x| x[0].clamp(self.lo, self.hi)).sum()
    }
}

impl LocalMechanism for GaussianSumMechanism {
    fn round_rho(&self) -> ZcdpBudget {
        self.rho
    }

    fn evaluate(
        &self,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
        rng: &mut dyn RngCore,
    ) -> Message {
        Message::Vector(vec![self.clipped_sum(data) + self.noise_sd * standard_normal(rng)])
    }

    fn message_log_density(
        &self,
        message: &Message,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
    ) -> Option<f64> {
        let payload = message.payload()?;
        let y = *payload.first()?;
        Some(normal_log_pdf(y, self.clipped_sum(data), self.noise_sd))
    }
}

impl Auditable for GaussianSumMechanism {
    fn discrete_output(&self, _data: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }

    fn continuous_hint(&self, data: &[Vec<f64>]) -> Option<(f64, f64)> {
        Some((self.clipped_sum(data), AUDIT_GRID_HALF_WIDTH_SDS * self.noise_sd))
    }

    fn output_log_density(&self, data: &[Vec<f64>], y: f64) -> f64 {
        normal_log_pdf(y, self.clipped_sum(data), self.noise_sd)
    }
}

// ---------------------------------------------------------------------------
// Clipped mean with a fixed center.
// ---------------------------------------------------------------------------

/// Releases mean_i clip_ball(x_i; center, tau) + per-coordinate Gaussian noise.
/// Replacing one sample moves the mean by at most 2 tau / n in l2, so the
/// per-coordinate sd is (2 tau / n) / sqrt(2 rho).
pub struct ClippedMeanMechanism {
    center: Vec<f64>,
    tau: f64,
    rho: ZcdpBudget,
    noise_sd: f64,
}

impl ClippedMeanMechanism {
    pub fn new(center: Vec<f64>, tau: f64, rho: ZcdpBudget, n: usize) -> Result<Self> {
        positive("tau", tau)?;
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("clip center must be finite and non-empty".into()));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("clipped mean needs n >= 1".into()));
        }
        let noise_sd = gaussian_noise_sd(2.0 * tau / n as f64, rho)?;
        Ok(ClippedMeanMechanism { center, tau, rho, noise_sd })
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    fn clipped_mean(&self, data: &[Vec<f64>]) -> Vec<f64> {
        let d = self.center.len();
        let mut acc = vec![0.0; d];
        for x in data {
            let c = clip_to_ball(x, &self.center, self.tau);
            for (a, v) in acc.iter_mut().zip(&c) {
                *a += v;
            }
        }
        let inv = 1.0 / data.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }
}

impl LocalMechanism for ClippedMeanMechanism {
    fn round_rho(&self) -> ZcdpBudget {
        self.rho
    }

    fn evaluate(
        &self,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
        rng: &mut dyn RngCore,
    ) -> Message {
        let mut v = self.clipped_mean(data);
        for c in v.iter_mut() {
            *c += self.noise_sd * standard_normal(rng);
        }
        Message::Vector(v)
    }

    fn message_log_density(
        &self,
        message: &Message,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
    ) -> Option<f64> {
        let payload = message.payload()?;
        if payload.len() != self.center.len() {
            return None;
        }
        let v = self.clipped_mean(data);
        Some(
            payload
                .iter()
                .zip(&v)
                .map(|(&y, &mu)| normal_log_pdf(y, mu, self.noise_sd))
                .sum(),
        )
    }
}

impl Auditable for ClippedMeanMechanism {
    fn discrete_output(&self, _data: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }

    fn continuous_hint(&self, data: &[Vec<f64>]) -> Option<(f64, f64)> {
        (self.center.len() == 1)
            .then(|| (self.clipped_mean(data)[0], AUDIT_GRID_HALF_WIDTH_SDS * self.noise_sd))
    }

    fn output_log_density(&self, data: &[Vec<f64>], y: f64) -> f64 {
        if self.center.len() != 1 {
            return f64::NEG_INFINITY;
        }
        normal_log_pdf(y, self.clipped_mean(data)[0], self.noise_sd)
    }
}

// ---------------------------------------------------------------------------
// Clipped mean re-centered on server instructions.
// ---------------------------------------------------------------------------

/// Like [`ClippedMeanMechanism`], but the clip center is taken from the
/// current round's server instructions (zeros when none were broadcast).
/// Because instructions are a deterministic function of the public history,
/// the message density stays well-defined on replay.
pub struct AdaptiveClippedMeanMechanism {
    dim: usize,
    tau: f64,
    rho: ZcdpBudget,
    noise_sd: f64,
}

impl AdaptiveClippedMeanMechanism {
    pub fn new(dim: usize, tau: f64, rho: ZcdpBudget, n: usize) -> Result<Self> {
        positive("tau", tau)?;
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("clipped mean needs n >= 1".into()));
        }
        let noise_sd = gaussian_noise_sd(2.0 * tau / n as f64, rho)?;
        Ok(AdaptiveClippedMeanMechanism { dim, tau, rho, noise_sd })
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    fn center_from(&self, history: &HistoryView<'_>) -> Vec<f64> {
        if history.instructions.len() == self.dim {
            history.instructions.to_vec()
        } else {
            vec![0.0; self.dim]
        }
    }

    fn clipped_mean(&self, data: &[Vec<f64>], center: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for x in data {
            let c = clip_to_ball(x, center, self.tau);
            for (a, v) in acc.iter_mut().zip(&c) {
                *a += v;
            }
        }
        let inv = 1.0 / data.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }
}

impl LocalMechanism for AdaptiveClippedMeanMechanism {
    fn round_rho(&self) -> ZcdpBudget {
        self.rho
    }

    fn evaluate(
        &self,
        data: &[Vec<f64>],
        history: &HistoryView<'_>,
        rng: &mut dyn RngCore,
    ) -> Message {
        let center = self.center_from(history);
        let mut v = self.clipped_mean(data, &center);
        for c in v.iter_mut() {
            *c += self.noise_sd * standard_normal(rng);
        }
        Message::Vector(v)
    }

    fn message_log_density(
        &self,
        message: &Message,
        data: &[Vec<f64>],
        history: &HistoryView<'_>,
    ) -> Option<f64> {
        let payload = message.payload()?;
        if payload.len() != self.dim {
            return None;
        }
        let center = self.center_from(history);
        let v = self.clipped_mean(data, &center);
        Some(
            payload
                .iter()
                .zip(&v)
                .map(|(&y, &mu)| normal_log_pdf(y, mu, self.noise_sd))
                .sum(),
        )
    }
}

// ---------------------------------------------------------------------------
// Deterministic reference mechanisms.
// ---------------------------------------------------------------------------

/// Broadcasts a fixed vector regardless of data: zero charge, zero information.
pub struct ConstantMechanism {
    value: Vec<f64>,
}

impl ConstantMechanism {
    pub fn new(value: Vec<f64>) -> Self {
        ConstantMechanism { value }
    }
}

impl LocalMechanism for ConstantMechanism {
    fn round_rho(&self) -> ZcdpBudget {
        ZcdpBudget::ZERO
    }

    fn evaluate(
        &self,
        _data: &[Vec<f64>],
        _history: &HistoryView<'_>,
        _rng: &mut dyn RngCore,
    ) -> Message {
        Message::Vector(self.value.clone())
    }

    fn message_log_density(
        &self,
        message: &Message,
        _data: &[Vec<f64>],
        _history: &HistoryView<'_>,
    ) -> Option<f64> {
        Some(if message.payload() == Some(self.value.as_slice()) {
            0.0
        } else {
            f64::NEG_INFINITY
        })
    }
}

/// Releases the raw local dataset, flattened in sample order.
///
/// A deterministic data-revealing release satisfies no finite
/// zero-concentrated guarantee; `declared` is a nominal stand-in so the
/// release can flow through budget-checked pipelines. Saturation analyses
/// use it as the no-privacy endpoint.
pub struct IdentityReleaseMechanism {
    declared: ZcdpBudget,
}

impl IdentityReleaseMechanism {
    pub fn new(declared: ZcdpBudget) -> Self {
        IdentityReleaseMechanism { declared }
    }

    fn flatten(data: &[Vec<f64>]) -> Vec<f64> {
        data.iter().flatten().copied().collect()
    }
}

impl LocalMechanism for IdentityReleaseMechanism {
    fn round_rho(&self) -> ZcdpBudget {
        self.declared
    }

    fn evaluate(
        &self,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
        _rng: &mut dyn RngCore,
    ) -> Message {
        Message::Vector(Self::flatten(data))
    }

    fn message_log_density(
        &self,
        message: &Message,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
    ) -> Option<f64> {
        Some(if message.payload() == Some(Self::flatten(data).as_slice()) {
            0.0
        } else {
            f64::NEG_INFINITY
        })
    }
}

// ---------------------------------------------------------------------------
// Randomized response on one bit.
// ---------------------------------------------------------------------------

/// Flips the first sample's bit with probability `flip`; the induced pure-DP
/// level eps = ln((1 - flip)/flip) converts to rho = eps^2 / 2.
pub struct RandomizedResponseMechanism {
    flip: f64,
    rho: ZcdpBudget,
}

impl RandomizedResponseMechanism {
    pub fn new(flip: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&flip) || flip == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "flip probability must lie in (0, 0.5), got {flip}"
            )));
        }
        let eps = ((1.0 - flip) / flip).ln();
        let rho = pure_dp_to_zcdp(eps)?;
        Ok(RandomizedResponseMechanism { flip, rho })
    }

    pub fn rho(&self) -> ZcdpBudget {
        self.rho
    }

    fn bit(data: &[Vec<f64>]) -> f64 {
        if data[0][0] == 0.0 {
            0.0
        } else {
            1.0
        }
    }
}

impl LocalMechanism for RandomizedResponseMechanism {
    fn round_rho(&self) -> ZcdpBudget {
        self.rho
    }

    fn evaluate(
        &self,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
        rng: &mut dyn RngCore,
    ) -> Message {
        let b = Self::bit(data);
        // 53-bit uniform in [0, 1).
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        Message::Vector(vec![if u < self.flip { 1.0 - b } else { b }])
    }

    fn message_log_density(
        &self,
        message: &Message,
        data: &[Vec<f64>],
        _history: &HistoryView<'_>,
    ) -> Option<f64> {
        let y = *message.payload()?.first()?;
        if y != 0.0 && y != 1.0 {
            return Some(f64::NEG_INFINITY);
        }
        Some(if y == Self::bit(data) {
            (1.0 - self.flip).ln()
        } else {
            self.flip.ln()
        })
    }
}

impl Auditable for RandomizedResponseMechanism {
    fn discrete_output(&self, data: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
        let b = Self::bit(data);
        let masses = if b == 0.0 {
            vec![1.0 - self.flip, self.flip]
        } else {
            vec![self.flip, 1.0 - self.flip]
        };
        Some((vec![0.0, 1.0], masses))
    }

    fn continuous_hint(&self, _data: &[Vec<f64>]) -> Option<(f64, f64)> {
        None
    }

    fn output_log_density(&self, _data: &[Vec<f64>], _y: f64) -> f64 {
        f64::NEG_INFINITY
    }
}

// ---------------------------------------------------------------------------
// Two-round adaptive mean protocol.
// ---------------------------------------------------------------------------

/// Server that re-broadcasts the weighted mean of the first round's messages
/// as the instruction for every later round.
pub struct BroadcastMeanPolicy {
    weights: Vec<f64>,
}

impl BroadcastMeanPolicy {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty()
            || weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidParameter(
                "broadcast weights must be non-negative with positive sum".into(),
            ));
        }
        Ok(BroadcastMeanPolicy { weights })
    }
}

impl ServerPolicy for BroadcastMeanPolicy {
    fn next_instructions(&self, _initial: &[f64], rounds: &[Round]) -> Vec<f64> {
        let Some(first) = rounds.first() else {
            return Vec::new();
        };
        let mut acc: Option<Vec<f64>> = None;
        let mut total = 0.0;
        for (l, rm) in first.messages.iter().enumerate() {
            let Some(payload) = rm.message.payload() else { continue };
            let w = self.weights.get(l).copied().unwrap_or(0.0);
            if w == 0.0 {
                continue;
            }
            let acc = acc.get_or_insert_with(|| vec![0.0; payload.len()]);
            for (a, &v) in acc.iter_mut().zip(payload) {
                *a += w * v;
            }
            total += w;
        }
        match acc {
            Some(mut v) if total > 0.0 => {
                v.iter_mut().for_each(|a| *a /= total);
                v
            }
            _ => Vec::new(),
        }
    }
}

/// Ready-to-run bundle for the two-round adaptive mean release.
pub struct AdaptiveMeanProtocol {
    pub schedule: Schedule,
    pub grid: MechanismGrid,
    pub policy: Arc<dyn ServerPolicy>,
}

/// Builds the two-round protocol: round one releases a zero-centered clipped
/// mean with budget share `split.0`; the server broadcasts the inverse-noise-
/// variance-weighted mean; round two re-clips around the broadcast with
/// radius `tau2` and budget share `split.1`.
pub fn adaptive_two_round_mean_protocol(
    clients: &[ClientSpec],
    dim: usize,
    split: (f64, f64),
    tau1: f64,
    tau2: f64,
) -> Result<AdaptiveMeanProtocol> {
    positive("tau1", tau1)?;
    positive("tau2", tau2)?;
    positive("split.0", split.0)?;
    positive("split.1", split.1)?;
    if split.0 + split.1 > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "budget split sums to {}, must be <= 1",
            split.0 + split.1
        )));
    }
    if clients.is_empty() {
        return Err(Error::InvalidParameter("protocol needs at least one client".into()));
    }
    let m = clients.len();
    let schedule = Schedule::Roundwise { clients: m, rounds: 2 };

    let mut round1: Vec<Arc<ClippedMeanMechanism>> = Vec::with_capacity(m);
    for c in clients {
        let rho = ZcdpBudget::new(split.0 * c.rho_budget.rho())?;
        round1.push(Arc::new(ClippedMeanMechanism::new(vec![0.0; dim], tau1, rho, c.n)?));
    }
    let mut round2: Vec<Arc<AdaptiveClippedMeanMechanism>> = Vec::with_capacity(m);
    for c in clients {
        let rho = ZcdpBudget::new(split.1 * c.rho_budget.rho())?;
        round2.push(Arc::new(AdaptiveClippedMeanMechanism::new(dim, tau2, rho, c.n)?));
    }

    let weights: Vec<f64> = round1
        .iter()
        .map(|mech| {
            let sd = mech.noise_sd();
            if sd > 0.0 {
                1.0 / (sd * sd)
            } else {
                1.0
            }
        })
        .collect();
    let policy = Arc::new(BroadcastMeanPolicy::new(weights)?);

    let slots = vec![
        round1
            .into_iter()
            .map(|m| Some(m as Arc<dyn LocalMechanism>))
            .collect::<Vec<_>>(),
        round2
            .into_iter()
            .map(|m| Some(m as Arc<dyn LocalMechanism>))
            .collect::<Vec<_>>(),
    ];
    Ok(AdaptiveMeanProtocol {
        schedule,
        grid: MechanismGrid::new(slots),
        policy,
    })
}
