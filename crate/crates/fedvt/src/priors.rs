//! Smooth compactly supported priors built from the squared-cosine window.
//!
//! The scalar prior on `[-r, r]` has density `cos^2(pi t / (2r)) / r`. It
//! vanishes at the boundary, its score is integrable, and its Fisher
//! information is exactly `pi^2 / r^2`, the smallest possible over densities
//! supported on that interval. Product priors place one independent window
//! per coordinate and their informations add.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use std::f64::consts::PI;

/// Squared-cosine window prior on `[center - radius, center + radius]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosSquaredPrior {
    pub radius: f64,
    pub center: f64,
}

impl CosSquaredPrior {
    pub fn new(radius: f64, center: f64) -> Result<Self> {
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "prior radius must be finite and > 0, got {radius}"
            )));
        }
        if !center.is_finite() {
            return Err(Error::InvalidParameter("prior center must be finite".into()));
        }
        Ok(CosSquaredPrior { radius, center })
    }

    pub fn density(&self, t: f64) -> f64 {
        cos2_density(t - self.center, self.radius)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        cos2_cdf(t - self.center, self.radius)
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        self.center + cos2_sample(self.radius, rng)
    }

    /// d/dt log density; diverges at the support boundary.
    pub fn score(&self, t: f64) -> f64 {
        let u = t - self.center;
        -(PI / self.radius) * (PI * u / (2.0 * self.radius)).tan()
    }

    /// Fisher information of the window: `pi^2 / radius^2`.
    pub fn information(&self) -> f64 {
        PI * PI / (self.radius * self.radius)
    }
}

/// Density of the centered window, `cos^2(pi t / (2r)) / r` on `[-r, r]`.
pub fn cos2_density(t: f64, r: f64) -> f64 {
    debug_assert!(r > 0.0);
    if t.abs() >= r {
        return 0.0;
    }
    let c = (PI * t / (2.0 * r)).cos();
    c * c / r
}

/// Distribution function of the centered window:
/// `(t + r) / (2r) + sin(pi t / r) / (2 pi)` clamped to `[0, 1]`.
pub fn cos2_cdf(t: f64, r: f64) -> f64 {
    debug_assert!(r > 0.0);
    if t <= -r {
        return 0.0;
    }
    if t >= r {
        return 1.0;
    }
    ((t + r) / (2.0 * r) + (PI * t / r).sin() / (2.0 * PI)).clamp(0.0, 1.0)
}

/// Bisection tolerance of the inverse-CDF sampler.
pub const SAMPLE_BISECTION_TOL: f64 = 1e-12;

/// One draw from the centered window by inverse-CDF bisection.
pub fn cos2_sample(r: f64, rng: &mut dyn RngCore) -> f64 {
    debug_assert!(r > 0.0);
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let (mut lo, mut hi) = (-r, r);
    while hi - lo > SAMPLE_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if cos2_cdf(mid, r) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).clamp(-r, r)
}

/// Independent squared-cosine windows, one per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductPrior {
    pub components: Vec<CosSquaredPrior>,
}

impl ProductPrior {
    pub fn new(components: Vec<CosSquaredPrior>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("product prior needs >= 1 component".into()));
        }
        Ok(ProductPrior { components })
    }

    /// `dim` identical centered components of the given radius.
    pub fn isotropic(dim: usize, radius: f64) -> Result<Self> {
        let c = CosSquaredPrior::new(radius, 0.0)?;
        ProductPrior::new(vec![c; dim])
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Largest component radius; a scale hint for clip radii.
    pub fn radius_hint(&self) -> f64 {
        self.components.iter().map(|c| c.radius).fold(0.0, f64::max)
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.components.iter().map(|c| c.sample(rng)).collect()
    }

    pub fn density(&self, t: &[f64]) -> f64 {
        assert_eq!(t.len(), self.components.len());
        self.components
            .iter()
            .zip(t)
            .map(|(c, &ti)| c.density(ti))
            .product()
    }

    /// Trace of the prior Fisher information: componentwise sum.
    pub fn information(&self) -> f64 {
        self.components.iter().map(|c| c.information()).sum()
    }
}

/// Trace of the prior information of a product of windows.
pub fn prior_information(prior: &ProductPrior) -> f64 {
    prior.information()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::rng::{stream, Scope};

    #[test]
    fn density_point_values() {
        // r = 2, t = r/2: (1/2) cos^2(pi/4) = 0.25.
        assert_relative_eq!(cos2_density(1.0, 2.0), 0.25, epsilon = 1e-12);
        assert_eq!(cos2_density(2.0, 2.0), 0.0);
        assert_eq!(cos2_density(-2.5, 2.0), 0.0);
    }

    #[test]
    fn density_integrates_to_one() {
        for r in [0.5, 1.0, 3.0] {
            let n = 200_001;
            let h = 2.0 * r / (n - 1) as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let t = -r + h * i as f64;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                acc += w * cos2_density(t, r);
            }
            assert!((acc * h - 1.0).abs() < 1e-10, "r={r}: {}", acc * h);
        }
    }

    #[test]
    fn cdf_matches_integrated_density() {
        // The closed-form antiderivative must agree with numeric integration.
        let r = 1.3;
        let n = 100_000;
        let h = 2.0 * r / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let a = -r + h * i as f64;
            acc += 0.5 * h * (cos2_density(a, r) + cos2_density(a + h, r));
            let err = (acc - cos2_cdf(a + h, r)).abs();
            assert!(err < 1e-8, "at t={}, err={err}", a + h);
        }
    }

    #[test]
    fn cdf_frozen_value_at_half_radius() {
        assert_relative_eq!(cos2_cdf(0.5, 1.0), 0.909_154_943_091_895, epsilon = 1e-12);
        assert_eq!(cos2_cdf(-1.0, 1.0), 0.0);
        assert_eq!(cos2_cdf(1.0, 1.0), 1.0);
    }

    #[test]
    fn information_values() {
        let p = CosSquaredPrior::new(1.0, 0.0).unwrap();
        assert_relative_eq!(p.information(), 9.869_604_401_089_358, epsilon = 1e-12);
        let prod = ProductPrior::isotropic(3, 2.0).unwrap();
        assert_relative_eq!(prior_information(&prod), 7.402_203_300_817_019, epsilon = 1e-12);
    }

    #[test]
    fn invalid_radius_rejected() {
        assert!(CosSquaredPrior::new(0.0, 0.0).is_err());
        assert!(CosSquaredPrior::new(-1.0, 0.0).is_err());
        assert!(CosSquaredPrior::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn sampler_stays_in_support_and_matches_cdf() {
        let r = 1.0;
        let n = 100_000usize;
        let mut rng = stream(20_240_817, Scope::Custom { tag: 2 });
        let mut draws: Vec<f64> = (0..n).map(|_| cos2_sample(r, &mut rng)).collect();
        assert!(draws.iter().all(|d| d.abs() <= r));
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Dvoretzky-Kiefer-Wolfowitz band at level 1e-3.
        let eps = ((2.0f64 / 1e-3).ln() / (2.0 * n as f64)).sqrt();
        let mut worst: f64 = 0.0;
        for (i, &d) in draws.iter().enumerate() {
            let f = cos2_cdf(d, r);
            let hi = (i + 1) as f64 / n as f64;
            let lo = i as f64 / n as f64;
            worst = worst.max((f - lo).abs().max((f - hi).abs()));
        }
        assert!(worst <= eps, "sup gap {worst} > DKW band {eps}");
    }

    #[test]
    fn empirical_cdf_at_half_radius() {
        let r = 1.0;
        let n = 100_000usize;
        let mut rng = stream(99, Scope::Custom { tag: 3 });
        let below = (0..n)
            .filter(|_| cos2_sample(r, &mut rng) <= 0.5)
            .count() as f64
            / n as f64;
        let p = 0.909_154_943_091_895;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((below - p).abs() <= 4.0 * se, "{below} vs {p}");
    }

    #[test]
    fn score_information_identity() {
        // E[score^2] under the prior equals pi^2 / r^2.
        let prior = CosSquaredPrior::new(1.5, 0.25).unwrap();
        let n = 200_000usize;
        let mut rng = stream(5, Scope::Custom { tag: 4 });
        let sq: Vec<f64> = (0..n)
            .map(|_| {
                let s = prior.score(prior.sample(&mut rng));
                s * s
            })
            .collect();
        let m = crate::numeric::mean_se(&sq);
        assert!(
            (m.mean - prior.information()).abs() <= 4.0 * m.se,
            "{} vs {} (se {})",
            m.mean,
            prior.information(),
            m.se
        );
    }

    #[test]
    fn product_prior_shapes() {
        let prod = ProductPrior::isotropic(4, 1.0).unwrap();
        let mut rng = stream(8, Scope::Custom { tag: 5 });
        let draw = prod.sample(&mut rng);
        assert_eq!(draw.len(), 4);
        assert!(ProductPrior::new(vec![]).is_err());
    }
}
