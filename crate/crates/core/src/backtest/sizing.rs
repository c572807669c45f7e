//! Position sizing from predicted change and uncertainty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Unit position in the predicted direction.
    Base,
    /// Sized by the realized volatility of the input window.
    RlsdVol,
    /// Sized by the aleatoric standard deviation.
    Alea,
    /// Sized by the aleatoric plus epistemic standard deviation.
    AlEp,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Base,
        StrategyKind::RlsdVol,
        StrategyKind::Alea,
        StrategyKind::AlEp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Base => "Base",
            StrategyKind::RlsdVol => "RlsdVol",
            StrategyKind::Alea => "Alea",
            StrategyKind::AlEp => "AlEp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Minimum absolute predicted change in bps for any position.
    pub threshold: f64,
    /// `(mu*, sigma*)` mapped to a unit position.
    pub rescale_ref: (f64, f64),
    pub clip: Option<f64>,
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Base,
            threshold: 0.1,
            rescale_ref: (0.3, 0.1),
            clip: None,
        }
    }
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// `sigma*^2 / mu*`
    pub fn scale(&self) -> f64 {
        let (m, s) = self.rescale_ref;
        s * s / m
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) {
            return Err(Error::Config(format!("threshold must be >= 0, got {}", self.threshold)));
        }
        let (m, s) = self.rescale_ref;
        if !(s > 0.0) || m == 0.0 || !m.is_finite() {
            return Err(Error::Config(format!("invalid rescale reference ({m}, {s})")));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip bound must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Target position for a predicted change `mu` with uncertainty `sigma`,
/// both in bps. `sigma` is ignored by [`StrategyKind::Base`].
pub fn size_position(mu: f64, sigma: f64, spec: &StrategySpec) -> Result<f64> {
    if spec.kind != StrategyKind::Base && !(sigma > 0.0) {
        return Err(Error::Sizing(sigma));
    }
    if !(mu.abs() >= spec.threshold) {
        return Ok(0.0);
    }
    let alpha = match spec.kind {
        StrategyKind::Base => mu.signum(),
        _ => mu / (sigma * sigma) * spec.scale(),
    };
    Ok(match spec.clip {
        Some(c) => alpha.clamp(-c, c),
        None => alpha,
    })
}

/// `sum a_j mu_j / sqrt(sum a_j^2 sigma_j^2)`
pub fn portfolio_sharpe(alpha: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    let num: f64 = alpha.iter().zip(mu).map(|(a, m)| a * m).sum();
    let den: f64 = alpha.iter().zip(sigma).map(|(a, s)| a * a * s * s).sum();
    num / den.sqrt()
}

/// Checks that `alpha = mu / sigma^2` beats every single-coordinate
/// perturbation of size `eps`. A single asset passes by convention since
/// its ratio does not depend on a positive position size.
pub fn alpha_optimality_check(mu: &[f64], sigma: &[f64], eps: f64) -> bool {
    if mu.len() < 2 {
        return true;
    }
    let alpha: Vec<f64> = mu.iter().zip(sigma).map(|(m, s)| m / (s * s)).collect();
    let best = portfolio_sharpe(&alpha, mu, sigma);
    let mut probe = alpha.clone();
    for i in 0..alpha.len() {
        for d in [eps, -eps] {
            probe[i] = alpha[i] + d;
            if portfolio_sharpe(&probe, mu, sigma) >= best {
                return false;
            }
        }
        probe[i] = alpha[i];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_point_maps_to_unit() {
        for kind in [StrategyKind::RlsdVol, StrategyKind::Alea, StrategyKind::AlEp] {
            let a = size_position(0.3, 0.1, &StrategySpec::new(kind)).unwrap();
            assert!((a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_arithmetic() {
        let a = size_position(0.3, 0.2, &StrategySpec::new(StrategyKind::Alea)).unwrap();
        assert!((a - 0.25).abs() < 1e-12);
        let b = size_position(-0.5, 0.0, &StrategySpec::new(StrategyKind::Base)).unwrap();
        assert_eq!(b, -1.0);
    }

    #[test]
    fn threshold_gate() {
        for kind in StrategyKind::ALL {
            assert_eq!(size_position(0.099, 0.1, &StrategySpec::new(kind)).unwrap(), 0.0);
            assert_ne!(size_position(0.1, 0.1, &StrategySpec::new(kind)).unwrap(), 0.0);
        }
    }

    #[test]
    fn sigma_guard_and_clip() {
        assert!(matches!(
            size_position(1.0, 0.0, &StrategySpec::new(StrategyKind::AlEp)),
            Err(Error::Sizing(_))
        ));
        let spec = StrategySpec {
            clip: Some(1.0),
            ..StrategySpec::new(StrategyKind::Alea)
        };
        assert_eq!(size_position(3.0, 0.1, &spec).unwrap(), 1.0);
        assert_eq!(size_position(-3.0, 0.1, &spec).unwrap(), -1.0);
    }

    #[test]
    fn optimality_cases() {
        assert!(alpha_optimality_check(&[1.0, 2.0], &[1.0, 1.0], 1e-3));
        assert!(alpha_optimality_check(&[0.7], &[0.2], 1e-3));
        let (mu, sigma) = ([0.3, 0.8, 0.1], [0.5, 0.2, 0.9]);
        let a: Vec<f64> = mu.iter().zip(&sigma).map(|(m, s)| m / (s * s)).collect();
        let scaled: Vec<f64> = a.iter().map(|x| x * 7.5).collect();
        let s1 = portfolio_sharpe(&a, &mu, &sigma);
        let s2 = portfolio_sharpe(&scaled, &mu, &sigma);
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn labels_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(StrategyKind::parse(k.label()), Some(k));
        }
        assert_eq!(StrategyKind::parse("alep"), Some(StrategyKind::AlEp));
        assert_eq!(StrategyKind::parse("epi"), None);
    }
}
