use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Diagonal,
    Full,
}

impl CovarianceMode {
    /// Width of the Cholesky head for `contracts` outputs.
    pub fn head_dim(self, contracts: usize) -> usize {
        match self {
            CovarianceMode::Diagonal => contracts,
            CovarianceMode::Full => contracts * (contracts + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub contracts: usize,
    pub window_len: usize,
    /// Hidden sizes of the shared trunk.
    pub common_layers: Vec<usize>,
    /// Hidden sizes of each head's branch, before its linear output layer.
    pub branch_layers: Vec<usize>,
    pub covariance_mode: CovarianceMode,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            contracts: 9,
            window_len: 100,
            common_layers: vec![128, 64],
            branch_layers: vec![64],
            covariance_mode: CovarianceMode::Diagonal,
            dropout_rate: 0.1,
            l2_lambda: 1e-8,
            seed: 0,
        }
    }
}

/// Which part of the network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Trunk,
    MeanHead,
    CholHead,
}

/// Position of one dense layer inside the flat parameter vector.
///
/// Weights are stored row-major as `fan_in x fan_out`, followed by the
/// `fan_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub segment: Segment,
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
    /// ReLU plus dropout after the affine map; false for the linear outputs.
    pub hidden: bool,
}

impl LayerSpec {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    pub fn biases(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }
}

impl NetworkConfig {
    pub fn input_dim(&self) -> usize {
        self.contracts * self.window_len
    }

    pub fn chol_dim(&self) -> usize {
        self.covariance_mode.head_dim(self.contracts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.contracts == 0 || self.window_len == 0 {
            return Err(Error::Config("network needs contracts and window_len > 0".into()));
        }
        if self.common_layers.is_empty() {
            return Err(Error::Config("network needs at least one common layer".into()));
        }
        if self.common_layers.iter().chain(&self.branch_layers).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::Config("l2_lambda must be non-negative".into()));
        }
        Ok(())
    }

    /// Layers in evaluation order: trunk, mean branch, Cholesky branch.
    pub fn layout(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |segment, fan_in, fan_out, hidden| {
            specs.push(LayerSpec {
                segment,
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
                hidden,
            });
            offset += fan_in * fan_out + fan_out;
        };
        let mut width = self.input_dim();
        for &w in &self.common_layers {
            push(Segment::Trunk, width, w, true);
            width = w;
        }
        let trunk_out = width;
        for (segment, out) in [
            (Segment::MeanHead, self.contracts),
            (Segment::CholHead, self.chol_dim()),
        ] {
            let mut width = trunk_out;
            for &w in &self.branch_layers {
                push(segment, width, w, true);
                width = w;
            }
            push(segment, width, out, false);
        }
        specs
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .last()
            .map(|l| l.bias_offset + l.fan_out)
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_size_near_reference() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.param_count(), 133_074);
        let full = NetworkConfig {
            covariance_mode: CovarianceMode::Full,
            ..cfg
        };
        assert_eq!(full.chol_dim(), 45);
        assert_eq!(full.param_count(), 133_074 - 585 + 64 * 45 + 45);
    }

    #[test]
    fn layout_is_contiguous() {
        let cfg = NetworkConfig::default();
        let layout = cfg.layout();
        assert_eq!(layout.len(), 6);
        let mut next = 0;
        for l in &layout {
            assert_eq!(l.weight_offset, next);
            next = l.bias_offset + l.fan_out;
        }
        assert!(!layout[3].hidden && !layout[5].hidden);
        assert_eq!(layout[3].fan_out, 9);
    }

    #[test]
    fn validation() {
        let bad = NetworkConfig {
            dropout_rate: 1.0,
            ..NetworkConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(NetworkConfig::default().validate().is_ok());
    }
}
