use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the association network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Feature width.
    pub d: usize,
    pub heads: usize,
    pub n_spatial_layers: usize,
    pub n_temporal_layers: usize,
    /// 1-based index of the cross-attention layer whose scores feed the
    /// affinity head.
    pub affinity_layer_index: usize,
    /// Maximum number of object slots per frame.
    pub k_max: usize,
    pub d_reid: usize,
    pub n_categories: usize,
    pub n_attributes: usize,
    /// Association horizon in frames.
    pub tau: usize,
    /// Hidden width of the attention feed-forward blocks and motion model.
    pub ffn_hidden: usize,
    /// Width of the per-point corner perceptron.
    pub point_hidden: usize,
    /// Hidden width of the entrywise affinity map.
    pub affinity_hidden: usize,
    /// Hidden width of the prediction heads.
    pub head_hidden: usize,
    /// Feed the corner (geometric) stream. Disabled for appearance-only ablations.
    pub use_geometry: bool,
    /// Feed the re-id + category (appearance) stream.
    pub use_appearance: bool,
    /// Metres per unit for 3D corner inputs.
    pub metric_scale: f64,
    /// Principal point and focal length used to normalize 2D corners.
    pub image_center: [f64; 2],
    pub pixel_scale: f64,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            d: 64,
            heads: 4,
            n_spatial_layers: 3,
            n_temporal_layers: 4,
            affinity_layer_index: 2,
            k_max: 16,
            d_reid: 32,
            n_categories: 3,
            n_attributes: 3,
            tau: 5,
            ffn_hidden: 128,
            point_hidden: 64,
            affinity_hidden: 16,
            head_hidden: 64,
            use_geometry: true,
            use_appearance: true,
            metric_scale: 10.0,
            image_center: [800.0, 450.0],
            pixel_scale: 600.0,
            init_seed: 7,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::config(format!("d={} not divisible by heads={}", self.d, self.heads)));
        }
        if self.affinity_layer_index < 1 || self.affinity_layer_index > self.n_temporal_layers {
            return Err(Error::config(format!(
                "affinity_layer_index {} outside 1..={}",
                self.affinity_layer_index, self.n_temporal_layers
            )));
        }
        if self.k_max < 1 || self.tau < 1 {
            return Err(Error::config("k_max and tau must be at least 1"));
        }
        if self.n_spatial_layers == 0 || self.d_reid == 0 || self.n_categories == 0 {
            return Err(Error::config("layer counts and input widths must be positive"));
        }
        if self.n_attributes == 0 || self.ffn_hidden == 0 || self.point_hidden == 0 {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.affinity_hidden == 0 || self.head_hidden == 0 {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !self.use_geometry && !self.use_appearance {
            return Err(Error::config("at least one cue stream must be enabled"));
        }
        if !(self.metric_scale > 0.0 && self.pixel_scale > 0.0) {
            return Err(Error::config("input scales must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = NetConfig::default();
        c.validate().unwrap();
        assert_eq!((c.n_spatial_layers, c.n_temporal_layers, c.affinity_layer_index, c.tau), (3, 4, 2, 5));
    }

    #[test]
    fn rejects_bad_heads_and_layer_index() {
        let c = NetConfig { heads: 5, ..Default::default() };
        assert!(c.validate().is_err());
        let c = NetConfig { affinity_layer_index: 5, ..Default::default() };
        assert!(c.validate().is_err());
        let c = NetConfig { affinity_layer_index: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
