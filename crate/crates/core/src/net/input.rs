use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{corners2d, corners3d};
use crate::scene::Detection;

use super::NetConfig;

/// Network-ready tensors for one frame, padded to `slots` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub n_valid: usize,
    pub slots: usize,
    /// `4*slots x 2`, normalized image coordinates.
    pub corners2d: Tensor,
    /// `8*slots x 3`, world metres divided by the metric scale.
    pub corners3d: Tensor,
    /// `slots x d_reid`
    pub reid: Tensor,
    /// `slots x n_categories`, one-hot.
    pub category: Tensor,
    pub timestamp: f64,
}

impl FrameInput {
    /// Packs detections into `slots` rows (valid rows first, zeros after).
    pub fn from_detections(dets: &[Detection], slots: usize, timestamp: f64, cfg: &NetConfig) -> Result<Self> {
        if dets.len() > slots {
            return Err(Error::invalid(format!("{} detections exceed {slots} slots", dets.len())));
        }
        if slots == 0 || slots > cfg.k_max {
            return Err(Error::invalid(format!("slot count {slots} outside 1..={}", cfg.k_max)));
        }
        let mut c2 = vec![0.0; slots * 8];
        let mut c3 = vec![0.0; slots * 24];
        let mut reid = vec![0.0; slots * cfg.d_reid];
        let mut cat = vec![0.0; slots * cfg.n_categories];
        for (i, det) in dets.iter().enumerate() {
            for (k, p) in corners2d(&det.box2d)?.iter().enumerate() {
                c2[i * 8 + k * 2] = (p[0] - cfg.image_center[0]) / cfg.pixel_scale;
                c2[i * 8 + k * 2 + 1] = (p[1] - cfg.image_center[1]) / cfg.pixel_scale;
            }
            for (k, p) in corners3d(&det.box3d)?.iter().enumerate() {
                for j in 0..3 {
                    c3[i * 24 + k * 3 + j] = p[j] / cfg.metric_scale;
                }
            }
            if det.appearance.len() != cfg.d_reid {
                return Err(Error::shape(format!(
                    "appearance has {} dims, network expects {}",
                    det.appearance.len(),
                    cfg.d_reid
                )));
            }
            reid[i * cfg.d_reid..(i + 1) * cfg.d_reid].copy_from_slice(&det.appearance);
            let ci = det.category.index();
            if ci >= cfg.n_categories {
                return Err(Error::invalid(format!("category index {ci} >= {}", cfg.n_categories)));
            }
            cat[i * cfg.n_categories + ci] = 1.0;
        }
        Ok(FrameInput {
            n_valid: dets.len(),
            slots,
            corners2d: Tensor::new(vec![slots * 4, 2], c2)?,
            corners3d: Tensor::new(vec![slots * 8, 3], c3)?,
            reid: Tensor::new(vec![slots, cfg.d_reid], reid)?,
            category: Tensor::new(vec![slots, cfg.n_categories], cat)?,
            timestamp,
        })
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.slots).map(|i| i < self.n_valid).collect()
    }
}
