//! Training objectives: association (tracking) loss on the affinity matrix,
//! temporal consistency of refined 3D corners, auxiliary head losses and
//! their unweighted sum.

use std::f64::consts::PI;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{corners3d_unchecked, normalize_angle};
use crate::net::{dual_softmax, AffinityVar, HeadVars};

/// Added inside the log of the tracking loss.
pub const LOG_EPS: f64 = 1e-12;

/// Ground-truth association between a current frame (rows) and a previous
/// frame (columns), with the un-identified slot as last row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthAssociation {
    pub matrix: Tensor,
    pub valid_rows: Vec<bool>,
    pub valid_cols: Vec<bool>,
}

impl GroundTruthAssociation {
    /// Checks shape, 0/1 entries and that every valid object row and column
    /// sums to exactly one.
    pub fn new(matrix: Tensor, valid_rows: Vec<bool>, valid_cols: Vec<bool>) -> Result<Self> {
        let gt = GroundTruthAssociation {
            matrix,
            valid_rows,
            valid_cols,
        };
        gt.validate()?;
        Ok(gt)
    }

    /// Builds the matrix from matched `(current, previous)` slot pairs. Valid
    /// slots without a partner go to the un-identified row/column.
    pub fn from_matches(cur_valid: &[bool], prev_valid: &[bool], matches: &[(usize, usize)]) -> Result<Self> {
        let (n, m) = (cur_valid.len(), prev_valid.len());
        let mut data = vec![0.0; (n + 1) * (m + 1)];
        let mut row_used = vec![false; n];
        let mut col_used = vec![false; m];
        for &(i, j) in matches {
            if i >= n || j >= m || !cur_valid[i] || !prev_valid[j] {
                return Err(Error::invalid(format!("match ({i}, {j}) refers to an invalid slot")));
            }
            if row_used[i] || col_used[j] {
                return Err(Error::invalid(format!("match ({i}, {j}) reuses a slot")));
            }
            row_used[i] = true;
            col_used[j] = true;
            data[i * (m + 1) + j] = 1.0;
        }
        for i in 0..n {
            if cur_valid[i] && !row_used[i] {
                data[i * (m + 1) + m] = 1.0;
            }
        }
        for j in 0..m {
            if prev_valid[j] && !col_used[j] {
                data[n * (m + 1) + j] = 1.0;
            }
        }
        GroundTruthAssociation::new(
            Tensor::new(vec![n + 1, m + 1], data)?,
            cur_valid.iter().copied().chain([true]).collect(),
            prev_valid.iter().copied().chain([true]).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (nr, nc) = (self.valid_rows.len(), self.valid_cols.len());
        if self.matrix.shape() != [nr, nc] || nr < 2 || nc < 2 {
            return Err(Error::shape(format!(
                "association matrix {:?} vs masks {nr}x{nc}",
                self.matrix.shape()
            )));
        }
        for i in 0..nr {
            for j in 0..nc {
                let v = self.matrix.get(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(Error::invalid(format!("association entry ({i}, {j}) = {v} is not 0/1")));
                }
                let valid = self.valid_rows[i] && self.valid_cols[j] && !(i == nr - 1 && j == nc - 1);
                if v == 1.0 && !valid {
                    return Err(Error::invalid(format!("association entry ({i}, {j}) set on an invalid slot")));
                }
            }
        }
        for i in 0..nr - 1 {
            if self.valid_rows[i] {
                let s: f64 = self.matrix.row(i).iter().sum();
                if s != 1.0 {
                    return Err(Error::invalid(format!("association row {i} sums to {s}")));
                }
            }
        }
        for j in 0..nc - 1 {
            if self.valid_cols[j] {
                let s: f64 = (0..nr).map(|i| self.matrix.get(i, j)).sum();
                if s != 1.0 {
                    return Err(Error::invalid(format!("association column {j} sums to {s}")));
                }
            }
        }
        Ok(())
    }

    /// Number of supervised entries (ones).
    pub fn num_targets(&self) -> usize {
        self.matrix.data().iter().filter(|&&v| v == 1.0).count()
    }

    /// Matched `(current, previous)` object pairs, excluding births/deaths.
    pub fn matches(&self) -> Vec<(usize, usize)> {
        let (nr, nc) = (self.valid_rows.len(), self.valid_cols.len());
        let mut out = Vec::new();
        for i in 0..nr - 1 {
            for j in 0..nc - 1 {
                if self.matrix.get(i, j) == 1.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Cross-entropy between the ground-truth association and the dual-softmax
/// association probabilities over the previous-frame object columns (every
/// row, un-identified row included; the un-identified column is not
/// supervised), normalized by the number of supervised ones.
pub fn tracking_loss(tape: &mut Tape, aff: &AffinityVar, gt: &GroundTruthAssociation) -> Result<Var> {
    gt.validate()?;
    if gt.valid_rows != aff.valid_rows || gt.valid_cols != aff.valid_cols {
        return Err(Error::shape("ground-truth masks do not match the affinity masks"));
    }
    let nc = gt.valid_cols.len();
    let mut target = gt.matrix.clone();
    for (k, v) in target.data_mut().iter_mut().enumerate() {
        if k % nc == nc - 1 {
            *v = 0.0;
        }
    }
    let count = target.data().iter().filter(|&&v| v == 1.0).count();
    if count == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let prob = dual_softmax(tape, aff)?;
    let logp = tape.log(prob, LOG_EPS)?;
    let target = tape.constant(target);
    let picked = tape.mul(logp, target)?;
    let s = tape.sum(picked)?;
    tape.mul_scalar(s, -1.0 / count as f64)
}

/// One frame gap of the temporal-consistency loss: aligned rows of the same
/// identity in the current and an earlier frame.
#[derive(Debug, Clone)]
pub struct ConsistencyTerm {
    /// `n x 7` refined current boxes.
    pub pred_cur: Var,
    /// `n x 7` refined earlier boxes.
    pub pred_prev: Var,
    /// `n x 7` ground-truth current boxes.
    pub gt_cur: Tensor,
    /// `n x 7` ground-truth earlier boxes.
    pub gt_prev: Tensor,
}

/// Per identity pair, the distance between corresponding corners of the two
/// boxes is compared with the same distance in ground truth; the eight
/// residuals are reduced by root-mean-square and the result is averaged over
/// all pairs of all terms. Returns zero when there are no pairs.
pub fn temporal_consistency_loss(tape: &mut Tape, terms: &[ConsistencyTerm]) -> Result<Var> {
    let total: usize = terms.iter().map(|t| t.gt_cur.rows()).sum();
    if total == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let mut acc: Option<Var> = None;
    for term in terms {
        let n = term.gt_cur.rows();
        if tape.shape(term.pred_cur) != [n, 7]
            || tape.shape(term.pred_prev) != [n, 7]
            || term.gt_prev.shape() != [n, 7]
            || term.gt_cur.cols() != 7
        {
            return Err(Error::shape("consistency term rows must be n x 7 and aligned"));
        }
        let cc = tape.corners3d(term.pred_cur)?;
        let cp = tape.corners3d(term.pred_prev)?;
        let diff = tape.sub(cc, cp)?;
        let pred_dist = tape.row_norm(diff)?;
        let gt_dist = tape.constant(gt_corner_distances(&term.gt_cur, &term.gt_prev)?);
        let resid = tape.sub(pred_dist, gt_dist)?;
        let per_pair = tape.reshape(resid, &[n, 8])?;
        let l2 = tape.row_norm(per_pair)?;
        let rms = tape.mul_scalar(l2, 1.0 / 8f64.sqrt())?;
        let s = tape.sum(rms)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let sum = acc.expect("at least one non-empty term");
    tape.mul_scalar(sum, 1.0 / total as f64)
}

fn gt_corner_distances(cur: &Tensor, prev: &Tensor) -> Result<Tensor> {
    let mut out = Vec::with_capacity(cur.rows() * 8);
    for r in 0..cur.rows() {
        let a = corners3d_unchecked(row7(cur.row(r)));
        let b = corners3d_unchecked(row7(prev.row(r)));
        for (p, q) in a.iter().zip(b.iter()) {
            out.push(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt());
        }
    }
    Tensor::new(vec![cur.rows() * 8, 1], out)
}

fn row7(r: &[f64]) -> [f64; 7] {
    [r[0], r[1], r[2], r[3], r[4], r[5], r[6]]
}

/// Targets for the prediction heads on matched objects.
#[derive(Debug, Clone)]
pub struct HeadTargets {
    /// Rows of the head outputs that carry a ground-truth object.
    pub rows: Vec<usize>,
    /// `n x 3`
    pub velocity: Tensor,
    /// `n x n_attributes`, one-hot.
    pub attribute: Tensor,
    /// `n x 7` detector boxes the refinement is added to.
    pub det_boxes: Tensor,
    /// `n x 7`
    pub gt_boxes: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct AuxLossVars {
    pub velocity: Var,
    pub attribute: Var,
    pub box_refine: Var,
    pub total: Var,
}

/// Mean squared velocity error (over objects and components), attribute
/// cross-entropy (mean over objects) and mean squared error of refined box
/// parameters with the yaw residual wrapped into `(-pi, pi]`.
pub fn aux_losses(tape: &mut Tape, heads: &HeadVars, t: &HeadTargets) -> Result<AuxLossVars> {
    if t.rows.is_empty() {
        let z = tape.constant(Tensor::scalar(0.0));
        return Ok(AuxLossVars {
            velocity: z,
            attribute: z,
            box_refine: z,
            total: z,
        });
    }
    let vel = tape.gather_rows(heads.velocity, &t.rows)?;
    let vel_gt = tape.constant(t.velocity.clone());
    let velocity = tape.mse(vel, vel_gt)?;

    let attr = tape.gather_rows(heads.attribute_logits, &t.rows)?;
    let attribute = tape.cross_entropy(attr, &t.attribute)?;

    let delta = tape.gather_rows(heads.box_refine, &t.rows)?;
    let det = tape.constant(t.det_boxes.clone());
    let refined = tape.add(det, delta)?;
    let gt = tape.constant(t.gt_boxes.clone());
    let resid = tape.sub(refined, gt)?;
    let wrap = tape.constant(yaw_wrap_offsets(tape.value(resid)));
    let box_refine = tape.mse(resid, wrap)?;

    let s = tape.add(velocity, attribute)?;
    let total = tape.add(s, box_refine)?;
    Ok(AuxLossVars {
        velocity,
        attribute,
        box_refine,
        total,
    })
}

/// Offsets that, subtracted from a box residual, wrap its yaw column.
fn yaw_wrap_offsets(resid: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(resid.shape());
    for r in 0..resid.rows() {
        let y = resid.get(r, 6);
        let turns = ((y - normalize_angle(y)) / (2.0 * PI)).round();
        out.data_mut()[r * 7 + 6] = turns * 2.0 * PI;
    }
    out
}

/// Scalar values of every loss term of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub tracking: f64,
    pub consistency: f64,
    pub velocity: f64,
    pub attribute: f64,
    pub box_refine: f64,
    pub total: f64,
}

/// Loss parts on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub tracking: Var,
    pub consistency: Var,
    pub aux: AuxLossVars,
}

/// Unweighted sum of tracking, consistency and auxiliary losses.
pub fn combined_loss(tape: &mut Tape, parts: &LossParts) -> Result<(Var, LossBreakdown)> {
    let s = tape.add(parts.tracking, parts.consistency)?;
    let total = tape.add(s, parts.aux.total)?;
    let v = |x: Var| tape.value(x).item();
    let breakdown = LossBreakdown {
        tracking: v(parts.tracking),
        consistency: v(parts.consistency),
        velocity: v(parts.aux.velocity),
        attribute: v(parts.aux.attribute),
        box_refine: v(parts.aux.box_refine),
        total: v(total),
    };
    Ok((total, breakdown))
}
