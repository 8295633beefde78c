use crate::autodiff::{linear, multi_head_attention, AttentionWeights, Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};

use super::params::{ParamBuilder, ParamId, ParamStore};
use super::{FrameInput, NetConfig};

/// Logit given to padded (non-existent) affinity entries.
pub const PAD_LOGIT: f64 = -1.0e4;

#[derive(Debug, Clone)]
struct Lin {
    w: ParamId,
    b: ParamId,
}

impl Lin {
    fn new(pb: &mut ParamBuilder, name: &str, fan_in: usize, fan_out: usize) -> Self {
        pb.push_scope(name);
        let w = pb.matrix("w", fan_in, fan_out);
        let b = pb.filled("b", &[1, fan_out], 0.0);
        pb.pop_scope();
        Lin { w, b }
    }
}

/// Stack of linear layers with ReLU between them. `relu_last` also rectifies
/// the final layer (per-point perceptrons).
#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<Lin>,
    relu_last: bool,
}

impl Mlp {
    fn new(pb: &mut ParamBuilder, name: &str, widths: &[usize], relu_last: bool) -> Self {
        pb.push_scope(name);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Lin::new(pb, &format!("l{i}"), w[0], w[1]))
            .collect();
        pb.pop_scope();
        Mlp { layers, relu_last }
    }
}

#[derive(Debug, Clone)]
struct Attn {
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
}

#[derive(Debug, Clone)]
struct Block {
    attn: Attn,
    norm1: (ParamId, ParamId),
    ff1: Lin,
    ff2: Lin,
    norm2: (ParamId, ParamId),
}

impl Block {
    fn new(pb: &mut ParamBuilder, name: &str, d: usize, hidden: usize) -> Self {
        pb.push_scope(name);
        let attn = Attn {
            q: Lin::new(pb, "q", d, d),
            k: Lin::new(pb, "k", d, d),
            v: Lin::new(pb, "v", d, d),
            o: Lin::new(pb, "o", d, d),
        };
        let norm1 = (pb.filled("norm1.g", &[1, d], 1.0), pb.filled("norm1.b", &[1, d], 0.0));
        let ff1 = Lin::new(pb, "ff1", d, hidden);
        let ff2 = Lin::new(pb, "ff2", hidden, d);
        let norm2 = (pb.filled("norm2.g", &[1, d], 1.0), pb.filled("norm2.b", &[1, d], 0.0));
        pb.pop_scope();
        Block {
            attn,
            norm1,
            ff1,
            ff2,
            norm2,
        }
    }
}

#[derive(Debug, Clone)]
struct GeometricLayout {
    point2d: Mlp,
    point3d: Mlp,
    mix: Lin,
}

#[derive(Debug, Clone)]
struct AppearanceLayout {
    category: Lin,
    reid: Lin,
}

#[derive(Debug, Clone)]
struct Layout {
    geometric: Option<GeometricLayout>,
    appearance: Option<AppearanceLayout>,
    fuse: Lin,
    spatial: Vec<Block>,
    motion: Mlp,
    temporal: Vec<Block>,
    affinity: Mlp,
    birth: ParamId,
    death: ParamId,
    velocity: Mlp,
    attribute: Mlp,
    refine: Mlp,
}

/// The association network: configuration, layer layout and weights.
#[derive(Debug, Clone)]
pub struct AssocNet {
    cfg: NetConfig,
    layout: Layout,
    params: ParamStore,
}

impl AssocNet {
    /// Builds a network with deterministic initial weights from `cfg.init_seed`.
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let p = cfg.point_hidden;
        let mut pb = ParamBuilder::new(cfg.init_seed);
        let geometric = cfg.use_geometry.then(|| {
            pb.push_scope("embed.geo");
            let g = GeometricLayout {
                point2d: Mlp::new(&mut pb, "point2d", &[2, p, p, p], true),
                point3d: Mlp::new(&mut pb, "point3d", &[3, p, p, p], true),
                mix: Lin::new(&mut pb, "mix", 2 * p, d),
            };
            pb.pop_scope();
            g
        });
        let appearance = cfg.use_appearance.then(|| {
            pb.push_scope("embed.app");
            let a = AppearanceLayout {
                category: Lin::new(&mut pb, "category", cfg.n_categories, d),
                reid: Lin::new(&mut pb, "reid", cfg.d_reid, d),
            };
            pb.pop_scope();
            a
        });
        let fuse = Lin::new(&mut pb, "fuse", 2 * d, d);
        let spatial = (0..cfg.n_spatial_layers)
            .map(|i| Block::new(&mut pb, &format!("spatial.{i}"), d, cfg.ffn_hidden))
            .collect();
        let motion = Mlp::new(&mut pb, "motion", &[d + 1, cfg.ffn_hidden, d], false);
        let temporal = (0..cfg.n_temporal_layers)
            .map(|i| Block::new(&mut pb, &format!("temporal.{i}"), d, cfg.ffn_hidden))
            .collect();
        let affinity = Mlp::new(&mut pb, "affinity", &[1, cfg.affinity_hidden, 1], false);
        let birth = pb.filled("affinity.birth", &[1, 1], 0.0);
        let death = pb.filled("affinity.death", &[1, 1], 0.0);
        let h = cfg.head_hidden;
        let velocity = Mlp::new(&mut pb, "head.velocity", &[d, h, h, 3], false);
        let attribute = Mlp::new(&mut pb, "head.attribute", &[d, h, h, cfg.n_attributes], false);
        let refine = Mlp::new(&mut pb, "head.refine", &[d, h, h, 7], false);
        let layout = Layout {
            geometric,
            appearance,
            fuse,
            spatial,
            motion,
            temporal,
            affinity,
            birth,
            death,
            velocity,
            attribute,
            refine,
        };
        Ok(AssocNet {
            cfg,
            layout,
            params: pb.finish(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Weight ids of the final layer of each prediction head.
    pub fn head_output_params(&self) -> Vec<ParamId> {
        let l = &self.layout;
        [&l.velocity, &l.attribute, &l.refine]
            .iter()
            .flat_map(|m| {
                let last = m.layers.last().expect("heads have layers");
                [last.w, last.b]
            })
            .collect()
    }

    /// Starts a forward pass. With `trainable`, weights become gradient leaves.
    pub fn graph(&self, trainable: bool) -> Graph<'_> {
        Graph {
            tape: Tape::new(),
            net: self,
            bound: vec![None; self.params.len()],
            trainable,
        }
    }

    /// Embedding and spatial flow for one frame, evaluated without gradients.
    pub fn encode_frame(&self, input: &FrameInput) -> Result<FrameFeatures> {
        let mut g = self.graph(false);
        let enc = g.encode(input)?;
        Ok(FrameFeatures {
            fused: g.tape.value(enc.fused).clone(),
            spatial: g.tape.value(enc.spatial).clone(),
            valid_mask: enc.mask,
            timestamp: input.timestamp,
        })
    }

    /// Motion modeling, temporal flow, association probabilities and heads for
    /// current spatial features against stored previous-frame features.
    pub fn associate(
        &self,
        cur: &Tensor,
        cur_mask: &[bool],
        prev: &Tensor,
        prev_mask: &[bool],
        dt: f64,
    ) -> Result<PairOutput> {
        let mut g = self.graph(false);
        let c = g.tape.constant(cur.clone());
        let p = g.tape.constant(prev.clone());
        let motion = g.motion_modeling(p, dt)?;
        let t = g.temporal_flow(c, cur_mask, motion, prev_mask)?;
        let prob = dual_softmax(&mut g.tape, &t.affinity)?;
        let h = g.heads(t.aggregated)?;
        Ok(PairOutput {
            affinity: t.affinity.to_matrix(&g.tape),
            association: g.tape.value(prob).clone(),
            heads: HeadsOutput {
                velocity: g.tape.value(h.velocity).clone(),
                attribute_logits: g.tape.value(h.attribute_logits).clone(),
                box_refine: g.tape.value(h.box_refine).clone(),
            },
        })
    }
}

/// Embedded and spatially propagated features of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub fused: Tensor,
    pub spatial: Tensor,
    pub valid_mask: Vec<bool>,
    pub timestamp: f64,
}

/// Affinity logits with the un-identified slot as last row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub logits: Tensor,
    pub valid_rows: Vec<bool>,
    pub valid_cols: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadsOutput {
    /// `n x 3`, m/s.
    pub velocity: Tensor,
    pub attribute_logits: Tensor,
    /// `n x 7`, additive deltas on `[x, y, z, l, w, h, yaw]`.
    pub box_refine: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutput {
    pub affinity: AffinityMatrix,
    /// Dual-softmax association probabilities, same layout as the affinity.
    pub association: Tensor,
    pub heads: HeadsOutput,
}

/// Affinity on a tape.
#[derive(Debug, Clone)]
pub struct AffinityVar {
    pub logits: Var,
    pub valid_rows: Vec<bool>,
    pub valid_cols: Vec<bool>,
}

impl AffinityVar {
    /// Entry validity: both slots exist, excluding the un-identified corner.
    pub fn entry_mask(&self) -> Vec<bool> {
        entry_mask(&self.valid_rows, &self.valid_cols)
    }

    pub fn to_matrix(&self, tape: &Tape) -> AffinityMatrix {
        AffinityMatrix {
            logits: tape.value(self.logits).clone(),
            valid_rows: self.valid_rows.clone(),
            valid_cols: self.valid_cols.clone(),
        }
    }
}

fn entry_mask(rows: &[bool], cols: &[bool]) -> Vec<bool> {
    let (nr, nc) = (rows.len(), cols.len());
    let mut m = Vec::with_capacity(nr * nc);
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            m.push(*r && *c && !(i == nr - 1 && j == nc - 1));
        }
    }
    m
}

/// Association probabilities from an affinity matrix. Inside the object
/// block the row-softmax and column-softmax are multiplied entrywise; the
/// un-identified column keeps the row-softmax (births) and the un-identified
/// row keeps the column-softmax (deaths).
pub fn dual_softmax(tape: &mut Tape, aff: &AffinityVar) -> Result<Var> {
    let mask = aff.entry_mask();
    let fwd = tape.softmax(aff.logits, Axis::Cols, Some(&mask))?;
    let bwd = tape.softmax(aff.logits, Axis::Rows, Some(&mask))?;
    let (nr, nc) = (aff.valid_rows.len(), aff.valid_cols.len());
    let mut core = vec![0.0; nr * nc];
    let mut births = vec![0.0; nr * nc];
    let mut deaths = vec![0.0; nr * nc];
    for i in 0..nr {
        for j in 0..nc {
            let k = i * nc + j;
            if !mask[k] {
                continue;
            }
            match (i == nr - 1, j == nc - 1) {
                (false, false) => core[k] = 1.0,
                (false, true) => births[k] = 1.0,
                (true, false) => deaths[k] = 1.0,
                (true, true) => {}
            }
        }
    }
    let shape = [nr, nc];
    let core = tape.constant(Tensor::from_parts(shape.to_vec(), core));
    let births = tape.constant(Tensor::from_parts(shape.to_vec(), births));
    let deaths = tape.constant(Tensor::from_parts(shape.to_vec(), deaths));
    let both = tape.mul(fwd, bwd)?;
    let a = tape.mul(both, core)?;
    let b = tape.mul(fwd, births)?;
    let c = tape.mul(bwd, deaths)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

/// Encoded frame on a tape.
#[derive(Debug, Clone)]
pub struct EncodedFrame {
    pub fused: Var,
    pub spatial: Var,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct TemporalOutput {
    pub aggregated: Var,
    pub affinity: AffinityVar,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub velocity: Var,
    pub attribute_logits: Var,
    pub box_refine: Var,
}

/// One forward pass of the network on its own tape.
pub struct Graph<'a> {
    pub tape: Tape,
    net: &'a AssocNet,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Graph<'a> {
    pub fn net(&self) -> &'a AssocNet {
        self.net
    }

    /// Binds a weight tensor on the tape (once per pass).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.net.params.get(id).clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradients of every bound weight after `tape.backward`, by param index.
    pub fn param_grads(&self) -> Vec<Option<Tensor>> {
        self.bound
            .iter()
            .map(|v| v.and_then(|v| self.tape.grad(v)))
            .collect()
    }

    fn lin(&mut self, x: Var, l: &Lin) -> Result<Var> {
        let w = self.param(l.w);
        let b = self.param(l.b);
        linear(&mut self.tape, x, w, b)
    }

    fn mlp(&mut self, mut x: Var, m: &Mlp) -> Result<Var> {
        let n = m.layers.len();
        for (i, l) in m.layers.iter().enumerate() {
            x = self.lin(x, l)?;
            if i + 1 < n || m.relu_last {
                x = self.tape.relu(x)?;
            }
        }
        Ok(x)
    }

    fn norm(&mut self, x: Var, gb: (ParamId, ParamId)) -> Result<Var> {
        let y = self.tape.layer_norm(x)?;
        let g = self.param(gb.0);
        let b = self.param(gb.1);
        let y = self.tape.mul_row(y, g)?;
        self.tape.add_row(y, b)
    }

    fn attn_weights(&mut self, a: &Attn) -> AttentionWeights {
        AttentionWeights {
            wq: self.param(a.q.w),
            bq: self.param(a.q.b),
            wk: self.param(a.k.w),
            bk: self.param(a.k.b),
            wv: self.param(a.v.w),
            bv: self.param(a.v.b),
            wo: self.param(a.o.w),
            bo: self.param(a.o.b),
            heads: self.net.cfg.heads,
        }
    }

    /// Attention + residual + norm, feed-forward + residual + norm. Returns
    /// the block output and the attention scores.
    fn block(&mut self, x: Var, kv: Var, mask: &[bool], b: &Block) -> Result<(Var, Vec<Var>)> {
        let w = self.attn_weights(&b.attn);
        let att = multi_head_attention(&mut self.tape, x, kv, kv, &w, Some(mask))?;
        let r1 = self.tape.add(x, att.out)?;
        let h = self.norm(r1, b.norm1)?;
        let f = self.lin(h, &b.ff1)?;
        let f = self.tape.relu(f)?;
        let f = self.lin(f, &b.ff2)?;
        let r2 = self.tape.add(h, f)?;
        Ok((self.norm(r2, b.norm2)?, att.logits))
    }

    pub fn input(&mut self, t: &Tensor) -> Var {
        self.tape.constant(t.clone())
    }

    /// Corner point sets to one geometric feature per object. `c2` holds four
    /// rows per object, `c3` eight. Each stream runs through a shared per-point
    /// perceptron and is max-pooled over its points.
    pub fn embed_geometric(&mut self, c2: Var, c3: Var) -> Result<Var> {
        let n = self.tape.value(c2).rows() / 4;
        if self.tape.value(c2).cols() != 2 || self.tape.value(c3).cols() != 3 || self.tape.value(c3).rows() != 8 * n {
            return Err(Error::shape("corner inputs must be 4n x 2 and 8n x 3"));
        }
        let Some(geo) = self.net.layout.geometric.as_ref() else {
            return Ok(self.tape.constant(Tensor::zeros(&[n, self.net.cfg.d])));
        };
        let p2 = self.mlp(c2, &geo.point2d)?;
        let p2 = self.tape.max_pool_rows(p2, 4)?;
        let p3 = self.mlp(c3, &geo.point3d)?;
        let p3 = self.tape.max_pool_rows(p3, 8)?;
        let cat = self.tape.concat(&[p2, p3], Axis::Cols)?;
        self.lin(cat, &geo.mix)
    }

    /// Re-id vector and one-hot category to one appearance feature per object:
    /// a linear map of each, summed.
    pub fn embed_appearance(&mut self, reid: Var, category: Var) -> Result<Var> {
        let n = self.tape.value(reid).rows();
        let cfg = &self.net.cfg;
        if self.tape.value(reid).cols() != cfg.d_reid
            || self.tape.value(category).cols() != cfg.n_categories
            || self.tape.value(category).rows() != n
        {
            return Err(Error::shape("re-id or category input has the wrong width"));
        }
        let Some(app) = self.net.layout.appearance.as_ref() else {
            return Ok(self.tape.constant(Tensor::zeros(&[n, cfg.d])));
        };
        let c = self.lin(category, &app.category)?;
        let r = self.lin(reid, &app.reid)?;
        self.tape.add(c, r)
    }

    pub fn fuse(&mut self, appearance: Var, geometric: Var) -> Result<Var> {
        let cat = self.tape.concat(&[appearance, geometric], Axis::Cols)?;
        let layer = &self.net.layout.fuse;
        let y = self.lin(cat, layer)?;
        self.tape.relu(y)
    }

    /// Self-attention over the valid rows of one frame. Invalid rows are
    /// neither attended to nor updated.
    pub fn spatial_flow(&mut self, fused: Var, mask: &[bool]) -> Result<Var> {
        let n = self.tape.value(fused).rows();
        if mask.len() != n {
            return Err(Error::shape("spatial mask length"));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid("spatial flow on a frame with no valid objects"));
        }
        let attn_mask: Vec<bool> = (0..n).flat_map(|_| mask.iter().copied()).collect();
        let mut x = fused;
        let net = self.net;
        for b in &net.layout.spatial {
            let (y, _) = self.block(x, x, &attn_mask, b)?;
            x = self.tape.select_rows(y, x, mask)?;
        }
        Ok(x)
    }

    /// Time-aware features: each row concatenated with `dt` and passed
    /// through a feed-forward map, added back to the row.
    pub fn motion_modeling(&mut self, spatial_prev: Var, dt: f64) -> Result<Var> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time gap must be positive, got {dt}")));
        }
        let n = self.tape.value(spatial_prev).rows();
        let dtc = self.tape.constant(Tensor::filled(&[n, 1], dt));
        let cat = self.tape.concat(&[spatial_prev, dtc], Axis::Cols)?;
        let net = self.net;
        let f = self.mlp(cat, &net.layout.motion)?;
        self.tape.add(spatial_prev, f)
    }

    /// Cross-attention from current rows to previous rows, stacked in
    /// residual form. The affinity matrix is read from the configured layer's
    /// head-averaged scores through an entrywise feed-forward map.
    pub fn temporal_flow(
        &mut self,
        cur: Var,
        cur_mask: &[bool],
        prev: Var,
        prev_mask: &[bool],
    ) -> Result<TemporalOutput> {
        let (n, m) = (self.tape.value(cur).rows(), self.tape.value(prev).rows());
        if cur_mask.len() != n || prev_mask.len() != m {
            return Err(Error::shape("temporal mask length"));
        }
        if !cur_mask.iter().any(|&v| v) || !prev_mask.iter().any(|&v| v) {
            return Err(Error::invalid("temporal flow needs at least one object in each frame"));
        }
        let attn_mask: Vec<bool> = (0..n).flat_map(|_| prev_mask.iter().copied()).collect();
        let net = self.net;
        let mut x = cur;
        let mut core = None;
        for (li, b) in net.layout.temporal.iter().enumerate() {
            let w = self.attn_weights(&b.attn);
            let att = multi_head_attention(&mut self.tape, x, prev, prev, &w, Some(&attn_mask))?;
            if li + 1 == net.cfg.affinity_layer_index {
                let avg = att.mean_logits(&mut self.tape)?;
                let flat = self.tape.reshape(avg, &[n * m, 1])?;
                let mapped = self.mlp(flat, &net.layout.affinity)?;
                core = Some(self.tape.reshape(mapped, &[n, m])?);
            }
            let r1 = self.tape.add(x, att.out)?;
            let h = self.norm(r1, b.norm1)?;
            let f = self.lin(h, &b.ff1)?;
            let f = self.tape.relu(f)?;
            let f = self.lin(f, &b.ff2)?;
            let r2 = self.tape.add(h, f)?;
            let y = self.norm(r2, b.norm2)?;
            x = self.tape.select_rows(y, x, cur_mask)?;
        }
        let core = core.expect("affinity layer index validated against layer count");
        let birth = self.param(net.layout.birth);
        let death = self.param(net.layout.death);
        let birth_col = self.tape.expand(birth, &[n, 1])?;
        let top = self.tape.concat(&[core, birth_col], Axis::Cols)?;
        let death_row = self.tape.expand(death, &[1, m])?;
        let corner = self.tape.constant(Tensor::zeros(&[1, 1]));
        let bottom = self.tape.concat(&[death_row, corner], Axis::Cols)?;
        let raw = self.tape.concat(&[top, bottom], Axis::Rows)?;

        let valid_rows: Vec<bool> = cur_mask.iter().copied().chain([true]).collect();
        let valid_cols: Vec<bool> = prev_mask.iter().copied().chain([true]).collect();
        let em = entry_mask(&valid_rows, &valid_cols);
        let keep: Vec<f64> = em.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let fill: Vec<f64> = em.iter().map(|&v| if v { 0.0 } else { PAD_LOGIT }).collect();
        let keep = self.tape.constant(Tensor::from_parts(vec![n + 1, m + 1], keep));
        let fill = self.tape.constant(Tensor::from_parts(vec![n + 1, m + 1], fill));
        let kept = self.tape.mul(raw, keep)?;
        let logits = self.tape.add(kept, fill)?;
        Ok(TemporalOutput {
            aggregated: x,
            affinity: AffinityVar {
                logits,
                valid_rows,
                valid_cols,
            },
        })
    }

    pub fn heads(&mut self, aggregated: Var) -> Result<HeadVars> {
        let d = self.net.cfg.d;
        if self.tape.value(aggregated).cols() != d {
            return Err(Error::shape(format!("heads expect {d} columns")));
        }
        let net = self.net;
        Ok(HeadVars {
            velocity: self.mlp(aggregated, &net.layout.velocity)?,
            attribute_logits: self.mlp(aggregated, &net.layout.attribute)?,
            box_refine: self.mlp(aggregated, &net.layout.refine)?,
        })
    }

    /// Cue embedding, fusion and spatial flow for one frame.
    pub fn encode(&mut self, input: &FrameInput) -> Result<EncodedFrame> {
        let c2 = self.input(&input.corners2d);
        let c3 = self.input(&input.corners3d);
        let reid = self.input(&input.reid);
        let cat = self.input(&input.category);
        let g = self.embed_geometric(c2, c3)?;
        let a = self.embed_appearance(reid, cat)?;
        let fused = self.fuse(a, g)?;
        let mask = input.valid_mask();
        let spatial = self.spatial_flow(fused, &mask)?;
        Ok(EncodedFrame { fused, spatial, mask })
    }
}
