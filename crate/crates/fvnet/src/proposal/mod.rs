//! Anchor priors, proposal decoding with truncated radial distances, target
//! assignment, the stage-1 loss, and non-maximum suppression.
//!
//! A proposal is a 2D box on the upscaled front-view map plus a radial
//! interval [r1, r2] that cuts the box's view frustum into a finite cylinder
//! fragment. Raw network outputs (t_x, t_y, t_w, t_h, t_r1, t_r2) decode as
//!   b_x = sigmoid(t_x) + c_x    b_w = p_w * exp(t_w)    r1 = t_r1 * R
//!   b_y = sigmoid(t_y) + c_y    b_h = p_h * exp(t_h)    r2 = t_r2 * R
//! against the owning grid cell (c_x, c_y) and anchor prior (p_w, p_h).

mod anchors;
mod loss;

pub use anchors::{cluster_anchors, load_anchors, save_anchors, AnchorIoError, ClusterError};
pub use loss::{
    bce, huber, stage1_loss, LossError, LossWeights, Stage1Loss, Stage1Target, BCE_EPSILON,
};

use crate::fvproj::MapRect;
use crate::geom::Stage1Class;
use std::fmt;

/// Output scales of the proposal network, as map pixels per grid cell.
pub const STRIDES: [usize; 3] = [4, 8, 16];
pub const N_SCALES: usize = 3;

/// A clustered (width, height) template on the upscaled map, owned by one
/// output scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorPrior {
    pub p_w: f64,
    pub p_h: f64,
    pub scale_index: usize,
}

/// One output grid: `stride` map pixels per cell, `rows` x `cols` cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn for_scale(scale_index: usize, map_h: usize, map_w: usize) -> Self {
        let stride = STRIDES[scale_index];
        assert!(
            map_h % stride == 0 && map_w % stride == 0,
            "map dims must be divisible by the stride"
        );
        Self {
            stride,
            rows: map_h / stride,
            cols: map_w / stride,
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Raw per-slot network outputs before decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPrediction {
    pub t_x: f64,
    pub t_y: f64,
    pub t_w: f64,
    pub t_h: f64,
    pub t_r1: f64,
    pub t_r2: f64,
    pub conf_logit: f64,
    pub class_logits: Vec<f64>,
}

/// A decoded 3D proposal: map box + radial interval + scores.
///
/// `b_x`/`b_y` are in grid-cell units of the owning scale; `b_w`/`b_h` in
/// upscaled-map pixels; `stride` records the owning scale so boxes from
/// different scales compare in common pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal3D {
    pub b_x: f64,
    pub b_y: f64,
    pub b_w: f64,
    pub b_h: f64,
    pub r1: f64,
    pub r2: f64,
    pub confidence: f64,
    pub class_scores: Vec<f64>,
    pub stride: usize,
}

impl Proposal3D {
    /// Box in upscaled-map pixel coordinates.
    pub fn map_rect(&self) -> MapRect {
        MapRect {
            cx: self.b_x * self.stride as f64,
            cy: self.b_y * self.stride as f64,
            w: self.b_w,
            h: self.b_h,
        }
    }

    /// Highest-scoring class index; ties go to the lower index.
    pub fn argmax_class(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.class_scores.iter().enumerate() {
            if s > self.class_scores[best] {
                best = i;
            }
        }
        best
    }
}

/// A ground-truth object expressed in proposal terms: its bounding rectangle
/// on the upscaled map, radial interval, and stage-1 class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtBox {
    pub rect: MapRect,
    pub r1: f64,
    pub r2: f64,
    pub class: Stage1Class,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Decode raw outputs at grid cell (c_x, c_y) against a prior.
pub fn decode(
    raw: &RawPrediction,
    cell: (usize, usize),
    prior: &AnchorPrior,
    stride: usize,
    r_max: f64,
) -> Proposal3D {
    Proposal3D {
        b_x: sigmoid(raw.t_x) + cell.0 as f64,
        b_y: sigmoid(raw.t_y) + cell.1 as f64,
        b_w: prior.p_w * raw.t_w.exp(),
        b_h: prior.p_h * raw.t_h.exp(),
        r1: raw.t_r1 * r_max,
        r2: raw.t_r2 * r_max,
        confidence: sigmoid(raw.conf_logit),
        class_scores: raw.class_logits.iter().map(|&l| sigmoid(l)).collect(),
        stride,
    }
}

#[derive(Debug, PartialEq)]
pub enum EncodeError {
    /// b_x - c_x or b_y - c_y at or outside (0, 1): the sigmoid inverse is
    /// unbounded there.
    OffsetOutOfRange { axis: char, value: f64 },
    NonpositiveSize { axis: char, value: f64 },
}

impl fmt::Display for EncodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncodeError::OffsetOutOfRange { axis, value } => {
                write!(f, "cell offset along {axis} is {value}, not inside (0, 1)")
            }
            EncodeError::NonpositiveSize { axis, value } => {
                write!(f, "box size along {axis} is {value}, must be positive")
            }
        }
    }
}

impl std::error::Error for EncodeError {}

/// Inverse of [`decode`]; builds regression targets. Confidence and class
/// scores are clamped to (0, 1) one ulp-scale inside the endpoints before
/// inversion, so hard 0/1 scores stay finite.
pub fn encode(
    p: &Proposal3D,
    cell: (usize, usize),
    prior: &AnchorPrior,
    r_max: f64,
) -> Result<RawPrediction, EncodeError> {
    let off_x = p.b_x - cell.0 as f64;
    let off_y = p.b_y - cell.1 as f64;
    for (axis, off) in [('x', off_x), ('y', off_y)] {
        if off <= 0.0 || off >= 1.0 {
            return Err(EncodeError::OffsetOutOfRange { axis, value: off });
        }
    }
    for (axis, size) in [('w', p.b_w), ('h', p.b_h)] {
        if size <= 0.0 {
            return Err(EncodeError::NonpositiveSize { axis, value: size });
        }
    }
    let squash = |s: f64| logit(s.clamp(1e-12, 1.0 - 1e-12));
    Ok(RawPrediction {
        t_x: logit(off_x),
        t_y: logit(off_y),
        t_w: (p.b_w / prior.p_w).ln(),
        t_h: (p.b_h / prior.p_h).ln(),
        t_r1: p.r1 / r_max,
        t_r2: p.r2 / r_max,
        conf_logit: squash(p.confidence),
        class_logits: p.class_scores.iter().map(|&s| squash(s)).collect(),
    })
}

/// Intersection over union of two axis-aligned map rectangles.
pub fn iou_2d_axis_aligned(a: &MapRect, b: &MapRect) -> f64 {
    let overlap = |alo: f64, ahi: f64, blo: f64, bhi: f64| (ahi.min(bhi) - alo.max(blo)).max(0.0);
    let ix = overlap(
        a.cx - a.w / 2.0,
        a.cx + a.w / 2.0,
        b.cx - b.w / 2.0,
        b.cx + b.w / 2.0,
    );
    let iy = overlap(
        a.cy - a.h / 2.0,
        a.cy + a.h / 2.0,
        b.cy - b.h / 2.0,
        b.cy + b.h / 2.0,
    );
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// State of one (scale, cell, prior) slot after target assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotState {
    Negative,
    /// Overlaps a ground truth beyond the ignore threshold without being
    /// its best prior; contributes to no loss term.
    Ignored,
    Positive {
        gt: usize,
    },
}

/// A positive slot location, for iteration in deterministic order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositiveSlot {
    pub scale: usize,
    pub row: usize,
    pub col: usize,
    pub prior: usize,
    pub gt: usize,
}

/// Per-slot states for every scale; slot index is row-major
/// `(row * cols + col) * priors_per_scale + prior`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetAssignment {
    pub grids: Vec<GridSpec>,
    pub priors_per_scale: usize,
    pub slots: Vec<Vec<SlotState>>,
}

impl TargetAssignment {
    pub fn slot(&self, scale: usize, row: usize, col: usize, prior: usize) -> SlotState {
        let g = &self.grids[scale];
        self.slots[scale][(row * g.cols + col) * self.priors_per_scale + prior]
    }

    /// All positives in (scale, row, col, prior) order.
    pub fn positives(&self) -> Vec<PositiveSlot> {
        let mut out = Vec::new();
        for (scale, slots) in self.slots.iter().enumerate() {
            let g = &self.grids[scale];
            for (i, s) in slots.iter().enumerate() {
                if let SlotState::Positive { gt } = *s {
                    let cell = i / self.priors_per_scale;
                    out.push(PositiveSlot {
                        scale,
                        row: cell / g.cols,
                        col: cell % g.cols,
                        prior: i % self.priors_per_scale,
                        gt,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, PartialEq)]
pub enum AssignError {
    OutsideMap { gt: usize },
    EmptyGtBox { gt: usize },
    /// Every prior's slot for this ground truth is already taken.
    NoFreeSlot { gt: usize },
    BadPriorCount { count: usize },
}

impl fmt::Display for AssignError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssignError::OutsideMap { gt } => write!(f, "ground truth {gt} lies outside the map"),
            AssignError::EmptyGtBox { gt } => write!(f, "ground truth {gt} has a degenerate box"),
            AssignError::NoFreeSlot { gt } => {
                write!(f, "ground truth {gt} found all candidate slots taken")
            }
            AssignError::BadPriorCount { count } => {
                write!(f, "{count} priors cannot split evenly across {N_SCALES} scales")
            }
        }
    }
}

impl std::error::Error for AssignError {}

/// Shape-only IoU: both boxes centered at the origin.
fn shape_iou(w1: f64, h1: f64, w2: f64, h2: f64) -> f64 {
    let inter = w1.min(w2) * h1.min(h2);
    inter / (w1 * h1 + w2 * h2 - inter)
}

/// Assign every ground truth to exactly one (scale, cell, prior) slot.
///
/// The best prior is the shape-only IoU argmax over all priors (ties to the
/// lower prior index); the cell comes from the ground-truth center at that
/// prior's scale. If the slot is already taken by an earlier ground truth,
/// the next-best prior is tried. Afterwards, any negative slot whose prior
/// box placed at its cell center overlaps some ground truth above
/// `ignore_iou` is marked ignored.
pub fn assign_targets(
    gts: &[GtBox],
    priors: &[AnchorPrior],
    map_h: usize,
    map_w: usize,
    ignore_iou: f64,
) -> Result<TargetAssignment, AssignError> {
    if priors.is_empty() || priors.len() % N_SCALES != 0 {
        return Err(AssignError::BadPriorCount {
            count: priors.len(),
        });
    }
    let per_scale = priors.len() / N_SCALES;
    // Priors grouped by scale, local order = global order within the scale.
    let mut by_scale: Vec<Vec<(usize, AnchorPrior)>> = vec![Vec::new(); N_SCALES];
    for (gi, p) in priors.iter().enumerate() {
        by_scale[p.scale_index].push((gi, *p));
    }
    if by_scale.iter().any(|v| v.len() != per_scale) {
        return Err(AssignError::BadPriorCount {
            count: priors.len(),
        });
    }
    let grids: Vec<GridSpec> = (0..N_SCALES)
        .map(|s| GridSpec::for_scale(s, map_h, map_w))
        .collect();
    let mut slots: Vec<Vec<SlotState>> = grids
        .iter()
        .map(|g| vec![SlotState::Negative; g.cells() * per_scale])
        .collect();

    for (gi, gt) in gts.iter().enumerate() {
        if !(gt.rect.w > 0.0 && gt.rect.h > 0.0) {
            return Err(AssignError::EmptyGtBox { gt: gi });
        }
        if gt.rect.cx < 0.0
            || gt.rect.cy < 0.0
            || gt.rect.cx >= map_w as f64
            || gt.rect.cy >= map_h as f64
        {
            return Err(AssignError::OutsideMap { gt: gi });
        }
        // Rank priors by shape IoU descending, global index ascending.
        let mut ranked: Vec<(f64, usize)> = priors
            .iter()
            .enumerate()
            .map(|(i, p)| (shape_iou(gt.rect.w, gt.rect.h, p.p_w, p.p_h), i))
            .collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

        let mut placed = false;
        for &(_, global) in &ranked {
            let prior = &priors[global];
            let scale = prior.scale_index;
            let local = by_scale[scale]
                .iter()
                .position(|&(g, _)| g == global)
                .unwrap();
            let g = &grids[scale];
            let col = ((gt.rect.cx / g.stride as f64) as usize).min(g.cols - 1);
            let row = ((gt.rect.cy / g.stride as f64) as usize).min(g.rows - 1);
            let idx = (row * g.cols + col) * per_scale + local;
            if matches!(slots[scale][idx], SlotState::Positive { .. }) {
                continue;
            }
            slots[scale][idx] = SlotState::Positive { gt: gi };
            placed = true;
            break;
        }
        if !placed {
            return Err(AssignError::NoFreeSlot { gt: gi });
        }
    }

    // Ignore pass: prior boxes at cell centers vs ground truths.
    for gt in gts {
        for scale in 0..N_SCALES {
            let g = &grids[scale];
            for row in 0..g.rows {
                for col in 0..g.cols {
                    for (local, &(_, p)) in by_scale[scale].iter().enumerate() {
                        let idx = (row * g.cols + col) * per_scale + local;
                        if slots[scale][idx] != SlotState::Negative {
                            continue;
                        }
                        let anchor = MapRect {
                            cx: (col as f64 + 0.5) * g.stride as f64,
                            cy: (row as f64 + 0.5) * g.stride as f64,
                            w: p.p_w,
                            h: p.p_h,
                        };
                        if iou_2d_axis_aligned(&anchor, &gt.rect) > ignore_iou {
                            slots[scale][idx] = SlotState::Ignored;
                        }
                    }
                }
            }
        }
    }

    Ok(TargetAssignment {
        grids,
        priors_per_scale: per_scale,
        slots,
    })
}

/// Greedy NMS over map rectangles; returns kept input indices in descending
/// confidence order (ties by input index). Proposals below
/// `score_threshold` are dropped first.
pub fn nms_indices(
    proposals: &[Proposal3D],
    iou_threshold: f64,
    score_threshold: f64,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proposals.len())
        .filter(|&i| proposals[i].confidence >= score_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .confidence
            .partial_cmp(&proposals[a].confidence)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let rect = proposals[i].map_rect();
        let suppressed = kept
            .iter()
            .any(|&k| iou_2d_axis_aligned(&rect, &proposals[k].map_rect()) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// NMS returning the kept proposals themselves.
pub fn nms(proposals: &[Proposal3D], iou_threshold: f64, score_threshold: f64) -> Vec<Proposal3D> {
    nms_indices(proposals, iou_threshold, score_threshold)
        .into_iter()
        .map(|i| proposals[i].clone())
        .collect()
}

/// Per-class NMS: proposals are partitioned by argmax class so an object of
/// one class never suppresses an overlapping object of the other; the kept
/// union is re-sorted by confidence.
pub fn nms_per_class(
    proposals: &[Proposal3D],
    n_class: usize,
    iou_threshold: f64,
    score_threshold: f64,
) -> Vec<Proposal3D> {
    let mut kept: Vec<usize> = Vec::new();
    for class in 0..n_class {
        let member: Vec<usize> = (0..proposals.len())
            .filter(|&i| proposals[i].argmax_class() == class)
            .collect();
        let subset: Vec<Proposal3D> = member.iter().map(|&i| proposals[i].clone()).collect();
        for k in nms_indices(&subset, iou_threshold, score_threshold) {
            kept.push(member[k]);
        }
    }
    kept.sort_by(|&a, &b| {
        proposals[b]
            .confidence
            .partial_cmp(&proposals[a].confidence)
            .unwrap()
            .then(a.cmp(&b))
    });
    kept.into_iter().map(|i| proposals[i].clone()).collect()
}

/// Flat per-scale head output in `[row][col][prior][channel]` order with
/// channels `[t_x, t_y, t_w, t_h, t_r1, t_r2, conf, class...]`. This matches
/// the row-major HWC layout the network emits, so head tensors convert
/// without reshuffling.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTensor {
    pub grid: GridSpec,
    pub priors: usize,
    pub n_class: usize,
    pub data: Vec<f64>,
}

pub const CHAN_TX: usize = 0;
pub const CHAN_TY: usize = 1;
pub const CHAN_TW: usize = 2;
pub const CHAN_TH: usize = 3;
pub const CHAN_TR1: usize = 4;
pub const CHAN_TR2: usize = 5;
pub const CHAN_CONF: usize = 6;
pub const CHAN_CLASS0: usize = 7;

impl HeadTensor {
    pub fn channels_per_prior(&self) -> usize {
        CHAN_CLASS0 + self.n_class
    }

    pub fn zeros(grid: GridSpec, priors: usize, n_class: usize) -> Self {
        let len = grid.cells() * priors * (CHAN_CLASS0 + n_class);
        Self {
            grid,
            priors,
            n_class,
            data: vec![0.0; len],
        }
    }

    pub fn offset(&self, row: usize, col: usize, prior: usize) -> usize {
        ((row * self.grid.cols + col) * self.priors + prior) * self.channels_per_prior()
    }

    pub fn raw_at(&self, row: usize, col: usize, prior: usize) -> RawPrediction {
        let o = self.offset(row, col, prior);
        RawPrediction {
            t_x: self.data[o + CHAN_TX],
            t_y: self.data[o + CHAN_TY],
            t_w: self.data[o + CHAN_TW],
            t_h: self.data[o + CHAN_TH],
            t_r1: self.data[o + CHAN_TR1],
            t_r2: self.data[o + CHAN_TR2],
            conf_logit: self.data[o + CHAN_CONF],
            class_logits: (0..self.n_class)
                .map(|c| self.data[o + CHAN_CLASS0 + c])
                .collect(),
        }
    }

    pub fn set_raw(&mut self, row: usize, col: usize, prior: usize, raw: &RawPrediction) {
        let o = self.offset(row, col, prior);
        self.data[o + CHAN_TX] = raw.t_x;
        self.data[o + CHAN_TY] = raw.t_y;
        self.data[o + CHAN_TW] = raw.t_w;
        self.data[o + CHAN_TH] = raw.t_h;
        self.data[o + CHAN_TR1] = raw.t_r1;
        self.data[o + CHAN_TR2] = raw.t_r2;
        self.data[o + CHAN_CONF] = raw.conf_logit;
        for (c, &l) in raw.class_logits.iter().enumerate() {
            self.data[o + CHAN_CLASS0 + c] = l;
        }
    }
}

/// Decode every slot of every head, in (scale, row, col, prior) order.
/// `priors_by_scale[s]` lists the priors owned by scale s in local order.
pub fn decode_heads(
    heads: &[HeadTensor],
    priors_by_scale: &[Vec<AnchorPrior>],
    r_max: f64,
) -> Vec<Proposal3D> {
    let mut out = Vec::new();
    for (scale, head) in heads.iter().enumerate() {
        let g = head.grid;
        for row in 0..g.rows {
            for col in 0..g.cols {
                for prior in 0..head.priors {
                    let raw = head.raw_at(row, col, prior);
                    out.push(decode(
                        &raw,
                        (col, row),
                        &priors_by_scale[scale][prior],
                        g.stride,
                        r_max,
                    ));
                }
            }
        }
    }
    out
}

/// Split a flat prior list into per-scale local lists (global order kept).
pub fn priors_by_scale(priors: &[AnchorPrior]) -> Vec<Vec<AnchorPrior>> {
    let mut by_scale: Vec<Vec<AnchorPrior>> = vec![Vec::new(); N_SCALES];
    for p in priors {
        by_scale[p.scale_index].push(*p);
    }
    by_scale
}
