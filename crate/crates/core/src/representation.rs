//! Motion states, the constant-velocity / constant-scaling (CV-CS) reference
//! trajectory, and the residual offsets the network regresses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of trailing adjacent-frame differences averaged by
/// [`cvcs_statistics`].
pub const CVCS_DIFFS: usize = 5;

/// Center-format box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Corner-format box `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    /// Validated constructor; width and height must be positive.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox { x, y, w, h })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoundingBox {
            x: a[0],
            y: a[1],
            w: a[2],
            h: a[3],
        }
    }

    pub fn to_corners(self) -> CornerBox {
        CornerBox {
            x1: self.x - self.w / 2.0,
            y1: self.y - self.h / 2.0,
            x2: self.x + self.w / 2.0,
            y2: self.y + self.h / 2.0,
        }
    }

    pub fn from_corners(c: CornerBox) -> Self {
        BoundingBox {
            x: (c.x1 + c.x2) / 2.0,
            y: (c.y1 + c.y2) / 2.0,
            w: c.x2 - c.x1,
            h: c.y2 - c.y1,
        }
    }
}

impl CornerBox {
    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Box plus adjacent-frame deltas: `(x, y, w, h, vx, vy, dw, dh)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionState {
    pub bbox: BoundingBox,
    pub vx: f64,
    pub vy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl MotionState {
    pub const DIM: usize = 8;

    pub fn to_array(self) -> [f64; 8] {
        let b = self.bbox;
        [b.x, b.y, b.w, b.h, self.vx, self.vy, self.dw, self.dh]
    }
}

/// Per-frame motion states. The first frame has zero deltas.
pub fn to_motion_states(boxes: &[BoundingBox]) -> Result<Vec<MotionState>> {
    if boxes.len() < 2 {
        return Err(Error::Domain(format!(
            "motion states need at least 2 boxes, got {}",
            boxes.len()
        )));
    }
    let mut out = Vec::with_capacity(boxes.len());
    out.push(MotionState {
        bbox: boxes[0],
        vx: 0.0,
        vy: 0.0,
        dw: 0.0,
        dh: 0.0,
    });
    for pair in boxes.windows(2) {
        let (prev, cur) = (pair[0], pair[1]);
        out.push(MotionState {
            bbox: cur,
            vx: cur.x - prev.x,
            vy: cur.y - prev.y,
            dw: cur.w - prev.w,
            dh: cur.h - prev.h,
        });
    }
    Ok(out)
}

/// Mean recent velocity and mean relative scale rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvCsStats {
    pub vx: f64,
    pub vy: f64,
    /// Mean of `(w_t − w_{t−1}) / w_{t−1}`.
    pub w_rate: f64,
    pub h_rate: f64,
}

impl CvCsStats {
    pub const ZERO: CvCsStats = CvCsStats {
        vx: 0.0,
        vy: 0.0,
        w_rate: 0.0,
        h_rate: 0.0,
    };
}

/// Averages over the last [`CVCS_DIFFS`] adjacent-frame differences (or
/// all of them when the window is shorter).
pub fn cvcs_statistics(boxes: &[BoundingBox]) -> Result<CvCsStats> {
    if boxes.len() < 2 {
        return Err(Error::Domain(format!(
            "CV-CS statistics need at least 2 boxes, got {}",
            boxes.len()
        )));
    }
    if let Some(b) = boxes.iter().find(|b| !(b.w > 0.0 && b.h > 0.0)) {
        return Err(Error::InvalidBox {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        });
    }
    let start = boxes.len().saturating_sub(CVCS_DIFFS + 1);
    let tail = &boxes[start..];
    let n = (tail.len() - 1) as f64;
    let mut s = CvCsStats::ZERO;
    for pair in tail.windows(2) {
        let (p, c) = (pair[0], pair[1]);
        s.vx += c.x - p.x;
        s.vy += c.y - p.y;
        s.w_rate += (c.w - p.w) / p.w;
        s.h_rate += (c.h - p.h) / p.h;
    }
    s.vx /= n;
    s.vy /= n;
    s.w_rate /= n;
    s.h_rate /= n;
    Ok(s)
}

/// Future boxes extrapolated from the last observed box.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub boxes: Vec<BoundingBox>,
}

/// `x̂(τ) = x_T + v̄x·τ`, `ŵ(τ) = w_T·(1 + w̄)^τ`, likewise for y and h,
/// for τ = 1..=n.
pub fn cvcs_reference(last: BoundingBox, stats: CvCsStats, n: usize) -> Result<ReferenceTrajectory> {
    if n == 0 {
        return Err(Error::Domain("reference horizon must be >= 1".into()));
    }
    let gw = 1.0 + stats.w_rate;
    let gh = 1.0 + stats.h_rate;
    for g in [gw, gh] {
        if !(g > 0.0) {
            return Err(Error::DegenerateScale(g));
        }
    }
    let boxes = (1..=n)
        .map(|tau| {
            let t = tau as f64;
            BoundingBox {
                x: last.x + stats.vx * t,
                y: last.y + stats.vy * t,
                w: last.w * gw.powi(tau as i32),
                h: last.h * gh.powi(tau as i32),
            }
        })
        .collect();
    Ok(ReferenceTrajectory { boxes })
}

/// Reference trajectory continuing an observation window.
pub fn reference_for_window(obs: &[BoundingBox], n: usize) -> Result<ReferenceTrajectory> {
    let stats = cvcs_statistics(obs)?;
    cvcs_reference(*obs.last().expect("checked by statistics"), stats, n)
}

/// Per-step `(Δx, Δy, Δw, Δh)` residuals relative to a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSequence {
    pub offsets: Vec<[f64; 4]>,
}

impl OffsetSequence {
    pub fn zeros(n: usize) -> Self {
        OffsetSequence {
            offsets: vec![[0.0; 4]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.offsets.iter().flatten().copied().collect()
    }
}

/// Ground truth minus reference, componentwise.
pub fn offsets_from_targets(
    reference: &ReferenceTrajectory,
    gt: &[BoundingBox],
) -> Result<OffsetSequence> {
    if reference.boxes.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "reference vs ground truth",
            left: reference.boxes.len(),
            right: gt.len(),
        });
    }
    let offsets = reference
        .boxes
        .iter()
        .zip(gt)
        .map(|(r, g)| [g.x - r.x, g.y - r.y, g.w - r.w, g.h - r.h])
        .collect();
    Ok(OffsetSequence { offsets })
}

/// Reference plus offsets, componentwise. Nothing is clamped.
pub fn boxes_from_offsets(
    reference: &ReferenceTrajectory,
    offsets: &OffsetSequence,
) -> Result<Vec<BoundingBox>> {
    if reference.boxes.len() != offsets.len() {
        return Err(Error::LengthMismatch {
            what: "reference vs offsets",
            left: reference.boxes.len(),
            right: offsets.len(),
        });
    }
    Ok(reference
        .boxes
        .iter()
        .zip(&offsets.offsets)
        .map(|(r, o)| BoundingBox {
            x: r.x + o[0],
            y: r.y + o[1],
            w: r.w + o[2],
            h: r.h + o[3],
        })
        .collect())
}
