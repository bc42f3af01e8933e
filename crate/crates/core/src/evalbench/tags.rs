//! Benchmark slices: range to the nearest sensing vehicle, occlusion, and
//! per-frame witness density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{IouKind, ObjectState, Point2};
use crate::simworld::{VisibleObject, WorldFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RangeClass {
    #[serde(rename = "SR")]
    Short,
    #[serde(rename = "MR")]
    Middle,
    #[serde(rename = "LR")]
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OcclusionClass {
    #[serde(rename = "NO")]
    None,
    #[serde(rename = "PO")]
    Partial,
    #[serde(rename = "LO")]
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DensityClass {
    #[serde(rename = "LD")]
    Low,
    #[serde(rename = "HD")]
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BenchmarkTag {
    pub range: RangeClass,
    pub occlusion: OcclusionClass,
    pub density: DensityClass,
}

/// The eight reported slices, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slice {
    SR,
    MR,
    LR,
    NO,
    PO,
    LO,
    LD,
    HD,
}

impl Slice {
    pub const ALL: [Slice; 8] = [
        Slice::SR,
        Slice::MR,
        Slice::LR,
        Slice::NO,
        Slice::PO,
        Slice::LO,
        Slice::LD,
        Slice::HD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slice::SR => "SR",
            Slice::MR => "MR",
            Slice::LR => "LR",
            Slice::NO => "NO",
            Slice::PO => "PO",
            Slice::LO => "LO",
            Slice::LD => "LD",
            Slice::HD => "HD",
        }
    }

    pub fn contains(self, tag: &BenchmarkTag) -> bool {
        match self {
            Slice::SR => tag.range == RangeClass::Short,
            Slice::MR => tag.range == RangeClass::Middle,
            Slice::LR => tag.range == RangeClass::Long,
            Slice::NO => tag.occlusion == OcclusionClass::None,
            Slice::PO => tag.occlusion == OcclusionClass::Partial,
            Slice::LO => tag.occlusion == OcclusionClass::Large,
            Slice::LD => tag.density == DensityClass::Low,
            Slice::HD => tag.density == DensityClass::High,
        }
    }

    /// Whether a false positive with this range and frame density counts
    /// against the slice. False positives have no occlusion, so they count
    /// against every occlusion slice.
    pub fn admits_false_positive(self, range: RangeClass, density: DensityClass) -> bool {
        match self {
            Slice::SR | Slice::MR | Slice::LR => self.contains(&BenchmarkTag {
                range,
                occlusion: OcclusionClass::None,
                density,
            }),
            Slice::NO | Slice::PO | Slice::LO => true,
            Slice::LD => density == DensityClass::Low,
            Slice::HD => density == DensityClass::High,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalThresholds {
    pub iou: f64,
    pub iou_kind: IouKind,
    pub short_range: f64,
    pub middle_range: f64,
    pub no_occlusion: f64,
    pub partial_occlusion: f64,
    /// Witnesses needed for a frame to count as dense.
    pub dense_witnesses: usize,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self {
            iou: 0.7,
            iou_kind: IouKind::Bev,
            short_range: 20.0,
            middle_range: 50.0,
            no_occlusion: 0.1,
            partial_occlusion: 0.5,
            dense_witnesses: 3,
        }
    }
}

impl EvalThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou > 0.0 && self.iou <= 1.0) {
            return Err(Error::invalid("evaluation IoU must lie in (0, 1]"));
        }
        if !(0.0 < self.short_range && self.short_range <= self.middle_range) {
            return Err(Error::invalid("range cutoffs must be positive and ordered"));
        }
        if !(0.0 < self.no_occlusion && self.no_occlusion <= self.partial_occlusion && self.partial_occlusion <= 1.0) {
            return Err(Error::invalid("occlusion cutoffs must be ordered inside (0, 1]"));
        }
        if self.dense_witnesses == 0 {
            return Err(Error::invalid("dense_witnesses must be at least 1"));
        }
        Ok(())
    }

    pub fn range_class(&self, distance: f64) -> RangeClass {
        if distance < self.short_range {
            RangeClass::Short
        } else if distance < self.middle_range {
            RangeClass::Middle
        } else {
            RangeClass::Long
        }
    }

    pub fn occlusion_class(&self, occlusion: f64) -> OcclusionClass {
        if occlusion < self.no_occlusion {
            OcclusionClass::None
        } else if occlusion < self.partial_occlusion {
            OcclusionClass::Partial
        } else {
            OcclusionClass::Large
        }
    }
}

/// The truths of one frame: every object some vehicle can see, with tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame: usize,
    pub ids: Vec<usize>,
    pub objects: Vec<ObjectState>,
    pub tags: Vec<BenchmarkTag>,
    pub density: DensityClass,
    /// Sensing vehicle positions, used to range-tag predictions.
    pub vehicle_positions: Vec<Point2>,
}

impl FrameTruth {
    /// Range class of an arbitrary point by distance to the nearest vehicle.
    pub fn range_of(&self, p: Point2, th: &EvalThresholds) -> RangeClass {
        let d = self
            .vehicle_positions
            .iter()
            .map(|v| (p[0] - v[0]).hypot(p[1] - v[1]))
            .fold(f64::INFINITY, f64::min);
        th.range_class(d)
    }

    /// Truths whose centers satisfy `keep`.
    pub fn restrict(&self, keep: impl Fn(Point2) -> bool) -> FrameTruth {
        let idx: Vec<usize> = (0..self.objects.len())
            .filter(|&i| keep([self.objects[i].center[0], self.objects[i].center[1]]))
            .collect();
        FrameTruth {
            frame: self.frame,
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            objects: idx.iter().map(|&i| self.objects[i]).collect(),
            tags: idx.iter().map(|&i| self.tags[i]).collect(),
            density: self.density,
            vehicle_positions: self.vehicle_positions.clone(),
        }
    }
}

/// Tags every object visible to at least one sensing vehicle.
///
/// Range uses the distance to the nearest other sensing vehicle, occlusion
/// the least occluded view, and the whole frame is dense when some object
/// sits in at least `dense_witnesses` visible sets.
pub fn tag_objects(frame: &WorldFrame, vehicles: &[usize], visible: &[Vec<VisibleObject>], th: &EvalThresholds) -> FrameTruth {
    let n = frame.objects.len();
    let mut witnesses = vec![0usize; n];
    let mut best_occ = vec![f64::INFINITY; n];
    for set in visible {
        for v in set {
            witnesses[v.object] += 1;
            best_occ[v.object] = best_occ[v.object].min(v.occlusion);
        }
    }
    let density = if witnesses.iter().any(|&w| w >= th.dense_witnesses) {
        DensityClass::High
    } else {
        DensityClass::Low
    };
    let positions: Vec<Point2> = vehicles
        .iter()
        .map(|&v| [frame.objects[v].center[0], frame.objects[v].center[1]])
        .collect();
    let ids: Vec<usize> = (0..n).filter(|&i| witnesses[i] > 0).collect();
    let tags = ids
        .iter()
        .map(|&i| {
            let o = &frame.objects[i];
            let d = vehicles
                .iter()
                .zip(&positions)
                .filter(|(&v, _)| v != i)
                .map(|(_, p)| (o.center[0] - p[0]).hypot(o.center[1] - p[1]))
                .fold(f64::INFINITY, f64::min);
            BenchmarkTag {
                range: th.range_class(d),
                occlusion: th.occlusion_class(best_occ[i]),
                density,
            }
        })
        .collect();
    FrameTruth {
        frame: frame.index,
        objects: ids.iter().map(|&i| frame.objects[i]).collect(),
        ids,
        tags,
        density,
        vehicle_positions: positions,
    }
}
