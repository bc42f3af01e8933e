//! Text exports: JSONL frames and KITTI-style label lines.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::ObjectState;

use super::GlobalMap;

pub const CATEGORY_NAMES: [&str; 3] = ["Car", "Van", "Truck"];

pub fn category_name(category: u16) -> &'static str {
    CATEGORY_NAMES.get(category as usize).copied().unwrap_or("Misc")
}

/// One KITTI label line: type, truncation, occlusion, alpha, 2D box, h w l,
/// x y z, yaw, and the score when given.
pub fn kitti_line(state: &ObjectState, score: Option<f64>) -> String {
    let [x, y, z] = state.center;
    let [l, w, h] = state.extents;
    let mut line = format!(
        "{} 0 0 -10 0 0 0 0 {h:.2} {w:.2} {l:.2} {x:.2} {y:.2} {z:.2} {:.2}",
        category_name(state.category),
        state.yaw
    );
    if let Some(s) = score {
        line.push_str(&format!(" {s:.4}"));
    }
    line
}

pub fn global_map_kitti(map: &GlobalMap) -> String {
    let mut out = String::new();
    for o in &map.objects {
        out.push_str(&kitti_line(&o.state, Some(o.score)));
        out.push('\n');
    }
    out
}

/// Label lines without scores, as used for training-label dumps.
pub fn labels_kitti(labels: &[ObjectState]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&kitti_line(l, None));
        out.push('\n');
    }
    out
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one JSON document per non-empty line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}
