//! Scenario files: a header line followed by one line per frame.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, ScenarioConfig, WorldFrame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ScenarioRecord {
    Header {
        config: ScenarioConfig,
        seed: u64,
        vehicles: Vec<usize>,
        num_frames: usize,
    },
    Frame(WorldFrame),
}

pub fn write_scenario<W: Write>(mut w: W, scenario: &Scenario) -> Result<()> {
    let header = ScenarioRecord::Header {
        config: scenario.config.clone(),
        seed: scenario.seed,
        vehicles: scenario.vehicles.clone(),
        num_frames: scenario.frames.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for f in &scenario.frames {
        serde_json::to_writer(&mut w, &ScenarioRecord::Frame(f.clone()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scenario<R: BufRead>(r: R) -> Result<Scenario> {
    let records: Vec<ScenarioRecord> = crate::fusion::export::read_jsonl(r)?;
    let mut it = records.into_iter();
    let Some(ScenarioRecord::Header {
        config,
        seed,
        vehicles,
        num_frames,
    }) = it.next()
    else {
        return Err(Error::invalid("scenario file must start with a header record"));
    };
    let mut frames = Vec::with_capacity(num_frames);
    for rec in it {
        match rec {
            ScenarioRecord::Frame(f) => {
                if f.index != frames.len() || f.poses.len() != vehicles.len() {
                    return Err(Error::invalid(format!("frame record {} is out of place", f.index)));
                }
                frames.push(f);
            }
            ScenarioRecord::Header { .. } => return Err(Error::invalid("duplicate header record")),
        }
    }
    if frames.len() != num_frames {
        return Err(Error::invalid(format!("expected {num_frames} frames, found {}", frames.len())));
    }
    Ok(Scenario {
        config,
        seed,
        vehicles,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::generate_scenario;

    #[test]
    fn round_trip() {
        let cfg = ScenarioConfig {
            duration: 1.0,
            num_vehicles: 2,
            num_background: 4,
            ..ScenarioConfig::default()
        };
        let s = generate_scenario(&cfg, 2).unwrap();
        let mut buf = Vec::new();
        write_scenario(&mut buf, &s).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 21);
        assert_eq!(read_scenario(&buf[..]).unwrap(), s);
        let cut = buf.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert!(read_scenario(&buf[cut..]).is_err());
        assert!(read_scenario(&buf[..cut]).is_err());
    }
}
