//! Datasets on disk and detection files.
//!
//! A dataset directory holds `manifest.json` and one `<id>.raw` file per
//! image with `width * height` row-major 8-bit gray values:
//!
//! ```json
//! {"classes": ["tank", "vehicle", "ship"],
//!  "samples": [{"id": "000000", "width": 128, "height": 128,
//!               "objects": [{"obb": {"cx": 40.0, "cy": 52.5, "w": 30.0, "h": 9.0, "theta": 0.4},
//!                            "class_id": 2, "difficult": false}]}]}
//! ```
//!
//! Detections are JSON lines, one [`DetectionRecord`] per line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synthetic::{generate_scene, SceneSpec};
use super::Object;
use crate::assign::mix_seed;
use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::heads::Detection;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    #[serde(skip)]
    pub pixels: Vec<u8>,
    pub objects: Vec<Object>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// `count` scenes drawn from `spec`, scene `i` seeded with
    /// `mix_seed(spec.seed, i)`.
    pub fn synthetic(spec: &SceneSpec, count: usize) -> Result<Self> {
        let mut samples = Vec::with_capacity(count);
        for i in 0..count {
            let scene = generate_scene(&SceneSpec {
                seed: mix_seed(spec.seed, i as u64),
                ..spec.clone()
            })?;
            samples.push(Sample {
                id: format!("{i:06}"),
                width: scene.width,
                height: scene.height,
                pixels: scene.pixels,
                objects: scene.objects,
            });
        }
        Ok(Self {
            classes: spec.classes.iter().map(|c| c.name.clone()).collect(),
            samples,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for s in &self.samples {
            fs::write(dir.join(format!("{}.raw", s.id)), &s.pixels)?;
        }
        fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut ds: Dataset = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        for s in &mut ds.samples {
            s.pixels = fs::read(dir.join(format!("{}.raw", s.id)))?;
            if s.pixels.len() != s.width * s.height {
                return Err(Error::Shape(format!(
                    "{}.raw has {} bytes, expected {}",
                    s.id,
                    s.pixels.len(),
                    s.width * s.height
                )));
            }
            if let Some(o) = s.objects.iter().find(|o| o.class_id >= ds.classes.len()) {
                return Err(Error::Config(format!("{}: class id {} out of range", s.id, o.class_id)));
            }
        }
        Ok(ds)
    }

    pub fn ground_truth(&self) -> Vec<Vec<Object>> {
        self.samples.iter().map(|s| s.objects.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class: String,
    pub score: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl DetectionRecord {
    pub fn new(image_id: &str, classes: &[String], d: &Detection) -> Self {
        Self {
            image_id: image_id.to_string(),
            class: classes.get(d.class_id).cloned().unwrap_or_else(|| d.class_id.to_string()),
            score: d.score,
            cx: d.obb.cx,
            cy: d.obb.cy,
            w: d.obb.w,
            h: d.obb.h,
            theta: d.obb.theta,
        }
    }

    /// Resolves the class name against `classes`.
    pub fn to_detection(&self, classes: &[String]) -> Result<Detection> {
        let class_id = classes
            .iter()
            .position(|c| *c == self.class)
            .ok_or_else(|| Error::Eval(format!("unknown class {:?}", self.class)))?;
        Ok(Detection {
            obb: OrientedBox::new(self.cx, self.cy, self.w, self.h, self.theta),
            score: self.score,
            class_id,
        })
    }
}

pub fn write_detections<W: Write>(mut out: W, records: &[DetectionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_detections<R: std::io::Read>(input: R) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let spec = SceneSpec {
            width: 32,
            height: 32,
            long_edge: [8.0, 12.0],
            min_short_edge: 3.0,
            max_instances: 2,
            seed: 5,
            ..SceneSpec::default()
        };
        let ds = Dataset::synthetic(&spec, 3).unwrap();
        let dir = std::env::temp_dir().join(format!("obbdet-ds-{}", std::process::id()));
        ds.save(&dir).unwrap();
        let back = Dataset::load(&dir).unwrap();
        fs::remove_dir_all(&dir).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn detection_lines_round_trip() {
        let classes = vec!["a".to_string(), "b".to_string()];
        let d = Detection {
            obb: OrientedBox::new(1.5, 2.0, 8.0, 3.0, -0.25),
            score: 0.75,
            class_id: 1,
        };
        let mut buf = Vec::new();
        write_detections(&mut buf, &[DetectionRecord::new("x", &classes, &d)]).unwrap();
        let back = read_detections(&buf[..]).unwrap();
        assert_eq!(back[0].to_detection(&classes).unwrap(), d);
    }
}
