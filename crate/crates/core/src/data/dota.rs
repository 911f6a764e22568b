//! DOTA annotation text: one object per line,
//! `x1 y1 x2 y2 x3 y3 x4 y4 category difficulty`.
//!
//! Leading metadata lines such as `imagesource:GoogleEarth` or `gsd:0.13`
//! are skipped: before the first object, a line is metadata when its first
//! token is not a number. Blank lines are skipped anywhere. LF and CRLF
//! line endings are both accepted.

use crate::error::{Error, Result};
use crate::geometry::{min_area_rect, OrientedBox, Point, Polygon4};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    /// Corners reordered counter-clockwise.
    pub polygon: Polygon4,
    pub category: String,
    pub difficulty: u8,
}

impl AnnotationRecord {
    /// The minimum-area rectangle of the polygon.
    pub fn to_obb(&self) -> Result<OrientedBox> {
        min_area_rect(&self.polygon)
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Annotation {
        line,
        message: message.into(),
    }
}

pub fn parse_dota(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if out.is_empty() && tokens[0].parse::<f64>().is_err() {
            continue;
        }
        if tokens.len() != 10 {
            return Err(err(lineno, format!("expected 10 fields, found {}", tokens.len())));
        }
        let mut coords = [0.0f64; 8];
        for (k, t) in tokens[..8].iter().enumerate() {
            let v: f64 = t
                .parse()
                .map_err(|_| err(lineno, format!("coordinate {} is not a number: {t:?}", k + 1)))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("coordinate {} is not finite", k + 1)));
            }
            coords[k] = v;
        }
        let difficulty = match tokens[9] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(lineno, format!("difficulty must be 0 or 1, found {other:?}"))),
        };
        let pts = [0, 1, 2, 3].map(|k| Point::new(coords[2 * k], coords[2 * k + 1]));
        out.push(AnnotationRecord {
            polygon: Polygon4::new(pts).ccw_ordered(),
            category: tokens[8].to_string(),
            difficulty,
        });
    }
    Ok(out)
}

/// One line per record, coordinates in shortest round-trip form, LF endings.
pub fn serialize_dota(records: &[AnnotationRecord]) -> String {
    let mut s = String::new();
    for r in records {
        for p in &r.polygon.pts {
            s.push_str(&format!("{} {} ", p.x, p.y));
        }
        s.push_str(&format!("{} {}\n", r.category, r.difficulty));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_ship() {
        let r = parse_dota("0 0 10 0 10 5 0 5 ship 0").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].category, "ship");
        assert_eq!(r[0].difficulty, 0);
        let b = r[0].to_obb().unwrap();
        assert!((b.w - 10.0).abs() < 1e-9 && (b.h - 5.0).abs() < 1e-9);
        assert!((b.cx - 5.0).abs() < 1e-9 && (b.cy - 2.5).abs() < 1e-9);
    }

    #[test]
    fn metadata_and_crlf() {
        let text = "imagesource:GoogleEarth\r\ngsd:0.146\r\n\r\n0 0 10 0 10 5 0 5 plane 1\r\n";
        let r = parse_dota(text).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].difficulty, 1);
    }

    #[test]
    fn nine_tokens_names_line() {
        match parse_dota("0 0 10 0 10 5 0 5 ship 0\n0 0 10 0 10 5 0 ship 0") {
            Err(Error::Annotation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_dota("0 0 10 0 10 5 0 ship 0"), Err(Error::Annotation { line: 1, .. })));
        assert!(matches!(
            parse_dota("0 0 x 0 10 5 0 5 ship 0"),
            Err(Error::Annotation { line: 1, .. })
        ));
    }
}
