//! Rotated-IoU average precision in the VOC style.
//!
//! Detections of each class are sorted by descending score and matched
//! greedily to the unmatched ground truth of highest IoU in the same image.
//! Equal scores are ordered by the detection box (`cx, cy, w, h, theta`) and
//! then by image index, so the result does not depend on the order in which
//! detections are listed. A detection whose best match is a difficult object
//! is ignored, as are difficult objects themselves. Classes without any
//! non-difficult object are left out of the mean.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Object;
use crate::error::{Error, Result};
use crate::geometry::PreparedBox;
use crate::heads::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMetric {
    /// 11-point interpolated AP.
    Voc07,
    /// Area under the monotone precision envelope.
    Voc12,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub num_gts: usize,
    pub num_dets: usize,
    /// `None` when the class has no non-difficult objects.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub metric: ApMetric,
    pub iou_thr: f64,
    pub classes: Vec<ClassAp>,
    pub map: f64,
}

/// AP from a precision/recall sequence ordered by descending score.
pub fn average_precision(recall: &[f64], precision: &[f64], metric: ApMetric) -> f64 {
    match metric {
        ApMetric::Voc07 => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let t = t as f64 / 10.0;
                let p = recall
                    .iter()
                    .zip(precision)
                    .filter(|(r, _)| **r >= t - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
        ApMetric::Voc12 => {
            let mut mrec = vec![0.0];
            mrec.extend_from_slice(recall);
            mrec.push(1.0);
            let mut mpre = vec![0.0];
            mpre.extend_from_slice(precision);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len()).map(|i| (mrec[i] - mrec[i - 1]) * mpre[i]).sum()
        }
    }
}

fn box_key(d: &Detection) -> [f64; 5] {
    [d.obb.cx, d.obb.cy, d.obb.w, d.obb.h, d.obb.theta]
}

/// Per-class AP and their mean. `detections[i]` and `gts[i]` belong to the
/// same image.
pub fn evaluate_map(
    detections: &[Vec<Detection>],
    gts: &[Vec<Object>],
    num_classes: usize,
    iou_thr: f64,
    metric: ApMetric,
) -> Result<MapReport> {
    if detections.len() != gts.len() {
        return Err(Error::Eval(format!(
            "{} detection lists for {} images",
            detections.len(),
            gts.len()
        )));
    }
    for (img, ds) in detections.iter().enumerate() {
        if let Some(d) = ds.iter().find(|d| d.class_id >= num_classes) {
            return Err(Error::Eval(format!("image {img}: unknown class id {}", d.class_id)));
        }
    }
    if let Some(o) = gts.iter().flatten().find(|o| o.class_id >= num_classes) {
        return Err(Error::Eval(format!("ground truth has unknown class id {}", o.class_id)));
    }

    let prepared_gts: Vec<Vec<PreparedBox>> = gts
        .iter()
        .map(|g| g.iter().map(|o| PreparedBox::new(&o.obb)).collect())
        .collect();

    let mut classes = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let num_gts = gts.iter().flatten().filter(|o| o.class_id == c && !o.difficult).count();
        let mut dets: Vec<(usize, &Detection)> = detections
            .iter()
            .enumerate()
            .flat_map(|(i, ds)| ds.iter().filter(move |d| d.class_id == c).map(move |d| (i, d)))
            .collect();
        dets.sort_by(|a, b| {
            b.1.score
                .total_cmp(&a.1.score)
                .then_with(|| {
                    box_key(a.1)
                        .iter()
                        .zip(box_key(b.1).iter())
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| *o != Ordering::Equal)
                        .unwrap_or(Ordering::Equal)
                })
                .then(a.0.cmp(&b.0))
        });

        let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut recall = Vec::with_capacity(dets.len());
        let mut precision = Vec::with_capacity(dets.len());
        for (img, d) in &dets {
            let pd = PreparedBox::new(&d.obb);
            let mut best: Option<(usize, f64)> = None;
            for (j, o) in gts[*img].iter().enumerate() {
                if o.class_id != c {
                    continue;
                }
                let iou = pd.iou(&prepared_gts[*img][j]);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, iou)) if iou >= iou_thr => {
                    if gts[*img][j].difficult {
                        continue;
                    }
                    if taken[*img][j] {
                        fp += 1;
                    } else {
                        taken[*img][j] = true;
                        tp += 1;
                    }
                }
                _ => fp += 1,
            }
            recall.push(if num_gts > 0 { tp as f64 / num_gts as f64 } else { 0.0 });
            precision.push(tp as f64 / (tp + fp) as f64);
        }
        let ap = (num_gts > 0).then(|| average_precision(&recall, &precision, metric));
        classes.push(ClassAp {
            class_id: c,
            num_gts,
            num_dets: dets.len(),
            ap,
        });
    }
    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    Ok(MapReport {
        metric,
        iou_thr,
        classes,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedBox;

    fn det(b: OrientedBox, score: f64) -> Detection {
        Detection {
            obb: b,
            score,
            class_id: 0,
        }
    }

    #[test]
    fn hand_case() {
        let g1 = OrientedBox::new(20.0, 20.0, 10.0, 5.0, 0.0);
        let g2 = OrientedBox::new(60.0, 60.0, 10.0, 5.0, 0.3);
        let miss = OrientedBox::new(100.0, 20.0, 10.0, 5.0, 0.0);
        let dets = vec![vec![det(g1, 0.9), det(miss, 0.8), det(g2, 0.7)]];
        let gts = vec![vec![Object::new(g1, 0), Object::new(g2, 0)]];
        let r07 = evaluate_map(&dets, &gts, 1, 0.5, ApMetric::Voc07).unwrap();
        assert!((r07.map - 28.0 / 33.0).abs() < 1e-12);
        let r12 = evaluate_map(&dets, &gts, 1, 0.5, ApMetric::Voc12).unwrap();
        assert!((r12.map - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_unknown() {
        let g = OrientedBox::new(20.0, 20.0, 10.0, 5.0, 0.0);
        let gts = vec![vec![Object::new(g, 0)]];
        let r = evaluate_map(&[vec![]], &gts, 1, 0.5, ApMetric::Voc07).unwrap();
        assert_eq!(r.map, 0.0);
        let bad = vec![vec![Detection {
            obb: g,
            score: 1.0,
            class_id: 3,
        }]];
        assert!(evaluate_map(&bad, &gts, 1, 0.5, ApMetric::Voc07).is_err());
    }

    #[test]
    fn difficult_is_ignored() {
        let g = OrientedBox::new(20.0, 20.0, 10.0, 5.0, 0.0);
        let h = OrientedBox::new(60.0, 20.0, 10.0, 5.0, 0.0);
        let gts = vec![vec![
            Object::new(g, 0),
            Object {
                difficult: true,
                ..Object::new(h, 0)
            },
        ]];
        let dets = vec![vec![det(h, 0.95), det(g, 0.9)]];
        let r = evaluate_map(&dets, &gts, 1, 0.5, ApMetric::Voc12).unwrap();
        assert!((r.map - 1.0).abs() < 1e-12);
        assert_eq!(r.classes[0].num_gts, 1);
    }
}
