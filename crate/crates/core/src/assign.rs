//! Anchor labelling and balanced sampling.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{horizontal_iou, HorizontalBox, OrientedBox, PreparedBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignLabel {
    Positive(usize),
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignResult {
    pub labels: Vec<AssignLabel>,
}

impl AssignResult {
    pub fn all_negative(n: usize) -> Self {
        Self {
            labels: vec![AssignLabel::Negative; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| match l {
            AssignLabel::Positive(g) => Some((i, *g)),
            _ => None,
        })
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == AssignLabel::Negative)
            .map(|(i, _)| i)
    }

    pub fn num_positive(&self) -> usize {
        self.positives().count()
    }

    pub fn gt_of(&self, idx: usize) -> Option<usize> {
        match self.labels[idx] {
            AssignLabel::Positive(g) => Some(g),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleResult {
    pub pos_indices: Vec<usize>,
    pub neg_indices: Vec<usize>,
}

fn in_scaled_region(gt: &HorizontalBox, factor: f64, x: f64, y: f64) -> bool {
    (x - gt.cx).abs() <= 0.5 * factor * gt.w && (y - gt.cy).abs() <= 0.5 * factor * gt.h
}

/// Center-region assignment.
///
/// An anchor is positive for a ground truth when its center lies inside the
/// ground truth shrunk about its center by `pos_ratio`; ignored when it lies
/// inside the `pos_ratio + ignore_margin` region of some ground truth without
/// being positive; negative otherwise. Overlapping positive regions go to
/// the smallest ground truth.
pub fn assign_ratio(
    anchors: &[HorizontalBox],
    rect_gts: &[HorizontalBox],
    pos_ratio: f64,
    ignore_margin: f64,
) -> AssignResult {
    if rect_gts.is_empty() {
        return AssignResult::all_negative(anchors.len());
    }
    let ignore_factor = pos_ratio + ignore_margin;
    let labels = anchors
        .iter()
        .map(|a| {
            let mut best: Option<(f64, usize)> = None;
            let mut ignored = false;
            for (g, gt) in rect_gts.iter().enumerate() {
                if in_scaled_region(gt, pos_ratio, a.cx, a.cy) {
                    let area = gt.area();
                    if best.is_none_or(|(ba, _)| area < ba) {
                        best = Some((area, g));
                    }
                } else if in_scaled_region(gt, ignore_factor, a.cx, a.cy) {
                    ignored = true;
                }
            }
            match best {
                Some((_, g)) => AssignLabel::Positive(g),
                None if ignored => AssignLabel::Ignore,
                None => AssignLabel::Negative,
            }
        })
        .collect();
    AssignResult { labels }
}

/// IoU threshold assignment with forced best matches.
///
/// Besides the threshold rule, the highest-IoU anchor of every ground truth
/// becomes positive for it, provided that IoU is positive and at least
/// `neg_thr`.
pub fn assign_maxiou(
    anchors: &[HorizontalBox],
    rect_gts: &[HorizontalBox],
    pos_thr: f64,
    neg_thr: f64,
) -> AssignResult {
    assert!(
        (0.0..=pos_thr).contains(&neg_thr) && pos_thr <= 1.0,
        "assigner thresholds out of order"
    );
    if rect_gts.is_empty() {
        return AssignResult::all_negative(anchors.len());
    }
    let ng = rect_gts.len();
    let mut gt_best = vec![(0.0f64, usize::MAX); ng];
    let mut labels = Vec::with_capacity(anchors.len());
    for (i, a) in anchors.iter().enumerate() {
        let mut best = (-1.0f64, 0usize);
        for (g, gt) in rect_gts.iter().enumerate() {
            let iou = horizontal_iou(a, gt);
            if iou > best.0 {
                best = (iou, g);
            }
            if iou > gt_best[g].0 {
                gt_best[g] = (iou, i);
            }
        }
        labels.push(if best.0 >= pos_thr {
            AssignLabel::Positive(best.1)
        } else if best.0 < neg_thr {
            AssignLabel::Negative
        } else {
            AssignLabel::Ignore
        });
    }
    for (g, &(iou, i)) in gt_best.iter().enumerate() {
        if i != usize::MAX && iou > 0.0 && iou >= neg_thr {
            labels[i] = AssignLabel::Positive(g);
        }
    }
    AssignResult { labels }
}

/// Threshold assignment of oriented candidates by rotated IoU, without
/// forced matches: best IoU `>= pos_thr` is positive, `< neg_thr` negative,
/// ignored in between. Ties in IoU go to the lower ground-truth index.
pub fn assign_rotated(
    candidates: &[OrientedBox],
    gts: &[OrientedBox],
    pos_thr: f64,
    neg_thr: f64,
) -> AssignResult {
    assert!(
        (0.0..=pos_thr).contains(&neg_thr) && pos_thr <= 1.0,
        "assigner thresholds out of order"
    );
    let prepared: Vec<PreparedBox> = gts.iter().map(PreparedBox::new).collect();
    let labels = candidates
        .iter()
        .map(|c| {
            let pc = PreparedBox::new(c);
            let mut best = (0.0f64, None);
            for (g, pg) in prepared.iter().enumerate() {
                let iou = pc.iou(pg);
                if iou > best.0 {
                    best = (iou, Some(g));
                }
            }
            match best {
                (iou, Some(g)) if iou >= pos_thr => AssignLabel::Positive(g),
                (iou, _) if iou < neg_thr => AssignLabel::Negative,
                _ => AssignLabel::Ignore,
            }
        })
        .collect();
    AssignResult { labels }
}

/// Derives an independent sampler seed for a named stream from a base seed
/// (splitmix64 finaliser).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw(pool: Vec<usize>, amount: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.len() <= amount {
        return pool;
    }
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    picked.sort_unstable();
    picked
}

/// Uniform sampling without replacement of up to `num_pos` positives and
/// `num_neg` negatives. Returned indices are sorted ascending.
pub fn sample_balanced(
    assign: &AssignResult,
    num_pos: usize,
    num_neg: usize,
    rng_seed: u64,
) -> SampleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pos: Vec<usize> = assign.positives().map(|(i, _)| i).collect();
    let neg: Vec<usize> = assign.negatives().collect();
    let pos_indices = draw(pos, num_pos, &mut rng);
    let neg_indices = draw(neg, num_neg, &mut rng);
    SampleResult {
        pos_indices,
        neg_indices,
    }
}

/// Samples `total` indices with at most `pos_fraction` of them positive;
/// negatives fill the remainder.
pub fn sample_fraction(
    assign: &AssignResult,
    total: usize,
    pos_fraction: f64,
    rng_seed: u64,
) -> SampleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pos: Vec<usize> = assign.positives().map(|(i, _)| i).collect();
    let neg: Vec<usize> = assign.negatives().collect();
    let max_pos = (total as f64 * pos_fraction).round() as usize;
    let pos_indices = draw(pos, max_pos, &mut rng);
    let neg_indices = draw(neg, total - pos_indices.len(), &mut rng);
    SampleResult {
        pos_indices,
        neg_indices,
    }
}
