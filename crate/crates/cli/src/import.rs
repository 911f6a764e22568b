use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use obbdet::data::{parse_dota, tile_image, Dataset, Object, Sample};

/// Reads every `<stem>.txt` label file with a matching `<stem>.png` image,
/// converts to gray and cuts `tile x tile` windows (zero padded at the
/// border).
pub fn import_dota(images: &Path, labels: &Path, classes: Vec<String>, tile: usize, stride: usize) -> Result<Dataset> {
    if tile == 0 || stride == 0 || stride > tile || !tile.is_multiple_of(16) {
        bail!("need 0 < stride <= tile and tile divisible by 16");
    }
    let mut stems: Vec<String> = fs::read_dir(labels)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "txt").then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    stems.sort();
    let mut parsed = Vec::new();
    for stem in &stems {
        let path = labels.join(format!("{stem}.txt"));
        let text = fs::read_to_string(&path)?;
        let records = parse_dota(&text).with_context(|| format!("in {}", path.display()))?;
        parsed.push((stem.clone(), records));
    }
    let classes = if classes.is_empty() {
        parsed
            .iter()
            .flat_map(|(_, r)| r.iter().map(|a| a.category.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        classes
    };

    let mut samples = Vec::new();
    for (stem, records) in parsed {
        let img_path = images.join(format!("{stem}.png"));
        let img = image::open(&img_path)
            .with_context(|| format!("reading {}", img_path.display()))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut objects = Vec::new();
        for r in &records {
            let Some(class_id) = classes.iter().position(|c| *c == r.category) else {
                continue;
            };
            objects.push(Object {
                obb: r.to_obb()?,
                class_id,
                difficult: r.difficulty == 1,
            });
        }
        let raw = img.into_raw();
        for (win, objs) in tile_image(w, h, tile, stride, &objects) {
            let mut pixels = vec![0u8; tile * tile];
            for r in 0..win.height {
                let src = (win.y0 + r) * w + win.x0;
                pixels[r * tile..r * tile + win.width].copy_from_slice(&raw[src..src + win.width]);
            }
            samples.push(Sample {
                id: format!("{stem}__{}_{}", win.x0, win.y0),
                width: tile,
                height: tile,
                pixels,
                objects: objs,
            });
        }
    }
    Ok(Dataset { classes, samples })
}
