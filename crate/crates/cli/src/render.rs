use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, Rgb, RgbImage};
use obbdet::data::Dataset;
use obbdet::geometry::{obb_to_polygon, OrientedBox};
use obbdet::model::image_tensor;
use obbdet::train::load_detector;

const PALETTE: [[u8; 3]; 6] = [
    [255, 64, 64],
    [64, 160, 255],
    [255, 200, 0],
    [200, 80, 255],
    [0, 220, 220],
    [255, 128, 0],
];
const GT_COLOR: [u8; 3] = [0, 255, 0];

/// Gray pixels padded with zeros on the right and bottom to multiples of 16.
fn pad16(pixels: &[u8], width: usize, height: usize) -> (Vec<u8>, usize, usize) {
    let pw = width.div_ceil(16) * 16;
    let ph = height.div_ceil(16) * 16;
    let mut out = vec![0u8; pw * ph];
    for r in 0..height {
        out[r * pw..r * pw + width].copy_from_slice(&pixels[r * width..(r + 1) * width]);
    }
    (out, pw, ph)
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).floor();
        let y = (y0 + t * (y1 - y0)).floor();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

fn draw_box(img: &mut RgbImage, b: &OrientedBox, color: [u8; 3]) {
    let p = obb_to_polygon(b).pts;
    for i in 0..4 {
        let (a, c) = (p[i], p[(i + 1) % 4]);
        draw_line(img, (a.x, a.y), (c.x, c.y), color);
    }
}

pub fn render(
    checkpoint: &Path,
    image: Option<&Path>,
    dataset: Option<&Path>,
    index: usize,
    min_score: f64,
    out: &Path,
) -> Result<()> {
    let (model, _) = load_detector(checkpoint)?;
    let (pixels, width, height, gts) = match (image, dataset) {
        (Some(p), _) => {
            let img = image::open(p).with_context(|| format!("reading {}", p.display()))?.to_luma8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            (img.into_raw(), w, h, Vec::new())
        }
        (None, Some(d)) => {
            let mut data = Dataset::load(d)?;
            if index >= data.samples.len() {
                bail!("index {index} out of range: the dataset has {} images", data.samples.len());
            }
            let s = data.samples.swap_remove(index);
            (s.pixels, s.width, s.height, s.objects)
        }
        (None, None) => bail!("give --image or --dataset"),
    };
    let (padded, pw, ph) = pad16(&pixels, width, height);
    let dets = model.detect(&image_tensor::<f32>(&padded, ph, pw)?)?;
    let mut canvas = RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let v = pixels[y as usize * width + x as usize];
        Rgb([v, v, v])
    });
    for g in &gts {
        draw_box(&mut canvas, &g.obb, GT_COLOR);
    }
    let mut drawn = 0;
    for d in dets.iter().filter(|d| d.score >= min_score) {
        draw_box(&mut canvas, &d.obb, PALETTE[d.class_id % PALETTE.len()]);
        drawn += 1;
    }
    let file = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(canvas.as_raw(), canvas.width(), canvas.height(), ExtendedColorType::Rgb8)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("{drawn} detections drawn to {}", out.display());
    Ok(())
}
