use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};

use super::{Mask, Stimulus, StimulusKind, StimulusParams, CANVAS};
use crate::error::{Error, Result};
use crate::seed;

fn center_square(w: u32, h: u32) -> (u32, u32, u32) {
    let side = w.min(h);
    ((w - side) / 2, (h - side) / 2, side)
}

/// Builds a stimulus from an in-memory image and label mask.
///
/// Every distinct nonzero mask value is one object. Both rasters are
/// center-cropped to a square, then resized to the canvas: bilinear for the
/// image, nearest-neighbour for the labels. Objects that vanish in the resize
/// are dropped.
pub fn ingest_segmented_images(id: &str, image: &RgbImage, labels: &GrayImage) -> Result<Stimulus> {
    if image.dimensions() != labels.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "image is {:?} but mask is {:?}",
            image.dimensions(),
            labels.dimensions()
        )));
    }
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Empty("zero-sized image".into()));
    }
    let (x0, y0, side) = center_square(w, h);
    let img = imageops::crop_imm(image, x0, y0, side, side).to_image();
    let lab = imageops::crop_imm(labels, x0, y0, side, side).to_image();
    let img = imageops::resize(&img, CANVAS, CANVAS, FilterType::Triangle);
    let lab = imageops::resize(&lab, CANVAS, CANVAS, FilterType::Nearest);

    let mut values: Vec<u8> = lab.pixels().map(|p| p[0]).filter(|&v| v != 0).collect();
    values.sort_unstable();
    values.dedup();
    let masks: Vec<Mask> = values
        .iter()
        .map(|&v| Mask::from_fn(CANVAS, CANVAS, |x, y| lab.get_pixel(x, y)[0] == v))
        .collect();
    if masks.is_empty() {
        return Err(Error::Empty(format!("mask for `{id}` has no object pixels")));
    }
    Ok(Stimulus {
        id: id.to_string(),
        image: img,
        object_masks: masks,
        kind: StimulusKind::Ingested,
        seed: 0,
        params: StimulusParams::Ingested {
            image: String::new(),
            mask: String::new(),
        },
        background: None,
        scramble: None,
    })
}

/// Loads an image and its segmentation mask from disk.
pub fn ingest_segmented(image_path: &Path, mask_path: &Path) -> Result<Stimulus> {
    let image = image::open(image_path)?.to_rgb8();
    let labels = image::open(mask_path)?.to_luma8();
    let bytes = std::fs::read(image_path)?;
    let stem = image_path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let id = format!("ing-{stem}-{}", &seed::sha256_hex(&bytes)[..8]);
    let mut stim = ingest_segmented_images(&id, &image, &labels)?;
    stim.params = StimulusParams::Ingested {
        image: image_path.display().to_string(),
        mask: mask_path.display().to_string(),
    };
    Ok(stim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::PatchGrid;
    use image::{Luma, Rgb};

    #[test]
    fn all_true_mask_covers_every_patch() {
        let img = RgbImage::from_pixel(300, 224, Rgb([10, 20, 30]));
        let lab = GrayImage::from_pixel(300, 224, Luma([255]));
        let s = ingest_segmented_images("x", &img, &lab).unwrap();
        assert_eq!(s.image.dimensions(), (224, 224));
        let g = PatchGrid::new(&s, 32).unwrap();
        assert_eq!(g.object_patches[0].len(), 49);
    }

    #[test]
    fn disk_perimeter_matches_pixel_scan() {
        let lab = GrayImage::from_fn(224, 224, |x, y| {
            let d = (x as f64 - 100.0).powi(2) + (y as f64 - 120.0).powi(2);
            Luma([if d < 45.0 * 45.0 { 255 } else { 0 }])
        });
        let img = RgbImage::from_pixel(224, 224, Rgb([0, 0, 0]));
        let s = ingest_segmented_images("disk", &img, &lab).unwrap();
        let g = PatchGrid::new(&s, 16).unwrap();
        let mut oracle = vec![];
        for p in 0..g.n_patches() {
            let (x0, y0, sz) = g.rect(p);
            let on = (0..sz * sz).filter(|i| lab.get_pixel(x0 + i % sz, y0 + i / sz)[0] > 0).count() as u32;
            if on > 0 && on < sz * sz {
                oracle.push(p);
            }
        }
        assert_eq!(g.perimeter_patches[0], oracle);
    }

    #[test]
    fn multiple_labels_and_errors() {
        let img = RgbImage::new(64, 64);
        let lab = GrayImage::from_fn(64, 64, |x, _| Luma([if x < 10 { 1 } else if x > 50 { 2 } else { 0 }]));
        assert_eq!(ingest_segmented_images("m", &img, &lab).unwrap().object_masks.len(), 2);
        assert!(matches!(
            ingest_segmented_images("e", &img, &GrayImage::new(64, 64)),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            ingest_segmented_images("d", &img, &GrayImage::new(32, 64)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("a.png");
        let mp = dir.path().join("a_mask.png");
        RgbImage::from_pixel(50, 40, Rgb([1, 2, 3])).save(&ip).unwrap();
        GrayImage::from_fn(50, 40, |x, _| Luma([if x > 20 { 255 } else { 0 }])).save(&mp).unwrap();
        let s = ingest_segmented(&ip, &mp).unwrap();
        assert_eq!(s.kind, StimulusKind::Ingested);
        assert!(s.id.starts_with("ing-a-"));
    }
}
