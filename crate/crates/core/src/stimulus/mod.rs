//! Procedural stimuli: blobs, curves, binding pairs, bar pairs, their scrambled
//! controls, continuity trajectories and ingested segmented images.
//!
//! Every generator is a pure function of its seed and parameters. Images are
//! `224×224` 8-bit RGB; each object carries an exact binary mask.

mod bars;
mod binding;
mod blob;
mod curve;
mod grid;
mod ingest;
pub mod manifest;
mod palette;
mod scramble;
mod trajectory;

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

pub use bars::{gen_bars, BarsParams, BarsRecord};
pub use binding::{gen_binding_pair, mask_distance, BindingParams, BindingRecord, BindingShape, ShapeRecord};
pub use blob::{gen_blob, BlobParams, BlobRecord};
pub use curve::{gen_curve, CurveParams, CurveRecord};
pub use grid::{patch_labels, perimeter_patches, PatchGrid};
pub use ingest::{ingest_segmented, ingest_segmented_images};
pub use palette::Color;
pub use scramble::{
    rotate_block, scramble_location, scramble_orientation, unscramble, QuarterTurns, ScrambleRecord,
};
pub use trajectory::{
    control_rotation, make_trajectory, Axis, TrajectoryOptions, TrajectoryStimulus, TrajectoryVariant,
};

/// Side length of every generated canvas.
pub const CANVAS: u32 = 224;

/// A binary per-pixel object mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    /// Like [`Mask::get`] but `false` outside the mask bounds.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width;
        self.bits[(y * w + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    /// Pixels of the mask with at least one 4-neighbour outside the mask
    /// (or outside the raster).
    pub fn boundary(&self) -> Vec<(u32, u32)> {
        self.iter_set()
            .filter(|&(x, y)| {
                let (x, y) = (x as i64, y as i64);
                !(self.get_signed(x - 1, y)
                    && self.get_signed(x + 1, y)
                    && self.get_signed(x, y - 1)
                    && self.get_signed(x, y + 1))
            })
            .collect()
    }

    /// Copy translated by `(dx, dy)`; pixels shifted off the raster are lost.
    pub fn translated(&self, dx: i64, dy: i64) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        for (x, y) in self.iter_set() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as u32) < self.width && (ny as u32) < self.height {
                out.set(nx as u32, ny as u32, true);
            }
        }
        out
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    /// Bounding box `(x0, y0, x1, y1)` (inclusive) of the set pixels.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for (x, y) in self.iter_set() {
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            });
        }
        bb
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    pub fn from_gray(img: &GrayImage) -> Mask {
        Mask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] >= 128)
    }

    /// Number of 4-connected components.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.bits.len()];
        let mut n = 0;
        let w = self.width as i64;
        for start in 0..self.bits.len() {
            if !self.bits[start] || seen[start] {
                continue;
            }
            n += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                let (x, y) = ((i as i64) % w, (i as i64) / w);
                for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                    if self.get_signed(nx, ny) {
                        let j = (ny * w + nx) as usize;
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Blob,
    Curve,
    BindingPair,
    Bars,
    Ingested,
}

/// Generation parameters plus whatever the generator sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StimulusParams {
    Blob(BlobRecord),
    Curve(CurveRecord),
    BindingPair(BindingRecord),
    Bars(BarsRecord),
    Ingested { image: String, mask: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub id: String,
    pub image: RgbImage,
    pub object_masks: Vec<Mask>,
    pub kind: StimulusKind,
    pub seed: u64,
    pub params: StimulusParams,
    /// Exact background color for synthetic stimuli.
    pub background: Option<[u8; 3]>,
    pub scramble: Option<ScrambleRecord>,
}

impl Stimulus {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    /// Union of all object masks.
    pub fn union_mask(&self) -> Mask {
        let mut out = Mask::new(self.width(), self.height());
        for m in &self.object_masks {
            for (x, y) in m.iter_set() {
                out.set(x, y, true);
            }
        }
        out
    }

    pub fn fill_color(&self) -> [u8; 3] {
        self.background.unwrap_or([0, 0, 0])
    }

    /// Hex SHA-256 of the raw RGB bytes.
    pub fn content_hash(&self) -> String {
        crate::seed::sha256_hex(self.image.as_raw())
    }
}

pub(crate) fn paint(image: &mut RgbImage, mask: &Mask, rgb: [u8; 3]) {
    for (x, y) in mask.iter_set() {
        image.put_pixel(x, y, Rgb(rgb));
    }
}

pub(crate) fn solid(width: u32, height: u32, rgb: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb(rgb))
}

/// Picks an object color and a distinct background color from `palette`.
pub(crate) fn pick_colors(
    palette: &[Color],
    rng: &mut impl rand::Rng,
) -> crate::error::Result<(Color, Color)> {
    let mut distinct: Vec<Color> = palette.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(crate::error::Error::InvalidParam(format!(
            "palette needs at least 2 distinct colors, got {}",
            distinct.len()
        )));
    }
    let fg = distinct[rng.random_range(0..distinct.len())];
    let rest: Vec<Color> = distinct.iter().copied().filter(|c| *c != fg).collect();
    let bg = rest[rng.random_range(0..rest.len())];
    Ok((fg, bg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translated_and_boundary() {
        let m = Mask::from_fn(8, 8, |x, y| (2..5).contains(&x) && (2..5).contains(&y));
        assert_eq!(m.count(), 9);
        assert_eq!(m.boundary().len(), 8);
        let t = m.translated(3, 1);
        assert_eq!(t.count(), 9);
        assert!(t.get(5, 3) && !t.get(2, 2));
        assert_eq!(m.bbox(), Some((2, 2, 4, 4)));
    }

    #[test]
    fn components_counts_islands() {
        let m = Mask::from_fn(10, 3, |x, _| x == 1 || x == 5 || x == 6);
        assert_eq!(m.components(), 2);
    }
}
