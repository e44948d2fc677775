use serde::{Deserialize, Serialize};

use super::{Mask, Stimulus};
use crate::error::{Error, Result};

/// Square patch tiling of a stimulus with per-object patch sets.
///
/// A patch is *object-containing* for an object if at least one of its
/// pixels belongs to the object's mask, and a *perimeter* patch if it holds
/// both object and non-object pixels of that mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: u32,
    pub rows: u32,
    pub cols: u32,
    pub object_patches: Vec<Vec<usize>>,
    pub perimeter_patches: Vec<Vec<usize>>,
}

fn classify(mask: &Mask, patch: u32, rows: u32, cols: u32) -> (Vec<usize>, Vec<usize>) {
    let n = (rows * cols) as usize;
    let mut on = vec![0u32; n];
    for (x, y) in mask.iter_set() {
        on[((y / patch) * cols + x / patch) as usize] += 1;
    }
    let full = patch * patch;
    let object: Vec<usize> = (0..n).filter(|&i| on[i] > 0).collect();
    let perimeter: Vec<usize> = (0..n).filter(|&i| on[i] > 0 && on[i] < full).collect();
    (object, perimeter)
}

impl PatchGrid {
    pub fn new(stim: &Stimulus, patch_size: u32) -> Result<Self> {
        Self::from_masks(&stim.object_masks, stim.width(), stim.height(), patch_size)
    }

    pub fn from_masks(masks: &[Mask], width: u32, height: u32, patch_size: u32) -> Result<Self> {
        if patch_size == 0 || width % patch_size != 0 || height % patch_size != 0 {
            return Err(Error::InvalidParam(format!(
                "patch size {patch_size} does not divide a {width}x{height} image"
            )));
        }
        let (rows, cols) = (height / patch_size, width / patch_size);
        let mut object_patches = Vec::with_capacity(masks.len());
        let mut perimeter_patches = Vec::with_capacity(masks.len());
        for m in masks {
            if m.width() != width || m.height() != height {
                return Err(Error::DimensionMismatch("mask and image sizes differ".into()));
            }
            let (o, p) = classify(m, patch_size, rows, cols);
            object_patches.push(o);
            perimeter_patches.push(p);
        }
        Ok(Self {
            patch_size,
            rows,
            cols,
            object_patches,
            perimeter_patches,
        })
    }

    pub fn n_patches(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn row_col(&self, idx: usize) -> (u32, u32) {
        (idx as u32 / self.cols, idx as u32 % self.cols)
    }

    pub fn index(&self, row: u32, col: u32) -> usize {
        (row * self.cols + col) as usize
    }

    /// Pixel rectangle `(x0, y0, size)` of a patch.
    pub fn rect(&self, idx: usize) -> (u32, u32, u32) {
        let (r, c) = self.row_col(idx);
        (c * self.patch_size, r * self.patch_size, self.patch_size)
    }

    /// Patches 8-adjacent to `idx`, clipped at the grid border.
    pub fn neighbors8(&self, idx: usize) -> Vec<usize> {
        let (r, c) = self.row_col(idx);
        let mut out = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nc >= 0 && nr < self.rows as i64 && nc < self.cols as i64 {
                    out.push(self.index(nr as u32, nc as u32));
                }
            }
        }
        out
    }

    /// Sorted union of all object-containing patches.
    pub fn object_union(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.object_patches.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Patches containing pixels of exactly one object, per object.
    pub fn exclusive_patches(&self) -> Vec<Vec<usize>> {
        let labels = patch_labels(self);
        (0..self.object_patches.len())
            .map(|k| {
                self.object_patches[k]
                    .iter()
                    .copied()
                    .filter(|&p| labels[p] == Some(k))
                    .collect()
            })
            .collect()
    }
}

/// Per-patch object id; `None` for background patches and for patches
/// shared by more than one object.
pub fn patch_labels(grid: &PatchGrid) -> Vec<Option<usize>> {
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); grid.n_patches()];
    for (k, patches) in grid.object_patches.iter().enumerate() {
        for &p in patches {
            owners[p].push(k);
        }
    }
    owners
        .into_iter()
        .map(|o| if o.len() == 1 { Some(o[0]) } else { None })
        .collect()
}

/// Perimeter patches per object. An empty entry means the object has no
/// patch straddling its boundary and must be skipped by the caller.
pub fn perimeter_patches(stim: &Stimulus, patch_size: u32) -> Result<Vec<Vec<usize>>> {
    if stim.object_masks.is_empty() {
        return Err(Error::Empty("stimulus has no object masks".into()));
    }
    Ok(PatchGrid::new(stim, patch_size)?.perimeter_patches)
}
