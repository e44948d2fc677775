//! On-disk datasets: one PNG per image, one 0/255 PNG per object mask, and
//! a line-delimited JSON manifest describing every stimulus.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Mask, PatchGrid, ScrambleRecord, Stimulus, StimulusKind, StimulusParams};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub patch_size: u32,
    pub object_patches: Vec<Vec<usize>>,
    pub perimeter_patches: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub kind: StimulusKind,
    pub seed: u64,
    /// Paths relative to the dataset directory.
    pub image: String,
    pub masks: Vec<String>,
    pub image_sha256: String,
    pub background: Option<[u8; 3]>,
    pub grid: Option<GridRecord>,
    pub params: StimulusParams,
    pub scramble: Option<ScrambleRecord>,
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes all stimuli under `dir` and returns the manifest records.
/// `patch_size` adds per-object patch sets to each record.
pub fn write_dataset(dir: &Path, stimuli: &[Stimulus], patch_size: Option<u32>) -> Result<Vec<ManifestRecord>> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut records = Vec::with_capacity(stimuli.len());
    for s in stimuli {
        let stem = file_stem(&s.id);
        let image_rel = format!("images/{stem}.png");
        s.image.save(dir.join(&image_rel))?;
        let mut masks = Vec::with_capacity(s.object_masks.len());
        for (k, m) in s.object_masks.iter().enumerate() {
            let rel = format!("masks/{stem}_{k}.png");
            m.to_gray().save(dir.join(&rel))?;
            masks.push(rel);
        }
        let grid = match patch_size {
            Some(p) => {
                let g = PatchGrid::new(s, p)?;
                Some(GridRecord {
                    patch_size: p,
                    object_patches: g.object_patches,
                    perimeter_patches: g.perimeter_patches,
                })
            }
            None => None,
        };
        records.push(ManifestRecord {
            id: s.id.clone(),
            kind: s.kind,
            seed: s.seed,
            image: image_rel,
            masks,
            image_sha256: s.content_hash(),
            background: s.background,
            grid,
            params: s.params.clone(),
            scramble: s.scramble.clone(),
        });
    }
    write_manifest(&dir.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Reconstructs the stimulus described by one manifest record.
pub fn load_record(dir: &Path, r: &ManifestRecord) -> Result<Stimulus> {
    let image = image::open(dir.join(&r.image))?.to_rgb8();
    let masks = r
        .masks
        .iter()
        .map(|m| Ok(Mask::from_gray(&image::open(dir.join(m))?.to_luma8())))
        .collect::<Result<Vec<_>>>()?;
    let stim = Stimulus {
        id: r.id.clone(),
        image,
        object_masks: masks,
        kind: r.kind,
        seed: r.seed,
        params: r.params.clone(),
        background: r.background,
        scramble: r.scramble.clone(),
    };
    if stim.content_hash() != r.image_sha256 {
        return Err(Error::Archive(format!("image for `{}` does not match its manifest hash", r.id)));
    }
    Ok(stim)
}

/// Loads every stimulus of a dataset directory in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Stimulus>> {
    read_manifest(&dir.join(MANIFEST_FILE))?
        .iter()
        .map(|r| load_record(dir, r))
        .collect()
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
