//! Browser demo of the stimulus and continuity machinery.
//!
//! Three operations are exported to JavaScript:
//!
//! * [`render_stimulus`] — a generated stimulus, optionally scrambled;
//! * [`render_trajectory`] — one continuity frame for a perimeter patch;
//! * [`edge_tuning_curve`] — `S(t)` of the hand-built aligned-edge head.
//!
//! Images come back as 224×224 RGBA bytes ready for `ImageData`; metadata
//! as JSON strings. Everything is seeded and runs single-threaded.

use gestalt_core::continuity::{tuning_curve, ContinuityOptions};
use gestalt_core::seed::derive_seed;
use gestalt_core::stimulus::{
    control_rotation, gen_bars, gen_binding_pair, gen_blob, gen_curve, make_trajectory, scramble_location,
    scramble_orientation, Axis, BarsParams, BindingParams, BlobParams, CurveParams, PatchGrid, Stimulus,
    TrajectoryOptions, TrajectoryVariant,
};
use gestalt_core::toy::{aligned_edge_model, DETECTOR};
use image::RgbImage;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const KINDS: [&str; 5] = ["blob", "curve", "binding-blob", "binding-curve", "bars"];

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// An RGBA raster plus a JSON description.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    rgba: Vec<u8>,
    info: String,
}

#[wasm_bindgen]
impl Rendered {
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn info(&self) -> String {
        self.info.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        224
    }
}

fn rgba(img: &RgbImage) -> Vec<u8> {
    img.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

fn generate(kind: &str, seed: u32) -> Result<Stimulus, String> {
    let seed = derive_seed(seed as u64, "demo");
    match kind {
        "blob" => gen_blob(seed, &BlobParams::default()),
        "curve" => gen_curve(seed, &CurveParams::default()),
        "binding-blob" => gen_binding_pair(seed, &BindingParams::blob()),
        "binding-curve" => gen_binding_pair(seed, &BindingParams::curve()),
        "bars" => gen_bars(seed, &BarsParams::default()),
        other => return Err(format!("unknown stimulus kind `{other}` (expected one of {KINDS:?})")),
    }
    .map_err(err)
}

#[derive(Serialize)]
struct StimulusInfo<'a> {
    id: &'a str,
    objects: usize,
    patch_size: u32,
    object_patches: &'a [Vec<usize>],
    perimeter_patches: &'a [Vec<usize>],
}

/// Generates a stimulus of `kind` and applies `scramble` (`none`,
/// `orientation` or `location`) on a `patch`-pixel grid.
#[wasm_bindgen]
pub fn render_stimulus(kind: &str, seed: u32, scramble: &str, patch: u32) -> Result<Rendered, String> {
    let stim = generate(kind, seed)?;
    let grid = PatchGrid::new(&stim, patch).map_err(err)?;
    let scramble_seed = derive_seed(seed as u64, "demo/scramble");
    let shown = match scramble {
        "none" => stim,
        "orientation" => scramble_orientation(&stim, &grid, scramble_seed).map_err(err)?,
        "location" => scramble_location(&stim, &grid, scramble_seed).map_err(err)?,
        other => return Err(format!("unknown scramble `{other}`")),
    };
    let info = StimulusInfo {
        id: &shown.id,
        objects: shown.object_masks.len(),
        patch_size: patch,
        object_patches: &grid.object_patches,
        perimeter_patches: &grid.perimeter_patches,
    };
    Ok(Rendered { rgba: rgba(&shown.image), info: serde_json::to_string(&info).map_err(err)? })
}

#[derive(Serialize)]
struct FrameInfo {
    target_patch: usize,
    /// `[x, y, size]` of the target patch in pixels.
    rect: [u32; 3],
    t: i64,
    rotation_degrees: Option<u32>,
    perimeter_count: usize,
}

/// One continuity frame: the `target`-th perimeter patch (modulo the count)
/// refilled from the window displaced by `t` pixels along x, or its rotated
/// control when `rotated` is set.
#[wasm_bindgen]
pub fn render_trajectory(kind: &str, seed: u32, patch: u32, target: u32, t: i32, rotated: bool) -> Result<Rendered, String> {
    let stim = generate(kind, seed)?;
    let grid = PatchGrid::new(&stim, patch).map_err(err)?;
    let mut perimeter: Vec<usize> = grid.perimeter_patches.iter().flatten().copied().collect();
    perimeter.sort_unstable();
    perimeter.dedup();
    if perimeter.is_empty() {
        return Err("stimulus has no perimeter patch".into());
    }
    let p = perimeter[target as usize % perimeter.len()];
    let variant = if rotated {
        TrajectoryVariant::RotatedControl(control_rotation(seed as u64, &stim.id, p))
    } else {
        TrajectoryVariant::Aligned
    };
    let opts = TrajectoryOptions { axis: Axis::X, t_max: patch as i64 };
    let frame = make_trajectory(&stim, &grid, p, t as i64, variant, &opts).map_err(err)?;
    let (x, y, s) = grid.rect(p);
    let info = FrameInfo {
        target_patch: p,
        rect: [x, y, s],
        t: t as i64,
        rotation_degrees: frame.rotation_degrees(),
        perimeter_count: perimeter.len(),
    };
    Ok(Rendered { rgba: rgba(&frame.image), info: serde_json::to_string(&info).map_err(err)? })
}

#[derive(Debug, Serialize)]
struct CurveInfo {
    layer: usize,
    head: usize,
    t: Vec<i64>,
    s: Vec<f64>,
    n: usize,
}

/// `S(t)` of the engineered aligned-edge head over `n_stimuli` bar images,
/// for `t` in `-t_max..=t_max` with the given step. Returns JSON.
#[wasm_bindgen]
pub fn edge_tuning_curve(seed: u32, n_stimuli: u32, t_max: u32, step: u32) -> Result<String, String> {
    if n_stimuli == 0 || step == 0 || t_max > 16 {
        return Err("need n_stimuli ≥ 1, step ≥ 1 and t_max ≤ 16".into());
    }
    let model = aligned_edge_model(0.35).map_err(err)?;
    let stimuli = (0..n_stimuli)
        .map(|i| gen_bars(derive_seed(seed as u64, &format!("demo/bars/{i}")), &BarsParams::default()))
        .collect::<gestalt_core::Result<Vec<_>>>()
        .map_err(err)?;
    let (t_max, step) = (t_max as i64, step as i64);
    let mut ts: Vec<i64> = (0..=t_max / step).map(|k| k * step).collect();
    let neg: Vec<i64> = ts.iter().skip(1).rev().map(|t| -t).collect();
    ts = neg.into_iter().chain(ts).collect();
    let opts = ContinuityOptions {
        trajectory: TrajectoryOptions { axis: Axis::X, t_max },
        seed: seed as u64,
        max_targets: Some(4),
        ..Default::default()
    };
    let c = tuning_curve(&model, DETECTOR.0, DETECTOR.1, &stimuli, &ts, &opts).map_err(err)?;
    serde_json::to_string(&CurveInfo { layer: c.layer, head: c.head, t: c.t, s: c.s, n: c.n }).map_err(err)
}
