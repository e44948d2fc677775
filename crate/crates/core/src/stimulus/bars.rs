//! Two straight vertical bars on a plain background: a minimal stimulus
//! whose only object cue is edge alignment along each bar.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{paint, solid, Color, Mask, Stimulus, StimulusKind, StimulusParams, CANVAS};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarsParams {
    /// Grid the bars are laid out on.
    pub patch_size: u32,
    /// Bar thickness in pixels.
    pub bar_width: u32,
    /// Horizontal offset of each bar inside its patch column; the two bars
    /// take distinct offsets.
    pub offsets: [u32; 2],
    /// Bar length range in whole patches.
    pub min_len: u32,
    pub max_len: u32,
    pub color: Color,
    pub background: Color,
}

impl Default for BarsParams {
    fn default() -> Self {
        Self {
            patch_size: 16,
            bar_width: 4,
            offsets: [2, 10],
            min_len: 4,
            max_len: 10,
            color: Color::White,
            background: Color::Black,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarsRecord {
    pub params: BarsParams,
    /// Per bar: `(patch column, first patch row, length in patches, offset)`.
    pub bars: Vec<(u32, u32, u32, u32)>,
}

impl BarsParams {
    fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || CANVAS % p != 0 || CANVAS / p < 6 {
            return Err(Error::InvalidParam(format!("patch size {p} leaves too few columns for two bars")));
        }
        if self.bar_width == 0 || self.offsets.iter().any(|o| o + self.bar_width > p) {
            return Err(Error::InvalidParam("bars must fit inside one patch column".into()));
        }
        if self.offsets[0] == self.offsets[1] {
            return Err(Error::InvalidParam("bar offsets must differ".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.max_len > CANVAS / p {
            return Err(Error::InvalidParam("bar length range must lie in 1..=grid rows".into()));
        }
        if self.color == self.background {
            return Err(Error::InvalidParam("bar and background colors must differ".into()));
        }
        Ok(())
    }
}

/// Two bars in patch columns at least two apart and away from the canvas
/// border, so displaced windows of up to one patch never leave the canvas
/// or reach the other bar.
pub fn gen_bars(seed: u64, params: &BarsParams) -> Result<Stimulus> {
    params.validate()?;
    let mut rng = seed::rng(seed);
    let p = params.patch_size;
    let cols = CANVAS / p;
    let first = rng.random_range(1..cols - 3);
    let second = rng.random_range(first + 2..cols - 1);
    let mut offsets = params.offsets;
    offsets.shuffle(&mut rng);

    let mut image = solid(CANVAS, CANVAS, params.background.rgb());
    let mut masks = Vec::with_capacity(2);
    let mut bars = Vec::with_capacity(2);
    for (col, off) in [(first, offsets[0]), (second, offsets[1])] {
        let len = rng.random_range(params.min_len..=params.max_len);
        let row = rng.random_range(0..=cols - len);
        let x0 = col * p + off;
        let (y0, y1) = (row * p, (row + len) * p);
        let mask = Mask::from_fn(CANVAS, CANVAS, |x, y| (x0..x0 + params.bar_width).contains(&x) && (y0..y1).contains(&y));
        paint(&mut image, &mask, params.color.rgb());
        masks.push(mask);
        bars.push((col, row, len, off));
    }
    Ok(Stimulus {
        id: format!("bars-{seed:016x}"),
        image,
        object_masks: masks,
        kind: StimulusKind::Bars,
        seed,
        params: StimulusParams::Bars(BarsRecord { params: params.clone(), bars }),
        background: Some(params.background.rgb()),
        scramble: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::PatchGrid;

    #[test]
    fn every_bar_patch_is_perimeter() {
        for s in 0..30 {
            let stim = gen_bars(s, &BarsParams::default()).unwrap();
            let grid = PatchGrid::new(&stim, 16).unwrap();
            for k in 0..2 {
                assert_eq!(grid.object_patches[k], grid.perimeter_patches[k]);
                assert_eq!(stim.object_masks[k].components(), 1);
            }
            let StimulusParams::Bars(r) = &stim.params else { panic!() };
            assert!(r.bars[1].0 >= r.bars[0].0 + 2);
            assert_ne!(r.bars[0].3, r.bars[1].3);
            assert!(!stim.object_masks[0].intersects(&stim.object_masks[1]));
        }
    }

    #[test]
    fn deterministic_and_validated() {
        assert_eq!(gen_bars(4, &BarsParams::default()).unwrap(), gen_bars(4, &BarsParams::default()).unwrap());
        let bad = BarsParams { offsets: [3, 3], ..BarsParams::default() };
        assert!(gen_bars(1, &bad).is_err());
        let wide = BarsParams { bar_width: 10, ..BarsParams::default() };
        assert!(gen_bars(1, &wide).is_err());
    }
}
