use gestalt_core::seed::derive_seed;
use gestalt_core::stimulus::manifest::write_dataset;
use gestalt_core::stimulus::{
    gen_binding_pair, gen_blob, gen_curve, ingest_segmented, scramble_location, scramble_orientation, PatchGrid, Stimulus,
};
use log::info;
use rayon::prelude::*;

use crate::error::Result;
use crate::manifest::file_hash;
use crate::Run;

pub const DIR: &str = "data";

fn many<F>(n: usize, f: F) -> Result<Vec<Stimulus>>
where
    F: Fn(usize) -> gestalt_core::Result<Stimulus> + Sync + Send,
{
    Ok((0..n).into_par_iter().map(f).collect::<gestalt_core::Result<Vec<_>>>()?)
}

pub fn run(run: &mut Run) -> Result<()> {
    let ingest_hashes = run
        .cfg
        .data
        .ingested
        .iter()
        .map(|s| Ok((file_hash(&s.image)?, file_hash(&s.mask)?)))
        .collect::<Result<Vec<_>>>()?;
    let inputs = (run.seed, run.cfg.data.clone(), ingest_hashes);
    run.stage("generate", DIR, &inputs, |run| {
        let seed = run.seed;
        let data = run.cfg.data.clone();
        let p = data.patch_size;
        let write = |name: &str, stimuli: &[Stimulus]| -> Result<()> {
            info!("generate: {name} ({} stimuli)", stimuli.len());
            write_dataset(&run.path(&format!("{DIR}/{name}")), stimuli, Some(p))?;
            Ok(())
        };

        if let Some(spec) = &data.blobs {
            let params = spec.params.clone().unwrap_or_default();
            write("blobs", &many(spec.count, |i| gen_blob(derive_seed(seed, &format!("generate/blobs/{i}")), &params))?)?;
        }
        if let Some(spec) = &data.curves {
            let params = spec.params.clone().unwrap_or_default();
            write("curves", &many(spec.count, |i| gen_curve(derive_seed(seed, &format!("generate/curves/{i}")), &params))?)?;
        }
        let bp = data.binding.resolved();
        for (split, n) in [("train", data.binding.train), ("test", data.binding.test)] {
            let objects = many(n, |i| gen_binding_pair(derive_seed(seed, &format!("generate/binding/{split}/{i}")), &bp))?;
            let scramble = |kind: &str| -> Result<Vec<Stimulus>> {
                many(objects.len(), |i| {
                    let s = &objects[i];
                    let g = PatchGrid::new(s, p)?;
                    let sd = derive_seed(seed, &format!("scramble/{kind}/{split}/{i}"));
                    if kind == "orientation" {
                        scramble_orientation(s, &g, sd)
                    } else {
                        scramble_location(s, &g, sd)
                    }
                })
            };
            write(&format!("scrambled_orientation_{split}"), &scramble("orientation")?)?;
            write(&format!("scrambled_location_{split}"), &scramble("location")?)?;
            write(&format!("object_{split}"), &objects)?;
        }
        if !data.ingested.is_empty() {
            let stimuli = data
                .ingested
                .iter()
                .map(|s| ingest_segmented(&s.image, &s.mask))
                .collect::<gestalt_core::Result<Vec<_>>>()?;
            write("ingested", &stimuli)?;
        }
        Ok(())
    })
}

pub fn load(run: &Run, name: &str) -> Result<Vec<Stimulus>> {
    Ok(gestalt_core::stimulus::manifest::load_dataset(&run.path(&format!("{DIR}/{name}")))?)
}
