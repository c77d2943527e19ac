//! Synthetic data, manifests, image files and the feature cache.

pub mod cache;
pub mod imageio;
pub mod manifest;
pub mod synth;

pub use cache::{read_cache, write_cache, FeatureCache};
pub use manifest::{ImagePath, Manifest, Record};
pub use synth::{synth_generate, Sample, ShiftParams, ShiftPreset, Split, SynthSpec, Task};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `train` and `test` samples as raw images under `dir/images` plus a
/// `dir/manifest.jsonl` describing them. Returns the manifest.
pub fn write_synthetic(dir: &Path, train: &[Sample], test: &[Sample]) -> Result<Manifest> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut records = Vec::with_capacity(train.len() + test.len());
    for (split, samples) in [(Split::Train, train), (Split::Test, test)] {
        for (i, s) in samples.iter().enumerate() {
            let rel = Path::new("images").join(format!("{}_{i:05}.bsim", split.as_str()));
            imageio::write_raw(&dir.join(&rel), &s.image)?;
            records.push(Record { path: ImagePath::Single(rel), target: s.target, split });
        }
    }
    let manifest = Manifest::new(records, dir);
    manifest.write(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
