use crate::data::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::rng::Prng;

/// Per-class shuffle, then the first `floor(n·train_frac)` of each class go
/// to train and the rest to test. Classes are visited in label order with a
/// single stream seeded by `seed`.
pub fn stratified_split(manifest: &DatasetManifest, train_frac: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1), got {train_frac}")));
    }
    let mut rng = Prng::new(seed);
    let mut out = manifest.clone();
    for (class, name) in manifest.class_names.iter().enumerate() {
        let mut idx: Vec<usize> = (0..manifest.entries.len())
            .filter(|&i| manifest.entries[i].class == class)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class {name} has {} image(s); splitting needs at least 2",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let n_train = (idx.len() as f64 * train_frac).floor() as usize;
        for (rank, &i) in idx.iter().enumerate() {
            out.entries[i].split = if rank < n_train { Split::Train } else { Split::Test };
        }
    }
    Ok(out)
}
