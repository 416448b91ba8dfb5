use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_atomic, TrainingError};

/// Disjoint train/validation/test index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    /// Checks bounds against a dataset of `n` molecules and pairwise disjointness.
    pub fn validate(&self, n: usize) -> Result<(), TrainingError> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= n {
                return Err(TrainingError::IndexOutOfRange { index: i, len: n });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(TrainingError::OverlappingSplits(i));
            }
        }
        Ok(())
    }

    pub fn part(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "valid" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Seeded shuffle of `0..n` cut into contiguous train/valid/test slices.
///
/// Train and valid get `floor(f·n)` indices and test the remainder (folded
/// into train when the test fraction is zero). Every non-zero fraction is
/// guaranteed at least one index, taken from the largest part.
pub fn make_split(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitSpec, TrainingError> {
    let total: f64 = fractions.iter().sum();
    if n < 3 || fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(TrainingError::BadFractions(fractions));
    }
    let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
    let mut sizes = [floor(fractions[0]), floor(fractions[1]), 0];
    sizes[2] = n - sizes[0] - sizes[1];
    if fractions[2] == 0.0 {
        sizes[0] += sizes[2];
        sizes[2] = 0;
    }
    for k in 0..3 {
        if fractions[k] > 0.0 && sizes[k] == 0 {
            // ties go to train
            let donor = (0..3).rev().max_by_key(|&j| sizes[j]).expect("three parts");
            if sizes[donor] <= 1 {
                return Err(TrainingError::BadFractions(fractions));
            }
            sizes[donor] -= 1;
            sizes[k] += 1;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = order.split_at(sizes[0]);
    let (valid, test) = rest.split_at(sizes[1]);
    Ok(SplitSpec {
        train: train.to_vec(),
        valid: valid.to_vec(),
        test: test.to_vec(),
    })
}

/// Reads a split file verbatim, validating it against a dataset of `n` molecules.
pub fn load_split(path: &Path, n: usize) -> Result<SplitSpec, TrainingError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TrainingError::FileNotFound(path.display().to_string()),
        _ => e.into(),
    })?;
    let split: SplitSpec = serde_json::from_str(&text)
        .map_err(|e| TrainingError::IoError(format!("{}: {e}", path.display())))?;
    split.validate(n)?;
    Ok(split)
}

pub fn save_split(path: &Path, split: &SplitSpec) -> Result<(), TrainingError> {
    let json = serde_json::to_string(split).expect("index lists serialize");
    write_atomic(path, json.as_bytes())
}
