//! A synthetic SMILES corpus whose targets are a smooth function of atom counts.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chem::{elements, MolGraph};

use super::{write_atomic, TrainingError};

/// Fragments that can sit anywhere in a chain; the next fragment bonds to the
/// last atom outside any branch.
const LINKERS: &[&str] = &[
    "C", "CC", "C(C)", "C(=O)", "N", "O", "C=C", "c1ccc(cc1)", "c1ccc(nc1)", "C1CCC(CC1)",
    "C(F)", "S", "C(O)", "N(C)",
];

/// Terminal groups.
const CAPS: &[&str] = &["F", "Cl", "C", "O", "N", "C#N", "C(F)(F)F", "c1ccccc1", "C(=O)O", "Br"];

/// Gap-like target in eV from heavy-atom composition.
pub fn synthetic_target(g: &MolGraph) -> f64 {
    let count = |z: u8| g.atoms.iter().filter(|a| a.element == z).count() as f64;
    let heavy = g.num_atoms() as f64;
    let aromatic = g.atoms.iter().filter(|a| a.aromatic).count() as f64;
    let halogens = count(elements::FLUORINE) + count(elements::CHLORINE) + count(elements::BROMINE);
    3.0 + 6.0 * (-heavy / 8.0).exp() + 0.4 * count(elements::OXYGEN) + 0.25 * count(elements::NITROGEN)
        + 0.2 * halogens
        - 0.1 * aromatic
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

/// `n` seeded `(smiles, target)` pairs of 1 to roughly 25 heavy atoms.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut s = String::new();
            if rng.random_bool(0.6) {
                s.push_str(pick(&mut rng, CAPS));
            }
            for _ in 0..rng.random_range(0..4) {
                s.push_str(pick(&mut rng, LINKERS));
            }
            if s.is_empty() || rng.random_bool(0.6) {
                s.push_str(pick(&mut rng, CAPS));
            }
            let g = MolGraph::from_smiles(&s).expect("fragments concatenate to valid SMILES");
            let y = synthetic_target(&g);
            (s, y)
        })
        .collect()
}

/// Writes a `smiles,homolumogap` CSV atomically.
pub fn write_corpus(path: &Path, rows: &[(String, f64)]) -> Result<(), TrainingError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["smiles", "homolumogap"])?;
    for (smiles, y) in rows {
        w.write_record([smiles.as_str(), &y.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| TrainingError::IoError(e.to_string()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::load_dataset;

    #[test]
    fn corpus_parses_and_is_seeded() {
        let rows = synthetic_corpus(300, 1);
        assert_eq!(rows, synthetic_corpus(300, 1));
        assert_ne!(rows, synthetic_corpus(300, 2));
        for (s, y) in &rows {
            let g = MolGraph::from_smiles(s).unwrap();
            assert!(g.num_atoms() <= 30, "{s}");
            assert!((0.0..50.0).contains(y));
        }
        let distinct: std::collections::BTreeSet<_> = rows.iter().map(|r| &r.0).collect();
        assert!(distinct.len() > 150);
    }

    #[test]
    fn target_examples() {
        let methane = MolGraph::from_smiles("C").unwrap();
        assert!((synthetic_target(&methane) - (3.0 + 6.0 * (-1.0f64 / 8.0).exp())).abs() < 1e-12);
        let ethanol = MolGraph::from_smiles("CCO").unwrap();
        let expected = 3.0 + 6.0 * (-3.0f64 / 8.0).exp() + 0.4;
        assert!((synthetic_target(&ethanol) - expected).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.csv");
        let rows = synthetic_corpus(20, 3);
        write_corpus(&path, &rows).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.len(), 20);
        for (t, (_, y)) in ds.targets.iter().zip(&rows) {
            assert_eq!(t.unwrap(), *y);
        }
    }
}
