use std::fs::File;
use std::path::Path;

use crate::chem::{atom_feature_codes, ChemError, MolGraph};

use super::TrainingError;

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub molecules: Vec<MolGraph>,
    /// Gap in eV, absent when the CSV cell is empty.
    pub targets: Vec<Option<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    /// Targets at `indices`, failing on the first absent one.
    pub fn targets_at(&self, indices: &[usize]) -> Result<Vec<f64>, TrainingError> {
        indices
            .iter()
            .map(|&i| {
                let t = self.targets.get(i).ok_or(TrainingError::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                })?;
                t.ok_or(TrainingError::MissingTargets(i))
            })
            .collect()
    }
}

/// A parsed and featurizable molecule; vocabulary overflow counts as a parse failure.
fn parse_row(smiles: &str) -> Result<MolGraph, ChemError> {
    let g = MolGraph::from_smiles(smiles)?;
    for atom in &g.atoms {
        atom_feature_codes(atom)?;
    }
    Ok(g)
}

type Rows = Vec<(usize, String, Option<String>)>;

fn read_rows(path: &Path) -> Result<Rows, TrainingError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TrainingError::FileNotFound(path.display().to_string()),
        _ => e.into(),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let header = reader.headers()?.clone();
    let smiles_col = header.iter().position(|h| h == "smiles");
    let gap_col = header.iter().position(|h| h == "homolumogap");
    let (Some(smiles_col), Some(gap_col)) = (smiles_col, gap_col) else {
        return Err(TrainingError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    };
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let smiles = record.get(smiles_col).unwrap_or("").to_string();
        let gap = record.get(gap_col).filter(|s| !s.is_empty()).map(str::to_string);
        rows.push((row, smiles, gap));
    }
    Ok(rows)
}

fn parse_gap(row: usize, gap: Option<String>) -> Result<Option<f64>, TrainingError> {
    match gap {
        None => Ok(None),
        Some(s) => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(TrainingError::BadTarget { row, value: s }),
        },
    }
}

/// Reads a `smiles,homolumogap` CSV; `row` in errors is the zero-based data row.
pub fn load_dataset(path: &Path) -> Result<Dataset, TrainingError> {
    let mut ds = Dataset::default();
    for (row, smiles, gap) in read_rows(path)? {
        let g = parse_row(&smiles).map_err(|source| TrainingError::ParseError { row, source })?;
        ds.molecules.push(g);
        ds.targets.push(parse_gap(row, gap)?);
    }
    Ok(ds)
}

/// Like [`load_dataset`] but skips bad rows, returning them alongside the valid molecules.
pub fn load_dataset_lenient(path: &Path) -> Result<(Dataset, Vec<TrainingError>), TrainingError> {
    let mut ds = Dataset::default();
    let mut failures = Vec::new();
    for (row, smiles, gap) in read_rows(path)? {
        let parsed = parse_row(&smiles)
            .map_err(|source| TrainingError::ParseError { row, source })
            .and_then(|g| Ok((g, parse_gap(row, gap)?)));
        match parsed {
            Ok((g, t)) => {
                ds.molecules.push(g);
                ds.targets.push(t);
            }
            Err(e) => failures.push(e),
        }
    }
    Ok((ds, failures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_rows() {
        let f = csv_file("smiles,homolumogap\nC,10.5\nCCO,\n");
        let ds = load_dataset(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.targets, vec![Some(10.5), None]);
        assert_eq!(ds.molecules[1].num_atoms(), 3);
        assert!(matches!(ds.targets_at(&[0, 1]), Err(TrainingError::MissingTargets(1))));
    }

    #[test]
    fn extra_index_column_is_ignored() {
        let f = csv_file("idx,smiles,homolumogap\n0,CC,3.5\n");
        let ds = load_dataset(f.path()).unwrap();
        assert_eq!(ds.targets_at(&[0]).unwrap(), vec![3.5]);
    }

    #[test]
    fn errors() {
        let f = csv_file("smiles,homolumogap\nC,1.0\nCxx,1.0\n");
        assert!(matches!(
            load_dataset(f.path()),
            Err(TrainingError::ParseError { row: 1, source: ChemError::UnknownToken(1) })
        ));
        let f = csv_file("smiles,gap\nC,1.0\n");
        assert!(matches!(load_dataset(f.path()), Err(TrainingError::BadHeader(_))));
        let f = csv_file("");
        assert!(matches!(load_dataset(f.path()), Err(TrainingError::BadHeader(_))));
        let f = csv_file("smiles,homolumogap\nC,abc\n");
        assert!(matches!(load_dataset(f.path()), Err(TrainingError::BadTarget { row: 0, .. })));
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/data.csv")),
            Err(TrainingError::FileNotFound(_))
        ));
    }

    #[test]
    fn lenient_collects_failures() {
        let f = csv_file("smiles,homolumogap\nC,1.0\nC1CC,2.0\nCC,\n");
        let (ds, failures) = load_dataset_lenient(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(failures.len(), 1);
        assert!(matches!(failures[0], TrainingError::ParseError { row: 1, .. }));
    }
}
