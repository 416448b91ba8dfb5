//! Python bindings: SMILES parsing, training, prediction and ensemble statistics.

use pyo3::exceptions::{PyFileNotFoundError, PyIndexError, PyValueError};
use pyo3::prelude::*;

use molgap_core::chem::{
    atom_feature_codes, bond_feature_codes, AtomCodes, BondCodes, ChemError, MolGraph,
};
use molgap_core::ensemble::{self, EnsembleError, PredictionMatrix};
use molgap_core::models::{count_params, ModelConfig, ModelParams, Variant};
use molgap_core::training::{self, SplitSpec, TrainConfig, TrainingError};

fn chem_err(e: ChemError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// `(epoch, train_loss, valid_mae)`.
type HistoryRow = (usize, f64, Option<f64>);

fn training_err(e: TrainingError) -> PyErr {
    match e {
        TrainingError::FileNotFound(p) => PyFileNotFoundError::new_err(p),
        TrainingError::IndexOutOfRange { .. } => PyIndexError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn ensemble_err(e: EnsembleError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_variant(s: &str) -> PyResult<Variant> {
    s.parse().map_err(PyValueError::new_err)
}

/// A heavy-atom molecular graph.
#[pyclass(frozen, module = "molgap")]
struct Molecule {
    graph: MolGraph,
}

#[pymethods]
impl Molecule {
    #[new]
    fn new(smiles: &str) -> PyResult<Self> {
        Ok(Self {
            graph: MolGraph::from_smiles(smiles).map_err(chem_err)?,
        })
    }

    #[getter]
    fn smiles(&self) -> &str {
        &self.graph.source
    }

    #[getter]
    fn num_atoms(&self) -> usize {
        self.graph.num_atoms()
    }

    #[getter]
    fn num_bonds(&self) -> usize {
        self.graph.num_bonds()
    }

    /// `(atomic_number, degree, formal_charge, num_hs, aromatic)` per atom.
    fn atoms(&self) -> Vec<(u8, u8, i8, u8, bool)> {
        self.graph
            .atoms
            .iter()
            .map(|a| (a.element, a.degree, a.formal_charge, a.explicit_h, a.aromatic))
            .collect()
    }

    /// `(i, j, bond_type_code, in_ring)` per bond.
    fn bonds(&self) -> Vec<(usize, usize, usize, bool)> {
        self.graph
            .bonds
            .iter()
            .map(|b| (b.endpoints.0, b.endpoints.1, b.order.index(), b.in_ring))
            .collect()
    }

    /// Integer feature codes: five per atom and two per bond.
    fn feature_codes(&self) -> PyResult<(Vec<AtomCodes>, Vec<BondCodes>)> {
        let atoms = self
            .graph
            .atoms
            .iter()
            .map(atom_feature_codes)
            .collect::<Result<Vec<_>, _>>()
            .map_err(chem_err)?;
        let bonds = self.graph.bonds.iter().map(bond_feature_codes).collect();
        Ok((atoms, bonds))
    }

    fn __repr__(&self) -> String {
        format!(
            "Molecule('{}', atoms={}, bonds={})",
            self.graph.source,
            self.graph.num_atoms(),
            self.graph.num_bonds()
        )
    }
}

/// Molecules with optional gap targets.
#[pyclass(frozen, module = "molgap")]
struct Dataset {
    inner: training::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (smiles, targets=None))]
    fn new(smiles: Vec<String>, targets: Option<Vec<Option<f64>>>) -> PyResult<Self> {
        let targets = targets.unwrap_or_else(|| vec![None; smiles.len()]);
        if targets.len() != smiles.len() {
            return Err(PyValueError::new_err("smiles and targets differ in length"));
        }
        let molecules = smiles
            .iter()
            .enumerate()
            .map(|(row, s)| {
                MolGraph::from_smiles(s).map_err(|e| PyValueError::new_err(format!("row {row}: {e}")))
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self {
            inner: training::Dataset { molecules, targets },
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = training::load_dataset(path.as_ref()).map_err(training_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn targets(&self) -> Vec<Option<f64>> {
        self.inner.targets.clone()
    }
}

/// A trained weak learner.
#[pyclass(frozen, module = "molgap")]
struct Checkpoint {
    inner: training::Checkpoint,
}

fn all_indices(dataset: &Dataset, indices: Option<Vec<usize>>) -> Vec<usize> {
    indices.unwrap_or_else(|| (0..dataset.inner.len()).collect())
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    #[pyo3(signature = (path, variant=None))]
    fn load(path: &str, variant: Option<&str>) -> PyResult<Self> {
        let expected = variant.map(parse_variant).transpose()?;
        let inner = training::load_checkpoint(path.as_ref(), expected).map_err(training_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (text, variant=None))]
    fn from_json(text: &str, variant: Option<&str>) -> PyResult<Self> {
        let expected = variant.map(parse_variant).transpose()?;
        let inner = training::Checkpoint::from_json(text, expected).map_err(training_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        training::save_checkpoint(path.as_ref(), &self.inner).map_err(training_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(training_err)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.config.variant.as_str()
    }

    #[getter]
    fn num_params(&self) -> usize {
        count_params(&self.inner.params)
    }

    /// `(seed, epochs, valid_mae)`.
    #[getter]
    fn metadata(&self) -> (u64, usize, Option<f64>) {
        let m = &self.inner.metadata;
        (m.seed, m.epochs, m.valid_mae)
    }

    #[pyo3(signature = (dataset, indices=None))]
    fn predict(&self, py: Python<'_>, dataset: &Dataset, indices: Option<Vec<usize>>) -> PyResult<Vec<f64>> {
        let indices = all_indices(dataset, indices);
        py.detach(|| training::predict(&self.inner, &dataset.inner, &indices))
            .map_err(training_err)
    }

    #[pyo3(signature = (dataset, indices=None))]
    fn evaluate_mae(&self, py: Python<'_>, dataset: &Dataset, indices: Option<Vec<usize>>) -> PyResult<f64> {
        let indices = all_indices(dataset, indices);
        py.detach(|| training::evaluate_mae(&self.inner, &dataset.inner, &indices))
            .map_err(training_err)
    }
}

/// Seeded random split, returned as `(train, valid, test)` index lists.
#[pyfunction]
#[pyo3(signature = (n, fractions=(0.8, 0.1, 0.1), seed=0))]
fn make_split(n: usize, fractions: (f64, f64, f64), seed: u64) -> PyResult<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let s = training::make_split(n, [fractions.0, fractions.1, fractions.2], seed).map_err(training_err)?;
    Ok((s.train, s.valid, s.test))
}

/// Trains one learner; `config` is a JSON document with the training config fields.
///
/// Returns the checkpoint and `(epoch, train_loss, valid_mae)` history rows.
#[pyfunction]
#[pyo3(signature = (dataset, train_indices, valid_indices=vec![], config=None, variant=None, seed=None))]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    train_indices: Vec<usize>,
    valid_indices: Vec<usize>,
    config: Option<&str>,
    variant: Option<&str>,
    seed: Option<u64>,
) -> PyResult<(Checkpoint, Vec<HistoryRow>)> {
    let mut cfg: TrainConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = variant {
        cfg.model.variant = parse_variant(v)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let split = SplitSpec {
        train: train_indices,
        valid: valid_indices,
        test: vec![],
    };
    let outcome = py
        .detach(|| training::train(&dataset.inner, &split, &cfg))
        .map_err(training_err)?;
    let history = outcome
        .history
        .iter()
        .map(|r| (r.epoch, r.train_loss, r.valid_mae))
        .collect();
    Ok((Checkpoint { inner: outcome.checkpoint }, history))
}

/// Trainable parameter count of a freshly initialized model.
#[pyfunction]
#[pyo3(signature = (variant="gin_virtual", latent_dim=600, num_layers=5))]
fn num_params(variant: &str, latent_dim: usize, num_layers: usize) -> PyResult<usize> {
    use rand::SeedableRng;
    let config = ModelConfig::new(parse_variant(variant)?, latent_dim, num_layers);
    let params = ModelParams::init(&config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(count_params(&params))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<PredictionMatrix> {
    PredictionMatrix::from_rows(rows).map_err(ensemble_err)
}

/// Columnwise mean of learner rows.
#[pyfunction]
fn ensemble_mean(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(ensemble::ensemble_mean(&matrix(rows)?))
}

/// Columnwise sample standard deviation of learner rows.
#[pyfunction]
fn uncertainty_std(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    ensemble::uncertainty_std(&matrix(rows)?).map_err(ensemble_err)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    ensemble::pearson(&x, &y).map_err(ensemble_err)
}

/// `(pearson_raw, pearson_binned, bins)` with bins as
/// `(lower, upper, mean_uncertainty, mean_abs_error, count)`.
#[pyfunction]
#[pyo3(signature = (rows, targets, bins=ensemble::DEFAULT_BINS))]
#[allow(clippy::type_complexity)]
fn error_vs_uncertainty(
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    bins: usize,
) -> PyResult<(Option<f64>, Option<f64>, Vec<(f64, f64, Option<f64>, Option<f64>, usize)>)> {
    let r = ensemble::error_vs_uncertainty(&matrix(rows)?, &targets, bins).map_err(ensemble_err)?;
    let bins = r
        .bins
        .iter()
        .map(|b| (b.lower, b.upper, b.mean_uncertainty, b.mean_abs_error, b.count))
        .collect();
    Ok((r.pearson_raw, r.pearson_binned, bins))
}

/// `(ensemble_mae, mean_individual_mae, holds)`.
#[pyfunction]
fn ensemble_mae_bound_check(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> PyResult<(f64, f64, bool)> {
    let b = ensemble::ensemble_mae_bound_check(&matrix(rows)?, &targets).map_err(ensemble_err)?;
    Ok((b.ensemble_mae, b.mean_individual_mae, b.holds))
}

/// `n` seeded `(smiles, target)` pairs with targets from atom counts.
#[pyfunction]
#[pyo3(signature = (n, seed=0))]
fn synthetic_corpus(n: usize, seed: u64) -> Vec<(String, f64)> {
    training::synthetic_corpus(n, seed)
}

#[pymodule]
fn molgap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Molecule>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(make_split, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(num_params, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_mean, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty_std, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(error_vs_uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_mae_bound_check, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    Ok(())
}
