//! Molecular graphs from SMILES strings and their categorical feature codes.

pub mod elements;
mod features;
mod smiles;

pub use elements::{atomic_number, default_valence, symbol};
pub use features::{
    atom_feature_codes, bond_feature_codes, AtomCodes, BondCodes, ATOM_VOCAB_SIZES,
    BOND_VOCAB_SIZES,
};
pub use smiles::parse_smiles;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("empty SMILES string")]
    EmptyInput,
    #[error("unknown token at position {0}")]
    UnknownToken(usize),
    #[error("ring closure {0} was never closed")]
    UnclosedRing(u32),
    #[error("unclosed branch")]
    UnclosedBranch,
    #[error("invalid bond at position {0}")]
    InvalidBond(usize),
    #[error("feature `{0}` is out of vocabulary")]
    OutOfVocabulary(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn index(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    /// Bond order as a valence contribution (aromatic counts 1.5).
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    /// Atomic number.
    pub element: u8,
    /// Number of incident heavy-atom bonds.
    pub degree: u8,
    pub formal_charge: i8,
    pub explicit_h: u8,
    pub aromatic: bool,
    /// Written inside `[...]`; such atoms keep their stated hydrogen count.
    pub bracket: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bond {
    pub endpoints: (usize, usize),
    pub order: BondOrder,
    pub in_ring: bool,
}

/// Heavy-atom molecular graph. May be disconnected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub source: String,
}

impl MolGraph {
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// Parse and fill implicit hydrogens in one go.
    pub fn from_smiles(s: &str) -> Result<Self, ChemError> {
        parse_smiles(s).map(implicit_hydrogens)
    }

    /// Applies a node relabeling: atom `i` of `self` becomes atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = self.atoms.clone();
        for (i, atom) in self.atoms.iter().enumerate() {
            atoms[perm[i]] = atom.clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                endpoints: (perm[b.endpoints.0], perm[b.endpoints.1]),
                ..b.clone()
            })
            .collect();
        MolGraph {
            atoms,
            bonds,
            source: self.source.clone(),
        }
    }
}

/// Fills hydrogen counts of unbracketed organic-subset atoms from their default valence.
pub fn implicit_hydrogens(mut g: MolGraph) -> MolGraph {
    let mut bond_sum = vec![0.0f64; g.atoms.len()];
    for b in &g.bonds {
        bond_sum[b.endpoints.0] += b.order.valence();
        bond_sum[b.endpoints.1] += b.order.valence();
    }
    for (atom, sum) in g.atoms.iter_mut().zip(bond_sum) {
        if atom.bracket {
            continue;
        }
        if let Some(valence) = default_valence(atom.element) {
            let free = valence as i64 - sum.floor() as i64;
            atom.explicit_h = atom.explicit_h.max(free.clamp(0, u8::MAX as i64) as u8);
        }
    }
    g
}
