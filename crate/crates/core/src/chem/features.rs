use super::{Atom, Bond, ChemError};

/// `[element, degree, charge + 5, hydrogens, aromatic]`.
pub type AtomCodes = [usize; 5];
/// `[bond order, in ring]`.
pub type BondCodes = [usize; 2];

/// Vocabulary size of each atom code, in [`AtomCodes`] order.
pub const ATOM_VOCAB_SIZES: [usize; 5] = [119, 11, 11, 9, 2];
/// Vocabulary size of each bond code, in [`BondCodes`] order.
pub const BOND_VOCAB_SIZES: [usize; 2] = [4, 2];

const ATOM_FIELDS: [&str; 5] = ["element", "degree", "formal_charge", "explicit_h", "aromatic"];

pub fn atom_feature_codes(a: &Atom) -> Result<AtomCodes, ChemError> {
    let codes = [
        a.element as i64,
        a.degree as i64,
        a.formal_charge as i64 + 5,
        a.explicit_h as i64,
        a.aromatic as i64,
    ];
    let mut out = [0usize; 5];
    for (i, &code) in codes.iter().enumerate() {
        if code < 0 || code as usize >= ATOM_VOCAB_SIZES[i] {
            return Err(ChemError::OutOfVocabulary(ATOM_FIELDS[i]));
        }
        out[i] = code as usize;
    }
    Ok(out)
}

pub fn bond_feature_codes(b: &Bond) -> BondCodes {
    [b.order.index(), b.in_ring as usize]
}
