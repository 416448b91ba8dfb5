//! Hand-derived parse tables. Atom rows are `[Z, degree, charge + 5, H, aromatic]`,
//! bond rows are `(u, v, order code, in ring)` in parse order.

use molgap_core::chem::ChemError;

pub struct Valid {
    pub smiles: &'static str,
    pub atoms: &'static [[usize; 5]],
    pub bonds: &'static [(usize, usize, usize, usize)],
}

pub struct Malformed {
    pub smiles: &'static str,
    pub error: ChemError,
}

const CH3: [usize; 5] = [6, 1, 5, 3, 0];
const CH2: [usize; 5] = [6, 2, 5, 2, 0];
const AR_CH: [usize; 5] = [6, 2, 5, 1, 1];
const AR_C: [usize; 5] = [6, 3, 5, 0, 1];

pub const VALID: &[Valid] = &[
    Valid { smiles: "C", atoms: &[[6, 0, 5, 4, 0]], bonds: &[] },
    Valid {
        smiles: "CCO",
        atoms: &[CH3, CH2, [8, 1, 5, 1, 0]],
        bonds: &[(0, 1, 0, 0), (1, 2, 0, 0)],
    },
    Valid {
        smiles: "CC(C)C",
        atoms: &[CH3, [6, 3, 5, 1, 0], CH3, CH3],
        bonds: &[(0, 1, 0, 0), (1, 2, 0, 0), (1, 3, 0, 0)],
    },
    Valid {
        smiles: "C=O",
        atoms: &[[6, 1, 5, 2, 0], [8, 1, 5, 0, 0]],
        bonds: &[(0, 1, 1, 0)],
    },
    Valid {
        smiles: "C#N",
        atoms: &[[6, 1, 5, 1, 0], [7, 1, 5, 0, 0]],
        bonds: &[(0, 1, 2, 0)],
    },
    Valid {
        smiles: "CC(=O)O",
        atoms: &[CH3, [6, 3, 5, 0, 0], [8, 1, 5, 0, 0], [8, 1, 5, 1, 0]],
        bonds: &[(0, 1, 0, 0), (1, 2, 1, 0), (1, 3, 0, 0)],
    },
    Valid {
        smiles: "C1CC1",
        atoms: &[CH2, CH2, CH2],
        bonds: &[(0, 1, 0, 1), (1, 2, 0, 1), (0, 2, 0, 1)],
    },
    Valid {
        smiles: "C%10CC%10",
        atoms: &[CH2, CH2, CH2],
        bonds: &[(0, 1, 0, 1), (1, 2, 0, 1), (0, 2, 0, 1)],
    },
    Valid {
        smiles: "c1ccccc1",
        atoms: &[AR_CH; 6],
        bonds: &[
            (0, 1, 3, 1),
            (1, 2, 3, 1),
            (2, 3, 3, 1),
            (3, 4, 3, 1),
            (4, 5, 3, 1),
            (0, 5, 3, 1),
        ],
    },
    Valid {
        smiles: "c1ccncc1",
        atoms: &[AR_CH, AR_CH, AR_CH, [7, 2, 5, 0, 1], AR_CH, AR_CH],
        bonds: &[
            (0, 1, 3, 1),
            (1, 2, 3, 1),
            (2, 3, 3, 1),
            (3, 4, 3, 1),
            (4, 5, 3, 1),
            (0, 5, 3, 1),
        ],
    },
    Valid {
        smiles: "c1cc[nH]c1",
        atoms: &[AR_CH, AR_CH, AR_CH, [7, 2, 5, 1, 1], AR_CH],
        bonds: &[
            (0, 1, 3, 1),
            (1, 2, 3, 1),
            (2, 3, 3, 1),
            (3, 4, 3, 1),
            (0, 4, 3, 1),
        ],
    },
    // naphthalene: two closure digits share the fusion atoms 3 and 8
    Valid {
        smiles: "c1ccc2ccccc2c1",
        atoms: &[AR_CH, AR_CH, AR_CH, AR_C, AR_CH, AR_CH, AR_CH, AR_CH, AR_C, AR_CH],
        bonds: &[
            (0, 1, 3, 1),
            (1, 2, 3, 1),
            (2, 3, 3, 1),
            (3, 4, 3, 1),
            (4, 5, 3, 1),
            (5, 6, 3, 1),
            (6, 7, 3, 1),
            (7, 8, 3, 1),
            (3, 8, 3, 1),
            (8, 9, 3, 1),
            (0, 9, 3, 1),
        ],
    },
    // bicyclo[2.1.1]hexane
    Valid {
        smiles: "C1CC2CC1C2",
        atoms: &[CH2, CH2, [6, 3, 5, 1, 0], CH2, [6, 3, 5, 1, 0], CH2],
        bonds: &[
            (0, 1, 0, 1),
            (1, 2, 0, 1),
            (2, 3, 0, 1),
            (3, 4, 0, 1),
            (0, 4, 0, 1),
            (4, 5, 0, 1),
            (2, 5, 0, 1),
        ],
    },
    // biphenyl: digit 1 is reused, the linking bond is a bridge
    Valid {
        smiles: "c1ccccc1-c1ccccc1",
        atoms: &[
            AR_CH, AR_CH, AR_CH, AR_CH, AR_CH, AR_C, AR_C, AR_CH, AR_CH, AR_CH, AR_CH, AR_CH,
        ],
        bonds: &[
            (0, 1, 3, 1),
            (1, 2, 3, 1),
            (2, 3, 3, 1),
            (3, 4, 3, 1),
            (4, 5, 3, 1),
            (0, 5, 3, 1),
            (5, 6, 0, 0),
            (6, 7, 3, 1),
            (7, 8, 3, 1),
            (8, 9, 3, 1),
            (9, 10, 3, 1),
            (10, 11, 3, 1),
            (6, 11, 3, 1),
        ],
    },
    Valid { smiles: "[NH4+]", atoms: &[[7, 0, 6, 4, 0]], bonds: &[] },
    Valid {
        smiles: "[O-]C(=O)C",
        atoms: &[[8, 1, 4, 0, 0], [6, 3, 5, 0, 0], [8, 1, 5, 0, 0], CH3],
        bonds: &[(0, 1, 0, 0), (1, 2, 1, 0), (1, 3, 0, 0)],
    },
    Valid {
        smiles: "[Na+].[Cl-]",
        atoms: &[[11, 0, 6, 0, 0], [17, 0, 4, 0, 0]],
        bonds: &[],
    },
    Valid { smiles: "[Fe+3]", atoms: &[[26, 0, 8, 0, 0]], bonds: &[] },
    Valid {
        smiles: "[13CH3]O",
        atoms: &[CH3, [8, 1, 5, 1, 0]],
        bonds: &[(0, 1, 0, 0)],
    },
    Valid {
        smiles: "CCO.O",
        atoms: &[CH3, CH2, [8, 1, 5, 1, 0], [8, 0, 5, 2, 0]],
        bonds: &[(0, 1, 0, 0), (1, 2, 0, 0)],
    },
    Valid {
        smiles: "FC(F)(F)Cl",
        atoms: &[
            [9, 1, 5, 0, 0],
            [6, 4, 5, 0, 0],
            [9, 1, 5, 0, 0],
            [9, 1, 5, 0, 0],
            [17, 1, 5, 0, 0],
        ],
        bonds: &[(0, 1, 0, 0), (1, 2, 0, 0), (1, 3, 0, 0), (1, 4, 0, 0)],
    },
    Valid {
        smiles: "CC(C)(C)C(=O)N",
        atoms: &[
            CH3,
            [6, 4, 5, 0, 0],
            CH3,
            CH3,
            [6, 3, 5, 0, 0],
            [8, 1, 5, 0, 0],
            [7, 1, 5, 2, 0],
        ],
        bonds: &[
            (0, 1, 0, 0),
            (1, 2, 0, 0),
            (1, 3, 0, 0),
            (1, 4, 0, 0),
            (4, 5, 1, 0),
            (4, 6, 0, 0),
        ],
    },
];

pub fn malformed() -> Vec<Malformed> {
    use ChemError::*;
    let case = |smiles, error| Malformed { smiles, error };
    vec![
        case("", EmptyInput),
        case("C(", UnclosedBranch),
        case("C1CC", UnclosedRing(1)),
        case("Cxx", UnknownToken(1)),
        case("[C", UnknownToken(2)),
        case("C)", UnknownToken(1)),
        case("CC=", InvalidBond(2)),
        case("C11", InvalidBond(2)),
    ]
}
