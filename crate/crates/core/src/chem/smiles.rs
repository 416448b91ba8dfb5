//! Parser for the practical SMILES subset found in quantum-chemistry datasets.
//!
//! Supported: organic-subset atoms (`B C N O P S F Cl Br I`), their aromatic
//! lowercase forms, bracket atoms (isotope and chirality are parsed and
//! ignored), bonds `- = # :`, the stereo bonds `/` and `\` (read as single),
//! ring closures `0-9` and `%nn`, branches and `.` components.

use std::collections::BTreeMap;

use super::elements::{self, atomic_number, HYDROGEN};
use super::{Atom, Bond, BondOrder, ChemError, MolGraph};

struct RingOpening {
    atom: usize,
    order: Option<BondOrder>,
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    rings: BTreeMap<u32, RingOpening>,
}

/// Parses a SMILES string into a heavy-atom graph.
///
/// Hydrogen counts of unbracketed atoms are left at zero (or at the number of
/// folded `[H]` neighbours); see [`super::implicit_hydrogens`].
pub fn parse_smiles(s: &str) -> Result<MolGraph, ChemError> {
    if s.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    if let Some(p) = s.bytes().position(|b| !b.is_ascii() || b.is_ascii_whitespace()) {
        return Err(ChemError::UnknownToken(p));
    }
    let mut parser = Parser {
        input: s.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        rings: BTreeMap::new(),
    };
    parser.run()?;
    let (atoms, bonds) = fold_hydrogens(parser.atoms, parser.bonds);
    let mut graph = MolGraph {
        atoms,
        bonds,
        source: s.to_string(),
    };
    finalize(&mut graph);
    Ok(graph)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), ChemError> {
        let mut prev: Option<usize> = None;
        // (position of the bond symbol, order)
        let mut pending: Option<(usize, BondOrder)> = None;
        let mut branches: Vec<usize> = Vec::new();

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'A'..=b'Z' | b'a'..=b'z' | b'[' => {
                    let atom = if c == b'[' {
                        self.bracket_atom()?
                    } else {
                        self.organic_atom()?
                    };
                    let idx = self.atoms.len();
                    self.atoms.push(atom);
                    match (prev, pending.take()) {
                        (Some(p), bond) => {
                            let order = bond.map(|(_, o)| o);
                            self.add_bond(p, idx, order, start)?;
                        }
                        (None, Some((at, _))) => return Err(ChemError::InvalidBond(at)),
                        (None, None) => {}
                    }
                    prev = Some(idx);
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if prev.is_none() || pending.is_some() {
                        return Err(ChemError::UnknownToken(start));
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        _ => BondOrder::Single,
                    };
                    pending = Some((start, order));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return Err(ChemError::UnknownToken(start));
                    };
                    let number = self.ring_number()?;
                    let order = pending.take().map(|(_, o)| o);
                    match self.rings.remove(&number) {
                        Some(open) => {
                            let order = match (open.order, order) {
                                (Some(a), Some(b)) if a != b => {
                                    return Err(ChemError::InvalidBond(start))
                                }
                                (a, b) => a.or(b),
                            };
                            self.add_bond(open.atom, atom, order, start)?;
                        }
                        None => {
                            self.rings.insert(number, RingOpening { atom, order });
                        }
                    }
                }
                b'(' => {
                    let Some(atom) = prev else {
                        return Err(ChemError::UnknownToken(start));
                    };
                    if pending.is_some() {
                        return Err(ChemError::UnknownToken(start));
                    }
                    branches.push(atom);
                    self.pos += 1;
                }
                b')' => {
                    if let Some((at, _)) = pending {
                        return Err(ChemError::InvalidBond(at));
                    }
                    prev = Some(branches.pop().ok_or(ChemError::UnknownToken(start))?);
                    self.pos += 1;
                }
                b'.' => {
                    if pending.is_some() || !branches.is_empty() {
                        return Err(ChemError::UnknownToken(start));
                    }
                    prev = None;
                    self.pos += 1;
                }
                _ => return Err(ChemError::UnknownToken(start)),
            }
        }

        if let Some((at, _)) = pending {
            return Err(ChemError::InvalidBond(at));
        }
        if !branches.is_empty() {
            return Err(ChemError::UnclosedBranch);
        }
        if let Some((&number, _)) = self.rings.iter().next() {
            return Err(ChemError::UnclosedRing(number));
        }
        if self.atoms.is_empty() {
            return Err(ChemError::EmptyInput);
        }
        Ok(())
    }

    fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        order: Option<BondOrder>,
        pos: usize,
    ) -> Result<(), ChemError> {
        let duplicate = self.bonds.iter().any(|bond| {
            bond.endpoints == (a, b) || bond.endpoints == (b, a)
        });
        if a == b || duplicate {
            return Err(ChemError::InvalidBond(pos));
        }
        let order = order.unwrap_or(if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        });
        self.bonds.push(Bond {
            endpoints: (a, b),
            order,
            in_ring: false,
        });
        Ok(())
    }

    fn ring_number(&mut self) -> Result<u32, ChemError> {
        let start = self.pos;
        if self.peek() == Some(b'%') {
            let digits = self.input.get(start + 1..start + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => Err(ChemError::UnknownToken(start)),
            }
        } else {
            self.pos += 1;
            Ok((self.input[start] - b'0') as u32)
        }
    }

    fn organic_atom(&mut self) -> Result<Atom, ChemError> {
        let start = self.pos;
        let c = self.input[start];
        let next = self.input.get(start + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (elements::CHLORINE, false, 2),
            (b'B', Some(b'r')) => (elements::BROMINE, false, 2),
            (b'B', _) => (elements::BORON, false, 1),
            (b'C', _) => (elements::CARBON, false, 1),
            (b'N', _) => (elements::NITROGEN, false, 1),
            (b'O', _) => (elements::OXYGEN, false, 1),
            (b'P', _) => (elements::PHOSPHORUS, false, 1),
            (b'S', _) => (elements::SULFUR, false, 1),
            (b'F', _) => (elements::FLUORINE, false, 1),
            (b'I', _) => (elements::IODINE, false, 1),
            (b'b', _) => (elements::BORON, true, 1),
            (b'c', _) => (elements::CARBON, true, 1),
            (b'n', _) => (elements::NITROGEN, true, 1),
            (b'o', _) => (elements::OXYGEN, true, 1),
            (b'p', _) => (elements::PHOSPHORUS, true, 1),
            (b's', _) => (elements::SULFUR, true, 1),
            _ => return Err(ChemError::UnknownToken(start)),
        };
        self.pos += len;
        Ok(Atom {
            element,
            degree: 0,
            formal_charge: 0,
            explicit_h: 0,
            aromatic,
            bracket: false,
        })
    }

    fn digits(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.input[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
    }

    fn bracket_atom(&mut self) -> Result<Atom, ChemError> {
        let open = self.pos;
        self.pos += 1;
        // isotope, ignored
        let _ = self.digits();

        let sym_start = self.pos;
        let (element, aromatic) = match self.peek() {
            Some(c) if c.is_ascii_uppercase() => {
                let two = self.input.get(sym_start..sym_start + 2);
                let two = two.and_then(|t| std::str::from_utf8(t).ok());
                match two.and_then(|t| {
                    t.as_bytes()[1]
                        .is_ascii_lowercase()
                        .then(|| atomic_number(t))
                        .flatten()
                }) {
                    Some(z) => {
                        self.pos += 2;
                        (z, false)
                    }
                    None => {
                        let one = std::str::from_utf8(&self.input[sym_start..sym_start + 1])
                            .expect("ascii");
                        let z = atomic_number(one).ok_or(ChemError::UnknownToken(sym_start))?;
                        self.pos += 1;
                        (z, false)
                    }
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let rest = &self.input[sym_start..];
                let (z, len) = if rest.starts_with(b"se") {
                    (34, 2)
                } else if rest.starts_with(b"as") {
                    (33, 2)
                } else if rest.starts_with(b"te") {
                    (52, 2)
                } else {
                    match c {
                        b'b' => (elements::BORON, 1),
                        b'c' => (elements::CARBON, 1),
                        b'n' => (elements::NITROGEN, 1),
                        b'o' => (elements::OXYGEN, 1),
                        b'p' => (elements::PHOSPHORUS, 1),
                        b's' => (elements::SULFUR, 1),
                        _ => return Err(ChemError::UnknownToken(sym_start)),
                    }
                };
                self.pos += len;
                (z, true)
            }
            _ => return Err(ChemError::UnknownToken(sym_start)),
        };

        // chirality, ignored
        while self.peek() == Some(b'@') {
            self.pos += 1;
        }

        let mut explicit_h = 0u32;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            explicit_h = self.digits().unwrap_or(1);
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            match self.digits() {
                Some(n) => charge = unit * n as i32,
                None => {
                    charge = unit;
                    while self.peek() == Some(sign) {
                        charge += unit;
                        self.pos += 1;
                    }
                }
            }
        }

        // atom class, ignored
        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.digits().is_none() {
                return Err(ChemError::UnknownToken(self.pos));
            }
        }

        if self.peek() != Some(b']') {
            return Err(ChemError::UnknownToken(self.pos.min(self.input.len())));
        }
        self.pos += 1;

        let formal_charge =
            i8::try_from(charge).map_err(|_| ChemError::UnknownToken(open))?;
        let explicit_h = u8::try_from(explicit_h).map_err(|_| ChemError::UnknownToken(open))?;
        Ok(Atom {
            element,
            degree: 0,
            formal_charge,
            explicit_h,
            aromatic,
            bracket: true,
        })
    }
}

/// Removes neutral bracket hydrogens bonded to exactly one heavy atom,
/// crediting them to that atom's hydrogen count.
fn fold_hydrogens(atoms: Vec<Atom>, bonds: Vec<Bond>) -> (Vec<Atom>, Vec<Bond>) {
    let mut neighbours = vec![Vec::new(); atoms.len()];
    for (i, b) in bonds.iter().enumerate() {
        neighbours[b.endpoints.0].push(i);
        neighbours[b.endpoints.1].push(i);
    }
    let other = |b: &Bond, i: usize| {
        if b.endpoints.0 == i {
            b.endpoints.1
        } else {
            b.endpoints.0
        }
    };
    let foldable: Vec<bool> = atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            a.element == HYDROGEN
                && a.formal_charge == 0
                && a.explicit_h == 0
                && neighbours[i].len() == 1
                && bonds[neighbours[i][0]].order == BondOrder::Single
                && atoms[other(&bonds[neighbours[i][0]], i)].element != HYDROGEN
        })
        .collect();
    if !foldable.iter().any(|&f| f) {
        return (atoms, bonds);
    }

    let mut new_index = vec![usize::MAX; atoms.len()];
    let mut kept = Vec::with_capacity(atoms.len());
    for (i, a) in atoms.iter().enumerate() {
        if !foldable[i] {
            new_index[i] = kept.len();
            kept.push(a.clone());
        }
    }
    let mut kept_bonds = Vec::with_capacity(bonds.len());
    for b in bonds {
        let (u, v) = b.endpoints;
        match (foldable[u], foldable[v]) {
            (true, false) => {
                let heavy = &mut kept[new_index[v]];
                heavy.explicit_h = heavy.explicit_h.saturating_add(1);
            }
            (false, true) => {
                let heavy = &mut kept[new_index[u]];
                heavy.explicit_h = heavy.explicit_h.saturating_add(1);
            }
            _ => kept_bonds.push(Bond {
                endpoints: (new_index[u], new_index[v]),
                ..b
            }),
        }
    }
    (kept, kept_bonds)
}

/// Computes degrees and ring membership (a bond is in a ring iff it is not a bridge).
fn finalize(g: &mut MolGraph) {
    let n = g.atoms.len();
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, b) in g.bonds.iter().enumerate() {
        adjacency[b.endpoints.0].push((b.endpoints.1, i));
        adjacency[b.endpoints.1].push((b.endpoints.0, i));
    }
    for (atom, adj) in g.atoms.iter_mut().zip(&adjacency) {
        atom.degree = u8::try_from(adj.len()).unwrap_or(u8::MAX);
    }
    let bridges = find_bridges(&adjacency, g.bonds.len());
    for (bond, bridge) in g.bonds.iter_mut().zip(bridges) {
        bond.in_ring = !bridge;
    }
}

fn find_bridges(adjacency: &[Vec<(usize, usize)>], num_edges: usize) -> Vec<bool> {
    let n = adjacency.len();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut bridge = vec![false; num_edges];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // iterative DFS: (vertex, parent edge, next neighbour slot)
        let mut stack = vec![(root, usize::MAX, 0usize)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (v, parent_edge, ref mut slot)) = stack.last_mut() {
            if let Some(&(w, e)) = adjacency[v].get(*slot) {
                *slot += 1;
                if e == parent_edge {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, e, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > disc[parent] {
                        bridge[parent_edge] = true;
                    }
                }
            }
        }
    }
    bridge
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_atom(s: &str) -> Atom {
        let g = parse_smiles(s).unwrap();
        assert_eq!(g.atoms.len(), 1);
        g.atoms[0].clone()
    }

    #[test]
    fn methane() {
        let g = parse_smiles("C").unwrap();
        assert_eq!(g.atoms.len(), 1);
        assert_eq!(g.atoms[0].element, 6);
        assert!(g.bonds.is_empty());
    }

    #[test]
    fn ethanol_is_a_path() {
        let g = parse_smiles("CCO").unwrap();
        assert_eq!(g.atoms.len(), 3);
        let ends: Vec<_> = g.bonds.iter().map(|b| b.endpoints).collect();
        assert_eq!(ends, vec![(0, 1), (1, 2)]);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single && !b.in_ring));
    }

    #[test]
    fn benzene_ring_closure() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.atoms.len(), 6);
        assert!(g.atoms.iter().all(|a| a.aromatic && a.element == 6 && a.degree == 2));
        assert_eq!(g.bonds.len(), 6);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic && b.in_ring));
        assert_eq!(g.bonds[5].endpoints, (0, 5));
    }

    #[test]
    fn ammonium() {
        let a = single_atom("[NH4+]");
        assert_eq!(a.element, 7);
        assert_eq!(a.formal_charge, 1);
        assert_eq!(a.explicit_h, 4);
        assert!(a.bracket);
    }

    #[test]
    fn bracket_variants() {
        assert_eq!(single_atom("[13CH4]").explicit_h, 4);
        assert_eq!(single_atom("[O-2]").formal_charge, -2);
        assert_eq!(single_atom("[Fe+++]").formal_charge, 3);
        assert_eq!(single_atom("[C@@H]").explicit_h, 1);
        assert!(single_atom("[nH]").aromatic);
        assert_eq!(single_atom("[se]").element, 34);
        assert_eq!(single_atom("[Cl-]").element, 17);
        assert_eq!(single_atom("[CH3:7]").explicit_h, 3);
        assert_eq!(single_atom("[Sc]").element, 21);
    }

    #[test]
    fn errors() {
        assert_eq!(parse_smiles(""), Err(ChemError::EmptyInput));
        assert_eq!(parse_smiles("C("), Err(ChemError::UnclosedBranch));
        assert_eq!(parse_smiles("C1CC"), Err(ChemError::UnclosedRing(1)));
        assert_eq!(parse_smiles("Cxx"), Err(ChemError::UnknownToken(1)));
        assert_eq!(parse_smiles("C)"), Err(ChemError::UnknownToken(1)));
        assert_eq!(parse_smiles("[Xx]"), Err(ChemError::UnknownToken(1)));
        assert_eq!(parse_smiles("[C"), Err(ChemError::UnknownToken(2)));
        assert_eq!(parse_smiles("C11"), Err(ChemError::InvalidBond(2)));
        assert_eq!(parse_smiles("CC="), Err(ChemError::InvalidBond(2)));
        assert_eq!(parse_smiles("=C"), Err(ChemError::UnknownToken(0)));
        assert_eq!(parse_smiles("C=1CC#1"), Err(ChemError::InvalidBond(6)));
        assert_eq!(parse_smiles("C C"), Err(ChemError::UnknownToken(1)));
    }

    #[test]
    fn hydrogens_are_folded() {
        let g = parse_smiles("[H]C([H])([H])[H]").unwrap();
        assert_eq!(g.atoms.len(), 1);
        assert_eq!(g.atoms[0].explicit_h, 4);
        assert_eq!(g.atoms[0].degree, 0);
        // molecular hydrogen has no heavy atom to fold into
        assert_eq!(parse_smiles("[H][H]").unwrap().atoms.len(), 2);
    }

    #[test]
    fn ring_membership_with_substituent() {
        // toluene: the methyl bond is a bridge
        let g = parse_smiles("Cc1ccccc1").unwrap();
        assert!(!g.bonds[0].in_ring);
        assert!(g.bonds[1..].iter().all(|b| b.in_ring));
    }

    #[test]
    fn percent_ring_numbers_and_reuse() {
        let g = parse_smiles("C%12CC%12C1CC1").unwrap();
        assert_eq!(g.atoms.len(), 6);
        assert_eq!(g.bonds.len(), 7);
        assert_eq!(g.bonds.iter().filter(|b| b.in_ring).count(), 6);
    }

    #[test]
    fn stereo_bonds_are_single() {
        let g = parse_smiles("F/C=C/F").unwrap();
        let orders: Vec<_> = g.bonds.iter().map(|b| b.order).collect();
        assert_eq!(
            orders,
            vec![BondOrder::Single, BondOrder::Double, BondOrder::Single]
        );
    }
}
