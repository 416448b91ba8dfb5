use crate::chem::{atom_feature_codes, bond_feature_codes, AtomCodes, BondCodes, MolGraph};

use super::ModelError;

/// Disjoint union of molecules with both directions of every bond.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub node_codes: Vec<AtomCodes>,
    pub edge_codes: Vec<BondCodes>,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub graph_ids: Vec<usize>,
    pub num_graphs: usize,
    /// `node_offsets[g]..node_offsets[g + 1]` are the nodes of graph `g`.
    pub node_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn num_nodes(&self) -> usize {
        self.graph_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    /// Column `field` of the atom codes.
    pub fn atom_column(&self, field: usize) -> Vec<usize> {
        self.node_codes.iter().map(|c| c[field]).collect()
    }

    /// Column `field` of the directed edge codes.
    pub fn bond_column(&self, field: usize) -> Vec<usize> {
        self.edge_codes.iter().map(|c| c[field]).collect()
    }

    pub fn graph_nodes(&self, g: usize) -> std::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }

    /// Dense symmetric adjacency of graph `g`, row-major, local node indices.
    pub fn dense_adjacency(&self, g: usize) -> Vec<f64> {
        let nodes = self.graph_nodes(g);
        let n = nodes.len();
        let mut adj = vec![0.0; n * n];
        for (&s, &d) in self.edge_src.iter().zip(&self.edge_dst) {
            if nodes.contains(&s) {
                adj[(s - nodes.start) * n + (d - nodes.start)] = 1.0;
            }
        }
        adj
    }
}

pub fn build_batch<'a>(
    graphs: impl IntoIterator<Item = &'a MolGraph>,
) -> Result<GraphBatch, ModelError> {
    let mut batch = GraphBatch {
        node_codes: Vec::new(),
        edge_codes: Vec::new(),
        edge_src: Vec::new(),
        edge_dst: Vec::new(),
        graph_ids: Vec::new(),
        num_graphs: 0,
        node_offsets: vec![0],
    };
    for (g, mol) in graphs.into_iter().enumerate() {
        if mol.atoms.is_empty() {
            return Err(ModelError::EmptyGraph(g));
        }
        let offset = batch.node_codes.len();
        for atom in &mol.atoms {
            batch.node_codes.push(atom_feature_codes(atom)?);
            batch.graph_ids.push(g);
        }
        for bond in &mol.bonds {
            let codes = bond_feature_codes(bond);
            let (u, v) = (bond.endpoints.0 + offset, bond.endpoints.1 + offset);
            batch.edge_src.extend([u, v]);
            batch.edge_dst.extend([v, u]);
            batch.edge_codes.extend([codes, codes]);
        }
        batch.num_graphs += 1;
        batch.node_offsets.push(batch.node_codes.len());
    }
    if batch.num_graphs == 0 {
        return Err(ModelError::EmptyBatch);
    }
    Ok(batch)
}
