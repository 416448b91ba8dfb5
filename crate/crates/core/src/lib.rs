//! Graph neural network weak learners for molecular HOMO-LUMO gap regression,
//! with prediction ensembling and ensemble-spread uncertainty analysis.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chem;
pub mod cli;
pub mod ensemble;
mod fsutil;
pub mod models;
pub mod numerics;
pub mod training;
