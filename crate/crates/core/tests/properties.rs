mod common;

use approx::{abs_diff_eq, assert_abs_diff_eq};
use molgap_core::chem::MolGraph;
use molgap_core::ensemble::{
    ensemble_mae_bound_check, error_vs_uncertainty, pearson, uncertainty_std, PredictionMatrix,
};
use molgap_core::models::build_batch;
use molgap_core::numerics::{AdamConfig, AdamState, Tape, Tensor};
use molgap_core::training::make_split;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn prediction_rows() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..8, 2usize..40).prop_flat_map(|(l, n)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..50.0, n), l),
            prop::collection::vec(0.0f64..50.0, n),
        )
    })
}

fn random_smiles() -> impl Strategy<Value = String> {
    (any::<u64>(), 1usize..12)
        .prop_map(|(seed, size)| common::random_smiles(&mut ChaCha8Rng::seed_from_u64(seed), size))
}

fn forward_value(f: impl FnOnce(&mut Tape) -> molgap_core::numerics::Var) -> Tensor {
    let mut tape = Tape::new();
    let v = f(&mut tape);
    tape.value(v).unwrap().clone()
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))) {
        let y = forward_value(|t| {
            let v = t.param(x.clone());
            t.softmax_rows(v).unwrap()
        });
        let cols = x.shape()[1];
        for row in y.data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!(abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12));
        }
    }

    #[test]
    fn clamp_is_idempotent(x in prop::collection::vec(-100.0f64..100.0, 1..30), lo in -10.0f64..10.0, w in 0.0f64..40.0) {
        let hi = lo + w;
        let (once, twice) = {
            let mut t = Tape::new();
            let v = t.param(Tensor::vector(x));
            let a = t.clamp(v, lo, hi).unwrap();
            let b = t.clamp(a, lo, hi).unwrap();
            (t.value(a).unwrap().clone(), t.value(b).unwrap().clone())
        };
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.data().iter().all(|&p| (lo..=hi).contains(&p)));
    }

    #[test]
    fn kl_is_non_negative(mu in -3.0f64..3.0, sigma in 0.01f64..3.0, prior in 0.01f64..3.0) {
        let kl = forward_value(|t| {
            let m = t.param(Tensor::vector(vec![mu]));
            let s = t.param(Tensor::vector(vec![sigma]));
            t.kl_gaussian(m, s, prior).unwrap()
        });
        prop_assert!(kl.data()[0] >= -1e-15, "kl = {}", kl.data()[0]);
    }

    #[test]
    fn segment_sum_conserves_mass(
        (x, ids, k) in (1usize..10, 1usize..5, 1usize..4).prop_flat_map(|(n, d, k)| {
            (matrix(n, d), prop::collection::vec(0..k, n), Just(k))
        })
    ) {
        let y = forward_value(|t| {
            let v = t.param(x.clone());
            t.segment_sum(v, &ids, k).unwrap()
        });
        assert_abs_diff_eq!(y.data().iter().sum::<f64>(), x.data().iter().sum::<f64>(), epsilon = 1e-12);
    }

    #[test]
    fn matmul_matches_naive_product(
        (a, b) in (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(n, k, m)| (matrix(n, k), matrix(k, m)))
    ) {
        let y = forward_value(|t| {
            let (va, vb) = (t.param(a.clone()), t.param(b.clone()));
            t.matmul(va, vb).unwrap()
        });
        let (n, k) = a.dims2().unwrap();
        let m = b.dims2().unwrap().1;
        for i in 0..n {
            for j in 0..m {
                let expected: f64 = (0..k).map(|p| a.data()[i * k + p] * b.data()[p * m + j]).sum();
                assert_abs_diff_eq!(y.data()[i * m + j], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn adam_with_zero_lr_is_a_no_op(x in matrix(3, 2), g in matrix(3, 2)) {
        let mut state = AdamState::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, [&x]);
        let mut p = x.clone();
        state.step(&mut [&mut p], &[&g]).unwrap();
        prop_assert_eq!(p, x);
    }

    #[test]
    fn pearson_is_affine_invariant(
        xy in (3usize..40).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n))),
        a in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
        b in -20.0f64..20.0,
    ) {
        let (x, y) = xy;
        let Ok(r) = pearson(&x, &y) else { return Ok(()) };
        let shifted: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r2 = pearson(&shifted, &y).unwrap();
        assert_abs_diff_eq!(r2, a.signum() * r, epsilon = 1e-9);
    }

    #[test]
    fn std_ignores_shifts_and_scales_linearly((rows, _) in prediction_rows(), shift in -20.0f64..20.0, scale in 0.1f64..5.0) {
        let base = uncertainty_std(&PredictionMatrix::from_rows(rows.clone()).unwrap()).unwrap();
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| scale * v + shift).collect()).collect();
        let moved = uncertainty_std(&PredictionMatrix::from_rows(moved).unwrap()).unwrap();
        for (b, m) in base.iter().zip(&moved) {
            assert_abs_diff_eq!(*m, scale * b, epsilon = 1e-9);
        }
    }

    #[test]
    fn ensemble_mae_never_exceeds_mean_individual((rows, targets) in prediction_rows()) {
        let bound = ensemble_mae_bound_check(&PredictionMatrix::from_rows(rows).unwrap(), &targets).unwrap();
        prop_assert!(bound.holds, "{bound:?}");
    }

    #[test]
    fn bin_counts_cover_every_molecule((rows, targets) in prediction_rows(), bins in 1usize..25) {
        let m = PredictionMatrix::from_rows(rows).unwrap();
        let report = error_vs_uncertainty(&m, &targets, bins).unwrap();
        prop_assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), targets.len());
    }

    #[test]
    fn parsing_is_deterministic(s in random_smiles()) {
        prop_assert_eq!(MolGraph::from_smiles(&s).unwrap(), MolGraph::from_smiles(&s).unwrap());
    }

    #[test]
    fn degrees_count_incident_bonds(s in random_smiles()) {
        let g = MolGraph::from_smiles(&s).unwrap();
        for (i, a) in g.atoms.iter().enumerate() {
            let incident = g.bonds.iter().filter(|b| b.endpoints.0 == i || b.endpoints.1 == i).count();
            prop_assert_eq!(a.degree as usize, incident);
        }
        for b in &g.bonds {
            prop_assert!(b.endpoints.0 != b.endpoints.1);
        }
    }

    #[test]
    fn batches_hold_two_directed_edges_per_bond(a in random_smiles(), b in random_smiles()) {
        let graphs = [MolGraph::from_smiles(&a).unwrap(), MolGraph::from_smiles(&b).unwrap()];
        let batch = build_batch(&graphs).unwrap();
        prop_assert_eq!(batch.num_edges(), 2 * (graphs[0].num_bonds() + graphs[1].num_bonds()));
        prop_assert_eq!(batch.num_nodes(), graphs[0].num_atoms() + graphs[1].num_atoms());
    }

    #[test]
    fn relabeling_keeps_ring_membership(s in random_smiles(), seed in any::<u64>()) {
        let g = MolGraph::from_smiles(&s).unwrap();
        let perm = common::random_permutation(&mut ChaCha8Rng::seed_from_u64(seed), g.num_atoms());
        let h = g.permuted(&perm);
        let ring = |g: &MolGraph| {
            let mut v: Vec<_> = g.bonds.iter().map(|b| b.in_ring).collect();
            v.sort();
            v
        };
        prop_assert_eq!(ring(&g), ring(&h));
        for (i, atom) in g.atoms.iter().enumerate() {
            prop_assert_eq!(atom, &h.atoms[perm[i]]);
        }
    }

    #[test]
    fn splits_partition_the_dataset(
        n in 3usize..300,
        f in (0.05f64..0.9, 0.0f64..0.5),
        seed in any::<u64>(),
    ) {
        let train = f.0;
        let valid = f.1.min(1.0 - train);
        let test = (1.0 - train - valid).max(0.0);
        let split = make_split(n, [train, valid, test], seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.valid).chain(&split.test).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(make_split(n, [train, valid, test], seed).unwrap(), split);
    }
}
