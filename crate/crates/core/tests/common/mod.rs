#![allow(dead_code)]

pub mod corpus;

use std::collections::BTreeMap;

use molgap_core::chem::{atom_feature_codes, bond_feature_codes, MolGraph};
use molgap_core::models::{build_batch, forward, ModelConfig, ModelParams, Session, Variant};
use molgap_core::numerics::{BatchNormState, Mode, NumericsError, Tape, Tensor, Var};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Gradients whose norm is below this are compared on an absolute scale: finite
/// differences of an exactly-zero gradient return round-off noise around 1e-10.
pub const GRAD_NORM_FLOOR: f64 = 1e-5;

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(GRAD_NORM_FLOOR)
}

/// Whether a gradient pair is small enough that [`relative_error`] used the floor.
pub fn below_floor(analytic: &[f64], numeric: &[f64]) -> bool {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    norm(analytic).max(norm(numeric)) < GRAD_NORM_FLOOR
}

/// Central differences of `f` with respect to every entry of every input.
pub fn numeric_gradients(inputs: &[Tensor], f: impl Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[t].len());
        for i in 0..inputs[t].len() {
            let x = inputs[t].data()[i];
            work[t].data_mut()[i] = x + FD_STEP;
            let up = f(&work);
            work[t].data_mut()[i] = x - FD_STEP;
            let down = f(&work);
            work[t].data_mut()[i] = x;
            g.push((up - down) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    out
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform in [-2, 2] but at least `gap` away from every point in `kinks`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], kinks: &[f64], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let x = rng.random_range(-2.0..2.0);
            if kinks.iter().all(|k| (x - k).abs() > gap) {
                break x;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: Build) -> OpCase {
    OpCase { name, inputs, build }
}

/// One randomized case per differentiable tape operation.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let l1_target = uniform(r, &[6], -2.0, 2.0);
    let l1_pred = {
        let data = l1_target
            .data()
            .iter()
            .map(|t| {
                let off = r.random_range(0.1..1.0);
                if r.random::<bool>() { t + off } else { t - off }
            })
            .collect();
        Tensor::vector(data)
    };
    let bn_state = BatchNormState {
        running_mean: uniform(r, &[3], -1.0, 1.0).into_data(),
        running_var: uniform(r, &[3], 0.5, 2.0).into_data(),
    };
    let dropout_seed: u64 = r.random();

    vec![
        case(
            "matmul",
            vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[4, 2], -2.0, 2.0)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        case(
            "add",
            vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[3, 4], -2.0, 2.0)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        case(
            "sub",
            vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[3, 4], -2.0, 2.0)],
            Box::new(|t, v| t.sub(v[0], v[1])),
        ),
        case(
            "mul",
            vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[3, 4], -2.0, 2.0)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        case(
            "add_row",
            vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[4], -2.0, 2.0)],
            Box::new(|t, v| t.add_row(v[0], v[1])),
        ),
        case(
            "scale",
            vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[1], -2.0, 2.0)],
            Box::new(|t, v| t.scale(v[0], v[1])),
        ),
        case(
            "scale_const",
            vec![uniform(r, &[3, 4], -2.0, 2.0)],
            Box::new(|t, v| t.scale_const(v[0], -0.7)),
        ),
        case(
            "add_const",
            vec![uniform(r, &[3, 4], -2.0, 2.0)],
            Box::new(|t, v| t.add_const(v[0], 1.3)),
        ),
        case(
            "relu",
            vec![away_from(r, &[3, 4], &[0.0], 0.05)],
            Box::new(|t, v| t.relu(v[0])),
        ),
        case(
            "softplus",
            vec![uniform(r, &[3, 4], -2.0, 2.0)],
            Box::new(|t, v| t.softplus(v[0])),
        ),
        case("exp", vec![uniform(r, &[3, 4], -2.0, 2.0)], Box::new(|t, v| t.exp(v[0]))),
        case("log", vec![uniform(r, &[3, 4], 0.2, 2.0)], Box::new(|t, v| t.log(v[0]))),
        case("sqrt", vec![uniform(r, &[3, 4], 0.2, 2.0)], Box::new(|t, v| t.sqrt(v[0]))),
        case(
            "clamp",
            vec![away_from(r, &[3, 4], &[-1.0, 1.0], 0.05)],
            Box::new(|t, v| t.clamp(v[0], -1.0, 1.0)),
        ),
        case("sum", vec![uniform(r, &[3, 4], -2.0, 2.0)], Box::new(|t, v| t.sum(v[0]))),
        case(
            "reshape",
            vec![uniform(r, &[3, 4], -2.0, 2.0)],
            Box::new(|t, v| t.reshape(v[0], &[2, 6])),
        ),
        case(
            "transpose",
            vec![uniform(r, &[3, 4], -2.0, 2.0)],
            Box::new(|t, v| t.transpose(v[0])),
        ),
        case(
            "segment_sum",
            vec![uniform(r, &[5, 3], -2.0, 2.0)],
            Box::new(|t, v| t.segment_sum(v[0], &[0, 2, 0, 1, 2], 3)),
        ),
        case(
            "embedding_lookup",
            vec![uniform(r, &[4, 3], -2.0, 2.0)],
            Box::new(|t, v| t.embedding_lookup(v[0], &[1, 1, 0, 3])),
        ),
        case(
            "softmax_rows",
            vec![uniform(r, &[3, 4], -2.0, 2.0)],
            Box::new(|t, v| t.softmax_rows(v[0])),
        ),
        case(
            "concat_cols",
            vec![uniform(r, &[3, 2], -2.0, 2.0), uniform(r, &[3, 3], -2.0, 2.0)],
            Box::new(|t, v| t.concat_cols(v[0], v[1])),
        ),
        case(
            "concat_rows",
            vec![
                uniform(r, &[2, 3], -2.0, 2.0),
                uniform(r, &[1, 3], -2.0, 2.0),
                uniform(r, &[3, 3], -2.0, 2.0),
            ],
            Box::new(|t, v| t.concat_rows(v)),
        ),
        case(
            "dropout",
            vec![uniform(r, &[4, 5], -2.0, 2.0)],
            Box::new(move |t, v| t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(dropout_seed))),
        ),
        case(
            "l1_loss",
            vec![l1_pred],
            Box::new(move |t, v| t.l1_loss(v[0], &l1_target)),
        ),
        case(
            "kl_gaussian",
            vec![uniform(r, &[5], -2.0, 2.0), uniform(r, &[5], 0.2, 2.0)],
            Box::new(|t, v| t.kl_gaussian(v[0], v[1], 1.3)),
        ),
        case(
            "batch_norm_train",
            vec![
                uniform(r, &[5, 3], -2.0, 2.0),
                uniform(r, &[3], -2.0, 2.0),
                uniform(r, &[3], -2.0, 2.0),
            ],
            Box::new(|t, v| {
                let state = BatchNormState::new(3);
                Ok(t.batch_norm(v[0], v[1], v[2], &state, Mode::Train)?.0)
            }),
        ),
        case(
            "batch_norm_eval",
            vec![
                uniform(r, &[5, 3], -2.0, 2.0),
                uniform(r, &[3], -2.0, 2.0),
                uniform(r, &[3], -2.0, 2.0),
            ],
            Box::new(move |t, v| Ok(t.batch_norm(v[0], v[1], v[2], &bn_state, Mode::Eval)?.0)),
        ),
    ]
}

/// Largest per-input relative error for one op case, contracted with fixed random weights.
pub fn check_op(case: &OpCase, seed: u64) -> Result<f64, NumericsError> {
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = case.inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = (case.build)(&mut tape, &vars)?;
        tape.value(out)?.shape().to_vec()
    };
    let weights = uniform(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), &out_shape, -1.0, 1.0);

    let run = |inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var), NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = (case.build)(&mut tape, &vars)?;
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w)?;
        let loss = tape.sum(prod)?;
        Ok((tape, vars, loss))
    };

    let (tape, vars, loss) = run(&case.inputs)?;
    let grads = tape.backward(loss)?;
    let numeric = numeric_gradients(&case.inputs, |inputs| {
        let (tape, _, loss) = run(inputs).expect("forward succeeded once");
        tape.value(loss).unwrap().data()[0]
    });
    let mut worst: f64 = 0.0;
    for (v, n) in vars.iter().zip(&numeric) {
        let a = grads.get(*v).map(|g| g.data().to_vec()).unwrap_or(vec![0.0; n.len()]);
        worst = worst.max(relative_error(&a, n));
    }
    Ok(worst)
}

/// The small configuration used for whole-model gradient checks.
pub fn desk_config(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::new(variant, 8, 2);
    c.diffpool.num_supernodes = 3;
    c.diffpool.aux_loss = true;
    c.bnn.hidden = vec![16, 16, 8];
    c
}

/// Name of the tensor holding the final readout bias.
pub fn readout_bias(config: &ModelConfig) -> String {
    match config.variant {
        Variant::GinVirtualBnn => format!("bayes.{}.bias_mu", config.bnn.hidden.len()),
        _ => "readout.bias".to_string(),
    }
}

fn model_loss(
    config: &ModelConfig,
    params: &ModelParams,
    graphs: &[MolGraph],
    targets: &Tensor,
    sample_seed: u64,
) -> (Tape, BTreeMap<String, Var>, Var) {
    let batch = build_batch(graphs).unwrap();
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut sess = Session::new(&mut tape, params, Mode::Train, &mut rng);
    let out = forward(&mut sess, config, &batch).unwrap();
    let mut loss = sess.tape.l1_loss(out.predictions, targets).unwrap();
    if let Some(kl) = out.kl {
        let kl = sess.tape.scale_const(kl, 0.01).unwrap();
        loss = sess.tape.add(loss, kl).unwrap();
    }
    if let Some(aux) = out.aux_loss {
        loss = sess.tape.add(loss, aux).unwrap();
    }
    let vars = sess.param_vars().clone();
    (tape, vars, loss)
}

pub struct ModelCheck {
    pub worst: f64,
    pub worst_tensor: String,
    pub tensors: usize,
    /// Tensors whose true gradient vanishes (e.g. biases feeding batch norm).
    pub floored: usize,
}

/// Per-tensor relative errors of a train-mode model loss.
pub fn check_model(variant: Variant, seed: u64) -> ModelCheck {
    let config = desk_config(variant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&config, &mut rng).unwrap();
    // keeps predictions inside the clamp, where the loss is differentiable
    let bias = readout_bias(&config);
    params.tensors.insert(bias, Tensor::vector(vec![25.0]));
    let graphs: Vec<MolGraph> = (0..3)
        .map(|_| MolGraph::from_smiles(&random_smiles(&mut rng, 6)).unwrap())
        .collect();
    let sample_seed: u64 = rng.random();

    let preds = predictions_of(&config, &params, &graphs, sample_seed);
    let targets = Tensor::vector(
        preds
            .iter()
            .map(|p| {
                let off = rng.random_range(1.0..5.0);
                if rng.random::<bool>() { p + off } else { p - off }
            })
            .collect(),
    );

    let (tape, vars, loss) = model_loss(&config, &params, &graphs, &targets, sample_seed);
    let grads = tape.backward(loss).unwrap();
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| params.tensors[n].clone()).collect();
    let numeric = numeric_gradients(&inputs, |values| {
        let mut p = params.clone();
        for (n, v) in names.iter().zip(values) {
            p.tensors.insert(n.clone(), v.clone());
        }
        let (tape, _, loss) = model_loss(&config, &p, &graphs, &targets, sample_seed);
        tape.value(loss).unwrap().data()[0]
    });

    let mut check = ModelCheck {
        worst: 0.0,
        worst_tensor: String::new(),
        tensors: names.len(),
        floored: 0,
    };
    for (name, n) in names.iter().zip(&numeric) {
        let a = vars
            .get(name)
            .and_then(|v| grads.get(*v))
            .map(|g| g.data().to_vec())
            .unwrap_or(vec![0.0; n.len()]);
        let e = relative_error(&a, n);
        check.floored += below_floor(&a, n) as usize;
        if e >= check.worst {
            check.worst = e;
            check.worst_tensor = name.clone();
        }
    }
    check
}

fn predictions_of(
    config: &ModelConfig,
    params: &ModelParams,
    graphs: &[MolGraph],
    sample_seed: u64,
) -> Vec<f64> {
    let batch = build_batch(graphs).unwrap();
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut sess = Session::new(&mut tape, params, Mode::Train, &mut rng);
    let out = forward(&mut sess, config, &batch).unwrap();
    tape.value(out.predictions).unwrap().data().to_vec()
}

const ELEMENTS: [&str; 6] = ["C", "N", "O", "S", "F", "Cl"];

/// A random connected molecule of at most `max_atoms` heavy atoms: a random
/// tree written depth-first, sometimes with one extra ring bond.
pub fn random_smiles<R: Rng + ?Sized>(rng: &mut R, max_atoms: usize) -> String {
    let n = rng.random_range(1..=max_atoms);
    let parent: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { rng.random_range(0..i) }).collect();
    let mut children = vec![Vec::new(); n];
    for i in 1..n {
        children[parent[i]].push(i);
    }
    // a ring bond between two atoms that are not already bonded
    let mut ring = None;
    if n >= 3 && rng.random_bool(0.5) {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| parent[b] != a)
            .collect();
        ring = pairs.choose(rng).copied();
    }
    let symbols: Vec<&str> = (0..n).map(|_| *ELEMENTS.choose(rng).unwrap()).collect();
    let double: Vec<bool> = (0..n)
        .map(|i| i > 0 && symbols[i] == "C" && symbols[parent[i]] == "C" && rng.random_bool(0.3))
        .collect();

    fn emit(
        i: usize,
        out: &mut String,
        symbols: &[&str],
        children: &[Vec<usize>],
        double: &[bool],
        ring: Option<(usize, usize)>,
    ) {
        out.push_str(symbols[i]);
        if let Some((a, b)) = ring {
            if i == a || i == b {
                out.push('1');
            }
        }
        let kids = &children[i];
        for (k, &c) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                out.push('(');
            }
            if double[c] {
                out.push('=');
            }
            emit(c, out, symbols, children, double, ring);
            if !last {
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    emit(0, &mut out, &symbols, &children, &double, ring);
    out
}

/// A uniformly random permutation of `0..n`.
pub fn random_permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Compares a parsed molecule against a hand-derived table.
pub fn check_valid(case: &corpus::Valid) -> Result<(), String> {
    let g = MolGraph::from_smiles(case.smiles).map_err(|e| format!("{}: {e}", case.smiles))?;
    let atoms: Vec<[usize; 5]> = g
        .atoms
        .iter()
        .map(|a| atom_feature_codes(a).map_err(|e| format!("{}: {e}", case.smiles)))
        .collect::<Result<_, _>>()?;
    if atoms != case.atoms {
        return Err(format!("{}: atoms {atoms:?}, expected {:?}", case.smiles, case.atoms));
    }
    let bonds: Vec<(usize, usize, usize, usize)> = g
        .bonds
        .iter()
        .map(|b| {
            let [order, ring] = bond_feature_codes(b);
            (b.endpoints.0, b.endpoints.1, order, ring)
        })
        .collect();
    if bonds != case.bonds {
        return Err(format!("{}: bonds {bonds:?}, expected {:?}", case.smiles, case.bonds));
    }
    Ok(())
}

pub fn check_malformed(case: &corpus::Malformed) -> Result<(), String> {
    match MolGraph::from_smiles(case.smiles) {
        Err(e) if e == case.error => Ok(()),
        other => Err(format!("{:?}: got {other:?}, expected {:?}", case.smiles, case.error)),
    }
}
