//! Shared test oracles: finite-difference gradient checking and small
//! deterministic data generators.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use swathfill_core::tensor::{Tape, Var};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn randn(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn rand_uniform(rng: &mut StdRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// One named finite-difference input: shape plus data.
#[derive(Clone)]
pub struct FdInput {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl FdInput {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        FdInput {
            shape: shape.to_vec(),
            data,
        }
    }
}

/// Central finite-difference check of a scalar-valued graph.
///
/// `build` must deterministically construct the graph from the given leaf
/// values and return the scalar loss. Analytic gradients come from one
/// backward pass; the numeric side re-evaluates the loss at `x +- step` for
/// every coordinate of every input. Returns the maximum relative error.
pub fn fd_max_rel_err(
    inputs: &[FdInput],
    step: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let eval = |datas: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(datas)
            .map(|(inp, d)| tape.leaf_owned(inp.shape.clone(), d.clone(), false))
            .collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss)[0]
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|inp| tape.leaf_owned(inp.shape.clone(), inp.data.clone(), true))
        .collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient").to_vec())
        .collect();

    let base: Vec<Vec<f64>> = inputs.iter().map(|i| i.data.clone()).collect();
    let mut max_rel = 0.0f64;
    for (k, inp) in inputs.iter().enumerate() {
        for j in 0..inp.data.len() {
            let mut plus = base.clone();
            plus[k][j] += step;
            let mut minus = base.clone();
            minus[k][j] -= step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = analytic[k][j];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
    }
    max_rel
}
