//! Random graphs over the full op set, checked against central differences.

use rand::Rng;
use toppo_core::autodiff::{Tape, Tensor, Var};
use toppo_core::rng::indexed;

const H: f64 = 1e-5;
const TRIALS: usize = 100;
/// Minimum distance from a `min`/`max` tie or a clip bound; closer inputs make
/// the central difference straddle a kink.
const MARGIN: f64 = 1e-3;

#[derive(Clone, Debug)]
struct Graph {
    ops: Vec<(u8, usize, usize)>,
    actions: Vec<usize>,
    gaussian_actions: Vec<f64>,
}

impl Graph {
    fn random(rng: &mut impl Rng) -> Self {
        let len = rng.random_range(3..10);
        Self {
            ops: (0..len).map(|_| (rng.random_range(0..12), rng.random_range(0..64), rng.random_range(0..64))).collect(),
            actions: (0..2).map(|_| rng.random_range(0..2)).collect(),
            gaussian_actions: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }
}

fn random_leaves(rng: &mut impl Rng) -> Vec<Tensor> {
    let mut draw = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    vec![draw(&[2, 3]), draw(&[3, 2]), draw(&[2]), draw(&[2])]
}

struct Built {
    tape: Tape,
    output: Var,
    leaves: Vec<Var>,
    margin: f64,
}

/// Records `graph` on a fresh tape.
fn build(graph: &Graph, leaves: &[Tensor]) -> Built {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf_ref(t)).collect();
    let (output, margin) = record_on(&mut tape, graph, &vars);
    Built { tape, output, leaves: vars, margin }
}

fn value_of(graph: &Graph, leaves: &[Tensor]) -> f64 {
    let built = build(graph, leaves);
    built.tape.value(built.output).item()
}

fn gradients(graph: &Graph, leaves: &[Tensor]) -> Vec<Tensor> {
    let mut built = build(graph, leaves);
    let grads = built.tape.backward(built.output, &Tensor::scalar(1.0).unwrap()).unwrap();
    built.leaves.iter().map(|v| grads.wrt(*v)).collect()
}

/// Draws graphs until one keeps every kink at least [`MARGIN`] away.
fn smooth_instance(rng: &mut impl Rng) -> (Graph, Vec<Tensor>) {
    loop {
        let graph = Graph::random(rng);
        let leaves = random_leaves(rng);
        if build(&graph, &leaves).margin > MARGIN {
            return (graph, leaves);
        }
    }
}

#[test]
fn random_graphs_match_central_differences() {
    let mut worst = 0.0f64;
    for trial in 0..TRIALS as u64 {
        let mut rng = indexed(2024, trial);
        let (graph, mut leaves) = smooth_instance(&mut rng);
        let grads = gradients(&graph, &leaves);
        for (l, g) in grads.iter().enumerate() {
            for j in 0..g.len() {
                let orig = leaves[l].data()[j];
                leaves[l].data_mut()[j] = orig + H;
                let up = value_of(&graph, &leaves);
                leaves[l].data_mut()[j] = orig - H;
                let down = value_of(&graph, &leaves);
                leaves[l].data_mut()[j] = orig;
                let fd = (up - down) / (2.0 * H);
                let a = g.data()[j];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "trial {trial} {graph:?}: leaf {l}[{j}] autodiff {a} vs fd {fd}");
                worst = worst.max(rel);
            }
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn backward_is_linear_in_the_output() {
    for trial in 0..50u64 {
        let mut rng = indexed(2025, trial);
        let (f, leaves) = smooth_instance(&mut rng);
        let (g, _) = smooth_instance(&mut rng);
        let gf = gradients(&f, &leaves);
        let gg = gradients(&g, &leaves);

        // f + g recorded on one tape sharing the leaves.
        let sum_value = value_of(&f, &leaves) + value_of(&g, &leaves);
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf_ref(t)).collect();
        let (of, _) = record_on(&mut tape, &f, &vars);
        let (og, _) = record_on(&mut tape, &g, &vars);
        let total = tape.add(of, og).unwrap();
        assert!((tape.value(total).item() - sum_value).abs() <= 1e-12 * sum_value.abs().max(1.0));
        let grads = tape.backward(total, &Tensor::scalar(1.0).unwrap()).unwrap();
        for (l, v) in vars.iter().enumerate() {
            let joint = grads.wrt(*v);
            for j in 0..joint.len() {
                let expected = gf[l].data()[j] + gg[l].data()[j];
                assert!((joint.data()[j] - expected).abs() <= 1e-12 * expected.abs().max(1.0), "trial {trial}");
            }
        }
    }
}

/// Records `graph` onto `tape` over the leaves `vars`; every intermediate is
/// `[2, 2]`. Also returns the smallest distance to a kink.
fn record_on(tape: &mut Tape, graph: &Graph, vars: &[Var]) -> (Var, f64) {
    let mut margin = f64::INFINITY;
    let ones = tape.leaf(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
    let h = tape.affine(vars[0], vars[1], vars[2]).unwrap();
    let mut pool = vec![h, tape.tanh(h).unwrap()];
    for &(op, i, j) in &graph.ops {
        let a = pool[i % pool.len()];
        let b = pool[j % pool.len()];
        let gap = |tape: &Tape| {
            tape.value(a).data().iter().zip(tape.value(b).data()).map(|(x, y)| (x - y).abs()).fold(f64::INFINITY, f64::min)
        };
        let v = match op {
            0 => tape.tanh(a).unwrap(),
            1 => {
                let s = tape.scale(a, 0.5).unwrap();
                tape.exp(s).unwrap()
            }
            2 => {
                let sq = tape.square(a).unwrap();
                let pos = tape.add(sq, ones).unwrap();
                tape.log(pos).unwrap()
            }
            3 => tape.add(a, b).unwrap(),
            4 => tape.sub(a, b).unwrap(),
            5 => tape.mul(a, b).unwrap(),
            6 => {
                let sq = tape.square(b).unwrap();
                let pos = tape.add(sq, ones).unwrap();
                tape.div(a, pos).unwrap()
            }
            7 if a != b => {
                margin = margin.min(gap(tape));
                tape.min(a, b).unwrap()
            }
            8 if a != b => {
                margin = margin.min(gap(tape));
                tape.max(a, b).unwrap()
            }
            9 => {
                for x in tape.value(a).data() {
                    margin = margin.min((x - 0.3).abs()).min((x + 0.3).abs());
                }
                tape.clip(a, &[-0.3; 4], &[0.3; 4]).unwrap()
            }
            10 => tape.square(a).unwrap(),
            _ => tape.neg(a).unwrap(),
        };
        pool.push(v);
    }
    let last = *pool.last().unwrap();
    let other = pool[graph.ops[0].1 % pool.len()];
    let mut terms = vec![tape.sum(last).unwrap(), tape.mean(other).unwrap()];
    let lp = tape.categorical_log_prob(last, &graph.actions).unwrap();
    terms.push(tape.sum(lp).unwrap());
    let ent = tape.categorical_entropy(other).unwrap();
    terms.push(tape.sum(ent).unwrap());
    let glp = tape.gaussian_log_prob(last, vars[3], &graph.gaussian_actions).unwrap();
    terms.push(tape.sum(glp).unwrap());
    let mut output = terms[0];
    for t in &terms[1..] {
        output = tape.add(output, *t).unwrap();
    }
    (output, margin)
}

#[test]
fn identical_inputs_give_identical_gradients() {
    let mut rng = indexed(2026, 0);
    let (graph, leaves) = smooth_instance(&mut rng);
    let a = gradients(&graph, &leaves);
    let b = gradients(&graph, &leaves);
    for (x, y) in a.iter().zip(&b) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn constant_graph_has_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.3, -0.2]).unwrap());
    let c = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let e = tape.exp(c).unwrap();
    let out = tape.sum(e).unwrap();
    let grads = tape.backward(out, &Tensor::scalar(1.0).unwrap()).unwrap();
    assert_eq!(grads.wrt(x).data(), &[0.0, 0.0]);
}
