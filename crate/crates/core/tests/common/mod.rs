//! Shared fixtures and independent reference computations for the integration tests.
//!
//! Nothing here calls into the crate's numerics: gradients, the lifted mixing operator and the
//! eigensolver are re-derived from scratch so the tests compare two separate implementations.

#![allow(dead_code, clippy::needless_range_loop)]

use ndgd::graph::NetworkGraph;
use ndgd::linalg::DenseMatrix;
use ndgd::mixing::validate_mixing;
use ndgd::objective::polynomial::{Monomial, Polynomial, PolynomialObjective};
use ndgd::objective::{LocalObjective, Problem};
use ndgd::state::StackedState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A monomial as `(exponents, coefficient)`.
pub type Term = (Vec<u32>, f64);

/// A random problem together with the raw data it was built from.
pub struct Instance {
    pub problem: Problem<f64>,
    pub terms: Vec<Vec<Term>>,
    pub weights: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
    pub m: usize,
    pub n: usize,
}

/// Connected graph on `m` nodes: a random spanning tree plus each remaining pair with
/// probability `extra`.
pub fn random_connected_edges(rng: &mut impl Rng, m: usize, extra: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for v in 1..m {
        edges.push((rng.random_range(0..v), v));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let present = edges.iter().any(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i));
            if !present && rng.random_bool(extra) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Symmetric doubly stochastic weights with random positive edge weights and every off-diagonal
/// row sum at most `0.45`, which keeps the matrix strictly diagonally dominant.
pub fn random_weights(rng: &mut impl Rng, m: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; m]; m];
    for &(i, j) in edges {
        let u = rng.random_range(0.1..1.0);
        w[i][j] = u;
        w[j][i] = u;
    }
    let max_row = w.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    if max_row > 0.0 {
        let scale = rng.random_range(0.05..0.45) / max_row;
        for row in w.iter_mut() {
            row.iter_mut().for_each(|v| *v *= scale);
        }
    }
    for (i, row) in w.iter_mut().enumerate() {
        let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
        row[i] = 1.0 - off;
    }
    w
}

/// Random polynomial of degree at most 4 in `n` variables plus `Σ x_j⁴`, so each local
/// objective is bounded below.
pub fn random_terms(rng: &mut impl Rng, n: usize) -> Vec<Term> {
    let mut terms = Vec::new();
    for j in 0..n {
        let mut e = vec![0; n];
        e[j] = 4;
        terms.push((e, rng.random_range(0.1..1.0)));
    }
    for _ in 0..rng.random_range(1..6) {
        let mut e = vec![0u32; n];
        let mut budget = rng.random_range(1..=3u32);
        while budget > 0 {
            e[rng.random_range(0..n)] += 1;
            budget -= 1;
        }
        terms.push((e, rng.random_range(-1.0..1.0)));
    }
    terms
}

pub fn objective_from_terms(n: usize, terms: &[Term]) -> LocalObjective<f64> {
    let monomials = terms.iter().map(|(e, c)| Monomial::new(e.clone(), *c)).collect();
    let poly = Polynomial::new(n, monomials).expect("valid polynomial");
    LocalObjective::new(PolynomialObjective::new(poly)).expect("valid objective")
}

/// Random instance with `m ≤ max_m` agents and dimension `n ≤ max_n`.
pub fn random_instance(seed: u64, max_m: usize, max_n: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=max_m);
    let n = rng.random_range(1..=max_n);
    let edges = random_connected_edges(&mut rng, m, 0.4);
    let weights = random_weights(&mut rng, m, &edges);
    let terms: Vec<Vec<Term>> = (0..m).map(|_| random_terms(&mut rng, n)).collect();
    let graph = NetworkGraph::new(m, edges.iter().copied()).expect("valid graph");
    let w = DenseMatrix::from_rows(&weights).expect("square");
    let mixing = validate_mixing(&w, &graph).expect("random weights are valid");
    let objectives = terms.iter().map(|t| objective_from_terms(n, t)).collect();
    let problem = Problem::new(objectives, graph, mixing).expect("valid problem");
    Instance {
        problem,
        terms,
        weights,
        edges,
        m,
        n,
    }
}

pub fn random_state(rng: &mut impl Rng, m: usize, n: usize, half_width: f64) -> StackedState<f64> {
    let data = (0..m * n).map(|_| rng.random_range(-half_width..half_width)).collect();
    StackedState::new(m, n, data).expect("shape")
}

pub fn poly_value(terms: &[Term], x: &[f64]) -> f64 {
    terms
        .iter()
        .map(|(e, c)| c * e.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product::<f64>())
        .sum()
}

pub fn poly_grad(terms: &[Term], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    for (e, c) in terms {
        for j in 0..n {
            if e[j] == 0 {
                continue;
            }
            let mut v = c * e[j] as f64;
            for k in 0..n {
                let p = if k == j { e[k] - 1 } else { e[k] };
                v *= x[k].powi(p as i32);
            }
            g[j] += v;
        }
    }
    g
}

/// `A ⊗ I_n` as a dense row-major matrix.
pub fn kron_identity(a: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let m = a.len();
    let mut out = vec![vec![0.0; m * n]; m * n];
    for i in 0..m {
        for j in 0..m {
            for d in 0..n {
                out[i * n + d][j * n + d] = a[i][j];
            }
        }
    }
    out
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(u, v)| u * v).sum()).collect()
}

/// `Q_α(x̂) = Σ f_i(x̂_i) + (1/2α) x̂ᵀ(I − W ⊗ I_n)x̂` from the raw instance data.
pub fn dense_q_value(inst: &Instance, alpha: f64, x: &[f64]) -> f64 {
    let n = inst.n;
    let f: f64 = (0..inst.m).map(|i| poly_value(&inst.terms[i], &x[i * n..(i + 1) * n])).sum();
    let wx = matvec(&kron_identity(&inst.weights, n), x);
    let pen: f64 = x.iter().zip(&wx).map(|(a, b)| a * (a - b)).sum();
    f + pen / (2.0 * alpha)
}

/// `∇Q_α(x̂) = ∇F(x̂) + α⁻¹(I − W ⊗ I_n)x̂` from the raw instance data.
pub fn dense_q_grad(inst: &Instance, alpha: f64, x: &[f64]) -> Vec<f64> {
    let n = inst.n;
    let wx = matvec(&kron_identity(&inst.weights, n), x);
    let mut g = Vec::with_capacity(x.len());
    for i in 0..inst.m {
        g.extend(poly_grad(&inst.terms[i], &x[i * n..(i + 1) * n]));
    }
    for k in 0..x.len() {
        g[k] += (x[k] - wx[k]) / alpha;
    }
    g
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

/// Eigenvalues of the symmetric circulant on a cycle of `m` nodes with self weight `a0` and
/// neighbour weight `a1`: `a0 + 2·a1·cos(2πk/m)`, ascending.
pub fn cycle_circulant_eigenvalues(m: usize, a0: f64, a1: f64) -> Vec<f64> {
    let mut eig: Vec<f64> = (0..m)
        .map(|k| a0 + 2.0 * a1 * (2.0 * std::f64::consts::PI * k as f64 / m as f64).cos())
        .collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

pub fn max_rel_err(reference: &[f64], candidate: &[f64]) -> f64 {
    let scale = reference.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    reference
        .iter()
        .zip(candidate)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn dense_rows(m: &DenseMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// The five-agent saddle example rebuilt from raw monomials and weights.
pub fn five_agent_instance() -> Instance {
    let t = |e: [u32; 2], c: f64| (e.to_vec(), c);
    let terms = vec![
        vec![t([4, 0], 0.25), t([2, 0], -1.0), t([0, 2], -1.0)],
        vec![t([4, 0], 0.25), t([0, 4], 0.5), t([0, 2], 1.5)],
        vec![t([2, 0], -1.0), t([0, 2], 1.0)],
        vec![t([4, 0], 0.5), t([0, 2], -0.5)],
        vec![t([2, 0], 1.0), t([0, 4], 0.5)],
    ];
    let weights = vec![
        vec![0.6, 0.0, 0.2, 0.0, 0.2],
        vec![0.0, 0.6, 0.0, 0.2, 0.2],
        vec![0.2, 0.0, 0.6, 0.2, 0.0],
        vec![0.0, 0.2, 0.2, 0.6, 0.0],
        vec![0.2, 0.2, 0.0, 0.0, 0.6],
    ];
    let edges = vec![(0, 2), (2, 3), (3, 1), (1, 4), (4, 0)];
    let graph = NetworkGraph::new(5, edges.iter().copied()).expect("valid graph");
    let mixing = validate_mixing(&DenseMatrix::from_rows(&weights).expect("square"), &graph).expect("valid");
    let objectives = terms.iter().map(|t| objective_from_terms(2, t)).collect();
    let problem = Problem::new(objectives, graph, mixing).expect("valid problem");
    Instance {
        problem,
        terms,
        weights,
        edges,
        m: 5,
        n: 2,
    }
}
