#![allow(dead_code)]

use pmpo::connection::builders::{ build_cyclic_group, build_dynkin, build_trivial };
use pmpo::connection::Model;
use pmpo::decomp::{ discover_irreducibles, Decomposition, DEFAULT_MAX_DEPTH };

pub const TOL: f64 = 1e-9;

/// Every example builder.
pub const BUILDERS: [&str; 14] = [
    "A3", "A4", "A5", "A6", "A7", "D4", "D5", "E6", "trivial2", "trivial3", "Z2", "Z3", "Z4", "Z5",
];

pub fn model(name: &str) -> Model {
    if let Some(d) = name.strip_prefix("trivial") {
        build_trivial(d.parse().unwrap()).unwrap()
    } else if let Some(n) = name.strip_prefix('Z') {
        build_cyclic_group(n.parse().unwrap()).unwrap()
    } else {
        build_dynkin(name, None).unwrap()
    }
}

pub fn decomposition(name: &str) -> Decomposition { discover_irreducibles(&model(name), DEFAULT_MAX_DEPTH, 0, TOL).unwrap() }

/// Largest k the heavy checks use for a builder.
pub fn k_max(name: &str) -> usize { if matches!(name, "E6" | "D5") { 2 } else { 4 } }

/// Integer matrix product, written out.
pub fn int_matmul(a: &[Vec<u64>], b: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let n = a.len();
    let m = b[0].len();
    let mut c = vec![vec![0u64; m]; n];
    for i in 0..n {
        for (k, bk) in b.iter().enumerate() {
            if a[i][k] == 0 {
                continue;
            }
            for j in 0..m {
                c[i][j] += a[i][k] * bk[j];
            }
        }
    }
    c
}

/// Closed walks of length `len` at `v` on the path graph with `n` vertices.
pub fn path_graph_loops(n: usize, v: usize, len: usize) -> u64 {
    let adj: Vec<Vec<u64>> = (0..n).map(|i| (0..n).map(|j| u64::from(i.abs_diff(j) == 1)).collect()).collect();
    let mut p: Vec<Vec<u64>> = (0..n).map(|i| (0..n).map(|j| u64::from(i == j)).collect()).collect();
    for _ in 0..len {
        p = int_matmul(&p, &adj);
    }
    p[v][v]
}

/// (n+1)/(4 sin²(π/(n+1)))
pub fn a_n_index(n: usize) -> f64 {
    let s = (std::f64::consts::PI / (n as f64 + 1.0)).sin();
    (n as f64 + 1.0) / (4.0 * s * s)
}
