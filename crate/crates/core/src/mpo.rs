//! Loop space of G, the 4-tensor, the matrix product operators O_a^k, the
//! projector P^k, the 2-step shift and the map Φ^k onto strings.

use std::collections::{ BTreeMap, HashMap };
use std::ops::Range;

use num_complex::Complex64 as C64;

use crate::connection::{ renormalize, Connection, RenormKind };
use crate::decomp::Decomposition;
use crate::graphs::LayeredGraph;
use crate::linalg::{ sparse_rank, SpMat, ONE, ZERO };

/// Closed paths of length 2k on G, G̃, G, ... grouped by their base vertex in
/// V0. A word lists the G edge indices in traversal order; even positions run
/// V0→V3, odd positions V3→V0.
#[derive(Clone, Debug)]
pub struct LoopBasis {
    pub k: usize,
    pub words: Vec<Vec<u32>>,
    pub base: Vec<usize>,
    /// vertex after k steps (in V0 for even k, V3 for odd k)
    pub mid: Vec<usize>,
    pub blocks: Vec<Range<usize>>,
    index: HashMap<Vec<u32>, usize>,
}

/// All paths of `len` steps from `start` (V0), alternating G and G̃, in
/// lexicographic order of edge indices. Returns `(word, end vertex)`.
pub fn paths_from(g: &LayeredGraph, start: usize, len: usize) -> Vec<(Vec<u32>, usize)> {
    let mut out = vec![(Vec::new(), start)];
    for step in 0..len {
        let mut next = Vec::new();
        for (w, v) in &out {
            let edges = if step % 2 == 0 { g.out_edges(*v) } else { g.in_edges(*v) };
            for &e in edges {
                let to = if step % 2 == 0 { g.edges[e].dst } else { g.edges[e].src };
                let mut w2 = w.clone();
                w2.push(e as u32);
                next.push((w2, to));
            }
        }
        out = next;
    }
    out
}

impl LoopBasis {
    pub fn new(g: &LayeredGraph, k: usize) -> Self {
        let mut words = Vec::new();
        let mut base = Vec::new();
        let mut mid = Vec::new();
        let mut blocks = Vec::with_capacity(g.n_src);
        for x in 0..g.n_src {
            let start = words.len();
            let halves = paths_from(g, x, k);
            // a loop is ξ1 followed by a path back to x; pair halves by endpoint
            let mut by_end: BTreeMap<usize, Vec<&Vec<u32>>> = BTreeMap::new();
            for (w, v) in &halves {
                by_end.entry(*v).or_default().push(w);
            }
            for (w1, v) in &halves {
                for w2 in &by_end[v] {
                    let mut word = (*w1).clone();
                    word.extend(reverse_half(w2));
                    words.push(word);
                    base.push(x);
                    mid.push(*v);
                }
            }
            blocks.push(start..words.len());
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { k, words, base, mid, blocks, index }
    }

    pub fn len(&self) -> usize { self.words.len() }

    pub fn is_empty(&self) -> bool { self.words.is_empty() }

    pub fn index_of(&self, word: &[u32]) -> Option<usize> { self.index.get(word).copied() }

    /// The string pair (ξ1, ξ2) of a loop ξ1 · ξ̃2.
    pub fn string_pair(&self, i: usize) -> (Vec<u32>, Vec<u32>) {
        let w = &self.words[i];
        (w[..self.k].to_vec(), reverse_half(&w[self.k..]))
    }

    /// Index of the loop for the string (ξ1, ξ2).
    pub fn index_of_pair(&self, p1: &[u32], p2: &[u32]) -> Option<usize> {
        let mut w = p1.to_vec();
        w.extend(reverse_half(p2));
        self.index_of(&w)
    }

    /// Layer holding the midpoints.
    pub fn mid_layer(&self) -> usize { if self.k % 2 == 0 { 0 } else { 3 } }
}

/// Reverse a path given as edge indices; the alternation is preserved
/// because every length-k half starts in V0.
fn reverse_half(w: &[u32]) -> Vec<u32> { w.iter().rev().copied().collect() }

/// Both cells of the ladder: W_a and W′_a.
pub struct Ladder {
    pub cells: [Connection; 2],
}

impl Ladder {
    pub fn new(a: &Connection) -> Self { Self { cells: [a.clone(), renormalize(a, RenormKind::Prime)] } }

    /// Sweep `word` (top edges) through consecutive cells starting at column
    /// `offset`, from left bond `bond`. Returns bottom word and right bond with
    /// amplitudes.
    pub fn sweep(&self, word: &[u32], offset: usize, bond: u32) -> BTreeMap<(Vec<u32>, u32), C64> {
        let mut states: BTreeMap<(Vec<u32>, u32), C64> = BTreeMap::new();
        states.insert((Vec::with_capacity(word.len()), bond), ONE);
        for (j, &t) in word.iter().enumerate() {
            let cell = &self.cells[(offset + j) % 2];
            let mut next: BTreeMap<(Vec<u32>, u32), C64> = BTreeMap::new();
            for ((bottom, b), amp) in &states {
                for &(r, bt, v) in cell.fan_left_top(*b as usize, t as usize) {
                    let mut nb = bottom.clone();
                    nb.push(bt);
                    *next.entry((nb, r)).or_insert(ZERO) += amp * v;
                }
            }
            states = next;
        }
        states
    }
}

/// O_a^k on the loop basis: entry ⟨η|O|ξ⟩ is the periodic ladder of 2k cells
/// with top ξ and bottom η, summed over the boundary bond.
pub fn mpo_o(a: &Connection, basis: &LoopBasis) -> SpMat {
    let ladder = Ladder::new(a);
    let mut trip = Vec::new();
    for (col, word) in basis.words.iter().enumerate() {
        let x = basis.base[col];
        for &zeta in a.left.out_edges(x) {
            for ((eta, r), v) in ladder.sweep(word, 0, zeta as u32) {
                if r as usize == zeta {
                    let row = basis.index_of(&eta).expect("ladder output is a loop");
                    trip.push((row, col, v));
                }
            }
        }
    }
    SpMat::from_triplets(basis.len(), basis.len(), trip)
}

/// The four-index tensor of the 2-cell block W_a | W′_a with its fourth-root
/// weight: key `(left, [bottom1, bottom2], right, [top1, top2])`.
pub type FourTensor = BTreeMap<(u32, [u32; 2], u32, [u32; 2]), C64>;

pub fn four_tensor(a: &Connection) -> FourTensor {
    let ladder = Ladder::new(a);
    let g = &a.top;
    let mu0 = &a.layers.mu[a.corners[0]];
    let mut out = FourTensor::new();
    for t1 in 0..g.len() {
        for &t2 in g.in_edges(g.edges[t1].dst) {
            let x = g.edges[t1].src;
            let y = g.edges[t2].src;
            for &l in a.left.out_edges(x) {
                let z = a.left.edges[l].dst;
                for ((bottom, r), v) in ladder.sweep(&[t1 as u32, t2 as u32], 0, l as u32) {
                    let w = g.edges[bottom[1] as usize].src;
                    let f = (mu0[x] * mu0[w] / (mu0[y] * mu0[z])).powf(0.25);
                    out.insert((l as u32, [bottom[0], bottom[1]], r, [t1 as u32, t2 as u32]), v * f);
                }
            }
        }
    }
    out
}

/// Contract a periodic ring of k four-tensors into a loop-space operator.
pub fn ring_contract(t: &FourTensor, basis: &LoopBasis) -> SpMat {
    let mut by_left_top: HashMap<(u32, [u32; 2]), Vec<([u32; 2], u32, C64)>> = HashMap::new();
    for (&(l, b, r, top), &v) in t {
        by_left_top.entry((l, top)).or_default().push((b, r, v));
    }
    let bonds: Vec<u32> = t.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut trip = Vec::new();
    for (col, word) in basis.words.iter().enumerate() {
        for &zeta in &bonds {
            let mut states: BTreeMap<(Vec<u32>, u32), C64> = BTreeMap::from([((Vec::new(), zeta), ONE)]);
            for pair in word.chunks(2) {
                let top = [pair[0], pair[1]];
                let mut next: BTreeMap<(Vec<u32>, u32), C64> = BTreeMap::new();
                for ((bot, b), amp) in &states {
                    for &(bb, r, v) in by_left_top.get(&(*b, top)).map(Vec::as_slice).unwrap_or(&[]) {
                        let mut nb = bot.clone();
                        nb.extend(bb);
                        *next.entry((nb, r)).or_insert(ZERO) += amp * v;
                    }
                }
                states = next;
            }
            for ((eta, r), v) in states {
                if r == zeta {
                    trip.push((basis.index_of(&eta).expect("loop"), col, v));
                }
            }
        }
    }
    SpMat::from_triplets(basis.len(), basis.len(), trip)
}

/// Operators O_a^k for all sectors, and P^k = Σ_a (d_a/w) O_a^k.
#[derive(Clone, Debug)]
pub struct Pmpo {
    pub basis: LoopBasis,
    pub o: Vec<SpMat>,
    pub p: SpMat,
}

pub fn pmpo(dec: &Decomposition, k: usize) -> Pmpo {
    let basis = LoopBasis::new(&dec.scheme.g, k);
    let o: Vec<SpMat> = dec.sectors.iter().map(|s| mpo_o(&s.w, &basis)).collect();
    let mut p = SpMat::zeros(basis.len(), basis.len());
    for (a, oa) in o.iter().enumerate() {
        p = p.add_scaled(C64::new(dec.fusion.d[a] / dec.fusion.w, 0.0), oa);
    }
    Pmpo { basis, o, p }
}

/// Number of singular values above rtol·max(1, σ_max).
pub fn operator_rank(op: &SpMat, rtol: f64) -> usize { sparse_rank(op, rtol) }

/// Cyclic shift of every loop by two positions.
pub fn shift2(basis: &LoopBasis) -> SpMat {
    let n = 2 * basis.k;
    let trip = basis.words.iter().enumerate().map(|(i, w)| {
        let s: Vec<u32> = (0..n).map(|j| w[(j + 2) % n]).collect();
        (basis.index_of(&s).expect("shifted loop"), i, ONE)
    });
    SpMat::from_triplets(basis.len(), basis.len(), trip)
}

/// Diagonal of Φ^k: √(μ_{s(ξ1)}/μ_{r(ξ1)}) for the loop ξ1 · ξ2.
pub fn phi_diagonal(basis: &LoopBasis, layers: &crate::graphs::Layers) -> Vec<f64> {
    let ml = basis.mid_layer();
    (0..basis.len()).map(|i| (layers.mu[0][basis.base[i]] / layers.mu[ml][basis.mid[i]]).sqrt()).collect()
}

pub fn phi_map(basis: &LoopBasis, layers: &crate::graphs::Layers) -> SpMat {
    SpMat::diagonal(&phi_diagonal(basis, layers).into_iter().map(|v| C64::new(v, 0.0)).collect::<Vec<_>>())
}

/// Φ X Φ⁻¹ for a loop-space operator X.
pub fn conjugate_by_phi(x: &SpMat, phi: &[f64]) -> SpMat {
    let trip = x.rows.iter().enumerate()
        .flat_map(|(i, row)| row.iter().map(move |&(j, v)| (i, j, v * (phi[i] / phi[j]))));
    SpMat::from_triplets(x.nrows, x.ncols, trip)
}
