//! String algebras on G, their traces, transport operators, flat fields,
//! Jones projections and the conditional expectation of a two-level Bratteli
//! diagram.
//!
//! Fields live in B_k = ⊕_x Str_x^k(G). The string (ξ1, ξ2) shares its index
//! with the loop ξ1·ξ̃2 of [`LoopBasis`], so Φ^k is diagonal.

use std::collections::{ BTreeMap, HashMap, VecDeque };

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::connection::Connection;
use crate::decomp::Decomposition;
use crate::graphs::{ Layers, SquareScheme };
use crate::linalg::{ dense_rank, sparse_null_space, weighted_orthonormalize, SpMat, ONE, RANK_RTOL, ZERO };
use crate::mpo::{ conjugate_by_phi, phi_diagonal, LoopBasis, Ladder, Pmpo };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StringError {
    #[error("weights are not normalized: Σ μ_x² = {got}, expected {want}")]
    Unnormalized { got: f64, want: f64 },
    #[error("boundary edges do not share endpoints")]
    BoundaryMismatch,
    #[error("Jones projection index {i} outside 1..{k}")]
    JonesIndex { i: usize, k: usize },
    #[error("Temperley-Lieb relations fail (residual {0:e})")]
    TemperleyLieb(f64),
    #[error("strings are not composable in the Bratteli diagram")]
    NotComposable,
}
pub type StringResult<T> = Result<T, StringError>;

/// A field (σ_x)_x as one coefficient vector over B_k.
pub type Field = Vec<C64>;

/// Trace weights of B_k: tr((ξ1, ξ2)) = δ (μ_x²/w) γ1^{-k} μ_{r(ξ1)}/μ_x.
#[derive(Clone, Debug)]
pub struct TraceData {
    /// per basis element, the weight of a diagonal string
    pub weight: Vec<f64>,
    /// per basis element, the weight within its own Str_x
    pub local: Vec<f64>,
    pub global: Vec<f64>,
}

impl TraceData {
    /// Requires Σ_{V0} μ² = w.
    pub fn new(basis: &LoopBasis, scheme: &SquareScheme, w: f64) -> StringResult<Self> {
        let mu = &scheme.layers.mu;
        let norm: f64 = mu[0].iter().map(|m| m * m).sum();
        if (norm - w).abs() > 1e-10 * w.max(1.0) {
            return Err(StringError::Unnormalized { got: norm, want: w });
        }
        let ml = basis.mid_layer();
        let gk = scheme.gamma1.powi(basis.k as i32);
        let global: Vec<f64> = mu[0].iter().map(|m| m * m / w).collect();
        let local: Vec<f64> = (0..basis.len()).map(|i| mu[ml][basis.mid[i]] / (gk * mu[0][basis.base[i]])).collect();
        let weight = (0..basis.len()).map(|i| global[basis.base[i]] * local[i]).collect();
        Ok(Self { weight, local, global })
    }

    pub fn trace(&self, basis: &LoopBasis, f: &[C64]) -> C64 {
        (0..basis.len()).filter(|&i| is_diagonal(basis, i)).map(|i| f[i] * self.weight[i]).sum()
    }

    /// tr_x restricted to the block of x.
    pub fn trace_at(&self, basis: &LoopBasis, x: usize, f: &[C64]) -> C64 {
        basis.blocks[x].clone().filter(|&i| is_diagonal(basis, i)).map(|i| f[i] * self.local[i]).sum()
    }

    /// ⟨f, g⟩ = tr(f* g).
    pub fn inner(&self, f: &[C64], g: &[C64]) -> C64 {
        f.iter().zip(g).zip(&self.weight).map(|((a, b), w)| a.conj() * b * *w).sum()
    }

    pub fn norm(&self, f: &[C64]) -> f64 { self.inner(f, f).re.max(0.0).sqrt() }
}

fn is_diagonal(basis: &LoopBasis, i: usize) -> bool {
    let (p1, p2) = basis.string_pair(i);
    p1 == p2
}

/// The identity of B_k.
pub fn unit_field(basis: &LoopBasis) -> Field {
    (0..basis.len()).map(|i| if is_diagonal(basis, i) { ONE } else { ZERO }).collect()
}

/// Block-matrix view of B_k: one matrix per (x, endpoint v) over the paths
/// x→v, multiplying as matrix units.
#[derive(Clone, Debug)]
pub struct StringAlgebra {
    /// (block, row, col) per basis element
    slot: Vec<(usize, usize, usize)>,
    sizes: Vec<usize>,
}

impl StringAlgebra {
    pub fn new(basis: &LoopBasis) -> Self {
        let mut block_of: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut path_pos: Vec<HashMap<Vec<u32>, usize>> = Vec::new();
        let mut slot = Vec::with_capacity(basis.len());
        for i in 0..basis.len() {
            let key = (basis.base[i], basis.mid[i]);
            let nb = block_of.len();
            let b = *block_of.entry(key).or_insert(nb);
            if b == path_pos.len() {
                path_pos.push(HashMap::new());
            }
            let (p1, p2) = basis.string_pair(i);
            let n = path_pos[b].len();
            let r = *path_pos[b].entry(p1).or_insert(n);
            let n = path_pos[b].len();
            let c = *path_pos[b].entry(p2).or_insert(n);
            slot.push((b, r, c));
        }
        let sizes = path_pos.iter().map(HashMap::len).collect();
        Self { slot, sizes }
    }

    pub fn to_blocks(&self, f: &[C64]) -> Vec<DMatrix<C64>> {
        let mut out: Vec<DMatrix<C64>> = self.sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (i, &(b, r, c)) in self.slot.iter().enumerate() {
            out[b][(r, c)] = f[i];
        }
        out
    }

    pub fn from_blocks(&self, m: &[DMatrix<C64>]) -> Field { self.slot.iter().map(|&(b, r, c)| m[b][(r, c)]).collect() }

    pub fn mul(&self, f: &[C64], g: &[C64]) -> Field {
        let (a, b) = (self.to_blocks(f), self.to_blocks(g));
        let prod: Vec<DMatrix<C64>> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        self.from_blocks(&prod)
    }

    pub fn star(&self, f: &[C64]) -> Field {
        let adj: Vec<DMatrix<C64>> = self.to_blocks(f).iter().map(|m| m.adjoint()).collect();
        self.from_blocks(&adj)
    }
}

/// Output pair (η1, η2) of a transport, as interned path ids.
pub type PairKey = (u32, u32);

/// Half ladders U(ζ, ξ) = {(η, m) ↦ amplitude} of k cells for every left
/// bond ζ of `a` and every half path ξ of length k from s(ζ).
pub struct Transport {
    pub k: usize,
    paths: Vec<Vec<u32>>,
    ids: HashMap<Vec<u32>, u32>,
    /// half-path ids of each basis string
    pair_ids: Vec<PairKey>,
    pair_index: HashMap<PairKey, usize>,
    /// (ζ, path id) ↦ [(m, η id, amplitude)] sorted by m
    half: HashMap<(u32, u32), Vec<(u32, u32, C64)>>,
    pub conn: Connection,
}

fn intern(paths: &mut Vec<Vec<u32>>, ids: &mut HashMap<Vec<u32>, u32>, p: Vec<u32>) -> u32 {
    if let Some(&id) = ids.get(&p) {
        return id;
    }
    let id = paths.len() as u32;
    ids.insert(p.clone(), id);
    paths.push(p);
    id
}

impl Transport {
    pub fn new(a: &Connection, basis: &LoopBasis) -> Self {
        let ladder = Ladder::new(a);
        let mut paths = Vec::new();
        let mut ids = HashMap::new();
        let mut pair_ids = Vec::with_capacity(basis.len());
        for i in 0..basis.len() {
            let (p1, p2) = basis.string_pair(i);
            let key = (intern(&mut paths, &mut ids, p1), intern(&mut paths, &mut ids, p2));
            pair_ids.push(key);
        }
        let pair_index = pair_ids.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let mut half = HashMap::new();
        for i in 0..basis.len() {
            let pid = pair_ids[i].0;
            for &zeta in a.left.out_edges(basis.base[i]) {
                if half.contains_key(&(zeta as u32, pid)) {
                    continue;
                }
                let p = paths[pid as usize].clone();
                let mut list: Vec<(u32, u32, C64)> = ladder
                    .sweep(&p, 0, zeta as u32)
                    .into_iter()
                    .map(|((eta, m), v)| (m, intern(&mut paths, &mut ids, eta), v))
                    .collect();
                list.sort_by_key(|&(m, e, _)| (m, e));
                half.insert((zeta as u32, pid), list);
            }
        }
        Self { k: basis.k, paths, ids, pair_ids, pair_index, half, conn: a.clone() }
    }

    fn half(&self, zeta: usize, pid: u32) -> &[(u32, u32, C64)] {
        self.half.get(&(zeta as u32, pid)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Interned id of a half path, if it was seen.
    pub fn path_id(&self, p: &[u32]) -> Option<u32> { self.ids.get(p).copied() }

    pub fn path(&self, id: u32) -> &[u32] { &self.paths[id as usize] }

    /// Key of basis string `i`.
    pub fn key_of(&self, i: usize) -> PairKey { self.pair_ids[i] }

    /// Basis index of an output pair, when it is a string of B_k.
    pub fn basis_index(&self, key: PairKey) -> Option<usize> { self.pair_index.get(&key).copied() }

    /// T_{ζ1ζ2} applied to the string basis element `i`, as output pairs
    /// (η1, η2) with coefficients, sorted by key. Output pairs with different
    /// endpoints are returned as well; they never belong to B_k.
    pub fn apply_basis(&self, zeta1: usize, zeta2: usize, i: usize) -> Vec<(PairKey, C64)> {
        let (p1, p2) = self.pair_ids[i];
        let (left, right) = (self.half(zeta1, p1), self.half(zeta2, p2));
        let mut acc: HashMap<PairKey, C64> = HashMap::new();
        let (mut a, mut b) = (0, 0);
        while a < left.len() && b < right.len() {
            let (ma, mb) = (left[a].0, right[b].0);
            if ma < mb {
                a += 1;
            } else if mb < ma {
                b += 1;
            } else {
                let a_end = a + left[a..].iter().take_while(|t| t.0 == ma).count();
                let b_end = b + right[b..].iter().take_while(|t| t.0 == ma).count();
                for &(_, e1, v1) in &left[a..a_end] {
                    for &(_, e2, v2) in &right[b..b_end] {
                        *acc.entry((e1, e2)).or_insert(ZERO) += v1 * v2.conj();
                    }
                }
                (a, b) = (a_end, b_end);
            }
        }
        let mut out: Vec<(PairKey, C64)> = acc.into_iter().collect();
        out.sort_by_key(|&(k, _)| k);
        out
    }

    /// T_{ζ1ζ2} as an operator on B_k, for ζ1, ζ2 with a common range.
    pub fn operator(&self, basis: &LoopBasis, zeta1: usize, zeta2: usize) -> StringResult<SpMat> {
        let (e1, e2) = (&self.conn.left.edges[zeta1], &self.conn.left.edges[zeta2]);
        if e1.src != e2.src || e1.dst != e2.dst {
            return Err(StringError::BoundaryMismatch);
        }
        let mut trip = Vec::new();
        for i in basis.blocks[e1.src].clone() {
            for (key, v) in self.apply_basis(zeta1, zeta2, i) {
                let row = self.basis_index(key).expect("string of equal endpoints");
                trip.push((row, i, v));
            }
        }
        Ok(SpMat::from_triplets(basis.len(), basis.len(), trip))
    }

    /// Σ_ζ T_{ζζ}: the string-side operator Õ by direct contraction.
    pub fn o_tilde(&self, basis: &LoopBasis) -> SpMat {
        let mut acc = SpMat::zeros(basis.len(), basis.len());
        for z in 0..self.conn.left.len() {
            acc = acc.add_scaled(ONE, &self.operator(basis, z, z).expect("diagonal pair"));
        }
        acc
    }
}

/// String-side operators Õ_a = Φ O_a Φ⁻¹ and P̃.
pub struct StringOps {
    pub o: Vec<SpMat>,
    pub p: SpMat,
    pub phi: Vec<f64>,
}

pub fn string_ops(pm: &Pmpo, layers: &Layers) -> StringOps {
    let phi = phi_diagonal(&pm.basis, layers);
    StringOps {
        o: pm.o.iter().map(|o| conjugate_by_phi(o, &phi)).collect(),
        p: conjugate_by_phi(&pm.p, &phi),
        phi,
    }
}

/// Solution of the flatness system for W̃ at one k.
#[derive(Clone, Debug)]
pub struct FlatFields {
    pub dim: usize,
    /// st-2 orthonormal basis, present when requested
    pub basis: Option<Vec<Field>>,
    pub constraints: usize,
}

/// Flat fields for the a-type connection `wt`: all (σ_x) with
/// T_{ζ1ζ2}(σ_x) = δ_{ζ1,ζ2} σ_y for every pair of vertical edges from x,
/// including pairs with different ranges (which must give 0).
pub fn flat_fields(wt: &Connection, basis: &LoopBasis, base: usize, trace: Option<&TraceData>) -> FlatFields {
    let tr = Transport::new(wt, basis);
    let n = basis.len();
    // σ_y = T_{ζζ} σ_x along a spanning tree from the base vertex
    let nv = basis.blocks.len();
    let mut embed: Vec<Option<SpMat>> = vec![None; nv];
    let b0 = basis.blocks[base].clone();
    let d0 = b0.len();
    embed[base] = Some(SpMat::from_triplets(n, d0, b0.clone().enumerate().map(|(j, i)| (i, j, ONE))));
    let mut queue = VecDeque::from([base]);
    while let Some(x) = queue.pop_front() {
        for &z in wt.left.out_edges(x) {
            let y = wt.left.edges[z].dst;
            if embed[y].is_none() {
                let t = tr.operator(basis, z, z).expect("diagonal pair");
                embed[y] = Some(t.matmul(embed[x].as_ref().unwrap()).chop(1e-14));
                queue.push_back(y);
            }
        }
    }
    let mut trip: Vec<(usize, usize, C64)> = Vec::new();
    let mut nrows = 0;
    for x in 0..nv {
        let Some(ex) = &embed[x] else { continue };
        let outs = wt.left.out_edges(x);
        for &z1 in outs {
            for &z2 in outs {
                // rows keyed by the output pair, in order of first appearance
                let mut keys: HashMap<PairKey, usize> = HashMap::new();
                let mut t_trip = Vec::new();
                let mut key_row = |k: PairKey| {
                    let n = keys.len();
                    *keys.entry(k).or_insert(n)
                };
                for i in basis.blocks[x].clone() {
                    for (key, v) in tr.apply_basis(z1, z2, i) {
                        t_trip.push((key_row(key), i, v));
                    }
                }
                let mut d_trip = Vec::new();
                let y1 = wt.left.edges[z1].dst;
                if z1 == z2 {
                    for i in basis.blocks[y1].clone() {
                        d_trip.push((key_row(tr.key_of(i)), i, -ONE));
                    }
                }
                let nk = keys.len();
                let mut m = SpMat::from_triplets(nk, n, t_trip).matmul(ex);
                if z1 == z2 {
                    let ey = embed[y1].as_ref().expect("tree reaches every vertex");
                    m = m.add_scaled(ONE, &SpMat::from_triplets(nk, n, d_trip).matmul(ey));
                }
                for row in m.chop(1e-14).rows {
                    if !row.is_empty() {
                        trip.extend(row.into_iter().map(|(j, v)| (nrows, j, v)));
                        nrows += 1;
                    }
                }
            }
        }
    }
    let a = SpMat::from_triplets(nrows, d0, trip);
    let null = sparse_null_space(&a, RANK_RTOL);
    let dim = null.len();
    let basis_out = trace.map(|t| {
        let mut f = DMatrix::zeros(n, dim);
        for (c, v) in null.iter().enumerate() {
            let mut s = vec![ZERO; d0];
            for &(j, val) in &v.entries {
                s[j] = val;
            }
            for y in 0..nv {
                let ey = embed[y].as_ref().unwrap();
                for i in basis.blocks[y].clone() {
                    f[(i, c)] = ey.rows[i].iter().map(|&(j, e)| e * s[j]).sum();
                }
            }
        }
        let q = weighted_orthonormalize(&f, &t.weight);
        (0..q.ncols()).map(|c| q.column(c).iter().copied().collect()).collect()
    });
    FlatFields { dim, basis: basis_out, constraints: nrows }
}

/// Max over all (x, ζ1, ζ2) of |T_{ζ1ζ2}(σ_x) − δ σ_y|.
pub fn flatness_residual(tr: &Transport, basis: &LoopBasis, sigma: &[C64]) -> f64 {
    let c = &tr.conn;
    let mut worst: f64 = 0.0;
    for x in 0..basis.blocks.len() {
        for &z1 in c.left.out_edges(x) {
            for &z2 in c.left.out_edges(x) {
                let mut acc: HashMap<PairKey, C64> = HashMap::new();
                for i in basis.blocks[x].clone() {
                    if sigma[i] == ZERO {
                        continue;
                    }
                    for (key, v) in tr.apply_basis(z1, z2, i) {
                        *acc.entry(key).or_insert(ZERO) += v * sigma[i];
                    }
                }
                if z1 == z2 {
                    for i in basis.blocks[c.left.edges[z1].dst].clone() {
                        *acc.entry(tr.key_of(i)).or_insert(ZERO) -= sigma[i];
                    }
                }
                worst = acc.values().map(|v| v.norm()).fold(worst, f64::max);
            }
        }
    }
    worst
}

/// The field with only the x component of `f` kept.
pub fn component(basis: &LoopBasis, f: &[C64], x: usize) -> Field {
    let r = basis.blocks[x].clone();
    f.iter().enumerate().map(|(i, &v)| if r.contains(&i) { v } else { ZERO }).collect()
}

/// ⊕_x c_x σ_x.
pub fn weight_components(basis: &LoopBasis, f: &[C64], c: &[f64]) -> Field {
    f.iter().enumerate().map(|(i, &v)| v * c[basis.base[i]]).collect()
}

/// Jones projection e_i of B_k (1 ≤ i ≤ k−1), every component at once.
pub fn jones_projection(basis: &LoopBasis, scheme: &SquareScheme, i: usize) -> StringResult<Field> {
    let k = basis.k;
    if i == 0 || i >= k {
        return Err(StringError::JonesIndex { i, k });
    }
    let g = &scheme.g;
    let mu = &scheme.layers.mu;
    // vertex reached after `steps` steps of a half path from x
    let walk = |x: usize, p: &[u32], steps: usize| -> usize {
        let mut v = x;
        for (s, &e) in p.iter().take(steps).enumerate() {
            v = if s % 2 == 0 { g.edges[e as usize].dst } else { g.edges[e as usize].src };
        }
        v
    };
    let layer = |steps: usize| if steps % 2 == 0 { 0 } else { 3 };
    let mut f = vec![ZERO; basis.len()];
    for j in 0..basis.len() {
        let (p1, p2) = basis.string_pair(j);
        // α = p[..i-1], ξ = p[i-1] = p[i], β = p[i+1..]
        if p1[..i - 1] != p2[..i - 1] || p1[i + 1..] != p2[i + 1..] || p1[i - 1] != p1[i] || p2[i - 1] != p2[i] {
            continue;
        }
        let x = basis.base[j];
        let ra = walk(x, &p1, i - 1);
        let r1 = walk(x, &p1, i);
        let r2 = walk(x, &p2, i);
        let (la, lx) = (layer(i - 1), layer(i));
        let v = (mu[lx][r1] * mu[lx][r2]).sqrt() / (mu[la][ra] * scheme.gamma1);
        f[j] = C64::new(v, 0.0);
    }
    Ok(f)
}

/// Max residual of e_i² = e_i = e_i*, e_i e_{i±1} e_i = γ1⁻² e_i and
/// e_i e_j = e_j e_i for |i − j| ≥ 2.
pub fn temperley_lieb_residual(alg: &StringAlgebra, es: &[Field], gamma1: f64) -> f64 {
    let dist = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let g2 = C64::new(gamma1.powi(-2), 0.0);
    let mut worst: f64 = 0.0;
    for (i, e) in es.iter().enumerate() {
        worst = worst.max(dist(&alg.mul(e, e), e)).max(dist(&alg.star(e), e));
        for (j, f) in es.iter().enumerate() {
            if i.abs_diff(j) == 1 {
                let efe = alg.mul(&alg.mul(e, f), e);
                let scaled: Field = e.iter().map(|v| v * g2).collect();
                worst = worst.max(dist(&efe, &scaled));
            } else if i.abs_diff(j) >= 2 {
                worst = worst.max(dist(&alg.mul(e, f), &alg.mul(f, e)));
            }
        }
    }
    worst
}

/// Jones projections e_1..e_{k−1}, certified by the TL relations.
pub fn jones_projections(basis: &LoopBasis, scheme: &SquareScheme, tol: f64) -> StringResult<(Vec<Field>, f64)> {
    let es: Vec<Field> = (1..basis.k).map(|i| jones_projection(basis, scheme, i)).collect::<StringResult<_>>()?;
    let res = temperley_lieb_residual(&StringAlgebra::new(basis), &es, scheme.gamma1);
    if res > tol {
        return Err(StringError::TemperleyLieb(res));
    }
    Ok((es, res))
}

/// Dimension of the span of 1 and all products of Jones projections, by
/// closing under right multiplication and keeping independent words.
pub fn temperley_lieb_dimension(basis: &LoopBasis, es: &[Field], trace: &TraceData) -> usize {
    let alg = StringAlgebra::new(basis);
    let mut kept: Vec<Field> = vec![unit_field(basis)];
    let mut frontier = kept.clone();
    let rank_of = |set: &[Field]| {
        let gram = DMatrix::from_fn(set.len(), set.len(), |i, j| trace.inner(&set[i], &set[j]));
        dense_rank(&gram, RANK_RTOL)
    };
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for w in &frontier {
            for e in es {
                let cand = alg.mul(w, e);
                let mut trial = kept.clone();
                trial.push(cand.clone());
                if rank_of(&trial) > kept.len() {
                    kept.push(cand.clone());
                    next.push(cand);
                }
            }
        }
        frontier = next;
    }
    kept.len()
}

/// Check every flat-field relation of the identification on a solved basis.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatnessReport {
    /// T^{W̃}_{ζ1ζ2}(σ_x) = δ σ_y
    pub transport: f64,
    /// T^{W_a}_{ζ1ζ2}(σ_x) = δ σ_y
    pub transport_sectors: f64,
    /// Õ_a σ_x = ⊕_y M_{xa}^y σ_y
    pub o_tilde: f64,
    /// P̃(⊕ μ_x σ_x) = ⊕ μ_y σ_y
    pub p_tilde: f64,
}

pub fn flatness_report(dec: &Decomposition, basis: &LoopBasis, fields: &[Field], ops: &StringOps) -> FlatnessReport {
    let tw = Transport::new(&dec.w_tilde, basis);
    let ta: Vec<Transport> = dec.sectors.iter().map(|s| Transport::new(&s.w, basis)).collect();
    let mu0 = &dec.scheme.layers.mu[0];
    let dist = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let mut rep = FlatnessReport { transport: 0.0, transport_sectors: 0.0, o_tilde: 0.0, p_tilde: 0.0 };
    for s in fields {
        rep.transport = rep.transport.max(flatness_residual(&tw, basis, s));
        for t in &ta {
            rep.transport_sectors = rep.transport_sectors.max(flatness_residual(t, basis, s));
        }
        for (a, o) in ops.o.iter().enumerate() {
            for x in 0..basis.blocks.len() {
                let sx = component(basis, s, x);
                let lhs = o.mul_vec(&sx);
                let m: Vec<f64> = dec.fusion.m[a][x].iter().map(|&c| c as f64).collect();
                let rhs = weight_components(basis, s, &m);
                rep.o_tilde = rep.o_tilde.max(dist(&lhs, &rhs));
            }
        }
        let f = weight_components(basis, s, mu0);
        rep.p_tilde = rep.p_tilde.max(dist(&ops.p.mul_vec(&f), &f));
    }
    rep
}

/// A two-level Bratteli diagram from a single root: `k1[v]` edges from the
/// root to level-one vertex v, `adj[v][u]` edges from v to level-two vertex u,
/// and a positive trace weight `t[u]` per minimal projection of level two.
#[derive(Clone, Debug, PartialEq)]
pub struct Bratteli {
    pub k1: Vec<usize>,
    pub adj: Vec<Vec<usize>>,
    pub t: Vec<f64>,
}

/// A two-step path: (root edge ξ: * → v, edge η: v → u).
pub type TwoPath = (usize, usize, usize, usize);

impl Bratteli {
    /// Random diagram; trace weights normalized so that tr(1) = 1.
    pub fn random<R: rand::Rng>(rng: &mut R) -> Self {
        let n1 = rng.random_range(1..=3);
        let n2 = rng.random_range(1..=3);
        let k1 = (0..n1).map(|_| rng.random_range(1..=3)).collect();
        let mut adj: Vec<Vec<usize>> = (0..n1).map(|_| (0..n2).map(|_| rng.random_range(0..=2)).collect()).collect();
        for u in 0..n2 {
            if (0..n1).all(|v| adj[v][u] == 0) {
                adj[rng.random_range(0..n1)][u] = 1;
            }
        }
        for row in adj.iter_mut() {
            if row.iter().all(|&m| m == 0) {
                row[0] = 1;
            }
        }
        let mut b = Self { k1, adj, t: vec![1.0; n2] };
        let raw: Vec<f64> = (0..n2).map(|_| rng.random_range(0.5..2.0)).collect();
        let dims = b.level2_dims();
        let total: f64 = raw.iter().zip(&dims).map(|(r, &d)| r * d as f64).sum();
        b.t = raw.iter().map(|r| r / total).collect();
        b
    }

    /// Paths root → u for each level-two vertex u.
    pub fn level2_dims(&self) -> Vec<usize> {
        let n2 = self.t.len();
        (0..n2).map(|u| (0..self.k1.len()).map(|v| self.k1[v] * self.adj[v][u]).sum()).collect()
    }

    /// Two-step paths as (v, root edge, η edge, u), grouped by u.
    pub fn paths(&self) -> Vec<Vec<TwoPath>> {
        let n2 = self.t.len();
        let mut out = vec![Vec::new(); n2];
        for v in 0..self.k1.len() {
            for xi in 0..self.k1[v] {
                for u in 0..n2 {
                    for eta in 0..self.adj[v][u] {
                        out[u].push((v, xi, eta, u));
                    }
                }
            }
        }
        out
    }

    /// An element of C is one matrix per u over the paths to u.
    pub fn zero(&self) -> Vec<DMatrix<C64>> { self.level2_dims().iter().map(|&d| DMatrix::zeros(d, d)).collect() }

    pub fn trace(&self, c: &[DMatrix<C64>]) -> C64 { c.iter().zip(&self.t).map(|(m, &t)| m.trace() * t).sum() }

    pub fn norm2(&self, c: &[DMatrix<C64>]) -> f64 {
        let cc: Vec<DMatrix<C64>> = c.iter().map(|m| m.adjoint() * m).collect();
        self.trace(&cc).re.max(0.0).sqrt()
    }

    /// E((ξ1·η1, ξ2·η2)) = δ_{ξ1,ξ2} K_{r(ξ1)}⁻¹ Σ_ξ (ξ·η1, ξ·η2).
    pub fn expectation(&self, c: &[DMatrix<C64>]) -> StringResult<Vec<DMatrix<C64>>> {
        let paths = self.paths();
        if c.len() != paths.len() || c.iter().zip(&paths).any(|(m, p)| m.nrows() != p.len() || m.ncols() != p.len()) {
            return Err(StringError::NotComposable);
        }
        let mut out = self.zero();
        for (u, ps) in paths.iter().enumerate() {
            for (i, &(v1, x1, e1, _)) in ps.iter().enumerate() {
                for (j, &(v2, x2, e2, _)) in ps.iter().enumerate() {
                    if v1 != v2 || x1 != x2 || c[u][(i, j)] == ZERO {
                        continue;
                    }
                    let kv = self.k1[v1] as f64;
                    for (a, &(va, xa, ea, _)) in ps.iter().enumerate() {
                        if va != v1 || ea != e1 {
                            continue;
                        }
                        let b = ps.iter().position(|&(vb, xb, eb, _)| vb == v1 && xb == xa && eb == e2).expect("path");
                        out[u][(a, b)] += c[u][(i, j)] / kv;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Matrix units of the level-one algebra B embedded in C:
    /// (ξ1, ξ2) ↦ Σ_η (ξ1·η, ξ2·η).
    pub fn level1_units(&self) -> Vec<Vec<DMatrix<C64>>> {
        let paths = self.paths();
        let mut out = Vec::new();
        for v in 0..self.k1.len() {
            for x1 in 0..self.k1[v] {
                for x2 in 0..self.k1[v] {
                    let mut m = self.zero();
                    for (u, ps) in paths.iter().enumerate() {
                        for (i, &(vi, xi, ei, _)) in ps.iter().enumerate() {
                            if vi == v && xi == x1 {
                                let j = ps.iter().position(|&(vj, xj, ej, _)| vj == v && xj == x2 && ej == ei).unwrap();
                                m[u][(i, j)] = ONE;
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
        out
    }

    pub fn random_element<R: rand::Rng>(&self, rng: &mut R) -> Vec<DMatrix<C64>> {
        self.zero().into_iter().map(|m| {
            DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        }).collect()
    }
}

pub fn block_mul(a: &[DMatrix<C64>], b: &[DMatrix<C64>]) -> Vec<DMatrix<C64>> { a.iter().zip(b).map(|(x, y)| x * y).collect() }

pub fn block_dist(a: &[DMatrix<C64>], b: &[DMatrix<C64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| crate::linalg::max_abs_dense(&(x - y))).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::builders::*;
    use crate::decomp::discover_irreducibles;
    use crate::mpo::pmpo;
    use rand::SeedableRng;

    fn dec(name: &str) -> Decomposition {
        let m = match name {
            "T2" => build_trivial(2).unwrap(),
            "Z3" => build_cyclic_group(3).unwrap(),
            n => build_dynkin(n, None).unwrap(),
        };
        discover_irreducibles(&m, 12, 0, 1e-9).unwrap()
    }

    #[test]
    fn trace_of_unit_is_one() {
        for name in ["A3", "A4", "T2", "Z3"] {
            let d = dec(name);
            for k in 1..=3 {
                let b = LoopBasis::new(&d.scheme.g, k);
                let t = TraceData::new(&b, &d.scheme, d.fusion.w).unwrap();
                let one = unit_field(&b);
                assert!((t.trace(&b, &one) - ONE).norm() < 1e-12, "{name} k={k}");
                for x in 0..b.blocks.len() {
                    assert!((t.trace_at(&b, x, &one) - ONE).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn trace_values() {
        let d = dec("A3");
        let b = LoopBasis::new(&d.scheme.g, 1);
        let t = TraceData::new(&b, &d.scheme, d.fusion.w).unwrap();
        // A_3, k = 1: one path from each end vertex, weight γ⁻¹ μ_2/μ_1 = 1
        assert!(t.local.iter().all(|&w| (w - 1.0).abs() < 1e-14));
        let d = dec("T2");
        let b = LoopBasis::new(&d.scheme.g, 1);
        let t = TraceData::new(&b, &d.scheme, d.fusion.w).unwrap();
        assert!(t.local.iter().all(|&w| (w - 0.5).abs() < 1e-15));
        let m = build_dynkin("A3", None).unwrap();
        assert!(matches!(TraceData::new(&b, &m.scheme, 5.0), Err(StringError::Unnormalized { .. })));
    }

    #[test]
    fn transport_sum_equals_o_tilde() {
        for name in ["A3", "A4", "T2", "Z3"] {
            let d = dec(name);
            for k in 1..=3 {
                let pm = pmpo(&d, k);
                let ops = string_ops(&pm, &d.scheme.layers);
                for (a, s) in d.sectors.iter().enumerate() {
                    let direct = Transport::new(&s.w, &pm.basis).o_tilde(&pm.basis);
                    assert!(direct.dist(&ops.o[a]) < 1e-12, "{name} k={k} a={a}");
                }
            }
        }
    }

    #[test]
    fn identity_transport_is_identity() {
        let d = dec("A4");
        let b = LoopBasis::new(&d.scheme.g, 2);
        let t = Transport::new(&d.sectors[0].w, &b);
        for z in 0..d.sectors[0].w.left.len() {
            let x = d.sectors[0].w.left.edges[z].src;
            let op = t.operator(&b, z, z).unwrap();
            for i in b.blocks[x].clone() {
                assert_eq!(op.rows[i], vec![(i, ONE)]);
            }
        }
    }

    #[test]
    fn flat_dimensions() {
        for (name, want) in [("A3", vec![1, 2, 4, 8]), ("A4", vec![1, 2, 5, 13]), ("T2", vec![4, 16, 64, 256])] {
            let d = dec(name);
            for k in 1..=4 {
                let b = LoopBasis::new(&d.scheme.g, k);
                assert_eq!(flat_fields(&d.w_tilde, &b, d.scheme.base, None).dim, want[k - 1], "{name} k={k}");
            }
        }
    }

    #[test]
    fn solved_fields_are_flat() {
        let d = dec("A4");
        for k in 1..=3 {
            let pm = pmpo(&d, k);
            let t = TraceData::new(&pm.basis, &d.scheme, d.fusion.w).unwrap();
            let ff = flat_fields(&d.w_tilde, &pm.basis, d.scheme.base, Some(&t));
            let fields = ff.basis.unwrap();
            for (i, f) in fields.iter().enumerate() {
                for (j, g) in fields.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((t.inner(f, g) - C64::new(want, 0.0)).norm() < 1e-10);
                }
            }
            let rep = flatness_report(&d, &pm.basis, &fields, &string_ops(&pm, &d.scheme.layers));
            assert!(rep.transport < 1e-9 && rep.transport_sectors < 1e-9, "{rep:?}");
            assert!(rep.o_tilde < 1e-9 && rep.p_tilde < 1e-9, "{rep:?}");
        }
    }

    #[test]
    fn flatness_propagates_to_two_levels() {
        let d = dec("A3");
        let w2 = crate::connection::vertical_product(&d.w_tilde, &d.w_tilde).unwrap();
        for k in 1..=2 {
            let b = LoopBasis::new(&d.scheme.g, k);
            let t = TraceData::new(&b, &d.scheme, d.fusion.w).unwrap();
            let fields = flat_fields(&d.w_tilde, &b, d.scheme.base, Some(&t)).basis.unwrap();
            let tr2 = Transport::new(&w2, &b);
            for f in &fields {
                assert!(flatness_residual(&tr2, &b, f) < 1e-10);
            }
        }
    }

    #[test]
    fn jones_relations_and_span() {
        for (name, dims) in [("A3", [1, 2, 4, 8]), ("A4", [1, 2, 5, 13]), ("A5", [1, 2, 5, 14])] {
            let d = dec(name);
            for k in 1..=4 {
                let b = LoopBasis::new(&d.scheme.g, k);
                let t = TraceData::new(&b, &d.scheme, d.fusion.w).unwrap();
                let (es, res) = jones_projections(&b, &d.scheme, 1e-10).unwrap();
                assert!(res < 1e-10);
                assert_eq!(temperley_lieb_dimension(&b, &es, &t), dims[k - 1], "{name} k={k}");
            }
        }
    }

    #[test]
    fn jones_trace_is_markov() {
        let d = dec("A3");
        let b = LoopBasis::new(&d.scheme.g, 2);
        let t = TraceData::new(&b, &d.scheme, d.fusion.w).unwrap();
        let e1 = jones_projection(&b, &d.scheme, 1).unwrap();
        assert!((t.trace(&b, &e1).re - 0.5).abs() < 1e-12);
        assert!(matches!(jones_projection(&b, &d.scheme, 2), Err(StringError::JonesIndex { .. })));
    }

    #[test]
    fn expectation_formula_examples() {
        // single root edge: E is the identity on that block
        let b = Bratteli { k1: vec![1], adj: vec![vec![2]], t: vec![0.5] };
        let x = b.random_element(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        assert!(block_dist(&b.expectation(&x).unwrap(), &x) < 1e-15);
        // two parallel root edges: E((ξ1·η, ξ1·η)) = ½ Σ_ξ (ξ·η, ξ·η)
        let b = Bratteli { k1: vec![2], adj: vec![vec![1]], t: vec![0.5] };
        let mut x = b.zero();
        x[0][(0, 0)] = ONE;
        let e = b.expectation(&x).unwrap();
        assert_eq!(e[0], DMatrix::from_diagonal_element(2, 2, C64::new(0.5, 0.0)));
    }

    #[test]
    fn expectation_properties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let b = Bratteli::random(&mut rng);
            assert!((b.trace(&b.zero().iter().map(|m| DMatrix::identity(m.nrows(), m.ncols())).collect::<Vec<_>>()) - ONE).norm() < 1e-12);
            let units = b.level1_units();
            for _ in 0..20 {
                let x = b.random_element(&mut rng);
                let e = b.expectation(&x).unwrap();
                assert!(block_dist(&b.expectation(&e).unwrap(), &e) < 1e-12);
                assert!((b.trace(&e) - b.trace(&x)).norm() < 1e-12);
                for u in &units {
                    assert!(block_dist(&block_mul(u, &e), &block_mul(&e, u)) < 1e-12);
                }
            }
        }
    }
}
