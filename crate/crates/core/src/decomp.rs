//! Intertwiners between a-type connections, splitting of endomorphism
//! algebras, irreducible decomposition of powers of W̃ and the fusion data of
//! the resulting family.

use std::cmp::Ordering;
use std::collections::{ BTreeMap, HashMap, VecDeque };
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ Distribution, StandardNormal };
use thiserror::Error;

use crate::connection::builders::build_identity;
use crate::connection::{
    check_biunitarity, renormalize, vertical_product, Cell, ConnError, Connection, Model, RenormKind,
};
use crate::graphs::{ alternating, count_paths, Edge, GraphError, LayeredGraph, SquareScheme };
use crate::linalg::{ max_abs_dense, sparse_null_space, SpMat, RANK_RTOL, ZERO };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompError {
    #[error(transparent)]
    Conn(#[from] ConnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("not an a-type connection: {0}")]
    NotAType(&'static str),
    #[error("connections are not comparable: {0}")]
    Shape(&'static str),
    #[error("End algebra not closed under either adjoint (max deviation {0:e})")]
    AdjointClosure(f64),
    #[error("no spectral gap after {0} reseeds")]
    SpectralGap(usize),
    #[error("compressed summand is not bi-unitary (residual {0:e})")]
    NotBiunitary(f64),
    #[error("new sectors still appear at depth {max_depth} ({labels} found so far)")]
    DepthExceeded { max_depth: usize, labels: usize },
}
pub type DecompResult<T> = Result<T, DecompError>;

pub const DEFAULT_MAX_DEPTH: usize = 12;
pub const RESEEDS: usize = 8;
/// Entries below this are treated as numerical zero in compressed tables.
const CHOP: f64 = 1e-13;

type Pair = (usize, usize);

/// Vertical edges of a graph grouped by (source, range).
pub fn edge_blocks(g: &LayeredGraph) -> BTreeMap<Pair, Vec<usize>> {
    let mut m: BTreeMap<Pair, Vec<usize>> = BTreeMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        m.entry((e.src, e.dst)).or_default().push(i);
    }
    m
}

/// Multiplicity table of a vertical graph on one layer.
pub fn multiplicity(g: &LayeredGraph) -> Vec<Vec<u64>> { g.adjacency() }

fn require_a_type(c: &Connection) -> DecompResult<()> {
    if !c.is_a_type() {
        return Err(DecompError::NotAType("top and bottom graphs differ or corners are mixed"));
    }
    Ok(())
}

/// One matrix per vertex pair and side, mapping the source connection's
/// vertical edges u→u′ to the target's.
#[derive(Clone, Debug, PartialEq)]
pub struct Intertwiner {
    pub left: BTreeMap<Pair, DMatrix<C64>>,
    pub right: BTreeMap<Pair, DMatrix<C64>>,
}

fn zip_blocks(
    a: &BTreeMap<Pair, DMatrix<C64>>,
    b: &BTreeMap<Pair, DMatrix<C64>>,
    f: impl Fn(&DMatrix<C64>, &DMatrix<C64>) -> DMatrix<C64>,
) -> BTreeMap<Pair, DMatrix<C64>> {
    a.iter().filter_map(|(k, m)| b.get(k).map(|n| (*k, f(m, n)))).collect()
}

impl Intertwiner {
    pub fn identity(c: &Connection) -> Self {
        let side = |g: &LayeredGraph| {
            edge_blocks(g).into_iter().map(|(k, v)| (k, DMatrix::identity(v.len(), v.len()))).collect()
        };
        Self { left: side(&c.left), right: side(&c.right) }
    }

    fn blocks(&self) -> impl Iterator<Item = &DMatrix<C64>> { self.left.values().chain(self.right.values()) }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut DMatrix<C64>> {
        self.left.values_mut().chain(self.right.values_mut())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Intertwiner) -> Intertwiner {
        Self { left: zip_blocks(&self.left, &other.left, |a, b| a * b), right: zip_blocks(&self.right, &other.right, |a, b| a * b) }
    }

    pub fn adjoint(&self) -> Intertwiner {
        let adj = |m: &BTreeMap<Pair, DMatrix<C64>>| m.iter().map(|(k, v)| (*k, v.adjoint())).collect();
        Self { left: adj(&self.left), right: adj(&self.right) }
    }

    pub fn add_scaled(&self, a: C64, other: &Intertwiner) -> Intertwiner {
        Self {
            left: zip_blocks(&self.left, &other.left, |x, y| x + y * a),
            right: zip_blocks(&self.right, &other.right, |x, y| x + y * a),
        }
    }

    pub fn scale(&self, a: C64) -> Intertwiner {
        let mut out = self.clone();
        out.blocks_mut().for_each(|m| *m *= a);
        out
    }

    /// Entrywise inner product ⟨self, other⟩ (antilinear in `self`).
    pub fn inner(&self, other: &Intertwiner) -> C64 {
        self.blocks().zip(other.blocks()).map(|(a, b)| a.dotc(b)).sum()
    }

    pub fn max_abs(&self) -> f64 { self.blocks().map(max_abs_dense).fold(0.0, f64::max) }

    pub fn dist(&self, other: &Intertwiner) -> f64 { self.add_scaled(C64::new(-1.0, 0.0), other).max_abs() }

    /// Σ of block ranks-by-trace; for a projection, the number of edges it keeps.
    pub fn trace(&self) -> C64 { self.blocks().map(|m| m.trace()).sum() }
}

/// Orthonormal basis of the intertwiners from `src` to `dst`: families T with
/// T^{(y,y′)} src[ξ,ζ] = dst[ξ,ζ] T^{(x,x′)} for all ξ: x→y, ζ: x′→y′ in G.
pub fn hom_space(src: &Connection, dst: &Connection) -> DecompResult<Vec<Intertwiner>> {
    require_a_type(src)?;
    require_a_type(dst)?;
    if src.corners != dst.corners || *src.top != *dst.top {
        return Err(DecompError::Shape("different horizontal graph or layers"));
    }
    let (sl, sr) = (edge_blocks(&src.left), edge_blocks(&src.right));
    let (dl, dr) = (edge_blocks(&dst.left), edge_blocks(&dst.right));
    // variables: (side, dst edge, src edge) with matching endpoints
    let mut var: HashMap<(u8, usize, usize), usize> = HashMap::new();
    let mut layout: Vec<(u8, Pair, usize, usize)> = Vec::new();
    for (side, s, d) in [(0u8, &sl, &dl), (1u8, &sr, &dr)] {
        for (k, se) in s {
            let Some(de) = d.get(k) else { continue };
            for (i, &e2) in de.iter().enumerate() {
                for (j, &e1) in se.iter().enumerate() {
                    var.insert((side, e2, e1), layout.len());
                    layout.push((side, *k, i, j));
                }
            }
        }
    }
    let g = &src.top;
    let mut trip: Vec<(usize, usize, C64)> = Vec::new();
    let mut nrows = 0;
    for xi in 0..g.len() {
        let (x, y) = (g.edges[xi].src, g.edges[xi].dst);
        for zeta in 0..g.len() {
            let (x2, y2) = (g.edges[zeta].src, g.edges[zeta].dst);
            let (Some(lefts), Some(rights)) = (sl.get(&(x, x2)), dr.get(&(y, y2))) else { continue };
            // src cells grouped by left edge: (right, value)
            let mut s_by_l: HashMap<usize, Vec<(usize, C64)>> = HashMap::new();
            for &(l, r, v) in src.fan_top_bottom(xi, zeta) {
                s_by_l.entry(l as usize).or_default().push((r as usize, v));
            }
            let mut d_by_r: HashMap<usize, Vec<(usize, C64)>> = HashMap::new();
            for &(l, r, v) in dst.fan_top_bottom(xi, zeta) {
                d_by_r.entry(r as usize).or_default().push((l as usize, v));
            }
            for &i in rights {
                for &j in lefts {
                    let mut row = Vec::new();
                    for &(r, v) in s_by_l.get(&j).map(Vec::as_slice).unwrap_or(&[]) {
                        if let Some(&k) = var.get(&(1, i, r)) {
                            row.push((k, v));
                        }
                    }
                    for &(l, v) in d_by_r.get(&i).map(Vec::as_slice).unwrap_or(&[]) {
                        if let Some(&k) = var.get(&(0, l, j)) {
                            row.push((k, -v));
                        }
                    }
                    if !row.is_empty() {
                        trip.extend(row.into_iter().map(|(k, v)| (nrows, k, v)));
                        nrows += 1;
                    }
                }
            }
        }
    }
    let a = SpMat::from_triplets(nrows, layout.len(), trip);
    let null = sparse_null_space(&a, RANK_RTOL);
    let empty = |s: &BTreeMap<Pair, Vec<usize>>, d: &BTreeMap<Pair, Vec<usize>>| -> BTreeMap<Pair, DMatrix<C64>> {
        s.iter().filter_map(|(k, se)| d.get(k).map(|de| (*k, DMatrix::zeros(de.len(), se.len())))).collect()
    };
    let zero = Intertwiner { left: empty(&sl, &dl), right: empty(&sr, &dr) };
    let mut basis: Vec<Intertwiner> = null.into_iter().map(|v| {
        let mut t = zero.clone();
        for (k, val) in v.entries {
            let (side, pair, i, j) = layout[k];
            let m = if side == 0 { t.left.get_mut(&pair) } else { t.right.get_mut(&pair) };
            m.expect("block exists")[(i, j)] = val;
        }
        t
    }).collect();
    // canonical phase: first entry of largest magnitude made real positive
    for t in &mut basis {
        let pivot = t.blocks().flat_map(|m| m.iter().copied()).fold(ZERO, |acc, v| if v.norm() > acc.norm() + 1e-12 { v } else { acc });
        if pivot != ZERO {
            let ph = pivot.conj() / pivot.norm();
            t.blocks_mut().for_each(|m| *m *= ph);
        }
    }
    Ok(basis)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AdjointKind {
    /// conjugate transpose of every block
    SlotWise,
    /// D T† D⁻¹ with D = √(μ_source/μ_range) per vertical edge
    Weighted,
}

impl AdjointKind {
    pub fn name(&self) -> &'static str {
        match self {
            AdjointKind::SlotWise => "slot-wise",
            AdjointKind::Weighted => "mu-weighted",
        }
    }
}

/// End(c) with an orthonormal basis and the adjoint that closes it.
#[derive(Clone, Debug)]
pub struct EndAlgebra {
    pub basis: Vec<Intertwiner>,
    pub adjoint: AdjointKind,
    pub closure_deviation: f64,
}

impl EndAlgebra {
    pub fn new(c: &Connection, tol: f64) -> DecompResult<Self> {
        let basis = hom_space(c, c)?;
        let mut alg = Self { basis, adjoint: AdjointKind::SlotWise, closure_deviation: 0.0 };
        let mut worst: f64 = 0.0;
        for kind in [AdjointKind::SlotWise, AdjointKind::Weighted] {
            alg.adjoint = kind;
            let dev = alg.basis.iter().map(|b| {
                let a = alg.star(b);
                a.dist(&alg.project(&a))
            }).fold(0.0, f64::max);
            worst = worst.max(dev);
            if dev < tol.max(1e-9) {
                alg.closure_deviation = dev;
                return Ok(alg);
            }
        }
        Err(DecompError::AdjointClosure(worst))
    }

    pub fn dim(&self) -> usize { self.basis.len() }

    /// Adjoint of an element. On a block of edges u→u′ the weight matrix D is
    /// the scalar √(μ_u/μ_u′), so D T† D⁻¹ agrees with T† block by block and
    /// both kinds reduce to the same formula here.
    pub fn star(&self, t: &Intertwiner) -> Intertwiner { t.adjoint() }

    /// Orthogonal projection onto the span of the basis.
    pub fn project(&self, t: &Intertwiner) -> Intertwiner {
        let mut out = t.scale(ZERO);
        for b in &self.basis {
            out = out.add_scaled(b.inner(t), b);
        }
        out
    }
}

/// Orthonormal basis (entrywise) of a spanning list, dropping dependent ones.
fn orthonormalize(list: Vec<Intertwiner>, tol: f64) -> Vec<Intertwiner> {
    let mut out: Vec<Intertwiner> = Vec::new();
    let scale = list.iter().map(|t| t.inner(t).re.sqrt()).fold(1.0, f64::max);
    for mut t in list {
        for _ in 0..2 {
            for b in &out {
                t = t.add_scaled(-b.inner(&t), b);
            }
        }
        let n = t.inner(&t).re.sqrt();
        if n > tol * scale {
            out.push(t.scale(C64::new(1.0 / n, 0.0)));
        }
    }
    out
}

/// Isometries onto the range of a projection, one per block.
fn range_isometries(p: &BTreeMap<Pair, DMatrix<C64>>) -> BTreeMap<Pair, DMatrix<C64>> {
    p.iter().map(|(k, m)| {
        let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let eig = herm.symmetric_eigen();
        let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        let mut v = DMatrix::zeros(m.nrows(), keep.len());
        for (c, &i) in keep.iter().enumerate() {
            v.set_column(c, &eig.eigenvectors.column(i));
        }
        (*k, v)
    }).collect()
}

struct Eigen {
    value: f64,
    side: u8,
    pair: Pair,
    vec: nalgebra::DVector<C64>,
}

/// Split a projection `p` of End(c) into minimal projections.
fn split(alg: &EndAlgebra, p: Intertwiner, rng: &mut ChaCha8Rng, out: &mut Vec<Intertwiner>) -> DecompResult<()> {
    let pap = orthonormalize(alg.basis.iter().map(|b| p.compose(b).compose(&p)).collect(), 1e-8);
    if pap.len() <= 1 {
        out.push(p);
        return Ok(());
    }
    let iso_l = range_isometries(&p.left);
    let iso_r = range_isometries(&p.right);
    for _ in 0..RESEEDS {
        let mut h = p.scale(ZERO);
        for b in &pap {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            h = h.add_scaled(C64::new(re, im), b);
        }
        h = h.add_scaled(C64::new(1.0, 0.0), &alg.star(&h)).scale(C64::new(0.5, 0.0));
        let mut eigs: Vec<Eigen> = Vec::new();
        for (side, iso, hb) in [(0u8, &iso_l, &h.left), (1u8, &iso_r, &h.right)] {
            for (k, v) in iso {
                if v.ncols() == 0 {
                    continue;
                }
                let r = v.adjoint() * &hb[k] * v;
                let r = (&r + r.adjoint()) * C64::new(0.5, 0.0);
                let e = r.symmetric_eigen();
                for i in 0..e.eigenvalues.len() {
                    eigs.push(Eigen { value: e.eigenvalues[i], side, pair: *k, vec: v * e.eigenvectors.column(i) });
                }
            }
        }
        eigs.sort_by(|a, b| a.value.total_cmp(&b.value));
        let scale = eigs.iter().map(|e| e.value.abs()).fold(1e-300, f64::max);
        let same = 1e-9 * scale;
        let apart = 1e-5 * scale;
        let mut clusters: Vec<Vec<usize>> = vec![vec![0]];
        let mut ambiguous = false;
        for i in 1..eigs.len() {
            let gap = eigs[i].value - eigs[i - 1].value;
            if gap <= same {
                clusters.last_mut().unwrap().push(i);
            } else if gap > apart {
                clusters.push(vec![i]);
            } else {
                ambiguous = true;
            }
        }
        if ambiguous || clusters.len() < 2 {
            continue;
        }
        for cl in clusters {
            let mut q = p.scale(ZERO);
            for &i in &cl {
                let e = &eigs[i];
                let m = if e.side == 0 { q.left.get_mut(&e.pair) } else { q.right.get_mut(&e.pair) };
                *m.expect("block of p") += &e.vec * e.vec.adjoint();
            }
            split(alg, q, rng, out)?;
        }
        return Ok(());
    }
    Err(DecompError::SpectralGap(RESEEDS))
}

/// Pairwise orthogonal minimal projections of End(c) summing to the identity.
pub fn end_minimal_projections(c: &Connection, seed: u64, tol: f64) -> DecompResult<(EndAlgebra, Vec<Intertwiner>)> {
    let alg = EndAlgebra::new(c, tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    split(&alg, Intertwiner::identity(c), &mut rng, &mut out)?;
    Ok((alg, out))
}

/// The summand cut out by a projection p ∈ End(c): isometries v with v v* = p
/// and values v^{(y,y′)†} c[ξ,ζ] v^{(x,x′)}.
pub fn compress(c: &Connection, p: &Intertwiner, tol: f64) -> DecompResult<Connection> {
    require_a_type(c)?;
    let iso_l = range_isometries(&p.left);
    let iso_r = range_isometries(&p.right);
    let [tl, tr, _, _] = c.corners;
    let names = &c.layers.names;
    let graph = |layer: usize, iso: &BTreeMap<Pair, DMatrix<C64>>, n: usize| -> DecompResult<(LayeredGraph, BTreeMap<Pair, Vec<usize>>)> {
        let mut edges = Vec::new();
        let mut idx: BTreeMap<Pair, Vec<usize>> = BTreeMap::new();
        for (&(u, v), m) in iso {
            for i in 0..m.ncols() {
                idx.entry((u, v)).or_default().push(edges.len());
                edges.push(Edge { id: format!("{}>{}#{}", names[layer][u], names[layer][v], i), src: u, dst: v });
            }
        }
        Ok((LayeredGraph::new(layer, layer, n, n, edges)?, idx))
    };
    let (left, lidx) = graph(tl, &iso_l, c.left.n_src)?;
    let (right, ridx) = graph(tr, &iso_r, c.right.n_src)?;
    let (cl, cr) = (edge_blocks(&c.left), edge_blocks(&c.right));
    let g = &c.top;
    let mut values = BTreeMap::new();
    for xi in 0..g.len() {
        let (x, y) = (g.edges[xi].src, g.edges[xi].dst);
        for zeta in 0..g.len() {
            let (x2, y2) = (g.edges[zeta].src, g.edges[zeta].dst);
            let (Some(vl), Some(vr)) = (iso_l.get(&(x, x2)), iso_r.get(&(y, y2))) else { continue };
            if vl.ncols() == 0 || vr.ncols() == 0 || c.fan_top_bottom(xi, zeta).is_empty() {
                continue;
            }
            let blk = c.block(xi, zeta, &cl[&(x, x2)], &cr[&(y, y2)]);
            let nb = vr.adjoint() * blk * vl;
            for j in 0..nb.nrows() {
                for i in 0..nb.ncols() {
                    let v = nb[(j, i)];
                    if v.norm() > CHOP {
                        values.insert(Cell::new(lidx[&(x, x2)][i], xi, ridx[&(y, y2)][j], zeta), v);
                    }
                }
            }
        }
    }
    let out = Connection::new(c.layers.clone(), c.corners, c.top.clone(), Arc::new(left), Arc::new(right), c.bottom.clone(), values)?;
    let rep = check_biunitarity(&out, tol);
    if !rep.pass {
        return Err(DecompError::NotBiunitary(rep.max_residual()));
    }
    Ok(out)
}

/// Irreducible summands with multiplicities. Two minimal projections p, q are
/// equivalent when q End(c) p ≠ 0.
pub fn decompose(c: &Connection, seed: u64, tol: f64) -> DecompResult<Vec<(Connection, usize)>> {
    let (alg, projs) = end_minimal_projections(c, seed, tol)?;
    let mut class: Vec<Option<usize>> = vec![None; projs.len()];
    let mut reps: Vec<usize> = Vec::new();
    for i in 0..projs.len() {
        let found = reps.iter().position(|&r| {
            alg.basis.iter().any(|b| projs[r].compose(b).compose(&projs[i]).max_abs() > 1e-6)
        });
        match found {
            Some(k) => class[i] = Some(k),
            None => {
                class[i] = Some(reps.len());
                reps.push(i);
            }
        }
    }
    let mut out = Vec::with_capacity(reps.len());
    for (k, &r) in reps.iter().enumerate() {
        let mult = class.iter().filter(|c| **c == Some(k)).count();
        out.push((compress(c, &projs[r], tol)?, mult));
    }
    Ok(out)
}

pub fn is_irreducible(c: &Connection) -> DecompResult<bool> { Ok(hom_space(c, c)?.len() == 1) }

/// Rayleigh quotient μᵀMμ / μᵀμ and the residual max|Mμ − dμ|.
pub fn rayleigh(m: &[Vec<u64>], mu: &[f64]) -> (f64, f64) {
    let mm: Vec<f64> = m.iter().map(|row| row.iter().zip(mu).map(|(&a, b)| a as f64 * b).sum()).collect();
    let num: f64 = mm.iter().zip(mu).map(|(a, b)| a * b).sum();
    let den: f64 = mu.iter().map(|x| x * x).sum();
    let d = num / den;
    let res = mm.iter().zip(mu).map(|(a, b)| (a - d * b).abs()).fold(0.0, f64::max);
    (d, res)
}

/// One irreducible W_a.
#[derive(Clone, Debug)]
pub struct Sector {
    pub w: Connection,
    pub d: f64,
    /// first power of W̃ in which it appears
    pub depth: usize,
    /// vertical multiplicities on V0 (`m[x][y] = M_{xa}^y`)
    pub m: Vec<Vec<u64>>,
    /// vertical multiplicities on V3
    pub m_right: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionData {
    pub labels: Vec<String>,
    pub d: Vec<f64>,
    pub w: f64,
    /// `n[a][b][c] = N_ab^c = dim Hom(W_c, W_a·W_b)`
    pub n: Vec<Vec<Vec<u64>>>,
    /// `m[a][x][y] = M_{xa}^y`
    pub m: Vec<Vec<Vec<u64>>>,
    pub conj: Vec<usize>,
    /// `q[a][c]`: multiplicity of W_c in W_a·W̃
    pub q: Vec<Vec<u64>>,
    pub d_residual: f64,
    pub adjoint: AdjointKind,
}

impl FusionData {
    /// L^n with W̃^n ≅ Σ_a L_a^n W_a.
    pub fn l(&self, n: usize) -> Vec<u64> {
        let k = self.d.len();
        let mut l = vec![0u64; k];
        l[0] = 1;
        for _ in 0..n {
            let mut next = vec![0u64; k];
            for a in 0..k {
                for c in 0..k {
                    next[c] += l[a] * self.q[a][c];
                }
            }
            l = next;
        }
        l
    }
}

/// The outcome of the closure search.
#[derive(Clone, Debug)]
pub struct Decomposition {
    /// the square with μ rescaled so that Σ_{V0} μ² = w
    pub scheme: SquareScheme,
    pub w_tilde: Connection,
    pub sectors: Vec<Sector>,
    pub fusion: FusionData,
}

fn cmp_sector(a: &Sector, b: &Sector) -> Ordering {
    let dd = if (a.d - b.d).abs() > 1e-9 { a.d.total_cmp(&b.d) } else { Ordering::Equal };
    dd.then(a.depth.cmp(&b.depth)).then_with(|| a.m.cmp(&b.m)).then_with(|| a.m_right.cmp(&b.m_right))
}

fn equivalent(a: &Sector, w: &Connection, m: &[Vec<u64>], m_right: &[Vec<u64>]) -> DecompResult<bool> {
    if a.m != m || a.m_right != m_right {
        return Ok(false);
    }
    Ok(!hom_space(&a.w, w)?.is_empty())
}

fn find_label(sectors: &[Sector], w: &Connection) -> DecompResult<Option<usize>> {
    let (m, mr) = (multiplicity(&w.left), multiplicity(&w.right));
    for (i, s) in sectors.iter().enumerate() {
        if equivalent(s, w, &m, &mr)? {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Breadth-first closure of {W_a} under a ↦ summands of W_a·W̃, starting from
/// the identity connection on G, followed by all fusion data.
pub fn discover_irreducibles(model: &Model, max_depth: usize, seed: u64, tol: f64) -> DecompResult<Decomposition> {
    let w = &model.w;
    let w_tilde = vertical_product(w, &renormalize(w, RenormKind::Bar))?;
    let id = build_identity(&w.top, w.layers.clone(), w.corners[0], w.corners[1])?;
    let mu0 = &w.layers.mu[w.corners[0]];
    let mut sectors = vec![Sector { d: 1.0, depth: 0, m: multiplicity(&id.left), m_right: multiplicity(&id.right), w: id }];
    let mut q: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new()];
    let mut adjoint = AdjointKind::SlotWise;
    let mut queue = VecDeque::from([0usize]);
    let mut round = 0u64;
    while let Some(a) = queue.pop_front() {
        let prod = vertical_product(&sectors[a].w, &w_tilde)?;
        round += 1;
        let parts = decompose(&prod, seed.wrapping_add(round), tol)?;
        let alg_kind = EndAlgebra::new(&prod, tol)?.adjoint;
        if alg_kind == AdjointKind::Weighted {
            adjoint = alg_kind;
        }
        for (s, mult) in parts {
            let label = match find_label(&sectors, &s)? {
                Some(l) => l,
                None => {
                    let depth = sectors[a].depth + 1;
                    if depth > max_depth {
                        return Err(DecompError::DepthExceeded { max_depth, labels: sectors.len() });
                    }
                    let m = multiplicity(&s.left);
                    let (d, _) = rayleigh(&m, mu0);
                    sectors.push(Sector { d, depth, m_right: multiplicity(&s.right), m, w: s });
                    q.push(BTreeMap::new());
                    queue.push_back(sectors.len() - 1);
                    sectors.len() - 1
                }
            };
            *q[a].entry(label).or_insert(0) += mult as u64;
        }
    }
    // canonical order
    let mut order: Vec<usize> = (0..sectors.len()).collect();
    order.sort_by(|&i, &j| cmp_sector(&sectors[i], &sectors[j]));
    let mut pos = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        pos[old] = new;
    }
    let k = sectors.len();
    let mut qt = vec![vec![0u64; k]; k];
    for (a, row) in q.iter().enumerate() {
        for (&c, &m) in row {
            qt[pos[a]][pos[c]] = m;
        }
    }
    let mut sectors: Vec<Sector> = order.iter().map(|&i| sectors[i].clone()).collect();

    let mut d_residual: f64 = 0.0;
    for s in &mut sectors {
        let (d, r) = rayleigh(&s.m, mu0);
        s.d = d;
        d_residual = d_residual.max(r);
    }
    let wsum: f64 = sectors.iter().map(|s| s.d * s.d).sum();
    let norm2: f64 = mu0.iter().map(|x| x * x).sum();
    let scheme = model.scheme.rescaled((wsum / norm2).sqrt());
    let layers = scheme.layers.clone();
    for s in &mut sectors {
        s.w = s.w.with_layers(layers.clone());
    }
    let w_tilde = w_tilde.with_layers(layers);

    let mut n = vec![vec![vec![0u64; k]; k]; k];
    for a in 0..k {
        for b in 0..k {
            let ab = vertical_product(&sectors[a].w, &sectors[b].w)?;
            for c in 0..k {
                n[a][b][c] = hom_space(&sectors[c].w, &ab)?.len() as u64;
            }
        }
    }
    let mut conj = vec![0; k];
    for a in 0..k {
        let bar = renormalize(&sectors[a].w, RenormKind::Bar);
        conj[a] = find_label(&sectors, &bar)?.ok_or(DecompError::Shape("conjugate sector not in the family"))?;
    }
    let fusion = FusionData {
        labels: (0..k).map(|i| i.to_string()).collect(),
        d: sectors.iter().map(|s| s.d).collect(),
        w: wsum,
        n,
        m: sectors.iter().map(|s| s.m.clone()).collect(),
        conj,
        q: qt,
        d_residual,
        adjoint,
    };
    Ok(Decomposition { scheme, w_tilde, sectors, fusion })
}

/// Path-count diagnostics of the convergence statements.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorStats {
    pub n: usize,
    pub k_counts: Vec<u64>,
    pub alpha: f64,
    pub kappa: Vec<f64>,
    pub l: Vec<u64>,
    pub beta: f64,
    pub lambda: Vec<f64>,
}

/// K_x^n counts paths of length 2n on H, H̃, H, ... from the base vertex to x.
pub fn sector_statistics(dec: &Decomposition, n: usize) -> DecompResult<SectorStats> {
    let steps = alternating(&dec.scheme.h, 2 * n);
    let refs: Vec<&LayeredGraph> = steps.iter().collect();
    let k_counts = if n == 0 {
        let mut v = vec![0; dec.scheme.h.n_src];
        v[dec.scheme.base] = 1;
        v
    } else {
        count_paths(&refs, dec.scheme.base)?
    };
    let alpha = k_counts.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let kappa = k_counts.iter().map(|&x| x as f64 / alpha).collect();
    let l = dec.fusion.l(n);
    let beta = l.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let lambda = l.iter().map(|&x| x as f64 / beta).collect();
    Ok(SectorStats { n, k_counts, alpha, kappa, l, beta, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::builders::*;

    const TOL: f64 = 1e-9;

    fn w_tilde(m: &Model) -> Connection { vertical_product(&m.w, &renormalize(&m.w, RenormKind::Bar)).unwrap() }

    #[test]
    fn identity_is_irreducible() {
        let m = build_dynkin("A3", None).unwrap();
        let id = build_identity(&m.w.top, m.w.layers.clone(), 0, 3).unwrap();
        assert_eq!(hom_space(&id, &id).unwrap().len(), 1);
        let parts = decompose(&id, 1, TOL).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].1, 1);
    }

    #[test]
    fn a3_w_tilde() {
        let m = build_dynkin("A3", None).unwrap();
        let wt = w_tilde(&m);
        let id = build_identity(&m.w.top, m.w.layers.clone(), 0, 3).unwrap();
        assert_eq!(hom_space(&id, &wt).unwrap().len(), 1);
        let (alg, projs) = end_minimal_projections(&wt, 3, TOL).unwrap();
        assert_eq!(alg.dim(), 2);
        assert_eq!(projs.len(), 2);
        for p in &projs {
            assert!(p.compose(p).dist(p) < 1e-10);
            assert!(p.adjoint().dist(p) < 1e-10);
        }
        let sum = projs[0].add_scaled(C64::new(1.0, 0.0), &projs[1]);
        assert!(sum.dist(&Intertwiner::identity(&wt)) < 1e-10);
        let parts = decompose(&wt, 3, TOL).unwrap();
        assert_eq!(parts.iter().map(|p| p.1).collect::<Vec<_>>(), vec![1, 1]);
        // the two sectors are inequivalent
        assert!(hom_space(&parts[0].0, &parts[1].0).unwrap().is_empty());
        for (s, _) in &parts {
            let (d, _) = rayleigh(&multiplicity(&s.left), &m.scheme.layers.mu[0]);
            assert!((d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_w_tilde_splits_into_four_equivalent_pieces() {
        let m = build_trivial(2).unwrap();
        let wt = w_tilde(&m);
        let (alg, projs) = end_minimal_projections(&wt, 5, TOL).unwrap();
        assert_eq!(alg.dim(), 16);
        assert_eq!(projs.len(), 4);
        let parts = decompose(&wt, 5, TOL).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].1, 4);
    }

    #[test]
    fn compress_identity_projection() {
        let m = build_dynkin("A4", None).unwrap();
        let wt = w_tilde(&m);
        let c = compress(&wt, &Intertwiner::identity(&wt), TOL).unwrap();
        assert_eq!(c.left.len(), wt.left.len());
        assert_eq!(hom_space(&c, &wt).unwrap().len(), hom_space(&wt, &wt).unwrap().len());
    }

    #[test]
    fn a4_golden_sector() {
        let m = build_dynkin("A4", None).unwrap();
        let parts = decompose(&w_tilde(&m), 11, TOL).unwrap();
        let mut ds: Vec<f64> = parts.iter().map(|(s, _)| rayleigh(&multiplicity(&s.left), &m.scheme.layers.mu[0]).0).collect();
        ds.sort_by(f64::total_cmp);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((ds[0] - 1.0).abs() < 1e-8 && (ds[1] - phi).abs() < 1e-8);
    }

    #[test]
    fn a3_fusion() {
        let dec = discover_irreducibles(&build_dynkin("A3", None).unwrap(), 12, 0, TOL).unwrap();
        let f = &dec.fusion;
        assert_eq!(f.d.len(), 2);
        assert!((f.w - 2.0).abs() < 1e-12);
        let mu2: f64 = dec.scheme.mu0().iter().map(|x| x * x).sum();
        assert!((mu2 - f.w).abs() < 1e-12);
        assert_eq!(f.n[0][1][1], 1);
        assert_eq!(f.n[1][1][0], 1);
        assert_eq!(f.conj, vec![0, 1]);
        assert_eq!(f.l(3), vec![4, 4]);
    }

    #[test]
    fn inequivalent_a3_sectors_have_no_hom() {
        let dec = discover_irreducibles(&build_dynkin("A3", None).unwrap(), 12, 0, TOL).unwrap();
        assert!(hom_space(&dec.sectors[0].w, &dec.sectors[1].w).unwrap().is_empty());
        for s in &dec.sectors {
            assert!(is_irreducible(&s.w).unwrap());
        }
    }

    #[test]
    fn l_by_recursion_matches_hom_counts() {
        let m = build_dynkin("A4", None).unwrap();
        let dec = discover_irreducibles(&m, 12, 0, TOL).unwrap();
        let wt = &dec.w_tilde;
        let wt2 = vertical_product(wt, wt).unwrap();
        for (n, power) in [(1, wt.clone()), (2, wt2)] {
            let l = dec.fusion.l(n);
            for (a, s) in dec.sectors.iter().enumerate() {
                assert_eq!(hom_space(&s.w, &power).unwrap().len() as u64, l[a], "n={n} a={a}");
            }
        }
    }

    #[test]
    fn cyclic_and_trivial_global_index() {
        let dec = discover_irreducibles(&build_cyclic_group(2).unwrap(), 12, 0, TOL).unwrap();
        assert_eq!(dec.fusion.d.len(), 2);
        assert!(dec.fusion.d.iter().all(|d| (d - 1.0).abs() < 1e-12));
        assert!((dec.fusion.w - 2.0).abs() < 1e-12);
        let dec = discover_irreducibles(&build_trivial(2).unwrap(), 12, 0, TOL).unwrap();
        assert_eq!(dec.fusion.d.len(), 1);
        assert!((dec.fusion.w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depth_limit_is_an_error() {
        let r = discover_irreducibles(&build_dynkin("A5", None).unwrap(), 1, 0, TOL);
        assert!(matches!(r, Err(DecompError::DepthExceeded { max_depth: 1, .. })));
    }

    #[test]
    fn statistics_a3() {
        let dec = discover_irreducibles(&build_dynkin("A3", None).unwrap(), 12, 0, TOL).unwrap();
        for n in 1..=6 {
            let s = sector_statistics(&dec, n).unwrap();
            assert!(s.kappa.iter().all(|k| (k - 0.5f64.sqrt()).abs() < 1e-12));
            assert!(s.lambda.iter().all(|k| (k - 0.5f64.sqrt()).abs() < 1e-12));
        }
        let s = sector_statistics(&dec, 3).unwrap();
        assert_eq!(s.l, vec![4, 4]);
        assert_eq!(s.k_counts, vec![4, 4]);
    }
}
