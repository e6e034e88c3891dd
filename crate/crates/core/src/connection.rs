//! Cells, connection value tables, renormalizations, unitarity checks and
//! products of connections.

use std::collections::{ BTreeMap, HashMap };
use std::sync::{ Arc, OnceLock };

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::graphs::{ reverse_graph, Edge, GraphError, LayeredGraph, Layers, SquareScheme };
use crate::linalg::{ max_abs_dense, ZERO };

pub mod builders;
pub mod format;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConnError {
    #[error("graph error: {0}")]
    Graph(#[from] GraphError),
    #[error("invalid cell (left {left}, top {top}, right {right}, bottom {bottom})")]
    InvalidCell { left: usize, top: usize, right: usize, bottom: usize },
    #[error("graph placement does not match the corner layers: {0}")]
    Layout(String),
    #[error("graphs to be glued differ: {0}")]
    GraphMismatch(&'static str),
    #[error("unknown diagram '{0}'")]
    UnknownDiagram(String),
    #[error("parameter out of range: {0}")]
    BadParameter(String),
    #[error("builder output failed the bi-unitarity check (residual {0:e})")]
    NotBiunitary(f64),
}
pub type ConnResult<T> = Result<T, ConnError>;

/// Values below this magnitude produced by products are dropped.
const DROP: f64 = 1e-14;

/// A cell as four edge indices: left l: x→z, top t: x→y, right r: y→w,
/// bottom b: z→w.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl Cell {
    pub fn new(left: usize, top: usize, right: usize, bottom: usize) -> Self {
        Self { left, top, right, bottom }
    }

    fn key(&self) -> [u32; 4] {
        [self.left as u32, self.top as u32, self.right as u32, self.bottom as u32]
    }

    fn from_key(k: &[u32; 4]) -> Self {
        Self::new(k[0] as usize, k[1] as usize, k[2] as usize, k[3] as usize)
    }
}

/// A drawn cell: the physical edges of the connection plus how the picture is
/// oriented. With `verticals_swapped` the drawn left edge is the connection's
/// right edge and vice versa; with `horizontals_reversed` the horizontal arrows
/// point leftward.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct OrientedCellQuery {
    pub drawn_left: usize,
    pub top: usize,
    pub drawn_right: usize,
    pub bottom: usize,
    pub horizontals_reversed: bool,
    pub verticals_swapped: bool,
}

impl OrientedCellQuery {
    pub fn underlying(&self) -> Cell {
        if self.verticals_swapped {
            Cell::new(self.drawn_right, self.top, self.drawn_left, self.bottom)
        } else {
            Cell::new(self.drawn_left, self.top, self.drawn_right, self.bottom)
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum RenormKind {
    Prime,
    Bar,
    BarPrime,
}

type Fanout = HashMap<(u32, u32), Vec<(u32, u32, C64)>>;

/// Four graphs around a square, weights on the layers, and a sparse complex
/// value per cell. Corner layers are `[top-left, top-right, bottom-left,
/// bottom-right]`; top runs TL→TR, left TL→BL, right TR→BR, bottom BL→BR.
#[derive(Clone, Debug)]
pub struct Connection {
    pub layers: Arc<Layers>,
    pub corners: [usize; 4],
    pub top: Arc<LayeredGraph>,
    pub left: Arc<LayeredGraph>,
    pub right: Arc<LayeredGraph>,
    pub bottom: Arc<LayeredGraph>,
    values: BTreeMap<[u32; 4], C64>,
    by_left_top: OnceLock<Fanout>,
    by_top_bottom: OnceLock<Fanout>,
    by_top: OnceLock<HashMap<u32, Vec<(u32, u32, u32, C64)>>>,
}

fn same_graph(a: &Arc<LayeredGraph>, b: &Arc<LayeredGraph>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

impl Connection {
    pub fn new(
        layers: Arc<Layers>,
        corners: [usize; 4],
        top: Arc<LayeredGraph>,
        left: Arc<LayeredGraph>,
        right: Arc<LayeredGraph>,
        bottom: Arc<LayeredGraph>,
        values: BTreeMap<Cell, C64>,
    ) -> ConnResult<Self> {
        let [tl, tr, bl, br] = corners;
        let expect = [(&top, tl, tr, "top"), (&left, tl, bl, "left"), (&right, tr, br, "right"), (&bottom, bl, br, "bottom")];
        for (g, s, d, name) in expect {
            if g.src_layer != s || g.dst_layer != d {
                return Err(ConnError::Layout(format!(
                    "{name} graph runs {}→{}, expected {s}→{d}", g.src_layer, g.dst_layer
                )));
            }
            if g.n_src != layers.names[s].len() || g.n_dst != layers.names[d].len() {
                return Err(ConnError::Layout(format!("{name} graph vertex counts do not match layers")));
            }
        }
        let mut table = BTreeMap::new();
        let c = Self {
            layers,
            corners,
            top,
            left,
            right,
            bottom,
            values: BTreeMap::new(),
            by_left_top: OnceLock::new(),
            by_top_bottom: OnceLock::new(),
            by_top: OnceLock::new(),
        };
        for (cell, v) in values {
            c.check_cell(&cell)?;
            if v != ZERO {
                table.insert(cell.key(), v);
            }
        }
        Ok(Self { values: table, ..c })
    }

    /// Connection on the four graphs of a square scheme (W's own placement).
    pub fn on_scheme(s: &SquareScheme, values: BTreeMap<Cell, C64>) -> ConnResult<Self> {
        Self::new(
            s.layers.clone(),
            [0, 3, 1, 2],
            s.g.clone(),
            s.h.clone(),
            s.h_prime.clone(),
            s.g_prime.clone(),
            values,
        )
    }

    fn with_parts(&self, corners: [usize; 4], graphs: [Arc<LayeredGraph>; 4], values: BTreeMap<[u32; 4], C64>)
        -> Self
    {
        let [top, left, right, bottom] = graphs;
        Self {
            layers: self.layers.clone(),
            corners,
            top,
            left,
            right,
            bottom,
            values,
            by_left_top: OnceLock::new(),
            by_top_bottom: OnceLock::new(),
            by_top: OnceLock::new(),
        }
    }

    pub fn with_layers(&self, layers: Arc<Layers>) -> Self {
        let mut c = self.clone();
        c.layers = layers;
        c
    }

    pub fn is_valid_cell(&self, cell: &Cell) -> bool {
        if cell.left >= self.left.len() || cell.top >= self.top.len()
            || cell.right >= self.right.len() || cell.bottom >= self.bottom.len()
        {
            return false;
        }
        let (l, t) = (&self.left.edges[cell.left], &self.top.edges[cell.top]);
        let (r, b) = (&self.right.edges[cell.right], &self.bottom.edges[cell.bottom]);
        l.src == t.src && t.dst == r.src && l.dst == b.src && r.dst == b.dst
    }

    pub fn check_cell(&self, cell: &Cell) -> ConnResult<()> {
        if self.is_valid_cell(cell) {
            Ok(())
        } else {
            Err(ConnError::InvalidCell { left: cell.left, top: cell.top, right: cell.right, bottom: cell.bottom })
        }
    }

    /// Corner vertices `(x, y, z, w)` of a valid cell.
    pub fn corner_vertices(&self, cell: &Cell) -> (usize, usize, usize, usize) {
        let t = &self.top.edges[cell.top];
        let b = &self.bottom.edges[cell.bottom];
        (t.src, t.dst, b.src, b.dst)
    }

    /// μ_x μ_w / (μ_y μ_z) for a valid cell.
    pub fn rho(&self, cell: &Cell) -> f64 {
        let (x, y, z, w) = self.corner_vertices(cell);
        let [tl, tr, bl, br] = self.corners;
        let mu = &self.layers.mu;
        mu[tl][x] * mu[br][w] / (mu[tr][y] * mu[bl][z])
    }

    pub fn value(&self, cell: &Cell) -> ConnResult<C64> {
        self.check_cell(cell)?;
        Ok(self.raw(cell))
    }

    fn raw(&self, cell: &Cell) -> C64 {
        self.values.get(&cell.key()).copied().unwrap_or(ZERO)
    }

    /// Value of a drawn cell: plain, mirror image (conjugate), leftward
    /// horizontals (√ρ factor) or both rules composed.
    pub fn extended_value(&self, q: &OrientedCellQuery) -> ConnResult<C64> {
        let cell = q.underlying();
        let v = self.value(&cell)?;
        Ok(match (q.horizontals_reversed, q.verticals_swapped) {
            (false, false) => v,
            (true, true) => v.conj(),
            (true, false) => v * self.rho(&cell).sqrt(),
            (false, true) => v.conj() * self.rho(&cell).sqrt(),
        })
    }

    /// Nonzero entries in key order.
    pub fn entries(&self) -> impl Iterator<Item = (Cell, C64)> + '_ {
        self.values.iter().map(|(k, &v)| (Cell::from_key(k), v))
    }

    pub fn nnz(&self) -> usize { self.values.len() }

    /// Cells with the given left and top edge: `(right, bottom, value)`.
    pub fn fan_left_top(&self, left: usize, top: usize) -> &[(u32, u32, C64)] {
        let map = self.by_left_top.get_or_init(|| {
            let mut m: Fanout = HashMap::new();
            for (k, &v) in &self.values {
                m.entry((k[0], k[1])).or_default().push((k[2], k[3], v));
            }
            m
        });
        map.get(&(left as u32, top as u32)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Cells with the given top and bottom edge: `(left, right, value)`.
    pub fn fan_top_bottom(&self, top: usize, bottom: usize) -> &[(u32, u32, C64)] {
        let map = self.by_top_bottom.get_or_init(|| {
            let mut m: Fanout = HashMap::new();
            for (k, &v) in &self.values {
                m.entry((k[1], k[3])).or_default().push((k[0], k[2], v));
            }
            m
        });
        map.get(&(top as u32, bottom as u32)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Cells with the given top edge: `(left, right, bottom, value)`.
    pub fn fan_top(&self, top: usize) -> &[(u32, u32, u32, C64)] {
        let map = self.by_top.get_or_init(|| {
            let mut m: HashMap<u32, Vec<(u32, u32, u32, C64)>> = HashMap::new();
            for (k, &v) in &self.values {
                m.entry(k[1]).or_default().push((k[0], k[2], k[3], v));
            }
            m
        });
        map.get(&(top as u32)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The matrix `c[ξ, ζ]` (right edges × left edges) of cell values with top
    /// ξ and bottom ζ, over the given left/right edge index lists.
    pub fn block(&self, top: usize, bottom: usize, lefts: &[usize], rights: &[usize]) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(rights.len(), lefts.len());
        let lpos: HashMap<usize, usize> = lefts.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let rpos: HashMap<usize, usize> = rights.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        for &(l, r, v) in self.fan_top_bottom(top, bottom) {
            if let (Some(&i), Some(&j)) = (rpos.get(&(r as usize)), lpos.get(&(l as usize))) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// True when both horizontal graphs are the same graph from the top-left
    /// to the top-right layer and the verticals stay inside those layers.
    pub fn is_a_type(&self) -> bool {
        let [tl, tr, bl, br] = self.corners;
        tl == bl && tr == br && same_graph(&self.top, &self.bottom)
    }

    /// Same graphs, cells and values within `tol` (max-norm).
    pub fn approx_eq(&self, other: &Connection, tol: f64) -> bool {
        if self.corners != other.corners
            || !same_graph(&self.top, &other.top) || !same_graph(&self.left, &other.left)
            || !same_graph(&self.right, &other.right) || !same_graph(&self.bottom, &other.bottom)
        {
            return false;
        }
        self.max_value_diff(other) <= tol
    }

    /// Max-norm difference of value tables, assuming identical graphs.
    pub fn max_value_diff(&self, other: &Connection) -> f64 {
        let mut d: f64 = 0.0;
        for (k, v) in &self.values {
            d = d.max((v - other.values.get(k).copied().unwrap_or(ZERO)).norm());
        }
        for (k, v) in &other.values {
            if !self.values.contains_key(k) {
                d = d.max(v.norm());
            }
        }
        d
    }
}

/// A connection W together with the square it lives on.
#[derive(Clone, Debug)]
pub struct Model {
    pub scheme: SquareScheme,
    pub w: Connection,
}

impl std::ops::Deref for Model {
    type Target = Connection;

    fn deref(&self) -> &Connection { &self.w }
}

/// The three renormalizations. `Prime` reflects left-right, `Bar` top-bottom,
/// `BarPrime` rotates by 180°.
pub fn renormalize(c: &Connection, kind: RenormKind) -> Connection {
    let [tl, tr, bl, br] = c.corners;
    let (corners, graphs) = match kind {
        RenormKind::Prime => (
            [tr, tl, br, bl],
            [Arc::new(reverse_graph(&c.top)), c.right.clone(), c.left.clone(), Arc::new(reverse_graph(&c.bottom))],
        ),
        RenormKind::Bar => (
            [bl, br, tl, tr],
            [c.bottom.clone(), Arc::new(reverse_graph(&c.left)), Arc::new(reverse_graph(&c.right)), c.top.clone()],
        ),
        RenormKind::BarPrime => (
            [br, bl, tr, tl],
            [
                Arc::new(reverse_graph(&c.bottom)),
                Arc::new(reverse_graph(&c.right)),
                Arc::new(reverse_graph(&c.left)),
                Arc::new(reverse_graph(&c.top)),
            ],
        ),
    };
    let mut values = BTreeMap::new();
    for (k, &v) in &c.values {
        let cell = Cell::from_key(k);
        let [l, t, r, b] = *k;
        let (key, val) = match kind {
            RenormKind::Prime => ([r, t, l, b], v.conj() * c.rho(&cell).sqrt()),
            RenormKind::Bar => ([l, b, r, t], v.conj() * c.rho(&cell).sqrt()),
            RenormKind::BarPrime => ([r, b, l, t], v),
        };
        values.insert(key, val);
    }
    c.with_parts(corners, graphs, values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitarityReport {
    /// max |U U† − I| over corner pairs
    pub residual_left: f64,
    /// max |U† U − I| over corner pairs
    pub residual_right: f64,
    pub blocks: usize,
    /// corner pairs whose row and column counts differ
    pub dimension_mismatches: Vec<(usize, usize)>,
    pub pass: bool,
}

impl UnitarityReport {
    pub fn max_residual(&self) -> f64 {
        if self.dimension_mismatches.is_empty() {
            self.residual_left.max(self.residual_right)
        } else {
            f64::INFINITY
        }
    }
}

/// For each corner pair (x, w) the matrix with rows (t, r) and columns (l, b)
/// must be unitary.
pub fn check_unitarity(c: &Connection, tol: f64) -> UnitarityReport {
    let mut res_l: f64 = 0.0;
    let mut res_r: f64 = 0.0;
    let mut blocks = 0;
    let mut mismatches = Vec::new();
    for x in 0..c.top.n_src {
        let mut rows: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for &t in c.top.out_edges(x) {
            for &r in c.right.out_edges(c.top.edges[t].dst) {
                rows.entry(c.right.edges[r].dst).or_default().push((t, r));
            }
        }
        let mut cols: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for &l in c.left.out_edges(x) {
            for &b in c.bottom.out_edges(c.left.edges[l].dst) {
                cols.entry(c.bottom.edges[b].dst).or_default().push((l, b));
            }
        }
        let ws: std::collections::BTreeSet<usize> = rows.keys().chain(cols.keys()).copied().collect();
        for w in ws {
            let empty = Vec::new();
            let rw = rows.get(&w).unwrap_or(&empty);
            let cw = cols.get(&w).unwrap_or(&empty);
            blocks += 1;
            if rw.len() != cw.len() {
                mismatches.push((x, w));
                continue;
            }
            let u = DMatrix::from_fn(rw.len(), cw.len(), |i, j| {
                let (t, r) = rw[i];
                let (l, b) = cw[j];
                c.raw(&Cell::new(l, t, r, b))
            });
            let id = DMatrix::<C64>::identity(rw.len(), rw.len());
            res_l = res_l.max(max_abs_dense(&(&u * u.adjoint() - &id)));
            res_r = res_r.max(max_abs_dense(&(u.adjoint() * &u - &id)));
        }
    }
    let pass = mismatches.is_empty() && res_l < tol && res_r < tol;
    UnitarityReport { residual_left: res_l, residual_right: res_r, blocks, dimension_mismatches: mismatches, pass }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiunitarityReport {
    pub original: UnitarityReport,
    pub renormalized: UnitarityReport,
    pub pass: bool,
}

impl BiunitarityReport {
    pub fn max_residual(&self) -> f64 { self.original.max_residual().max(self.renormalized.max_residual()) }
}

pub fn check_biunitarity(c: &Connection, tol: f64) -> BiunitarityReport {
    let original = check_unitarity(c, tol);
    let renormalized = check_unitarity(&renormalize(c, RenormKind::Prime), tol);
    let pass = original.pass && renormalized.pass;
    BiunitarityReport { original, renormalized, pass }
}

/// Composable pairs of edges `(e1, e2)` with `dst(e1) = src(e2)`, in order of
/// `e1` then `e2`. Ids are joined with `/`.
fn compose_graphs(g1: &LayeredGraph, g2: &LayeredGraph) -> ConnResult<(LayeredGraph, HashMap<(usize, usize), usize>)> {
    let mut edges = Vec::new();
    let mut index = HashMap::new();
    for (i, e1) in g1.edges.iter().enumerate() {
        for &j in g2.out_edges(e1.dst) {
            let e2 = &g2.edges[j];
            index.insert((i, j), edges.len());
            edges.push(Edge { id: format!("{}/{}", e1.id, e2.id), src: e1.src, dst: e2.dst });
        }
    }
    let g = LayeredGraph::new(g1.src_layer, g2.dst_layer, g1.n_src, g2.n_dst, edges)?;
    Ok((g, index))
}

/// Stack `top` above `bottom`, summing over the shared middle horizontal edge.
pub fn vertical_product(top: &Connection, bottom: &Connection) -> ConnResult<Connection> {
    if !same_graph(&top.bottom, &bottom.top) || top.corners[2] != bottom.corners[0] || top.corners[3] != bottom.corners[1] {
        return Err(ConnError::GraphMismatch("bottom graph of the upper factor vs top graph of the lower factor"));
    }
    let (left, li) = compose_graphs(&top.left, &bottom.left)?;
    let (right, ri) = compose_graphs(&top.right, &bottom.right)?;
    let mut acc: BTreeMap<[u32; 4], C64> = BTreeMap::new();
    for (k, &v1) in &top.values {
        let [l1, t, r1, m] = *k;
        for &(l2, r2, b, v2) in bottom.fan_top(m as usize) {
            let key = [
                li[&(l1 as usize, l2 as usize)] as u32,
                t,
                ri[&(r1 as usize, r2 as usize)] as u32,
                b,
            ];
            *acc.entry(key).or_insert(ZERO) += v1 * v2;
        }
    }
    acc.retain(|_, v| v.norm() > DROP);
    let corners = [top.corners[0], top.corners[1], bottom.corners[2], bottom.corners[3]];
    Ok(top.with_parts(corners, [top.top.clone(), Arc::new(left), Arc::new(right), bottom.bottom.clone()], acc))
}

/// Place `leftc` beside `rightc`, summing over the shared middle vertical edge.
pub fn horizontal_product(leftc: &Connection, rightc: &Connection) -> ConnResult<Connection> {
    if !same_graph(&leftc.right, &rightc.left) || leftc.corners[1] != rightc.corners[0] || leftc.corners[3] != rightc.corners[2] {
        return Err(ConnError::GraphMismatch("right graph of the left factor vs left graph of the right factor"));
    }
    let (top, ti) = compose_graphs(&leftc.top, &rightc.top)?;
    let (bottom, bi) = compose_graphs(&leftc.bottom, &rightc.bottom)?;
    let mut acc: BTreeMap<[u32; 4], C64> = BTreeMap::new();
    for (k, &v1) in &leftc.values {
        let [l, t1, m, b1] = *k;
        for &t2 in rightc.top.out_edges(leftc.top.edges[t1 as usize].dst) {
            for &(r, b2, v2) in rightc.fan_left_top(m as usize, t2) {
                let key = [
                    l,
                    ti[&(t1 as usize, t2)] as u32,
                    r,
                    bi[&(b1 as usize, b2 as usize)] as u32,
                ];
                *acc.entry(key).or_insert(ZERO) += v1 * v2;
            }
        }
    }
    acc.retain(|_, v| v.norm() > DROP);
    let corners = [leftc.corners[0], rightc.corners[1], leftc.corners[2], rightc.corners[3]];
    Ok(leftc.with_parts(corners, [Arc::new(top), leftc.left.clone(), rightc.right.clone(), Arc::new(bottom)], acc))
}
