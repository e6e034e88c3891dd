//! Layered bipartite multigraphs, Perron-Frobenius data and the four-graph
//! square.

use std::collections::{ HashMap, HashSet, VecDeque };
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate edge id '{0}'")]
    DuplicateEdge(String),
    #[error("edge '{id}' has an endpoint outside its layer ({src} -> {dst})")]
    EndpointOutOfRange { id: String, src: usize, dst: usize },
    #[error("graph between layers {0} and {1} is disconnected")]
    Disconnected(usize, usize),
    #[error("graph between layers {0} and {1} has fewer than two edges")]
    TooFewEdges(usize, usize),
    #[error("graph is empty")]
    Empty,
    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("incompatible layers: step ends in layer {0}, next starts in layer {1}")]
    IncompatibleLayers(usize, usize),
    #[error("weights on layer {layer} disagree between graphs (max deviation {dev:e})")]
    InconsistentWeights { layer: usize, dev: f64 },
    #[error("unknown vertex '{0}'")]
    UnknownVertex(String),
}
pub type GraphResult<T> = Result<T, GraphError>;

pub const PF_MAX_ITER: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub id: String,
    pub src: usize,
    pub dst: usize,
}

/// A bipartite multigraph with every edge oriented from `src_layer` to
/// `dst_layer`. Vertices are dense indices into the two layers.
#[derive(Clone, Debug)]
pub struct LayeredGraph {
    pub src_layer: usize,
    pub dst_layer: usize,
    pub n_src: usize,
    pub n_dst: usize,
    pub edges: Vec<Edge>,
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
}

impl PartialEq for LayeredGraph {
    fn eq(&self, other: &Self) -> bool {
        self.src_layer == other.src_layer
            && self.dst_layer == other.dst_layer
            && self.n_src == other.n_src
            && self.n_dst == other.n_dst
            && self.edges == other.edges
    }
}

impl LayeredGraph {
    pub fn new(src_layer: usize, dst_layer: usize, n_src: usize, n_dst: usize, edges: Vec<Edge>)
        -> GraphResult<Self>
    {
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            if !seen.insert(e.id.as_str()) {
                return Err(GraphError::DuplicateEdge(e.id.clone()));
            }
            if e.src >= n_src || e.dst >= n_dst {
                return Err(GraphError::EndpointOutOfRange { id: e.id.clone(), src: e.src, dst: e.dst });
            }
        }
        let mut out = vec![Vec::new(); n_src];
        let mut inc = vec![Vec::new(); n_dst];
        for (k, e) in edges.iter().enumerate() {
            out[e.src].push(k);
            inc[e.dst].push(k);
        }
        Ok(Self { src_layer, dst_layer, n_src, n_dst, edges, out, inc })
    }

    pub fn len(&self) -> usize { self.edges.len() }

    pub fn is_empty(&self) -> bool { self.edges.is_empty() }

    /// Edge indices leaving source vertex `v`.
    pub fn out_edges(&self, v: usize) -> &[usize] { &self.out[v] }

    /// Edge indices entering range vertex `v`.
    pub fn in_edges(&self, v: usize) -> &[usize] { &self.inc[v] }

    pub fn edge_index(&self, id: &str) -> Option<usize> { self.edges.iter().position(|e| e.id == id) }

    /// Δ as an `n_src × n_dst` count table.
    pub fn adjacency(&self) -> Vec<Vec<u64>> {
        let mut a = vec![vec![0u64; self.n_dst]; self.n_src];
        for e in &self.edges {
            a[e.src][e.dst] += 1;
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_src + self.n_dst;
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            let nbrs: Vec<usize> = if v < self.n_src {
                self.out[v].iter().map(|&k| self.n_src + self.edges[k].dst).collect()
            } else {
                self.inc[v - self.n_src].iter().map(|&k| self.edges[k].src).collect()
            };
            for u in nbrs {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// The graph conditions required of each side of a square.
    pub fn check_square_side(&self) -> GraphResult<()> {
        if self.edges.len() < 2 {
            return Err(GraphError::TooFewEdges(self.src_layer, self.dst_layer));
        }
        if !self.is_connected() {
            return Err(GraphError::Disconnected(self.src_layer, self.dst_layer));
        }
        Ok(())
    }
}

/// Reverse every edge, keeping ids and edge indices.
pub fn reverse_graph(g: &LayeredGraph) -> LayeredGraph {
    let edges = g.edges.iter()
        .map(|e| Edge { id: e.id.clone(), src: e.dst, dst: e.src })
        .collect();
    LayeredGraph::new(g.dst_layer, g.src_layer, g.n_dst, g.n_src, edges)
        .expect("reversal of a valid graph is valid")
}

/// Perron-Frobenius data of a bipartite graph: `Δ v_dst = λ v_src` and
/// `Δᵀ v_src = λ v_dst`.
#[derive(Clone, Debug, PartialEq)]
pub struct PfData {
    pub lambda: f64,
    pub src: Vec<f64>,
    pub dst: Vec<f64>,
}

/// Power iteration on `I + B`, with `B` the symmetric bipartite adjacency.
/// Stops when the eigenvalue estimate and the vector both move by less than
/// `tol` (relative to λ for the eigenvalue). The scale is `v_base = 1` when a
/// source-layer base vertex is given, max entry 1 otherwise.
pub fn perron_frobenius(g: &LayeredGraph, tol: f64, base: Option<usize>) -> GraphResult<PfData> {
    if g.is_empty() {
        return Err(GraphError::Empty);
    }
    let (ns, nd) = (g.n_src, g.n_dst);
    let mut v = vec![1.0; ns + nd];
    let mut lambda_prev = f64::NAN;
    for _ in 0..PF_MAX_ITER {
        let mut u = v.clone();
        for e in &g.edges {
            u[e.src] += v[ns + e.dst];
            u[ns + e.dst] += v[e.src];
        }
        let s = u.iter().copied().fold(0.0, f64::max);
        u.iter_mut().for_each(|x| *x /= s);
        let lambda = s - 1.0;
        let dv = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = u;
        if (lambda - lambda_prev).abs() < tol * lambda.max(1.0) && dv < tol {
            let scale = match base {
                Some(b) => v[b],
                None => 1.0,
            };
            let src = v[..ns].iter().map(|x| x / scale).collect();
            let dst = v[ns..].iter().map(|x| x / scale).collect();
            return Ok(PfData { lambda, src, dst });
        }
        lambda_prev = lambda;
    }
    Err(GraphError::NoConvergence(PF_MAX_ITER))
}

/// Max residual of the two one-sided eigen-equations for weights on the two
/// layers of `g`.
pub fn eigen_residuals(g: &LayeredGraph, mu_src: &[f64], mu_dst: &[f64], lambda: f64) -> (f64, f64) {
    let mut into_dst = vec![0.0; g.n_dst];
    let mut into_src = vec![0.0; g.n_src];
    for e in &g.edges {
        into_dst[e.dst] += mu_src[e.src];
        into_src[e.src] += mu_dst[e.dst];
    }
    let r1 = into_dst.iter().zip(mu_dst).map(|(a, m)| (a - lambda * m).abs()).fold(0.0, f64::max);
    let r2 = into_src.iter().zip(mu_src).map(|(a, m)| (a - lambda * m).abs()).fold(0.0, f64::max);
    (r1, r2)
}

/// Vertex names and weights μ for the four layers V0..V3.
#[derive(Clone, Debug, PartialEq)]
pub struct Layers {
    pub names: [Vec<String>; 4],
    pub mu: [Vec<f64>; 4],
}

impl Layers {
    pub fn index(&self, layer: usize, name: &str) -> Option<usize> {
        self.names[layer].iter().position(|n| n == name)
    }

    pub fn mu(&self, layer: usize, v: usize) -> f64 { self.mu[layer][v] }

    /// Multiply every weight by `s`.
    pub fn rescaled(&self, s: f64) -> Layers {
        let mut out = self.clone();
        for layer in out.mu.iter_mut() {
            layer.iter_mut().for_each(|m| *m *= s);
        }
        out
    }
}

/// The four graphs G: V0→V3, H: V0→V1, G′: V1→V2, H′: V3→V2 with their common
/// Perron-Frobenius data.
#[derive(Clone, Debug)]
pub struct SquareScheme {
    pub layers: Arc<Layers>,
    pub g: Arc<LayeredGraph>,
    pub h: Arc<LayeredGraph>,
    pub g_prime: Arc<LayeredGraph>,
    pub h_prime: Arc<LayeredGraph>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub base: usize,
}

impl SquareScheme {
    /// Derive μ, γ1, γ2 from the graphs by power iteration, scaled so that
    /// μ_base = 1.
    pub fn from_graphs(
        names: [Vec<String>; 4],
        g: LayeredGraph,
        h: LayeredGraph,
        g_prime: LayeredGraph,
        h_prime: LayeredGraph,
        base: usize,
        tol: f64,
    ) -> GraphResult<Self> {
        for side in [&g, &h, &g_prime, &h_prime] {
            side.check_square_side()?;
        }
        let pf_g = perron_frobenius(&g, tol, Some(base))?;
        let pf_h = perron_frobenius(&h, tol, Some(base))?;
        let dev0 = max_dev(&pf_g.src, &pf_h.src);
        if dev0 > 1e3 * tol.max(1e-12) {
            return Err(GraphError::InconsistentWeights { layer: 0, dev: dev0 });
        }
        // H' fixes V2 relative to V3; G' must then agree on V1 and V2
        let pf_hp = perron_frobenius(&h_prime, tol, None)?;
        let s3 = pf_g.dst[0] / pf_hp.src[0];
        let mu3_alt: Vec<f64> = pf_hp.src.iter().map(|x| x * s3).collect();
        let mu2: Vec<f64> = pf_hp.dst.iter().map(|x| x * s3).collect();
        let pf_gp = perron_frobenius(&g_prime, tol, None)?;
        let s1 = pf_h.dst[0] / pf_gp.src[0];
        let mu1_alt: Vec<f64> = pf_gp.src.iter().map(|x| x * s1).collect();
        let mu2_alt: Vec<f64> = pf_gp.dst.iter().map(|x| x * s1).collect();
        let limit = 1e3 * tol.max(1e-12);
        for (layer, a, b) in [(3, &pf_g.dst, &mu3_alt), (1, &pf_h.dst, &mu1_alt), (2, &mu2, &mu2_alt)] {
            let dev = max_dev(a, b);
            if dev > limit {
                return Err(GraphError::InconsistentWeights { layer, dev });
            }
        }
        let layers = Layers { names, mu: [pf_g.src, pf_h.dst, mu2, pf_g.dst] };
        Ok(Self {
            layers: Arc::new(layers),
            g: Arc::new(g),
            h: Arc::new(h),
            g_prime: Arc::new(g_prime),
            h_prime: Arc::new(h_prime),
            gamma1: pf_g.lambda,
            gamma2: pf_h.lambda,
            base,
        })
    }

    /// A square with weights supplied by the caller. Missing eigenvalues are
    /// taken from power iteration on G and H. Nothing is validated beyond the
    /// side conditions; run [`validate_square`] for the eigen-equations.
    #[allow(clippy::too_many_arguments)]
    pub fn with_weights(
        names: [Vec<String>; 4],
        g: LayeredGraph,
        h: LayeredGraph,
        g_prime: LayeredGraph,
        h_prime: LayeredGraph,
        mu: [Vec<f64>; 4],
        gamma: Option<(f64, f64)>,
        base: usize,
        tol: f64,
    ) -> GraphResult<Self> {
        for side in [&g, &h, &g_prime, &h_prime] {
            side.check_square_side()?;
        }
        for (l, m) in mu.iter().enumerate() {
            if m.len() != names[l].len() {
                return Err(GraphError::InconsistentWeights { layer: l, dev: f64::INFINITY });
            }
        }
        let (gamma1, gamma2) = match gamma {
            Some(gm) => gm,
            None => (perron_frobenius(&g, tol, None)?.lambda, perron_frobenius(&h, tol, None)?.lambda),
        };
        Ok(Self {
            layers: Arc::new(Layers { names, mu }),
            g: Arc::new(g),
            h: Arc::new(h),
            g_prime: Arc::new(g_prime),
            h_prime: Arc::new(h_prime),
            gamma1,
            gamma2,
            base,
        })
    }

    /// Same graphs and γ, all weights multiplied by `s`.
    pub fn rescaled(&self, s: f64) -> Self {
        Self { layers: Arc::new(self.layers.rescaled(s)), ..self.clone() }
    }

    pub fn mu0(&self) -> &[f64] { &self.layers.mu[0] }

    pub fn mu3(&self) -> &[f64] { &self.layers.mu[3] }
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SquareReport {
    /// Residuals in the order G(→V3), G(→V0), G′(→V2), G′(→V1), H(→V1),
    /// H(→V0), H′(→V2), H′(→V3).
    pub residuals: [f64; 8],
    pub positive: bool,
    pub connected: bool,
    pub enough_edges: bool,
    pub layers_ok: bool,
    pub gammas_above_one: bool,
    pub pass: bool,
}

impl SquareReport {
    pub fn max_residual(&self) -> f64 { self.residuals.iter().copied().fold(0.0, f64::max) }
}

pub fn validate_square(s: &SquareScheme, tol: f64) -> SquareReport {
    let mu = &s.layers.mu;
    let layers_ok = (s.g.src_layer, s.g.dst_layer) == (0, 3)
        && (s.h.src_layer, s.h.dst_layer) == (0, 1)
        && (s.g_prime.src_layer, s.g_prime.dst_layer) == (1, 2)
        && (s.h_prime.src_layer, s.h_prime.dst_layer) == (3, 2)
        && (0..4).all(|l| mu[l].len() == s.layers.names[l].len());
    if !layers_ok {
        return SquareReport {
            residuals: [f64::INFINITY; 8],
            positive: false,
            connected: false,
            enough_edges: false,
            layers_ok,
            gammas_above_one: false,
            pass: false,
        };
    }
    let (g1, g0) = eigen_residuals(&s.g, &mu[0], &mu[3], s.gamma1);
    let (gp2, gp1) = eigen_residuals(&s.g_prime, &mu[1], &mu[2], s.gamma1);
    let (h1, h0) = eigen_residuals(&s.h, &mu[0], &mu[1], s.gamma2);
    let (hp2, hp3) = eigen_residuals(&s.h_prime, &mu[3], &mu[2], s.gamma2);
    let residuals = [g1, g0, gp2, gp1, h1, h0, hp2, hp3];
    let sides = [&s.g, &s.h, &s.g_prime, &s.h_prime];
    let positive = mu.iter().flatten().all(|&m| m > 0.0);
    let connected = sides.iter().all(|g| g.is_connected());
    let enough_edges = sides.iter().all(|g| g.len() >= 2);
    let gammas_above_one = s.gamma1 > 1.0 && s.gamma2 > 1.0;
    let pass = residuals.iter().all(|&r| r < tol)
        && positive && connected && enough_edges && gammas_above_one;
    SquareReport { residuals, positive, connected, enough_edges, layers_ok, gammas_above_one, pass }
}

/// Exact path counts along a sequence of graph steps, starting at a vertex of
/// the first step's source layer. Returns counts per vertex of the final
/// layer.
pub fn count_paths(steps: &[&LayeredGraph], start: usize) -> GraphResult<Vec<u64>> {
    let Some(first) = steps.first() else {
        return Err(GraphError::Empty);
    };
    for w in steps.windows(2) {
        if w[0].dst_layer != w[1].src_layer || w[0].n_dst != w[1].n_src {
            return Err(GraphError::IncompatibleLayers(w[0].dst_layer, w[1].src_layer));
        }
    }
    if start >= first.n_src {
        return Err(GraphError::UnknownVertex(start.to_string()));
    }
    let mut counts = vec![0u64; first.n_src];
    counts[start] = 1;
    for g in steps {
        let mut next = vec![0u64; g.n_dst];
        for e in &g.edges {
            next[e.dst] += counts[e.src];
        }
        counts = next;
    }
    Ok(counts)
}

/// Number of closed walks at `base` along the step sequence.
pub fn count_loops(steps: &[&LayeredGraph], base: usize) -> GraphResult<u64> {
    let last = steps.last().ok_or(GraphError::Empty)?;
    let first = steps[0];
    if last.dst_layer != first.src_layer {
        return Err(GraphError::IncompatibleLayers(last.dst_layer, first.src_layer));
    }
    Ok(count_paths(steps, base)?[base])
}

/// The alternating sequence g, g̃, g, g̃, ... of the given length.
pub fn alternating(g: &LayeredGraph, len: usize) -> Vec<LayeredGraph> {
    let r = reverse_graph(g);
    (0..len).map(|i| if i % 2 == 0 { g.clone() } else { r.clone() }).collect()
}

/// Vertex name → index for a list of names.
pub fn name_index(names: &[String]) -> HashMap<&str, usize> {
    names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
}
