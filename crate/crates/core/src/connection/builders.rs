//! Example connections: Dynkin diagrams, the almost trivial connection, cyclic
//! groups, and the identity a-type connection.

use std::collections::{ BTreeMap, HashMap, VecDeque };
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::{ check_biunitarity, Cell, ConnError, ConnResult, Connection, Model };
use crate::graphs::{ name_index, Edge, LayeredGraph, Layers, SquareScheme };

/// Tolerance every builder output must meet.
pub const BUILDER_TOL: f64 = 1e-10;
/// Power iteration tolerance used by the builders.
pub const PF_TOL: f64 = 1e-14;

/// Edge list by names, sorted by edge id so indices are canonical.
pub fn sorted_graph(
    src_layer: usize,
    dst_layer: usize,
    src_names: &[String],
    dst_names: &[String],
    mut edges: Vec<(String, String, String)>,
) -> ConnResult<LayeredGraph> {
    edges.sort();
    let si = name_index(src_names);
    let di = name_index(dst_names);
    let mut out = Vec::with_capacity(edges.len());
    for (id, s, d) in edges {
        let (Some(&src), Some(&dst)) = (si.get(s.as_str()), di.get(d.as_str())) else {
            return Err(ConnError::Layout(format!("edge '{id}' joins unknown vertices {s} -> {d}")));
        };
        out.push(Edge { id, src, dst });
    }
    Ok(LayeredGraph::new(src_layer, dst_layer, src_names.len(), dst_names.len(), out)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagram {
    pub family: char,
    pub n: usize,
}

impl Diagram {
    pub fn parse(name: &str) -> ConnResult<Self> {
        let bad = || ConnError::UnknownDiagram(name.to_string());
        let mut chars = name.chars();
        let family = chars.next().ok_or_else(bad)?.to_ascii_uppercase();
        let rest: String = chars.filter(|&c| c != '_').collect();
        let n: usize = rest.parse().map_err(|_| bad())?;
        let ok = match family {
            'A' => n >= 2,
            'D' => n >= 4,
            'E' => (6..=8).contains(&n),
            _ => false,
        };
        if ok { Ok(Self { family, n }) } else { Err(bad()) }
    }

    pub fn coxeter_number(&self) -> usize {
        match (self.family, self.n) {
            ('A', n) => n + 1,
            ('D', n) => 2 * n - 2,
            ('E', 6) => 12,
            ('E', 7) => 18,
            ('E', 8) => 30,
            _ => unreachable!("validated at parse"),
        }
    }

    /// Undirected edges on vertices 1..=n.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        match self.family {
            'A' => (1..n).map(|i| (i, i + 1)).collect(),
            'D' => {
                let mut e: Vec<_> = (1..n - 2).map(|i| (i, i + 1)).collect();
                e.push((n - 2, n - 1));
                e.push((n - 2, n));
                e
            }
            'E' => {
                let mut e: Vec<_> = (1..n - 1).map(|i| (i, i + 1)).collect();
                e.push((3, n));
                e
            }
            _ => unreachable!("validated at parse"),
        }
    }
}

/// The Dynkin connection: all four graphs the diagram, V0/V2 the vertices at
/// even distance from the base, values δ_{y,z}ε + √(μ_yμ_z/(μ_xμ_w)) δ_{x,w} ε̄
/// with ε = i·exp(iπ/2N).
pub fn build_dynkin(name: &str, base: Option<&str>) -> ConnResult<Model> {
    let diagram = Diagram::parse(name)?;
    let n = diagram.n;
    let base_v: usize = match base {
        None => 1,
        Some(b) => b.parse().ok().filter(|v| (1..=n).contains(v))
            .ok_or_else(|| ConnError::BadParameter(format!("base vertex '{b}' not in {name}")))?,
    };
    let edges = diagram.edges();
    let mut adj = vec![Vec::new(); n + 1];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist = vec![usize::MAX; n + 1];
    dist[base_v] = 0;
    let mut queue = VecDeque::from([base_v]);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    let even: Vec<String> = (1..=n).filter(|&v| dist[v] % 2 == 0).map(|v| v.to_string()).collect();
    let odd: Vec<String> = (1..=n).filter(|&v| dist[v] % 2 == 1).map(|v| v.to_string()).collect();
    let mut sorted_even = even.clone();
    sorted_even.sort();
    let mut sorted_odd = odd.clone();
    sorted_odd.sort();
    let eo: Vec<(String, String, String)> = edges.iter()
        .map(|&(a, b)| if dist[a] % 2 == 0 { (a, b) } else { (b, a) })
        .map(|(e, o)| (format!("{e}-{o}"), e.to_string(), o.to_string()))
        .collect();
    let oe: Vec<(String, String, String)> = eo.iter()
        .map(|(_, e, o)| (format!("{o}-{e}"), o.clone(), e.clone()))
        .collect();
    let g = sorted_graph(0, 3, &sorted_even, &sorted_odd, eo.clone())?;
    let h = sorted_graph(0, 1, &sorted_even, &sorted_odd, eo)?;
    let gp = sorted_graph(1, 2, &sorted_odd, &sorted_even, oe.clone())?;
    let hp = sorted_graph(3, 2, &sorted_odd, &sorted_even, oe)?;
    let names = [sorted_even.clone(), sorted_odd.clone(), sorted_even.clone(), sorted_odd.clone()];
    let base_idx = sorted_even.iter().position(|v| *v == base_v.to_string()).expect("base is even");
    let scheme = SquareScheme::from_graphs(names, g, h, gp, hp, base_idx, PF_TOL)?;

    let coxeter = diagram.coxeter_number() as f64;
    let eps = C64::i() * C64::from_polar(1.0, PI / (2.0 * coxeter));
    let mu = &scheme.layers.mu;
    let nm = &scheme.layers.names;
    let mut values = BTreeMap::new();
    for (t, te) in scheme.g.edges.iter().enumerate() {
        let (x, y) = (te.src, te.dst);
        for &l in scheme.h.out_edges(x) {
            let z = scheme.h.edges[l].dst;
            for &r in scheme.h_prime.out_edges(y) {
                let w = scheme.h_prime.edges[r].dst;
                for &b in scheme.g_prime.out_edges(z) {
                    if scheme.g_prime.edges[b].dst != w {
                        continue;
                    }
                    let mut v = C64::new(0.0, 0.0);
                    if nm[3][y] == nm[1][z] {
                        v += eps;
                    }
                    if nm[0][x] == nm[2][w] {
                        v += eps.conj() * (mu[3][y] * mu[1][z] / (mu[0][x] * mu[2][w])).sqrt();
                    }
                    values.insert(Cell::new(l, t, r, b), v);
                }
            }
        }
    }
    certify(Model { w: Connection::on_scheme(&scheme, values)?, scheme })
}

/// One vertex per layer, `d` parallel edges in every graph, value
/// δ_{left,right} δ_{top,bottom}.
pub fn build_trivial(d: usize) -> ConnResult<Model> {
    if d < 2 {
        return Err(ConnError::BadParameter(format!("trivial connection needs d >= 2, got {d}")));
    }
    let one = vec!["0".to_string()];
    let edges: Vec<(String, String, String)> = (1..=d)
        .map(|i| (i.to_string(), "0".to_string(), "0".to_string()))
        .collect();
    let g = sorted_graph(0, 3, &one, &one, edges.clone())?;
    let h = sorted_graph(0, 1, &one, &one, edges.clone())?;
    let gp = sorted_graph(1, 2, &one, &one, edges.clone())?;
    let hp = sorted_graph(3, 2, &one, &one, edges)?;
    let scheme = SquareScheme::from_graphs(
        [one.clone(), one.clone(), one.clone(), one], g, h, gp, hp, 0, PF_TOL,
    )?;
    let mut values = BTreeMap::new();
    for a in 0..d {
        for b in 0..d {
            values.insert(Cell::new(a, b, a, b), C64::new(1.0, 0.0));
        }
    }
    certify(Model { w: Connection::on_scheme(&scheme, values)?, scheme })
}

/// The connection of the cyclic group Z/n: stars K_{n,1} with outer vertices
/// in V0 and V2, value e^{2πi g h / n} on the cell fixed by (g, h).
pub fn build_cyclic_group(n: usize) -> ConnResult<Model> {
    if n < 2 {
        return Err(ConnError::BadParameter(format!("cyclic group needs n >= 2, got {n}")));
    }
    let mut outer: Vec<String> = (0..n).map(|g| g.to_string()).collect();
    outer.sort();
    let center = vec!["c".to_string()];
    let spokes_in: Vec<(String, String, String)> = outer.iter().map(|g| (g.clone(), g.clone(), "c".into())).collect();
    let spokes_out: Vec<(String, String, String)> = outer.iter().map(|g| (g.clone(), "c".into(), g.clone())).collect();
    let g = sorted_graph(0, 3, &outer, &center, spokes_in.clone())?;
    let h = sorted_graph(0, 1, &outer, &center, spokes_in)?;
    let gp = sorted_graph(1, 2, &center, &outer, spokes_out.clone())?;
    let hp = sorted_graph(3, 2, &center, &outer, spokes_out)?;
    let scheme = SquareScheme::from_graphs(
        [outer.clone(), center.clone(), outer.clone(), center], g, h, gp, hp, 0, PF_TOL,
    )?;
    let mut values = BTreeMap::new();
    // indices follow the sorted names, the phase follows the group elements
    let elem: Vec<usize> = outer.iter().map(|g| g.parse().expect("numeric name")).collect();
    for a in 0..n {
        for b in 0..n {
            let phase = 2.0 * PI * ((elem[a] * elem[b]) % n) as f64 / n as f64;
            values.insert(Cell::new(a, a, b, b), C64::from_polar(1.0, phase));
        }
    }
    certify(Model { w: Connection::on_scheme(&scheme, values)?, scheme })
}

fn certify(m: Model) -> ConnResult<Model> {
    let rep = check_biunitarity(&m.w, BUILDER_TOL);
    if rep.pass { Ok(m) } else { Err(ConnError::NotBiunitary(rep.max_residual())) }
}

/// The unit a-type connection on a horizontal graph: one vertical loop per
/// vertex, value δ_{top,bottom}.
pub fn build_identity(g: &Arc<LayeredGraph>, layers: Arc<Layers>, tl: usize, tr: usize) -> ConnResult<Connection> {
    if (g.src_layer, g.dst_layer) != (tl, tr) {
        return Err(ConnError::Layout("horizontal graph does not join the given layers".into()));
    }
    let loops = |layer: usize| -> ConnResult<LayeredGraph> {
        let edges = layers.names[layer].iter().enumerate()
            .map(|(i, name)| Edge { id: name.clone(), src: i, dst: i })
            .collect();
        Ok(LayeredGraph::new(layer, layer, layers.names[layer].len(), layers.names[layer].len(), edges)?)
    };
    let left = Arc::new(loops(tl)?);
    let right = Arc::new(loops(tr)?);
    let values: BTreeMap<Cell, C64> = g.edges.iter().enumerate()
        .map(|(t, e)| (Cell::new(e.src, t, e.dst, t), C64::new(1.0, 0.0)))
        .collect();
    Connection::new(layers, [tl, tr, tl, tr], g.clone(), left, right, g.clone(), values)
}

/// Name → vertex index per layer, for lookups by external id.
pub fn vertex_lookup(layers: &Layers) -> [HashMap<&str, usize>; 4] {
    [0, 1, 2, 3].map(|l| name_index(&layers.names[l]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::{ check_unitarity, renormalize, RenormKind };
    use crate::graphs::validate_square;

    #[test]
    fn dynkin_gammas() {
        for (name, coxeter) in [("A3", 4.0), ("A4", 5.0), ("D5", 8.0), ("E6", 12.0), ("E7", 18.0), ("E8", 30.0)] {
            let m = build_dynkin(name, None).unwrap();
            let g = 2.0 * (PI / coxeter).cos();
            assert!((m.scheme.gamma1 - g).abs() < 1e-12, "{name}");
            assert!((m.scheme.gamma2 - g).abs() < 1e-12, "{name}");
        }
        assert!((build_dynkin("A3", None).unwrap().scheme.gamma1 - 2f64.sqrt()).abs() < 1e-12);
        assert!((build_dynkin("A4", None).unwrap().scheme.gamma1 - 1.6180340).abs() < 1e-7);
        assert!((build_dynkin("E6", None).unwrap().scheme.gamma1 - 1.9318517).abs() < 1e-7);
    }

    #[test]
    fn dynkin_family_is_biunitary() {
        for name in ["A3", "A4", "A5", "A6", "A7", "D4", "D5", "D6", "E6", "E7", "E8"] {
            let m = build_dynkin(name, None).unwrap();
            assert!(check_biunitarity(&m.w, 1e-10).pass, "{name}");
        }
    }

    #[test]
    fn unknown_diagram() {
        assert!(matches!(build_dynkin("F4", None), Err(ConnError::UnknownDiagram(_))));
        assert!(matches!(build_dynkin("E9", None), Err(ConnError::UnknownDiagram(_))));
        assert!(matches!(build_dynkin("A1", None), Err(ConnError::UnknownDiagram(_))));
    }

    #[test]
    fn trivial_counts() {
        let m = build_trivial(3).unwrap();
        // 3^4 = 81 cells, of which d^2 = 9 carry the value 1
        assert_eq!(m.w.nnz(), 9);
        assert!(m.w.entries().all(|(_, v)| v == C64::new(1.0, 0.0)));
        assert_eq!((m.scheme.gamma1, m.scheme.gamma2), (3.0, 3.0));
        assert!(matches!(build_trivial(1), Err(ConnError::BadParameter(_))));
    }

    #[test]
    fn trivial_exact() {
        let m = build_trivial(2).unwrap();
        let r = check_biunitarity(&m.w, 1e-15);
        assert_eq!(r.max_residual(), 0.0);
    }

    #[test]
    fn cyclic_values() {
        let m2 = build_cyclic_group(2).unwrap();
        assert!(m2.w.entries().all(|(_, v)| (v.re.abs() - 1.0).abs() < 1e-15 && v.im.abs() < 1e-15));
        assert!((m2.scheme.gamma1 - 2f64.sqrt()).abs() < 1e-12);
        let m3 = build_cyclic_group(3).unwrap();
        assert!(m3.w.entries().all(|(_, v)| (v.powu(3) - C64::new(1.0, 0.0)).norm() < 1e-12));
        for n in 2..=5 {
            assert!(check_biunitarity(&build_cyclic_group(n).unwrap().w, 1e-10).pass);
        }
    }

    #[test]
    fn cyclic_renormalized_block_is_fourier() {
        let n = 4;
        let m = build_cyclic_group(n).unwrap();
        let p = renormalize(&m.w, RenormKind::Prime);
        for (_, v) in p.entries() {
            assert!((v.norm() - 1.0 / (n as f64).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_connection() {
        let m = build_dynkin("A3", None).unwrap();
        let id = build_identity(&m.scheme.g, m.scheme.layers.clone(), 0, 3).unwrap();
        assert!(id.is_a_type());
        let r = check_biunitarity(&id, 1e-15);
        assert_eq!(r.max_residual(), 0.0);
        assert!(check_unitarity(&id, 1e-15).pass);
    }

    #[test]
    fn square_validation() {
        let a3 = build_dynkin("A3", None).unwrap();
        let rep = validate_square(&a3.scheme, 1e-10);
        assert!(rep.pass);
        assert!((a3.scheme.mu0()[0] - 1.0).abs() < 1e-14);
        assert!((a3.scheme.mu3()[0] - 2f64.sqrt()).abs() < 1e-12);

        let mut bad = a3.scheme.clone();
        let mut layers = (*bad.layers).clone();
        for l in [1, 3] {
            layers.mu[l][0] += 0.1;
        }
        bad.layers = Arc::new(layers);
        let rep = validate_square(&bad, 1e-10);
        assert!(!rep.pass);
        // G into V3: 2 vs √2(√2 + 0.1)
        assert!((rep.max_residual() - 0.1 * 2f64.sqrt()).abs() < 1e-9);

        let triv = build_trivial(2).unwrap();
        assert!(validate_square(&triv.scheme, 1e-12).pass);
        assert!(triv.scheme.layers.mu.iter().flatten().all(|&m| m == 1.0));
    }
}
