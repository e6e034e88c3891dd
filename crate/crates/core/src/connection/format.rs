//! The versioned JSON interchange format for connections.
//!
//! Numbers are decimal strings with 17 significant digits, which round-trip
//! every f64 exactly.

use std::collections::{ BTreeMap, BTreeSet, HashMap };
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{ Deserialize, Serialize };
use thiserror::Error;

use super::builders::{ sorted_graph, PF_TOL };
use super::{ Cell, ConnError, Connection, Model };
use crate::graphs::{ name_index, GraphError, LayeredGraph, SquareScheme };

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("layer index {0} out of range")]
    BadLayer(usize),
    #[error("duplicate vertex '{id}' in layer {layer}")]
    DuplicateVertex { id: String, layer: usize },
    #[error("unknown vertex '{id}' in layer {layer}")]
    UnknownVertex { id: String, layer: usize },
    #[error("unknown edge '{id}' in graph {graph}")]
    UnknownEdge { id: String, graph: &'static str },
    #[error("bad number '{0}'")]
    BadNumber(String),
    #[error("duplicate cell ({0})")]
    DuplicateCell(String),
    #[error(transparent)]
    Conn(#[from] ConnError),
}
pub type FormatResult<T> = Result<T, FormatError>;

impl From<GraphError> for FormatError {
    fn from(e: GraphError) -> Self { FormatError::Conn(ConnError::Graph(e)) }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VertexRecord {
    pub id: String,
    pub layer: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EdgeRecord {
    pub id: String,
    pub src: String,
    pub dst: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GraphRecords {
    #[serde(rename = "G")]
    pub g: Vec<EdgeRecord>,
    #[serde(rename = "H")]
    pub h: Vec<EdgeRecord>,
    #[serde(rename = "G_prime")]
    pub g_prime: Vec<EdgeRecord>,
    #[serde(rename = "H_prime")]
    pub h_prime: Vec<EdgeRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MuRecord {
    pub layer: usize,
    pub id: String,
    pub value: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ValueRecord {
    pub left: String,
    pub top: String,
    pub right: String,
    pub bottom: String,
    pub re: String,
    pub im: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Document {
    pub version: u32,
    pub layers: Vec<VertexRecord>,
    pub graphs: GraphRecords,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<MuRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<[String; 2]>,
    pub base: String,
    pub values: Vec<ValueRecord>,
}

pub fn fmt_f64(x: f64) -> String { format!("{x:.16e}") }

fn parse_f64(s: &str) -> FormatResult<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| FormatError::BadNumber(s.to_string()))
}

/// Layers of each graph: G 0→3, H 0→1, G′ 1→2, H′ 3→2.
const SIDES: [(&str, usize, usize); 4] = [("G", 0, 3), ("H", 0, 1), ("G_prime", 1, 2), ("H_prime", 3, 2)];

impl Document {
    pub fn from_model(m: &Model) -> Self {
        let s = &m.scheme;
        let names = &s.layers.names;
        let layers = (0..4)
            .flat_map(|l| names[l].iter().map(move |id| VertexRecord { id: id.clone(), layer: l }))
            .collect();
        let recs = |g: &LayeredGraph| -> Vec<EdgeRecord> {
            g.edges.iter().map(|e| EdgeRecord {
                id: e.id.clone(),
                src: names[g.src_layer][e.src].clone(),
                dst: names[g.dst_layer][e.dst].clone(),
            }).collect()
        };
        let graphs = GraphRecords { g: recs(&s.g), h: recs(&s.h), g_prime: recs(&s.g_prime), h_prime: recs(&s.h_prime) };
        let mu = (0..4)
            .flat_map(|l| names[l].iter().zip(&s.layers.mu[l])
                .map(move |(id, &v)| MuRecord { layer: l, id: id.clone(), value: fmt_f64(v) }))
            .collect();
        let w = &m.w;
        let values = w.entries().map(|(c, v)| ValueRecord {
            left: w.left.edges[c.left].id.clone(),
            top: w.top.edges[c.top].id.clone(),
            right: w.right.edges[c.right].id.clone(),
            bottom: w.bottom.edges[c.bottom].id.clone(),
            re: fmt_f64(v.re),
            im: fmt_f64(v.im),
        }).collect();
        Self {
            version: FORMAT_VERSION,
            layers,
            graphs,
            mu: Some(mu),
            gamma: Some([fmt_f64(s.gamma1), fmt_f64(s.gamma2)]),
            base: names[0][s.base].clone(),
            values,
        }
    }

    pub fn to_model(&self) -> FormatResult<Model> {
        if self.version != FORMAT_VERSION {
            return Err(FormatError::Version(self.version));
        }
        let mut sets: [BTreeSet<String>; 4] = Default::default();
        for v in &self.layers {
            if v.layer > 3 {
                return Err(FormatError::BadLayer(v.layer));
            }
            if !sets[v.layer].insert(v.id.clone()) {
                return Err(FormatError::DuplicateVertex { id: v.id.clone(), layer: v.layer });
            }
        }
        let names: [Vec<String>; 4] = sets.map(|s| s.into_iter().collect());
        let lists = [&self.graphs.g, &self.graphs.h, &self.graphs.g_prime, &self.graphs.h_prime];
        let mut built = Vec::with_capacity(4);
        for ((_, sl, dl), list) in SIDES.iter().zip(lists) {
            let (si, di) = (name_index(&names[*sl]), name_index(&names[*dl]));
            for e in list {
                if !si.contains_key(e.src.as_str()) {
                    return Err(FormatError::UnknownVertex { id: e.src.clone(), layer: *sl });
                }
                if !di.contains_key(e.dst.as_str()) {
                    return Err(FormatError::UnknownVertex { id: e.dst.clone(), layer: *dl });
                }
            }
            let edges = list.iter().map(|e| (e.id.clone(), e.src.clone(), e.dst.clone())).collect();
            built.push(sorted_graph(*sl, *dl, &names[*sl], &names[*dl], edges)?);
        }
        let [g, h, gp, hp]: [LayeredGraph; 4] = built.try_into().expect("four sides");
        let base = names[0].iter().position(|n| *n == self.base)
            .ok_or_else(|| FormatError::UnknownVertex { id: self.base.clone(), layer: 0 })?;
        let gamma = match &self.gamma {
            Some([a, b]) => Some((parse_f64(a)?, parse_f64(b)?)),
            None => None,
        };
        let scheme = match &self.mu {
            None => SquareScheme::from_graphs(names, g, h, gp, hp, base, PF_TOL)?,
            Some(recs) => {
                let mut mu: [Vec<f64>; 4] = std::array::from_fn(|l| vec![f64::NAN; names[l].len()]);
                for r in recs {
                    if r.layer > 3 {
                        return Err(FormatError::BadLayer(r.layer));
                    }
                    let i = names[r.layer].iter().position(|n| *n == r.id)
                        .ok_or_else(|| FormatError::UnknownVertex { id: r.id.clone(), layer: r.layer })?;
                    mu[r.layer][i] = parse_f64(&r.value)?;
                }
                if let Some((l, i)) = (0..4).find_map(|l| mu[l].iter().position(|m| m.is_nan()).map(|i| (l, i))) {
                    return Err(FormatError::UnknownVertex { id: format!("{} (no weight)", names[l][i]), layer: l });
                }
                SquareScheme::with_weights(names, g, h, gp, hp, mu, gamma, base, PF_TOL)?
            }
        };
        let index = |g: &LayeredGraph, graph: &'static str| -> HashMap<String, usize> {
            let _ = graph;
            g.edges.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect()
        };
        let (hi, gi, hpi, gpi) = (index(&scheme.h, "H"), index(&scheme.g, "G"), index(&scheme.h_prime, "H_prime"), index(&scheme.g_prime, "G_prime"));
        let look = |m: &HashMap<String, usize>, id: &str, graph: &'static str| {
            m.get(id).copied().ok_or_else(|| FormatError::UnknownEdge { id: id.to_string(), graph })
        };
        let mut values = BTreeMap::new();
        for r in &self.values {
            let cell = Cell::new(
                look(&hi, &r.left, "H")?,
                look(&gi, &r.top, "G")?,
                look(&hpi, &r.right, "H_prime")?,
                look(&gpi, &r.bottom, "G_prime")?,
            );
            let v = C64::new(parse_f64(&r.re)?, parse_f64(&r.im)?);
            if values.insert(cell, v).is_some() {
                return Err(FormatError::DuplicateCell(format!("{} {} {} {}", r.left, r.top, r.right, r.bottom)));
            }
        }
        let w = Connection::on_scheme(&scheme, values)?;
        Ok(Model { scheme, w })
    }
}

pub fn to_json(m: &Model) -> String {
    serde_json::to_string_pretty(&Document::from_model(m)).expect("document serializes")
}

pub fn from_json(text: &str) -> FormatResult<Model> {
    let doc: Document = serde_json::from_str(text)?;
    doc.to_model()
}

pub fn read_model(path: &Path) -> FormatResult<Model> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| FormatError::Io { path: path.display().to_string(), source })?;
    from_json(&text)
}

pub fn write_model(m: &Model, path: &Path) -> FormatResult<()> {
    std::fs::write(path, to_json(m) + "\n")
        .map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}
