//! On-disk graph layout: `nodes.jsonl`, `edges.csv`, `manifest.json`, and an
//! optional `truth.json` sidecar holding hidden ground-truth labels.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{NodeRecord, Split, TextAttributedGraph};

pub const NODES_FILE: &str = "nodes.jsonl";
pub const EDGES_FILE: &str = "edges.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256_nodes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256_edges: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Raw node line. Ids are arbitrary integers; they are mapped to dense
/// indices in file order.
#[derive(Deserialize)]
struct NodeLine {
    id: u64,
    #[serde(default)]
    text: String,
    #[serde(default)]
    label: Option<usize>,
    split: Split,
    #[serde(default)]
    generated: bool,
}

/// Hidden ground-truth labels, one entry per node. Never read by detection,
/// planning or repair; only by evaluation harnesses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<Option<usize>>,
}

impl GroundTruth {
    pub fn from_graph(g: &TextAttributedGraph) -> Self {
        Self { labels: g.labels() }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_graph(node_path: &Path, edge_path: &Path, manifest_path: &Path) -> Result<TextAttributedGraph> {
    let manifest: Manifest = serde_json::from_slice(&read(manifest_path)?)?;
    let node_bytes = read(node_path)?;
    let edge_bytes = read(edge_path)?;
    for (expected, bytes, what) in [
        (&manifest.sha256_nodes, &node_bytes, "nodes"),
        (&manifest.sha256_edges, &edge_bytes, "edges"),
    ] {
        if let Some(expected) = expected {
            if *expected != sha256_hex(bytes) {
                return Err(Error::graph(format!("{what} file hash does not match manifest")));
            }
        }
    }

    let node_file = node_path.display().to_string();
    let text = std::str::from_utf8(&node_bytes).map_err(|e| Error::Malformed {
        file: node_file.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut index_of: HashMap<u64, usize> = HashMap::new();
    let mut nodes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeLine = serde_json::from_str(line).map_err(|e| Error::Malformed {
            file: node_file.clone(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if let Some(label) = rec.label {
            if label >= manifest.num_classes {
                return Err(Error::Malformed {
                    file: node_file.clone(),
                    line: lineno + 1,
                    message: format!("label {label} outside [0,{})", manifest.num_classes),
                });
            }
        }
        let idx = nodes.len();
        if index_of.insert(rec.id, idx).is_some() {
            return Err(Error::Malformed {
                file: node_file.clone(),
                line: lineno + 1,
                message: format!("duplicate node id {}", rec.id),
            });
        }
        nodes.push(NodeRecord {
            id: idx,
            text: rec.text,
            label: rec.label,
            split: rec.split,
            generated: rec.generated,
        });
    }

    let edge_file = edge_path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(edge_bytes.as_slice());
    let headers = reader.headers().map_err(|e| Error::Malformed {
        file: edge_file.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    if !headers.is_empty() && (headers.get(0) != Some("src") || headers.get(1) != Some("dst")) {
        return Err(Error::Malformed {
            file: edge_file,
            line: 1,
            message: "expected header `src,dst`".into(),
        });
    }
    let mut edges = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let malformed = |message: String| Error::Malformed {
            file: edge_file.clone(),
            line,
            message,
        };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        if row.len() != 2 {
            return Err(malformed(format!("expected 2 fields, found {}", row.len())));
        }
        let mut ends = [0usize; 2];
        for (k, field) in row.iter().enumerate() {
            let id: u64 = field
                .parse()
                .map_err(|_| malformed(format!("bad node id `{field}`")))?;
            ends[k] = *index_of
                .get(&id)
                .ok_or_else(|| malformed(format!("unknown endpoint {id}")))?;
        }
        if ends[0] == ends[1] {
            return Err(malformed(format!("self-loop on {}", ends[0])));
        }
        edges.push((ends[0], ends[1]));
    }

    let g = TextAttributedGraph::new(manifest.name.clone(), manifest.num_classes, nodes, edges)?
        .with_metadata(manifest.metadata.clone());
    if manifest.n.is_some_and(|n| n != g.num_nodes()) {
        return Err(Error::graph("manifest node count does not match node file"));
    }
    if manifest.m.is_some_and(|m| m != g.num_edges()) {
        return Err(Error::graph("manifest edge count does not match edge file"));
    }
    Ok(g)
}

pub fn load_graph_dir(dir: &Path) -> Result<TextAttributedGraph> {
    load_graph(&dir.join(NODES_FILE), &dir.join(EDGES_FILE), &dir.join(MANIFEST_FILE))
}

pub fn nodes_jsonl(g: &TextAttributedGraph) -> Result<String> {
    let mut out = String::new();
    for node in g.nodes() {
        out.push_str(&serde_json::to_string(node)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn edges_csv(g: &TextAttributedGraph) -> String {
    let mut out = String::from("src,dst\n");
    for (u, v) in g.edges() {
        out.push_str(&format!("{u},{v}\n"));
    }
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write the three graph files into `dir` (created if missing).
pub fn save_graph(g: &TextAttributedGraph, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nodes = nodes_jsonl(g)?;
    let edges = edges_csv(g);
    let manifest = Manifest {
        name: g.name().to_string(),
        num_classes: g.num_classes(),
        n: Some(g.num_nodes()),
        m: Some(g.num_edges()),
        sha256_nodes: Some(sha256_hex(nodes.as_bytes())),
        sha256_edges: Some(sha256_hex(edges.as_bytes())),
        metadata: g.metadata().clone(),
    };
    write(&dir.join(NODES_FILE), nodes.as_bytes())?;
    write(&dir.join(EDGES_FILE), edges.as_bytes())?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn save_truth(truth: &GroundTruth, dir: &Path) -> Result<()> {
    write_json(&dir.join(TRUTH_FILE), truth)
}

pub fn load_truth(dir: &Path) -> Result<Option<GroundTruth>> {
    let path = dir.join(TRUTH_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&read(&path)?)?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read(path)?)?)
}
