//! Binary persistence of a learned state: magic, u64 LE header length, JSON
//! header, then every tensor as f64 LE in header order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::semantic::SemanticParams;
use super::structural::{GcnParams, LinkParams, StructuralParams};
use super::{EncoderConfig, EpochLoss, LearnedState};
use crate::error::{Error, Result};
use crate::plan::LossWeights;

pub const STATE_MAGIC: &[u8; 8] = b"LAGAST01";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    config_hash: String,
    config: EncoderConfig,
    weights: LossWeights,
    num_classes: usize,
    enriched_texts: Vec<String>,
    trace: Vec<EpochLoss>,
    tensors: Vec<TensorEntry>,
}

fn m2(name: &str, a: &Array2<f64>) -> (String, Vec<usize>, Vec<f64>) {
    (name.to_string(), a.shape().to_vec(), a.iter().copied().collect())
}

fn m1(name: &str, a: &Array1<f64>) -> (String, Vec<usize>, Vec<f64>) {
    (name.to_string(), vec![a.len()], a.to_vec())
}

fn collect(s: &LearnedState) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let (p, g, l) = (&s.semantic, &s.structural.gcn, &s.structural.link);
    vec![
        m2("sem.w1", &p.w1),
        m1("sem.b1", &p.b1),
        m2("sem.w2", &p.w2),
        m1("sem.b2", &p.b2),
        m2("sem.wc", &p.wc),
        m1("sem.bc", &p.bc),
        m2("gcn.g1", &g.g1),
        m1("gcn.c1", &g.c1),
        m2("gcn.g2", &g.g2),
        m1("gcn.c2", &g.c2),
        m2("gcn.wc", &g.wc),
        m1("gcn.bc", &g.bc),
        m2("link.m1", &l.m1),
        m1("link.m1b", &l.m1b),
        m1("link.m2", &l.m2),
        m1("link.m0", &l.m0),
        m2("pseudo_labels", &s.pseudo_labels),
        m2("h_sem", &s.h_sem),
        m2("sem_logits", &s.sem_logits),
        m2("h_stu", &s.h_stu),
        m2("stu_logits", &s.stu_logits),
    ]
}

pub fn save_state(state: &LearnedState, path: &Path) -> Result<()> {
    let tensors = collect(state);
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, shape, data)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            };
            offset += data.len();
            e
        })
        .collect();
    let header = Header {
        seed: state.config.seed,
        config_hash: state.config.hash(),
        config: state.config.clone(),
        weights: state.weights,
        num_classes: state.num_classes,
        enriched_texts: state.enriched_texts.clone(),
        trace: state.trace.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + offset * 8);
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, _, data) in &tensors {
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_state(path: &Path) -> Result<LearnedState> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Malformed {
        file: path.display().to_string(),
        line: 0,
        message: msg.to_string(),
    };
    if buf.len() < 16 || &buf[..8] != STATE_MAGIC {
        return Err(bad("not a learned-state file"));
    }
    let hlen = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= buf.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&buf[16..body])?;
    if header.config.hash() != header.config_hash {
        return Err(bad("config hash mismatch"));
    }
    let data = &buf[body..];
    if data.len() % 8 != 0 {
        return Err(bad("tensor data is not a whole number of f64"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut map: HashMap<&str, (&[usize], &[f64])> = HashMap::new();
    for e in &header.tensors {
        let len: usize = e.shape.iter().product();
        let slice = values.get(e.offset..e.offset + len).ok_or_else(|| bad("tensor out of range"))?;
        map.insert(&e.name, (&e.shape, slice));
    }
    let get2 = |name: &str| -> Result<Array2<f64>> {
        let (shape, v) = map.get(name).ok_or_else(|| bad(&format!("missing tensor {name}")))?;
        if shape.len() != 2 {
            return Err(bad(&format!("tensor {name} is not a matrix")));
        }
        Array2::from_shape_vec((shape[0], shape[1]), v.to_vec()).map_err(|e| bad(&e.to_string()))
    };
    let get1 = |name: &str| -> Result<Array1<f64>> {
        let (shape, v) = map.get(name).ok_or_else(|| bad(&format!("missing tensor {name}")))?;
        if shape.len() != 1 {
            return Err(bad(&format!("tensor {name} is not a vector")));
        }
        Ok(Array1::from(v.to_vec()))
    };
    Ok(LearnedState {
        semantic: SemanticParams {
            w1: get2("sem.w1")?,
            b1: get1("sem.b1")?,
            w2: get2("sem.w2")?,
            b2: get1("sem.b2")?,
            wc: get2("sem.wc")?,
            bc: get1("sem.bc")?,
        },
        structural: StructuralParams {
            gcn: GcnParams {
                g1: get2("gcn.g1")?,
                c1: get1("gcn.c1")?,
                g2: get2("gcn.g2")?,
                c2: get1("gcn.c2")?,
                wc: get2("gcn.wc")?,
                bc: get1("gcn.bc")?,
            },
            link: LinkParams {
                m1: get2("link.m1")?,
                m1b: get1("link.m1b")?,
                m2: get1("link.m2")?,
                m0: get1("link.m0")?,
            },
        },
        pseudo_labels: get2("pseudo_labels")?,
        h_sem: get2("h_sem")?,
        sem_logits: get2("sem_logits")?,
        h_stu: get2("h_stu")?,
        stu_logits: get2("stu_logits")?,
        config: header.config,
        weights: header.weights,
        num_classes: header.num_classes,
        enriched_texts: header.enriched_texts,
        trace: header.trace,
    })
}
