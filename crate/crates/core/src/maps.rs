//! Metric semantic maps, topological graphs and their affinity activation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use crate::affinity::AffinityScores;
use crate::error::{LoatError, Result};
use crate::nn::Tensor;

pub const MAP_MAGIC: &[u8; 8] = b"LOATMAP1";

/// Per-category presence-confidence grid `[M, H, W]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMap {
    channels: Vec<String>,
    grid: Tensor,
}

impl MetricMap {
    pub fn zeros(channels: Vec<String>, height: usize, width: usize) -> Result<Self> {
        if channels.is_empty() {
            return Err(LoatError::InvalidArgument("metric map needs at least one channel".into()));
        }
        let grid = Tensor::zeros(&[channels.len(), height, width]);
        Ok(Self { channels, grid })
    }

    pub fn from_parts(channels: Vec<String>, grid: Tensor) -> Result<Self> {
        let s = grid.shape();
        if s.len() != 3 || s[0] != channels.len() {
            return Err(LoatError::ShapeMismatch {
                expected: vec![channels.len(), 0, 0],
                found: s.to_vec(),
                context: "metric map grid".into(),
            });
        }
        if grid.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LoatError::InvalidArgument("metric map values must lie in [0, 1]".into()));
        }
        Ok(Self { channels, grid })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[2]
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.grid.data()[(channel * self.height() + row) * self.width() + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        let (h, w) = (self.height(), self.width());
        self.grid.data_mut()[(channel * h + row) * w + col] = value.clamp(0.0, 1.0);
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height() * self.width();
        &self.grid.data()[c * plane..(c + 1) * plane]
    }

    /// Channel-wise activation: channel `c` scaled by `scores[c]`.
    pub fn activate(&self, scores: &AffinityScores) -> Result<MetricMap> {
        activate_metric(self, scores)
    }

    pub fn write_snapshot(&self, out: &mut impl Write) -> Result<()> {
        let data: Vec<f32> = self.grid.data().iter().map(|&v| v as f32).collect();
        write_container(out, &self.channels, self.height(), self.width(), &data)
    }

    pub fn read_snapshot(input: &mut impl Read) -> Result<MetricMap> {
        let c = read_container(input)?;
        let data = c.data.iter().map(|&v| f64::from(v)).collect();
        let grid = Tensor::new(vec![c.names.len(), c.height, c.width], data)?;
        MetricMap::from_parts(c.names, grid)
    }
}

/// Output values are not clamped: the activated map may exceed the `[0, 1]` range only if scores do.
pub fn activate_metric(map: &MetricMap, scores: &AffinityScores) -> Result<MetricMap> {
    if scores.len() != map.channels.len() {
        return Err(LoatError::DimensionMismatch {
            expected: map.channels.len(),
            found: scores.len(),
            context: "activation scores vs map channels".into(),
        });
    }
    let plane = map.height() * map.width();
    let data = map
        .grid
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| scores.0[i / plane] * v)
        .collect();
    Ok(MetricMap {
        channels: map.channels.clone(),
        grid: Tensor::new(map.grid.shape().to_vec(), data)?,
    })
}

/// Decoded snapshot container.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub names: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Magic, `M, H, W` as LE u32, length-prefixed UTF-8 names, then row-major LE f32.
pub fn write_container(out: &mut impl Write, names: &[String], height: usize, width: usize, data: &[f32]) -> Result<()> {
    let io = |e| LoatError::io("<snapshot>", e);
    if data.len() != names.len() * height * width {
        return Err(LoatError::DimensionMismatch {
            expected: names.len() * height * width,
            found: data.len(),
            context: "snapshot payload".into(),
        });
    }
    let mut buf = Vec::with_capacity(20 + data.len() * 4);
    buf.extend_from_slice(MAP_MAGIC);
    for v in [names.len(), height, width] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for n in names {
        buf.extend_from_slice(&(n.len() as u32).to_le_bytes());
        buf.extend_from_slice(n.as_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf).map_err(io)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| LoatError::malformed("<snapshot>", "truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn read_container(input: &mut impl Read) -> Result<Container> {
    let bad = |r: &str| LoatError::malformed("<snapshot>", r.to_string());
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| LoatError::io("<snapshot>", e))?;
    let mut r = ByteReader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAP_MAGIC {
        return Err(bad("bad magic"));
    }
    let m = r.u32()?;
    let h = r.u32()?;
    let w = r.u32()?;
    let mut names = Vec::with_capacity(m.min(1 << 16));
    for _ in 0..m {
        let len = r.u32()?;
        let s = std::str::from_utf8(r.take(len)?).map_err(|_| bad("channel name is not UTF-8"))?;
        names.push(s.to_string());
    }
    let n = m
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| bad("size overflow"))?;
    let data = r
        .take(n)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Container {
        names,
        height: h,
        width: w,
        data,
    })
}

/// Graph node: its member object categories and an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoNode {
    pub objects: BTreeSet<String>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopoGraph {
    nodes: Vec<TopoNode>,
    edges: Vec<Vec<(usize, f64)>>,
}

impl TopoGraph {
    pub fn new(nodes: Vec<TopoNode>, edges: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if edges.len() != nodes.len() {
            return Err(LoatError::DimensionMismatch {
                expected: nodes.len(),
                found: edges.len(),
                context: "adjacency list length".into(),
            });
        }
        for (i, adj) in edges.iter().enumerate() {
            for &(j, w) in adj {
                if j >= nodes.len() {
                    return Err(LoatError::InvalidArgument(format!("edge {i}->{j} out of range")));
                }
                if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                    return Err(LoatError::InvalidArgument(format!("edge {i}->{j} weight {w}")));
                }
            }
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.embedding.iter().any(|v| !v.is_finite()) {
                return Err(LoatError::NonFinite(format!("node {i} embedding")));
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &[TopoNode] {
        &self.nodes
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.edges[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Node-wise activation: each node's embedding scaled by the mean score of its objects.
///
/// Nodes without objects get a zero activation. Embeddings are not renormalized.
pub fn activate_graph(graph: &TopoGraph, scores: &BTreeMap<String, f64>) -> Result<Vec<Vec<f64>>> {
    graph
        .nodes
        .iter()
        .map(|node| {
            let mean = node_affinity(node, scores)?;
            Ok(node.embedding.iter().map(|e| e * mean).collect())
        })
        .collect()
}

/// Mean score over the node's objects; 0 for an empty node.
pub fn node_affinity(node: &TopoNode, scores: &BTreeMap<String, f64>) -> Result<f64> {
    if node.objects.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for o in &node.objects {
        sum += scores.get(o).ok_or_else(|| LoatError::UnknownCategory(o.clone()))?;
    }
    Ok(sum / node.objects.len() as f64)
}
