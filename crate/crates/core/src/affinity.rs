//! Object affinity scores.
//!
//! * experiential: scaled dot-product attention between a projected target
//!   embedding (query) and projected map-object embeddings (keys);
//! * generalized: normalized binary relevance from an offline LLM table;
//! * fused: convex blend of the two under a guidance ratio `gamma`;
//! * multiplicative: experiential attention gated by binary relevance.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{LoatError, Result};
use crate::nn::kernels;
use crate::nn::layers::{glorot, Module};
use crate::nn::{Tape, Tensor, Var};

pub const DEFAULT_DK: usize = 64;

/// Learned query/key projections, both `[d_k, dim]`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperientialParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
}

impl ExperientialParams {
    pub fn new(w_q: Tensor, w_k: Tensor) -> Result<Self> {
        if w_q.shape().len() != 2 || w_q.shape() != w_k.shape() {
            return Err(LoatError::ShapeMismatch {
                expected: w_q.shape().to_vec(),
                found: w_k.shape().to_vec(),
                context: "w_q and w_k must share a [d_k, dim] shape".into(),
            });
        }
        if !w_q.is_finite() || !w_k.is_finite() {
            return Err(LoatError::NonFinite("experiential projection".into()));
        }
        Ok(Self { w_q, w_k })
    }

    pub fn random(dim: usize, d_k: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_q: glorot(&[d_k, dim], dim, d_k, rng),
            w_k: glorot(&[d_k, dim], dim, d_k, rng),
        }
    }

    pub fn d_k(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[1]
    }
}

impl Module for ExperientialParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("w_k".into(), &self.w_k), ("w_q".into(), &self.w_q)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_k, &mut self.w_q]
    }
}

/// Target plus the ordered map vocabulary; the order is the channel order everywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityQuery {
    target: String,
    map_objects: Vec<String>,
}

impl AffinityQuery {
    pub fn new(target: impl Into<String>, map_objects: Vec<String>) -> Result<Self> {
        if map_objects.is_empty() {
            return Err(LoatError::InvalidArgument("map vocabulary must be nonempty".into()));
        }
        let mut seen = BTreeSet::new();
        for o in &map_objects {
            if !seen.insert(o.as_str()) {
                return Err(LoatError::DuplicateCategory(o.clone()));
            }
        }
        Ok(Self {
            target: target.into(),
            map_objects,
        })
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn map_objects(&self) -> &[String] {
        &self.map_objects
    }

    pub fn len(&self) -> usize {
        self.map_objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map_objects.is_empty()
    }
}

/// Per-object scores aligned with [`AffinityQuery::map_objects`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityScores(pub Vec<f64>);

impl AffinityScores {
    pub fn uniform(m: usize) -> Self {
        AffinityScores(vec![1.0 / m as f64; m])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.0.clone())
    }
}

/// Binary target-conditional relevance sets, as emitted by the LLM exporter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedTable {
    pub model: String,
    pub targets: BTreeMap<String, BTreeSet<String>>,
}

impl GeneralizedTable {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            targets: BTreeMap::new(),
        }
    }

    pub fn with_target<I, S>(mut self, target: &str, related: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.targets
            .insert(target.to_string(), related.into_iter().map(Into::into).collect());
        self
    }

    /// `S(object, target)`.
    pub fn is_relevant(&self, object: &str, target: &str) -> bool {
        self.targets.get(target).is_some_and(|s| s.contains(object))
    }

    pub fn related(&self, target: &str) -> Option<&BTreeSet<String>> {
        self.targets.get(target)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let t: Self = serde_json::from_str(text).map_err(|e| LoatError::malformed(origin, e.to_string()))?;
        for (k, set) in &t.targets {
            if k.is_empty() || set.iter().any(String::is_empty) {
                return Err(LoatError::malformed(origin, "empty category name"));
            }
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LoatError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Canonical form: sorted keys and lists, compact, trailing newline.
    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string(self).expect("table serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_canonical_string()).map_err(|e| LoatError::io(path, e))
    }
}

/// Embeddings of the map objects as columns of a `[dim, M]` matrix, plus the fallback flags.
pub fn object_matrix(table: &EmbeddingTable, objects: &[String]) -> (Tensor, Vec<bool>) {
    let dim = table.dim();
    let m = objects.len();
    let mut data = vec![0.0; dim * m];
    let mut fallback = Vec::with_capacity(m);
    for (j, o) in objects.iter().enumerate() {
        let e = table.embed(o);
        for (i, v) in e.vector.iter().enumerate() {
            data[i * m + j] = *v;
        }
        fallback.push(e.fallback);
    }
    (Tensor::new(vec![dim, m], data).expect("nonempty"), fallback)
}

/// Records the experiential attention path on `tape` and returns the `[M]` score var.
///
/// `target` is `e(o_target)` (`[dim]`) and `objects` is `[dim, M]`.
pub fn experiential_on_tape(tape: &mut Tape, w_q: Var, w_k: Var, target: Var, objects: Var) -> Result<Var> {
    let d_k = tape.shape(w_q)[0];
    let q = tape.matvec(w_q, target)?;
    let k = tape.matmul(w_k, objects)?;
    let logits = tape.matmul(q, k)?;
    let scaled = tape.scale(logits, 1.0 / (d_k as f64).sqrt());
    Ok(tape.softmax(scaled))
}

fn check_dim(params: &ExperientialParams, table: &EmbeddingTable) -> Result<()> {
    if params.dim() != table.dim() {
        return Err(LoatError::DimensionMismatch {
            expected: params.dim(),
            found: table.dim(),
            context: "embedding table dim vs projection columns".into(),
        });
    }
    Ok(())
}

/// Scaled query·key logits before the softmax.
pub fn experiential_logits(params: &ExperientialParams, table: &EmbeddingTable, query: &AffinityQuery) -> Result<Vec<f64>> {
    check_dim(params, table)?;
    let (dk, dim, m) = (params.d_k(), params.dim(), query.len());
    let e_t = table.embed(query.target()).vector;
    let (objs, _) = object_matrix(table, query.map_objects());
    let q = kernels::matvec(params.w_q.data(), dk, dim, &e_t);
    let k = kernels::matmul(params.w_k.data(), dk, dim, objs.data(), m);
    let logits = kernels::matmul(&q, 1, dk, &k, m);
    let s = 1.0 / (dk as f64).sqrt();
    Ok(logits.into_iter().map(|l| l * s).collect())
}

/// Softmax over scaled query·key products for each map object.
pub fn experiential_scores(params: &ExperientialParams, table: &EmbeddingTable, query: &AffinityQuery) -> Result<AffinityScores> {
    check_dim(params, table)?;
    let mut tape = Tape::new();
    let wq = tape.leaf(params.w_q.clone());
    let wk = tape.leaf(params.w_k.clone());
    let target = tape.leaf(Tensor::from_vec(table.embed(query.target()).vector));
    let objects = tape.leaf(object_matrix(table, query.map_objects()).0);
    let out = experiential_on_tape(&mut tape, wq, wk, target, objects)?;
    Ok(AffinityScores(tape.value(out).data().to_vec()))
}

/// Normalized binary relevance; uniform when nothing in the vocabulary is relevant.
pub fn generalized_scores(gtable: &GeneralizedTable, query: &AffinityQuery) -> AffinityScores {
    let s: Vec<f64> = query
        .map_objects()
        .iter()
        .map(|o| if gtable.is_relevant(o, query.target()) { 1.0 } else { 0.0 })
        .collect();
    let total: f64 = s.iter().sum();
    if total == 0.0 {
        return AffinityScores::uniform(query.len());
    }
    AffinityScores(s.into_iter().map(|v| v / total).collect())
}

/// `gamma · a_g + (1 − gamma) · a_e`.
pub fn fuse(gamma: f64, a_g: &AffinityScores, a_e: &AffinityScores) -> Result<AffinityScores> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(LoatError::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
    }
    if a_g.len() != a_e.len() {
        return Err(LoatError::DimensionMismatch {
            expected: a_g.len(),
            found: a_e.len(),
            context: "fused score vectors".into(),
        });
    }
    for (name, v) in [("a_g", a_g), ("a_e", a_e)] {
        if (v.sum() - 1.0).abs() > 1e-6 {
            return Err(LoatError::InvalidArgument(format!("{name} sums to {}, expected 1", v.sum())));
        }
    }
    Ok(AffinityScores(
        a_g.0.iter().zip(&a_e.0).map(|(g, e)| gamma * g + (1.0 - gamma) * e).collect(),
    ))
}

/// Experiential attention masked by binary relevance, not renormalized.
pub fn loat_mul_scores(
    params: &ExperientialParams,
    table: &EmbeddingTable,
    gtable: &GeneralizedTable,
    query: &AffinityQuery,
) -> Result<AffinityScores> {
    let a_e = experiential_scores(params, table, query)?;
    Ok(gate(gtable, query, &a_e))
}

/// Applies the binary relevance mask to precomputed experiential scores.
pub fn gate(gtable: &GeneralizedTable, query: &AffinityQuery, a_e: &AffinityScores) -> AffinityScores {
    AffinityScores(
        query
            .map_objects()
            .iter()
            .zip(&a_e.0)
            .map(|(o, e)| if gtable.is_relevant(o, query.target()) { *e } else { 0.0 })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_setup() -> (ExperientialParams, EmbeddingTable, AffinityQuery) {
        let eye = Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap();
        let params = ExperientialParams::new(eye.clone(), eye).unwrap();
        let mut table = EmbeddingTable::new(2, "test").unwrap();
        table.insert("T", vec![1.0, 0.0]).unwrap();
        table.insert("A", vec![1.0, 0.0]).unwrap();
        table.insert("B", vec![0.0, 1.0]).unwrap();
        let query = AffinityQuery::new("T", vec!["A".into(), "B".into()]).unwrap();
        (params, table, query)
    }

    #[test]
    fn identity_projection_example() {
        let (params, table, query) = identity_setup();
        let s = experiential_scores(&params, &table, &query).unwrap();
        // independent scalar oracle: softmax([1/√2, 0])
        let a = (1.0f64 / 2f64.sqrt()).exp();
        let expected = [a / (a + 1.0), 1.0 / (a + 1.0)];
        assert!((s.0[0] - expected[0]).abs() < 1e-12);
        assert!((s.0[1] - expected[1]).abs() < 1e-12);
        assert!((s.0[0] - 0.6698).abs() < 1e-4);
    }

    #[test]
    fn single_object_and_shared_embeddings() {
        let (params, mut table, _) = identity_setup();
        let q1 = AffinityQuery::new("T", vec!["B".into()]).unwrap();
        assert_eq!(experiential_scores(&params, &table, &q1).unwrap().0, vec![1.0]);
        table.insert("C", vec![0.0, 1.0]).unwrap();
        table.insert("D", vec![0.0, 1.0]).unwrap();
        let q3 = AffinityQuery::new("T", vec!["B".into(), "C".into(), "D".into()]).unwrap();
        let s = experiential_scores(&params, &table, &q3).unwrap();
        for v in s.0 {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let (params, _, query) = identity_setup();
        let table = EmbeddingTable::from_hash(&["A", "B", "T"], 3, 0).unwrap();
        assert!(matches!(
            experiential_scores(&params, &table, &query),
            Err(LoatError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn query_rejects_duplicates_and_empty() {
        assert!(AffinityQuery::new("T", vec![]).is_err());
        assert!(AffinityQuery::new("T", vec!["A".into(), "A".into()]).is_err());
    }

    #[test]
    fn generalized_examples() {
        let objs: Vec<String> = ["Sink", "Cabinet", "Bed", "CoffeeTable", "Toilet"].map(String::from).to_vec();
        let g = GeneralizedTable::new("m")
            .with_target("CanOpener", ["Cabinet", "CoffeeTable"])
            .with_target("Pillow", ["Bed"])
            .with_target("Nothing", Vec::<String>::new());
        let s = generalized_scores(&g, &AffinityQuery::new("CanOpener", objs.clone()).unwrap());
        assert_eq!(s.0, vec![0.0, 0.5, 0.0, 0.5, 0.0]);
        let s = generalized_scores(&g, &AffinityQuery::new("Pillow", objs.clone()).unwrap());
        assert_eq!(s.0, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let four = objs[..4].to_vec();
        let s = generalized_scores(&g, &AffinityQuery::new("Nothing", four.clone()).unwrap());
        assert_eq!(s.0, vec![0.25; 4]);
        let s = generalized_scores(&g, &AffinityQuery::new("Unknown", four).unwrap());
        assert_eq!(s.0, vec![0.25; 4]);
    }

    #[test]
    fn fuse_endpoints_and_midpoint() {
        let ag = AffinityScores(vec![1.0, 0.0]);
        let ae = AffinityScores(vec![0.0, 1.0]);
        assert_eq!(fuse(0.0, &ag, &ae).unwrap(), ae);
        assert_eq!(fuse(1.0, &ag, &ae).unwrap(), ag);
        assert_eq!(fuse(0.5, &ag, &ae).unwrap().0, vec![0.5, 0.5]);
        assert!(fuse(1.5, &ag, &ae).is_err());
        assert!(fuse(-0.1, &ag, &ae).is_err());
        assert!(fuse(0.5, &ag, &AffinityScores(vec![1.0])).is_err());
    }

    #[test]
    fn mul_gating_examples() {
        let (params, table, query) = identity_setup();
        let a_e = experiential_scores(&params, &table, &query).unwrap();
        let all = GeneralizedTable::new("m").with_target("T", ["A", "B"]);
        assert_eq!(loat_mul_scores(&params, &table, &all, &query).unwrap(), a_e);
        let none = GeneralizedTable::new("m").with_target("T", Vec::<String>::new());
        assert_eq!(loat_mul_scores(&params, &table, &none, &query).unwrap().0, vec![0.0, 0.0]);
        let mask0 = GeneralizedTable::new("m").with_target("T", ["B"]);
        let s = loat_mul_scores(&params, &table, &mask0, &query).unwrap();
        assert_eq!(s.0[0], 0.0);
        assert!((s.0[1] - 0.3302).abs() < 1e-4);
    }

    #[test]
    fn table_json_is_canonical() {
        let g = GeneralizedTable::new("m").with_target("b", ["z", "a"]).with_target("a", ["c"]);
        let s = g.to_canonical_string();
        assert_eq!(s, "{\"model\":\"m\",\"targets\":{\"a\":[\"c\"],\"b\":[\"a\",\"z\"]}}\n");
        assert_eq!(GeneralizedTable::parse(&s, Path::new("mem")).unwrap(), g);
    }
}
