//! Embedding utilities and diversity selection.
//!
//! Implements unit normalization, cosine similarity, fast community
//! detection over batched similarity rows, and the quota-based diverse
//! subset selection used by the document pre-screen.
//!
//! Community detection walks the cosine matrix in row batches. A row
//! seeds a candidate community when its `min_community_size`-th largest
//! similarity clears the threshold; the candidate is expanded with a
//! growing top-k retrieval until the boundary similarity falls below the
//! threshold, and collects every index at or above it. Candidates are
//! then sorted by size (descending, ties to the lower seed row) and kept
//! greedily only when fully disjoint from previously kept communities.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("zero or non-finite vector cannot be normalized")]
    DegenerateVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("vector at index {0} is not unit-normalized")]
    NotNormalized(usize),
    #[error("need at least {need} vectors, got {got}")]
    TooFewVectors { need: usize, got: usize },
    #[error("documents ({docs}) and embeddings ({embs}) are misaligned")]
    Misaligned { docs: usize, embs: usize },
    #[error("invalid diversity params: {0}")]
    InvalidParams(String),
    #[error("embedding cache {path}: {reason}")]
    Cache { path: String, reason: String },
}

/// A fixed-length real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A cluster of near-duplicate embeddings. Members are sorted ascending
/// and the representative is the lowest member index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Community {
    pub member_indices: Vec<usize>,
    pub representative_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityParams {
    /// Minimum cosine similarity for two vectors to count as connected.
    pub threshold: f64,
    /// Minimum community size (the clustering `k`).
    pub min_community_size: usize,
    /// Row-batch size for the similarity sweep; has no effect on output.
    pub batch_size: usize,
    /// Fraction of the input kept by `diversity_select`.
    pub retention_ratio: f64,
}

impl Default for DiversityParams {
    fn default() -> Self {
        DiversityParams {
            threshold: 0.7,
            min_community_size: 2,
            batch_size: 1024,
            retention_ratio: 0.06,
        }
    }
}

impl DiversityParams {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(EmbeddingError::InvalidParams(format!(
                "threshold must be in (0,1), got {}",
                self.threshold
            )));
        }
        if self.min_community_size < 1 {
            return Err(EmbeddingError::InvalidParams("min_community_size must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(EmbeddingError::InvalidParams("batch_size must be >= 1".into()));
        }
        if !(self.retention_ratio > 0.0 && self.retention_ratio <= 1.0) {
            return Err(EmbeddingError::InvalidParams(format!(
                "retention_ratio must be in (0,1], got {}",
                self.retention_ratio
            )));
        }
        Ok(())
    }
}

/// Dot product with a fixed four-lane accumulation order.
///
/// Every similarity in this module (and the brute-force oracles in the
/// test suite) goes through this one function so results are bit-identical
/// across call sites.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0f64;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scale a vector to unit L2 norm, preserving direction.
pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, EmbeddingError> {
    let norm = l2_norm(&v.0);
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbeddingError::DegenerateVector);
    }
    Ok(EmbeddingVector(v.0.iter().map(|x| x / norm).collect()))
}

/// Cosine similarity of two raw vectors: dot product of the normalized
/// inputs. Symmetric; errors on dimension mismatch or a zero vector.
pub fn cosine_sim(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (l2_norm(&a.0), l2_norm(&b.0));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(EmbeddingError::DegenerateVector);
    }
    Ok(dot(&a.0, &b.0) / (na * nb))
}

/// Maximum off-diagonal cosine similarity; needs at least two vectors.
pub fn max_pairwise_sim(embs: &[EmbeddingVector]) -> Result<f64, EmbeddingError> {
    if embs.len() < 2 {
        return Err(EmbeddingError::TooFewVectors { need: 2, got: embs.len() });
    }
    let norms: Vec<f64> = embs.iter().map(|e| l2_norm(&e.0)).collect();
    if norms.iter().any(|n| *n == 0.0 || !n.is_finite()) {
        return Err(EmbeddingError::DegenerateVector);
    }
    let mut best = f64::NEG_INFINITY;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            if embs[i].dim() != embs[j].dim() {
                return Err(EmbeddingError::DimensionMismatch(embs[i].dim(), embs[j].dim()));
            }
            let sim = dot(&embs[i].0, &embs[j].0) / (norms[i] * norms[j]);
            if sim > best {
                best = sim;
            }
        }
    }
    Ok(best)
}

/// Fast community detection over pre-normalized embeddings.
///
/// Returns disjoint communities sorted by size descending (ties keep the
/// candidate seeded by the lower row). Output is invariant to
/// `batch_size`. Empty input yields an empty result.
pub fn detect_communities(
    embs: &[EmbeddingVector],
    params: &DiversityParams,
) -> Result<Vec<Community>, EmbeddingError> {
    params.validate()?;
    let n = embs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let dim = embs[0].dim();
    for (i, e) in embs.iter().enumerate() {
        if e.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch(dim, e.dim()));
        }
        if (l2_norm(&e.0) - 1.0).abs() > 1e-6 {
            return Err(EmbeddingError::NotNormalized(i));
        }
    }

    let k = params.min_community_size.min(n);
    let mut candidates: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut sims = vec![0.0f64; n];

    let mut start = 0usize;
    while start < n {
        let end = (start + params.batch_size).min(n);
        for row in start..end {
            for (j, e) in embs.iter().enumerate() {
                sims[j] = dot(&embs[row].0, &e.0);
            }
            if kth_largest(&sims, k) < params.threshold {
                continue;
            }
            // Grow the retrieval window until the boundary value drops
            // below the threshold (or the window covers everything), then
            // take every index at or above the threshold.
            let mut window = (2 * params.min_community_size).min(n);
            let (mut top, mut boundary) = top_window(&sims, window);
            while boundary >= params.threshold && window < n {
                window = (window * 2).min(n);
                let grown = top_window(&sims, window);
                top = grown.0;
                boundary = grown.1;
            }
            let mut members: Vec<usize> =
                top.into_iter().filter(|&j| sims[j] >= params.threshold).collect();
            members.sort_unstable();
            candidates.push((row, members));
        }
        start = end;
    }

    // Size-descending; stable sort keeps lower seed rows first on ties.
    candidates.sort_by_key(|(_, members)| std::cmp::Reverse(members.len()));

    let mut kept: Vec<Community> = Vec::new();
    let mut used: HashSet<usize> = HashSet::new();
    for (_, members) in candidates {
        if members.iter().any(|m| used.contains(m)) {
            continue;
        }
        used.extend(members.iter().copied());
        kept.push(Community {
            representative_index: members[0],
            member_indices: members,
        });
    }
    Ok(kept)
}

/// Value of the k-th largest element (1-based k, k <= len).
fn kth_largest(values: &[f64], k: usize) -> f64 {
    let mut copy: Vec<f64> = values.to_vec();
    let idx = k - 1;
    let (_, kth, _) =
        copy.select_nth_unstable_by(idx, |a, b| b.partial_cmp(a).expect("similarities are finite"));
    *kth
}

/// Indices of the `window` largest values (arbitrary order) plus the
/// boundary value, i.e. the smallest value inside the window.
fn top_window(values: &[f64], window: usize) -> (Vec<usize>, f64) {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    if window >= n {
        let boundary = values.iter().cloned().fold(f64::INFINITY, f64::min);
        return (idx, boundary);
    }
    idx.select_nth_unstable_by(window - 1, |&a, &b| {
        values[b].partial_cmp(&values[a]).expect("similarities are finite")
    });
    idx.truncate(window);
    let boundary = idx.iter().map(|&j| values[j]).fold(f64::INFINITY, f64::min);
    (idx, boundary)
}

/// Pick a diverse subset: one representative (lowest index) per community
/// in size-descending order, then unclustered singletons in input order,
/// truncated to `ceil(retention_ratio * docs.len())`.
pub fn diversity_select(
    docs: &[Document],
    embs: &[EmbeddingVector],
    params: &DiversityParams,
) -> Result<Vec<Document>, EmbeddingError> {
    if docs.len() != embs.len() {
        return Err(EmbeddingError::Misaligned { docs: docs.len(), embs: embs.len() });
    }
    if docs.is_empty() {
        return Ok(Vec::new());
    }
    let normalized: Vec<EmbeddingVector> =
        embs.iter().map(normalize).collect::<Result<_, _>>()?;
    let communities = detect_communities(&normalized, params)?;

    let quota = (params.retention_ratio * docs.len() as f64).ceil() as usize;
    let clustered: HashSet<usize> = communities
        .iter()
        .flat_map(|c| c.member_indices.iter().copied())
        .collect();

    let mut selected = Vec::with_capacity(quota.min(docs.len()));
    for community in &communities {
        if selected.len() >= quota {
            break;
        }
        selected.push(docs[community.representative_index].clone());
    }
    for (i, doc) in docs.iter().enumerate() {
        if selected.len() >= quota {
            break;
        }
        if !clustered.contains(&i) {
            selected.push(doc.clone());
        }
    }
    Ok(selected)
}

/// One community in the on-disk report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommunityReportEntry {
    pub size: usize,
    pub representative_doc_id: String,
    pub member_doc_ids: Vec<String>,
}

pub fn community_report(communities: &[Community], docs: &[Document]) -> Vec<CommunityReportEntry> {
    communities
        .iter()
        .map(|c| CommunityReportEntry {
            size: c.member_indices.len(),
            representative_doc_id: docs[c.representative_index].doc_id.clone(),
            member_doc_ids: c.member_indices.iter().map(|&i| docs[i].doc_id.clone()).collect(),
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    vector: Vec<f64>,
}

/// Write a `{key, vector}` JSONL cache with a leading `{dim}` header.
pub fn write_embedding_cache(
    path: &Path,
    entries: &[(String, EmbeddingVector)],
) -> Result<(), EmbeddingError> {
    let cache_err = |reason: String| EmbeddingError::Cache {
        path: path.display().to_string(),
        reason,
    };
    let dim = entries.first().map(|(_, v)| v.dim()).unwrap_or(0);
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&CacheHeader { dim }).unwrap());
    out.push('\n');
    for (key, vector) in entries {
        if vector.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch(dim, vector.dim()));
        }
        let record = CacheRecord { key: key.clone(), vector: vector.0.clone() };
        out.push_str(&serde_json::to_string(&record).unwrap());
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| cache_err(e.to_string()))?;
    file.write_all(out.as_bytes()).map_err(|e| cache_err(e.to_string()))?;
    Ok(())
}

/// Read a cache written by [`write_embedding_cache`]; returns the recorded
/// dimension and the entries in file order.
pub fn read_embedding_cache(
    path: &Path,
) -> Result<(usize, Vec<(String, EmbeddingVector)>), EmbeddingError> {
    let cache_err = |reason: String| EmbeddingError::Cache {
        path: path.display().to_string(),
        reason,
    };
    let file = fs::File::open(path).map_err(|e| cache_err(e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| cache_err("missing header".to_string()))?
        .map_err(|e| cache_err(e.to_string()))?;
    let header: CacheHeader =
        serde_json::from_str(&header_line).map_err(|e| cache_err(format!("bad header: {e}")))?;
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| cache_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CacheRecord = serde_json::from_str(&line)
            .map_err(|e| cache_err(format!("bad record at line {}: {e}", i + 2)))?;
        if record.vector.len() != header.dim {
            return Err(EmbeddingError::DimensionMismatch(header.dim, record.vector.len()));
        }
        entries.push((record.key, EmbeddingVector(record.vector)));
    }
    Ok((header.dim, entries))
}
