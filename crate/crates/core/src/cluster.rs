//! Ward-D2 clustering of a distance matrix, top-k retrieval, P@1, and the
//! on-disk catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{self, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::serialize::{self, Fingerprint};
use crate::similarity::{cca_views, distance_matrix, CcaConfig, DistanceMatrix, View};

/// One agglomeration step. Leaves are nodes `0..N`; merge `k` creates node `N + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

/// Ward linkage on squared dissimilarities via the Lance-Williams recurrence,
/// heights reported as square roots. The merged cluster takes the lower slot;
/// ties go to the smallest `(i, j)` slot pair.
pub fn ward_d2(dm: &DistanceMatrix) -> Result<Dendrogram> {
    let n = dm.len();
    if n < 2 {
        return Err(Error::Config("clustering needs at least two items".into()));
    }
    let mut d: Vec<Vec<f64>> = dm.d.iter().map(|r| r.iter().map(|v| v * v).collect()).collect();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut nn = vec![usize::MAX; n];
    let mut nd = vec![f64::INFINITY; n];

    let nearest = |d: &Vec<Vec<f64>>, active: &[bool], i: usize| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in i + 1..n {
            if active[j] && d[i][j] < best.1 {
                best = (j, d[i][j]);
            }
        }
        best
    };
    for i in 0..n {
        (nn[i], nd[i]) = nearest(&d, &active, i);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut i = usize::MAX;
        for k in 0..n {
            if active[k] && nn[k] != usize::MAX && (i == usize::MAX || nd[k] < nd[i]) {
                i = k;
            }
        }
        let j = nn[i];
        let dij = d[i][j];
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((ni + nk) * d[i][k] + (nj + nk) * d[j][k] - nk * dij) / (ni + nj + nk);
            d[i][k] = v;
            d[k][i] = v;
        }
        merges.push(Merge {
            left: node[i],
            right: node[j],
            height: dij.max(0.0).sqrt(),
            size: size[i] + size[j],
        });
        active[j] = false;
        size[i] += size[j];
        node[i] = n + step;
        for k in 0..n {
            if !active[k] {
                continue;
            }
            if k == i || nn[k] == i || nn[k] == j {
                (nn[k], nd[k]) = nearest(&d, &active, k);
            } else if k < i && d[k][i] < nd[k] {
                nn[k] = i;
                nd[k] = d[k][i];
            } else if k < i && d[k][i] == nd[k] && i < nn[k] {
                nn[k] = i;
            }
        }
    }
    Ok(Dendrogram {
        labels: dm.labels.clone(),
        merges,
    })
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    fn height_of(&self, node: usize) -> f64 {
        if node < self.n_leaves() {
            0.0
        } else {
            self.merges[node - self.n_leaves()].height
        }
    }

    /// Newick string with branch lengths `parent height - child height`.
    pub fn to_newick(&self) -> String {
        let root = self.n_leaves() + self.merges.len() - 1;
        let mut out = String::new();
        self.newick_node(root, &mut out);
        out.push(';');
        out
    }

    fn newick_node(&self, node: usize, out: &mut String) {
        let n = self.n_leaves();
        if node < n {
            out.push_str(&newick_label(&self.labels[node]));
            return;
        }
        let m = &self.merges[node - n];
        out.push('(');
        for (k, child) in [m.left, m.right].into_iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            self.newick_node(child, out);
            out.push_str(&format!(":{}", m.height - self.height_of(child)));
        }
        out.push(')');
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat cluster labels after stopping with `k` clusters; clusters are
    /// numbered by their smallest leaf.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.n_leaves();
        if k == 0 || k > n {
            return Err(Error::Config(format!("cannot cut {n} leaves into {k} clusters")));
        }
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (s, m) in self.merges.iter().take(n - k).enumerate() {
            let a = find(&mut parent, m.left);
            let b = find(&mut parent, m.right);
            parent[a] = n + s;
            parent[b] = n + s;
        }
        let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        let mut ids = BTreeMap::new();
        Ok(roots
            .iter()
            .map(|r| {
                let next = ids.len();
                *ids.entry(*r).or_insert(next)
            })
            .collect())
    }
}

fn newick_label(s: &str) -> String {
    if s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', "''"))
    }
}

/// Adjusted Rand index between two flat clusterings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Config("clusterings must label the same nonempty item set".into()));
    }
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, u64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let total = c2(a.len() as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub dataset_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
}

fn check_compatible(reference: &EmbeddingMatrix, other: &EmbeddingMatrix) -> Result<()> {
    if reference.provider_tag != other.provider_tag {
        return Err(Error::ProviderMismatch {
            expected: reference.provider_tag.clone(),
            got: other.provider_tag.clone(),
        });
    }
    if reference.d_e() != other.d_e() {
        return Err(Error::DimMismatch {
            expected: reference.d_e(),
            got: other.d_e(),
        });
    }
    Ok(())
}

/// Ranks catalog entries (other than the query's own id) by CCA distance.
pub fn query_top_k(query: &EmbeddingMatrix, catalog: &[EmbeddingMatrix], k: usize, cfg: &CcaConfig) -> Result<RetrievalResult> {
    if catalog.is_empty() {
        return Err(Error::Config("empty catalog".into()));
    }
    for e in catalog {
        check_compatible(query, e)?;
    }
    let q = View::new(query)?;
    let mut neighbors = catalog
        .par_iter()
        .filter(|e| e.dataset_id != query.dataset_id)
        .map(|e| {
            let r = cca_views(&q, &View::new(e)?, cfg)?;
            Ok(Neighbor {
                dataset_id: e.dataset_id.clone(),
                distance: r.distance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    neighbors.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.dataset_id.cmp(&b.dataset_id)));
    neighbors.truncate(k);
    Ok(RetrievalResult {
        query_id: query.dataset_id.clone(),
        neighbors,
    })
}

/// Rank-1 neighbour of every row of a distance matrix, ties to the smaller id.
pub fn nearest_neighbors(dm: &DistanceMatrix) -> BTreeMap<String, String> {
    let n = dm.len();
    (0..n)
        .filter_map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| dm.d[i][a].total_cmp(&dm.d[i][b]).then_with(|| dm.labels[a].cmp(&dm.labels[b])))
                .map(|j| (dm.labels[i].clone(), dm.labels[j].clone()))
        })
        .collect()
}

/// Fraction of queries whose rank-1 neighbour is their truth partner.
pub fn precision_at_1(assignments: &BTreeMap<String, String>, truth_pairs: &[(String, String)]) -> Result<f64> {
    if assignments.is_empty() {
        return Err(Error::Config("no assignments to evaluate".into()));
    }
    let mut partners: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (a, b) in truth_pairs {
        partners.entry(a).or_default().insert(b);
        partners.entry(b).or_default().insert(a);
    }
    let mut hits = 0usize;
    for (q, nearest) in assignments {
        let p = partners.get(q.as_str()).ok_or_else(|| Error::MissingTruth(q.clone()))?;
        if p.contains(nearest.as_str()) {
            hits += 1;
        }
    }
    Ok(hits as f64 / assignments.len() as f64)
}

pub const CATALOG_SCHEMA: &str = "tabfp-catalog-1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub dataset_id: String,
    pub fingerprint: String,
    pub embedding: String,
    pub provider_tag: String,
    pub d_e: usize,
    pub m: usize,
    pub fingerprint_sha256: String,
    pub embedding_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogManifest {
    pub schema_version: String,
    pub entries: Vec<CatalogEntry>,
}

impl Default for CatalogManifest {
    fn default() -> Self {
        Self {
            schema_version: CATALOG_SCHEMA.into(),
            entries: Vec::new(),
        }
    }
}

/// A catalog directory: `manifest.json`, `<id>.fingerprint.jsonl`, `<id>.emb.bin`.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub dir: PathBuf,
    pub manifest: CatalogManifest,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) || id.starts_with('.') {
        return Err(Error::Config(format!("dataset id `{id}` is not a safe file name")));
    }
    Ok(())
}

impl Catalog {
    /// Opens an existing catalog (verifying it) or starts an empty one.
    pub fn open_or_create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if dir.join(MANIFEST_FILE).exists() {
            return Self::load(dir);
        }
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: CatalogManifest::default(),
        })
    }

    /// Reads the manifest and verifies every recorded checksum.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: CatalogManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.schema_version != CATALOG_SCHEMA {
            return Err(Error::format("catalog manifest", format!("unknown schema `{}`", manifest.schema_version)));
        }
        let mut seen = BTreeSet::new();
        for e in &manifest.entries {
            if !seen.insert(e.dataset_id.as_str()) {
                return Err(Error::CorruptEntry {
                    id: e.dataset_id.clone(),
                    reason: "duplicate dataset id".into(),
                });
            }
            for (file, want) in [(&e.fingerprint, &e.fingerprint_sha256), (&e.embedding, &e.embedding_sha256)] {
                let got = sha256_file(&dir.join(file)).map_err(|err| Error::CorruptEntry {
                    id: e.dataset_id.clone(),
                    reason: format!("{file}: {err}"),
                })?;
                if &got != want {
                    return Err(Error::CorruptEntry {
                        id: e.dataset_id.clone(),
                        reason: format!("{file}: checksum mismatch"),
                    });
                }
            }
            let first = &manifest.entries[0];
            if e.provider_tag != first.provider_tag {
                return Err(Error::ProviderMismatch {
                    expected: first.provider_tag.clone(),
                    got: e.provider_tag.clone(),
                });
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.manifest.entries.iter().map(|e| e.dataset_id.clone()).collect()
    }

    /// Stores a fingerprint and its embedding; an existing entry with the same
    /// id is replaced.
    pub fn add(&mut self, fp: &Fingerprint, emb: &EmbeddingMatrix) -> Result<()> {
        check_id(&fp.dataset_id)?;
        if fp.dataset_id != emb.dataset_id {
            return Err(Error::Config(format!(
                "fingerprint `{}` and embedding `{}` belong to different datasets",
                fp.dataset_id, emb.dataset_id
            )));
        }
        if fp.len() != emb.m() {
            return Err(Error::DimMismatch {
                expected: fp.len(),
                got: emb.m(),
            });
        }
        if let Some(other) = self.manifest.entries.iter().find(|e| e.dataset_id != fp.dataset_id) {
            if other.provider_tag != emb.provider_tag {
                return Err(Error::ProviderMismatch {
                    expected: other.provider_tag.clone(),
                    got: emb.provider_tag.clone(),
                });
            }
            if other.d_e != emb.d_e() {
                return Err(Error::DimMismatch {
                    expected: other.d_e,
                    got: emb.d_e(),
                });
            }
        }
        let id = &fp.dataset_id;
        let fp_name = format!("{id}.fingerprint.jsonl");
        let emb_name = format!("{id}.emb.bin");
        serialize::save_fingerprint(fp, self.dir.join(&fp_name))?;
        embed::save_embedding(emb, &self.dir.join(&emb_name))?;
        let entry = CatalogEntry {
            dataset_id: id.clone(),
            fingerprint_sha256: sha256_file(&self.dir.join(&fp_name))?,
            embedding_sha256: sha256_file(&self.dir.join(&emb_name))?,
            fingerprint: fp_name,
            embedding: emb_name,
            provider_tag: emb.provider_tag.clone(),
            d_e: emb.d_e(),
            m: emb.m(),
        };
        match self.manifest.entries.iter_mut().find(|e| &e.dataset_id == id) {
            Some(slot) => *slot = entry,
            None => self.manifest.entries.push(entry),
        }
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<()> {
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&tmp, text)?;
        fs::rename(tmp, self.dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn fingerprint(&self, id: &str) -> Result<Fingerprint> {
        let e = self.entry(id)?;
        serialize::load_fingerprint(self.dir.join(&e.fingerprint))
    }

    pub fn embedding(&self, id: &str) -> Result<EmbeddingMatrix> {
        let e = self.entry(id)?;
        embed::load_embedding(&self.dir.join(&e.embedding))
    }

    fn entry(&self, id: &str) -> Result<&CatalogEntry> {
        self.manifest
            .entries
            .iter()
            .find(|e| e.dataset_id == id)
            .ok_or_else(|| Error::Config(format!("dataset `{id}` is not in the catalog")))
    }

    /// All embeddings in manifest order.
    pub fn embeddings(&self) -> Result<Vec<EmbeddingMatrix>> {
        self.manifest
            .entries
            .par_iter()
            .map(|e| embed::load_embedding(&self.dir.join(&e.embedding)))
            .collect()
    }

    pub fn distance_matrix(&self, cfg: &CcaConfig) -> Result<DistanceMatrix> {
        distance_matrix(&self.embeddings()?, cfg)
    }
}
