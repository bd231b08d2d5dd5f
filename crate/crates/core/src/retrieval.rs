//! Feature dictionary and exact Euclidean top-K search.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::cae::{CaeModel, FeatureVector};
use crate::codec::{put_short_str, Reader};
use crate::error::{DecodeError, Error, Result};
use crate::label::{Label, Magnification, Split};
use crate::numerics::{LayoutId, Real, Tensor};
use crate::Clock;

pub const INDEX_MAGIC: [u8; 4] = *b"FCIX";
pub const INDEX_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Same-magnification retrieval only.
    Sen1,
    /// Top-K within every magnification group.
    Sen2,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Sen1 => "sen1",
            Scenario::Sen2 => "sen2",
        }
    }
}

impl core::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sen1" => Ok(Scenario::Sen1),
            "sen2" => Ok(Scenario::Sen2),
            other => Err(Error::Config(alloc::format!("unknown scenario {other:?}"))),
        }
    }
}

/// Metadata attached to each dictionary entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryMeta {
    pub id: String,
    pub label: Label,
    pub magnification: Option<Magnification>,
    pub center: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub meta: EntryMeta,
    pub vector: Vec<f32>,
}

/// Immutable dictionary of feature vectors bound to the encoder that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    layout_id: LayoutId,
    dim: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub entry_id: String,
    /// Insertion position in the index; breaks distance ties.
    pub position: usize,
    pub distance: f64,
    pub label: Label,
    pub magnification: Option<Magnification>,
    pub center: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitGroup {
    pub magnification: Option<Magnification>,
    pub hits: Vec<Hit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    pub scenario: Scenario,
    /// One group for Sen1, one per magnification present in the index for Sen2.
    pub groups: Vec<HitGroup>,
    pub elapsed_secs: f64,
}

impl RetrievalResult {
    pub fn hits(&self) -> impl Iterator<Item = &Hit> {
        self.groups.iter().flat_map(|g| g.hits.iter())
    }
}

/// `sqrt(Σ(aᵢ−bᵢ)²)`, accumulated in f64.
pub fn euclidean(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("euclidean", &[a.len()], &[b.len()]));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(num_traits::Float::sqrt(sum))
}

fn group_order(m: Option<Magnification>) -> u8 {
    // 40x, 100x, 200x, 400x, then untagged entries.
    match m {
        Some(m) => Magnification::code(Some(m)) - 1,
        None => 4,
    }
}

impl FeatureIndex {
    pub fn new(layout_id: LayoutId, entries: Vec<IndexEntry>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Index("an empty dictionary cannot be searched".into()))?;
        let dim = first.vector.len();
        if dim == 0 {
            return Err(Error::Index("feature vectors must be non-empty".into()));
        }
        for e in &entries {
            if e.meta.split == Split::Test {
                return Err(Error::Index(alloc::format!(
                    "test-split image {} cannot be indexed",
                    e.meta.id
                )));
            }
            if e.vector.len() != dim {
                return Err(Error::dim("index entry", &[dim], &[e.vector.len()]));
            }
            if e.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Index(alloc::format!("non-finite feature in {}", e.meta.id)));
            }
        }
        Ok(FeatureIndex {
            layout_id,
            dim,
            entries,
        })
    }

    pub fn layout_id(&self) -> LayoutId {
        self.layout_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.entries.iter().any(|e| e.meta.id == id)
    }

    /// Magnification groups present, in 40x → 400x → none order.
    pub fn magnifications(&self) -> Vec<Option<Magnification>> {
        let mut out: Vec<Option<Magnification>> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.meta.magnification) {
                out.push(e.meta.magnification);
            }
        }
        out.sort_by_key(|m| group_order(*m));
        out
    }

    pub fn check_layout(&self, layout_id: LayoutId) -> Result<()> {
        if self.layout_id != layout_id {
            return Err(Error::Index(alloc::format!(
                "index was built with encoder {}, model is {}",
                self.layout_id,
                layout_id
            )));
        }
        Ok(())
    }

    fn top_k(&self, query: &FeatureVector, k: usize, keep: impl Fn(&IndexEntry) -> bool) -> Result<Vec<Hit>> {
        let mut scored: Vec<(f64, usize)> = Vec::new();
        for (pos, e) in self.entries.iter().enumerate() {
            if !keep(e) || e.meta.id == query.source_id {
                continue;
            }
            scored.push((euclidean(&query.values, &e.vector)?, pos));
        }
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(distance, position)| {
                let e = &self.entries[position];
                Hit {
                    entry_id: e.meta.id.clone(),
                    position,
                    distance,
                    label: e.meta.label,
                    magnification: e.meta.magnification,
                    center: e.meta.center.clone(),
                }
            })
            .collect())
    }

    /// Ranks the dictionary against an already-extracted query vector.
    ///
    /// Entries sharing the query's `source_id` are never returned. Groups hold
    /// `min(k, candidates)` hits.
    pub fn rank(
        &self,
        query: &FeatureVector,
        k: usize,
        scenario: Scenario,
        query_magnification: Option<Magnification>,
    ) -> Result<Vec<HitGroup>> {
        if k == 0 {
            return Err(Error::Contract("K must be positive".into()));
        }
        if query.values.len() != self.dim {
            return Err(Error::dim("query vector", &[self.dim], &[query.values.len()]));
        }
        match scenario {
            Scenario::Sen1 => {
                if !self.entries.iter().any(|e| e.meta.magnification == query_magnification) {
                    return Err(Error::EmptyPartition(alloc::format!(
                        "no indexed entries at magnification {}",
                        Magnification::label_opt(query_magnification)
                    )));
                }
                let hits = self.top_k(query, k, |e| e.meta.magnification == query_magnification)?;
                Ok(alloc::vec![HitGroup {
                    magnification: query_magnification,
                    hits,
                }])
            }
            Scenario::Sen2 => self
                .magnifications()
                .into_iter()
                .map(|m| {
                    Ok(HitGroup {
                        magnification: m,
                        hits: self.top_k(query, k, |e| e.meta.magnification == m)?,
                    })
                })
                .collect(),
        }
    }
}

/// Builds the dictionary from `(metadata, image)` pairs in the given order.
pub fn build_index<T: Real>(
    model: &CaeModel<T>,
    items: impl IntoIterator<Item = Result<(EntryMeta, Tensor<T>)>>,
) -> Result<FeatureIndex> {
    let mut entries = Vec::new();
    for item in items {
        let (meta, image) = item?;
        let vector = model.encode(&image)?.values;
        entries.push(IndexEntry { meta, vector });
    }
    FeatureIndex::new(model.layout_id(), entries)
}

pub fn search_vector(
    index: &FeatureIndex,
    query: &FeatureVector,
    k: usize,
    scenario: Scenario,
    query_magnification: Option<Magnification>,
    clock: &dyn Clock,
) -> Result<RetrievalResult> {
    let start = clock.now_secs();
    let groups = index.rank(query, k, scenario, query_magnification)?;
    Ok(RetrievalResult {
        query_id: query.source_id.clone(),
        scenario,
        groups,
        elapsed_secs: clock.now_secs() - start,
    })
}

/// Extracts the query's features with `model` and ranks the dictionary.
/// Elapsed time covers both steps.
#[allow(clippy::too_many_arguments)]
pub fn search<T: Real>(
    index: &FeatureIndex,
    model: &CaeModel<T>,
    query_id: &str,
    image: &Tensor<T>,
    k: usize,
    scenario: Scenario,
    query_magnification: Option<Magnification>,
    clock: &dyn Clock,
) -> Result<RetrievalResult> {
    index.check_layout(model.layout_id())?;
    let start = clock.now_secs();
    let query = model.encode(image)?.with_source(query_id);
    let groups = index.rank(&query, k, scenario, query_magnification)?;
    Ok(RetrievalResult {
        query_id: String::from(query_id),
        scenario,
        groups,
        elapsed_secs: clock.now_secs() - start,
    })
}

/// `FCIX`, version u16, layout id u64, entry count u64, dim u32, then per
/// entry: id, label u8, magnification u8, center, split u8, `dim` f32.
/// Strings are u16-length-prefixed UTF-8; all integers little-endian.
pub fn encode_index(index: &FeatureIndex) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(26 + index.len() * (index.dim * 4 + 32));
    out.extend_from_slice(&INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&index.layout_id.0.to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(&(index.dim as u32).to_le_bytes());
    for e in &index.entries {
        put_short_str(&mut out, &e.meta.id, "id")?;
        out.push(e.meta.label.code());
        out.push(Magnification::code(e.meta.magnification));
        put_short_str(&mut out, &e.meta.center, "center")?;
        out.push(e.meta.split.code());
        for v in &e.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_index(bytes: &[u8]) -> Result<FeatureIndex> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.array()?;
    if magic != INDEX_MAGIC {
        return Err(DecodeError::BadMagic {
            expected: INDEX_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = r.u16_le()?;
    if version != INDEX_VERSION {
        return Err(DecodeError::UnsupportedVersion(version).into());
    }
    let layout_id = LayoutId(r.u64_le()?);
    let count = r.u64_le()?;
    let dim = r.u32_le()? as usize;
    let mut entries = Vec::new();
    for ordinal in 0..count {
        let entry = read_entry(&mut r, dim).map_err(|e| match e {
            DecodeError::Truncated { .. } => DecodeError::TruncatedEntry { entry: ordinal },
            other => other,
        })?;
        entries.push(entry);
    }
    if r.remaining() != 0 {
        return Err(DecodeError::TrailingBytes(r.remaining()).into());
    }
    FeatureIndex::new(layout_id, entries)
}

fn read_entry(r: &mut Reader<'_>, dim: usize) -> Result<IndexEntry, DecodeError> {
    let id = r.short_str("id")?;
    let label = Label::from_code(r.u8()?)?;
    let magnification = Magnification::from_code(r.u8()?)?;
    let center = r.short_str("center")?;
    let split = Split::from_code(r.u8()?)?;
    let mut vector = Vec::with_capacity(dim);
    for _ in 0..dim {
        vector.push(r.f32_le()?);
    }
    Ok(IndexEntry {
        meta: EntryMeta {
            id,
            label,
            magnification,
            center,
            split,
        },
        vector,
    })
}

/// Ordering used by ranking, exposed for callers that pool hits across groups.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.position.cmp(&b.position))
}
