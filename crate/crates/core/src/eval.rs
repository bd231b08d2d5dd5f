//! Retrieval-as-classification scoring: every test image is a query, its
//! predicted label comes from the retrieved hits.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::cae::{CaeModel, FeatureVector};
use crate::error::{Error, Result};
use crate::label::{Label, Magnification};
use crate::numerics::{Real, Tensor};
use crate::retrieval::{hit_order, EntryMeta, FeatureIndex, Hit, HitGroup, Scenario};
use crate::Clock;

pub const REPORT_HEADER: &str = "fedcbmir-eval v1";

/// Majority label over `hits`; an exact tie goes to the tied label ranked nearest.
pub fn predict_label(hits: &[Hit]) -> Result<Label> {
    if hits.is_empty() {
        return Err(Error::Contract("cannot predict a label from zero hits".into()));
    }
    let mut ranked: Vec<&Hit> = hits.iter().collect();
    ranked.sort_by(|a, b| hit_order(a, b));
    let mut counts: Vec<(Label, usize)> = Vec::new();
    for h in &ranked {
        match counts.iter_mut().find(|(l, _)| *l == h.label) {
            Some((_, c)) => *c += 1,
            None => counts.push((h.label, 1)),
        }
    }
    let best = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    Ok(counts.iter().find(|(_, c)| *c == best).map(|(l, _)| *l).unwrap_or(ranked[0].label))
}

/// Binary confusion counts with malignant/cancerous as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth.is_positive(), predicted.is_positive()) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No positive predictions were made, so precision was set to 0.
    pub precision_undefined: bool,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("metrics need at least one scored query".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        accuracy: ratio(cm.tp + cm.tn, total),
        precision,
        recall,
        f1,
        precision_undefined: cm.tp + cm.fp == 0,
    })
}

/// Mean and nearest-rank 95th percentile.
pub fn timing_summary(seconds: &[f64]) -> Result<(f64, f64)> {
    if seconds.is_empty() {
        return Err(Error::Contract("timing summary of zero records".into()));
    }
    let n = seconds.len();
    let mean = seconds.iter().sum::<f64>() / n as f64;
    let mut sorted = seconds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (95 * n).div_ceil(100).max(1);
    Ok((mean, sorted[rank - 1]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub truth: Label,
    pub predicted: Label,
    pub nearest_distance: f64,
    pub seconds: f64,
}

/// Per-magnification scoring for Sen2 queries.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub magnification: Option<Magnification>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub k: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub mean_search_secs: f64,
    pub p95_search_secs: f64,
    /// Manifest order.
    pub records: Vec<QueryRecord>,
    /// Empty for Sen1. For Sen2 the top-level confusion is the pooled-majority one.
    pub groups: Vec<GroupReport>,
}

impl EvalReport {
    pub fn from_records(
        scenario: Scenario,
        k: usize,
        records: Vec<QueryRecord>,
        group_cms: Vec<(Option<Magnification>, ConfusionMatrix)>,
    ) -> Result<Self> {
        let mut confusion = ConfusionMatrix::default();
        for r in &records {
            confusion.record(r.truth, r.predicted);
        }
        let metrics = metrics(&confusion)?;
        let secs: Vec<f64> = records.iter().map(|r| r.seconds).collect();
        let (mean_search_secs, p95_search_secs) = timing_summary(&secs)?;
        let groups = group_cms
            .into_iter()
            .map(|(magnification, confusion)| {
                Ok(GroupReport {
                    magnification,
                    confusion,
                    metrics: metrics_or_zero(&confusion)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EvalReport {
            scenario,
            k,
            confusion,
            metrics,
            mean_search_secs,
            p95_search_secs,
            records,
            groups,
        })
    }

    /// Header line, one `name value` line per metric, then one
    /// `query-id, true, predicted, nearest-distance, seconds` line per query.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{REPORT_HEADER} scenario={} k={} queries={} positive=malignant",
            self.scenario.as_str(),
            self.k,
            self.records.len()
        );
        write_metrics(&mut s, "", &self.confusion, &self.metrics);
        let _ = writeln!(s, "mean_search_seconds {}", self.mean_search_secs);
        let _ = writeln!(s, "p95_search_seconds {}", self.p95_search_secs);
        for g in &self.groups {
            let prefix = alloc::format!("group.{}.", Magnification::label_opt(g.magnification));
            write_metrics(&mut s, &prefix, &g.confusion, &g.metrics);
        }
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}, {}, {}, {}, {}",
                r.query_id,
                r.truth.as_str(),
                r.predicted.as_str(),
                r.nearest_distance,
                r.seconds
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<ParsedReport> {
        let bad = |line: usize, what: &str| Error::Evaluation(alloc::format!("report line {line}: {what}"));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let rest = header
            .strip_prefix(REPORT_HEADER)
            .ok_or_else(|| bad(1, "unrecognised header"))?;
        let mut parsed = ParsedReport::default();
        for field in rest.split_whitespace() {
            if let Some((key, value)) = field.split_once('=') {
                match key {
                    "scenario" => parsed.scenario = Some(value.parse()?),
                    "k" => parsed.k = value.parse().map_err(|_| bad(1, "bad k"))?,
                    _ => {}
                }
            }
        }
        for (i, line) in lines {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if line.contains(',') {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols.len() != 5 {
                    return Err(bad(n, "query line needs 5 columns"));
                }
                parsed.records.push(QueryRecord {
                    query_id: cols[0].to_string(),
                    truth: cols[1].parse().map_err(|_| bad(n, "bad true label"))?,
                    predicted: cols[2].parse().map_err(|_| bad(n, "bad predicted label"))?,
                    nearest_distance: cols[3].parse().map_err(|_| bad(n, "bad distance"))?,
                    seconds: cols[4].parse().map_err(|_| bad(n, "bad seconds"))?,
                });
            } else {
                let (key, value) = line.split_once(' ').ok_or_else(|| bad(n, "expected `name value`"))?;
                parsed.values.insert(key.to_string(), value.trim().to_string());
            }
        }
        Ok(parsed)
    }
}

fn metrics_or_zero(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Ok(Metrics {
            accuracy: 0.0,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            precision_undefined: true,
        });
    }
    metrics(cm)
}

fn write_metrics(s: &mut String, prefix: &str, cm: &ConfusionMatrix, m: &Metrics) {
    let _ = writeln!(s, "{prefix}tp {}", cm.tp);
    let _ = writeln!(s, "{prefix}fp {}", cm.fp);
    let _ = writeln!(s, "{prefix}fn {}", cm.fn_);
    let _ = writeln!(s, "{prefix}tn {}", cm.tn);
    let _ = writeln!(s, "{prefix}accuracy {}", m.accuracy);
    let _ = writeln!(s, "{prefix}precision {}", m.precision);
    let _ = writeln!(s, "{prefix}recall {}", m.recall);
    let _ = writeln!(s, "{prefix}f1 {}", m.f1);
    let _ = writeln!(s, "{prefix}precision_undefined {}", m.precision_undefined);
}

/// A report read back from its text form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedReport {
    pub scenario: Option<Scenario>,
    pub k: usize,
    pub values: BTreeMap<String, String>,
    pub records: Vec<QueryRecord>,
}

impl ParsedReport {
    pub fn value<F: core::str::FromStr>(&self, key: &str) -> Result<F> {
        self.values
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Evaluation(alloc::format!("report has no valid {key}")))
    }

    pub fn confusion(&self, prefix: &str) -> Result<ConfusionMatrix> {
        Ok(ConfusionMatrix::new(
            self.value(&alloc::format!("{prefix}tp"))?,
            self.value(&alloc::format!("{prefix}fp"))?,
            self.value(&alloc::format!("{prefix}fn"))?,
            self.value(&alloc::format!("{prefix}tn"))?,
        ))
    }
}

/// Query metadata plus its already-extracted feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredQuery {
    pub meta: EntryMeta,
    pub vector: FeatureVector,
}

struct Accumulator {
    scenario: Scenario,
    k: usize,
    records: Vec<QueryRecord>,
    groups: Vec<(Option<Magnification>, ConfusionMatrix)>,
}

impl Accumulator {
    fn new(index: &FeatureIndex, scenario: Scenario, k: usize) -> Self {
        let groups = match scenario {
            Scenario::Sen1 => Vec::new(),
            Scenario::Sen2 => index
                .magnifications()
                .into_iter()
                .map(|m| (m, ConfusionMatrix::default()))
                .collect(),
        };
        Accumulator {
            scenario,
            k,
            records: Vec::new(),
            groups,
        }
    }

    fn push(&mut self, meta: &EntryMeta, groups: &[HitGroup], seconds: f64) -> Result<()> {
        let pooled: Vec<Hit> = groups.iter().flat_map(|g| g.hits.iter().cloned()).collect();
        let predicted = predict_label(&pooled)?;
        let nearest = pooled.iter().map(|h| h.distance).fold(f64::INFINITY, f64::min);
        if self.scenario == Scenario::Sen2 {
            for g in groups {
                if g.hits.is_empty() {
                    continue;
                }
                if let Some((_, cm)) = self.groups.iter_mut().find(|(m, _)| *m == g.magnification) {
                    cm.record(meta.label, predict_label(&g.hits)?);
                }
            }
        }
        self.records.push(QueryRecord {
            query_id: meta.id.clone(),
            truth: meta.label,
            predicted,
            nearest_distance: nearest,
            seconds,
        });
        Ok(())
    }

    fn finish(self) -> Result<EvalReport> {
        EvalReport::from_records(self.scenario, self.k, self.records, self.groups)
    }
}

fn leakage_guard(index: &FeatureIndex, id: &str) -> Result<()> {
    if index.contains_id(id) {
        return Err(Error::Evaluation(alloc::format!(
            "query {id} is also in the index; test and index sets must be disjoint"
        )));
    }
    Ok(())
}

/// Scores pre-extracted query vectors. Timing covers ranking only.
pub fn evaluate_vectors(
    index: &FeatureIndex,
    queries: &[ScoredQuery],
    k: usize,
    scenario: Scenario,
    clock: &dyn Clock,
) -> Result<EvalReport> {
    for q in queries {
        leakage_guard(index, &q.meta.id)?;
    }
    let mut acc = Accumulator::new(index, scenario, k);
    for q in queries {
        let start = clock.now_secs();
        let groups = index.rank(&q.vector, k, scenario, q.meta.magnification)?;
        let secs = clock.now_secs() - start;
        acc.push(&q.meta, &groups, secs)?;
    }
    acc.finish()
}

/// Encodes each query image with `model` and scores it. Timing covers
/// feature extraction plus ranking.
pub fn evaluate<T: Real>(
    index: &FeatureIndex,
    model: &CaeModel<T>,
    queries: impl IntoIterator<Item = Result<(EntryMeta, Tensor<T>)>>,
    k: usize,
    scenario: Scenario,
    clock: &dyn Clock,
) -> Result<EvalReport> {
    index.check_layout(model.layout_id())?;
    let mut acc = Accumulator::new(index, scenario, k);
    for item in queries {
        let (meta, image) = item?;
        leakage_guard(index, &meta.id)?;
        let start = clock.now_secs();
        let vector = model.encode(&image)?.with_source(meta.id.clone());
        let groups = index.rank(&vector, k, scenario, meta.magnification)?;
        let secs = clock.now_secs() - start;
        acc.push(&meta, &groups, secs)?;
    }
    acc.finish()
}
