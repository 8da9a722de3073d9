//! Full-ranking evaluation with HR@K and NDCG@K under the standard and the
//! visited/unvisited protocols, plus the cross-model gap summary.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{HeldOut, ItemKind, VisitedIndex};

/// Anything that scores every item for a user.
pub trait Scorer {
    fn num_items(&self) -> usize;

    /// Final model scores for all items.
    fn scores(&self, u: usize) -> Vec<f64>;

    /// Scores used by the typed protocol for `kind`. Single models use their
    /// only score.
    fn typed_scores(&self, u: usize, kind: ItemKind) -> Vec<f64> {
        let _ = kind;
        self.scores(u)
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn num_items(&self) -> usize {
        (**self).num_items()
    }

    fn scores(&self, u: usize) -> Vec<f64> {
        (**self).scores(u)
    }

    fn typed_scores(&self, u: usize, kind: ItemKind) -> Vec<f64> {
        (**self).typed_scores(u, kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Standard,
    Visited,
    Unvisited,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Standard, Protocol::Visited, Protocol::Unvisited];

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "standard" => Some(Protocol::Standard),
            "visited" => Some(Protocol::Visited),
            "unvisited" => Some(Protocol::Unvisited),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Standard => "standard",
            Protocol::Visited => "visited",
            Protocol::Unvisited => "unvisited",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    HR,
    NDCG,
}

/// Descending score, ascending item id.
#[inline]
fn before(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

fn rank_pool(scores: &[f64], mut pool: Vec<usize>) -> Vec<usize> {
    pool.sort_by(|&a, &b| before(scores, a, b));
    pool
}

/// All items ordered by the scorer, with `exclusions` removed.
pub fn rank_standard(scorer: &dyn Scorer, u: usize, exclusions: &[usize]) -> Vec<usize> {
    let scores = scorer.scores(u);
    let pool = (0..scorer.num_items()).filter(|i| !exclusions.contains(i)).collect();
    rank_pool(&scores, pool)
}

/// The user's items of one kind ordered by the matching expert's scores.
/// `None` when the candidate pool is empty.
pub fn rank_typed(
    scorer: &dyn Scorer,
    u: usize,
    kind: ItemKind,
    index: &VisitedIndex,
    exclusions: &[usize],
) -> Option<Vec<usize>> {
    let pool: Vec<usize> = (0..scorer.num_items())
        .filter(|&i| index.kind(u, i) == kind && !exclusions.contains(&i))
        .collect();
    if pool.is_empty() {
        return None;
    }
    Some(rank_pool(&scorer.typed_scores(u, kind), pool))
}

/// 1-based position `target` would take in the ranked `pool`.
pub fn rank_of(scores: &[f64], target: usize, pool: impl Iterator<Item = usize>) -> usize {
    1 + pool
        .filter(|&i| i != target && before(scores, i, target) == Ordering::Less)
        .count()
}

fn check_rank(rank: Option<usize>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("cutoff K must be at least 1".into()));
    }
    if rank == Some(0) {
        return Err(Error::Index("ranks are 1-based".into()));
    }
    Ok(())
}

/// 1 if the held-out item ranks within `k`; `None` is a miss.
pub fn hit_ratio(rank: Option<usize>, k: usize) -> Result<f64> {
    check_rank(rank, k)?;
    Ok(match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    })
}

/// `1 / log2(rank + 1)` within the cutoff, single relevant item.
pub fn ndcg(rank: Option<usize>, k: usize) -> Result<f64> {
    check_rank(rank, k)?;
    Ok(match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub protocol: Protocol,
    pub metric: Metric,
    #[serde(rename = "K")]
    pub k: usize,
    /// Absent when no user could be evaluated.
    pub value: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    /// Held-out pairs whose typed pool was empty, per protocol.
    pub skipped: BTreeMap<Protocol, usize>,
}

impl EvalReport {
    pub fn get(&self, model: &str, protocol: Protocol, metric: Metric, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.protocol == protocol && r.metric == metric && r.k == k)
            .and_then(|r| r.value)
    }

    pub fn models(&self) -> Vec<String> {
        let mut m: Vec<String> = self.rows.iter().map(|r| r.model.clone()).collect();
        m.dedup();
        m
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        for (p, n) in other.skipped {
            *self.skipped.entry(p).or_default() += n;
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for row in &self.rows {
            serde_json::to_writer(&mut out, row)?;
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<MetricRow>, _>>()?;
        Ok(Self {
            rows,
            skipped: BTreeMap::new(),
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:<10} {:<5} {:>3} {:>8} {:>6}", "model", "protocol", "metric", "K", "value", "n");
        for r in &self.rows {
            let v = r.value.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let metric = match r.metric {
                Metric::HR => "HR",
                Metric::NDCG => "NDCG",
            };
            let _ = writeln!(
                s,
                "{:<16} {:<10} {:<5} {:>3} {:>8} {:>6}",
                r.model,
                r.protocol.name(),
                metric,
                r.k,
                v,
                r.n
            );
        }
        s
    }
}

/// What the evaluator needs to know about the training data.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    /// Training buys per user (sorted), removed from every pool.
    pub exclusions: &'a [Vec<usize>],
    pub index: &'a VisitedIndex,
}

/// Evaluates `pairs` under each protocol and cutoff.
pub fn evaluate(
    model: &str,
    scorer: &dyn Scorer,
    pairs: &[HeldOut],
    ctx: EvalContext<'_>,
    protocols: &[Protocol],
    ks: &[usize],
) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("cutoffs must be non-empty and positive".into()));
    }
    let mut report = EvalReport::default();
    for &protocol in protocols {
        let mut ranks = Vec::new();
        let mut skipped = 0;
        for h in pairs {
            let excl = &ctx.exclusions[h.user];
            let excluded = |i: usize| excl.binary_search(&i).is_ok();
            let rank = match protocol {
                Protocol::Standard => {
                    let scores = scorer.scores(h.user);
                    rank_of(&scores, h.item, (0..scorer.num_items()).filter(|&i| !excluded(i)))
                }
                Protocol::Visited | Protocol::Unvisited => {
                    let kind = if protocol == Protocol::Visited {
                        ItemKind::Visited
                    } else {
                        ItemKind::Unvisited
                    };
                    if h.kind != kind {
                        continue;
                    }
                    let in_pool = |i: usize| ctx.index.kind(h.user, i) == kind && !excluded(i);
                    if !(0..scorer.num_items()).any(in_pool) {
                        skipped += 1;
                        continue;
                    }
                    let scores = scorer.typed_scores(h.user, kind);
                    rank_of(&scores, h.item, (0..scorer.num_items()).filter(|&i| in_pool(i)))
                }
            };
            ranks.push(rank);
        }
        if skipped > 0 {
            report.skipped.insert(protocol, skipped);
        }
        for metric in [Metric::HR, Metric::NDCG] {
            for &k in ks {
                let value = if ranks.is_empty() {
                    None
                } else {
                    let mut sum = 0.0;
                    for &r in &ranks {
                        sum += match metric {
                            Metric::HR => hit_ratio(Some(r), k)?,
                            Metric::NDCG => ndcg(Some(r), k)?,
                        };
                    }
                    Some(sum / ranks.len() as f64)
                };
                report.rows.push(MetricRow {
                    model: model.to_string(),
                    protocol,
                    metric,
                    k,
                    value,
                    n: ranks.len(),
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGap {
    pub model: String,
    pub visited_hr: f64,
    pub unvisited_hr: f64,
    /// `visited_hr / unvisited_hr`; absent when the denominator is zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    #[serde(rename = "K")]
    pub k: usize,
    pub models: Vec<ModelGap>,
    /// Models ordered best first, per protocol.
    pub ranks: BTreeMap<Protocol, Vec<String>>,
    /// The best visited model differs from the best unvisited model.
    pub divergence: bool,
    pub notes: Vec<String>,
}

/// Visited/unvisited HR@k ratio per model and per-protocol model rankings.
pub fn gap_analysis(reports: &[EvalReport], k: usize) -> GapSummary {
    let mut all = EvalReport::default();
    for r in reports {
        all.merge(r.clone());
    }
    let mut models = all.models();
    models.sort();
    models.dedup();

    let mut notes = Vec::new();
    let mut gaps = Vec::new();
    for m in &models {
        let v = all.get(m, Protocol::Visited, Metric::HR, k);
        let u = all.get(m, Protocol::Unvisited, Metric::HR, k);
        match (v, u) {
            (Some(v), Some(u)) => gaps.push(ModelGap {
                model: m.clone(),
                visited_hr: v,
                unvisited_hr: u,
                ratio: (u > 0.0).then(|| v / u),
            }),
            _ => notes.push(format!("{m}: missing typed HR@{k}, omitted")),
        }
    }
    if gaps.len() < 2 {
        notes.push(format!("only {} model(s) with both typed protocols", gaps.len()));
    }

    let mut ranks = BTreeMap::new();
    for protocol in Protocol::ALL {
        let mut scored: Vec<(String, f64)> = models
            .iter()
            .filter_map(|m| all.get(m, protocol, Metric::HR, k).map(|v| (m.clone(), v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if !scored.is_empty() {
            ranks.insert(protocol, scored.into_iter().map(|(m, _)| m).collect::<Vec<_>>());
        }
    }
    let best = |p: Protocol| ranks.get(&p).and_then(|r: &Vec<String>| r.first().cloned());
    let divergence = match (best(Protocol::Visited), best(Protocol::Unvisited)) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    };
    GapSummary {
        k,
        models: gaps,
        ranks,
        divergence,
        notes,
    }
}
