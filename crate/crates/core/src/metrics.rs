//! Head-matched coreference scores and corpus statistics.
//!
//! Every mention is reduced to its head node. Singleton chains are removed
//! from both sides, predicted mentions are paired with gold mentions sharing
//! their head, and MUC, B³ and CEAF_e are computed over the paired mentions.
//! Counts are summed over the documents of a dataset before dividing.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::conllu::{Corpus, Document, Mention, TokenRef};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Numerators and denominators of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub recall_num: f64,
    pub recall_den: f64,
    pub precision_num: f64,
    pub precision_den: f64,
}

impl Counts {
    pub fn prf(&self) -> Prf {
        Prf::new(
            ratio(self.precision_num, self.precision_den),
            ratio(self.recall_num, self.recall_den),
        )
    }

    fn add(&mut self, other: &Counts) {
        self.recall_num += other.recall_num;
        self.recall_den += other.recall_den;
        self.precision_num += other.precision_num;
        self.precision_den += other.precision_den;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricCounts {
    pub muc: Counts,
    pub b3: Counts,
    pub ceaf_e: Counts,
}

impl MetricCounts {
    pub fn add(&mut self, other: &MetricCounts) {
        self.muc.add(&other.muc);
        self.b3.add(&other.b3);
        self.ceaf_e.add(&other.ceaf_e);
    }

    pub fn scores(&self) -> Scores {
        Scores {
            muc: self.muc.prf(),
            b3: self.b3.prf(),
            ceaf_e: self.ceaf_e.prf(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub muc: Prf,
    pub b3: Prf,
    pub ceaf_e: Prf,
}

impl Scores {
    /// Mean of the three F1 values, as a percentage.
    pub fn conll_f1(&self) -> f64 {
        100.0 * (self.muc.f1 + self.b3.f1 + self.ceaf_e.f1) / 3.0
    }
}

/// Pairs mentions with identical heads. Mentions that also agree on their
/// fragments are paired first; the rest are walked in document order and
/// each gold mention takes the first unused prediction on its head.
/// Returns `(gold index, pred index)` pairs.
pub fn head_match(gold: &[Mention], pred: &[Mention]) -> Vec<(usize, usize)> {
    let order = |ms: &[Mention]| {
        let mut idx: Vec<usize> = (0..ms.len()).collect();
        idx.sort_by(|&a, &b| {
            (ms[a].head_ref(), &ms[a].fragments)
                .cmp(&(ms[b].head_ref(), &ms[b].fragments))
                .then(a.cmp(&b))
        });
        idx
    };
    let mut exact: BTreeMap<(TokenRef, &[crate::conllu::Span]), VecDeque<usize>> = BTreeMap::new();
    for p in order(pred) {
        exact
            .entry((pred[p].head_ref(), &pred[p].fragments))
            .or_default()
            .push_back(p);
    }
    let mut pairs = Vec::new();
    let mut used = vec![false; pred.len()];
    let mut rest = Vec::new();
    for g in order(gold) {
        match exact
            .get_mut(&(gold[g].head_ref(), &gold[g].fragments[..]))
            .and_then(VecDeque::pop_front)
        {
            Some(p) => {
                used[p] = true;
                pairs.push((g, p));
            }
            None => rest.push(g),
        }
    }
    let mut by_head: BTreeMap<TokenRef, VecDeque<usize>> = BTreeMap::new();
    for p in order(pred).into_iter().filter(|&p| !used[p]) {
        by_head.entry(pred[p].head_ref()).or_default().push_back(p);
    }
    for g in rest {
        if let Some(p) = by_head
            .get_mut(&gold[g].head_ref())
            .and_then(VecDeque::pop_front)
        {
            pairs.push((g, p));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Clusters of mention keys. Keys below the gold mention count denote gold
/// mentions; larger keys are unmatched predictions.
type Clusters = Vec<Vec<usize>>;

fn non_singleton(doc: &Document) -> Vec<Vec<&Mention>> {
    doc.chains
        .values()
        .filter(|c| c.mentions.len() > 1)
        .map(|c| c.mentions.iter().collect())
        .collect()
}

fn clusters(gold: &Document, pred: &Document) -> (Clusters, Clusters) {
    let gold_chains = non_singleton(gold);
    let pred_chains = non_singleton(pred);
    let gold_flat: Vec<Mention> = gold_chains.iter().flatten().map(|m| (*m).clone()).collect();
    let pred_flat: Vec<Mention> = pred_chains.iter().flatten().map(|m| (*m).clone()).collect();
    let mut pred_key: Vec<usize> = (0..pred_flat.len()).map(|p| gold_flat.len() + p).collect();
    for (g, p) in head_match(&gold_flat, &pred_flat) {
        pred_key[p] = g;
    }
    let mut next = 0;
    let gold_clusters = gold_chains
        .iter()
        .map(|c| {
            let keys: Vec<usize> = (next..next + c.len()).collect();
            next += c.len();
            keys
        })
        .collect();
    let mut next = 0;
    let pred_clusters = pred_chains
        .iter()
        .map(|c| {
            let keys: Vec<usize> = pred_key[next..next + c.len()].to_vec();
            next += c.len();
            keys
        })
        .collect();
    (gold_clusters, pred_clusters)
}

fn cluster_of(clusters: &Clusters) -> BTreeMap<usize, usize> {
    clusters
        .iter()
        .enumerate()
        .flat_map(|(c, keys)| keys.iter().map(move |k| (*k, c)))
        .collect()
}

/// `Σ(|K| - |partition of K by other|)` and `Σ(|K| - 1)`.
fn muc_side(keys: &Clusters, other: &Clusters) -> (f64, f64) {
    let other_of = cluster_of(other);
    let (mut num, mut den) = (0.0, 0.0);
    for k in keys {
        if k.is_empty() {
            continue;
        }
        let mut parts: Vec<Option<usize>> = Vec::new();
        let mut unassigned = 0usize;
        for m in k {
            match other_of.get(m) {
                Some(c) => {
                    if !parts.contains(&Some(*c)) {
                        parts.push(Some(*c));
                    }
                }
                None => unassigned += 1,
            }
        }
        let partitions = parts.len() + unassigned;
        num += (k.len() - partitions) as f64;
        den += (k.len() - 1) as f64;
    }
    (num, den)
}

pub fn muc(gold: &Clusters, pred: &Clusters) -> Counts {
    let (recall_num, recall_den) = muc_side(gold, pred);
    let (precision_num, precision_den) = muc_side(pred, gold);
    Counts {
        recall_num,
        recall_den,
        precision_num,
        precision_den,
    }
}

fn b3_side(keys: &Clusters, other: &Clusters) -> (f64, f64) {
    let other_of = cluster_of(other);
    let (mut num, mut den) = (0.0, 0.0);
    for k in keys {
        for m in k {
            den += 1.0;
            if let Some(&c) = other_of.get(m) {
                let overlap = k.iter().filter(|x| other[c].contains(x)).count();
                num += overlap as f64 / k.len() as f64;
            }
        }
    }
    (num, den)
}

pub fn b_cubed(gold: &Clusters, pred: &Clusters) -> Counts {
    let (recall_num, recall_den) = b3_side(gold, pred);
    let (precision_num, precision_den) = b3_side(pred, gold);
    Counts {
        recall_num,
        recall_den,
        precision_num,
        precision_den,
    }
}

/// `2|K ∩ R| / (|K| + |R|)`.
pub fn phi4(k: &[usize], r: &[usize]) -> f64 {
    if k.is_empty() && r.is_empty() {
        return 0.0;
    }
    let common = k.iter().filter(|x| r.contains(x)).count();
    2.0 * common as f64 / (k.len() + r.len()) as f64
}

/// Maximum-weight one-to-one assignment. Returns the total weight and, for
/// each row, its column (if any).
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let rows = weights.len();
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    if rows == 0 || cols == 0 {
        return (0.0, vec![None; rows]);
    }
    // Square cost matrix, minimized; padding cells cost nothing.
    let n = rows.max(cols);
    let max_w = weights.iter().flatten().copied().fold(0.0f64, f64::max);
    let cost = |i: usize, j: usize| -> f64 {
        max_w
            - weights
                .get(i)
                .and_then(|r| r.get(j))
                .copied()
                .unwrap_or(0.0)
    };

    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= weights[i - 1].len() {
            assignment[i - 1] = Some(j - 1);
            total += weights[i - 1][j - 1];
        }
    }
    (total, assignment)
}

pub fn ceaf_e(gold: &Clusters, pred: &Clusters) -> Counts {
    let weights: Vec<Vec<f64>> = gold
        .iter()
        .map(|k| pred.iter().map(|r| phi4(k, r)).collect())
        .collect();
    let (sim, _) = max_weight_assignment(&weights);
    Counts {
        recall_num: sim,
        recall_den: gold.len() as f64,
        precision_num: sim,
        precision_den: pred.len() as f64,
    }
}

/// Metric counts of one document after singleton removal and head matching.
pub fn document_counts(gold: &Document, pred: &Document) -> MetricCounts {
    let (g, p) = clusters(gold, pred);
    MetricCounts {
        muc: muc(&g, &p),
        b3: b_cubed(&g, &p),
        ceaf_e: ceaf_e(&g, &p),
    }
}

pub fn score(gold: &Document, pred: &Document) -> Scores {
    document_counts(gold, pred).scores()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub dataset: String,
    pub documents: usize,
    pub muc: Prf,
    pub b3: Prf,
    pub ceaf_e: Prf,
    pub conll_f1: f64,
    /// Gold documents with no prediction, scored as empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_documents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub datasets: Vec<DatasetScore>,
    pub macro_average: f64,
}

/// Scores every gold dataset against the predicted dataset of the same id,
/// pairing documents by id.
pub fn conll_f1(gold: &Corpus, pred: &Corpus) -> ScoreReport {
    let mut datasets = Vec::new();
    for g in &gold.datasets {
        let pred_docs: BTreeMap<&str, &Document> = pred
            .dataset(&g.id)
            .map(|d| {
                d.documents
                    .iter()
                    .map(|doc| (doc.doc_id.as_str(), doc))
                    .collect()
            })
            .unwrap_or_default();
        let mut counts = MetricCounts::default();
        let mut missing = Vec::new();
        for doc in &g.documents {
            let c = match pred_docs.get(doc.doc_id.as_str()) {
                Some(p) => document_counts(doc, p),
                None => {
                    missing.push(doc.doc_id.clone());
                    document_counts(doc, &doc.without_chains())
                }
            };
            counts.add(&c);
        }
        let s = counts.scores();
        datasets.push(DatasetScore {
            dataset: g.id.clone(),
            documents: g.documents.len(),
            muc: s.muc,
            b3: s.b3,
            ceaf_e: s.ceaf_e,
            conll_f1: s.conll_f1(),
            missing_documents: missing,
        });
    }
    let macro_average = if datasets.is_empty() {
        0.0
    } else {
        datasets.iter().map(|d| d.conll_f1).sum::<f64>() / datasets.len() as f64
    };
    ScoreReport {
        datasets,
        macro_average,
    }
}

impl ScoreReport {
    /// Aligned plain-text table, percentages with two decimals.
    pub fn render_table(&self) -> String {
        let width = self
            .datasets
            .iter()
            .map(|d| d.dataset.chars().count())
            .max()
            .unwrap_or(0)
            .max(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>8}",
            "dataset", "docs", "MUC", "B3", "CEAFe", "CoNLL-F1"
        );
        for d in &self.datasets {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>6.2}  {:>6.2}  {:>6.2}  {:>8.2}",
                d.dataset,
                d.documents,
                100.0 * d.muc.f1,
                100.0 * d.b3.f1,
                100.0 * d.ceaf_e.f1,
                d.conll_f1
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>8.2}",
            "macro", "", "", "", "", self.macro_average
        );
        for d in self
            .datasets
            .iter()
            .filter(|d| !d.missing_documents.is_empty())
        {
            let _ = writeln!(
                out,
                "warning: {} missing predictions: {}",
                d.dataset,
                d.missing_documents.join(", ")
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub dataset: String,
    pub gold_mentions: usize,
    pub gold_tokens: usize,
    pub gold_per_100: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_per_100: Option<f64>,
    /// `(pred - gold) / gold`; absent when gold density is zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityStats {
    pub include_singletons: bool,
    pub datasets: Vec<DensityRow>,
}

/// Mentions and surface tokens (empty nodes excluded) of some documents.
pub fn mention_counts<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    include_singletons: bool,
) -> (usize, usize) {
    let (mut mentions, mut tokens) = (0, 0);
    for doc in docs {
        tokens += doc.surface_token_count();
        mentions += doc
            .chains
            .values()
            .filter(|c| include_singletons || !c.is_singleton())
            .map(|c| c.mentions.len())
            .sum::<usize>();
    }
    (mentions, tokens)
}

fn per_100(mentions: usize, tokens: usize) -> f64 {
    ratio(100.0 * mentions as f64, tokens as f64)
}

pub fn density(gold: &Corpus, pred: Option<&Corpus>, include_singletons: bool) -> DensityStats {
    let datasets = gold
        .datasets
        .iter()
        .map(|g| {
            let (gold_mentions, gold_tokens) = mention_counts(&g.documents, include_singletons);
            let gold_per_100 = per_100(gold_mentions, gold_tokens);
            let pred_per_100 = pred.map(|p| {
                let docs = p
                    .dataset(&g.id)
                    .map(|d| d.documents.as_slice())
                    .unwrap_or(&[]);
                let (m, t) = mention_counts(docs, include_singletons);
                per_100(m, t)
            });
            let relative_error = pred_per_100
                .filter(|_| gold_per_100 > 0.0)
                .map(|p| (p - gold_per_100) / gold_per_100);
            DensityRow {
                dataset: g.id.clone(),
                gold_mentions,
                gold_tokens,
                gold_per_100,
                pred_per_100,
                relative_error,
            }
        })
        .collect();
    DensityStats {
        include_singletons,
        datasets,
    }
}

/// Cumulative distribution of distances (in surface words) from each
/// non-first mention head to the head of the previous mention of its chain.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceCdf {
    /// `(distance, fraction of mentions at or below it)`, ascending.
    pub points: Vec<(usize, f64)>,
    pub mentions: usize,
}

impl DistanceCdf {
    pub fn from_distances(mut distances: Vec<usize>) -> Self {
        distances.sort_unstable();
        let total = distances.len();
        let mut points: Vec<(usize, f64)> = Vec::new();
        for (i, d) in distances.iter().enumerate() {
            let frac = (i + 1) as f64 / total as f64;
            match points.last_mut() {
                Some(last) if last.0 == *d => last.1 = frac,
                _ => points.push((*d, frac)),
            }
        }
        Self {
            points,
            mentions: total,
        }
    }

    /// Fraction of mentions whose antecedent lies within `budget` words.
    /// 1 when there are no non-first mentions.
    pub fn coverage(&self, budget: usize) -> f64 {
        if self.mentions == 0 {
            return 1.0;
        }
        let idx = self.points.partition_point(|p| p.0 <= budget);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("distance,cumulative_fraction\n");
        for (d, f) in &self.points {
            let _ = writeln!(out, "{d},{f:.6}");
        }
        out
    }
}

/// Antecedent distances of one document. An empty node sits at the
/// position of the surface token it follows.
pub fn antecedent_distances(doc: &Document) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(doc.sentences.len());
    let mut total = 0;
    for s in &doc.sentences {
        offsets.push(total);
        total += s.tokens.len();
    }
    let position = |m: &Mention| offsets.get(m.sentence).copied().unwrap_or(total) + m.head.word;
    let mut out = Vec::new();
    for chain in doc.chains.values() {
        let mut pos: Vec<usize> = chain.mentions.iter().map(position).collect();
        pos.sort_unstable();
        out.extend(pos.windows(2).map(|w| w[1] - w[0]));
    }
    out
}

pub fn antecedent_cdf<'a>(docs: impl IntoIterator<Item = &'a Document>) -> DistanceCdf {
    DistanceCdf::from_distances(docs.into_iter().flat_map(antecedent_distances).collect())
}

/// Human-readable summary line for a coverage query.
pub fn coverage_line(cdf: &DistanceCdf, budget: usize) -> String {
    format!(
        "coverage({budget}) = {:.4} over {} mentions",
        cdf.coverage(budget),
        cdf.mentions
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[&[usize]]) -> Clusters {
        v.iter().map(|k| k.to_vec()).collect()
    }

    #[test]
    fn identical_clusters_score_one() {
        let g = c(&[&[0, 1, 2], &[3, 4]]);
        for counts in [muc(&g, &g), b_cubed(&g, &g), ceaf_e(&g, &g)] {
            assert!((counts.prf().f1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_and_merge_fixture() {
        let g = c(&[&[0, 1, 2], &[3, 4]]);
        let p = c(&[&[0, 1], &[2, 3, 4]]);
        let m = muc(&g, &p).prf();
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        let b = b_cubed(&g, &p).prf();
        assert!((b.f1 - 11.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn unmatched_predictions_lower_precision() {
        let g = c(&[&[0, 1]]);
        let p = c(&[&[0, 1], &[7, 8]]);
        let m = muc(&g, &p).prf();
        assert_eq!((m.recall, m.precision), (1.0, 0.5));
        let e = ceaf_e(&g, &p).prf();
        assert_eq!((e.recall, e.precision), (1.0, 0.5));
    }

    #[test]
    fn assignment_small() {
        let w = vec![vec![0.9, 0.8], vec![0.85, 0.1]];
        let (total, a) = max_weight_assignment(&w);
        assert!((total - 1.65).abs() < 1e-12);
        assert_eq!(a, vec![Some(1), Some(0)]);
        let (total, a) = max_weight_assignment(&[vec![0.2, 0.7, 0.1]]);
        assert!((total - 0.7).abs() < 1e-12);
        assert_eq!(a, vec![Some(1)]);
        let (total, a) = max_weight_assignment(&[vec![0.3], vec![0.6]]);
        assert!((total - 0.6).abs() < 1e-12);
        assert_eq!(a, vec![None, Some(0)]);
    }

    #[test]
    fn cdf_coverage() {
        let cdf = DistanceCdf::from_distances(vec![1, 1, 3, 10]);
        assert_eq!(cdf.coverage(0), 0.0);
        assert_eq!(cdf.coverage(1), 0.5);
        assert_eq!(cdf.coverage(5), 0.75);
        assert_eq!(cdf.coverage(10), 1.0);
        assert_eq!(DistanceCdf::default().coverage(3), 1.0);
    }

    #[test]
    fn prf_zero() {
        assert_eq!(Prf::new(0.0, 0.0).f1, 0.0);
        assert_eq!(Counts::default().prf(), Prf::default());
    }
}
