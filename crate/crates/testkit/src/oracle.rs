//! Slow, obviously-correct reference implementations.

use std::collections::{BTreeMap, BTreeSet};

use corefline_core::{Document, TokenRef};
use rand::Rng;

/// Full-matrix Levenshtein distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Length of the longest strictly increasing subsequence, by subset
/// enumeration. Only for short inputs.
pub fn lis_length(values: &[usize]) -> usize {
    assert!(values.len() <= 16);
    (0u32..1 << values.len())
        .filter_map(|mask| {
            let picked: Vec<usize> = (0..values.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| values[i])
                .collect();
            picked
                .windows(2)
                .all(|w| w[0] < w[1])
                .then_some(picked.len())
        })
        .max()
        .unwrap_or(0)
}

fn find(parent: &mut BTreeMap<usize, usize>, x: usize) -> usize {
    let p = *parent.entry(x).or_insert(x);
    if p == x {
        x
    } else {
        let r = find(parent, p);
        parent.insert(x, r);
        r
    }
}

/// MUC side via connected components: the links of `keys` that survive
/// when only pairs also clustered together in `other` are kept.
fn muc_side(keys: &[Vec<usize>], other: &[Vec<usize>]) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for k in keys {
        let mut parent = BTreeMap::new();
        for a in k {
            for b in k {
                if a < b && other.iter().any(|r| r.contains(a) && r.contains(b)) {
                    let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
                    parent.insert(ra, rb);
                }
            }
        }
        let components: BTreeSet<usize> = k.iter().map(|m| find(&mut parent, *m)).collect();
        num += (k.len() - components.len()) as f64;
        den += (k.len().saturating_sub(1)) as f64;
    }
    (num, den)
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// `(recall, precision, f1)`.
pub fn muc(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> (f64, f64, f64) {
    let (rn, rd) = muc_side(gold, pred);
    let (pn, pd) = muc_side(pred, gold);
    let (r, p) = (div(rn, rd), div(pn, pd));
    (r, p, f1(p, r))
}

pub fn b_cubed(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> (f64, f64, f64) {
    let side = |keys: &[Vec<usize>], other: &[Vec<usize>]| {
        let mut total = 0.0;
        let mut count = 0.0;
        for k in keys {
            for m in k {
                count += 1.0;
                let overlap = other
                    .iter()
                    .find(|r| r.contains(m))
                    .map_or(0, |r| k.iter().filter(|x| r.contains(x)).count());
                total += overlap as f64 / k.len() as f64;
            }
        }
        div(total, count)
    };
    let (r, p) = (side(gold, pred), side(pred, gold));
    (r, p, f1(p, r))
}

fn phi4(k: &[usize], r: &[usize]) -> f64 {
    let common = k.iter().filter(|x| r.contains(x)).count();
    2.0 * common as f64 / (k.len() + r.len()) as f64
}

/// Best total similarity over every partial injection of gold chains into
/// predicted chains.
pub fn best_alignment(weights: &[Vec<f64>]) -> f64 {
    fn go(row: usize, weights: &[Vec<f64>], used: &mut Vec<bool>) -> f64 {
        if row == weights.len() {
            return 0.0;
        }
        let mut best = go(row + 1, weights, used);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(weights[row][j] + go(row + 1, weights, used));
                used[j] = false;
            }
        }
        best
    }
    let cols = weights.first().map_or(0, Vec::len);
    go(0, weights, &mut vec![false; cols])
}

pub fn ceaf_e(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> (f64, f64, f64) {
    let w: Vec<Vec<f64>> = gold
        .iter()
        .map(|k| pred.iter().map(|r| phi4(k, r)).collect())
        .collect();
    let sim = best_alignment(&w);
    let (r, p) = (div(sim, gold.len() as f64), div(sim, pred.len() as f64));
    (r, p, f1(p, r))
}

/// Random clustering of mention keys drawn from `0..universe`.
pub fn random_clusters<R: Rng>(rng: &mut R, universe: usize, max_chains: usize) -> Vec<Vec<usize>> {
    let n_chains = rng.gen_range(0..=max_chains);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); n_chains];
    if n_chains == 0 {
        return clusters;
    }
    for m in 0..universe {
        if rng.gen_bool(0.75) {
            clusters[rng.gen_range(0..n_chains)].push(m);
        }
    }
    clusters.retain(|c| !c.is_empty());
    clusters
}

/// Chains as sets of mention heads, chain names forgotten.
pub fn head_chains(doc: &Document, include_singletons: bool) -> BTreeSet<BTreeSet<TokenRef>> {
    doc.chains
        .values()
        .filter(|c| include_singletons || c.mentions.len() > 1)
        .map(|c| c.mentions.iter().map(|m| m.head_ref()).collect())
        .collect()
}

/// Chains as sorted multisets of heads, so two mentions sharing a head in
/// one chain are both visible.
pub fn head_multichains(doc: &Document) -> BTreeSet<Vec<TokenRef>> {
    doc.chains
        .values()
        .map(|c| {
            let mut heads: Vec<TokenRef> = c.mentions.iter().map(|m| m.head_ref()).collect();
            heads.sort();
            heads
        })
        .collect()
}
