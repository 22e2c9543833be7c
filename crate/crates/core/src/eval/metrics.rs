use std::collections::BTreeMap;

use crate::dataset::Qrels;
use crate::error::{Error, Result};

/// query id → ranked document ids (best first).
pub type Rankings = BTreeMap<String, Vec<String>>;

/// Fraction of queries whose top-ranked document has relevance > 0.
pub fn acc_at_1(rankings: &Rankings, qrels: &Qrels) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::Evaluation("no rankings to score".into()));
    }
    let mut hits = 0usize;
    for (qid, ranked) in rankings {
        let rel = qrels
            .get(qid)
            .ok_or_else(|| Error::Evaluation(format!("no qrels for query `{qid}`")))?;
        if ranked.first().and_then(|d| rel.get(d)).is_some_and(|&r| r > 0) {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

fn dcg(gains: impl Iterator<Item = u32>) -> f64 {
    gains
        .take(10)
        .enumerate()
        .map(|(i, rel)| (2f64.powi(rel as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdcgResult {
    pub score: f64,
    /// Queries left out because none of their judgements is positive.
    pub excluded: usize,
}

/// Mean nDCG@10 with gains `2^rel − 1` and discount `1/log2(rank + 1)`.
pub fn ndcg_at_10(rankings: &Rankings, qrels: &Qrels) -> Result<NdcgResult> {
    let mut total = 0.0;
    let mut scored = 0usize;
    let mut excluded = 0usize;
    for (qid, ranked) in rankings {
        let rel = qrels
            .get(qid)
            .ok_or_else(|| Error::Evaluation(format!("no qrels for query `{qid}`")))?;
        let mut ideal: Vec<u32> = rel.values().copied().filter(|&r| r > 0).collect();
        if ideal.is_empty() {
            excluded += 1;
            continue;
        }
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(ideal.into_iter());
        let got = dcg(ranked.iter().map(|d| rel.get(d).copied().unwrap_or(0)));
        total += got / idcg;
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::Evaluation("no query has a positive relevance judgement".into()));
    }
    Ok(NdcgResult {
        score: total / scored as f64,
        excluded,
    })
}
