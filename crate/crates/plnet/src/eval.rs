//! Zero-shot retrieval evaluation: rank the gallery per query, then reduce
//! to CMC Rank-k and mean average precision. Under the multi-camera
//! protocol, gallery images of the query's identity taken by the query's
//! own camera are excluded from the eligible set.

use crate::descriptor::{vector_distance, Metric};
use crate::error::{Error, Result};

/// One image's descriptor plus its labels.
#[derive(Debug, Clone)]
pub struct Item {
    pub id: String,
    pub identity: usize,
    pub camera: Option<usize>,
    pub values: Vec<f64>,
}

/// Ranked gallery for one query, ascending distance, ties broken by
/// gallery index. `ranked`/`relevant` are parallel; indices refer to the
/// eligible-gallery subset order.
#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked: Vec<usize>,
    pub relevant: Vec<bool>,
}

impl RetrievalResult {
    pub fn first_relevant_rank(&self) -> Option<usize> {
        self.relevant.iter().position(|&r| r).map(|p| p + 1)
    }

    pub fn has_relevant(&self) -> bool {
        self.relevant.iter().any(|&r| r)
    }
}

/// Rank the eligible gallery against one query by ascending distance.
/// Same-camera images of the query's identity are filtered out whenever
/// both camera labels are present.
pub fn rank_gallery(query: &Item, gallery: &[Item], metric: Metric) -> Result<RetrievalResult> {
    let eligible: Vec<usize> = (0..gallery.len())
        .filter(|&i| {
            let g = &gallery[i];
            !(g.identity == query.identity
                && matches!((g.camera, query.camera), (Some(gc), Some(qc)) if gc == qc))
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::Eval(format!(
            "query '{}' has an empty eligible gallery",
            query.id
        )));
    }
    let mut scored: Vec<(usize, f64)> = eligible
        .iter()
        .map(|&i| Ok((i, vector_distance(&query.values, &gallery[i].values, metric)?)))
        .collect::<Result<_>>()?;
    // stable sort preserves gallery order on distance ties
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let ranked: Vec<usize> = scored.iter().map(|&(i, _)| i).collect();
    let relevant = ranked
        .iter()
        .map(|&i| gallery[i].identity == query.identity)
        .collect();
    Ok(RetrievalResult {
        query_id: query.id.clone(),
        ranked,
        relevant,
    })
}

/// CMC@r for each requested rank: the fraction of queries whose first
/// relevant item appears within the top r. Queries with no relevant item
/// are excluded; the count of exclusions is returned alongside.
pub fn cmc(results: &[RetrievalResult], ranks: &[usize]) -> (Vec<f64>, usize) {
    let usable: Vec<&RetrievalResult> = results.iter().filter(|r| r.has_relevant()).collect();
    let skipped = results.len() - usable.len();
    let scores = ranks
        .iter()
        .map(|&r| {
            if usable.is_empty() {
                return 0.0;
            }
            let hits = usable
                .iter()
                .filter(|res| res.first_relevant_rank().unwrap() <= r)
                .count();
            hits as f64 / usable.len() as f64
        })
        .collect();
    (scores, skipped)
}

/// Average precision of one ranking: the mean over relevant positions i of
/// (relevant items in the top i) / i. Not interpolated.
pub fn average_precision(result: &RetrievalResult) -> Option<f64> {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (pos, &rel) in result.relevant.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (pos + 1) as f64;
        }
    }
    if hits == 0 {
        None
    } else {
        Some(acc / hits as f64)
    }
}

/// Mean of the per-query average precisions, skipping queries without any
/// relevant gallery item.
pub fn mean_ap(results: &[RetrievalResult]) -> f64 {
    let aps: Vec<f64> = results.iter().filter_map(average_precision).collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Standard report: mAP plus CMC at ranks 1, 5, 10.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub skipped_queries: usize,
}

pub fn evaluate(queries: &[Item], gallery: &[Item], metric: Metric) -> Result<Report> {
    let results: Vec<RetrievalResult> = queries
        .iter()
        .map(|q| rank_gallery(q, gallery, metric))
        .collect::<Result<_>>()?;
    let (cmc_scores, skipped) = cmc(&results, &[1, 5, 10]);
    Ok(Report {
        map: mean_ap(&results),
        rank1: cmc_scores[0],
        rank5: cmc_scores[1],
        rank10: cmc_scores[2],
        skipped_queries: skipped,
    })
}

/// Render rows as the aligned text table used in reports:
/// `method, mAP, Rank-1, Rank-5, Rank-10`.
pub fn format_table(rows: &[(String, Report)]) -> String {
    let mut out = String::new();
    let name_width = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once("method".len()))
        .max()
        .unwrap_or(6);
    out.push_str(&format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "method",
        "mAP",
        "Rank-1",
        "Rank-5",
        "Rank-10",
        width = name_width
    ));
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}\n",
            name,
            r.map,
            r.rank1,
            r.rank5,
            r.rank10,
            width = name_width
        ));
    }
    out
}

/// CSV twin of [`format_table`].
pub fn format_csv(rows: &[(String, Report)]) -> String {
    let mut out = String::from("method,mAP,Rank-1,Rank-5,Rank-10\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            name, r.map, r.rank1, r.rank5, r.rank10
        ));
    }
    out
}
