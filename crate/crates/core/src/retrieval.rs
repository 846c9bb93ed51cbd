//! Leave-one-out retrieval by cosine distance, with average precision and
//! hard TOP-k scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::encoding::GlobalDescriptor;
use crate::error::{Error, Result};

/// `1 − a·b / (|a| |b|)`. A zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(cosine_with_sq_norms(a, b, sq_norm(a), sq_norm(b)))
}

fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Takes squared norms so that `a = ±b` lands exactly on 0 or 2.
fn cosine_with_sq_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        log::debug!("cosine distance with a zero vector, using 1");
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot / (na * nb).sqrt()).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub doc_id: String,
    pub writer_id: String,
    pub distance: f64,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query: String,
    pub query_writer: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn relevant_count(&self) -> usize {
        self.entries.iter().filter(|e| e.relevant).count()
    }

    /// Builds a list from relevance flags alone (distances are the ranks).
    pub fn from_relevance(flags: &[bool]) -> Self {
        Self {
            query: "q".into(),
            query_writer: "w".into(),
            entries: flags
                .iter()
                .enumerate()
                .map(|(i, &rel)| RankedEntry {
                    doc_id: format!("{i:06}"),
                    writer_id: if rel { "w".into() } else { format!("other{i}") },
                    distance: i as f64,
                    relevant: rel,
                })
                .collect(),
        }
    }
}

/// Every document queries all the others; results are sorted by ascending
/// distance, ties by document id.
pub fn rank_all(descriptors: &[GlobalDescriptor]) -> Result<Vec<RankedList>> {
    if descriptors.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: descriptors.len(),
        });
    }
    let len = descriptors[0].vector.len();
    if let Some(bad) = descriptors.iter().find(|d| d.vector.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            actual: bad.vector.len(),
        });
    }
    let norms: Vec<f64> = descriptors
        .iter()
        .map(|d| sq_norm(&d.vector))
        .collect();

    Ok((0..descriptors.len())
        .into_par_iter()
        .map(|q| {
            let query = &descriptors[q];
            let mut entries: Vec<RankedEntry> = descriptors
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != q)
                .map(|(i, d)| RankedEntry {
                    doc_id: d.doc_id.clone(),
                    writer_id: d.writer_id.clone(),
                    distance: cosine_with_sq_norms(&query.vector, &d.vector, norms[q], norms[i]),
                    relevant: d.writer_id == query.writer_id,
                })
                .collect();
            entries.sort_by(|a, b| {
                a.distance
                    .total_cmp(&b.distance)
                    .then_with(|| a.doc_id.cmp(&b.doc_id))
                    .then_with(|| a.writer_id.cmp(&b.writer_id))
            });
            RankedList {
                query: query.doc_id.clone(),
                query_writer: query.writer_id.clone(),
                entries,
            }
        })
        .collect())
}

/// `aP = Σ_k P(k) rel(k) / #relevant`; `None` when nothing is relevant.
pub fn average_precision(ranked: &RankedList) -> Option<f64> {
    let total = ranked.relevant_count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in ranked.entries.iter().enumerate() {
        if e.relevant {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Fraction of queries whose first `k` results all share the query's writer.
/// Queries with fewer than `k` relevant documents are left out; `None` if
/// no query qualifies.
pub fn hard_top_k(rankings: &[RankedList], k: usize) -> Option<f64> {
    let mut eligible = 0usize;
    let mut hits = 0usize;
    for r in rankings {
        if k == 0 || r.relevant_count() < k {
            continue;
        }
        eligible += 1;
        if r.entries.iter().take(k).all(|e| e.relevant) {
            hits += 1;
        }
    }
    let skipped = rankings.len() - eligible;
    if skipped > 0 {
        log::debug!("hard TOP-{k}: {skipped} queries lack {k} relevant documents");
    }
    (eligible > 0).then(|| hits as f64 / eligible as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub doc_id: String,
    pub writer_id: String,
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    /// `k → score` for `k = 1..=` the largest relevant count of any query.
    pub hard_top_k: BTreeMap<usize, f64>,
    pub per_query: Vec<QueryResult>,
}

impl EvalReport {
    pub fn from_rankings(rankings: &[RankedList]) -> Self {
        let per_query: Vec<QueryResult> = rankings
            .iter()
            .map(|r| QueryResult {
                doc_id: r.query.clone(),
                writer_id: r.query_writer.clone(),
                average_precision: average_precision(r),
            })
            .collect();
        let aps: Vec<f64> = per_query.iter().filter_map(|q| q.average_precision).collect();
        let excluded = per_query.len() - aps.len();
        if excluded > 0 {
            log::warn!("{excluded} queries have no relevant documents and are excluded from mAP");
        }
        let map = if aps.is_empty() {
            0.0
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        };
        let max_rel = rankings.iter().map(|r| r.relevant_count()).max().unwrap_or(0);
        let hard_top_k = (1..=max_rel)
            .filter_map(|k| hard_top_k(rankings, k).map(|s| (k, s)))
            .collect();
        Self {
            map,
            hard_top_k,
            per_query,
        }
    }

    pub fn queries(&self) -> usize {
        self.per_query.len()
    }

    /// `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let evaluated = self.per_query.iter().filter(|q| q.average_precision.is_some()).count();
        writeln!(s, "queries={}", self.queries()).unwrap();
        writeln!(s, "queries_with_relevant={evaluated}").unwrap();
        writeln!(s, "map={:.6}", self.map).unwrap();
        for (k, v) in &self.hard_top_k {
            writeln!(s, "hard_top_{k}={v:.6}").unwrap();
        }
        s
    }

    /// Per-query average precision as CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("doc_id,writer_id,average_precision\n");
        for q in &self.per_query {
            let ap = q.average_precision.map_or(String::new(), |v| format!("{v:.6}"));
            writeln!(s, "{},{},{}", q.doc_id, q.writer_id, ap).unwrap();
        }
        s
    }
}

pub fn evaluate(descriptors: &[GlobalDescriptor]) -> Result<(EvalReport, Vec<RankedList>)> {
    let rankings = rank_all(descriptors)?;
    Ok((EvalReport::from_rankings(&rankings), rankings))
}

/// One line per query: the query followed by `doc_id:distance` entries.
pub fn dump_rankings(rankings: &[RankedList]) -> String {
    let mut s = String::new();
    for r in rankings {
        write!(s, "{}\t{}", r.query, r.query_writer).unwrap();
        for e in &r.entries {
            write!(s, "\t{}:{:.6}{}", e.doc_id, e.distance, if e.relevant { "*" } else { "" }).unwrap();
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::EncoderKind;
    use proptest::prelude::*;

    fn desc(doc: &str, writer: &str, v: Vec<f64>) -> GlobalDescriptor {
        GlobalDescriptor {
            vector: v,
            doc_id: doc.into(),
            writer_id: writer.into(),
            encoder: EncoderKind::SupervectorKl,
        }
    }

    #[test]
    fn cosine_cases() {
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, -2.0], &[-1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(cosine_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn average_precision_cases() {
        let r = RankedList::from_relevance(&[true, false, true, true, false]);
        let ap = average_precision(&r).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0).abs() < 1e-12);
        assert!((ap - 0.80556).abs() < 1e-5);
        assert_eq!(average_precision(&RankedList::from_relevance(&[true, true, false])), Some(1.0));
        assert_eq!(average_precision(&RankedList::from_relevance(&[false, true, false])), Some(0.5));
        assert_eq!(average_precision(&RankedList::from_relevance(&[false, false])), None);
    }

    #[test]
    fn hard_top_k_definition() {
        let r = RankedList::from_relevance(&[true, false, true]);
        assert_eq!(hard_top_k(std::slice::from_ref(&r), 1), Some(1.0));
        assert_eq!(hard_top_k(std::slice::from_ref(&r), 2), Some(0.0));
        assert_eq!(hard_top_k(std::slice::from_ref(&r), 3), None);
    }

    fn duplicates(writers: usize, docs: usize, dim: usize) -> Vec<GlobalDescriptor> {
        let mut out = Vec::new();
        for w in 0..writers {
            let v: Vec<f64> = (0..dim).map(|j| ((w * 7 + j * 3) % 11) as f64 - 5.0 + w as f64).collect();
            for d in 0..docs {
                out.push(desc(&format!("{w}_{d}"), &format!("w{w}"), v.clone()));
            }
        }
        out
    }

    #[test]
    fn planted_duplicates_retrieve_perfectly() {
        let descs = duplicates(5, 4, 6);
        let (report, rankings) = evaluate(&descs).unwrap();
        assert_eq!(report.map, 1.0);
        assert_eq!(report.hard_top_k[&3], 1.0);
        for r in &rankings {
            assert!(r.entries[..3].iter().all(|e| e.relevant));
            assert!(!r.entries.iter().any(|e| e.doc_id == r.query));
        }
    }

    #[test]
    fn two_documents() {
        let descs = vec![desc("a", "x", vec![1.0]), desc("b", "y", vec![2.0])];
        let rankings = rank_all(&descs).unwrap();
        assert_eq!(rankings.len(), 2);
        assert!(rankings.iter().all(|r| r.entries.len() == 1));
        assert!(rank_all(&descs[..1]).is_err());
    }

    #[test]
    fn ties_break_on_doc_id() {
        let descs = vec![
            desc("q", "x", vec![1.0, 0.0]),
            desc("c", "y", vec![0.0, 1.0]),
            desc("a", "z", vec![0.0, 2.0]),
        ];
        let r = &rank_all(&descs).unwrap()[0];
        assert_eq!(r.entries[0].doc_id, "a");
        assert_eq!(r.entries[1].doc_id, "c");
    }

    #[test]
    fn report_formats() {
        let (report, _) = evaluate(&duplicates(2, 2, 3)).unwrap();
        let kv = report.to_key_value();
        assert!(kv.contains("map=1.000000"));
        assert!(kv.contains("hard_top_1=1.000000"));
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 5);
    }

    /// Exact comparison of cosine similarities of integer vectors:
    /// `q·a / |a|` against `q·b / |b|` via signed squares. Zero vectors count as cosine 0.
    fn exact_cos_cmp(q: &[i64], a: &[i64], b: &[i64]) -> std::cmp::Ordering {
        let dot = |x: &[i64], y: &[i64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<i64>();
        let sq = |x: &[i64]| dot(x, x);
        let key = |x: &[i64]| {
            let (d, n) = (dot(q, x), sq(x));
            if n == 0 || sq(q) == 0 {
                (0i128, 1i128)
            } else {
                ((d * d.abs()) as i128, n as i128)
            }
        };
        let ((da, na), (db, nb)) = (key(a), key(b));
        (da * nb).cmp(&(db * na))
    }

    proptest! {
        #[test]
        fn ranking_matches_pairwise_oracle(
            vecs in proptest::collection::vec(proptest::collection::vec(-3i64..4, 3), 4..50),
        ) {
            // whole writers only, so every query has the same number of relevant documents
            let vecs = &vecs[..vecs.len() / 4 * 4];
            let descs: Vec<GlobalDescriptor> = vecs
                .iter()
                .enumerate()
                .map(|(i, v)| desc(&format!("d{i:03}"), &format!("w{}", i / 4), v.iter().map(|&x| x as f64).collect()))
                .collect();
            let rankings = rank_all(&descs).unwrap();
            for (q, r) in rankings.iter().enumerate() {
                let mut ids: Vec<usize> = r.entries.iter().map(|e| e.doc_id[1..].parse().unwrap()).collect();
                for (e, &i) in r.entries.iter().zip(&ids) {
                    let (qv, dv) = (&descs[q].vector, &descs[i].vector);
                    let dot: f64 = qv.iter().zip(dv).map(|(a, b)| a * b).sum();
                    let na = qv.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let nb = dv.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let want = if na == 0.0 || nb == 0.0 { 1.0 } else { 1.0 - dot / (na * nb) };
                    prop_assert!((e.distance - want).abs() < 1e-12);
                }
                for w in r.entries.windows(2).zip(ids.windows(2)) {
                    let (e, i) = w;
                    // similarity never increases down the list
                    let ord = exact_cos_cmp(&vecs[q], &vecs[i[0]], &vecs[i[1]]);
                    prop_assert!(ord != std::cmp::Ordering::Less);
                    prop_assert!(e[0].distance <= e[1].distance);
                    if e[0].distance == e[1].distance {
                        prop_assert!(e[0].doc_id < e[1].doc_id);
                    }
                }
                ids.sort_unstable();
                let others: Vec<usize> = (0..descs.len()).filter(|&i| i != q).collect();
                prop_assert_eq!(ids, others);
            }
            let report = EvalReport::from_rankings(&rankings);
            prop_assert!((0.0..=1.0).contains(&report.map));
            let scores: Vec<f64> = report.hard_top_k.values().cloned().collect();
            prop_assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
            prop_assert!(scores.windows(2).all(|w| w[1] <= w[0]));

            // positive global scaling changes nothing (integer inputs keep ties exact)
            let scaled: Vec<GlobalDescriptor> = descs
                .iter()
                .map(|d| GlobalDescriptor { vector: d.vector.iter().map(|v| v * 4.0).collect(), ..d.clone() })
                .collect();
            let rescaled = EvalReport::from_rankings(&rank_all(&scaled).unwrap());
            prop_assert_eq!(rescaled, report);
        }
    }
}
