//! Generation (BLEU) and retrieval (R@K, median rank) metrics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use crate::data::CaptionedExample;
use crate::error::{Error, Result};
use crate::model::CaptionModel;
use crate::numcore::Matrix;
use crate::train::joint_loss;

pub const MAX_BLEU_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    pub n: usize,
    /// `precisions[k]` is the modified precision of (k+1)-grams.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
    pub score: f64,
}

/// Clipped n-gram match counts of one candidate, the unit of corpus
/// aggregation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Reference length closest to `c`, the shorter on ties.
fn closest_ref_len<T>(c: usize, references: &[Vec<T>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .expect("at least one reference")
}

fn check_order(n: usize) -> Result<()> {
    if (1..=MAX_BLEU_ORDER).contains(&n) {
        Ok(())
    } else {
        Err(Error::Metric(format!("BLEU order must be in 1..={MAX_BLEU_ORDER}, got {n}")))
    }
}

pub fn bleu_stats<T: Hash + Eq>(candidate: &[T], references: &[Vec<T>], n: usize) -> Result<BleuStats> {
    check_order(n)?;
    if candidate.is_empty() {
        return Err(Error::Metric("BLEU candidate is empty".into()));
    }
    if references.is_empty() {
        return Err(Error::Metric("BLEU needs at least one reference".into()));
    }
    let mut stats = BleuStats {
        candidate_len: candidate.len(),
        reference_len: closest_ref_len(candidate.len(), references),
        ..BleuStats::default()
    };
    for order in 1..=n {
        let cand = ngram_counts(candidate, order);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, order) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched = cand
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        stats.matches.push(matched);
        stats.totals.push(candidate.len().saturating_sub(order - 1));
    }
    Ok(stats)
}

/// Combines summed statistics into `B_N = BP · exp(mean log p_n)`, zero when
/// any precision is zero.
pub fn bleu_from_stats(stats: &BleuStats) -> BleuReport {
    let n = stats.matches.len();
    let precisions: Vec<f64> = stats
        .matches
        .iter()
        .zip(&stats.totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let (c, r) = (stats.candidate_len as f64, stats.reference_len as f64);
    let brevity_penalty = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / n as f64).exp()
    };
    BleuReport {
        n,
        precisions,
        brevity_penalty,
        candidate_len: stats.candidate_len,
        reference_len: stats.reference_len,
        score,
    }
}

/// Sentence-level BLEU-N with clipped n-gram precision.
pub fn bleu_n<T: Hash + Eq>(candidate: &[T], references: &[Vec<T>], n: usize) -> Result<BleuReport> {
    Ok(bleu_from_stats(&bleu_stats(candidate, references, n)?))
}

/// Corpus-level BLEU-N: counts and lengths are summed over all pairs before
/// forming precisions and the brevity penalty.
pub fn corpus_bleu<T: Hash + Eq>(pairs: &[(Vec<T>, Vec<Vec<T>>)], n: usize) -> Result<BleuReport> {
    check_order(n)?;
    if pairs.is_empty() {
        return Err(Error::Metric("BLEU corpus is empty".into()));
    }
    let mut total = BleuStats {
        matches: vec![0; n],
        totals: vec![0; n],
        ..BleuStats::default()
    };
    for (cand, refs) in pairs {
        let s = bleu_stats(cand, refs, n)?;
        for k in 0..n {
            total.matches[k] += s.matches[k];
            total.totals[k] += s.totals[k];
        }
        total.candidate_len += s.candidate_len;
        total.reference_len += s.reference_len;
    }
    Ok(bleu_from_stats(&total))
}

/// Image-sentence match score: the negated joint loss averaged over the two
/// directions. Higher is a better match.
pub fn score_pair(m: &CaptionModel, feature: &[f64], tokens: &[usize]) -> Result<f64> {
    let ex = CaptionedExample {
        image_id: String::new(),
        feature: feature.into(),
        tokens: tokens.to_vec(),
    };
    Ok(-joint_loss(m, &ex)?.total / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub image_ids: Vec<String>,
    pub sentence_ids: Vec<String>,
    /// `n_images × n_sentences`.
    pub scores: Matrix,
}

impl ScoreMatrix {
    pub fn new(image_ids: Vec<String>, sentence_ids: Vec<String>, scores: Matrix) -> Result<Self> {
        if scores.shape() != (image_ids.len(), sentence_ids.len()) {
            return Err(Error::shape(format!(
                "score matrix is {:?} but there are {} images and {} sentences",
                scores.shape(),
                image_ids.len(),
                sentence_ids.len()
            )));
        }
        if scores.as_slice().iter().any(|s| !s.is_finite()) {
            return Err(Error::Metric("score matrix has non-finite entries".into()));
        }
        Ok(ScoreMatrix {
            image_ids,
            sentence_ids,
            scores,
        })
    }

    /// Scores every image against every sentence.
    pub fn from_model(
        m: &CaptionModel,
        images: &[(String, Vec<f64>)],
        sentences: &[(String, Vec<usize>)],
    ) -> Result<Self> {
        let mut scores = Matrix::zeros(images.len(), sentences.len());
        for (i, (_, feature)) in images.iter().enumerate() {
            for (j, (_, tokens)) in sentences.iter().enumerate() {
                scores.set(i, j, score_pair(m, feature, tokens)?);
            }
        }
        ScoreMatrix::new(
            images.iter().map(|(id, _)| id.clone()).collect(),
            sentences.iter().map(|(id, _)| id.clone()).collect(),
            scores,
        )
    }

    /// Headered comma-separated grid, one row per image.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id");
        for s in &self.sentence_ids {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for (i, id) in self.image_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.scores.row(i) {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalDirection {
    ImageToSentence,
    SentenceToImage,
}

impl RetrievalDirection {
    pub const BOTH: [RetrievalDirection; 2] =
        [RetrievalDirection::ImageToSentence, RetrievalDirection::SentenceToImage];

    pub fn name(self) -> &'static str {
        match self {
            RetrievalDirection::ImageToSentence => "image_to_sentence",
            RetrievalDirection::SentenceToImage => "sentence_to_image",
        }
    }
}

/// Ground-truth sentence indices for each image index.
pub type GroundTruth = Vec<Vec<usize>>;

/// 1-based rank of the best-ranked ground-truth candidate for every query.
/// Candidates are ordered by descending score, lower index first on ties.
pub fn first_hit_ranks(sm: &ScoreMatrix, gt: &GroundTruth, dir: RetrievalDirection) -> Result<Vec<usize>> {
    let (n_img, n_sent) = sm.scores.shape();
    if gt.len() != n_img {
        return Err(Error::Metric(format!(
            "ground truth covers {} images, score matrix has {n_img}",
            gt.len()
        )));
    }
    if let Some(&j) = gt.iter().flatten().find(|&&j| j >= n_sent) {
        return Err(Error::Metric(format!("ground-truth sentence {j} out of range")));
    }
    let (queries, score): (Vec<Vec<usize>>, Box<dyn Fn(usize, usize) -> f64>) = match dir {
        RetrievalDirection::ImageToSentence => (gt.clone(), Box::new(|q, c| sm.scores.get(q, c))),
        RetrievalDirection::SentenceToImage => {
            let mut inv = vec![Vec::new(); n_sent];
            for (i, sents) in gt.iter().enumerate() {
                for &j in sents {
                    inv[j].push(i);
                }
            }
            (inv, Box::new(|q, c| sm.scores.get(c, q)))
        }
    };
    let n_cand = match dir {
        RetrievalDirection::ImageToSentence => n_sent,
        RetrievalDirection::SentenceToImage => n_img,
    };
    queries
        .iter()
        .enumerate()
        .map(|(q, hits)| {
            if hits.is_empty() {
                return Err(Error::Metric(format!(
                    "{} query {q} has no ground-truth item",
                    dir.name()
                )));
            }
            let rank_of = |j: usize| {
                let s = score(q, j);
                1 + (0..n_cand)
                    .filter(|&i| {
                        let t = score(q, i);
                        t > s || (t == s && i < j)
                    })
                    .count()
            };
            Ok(hits.iter().map(|&j| rank_of(j)).min().expect("nonempty"))
        })
        .collect()
}

fn candidate_count(sm: &ScoreMatrix, dir: RetrievalDirection) -> usize {
    match dir {
        RetrievalDirection::ImageToSentence => sm.scores.cols(),
        RetrievalDirection::SentenceToImage => sm.scores.rows(),
    }
}

/// Percentage of queries with a ground-truth item in the top `k`.
pub fn recall_at_k(sm: &ScoreMatrix, gt: &GroundTruth, k: usize, dir: RetrievalDirection) -> Result<f64> {
    let n = candidate_count(sm, dir);
    if k == 0 || k > n {
        return Err(Error::Metric(format!("k={k} outside 1..={n} candidates")));
    }
    let ranks = first_hit_ranks(sm, gt, dir)?;
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(100.0 * hits as f64 / ranks.len() as f64)
}

/// Median of `values`; the mean of the two central values for even counts.
pub fn median(values: &[usize]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid] as f64
    } else {
        (v[mid - 1] + v[mid]) as f64 / 2.0
    })
}

pub fn median_rank(sm: &ScoreMatrix, gt: &GroundTruth, dir: RetrievalDirection) -> Result<f64> {
    let ranks = first_hit_ranks(sm, gt, dir)?;
    median(&ranks).ok_or_else(|| Error::Metric("no retrieval queries".into()))
}

/// `metric,value` rows: R@k for each `k` and Med r, for both directions.
/// Each `k` is capped at the candidate count.
pub fn retrieval_report(sm: &ScoreMatrix, gt: &GroundTruth, ks: &[usize]) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::new();
    for dir in RetrievalDirection::BOTH {
        let n = candidate_count(sm, dir);
        for &k in ks {
            rows.push((format!("{}_R@{k}", dir.name()), recall_at_k(sm, gt, k.min(n), dir)?));
        }
        rows.push((format!("{}_med_r", dir.name()), median_rank(sm, gt, dir)?));
    }
    Ok(rows)
}

pub fn metric_rows_text(rows: &[(String, f64)]) -> String {
    let mut out = String::from("metric,value\n");
    for (name, v) in rows {
        let _ = writeln!(out, "{name},{v}");
    }
    out
}
