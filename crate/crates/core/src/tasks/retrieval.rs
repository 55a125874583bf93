use ndarray::Axis;
use rayon::prelude::*;

use super::{acc_at_k, MetricReport, TaskError};
use crate::masker::{MaskedExample, MaskedNode};
use crate::model::{cosine, Model};
use crate::numerics::Mat;

const CHUNK: usize = 64;

/// Candidate rows by descending cosine similarity to `query`; ties keep
/// row order.
pub fn rank_by_cosine(query: &[f64], candidates: &Mat) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = (0..candidates.nrows())
        .into_par_iter()
        .map(|i| {
            let row = candidates.row(i);
            (i, cosine(query, row.as_slice().expect("standard layout")))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored
}

/// The `top` candidates closest to `a - b + c`.
pub fn analogy(a: &[f64], b: &[f64], c: &[f64], candidates: &Mat, top: usize) -> Vec<(usize, f64)> {
    let q: Vec<f64> = a.iter().zip(b).zip(c).map(|((a, b), c)| a - b + c).collect();
    let mut ranked = rank_by_cosine(&q, candidates);
    ranked.truncate(top);
    ranked
}

/// Two-tower retrieval: candidates are embedded once as one-node graph
/// documents; a history is one document whose nodes are chained by
/// origin-to-destination moves, pooled by the mean of its fused `[CLS]`
/// vectors.
#[derive(Debug, Clone)]
pub struct Recommender {
    pub ids: Vec<String>,
    pub embeddings: Mat,
}

impl Recommender {
    pub fn new(model: &Model, candidates: &[(String, MaskedNode)]) -> Result<Self, TaskError> {
        let mut parts = Vec::new();
        for part in candidates.chunks(CHUNK) {
            let docs: Vec<MaskedExample> = part.iter().map(|(_, n)| MaskedExample { nodes: vec![n.clone()] }).collect();
            parts.push(model.embed(&docs, true)?);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let embeddings = if views.is_empty() { Mat::zeros((0, model.config.hidden)) } else { ndarray::concatenate(Axis(0), &views).expect("same width") };
        Ok(Self { ids: candidates.iter().map(|(id, _)| id.clone()).collect(), embeddings })
    }

    pub fn encode_history(model: &Model, history: &[MaskedNode]) -> Result<Vec<f64>, TaskError> {
        if history.is_empty() {
            return Err(TaskError::EmptyDataset);
        }
        let h = model.embed(&[MaskedExample { nodes: history.to_vec() }], true)?;
        Ok(h.mean_axis(Axis(0)).expect("non-empty").to_vec())
    }

    pub fn recommend(&self, query: &[f64], k: usize) -> Vec<(String, f64)> {
        rank_by_cosine(query, &self.embeddings).into_iter().take(k).map(|(i, s)| (self.ids[i].clone(), s)).collect()
    }

    /// 1-based rank of `gold`.
    pub fn gold_rank(&self, query: &[f64], gold: &str) -> Result<usize, TaskError> {
        let target = self.ids.iter().position(|id| id == gold).ok_or_else(|| TaskError::GoldMissing(gold.to_string()))?;
        Ok(rank_by_cosine(query, &self.embeddings).iter().position(|&(i, _)| i == target).expect("every row is ranked") + 1)
    }

    pub fn evaluate(&self, model: &Model, cases: &[(Vec<MaskedNode>, String)], k: usize) -> Result<MetricReport, TaskError> {
        if cases.is_empty() {
            return Err(TaskError::EmptyDataset);
        }
        let mut ranks = Vec::with_capacity(cases.len());
        for (history, gold) in cases {
            let q = Self::encode_history(model, history)?;
            ranks.push(self.gold_rank(&q, gold)?);
        }
        Ok(MetricReport::new(&format!("acc@{k}"), acc_at_k(&ranks, k), cases.len()))
    }
}
