use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dgg::LatLng;

/// Mean Earth radius (IUGG), in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

pub fn haversine_km(a: &LatLng, b: &LatLng) -> f64 {
    a.haversine_km(b, EARTH_RADIUS_KM)
}

/// Fraction of predictions strictly closer than `n_km` to their gold point.
pub fn acc_at_n_km(preds: &[LatLng], golds: &[LatLng], n_km: f64) -> f64 {
    assert_eq!(preds.len(), golds.len(), "one prediction per gold point");
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| haversine_km(p, g) < n_km).count();
    hits as f64 / preds.len() as f64
}

/// Fraction of 1-based ranks within the top `k`.
pub fn acc_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r >= 1 && r <= k).count() as f64 / ranks.len() as f64
}

/// A typed span of words, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Chunk {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

/// Chunks of a BIO sequence. An `I-x` that does not continue an `x` chunk
/// opens a new one, and a tag that is not `O`, `B-*` or `I-*` reads as `O`;
/// each such repair is counted.
pub fn bio_chunks<S: AsRef<str>>(tags: &[S]) -> (Vec<Chunk>, usize) {
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut open: Option<Chunk> = None;
    let mut repairs = 0;
    for (i, t) in tags.iter().enumerate() {
        let t = t.as_ref();
        let (prefix, kind) = match t.split_once('-') {
            Some((p @ ("B" | "I"), k)) if !k.is_empty() => (p, k),
            _ => {
                if t != "O" {
                    repairs += 1;
                }
                chunks.extend(open.take());
                continue;
            }
        };
        match (prefix, open.as_mut()) {
            ("I", Some(c)) if c.kind == kind => c.end = i + 1,
            _ => {
                repairs += usize::from(prefix == "I");
                chunks.extend(open.take());
                open = Some(Chunk { kind: kind.to_string(), start: i, end: i + 1 });
            }
        }
    }
    chunks.extend(open);
    (chunks, repairs)
}

/// Exact-match chunk precision, recall and F1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    /// BIO repairs made while reading gold and predicted tags.
    pub repairs: usize,
}

impl EntityF1 {
    fn from_counts(gold: usize, predicted: usize, correct: usize, repairs: usize) -> Self {
        let (precision, recall, f1) = if gold == 0 && predicted == 0 {
            (1.0, 1.0, 1.0)
        } else {
            let p = if predicted > 0 { correct as f64 / predicted as f64 } else { 0.0 };
            let r = if gold > 0 { correct as f64 / gold as f64 } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f)
        };
        Self { precision, recall, f1, gold, predicted, correct, repairs }
    }
}

/// F1 between two chunk sets of one sequence.
pub fn chunk_f1(gold: &[Chunk], pred: &[Chunk]) -> EntityF1 {
    let g: HashSet<&Chunk> = gold.iter().collect();
    let p: HashSet<&Chunk> = pred.iter().collect();
    EntityF1::from_counts(g.len(), p.len(), g.intersection(&p).count(), 0)
}

/// Corpus-level entity F1 over paired tag sequences.
pub fn entity_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> EntityF1 {
    assert_eq!(gold.len(), pred.len(), "one prediction per gold sequence");
    let (mut ng, mut np, mut nc, mut repairs) = (0, 0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let (gc, rg) = bio_chunks(g);
        let (pc, rp) = bio_chunks(p);
        let f = chunk_f1(&gc, &pc);
        ng += f.gold;
        np += f.predicted;
        nc += f.correct;
        repairs += rg + rp;
    }
    EntityF1::from_counts(ng, np, nc, repairs)
}
