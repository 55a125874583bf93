use serde::Serialize;

use super::metrics::haversine_km;
use super::{train_loop, FineTuneConfig, GeocodingRecord, MetricReport, TaskError, TextEncoder};
use crate::dgg::{decode_consistent_prefix, geocode_point, CellToken, LatLng, MultiLevelCode, CODE_LEVEL};
use crate::geograph::NodeType;
use crate::masker::MaskedExample;
use crate::model::{Batch, LossWeights, Model, GEO_CLASSES, GEO_POSITIONS};
use crate::numerics::Mat;

const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeocodePrediction {
    pub code: String,
    /// Level of `token`: 22 unless the code was inconsistent.
    pub level: u8,
    pub token: String,
    pub location: LatLng,
    /// Set when the decoded ladder broke before level 22 and the deepest
    /// consistent level was used.
    pub fallback: bool,
}

/// Most probable class at each of the 33 positions.
pub fn argmax_code(probs: &Mat) -> MultiLevelCode {
    assert_eq!(probs.dim(), (GEO_POSITIONS, GEO_CLASSES));
    let classes: Vec<usize> = probs.rows().into_iter().map(|r| (0..GEO_CLASSES).fold(0, |b, c| if r[c] > r[b] { c } else { b })).collect();
    MultiLevelCode::from_classes(&classes).expect("classes are in range")
}

/// Center of the deepest cell the code consistently names.
pub fn decode_prediction(code: &MultiLevelCode) -> Result<GeocodePrediction, TaskError> {
    let ladder: Vec<CellToken> = decode_consistent_prefix(code.as_str());
    let Some(last) = ladder.last() else {
        return Err(TaskError::Undecodable(code.to_string()));
    };
    let cell = last.to_cell().map_err(|_| TaskError::Undecodable(code.to_string()))?;
    Ok(GeocodePrediction {
        code: code.to_string(),
        level: ladder.len() as u8,
        token: last.as_str().to_string(),
        location: cell.center(),
        fallback: ladder.len() < CODE_LEVEL as usize,
    })
}

/// Text to location through the pretrained (or fine-tuned) geocoding head.
/// Each text is read as a one-node POI document.
#[derive(Debug, Clone)]
pub struct Geocoder {
    pub model: Model,
}

fn poi_examples(enc: &TextEncoder, texts: &[&str]) -> Vec<MaskedExample> {
    texts.iter().map(|t| enc.single(NodeType::Poi, t)).collect()
}

impl Geocoder {
    pub fn predict(&self, enc: &TextEncoder, texts: &[&str]) -> Result<Vec<Result<GeocodePrediction, TaskError>>, TaskError> {
        let mut out = Vec::with_capacity(texts.len());
        for part in texts.chunks(CHUNK) {
            for probs in self.model.geocode_probs(&poi_examples(enc, part))? {
                out.push(decode_prediction(&argmax_code(&probs)));
            }
        }
        Ok(out)
    }

    /// Acc@`n_km`; undecodable predictions count as misses. Also returns
    /// how many predictions needed the fallback.
    pub fn evaluate(&self, enc: &TextEncoder, data: &[GeocodingRecord], n_km: f64) -> Result<(MetricReport, usize), TaskError> {
        if data.is_empty() {
            return Err(TaskError::EmptyDataset);
        }
        let texts: Vec<&str> = data.iter().map(|r| r.text.as_str()).collect();
        let preds = self.predict(enc, &texts)?;
        let (mut hits, mut fallbacks) = (0, 0);
        for (index, (p, r)) in preds.iter().zip(data).enumerate() {
            let gold = LatLng::new(r.lat, r.lng).map_err(|e| TaskError::Example { index, msg: e.to_string() })?;
            if let Ok(p) = p {
                fallbacks += usize::from(p.fallback);
                hits += usize::from(haversine_km(&p.location, &gold) < n_km);
            }
        }
        Ok((MetricReport::new(&format!("acc@{n_km}km"), hits as f64 / data.len() as f64, data.len()), fallbacks))
    }
}

/// Trains the geocoding head (and the encoder, unless frozen) on text to
/// location pairs; returns the geocoder and its training Acc@3 km.
pub fn finetune_geocoder(model: Model, enc: &TextEncoder, data: &[GeocodingRecord], cfg: &FineTuneConfig) -> Result<(Geocoder, MetricReport), TaskError> {
    if data.is_empty() {
        return Err(TaskError::EmptyDataset);
    }
    let mut examples = Vec::with_capacity(data.len());
    for (index, r) in data.iter().enumerate() {
        let point = LatLng::new(r.lat, r.lng).map_err(|e| TaskError::Example { index, msg: e.to_string() })?;
        let mut ex = enc.single(NodeType::Poi, &r.text);
        ex.nodes[0].geocode = Some(geocode_point(point));
        examples.push(ex);
    }
    let mut geo = Geocoder { model };
    let mut store = std::mem::take(&mut geo.model.store);
    let head = [store.id("geo.w")?];
    let weights = LossWeights { mlm: 0.0, geo: 1.0, geocoding: true };
    train_loop(&mut store, cfg, examples.len(), &head, |g, s, idx| {
        let picked: Vec<MaskedExample> = idx.iter().map(|&i| examples[i].clone()).collect();
        let batch = Batch::new(&picked, &geo.model.config, true)?;
        Ok(geo.model.forward(s, g, &batch, &weights)?.loss)
    })?;
    geo.model.store = store;
    let (acc, _) = geo.evaluate(enc, data, 3.0)?;
    Ok((geo, acc))
}
