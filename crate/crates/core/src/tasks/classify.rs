use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{train_loop, FineTuneConfig, LabeledSequence, MetricReport, TaskError, TextEncoder};
use crate::geograph::NodeType;
use crate::masker::MaskedExample;
use crate::model::{Batch, Model};
use crate::numerics::{Graph, ParamId, ParameterStore, Var};

const CHUNK: usize = 64;

/// A linear layer over the single-node `[CLS]` encoding.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub model: Model,
    pub classes: usize,
    w: ParamId,
    b: ParamId,
}

impl Classifier {
    /// Adds a fresh `cls.w`/`cls.b` head to the model's store.
    pub fn new(mut model: Model, classes: usize, seed: u64) -> Result<Self, TaskError> {
        let d = model.config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = model.store.add_uniform("cls.w", d, classes, model.config.init_std * 3f64.sqrt(), &mut rng)?;
        let b = model.store.add_const("cls.b", 1, classes, 0.0)?;
        Ok(Self { model, classes, w, b })
    }

    /// Binds an existing head, e.g. one restored from a checkpoint.
    pub fn from_model(model: Model) -> Result<Self, TaskError> {
        let w = model.store.id("cls.w")?;
        let b = model.store.id("cls.b")?;
        let classes = model.store.value(w).ncols();
        Ok(Self { model, classes, w, b })
    }

    fn logits(&self, s: &ParameterStore, g: &mut Graph, examples: &[MaskedExample]) -> Result<Var, TaskError> {
        let batch = Batch::new(examples, &self.model.config, false)?;
        let x = self.model.encode(s, g, &batch, &mut Vec::new())?;
        let h = g.rows(x, &batch.cls_rows())?;
        let (w, b) = (g.param(s, self.w), g.param(s, self.b));
        let y = g.matmul(h, w)?;
        Ok(g.add_row(y, b)?)
    }

    pub fn predict(&self, examples: &[MaskedExample]) -> Result<Vec<usize>, TaskError> {
        let mut out = Vec::with_capacity(examples.len());
        for part in examples.chunks(CHUNK) {
            let mut g = Graph::new();
            let l = self.logits(&self.model.store, &mut g, part)?;
            for row in g.value(l).rows() {
                out.push((0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best }));
            }
        }
        Ok(out)
    }

    pub fn accuracy(&self, examples: &[MaskedExample], labels: &[usize]) -> Result<MetricReport, TaskError> {
        if examples.is_empty() {
            return Err(TaskError::EmptyDataset);
        }
        let pred = self.predict(examples)?;
        let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(MetricReport::new("accuracy", correct as f64 / examples.len() as f64, examples.len()))
    }

    pub fn evaluate(&self, enc: &TextEncoder, data: &[LabeledSequence]) -> Result<MetricReport, TaskError> {
        let (examples, labels) = class_examples(enc, data, self.classes)?;
        self.accuracy(&examples, &labels)
    }
}

/// Encodes and labels a classification or matching dataset.
pub(crate) fn class_examples(enc: &TextEncoder, data: &[LabeledSequence], classes: usize) -> Result<(Vec<MaskedExample>, Vec<usize>), TaskError> {
    let mut examples = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (index, d) in data.iter().enumerate() {
        let c = d.label.class().filter(|&c| c < classes).ok_or_else(|| TaskError::Example { index, msg: format!("label {:?} is not one of {classes} classes", d.label) })?;
        examples.push(enc.single(NodeType::Query, &d.text));
        labels.push(c);
    }
    Ok((examples, labels))
}

/// Trains a fresh head (and the encoder, unless frozen) with mean
/// cross-entropy; returns the classifier and its training accuracy.
pub fn finetune_classifier(model: Model, enc: &TextEncoder, data: &[LabeledSequence], classes: usize, cfg: &FineTuneConfig) -> Result<(Classifier, MetricReport), TaskError> {
    if data.is_empty() {
        return Err(TaskError::EmptyDataset);
    }
    let (examples, labels) = class_examples(enc, data, classes)?;
    let mut clf = Classifier::new(model, classes, cfg.seed)?;
    let mut store = std::mem::take(&mut clf.model.store);
    let head = [clf.w, clf.b];
    train_loop(&mut store, cfg, examples.len(), &head, |g, s, idx| {
        let picked: Vec<MaskedExample> = idx.iter().map(|&i| examples[i].clone()).collect();
        let gold: Vec<Option<usize>> = idx.iter().map(|&i| Some(labels[i])).collect();
        let logits = clf.logits(s, g, &picked)?;
        let ce = g.cross_entropy(logits, &gold)?;
        Ok(g.scale(ce, 1.0 / idx.len() as f64))
    })?;
    clf.model.store = store;
    let acc = clf.accuracy(&examples, &labels)?;
    Ok((clf, acc))
}
