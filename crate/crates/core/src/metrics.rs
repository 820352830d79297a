//! Confusion matrices, per-class precision/recall/F1, macro-averaged F1 and
//! token-level language-id accuracy.
//!
//! Every 0/0 ratio is defined as 0. Macro F1 averages over all classes,
//! including those with no gold examples.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentiment, TweetRecord};
use crate::error::{Error, Result};
use crate::model::{predict_batch, ModelWeights};
use crate::tensor::IGNORE_INDEX;
use crate::vocab::{align_tags, encode, Vocabulary};

/// Rows are gold classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn add(&mut self, gold: usize, pred: usize) -> Result<()> {
        let n = self.num_classes();
        if gold >= n || pred >= n {
            return Err(Error::Contract(format!("class pair ({gold}, {pred}) outside {n} classes")));
        }
        self.counts[gold][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.predicted(class))
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.support(class))
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> f64 {
        let correct = (0..self.num_classes()).map(|c| self.counts[c][c]).sum();
        ratio(correct, self.total())
    }
}

/// Tallies gold/predicted class ids over `num_classes` classes.
pub fn confusion(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::new((0..num_classes).map(|c| c.to_string()).collect());
    for (&g, &p) in gold.iter().zip(pred) {
        cm.add(g, p)?;
    }
    Ok(cm)
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let n = cm.num_classes();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|c| cm.f1(c)).sum::<f64>() / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub langid_accuracy: Option<f64>,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(cm: ConfusionMatrix, langid_accuracy: Option<f64>) -> Self {
        let per_class = (0..cm.num_classes())
            .map(|c| ClassScores {
                label: cm.labels()[c].clone(),
                precision: cm.precision(c),
                recall: cm.recall(c),
                f1: cm.f1(c),
                support: cm.support(c),
            })
            .collect();
        Self {
            examples: cm.total(),
            accuracy: cm.accuracy(),
            macro_f1: macro_f1(&cm),
            langid_accuracy,
            per_class,
            confusion: cm,
        }
    }

    /// Flat `key value` lines, six decimals for ratios.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "examples {}", self.examples);
        let _ = writeln!(out, "accuracy {:.6}", self.accuracy);
        let _ = writeln!(out, "macro_f1 {:.6}", self.macro_f1);
        if let Some(acc) = self.langid_accuracy {
            let _ = writeln!(out, "langid_accuracy {acc:.6}");
        }
        for c in &self.per_class {
            let _ = writeln!(out, "{}_precision {:.6}", c.label, c.precision);
            let _ = writeln!(out, "{}_recall {:.6}", c.label, c.recall);
            let _ = writeln!(out, "{}_f1 {:.6}", c.label, c.f1);
            let _ = writeln!(out, "{}_support {}", c.label, c.support);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Sentiment and language-id tallies from raw predictions. Language
/// positions whose gold id is [`IGNORE_INDEX`] are skipped.
pub fn report_from_predictions(
    gold: &[Sentiment],
    pred: &[Sentiment],
    langid_gold: &[Vec<usize>],
    langid_pred: &[Vec<usize>],
) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(Sentiment::ALL.iter().map(|s| s.to_string()).collect());
    if gold.len() != pred.len() {
        return Err(Error::Contract("gold and predicted sentiments differ in length".into()));
    }
    for (g, p) in gold.iter().zip(pred) {
        cm.add(g.id(), p.id())?;
    }
    let (mut hits, mut seen) = (0u64, 0u64);
    for (gs, ps) in langid_gold.iter().zip(langid_pred) {
        for (&g, &p) in gs.iter().zip(ps) {
            if g != IGNORE_INDEX {
                seen += 1;
                hits += u64::from(g == p);
            }
        }
    }
    let langid = (seen > 0).then(|| hits as f64 / seen as f64);
    Ok(EvalReport::from_confusion(cm, langid))
}

/// Argmax decoding of the model over a labeled dataset.
pub fn evaluate(weights: &ModelWeights, dataset: &[TweetRecord], vocab: &Vocabulary) -> Result<EvalReport> {
    let max_len = weights.config().max_len;
    let mut gold = Vec::with_capacity(dataset.len());
    let mut inputs = Vec::with_capacity(dataset.len());
    let mut lang_gold = Vec::with_capacity(dataset.len());
    for r in dataset {
        let s = r
            .sentiment
            .ok_or_else(|| Error::Contract(format!("record {} has no sentiment label", r.id)))?;
        gold.push(s);
        let e = encode(&r.tokens, vocab, max_len);
        let n = e.real_len();
        let tags = align_tags(&r.tags, r.tokens.len(), max_len)?;
        lang_gold.push(tags[..n].to_vec());
        inputs.push((e.ids, e.attention_mask));
    }
    let preds = predict_batch(weights, &inputs)?;
    let pred: Vec<Sentiment> = preds
        .iter()
        .map(|p| Sentiment::from_id(p.sentiment).unwrap_or(Sentiment::Neutral))
        .collect();
    let lang_pred: Vec<Vec<usize>> = preds.into_iter().map(|p| p.langids).collect();
    report_from_predictions(&gold, &pred, &lang_gold, &lang_pred)
}
