//! Evaluation metrics: per-attribute / weighted / combined accuracy,
//! train-vs-test generalization matrices, transfer-attack success rates,
//! and the attribute-combination confusion matrix.

use crate::attack::{attack_batch, AttackSpec};
use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::parser::{predict, MpnModel};
use crate::redset::{AttributeSchema, ParsingDataset, ParsingExample};
use crate::tensor::Real;
use crate::victim::{argmax, Zoo};
use crate::diffnet::Network;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeAccuracies {
    pub names: Vec<String>,
    pub ta: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub samples: usize,
}

/// TA(i) = fraction of samples whose head-i prediction is correct.
pub fn attribute_accuracy(
    predictions: &[Vec<usize>],
    labels: &[Vec<usize>],
    schema: &AttributeSchema,
) -> Result<AttributeAccuracies> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::config(
            "attribute_accuracy needs equal, nonempty prediction/label sets",
        ));
    }
    let counts = schema.class_counts();
    let heads = counts.len();
    let mut correct = vec![0usize; heads];
    for (p, y) in predictions.iter().zip(labels.iter()) {
        if p.len() != heads || y.len() != heads {
            return Err(Error::config("tuple length does not match schema"));
        }
        for h in 0..heads {
            if p[h] == y[h] {
                correct[h] += 1;
            }
        }
    }
    let n = predictions.len();
    Ok(AttributeAccuracies {
        names: schema.head_names().iter().map(|s| s.to_string()).collect(),
        ta: correct.iter().map(|&c| c as f64 / n as f64).collect(),
        class_counts: counts,
        samples: n,
    })
}

/// `sum_i N_i TA(i) / sum_i N_i`.
pub fn weighted_accuracy(acc: &AttributeAccuracies) -> f64 {
    let num: f64 = acc
        .ta
        .iter()
        .zip(&acc.class_counts)
        .map(|(&t, &n)| t * n as f64)
        .sum();
    let den: f64 = acc.class_counts.iter().map(|&n| n as f64).sum();
    num / den
}

/// Fraction of samples with every head simultaneously correct.
pub fn combined_accuracy(predictions: &[Vec<usize>], labels: &[Vec<usize>]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::config(
            "combined_accuracy needs equal, nonempty prediction/label sets",
        ));
    }
    let hits = predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Chance baselines from the schema: per-head 1/N_i, weighted mix, and the
/// combined 1/prod N_i.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChanceBaselines {
    pub per_head: Vec<f64>,
    pub weighted: f64,
    pub combined: f64,
}

pub fn chance_baselines(schema: &AttributeSchema) -> ChanceBaselines {
    let counts = schema.class_counts();
    let per_head: Vec<f64> = counts.iter().map(|&n| 1.0 / n as f64).collect();
    let den: f64 = counts.iter().map(|&n| n as f64).sum();
    let weighted = counts.len() as f64 / den;
    ChanceBaselines {
        weighted,
        combined: 1.0 / schema.combo_count() as f64,
        per_head,
    }
}

/// Run the parser over a dataset in chunks and collect argmax tuples.
pub fn dataset_predictions(
    mpn: &MpnModel,
    pen: Option<&Network<Real>>,
    ds: &ParsingDataset,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    if ds.examples.is_empty() {
        return Err(Error::config("empty evaluation dataset"));
    }
    let mut preds = Vec::with_capacity(ds.examples.len());
    let mut labels = Vec::with_capacity(ds.examples.len());
    for chunk in ds.examples.chunks(256) {
        let refs: Vec<&ParsingExample> = chunk.iter().collect();
        let (batch, _) = crate::parser::stack_examples(&refs)?;
        let out = predict(mpn, pen, &batch)?;
        preds.extend(out.argmax);
        labels.extend(chunk.iter().map(|e| e.y.clone()));
    }
    Ok((preds, labels))
}

/// Full report on one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub attribute: AttributeAccuracies,
    pub weighted: f64,
    pub combined: f64,
    pub chance: ChanceBaselines,
}

pub fn evaluate_mpn(
    mpn: &MpnModel,
    pen: Option<&Network<Real>>,
    ds: &ParsingDataset,
) -> Result<EvalReport> {
    let (preds, labels) = dataset_predictions(mpn, pen, ds)?;
    let attribute = attribute_accuracy(&preds, &labels, &ds.schema)?;
    let weighted = weighted_accuracy(&attribute);
    let combined = combined_accuracy(&preds, &labels)?;
    Ok(EvalReport {
        attribute,
        weighted,
        combined,
        chance: chance_baselines(&ds.schema),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralizationMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// entries[r][c]; None marks a failed cell.
    pub entries: Vec<Vec<Option<f64>>>,
    pub metric: String,
    pub provenance: Vec<String>,
}

impl GeneralizationMatrix {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.entries[r][c]
    }

    /// CSV with labeled rows/columns; percentages rounded to 2 decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{}\\{}", self.metric, ""));
        for c in &self.col_labels {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (r, row) in self.entries.iter().enumerate() {
            s.push_str(&self.row_labels[r]);
            for e in row {
                s.push(',');
                match e {
                    Some(v) => s.push_str(&format!("{:.2}", v * 100.0)),
                    None => s.push_str("NA"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        std::fs::write(stem.with_extension("csv"), self.to_csv())?;
        std::fs::write(
            stem.with_extension("json"),
            serde_json::to_vec_pretty(self)?,
        )?;
        Ok(())
    }
}

/// Build a row-trained / column-evaluated matrix. The model is trained once
/// per row and reused across columns, so a diagonal cell equals the
/// in-distribution run bit-exactly.
pub fn generalization_matrix<M>(
    row_labels: &[String],
    col_labels: &[String],
    metric: &str,
    mut train_row: impl FnMut(usize) -> Result<M>,
    mut eval_cell: impl FnMut(&M, usize) -> Result<f64>,
) -> Result<GeneralizationMatrix> {
    if row_labels.is_empty() || col_labels.is_empty() {
        return Err(Error::config("matrix needs nonempty labels"));
    }
    let mut entries = Vec::with_capacity(row_labels.len());
    let mut provenance = Vec::new();
    for r in 0..row_labels.len() {
        match train_row(r) {
            Ok(model) => {
                let mut row = Vec::with_capacity(col_labels.len());
                for c in 0..col_labels.len() {
                    match eval_cell(&model, c) {
                        Ok(v) => row.push(Some(v)),
                        Err(e) => {
                            provenance.push(format!(
                                "cell ({}, {}): {e}",
                                row_labels[r], col_labels[c]
                            ));
                            row.push(None);
                        }
                    }
                }
                entries.push(row);
            }
            Err(e) => {
                provenance.push(format!("row {}: {e}", row_labels[r]));
                entries.push(vec![None; col_labels.len()]);
            }
        }
    }
    Ok(GeneralizationMatrix {
        row_labels: row_labels.to_vec(),
        col_labels: col_labels.to_vec(),
        entries,
        metric: metric.to_string(),
        provenance,
    })
}

/// Transfer matrix: entry (s, t) = fraction of images where the attack
/// crafted on source s misclassifies target t. Diagonal = white-box ASR.
pub fn transfer_asr_matrix(
    zoo: &Zoo,
    spec: &AttackSpec,
    images: &LabeledImages,
) -> Result<GeneralizationMatrix> {
    if zoo.victims.is_empty() {
        return Err(Error::config("zoo has no trained victims"));
    }
    if images.images.is_empty() {
        return Err(Error::config("no evaluation images"));
    }
    let labels: Vec<String> = zoo
        .victims
        .iter()
        .map(|v| v.attributes.id())
        .collect();
    let n = images.images.len();
    let mut entries = Vec::with_capacity(zoo.victims.len());
    for (s, source) in zoo.victims.iter().enumerate() {
        let mut vspec = spec.clone();
        vspec.seed = crate::rng::stream_key(spec.seed, s as u64);
        let records = attack_batch(
            &source.network,
            &images.images,
            &images.labels,
            source.attributes,
            &vspec,
        )?;
        let mut row = Vec::with_capacity(zoo.victims.len());
        for target in &zoo.victims {
            let mut fooled = 0usize;
            for r in &records {
                let mut shape = vec![1];
                shape.extend_from_slice(r.x_adv.shape());
                let logits = target.network.predict(&r.x_adv.clone().reshape(shape))?;
                if argmax(logits.data()) != r.label {
                    fooled += 1;
                }
            }
            row.push(Some(fooled as f64 / n as f64));
        }
        entries.push(row);
    }
    Ok(GeneralizationMatrix {
        row_labels: labels.clone(),
        col_labels: labels,
        entries,
        metric: "transfer-asr".to_string(),
        provenance: vec![format!("attack {}", spec.hash())],
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// rows = true combination, columns = predicted; row-stochastic.
    pub rows: Vec<Vec<f64>>,
    pub row_counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn trace_weighted_diagonal(&self) -> f64 {
        let total: usize = self.row_counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| row[i] * self.row_counts[i] as f64)
            .sum::<f64>()
            / total as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            s.push_str(&self.labels[i]);
            for v in row {
                s.push_str(&format!(",{:.4}", v));
            }
            s.push('\n');
        }
        s
    }
}

/// Confusion over attribute combinations: row v = empirical distribution of
/// predicted combinations on examples whose true combination is v.
pub fn parsing_confusion(
    mpn: &MpnModel,
    pen: Option<&Network<Real>>,
    ds: &ParsingDataset,
) -> Result<ConfusionMatrix> {
    let schema = &ds.schema;
    let k = schema.combo_count();
    let (preds, labels) = dataset_predictions(mpn, pen, ds)?;
    let mut counts = vec![vec![0usize; k]; k];
    let mut row_counts = vec![0usize; k];
    for (p, y) in preds.iter().zip(labels.iter()) {
        for (&pi, &n) in p.iter().zip(schema.class_counts().iter()) {
            if pi >= n {
                return Err(Error::config("prediction outside schema"));
            }
        }
        let t = schema.combo_index(y);
        let q = schema.combo_index(p);
        counts[t][q] += 1;
        row_counts[t] += 1;
    }
    let rows = counts
        .iter()
        .zip(&row_counts)
        .map(|(row, &n)| {
            if n == 0 {
                let mut uniform = vec![0.0; k];
                // empty rows stay defined: uniform placeholder keeps them
                // row-stochastic
                for v in uniform.iter_mut() {
                    *v = 1.0 / k as f64;
                }
                uniform
            } else {
                row.iter().map(|&c| c as f64 / n as f64).collect()
            }
        })
        .collect();
    let labels = (0..k)
        .map(|i| {
            // decode the combination index back to a readable id
            let counts = schema.class_counts();
            let mut rem = i;
            let mut y = vec![0usize; counts.len()];
            for h in (0..counts.len()).rev() {
                y[h] = rem % counts[h];
                rem /= counts[h];
            }
            schema
                .decode(&y)
                .map(|a| a.id())
                .unwrap_or_else(|_| format!("combo{i}"))
        })
        .collect();
    Ok(ConfusionMatrix {
        labels,
        rows,
        row_counts,
    })
}
