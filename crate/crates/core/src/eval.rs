//! Metrics, rollout evaluation, AUC-by-step curves and embedding export.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::augment::AugmentedSample;
use crate::corpus::Dataset;
use crate::discriminator::DiscriminatorModel;
use crate::error::{Error, Result};
use crate::generator::{GeneratorModel, Mode};

/// Rank-based ROC AUC with ties counted as half.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Contract(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based ranks of positives, tied groups sharing their mean rank.
    // Ranks are kept doubled so the sum stays an exact integer.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let doubled_mean = (i + 1 + j + 1) as u128;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        doubled_rank_sum += doubled_mean * pos_in_group;
        i = j + 1;
    }
    let n_pos = n_pos as u128;
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg as u128) as f64)
}

/// Fraction of predictions where `score >= threshold` agrees with the label.
pub fn acc(labels: &[u8], scores: &[f64], threshold: f64) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Contract(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of no predictions".into()));
    }
    let hits = labels
        .iter()
        .zip(scores)
        .filter(|(&l, &s)| u8::from(s >= threshold) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Pooled step predictions of a dataset rollout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
    /// 1-based step index within the sequence.
    pub positions: Vec<usize>,
    /// Index of the owning sequence in the dataset.
    pub sequence: Vec<usize>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Rolls out every sequence. Multi-step rollouts never see the responses;
/// they serve only as labels.
pub fn predict(model: &GeneratorModel, dataset: &Dataset, mode: Mode) -> Result<Predictions> {
    let per_seq: Vec<Vec<f64>> = dataset
        .sequences
        .par_iter()
        .map(|s| {
            let qs = s.questions();
            let rs = s.responses();
            let responses = match mode {
                Mode::SingleStep => Some(rs.as_slice()),
                Mode::MultiStep => None,
            };
            model.rollout(&qs, responses, mode).map(|r| r.probs)
        })
        .collect::<Result<_>>()?;
    let mut out = Predictions::default();
    for (i, (s, probs)) in dataset.sequences.iter().zip(per_seq).enumerate() {
        for (t, (st, p)) in s.steps.iter().zip(probs).enumerate() {
            out.labels.push(st.response);
            out.scores.push(p);
            out.positions.push(t + 1);
            out.sequence.push(i);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthBucket {
    pub lo: usize,
    pub hi: usize,
    /// Whether `hi` itself belongs to the bucket (only for the last one).
    pub inclusive: bool,
    pub count: usize,
    /// `None` when the bucket holds a single class.
    pub auc: Option<f64>,
}

impl fmt::Display for LengthBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let close = if self.inclusive { ']' } else { ')' };
        write!(f, "[{},{}{close}", self.lo, self.hi)
    }
}

fn check_edges(edges: &[usize]) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract(
            "bucket edges must be at least two strictly increasing values".into(),
        ));
    }
    Ok(())
}

/// Buckets `[e0,e1), [e1,e2), …, [e_{n-1}, e_n]` over step positions, with AUC
/// per bucket. Positions outside every bucket are ignored.
pub fn bucket_auc(preds: &Predictions, edges: &[usize]) -> Result<Vec<LengthBucket>> {
    check_edges(edges)?;
    let n = edges.len() - 1;
    let mut labels = vec![Vec::new(); n];
    let mut scores = vec![Vec::new(); n];
    for ((&pos, &l), &s) in preds.positions.iter().zip(&preds.labels).zip(&preds.scores) {
        let b = edges.partition_point(|&e| e <= pos);
        let b = if pos == edges[n] { n } else { b };
        if (1..=n).contains(&b) {
            labels[b - 1].push(l);
            scores[b - 1].push(s);
        }
    }
    Ok((0..n)
        .map(|b| LengthBucket {
            lo: edges[b],
            hi: edges[b + 1],
            inclusive: b + 1 == n,
            count: labels[b].len(),
            auc: auc(&labels[b], &scores[b]).ok(),
        })
        .collect())
}

pub fn auc_by_length(model: &GeneratorModel, dataset: &Dataset, mode: Mode, edges: &[usize]) -> Result<Vec<LengthBucket>> {
    check_edges(edges)?;
    bucket_auc(&predict(model, dataset, mode)?, edges)
}

pub fn write_buckets_csv<W: Write>(buckets: &[LengthBucket], mut w: W) -> Result<()> {
    writeln!(w, "lo,hi,count,auc")?;
    for b in buckets {
        let auc = b.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(w, "{},{},{},{}", b.lo, b.hi, b.count, auc)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: Mode,
    pub acc: f64,
    pub auc: f64,
    pub n_predictions: usize,
    pub buckets: Vec<LengthBucket>,
    /// Macro average over students with both classes present, if requested.
    pub per_student_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub edges: Vec<usize>,
    pub per_student: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            edges: vec![1, 50, 100, 150, 200],
            per_student: false,
        }
    }
}

pub fn evaluate(model: &GeneratorModel, dataset: &Dataset, mode: Mode) -> Result<EvalReport> {
    evaluate_with(model, dataset, mode, &EvalOptions::default())
}

pub fn evaluate_with(model: &GeneratorModel, dataset: &Dataset, mode: Mode, opts: &EvalOptions) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    let preds = predict(model, dataset, mode)?;
    report_from(&preds, mode, opts)
}

pub fn report_from(preds: &Predictions, mode: Mode, opts: &EvalOptions) -> Result<EvalReport> {
    let per_student_auc = if opts.per_student {
        Some(macro_auc(preds)?)
    } else {
        None
    };
    Ok(EvalReport {
        mode,
        acc: acc(&preds.labels, &preds.scores, 0.5)?,
        auc: auc(&preds.labels, &preds.scores)?,
        n_predictions: preds.len(),
        buckets: bucket_auc(preds, &opts.edges)?,
        per_student_auc,
    })
}

fn macro_auc(preds: &Predictions) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut start = 0;
    while start < preds.len() {
        let id = preds.sequence[start];
        let end = start + preds.sequence[start..].iter().take_while(|&&s| s == id).count();
        if let Ok(a) = auc(&preds.labels[start..end], &preds.scores[start..end]) {
            sum += a;
            n += 1;
        }
        start = end;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no student has both response classes".into()));
    }
    Ok(sum / n as f64)
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode: {}", self.mode)?;
        writeln!(f, "predictions: {}", self.n_predictions)?;
        writeln!(f, "acc: {:.4}", self.acc)?;
        writeln!(f, "auc: {:.4}", self.auc)?;
        if let Some(a) = self.per_student_auc {
            writeln!(f, "per-student auc: {a:.4}")?;
        }
        for b in &self.buckets {
            match b.auc {
                Some(a) => writeln!(f, "  steps {b}: auc {a:.4} (n={})", b.count)?,
                None => writeln!(f, "  steps {b}: auc n/a (n={})", b.count)?,
            }
        }
        Ok(())
    }
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mode,acc,auc,n_predictions")?;
        writeln!(w, "{},{:.6},{:.6},{}", self.mode, self.acc, self.auc, self.n_predictions)?;
        Ok(())
    }
}

/// One row per sample: provenance tag, then the last-position `D_o` row.
pub fn export_embeddings<W: Write>(disc: &DiscriminatorModel, samples: &[AugmentedSample], mut w: W) -> Result<()> {
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            let scored = disc.score_prefixes(&s.questions(), &s.responses())?;
            Ok(scored.d_o.row(scored.d_o.rows - 1).to_vec())
        })
        .collect::<Result<_>>()?;
    let width = disc.dims.model_width();
    let header: Vec<String> = (0..width).map(|i| format!("d{i}")).collect();
    writeln!(w, "provenance,{}", header.join(","))?;
    for (s, row) in samples.iter().zip(rows) {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{},{}", s.provenance, vals.join(","))?;
    }
    Ok(())
}
