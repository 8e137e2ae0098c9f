//! Binary classification metrics: cross-entropy, per-class and macro F1,
//! and rank AUC.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// 0 or 1.
    pub y: u8,
    /// Predicted probability of class 1.
    pub y_hat: f64,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, y: u8, y_hat: f64) -> Result<Self> {
        let id = id.into();
        if y > 1 {
            return Err(Error::Config(format!("{id}: label {y} is not 0/1")));
        }
        if !(0.0..=1.0).contains(&y_hat) {
            return Err(Error::Config(format!("{id}: probability {y_hat} outside [0, 1]")));
        }
        Ok(Self { id, y, y_hat })
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[eps, 1 - eps]`.
pub fn bce_loss(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("prediction list"));
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            let p = r.y_hat.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let y = r.y as f64;
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-sum / records.len() as f64)
}

/// Positive-class confusion counts. Counts add, so shards merge by summing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_records(records: &[PredictionRecord], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for r in records {
            match (r.y == 1, r.y_hat >= threshold) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn merge(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    /// Same matrix seen from the negative class.
    pub fn swapped(self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some ratio was 0/0 and was taken as 0.
    pub undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl ClassScore {
    pub fn from_confusion(c: Confusion) -> Self {
        let (precision, u1) = ratio(c.tp, c.tp + c.fp);
        let (recall, u2) = ratio(c.tp, c.tp + c.fn_);
        let (f1, u3) = if precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), false)
        } else {
            (0.0, true)
        };
        Self {
            precision,
            recall,
            f1,
            undefined: u1 || u2 || u3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub threshold: f64,
    pub confusion: Confusion,
    pub positive: ClassScore,
    pub negative: ClassScore,
    pub macro_f1: f64,
}

impl F1Report {
    pub fn from_confusion(confusion: Confusion, threshold: f64) -> Self {
        let positive = ClassScore::from_confusion(confusion);
        let negative = ClassScore::from_confusion(confusion.swapped());
        Self {
            threshold,
            confusion,
            positive,
            negative,
            macro_f1: (positive.f1 + negative.f1) / 2.0,
        }
    }
}

pub fn f1_score(records: &[PredictionRecord], threshold: f64) -> Result<F1Report> {
    if records.is_empty() {
        return Err(Error::EmptyInput("prediction list"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(F1Report::from_confusion(
        Confusion::from_records(records, threshold),
        threshold,
    ))
}

/// Mann-Whitney AUC with mid-ranks for ties. `None` when one class is absent.
pub fn rank_auc(records: &[PredictionRecord]) -> Option<f64> {
    let n_pos = records.iter().filter(|r| r.y == 1).count();
    let n_neg = records.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<&PredictionRecord> = records.iter().collect();
    order.sort_by(|a, b| a.y_hat.total_cmp(&b.y_hat));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && order[j + 1].y_hat == order[i].y_hat {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid_rank * order[i..=j].iter().filter(|r| r.y == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Collapses slice-level records to one record per scan by averaging
/// probabilities. The scan key is the id up to the first `/` (the whole id
/// when there is none). Members of a scan must agree on the label.
pub fn aggregate_by_scan(records: &[PredictionRecord]) -> Result<Vec<PredictionRecord>> {
    let mut groups: BTreeMap<&str, (u8, f64, usize)> = BTreeMap::new();
    for r in records {
        let key = r.id.split('/').next().unwrap_or(&r.id);
        let entry = groups.entry(key).or_insert((r.y, 0.0, 0));
        if entry.0 != r.y {
            return Err(Error::IdMismatch(format!("scan {key} mixes labels")));
        }
        entry.1 += r.y_hat;
        entry.2 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(k, (y, sum, n))| PredictionRecord {
            id: k.to_string(),
            y,
            y_hat: sum / n as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: u32,
    pub count: usize,
    pub bce: f64,
    pub f1: F1Report,
    pub auc: Option<f64>,
    pub scan_level: bool,
}

pub fn evaluate(records: &[PredictionRecord], threshold: f64, scan_level: bool) -> Result<MetricsReport> {
    let owned;
    let records = if scan_level {
        owned = aggregate_by_scan(records)?;
        &owned[..]
    } else {
        records
    };
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        a.id.cmp(&b.id)
            .then(a.y.cmp(&b.y))
            .then(a.y_hat.total_cmp(&b.y_hat))
    });
    Ok(MetricsReport {
        schema: 1,
        count: sorted.len(),
        bce: bce_loss(&sorted)?,
        f1: f1_score(&sorted, threshold)?,
        auc: rank_auc(&sorted),
        scan_level,
    })
}

fn read_rows(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((n + 1, rec));
    }
    Ok(rows)
}

fn is_header(rec: &csv::StringRecord) -> bool {
    rec.len() < 2 || rec.get(rec.len() - 1).map_or(true, |f| f.parse::<f64>().is_err())
}

fn parse_label(path: &Path, line: usize, s: &str) -> Result<u8> {
    match s.parse::<crate::volume::Label>() {
        Ok(crate::volume::Label::Positive) => Ok(1),
        Ok(crate::volume::Label::Negative) => Ok(0),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("label {s:?} is not 0/1"),
        }),
    }
}

/// Reads `id,label,probability` rows, or `id,probability` rows joined with
/// an `id,label` file. A non-numeric first row is treated as a header.
pub fn read_predictions(predictions: &Path, labels: Option<&Path>) -> Result<Vec<PredictionRecord>> {
    let label_map: Option<BTreeMap<String, u8>> = match labels {
        Some(lp) => {
            let mut map = BTreeMap::new();
            for (idx, (line, rec)) in read_rows(lp)?.into_iter().enumerate() {
                if idx == 0 && rec.get(1).map_or(false, |f| f.parse::<crate::volume::Label>().is_err()) {
                    continue;
                }
                let id = rec.get(0).unwrap_or_default().to_string();
                let lab = rec.get(1).ok_or_else(|| Error::Parse {
                    path: lp.to_path_buf(),
                    line,
                    msg: "expected id,label".into(),
                })?;
                if map.insert(id.clone(), parse_label(lp, line, lab)?).is_some() {
                    return Err(Error::IdMismatch(format!("duplicate label for {id}")));
                }
            }
            Some(map)
        }
        None => None,
    };

    let mut out = Vec::new();
    for (idx, (line, rec)) in read_rows(predictions)?.into_iter().enumerate() {
        if idx == 0 && is_header(&rec) {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: predictions.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let id = rec.get(0).unwrap_or_default().to_string();
        let prob_field = rec.get(rec.len() - 1).ok_or_else(|| bad("missing probability"))?;
        let y_hat: f64 = prob_field.parse().map_err(|_| bad("probability is not a number"))?;
        let y = match (&label_map, rec.len()) {
            (Some(map), _) => *map
                .get(&id)
                .ok_or_else(|| Error::IdMismatch(format!("{id} has no label")))?,
            (None, 3..) => parse_label(predictions, line, rec.get(1).unwrap_or_default())?,
            (None, _) => return Err(bad("expected id,label,probability")),
        };
        out.push(PredictionRecord::new(id, y, y_hat).map_err(|e| bad(&e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("predictions file"));
    }
    if let Some(map) = &label_map {
        if map.len() != out.len() {
            let seen: std::collections::BTreeSet<&str> = out.iter().map(|r| r.id.as_str()).collect();
            let missing: Vec<&str> = map.keys().map(|k| k.as_str()).filter(|k| !seen.contains(k)).collect();
            return Err(Error::IdMismatch(format!(
                "{} labelled ids without predictions (first: {:?})",
                missing.len(),
                missing.first()
            )));
        }
    }
    Ok(out)
}
