//! Frame-level scoring: confusion matrix, per-class F1 and macro F1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::label_space::CompoundSet;

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::Argument("confusion matrix must be square".into()));
        }
        Ok(Self { counts })
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::new(classes);
        for (t, p) in pairs {
            cm.add(t, p);
        }
        cm
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

/// `2PR / (P + R)`; zero whenever precision or recall is undefined or both
/// are zero.
pub fn f1_per_class(cm: &ConfusionMatrix, c: usize) -> f64 {
    let tp = cm.get(c, c) as f64;
    let (col, row) = (cm.col_sum(c), cm.row_sum(c));
    let precision = if col == 0 { 0.0 } else { tp / col as f64 };
    let recall = if row == 0 { 0.0 } else { tp / row as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Unweighted mean of per-class F1 over every class, including classes with
/// no support.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let k = cm.classes();
    if k == 0 {
        return 0.0;
    }
    (0..k).map(|c| f1_per_class(cm, c)).sum::<f64>() / k as f64
}

pub type FrameKey = (String, usize);

/// Read a `clip_id,frame_index,label_name` file into class indices.
pub fn read_label_csv<R: Read>(reader: R, set: &CompoundSet) -> Result<BTreeMap<FrameKey, usize>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["clip_id", "frame_index", "label_name"]) {
        return Err(Error::Ingestion {
            row: 1,
            message: "header must be `clip_id,frame_index,label_name`".into(),
        });
    }
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Ingestion { row: line, message };
        let frame: usize = row[1]
            .parse()
            .map_err(|_| err(format!("bad frame index `{}`", &row[1])))?;
        let label = set.find_by_name(&row[2]).map_err(|e| err(e.to_string()))?;
        if out
            .insert((row[0].to_string(), frame), label.index)
            .is_some()
        {
            return Err(err(format!("duplicate key ({}, {frame})", &row[0])));
        }
    }
    Ok(out)
}

pub fn write_label_csv<W: Write>(
    writer: W,
    set: &CompoundSet,
    rows: impl IntoIterator<Item = (String, usize, usize)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["clip_id", "frame_index", "label_name"])?;
    let names = set.names();
    for (clip, frame, class) in rows {
        w.write_record([clip.as_str(), &frame.to_string(), &names[class]])?;
    }
    w.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, f64>,
    pub confusion: Vec<Vec<u64>>,
    #[serde(skip)]
    pub class_names: Vec<String>,
    #[serde(skip)]
    pub frames: u64,
}

impl Report {
    pub fn from_confusion(cm: &ConfusionMatrix, set: &CompoundSet) -> Self {
        let class_names = set.names();
        let per_class = class_names
            .iter()
            .enumerate()
            .map(|(c, n)| (n.clone(), f1_per_class(cm, c)))
            .collect();
        Self {
            macro_f1: macro_f1(cm),
            per_class,
            confusion: cm.rows().to_vec(),
            class_names,
            frames: cm.total(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Human-readable summary; the last line is `macro_f1=<value>`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames scored: {}", self.frames);
        for name in &self.class_names {
            let _ = writeln!(s, "{name:<24} F1 {:.4}", self.per_class[name]);
        }
        let _ = writeln!(s, "confusion (rows = truth, cols = prediction):");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            let _ = writeln!(s, "{}", cells.join(""));
        }
        let _ = write!(s, "macro_f1={}", self.macro_f1);
        s
    }
}

pub fn score_maps(
    pred: &BTreeMap<FrameKey, usize>,
    truth: &BTreeMap<FrameKey, usize>,
    set: &CompoundSet,
) -> Result<Report> {
    let mismatched: Vec<String> = pred
        .keys()
        .filter(|k| !truth.contains_key(*k))
        .map(|(c, f)| format!("({c}, {f}) only in predictions"))
        .chain(
            truth
                .keys()
                .filter(|k| !pred.contains_key(*k))
                .map(|(c, f)| format!("({c}, {f}) only in truth")),
        )
        .take(10)
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::Data(format!(
            "prediction and truth keys differ: {}",
            mismatched.join("; ")
        )));
    }
    let cm = ConfusionMatrix::from_pairs(set.len(), truth.iter().map(|(k, &t)| (t, pred[k])));
    Ok(Report::from_confusion(&cm, set))
}

pub fn score_files(pred_csv: &Path, truth_csv: &Path, set: &CompoundSet) -> Result<Report> {
    let open = |p: &Path| std::fs::File::open(p).map_err(|e| Error::io(p, e));
    let pred = read_label_csv(open(pred_csv)?, set)?;
    let truth = read_label_csv(open(truth_csv)?, set)?;
    score_maps(&pred, &truth, set)
}
