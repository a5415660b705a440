//! Late fusion of two models' per-clip logits, with accuracy and GFLOP
//! bookkeeping for the combination.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{argmax, softmax};

/// Per-clip logits of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsTable {
    pub source: String,
    /// GFLOPs of one inference of the producing model, when known.
    pub gflops: Option<f64>,
    rows: Vec<(String, Vec<f64>)>,
}

impl LogitsTable {
    pub fn new(source: impl Into<String>, gflops: Option<f64>, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let c = rows.first().map_or(0, |r| r.1.len());
        if rows.is_empty() || c == 0 {
            return Err(Error::validation("logits table needs at least one non-empty row"));
        }
        let mut ids = HashSet::new();
        for (id, l) in &rows {
            if l.len() != c {
                return Err(Error::shape(format!("row {id} has {} logits, expected {c}", l.len())));
            }
            if !ids.insert(id.as_str()) {
                return Err(Error::validation(format!("duplicate id {id}")));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("row {id} has a non-finite logit")));
            }
        }
        Ok(LogitsTable {
            source: source.into(),
            gflops,
            rows,
        })
    }

    pub fn classes(&self) -> usize {
        self.rows[0].1.len()
    }

    pub fn rows(&self) -> &[(String, Vec<f64>)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.iter().find(|r| r.0 == id).map(|r| r.1.as_slice())
    }

    /// CSV with header `id,l0,...,l{C-1}`.
    pub fn from_csv(text: &str, source: impl Into<String>, gflops: Option<f64>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("id") || headers.len() < 2 {
            return Err(Error::Format("logits CSV header must be id,l0,...".into()));
        }
        for (i, h) in headers.iter().skip(1).enumerate() {
            if h != format!("l{i}") {
                return Err(Error::Format(format!("unexpected logits column {h:?}")));
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or_default().to_string();
            let logits = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("row {id}: {v:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((id, logits));
        }
        Self::new(source, gflops, rows)
    }

    pub fn load(path: impl AsRef<Path>, gflops: Option<f64>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&fs::read_to_string(path)?, path.display().to_string(), gflops)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id");
        for i in 0..self.classes() {
            let _ = write!(s, ",l{i}");
        }
        s.push('\n');
        for (id, l) in &self.rows {
            s.push_str(id);
            for v in l {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Ground-truth labels from a CSV with header `id,label`.
pub fn labels_from_csv(text: &str) -> Result<BTreeMap<String, usize>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "label"] {
        return Err(Error::Format("labels CSV header must be id,label".into()));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let v = rec.get(1).unwrap_or_default();
        let label = v
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("label of {id}: {v:?}: {e}")))?;
        if out.insert(id.clone(), label).is_some() {
            return Err(Error::validation(format!("duplicate label for {id}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionSpace {
    /// Weighted sum of raw logits.
    #[default]
    Logits,
    /// Weighted sum of softmax probabilities.
    Probabilities,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub fused: LogitsTable,
    /// Ids of `b` absent from `a`, and of `a` absent from `b`.
    pub missing_in_a: Vec<String>,
    pub missing_in_b: Vec<String>,
}

pub const DEFAULT_WEIGHT: f64 = 0.5;

/// `w·a + (1−w)·b` over the ids both tables share, in `a`'s row order.
pub fn late_fuse(a: &LogitsTable, b: &LogitsTable, w: f64, space: FusionSpace) -> Result<FusionOutcome> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("fusion weight {w} outside [0, 1]")));
    }
    if a.classes() != b.classes() {
        return Err(Error::shape(format!("{} vs {} classes", a.classes(), b.classes())));
    }
    let b_index: HashMap<&str, &[f64]> = b.rows.iter().map(|(id, l)| (id.as_str(), l.as_slice())).collect();
    let a_ids: HashSet<&str> = a.rows.iter().map(|(id, _)| id.as_str()).collect();
    let view = |l: &[f64]| match space {
        FusionSpace::Logits => l.to_vec(),
        FusionSpace::Probabilities => softmax(l),
    };
    let mut rows = Vec::new();
    let mut missing_in_b = Vec::new();
    for (id, la) in &a.rows {
        match b_index.get(id.as_str()) {
            Some(lb) => {
                let (va, vb) = (view(la), view(lb));
                rows.push((id.clone(), va.iter().zip(&vb).map(|(x, y)| w * x + (1.0 - w) * y).collect()));
            }
            None => missing_in_b.push(id.clone()),
        }
    }
    if rows.is_empty() {
        return Err(Error::validation("the two logits tables share no ids"));
    }
    let missing_in_a = b
        .rows
        .iter()
        .filter(|(id, _)| !a_ids.contains(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    let gflops = match (a.gflops, b.gflops) {
        (Some(x), Some(y)) => Some(x + y),
        _ => None,
    };
    Ok(FusionOutcome {
        fused: LogitsTable::new(format!("{} + {}", a.source, b.source), gflops, rows)?,
        missing_in_a,
        missing_in_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionReport {
    pub weight: f64,
    pub space: FusionSpace,
    pub source_a: String,
    pub source_b: String,
    pub shared: usize,
    pub missing_in_a: Vec<String>,
    pub missing_in_b: Vec<String>,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub accuracy_fused: f64,
    pub delta_vs_a: f64,
    pub delta_vs_b: f64,
    pub gflops_a: Option<f64>,
    pub gflops_b: Option<f64>,
    pub gflops_fused: Option<f64>,
    /// e.g. `"3.19 + 0.45 = 3.64"`
    pub gflops_expression: Option<String>,
}

fn accuracy(rows: &[(String, Vec<f64>)], labels: &BTreeMap<String, usize>) -> Result<f64> {
    let mut hits = 0usize;
    for (id, l) in rows {
        let y = labels
            .get(id)
            .ok_or_else(|| Error::validation(format!("no label for {id}")))?;
        if argmax(l) == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows.len() as f64)
}

/// Top-1 of `a`, `b` and their fusion, each on the shared ids.
pub fn fuse_and_eval(
    a: &LogitsTable,
    b: &LogitsTable,
    labels: &BTreeMap<String, usize>,
    w: f64,
    space: FusionSpace,
) -> Result<FusionReport> {
    let out = late_fuse(a, b, w, space)?;
    let shared = out.fused.rows();
    let pick = |t: &LogitsTable| -> Vec<(String, Vec<f64>)> {
        shared
            .iter()
            .map(|(id, _)| (id.clone(), t.get(id).expect("shared id").to_vec()))
            .collect()
    };
    let accuracy_a = accuracy(&pick(a), labels)?;
    let accuracy_b = accuracy(&pick(b), labels)?;
    let accuracy_fused = accuracy(shared, labels)?;
    let gflops_expression = out
        .fused
        .gflops
        .map(|s| format!("{} + {} = {s}", a.gflops.unwrap_or_default(), b.gflops.unwrap_or_default()));
    Ok(FusionReport {
        weight: w,
        space,
        source_a: a.source.clone(),
        source_b: b.source.clone(),
        shared: shared.len(),
        missing_in_a: out.missing_in_a,
        missing_in_b: out.missing_in_b,
        accuracy_a,
        accuracy_b,
        accuracy_fused,
        delta_vs_a: accuracy_fused - accuracy_a,
        delta_vs_b: accuracy_fused - accuracy_b,
        gflops_a: a.gflops,
        gflops_b: b.gflops,
        gflops_fused: out.fused.gflops,
        gflops_expression,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &[f64])]) -> LogitsTable {
        LogitsTable::new("t", None, rows.iter().map(|(i, l)| (i.to_string(), l.to_vec())).collect()).unwrap()
    }

    #[test]
    fn weight_one_returns_a() {
        let a = table(&[("x", &[1.0, 2.0]), ("y", &[3.0, -1.0])]);
        let b = table(&[("y", &[0.0, 5.0]), ("x", &[7.0, 7.0])]);
        let f = late_fuse(&a, &b, 1.0, FusionSpace::Logits).unwrap();
        assert_eq!(f.fused.rows(), a.rows());
    }

    #[test]
    fn identical_tables_fuse_to_themselves() {
        let a = table(&[("x", &[1.0, 2.0, 0.5])]);
        for w in [0.0, 0.25, 0.5, 1.0] {
            let f = late_fuse(&a, &a, w, FusionSpace::Logits).unwrap();
            for (got, want) in f.fused.rows()[0].1.iter().zip(&a.rows()[0].1) {
                assert!((got - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn missing_ids_are_reported_and_excluded() {
        let a = table(&[("x", &[1.0, 0.0]), ("only_a", &[0.0, 1.0])]);
        let b = table(&[("x", &[0.0, 1.0]), ("only_b", &[1.0, 0.0])]);
        let f = late_fuse(&a, &b, 0.5, FusionSpace::Logits).unwrap();
        assert_eq!(f.fused.len(), 1);
        assert_eq!(f.missing_in_a, vec!["only_b"]);
        assert_eq!(f.missing_in_b, vec!["only_a"]);
        let c = table(&[("z", &[1.0, 0.0])]);
        assert!(late_fuse(&a, &c, 0.5, FusionSpace::Logits).is_err());
        let d = table(&[("x", &[1.0, 0.0, 0.0])]);
        assert!(late_fuse(&a, &d, 0.5, FusionSpace::Logits).is_err());
        assert!(late_fuse(&a, &b, 1.5, FusionSpace::Logits).is_err());
    }

    #[test]
    fn table_invariants() {
        assert!(LogitsTable::new("t", None, vec![("a".into(), vec![1.0]), ("a".into(), vec![2.0])]).is_err());
        assert!(LogitsTable::new("t", None, vec![("a".into(), vec![1.0]), ("b".into(), vec![2.0, 1.0])]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let a = table(&[("x", &[1.5, -2.0]), ("y", &[0.1, 1e-9])]);
        assert_eq!(LogitsTable::from_csv(&a.to_csv(), "t", None).unwrap(), a);
        assert!(LogitsTable::from_csv("id,l1\nx,1\n", "t", None).is_err());
        let l = labels_from_csv("id,label\nx,1\ny,0\n").unwrap();
        assert_eq!(l["x"], 1);
        assert!(labels_from_csv("id,label\nx,1\nx,0\n").is_err());
    }

    #[test]
    fn uniform_branch_preserves_a() {
        let a = table(&[("x", &[1.0, 0.0, 2.0]), ("y", &[0.0, 3.0, 1.0]), ("z", &[5.0, 0.0, 0.0])]);
        let b = table(&[("x", &[0.0; 3]), ("y", &[0.0; 3]), ("z", &[0.0; 3])]);
        let labels = BTreeMap::from([("x".to_string(), 2), ("y".to_string(), 0), ("z".to_string(), 0)]);
        let r = fuse_and_eval(&a, &b, &labels, 0.5, FusionSpace::Logits).unwrap();
        assert_eq!(r.accuracy_fused, r.accuracy_a);
    }
}
