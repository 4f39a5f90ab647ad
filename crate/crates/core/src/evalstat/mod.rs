//! Dice scoring, grouped statistics, paired tests, training-size sweeps and
//! report emission.

mod plot;
mod report;
mod sweep;
mod ttest;

pub use plot::{boxplot_svg, line_plot_svg, Series};
pub(crate) use report::records_boxplot;
pub use report::{emit_report, emit_sweep, parse_records_csv, parse_sweep_csv};
pub use sweep::{run_sweep, subset_indices, sweep_csv, SweepRow, SweepSpec};
pub use ttest::{incomplete_beta, paired_ttest_one_sided, student_t_sf, TTest};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{LesionClass, SegMask};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dice {
    pub dsc: f64,
    /// Both masks empty: scored 1.0 by convention.
    pub empty_agreement: bool,
}

/// `2|X ∩ Y| / (|X| + |Y|)` over binary masks; two empty masks score 1.0
/// and are flagged.
pub fn dice(x: &SegMask, y: &SegMask) -> Result<Dice> {
    if (x.width(), x.height()) != (y.width(), y.height()) {
        return Err(Error::Shape(format!(
            "dice: {}x{} vs {}x{}",
            x.width(),
            x.height(),
            y.width(),
            y.height()
        )));
    }
    if !x.is_binarized() || !y.is_binarized() {
        return Err(Error::validation("mask", "dice needs binarized masks"));
    }
    let (mut inter, mut nx, mut ny) = (0usize, 0usize, 0usize);
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let (a, b) = (a == 1.0, b == 1.0);
        nx += a as usize;
        ny += b as usize;
        inter += (a && b) as usize;
    }
    if nx + ny == 0 {
        return Ok(Dice {
            dsc: 1.0,
            empty_agreement: true,
        });
    }
    Ok(Dice {
        dsc: 2.0 * inter as f64 / (nx + ny) as f64,
        empty_agreement: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceRecord {
    pub sample_id: String,
    pub method: String,
    pub dsc: f64,
    pub lesion_class: LesionClass,
    #[serde(default)]
    pub empty_agreement: bool,
}

impl DiceRecord {
    pub fn score(
        sample_id: impl Into<String>,
        method: impl Into<String>,
        lesion_class: LesionClass,
        pred: &SegMask,
        gt: &SegMask,
    ) -> Result<Self> {
        let d = dice(pred, gt)?;
        let sample_id = sample_id.into();
        if d.empty_agreement {
            log::warn!("sample `{sample_id}`: both masks empty, dice set to 1");
        }
        Ok(Self {
            sample_id,
            method: method.into(),
            dsc: d.dsc,
            lesion_class,
            empty_agreement: d.empty_agreement,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub method: String,
    /// `benign`, `malignant` or `all`.
    pub group: String,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for singletons.
    pub std: f64,
    pub n: usize,
    /// Set when `n == 1` and the deviation is undefined.
    pub singleton: bool,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn methods_in_order(records: &[DiceRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.method) {
            out.push(r.method.clone());
        }
    }
    out
}

/// Mean and deviation per `(method, class)` and per `(method, all)`,
/// methods in order of first appearance.
pub fn aggregate(records: &[DiceRecord]) -> Result<Vec<GroupStat>> {
    if records.is_empty() {
        return Err(Error::validation("records", "nothing to aggregate"));
    }
    let mut out = Vec::new();
    for method in methods_in_order(records) {
        let mine: Vec<&DiceRecord> = records.iter().filter(|r| r.method == method).collect();
        let groups = [
            (LesionClass::Benign.as_str(), Some(LesionClass::Benign)),
            (LesionClass::Malignant.as_str(), Some(LesionClass::Malignant)),
            ("all", None),
        ];
        for (name, class) in groups {
            let v: Vec<f64> = mine
                .iter()
                .filter(|r| class.is_none_or(|c| r.lesion_class == c))
                .map(|r| r.dsc)
                .collect();
            if v.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&v);
            if v.len() == 1 {
                log::warn!("method `{method}`, group `{name}`: single sample, std reported as 0");
            }
            out.push(GroupStat {
                method: method.clone(),
                group: name.to_string(),
                mean,
                std,
                n: v.len(),
                singleton: v.len() == 1,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub a: String,
    pub b: String,
    pub t: f64,
    pub p: f64,
    pub alpha: f64,
    pub reject: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<DiceRecord>,
    pub groups: Vec<GroupStat>,
    pub tests: Vec<TestRow>,
}

/// Scores of `method` keyed by sample id.
fn scores_of<'r>(records: &'r [DiceRecord], method: &str) -> Vec<(&'r str, f64)> {
    records
        .iter()
        .filter(|r| r.method == method)
        .map(|r| (r.sample_id.as_str(), r.dsc))
        .collect()
}

/// Paired one-sided test of `a` better than `b` over the samples both scored.
pub fn compare(records: &[DiceRecord], a: &str, b: &str, alpha: f64) -> Result<TestRow> {
    let sb = scores_of(records, b);
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (id, v) in scores_of(records, a) {
        if let Some((_, w)) = sb.iter().find(|(j, _)| *j == id) {
            xa.push(v);
            xb.push(*w);
        }
    }
    let t = paired_ttest_one_sided(&xa, &xb).map_err(|e| e.context(format!("test {a} > {b}")))?;
    Ok(TestRow {
        a: a.to_string(),
        b: b.to_string(),
        t: t.t,
        p: t.p,
        alpha,
        reject: t.p < alpha,
    })
}

pub fn build_report(records: Vec<DiceRecord>, comparisons: &[(String, String)], alpha: f64) -> Result<EvalReport> {
    let groups = aggregate(&records)?;
    let tests = comparisons
        .iter()
        .map(|(a, b)| compare(&records, a, b, alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        records,
        groups,
        tests,
    })
}
