use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::plot::{boxplot_svg, line_plot_svg, Series};
use super::{methods_in_order, sweep_csv, DiceRecord, EvalReport, SweepRow};
use crate::error::{Error, Result};
use crate::trainer::Regime;

fn write(dir: &Path, name: &str, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    out.push(p);
    Ok(())
}

fn check_field(s: &str) -> Result<&str> {
    if s.contains([',', '\n', '"']) {
        return Err(Error::validation("csv", format!("field `{s}` contains a separator")));
    }
    Ok(s)
}

pub fn records_csv(records: &[DiceRecord]) -> Result<String> {
    let mut s = String::from("sample_id,method,class,dsc\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{:.6}",
            check_field(&r.sample_id)?,
            check_field(&r.method)?,
            r.lesion_class.as_str(),
            r.dsc
        );
    }
    Ok(s)
}

/// Writes `records.csv`, `groups.csv`, `tests.csv` (only when tests exist)
/// and `boxplot.svg` with one box per method.
pub fn emit_report(report: &EvalReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut out = Vec::new();
    write(outdir, "records.csv", &records_csv(&report.records)?, &mut out)?;

    let mut g = String::from("method,class,mean,std,n\n");
    for s in &report.groups {
        let _ = writeln!(g, "{},{},{:.6},{:.6},{}", s.method, s.group, s.mean, s.std, s.n);
    }
    write(outdir, "groups.csv", &g, &mut out)?;

    let tests_path = outdir.join("tests.csv");
    if report.tests.is_empty() {
        if tests_path.exists() {
            fs::remove_file(&tests_path).map_err(|e| Error::io(&tests_path, e))?;
        }
    } else {
        let mut t = String::from("a,b,t,p,alpha,reject\n");
        for r in &report.tests {
            let _ = writeln!(t, "{},{},{:.9},{:.9},{},{}", r.a, r.b, r.t, r.p, r.alpha, r.reject);
        }
        write(outdir, "tests.csv", &t, &mut out)?;
    }

    write(outdir, "boxplot.svg", &records_boxplot(&report.records), &mut out)?;
    Ok(out)
}

pub(crate) fn records_boxplot(records: &[DiceRecord]) -> String {
    let groups: Vec<(String, Vec<f64>)> = methods_in_order(records)
        .into_iter()
        .map(|m| {
            let v = records.iter().filter(|r| r.method == m).map(|r| r.dsc).collect();
            (m, v)
        })
        .collect();
    boxplot_svg("Dice by method", "DSC", &groups)
}

/// Mean test DSC against training-set size, one series per seed plus the
/// seed average.
pub(crate) fn learning_curve(rows: &[SweepRow], regime: Regime) -> String {
    let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.regime == regime).collect();
    let mut sizes: Vec<usize> = mine.iter().map(|r| r.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut seeds: Vec<u64> = mine.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut series: Vec<Series> = seeds
        .iter()
        .map(|&seed| Series {
            name: format!("seed {seed}"),
            points: sizes
                .iter()
                .filter_map(|&n| {
                    mine.iter()
                        .find(|r| r.size == n && r.seed == seed)
                        .map(|r| (n as f64, r.mean_dsc))
                })
                .collect(),
        })
        .collect();
    series.push(Series {
        name: "mean".into(),
        points: sizes
            .iter()
            .map(|&n| {
                let v: Vec<f64> = mine.iter().filter(|r| r.size == n).map(|r| r.mean_dsc).collect();
                (n as f64, v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect(),
    });
    line_plot_svg(
        &format!("Learning curve ({})", regime.as_str()),
        "training samples",
        "mean test DSC",
        &series,
    )
}

/// Writes `sweep.csv` and one `learning_curve_<regime>.svg` per regime.
pub fn emit_sweep(rows: &[SweepRow], outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut out = Vec::new();
    write(outdir, "sweep.csv", &sweep_csv(rows), &mut out)?;
    let mut regimes: Vec<Regime> = Vec::new();
    for r in rows {
        if !regimes.contains(&r.regime) {
            regimes.push(r.regime);
        }
    }
    for regime in regimes {
        let name = format!("learning_curve_{}.svg", regime.as_str());
        write(outdir, &name, &learning_curve(rows, regime), &mut out)?;
    }
    Ok(out)
}

fn parse_err(what: &str, line: usize, reason: impl std::fmt::Display) -> Error {
    Error::Format {
        path: PathBuf::from(what),
        reason: format!("line {line}: {reason}"),
    }
}

fn rows<'t>(text: &'t str, what: &str, header: &str) -> Result<Vec<(usize, Vec<&'t str>)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(parse_err(what, 1, format!("expected header `{header}`")));
    }
    let cols = header.split(',').count();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != cols {
                return Err(parse_err(what, i + 2, format!("{} fields, expected {cols}", f.len())));
            }
            Ok((i + 2, f))
        })
        .collect()
}

pub fn parse_records_csv(text: &str) -> Result<Vec<DiceRecord>> {
    rows(text, "records.csv", "sample_id,method,class,dsc")?
        .into_iter()
        .map(|(line, f)| {
            Ok(DiceRecord {
                sample_id: f[0].to_string(),
                method: f[1].to_string(),
                lesion_class: f[2].parse().map_err(|e| parse_err("records.csv", line, e))?,
                dsc: f[3].parse().map_err(|e| parse_err("records.csv", line, e))?,
                empty_agreement: false,
            })
        })
        .collect()
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    rows(text, "sweep.csv", "size,regime,seed,mean_dsc,std_dsc,n")?
        .into_iter()
        .map(|(line, f)| {
            let e = |err: &dyn std::fmt::Display| parse_err("sweep.csv", line, err);
            Ok(SweepRow {
                size: f[0].parse().map_err(|x| e(&x))?,
                regime: f[1].parse().map_err(|x| e(&x))?,
                seed: f[2].parse().map_err(|x| e(&x))?,
                mean_dsc: f[3].parse().map_err(|x| e(&x))?,
                std_dsc: f[4].parse().map_err(|x| e(&x))?,
                n_test: f[5].parse().map_err(|x| e(&x))?,
            })
        })
        .collect()
}
