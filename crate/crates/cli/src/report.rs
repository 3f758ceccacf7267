//! Report emitters.
//!
//! JSON mirrors [`RunReport`]. CSV output is one file per sequence-valued
//! result, named `<scenario>.<table>.csv`:
//!
//! | table             | header                                   |
//! |-------------------|------------------------------------------|
//! | `tasks`           | `task,status,reason`                     |
//! | `moment_curve`    | `lambda,value,verdict`                   |
//! | `beta_samples`    | `r,log_beta,log_beta_closed_form,t,s`    |
//! | `slope_pairs`     | `n,ratio`                                |
//! | `stability_sweep` | `radius,points_per_axis,best_constant`   |
//!
//! Numbers use the shortest representation that reads back exactly, empty
//! cells mean "no value", and non-finite values print as `inf`, `-inf` or
//! `nan`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::run::{RunReport, TaskResult, TaskStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

pub const TASKS_HEADER: [&str; 3] = ["task", "status", "reason"];
pub const MOMENT_CURVE_HEADER: [&str; 3] = ["lambda", "value", "verdict"];
pub const BETA_SAMPLES_HEADER: [&str; 5] = ["r", "log_beta", "log_beta_closed_form", "t", "s"];
pub const SLOPE_PAIRS_HEADER: [&str; 2] = ["n", "ratio"];
pub const STABILITY_SWEEP_HEADER: [&str; 3] = ["radius", "points_per_axis", "best_constant"];

pub fn to_json(report: &RunReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> serde_json::Result<RunReport> {
    serde_json::from_str(text)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn snake<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// `(table name, CSV text)` in a fixed order.
pub fn csv_tables(report: &RunReport) -> Vec<(&'static str, String)> {
    let mut out = vec![(
        "tasks",
        table(
            &TASKS_HEADER,
            report.tasks.iter().map(|t| {
                let status = match t.status {
                    TaskStatus::Ok => "ok",
                    TaskStatus::Failed => "failed",
                };
                vec![t.task.name().to_string(), status.to_string(), t.reason.clone().unwrap_or_default()]
            }),
        ),
    )];
    for rec in &report.tasks {
        match &rec.result {
            Some(TaskResult::Gap(g)) => {
                if let Some(sweep) = &g.sweep {
                    out.push((
                        "stability_sweep",
                        table(
                            &STABILITY_SWEEP_HEADER,
                            sweep
                                .points
                                .iter()
                                .map(|p| vec![num(p.radius), p.points_per_axis.to_string(), num(p.best_constant)]),
                        ),
                    ));
                }
            }
            Some(TaskResult::Sharpness(s)) => out.push((
                "slope_pairs",
                table(&SLOPE_PAIRS_HEADER, s.fit.pairs.iter().map(|&(n, ratio)| vec![num(n), num(ratio)])),
            )),
            Some(TaskResult::Beta(b)) => out.push((
                "beta_samples",
                table(
                    &BETA_SAMPLES_HEADER,
                    b.profile.samples.iter().map(|s| {
                        vec![num(s.r), num(s.log_beta), opt(s.log_beta_closed_form), num(s.t), num(s.s)]
                    }),
                ),
            )),
            Some(TaskResult::Concentration(c)) => out.push((
                "moment_curve",
                table(
                    &MOMENT_CURVE_HEADER,
                    c.moment_curve.iter().map(|p| vec![num(p.lambda), opt(p.value), snake(&p.verdict)]),
                ),
            )),
            _ => {}
        }
    }
    out
}

/// Writes the report. JSON goes to stdout without `out_dir`; CSV tables
/// need a directory. Returns the files written.
pub fn emit(report: &RunReport, format: Format, out_dir: Option<&Path>) -> io::Result<Vec<PathBuf>> {
    let name = &report.scenario.name;
    match (format, out_dir) {
        (Format::Json, None) => {
            use io::Write;
            let mut stdout = io::stdout().lock();
            stdout.write_all(to_json(report).as_bytes())?;
            stdout.flush()?;
            Ok(Vec::new())
        }
        (Format::Json, Some(dir)) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("{name}.json"));
            fs::write(&path, to_json(report))?;
            Ok(vec![path])
        }
        (Format::Csv, None) => Err(io::Error::new(io::ErrorKind::InvalidInput, "csv output needs --out DIR")),
        (Format::Csv, Some(dir)) => {
            fs::create_dir_all(dir)?;
            let mut written = Vec::new();
            for (table, text) in csv_tables(report) {
                let path = dir.join(format!("{name}.{table}.csv"));
                fs::write(&path, text)?;
                written.push(path);
            }
            Ok(written)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_print_exactly() {
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(2.0), "2");
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(f64::NEG_INFINITY), "-inf");
        assert_eq!(num(f64::NAN), "nan");
        assert_eq!(num(1e-300).parse::<f64>().unwrap(), 1e-300);
        assert_eq!(opt(None), "");
    }

    #[test]
    fn tables_quote_commas() {
        let t = table(&["a", "b"], vec![vec!["x,y".to_string(), "z".to_string()]]);
        assert_eq!(t, "a,b\n\"x,y\",z\n");
    }
}
