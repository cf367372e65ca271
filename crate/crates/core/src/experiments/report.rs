//! Result tables as CSV, JSON or Markdown.
//!
//! Numbers are printed in shortest round-trip form so every format carries
//! identical values. Failed trials show as `FAIL` and are left out of means.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{mean_std, ControllerKind, Exp2Mode, Experiment, TrialSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

pub const TRIAL_COLUMNS: [&str; 11] = [
    "experiment",
    "subject",
    "controller",
    "mode",
    "profile",
    "trial",
    "seed",
    "signal_rmse",
    "radius_rmse_cm",
    "position_rmse_cm",
    "success",
];

fn controller_name(c: ControllerKind) -> &'static str {
    match c {
        ControllerKind::Ikk => "ikk",
        ControllerKind::Direct => "direct",
    }
}

fn mode_name(m: Option<Exp2Mode>) -> &'static str {
    match m {
        Some(Exp2Mode::Single) => "single",
        Some(Exp2Mode::Parallel) => "parallel",
        None => "",
    }
}

fn metric(ok: bool, v: Option<f64>) -> String {
    match (ok, v) {
        (false, _) => "FAIL".into(),
        (true, Some(v)) => v.to_string(),
        (true, None) => String::new(),
    }
}

/// One row per trial, columns as in [`TRIAL_COLUMNS`].
pub fn trial_rows(results: &[TrialSummary]) -> Vec<Vec<String>> {
    results
        .iter()
        .map(|r| {
            vec![
                r.experiment.name().to_string(),
                r.subject.clone(),
                controller_name(r.controller).to_string(),
                mode_name(r.mode).to_string(),
                r.profile.clone().unwrap_or_default(),
                r.trial.clone(),
                r.seed.to_string(),
                metric(r.success, Some(r.rmse.signal)),
                metric(r.success, r.rmse.radius_cm),
                metric(r.success, r.rmse.position_cm),
                r.success.to_string(),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Successful trials in the mean.
    pub n: usize,
    pub failed: usize,
}

impl Stat {
    fn of(values: &[Option<f64>]) -> Option<Stat> {
        let ok: Vec<f64> = values.iter().flatten().copied().collect();
        let failed = values.len() - ok.len();
        if ok.is_empty() && failed == 0 {
            return None;
        }
        let (mean, std) = mean_std(&ok);
        Some(Stat {
            mean,
            std,
            n: ok.len(),
            failed,
        })
    }

    fn cell(&self) -> String {
        let mut s = if self.n == 0 {
            "FAIL".to_string()
        } else {
            format!("{:.2} ± {:.2}", self.mean, self.std)
        };
        if self.failed > 0 {
            s.push_str(" ¹");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Row {
    pub subject: String,
    pub controller: ControllerKind,
    pub profile: String,
    pub rmse: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Row {
    pub subject: String,
    pub controller: ControllerKind,
    pub mode: Exp2Mode,
    pub radius_cm: Option<Stat>,
    pub position_cm: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub exp1: Vec<Exp1Row>,
    pub exp2: Vec<Exp2Row>,
    pub trials: Vec<TrialSummary>,
}

pub fn build(results: &[TrialSummary]) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::InsufficientData("report needs at least one result".into()));
    }
    let ok = |r: &TrialSummary, v: Option<f64>| if r.success { v } else { None };
    let mut e1: BTreeMap<(String, ControllerKind, String), Vec<Option<f64>>> = BTreeMap::new();
    let mut e2: BTreeMap<(String, ControllerKind, Exp2Mode), (Vec<Option<f64>>, Vec<Option<f64>>)> = BTreeMap::new();
    for r in results {
        match r.experiment {
            Experiment::Exp1 => e1
                .entry((r.subject.clone(), r.controller, r.profile.clone().unwrap_or_default()))
                .or_default()
                .push(ok(r, Some(r.rmse.signal))),
            Experiment::Exp2 => {
                let slot = e2
                    .entry((r.subject.clone(), r.controller, r.mode.unwrap_or(Exp2Mode::Single)))
                    .or_default();
                slot.0.push(ok(r, r.rmse.radius_cm));
                if r.rmse.position_cm.is_some() || !r.success {
                    slot.1.push(ok(r, r.rmse.position_cm));
                }
            }
        }
    }
    let exp1 = e1
        .into_iter()
        .filter_map(|((subject, controller, profile), v)| {
            Stat::of(&v).map(|rmse| Exp1Row {
                subject,
                controller,
                profile,
                rmse,
            })
        })
        .collect();
    let exp2 = e2
        .into_iter()
        .map(|((subject, controller, mode), (radius, position))| Exp2Row {
            subject,
            controller,
            mode,
            radius_cm: Stat::of(&radius),
            position_cm: if mode == Exp2Mode::Parallel { Stat::of(&position) } else { None },
        })
        .collect();
    Ok(Report {
        exp1,
        exp2,
        trials: results.to_vec(),
    })
}

pub fn render(results: &[TrialSummary], format: Format) -> Result<String> {
    let report = build(results)?;
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(&report)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TRIAL_COLUMNS)?;
            for row in trial_rows(results) {
                w.write_record(&row)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        Format::Markdown => Ok(markdown(&report)),
    }
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}|", vec!["---"; header.len()].join("|"));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn markdown(report: &Report) -> String {
    let mut out = String::from("# Results\n\n");
    let mut footnote = false;
    if !report.exp1.is_empty() {
        // Subjects × trajectories.
        let mut profiles: Vec<&str> = report.exp1.iter().map(|r| r.profile.as_str()).collect();
        profiles.sort_unstable();
        profiles.dedup();
        let mut keys: Vec<(&str, ControllerKind)> = report.exp1.iter().map(|r| (r.subject.as_str(), r.controller)).collect();
        keys.dedup();
        let mut header = vec!["subject", "controller"];
        header.extend(profiles.iter().copied());
        let rows: Vec<Vec<String>> = keys
            .iter()
            .map(|&(s, c)| {
                let mut row = vec![s.to_string(), controller_name(c).to_string()];
                for p in &profiles {
                    let cell = report
                        .exp1
                        .iter()
                        .find(|r| r.subject == s && r.controller == c && r.profile == *p)
                        .map(|r| {
                            footnote |= r.rmse.failed > 0;
                            r.rmse.cell()
                        })
                        .unwrap_or_default();
                    row.push(cell);
                }
                row
            })
            .collect();
        out.push_str("## Experiment 1: tracking RMSE (mean ± std, 0–100 units)\n\n");
        table(&mut out, &header, &rows);
    }
    if !report.exp2.is_empty() {
        let rows: Vec<Vec<String>> = report
            .exp2
            .iter()
            .map(|r| {
                let mut cell = |s: &Option<Stat>| {
                    s.as_ref().map_or(String::new(), |s| {
                        footnote |= s.failed > 0;
                        s.cell()
                    })
                };
                vec![
                    r.subject.clone(),
                    controller_name(r.controller).to_string(),
                    mode_name(Some(r.mode)).to_string(),
                    cell(&r.radius_cm),
                    cell(&r.position_cm),
                ]
            })
            .collect();
        out.push_str("## Experiment 2: sphere RMSE (mean ± std, cm)\n\n");
        table(&mut out, &["subject", "controller", "mode", "radii", "position"], &rows);
    }
    if footnote {
        out.push_str("¹ Failed trials are not considered in the mean.\n\n");
    }
    out.push_str("## Trials\n\n");
    table(&mut out, &TRIAL_COLUMNS, &trial_rows(&report.trials));
    out
}

/// Split every Markdown pipe table in `doc` into rows of cells, header
/// included, separator rows dropped.
pub fn parse_markdown_tables(doc: &str) -> Vec<Vec<Vec<String>>> {
    let mut tables = Vec::new();
    let mut cur: Vec<Vec<String>> = Vec::new();
    for line in doc.lines() {
        let line = line.trim();
        if line.starts_with('|') && line.ends_with('|') && line.len() >= 2 {
            let inner = &line[1..line.len() - 1];
            if inner.chars().all(|c| c == '-' || c == '|' || c == ':' || c == ' ') {
                continue;
            }
            cur.push(inner.split('|').map(|c| c.trim().to_string()).collect());
        } else if !cur.is_empty() {
            tables.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tables.push(cur);
    }
    tables
}

/// Externally measured task times (e.g. pick-and-place), seconds per user
/// and attempt; `None` marks a failed attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTable {
    pub title: String,
    pub users: Vec<String>,
    /// `(condition, time per user)`
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

pub fn render_time_table(t: &TimeTable) -> Result<String> {
    for (label, v) in &t.rows {
        if v.len() != t.users.len() {
            return Err(Error::InvalidArgument(format!(
                "row {label} has {} entries for {} users",
                v.len(),
                t.users.len()
            )));
        }
    }
    let mut out = format!("## {}\n\n", t.title);
    let mut header: Vec<&str> = vec![""];
    header.extend(t.users.iter().map(String::as_str));
    header.push("mean ± std");
    let mut any_failed = false;
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|(label, v)| {
            let mut row = vec![label.clone()];
            row.extend(v.iter().map(|x| x.map_or("FAIL".to_string(), |x| x.to_string())));
            let stat = Stat::of(v).expect("row has users");
            any_failed |= stat.failed > 0;
            row.push(stat.cell());
            row
        })
        .collect();
    table(&mut out, &header, &rows);
    if any_failed {
        out.push_str("¹ Failed attempts are not considered.\n\n");
    }
    Ok(out)
}
