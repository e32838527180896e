//! Report files: one JSON object per command plus CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use pilotwave::ensemble::EnsembleReport;
use pilotwave::residuals::ResidualReport;
use serde::Serialize;

use crate::{Check, CliError};

/// Collects the files written by one command.
pub struct OutputDir {
    root: PathBuf,
    pub written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::output(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.root.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.root.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::output(&path, e))?;
        w.write_record(header).map_err(|e| CliError::output(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| CliError::output(&path, e))?;
        }
        w.flush().map_err(|e| CliError::output(&path, e))?;
        self.written.push(path);
        Ok(())
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn checks_table(out: &mut OutputDir, name: &str, checks: &[Check]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                c.value.to_string(),
                c.relation.clone(),
                opt(c.threshold),
                c.pass.to_string(),
                c.asserted.to_string(),
            ]
        })
        .collect();
    out.csv(
        name,
        &strings(&["check", "value", "relation", "threshold", "pass", "asserted"]),
        &rows,
    )
}

pub fn residual_table(out: &mut OutputDir, name: &str, reports: &[ResidualReport]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                r.probe_count.to_string(),
                r.max_abs.to_string(),
                r.rms.to_string(),
                r.reference_scale.to_string(),
                r.tolerance.to_string(),
                r.pass.to_string(),
                r.asserted.to_string(),
            ]
        })
        .collect();
    out.csv(
        name,
        &strings(&[
            "residual",
            "probes",
            "max_abs",
            "rms",
            "reference_scale",
            "tolerance",
            "pass",
            "asserted",
        ]),
        &rows,
    )
}

/// Per-snapshot metrics: `step,tau,lab_time,l1,l1_axis*,kl_axis*,h_coarse,momentum_map_l1,carried_vs_field_rms`.
pub fn timeseries_table(out: &mut OutputDir, name: &str, report: &EnsembleReport) -> Result<(), CliError> {
    let axes = report.snapshots.first().map(|s| s.axes.clone()).unwrap_or_default();
    let mut header = strings(&["step", "tau", "lab_time", "l1"]);
    header.extend(axes.iter().map(|a| format!("l1_x{a}")));
    header.extend(axes.iter().map(|a| format!("kl_x{a}")));
    header.extend(strings(&["h_coarse", "momentum_map_l1", "carried_vs_field_rms"]));
    let rows: Vec<Vec<String>> = report
        .snapshots
        .iter()
        .map(|s| {
            let mut row = vec![s.step.to_string(), s.tau.to_string(), opt(s.lab_time), s.l1.to_string()];
            row.extend(s.l1_per_axis.iter().map(f64::to_string));
            row.extend(s.kl_per_axis.iter().map(f64::to_string));
            row.push(s.h_coarse.to_string());
            row.push(opt(s.momentum_map_l1));
            row.push(opt(s.carried_vs_field_rms));
            row
        })
        .collect();
    out.csv(name, &header, &rows)
}

/// Long-format histograms: `step,axis,bin,histogram,target`.
pub fn histogram_table(out: &mut OutputDir, name: &str, report: &EnsembleReport) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for s in &report.snapshots {
        for (k, (h, t)) in s.histograms.iter().zip(&s.targets).enumerate() {
            for (b, (hv, tv)) in h.iter().zip(t).enumerate() {
                rows.push(vec![
                    s.step.to_string(),
                    s.axes[k].to_string(),
                    b.to_string(),
                    hv.to_string(),
                    tv.to_string(),
                ]);
            }
        }
    }
    out.csv(name, &strings(&["step", "axis", "bin", "histogram", "target"]), &rows)
}

/// A matrix with no header row, one line per row.
pub fn matrix_table(out: &mut OutputDir, name: &str, matrix: &[Vec<f64>]) -> Result<(), CliError> {
    let path = out.root.join(name);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(|e| CliError::output(&path, e))?;
    for row in matrix {
        w.write_record(row.iter().map(f64::to_string))
            .map_err(|e| CliError::output(&path, e))?;
    }
    w.flush().map_err(|e| CliError::output(&path, e))?;
    out.written.push(path);
    Ok(())
}
