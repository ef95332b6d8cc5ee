//! CSV writers. Floats carry nine significant digits.

use std::path::Path;

use pipecal::TwoPhaseTrace;

use crate::error::CliError;
use crate::experiments::{InlReport, SweepEntry};

pub fn float(v: f64) -> String {
    format!("{v:.8e}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_convergence(path: &Path, entries: &[SweepEntry]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["mu", "k", "error_norm"])?;
    for e in entries {
        for (k, err) in e.trace.steps.iter().zip(&e.trace.error_norms) {
            w.write_record([float(e.mu), k.to_string(), float(*err)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_inl(path: &Path, report: &InlReport) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["code", "inl_true", "inl_est", "inl_residual"])?;
    let (t, e, r) = (&report.true_inl, &report.estimated_inl, &report.residual);
    for i in 0..t.len() {
        w.write_record([
            t.codes[i].to_string(),
            float(t.inl_lsb[i]),
            float(e.inl_lsb[i]),
            float(r.inl_lsb[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_twophase(path: &Path, trace: &TwoPhaseTrace<f64>) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["phase", "k", "samples", "error_norm"])?;
    for r in &trace.records {
        w.write_record([
            r.phase.number().to_string(),
            r.k.to_string(),
            r.samples.to_string(),
            r.error_norm.map_or_else(String::new, float),
        ])?;
    }
    w.flush()?;
    Ok(())
}
