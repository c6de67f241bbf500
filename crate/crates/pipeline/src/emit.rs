//! Plot-ready tables assembled from a finished run directory.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::config::PipelineConfig;
use crate::ingest::{format_timestamp, read_failures};
use crate::run::{read_alarms, read_scores, Manifest, RunDir, POOLED};

pub const PLOTS: &str = "plots";

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("missing stage output {}", path.display());
    }
    Ok(())
}

fn copy(dir: &RunDir, group: &str, file: &str, target: &str, outs: &mut Vec<String>) -> Result<()> {
    let src = dir.file(group, file);
    require(&src)?;
    fs::copy(&src, dir.file(PLOTS, target)).with_context(|| format!("copying {}", src.display()))?;
    outs.push(format!("{PLOTS}/{target}"));
    Ok(())
}

/// Score series with the threshold and a 0/1 column marking alarm onsets.
fn score_plot(dir: &RunDir, group: &str, threshold: f64, target: &str, outs: &mut Vec<String>) -> Result<()> {
    let s = read_scores(&dir.file(group, "scores.csv"), 0.5)?;
    let alarms = read_alarms(&dir.file(group, "alarms.csv"))?;
    let mut w = csv::Writer::from_path(dir.file(PLOTS, target))?;
    w.write_record(["timestamp", "time", "segment", "score", "score_q05", "score_q95", "threshold", "alarm_onset"])?;
    for i in 0..s.series.len() {
        let onset = alarms.iter().any(|a| a.onset_index == i);
        w.write_record([
            s.series.timestamps[i].to_string(),
            format_timestamp(s.series.timestamps[i]),
            s.segment[i].to_string(),
            s.series.values[i].to_string(),
            s.series.lower[i].to_string(),
            s.series.upper[i].to_string(),
            threshold.to_string(),
            u8::from(onset).to_string(),
        ])?;
    }
    w.flush()?;
    outs.push(format!("{PLOTS}/{target}"));
    Ok(())
}

/// Writes `plots/` from the stage outputs: predictive band, gate
/// activations, score series with onsets per index, pooled series and
/// failure markers. Returns the files written, relative to the run directory.
pub fn emit_plot_data(root: &Path) -> Result<Vec<String>> {
    let dir = RunDir { root: root.to_path_buf() };
    let config = PipelineConfig::load(&dir.config())?;
    let manifest = Manifest::load(&dir.manifest())?;
    fs::create_dir_all(root.join(PLOTS))?;
    let tau = config.score.threshold;
    let mut outs = Vec::new();
    for name in &config.data.indices {
        copy(&dir, name, "band.csv", &format!("{name}_band.csv"), &mut outs)?;
        copy(&dir, name, "gates.csv", &format!("{name}_gates.csv"), &mut outs)?;
        score_plot(&dir, name, tau, &format!("{name}_score.csv"), &mut outs)?;
    }
    if config.data.indices.len() > 1 {
        // Pooled values are 0, 0.5 or 1; an alarm needs full consensus.
        score_plot(&dir, POOLED, 1.0, "pooled_score.csv", &mut outs)?;
    }

    let inputs = manifest.inputs()?;
    let d = &config.data;
    let records = match &inputs.failures {
        Some(p) => read_failures(p, &d.timestamp_column, d.machine_column.as_deref().zip(d.machine.as_deref()))?,
        None => Vec::new(),
    };
    let mut w = csv::Writer::from_path(root.join(PLOTS).join("failures.csv"))?;
    w.write_record(["timestamp", "time", "component"])?;
    for r in &records {
        w.write_record([r.timestamp.to_string(), format_timestamp(r.timestamp), r.component.clone().unwrap_or_default()])?;
    }
    w.flush()?;
    outs.push(format!("{PLOTS}/failures.csv"));
    Ok(outs)
}
