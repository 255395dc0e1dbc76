use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use symcanon::molecule::{metrics_report, read_molecule, ValenceTable};

use super::{molecule_files_in, Ctx};
use crate::cli::MetricsArgs;
use crate::error::{CliError, Result};
use crate::manifest::Outputs;
use crate::svg::line_plot;

/// Trace columns that are not losses.
const NON_LOSS_COLUMNS: [&str; 1] = ["p_ot"];

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsOptions {
    pub samples: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Reads a trace CSV: the first column is the x axis, every other column
/// except the non-loss ones becomes a series.
pub fn read_trace(path: &Path) -> Result<(String, Vec<f64>, Vec<(String, Vec<f64>)>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        other => CliError::Invalid(format!("{}: {other:?}", path.display())),
    })?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(CliError::Invalid(format!(
            "{}: a trace needs an x column and at least one loss column",
            path.display()
        )));
    }
    let keep: Vec<usize> = (1..headers.len())
        .filter(|&c| !NON_LOSS_COLUMNS.contains(&headers[c].as_str()))
        .collect();
    let mut x = Vec::new();
    let mut series: Vec<(String, Vec<f64>)> = keep.iter().map(|&c| (headers[c].clone(), Vec::new())).collect();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or_default().trim();
            s.parse().map_err(|_| {
                CliError::Invalid(format!("{}: row {}: {:?} is not a number", path.display(), line + 2, s))
            })
        };
        x.push(num(0)?);
        for (k, &c) in keep.iter().enumerate() {
            series[k].1.push(num(c)?);
        }
    }
    Ok((headers[0].clone(), x, series))
}

pub fn run(args: MetricsArgs, ctx: &Ctx) -> Result<()> {
    let mut opts: MetricsOptions = ctx.resolve(&args)?;
    if opts.samples.is_none() && opts.trace.is_none() {
        return Err(CliError::Usage("give --samples, --trace or both".into()));
    }
    let dir = opts.out.clone().unwrap_or_else(|| ctx.out_dir.join("metrics"));
    opts.out = Some(dir.clone());
    let mut outputs = Outputs::new();
    let mut summary = serde_json::Map::new();

    if let Some(samples) = &opts.samples {
        let files = molecule_files_in(samples)?;
        if files.is_empty() {
            return Err(CliError::Invalid(format!(
                "{} contains no .xyz, .sdf or .mol files",
                samples.display()
            )));
        }
        let mols = files
            .iter()
            .map(|f| read_molecule(f).map_err(|e| CliError::Invalid(format!("{}: {e}", f.display()))))
            .collect::<Result<Vec<_>>>()?;
        let report = metrics_report(&mols, &ValenceTable::default())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&report)?;
        let csv = w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        outputs.write(&dir.join("metrics.csv"), &csv)?;
        outputs.write(&dir.join("metrics.json"), text.as_bytes())?;
        println!(
            "{} molecules: atom stability {:.4}, molecule stability {:.4}, uniqueness {:.4}",
            report.n_samples, report.atom_stability, report.mol_stability, report.uniqueness
        );
        summary.insert("metrics".into(), serde_json::to_value(report)?);
    }

    if let Some(trace) = &opts.trace {
        let (x_name, x, series) = read_trace(trace)?;
        let title = trace
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let svg = line_plot(&title, &x_name, &x, &series);
        let path = dir.join("trace.svg");
        outputs.write(&path, svg.as_bytes())?;
        println!(
            "plotted {} series from {} to {}",
            series.len(),
            trace.display(),
            path.display()
        );
        let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
        summary.insert("trace_series".into(), json!(names));
    }

    outputs.finish(
        &dir.join("manifest.json"),
        "metrics",
        None,
        &opts,
        Value::Object(summary),
    )?;
    Ok(())
}
