use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use symcanon::flow::train::FlowModel;
use symcanon::molecule::{metrics_report, stability, write_sdf, write_xyz, ValenceTable};
use symcanon::sampler::{draw_sizes, sample, PriorChoice, RankMode, Regime, SampleConfig, TimeGrid};

use super::Ctx;
use crate::cli::{FormatArg, GridArg, GroupArg, OnOff, PriorArg, RankModeArg, RegimeArg, SampleArgs};
use crate::error::{CliError, Result};
use crate::manifest::{create_dir, Outputs};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleOptions {
    pub model: Option<PathBuf>,
    pub n: usize,
    pub steps: usize,
    pub regime: RegimeArg,
    pub rank_mode: RankModeArg,
    pub cfg_scale: f64,
    pub prior: PriorArg,
    pub group: GroupArg,
    pub haar: OnOff,
    pub grid: GridArg,
    pub atoms: Option<usize>,
    pub seed: u64,
    pub format: FormatArg,
    pub out: Option<PathBuf>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            model: None,
            n: 10,
            steps: 20,
            regime: RegimeArg::A,
            rank_mode: RankModeArg::Predict,
            cfg_scale: 1.0,
            prior: PriorArg::Aligned,
            group: GroupArg::PermSo3,
            haar: OnOff::On,
            grid: GridArg::Uniform,
            atoms: None,
            seed: 0,
            format: FormatArg::Xyz,
            out: None,
        }
    }
}

impl SampleOptions {
    fn sampler_config(&self) -> SampleConfig {
        SampleConfig {
            steps: self.steps,
            regime: match self.regime {
                RegimeArg::A => Regime::A,
                RegimeArg::B => Regime::B,
            },
            rank_mode: match self.rank_mode {
                RankModeArg::Predict => RankMode::Predict,
                RankModeArg::Canonicalize => RankMode::Canonicalize,
            },
            cfg_scale: self.cfg_scale,
            prior: match self.prior {
                PriorArg::Aligned => PriorChoice::Aligned,
                PriorArg::Isotropic => PriorChoice::Isotropic,
            },
            group: self.group.into(),
            haar: self.haar.into(),
            grid: match self.grid {
                GridArg::Uniform => TimeGrid::Uniform,
                GridArg::Quadratic => TimeGrid::Quadratic,
            },
            seed: self.seed,
        }
    }
}

/// Removes outputs of an earlier run so the directory holds exactly this
/// run's samples.
fn clear_previous(dir: &Path) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        let stale = (name.starts_with("sample_") && (name.ends_with(".xyz") || name.ends_with(".sdf")))
            || name == "metrics.csv"
            || name == "manifest.json";
        if stale && p.is_file() {
            std::fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
        }
    }
    Ok(())
}

pub fn run(args: SampleArgs, ctx: &Ctx) -> Result<()> {
    let mut opts: SampleOptions = ctx.resolve(&args)?;
    let model_path = opts
        .model
        .clone()
        .ok_or_else(|| CliError::Usage("--model is required".into()))?;
    let dir = opts.out.clone().unwrap_or_else(|| ctx.out_dir.join("samples"));
    opts.out = Some(dir.clone());
    let cfg = opts.sampler_config();
    cfg.validate()?;

    let text = std::fs::read_to_string(&model_path).map_err(|e| CliError::io(&model_path, e))?;
    let model = FlowModel::from_json(&text)
        .map_err(|e| CliError::Invalid(format!("{}: not a usable checkpoint: {e}", model_path.display())))?;

    let sizes = match opts.atoms {
        Some(0) => return Err(CliError::Usage("--atoms must be positive".into())),
        Some(a) => vec![a; opts.n],
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(1);
            draw_sizes(&model, opts.n, &mut rng)?
        }
    };
    let (mols, stats) = sample(&model, &sizes, &cfg)?;

    create_dir(&dir)?;
    clear_previous(&dir)?;
    let table = ValenceTable::default();
    let mut outputs = Outputs::new();
    let mut per_sample = csv::Writer::from_writer(Vec::new());
    per_sample.write_record(["index", "file", "n_atoms", "atom_stability", "mol_stable"])?;
    let ext = opts.format.extension();
    for (i, m) in mols.iter().enumerate() {
        let name = format!("sample_{i:04}.{ext}");
        let text = match opts.format {
            FormatArg::Xyz => write_xyz(m, &format!("symcanon sample {i} seed {}", opts.seed)),
            FormatArg::Sdf => write_sdf(m, &format!("sample_{i:04}")),
        };
        outputs.write(&dir.join(&name), text.as_bytes())?;
        let s = stability(m, &table)?;
        let frac = s.atom_stable.iter().filter(|&&b| b).count() as f64 / m.n_atoms().max(1) as f64;
        per_sample.write_record([
            i.to_string(),
            name,
            m.n_atoms().to_string(),
            frac.to_string(),
            s.mol_stable.to_string(),
        ])?;
    }
    let report = if mols.is_empty() {
        None
    } else {
        let csv = per_sample.into_inner().map_err(|e| CliError::Invalid(e.to_string()))?;
        outputs.write(&dir.join("metrics.csv"), &csv)?;
        Some(metrics_report(&mols, &table)?)
    };
    let summary = json!({ "n": mols.len(), "sizes": sizes, "stats": stats, "metrics": report });
    let manifest = outputs.finish(&dir.join("manifest.json"), "sample", Some(opts.seed), &opts, summary)?;
    println!(
        "wrote {} samples to {} ({})",
        mols.len(),
        dir.display(),
        manifest.display()
    );
    Ok(())
}
