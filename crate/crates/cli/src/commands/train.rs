use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use symcanon::canonicalizer::canonicalize;
use symcanon::flow::mlp::{train_toy, ToyConfig, ToyTraceRow, ValSet};
use symcanon::flow::net::CanonLiteConfig;
use symcanon::flow::train::{train, write_trace, OtPolicy, TraceRow, TrainConfig};
use symcanon::molecule::{read_molecule, MoleculeState, Vocab};
use symcanon::priors::{CoordPrior, MolecularPrior};
use symcanon::toy::FourBlobs;

use super::{molecule_files, Ctx};
use crate::cli::{DatasetArg, GroupArg, OtArg, PriorArg, ToyModeArg, TrainArgs};
use crate::error::{CliError, Result};
use crate::manifest::Outputs;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub dataset: DatasetArg,
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub mode: ToyModeArg,
    /// Shorthands folded into `train` or `toy` on resolution.
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub ot: Option<OtArg>,
    pub ot_epochs: Option<usize>,
    pub group: GroupArg,
    pub prior: PriorArg,
    pub rank_bins: usize,
    /// Validation set size for the C4 dataset.
    pub val_size: usize,
    pub out: Option<PathBuf>,
    /// Network shape; type and charge counts must match the data.
    pub net: Option<CanonLiteConfig>,
    pub train: TrainConfig,
    pub toy: ToyConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            dataset: DatasetArg::Molecules,
            data: None,
            val: None,
            mode: ToyModeArg::Canonical,
            epochs: None,
            seed: None,
            lr: None,
            batch_size: None,
            ot: None,
            ot_epochs: None,
            group: GroupArg::PermSo3,
            prior: PriorArg::Aligned,
            rank_bins: 10,
            val_size: 2048,
            out: None,
            net: None,
            train: TrainConfig::default(),
            toy: ToyConfig::default(),
        }
    }
}

impl TrainOptions {
    /// Moves the shorthand fields into the nested configs so the recorded
    /// options have a single source for every value.
    fn fold(&mut self) -> Result<()> {
        match self.dataset {
            DatasetArg::C4 => {
                let t = &mut self.toy;
                if let Some(e) = self.epochs.take() {
                    t.steps = e * t.steps_per_epoch;
                }
                if let Some(s) = self.seed.take() {
                    t.seed = s;
                }
                if let Some(lr) = self.lr.take() {
                    t.lr = lr;
                }
                if let Some(b) = self.batch_size.take() {
                    t.batch_size = b;
                }
                if matches!(self.ot.take(), Some(OtArg::Always | OtArg::Anneal)) || self.ot_epochs.take().is_some() {
                    return Err(CliError::Usage(
                        "OT pairing applies to the molecules dataset only".into(),
                    ));
                }
            }
            DatasetArg::Molecules => {
                let t = &mut self.train;
                if let Some(e) = self.epochs.take() {
                    t.epochs = e;
                }
                if let Some(s) = self.seed.take() {
                    t.seed = s;
                }
                if let Some(lr) = self.lr.take() {
                    t.lr = lr;
                }
                if let Some(b) = self.batch_size.take() {
                    t.batch_size = b;
                }
                let horizon = self.ot_epochs.take();
                match self.ot.take() {
                    Some(OtArg::Off) => t.ot = OtPolicy::Off,
                    Some(OtArg::Always) => t.ot = OtPolicy::Always,
                    Some(OtArg::Anneal) => {
                        t.ot = OtPolicy::Anneal {
                            max_epochs: horizon.unwrap_or(t.epochs).max(1),
                        }
                    }
                    None if horizon.is_some() => {
                        return Err(CliError::Usage("--ot-epochs needs --ot anneal".into()));
                    }
                    None => {}
                }
            }
        }
        Ok(())
    }

    fn seed(&self) -> u64 {
        match self.dataset {
            DatasetArg::C4 => self.toy.seed,
            DatasetArg::Molecules => self.train.seed,
        }
    }
}

fn read_all(path: &std::path::Path) -> Result<Vec<MoleculeState>> {
    let files = molecule_files(path)?;
    files
        .iter()
        .map(|f| {
            read_molecule(f).map_err(|e| match e {
                symcanon::Error::Io(source) => CliError::io(f, source),
                other => CliError::Invalid(format!("{}: {other}", f.display())),
            })
        })
        .collect()
}

/// Default vocabulary extended by any element or charge seen in the data.
fn vocab_for(mols: &[&MoleculeState]) -> Vocab {
    let mut v = Vocab::default();
    for m in mols {
        v.atom_types.extend(&m.atom_types);
        v.charges.extend(&m.charges);
    }
    v.atom_types.sort_unstable();
    v.atom_types.dedup();
    v.charges.sort_unstable();
    v.charges.dedup();
    v
}

fn toy_trace_csv(rows: &[ToyTraceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
    }
    w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))
}

fn run_c4(opts: &TrainOptions, outputs: &mut Outputs, dir: &std::path::Path) -> Result<Value> {
    let blobs = FourBlobs::default();
    let slice = opts.mode == ToyModeArg::Canonical;
    let draw = move |r: &mut ChaCha8Rng| if slice { blobs.sample_slice(r) } else { blobs.sample(r) };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.toy.seed);
    rng.set_stream(1);
    let val = ValSet::draw(opts.val_size, draw, opts.toy.time_dist, &mut rng);
    let (field, trace) = train_toy(draw, &val, &opts.toy)?;
    outputs.write(&dir.join("trace.csv"), &toy_trace_csv(&trace)?)?;
    outputs.write(
        &dir.join("checkpoint.json"),
        field.to_json(&opts.toy, slice)?.as_bytes(),
    )?;
    Ok(json!({
        "epochs": trace.len(),
        "final_train_loss": trace.last().map(|r| r.train_loss),
        "final_val_loss": trace.last().map(|r| r.val_loss),
    }))
}

fn run_molecules(opts: &mut TrainOptions, outputs: &mut Outputs, dir: &std::path::Path) -> Result<Value> {
    let data_path = opts
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("the molecules dataset needs --data".into()))?;
    let data = read_all(&data_path)?;
    if data.is_empty() {
        return Err(CliError::Invalid(format!(
            "no molecules found in {}",
            data_path.display()
        )));
    }
    let val = match &opts.val {
        Some(p) => read_all(p)?,
        None => Vec::new(),
    };
    let vocab = vocab_for(&data.iter().chain(&val).collect::<Vec<_>>());
    let largest = data.iter().chain(&val).map(MoleculeState::n_atoms).max().unwrap_or(1);
    let net = opts.net.get_or_insert_with(|| CanonLiteConfig {
        n_types: vocab.atom_types.len(),
        n_charges: vocab.charges.len(),
        max_atoms: largest.max(CanonLiteConfig::default().max_atoms),
        ..CanonLiteConfig::default()
    });
    let group = opts.group.into();
    let canon = |mols: &[MoleculeState]| -> Result<Vec<MoleculeState>> {
        mols.iter()
            .map(|m| Ok(canonicalize(m, group)?.representative))
            .collect()
    };
    let reps = canon(&data)?;
    let val_reps = canon(&val)?;
    let mut prior = MolecularPrior::fit(&reps, &vocab, opts.rank_bins)?;
    if opts.prior == PriorArg::Isotropic {
        prior.coords = CoordPrior::Isotropic;
    }
    let enc = |reps: &[MoleculeState]| {
        reps.iter()
            .map(|m| vocab.encode(m))
            .collect::<symcanon::Result<Vec<_>>>()
    };
    let (model, trace) = train(&enc(&reps)?, &enc(&val_reps)?, net.clone(), &prior, &vocab, &opts.train)?;
    let mut csv = Vec::new();
    write_trace(&trace, &mut csv).map_err(|e| CliError::io(dir.join("trace.csv"), e))?;
    outputs.write(&dir.join("trace.csv"), &csv)?;
    outputs.write(&dir.join("checkpoint.json"), model.to_json()?.as_bytes())?;
    let last: Option<&TraceRow> = trace.last();
    Ok(json!({
        "n_train": data.len(),
        "n_val": val.len(),
        "epochs": trace.len(),
        "final_train_loss": last.map(|r| r.train.total),
        "final_val_loss": last.map(|r| r.val_loss).filter(|v| v.is_finite()),
        "p_ot": trace.iter().map(|r| r.p_ot).collect::<Vec<_>>(),
    }))
}

pub fn run(args: TrainArgs, ctx: &Ctx) -> Result<()> {
    let mut opts: TrainOptions = ctx.resolve(&args)?;
    opts.fold()?;
    let dir = opts.out.clone().unwrap_or_else(|| ctx.out_dir.join("train"));
    opts.out = Some(dir.clone());
    let mut outputs = Outputs::new();
    let summary = match opts.dataset {
        DatasetArg::C4 => run_c4(&opts, &mut outputs, &dir)?,
        DatasetArg::Molecules => run_molecules(&mut opts, &mut outputs, &dir)?,
    };
    let manifest = outputs.finish(
        &dir.join("manifest.json"),
        "train",
        Some(opts.seed()),
        &opts,
        summary.clone(),
    )?;
    println!("{}", serde_json::to_string(&summary)?);
    println!("wrote {}", manifest.display());
    Ok(())
}
