use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use symcanon::canonicalizer::{canonicalize, canonicalize_ordered, order_atomic, order_multihop, CanonicalResult};
use symcanon::molecule::{element_symbol, read_molecule, write_sdf, write_xyz};

use super::Ctx;
use crate::cli::{CanonicalizeArgs, GroupArg, OrderingArg};
use crate::error::{CliError, Result};
use crate::manifest::{manifest_for_file, Outputs};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalizeOptions {
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[serde(default = "default_group")]
    pub group: GroupArg,
    #[serde(default = "default_ordering")]
    pub ordering: OrderingArg,
    #[serde(default = "default_depth")]
    pub multihop_depth: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub ranks: Option<PathBuf>,
}

fn default_group() -> GroupArg {
    GroupArg::PermSo3
}

fn default_ordering() -> OrderingArg {
    OrderingArg::Spectral
}

fn default_depth() -> usize {
    3
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn ranks_csv(res: &CanonicalResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "input_index", "element", "rank", "fiedler", "degenerate"])?;
    let rep = &res.representative;
    for i in 0..rep.n_atoms() {
        let z = rep.atom_types[i];
        w.write_record([
            i.to_string(),
            res.gauge.perm[i].to_string(),
            element_symbol(z).map_or_else(|| z.to_string(), str::to_string),
            format!("{}", res.ranks[i]),
            format!("{}", res.fiedler[i]),
            res.degenerate.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))
}

pub fn run(args: CanonicalizeArgs, ctx: &Ctx) -> Result<()> {
    let mut opts: CanonicalizeOptions = ctx.resolve(&args)?;
    let input_stem = opts
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "molecule".into());
    let out = opts
        .out
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join(format!("{input_stem}.canonical.xyz")));
    let ranks = opts.ranks.clone().unwrap_or_else(|| sibling(&out, ".ranks.csv"));
    opts.out = Some(out.clone());
    opts.ranks = Some(ranks.clone());

    let m = read_molecule(&opts.input)?;
    let group = opts.group.into();
    let res = match opts.ordering {
        OrderingArg::Spectral => canonicalize(&m, group)?,
        OrderingArg::Multihop => {
            let (order, tied) = order_multihop(&m, opts.multihop_depth);
            canonicalize_ordered(&m, &order, group, tied)?
        }
        OrderingArg::Atomic => {
            let (order, tied) = order_atomic(&m);
            canonicalize_ordered(&m, &order, group, tied)?
        }
    };
    if res.degenerate {
        eprintln!("warning: ordering has ties or a near-degenerate spectrum; the representative may not be unique");
    }

    let ext = out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let text = match ext.as_deref() {
        Some("xyz") => write_xyz(&res.representative, &format!("canonical {input_stem}")),
        Some("sdf") | Some("mol") => write_sdf(&res.representative, &input_stem),
        other => return Err(CliError::Usage(format!("unsupported output extension {other:?}"))),
    };
    let mut outputs = Outputs::new();
    outputs.write(&out, text.as_bytes())?;
    outputs.write(&ranks, &ranks_csv(&res)?)?;
    let summary = json!({
        "n_atoms": m.n_atoms(),
        "degenerate": res.degenerate,
        "input_index_of_canonical": res.gauge.perm,
    });
    let manifest = outputs.finish(&manifest_for_file(&out), "canonicalize", None, &opts, summary)?;
    println!(
        "wrote {} ({} atoms), {}, {}",
        out.display(),
        m.n_atoms(),
        ranks.display(),
        manifest.display()
    );
    Ok(())
}
