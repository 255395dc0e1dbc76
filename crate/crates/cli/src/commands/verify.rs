use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::json;
use symcanon::theory::{run_suites, SuiteOptions, SuiteSystem};

use super::Ctx;
use crate::cli::{SystemArg, VerifyArgs};
use crate::config::parse_count;
use crate::error::{CliError, Result};
use crate::manifest::{manifest_for_file, Outputs};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyOptions {
    pub system: SystemArg,
    #[serde(deserialize_with = "count")]
    pub n: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub inject_wrong_reference: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            system: SystemArg::All,
            n: 1_000_000,
            seed: 0,
            out: None,
            inject_wrong_reference: false,
        }
    }
}

/// Accepts `1000000`, `1e6` or `"1e6"`.
fn count<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<usize, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Float(f64),
        Text(String),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Int(v) => return Ok(v as usize),
        Raw::Float(v) => v.to_string(),
        Raw::Text(s) => s,
    };
    parse_count(&text).map_err(serde::de::Error::custom)
}

pub fn run(args: VerifyArgs, ctx: &Ctx) -> Result<bool> {
    let mut opts: VerifyOptions = ctx.resolve(&args)?;
    let out = opts
        .out
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join("theory_report.json"));
    opts.out = Some(out.clone());
    let systems: Vec<SuiteSystem> = match opts.system {
        SystemArg::Signflip => vec![SuiteSystem::Signflip],
        SystemArg::C4 => vec![SuiteSystem::C4],
        SystemArg::S3 => vec![SuiteSystem::S3],
        SystemArg::All => SuiteSystem::ALL.to_vec(),
    };
    let suite = SuiteOptions {
        n_mc: opts.n,
        seed: opts.seed,
        inject_wrong_reference: opts.inject_wrong_reference,
    };
    let report = run_suites(&systems, &suite).map_err(|e| match e {
        symcanon::Error::InvalidInput(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;

    for c in &report.checks {
        println!(
            "{} {:<40} estimate {:>14.6e}  reference {:>14.6e}  tol {:.2e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.estimate,
            c.reference,
            c.tolerance
        );
    }
    let n_fail = report.failures().count();
    println!("{} checks, {} failed", report.checks.len(), n_fail);

    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    let mut outputs = Outputs::new();
    outputs.write(&out, text.as_bytes())?;
    let summary = json!({ "checks": report.checks.len(), "failed": n_fail, "all_pass": report.all_pass });
    outputs.finish(
        &manifest_for_file(&out),
        "verify-theory",
        Some(opts.seed),
        &opts,
        summary,
    )?;
    Ok(report.all_pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_in_config() {
        for v in [json!({"n": 1e6}), json!({"n": "1e6"}), json!({"n": 1000000})] {
            let o: VerifyOptions = serde_json::from_value(v).unwrap();
            assert_eq!(o.n, 1_000_000);
        }
        assert!(serde_json::from_value::<VerifyOptions>(json!({"n": 2.5})).is_err());
    }
}
