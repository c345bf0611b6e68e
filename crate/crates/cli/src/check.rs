//! The `check` subcommand: null-condition decision plus positivity
//! certificate verification or search, reported as one NDJSON record.

use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use kmswkg_core::conditions::{run_check, CheckReport, KmsCertificate};

use crate::config::{config_phase, ExperimentConfig};
use crate::emit::Stream;
use crate::{EXIT_CONDITION_FAILS, EXIT_OK, EXIT_SEARCH_ABSENT};

/// Unit-circle directions sampled by the certificate grid check.
const N_OMEGA: usize = 128;
/// Unit-sphere resolution per dimension of the wave block.
const N_Y: usize = 24;

pub struct CheckArgs {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn run(args: CheckArgs) -> Result<i32> {
    let cfg = config_phase(load_for_command(&args.config, &args.preset, "check"))?;
    let spec = config_phase(cfg.build_system())?;
    let supplied = config_phase(cfg.build_certificate())?;
    let seed = args.seed.unwrap_or(cfg.seed);

    let report = run_check(&spec, supplied, N_OMEGA, N_Y, seed)?;
    let (verdict, code) = verdict_of(&report);

    let mut stream = Stream::new();
    stream.push(
        "check",
        json!({
            "system": system_label(&cfg),
            "seed": seed,
            "n_omega": N_OMEGA,
            "n_y": N_Y,
            "null": serde_json::to_value(&report.null)?,
            "kms": report.kms.as_ref().map(serde_json::to_value).transpose()?,
            "certificate": report.certificate.as_ref().map(certificate_value),
            "searched": report.searched,
            "verdict": verdict,
        }),
    );
    print!("{}", stream.as_str());
    if let Some(path) = &args.out {
        stream.write(path)?;
    }
    eprintln!(
        "null condition: {}; certificate: {}",
        if report.null.holds { "holds" } else { "fails" },
        verdict
    );
    Ok(code)
}

fn verdict_of(report: &CheckReport) -> (&'static str, i32) {
    match &report.kms {
        Some(kms) if kms.holds => ("holds", EXIT_OK),
        Some(_) => ("fails", EXIT_CONDITION_FAILS),
        None => ("search_absent", EXIT_SEARCH_ABSENT),
    }
}

fn system_label(cfg: &ExperimentConfig) -> String {
    cfg.system.preset.clone().unwrap_or_else(|| "inline".to_string())
}

fn certificate_value(cert: &KmsCertificate) -> Value {
    match cert {
        KmsCertificate::Constant(m) => {
            let rows: Vec<Vec<f64>> =
                (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect();
            json!({ "kind": "constant", "rows": rows })
        }
        KmsCertificate::Trig { a0, harmonics } => json!({
            "kind": "trig",
            "dim": a0.nrows(),
            "harmonics": harmonics.len(),
        }),
    }
}

pub fn load_for_command(
    config: &Option<PathBuf>,
    preset: &Option<String>,
    what: &str,
) -> Result<ExperimentConfig> {
    match (config, preset) {
        (Some(path), None) => ExperimentConfig::load(path),
        (None, Some(name)) => ExperimentConfig::from_preset(name),
        (Some(_), Some(_)) => anyhow::bail!("give either --config or --preset, not both"),
        (None, None) => anyhow::bail!("{what} needs --config or --preset"),
    }
    .context("cannot load configuration")
}
