//! The `analyze` subcommand: reads a finished run directory (the config
//! echo plus run.ndjson), fits decay exponents, checks transport and
//! scattering consistency, and writes analysis.ndjson.
//!
//! A malformed run directory (missing files, schema mismatch, records the
//! requested checks need but the run never produced) is a configuration
//! error. Once the inputs are sound the findings, pass or fail, live in the
//! emitted records and the exit code stays zero.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use kmswkg_core::diagnostics::{fit_decay_exponent, NormSeries};
use kmswkg_core::nonlinearity::Direction;
use kmswkg_core::profile::{integrate_profile_from, Forcing, RayCoords, StepControl};

use crate::config::{config_phase, ExperimentConfig};
use crate::emit::Stream;
use crate::EXIT_OK;

pub struct AnalyzeArgs {
    pub run_dir: PathBuf,
}

pub fn run(args: AnalyzeArgs) -> Result<i32> {
    let cfg = config_phase(ExperimentConfig::load(&args.run_dir.join("config.toml")))?;
    let section = cfg.analyze.clone().unwrap_or_default();
    let data = config_phase(parse_run(&args.run_dir))?;
    let spec = config_phase(cfg.build_system())?;

    let mut stream = Stream::new();
    let mut all_pass = true;

    for f in &section.fits {
        let series = config_phase(
            data.norms
                .iter()
                .find(|s| s.name == f.series && !s.is_empty())
                .ok_or_else(|| anyhow!("run has no recorded '{}' series", f.series)),
        )?;
        let report = config_phase(
            fit_decay_exponent(series, (f.window[0], f.window[1]), f.model)
                .with_context(|| format!("fitting '{}'", f.series)),
        )?;
        let pass = passes(report.slope, f.expect, f.band);
        all_pass &= pass.unwrap_or(true);
        stream.push(
            "fit",
            json!({
                "series": f.series,
                "model": f.model,
                "window": f.window,
                "slope": report.slope,
                "stderr": report.stderr,
                "n_used": report.n_used,
                "expect": f.expect,
                "band": f.band,
                "pass": pass,
            }),
        );
        println!("fit {}: slope {:.4}{}", f.series, report.slope, verdict_suffix(pass));
    }

    for f in &section.ray_fits {
        let groups: Vec<&RayGroup> =
            data.rays.iter().filter(|g| (g.sigma - f.sigma).abs() < 1e-9).collect();
        config_phase(if groups.is_empty() {
            Err(anyhow!("run has no ray records at sigma = {}", f.sigma))
        } else {
            Ok(())
        })?;
        for g in groups {
            let mut series = NormSeries::new(format!("{}@{}", f.field, g.sigma));
            for (t, v) in g.t.iter().zip(config_phase(g.field(&f.field))?) {
                series.push(*t, v.abs())?;
            }
            let report = config_phase(
                fit_decay_exponent(&series, (f.window[0], f.window[1]), f.model)
                    .with_context(|| format!("fitting {} on sigma = {}", f.field, f.sigma)),
            )?;
            let pass = passes(report.slope, f.expect, f.band);
            all_pass &= pass.unwrap_or(true);
            stream.push(
                "ray_fit",
                json!({
                    "component": g.component,
                    "sigma": g.sigma,
                    "field": f.field,
                    "model": f.model,
                    "window": f.window,
                    "slope": report.slope,
                    "stderr": report.stderr,
                    "n_used": report.n_used,
                    "expect": f.expect,
                    "band": f.band,
                    "pass": pass,
                }),
            );
            println!(
                "ray_fit {} sigma {}: slope {:.4}{}",
                f.field,
                g.sigma,
                report.slope,
                verdict_suffix(pass)
            );
        }
    }

    if let Some(rc) = &section.rays {
        let dt = cfg.grid.as_ref().map_or(0.1, |g| g.dt);
        let red = spec.reduced_form();
        let mut worst = 0.0f64;
        let mut n_checked = 0usize;
        let mut section_pass = true;

        let mut sigmas: Vec<f64> = data.rays.iter().map(|g| g.sigma).collect();
        sigmas.sort_by(f64::total_cmp);
        sigmas.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        sigmas.retain(|&s| {
            rc.sigma_min.map_or(true, |lo| s >= lo - 1e-9)
                && rc.sigma_max.map_or(true, |hi| s <= hi + 1e-9)
        });
        config_phase(if sigmas.is_empty() {
            Err(anyhow!("no recorded rays fall inside the sigma window"))
        } else {
            Ok(())
        })?;

        for &sigma in &sigmas {
            // One group per wave component, ordered by component index.
            let mut groups: Vec<&RayGroup> =
                data.rays.iter().filter(|g| (g.sigma - sigma).abs() < 1e-9).collect();
            groups.sort_by_key(|g| g.component);
            let theta = groups[0].theta;
            let peak = groups
                .iter()
                .flat_map(|g| g.w_profile.iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));

            for &t1 in &rc.t1 {
                let t2 = rc.factor * t1;
                let slack = (2.0 * dt).max(1e-3 * t1);
                let (ta, w1) = config_phase(sample_vector(&groups, t1, slack).ok_or_else(
                    || anyhow!("no ray sample within {slack} of t1 = {t1} on sigma = {sigma}"),
                ))?;
                let (tb, w2) = config_phase(
                    sample_vector(&groups, t2, (2.0 * dt).max(1e-3 * t2)).ok_or_else(|| {
                        anyhow!("no ray sample within reach of t2 = {t2} on sigma = {sigma}")
                    }),
                )?;
                let ray = RayCoords::new(sigma, Direction::from_angle(theta));
                let traj = integrate_profile_from(
                    &red,
                    ray,
                    ta,
                    &w1,
                    tb,
                    &Forcing::None,
                    None,
                    &StepControl::default(),
                )?;
                let evolved = traj.final_state().to_vec();
                let mut err = 0.0f64;
                for k in 0..w2.len() {
                    let denom = w2[k].abs().max(0.02 * peak).max(1e-300);
                    err = err.max((evolved[k] - w2[k]).abs() / denom);
                }
                let pass = err <= rc.tol && !traj.blew_up && !traj.stalled;
                section_pass &= pass;
                worst = worst.max(err);
                n_checked += 1;
                stream.push(
                    "ray_consistency",
                    json!({
                        "sigma": sigma,
                        "components": groups.iter().map(|g| g.component).collect::<Vec<_>>(),
                        "t1": ta,
                        "t2": tb,
                        "extracted_t1": w1,
                        "evolved": evolved,
                        "extracted_t2": w2,
                        "rel_err": err,
                        "tol": rc.tol,
                        "pass": pass,
                    }),
                );
            }
        }
        all_pass &= section_pass;
        stream.push(
            "ray_consistency_summary",
            json!({
                "n_checked": n_checked,
                "worst_rel_err": worst,
                "tol": rc.tol,
                "pass": section_pass,
            }),
        );
        println!(
            "ray consistency: {} checks, worst rel err {:.3}: {}",
            n_checked,
            worst,
            if section_pass { "PASS" } else { "FAIL" }
        );
    }

    if let Some(sc) = &section.scattering {
        config_phase(if data.scattering.is_empty() {
            Err(anyhow!("run has no scattering records"))
        } else {
            Ok(())
        })?;
        let mut pts = data.scattering.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let monotone = pts.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + sc.tol));
        all_pass &= monotone;
        stream.push(
            "scattering_check",
            json!({
                "t_match": data.scattering_t_match,
                "times": pts.iter().map(|p| p.0).collect::<Vec<_>>(),
                "deficits": pts.iter().map(|p| p.1).collect::<Vec<_>>(),
                "tol": sc.tol,
                "pass": monotone,
            }),
        );
        println!(
            "scattering deficit: {} samples, nonincreasing within {}: {}",
            pts.len(),
            sc.tol,
            if monotone { "PASS" } else { "FAIL" }
        );
    }

    stream.push(
        "analysis_summary",
        json!({
            "run_status": data.status,
            "t_final": data.t_final,
            "pass": all_pass,
        }),
    );
    println!("analysis: {}", if all_pass { "PASS" } else { "FAIL" });
    stream.write(&args.run_dir.join("analysis.ndjson"))?;
    Ok(EXIT_OK)
}

fn passes(slope: f64, expect: Option<f64>, band: Option<f64>) -> Option<bool> {
    match (expect, band) {
        (Some(e), Some(b)) => Some((slope - e).abs() <= b),
        _ => None,
    }
}

fn verdict_suffix(pass: Option<bool>) -> String {
    match pass {
        Some(true) => ": PASS".into(),
        Some(false) => ": FAIL".into(),
        None => String::new(),
    }
}

/// The wave-block profile vector at the sample time nearest `t` (within
/// `slack`), taken jointly across the per-component groups.
fn sample_vector(groups: &[&RayGroup], t: f64, slack: f64) -> Option<(f64, Vec<f64>)> {
    let ts = *groups
        .first()?
        .t
        .iter()
        .min_by(|a, b| (*a - t).abs().total_cmp(&(*b - t).abs()))?;
    if (ts - t).abs() > slack {
        return None;
    }
    let mut w = Vec::with_capacity(groups.len());
    for g in groups {
        // Sample grids agree across components of one recorder; look up by
        // time to stay robust if they ever do not.
        let k = g.t.iter().position(|&tk| (tk - ts).abs() <= 1e-9)?;
        w.push(g.w_profile[k]);
    }
    Some((ts, w))
}

struct RayGroup {
    component: usize,
    sigma: f64,
    theta: f64,
    t: Vec<f64>,
    w_profile: Vec<f64>,
    w: Vec<f64>,
    r12_wt: Vec<f64>,
    r12_wr: Vec<f64>,
    bracket1: Vec<f64>,
}

impl RayGroup {
    fn field(&self, name: &str) -> Result<&[f64]> {
        Ok(match name {
            "w" => &self.w,
            "w_profile" => &self.w_profile,
            "r12_wt" => &self.r12_wt,
            "r12_wr" => &self.r12_wr,
            "bracket1" => &self.bracket1,
            other => bail!("unknown ray field '{other}'"),
        })
    }
}

struct RunData {
    norms: Vec<NormSeries>,
    rays: Vec<RayGroup>,
    scattering: Vec<(f64, f64)>,
    scattering_t_match: Option<f64>,
    status: String,
    t_final: f64,
}

fn parse_run(dir: &std::path::Path) -> Result<RunData> {
    let path = dir.join("run.ndjson");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;

    let mut norms: Vec<NormSeries> =
        crate::config::SERIES_NAMES.iter().map(|n| NormSeries::new(*n)).collect();
    let mut rays: Vec<RayGroup> = Vec::new();
    let mut scattering = Vec::new();
    let mut scattering_t_match = None;
    let mut status = None;
    let mut t_final = f64::NAN;

    for (lineno, line) in text.lines().enumerate() {
        let n = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Value = serde_json::from_str(line)
            .with_context(|| format!("run.ndjson line {n} is not valid JSON"))?;
        let schema = rec
            .get("schema")
            .and_then(Value::as_str)
            .with_context(|| format!("run.ndjson line {n} has no schema tag"))?;
        if schema != kmswkg_core::SCHEMA_VERSION {
            bail!(
                "run.ndjson line {n} has schema version '{schema}', \
                 this build reads '{}'",
                kmswkg_core::SCHEMA_VERSION
            );
        }
        let kind = rec
            .get("record")
            .and_then(Value::as_str)
            .with_context(|| format!("run.ndjson line {n} has no record tag"))?;
        match kind {
            "norms" => {
                let t = num(&rec, "t", n)?;
                for s in norms.iter_mut() {
                    let name = s.name.clone();
                    s.push(t, num(&rec, &name, n)?)
                        .with_context(|| format!("run.ndjson line {n}"))?;
                }
            }
            "ray_header" => rays.push(RayGroup {
                component: num(&rec, "component", n)? as usize,
                sigma: num(&rec, "sigma", n)?,
                theta: num(&rec, "theta", n)?,
                t: Vec::new(),
                w_profile: Vec::new(),
                w: Vec::new(),
                r12_wt: Vec::new(),
                r12_wr: Vec::new(),
                bracket1: Vec::new(),
            }),
            "ray_sample" => {
                let g = rays
                    .last_mut()
                    .with_context(|| format!("run.ndjson line {n}: sample before any header"))?;
                g.t.push(num(&rec, "t", n)?);
                g.w_profile.push(num(&rec, "w_profile", n)?);
                g.w.push(num(&rec, "w", n)?);
                g.r12_wt.push(num(&rec, "r12_wt", n)?);
                g.r12_wr.push(num(&rec, "r12_wr", n)?);
                g.bracket1.push(num(&rec, "bracket1", n)?);
            }
            "scattering" => {
                scattering.push((num(&rec, "t", n)?, num(&rec, "deficit", n)?));
                scattering_t_match = Some(num(&rec, "t_match", n)?);
            }
            "status" => {
                status = Some(
                    rec.get("status")
                        .and_then(Value::as_str)
                        .with_context(|| format!("run.ndjson line {n}: status without status"))?
                        .to_string(),
                );
                t_final = num(&rec, "t_final", n)?;
            }
            // Pointer and metadata records carry nothing the checks need.
            _ => {}
        }
    }
    let status = status.context("run.ndjson has no terminal status record")?;
    Ok(RunData { norms, rays, scattering, scattering_t_match, status, t_final })
}

fn num(rec: &Value, key: &str, lineno: usize) -> Result<f64> {
    rec.get(key)
        .and_then(Value::as_f64)
        .with_context(|| format!("run.ndjson line {lineno}: missing numeric '{key}'"))
}
