//! The `simulate` subcommand: evolves the configured system, feeding the
//! configured recorders, and writes a run directory containing the exact
//! settings (config.toml), the NDJSON record stream (run.ndjson), and any
//! snapshot CSVs.

use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::json;

use kmswkg_core::diagnostics::{scattering_deficit, NormRecorder};
use kmswkg_core::error::Error as CoreError;
use kmswkg_core::nonlinearity::{CubicTensor, SystemSpec};
use kmswkg_core::simulator::{
    run, FieldState, GridConfig, RayRecorder, RunObserver, RunStatus, SnapshotRecorder,
    StepOutcome, Stepper,
};

use crate::config::{config_phase, ExperimentConfig, RecorderKind, RecorderSpec};
use crate::emit::{write_snapshot, Stream};
use crate::EXIT_OK;

pub struct SimArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn run_cmd(args: SimArgs) -> Result<i32> {
    let cfg = config_phase(ExperimentConfig::load(&args.config))?;
    let out_dir = config_phase(
        args.out
            .clone()
            .or_else(|| cfg.out.as_ref().map(PathBuf::from))
            .context("simulate needs an output directory: --out or the config 'out' key"),
    )?;
    let spec = config_phase(cfg.build_system())?;
    let data = config_phase(cfg.build_data(spec.n_total()))?;
    let grid = config_phase(cfg.build_grid(data.support_radius))?;
    let weights = config_phase(cfg.build_weights())?;
    config_phase(if cfg.recorders.is_empty() {
        Err(anyhow::anyhow!("simulate needs at least one [[recorders]] entry"))
    } else {
        Ok(())
    })?;

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    std::fs::write(out_dir.join("config.toml"), cfg.canonical())
        .context("cannot write config echo")?;

    let mut recorders = Vec::new();
    for rec in &cfg.recorders {
        recorders.push(build_recorder(rec, &spec, &grid, weights, data.support_radius)?);
    }
    let summary = {
        let mut refs: Vec<&mut dyn RunObserver> =
            recorders.iter_mut().map(|r| r.as_dyn()).collect();
        run(&spec, &grid, &data, &mut refs)?
    };

    let mut stream = Stream::new();
    stream.push(
        "run_meta",
        json!({
            "system": cfg.system.preset.clone().unwrap_or_else(|| "inline".into()),
            "mode": mode_name(&grid),
            "h": grid.h,
            "dt": grid.dt,
            "t_max": grid.t_max,
            "domain_radius": grid.domain_radius,
            "support_radius": data.support_radius,
            "epsilon": data.epsilon,
            "n_components": spec.n_total(),
            "n_kg": spec.n_kg(),
            "n_waves": spec.n_waves(),
            "seed": args.seed.unwrap_or(cfg.seed),
            "weights": { "rho": weights.rho, "kappa": weights.kappa, "s": weights.s },
            "recorders": cfg.recorders.iter().map(|r| r.kind.name()).collect::<Vec<_>>(),
        }),
    );

    for rec in &recorders {
        if let Recorder::Norms(r) = rec {
            for b in &r.bundles {
                stream.push("norms", serde_json::to_value(b)?);
            }
        }
    }
    for rec in &recorders {
        if let Recorder::Scattering(r) = rec {
            for &(t, deficit) in &r.records {
                stream.push(
                    "scattering",
                    json!({ "t": t, "deficit": deficit, "t_match": r.t_match }),
                );
            }
        }
    }
    let mut snapshot_index = 0usize;
    let mut ray_text = String::new();
    for rec in recorders {
        match rec {
            Recorder::Ray(r) => {
                for series in r.finalize(&spec) {
                    series.append_ndjson(&mut ray_text);
                }
            }
            Recorder::Snapshot(r) => {
                for state in &r.taken {
                    let (csv, _) = write_snapshot(&out_dir, state, snapshot_index)?;
                    stream.push("snapshot", json!({ "t": state.t, "file": csv }));
                    snapshot_index += 1;
                }
            }
            Recorder::Norms(_) | Recorder::Scattering(_) => {}
        }
    }
    stream.push_block(&ray_text);

    let (status, t_final) = match summary.status {
        RunStatus::Completed => ("completed", summary.state.t),
        RunStatus::BlewUp { t } => ("blowup", t),
    };
    stream.push("status", json!({ "status": status, "t_final": t_final }));
    stream.write(&out_dir.join("run.ndjson"))?;

    eprintln!(
        "run {}: {} after {} steps (t = {t_final})",
        out_dir.display(),
        status,
        summary.steps_taken
    );
    Ok(EXIT_OK)
}

fn mode_name(grid: &GridConfig) -> &'static str {
    match grid.mode {
        kmswkg_core::simulator::Mode::Planar => "planar",
        kmswkg_core::simulator::Mode::Radial => "radial",
    }
}

enum Recorder {
    Snapshot(SnapshotRecorder),
    Norms(NormRecorder),
    Ray(RayRecorder),
    Scattering(ScatteringObserver),
}

impl Recorder {
    fn as_dyn(&mut self) -> &mut dyn RunObserver {
        match self {
            Recorder::Snapshot(r) => r,
            Recorder::Norms(r) => r,
            Recorder::Ray(r) => r,
            Recorder::Scattering(r) => r,
        }
    }
}

fn build_recorder(
    rec: &RecorderSpec,
    spec: &SystemSpec,
    grid: &GridConfig,
    weights: kmswkg_core::diagnostics::WeightSpec,
    support_radius: f64,
) -> Result<Recorder> {
    let times = config_phase(rec.times.resolve())?;
    Ok(match rec.kind {
        RecorderKind::Snapshot => Recorder::Snapshot(SnapshotRecorder::at_times(grid, &times)),
        RecorderKind::Norms => Recorder::Norms(NormRecorder::new(grid, spec, weights, &times)),
        RecorderKind::Ray => {
            let sigmas = rec.sigmas.clone().unwrap_or_default();
            let theta = rec.theta.unwrap_or(0.0);
            Recorder::Ray(RayRecorder::new(grid, spec, &sigmas, &times, theta))
        }
        RecorderKind::Scattering => {
            let t_match = rec.t_match.expect("validated");
            Recorder::Scattering(ScatteringObserver::new(
                spec,
                grid,
                support_radius,
                t_match,
                &times,
            )?)
        }
    })
}

/// Measures the distance from the Klein-Gordon block to a free (linear)
/// evolution matched to the full state at `t_match`. The reference is
/// advanced in lock step by its own stepper; masking and causal margins
/// derive from the state's own clock, so starting mid-run is sound.
struct ScatteringObserver {
    spec: SystemSpec,
    free_spec: SystemSpec,
    grid: GridConfig,
    support_radius: f64,
    match_step: usize,
    sample_steps: Vec<usize>,
    reference: Option<(Stepper, FieldState)>,
    t_match: f64,
    records: Vec<(f64, f64)>,
}

impl ScatteringObserver {
    fn new(
        spec: &SystemSpec,
        grid: &GridConfig,
        support_radius: f64,
        t_match: f64,
        times: &[f64],
    ) -> Result<Self> {
        if spec.n_kg() == 0 {
            config_phase(Err(anyhow::anyhow!(
                "scattering recorder needs Klein-Gordon components"
            )))?;
        }
        let free_spec = SystemSpec::new(
            spec.n_kg(),
            spec.masses().to_vec(),
            CubicTensor::new(),
            Vec::new(),
        )?;
        let mut sample_steps: Vec<usize> = times.iter().map(|&t| grid.step_of_time(t)).collect();
        sample_steps.sort_unstable();
        sample_steps.dedup();
        Ok(ScatteringObserver {
            spec: spec.clone(),
            free_spec,
            grid: *grid,
            support_radius,
            match_step: grid.step_of_time(t_match),
            sample_steps,
            reference: None,
            t_match,
            records: Vec::new(),
        })
    }
}

impl RunObserver for ScatteringObserver {
    fn observe(&mut self, step: usize, state: &FieldState) -> kmswkg_core::Result<()> {
        if step == self.match_step && self.reference.is_none() {
            let stepper = Stepper::new(&self.free_spec, &self.grid, self.support_radius)?;
            let mut matched = state.clone();
            // The reference only carries the Klein-Gordon block; freeze the
            // wave components at zero so their nonlinear feedback is gone.
            for j in self.spec.n_kg()..matched.n_components() {
                matched.u[j].fill(0.0);
                matched.ut[j].fill(0.0);
            }
            self.reference = Some((stepper, matched));
        } else if step > self.match_step {
            if let Some((stepper, ref_state)) = &mut self.reference {
                match stepper.advance(ref_state)? {
                    StepOutcome::Ok => {}
                    StepOutcome::BlowUp => {
                        return Err(CoreError::InvalidArgument(
                            "free reference evolution left the finite range".into(),
                        ));
                    }
                }
                // Pin to the exact step clock like the main loop does.
                ref_state.t = step as f64 * self.grid.dt;
            }
        }
        if self.sample_steps.binary_search(&step).is_ok() {
            if let Some((_, ref_state)) = &self.reference {
                let d = scattering_deficit(&self.spec, state, ref_state)?;
                self.records.push((state.t, d));
            }
        }
        Ok(())
    }
}
