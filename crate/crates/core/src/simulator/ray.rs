//! Extraction of the asymptotic profile `W = ((d_r - d_t)/2)(r^{1/2} w)`
//! along rays `r = t + sigma`.
//!
//! Samples are only taken inside the diagnostic cone
//! `{2 <= t, t/2 <= r <= t + R}`; outside it the profile picture does not
//! apply and extraction reports the point as skipped.

use serde::Serialize;

use crate::error::Result;
use crate::nonlinearity::{Direction, SystemSpec};
use crate::simulator::{FieldState, Geometry, GridConfig, RunObserver};

/// Pointwise data extracted on one ray at one time.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RaySample {
    pub t: f64,
    pub r: f64,
    /// The profile value `W`.
    pub w_profile: f64,
    /// Field value at the sample point.
    pub w: f64,
    /// `r^{1/2} d_t w`.
    pub r12_wt: f64,
    /// `r^{1/2} d_r w`.
    pub r12_wr: f64,
    /// First-order weighted bracket surrogate
    /// `|w| + |w_t| + |w_r| + |Lw| + <sigma>(|w_t| + |w_r|)` with the boost
    /// field `L = r d_t + t d_r`.
    pub bracket1: f64,
}

/// Time series of one component's samples on one ray, with the source-term
/// estimate filled in by [`RayRecorder::finalize`].
#[derive(Clone, Debug, Serialize)]
pub struct RaySeries {
    /// Absolute component index of the tracked wave component.
    pub component: usize,
    pub sigma: f64,
    /// Ray direction angle; irrelevant for radial runs.
    pub theta: f64,
    pub samples: Vec<RaySample>,
    /// Discrete estimate of the forcing `H = dW/dt + F_red(w, W)/(2t)`,
    /// aligned with `samples`; `None` at the ends where no centered
    /// difference exists.
    pub h_est: Vec<Option<f64>>,
}

impl RaySeries {
    /// Profile value nearest to time `t`, if any sample exists.
    pub fn profile_at(&self, t: f64) -> Option<f64> {
        self.samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .map(|s| s.w_profile)
    }

    pub fn append_ndjson(&self, out: &mut String) {
        let header = serde_json::json!({
            "record": "ray_header",
            "schema": crate::SCHEMA_VERSION,
            "component": self.component,
            "sigma": self.sigma,
            "theta": self.theta,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for (s, h) in self.samples.iter().zip(&self.h_est) {
            let rec = serde_json::json!({
                "record": "ray_sample",
                "schema": crate::SCHEMA_VERSION,
                "t": s.t,
                "r": s.r,
                "w_profile": s.w_profile,
                "w": s.w,
                "r12_wt": s.r12_wt,
                "r12_wr": s.r12_wr,
                "bracket1": s.bracket1,
                "h_est": h,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
    }
}

fn in_cone(t: f64, r: f64, support: f64) -> bool {
    t >= 2.0 && r >= 0.5 * t && r <= t + support
}

/// Extracts one sample at `r = t + sigma` along direction `theta`, or `None`
/// when the point is outside the diagnostic cone or too close to the grid
/// edge. Nodal values use centered differences of `r^{1/2} w` and the stored
/// time derivative; off-grid radii interpolate linearly.
pub fn extract_ray(state: &FieldState, comp: usize, sigma: f64, theta: f64) -> Option<RaySample> {
    let t = state.t;
    let r = t + sigma;
    if !in_cone(t, r, state.data_support) {
        return None;
    }
    let (w, wt, wr, d_phi) = match state.geom {
        Geometry::Radial { n, h } => {
            let pos = r / h;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i < 2 || i + 3 > n {
                return None;
            }
            let u = &state.u[comp];
            let ut = &state.ut[comp];
            let phi = |k: usize| ((k as f64) * h).sqrt() * u[k];
            let d_phi_at = |k: usize| (phi(k + 1) - phi(k - 1)) / (2.0 * h);
            let dw_at = |k: usize| (u[k + 1] - u[k - 1]) / (2.0 * h);
            let lerp = |a: f64, b: f64| a + frac * (b - a);
            (
                lerp(u[i], u[i + 1]),
                lerp(ut[i], ut[i + 1]),
                lerp(dw_at(i), dw_at(i + 1)),
                lerp(d_phi_at(i), d_phi_at(i + 1)),
            )
        }
        Geometry::Planar { n, h, half } => {
            let (o1, o2) = (theta.cos(), theta.sin());
            let (x1, x2) = (r * o1, r * o2);
            let margin = 2.0 * h;
            if x1.abs() > half - margin || x2.abs() > half - margin {
                return None;
            }
            let u = &state.u[comp];
            let ut = &state.ut[comp];
            let at = |arr: &[f64], p1: f64, p2: f64| bilinear(arr, n, h, half, p1, p2);
            let w = at(u, x1, x2);
            let wt = at(ut, x1, x2);
            let (f1, f2) = (x1 + h * o1, x2 + h * o2);
            let (b1, b2) = (x1 - h * o1, x2 - h * o2);
            let wr = (at(u, f1, f2) - at(u, b1, b2)) / (2.0 * h);
            let rf = f1.hypot(f2);
            let rb = b1.hypot(b2);
            let d_phi = (rf.sqrt() * at(u, f1, f2) - rb.sqrt() * at(u, b1, b2)) / (2.0 * h);
            (w, wt, wr, d_phi)
        }
    };
    let r12 = r.sqrt();
    let w_profile = 0.5 * (d_phi - r12 * wt);
    let boost = r * wt + t * wr;
    let sig_w = (1.0 + sigma * sigma).sqrt();
    let bracket1 = w.abs() + wt.abs() + wr.abs() + boost.abs() + sig_w * (wt.abs() + wr.abs());
    Some(RaySample {
        t,
        r,
        w_profile,
        w,
        r12_wt: r12 * wt,
        r12_wr: r12 * wr,
        bracket1,
    })
}

fn bilinear(arr: &[f64], n: usize, h: f64, half: f64, x1: f64, x2: f64) -> f64 {
    let p1 = (x1 + half) / h;
    let p2 = (x2 + half) / h;
    let i1 = (p1.floor() as usize).min(n - 2);
    let i2 = (p2.floor() as usize).min(n - 2);
    let f1 = p1 - i1 as f64;
    let f2 = p2 - i2 as f64;
    let v00 = arr[i2 * n + i1];
    let v10 = arr[i2 * n + i1 + 1];
    let v01 = arr[(i2 + 1) * n + i1];
    let v11 = arr[(i2 + 1) * n + i1 + 1];
    v00 * (1.0 - f1) * (1.0 - f2) + v10 * f1 * (1.0 - f2) + v01 * (1.0 - f1) * f2 + v11 * f1 * f2
}

/// Observer that extracts every wave component on a set of rays at a set of
/// times.
pub struct RayRecorder {
    steps: Vec<usize>,
    dt: f64,
    sigmas: Vec<f64>,
    theta: f64,
    n_kg: usize,
    /// Builders indexed `[sigma][wave]`.
    acc: Vec<Vec<RaySeries>>,
}

impl RayRecorder {
    pub fn new(grid: &GridConfig, spec: &SystemSpec, sigmas: &[f64], times: &[f64], theta: f64) -> Self {
        let mut steps: Vec<usize> = times.iter().map(|&t| grid.step_of_time(t)).collect();
        steps.sort_unstable();
        steps.dedup();
        let acc = sigmas
            .iter()
            .map(|&sigma| {
                (0..spec.n_waves())
                    .map(|k| RaySeries {
                        component: spec.n_kg() + k,
                        sigma,
                        theta,
                        samples: Vec::new(),
                        h_est: Vec::new(),
                    })
                    .collect()
            })
            .collect();
        RayRecorder {
            steps,
            dt: grid.dt,
            sigmas: sigmas.to_vec(),
            theta,
            n_kg: spec.n_kg(),
            acc,
        }
    }

    /// Fills in the source-term estimates and hands the series out, grouped
    /// by ray then wave component.
    pub fn finalize(mut self, spec: &SystemSpec) -> Vec<RaySeries> {
        let red = spec.reduced_form();
        let dir = Direction::from_angle(self.theta);
        for group in &mut self.acc {
            let n_times = group.first().map_or(0, |s| s.samples.len());
            // Λ gating is component independent, so the series in one group
            // stay aligned; guard anyway.
            if group.iter().any(|s| s.samples.len() != n_times) {
                for series in group.iter_mut() {
                    series.h_est = vec![None; series.samples.len()];
                }
                continue;
            }
            for series in group.iter_mut() {
                series.h_est = vec![None; n_times];
            }
            for i in 1..n_times.saturating_sub(1) {
                let y: Vec<f64> = group.iter().map(|s| s.samples[i].w_profile).collect();
                let f = red.eval(dir, &y);
                let t0 = group[0].samples[i - 1].t;
                let t1 = group[0].samples[i].t;
                let t2 = group[0].samples[i + 1].t;
                let (b, a) = (t1 - t0, t2 - t1);
                for (k, series) in group.iter_mut().enumerate() {
                    let fm = series.samples[i - 1].w_profile;
                    let f0 = series.samples[i].w_profile;
                    let fp = series.samples[i + 1].w_profile;
                    // Three-point derivative on a possibly nonuniform grid.
                    let dw = (fp * b * b - fm * a * a + f0 * (a * a - b * b))
                        / (a * b * (a + b));
                    series.h_est[i] = Some(dw + f[k] / (2.0 * t1));
                }
            }
        }
        self.acc.into_iter().flatten().collect()
    }
}

impl RunObserver for RayRecorder {
    fn observe(&mut self, step: usize, state: &FieldState) -> Result<()> {
        if self.steps.binary_search(&step).is_err() {
            return Ok(());
        }
        debug_assert!((state.t - step as f64 * self.dt).abs() < 1e-9 * (1.0 + state.t));
        for (si, &sigma) in self.sigmas.iter().enumerate() {
            // Either every wave component yields a sample or none does;
            // partial groups would break the alignment finalize relies on.
            let samples: Vec<Option<RaySample>> = (0..self.acc[si].len())
                .map(|k| extract_ray(state, self.n_kg + k, sigma, self.theta))
                .collect();
            if samples.iter().all(|s| s.is_some()) {
                for (k, s) in samples.into_iter().enumerate() {
                    self.acc[si][k].samples.push(s.unwrap());
                }
            }
        }
        Ok(())
    }
}
