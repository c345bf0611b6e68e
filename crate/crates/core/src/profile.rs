//! Asymptotic profile system along outgoing characteristic rays.
//!
//! Along the ray `x = (t + sigma) * omega` the rescaled outgoing wave
//! derivative `W = D_-(r^{1/2} w)`, `D_- = (d_r - d_t)/2`, satisfies the
//! reduced system
//!
//! ```text
//! d_+ W(t) = -F_red(omega, W(t)) / (2 t) + H(t)
//! ```
//!
//! where `d_+` differentiates along the ray and `H` collects curvature,
//! reduction, and Klein-Gordon coupling remainders (supplied here as data, or
//! omitted). The linearization transports variation vectors by the Jacobian
//! `G = dF_red/dY` along a base trajectory.
//!
//! For a single wave component with `F_red = Y^3` the system is solvable in
//! closed form, [`explicit_cubic_profile`], which anchors the integrator
//! tests; the sign-flipped equation blows up at [`cubic_pole_time`].
//!
//! Integration is embedded Dormand-Prince 5(4) with proportional step
//! control. Tolerances default to `rtol = 1e-9`, `atol = 1e-12`; blow-up is
//! flagged once `|W|` exceeds 1e8 and the trajectory is truncated there.

use rayon::prelude::*;
use serde::Serialize;

use crate::conditions::KmsCertificate;
use crate::error::{Error, Result};
use crate::nonlinearity::{Direction, ReducedForm, SystemSpec};
use crate::SCHEMA_VERSION;

/// Amplitude threshold for declaring blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e8;

/// A characteristic ray, parametrized by offset `sigma` from the light cone
/// and outgoing direction.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RayCoords {
    pub sigma: f64,
    pub direction: Direction,
}

impl RayCoords {
    pub fn new(sigma: f64, direction: Direction) -> Self {
        RayCoords { sigma, direction }
    }

    /// Earliest time at which this ray lies in the interior region
    /// `{1 <= t/2 <= |x|}`.
    pub fn t_start(&self) -> f64 {
        t0_of_sigma(self.sigma)
    }
}

/// Entry time of the ray `x = (t + sigma) omega` into the region
/// `{1 <= t/2 <= |x|}`: the radius constraint gives `t >= -2 sigma`, the
/// time floor gives `t >= 2`.
pub fn t0_of_sigma(sigma: f64) -> f64 {
    (-2.0 * sigma).max(2.0)
}

/// Source term for the profile system.
pub enum Forcing {
    None,
    /// Closure writing `H(t)` into the provided slice.
    Func(Box<dyn Fn(f64, &mut [f64]) + Send + Sync>),
    /// Linearly interpolated samples.
    Sampled(SampledForcing),
}

impl Forcing {
    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match self {
            Forcing::None => out.fill(0.0),
            Forcing::Func(f) => {
                f(t, out);
                if out.iter().any(|a| !a.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "forcing returned a nonfinite value at t = {t}"
                    )));
                }
            }
            Forcing::Sampled(s) => s.eval_into(t, out),
        }
        Ok(())
    }
}

/// Time series of forcing vectors, interpolated linearly and clamped at the
/// ends.
pub struct SampledForcing {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl SampledForcing {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::InvalidArgument(
                "sampled forcing needs matching, nonempty times and values".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("forcing times must strictly increase".into()));
        }
        let width = values[0].len();
        for (t, v) in times.iter().zip(&values) {
            if v.len() != width {
                return Err(Error::InvalidArgument("forcing rows must have equal width".into()));
            }
            if !t.is_finite() || v.iter().any(|a| !a.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "nonfinite forcing sample at t = {t}"
                )));
            }
        }
        Ok(SampledForcing { times, values })
    }

    fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if t <= self.times[0] {
            out.copy_from_slice(&self.values[0]);
            return;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(&self.values[n - 1]);
            return;
        }
        let hi = self.times.partition_point(|&s| s <= t).min(n - 1);
        let lo = hi - 1;
        let lam = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        for (k, o) in out.iter_mut().enumerate() {
            *o = (1.0 - lam) * self.values[lo][k] + lam * self.values[hi][k];
        }
    }
}

/// Adaptive step control for the embedded 5(4) pair.
#[derive(Clone, Debug)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Step cap as a fraction of the current time; keeps recorded samples
    /// dense enough for downstream linear interpolation.
    pub max_rel_step: f64,
    /// Times the integrator must land on exactly (sorted or not; filtered to
    /// the integration window).
    pub sample_times: Vec<f64>,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { rtol: 1e-9, atol: 1e-12, max_rel_step: 0.05, sample_times: Vec::new() }
    }
}

/// Recorded solution of the profile system along one ray.
#[derive(Clone, Debug)]
pub struct ProfileTrajectory {
    pub ray: RayCoords,
    /// Increasing sample times, starting at the ray entry time.
    pub times: Vec<f64>,
    /// One state per sample time, `n_waves` wide.
    pub states: Vec<Vec<f64>>,
    /// `W^T J(omega) W` at each sample, when a certificate was supplied.
    pub lyapunov: Option<Vec<f64>>,
    /// Amplitude crossed [`BLOWUP_THRESHOLD`]; the trajectory is truncated at
    /// the crossing sample.
    pub blew_up: bool,
    /// Step size collapsed without reaching the threshold or the end time.
    pub stalled: bool,
}

impl ProfileTrajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least the initial sample")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial sample")
    }

    /// Linear interpolation between recorded samples; clamped outside the
    /// recorded window.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let hi = self.times.partition_point(|&s| s <= t).min(n - 1);
        let lo = hi - 1;
        let lam = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        self.states[lo]
            .iter()
            .zip(&self.states[hi])
            .map(|(a, b)| (1.0 - lam) * a + lam * b)
            .collect()
    }

    /// Serializes as NDJSON: one header record, then one record per sample.
    pub fn to_ndjson(&self) -> String {
        #[derive(Serialize)]
        struct Header<'a> {
            #[serde(rename = "record")]
            kind: &'a str,
            schema: &'a str,
            sigma: f64,
            theta: f64,
            t0: f64,
            blew_up: bool,
            stalled: bool,
        }
        #[derive(Serialize)]
        struct Sample<'a> {
            #[serde(rename = "record")]
            kind: &'a str,
            schema: &'a str,
            t: f64,
            w: &'a [f64],
            #[serde(skip_serializing_if = "Option::is_none")]
            lyapunov: Option<f64>,
        }
        let mut out = String::new();
        let header = Header {
            kind: "profile_header",
            schema: SCHEMA_VERSION,
            sigma: self.ray.sigma,
            theta: self.ray.direction.theta(),
            t0: self.times[0],
            blew_up: self.blew_up,
            stalled: self.stalled,
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let rec = Sample {
                kind: "profile_sample",
                schema: SCHEMA_VERSION,
                t: *t,
                w: &self.states[i],
                lyapunov: self.lyapunov.as_ref().map(|l| l[i]),
            };
            out.push_str(&serde_json::to_string(&rec).expect("sample serializes"));
            out.push('\n');
        }
        out
    }
}

/// Closed-form decaying profile of `dA/dt = -A^3 / (2t)`:
/// `A(t) = A0 / sqrt(1 + A0^2 ln(t / t0))`.
pub fn explicit_cubic_profile(a0: f64, t0: f64, t: f64) -> f64 {
    a0 / (1.0 + a0 * a0 * (t / t0).ln()).sqrt()
}

/// Pole time of the sign-flipped equation `dA/dt = +A^3 / (2t)`:
/// the solution `A0 / sqrt(1 - A0^2 ln(t / t0))` diverges at
/// `t0 * exp(1 / A0^2)`.
pub fn cubic_pole_time(a0: f64, t0: f64) -> f64 {
    t0 * (1.0 / (a0 * a0)).exp()
}

/// Right-hand side abstraction shared by the nonlinear and variational
/// integrators.
trait ProfileRhs {
    fn eval(&self, t: f64, w: &[f64], out: &mut [f64]) -> Result<()>;
}

struct NonlinearRhs<'a> {
    red: &'a ReducedForm,
    dir: Direction,
    forcing: &'a Forcing,
    scratch: std::cell::RefCell<Vec<f64>>,
}

impl ProfileRhs for NonlinearRhs<'_> {
    fn eval(&self, t: f64, w: &[f64], out: &mut [f64]) -> Result<()> {
        self.red.eval_into(self.dir, w, out);
        let inv = -0.5 / t;
        out.iter_mut().for_each(|a| *a *= inv);
        let mut h = self.scratch.borrow_mut();
        self.forcing.eval_into(t, &mut h)?;
        for (o, hv) in out.iter_mut().zip(h.iter()) {
            *o += hv;
        }
        Ok(())
    }
}

struct VariationalRhs<'a> {
    red: &'a ReducedForm,
    dir: Direction,
    base: &'a ProfileTrajectory,
    forcing: &'a Forcing,
    scratch: std::cell::RefCell<Vec<f64>>,
}

impl ProfileRhs for VariationalRhs<'_> {
    fn eval(&self, t: f64, w: &[f64], out: &mut [f64]) -> Result<()> {
        let base_w = self.base.state_at(t);
        let g = self.red.jacobian(self.dir, &base_w);
        let n = w.len();
        let inv = -0.5 / t;
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += g[(j, k)] * w[k];
            }
            out[j] = inv * acc;
        }
        let mut h = self.scratch.borrow_mut();
        self.forcing.eval_into(t, &mut h)?;
        for (o, hv) in out.iter_mut().zip(h.iter()) {
            *o += hv;
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

struct Integration {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    blew_up: bool,
    stalled: bool,
}

fn integrate_rhs(
    rhs: &dyn ProfileRhs,
    t0: f64,
    t_end: f64,
    w0: &[f64],
    control: &StepControl,
) -> Result<Integration> {
    if !(t_end > t0) {
        return Err(Error::InvalidArgument(format!(
            "integration window [{t0}, {t_end}] is empty"
        )));
    }
    if t0 <= 0.0 {
        return Err(Error::InvalidArgument("profile time must be positive".into()));
    }
    if w0.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument("initial profile state is not finite".into()));
    }
    let n = w0.len();
    let mut forced: Vec<f64> = control
        .sample_times
        .iter()
        .copied()
        .filter(|&t| t > t0 && t < t_end)
        .collect();
    forced.sort_by(f64::total_cmp);
    forced.push(t_end);
    let mut next_forced = 0;

    let mut t = t0;
    let mut y = w0.to_vec();
    let mut k1 = vec![0.0; n];
    rhs.eval(t, &y, &mut k1)?;
    let mut k = vec![vec![0.0; n]; 7];
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut h = 0.01 * t0.min(1.0);

    let mut times = vec![t0];
    let mut states = vec![y.clone()];
    let mut blew_up = false;
    let mut stalled = false;

    'outer: while t < t_end {
        h = h.min(control.max_rel_step * t).min(forced[next_forced] - t).max(1e-300);
        // Nudge exactly onto a forced time when within round-off of it.
        if forced[next_forced] - (t + h) < 1e-12 * forced[next_forced] {
            h = forced[next_forced] - t;
        }
        k[0].copy_from_slice(&k1);
        let stages: [(f64, &[f64]); 5] = [
            (C2, &[A21]),
            (C3, &[A31, A32]),
            (C4, &[A41, A42, A43]),
            (C5, &[A51, A52, A53, A54]),
            (1.0, &[A61, A62, A63, A64, A65]),
        ];
        for (s, (c, coeffs)) in stages.iter().enumerate() {
            let (prev, rest) = k.split_at_mut(s + 1);
            rhs_stage(rhs, t + c * h, &y, prev, coeffs, h, &mut y_stage, &mut rest[0])?;
        }
        for i in 0..n {
            y_new[i] = y[i]
                + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        rhs.eval(t + h, &y_new, &mut k[6])?;

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
            let scale = control.atol + control.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / scale) * (e / scale);
        }
        let err = (err_sq / n as f64).sqrt();

        if err <= 1.0 || !err.is_finite() {
            if !err.is_finite() || y_new.iter().any(|a| !a.is_finite()) {
                // Nonfinite stage with a sane previous state: treat as blow-up
                // past the representable range.
                blew_up = true;
                break 'outer;
            }
            t += h;
            y.copy_from_slice(&y_new);
            k1.copy_from_slice(&k[6]);
            times.push(t);
            states.push(y.clone());
            if y.iter().any(|a| a.abs() > BLOWUP_THRESHOLD) {
                blew_up = true;
                break 'outer;
            }
            if t >= forced[next_forced] && next_forced + 1 < forced.len() {
                next_forced += 1;
            }
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            if h < 1e-13 * t.max(1.0) {
                stalled = true;
                break 'outer;
            }
        }
    }
    Ok(Integration { times, states, blew_up, stalled })
}

#[allow(clippy::too_many_arguments)]
fn rhs_stage(
    rhs: &dyn ProfileRhs,
    t: f64,
    y: &[f64],
    k: &[Vec<f64>],
    coeffs: &[f64],
    h: f64,
    y_stage: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    for i in 0..y.len() {
        let mut acc = 0.0;
        for (s, &a) in coeffs.iter().enumerate() {
            acc += a * k[s][i];
        }
        y_stage[i] = y[i] + h * acc;
    }
    rhs.eval(t, y_stage, out)
}

/// Integrates the profile system along `ray` from its entry time to `t_end`.
///
/// `certificate`, when given, must match the wave block; the returned
/// trajectory then carries the Lyapunov series `W^T J(omega) W`.
pub fn integrate_profile(
    spec: &SystemSpec,
    ray: RayCoords,
    w0: &[f64],
    t_end: f64,
    forcing: &Forcing,
    certificate: Option<&KmsCertificate>,
    control: &StepControl,
) -> Result<ProfileTrajectory> {
    integrate_profile_reduced(&spec.reduced_form(), ray, w0, t_end, forcing, certificate, control)
}

/// [`integrate_profile`] against a precomputed reduced form.
pub fn integrate_profile_reduced(
    red: &ReducedForm,
    ray: RayCoords,
    w0: &[f64],
    t_end: f64,
    forcing: &Forcing,
    certificate: Option<&KmsCertificate>,
    control: &StepControl,
) -> Result<ProfileTrajectory> {
    let t0 = ray.t_start();
    integrate_profile_from(red, ray, t0, w0, t_end, forcing, certificate, control)
}

/// [`integrate_profile_reduced`] started at `t_start` instead of the ray
/// entry time, for transporting data extracted mid-run.
#[allow(clippy::too_many_arguments)]
pub fn integrate_profile_from(
    red: &ReducedForm,
    ray: RayCoords,
    t_start: f64,
    w0: &[f64],
    t_end: f64,
    forcing: &Forcing,
    certificate: Option<&KmsCertificate>,
    control: &StepControl,
) -> Result<ProfileTrajectory> {
    if w0.len() != red.n_waves() {
        return Err(Error::InvalidArgument(format!(
            "initial state width {} does not match wave block size {}",
            w0.len(),
            red.n_waves()
        )));
    }
    if t_start < ray.t_start() {
        return Err(Error::InvalidArgument(format!(
            "start time {} precedes the ray entry time {}",
            t_start,
            ray.t_start()
        )));
    }
    let rhs = NonlinearRhs {
        red,
        dir: ray.direction,
        forcing,
        scratch: std::cell::RefCell::new(vec![0.0; red.n_waves()]),
    };
    let sol = integrate_rhs(&rhs, t_start, t_end, w0, control)?;
    let mut traj = ProfileTrajectory {
        ray,
        times: sol.times,
        states: sol.states,
        lyapunov: None,
        blew_up: sol.blew_up,
        stalled: sol.stalled,
    };
    if let Some(cert) = certificate {
        traj.lyapunov = Some(lyapunov_series(&traj, cert)?);
    }
    Ok(traj)
}

/// Integrates the variational system `d_+ W' = -G(omega, W(t)) W' / (2t) + H'`
/// along the window covered by `base`, with the base state linearly
/// interpolated between its samples.
pub fn integrate_variational(
    spec: &SystemSpec,
    base: &ProfileTrajectory,
    dw0: &[f64],
    forcing: &Forcing,
    control: &StepControl,
) -> Result<ProfileTrajectory> {
    let red = spec.reduced_form();
    if dw0.len() != red.n_waves() {
        return Err(Error::InvalidArgument(format!(
            "variation width {} does not match wave block size {}",
            dw0.len(),
            red.n_waves()
        )));
    }
    if base.blew_up || base.stalled {
        return Err(Error::InvalidArgument(
            "variational transport needs a complete base trajectory".into(),
        ));
    }
    let rhs = VariationalRhs {
        red: &red,
        dir: base.ray.direction,
        base,
        forcing,
        scratch: std::cell::RefCell::new(vec![0.0; red.n_waves()]),
    };
    let sol = integrate_rhs(&rhs, base.times[0], base.final_time(), dw0, control)?;
    Ok(ProfileTrajectory {
        ray: base.ray,
        times: sol.times,
        states: sol.states,
        lyapunov: None,
        blew_up: sol.blew_up,
        stalled: sol.stalled,
    })
}

/// Evaluates `W^T J(omega) W` at every sample of a trajectory.
pub fn lyapunov_series(traj: &ProfileTrajectory, cert: &KmsCertificate) -> Result<Vec<f64>> {
    let n = traj.states.first().map_or(0, Vec::len);
    if cert.dim() != n {
        return Err(Error::InvalidArgument(format!(
            "certificate dimension {} does not match state width {n}",
            cert.dim()
        )));
    }
    let j = cert.eval(traj.ray.direction.theta());
    Ok(traj
        .states
        .iter()
        .map(|w| {
            let mut q = 0.0;
            for p in 0..n {
                for kk in 0..n {
                    q += w[p] * j[(p, kk)] * w[kk];
                }
            }
            q
        })
        .collect())
}

/// Integrates a batch of rays with `H = 0` in parallel, preserving input
/// order.
pub fn integrate_rays(
    spec: &SystemSpec,
    rays: &[(RayCoords, Vec<f64>)],
    t_end: f64,
    certificate: Option<&KmsCertificate>,
    control: &StepControl,
) -> Vec<Result<ProfileTrajectory>> {
    let red = spec.reduced_form();
    rays.par_iter()
        .map(|(ray, w0)| {
            integrate_profile_reduced(&red, *ray, w0, t_end, &Forcing::None, certificate, control)
        })
        .collect()
}
