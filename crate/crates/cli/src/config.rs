//! Experiment configuration: the TOML schema, its validation, and the
//! conversion into library types.
//!
//! Component indices in config files are 1-based (Klein-Gordon components
//! first, wave components after), matching how the systems are usually
//! written down; everything is shifted when the spec is built. Unknown keys
//! are rejected everywhere so typos surface as errors instead of silently
//! ignored settings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kmswkg_core::conditions::KmsCertificate;
use kmswkg_core::diagnostics::{FitModel, WeightSpec};
use kmswkg_core::nonlinearity::{factor, CubicTensor, Deriv, Factor, HigherTerm, SystemSpec};
use kmswkg_core::presets;
use kmswkg_core::simulator::{ComponentData, GridConfig, InitialData, Mode, RadialProfile};

/// Marker attached to configuration-phase failures so the exit code can be
/// told apart from runtime errors.
#[derive(Clone, Copy, Debug)]
pub struct ConfigPhase;

impl fmt::Display for ConfigPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid configuration")
    }
}

/// Tags the error chain of `r` as a configuration problem.
pub fn config_phase<T>(r: Result<T>) -> Result<T> {
    r.context(ConfigPhase)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; a --out flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub system: SystemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recorders: Vec<RecorderSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeSection>,
}

fn default_schema() -> String {
    kmswkg_core::SCHEMA_VERSION.to_string()
}

/// Either a preset reference (with parameter overrides) or an inline system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Klein-Gordon component count of an inline system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_kg: Option<usize>,
    /// All masses, Klein-Gordon first, waves (zeros) after.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cubic: Vec<TermSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub higher: Vec<TermSpec>,
}

/// One interaction monomial: `coeff` times the product of `factors` on
/// output row `j` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub j: usize,
    pub coeff: f64,
    pub factors: Vec<FactorSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    /// Component index, 1-based.
    pub idx: usize,
    pub deriv: DerivName,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivName {
    None,
    T,
    X1,
    X2,
}

impl From<DerivName> for Deriv {
    fn from(d: DerivName) -> Deriv {
        match d {
            DerivName::None => Deriv::Value,
            DerivName::T => Deriv::T,
            DerivName::X1 => Deriv::X1,
            DerivName::X2 => Deriv::X2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub mode: Mode,
    pub h: f64,
    pub dt: f64,
    pub t_max: f64,
    /// Defaults to `t_max + support_radius + 5h`, the smallest domain the
    /// causality check accepts with a cell to spare.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub support_radius: f64,
    pub epsilon: f64,
    /// One entry per component, in component order.
    pub components: Vec<ComponentSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    #[serde(default = "zero_profile")]
    pub f: RadialProfile,
    #[serde(default = "zero_profile")]
    pub g: RadialProfile,
}

fn zero_profile() -> RadialProfile {
    RadialProfile::Zero
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_s")]
    pub s: usize,
}

fn default_rho() -> f64 {
    0.1
}

fn default_kappa() -> f64 {
    0.01
}

fn default_s() -> usize {
    1
}

impl Default for WeightsSection {
    fn default() -> Self {
        WeightsSection { rho: default_rho(), kappa: default_kappa(), s: default_s() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecorderSpec {
    pub kind: RecorderKind,
    /// Scattering only: time at which the free reference is matched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_match: Option<f64>,
    /// Ray only: common direction angle, default 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Ray only: light-cone offsets to track.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    pub times: TimesSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecorderKind {
    Snapshot,
    Norms,
    Ray,
    Scattering,
}

impl RecorderKind {
    pub fn name(self) -> &'static str {
        match self {
            RecorderKind::Snapshot => "snapshot",
            RecorderKind::Norms => "norms",
            RecorderKind::Ray => "ray",
            RecorderKind::Scattering => "scattering",
        }
    }
}

/// Sample times, either listed outright or described as a range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimesSpec {
    List(Vec<f64>),
    Range(TimesRange),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesRange {
    pub from: f64,
    pub to: f64,
    pub count: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

impl TimesSpec {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        match self {
            TimesSpec::List(ts) => {
                if ts.iter().any(|t| !t.is_finite() || *t < 0.0) {
                    bail!("sample times must be finite and nonnegative, got {ts:?}");
                }
                Ok(ts.clone())
            }
            TimesSpec::Range(r) => {
                if r.count < 2 {
                    bail!("times range needs count >= 2, got {}", r.count);
                }
                if !(r.from < r.to) {
                    bail!("times range needs from < to, got [{}, {}]", r.from, r.to);
                }
                let n = r.count;
                let ts = match r.spacing {
                    Spacing::Linear => (0..n)
                        .map(|k| r.from + (r.to - r.from) * k as f64 / (n - 1) as f64)
                        .collect(),
                    Spacing::Log => {
                        if !(r.from > 0.0) {
                            bail!("log-spaced times need from > 0, got {}", r.from);
                        }
                        let (la, lb) = (r.from.ln(), r.to.ln());
                        (0..n)
                            .map(|k| (la + (lb - la) * k as f64 / (n - 1) as f64).exp())
                            .collect()
                    }
                };
                Ok(ts)
            }
        }
    }
}

/// Constant positivity certificate, given as rows of a symmetric matrix
/// over the wave block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    pub constant: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub theta: f64,
    /// Initial wave-block state; empty means all ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub w0: Vec<f64>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
}

fn default_sigmas() -> Vec<f64> {
    vec![0.0]
}

fn default_t_end() -> f64 {
    2000.0
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection {
            sigmas: default_sigmas(),
            theta: 0.0,
            w0: Vec::new(),
            t_end: default_t_end(),
        }
    }
}

/// What the analyze pass should compute on a finished run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rays: Option<RayCheckSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scattering: Option<ScatteringCheckSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<FitSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ray_fits: Vec<RayFitSpec>,
}

/// Decay-exponent fit of one recorded norm series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    /// One of kg_sup, wave_sup, wave_sup_s, bracket_sup, energy_l2,
    /// wave_energy_l2.
    pub series: String,
    pub window: [f64; 2],
    #[serde(default = "default_model")]
    pub model: FitModel,
    /// Expected slope with a symmetric acceptance band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
}

fn default_model() -> FitModel {
    FitModel::PowerOfT
}

/// Decay fit of a pointwise ray quantity instead of a norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayFitSpec {
    pub sigma: f64,
    /// Sample field to fit: r12_wt, r12_wr, w, or bracket1 (absolute values).
    #[serde(default = "default_ray_field")]
    pub field: String,
    pub window: [f64; 2],
    #[serde(default = "default_model")]
    pub model: FitModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
}

fn default_ray_field() -> String {
    "r12_wt".to_string()
}

/// Transport consistency: data extracted at `t1` and evolved by the profile
/// system must agree with the extraction at `factor * t1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayCheckSpec {
    pub t1: Vec<f64>,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_ray_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
}

fn default_factor() -> f64 {
    4.0
}

fn default_ray_tol() -> f64 {
    0.10
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatteringCheckSpec {
    #[serde(default = "default_scat_tol")]
    pub tol: f64,
}

fn default_scat_tol() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("cannot parse config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    /// A minimal config wrapping a bare preset name, for commands invoked
    /// with --preset only.
    pub fn from_preset(name: &str) -> Result<Self> {
        let cfg = ExperimentConfig {
            schema: default_schema(),
            seed: 0,
            out: None,
            system: SystemSection {
                preset: Some(name.to_string()),
                n_kg: None,
                masses: None,
                params: BTreeMap::new(),
                cubic: Vec::new(),
                higher: Vec::new(),
            },
            grid: None,
            data: None,
            weights: None,
            recorders: Vec::new(),
            certificate: None,
            profile: None,
            analyze: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The canonical serialized form; parsing it back yields an identical
    /// canonical form, so run directories can echo their exact settings.
    pub fn canonical(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> Result<()> {
        if self.schema != kmswkg_core::SCHEMA_VERSION {
            bail!(
                "config schema version '{}' is not the supported '{}'",
                self.schema,
                kmswkg_core::SCHEMA_VERSION
            );
        }
        let spec = self.build_system()?;
        if let Some(w) = &self.weights {
            w.build()?;
        }
        if self.grid.is_some() != self.data.is_some() {
            bail!("grid and data sections must be given together");
        }
        if let (Some(_), Some(data)) = (&self.grid, &self.data) {
            let init = self.build_data(spec.n_total())?;
            let grid = self.build_grid(init.support_radius)?;
            for rec in &self.recorders {
                rec.validate(&grid, data.support_radius)?;
            }
        } else if !self.recorders.is_empty() {
            bail!("recorders need grid and data sections");
        }
        if let Some(cert) = &self.certificate {
            let j = cert.build()?;
            if j.dim() != spec.n_waves() {
                bail!(
                    "certificate is {}x{} but the wave block has {} components",
                    j.dim(),
                    j.dim(),
                    spec.n_waves()
                );
            }
        }
        if let Some(p) = &self.profile {
            p.validate(spec.n_waves())?;
        }
        if let Some(a) = &self.analyze {
            a.validate()?;
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<SystemSpec> {
        let s = &self.system;
        let inline = s.n_kg.is_some() || s.masses.is_some() || !s.cubic.is_empty();
        match (&s.preset, inline) {
            (Some(_), true) => {
                bail!("system section mixes a preset reference with inline fields")
            }
            (None, false) => bail!("system section needs either a preset or n_kg + masses"),
            (Some(name), false) => {
                presets::build(name, &s.params).context("cannot build preset system")
            }
            (None, true) => {
                let n_kg = s.n_kg.context("inline system needs n_kg")?;
                let masses = s.masses.clone().context("inline system needs masses")?;
                if !s.params.is_empty() {
                    bail!("params only apply to presets");
                }
                let n_total = masses.len();
                let mut tensor = CubicTensor::new();
                for (k, term) in s.cubic.iter().enumerate() {
                    let fs = term
                        .build_factors(n_total)
                        .with_context(|| format!("in cubic term {}", k + 1))?;
                    if fs.len() != 3 {
                        bail!("cubic term {} has {} factors, need exactly 3", k + 1, fs.len());
                    }
                    let row = check_row(term.j, n_total)
                        .with_context(|| format!("in cubic term {}", k + 1))?;
                    tensor.add_term(row, [fs[0], fs[1], fs[2]], term.coeff);
                }
                let mut higher = Vec::new();
                for (k, term) in s.higher.iter().enumerate() {
                    let fs = term
                        .build_factors(n_total)
                        .with_context(|| format!("in higher term {}", k + 1))?;
                    let row = check_row(term.j, n_total)
                        .with_context(|| format!("in higher term {}", k + 1))?;
                    higher.push(HigherTerm::new(row, fs, term.coeff));
                }
                SystemSpec::new(n_kg, masses, tensor, higher)
                    .context("inline system is invalid")
            }
        }
    }

    /// Initial data with the component list padded with zeros up to
    /// `n_total` (trailing quiescent components can be omitted).
    pub fn build_data(&self, n_total: usize) -> Result<InitialData> {
        let data = self.data.as_ref().context("config has no data section")?;
        if !(data.support_radius > 0.0 && data.support_radius.is_finite()) {
            bail!("support_radius must be positive, got {}", data.support_radius);
        }
        if !data.epsilon.is_finite() {
            bail!("epsilon must be finite, got {}", data.epsilon);
        }
        if data.components.len() > n_total {
            bail!(
                "data lists {} components but the system has {}",
                data.components.len(),
                n_total
            );
        }
        let mut components: Vec<ComponentData> = data
            .components
            .iter()
            .map(|c| ComponentData { f: c.f, g: c.g })
            .collect();
        components.resize(n_total, ComponentData::zero());
        Ok(InitialData {
            components,
            support_radius: data.support_radius,
            epsilon: data.epsilon,
        })
    }

    pub fn build_grid(&self, support_radius: f64) -> Result<GridConfig> {
        let g = self.grid.as_ref().context("config has no grid section")?;
        let domain_radius = g
            .domain_radius
            .unwrap_or_else(|| g.t_max + support_radius + 5.0 * g.h);
        let grid = GridConfig { mode: g.mode, h: g.h, dt: g.dt, t_max: g.t_max, domain_radius };
        grid.validate(support_radius)?;
        Ok(grid)
    }

    pub fn build_weights(&self) -> Result<WeightSpec> {
        self.weights.unwrap_or_default().build()
    }

    pub fn build_certificate(&self) -> Result<Option<KmsCertificate>> {
        self.certificate.as_ref().map(|c| c.build()).transpose()
    }
}

fn check_row(j: usize, n_total: usize) -> Result<usize> {
    if j == 0 || j > n_total {
        bail!("component index j = {j} out of range 1..={n_total}");
    }
    Ok(j - 1)
}

impl TermSpec {
    fn build_factors(&self, n_total: usize) -> Result<Vec<Factor>> {
        self.factors
            .iter()
            .map(|f| {
                if f.idx == 0 || f.idx > n_total {
                    bail!("factor index idx = {} out of range 1..={n_total}", f.idx);
                }
                Ok(factor(f.idx - 1, f.deriv.into()))
            })
            .collect()
    }
}

impl WeightsSection {
    pub fn build(&self) -> Result<WeightSpec> {
        Ok(WeightSpec::new(self.rho, self.kappa, self.s)?)
    }
}

impl CertificateSection {
    pub fn build(&self) -> Result<KmsCertificate> {
        let n = self.constant.len();
        if n == 0 {
            bail!("certificate matrix is empty");
        }
        if self.constant.iter().any(|row| row.len() != n) {
            bail!("certificate matrix must be square, got {n} rows");
        }
        let m = kmswkg_core::conditions::DMatrix::from_fn(n, n, |i, j| self.constant[i][j]);
        Ok(KmsCertificate::constant(m)?)
    }
}

impl RecorderSpec {
    fn validate(&self, grid: &GridConfig, support_radius: f64) -> Result<()> {
        let times = self
            .times
            .resolve()
            .with_context(|| format!("in {} recorder times", self.kind.name()))?;
        if times.is_empty() {
            bail!("{} recorder has no sample times", self.kind.name());
        }
        if let Some(&worst) = times.iter().max_by(|a, b| a.total_cmp(b)) {
            if worst > grid.t_max + 0.5 * grid.dt {
                bail!(
                    "{} recorder samples t = {worst} past t_max = {}",
                    self.kind.name(),
                    grid.t_max
                );
            }
        }
        let forbid = |field: &str, set: bool| -> Result<()> {
            if set {
                bail!("{} recorder does not take '{field}'", self.kind.name());
            }
            Ok(())
        };
        match self.kind {
            RecorderKind::Snapshot | RecorderKind::Norms => {
                forbid("sigmas", self.sigmas.is_some())?;
                forbid("theta", self.theta.is_some())?;
                forbid("t_match", self.t_match.is_some())?;
            }
            RecorderKind::Ray => {
                forbid("t_match", self.t_match.is_some())?;
                let sigmas = self
                    .sigmas
                    .as_ref()
                    .context("ray recorder needs a sigmas list")?;
                if sigmas.is_empty() {
                    bail!("ray recorder has an empty sigmas list");
                }
                for &s in sigmas {
                    if !s.is_finite() || s > support_radius {
                        bail!(
                            "ray offset sigma = {s} lies outside the data support \
                             (need sigma <= {support_radius})"
                        );
                    }
                }
                if matches!(grid.mode, Mode::Radial) {
                    if let Some(theta) = self.theta {
                        if theta != 0.0 {
                            bail!("radial runs only support theta = 0, got {theta}");
                        }
                    }
                }
            }
            RecorderKind::Scattering => {
                forbid("sigmas", self.sigmas.is_some())?;
                forbid("theta", self.theta.is_some())?;
                let tm = self.t_match.context("scattering recorder needs t_match")?;
                if !(tm >= 0.0 && tm <= grid.t_max) {
                    bail!("t_match = {tm} outside [0, t_max = {}]", grid.t_max);
                }
                if let Some(&first) = times.iter().min_by(|a, b| a.total_cmp(b)) {
                    if first + 0.5 * grid.dt < tm {
                        bail!(
                            "scattering sample t = {first} precedes t_match = {tm}; \
                             the deficit only exists once the reference is matched"
                        );
                    }
                }
            }
        }
        Ok(())
    }
}

impl ProfileSection {
    fn validate(&self, n_waves: usize) -> Result<()> {
        if self.sigmas.is_empty() {
            bail!("profile section has an empty sigmas list");
        }
        if self.sigmas.iter().any(|s| !s.is_finite()) {
            bail!("profile sigmas must be finite");
        }
        if !(self.t_end > 2.0) {
            bail!("profile t_end must exceed the entry-time floor 2, got {}", self.t_end);
        }
        if !self.w0.is_empty() && self.w0.len() != n_waves {
            bail!(
                "profile w0 has {} entries but the wave block has {n_waves}",
                self.w0.len()
            );
        }
        if self.w0.iter().any(|w| !w.is_finite()) {
            bail!("profile w0 must be finite");
        }
        Ok(())
    }

    pub fn w0_or_ones(&self, n_waves: usize) -> Vec<f64> {
        if self.w0.is_empty() {
            vec![1.0; n_waves]
        } else {
            self.w0.clone()
        }
    }
}

pub const SERIES_NAMES: [&str; 6] =
    ["kg_sup", "wave_sup", "wave_sup_s", "bracket_sup", "energy_l2", "wave_energy_l2"];

pub const RAY_FIELDS: [&str; 4] = ["r12_wt", "r12_wr", "w", "bracket1"];

impl AnalyzeSection {
    fn validate(&self) -> Result<()> {
        for f in &self.fits {
            if !SERIES_NAMES.contains(&f.series.as_str()) {
                bail!(
                    "unknown fit series '{}'; available: {}",
                    f.series,
                    SERIES_NAMES.join(", ")
                );
            }
            check_window(f.window, f.expect, f.band)?;
        }
        for f in &self.ray_fits {
            if !RAY_FIELDS.contains(&f.field.as_str()) {
                bail!(
                    "unknown ray field '{}'; available: {}",
                    f.field,
                    RAY_FIELDS.join(", ")
                );
            }
            check_window(f.window, f.expect, f.band)?;
        }
        if let Some(r) = &self.rays {
            if r.t1.is_empty() {
                bail!("ray consistency check needs at least one t1");
            }
            if r.t1.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                bail!("ray consistency times must be positive");
            }
            if !(r.factor > 1.0) {
                bail!("ray consistency factor must exceed 1, got {}", r.factor);
            }
            if !(r.tol > 0.0) {
                bail!("ray consistency tol must be positive, got {}", r.tol);
            }
        }
        if let Some(s) = &self.scattering {
            if !(s.tol >= 0.0) {
                bail!("scattering tol must be nonnegative, got {}", s.tol);
            }
        }
        Ok(())
    }
}

fn check_window(window: [f64; 2], expect: Option<f64>, band: Option<f64>) -> Result<()> {
    if !(window[0] > 0.0 && window[1] > window[0]) {
        bail!("fit window [{}, {}] must satisfy 0 < a < b", window[0], window[1]);
    }
    if expect.is_some() != band.is_some() {
        bail!("expect and band come together");
    }
    if let Some(b) = band {
        if !(b > 0.0) {
            bail!("fit band must be positive, got {b}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const INLINE: &str = r#"
        [system]
        n_kg = 1
        masses = [1.0, 0.0]

        [[system.cubic]]
        j = 2
        coeff = -1.0
        factors = [
            { idx = 2, deriv = "t" },
            { idx = 2, deriv = "t" },
            { idx = 2, deriv = "x1" },
        ]
    "#;

    #[test]
    fn inline_system_round_trips_through_canonical_form() {
        let cfg = ExperimentConfig::parse(INLINE).unwrap();
        let echo = cfg.canonical();
        let back = ExperimentConfig::parse(&echo).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(echo, back.canonical());
    }

    #[test]
    fn indices_are_one_based() {
        let cfg = ExperimentConfig::parse(INLINE).unwrap();
        let spec = cfg.build_system().unwrap();
        assert_eq!(spec.n_kg(), 1);
        assert_eq!(spec.n_waves(), 1);
        // Row 2 in the file is component index 1 in the library.
        let red = spec.reduced_form();
        assert_eq!(red.n_waves(), 1);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::parse("[system]\npreset = \"example-null\"\nbogus = 3\n")
            .unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn weight_constraint_is_named() {
        let text = "[system]\npreset = \"example-null\"\n[weights]\nrho = 0.1\nkappa = 0.05\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("8 kappa < rho"), "{msg}");
    }

    #[test]
    fn preset_and_inline_fields_conflict() {
        let text = "[system]\npreset = \"example-null\"\nn_kg = 1\nmasses = [1.0]\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(format!("{err:#}").contains("mixes"), "{err:#}");
    }

    #[test]
    fn zero_based_index_is_rejected() {
        let text = r#"
            [system]
            n_kg = 0
            masses = [0.0]
            [[system.cubic]]
            j = 1
            coeff = 1.0
            factors = [
                { idx = 0, deriv = "t" },
                { idx = 1, deriv = "t" },
                { idx = 1, deriv = "t" },
            ]
        "#;
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(format!("{err:#}").contains("out of range 1..="), "{err:#}");
    }

    #[test]
    fn times_ranges_resolve() {
        let lin = TimesSpec::Range(TimesRange {
            from: 0.0,
            to: 10.0,
            count: 6,
            spacing: Spacing::Linear,
        });
        assert_eq!(lin.resolve().unwrap(), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let log = TimesSpec::Range(TimesRange {
            from: 1.0,
            to: 100.0,
            count: 3,
            spacing: Spacing::Log,
        });
        let ts = log.resolve().unwrap();
        assert!((ts[1] - 10.0).abs() < 1e-12 && (ts[2] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn grid_domain_radius_defaults_to_cone_clearance() {
        let text = r#"
            [system]
            preset = "example-null"
            [grid]
            mode = "radial"
            h = 0.1
            dt = 0.04
            t_max = 10.0
            [data]
            support_radius = 2.0
            epsilon = 0.1
            [[data.components]]
            f = { kind = "bump", scale = 1.0, power = 4 }
        "#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        let grid = cfg.build_grid(2.0).unwrap();
        assert!((grid.domain_radius - 12.5).abs() < 1e-12);
    }

    #[test]
    fn omitted_trailing_components_are_quiescent() {
        let text = r#"
            [system]
            preset = "example-kms"
            [grid]
            mode = "radial"
            h = 0.1
            dt = 0.04
            t_max = 1.0
            [data]
            support_radius = 2.0
            epsilon = 0.1
            [[data.components]]
            f = { kind = "smooth_bump", scale = 1.0 }
        "#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        let data = cfg.build_data(2).unwrap();
        assert_eq!(data.components.len(), 2);
        assert_eq!(data.components[1].f, RadialProfile::Zero);
    }
}
