//! System descriptions and cubic interaction algebra.
//!
//! A system couples `n_kg` Klein-Gordon components `v_j` (mass `m_j > 0`)
//! with `n_waves` wave components `w_j` (mass 0), all functions of
//! `(t, x_1, x_2)`. The right-hand side of component `j` is a cubic form
//!
//! ```text
//! F_j = sum over factor triples  C * (d^a u_k)(d^b u_l)(d^c u_m)
//! ```
//!
//! where each factor carries at most one derivative, plus optional monomials
//! of degree >= 4. Wave components may enter only through first derivatives;
//! an undifferentiated wave factor is rejected at construction.
//!
//! ## Reduction along outgoing rays
//!
//! Near the light cone a wave derivative asymptotically aligns with the
//! outgoing null direction: `d_a w_k ~ omega_hat_a * r^{-1/2} * W_k` with
//! `omega_hat = (-1, omega_1, omega_2)` and `omega` on the unit circle. The
//! [`ReducedForm`] of a system substitutes `d_a w_k -> omega_hat_a Y_k` into
//! the pure-wave cubic part of the wave rows, producing for each wave row a
//! polynomial `F_red_j(omega, Y)`, cubic in `Y` and cubic in the entries of
//! `omega_hat`. This reduced nonlinearity drives both the null/KMS condition
//! checks in [`crate::conditions`] and the profile system in
//! [`crate::profile`].

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Derivative label on an interaction factor: the bare field value or one
/// first derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deriv {
    /// Undifferentiated value; only Klein-Gordon components admit this.
    #[serde(rename = "none")]
    Value,
    /// Time derivative `d_t`.
    T,
    /// Spatial derivative `d_1`.
    X1,
    /// Spatial derivative `d_2`.
    X2,
}

impl Deriv {
    /// Index into `omega_hat = (-1, omega_1, omega_2)`, or `None` for a bare
    /// value.
    pub fn omega_index(self) -> Option<usize> {
        match self {
            Deriv::Value => None,
            Deriv::T => Some(0),
            Deriv::X1 => Some(1),
            Deriv::X2 => Some(2),
        }
    }
}

/// One field factor `d^a u_k` inside an interaction monomial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Factor {
    /// Component index, `0..n_total`; Klein-Gordon components come first.
    pub comp: usize,
    pub deriv: Deriv,
}

impl Factor {
    pub fn new(comp: usize, deriv: Deriv) -> Self {
        Factor { comp, deriv }
    }

    fn value(&self, v: &[f64], du: &[[f64; 3]]) -> f64 {
        match self.deriv.omega_index() {
            None => v[self.comp],
            Some(a) => du[self.comp][a],
        }
    }
}

/// Shorthand for building factors in tests and presets.
pub fn factor(comp: usize, deriv: Deriv) -> Factor {
    Factor::new(comp, deriv)
}

/// Sparse symmetric cubic interaction tensor.
///
/// Keys are `(output row, sorted factor triple)`; inserting the same factor
/// multiset twice merges by summing, and entries that cancel exactly are
/// dropped. The factor order inside a key carries no meaning (the product is
/// commutative), so sorting gives a canonical form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CubicTensor {
    terms: BTreeMap<(usize, [Factor; 3]), f64>,
}

impl CubicTensor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `coeff * f0 * f1 * f2` to row `row`, merging with any existing
    /// entry for the same factor multiset.
    pub fn add_term(&mut self, row: usize, mut factors: [Factor; 3], coeff: f64) {
        factors.sort();
        let slot = self.terms.entry((row, factors)).or_insert(0.0);
        *slot += coeff;
        if *slot == 0.0 {
            self.terms.remove(&(row, factors));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    /// Iterates `(row, factors, coeff)` in canonical (deterministic) order.
    pub fn terms(&self) -> impl Iterator<Item = (usize, &[Factor; 3], f64)> {
        self.terms.iter().map(|((row, f), c)| (*row, f, *c))
    }

    /// Evaluates every row of the tensor at the given point values.
    ///
    /// `v[k]` is the value of component `k` (only Klein-Gordon entries are
    /// read), `du[k] = [d_t u_k, d_1 u_k, d_2 u_k]`. `out` must hold one slot
    /// per output row and is accumulated into, not cleared.
    pub fn accumulate_into(&self, v: &[f64], du: &[[f64; 3]], out: &mut [f64]) {
        for ((row, factors), coeff) in &self.terms {
            let p = factors[0].value(v, du) * factors[1].value(v, du) * factors[2].value(v, du);
            out[*row] += coeff * p;
        }
    }
}

/// A single interaction monomial of degree four or more.
#[derive(Clone, Debug, PartialEq)]
pub struct HigherTerm {
    pub row: usize,
    pub factors: Vec<Factor>,
    pub coeff: f64,
}

impl HigherTerm {
    pub fn new(row: usize, factors: Vec<Factor>, coeff: f64) -> Self {
        HigherTerm { row, factors, coeff }
    }
}

/// Full system description: component layout, masses, and interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    n_total: usize,
    n_kg: usize,
    masses: Vec<f64>,
    cubic: CubicTensor,
    higher: Vec<HigherTerm>,
}

impl SystemSpec {
    /// Validates and builds a system.
    ///
    /// Requirements: `masses` has length `n_total` with `m_j > 0` exactly for
    /// the first `n_kg` entries and `m_j = 0` after; every tensor row and
    /// factor index is in range; wave components never appear undifferentiated;
    /// higher-order terms have at least four factors.
    pub fn new(
        n_kg: usize,
        masses: Vec<f64>,
        cubic: CubicTensor,
        higher: Vec<HigherTerm>,
    ) -> Result<Self> {
        let n_total = masses.len();
        if n_total == 0 {
            return Err(Error::InvalidSpec("system has no components".into()));
        }
        if n_kg > n_total {
            return Err(Error::InvalidSpec(format!(
                "n_kg = {n_kg} exceeds component count {n_total}"
            )));
        }
        for (j, &m) in masses.iter().enumerate() {
            if !m.is_finite() {
                return Err(Error::InvalidSpec(format!("mass of component {j} is not finite")));
            }
            if j < n_kg && m <= 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "Klein-Gordon component {j} needs a positive mass, got {m}"
                )));
            }
            if j >= n_kg && m != 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "wave component {j} must be massless, got {m}"
                )));
            }
        }
        let check_factor = |row: usize, f: &Factor| -> Result<()> {
            if f.comp >= n_total {
                return Err(Error::InvalidSpec(format!(
                    "row {row}: factor component {} out of range (n_total = {n_total})",
                    f.comp
                )));
            }
            if f.deriv == Deriv::Value && f.comp >= n_kg {
                return Err(Error::UndifferentiatedWave { row, comp: f.comp });
            }
            Ok(())
        };
        for (row, factors, coeff) in cubic.terms() {
            if row >= n_total {
                return Err(Error::InvalidSpec(format!(
                    "tensor row {row} out of range (n_total = {n_total})"
                )));
            }
            if !coeff.is_finite() {
                return Err(Error::InvalidSpec(format!("row {row}: nonfinite coefficient")));
            }
            for f in factors {
                check_factor(row, f)?;
            }
        }
        for term in &higher {
            if term.row >= n_total {
                return Err(Error::InvalidSpec(format!(
                    "higher-order row {} out of range",
                    term.row
                )));
            }
            if term.factors.len() < 4 {
                return Err(Error::InvalidSpec(format!(
                    "higher-order term on row {} has only {} factors",
                    term.row,
                    term.factors.len()
                )));
            }
            if !term.coeff.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "higher-order row {}: nonfinite coefficient",
                    term.row
                )));
            }
            for f in &term.factors {
                check_factor(term.row, f)?;
            }
        }
        Ok(SystemSpec { n_total, n_kg, masses, cubic, higher })
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Number of Klein-Gordon components (they occupy indices `0..n_kg`).
    pub fn n_kg(&self) -> usize {
        self.n_kg
    }

    /// Number of wave components (indices `n_kg..n_total`).
    pub fn n_waves(&self) -> usize {
        self.n_total - self.n_kg
    }

    pub fn is_wave(&self, comp: usize) -> bool {
        comp >= self.n_kg
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, comp: usize) -> f64 {
        self.masses[comp]
    }

    pub fn cubic(&self) -> &CubicTensor {
        &self.cubic
    }

    pub fn higher(&self) -> &[HigherTerm] {
        &self.higher
    }

    /// Evaluates `F_j(v, du)` for every row `j`.
    ///
    /// `v` holds the component values (wave entries are ignored and may be
    /// anything), `du[k] = [d_t u_k, d_1 u_k, d_2 u_k]`.
    pub fn eval_rhs(&self, v: &[f64], du: &[[f64; 3]]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_total, "v must have one entry per component");
        assert_eq!(du.len(), self.n_total, "du must have one row per component");
        let mut out = vec![0.0; self.n_total];
        self.cubic.accumulate_into(v, du, &mut out);
        for term in &self.higher {
            let mut p = term.coeff;
            for f in &term.factors {
                p *= f.value(v, du);
            }
            out[term.row] += p;
        }
        out
    }

    /// Splits the cubic tensor by how many wave factors each monomial holds.
    ///
    /// The four parts are disjoint and sum back to the original tensor, so
    /// their evaluations partition `F` (minus any higher-order terms).
    pub fn classify_parts(&self) -> InteractionSplit {
        let mut split = InteractionSplit::default();
        for (row, factors, coeff) in self.cubic.terms() {
            let waves = factors.iter().filter(|f| self.is_wave(f.comp)).count();
            let part = match waves {
                0 => &mut split.kg_only,
                1 => &mut split.two_kg_one_wave,
                2 => &mut split.one_kg_two_waves,
                _ => &mut split.wave_only,
            };
            part.add_term(row, *factors, coeff);
        }
        split
    }

    /// Builds the reduced nonlinearity `F_red(omega, Y)` of the wave rows.
    ///
    /// Only the pure-wave cubic part of wave rows survives the reduction;
    /// every factor `d_a w_k` becomes `omega_hat_a Y_k`. Monomials with the
    /// same derivative multiset and the same component multiset merge.
    pub fn reduced_form(&self) -> ReducedForm {
        let n_waves = self.n_waves();
        let mut rows: Vec<BTreeMap<([usize; 3], [usize; 3]), f64>> = vec![BTreeMap::new(); n_waves];
        for (row, factors, coeff) in self.cubic.terms() {
            if row < self.n_kg {
                continue;
            }
            if !factors.iter().all(|f| self.is_wave(f.comp) && f.deriv != Deriv::Value) {
                continue;
            }
            let mut omega = [0usize; 3];
            let mut y = [0usize; 3];
            for (slot, f) in factors.iter().enumerate() {
                omega[slot] = f.deriv.omega_index().expect("wave factor is differentiated");
                y[slot] = f.comp - self.n_kg;
            }
            // The pairing between derivative labels and components does not
            // survive the product, so each multiset is sorted separately.
            omega.sort_unstable();
            y.sort_unstable();
            let slot = rows[row - self.n_kg].entry((omega, y)).or_insert(0.0);
            *slot += coeff;
            if *slot == 0.0 {
                rows[row - self.n_kg].remove(&(omega, y));
            }
        }
        let rows = rows
            .into_iter()
            .map(|m| {
                m.into_iter()
                    .map(|((omega, y), coeff)| ReducedMonomial { omega, y, coeff })
                    .collect()
            })
            .collect();
        ReducedForm { n_waves, rows }
    }

    /// Checks whether the right-hand side commutes with spatial rotations on
    /// radially symmetric data, which is what radially symmetric simulation
    /// requires.
    ///
    /// Sampled check: for pseudo-random component values `(v, p, q)` (value,
    /// time derivative, radial derivative) the rotated gradient is
    /// `du = (p, q cos phi, q sin phi)`; the result must not depend on `phi`.
    /// Deterministic, no false negatives on polynomial right-hand sides in
    /// practice.
    pub fn is_rotation_invariant(&self) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000_0001);
        let angles = [0.0, 0.7, 1.9, 2.8, 4.1, 5.3];
        for _ in 0..16 {
            let v: Vec<f64> = (0..self.n_total).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p: Vec<f64> = (0..self.n_total).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q: Vec<f64> = (0..self.n_total).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let du_at = |phi: f64| -> Vec<[f64; 3]> {
                let (s, c) = phi.sin_cos();
                (0..self.n_total).map(|j| [p[j], q[j] * c, q[j] * s]).collect()
            };
            let base = self.eval_rhs(&v, &du_at(angles[0]));
            for &phi in &angles[1..] {
                let rot = self.eval_rhs(&v, &du_at(phi));
                for (a, b) in base.iter().zip(&rot) {
                    if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// The cubic tensor split by wave-factor count. See
/// [`SystemSpec::classify_parts`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionSplit {
    /// Three Klein-Gordon factors.
    pub kg_only: CubicTensor,
    /// Two Klein-Gordon factors, one wave derivative.
    pub two_kg_one_wave: CubicTensor,
    /// One Klein-Gordon factor, two wave derivatives.
    pub one_kg_two_waves: CubicTensor,
    /// Three wave derivatives. On wave rows this is what the reduction keeps.
    pub wave_only: CubicTensor,
}

/// Outgoing spatial direction on the unit circle, stored as an angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    theta: f64,
}

impl Direction {
    pub fn from_angle(theta: f64) -> Self {
        Direction { theta }
    }

    /// Builds a direction from circle components, rejecting vectors off the
    /// unit circle by more than 1e-12.
    pub fn from_components(omega1: f64, omega2: f64) -> Result<Self> {
        let defect = (omega1.hypot(omega2) - 1.0).abs();
        if !defect.is_finite() || defect > 1e-12 {
            return Err(Error::OffCircle { omega1, omega2, defect });
        }
        Ok(Direction { theta: omega2.atan2(omega1) })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn omega(&self) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c, s]
    }

    /// Null covector `omega_hat = (-1, omega_1, omega_2)`.
    pub fn omega_hat(&self) -> [f64; 3] {
        let (s, c) = self.theta.sin_cos();
        [-1.0, c, s]
    }
}

/// One monomial of a reduced nonlinearity:
/// `coeff * omega_hat_a omega_hat_b omega_hat_c * Y_k Y_l Y_m`, with both
/// index triples stored sorted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedMonomial {
    /// Sorted indices into `omega_hat`, each in `0..=2`.
    pub omega: [usize; 3],
    /// Sorted wave-block component indices, each in `0..n_waves`.
    pub y: [usize; 3],
    pub coeff: f64,
}

impl ReducedMonomial {
    fn omega_product(&self, oh: &[f64; 3]) -> f64 {
        oh[self.omega[0]] * oh[self.omega[1]] * oh[self.omega[2]]
    }
}

/// Reduced nonlinearity `F_red(omega, Y)`: one cubic polynomial per wave row,
/// homogeneous of degree 3 in `Y` and in the entries of `omega_hat`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedForm {
    n_waves: usize,
    rows: Vec<Vec<ReducedMonomial>>,
}

impl ReducedForm {
    pub fn n_waves(&self) -> usize {
        self.n_waves
    }

    pub fn rows(&self) -> &[Vec<ReducedMonomial>] {
        &self.rows
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(|r| r.is_empty())
    }

    pub fn eval_into(&self, dir: Direction, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.n_waves);
        assert_eq!(out.len(), self.n_waves);
        let oh = dir.omega_hat();
        for (row, monos) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for m in monos {
                acc += m.coeff * m.omega_product(&oh) * y[m.y[0]] * y[m.y[1]] * y[m.y[2]];
            }
            out[row] = acc;
        }
    }

    pub fn eval(&self, dir: Direction, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_waves];
        self.eval_into(dir, y, &mut out);
        out
    }

    /// Jacobian `G_{jk} = dF_red_j / dY_k` at `(omega, Y)`.
    pub fn jacobian(&self, dir: Direction, y: &[f64]) -> DMatrix<f64> {
        assert_eq!(y.len(), self.n_waves);
        let oh = dir.omega_hat();
        let mut g = DMatrix::zeros(self.n_waves, self.n_waves);
        for (row, monos) in self.rows.iter().enumerate() {
            for m in monos {
                let c = m.coeff * m.omega_product(&oh);
                // Product rule over the three (possibly repeated) Y factors.
                for drop in 0..3 {
                    let k = m.y[drop];
                    let mut p = c;
                    for (slot, &idx) in m.y.iter().enumerate() {
                        if slot != drop {
                            p *= y[idx];
                        }
                    }
                    g[(row, k)] += p;
                }
            }
        }
        g
    }
}
