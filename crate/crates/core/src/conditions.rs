//! Null and KMS condition checks on a reduced nonlinearity.
//!
//! ## What is decided
//!
//! * **Null condition**: `F_red(omega, Y) = 0` for every direction and every
//!   amplitude vector. Decided *exactly* (up to coefficient round-off) through
//!   a polynomial normal form on the circle, not by sampling.
//! * **KMS condition** (condition (W)): there is a continuous, symmetric,
//!   positive-definite matrix family `J(omega)` with
//!   `Y^T J(omega) F_red(omega, Y) >= 0` for all `(omega, Y)`. This is a
//!   semidefinite feasibility question; here it is checked on a finite grid
//!   and certificates are searched in the constant-`J` family only. A failed
//!   search therefore means "absent within the searched family and grid", not
//!   a disproof.
//!
//! The normal form eliminates `omega_hat_0 = -1` by sign bookkeeping and
//! `omega_1^2` through `omega_1^2 = 1 - omega_2^2`, so a row vanishes on the
//! circle iff its normal form has no monomials left. Coefficients below
//! 1e-14 are treated as round-off and dropped.

use std::collections::BTreeMap;

use nalgebra::DVector;
// Re-exported so callers can build certificate matrices without depending
// on a matching nalgebra version themselves.
pub use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlinearity::{Direction, ReducedForm, SystemSpec};

/// Absolute tolerance on sampled certificate values `Y^T J F_red` with `Y` on
/// the unit sphere (degree-4 normalization).
pub const TOL_KMS: f64 = 1e-12;

/// Coefficients with magnitude below this are round-off and are dropped from
/// the normal form.
const NORMAL_FORM_EPS: f64 = 1e-14;

/// A sampled reduced value must exceed this for a point to count as a
/// null-condition witness.
const WITNESS_THRESHOLD: f64 = 1e-10;

/// Eigenvalue floor used by the certificate search projection.
const SEARCH_EIG_FLOOR: f64 = 1e-6;

/// Monomial key of the circle normal form: powers of `omega_1` (at most 1
/// after reduction) and `omega_2`, plus the sorted amplitude index triple.
type NfKey = (u8, u8, [usize; 3]);

/// Circle normal form of a reduced nonlinearity, one polynomial per wave row.
#[derive(Clone, Debug)]
pub struct NormalForm {
    n_waves: usize,
    rows: Vec<BTreeMap<NfKey, f64>>,
}

impl NormalForm {
    pub fn from_reduced(red: &ReducedForm) -> Self {
        let mut rows: Vec<BTreeMap<NfKey, f64>> = vec![BTreeMap::new(); red.n_waves()];
        for (row, monos) in red.rows().iter().enumerate() {
            for m in monos {
                // omega_hat_0 = -1 contributes a sign; the others contribute
                // powers of omega_1 / omega_2.
                let mut sign = 1.0;
                let mut p1 = 0u8;
                let mut p2 = 0u8;
                for &a in &m.omega {
                    match a {
                        0 => sign = -sign,
                        1 => p1 += 1,
                        2 => p2 += 1,
                        _ => unreachable!("omega indices are 0..=2"),
                    }
                }
                // Rewrite omega_1^2 as 1 - omega_2^2 until the omega_1 power
                // is at most 1.
                let mut work = vec![(p1, p2, sign * m.coeff)];
                while let Some((p1, p2, c)) = work.pop() {
                    if p1 >= 2 {
                        work.push((p1 - 2, p2, c));
                        work.push((p1 - 2, p2 + 2, -c));
                        continue;
                    }
                    let slot = rows[row].entry((p1, p2, m.y)).or_insert(0.0);
                    *slot += c;
                }
            }
            rows[row].retain(|_, c| c.abs() >= NORMAL_FORM_EPS);
        }
        NormalForm { n_waves: red.n_waves(), rows }
    }

    /// True iff every row is the zero polynomial, i.e. the null condition
    /// holds.
    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(|r| r.is_empty())
    }

    /// Total number of surviving monomials across rows.
    pub fn monomial_count(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// Evaluates the normal form; must agree with the reduced form on the
    /// circle, which the tests check.
    pub fn eval(&self, dir: Direction, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_waves);
        let [o1, o2] = dir.omega();
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|(&(p1, p2, ys), &c)| {
                        c * o1.powi(p1 as i32)
                            * o2.powi(p2 as i32)
                            * y[ys[0]]
                            * y[ys[1]]
                            * y[ys[2]]
                    })
                    .sum()
            })
            .collect()
    }
}

/// A point where the reduced nonlinearity provably does not vanish.
#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub row: usize,
    pub direction: Direction,
    pub y: Vec<f64>,
    pub value: f64,
}

/// Outcome of the exact null-condition decision.
#[derive(Clone, Debug, Serialize)]
pub struct NullReport {
    pub holds: bool,
    /// Surviving normal-form monomials (0 iff `holds`).
    pub monomials: usize,
    pub witness: Option<Witness>,
}

/// Decides the null condition for `spec`, with a reproducible witness drawn
/// from the seeded generator when it fails.
pub fn check_null_seeded(spec: &SystemSpec, seed: u64) -> NullReport {
    let red = spec.reduced_form();
    let nf = NormalForm::from_reduced(&red);
    if nf.is_zero() {
        return NullReport { holds: true, monomials: 0, witness: None };
    }
    let n = red.n_waves();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Witness> = None;
    for _ in 0..50_000 {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-3 {
            continue;
        }
        y.iter_mut().for_each(|a| *a /= norm);
        let dir = Direction::from_angle(theta);
        let vals = red.eval(dir, &y);
        let (row, value) = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, v)| (i, *v))
            .expect("at least one wave row");
        if best.as_ref().map_or(true, |b| value.abs() > b.value.abs()) {
            best = Some(Witness { row, direction: dir, y: y.clone(), value });
        }
        if value.abs() > WITNESS_THRESHOLD {
            break;
        }
    }
    NullReport { holds: false, monomials: nf.monomial_count(), witness: best }
}

/// [`check_null_seeded`] with a fixed default seed.
pub fn check_null(spec: &SystemSpec) -> NullReport {
    check_null_seeded(spec, 0)
}

/// Candidate certificate family for the KMS condition.
#[derive(Clone, Debug)]
pub enum KmsCertificate {
    /// A single symmetric matrix used for every direction.
    Constant(DMatrix<f64>),
    /// Finite trigonometric family
    /// `J(theta) = A0 + sum_p (cos(p theta) A_p + sin(p theta) B_p)`.
    Trig {
        a0: DMatrix<f64>,
        harmonics: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    },
}

impl KmsCertificate {
    /// Constant certificate; the matrix must be square and symmetric within
    /// 1e-12 (it is symmetrized exactly on construction).
    pub fn constant(m: DMatrix<f64>) -> Result<Self> {
        Ok(KmsCertificate::Constant(validated_symmetric(m)?))
    }

    pub fn identity(n: usize) -> Self {
        KmsCertificate::Constant(DMatrix::identity(n, n))
    }

    /// Trigonometric certificate from a mean part and harmonics
    /// `(A_p, B_p)` for `p = 1, 2, ...`.
    pub fn trig(a0: DMatrix<f64>, harmonics: Vec<(DMatrix<f64>, DMatrix<f64>)>) -> Result<Self> {
        let n = a0.nrows();
        let a0 = validated_symmetric(a0)?;
        let harmonics = harmonics
            .into_iter()
            .map(|(a, b)| {
                if a.nrows() != n || b.nrows() != n {
                    return Err(Error::InvalidArgument(
                        "certificate harmonics must match the mean part's dimension".into(),
                    ));
                }
                Ok((validated_symmetric(a)?, validated_symmetric(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KmsCertificate::Trig { a0, harmonics })
    }

    pub fn dim(&self) -> usize {
        match self {
            KmsCertificate::Constant(m) => m.nrows(),
            KmsCertificate::Trig { a0, .. } => a0.nrows(),
        }
    }

    pub fn eval(&self, theta: f64) -> DMatrix<f64> {
        match self {
            KmsCertificate::Constant(m) => m.clone(),
            KmsCertificate::Trig { a0, harmonics } => {
                let mut j = a0.clone();
                for (p, (a, b)) in harmonics.iter().enumerate() {
                    let arg = (p + 1) as f64 * theta;
                    j += a * arg.cos() + b * arg.sin();
                }
                j
            }
        }
    }
}

fn validated_symmetric(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument("certificate matrix must be square".into()));
    }
    let defect = (&m - m.transpose()).abs().max();
    if !defect.is_finite() || defect > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "certificate matrix is asymmetric by {defect:e}"
        )));
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Grid verification outcome for a certificate.
#[derive(Clone, Debug, Serialize)]
pub struct KmsReport {
    pub holds: bool,
    pub n_omega: usize,
    pub n_y: usize,
    /// Minimum of `Y^T J F_red` over the grid (unit-sphere `Y`).
    pub min_quartic: f64,
    /// Minimum eigenvalue of `J(omega)` over the direction grid.
    pub min_eigenvalue: f64,
    /// Grid point attaining `min_quartic`.
    pub worst: Option<Witness>,
    pub tol: f64,
}

/// Uniform grid on the unit sphere `S^{dim-1}` with roughly `n^(dim-1)`
/// points, via nested spherical angles. `dim = 1` yields the two signs.
fn unit_sphere_grid(dim: usize, n: usize) -> Vec<Vec<f64>> {
    assert!(dim >= 1);
    if dim == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    let mut pts = Vec::new();
    // First dim-2 angles sweep [0, pi], the last sweeps [0, 2pi).
    let mut angles = vec![0usize; dim - 1];
    loop {
        let mut y = vec![0.0; dim];
        let mut sin_prod = 1.0;
        for (k, &ai) in angles.iter().enumerate() {
            let phi = if k + 2 == dim {
                std::f64::consts::TAU * ai as f64 / n as f64
            } else {
                std::f64::consts::PI * ai as f64 / (n - 1).max(1) as f64
            };
            y[k] = sin_prod * phi.cos();
            sin_prod *= phi.sin();
        }
        y[dim - 1] = sin_prod;
        pts.push(y);
        // Odometer increment over the angle grid.
        let mut k = 0;
        loop {
            angles[k] += 1;
            if angles[k] < n {
                break;
            }
            angles[k] = 0;
            k += 1;
            if k == dim - 1 {
                return pts;
            }
        }
    }
}

/// Checks `Y^T J(omega) F_red(omega, Y) >= -tol` and positive definiteness of
/// `J` on an `n_omega x n_y^(n_waves - 1)` grid.
pub fn verify_kms(
    spec: &SystemSpec,
    cert: &KmsCertificate,
    n_omega: usize,
    n_y: usize,
) -> Result<KmsReport> {
    verify_kms_reduced(&spec.reduced_form(), cert, n_omega, n_y)
}

/// [`verify_kms`] on an already-computed reduced form.
pub fn verify_kms_reduced(
    red: &ReducedForm,
    cert: &KmsCertificate,
    n_omega: usize,
    n_y: usize,
) -> Result<KmsReport> {
    let n = red.n_waves();
    if n == 0 {
        return Ok(KmsReport {
            holds: true,
            n_omega,
            n_y,
            min_quartic: 0.0,
            min_eigenvalue: f64::INFINITY,
            worst: None,
            tol: TOL_KMS,
        });
    }
    if cert.dim() != n {
        return Err(Error::InvalidArgument(format!(
            "certificate dimension {} does not match wave block size {n}",
            cert.dim()
        )));
    }
    if n_omega == 0 || n_y == 0 {
        return Err(Error::InvalidArgument("grid resolutions must be positive".into()));
    }
    let sphere = unit_sphere_grid(n, n_y);
    let mut min_quartic = f64::INFINITY;
    let mut min_eigenvalue = f64::INFINITY;
    let mut worst = None;
    let mut f = vec![0.0; n];
    for i in 0..n_omega {
        let theta = std::f64::consts::TAU * i as f64 / n_omega as f64;
        let dir = Direction::from_angle(theta);
        let j = cert.eval(theta);
        let eig_min = SymmetricEigenMin::of(&j);
        if eig_min < min_eigenvalue {
            min_eigenvalue = eig_min;
        }
        for y in &sphere {
            red.eval_into(dir, y, &mut f);
            let mut q = 0.0;
            for p in 0..n {
                let mut row = 0.0;
                for k in 0..n {
                    row += j[(p, k)] * f[k];
                }
                q += y[p] * row;
            }
            if q < min_quartic {
                min_quartic = q;
                worst = Some(Witness { row: 0, direction: dir, y: y.clone(), value: q });
            }
        }
    }
    Ok(KmsReport {
        holds: min_quartic >= -TOL_KMS && min_eigenvalue > 0.0,
        n_omega,
        n_y,
        min_quartic,
        min_eigenvalue,
        worst,
        tol: TOL_KMS,
    })
}

/// Small helper so eigenvalue floors read declaratively.
struct SymmetricEigenMin;

impl SymmetricEigenMin {
    fn of(m: &DMatrix<f64>) -> f64 {
        let sym = (m + m.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }
}

/// Result of the constant-certificate search.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// The certificate and its verification on the doubled grid, if found.
    pub found: Option<(DMatrix<f64>, KmsReport)>,
    pub iterations: usize,
    /// Most negative sampled constraint value after the final iteration.
    pub final_violation: f64,
}

/// Searches for a constant symmetric positive-definite `J` with
/// `Y^T J F_red >= 0` on the sampled grid, by alternating projection.
///
/// Each grid point `(omega, Y)` imposes the linear constraint
/// `<J, sym(Y F^T)> >= 0`; one pass projects `J` onto each violated
/// half-space in turn, then onto the positive-definite cone (eigenvalues
/// clipped at 1e-6) with the trace renormalized to `n_waves`. A candidate
/// only counts once [`verify_kms_reduced`] accepts it on a grid twice as
/// fine, so the search never certifies on the grid it optimized against.
pub fn search_constant_kms(
    spec: &SystemSpec,
    n_omega: usize,
    n_y: usize,
    max_iters: usize,
) -> Result<SearchOutcome> {
    let red = spec.reduced_form();
    let n = red.n_waves();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "certificate search needs at least one wave component".into(),
        ));
    }
    if n_omega == 0 || n_y == 0 {
        return Err(Error::InvalidArgument("grid resolutions must be positive".into()));
    }
    // Constraint matrices sym(Y F_red^T) over the sampled grid; near-zero
    // ones carry no information and are dropped.
    let sphere = unit_sphere_grid(n, n_y);
    let mut constraints: Vec<DMatrix<f64>> = Vec::new();
    let mut f = vec![0.0; n];
    for i in 0..n_omega {
        let theta = std::f64::consts::TAU * i as f64 / n_omega as f64;
        let dir = Direction::from_angle(theta);
        for y in &sphere {
            red.eval_into(dir, y, &mut f);
            let yv = DVector::from_column_slice(y);
            let fv = DVector::from_column_slice(&f);
            let a = (&yv * fv.transpose() + &fv * yv.transpose()) * 0.5;
            if a.norm() > 1e-14 {
                constraints.push(a);
            }
        }
    }
    let mut j = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut final_violation = 0.0;
    for it in 0..max_iters {
        iterations = it + 1;
        // Sequential projection onto violated half-spaces.
        for a in &constraints {
            let v = j.dot(a);
            if v < 0.0 {
                let scale = -v / a.norm_squared();
                j += a * scale;
            }
        }
        // Projection onto the positive-definite, trace-normalized cone.
        j = (&j + j.transpose()) * 0.5;
        let eig = j.clone().symmetric_eigen();
        let clipped = eig.eigenvalues.map(|l| l.max(SEARCH_EIG_FLOOR));
        j = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        j *= n as f64 / j.trace();
        final_violation = constraints.iter().map(|a| j.dot(a)).fold(0.0, f64::min);
        if final_violation >= -TOL_KMS {
            break;
        }
    }
    if final_violation < -TOL_KMS {
        return Ok(SearchOutcome { found: None, iterations, final_violation });
    }
    // Accept only against a finer grid than the one optimized on.
    let cert = KmsCertificate::Constant(j.clone());
    let report = verify_kms_reduced(&red, &cert, 2 * n_omega, 2 * n_y)?;
    if report.holds {
        Ok(SearchOutcome { found: Some((j, report)), iterations, final_violation })
    } else {
        Ok(SearchOutcome { found: None, iterations, final_violation: report.min_quartic })
    }
}

/// Combined verdict as emitted by the command-line `check` subcommand.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub null: NullReport,
    /// Verification of the supplied or found certificate, when applicable.
    pub kms: Option<KmsReport>,
    /// The certificate that was verified (supplied, searched, or identity for
    /// null systems).
    pub certificate: Option<KmsCertificate>,
    /// Whether a search ran and whether it found anything.
    pub searched: bool,
}

/// Runs the null check, then verifies the supplied certificate or searches
/// for a constant one.
///
/// When the null condition holds the identity certificate works trivially
/// (the quartic form vanishes identically) and is reported without a search.
pub fn run_check(
    spec: &SystemSpec,
    supplied: Option<KmsCertificate>,
    n_omega: usize,
    n_y: usize,
    seed: u64,
) -> Result<CheckReport> {
    let null = check_null_seeded(spec, seed);
    if spec.n_waves() == 0 {
        let kms = verify_kms(spec, &KmsCertificate::identity(0), n_omega, n_y)?;
        return Ok(CheckReport { null, kms: Some(kms), certificate: None, searched: false });
    }
    if let Some(cert) = supplied {
        let kms = verify_kms(spec, &cert, n_omega, n_y)?;
        return Ok(CheckReport { null, kms: Some(kms), certificate: Some(cert), searched: false });
    }
    if null.holds {
        let cert = KmsCertificate::identity(spec.n_waves());
        let kms = verify_kms(spec, &cert, n_omega, n_y)?;
        return Ok(CheckReport { null, kms: Some(kms), certificate: Some(cert), searched: false });
    }
    let outcome = search_constant_kms(spec, n_omega, n_y, 500)?;
    match outcome.found {
        Some((j, report)) => Ok(CheckReport {
            null,
            kms: Some(report),
            certificate: Some(KmsCertificate::Constant(j)),
            searched: true,
        }),
        None => Ok(CheckReport { null, kms: None, certificate: None, searched: true }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{factor, CubicTensor, Deriv, SystemSpec};

    fn wave_only_system(terms: &[([Deriv; 3], f64)]) -> SystemSpec {
        let mut t = CubicTensor::new();
        for (ds, c) in terms {
            t.add_term(1, [factor(1, ds[0]), factor(1, ds[1]), factor(1, ds[2])], *c);
        }
        SystemSpec::new(1, vec![1.0, 0.0], t, vec![]).unwrap()
    }

    /// `(d_t w)((d_t w)^2 - (d_1 w)^2 - (d_2 w)^2)` vanishes identically on
    /// the circle.
    fn null_cubic() -> SystemSpec {
        wave_only_system(&[
            ([Deriv::T, Deriv::T, Deriv::T], 1.0),
            ([Deriv::T, Deriv::X1, Deriv::X1], -1.0),
            ([Deriv::T, Deriv::X2, Deriv::X2], -1.0),
        ])
    }

    #[test]
    fn null_cubic_normal_form_is_zero() {
        let report = check_null(&null_cubic());
        assert!(report.holds, "null form combination must pass, {report:?}");
        assert_eq!(report.monomials, 0);
        assert!(report.witness.is_none());
    }

    #[test]
    fn pure_time_cubic_fails_null_with_witness() {
        let spec = wave_only_system(&[([Deriv::T, Deriv::T, Deriv::T], 1.0)]);
        let report = check_null(&spec);
        assert!(!report.holds);
        let w = report.witness.expect("failing check must produce a witness");
        assert!(w.value.abs() > WITNESS_THRESHOLD);
        // Reproducibility: re-evaluating the reduced form at the witness
        // recovers the recorded violation exactly.
        let red = spec.reduced_form();
        let again = red.eval(w.direction, &w.y)[w.row];
        assert_eq!(again, w.value, "witness must re-evaluate to its recorded value");
    }

    #[test]
    fn normal_form_agrees_with_reduced_form_on_circle() {
        let spec = wave_only_system(&[
            ([Deriv::T, Deriv::X1, Deriv::X2], 0.7),
            ([Deriv::X1, Deriv::X1, Deriv::X1], -1.2),
            ([Deriv::T, Deriv::T, Deriv::X2], 0.4),
        ]);
        let red = spec.reduced_form();
        let nf = NormalForm::from_reduced(&red);
        for (i, theta) in [0.0, 0.9, 2.2, 3.8, 5.6].into_iter().enumerate() {
            let dir = Direction::from_angle(theta);
            let y = [0.3 + 0.2 * i as f64];
            let a = red.eval(dir, &y)[0];
            let b = nf.eval(dir, &y)[0];
            assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()), "theta={theta}: {a} vs {b}");
        }
    }

    #[test]
    fn normal_form_has_no_high_omega1_powers() {
        let spec = wave_only_system(&[([Deriv::X1, Deriv::X1, Deriv::X1], 1.0)]);
        let nf = NormalForm::from_reduced(&spec.reduced_form());
        for row in &nf.rows {
            for &(p1, _, _) in row.keys() {
                assert!(p1 <= 1, "omega_1 power {p1} survived reduction");
            }
        }
    }

    #[test]
    fn sphere_grid_dimensions() {
        assert_eq!(unit_sphere_grid(1, 8).len(), 2);
        let circle = unit_sphere_grid(2, 16);
        assert_eq!(circle.len(), 16);
        for y in &circle {
            let r: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert_eq!(unit_sphere_grid(3, 8).len(), 64);
    }

    #[test]
    fn dissipative_sign_verifies_with_unit_certificate() {
        // F_red = Y^3, so Y^T J F_red = Y^4 >= 0 for J = [1].
        let spec = wave_only_system(&[([Deriv::T, Deriv::T, Deriv::T], -1.0)]);
        let cert = KmsCertificate::identity(1);
        let report = verify_kms(&spec, &cert, 32, 8).unwrap();
        assert!(report.holds, "{report:?}");
        assert!(report.min_quartic >= -TOL_KMS);
        assert!(report.min_eigenvalue > 0.0);
    }

    #[test]
    fn wrong_sign_fails_verification_with_worst_point() {
        // F_red = -Y^3 gives Y^T J F_red = -Y^4 < 0.
        let spec = wave_only_system(&[([Deriv::T, Deriv::T, Deriv::T], 1.0)]);
        let report = verify_kms(&spec, &KmsCertificate::identity(1), 32, 8).unwrap();
        assert!(!report.holds);
        assert!(report.min_quartic < -0.5, "min quartic {}", report.min_quartic);
        assert!(report.worst.is_some());
    }

    #[test]
    fn search_returns_unit_certificate_for_dissipative_sign() {
        let spec = wave_only_system(&[([Deriv::T, Deriv::T, Deriv::T], -1.0)]);
        let outcome = search_constant_kms(&spec, 32, 8, 500).unwrap();
        let (j, report) = outcome.found.expect("search must succeed");
        assert!((j[(0, 0)] - 1.0).abs() < 1e-12, "trace-normalized scalar is 1, got {j}");
        assert!(report.holds);
    }

    #[test]
    fn search_is_absent_for_wrong_sign() {
        let spec = wave_only_system(&[([Deriv::T, Deriv::T, Deriv::T], 1.0)]);
        let outcome = search_constant_kms(&spec, 32, 8, 200).unwrap();
        assert!(outcome.found.is_none(), "no constant certificate exists for F_red = -Y^3");
        assert!(outcome.final_violation < -TOL_KMS);
    }

    #[test]
    fn search_on_zero_wave_part_returns_identity() {
        let spec = wave_only_system(&[]);
        let outcome = search_constant_kms(&spec, 16, 4, 100).unwrap();
        let (j, report) = outcome.found.expect("empty constraints are trivially feasible");
        assert_eq!(j, DMatrix::identity(1, 1));
        assert!(report.holds);
        assert_eq!(outcome.iterations, 1);
    }

    #[test]
    fn trig_certificate_evaluates_and_verifies_on_null_system() {
        // J(theta) = 2 + cos(theta), always >= 1 > 0; works for any null
        // system since the quartic form is identically zero.
        let cert = KmsCertificate::trig(
            DMatrix::from_element(1, 1, 2.0),
            vec![(DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1))],
        )
        .unwrap();
        let j = cert.eval(std::f64::consts::PI);
        assert!((j[(0, 0)] - 1.0).abs() < 1e-12);
        let report = verify_kms(&null_cubic(), &cert, 24, 6).unwrap();
        assert!(report.holds, "{report:?}");
        assert!((report.min_eigenvalue - 1.0).abs() < 1e-9);
    }

    #[test]
    fn asymmetric_certificate_is_rejected() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = 0.5;
        assert!(KmsCertificate::constant(m).is_err());
    }

    #[test]
    fn run_check_reports_null_then_kms() {
        let report = run_check(&null_cubic(), None, 16, 4, 0).unwrap();
        assert!(report.null.holds);
        assert!(report.kms.unwrap().holds);
        assert!(!report.searched, "null systems need no search");
    }
}
