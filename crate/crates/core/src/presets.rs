//! Catalog of ready-made systems used by the command line and the test
//! suites.
//!
//! All presets couple one Klein-Gordon component (mass 1, index 0) with one
//! wave component (index 1); they differ in the wave-row cubic interaction
//! and are chosen to land on different sides of the null / KMS dividing
//! lines.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::conditions::KmsCertificate;
use crate::error::{Error, Result};
use crate::nonlinearity::{factor, CubicTensor, Deriv, HigherTerm, SystemSpec};

/// A tunable scalar parameter of a preset.
#[derive(Clone, Copy, Debug)]
pub struct ParamInfo {
    pub name: &'static str,
    pub default: f64,
    pub doc: &'static str,
}

/// Catalog entry: a named system family with its tunable parameters.
#[derive(Clone, Copy, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [ParamInfo],
}

const EXAMPLE_KMS_PARAMS: &[ParamInfo] = &[
    ParamInfo {
        name: "c",
        default: 1.0,
        doc: "strength of the non-null (d_a w)^2 (d_t w) interaction; c = 0 restores the null condition",
    },
    ParamInfo {
        name: "a",
        default: 0.0,
        doc: "derivative axis of the squared factor: 0 = t, 1 = x1, 2 = x2 (only 0 is rotation invariant)",
    },
    ParamInfo {
        name: "kg_coupling",
        default: 0.0,
        doc: "coefficient of an extra (d_t w)^3 source on the Klein-Gordon row",
    },
];

const CATALOG: &[Preset] = &[
    Preset {
        name: "example-kms",
        summary: "Wave row -c (d_a w)^2 (d_t w) + (d_t w)((d_t w)^2 - |grad w|^2): reduced form \
                  c omega_hat_a^2 Y^3, so the null condition fails for c != 0 while the constant \
                  certificate J = [1] satisfies the KMS condition for c >= 0",
        params: EXAMPLE_KMS_PARAMS,
    },
    Preset {
        name: "example-null",
        summary: "The c = 0 member of the example-kms family: the wave row is a pure null form \
                  and both conditions hold",
        params: &[],
    },
    Preset {
        name: "kms-violating",
        summary: "Wave row +(d_t w)^3: reduced form -Y^3, the focusing sign; no constant \
                  certificate exists and profile amplitudes blow up in finite time",
        params: &[],
    },
    Preset {
        name: "null-cubic",
        summary: "Wave row (d_t w)((d_t w)^2 - |grad w|^2): the classical cubic null form, \
                  identically zero on the circle",
        params: &[],
    },
];

/// All built-in presets, in stable order.
pub fn catalog() -> &'static [Preset] {
    CATALOG
}

pub fn find(name: &str) -> Option<&'static Preset> {
    CATALOG.iter().find(|p| p.name == name)
}

/// Builds the example-kms family member with explicit parameters.
///
/// The wave row is
/// `-c (d_a w)^2 (d_t w) + (d_t w)((d_t w)^2 - (d_1 w)^2 - (d_2 w)^2)`;
/// `kg_coupling` adds `kg_coupling * (d_t w)^3` to the Klein-Gordon row,
/// which leaves both conditions untouched but makes the Klein-Gordon
/// component feel the wave field.
pub fn example_kms(c: f64, a: Deriv, kg_coupling: f64) -> SystemSpec {
    let w = 1;
    let mut t = CubicTensor::new();
    t.add_term(w, [factor(w, a), factor(w, a), factor(w, Deriv::T)], -c);
    t.add_term(w, [factor(w, Deriv::T); 3], 1.0);
    t.add_term(w, [factor(w, Deriv::T), factor(w, Deriv::X1), factor(w, Deriv::X1)], -1.0);
    t.add_term(w, [factor(w, Deriv::T), factor(w, Deriv::X2), factor(w, Deriv::X2)], -1.0);
    if kg_coupling != 0.0 {
        t.add_term(0, [factor(w, Deriv::T); 3], kg_coupling);
    }
    SystemSpec::new(1, vec![1.0, 0.0], t, vec![]).expect("preset system is valid")
}

/// The `c = 0` member: pure null form on the wave row.
pub fn example_null() -> SystemSpec {
    example_kms(0.0, Deriv::T, 0.0)
}

/// Focusing sign `+(d_t w)^3` on the wave row; fails both conditions.
pub fn kms_violating() -> SystemSpec {
    let w = 1;
    let mut t = CubicTensor::new();
    t.add_term(w, [factor(w, Deriv::T); 3], 1.0);
    SystemSpec::new(1, vec![1.0, 0.0], t, vec![]).expect("preset system is valid")
}

/// The classical cubic null form alone on the wave row.
pub fn null_cubic() -> SystemSpec {
    let w = 1;
    let mut t = CubicTensor::new();
    t.add_term(w, [factor(w, Deriv::T); 3], 1.0);
    t.add_term(w, [factor(w, Deriv::T), factor(w, Deriv::X1), factor(w, Deriv::X1)], -1.0);
    t.add_term(w, [factor(w, Deriv::T), factor(w, Deriv::X2), factor(w, Deriv::X2)], -1.0);
    SystemSpec::new(1, vec![1.0, 0.0], t, vec![]).expect("preset system is valid")
}

fn deriv_from_axis(v: f64) -> Result<Deriv> {
    match v {
        x if x == 0.0 => Ok(Deriv::T),
        x if x == 1.0 => Ok(Deriv::X1),
        x if x == 2.0 => Ok(Deriv::X2),
        other => Err(Error::InvalidArgument(format!(
            "parameter 'a' must be 0, 1, or 2, got {other}"
        ))),
    }
}

/// Builds a preset by name with parameter overrides; unknown names or
/// parameters are errors.
pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<SystemSpec> {
    let preset = find(name).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "unknown preset '{name}'; available: {}",
            CATALOG.iter().map(|p| p.name).collect::<Vec<_>>().join(", ")
        ))
    })?;
    for key in overrides.keys() {
        if !preset.params.iter().any(|p| p.name == key) {
            return Err(Error::InvalidArgument(format!(
                "preset '{name}' has no parameter '{key}'"
            )));
        }
    }
    let get = |pname: &str| -> f64 {
        overrides.get(pname).copied().unwrap_or_else(|| {
            preset
                .params
                .iter()
                .find(|p| p.name == pname)
                .map(|p| p.default)
                .unwrap_or(0.0)
        })
    };
    match name {
        "example-kms" => {
            let a = deriv_from_axis(get("a"))?;
            Ok(example_kms(get("c"), a, get("kg_coupling")))
        }
        "example-null" => Ok(example_null()),
        "kms-violating" => Ok(kms_violating()),
        "null-cubic" => Ok(null_cubic()),
        _ => unreachable!("catalog and build arms must stay in sync"),
    }
}

/// The certificate known in closed form for a preset, if any. Null systems
/// get the identity (the quartic form vanishes identically); the example-kms
/// family gets `J = [1]` as long as `c >= 0`.
pub fn known_certificate(name: &str, overrides: &BTreeMap<String, f64>) -> Option<KmsCertificate> {
    match name {
        "example-kms" => {
            let c = overrides.get("c").copied().unwrap_or(1.0);
            (c >= 0.0).then(|| KmsCertificate::Constant(DMatrix::identity(1, 1)))
        }
        "example-null" | "null-cubic" => Some(KmsCertificate::Constant(DMatrix::identity(1, 1))),
        _ => None,
    }
}

/// Demonstrates that quartic and higher corrections are representable: the
/// example-kms system augmented with `q * v^2 (d_t w)^2` of degree 4 on the
/// wave row.
pub fn example_kms_with_quartic(c: f64, q: f64) -> SystemSpec {
    let base = example_kms(c, Deriv::T, 0.0);
    let quartic = HigherTerm::new(
        1,
        vec![
            factor(0, Deriv::Value),
            factor(0, Deriv::Value),
            factor(1, Deriv::T),
            factor(1, Deriv::T),
        ],
        q,
    );
    SystemSpec::new(1, base.masses().to_vec(), base.cubic().clone(), vec![quartic])
        .expect("augmented preset is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::{check_null, verify_kms};

    #[test]
    fn catalog_has_the_required_entries() {
        for name in ["example-kms", "example-null", "kms-violating", "null-cubic"] {
            assert!(find(name).is_some(), "missing preset {name}");
        }
    }

    #[test]
    fn example_kms_fails_null_but_verifies_unit_certificate() {
        let spec = example_kms(1.0, Deriv::T, 0.0);
        assert!(!check_null(&spec).holds);
        let cert = known_certificate("example-kms", &BTreeMap::new()).unwrap();
        let report = verify_kms(&spec, &cert, 64, 16).unwrap();
        assert!(report.holds, "{report:?}");
    }

    #[test]
    fn null_presets_pass_the_null_check() {
        assert!(check_null(&example_null()).holds);
        assert!(check_null(&null_cubic()).holds);
        assert!(!check_null(&kms_violating()).holds);
    }

    #[test]
    fn build_rejects_unknown_names_and_params() {
        assert!(build("no-such-preset", &BTreeMap::new()).is_err());
        let mut p = BTreeMap::new();
        p.insert("zeta".to_string(), 1.0);
        assert!(build("example-kms", &p).is_err());
        assert!(build("example-null", &p).is_err());
    }

    #[test]
    fn build_applies_overrides() {
        let mut p = BTreeMap::new();
        p.insert("c".to_string(), 0.0);
        let spec = build("example-kms", &p).unwrap();
        assert!(check_null(&spec).holds, "c = 0 restores the null condition");
    }

    #[test]
    fn kg_coupling_changes_neither_condition() {
        let plain = example_kms(1.0, Deriv::T, 0.0);
        let coupled = example_kms(1.0, Deriv::T, 0.7);
        assert_eq!(plain.reduced_form(), coupled.reduced_form());
        assert_eq!(coupled.cubic().len(), plain.cubic().len() + 1);
    }

    #[test]
    fn rotation_invariance_per_axis() {
        assert!(example_kms(1.0, Deriv::T, 0.0).is_rotation_invariant());
        assert!(!example_kms(1.0, Deriv::X1, 0.0).is_rotation_invariant());
        assert!(kms_violating().is_rotation_invariant());
        assert!(null_cubic().is_rotation_invariant());
    }
}
