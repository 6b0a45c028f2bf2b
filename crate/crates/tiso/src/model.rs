//! Serializable descriptions of fields, media and stop surfaces, and their
//! conversion into the core types.
//!
//! Conversions take the dotted path of the value inside the configuration so
//! that errors can name the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiso_core::field::{Grid3, Monomial};
use tiso_core::material::Coupling;
use tiso_core::raytrace::StopSurface;
use tiso_core::{Box3, ElasticParams, Mat3, MaterialField, Param, ScalarField, Vec3, Wave};

use crate::error::{Result, TisoError};

pub type V3 = [f64; 3];

pub fn v3(a: V3) -> Vec3 {
    Vec3(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveName {
    #[serde(rename = "qP")]
    QP,
    #[serde(rename = "qSV")]
    QSV,
    #[serde(rename = "qSH")]
    QSH,
}

impl From<WaveName> for Wave {
    fn from(w: WaveName) -> Wave {
        match w {
            WaveName::QP => Wave::QP,
            WaveName::QSV => Wave::QSV,
            WaveName::QSH => Wave::QSH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamName {
    E2,
    #[serde(rename = "a11")]
    A11,
    #[serde(rename = "a33")]
    A33,
    #[serde(rename = "a55")]
    A55,
    #[serde(rename = "a66")]
    A66,
}

impl From<ParamName> for Param {
    fn from(p: ParamName) -> Param {
        match p {
            ParamName::E2 => Param::E2,
            ParamName::A11 => Param::A11,
            ParamName::A33 => Param::A33,
            ParamName::A55 => Param::A55,
            ParamName::A66 => Param::A66,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialSpec {
    pub coef: f64,
    pub powers: [u32; 3],
}

/// A scalar field. Grid values are x-fastest: `values[i + nx*(j + ny*k)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    Linear { coef: V3, offset: f64 },
    Radial { center: V3, sign: f64, offset: f64 },
    Polynomial { terms: Vec<MonomialSpec> },
    Gaussian { amplitude: f64, center: V3, widths: V3 },
    Grid { origin: V3, spacing: V3, dims: [usize; 3], values: Vec<f64> },
    Sum { terms: Vec<FieldSpec> },
}

fn finite(path: &str, vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TisoError::config(path, "values must be finite"))
    }
}

impl FieldSpec {
    pub fn to_field(&self, path: &str) -> Result<ScalarField> {
        Ok(match self {
            FieldSpec::Constant { value } => {
                finite(path, &[*value])?;
                ScalarField::Constant(*value)
            }
            FieldSpec::Linear { coef, offset } => {
                finite(path, coef)?;
                finite(path, &[*offset])?;
                ScalarField::Linear { coef: v3(*coef), offset: *offset }
            }
            FieldSpec::Radial { center, sign, offset } => {
                finite(path, center)?;
                if *sign != 1.0 && *sign != -1.0 {
                    return Err(TisoError::config(format!("{path}.sign"), "must be 1 or -1"));
                }
                ScalarField::Radial { center: v3(*center), sign: *sign, offset: *offset }
            }
            FieldSpec::Polynomial { terms } => {
                ScalarField::Polynomial(terms.iter().map(|t| Monomial { coef: t.coef, powers: t.powers }).collect())
            }
            FieldSpec::Gaussian { amplitude, center, widths } => {
                if !widths.iter().all(|w| *w > 0.0 && w.is_finite()) {
                    return Err(TisoError::config(format!("{path}.widths"), "widths must be positive"));
                }
                ScalarField::Gaussian { amplitude: *amplitude, center: v3(*center), widths: v3(*widths) }
            }
            FieldSpec::Grid { origin, spacing, dims, values } => {
                let g = Grid3::new(v3(*origin), v3(*spacing), *dims, values.clone())
                    .map_err(|e| TisoError::config(path, e.to_string()))?;
                ScalarField::Grid(Box::new(g))
            }
            FieldSpec::Sum { terms } => {
                let parts = terms
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t.to_field(&format!("{path}.terms[{k}]")))
                    .collect::<Result<Vec<_>>>()?;
                ScalarField::Sum(parts)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min: V3,
    pub max: V3,
}

impl BoxSpec {
    pub fn cube(half: f64) -> Self {
        BoxSpec { min: [-half; 3], max: [half; 3] }
    }

    pub fn to_box(&self, path: &str) -> Result<Box3> {
        if !(0..3).all(|i| self.min[i] < self.max[i]) {
            return Err(TisoError::config(path, "min must be below max in every coordinate"));
        }
        Ok(Box3::new(v3(self.min), v3(self.max)))
    }
}

/// Which quantity completes `a11, a33, a55` to a full TI parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    #[default]
    A13,
    E2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSpec {
    A13 { field: FieldSpec },
    E2 { field: FieldSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum ParamsSpec {
    /// Constant parameters.
    Constant { a11: f64, a13: f64, a33: f64, a55: f64, a66: f64 },
    /// One field per parameter (polynomial tables are `polynomial` fields).
    Fields { a11: FieldSpec, a33: FieldSpec, a55: FieldSpec, a66: FieldSpec, coupling: CouplingSpec },
    /// Per-parameter arrays on a shared grid.
    Grid {
        origin: V3,
        spacing: V3,
        dims: [usize; 3],
        a11: Vec<f64>,
        a13: Vec<f64>,
        a33: Vec<f64>,
        a55: Vec<f64>,
        a66: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub param: ParamName,
    pub field: FieldSpec,
}

/// A TI medium: parameters, the layer function whose gradient is the axis,
/// and an optional constant background metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub domain: BoxSpec,
    pub params: ParamsSpec,
    pub foliation: FieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_metric: Option<[[f64; 3]; 3]>,
    /// Store constant media with a constant `E²` instead of `a13`.
    #[serde(default)]
    pub coupling: CouplingKind,
    /// Added in order in the `E²` parameterization.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbations: Vec<PerturbationSpec>,
}

pub const M0: ElasticParams = ElasticParams::new(14.0, 2.0, 12.0, 4.0, 5.0);

impl MaterialSpec {
    /// Constant parameters with planar layers normal to `axis`.
    pub fn homogeneous(p: ElasticParams, axis: V3, half: f64) -> Self {
        MaterialSpec {
            domain: BoxSpec::cube(half),
            params: ParamsSpec::Constant { a11: p.a11, a13: p.a13, a33: p.a33, a55: p.a55, a66: p.a66 },
            foliation: FieldSpec::Linear { coef: axis, offset: 0.0 },
            background_metric: None,
            coupling: CouplingKind::A13,
            perturbations: Vec::new(),
        }
    }

    pub fn build(&self, path: &str) -> Result<MaterialField> {
        let domain = self.domain.to_box(&format!("{path}.domain"))?;
        let layer = self.foliation.to_field(&format!("{path}.foliation"))?;
        let pp = format!("{path}.params");
        let mut m = match &self.params {
            ParamsSpec::Constant { a11, a13, a33, a55, a66 } => {
                let p = ElasticParams::new(*a11, *a13, *a33, *a55, *a66);
                if !p.is_admissible() {
                    return Err(TisoError::config(&pp, format!("parameters {p:?} are not admissible")));
                }
                let mut m = MaterialField::homogeneous(domain, p, Vec3::axis(2));
                m.layer = layer;
                m
            }
            ParamsSpec::Fields { a11, a33, a55, a66, coupling } => {
                let coupling = match coupling {
                    CouplingSpec::A13 { field } => Coupling::A13(field.to_field(&format!("{pp}.coupling.field"))?),
                    CouplingSpec::E2 { field } => Coupling::E2(field.to_field(&format!("{pp}.coupling.field"))?),
                };
                MaterialField::new(
                    domain,
                    a11.to_field(&format!("{pp}.a11"))?,
                    a33.to_field(&format!("{pp}.a33"))?,
                    a55.to_field(&format!("{pp}.a55"))?,
                    a66.to_field(&format!("{pp}.a66"))?,
                    coupling,
                    layer,
                )
            }
            ParamsSpec::Grid { origin, spacing, dims, a11, a13, a33, a55, a66 } => {
                let grid = |name: &str, v: &Vec<f64>| -> Result<ScalarField> {
                    let g = Grid3::new(v3(*origin), v3(*spacing), *dims, v.clone())
                        .map_err(|e| TisoError::config(format!("{pp}.{name}"), e.to_string()))?;
                    Ok(ScalarField::Grid(Box::new(g)))
                };
                MaterialField::new(
                    domain,
                    grid("a11", a11)?,
                    grid("a33", a33)?,
                    grid("a55", a55)?,
                    grid("a66", a66)?,
                    Coupling::A13(grid("a13", a13)?),
                    layer,
                )
            }
        };
        if let Some(g0) = self.background_metric {
            m = m
                .with_background_metric(Mat3(g0))
                .ok_or_else(|| TisoError::config(format!("{path}.background_metric"), "must be symmetric positive definite"))?;
        }
        if self.coupling == CouplingKind::E2 || !self.perturbations.is_empty() {
            // constant media switch exactly; others are resampled by `perturbed`
            if let Some(e) = m.with_e2_coupling() {
                m = e;
            }
        }
        for (k, p) in self.perturbations.iter().enumerate() {
            m = m.perturbed(p.param.into(), p.field.to_field(&format!("{path}.perturbations[{k}].field"))?);
        }
        validate_medium(&m, path)?;
        Ok(m)
    }
}

/// Admissibility and a nonvanishing layer gradient on a 5×5×5 lattice.
pub fn validate_medium(m: &MaterialField, path: &str) -> Result<()> {
    let ext = m.domain.extent();
    for i in 0..5 {
        for j in 0..5 {
            for k in 0..5 {
                let x = m.domain.min + Vec3([ext[0] * i as f64 / 4.0, ext[1] * j as f64 / 4.0, ext[2] * k as f64 / 4.0]);
                if !m.moduli(x).is_admissible() {
                    return Err(TisoError::config(format!("{path}.params"), format!("not admissible at {:?}", x.0)));
                }
                if m.axis_vector(x).is_err() {
                    return Err(TisoError::config(format!("{path}.foliation"), format!("gradient vanishes at {:?}", x.0)));
                }
            }
        }
    }
    Ok(())
}

/// A medium given inline or as a path to a JSON material file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialSource {
    Path(PathBuf),
    Inline(Box<MaterialSpec>),
}

impl MaterialSource {
    /// Load the description; relative paths are taken from `base`.
    pub fn spec(&self, base: &Path, path: &str) -> Result<MaterialSpec> {
        match self {
            MaterialSource::Inline(s) => Ok((**s).clone()),
            MaterialSource::Path(p) => {
                let full = if p.is_absolute() { p.clone() } else { base.join(p) };
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| TisoError::config(path, format!("cannot read {}: {e}", full.display())))?;
                serde_json::from_str(&text).map_err(|e| TisoError::config(path, format!("{}: {e}", full.display())))
            }
        }
    }

    pub fn build(&self, base: &Path, path: &str) -> Result<MaterialField> {
        self.spec(base, path)?.build(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopSpec {
    /// The medium's domain box.
    Domain,
    Box { min: V3, max: V3 },
    Plane { point: V3, inward: V3 },
    /// Stop where `sign·(f − level)` reaches zero.
    Level { field: FieldSpec, level: f64, sign: f64 },
}

impl StopSpec {
    pub fn to_stop(&self, m: &MaterialField, path: &str) -> Result<StopSurface> {
        Ok(match self {
            StopSpec::Domain => StopSurface::Box(m.domain),
            StopSpec::Box { min, max } => StopSurface::Box(BoxSpec { min: *min, max: *max }.to_box(path)?),
            StopSpec::Plane { point, inward } => {
                if v3(*inward).norm() == 0.0 {
                    return Err(TisoError::config(format!("{path}.inward"), "must be nonzero"));
                }
                StopSurface::Plane { point: v3(*point), inward: v3(*inward) }
            }
            StopSpec::Level { field, level, sign } => {
                StopSurface::Level { field: field.to_field(&format!("{path}.field"))?, level: *level, sign: *sign }
            }
        })
    }
}

pub fn stops(specs: &[StopSpec], m: &MaterialField, path: &str) -> Result<Vec<StopSurface>> {
    if specs.is_empty() {
        return Err(TisoError::config(path, "at least one stop surface is required"));
    }
    specs.iter().enumerate().map(|(k, s)| s.to_stop(m, &format!("{path}[{k}]"))).collect()
}
