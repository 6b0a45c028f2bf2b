//! Experiment configuration. Every section has a complete default, and the
//! effective configuration is written next to the outputs of each run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TisoError};
use crate::model::{FieldSpec, MaterialSource, MaterialSpec, ParamName, StopSpec, WaveName, M0, V3};

/// Name of the echoed configuration inside the output directory.
pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub material: MaterialSource,
    pub waves: Vec<WaveName>,
    pub trace: TraceConfig,
    pub convexity: ConvexityConfig,
    pub nondegen: NondegenConfig,
    pub audit: AuditConfig,
    pub invert: InvertConfig,
    pub qsh: QshConfig,
    pub verify: VerifyConfig,
    pub plot: PlotConfig,
}

/// Tilt axis of the default medium: neither parallel nor orthogonal to the
/// default artificial boundary.
pub const DEFAULT_AXIS: V3 = [0.6, 0.2, 1.0];

/// Convex foliation `|z − c| − 5` with `c = (0, 0, −5)`: spheres of radius
/// about five, with the artificial boundary through the origin.
pub fn default_foliation() -> FieldSpec {
    FieldSpec::Radial { center: [0.0, 0.0, -5.0], sign: 1.0, offset: -5.0 }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 20_240_601,
            output_dir: PathBuf::from("tiso-out"),
            material: MaterialSource::Inline(Box::new(MaterialSpec::homogeneous(M0, DEFAULT_AXIS, 1.0))),
            waves: vec![WaveName::QP, WaveName::QSV],
            trace: TraceConfig::default(),
            convexity: ConvexityConfig::default(),
            nondegen: NondegenConfig::default(),
            audit: AuditConfig::default(),
            invert: InvertConfig::default(),
            qsh: QshConfig::default(),
            verify: VerifyConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig { rtol: 1e-10, atol: 1e-12, max_steps: 200_000 }
    }
}

impl OdeConfig {
    pub fn options(&self, path: &str) -> Result<tiso_core::ode::OdeOptions> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(TisoError::config(path, "rtol and atol must be positive"));
        }
        if self.max_steps == 0 {
            return Err(TisoError::config(format!("{path}.max_steps"), "must be positive"));
        }
        Ok(tiso_core::ode::OdeOptions { max_steps: self.max_steps, ..tiso_core::ode::OdeOptions::default() }
            .with_tolerance(self.rtol, self.atol))
    }
}

/// Entry covectors of a ray fan. Directions are normalized to `p = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FanConfig {
    Explicit { entries: Vec<EntrySpec> },
    /// Every lattice point of a planar patch with every listed direction.
    Lattice { origin: V3, e1: V3, e2: V3, u: [f64; 2], v: [f64; 2], n_u: usize, n_v: usize, directions: Vec<V3> },
    /// Uniform points on the patch and directions in a cone, drawn from the seed.
    Random { origin: V3, e1: V3, e2: V3, u: [f64; 2], v: [f64; 2], count: usize, direction: V3, cone_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub x: V3,
    pub xi: V3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub fan: FanConfig,
    pub stops: Vec<StopSpec>,
    pub ode: OdeConfig,
    pub max_time: f64,
    pub drift_tol: f64,
    /// Also write sampled ray paths.
    pub write_paths: bool,
    /// Failed rays are recorded but do not change the exit status.
    pub allow_failures: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            fan: FanConfig::Lattice {
                origin: [-1.0, 0.0, 0.0],
                e1: [0.0, 1.0, 0.0],
                e2: [0.0, 0.0, 1.0],
                u: [-0.5, 0.5],
                v: [-0.5, 0.5],
                n_u: 5,
                n_v: 5,
                directions: vec![[1.0, 0.0, 0.0], [1.0, 0.2, 0.1], [1.0, -0.1, 0.3]],
            },
            stops: vec![StopSpec::Domain],
            ode: OdeConfig::default(),
            max_time: 100.0,
            drift_tol: 1e-8,
            write_paths: false,
            allow_failures: false,
        }
    }
}

/// Points at foliation depth `x` along the outward normals through a
/// lateral ring, for the default spherical foliation.
pub fn default_points(depths: &[f64]) -> Vec<V3> {
    let c = [0.0, 0.0, -5.0];
    let mut out = Vec::new();
    for (k, &x) in depths.iter().enumerate() {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / depths.len() as f64;
        let lat = 0.05 + 0.3 * ((k % 3) as f64) / 2.0;
        let d = [lat * phi.cos(), lat * phi.sin(), 5.0];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let r = 5.0 + x;
        out.push([c[0] + r * d[0] / n, c[1] + r * d[1] / n, c[2] + r * d[2] / n]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvexityConfig {
    /// The foliation `x` whose level sets should be concave along rays.
    pub foliation: FieldSpec,
    pub points: Vec<V3>,
    /// Tangent directions per point.
    pub directions: usize,
    /// Normalized second derivatives must exceed this value.
    pub tol: f64,
}

impl Default for ConvexityConfig {
    fn default() -> Self {
        ConvexityConfig {
            foliation: default_foliation(),
            points: default_points(&[0.0, 0.05, 0.1, 0.15, 0.2, 0.0]),
            directions: 12,
            tol: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NondegenConfig {
    pub foliation: FieldSpec,
    pub points: Vec<V3>,
    pub directions: usize,
    /// Relative determinant below which a branch counts as singular.
    pub det_tol: f64,
}

impl Default for NondegenConfig {
    fn default() -> Self {
        NondegenConfig {
            foliation: default_foliation(),
            points: default_points(&[0.0, 0.05, 0.1, 0.2]),
            directions: 24,
            det_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffShapeName {
    Bump,
    FlatBump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoffConfig {
    pub shape: CutoffShapeName,
    pub half_width: f64,
    pub digamma: f64,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        CutoffConfig { shape: CutoffShapeName::Bump, half_width: 0.5, digamma: 1.0 }
    }
}

impl CutoffConfig {
    pub fn cutoff(&self, path: &str) -> Result<tiso_core::symbol::Cutoff> {
        let c = tiso_core::symbol::Cutoff {
            shape: match self.shape {
                CutoffShapeName::Bump => tiso_core::symbol::CutoffShape::Bump,
                CutoffShapeName::FlatBump => tiso_core::symbol::CutoffShape::FlatBump,
            },
            half_width: self.half_width,
            digamma: self.digamma,
        };
        c.validate().map_err(|e| TisoError::config(path, e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Convex foliation `x`; the artificial boundary is `{x = 0}`.
    pub foliation: FieldSpec,
    /// Points with `x > 0`.
    pub interior_points: Vec<V3>,
    /// Points with `x = 0`.
    pub boundary_points: Vec<V3>,
    pub waves: Vec<WaveName>,
    pub params: Vec<ParamName>,
    /// Size of the Fibonacci direction grid.
    pub grid_size: usize,
    pub circle_nodes: usize,
    /// `(λ̂, θ)` nodes of the interpolation tables.
    pub table: [usize; 2],
    pub cutoff: CutoffConfig,
    /// Values below `tol · grid max` are degenerate.
    pub tol: f64,
    /// Allowed angular radius of the degenerate set around its expected direction.
    pub radius_deg: f64,
    /// Smallest `|value| / grid max` required where the symbol is claimed elliptic.
    pub margin: f64,
    /// Transversal directions of the vanishing-rate fits.
    pub fit_directions: usize,
    /// The fit ladder is `ε = 2^{-k}` for `k` in this range.
    pub fit_ladder: [i32; 2],
    pub fit_exponent_tol: f64,
    pub boundary_digammas: Vec<f64>,
    /// Point whose full symbol table goes to `symbol_values.csv`.
    pub values_point: Option<usize>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            foliation: default_foliation(),
            interior_points: default_points(&[0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2]),
            boundary_points: default_points(&[0.0; 10]),
            waves: vec![WaveName::QP],
            params: vec![ParamName::A11, ParamName::A33, ParamName::E2],
            grid_size: tiso_core::symbol::ONE_DEGREE_GRID,
            circle_nodes: tiso_core::symbol::CIRCLE_NODES,
            table: [33, 256],
            cutoff: CutoffConfig::default(),
            tol: 1e-3,
            radius_deg: 3.0,
            margin: 1e-2,
            fit_directions: 8,
            fit_ladder: [4, 9],
            fit_exponent_tol: 0.1,
            boundary_digammas: vec![0.5, 1.0, 2.0, 4.0],
            values_point: Some(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnknownsConfig {
    Single { param: ParamName },
    /// The truth perturbs `second` by `ratio` times the bump.
    Pair { first: ParamName, second: ParamName, ratio: f64 },
    /// `a33 = F(a11)`, `E² = H(a11)` with slopes `F′`, `H′`.
    Functional { f_prime: f64, h_prime: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisName {
    Trilinear,
    CubicBSpline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerName {
    Identity,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvertConfig {
    /// Reference medium `ν̃`; its domain must contain the ball below.
    pub reference: MaterialSpec,
    /// Perturbation shape added to the unknown parameters to make `ν`.
    pub bump: FieldSpec,
    pub unknowns: UnknownsConfig,
    /// Waves whose data are used; empty means qP, plus qSV for functional unknowns.
    pub waves: Vec<WaveName>,
    /// The medium is the ball of this radius around `center`.
    pub center: V3,
    pub radius: f64,
    /// Radius of the artificial boundary `{x = 0}`; the slab is between it and the surface.
    pub boundary_radius: f64,
    /// Lateral half-size of the recovery patch (in the tangent coordinates).
    pub half_lateral: f64,
    pub lateral_spacing: f64,
    pub depth_nodes: usize,
    pub basis: BasisName,
    /// Turning-point lattice per side, turning depths and directions per point.
    pub fan_lateral: usize,
    pub fan_depths: usize,
    pub fan_directions: usize,
    pub lambda_hat: Vec<f64>,
    pub digamma: f64,
    pub gl_order: usize,
    pub panels_per_cell: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub noise_floor: f64,
    pub tau: f64,
    pub ladder: usize,
    pub plateau: f64,
    pub regularizer: RegularizerName,
    pub ode: OdeConfig,
    /// Pass threshold on the relative L² error over the slab.
    pub max_error: f64,
    /// Also recover from data of identical media.
    pub null_test: bool,
    pub null_threshold: f64,
}

impl Default for InvertConfig {
    fn default() -> Self {
        let mut reference = MaterialSpec::homogeneous(M0, [0.4, 0.1, 1.0], 1.1);
        reference.coupling = crate::model::CouplingKind::E2;
        InvertConfig {
            reference,
            bump: FieldSpec::Gaussian { amplitude: 0.1, center: [0.0, 0.0, 0.89], widths: [0.1, 0.1, 0.035] },
            unknowns: UnknownsConfig::Single { param: ParamName::A11 },
            waves: Vec::new(),
            center: [0.0; 3],
            radius: 1.0,
            boundary_radius: 0.8,
            half_lateral: 0.35,
            lateral_spacing: 0.05,
            depth_nodes: 11,
            basis: BasisName::CubicBSpline,
            fan_lateral: 15,
            fan_depths: 8,
            fan_directions: 6,
            lambda_hat: vec![0.0],
            digamma: 1.0,
            gl_order: 4,
            panels_per_cell: 2.0,
            max_iter: 600,
            tol: 1e-6,
            noise_floor: 1e-6,
            tau: 1.2,
            ladder: 16,
            plateau: 0.01,
            regularizer: RegularizerName::Gradient,
            ode: OdeConfig::default(),
            max_error: 0.05,
            null_test: true,
            null_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMetricName {
    Background,
    Qsh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QshConfig {
    /// Random points for the extraction round trip.
    pub samples: usize,
    pub identity_tol: f64,
    pub origin: V3,
    pub e1: V3,
    pub e2: V3,
    pub u: [f64; 2],
    pub v: [f64; 2],
    pub n_u: usize,
    pub n_v: usize,
    pub levels: Vec<f64>,
    pub flow: FlowMetricName,
    pub ode: OdeConfig,
    pub residual_tol: f64,
}

impl Default for QshConfig {
    fn default() -> Self {
        QshConfig {
            samples: 1000,
            identity_tol: 1e-9,
            origin: [0.0; 3],
            e1: [1.0, 0.0, 0.0],
            e2: [0.0, 1.0, 0.0],
            u: [-0.4, 0.4],
            v: [-0.4, 0.4],
            n_u: 5,
            n_v: 5,
            levels: vec![-0.3, 0.0, 0.3],
            flow: FlowMetricName::Background,
            ode: OdeConfig { rtol: 1e-12, atol: 1e-14, ..OdeConfig::default() },
            residual_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Criteria to run, numbered 1 to 11.
    pub criteria: Vec<u8>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { criteria: (1..=11).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Samples per wave of the slowness sections, endpoints included.
    pub section_samples: usize,
    /// Degeneracy polar data: symbol of `param` on a great circle of scattering
    /// covectors through the expected degenerate direction.
    pub polar_param: ParamName,
    pub polar_wave: WaveName,
    pub polar_point: V3,
    pub polar_samples: usize,
    /// Audit report to flatten into `symbol_vs_direction.csv`.
    pub audit_report: Option<PathBuf>,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            section_samples: 361,
            polar_param: ParamName::E2,
            polar_wave: WaveName::QP,
            polar_point: default_points(&[0.1])[0],
            polar_samples: 361,
            audit_report: None,
        }
    }
}

impl ExperimentConfig {
    /// Parse a JSON config; missing entries take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| TisoError::config(json_error_path(text, &e), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TisoError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Best-effort dotted path of the entry a serde error points at.
fn json_error_path(text: &str, e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // unknown or missing fields name themselves
    for key in ["unknown field `", "missing field `"] {
        if let Some(i) = msg.find(key) {
            let rest = &msg[i + key.len()..];
            if let Some(j) = rest.find('`') {
                return rest[..j].to_string();
            }
        }
    }
    // otherwise take the last key before the error position
    let line = e.line();
    let col = e.column();
    let mut offset = 0;
    for (k, l) in text.lines().enumerate() {
        if k + 1 == line {
            offset += col.min(l.len());
            break;
        }
        offset += l.len() + 1;
    }
    let head = &text[..offset.min(text.len())];
    let mut key = None;
    let bytes = head.as_bytes();
    let mut i = head.len();
    while i > 0 {
        i -= 1;
        if bytes[i] == b':' {
            let before = head[..i].trim_end();
            if let Some(stripped) = before.strip_suffix('"') {
                if let Some(start) = stripped.rfind('"') {
                    key = Some(stripped[start + 1..].to_string());
                    break;
                }
            }
        }
    }
    key.unwrap_or_else(|| "config".to_string())
}
