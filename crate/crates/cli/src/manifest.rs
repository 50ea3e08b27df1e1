use crate::error::{CliError, CliResult};
use helmstab::fields::{ContrastField, ContrastSpec, Grid};
use helmstab::geom::{admissibility, AprioriBounds, PolyCone, Polytope};
use helmstab::solver::SphereLayout;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Grid covers `[−half, half]^n`.
    pub half: f64,
    /// Cells per axis.
    pub n: usize,
}

impl GridSpec {
    pub fn build(&self, dim: usize) -> CliResult<Grid> {
        Ok(Grid::centered(dim, self.half, self.n)?)
    }
}

/// One forward problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub label: String,
    pub dimension: usize,
    pub polytope: Polytope,
    pub contrast: ContrastSpec,
    pub k: f64,
    pub omega: Vec<f64>,
    pub grid: GridSpec,
    #[serde(rename = "R")]
    pub big_r: f64,
    /// Far-field sample count; `m` angles in 2D, about `m` nodes in 3D.
    #[serde(default = "default_far_field")]
    pub far_field: usize,
}

fn default_far_field() -> usize {
    64
}

impl Scene {
    /// Admissibility, containment in `B_R` and in the grid, then the contrast.
    pub fn validate(&self) -> CliResult<ContrastField> {
        let bad = |msg: String| Err(CliError::Scene { label: self.label.clone(), message: msg });
        if self.label.is_empty() || self.label.contains(['/', '\\']) {
            return bad("label must be a non-empty file-name fragment".into());
        }
        if self.polytope.dim() != self.dimension || self.omega.len() != self.dimension {
            return bad(format!("dimension {} does not match the polytope or ω", self.dimension));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return bad(format!("wavenumber {} must be positive", self.k));
        }
        let norm: f64 = self.omega.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return bad(format!("ω has length {norm}, expected 1"));
        }
        let adm = admissibility(&self.polytope, &AprioriBounds { r: self.big_r, ..AprioriBounds::default() });
        if !adm.ok {
            return bad(adm.violations.join("; "));
        }
        if self.polytope.vertices().iter().flatten().any(|c| c.abs() >= self.grid.half) {
            return bad(format!("polytope leaves the grid [−{0}, {0}]", self.grid.half));
        }
        if self.far_field < 4 {
            return bad("far field needs at least 4 samples".into());
        }
        Ok(ContrastField::new(self.polytope.clone(), self.contrast.clone())?)
    }

    pub fn layout(&self) -> SphereLayout {
        SphereLayout::default_for(self.dimension, self.far_field)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative GMRES residual of the forward solves.
    pub gmres: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HankelSpec {
    pub z1: f64,
    pub z2: f64,
    pub nu_max: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSpec {
    pub k: f64,
    pub dimension: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, rename = "R_m")]
    pub r_m: Option<f64>,
    /// Defaults to `[kR_m, 4kR_m]`, orders up to 40, 64 samples.
    #[serde(default)]
    pub hankel: Option<HankelSpec>,
}

fn default_trials() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Offset,
    Shrink,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportSpec {
    pub dimension: usize,
    /// Side of the reference cube `[−a/2, a/2]^n`.
    pub side: f64,
    pub contrast: f64,
    pub params: Vec<f64>,
    #[serde(default = "default_sweep")]
    pub kind: SweepKind,
}

fn default_sweep() -> SweepKind {
    SweepKind::Offset
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornerSceneSpec {
    pub label: String,
    pub polytope: Polytope,
    pub contrast: ContrastSpec,
    /// Index of the probed vertex.
    pub vertex: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornerSpec {
    /// Constant contrasts on the unit square, probed at a corner.
    #[serde(default)]
    pub phis: Vec<f64>,
    #[serde(default)]
    pub scenes: Vec<CornerSceneSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSweepSpec {
    pub polytope: Polytope,
    pub contrast: ContrastSpec,
    /// Spherical cone carrying the CGO direction.
    pub cone: PolyCone,
    pub taus: Vec<f64>,
    pub grid: GridSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySpec {
    pub k: f64,
    pub omega: Vec<f64>,
    pub grid: GridSpec,
    #[serde(default = "default_far_field")]
    pub far_field: usize,
    #[serde(default)]
    pub support: Option<SupportSpec>,
    #[serde(default)]
    pub corner: Option<CornerSpec>,
    #[serde(default)]
    pub tau_sweep: Option<TauSweepSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub pairs_2d: usize,
    pub pairs_3d: usize,
    pub cone_cases: usize,
    pub rho_samples: usize,
    pub sphere_trials: usize,
    pub orthogonality: bool,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            pairs_2d: 1000,
            pairs_3d: 100,
            cone_cases: 200,
            rho_samples: 10_000,
            sphere_trials: 100,
            orthogonality: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    #[serde(default)]
    pub command: Option<String>,
    /// Mandatory once command-line overrides are merged.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub scenes: Vec<Scene>,
    #[serde(default)]
    pub calibrate: Option<CalibrateSpec>,
    #[serde(default)]
    pub stability: Option<StabilitySpec>,
    #[serde(default)]
    pub verify: Option<VerifySpec>,
}

impl RunManifest {
    pub fn empty(command: &str) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            command: Some(command.to_string()),
            seed: None,
            calibration: None,
            output: None,
            tolerances: Tolerances::default(),
            scenes: vec![],
            calibrate: None,
            stability: None,
            verify: None,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(CliError::Manifest(format!(
                "schema version {} not supported (expected {SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::Manifest("a seed is required (manifest \"seed\" or --seed)".into()))
    }

    /// SHA-256 over the effective manifest. The output directory is left out
    /// and the calibration path is replaced by a digest of its contents, so
    /// moving files around does not change provenance.
    pub fn hash(&self) -> CliResult<String> {
        let mut m = self.clone();
        m.output = None;
        if let Some(p) = &m.calibration {
            let bytes = std::fs::read(p).map_err(|e| CliError::Io { path: p.clone(), source: e })?;
            m.calibration = Some(PathBuf::from(format!("sha256:{}", hex::encode(Sha256::digest(&bytes)))));
        }
        let text = serde_json::to_string(&m).map_err(|e| CliError::Manifest(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}
