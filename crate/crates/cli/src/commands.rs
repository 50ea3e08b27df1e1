use crate::error::{CliError, CliResult};
use crate::manifest::{CalibrateSpec, HankelSpec, RunManifest, Scene, StabilitySpec, SweepKind, VerifySpec};
use crate::output::{OutputDir, DEFAULT_ROOT};
use crate::verify::{self, SuiteReport};
use helmstab::cgo::{build_direction, tau_sweep, write_sweep_csv};
use helmstab::fields::ContrastField;
use helmstab::geom::ConeKind;
use helmstab::krylov::GmresOptions;
use helmstab::rellich::{calibrate, default_r_m, Calibration};
use helmstab::solver::{optical_theorem_defect, solve_forward, SolverOptions, SphereLayout};
use helmstab::specfun::certify_hankel_bounds;
use helmstab::stability::{
    contrast_ladder, offset_sweep, run_corner_lower_bound_experiment, run_support_stability_experiment, shrink_sweep,
    support_plot_script, tau_sweep_plot_script, write_corner_csv, write_support_csv, CornerScene, ExperimentSetup,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};

pub const OUT_ENV: &str = "HELMSTAB_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Calibrate,
    Verify,
    Stability,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Calibrate => "calibrate",
            Command::Verify => "verify",
            Command::Stability => "stability",
        }
    }
}

/// Command-line values that take precedence over the manifest.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scene: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub calibration: Option<PathBuf>,
    pub tol: Option<f64>,
    pub threads: Option<usize>,
    pub force: bool,
}

/// What a command produced.
#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub command: String,
    pub manifest_hash: String,
    pub files: Vec<PathBuf>,
    pub passed: bool,
}

/// Loads the manifest, merges overrides and checks it against the command.
pub fn resolve(cmd: Command, ov: &Overrides) -> CliResult<RunManifest> {
    let mut m = match &ov.scene {
        Some(p) => RunManifest::load(p)?,
        None => RunManifest::empty(cmd.name()),
    };
    match m.command.as_deref() {
        Some(c) if c != cmd.name() => {
            return Err(CliError::Manifest(format!("manifest is for `{c}`, not `{}`", cmd.name())));
        }
        _ => m.command = Some(cmd.name().into()),
    }
    if ov.seed.is_some() {
        m.seed = ov.seed;
    }
    if ov.calibration.is_some() {
        m.calibration = ov.calibration.clone();
    }
    if let Some(t) = ov.tol {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::Manifest(format!("tolerance {t} must lie in (0, 1)")));
        }
        m.tolerances.gmres = Some(t);
    }
    m.seed()?;
    // Relative paths in the manifest are taken from its own directory.
    if let (Some(cal), Some(scene)) = (&m.calibration, &ov.scene) {
        if cal.is_relative() && ov.calibration.is_none() {
            m.calibration = Some(scene.parent().unwrap_or(Path::new(".")).join(cal));
        }
    }
    if let Some(p) = &m.calibration {
        if !p.exists() {
            return Err(CliError::Manifest(format!("calibration file {} not found", p.display())));
        }
    }
    Ok(m)
}

fn output_root(m: &RunManifest, ov: &Overrides) -> PathBuf {
    ov.out
        .clone()
        .or_else(|| m.output.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
}

pub fn run(cmd: Command, ov: &Overrides) -> CliResult<Outcome> {
    let m = resolve(cmd, ov)?;
    let out = OutputDir::create(&output_root(&m, ov), m.hash()?, ov.force)?;
    let body = || match cmd {
        Command::Solve => cmd_solve(&m, &out),
        Command::Calibrate => cmd_calibrate(&m, &out),
        Command::Verify => cmd_verify(&m, &out),
        Command::Stability => cmd_stability(&m, &out),
    };
    let (files, passed) = match ov.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| CliError::Manifest(format!("thread pool: {e}")))?
            .install(body)?,
        None => body()?,
    };
    let outcome = Outcome { command: cmd.name().into(), manifest_hash: out.hash.clone(), files, passed };
    if !passed {
        return Err(CliError::Verification(format!(
            "see {}",
            outcome.files.last().map(|p| p.display().to_string()).unwrap_or_default()
        )));
    }
    Ok(outcome)
}

fn gmres(m: &RunManifest) -> GmresOptions {
    let mut g = GmresOptions::default();
    if let Some(t) = m.tolerances.gmres {
        g.tol = t;
    }
    if let Some(it) = m.tolerances.max_iter {
        g.max_iter = it;
    }
    g
}

fn load_calibration(m: &RunManifest, k: f64, dim: usize) -> CliResult<Calibration> {
    let cal = match &m.calibration {
        Some(p) => Calibration::load(p)?,
        None => calibrate(k, dim, 100, m.seed()?, None)?,
    };
    if (cal.k - k).abs() > 1e-12 * k || cal.dim != dim {
        return Err(CliError::Manifest(format!(
            "calibration is for k = {}, dim {}; the run needs k = {k}, dim {dim}",
            cal.k, cal.dim
        )));
    }
    Ok(cal)
}

// solve

fn cmd_solve(m: &RunManifest, out: &OutputDir) -> CliResult<(Vec<PathBuf>, bool)> {
    if m.scenes.is_empty() {
        return Err(CliError::Manifest("`solve` needs at least one scene".into()));
    }
    let fields: Vec<ContrastField> = m.scenes.iter().map(Scene::validate).collect::<CliResult<_>>()?;
    let mut labels: Vec<&str> = m.scenes.iter().map(|s| s.label.as_str()).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Manifest("scene labels must be unique".into()));
    }
    let names: Vec<String> =
        m.scenes.iter().flat_map(|s| [format!("{}.farfield.csv", s.label), format!("{}.solve.json", s.label)]).collect();
    out.reserve(&names)?;
    let g = gmres(m);
    let sols: Vec<_> = m
        .scenes
        .par_iter()
        .zip(&fields)
        .map(|(s, v)| {
            let opts = SolverOptions { gmres: g, far_field: Some(s.layout()) };
            let grid = s.grid.build(s.dimension)?;
            solve_forward(v, s.k, &s.omega, &grid, &opts).map_err(CliError::from)
        })
        .collect::<CliResult<_>>()?;
    let mut files = Vec::new();
    for (s, sol) in m.scenes.iter().zip(&sols) {
        let csv = out.scratch(&s.label);
        sol.far_field.write_csv(&csv)?;
        files.push(out.adopt(&format!("{}.farfield.csv", s.label), &csv)?);
        let summary = json!({
            "scene": s,
            "iterations": sol.iterations,
            "gmres_residual": sol.residual,
            "ls_residual": sol.ls_residual()?,
            "optical_theorem_defect": optical_theorem_defect(sol, s.layout()),
            "far_field_l2": sol.far_field.l2_norm(),
            "far_field_max": sol.far_field.max_abs(),
            "samples": sol.far_field.values.len(),
        });
        files.push(out.json(&format!("{}.solve.json", s.label), &summary)?);
    }
    Ok((files, true))
}

// calibrate

fn calibrate_spec(m: &RunManifest) -> CliResult<CalibrateSpec> {
    if let Some(c) = &m.calibrate {
        return Ok(c.clone());
    }
    let s = m
        .scenes
        .first()
        .ok_or_else(|| CliError::Manifest("`calibrate` needs a \"calibrate\" block or a scene".into()))?;
    Ok(CalibrateSpec { k: s.k, dimension: s.dimension, trials: 100, r_m: None, hankel: None })
}

fn cmd_calibrate(m: &RunManifest, out: &OutputDir) -> CliResult<(Vec<PathBuf>, bool)> {
    let spec = calibrate_spec(m)?;
    out.reserve(&["calibration.json".into(), "hankel_certificate.json".into()])?;
    let cal = calibrate(spec.k, spec.dimension, spec.trials, m.seed()?, spec.r_m)?;
    let r_m = spec.r_m.unwrap_or_else(|| default_r_m(spec.k));
    let h = spec.hankel.unwrap_or(HankelSpec { z1: spec.k * r_m, z2: 4.0 * spec.k * r_m, nu_max: 40.0, samples: 64 });
    let cert = certify_hankel_bounds(h.z1, h.z2, h.nu_max, h.samples)?;
    let files = vec![out.json("calibration.json", &cal)?, out.json("hankel_certificate.json", &cert)?];
    Ok((files, true))
}

// verify

fn cmd_verify(m: &RunManifest, out: &OutputDir) -> CliResult<(Vec<PathBuf>, bool)> {
    let spec = m.verify.clone().unwrap_or_default();
    let seed = m.seed()?;
    out.reserve(&["verify.json".into()])?;
    let cal = match &m.calibration {
        Some(p) => Calibration::load(p)?,
        None => calibrate(2.0, 2, 100, seed, None)?,
    };
    let suites = run_suites(&spec, &cal, seed)?;
    let passed = suites.iter().all(|s| s.passed);
    for s in &suites {
        println!("{:<16} {}", s.suite, if s.passed { "pass" } else { "FAIL" });
    }
    let report = json!({"passed": passed, "calibration": cal, "suites": suites});
    Ok((vec![out.json("verify.json", &report)?], passed))
}

pub fn run_suites(spec: &VerifySpec, cal: &Calibration, seed: u64) -> CliResult<Vec<SuiteReport>> {
    let mut suites = vec![
        verify::geometry_suite(spec.pairs_2d, spec.pairs_3d, seed)?,
        verify::cone_suite(spec.cone_cases, spec.rho_samples, seed)?,
    ];
    if spec.orthogonality {
        suites.push(verify::orthogonality_suite(seed)?.0);
    }
    suites.push(verify::three_spheres_suite(cal, spec.sphere_trials, seed)?);
    Ok(suites)
}

// stability

fn setup(spec: &StabilitySpec, dim: usize, m: &RunManifest) -> CliResult<ExperimentSetup> {
    if spec.omega.len() != dim {
        return Err(CliError::Manifest(format!("ω has {} components, the sweep is {dim}D", spec.omega.len())));
    }
    let grid = spec.grid.build(dim)?;
    let layout = SphereLayout::default_for(dim, spec.far_field);
    let mut s = ExperimentSetup::new(spec.k, spec.omega.clone(), grid, layout);
    s.gmres = gmres(m);
    s.faddeev.seed = m.seed()?;
    Ok(s)
}

fn corner_plot_script(csv: &str, png: &str) -> String {
    format!(
        "set terminal pngcairo size 800,600\n\
         set output '{png}'\n\
         set datafile separator ','\n\
         set logscale xy\n\
         set xlabel 'corner contrast'\n\
         set ylabel 'far-field norm'\n\
         plot '{csv}' using 2:4 with linespoints title 'far field', \\\n\
         \x20    '{csv}' using 2:5 with lines title 'noise floor'\n"
    )
}

fn cmd_stability(m: &RunManifest, out: &OutputDir) -> CliResult<(Vec<PathBuf>, bool)> {
    let spec = m.stability.as_ref().ok_or_else(|| CliError::Manifest("`stability` needs a \"stability\" block".into()))?;
    if spec.support.is_none() && spec.corner.is_none() && spec.tau_sweep.is_none() {
        return Err(CliError::Manifest("the stability block has nothing to run".into()));
    }
    let mut names = Vec::new();
    for (on, stem) in [(spec.support.is_some(), "support"), (spec.corner.is_some(), "corner"), (spec.tau_sweep.is_some(), "tau_sweep")]
    {
        if on {
            names.extend([format!("{stem}.json"), format!("{stem}.csv"), format!("{stem}.gp")]);
        }
    }
    out.reserve(&names)?;
    let mut files = Vec::new();

    if let Some(sup) = &spec.support {
        let pairs = match sup.kind {
            SweepKind::Offset => offset_sweep(sup.dimension, sup.side, sup.contrast, &sup.params)?,
            SweepKind::Shrink => shrink_sweep(sup.dimension, sup.side, sup.contrast, &sup.params)?,
        };
        let setup = setup(spec, sup.dimension, m)?;
        let cal = load_calibration(m, spec.k, sup.dimension)?;
        let ex = run_support_stability_experiment(&pairs, &setup, &cal);
        let scratch = out.scratch("support.csv");
        write_support_csv(&ex.records, &scratch)?;
        files.push(out.adopt("support.csv", &scratch)?);
        files.push(out.json("support.json", &json!({"calibration": cal, "experiment": ex}))?);
        files.push(out.text("support.gp", &support_plot_script("support.csv", "support.png"))?);
    }

    if let Some(cs) = &spec.corner {
        let mut scenes = contrast_ladder(&cs.phis)?;
        for s in &cs.scenes {
            scenes.push(CornerScene {
                label: s.label.clone(),
                contrast: ContrastField::new(s.polytope.clone(), s.contrast.clone())?,
                vertex: s.vertex,
            });
        }
        let dim = scenes.first().map_or(2, |s| s.contrast.dim());
        let ex = run_corner_lower_bound_experiment(&scenes, &setup(spec, dim, m)?)?;
        let scratch = out.scratch("corner.csv");
        write_corner_csv(&ex.records, &scratch)?;
        files.push(out.adopt("corner.csv", &scratch)?);
        files.push(out.json("corner.json", &ex)?);
        files.push(out.text("corner.gp", &corner_plot_script("corner.csv", "corner.png"))?);
    }

    if let Some(ts) = &spec.tau_sweep {
        if ts.cone.kind != ConeKind::Spherical || ts.taus.is_empty() {
            return Err(CliError::Manifest("the τ sweep needs a spherical cone and at least one τ".into()));
        }
        let v = ContrastField::new(ts.polytope.clone(), ts.contrast.clone())?;
        let grid = ts.grid.build(v.dim())?;
        let dir = build_direction(&ts.cone, spec.k, ts.taus[0])?;
        let mut opts = helmstab::cgo::FaddeevOptions::default();
        opts.seed = m.seed()?;
        let rows = tau_sweep(&v, spec.k, &dir, &grid, &ts.taus, &opts)?;
        let scratch = out.scratch("tau_sweep.csv");
        write_sweep_csv(&rows, &scratch)?;
        files.push(out.adopt("tau_sweep.csv", &scratch)?);
        files.push(out.json("tau_sweep.json", &json!({ "rows": rows }))?);
        files.push(out.text("tau_sweep.gp", &tau_sweep_plot_script("tau_sweep.csv", "tau_sweep.png"))?);
    }
    Ok((files, true))
}
