//! Command implementations behind the `focusgrav` binary.
//!
//! Each command reads a [`RunConfig`] (after flag overrides), does its work and
//! writes plain-text outputs into the run directory, which is locked for the
//! duration of the command.

use std::fs::{self, File, TryLockError};
use std::path::{Path, PathBuf};

use focusgrav::focusing::{Inversion, StopReason};
use focusgrav::forward::{assemble_sensitivity, forward};
use focusgrav::io::formats::{
    extract_section, read_model, read_observations, write_model, write_observations, write_report,
    write_section,
};
use focusgrav::io::{ObservationFile, ReportRow, RunConfig, RunLog, Section};
use focusgrav::param::MethodKind;
use focusgrav::synth::{add_noise, make_model, noise_sigma, NoiseSpec, Study, SurveyData};
use focusgrav::{Error, Result};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

/// Input errors (files, config, mismatched data) map to 2, everything the
/// numerics raise maps to 3.
pub fn exit_code(err: &Error) -> u8 {
    match err.root_cause() {
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Spec(_)
        | Error::InvalidMesh(_)
        | Error::DimensionMismatch { .. }
        | Error::ZeroSigma { .. }
        | Error::Domain(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

/// Command-line values that replace the corresponding config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<MethodKind>,
    pub gamma: Option<f64>,
    pub max_iters: Option<usize>,
    pub alpha_tol: Option<f64>,
    pub upre_grid: Option<usize>,
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub level: Option<u8>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub copies: Option<usize>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub exact: Option<PathBuf>,
    pub sections: Vec<Section>,
}

fn flag_err(flag: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: format!("--{flag}"),
        line: None,
        msg: msg.into(),
    }
}

fn positive(flag: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(flag_err(flag, format!("must be finite and > 0 (got {v})")))
    }
}

pub fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) -> Result<()> {
    let s = &mut cfg.solver;
    if let Some(m) = o.method {
        s.method = m;
    }
    if let Some(g) = o.gamma {
        s.gamma = positive("gamma", g)?;
    }
    if let Some(k) = o.max_iters {
        if k == 0 {
            return Err(flag_err("max-iters", "must be >= 1"));
        }
        s.max_iters = k;
    }
    if let Some(t) = o.alpha_tol {
        s.alpha_tol = positive("alpha-tol", t)?;
    }
    if let Some(g) = o.upre_grid {
        if g < 3 {
            return Err(flag_err("upre-grid", "must be >= 3"));
        }
        s.upre_grid = g;
    }
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    if let Some(b) = o.beta {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(flag_err("beta", format!("must be >= 0 (got {b})")));
        }
        cfg.weights.beta = b;
    }
    if let Some(e) = o.epsilon {
        cfg.weights.epsilon = positive("epsilon", e)?;
    }

    let noise_given = o.level.is_some() || o.eta1.is_some() || o.eta2.is_some() || o.copies.is_some();
    if noise_given {
        let mut noise = cfg.noise;
        if let Some(level) = o.level {
            let spec = NoiseSpec::level(level, 1, 0).map_err(|e| flag_err("level", e.to_string()))?;
            let n = noise.get_or_insert(focusgrav::io::NoiseConfig { eta1: 0.0, eta2: 0.0, copies: 10 });
            n.eta1 = spec.eta1;
            n.eta2 = spec.eta2;
        }
        if o.eta1.is_some() || o.eta2.is_some() {
            let n = match noise.as_mut() {
                Some(n) => n,
                None if o.eta1.is_some() && o.eta2.is_some() => {
                    noise.insert(focusgrav::io::NoiseConfig { eta1: 0.0, eta2: 0.0, copies: 10 })
                }
                None => return Err(flag_err("eta1", "give both --eta1 and --eta2, or a noise level")),
            };
            for (flag, v, slot) in [("eta1", o.eta1, &mut n.eta1), ("eta2", o.eta2, &mut n.eta2)] {
                if let Some(v) = v {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(flag_err(flag, format!("must be >= 0 (got {v})")));
                    }
                    *slot = v;
                }
            }
        }
        if let Some(c) = o.copies {
            let n = noise
                .as_mut()
                .ok_or_else(|| flag_err("copies", "no noise level or coefficients configured"))?;
            if c == 0 {
                return Err(flag_err("copies", "must be >= 1"));
            }
            n.copies = c;
        }
        if let Some(n) = noise {
            if n.eta1 == 0.0 && n.eta2 == 0.0 {
                return Err(flag_err("eta1", "eta1 and eta2 cannot both be zero"));
            }
        }
        cfg.noise = noise;
    }

    let p = &mut cfg.paths;
    for (slot, v) in [
        (&mut p.output_dir, &o.out),
        (&mut p.model, &o.model),
        (&mut p.observations, &o.observations),
        (&mut p.prior, &o.prior),
        (&mut p.exact_model, &o.exact),
    ] {
        if v.is_some() {
            slot.clone_from(v);
        }
    }
    if !o.sections.is_empty() {
        let mesh = cfg.require_mesh()?;
        for s in &o.sections {
            s.layer(&mesh).map_err(|e| flag_err("section", e.to_string()))?;
        }
        cfg.sections.extend(o.sections.iter().copied());
    }
    Ok(())
}

/// An output directory held exclusively by one run.
pub struct RunDir {
    pub path: PathBuf,
    _lock: File,
}

impl RunDir {
    pub fn acquire(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let lock_path = path.join(".focusgrav.lock");
        let lock = File::create(&lock_path).map_err(|e| Error::Io {
            path: lock_path.clone(),
            source: e,
        })?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => {
                return Err(Error::Config {
                    key: "paths.output_dir".into(),
                    line: None,
                    msg: format!("{} is in use by another run", path.display()),
                })
            }
            Err(TryLockError::Error(e)) => return Err(Error::Io { path: lock_path, source: e }),
        }
        Ok(Self {
            path: path.to_path_buf(),
            _lock: lock,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

fn run_dir(cfg: &RunConfig) -> Result<RunDir> {
    RunDir::acquire(cfg.paths.output_dir.as_deref().unwrap_or(Path::new(".")))
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::Config {
        key: format!("paths.{key}"),
        line: None,
        msg: format!("required (or pass --{flag})"),
    })
}

/// Writes the noise-free gravity of the configured model (the model file, or
/// else the synthetic body) to `observations.txt`.
pub fn cmd_forward(cfg: &RunConfig) -> Result<PathBuf> {
    let mesh = cfg.require_mesh()?;
    let model = match (&cfg.paths.model, &cfg.synthetic) {
        (Some(p), _) => read_model(p, &mesh)?,
        (None, Some(spec)) => make_model(spec)?,
        (None, None) => {
            return Err(Error::Config {
                key: "paths.model".into(),
                line: None,
                msg: "required unless a [synthetic] block is given (or pass --model)".into(),
            })
        }
    };
    let dir = run_dir(cfg)?;
    let stations = mesh.stations();
    let sens = assemble_sensitivity(&mesh, &stations)?;
    let g = forward(&sens, &model)?;
    let out = dir.file("observations.txt");
    write_observations(&out, &ObservationFile::noise_free(stations, g))?;
    log::info!("wrote {}", out.display());
    Ok(out)
}

fn copy_name(c: usize, copies: usize) -> String {
    let width = copies.to_string().len().max(2);
    format!("obs_{:0width$}.txt", c + 1)
}

/// Writes the synthetic model and one noisy observation file per copy.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.require_synthetic()?;
    let noise = cfg.require_noise()?;
    let dir = run_dir(cfg)?;
    let model = make_model(spec)?;
    let stations = spec.mesh.stations();
    let sens = assemble_sensitivity(&spec.mesh, &stations)?;
    let d = forward(&sens, &model)?;
    let (surveys, _) = add_noise(&d, &stations, &noise)?;

    let mut written = vec![dir.file("model.txt")];
    write_model(&written[0], &spec.mesh, &model)?;
    for (c, s) in surveys.iter().enumerate() {
        let p = dir.file(&copy_name(c, surveys.len()));
        write_observations(&p, &ObservationFile::from_survey(s))?;
        written.push(p);
    }
    log::info!("wrote {} files to {}", written.len(), dir.path.display());
    Ok(written)
}

/// Summary of a finished inversion.
#[derive(Debug, Clone)]
pub struct InvertSummary {
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
    pub chi2: f64,
    pub threshold: f64,
    pub alpha: Option<f64>,
    pub relative_error: Option<f64>,
    pub files: Vec<PathBuf>,
}

fn survey_for(cfg: &RunConfig, obs: &ObservationFile) -> Result<SurveyData> {
    if !obs.noise_free {
        return obs.to_survey();
    }
    // noise-free data get the configured noise model as their sigma
    let noise = cfg.noise.ok_or_else(|| Error::Config {
        key: "noise".into(),
        line: None,
        msg: "noise-free observations need a [noise] block (or --level / --eta1 --eta2) to set sigma".into(),
    })?;
    let survey = SurveyData {
        stations: obs.stations.clone(),
        d_obs: obs.g.clone(),
        sigma: noise_sigma(&obs.g, noise.eta1, noise.eta2)?,
    };
    survey.validate()?;
    Ok(survey)
}

/// Inverts one observation file, writing the model, the per-iteration log
/// and the configured section slices.
pub fn cmd_invert(cfg: &RunConfig) -> Result<InvertSummary> {
    let mesh = cfg.require_mesh()?;
    let obs_path = required(&cfg.paths.observations, "observations", "obs")?;
    let obs = read_observations(obs_path)?;
    if obs.len() != mesh.n_stations() {
        return Err(Error::DimensionMismatch {
            what: "observation rows vs mesh stations",
            expected: mesh.n_stations(),
            found: obs.len(),
        });
    }
    let survey = survey_for(cfg, &obs)?;
    let prior = cfg.paths.prior.as_deref().map(|p| read_model(p, &mesh)).transpose()?;
    let exact = cfg.paths.exact_model.as_deref().map(|p| read_model(p, &mesh)).transpose()?;
    let icfg = cfg.inversion_config();
    let dir = run_dir(cfg)?;

    let sens = assemble_sensitivity(&mesh, &survey.stations)?;
    let log_path = dir.file("run.log");
    let mut log = RunLog::create(&log_path)?;
    log.comment(&format!(
        "method {} gamma {} beta {} epsilon {} max_iters {}\nobservations {}",
        icfg.method.kind.name(),
        icfg.gamma,
        icfg.weights.beta,
        icfg.weights.epsilon,
        icfg.max_iters,
        obs_path.display()
    ))?;

    let mut inv = Inversion::new(&sens, &mesh, &survey, &icfg);
    if let Some(p) = &prior {
        inv = inv.with_prior(p);
    }
    if let Some(e) = &exact {
        inv = inv.with_exact(e);
    }
    let mut log_err = None;
    let out = inv.run_with(|rec, _| {
        if log_err.is_none() {
            log_err = log.append(rec).err();
        }
        log::debug!("k={} alpha={:e} chi2={}", rec.k, rec.alpha, rec.chi2);
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let r = &out.report;
    log.comment(&format!(
        "initial chi2 {} threshold {} stop {}",
        r.initial_chi2,
        r.threshold,
        r.reason.name()
    ))?;

    let mut files = vec![dir.file("model.txt"), log_path];
    write_model(&files[0], &mesh, &out.model)?;
    for s in &cfg.sections {
        let p = dir.file(&s.file_name());
        write_section(&p, &extract_section(&mesh, &out.model, *s)?)?;
        files.push(p);
    }
    Ok(InvertSummary {
        iterations: r.iterations,
        converged: r.converged,
        reason: r.reason,
        chi2: out.state.chi2_computed,
        threshold: r.threshold,
        alpha: r.final_alpha(),
        relative_error: out.state.relative_error,
        files,
    })
}

/// Runs the synthetic study for each method and writes `report.txt`.
pub fn cmd_study(cfg: &RunConfig, methods: &[MethodKind]) -> Result<Vec<ReportRow>> {
    let spec = cfg.require_synthetic()?.clone();
    let noise = cfg.require_noise()?;
    let dir = run_dir(cfg)?;
    let study = Study::new(spec, noise)?;
    let mut rows = Vec::new();
    for &method in methods {
        let mut icfg = cfg.inversion_config();
        icfg.method.kind = method;
        let report = study.run(&icfg)?;
        let stalled = report.runs.iter().filter(|r| !r.converged).count();
        if stalled > 0 {
            log::warn!("{}: {stalled} of {} copies hit max_iters", method.name(), report.copies);
        }
        for r in &report.runs {
            log::info!(
                "{} copy {}: alpha1 {:?} alphaK {:e} relerr {:.4} K {}",
                method.name(),
                r.copy + 1,
                r.alpha_init,
                r.alpha_final,
                r.relative_error,
                r.iterations
            );
        }
        rows.push(ReportRow::from(&report));
    }
    write_report(&dir.file("report.txt"), &rows)?;
    Ok(rows)
}

/// Human-readable table with the aggregate columns as `mean(std)`.
pub fn render_report(rows: &[ReportRow]) -> String {
    let mut s = format!(
        "{:<6} {:>10} {:>5} {:>22} {:>18} {:>12} {:>7}\n",
        "method", "alpha1", "gamma", "alphaK", "relerr", "K", "copies"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<6} {:>10.1} {:>5} {:>22} {:>18} {:>12} {:>7}\n",
            r.method.name(),
            r.alpha_init,
            r.gamma,
            format!("{:.4e}({:.2e})", r.alpha_mean, r.alpha_std),
            format!("{:.4}({:.4})", r.relerr_mean, r.relerr_std),
            format!("{:.1}({:.1})", r.iters_mean, r.iters_std),
            r.copies - r.failed,
        ));
    }
    s
}
