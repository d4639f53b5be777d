//! Plain-text, whitespace-delimited file formats. `#` starts a comment.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! written file gives back the same values bit for bit.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::focusing::IterationRecord;
use crate::mesh::{DensityModel, Mesh, Station};
use crate::param::MethodKind;
use crate::synth::{StudyReport, SurveyData};

pub const OBSERVATION_HEADER: &str = "x y z g sigma";
pub const MODEL_HEADER: &str = "i j k x y z rho";
pub const LOG_HEADER: &str = "k alpha fidelity reg_term chi2 relative_error";
const NOISE_FREE_FLAG: &str = "noise-free";

/// Stations with gravity values, as stored on disk. A noise-free file carries
/// sigma 0 for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFile {
    pub stations: Vec<Station>,
    pub g: Vec<f64>,
    pub sigma: Vec<f64>,
    pub noise_free: bool,
}

impl ObservationFile {
    pub fn noise_free(stations: Vec<Station>, g: Vec<f64>) -> Self {
        let sigma = vec![0.0; g.len()];
        Self {
            stations,
            g,
            sigma,
            noise_free: true,
        }
    }

    pub fn from_survey(survey: &SurveyData) -> Self {
        Self {
            stations: survey.stations.clone(),
            g: survey.d_obs.clone(),
            sigma: survey.sigma.clone(),
            noise_free: false,
        }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// Survey using the stored sigma column, which must be positive.
    pub fn to_survey(&self) -> Result<SurveyData> {
        let survey = SurveyData {
            stations: self.stations.clone(),
            d_obs: self.g.clone(),
            sigma: self.sigma.clone(),
        };
        survey.validate()?;
        Ok(survey)
    }
}

/// Non-comment data lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let body = line.split('#').next().unwrap_or("").trim();
        (!body.is_empty()).then_some((i + 1, body))
    })
}

fn has_flag(text: &str, flag: &str) -> bool {
    text.lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .any(|c| c.trim() == flag)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Splits a data line into exactly `n` fields after checking the header.
struct Rows<'a> {
    path: &'a Path,
    lines: Vec<(usize, &'a str)>,
}

impl<'a> Rows<'a> {
    fn new(path: &'a Path, text: &'a str, header: &str) -> Result<Self> {
        let mut lines = data_lines(text);
        match lines.next() {
            Some((_, h)) if h.split_whitespace().eq(header.split_whitespace()) => {}
            Some((n, h)) => {
                return Err(parse_err(path, n, format!("expected header `{header}`, found `{h}`")))
            }
            None => return Err(parse_err(path, 1, format!("missing header `{header}`"))),
        }
        Ok(Self {
            path,
            lines: lines.collect(),
        })
    }

    fn fields<'b>(&self, line: usize, body: &'b str, n: usize) -> Result<Vec<&'b str>> {
        let f: Vec<&str> = body.split_whitespace().collect();
        if f.len() != n {
            return Err(parse_err(
                self.path,
                line,
                format!("expected {n} columns, found {}", f.len()),
            ));
        }
        Ok(f)
    }

    fn float(&self, line: usize, s: &str, what: &str) -> Result<f64> {
        let v: f64 = s
            .parse()
            .map_err(|e| parse_err(self.path, line, format!("{what}: `{s}`: {e}")))?;
        if !v.is_finite() {
            return Err(parse_err(self.path, line, format!("{what} is not finite")));
        }
        Ok(v)
    }

    fn int(&self, line: usize, s: &str, what: &str) -> Result<usize> {
        s.parse()
            .map_err(|e| parse_err(self.path, line, format!("{what}: `{s}`: {e}")))
    }
}

pub fn format_observations(obs: &ObservationFile) -> String {
    let mut s = String::new();
    if obs.noise_free {
        writeln!(s, "# {NOISE_FREE_FLAG}").unwrap();
    }
    writeln!(s, "{OBSERVATION_HEADER}").unwrap();
    for ((st, g), sigma) in obs.stations.iter().zip(&obs.g).zip(&obs.sigma) {
        writeln!(s, "{} {} {} {} {}", st.x, st.y, st.z, g, sigma).unwrap();
    }
    s
}

pub fn parse_observations(path: &Path, text: &str) -> Result<ObservationFile> {
    let rows = Rows::new(path, text, OBSERVATION_HEADER)?;
    let noise_free = has_flag(text, NOISE_FREE_FLAG);
    let mut obs = ObservationFile {
        stations: Vec::new(),
        g: Vec::new(),
        sigma: Vec::new(),
        noise_free,
    };
    for &(line, body) in &rows.lines {
        let f = rows.fields(line, body, 5)?;
        let x = rows.float(line, f[0], "x")?;
        let y = rows.float(line, f[1], "y")?;
        let z = rows.float(line, f[2], "z")?;
        let g = rows.float(line, f[3], "g")?;
        let sigma = rows.float(line, f[4], "sigma")?;
        if noise_free {
            if sigma != 0.0 {
                return Err(parse_err(path, line, "noise-free file must carry sigma 0"));
            }
        } else if !(sigma > 0.0) {
            return Err(parse_err(path, line, format!("sigma must be > 0 (got {sigma})")));
        }
        obs.stations.push(Station { x, y, z });
        obs.g.push(g);
        obs.sigma.push(sigma);
    }
    Ok(obs)
}

pub fn write_observations(path: &Path, obs: &ObservationFile) -> Result<()> {
    write_text(path, &format_observations(obs))
}

pub fn read_observations(path: &Path) -> Result<ObservationFile> {
    parse_observations(path, &read_text(path)?)
}

pub fn format_model(mesh: &Mesh, model: &DensityModel) -> Result<String> {
    if model.len() != mesh.n_cells() {
        return Err(Error::DimensionMismatch {
            what: "model file rows",
            expected: mesh.n_cells(),
            found: model.len(),
        });
    }
    let mut s = String::new();
    writeln!(s, "{MODEL_HEADER}").unwrap();
    for (c, rho) in model.values.iter().enumerate() {
        let (i, j, k) = mesh.cell_ijk(c);
        let [x, y, z] = mesh.cell_center(c);
        writeln!(s, "{i} {j} {k} {x} {y} {z} {rho}").unwrap();
    }
    Ok(s)
}

/// Rows must come in the mesh ordering; coordinates are checked against the
/// cell centers.
pub fn parse_model(path: &Path, text: &str, mesh: &Mesh) -> Result<DensityModel> {
    let rows = Rows::new(path, text, MODEL_HEADER)?;
    if rows.lines.len() != mesh.n_cells() {
        return Err(parse_err(
            path,
            rows.lines.last().map_or(1, |l| l.0),
            format!("expected {} cells, found {}", mesh.n_cells(), rows.lines.len()),
        ));
    }
    let tol = 1e-6 * mesh.delta;
    let mut values = Vec::with_capacity(mesh.n_cells());
    for (c, &(line, body)) in rows.lines.iter().enumerate() {
        let f = rows.fields(line, body, 7)?;
        let ijk = (
            rows.int(line, f[0], "i")?,
            rows.int(line, f[1], "j")?,
            rows.int(line, f[2], "k")?,
        );
        if ijk != mesh.cell_ijk(c) {
            return Err(parse_err(
                path,
                line,
                format!("cell indices {ijk:?} out of order (expected {:?})", mesh.cell_ijk(c)),
            ));
        }
        let center = mesh.cell_center(c);
        for (axis, (s, want)) in f[3..6].iter().zip(center).enumerate() {
            let got = rows.float(line, s, "coordinate")?;
            if (got - want).abs() > tol {
                return Err(parse_err(
                    path,
                    line,
                    format!("coordinate {axis} is {got}, mesh cell center is {want}"),
                ));
            }
        }
        values.push(rows.float(line, f[6], "rho")?);
    }
    DensityModel::for_mesh(mesh, values)
}

pub fn write_model(path: &Path, mesh: &Mesh, model: &DensityModel) -> Result<()> {
    write_text(path, &format_model(mesh, model)?)
}

pub fn read_model(path: &Path, mesh: &Mesh) -> Result<DensityModel> {
    parse_model(path, &read_text(path)?, mesh)
}

fn format_log_line(r: &IterationRecord) -> String {
    let rel = r
        .relative_error
        .map_or_else(|| "nan".to_string(), |v| v.to_string());
    format!(
        "{} {} {} {} {} {}\n",
        r.k, r.alpha, r.fidelity, r.reg_term, r.chi2, rel
    )
}

/// Convergence log, flushed after every record.
pub struct RunLog {
    path: PathBuf,
    file: File,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        writeln!(file, "{LOG_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn comment(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            writeln!(self.file, "# {line}").map_err(|e| Error::io(&self.path, e))?;
        }
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, record: &IterationRecord) -> Result<()> {
        self.file
            .write_all(format_log_line(record).as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// A parsed log row. `param_evaluations` is not stored and reads back as 0.
pub fn parse_log(path: &Path, text: &str) -> Result<Vec<IterationRecord>> {
    let rows = Rows::new(path, text, LOG_HEADER)?;
    rows.lines
        .iter()
        .map(|&(line, body)| {
            let f = rows.fields(line, body, 6)?;
            let rel = if f[5] == "nan" {
                None
            } else {
                Some(rows.float(line, f[5], "relative_error")?)
            };
            Ok(IterationRecord {
                k: rows.int(line, f[0], "k")?,
                alpha: rows.float(line, f[1], "alpha")?,
                fidelity: rows.float(line, f[2], "fidelity")?,
                reg_term: rows.float(line, f[3], "reg_term")?,
                chi2: rows.float(line, f[4], "chi2")?,
                relative_error: rel,
                param_evaluations: 0,
            })
        })
        .collect()
}

pub fn read_log(path: &Path) -> Result<Vec<IterationRecord>> {
    parse_log(path, &read_text(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// A plane through the mesh perpendicular to `axis` at coordinate `at` (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub axis: Axis,
    pub at: f64,
}

impl std::str::FromStr for Section {
    type Err = String;

    /// Accepts `y=525`, `z = 100`, ...
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, v) = s
            .split_once('=')
            .ok_or_else(|| format!("section `{s}` is not of the form axis=value"))?;
        let axis = match a.trim() {
            "x" | "X" => Axis::X,
            "y" | "Y" => Axis::Y,
            "z" | "Z" => Axis::Z,
            other => return Err(format!("unknown section axis `{other}`")),
        };
        let at: f64 = v
            .trim()
            .parse()
            .map_err(|e| format!("section `{s}`: {e}"))?;
        if !at.is_finite() {
            return Err(format!("section `{s}` is not finite"));
        }
        Ok(Self { axis, at })
    }
}

impl std::fmt::Display for Section {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}={}", self.axis.name(), self.at)
    }
}

impl Section {
    /// Layer index along the axis whose half-open cell interval contains `at`.
    pub fn layer(&self, mesh: &Mesh) -> Result<usize> {
        let (origin, count) = match self.axis {
            Axis::X => (mesh.origin[0], mesh.nx()),
            Axis::Y => (mesh.origin[1], mesh.ny()),
            Axis::Z => (mesh.origin[2], mesh.nbz),
        };
        let t = ((self.at - origin) / mesh.delta).floor();
        if t < 0.0 || t >= count as f64 {
            return Err(Error::Domain(format!("section {self} lies outside the mesh")));
        }
        Ok(t as usize)
    }

    pub fn file_name(&self) -> String {
        format!("section_{}{}.txt", self.axis.name(), self.at)
    }
}

/// A 2D slice of the model: rows of in-plane coordinates and density.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionGrid {
    pub section: Section,
    /// Names of the two in-plane coordinates, e.g. `("x", "z")`.
    pub columns: (&'static str, &'static str),
    pub rows: Vec<(f64, f64, f64)>,
}

pub fn extract_section(mesh: &Mesh, model: &DensityModel, section: Section) -> Result<SectionGrid> {
    let layer = section.layer(mesh)?;
    let cells: Vec<usize> = (0..mesh.n_cells())
        .filter(|&c| {
            let (i, j, k) = mesh.cell_ijk(c);
            match section.axis {
                Axis::X => i == layer,
                Axis::Y => j == layer,
                Axis::Z => k == layer,
            }
        })
        .collect();
    type Project = fn([f64; 3]) -> (f64, f64);
    let (columns, pick): ((&str, &str), Project) = match section.axis {
        Axis::X => (("y", "z"), |p| (p[1], p[2])),
        Axis::Y => (("x", "z"), |p| (p[0], p[2])),
        Axis::Z => (("x", "y"), |p| (p[0], p[1])),
    };
    let rows = cells
        .into_iter()
        .map(|c| {
            let (u, v) = pick(mesh.cell_center(c));
            (u, v, model.values[c])
        })
        .collect();
    Ok(SectionGrid {
        section,
        columns,
        rows,
    })
}

pub fn format_section(grid: &SectionGrid) -> String {
    let mut s = String::new();
    writeln!(s, "# section {}", grid.section).unwrap();
    writeln!(s, "{} {} rho", grid.columns.0, grid.columns.1).unwrap();
    for (u, v, rho) in &grid.rows {
        writeln!(s, "{u} {v} {rho}").unwrap();
    }
    s
}

pub fn parse_section(path: &Path, text: &str) -> Result<SectionGrid> {
    let section = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("# section "))
        .ok_or_else(|| parse_err(path, 1, "missing `# section` line"))?
        .parse::<Section>()
        .map_err(|e| parse_err(path, 1, e))?;
    let columns = match section.axis {
        Axis::X => ("y", "z"),
        Axis::Y => ("x", "z"),
        Axis::Z => ("x", "y"),
    };
    let header = format!("{} {} rho", columns.0, columns.1);
    let rows = Rows::new(path, text, &header)?;
    let data = rows
        .lines
        .iter()
        .map(|&(line, body)| {
            let f = rows.fields(line, body, 3)?;
            Ok((
                rows.float(line, f[0], columns.0)?,
                rows.float(line, f[1], columns.1)?,
                rows.float(line, f[2], "rho")?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(SectionGrid {
        section,
        columns,
        rows: data,
    })
}

pub fn write_section(path: &Path, grid: &SectionGrid) -> Result<()> {
    write_text(path, &format_section(grid))
}

/// One row of a study report table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: MethodKind,
    pub alpha_init: f64,
    pub gamma: f64,
    pub alpha_mean: f64,
    pub alpha_std: f64,
    pub relerr_mean: f64,
    pub relerr_std: f64,
    pub iters_mean: f64,
    pub iters_std: f64,
    pub copies: usize,
    pub failed: usize,
    pub seed: u64,
}

impl From<&StudyReport> for ReportRow {
    fn from(r: &StudyReport) -> Self {
        Self {
            method: r.method,
            alpha_init: r.alpha_init.mean,
            gamma: r.gamma,
            alpha_mean: r.alpha_final.mean,
            alpha_std: r.alpha_final.std,
            relerr_mean: r.relative_error.mean,
            relerr_std: r.relative_error.std,
            iters_mean: r.iterations.mean,
            iters_std: r.iterations.std,
            copies: r.copies,
            failed: r.failed.len(),
            seed: r.seed,
        }
    }
}

pub const REPORT_HEADER: &str = "method alpha1 gamma alphaK_mean alphaK_std relerr_mean relerr_std K_mean K_std copies failed seed";

pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{REPORT_HEADER}").unwrap();
    for r in rows {
        writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            r.method,
            r.alpha_init,
            r.gamma,
            r.alpha_mean,
            r.alpha_std,
            r.relerr_mean,
            r.relerr_std,
            r.iters_mean,
            r.iters_std,
            r.copies,
            r.failed,
            r.seed
        )
        .unwrap();
    }
    s
}

pub fn parse_report(path: &Path, text: &str) -> Result<Vec<ReportRow>> {
    let rows = Rows::new(path, text, REPORT_HEADER)?;
    rows.lines
        .iter()
        .map(|&(line, body)| {
            let f = rows.fields(line, body, 12)?;
            // NaN is legitimate here (e.g. no alpha when no copy iterated)
            let num = |i: usize, what: &str| -> Result<f64> {
                f[i].parse()
                    .map_err(|e| parse_err(path, line, format!("{what}: `{}`: {e}", f[i])))
            };
            Ok(ReportRow {
                method: f[0]
                    .parse()
                    .map_err(|e: String| parse_err(path, line, e))?,
                alpha_init: num(1, "alpha1")?,
                gamma: num(2, "gamma")?,
                alpha_mean: num(3, "alphaK_mean")?,
                alpha_std: num(4, "alphaK_std")?,
                relerr_mean: num(5, "relerr_mean")?,
                relerr_std: num(6, "relerr_std")?,
                iters_mean: num(7, "K_mean")?,
                iters_std: num(8, "K_std")?,
                copies: rows.int(line, f[9], "copies")?,
                failed: rows.int(line, f[10], "failed")?,
                seed: f[11]
                    .parse()
                    .map_err(|e| parse_err(path, line, format!("seed: {e}")))?,
            })
        })
        .collect()
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_text(path, &format_report(rows))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    parse_report(path, &read_text(path)?)
}
