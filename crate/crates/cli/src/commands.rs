//! Subcommand implementations. Each returns the files it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use cavsqueeze::observables::{fit_scaling, ScalingFit};

use crate::config::{parse_config, ConfigError, ScenarioConfig};
use crate::plot::{plot_sweep, plot_table, plot_time_series, PlotError, Reference};
use crate::scenario::{run_single, RunOutput};
use crate::summary::{run_summary, sweep_summary, to_pretty, SweepPoint};
use crate::table::{parse_csv, Table, TableError};
use crate::verify::{run_all, Check};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<PlotError> for CliError {
    fn from(e: PlotError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<cavsqueeze::Error> for CliError {
    fn from(e: cavsqueeze::Error) -> Self {
        match e {
            cavsqueeze::Error::InvalidParams(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    written.push(path);
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

fn output_dir(cfg: &ScenarioConfig, override_dir: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = override_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

/// Reference curve matching a scenario, if one applies.
pub fn reference_for(cfg: &ScenarioConfig) -> Option<Reference> {
    if cfg.oat_only {
        Some(Reference::Oat)
    } else if cfg.conditional && cfg.d == 0.0 {
        Some(Reference::Qnd)
    } else if !cfg.conditional && cfg.d != 0.0 {
        Some(Reference::Unconditional { d: cfg.d })
    } else {
        None
    }
}

fn mode_label(cfg: &ScenarioConfig) -> String {
    let mode = serde_json::to_value(cfg.mode).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    let kind = if cfg.conditional { "conditional" } else { "unconditional" };
    format!("{mode} {kind}, eps={} d={}", cfg.epsilon, cfg.d)
}

/// One evolution. Writes `evolve_N{n}.csv` and `.json` (and `.svg` with `plot`).
pub fn cmd_evolve(cfg: &ScenarioConfig, out: Option<&Path>, plot: bool) -> Result<(RunOutput, Vec<PathBuf>), CliError> {
    cfg.validate()?;
    let n = match cfg.atom_numbers().as_slice() {
        [n] => *n,
        _ => return Err(CliError::Usage("evolve needs exactly one atom number (n_atoms)".into())),
    };
    let dir = output_dir(cfg, out)?;
    let run = run_single(cfg, n)?;
    let mut written = Vec::new();
    let table = run.to_table();
    write(dir.join(format!("evolve_N{n}.csv")), &table.to_csv(), &mut written)?;
    write(dir.join(format!("evolve_N{n}.json")), &to_pretty(&run_summary(&run)), &mut written)?;
    if plot {
        let svg = plot_time_series(&table, &format!("{}, N={n}", mode_label(cfg)))?;
        write(dir.join(format!("evolve_N{n}.svg")), &svg, &mut written)?;
    }
    Ok((run, written))
}

/// Sweep results: the per-N optima and the fit over unflagged points.
pub struct SweepOutput {
    pub points: Vec<SweepPoint>,
    pub fit: Option<ScalingFit>,
    pub flags: Vec<String>,
}

pub fn sweep_table(points: &[SweepPoint]) -> Table {
    let with_err = points.iter().any(|p| p.xi2_m_stderr.is_some());
    let mut header = vec!["N", "t_m", "xi2_m"];
    if with_err {
        header.push("stderr");
    }
    let mut t = Table::new(header);
    for p in points {
        let mut row = vec![p.n_atoms as f64, p.t_m, p.xi2_m];
        if with_err {
            row.push(p.xi2_m_stderr.unwrap_or(0.0));
        }
        t.push(row);
    }
    t
}

/// Optimum per atom number, fit of ξ²_m ∝ N^a over points whose minimum is
/// interior. Writes `sweep.csv`, `sweep.json`, `series_N{n}.csv` (and
/// `sweep.svg` with `plot`).
pub fn cmd_sweep(cfg: &ScenarioConfig, out: Option<&Path>, plot: bool) -> Result<(SweepOutput, Vec<PathBuf>), CliError> {
    cfg.validate()?;
    let ns = cfg.atom_numbers();
    if ns.is_empty() {
        return Err(CliError::Usage("sweep needs n_list".into()));
    }
    let dir = output_dir(cfg, out)?;
    let mut written = Vec::new();
    let mut points = Vec::new();
    for &n in &ns {
        let run = run_single(cfg, n)?;
        write(dir.join(format!("series_N{n}.csv")), &run.to_table().to_csv(), &mut written)?;
        points.push(SweepPoint {
            n_atoms: n,
            t_m: run.optimum.t_m,
            xi2_m: run.optimum.xi2_m,
            xi2_m_stderr: run.optimum_stderr,
            t_end: run.resolved.t_end.unwrap_or(f64::NAN),
            excluded_from_fit: run.optimum.boundary || run.optimum.at_start,
            flags: run.flags,
        });
    }
    let usable: Vec<(f64, f64)> =
        points.iter().filter(|p| !p.excluded_from_fit).map(|p| (p.n_atoms as f64, p.xi2_m)).collect();
    let mut flags = Vec::new();
    let excluded = points.len() - usable.len();
    if excluded > 0 {
        flags.push(format!("{excluded} boundary optima excluded from fit"));
    }
    let fit = match fit_scaling(&usable) {
        Ok(f) => Some(f),
        Err(e) => {
            flags.push(format!("fit skipped: {e}"));
            None
        }
    };
    let table = sweep_table(&points);
    write(dir.join("sweep.csv"), &table.to_csv(), &mut written)?;
    write(dir.join("sweep.json"), &to_pretty(&sweep_summary(cfg, &points, fit.as_ref(), &flags)), &mut written)?;
    if plot {
        let svg = plot_sweep(&table, &mode_label(cfg), reference_for(cfg))?;
        write(dir.join("sweep.svg"), &svg, &mut written)?;
    }
    Ok((SweepOutput { points, fit, flags }, written))
}

/// Runs the self-check suite; fails when any check fails.
pub fn cmd_verify(quick: bool) -> Result<Vec<Check>, CliError> {
    Ok(run_all(quick)?)
}

/// Log-log fit of a sweep CSV.
pub fn cmd_fit_scaling(csv: &Path) -> Result<ScalingFit, CliError> {
    let text = fs::read_to_string(csv).map_err(|e| CliError::Usage(format!("{}: {e}", csv.display())))?;
    let table = parse_csv(&text)?;
    let (n, x) = match (table.column("N"), table.column("xi2_m")) {
        (Some(n), Some(x)) => (n, x),
        _ => return Err(CliError::Usage(format!("{}: expected columns N and xi2_m", csv.display()))),
    };
    let pts: Vec<(f64, f64)> = n.into_iter().zip(x).collect();
    fit_scaling(&pts).map_err(|e| CliError::Usage(e.to_string()))
}

/// SVG for a time-series or sweep CSV. Reference lines for sweeps come from
/// a `sweep.json` next to the CSV, when present.
pub fn cmd_plot(csv: &Path, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let text = fs::read_to_string(csv).map_err(|e| CliError::Usage(format!("{}: {e}", csv.display())))?;
    let table = parse_csv(&text)?;
    let sibling = csv.with_file_name("sweep.json");
    let reference = fs::read_to_string(&sibling)
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| serde_json::from_value::<ScenarioConfig>(v["config"].clone()).ok())
        .and_then(|c| reference_for(&c));
    let title = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("plot").to_string();
    let svg = plot_table(&table, &title, reference)?;
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| csv.with_extension("svg"));
    fs::write(&target, svg).map_err(|e| io_err(&target, e))?;
    Ok(target)
}
