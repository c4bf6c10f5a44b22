//! Scenario configuration files (TOML).
//!
//! Rates are in units of κ and times in units of 1/κ; `epsilon`, `d` and
//! `beta` are the ratios g/κ, 2δ/κ and β/κ.

use cavsqueeze::models::{optimal_homodyne_phase, InitialCavity, ModelOrder, ModelParams};
use cavsqueeze::montecarlo::Scheme;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Reduced2,
    Reduced3,
}

impl Mode {
    pub fn order(self) -> ModelOrder {
        match self {
            Mode::Full => ModelOrder::Full,
            Mode::Reduced2 => ModelOrder::Second,
            Mode::Reduced3 => ModelOrder::Third,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CavityStart {
    LabVacuum,
    DisplacedVacuum,
}

impl From<CavityStart> for InitialCavity {
    fn from(c: CavityStart) -> Self {
        match c {
            CavityStart::LabVacuum => InitialCavity::LabVacuum,
            CavityStart::DisplacedVacuum => InitialCavity::DisplacedVacuum,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    Auto,
    EulerMaruyama,
    Exact,
}

impl From<SchemeChoice> for Scheme {
    fn from(s: SchemeChoice) -> Self {
        match s {
            SchemeChoice::Auto => Scheme::Auto,
            SchemeChoice::EulerMaruyama => Scheme::EulerMaruyama,
            SchemeChoice::Exact => Scheme::Exact,
        }
    }
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn default_records() -> usize {
    400
}
fn default_traj() -> usize {
    200
}
fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-11
}
fn default_scheme() -> SchemeChoice {
    SchemeChoice::Auto
}
fn default_cavity() -> CavityStart {
    CavityStart::LabVacuum
}
fn default_output() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    #[serde(default)]
    pub conditional: bool,
    /// Drop the dephasing channel of the second-order model (pure χSz²).
    #[serde(default)]
    pub oat_only: bool,
    pub epsilon: f64,
    pub d: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "one")]
    pub eta: f64,
    /// Homodyne phase; defaults to the optimal phase for `d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default = "default_cavity")]
    pub initial_cavity: CavityStart,
    /// Window length in units of 1/κ; estimated from the model rates if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Double the window while the minimum sits on its last sample.
    #[serde(default = "yes")]
    pub auto_extend: bool,
    #[serde(default = "default_records")]
    pub n_records: usize,
    /// Stochastic step in units of 1/κ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_step: Option<f64>,
    #[serde(default = "default_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeChoice,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_output")]
    pub output_dir: String,
}

impl ScenarioConfig {
    /// Minimal config with defaults for everything but the physics.
    pub fn new(mode: Mode, epsilon: f64, d: f64) -> Self {
        Self {
            mode,
            conditional: false,
            oat_only: false,
            epsilon,
            d,
            beta: 1.0,
            kappa: 1.0,
            eta: 1.0,
            phi: None,
            n_atoms: None,
            n_list: None,
            n_max: None,
            initial_cavity: default_cavity(),
            t_end: None,
            auto_extend: true,
            n_records: default_records(),
            dt_step: None,
            n_traj: default_traj(),
            base_seed: 0,
            scheme: default_scheme(),
            rtol: default_rtol(),
            atol: default_atol(),
            output_dir: default_output(),
        }
    }

    pub fn phi(&self) -> f64 {
        self.phi.unwrap_or_else(|| optimal_homodyne_phase(self.d))
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            kappa: self.kappa,
            g: self.epsilon * self.kappa,
            delta: self.d * self.kappa / 2.0,
            beta: self.beta * self.kappa,
            eta: self.eta,
            phi: self.phi(),
        }
    }

    /// Atom numbers to run, in order.
    pub fn atom_numbers(&self) -> Vec<usize> {
        match (&self.n_list, self.n_atoms) {
            (Some(list), _) => list.clone(),
            (None, Some(n)) => vec![n],
            (None, None) => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        for (name, v) in [("epsilon", self.epsilon), ("d", self.d), ("beta", self.beta), ("kappa", self.kappa)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.kappa <= 0.0 {
            return bad(format!("kappa must be > 0, got {}", self.kappa));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        self.model_params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.n_atoms.is_some() && self.n_list.is_some() {
            return bad("give either n_atoms or n_list, not both".into());
        }
        if let Some(list) = &self.n_list {
            if list.is_empty() {
                return bad("n_list is empty".into());
            }
            if list.windows(2).any(|w| w[1] <= w[0]) {
                return bad(format!("n_list must be strictly ascending, got {list:?}"));
            }
        }
        if self.atom_numbers().contains(&0) {
            return bad("atom numbers must be positive".into());
        }
        if self.mode != Mode::Full && self.epsilon >= 1.0 {
            return bad(format!("reduced modes need epsilon < 1, got {}", self.epsilon));
        }
        if self.oat_only && self.mode != Mode::Reduced2 {
            return bad("oat_only applies to mode = \"reduced2\"".into());
        }
        if self.oat_only && self.conditional {
            return bad("oat_only removes the measured channel; it cannot be conditional".into());
        }
        if self.n_records < 5 {
            return bad(format!("n_records must be at least 5, got {}", self.n_records));
        }
        if let Some(t) = self.t_end {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("t_end must be > 0, got {t}"));
            }
        }
        if let Some(dt) = self.dt_step {
            if !(dt.is_finite() && dt > 0.0) {
                return bad(format!("dt_step must be > 0, got {dt}"));
            }
        }
        if self.n_traj == 0 {
            return bad("n_traj must be at least 1".into());
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("rtol and atol must be > 0".into());
        }
        if let Some(phi) = self.phi {
            if !phi.is_finite() {
                return bad("phi must be finite".into());
            }
        }
        Ok(())
    }
}

/// Parses and validates a config file's contents.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
mode = "reduced2"
epsilon = 0.033
d = 1.0
n_atoms = 50
"#;

    #[test]
    fn defaults_fill_in() {
        let c = parse_config(BASIC).unwrap();
        assert_eq!(c.n_records, 400);
        assert_eq!(c.eta, 1.0);
        assert!((c.phi() + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(c.atom_numbers(), vec![50]);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = format!("{BASIC}\nepsilom = 2\n");
        assert!(matches!(parse_config(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn rejects_bad_values() {
        for extra in ["eta = 1.5", "eta = -0.1", "kappa = 0.0", "kappa = -1.0", "n_records = 3", "t_end = -1.0"] {
            let text = format!("{BASIC}{extra}\n");
            assert!(parse_config(&text).is_err(), "{extra}");
        }
        let text = BASIC.replace("n_atoms = 50", "n_list = [100, 50]");
        assert!(matches!(parse_config(&text), Err(ConfigError::Invalid(_))));
        let text = BASIC.replace("n_atoms = 50", "n_list = [50, 50]");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn round_trips() {
        let mut c = parse_config(BASIC).unwrap();
        c.phi = Some(0.25);
        c.t_end = Some(12.5);
        let back = parse_config(&to_toml(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn params_scale_with_kappa() {
        let mut c = parse_config(BASIC).unwrap();
        c.kappa = 2.0;
        let p = c.model_params();
        assert_eq!(p.g, 0.066);
        assert_eq!(p.delta, 1.0);
        assert_eq!(p.beta, 2.0);
    }
}
