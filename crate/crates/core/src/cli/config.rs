use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::Scheme;
use crate::problems::{
    DECONVOLUTION_DT, DECONVOLUTION_GRID_N, TOMOGRAPHY_DESK, TOMOGRAPHY_DT,
};
use crate::rules::{DpConfig, HdpConfig, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Gaussian-kernel deconvolution with entropy regularization.
    Deconvolution,
    /// Parallel-beam tomography of the Shepp-Logan phantom with TV.
    Tomography,
}

/// Fixture size overrides; unset fields fall back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureOverrides {
    pub grid_n: Option<usize>,
    pub image_n: Option<usize>,
    pub n_angles: Option<usize>,
    pub n_detectors: Option<usize>,
}

/// Contents of a configuration file. Every field is optional; missing
/// values come from the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    #[serde(default)]
    pub fixture: FixtureOverrides,
    pub scheme: Option<Scheme>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub max_steps: Option<usize>,
    /// Absolute noise levels for deconvolution, relative ones for tomography.
    pub noise_levels: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub rules: Option<Vec<Rule>>,
    pub record_every: Option<usize>,
    pub export_operator: Option<bool>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Command-line overrides, highest precedence.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub scheme: Option<Scheme>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved experiment description. The output directory is kept out
/// of the serialized form so that the config hash only covers what affects
/// the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub grid_n: usize,
    pub image_n: usize,
    pub n_angles: usize,
    pub n_detectors: usize,
    pub scheme: Scheme,
    pub dt: f64,
    pub t_max: f64,
    pub max_steps: Option<usize>,
    pub noise_levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rules: Vec<Rule>,
    pub record_every: usize,
    pub export_operator: bool,
    #[serde(skip)]
    pub out: PathBuf,
}

pub const DEFAULT_OUT: &str = "dualflow-out";

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (image_n, n_angles, n_detectors) = TOMOGRAPHY_DESK;
        match preset {
            Preset::Deconvolution => Self {
                preset,
                grid_n: DECONVOLUTION_GRID_N,
                image_n,
                n_angles,
                n_detectors,
                scheme: Scheme::Rk4,
                dt: DECONVOLUTION_DT,
                t_max: 1e5,
                max_steps: None,
                noise_levels: vec![1e-1, 1e-2, 1e-3, 1e-4],
                seeds: vec![0],
                rules: vec![
                    Rule::Dp(DpConfig::new(1.1)),
                    Rule::Dp(DpConfig::new(6.0)),
                    Rule::Hdp(HdpConfig::new(0.1)),
                ],
                record_every: 1,
                export_operator: false,
                out: PathBuf::from(DEFAULT_OUT),
            },
            Preset::Tomography => Self {
                preset,
                grid_n: DECONVOLUTION_GRID_N,
                image_n,
                n_angles,
                n_detectors,
                scheme: Scheme::Rk4,
                dt: TOMOGRAPHY_DT,
                t_max: 20.0,
                max_steps: None,
                noise_levels: vec![5e-2, 1e-2, 5e-3, 1e-3, 5e-4],
                seeds: vec![0],
                rules: vec![
                    Rule::Dp(DpConfig::new(1.05)),
                    Rule::Dp(DpConfig::new(3.0)),
                    Rule::Hdp(HdpConfig::new(0.1)),
                ],
                record_every: 10,
                export_operator: false,
                out: PathBuf::from(DEFAULT_OUT),
            },
        }
    }

    /// Merges preset < file < command line and validates the result.
    pub fn resolve(file: Option<ConfigFile>, cli: &Overrides) -> Result<Self> {
        let file = file.unwrap_or_default();
        let preset = cli
            .preset
            .or(file.preset)
            .ok_or_else(|| Error::InvalidParameter("no preset given (config `preset` or --preset)".into()))?;
        let mut c = Self::preset(preset);
        let f = file.fixture;
        c.grid_n = f.grid_n.unwrap_or(c.grid_n);
        c.image_n = f.image_n.unwrap_or(c.image_n);
        c.n_angles = f.n_angles.unwrap_or(c.n_angles);
        c.n_detectors = f.n_detectors.unwrap_or(c.n_detectors);
        c.scheme = cli.scheme.or(file.scheme).unwrap_or(c.scheme);
        c.dt = cli.dt.or(file.dt).unwrap_or(c.dt);
        c.t_max = file.t_max.unwrap_or(c.t_max);
        c.max_steps = file.max_steps.or(c.max_steps);
        c.noise_levels = file.noise_levels.unwrap_or(c.noise_levels);
        c.seeds = match cli.seed {
            Some(s) => vec![s],
            None => file.seeds.unwrap_or(c.seeds),
        };
        c.rules = file.rules.unwrap_or(c.rules);
        c.record_every = file.record_every.unwrap_or(c.record_every);
        c.export_operator = file.export_operator.unwrap_or(c.export_operator);
        c.out = cli.out.clone().or(file.out).unwrap_or(c.out);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.rules.is_empty() {
            return bad("at least one stopping rule is required".into());
        }
        for r in &self.rules {
            r.validate()?;
        }
        if self.noise_levels.is_empty() {
            return bad("the noise ladder is empty".into());
        }
        if let Some(d) = self.noise_levels.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return bad(format!("noise levels must be positive, got {d}"));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_max > 0.0) {
            return bad(format!("t_max must be positive, got {}", self.t_max));
        }
        if self.record_every == 0 {
            return bad("record_every must be positive".into());
        }
        match self.preset {
            Preset::Deconvolution if self.grid_n < 2 => bad("grid_n must be >= 2".into()),
            Preset::Tomography if self.image_n == 0 || self.n_angles == 0 || self.n_detectors == 0 => {
                bad("tomography sizes must be positive".into())
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
