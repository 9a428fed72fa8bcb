//! Experiment configuration: a flat TOML table with documented keys.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use ris_core::estimation::EstimatorKind;
use ris_core::multi_user::Strategy;
use ris_core::single_user::SingleUserMethod;
use ris_core::SystemConstants;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    NmseVsNr,
    SuCdf,
    SuVsNr,
    MuCdf,
    MuSinrVsNr,
    JtSweep,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::NmseVsNr,
        ExperimentId::SuCdf,
        ExperimentId::SuVsNr,
        ExperimentId::MuCdf,
        ExperimentId::MuSinrVsNr,
        ExperimentId::JtSweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::NmseVsNr => "nmse-vs-nr",
            ExperimentId::SuCdf => "su-cdf",
            ExperimentId::SuVsNr => "su-vs-nr",
            ExperimentId::MuCdf => "mu-cdf",
            ExperimentId::MuSinrVsNr => "mu-sinr-vs-nr",
            ExperimentId::JtSweep => "jt-sweep",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::NmseVsNr => "channel estimation NMSE per BS versus RIS size",
            ExperimentId::SuCdf => "single-user SNR distribution for each optimizer and estimator",
            ExperimentId::SuVsNr => "single-user average SNR versus RIS size",
            ExperimentId::MuCdf => "distribution of the geometric-mean SINR for each allocation strategy",
            ExperimentId::MuSinrVsNr => "multi-user average SINR versus RIS size",
            ExperimentId::JtSweep => "geometric-mean SINR distribution versus joint-transmission share",
        }
    }

    pub fn is_single_user(self) -> bool {
        matches!(self, ExperimentId::SuCdf | ExperimentId::SuVsNr)
    }

    pub fn is_multi_user(self) -> bool {
        matches!(self, ExperimentId::MuCdf | ExperimentId::MuSinrVsNr | ExperimentId::JtSweep)
    }

    /// Experiments that sweep the RIS size.
    pub fn sweeps_ris(self) -> bool {
        matches!(self, ExperimentId::NmseVsNr | ExperimentId::SuVsNr | ExperimentId::MuSinrVsNr)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .with_context(|| format!("unknown experiment `{s}`; known: {}", experiment_list()))
    }
}

fn experiment_list() -> String {
    ExperimentId::ALL.map(|e| e.as_str()).join(", ")
}

/// Channel knowledge used by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Csi {
    Perfect,
    Estimated(EstimatorKind),
}

impl Csi {
    pub fn label(self) -> &'static str {
        match self {
            Csi::Perfect => "PCSI",
            Csi::Estimated(k) => k.label(),
        }
    }

    pub fn parse(s: &str) -> anyhow::Result<Self> {
        if s == "PCSI" {
            return Ok(Csi::Perfect);
        }
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .map(Csi::Estimated)
            .with_context(|| format!("unknown estimator `{s}`; known: PCSI, LS, MMSE1, MMSEQ"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AmInit {
    #[default]
    Zero,
    Random,
}

fn default_trials() -> usize {
    50
}

fn default_seed() -> u64 {
    1
}

fn default_pilot_power() -> f64 {
    0.1
}

fn default_bs_power() -> f64 {
    10.0
}

fn default_noise_scale() -> f64 {
    1.0
}

fn default_cdf_step() -> f64 {
    1.0
}

/// One experiment run. Unset optional keys take experiment-specific or
/// desk-scale defaults (see [`ExperimentConfig::resolved`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Start from 64 BS antennas, 64 RIS elements and 20 users instead of 8/16/4.
    #[serde(default)]
    pub paper_scale: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bs_antennas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ris_elements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ris_sweep: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_jt: Option<Vec<f64>>,
    /// Uplink pilot power per symbol, watts.
    #[serde(default = "default_pilot_power")]
    pub pilot_power_w: f64,
    /// Downlink budget of every BS, watts.
    #[serde(default = "default_bs_power")]
    pub bs_power_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ris_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_figure_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_hz: Option<f64>,
    /// Multiplies the uplink training noise variance; 0 gives noiseless training.
    #[serde(default = "default_noise_scale")]
    pub training_noise_scale: f64,
    #[serde(default)]
    pub am_init: AmInit,
    /// Spacing of the dB grid on which CDFs are reported.
    #[serde(default = "default_cdf_step")]
    pub cdf_step_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// A method column value for either experiment family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Estimation,
    Single(SingleUserMethod),
    Multi(Strategy),
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Estimation => "CE",
            Method::Single(m) => m.label(),
            Method::Multi(s) => s.label(),
        }
    }
}

/// Configuration with every default filled in and every name parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub experiment: ExperimentId,
    pub trials: usize,
    pub seed: u64,
    pub constants: SystemConstants,
    pub ris_sweep: Vec<usize>,
    pub csi: Vec<Csi>,
    pub methods: Vec<Method>,
    pub p_jt: Vec<f64>,
    pub pilot_power_w: f64,
    pub bs_power_w: f64,
    pub training_noise_scale: f64,
    pub am_init: AmInit,
    pub cdf_step_db: f64,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            trials: default_trials(),
            seed: default_seed(),
            paper_scale: false,
            bs_antennas: None,
            ris_elements: None,
            users: None,
            ris_sweep: None,
            estimators: None,
            methods: None,
            p_jt: None,
            pilot_power_w: default_pilot_power(),
            bs_power_w: default_bs_power(),
            ris_amplitude: None,
            noise_figure_db: None,
            bandwidth_hz: None,
            training_noise_scale: default_noise_scale(),
            am_init: AmInit::default(),
            cdf_step_db: default_cdf_step(),
            output: None,
        }
    }

    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Parses names, fills defaults and checks every invariant.
    pub fn resolved(&self) -> anyhow::Result<ResolvedConfig> {
        let e = self.experiment;
        if self.trials == 0 {
            bail!("`trials` must be at least 1");
        }
        let mut constants = if self.paper_scale {
            SystemConstants::default()
        } else {
            SystemConstants::desk_scale()
        };
        if let Some(v) = self.bs_antennas {
            constants.bs_antennas = v;
        }
        if let Some(v) = self.ris_elements {
            constants.ris_elements = v;
        }
        if let Some(v) = self.users {
            constants.users = v;
        }
        if let Some(v) = self.ris_amplitude {
            constants.ris_amplitude = v;
        }
        if let Some(v) = self.noise_figure_db {
            constants.noise_figure_db = v;
        }
        if let Some(v) = self.bandwidth_hz {
            constants.bandwidth_hz = v;
        }
        if e.is_single_user() {
            if self.users.is_some_and(|u| u != 1) {
                bail!("single-user experiments need `users = 1`");
            }
            constants.users = 1;
        }
        constants.validate().map_err(|err| anyhow::anyhow!("invalid system constants: {err}"))?;

        let ris_sweep = match (&self.ris_sweep, e.sweeps_ris()) {
            (Some(s), true) => s.clone(),
            (Some(_), false) => bail!("`ris_sweep` only applies to nmse-vs-nr, su-vs-nr and mu-sinr-vs-nr"),
            (None, true) if self.paper_scale => vec![8, 16, 32, 64, 128],
            (None, true) => vec![8, 16, 32, 64],
            (None, false) => vec![constants.ris_elements],
        };
        if ris_sweep.is_empty() || ris_sweep.contains(&0) {
            bail!("`ris_sweep` must list positive RIS sizes");
        }

        let csi = match &self.estimators {
            Some(names) => names.iter().map(|n| Csi::parse(n)).collect::<anyhow::Result<Vec<_>>>()?,
            None if e == ExperimentId::NmseVsNr => EstimatorKind::ALL.into_iter().map(Csi::Estimated).collect(),
            None => vec![Csi::Perfect],
        };
        if csi.is_empty() {
            bail!("`estimators` must not be empty");
        }
        if e == ExperimentId::NmseVsNr && csi.contains(&Csi::Perfect) {
            bail!("nmse-vs-nr measures estimators; PCSI is not valid there");
        }

        let methods = parse_methods(e, self.methods.as_deref())?;

        let p_jt = match (&self.p_jt, e.is_multi_user()) {
            (Some(p), true) => p.clone(),
            (Some(_), false) => bail!("`p_jt` only applies to multi-user experiments"),
            (None, true) if e == ExperimentId::JtSweep => vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            (None, true) => vec![0.2],
            (None, false) => Vec::new(),
        };
        if p_jt.iter().any(|p| !(0.0..=1.0).contains(p)) {
            bail!("`p_jt` values must lie in [0, 1]");
        }
        if e.is_multi_user() && p_jt.is_empty() {
            bail!("`p_jt` must not be empty");
        }
        if e != ExperimentId::JtSweep && p_jt.len() > 1 {
            bail!("only jt-sweep accepts more than one `p_jt` value");
        }

        for (name, v) in [
            ("pilot_power_w", self.pilot_power_w),
            ("bs_power_w", self.bs_power_w),
            ("cdf_step_db", self.cdf_step_db),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                bail!("`{name}` must be positive");
            }
        }
        if !(self.training_noise_scale >= 0.0) || !self.training_noise_scale.is_finite() {
            bail!("`training_noise_scale` must be non-negative");
        }

        Ok(ResolvedConfig {
            experiment: e,
            trials: self.trials,
            seed: self.seed,
            constants,
            ris_sweep,
            csi,
            methods,
            p_jt,
            pilot_power_w: self.pilot_power_w,
            bs_power_w: self.bs_power_w,
            training_noise_scale: self.training_noise_scale,
            am_init: self.am_init,
            cdf_step_db: self.cdf_step_db,
        })
    }
}

fn parse_methods(e: ExperimentId, names: Option<&[String]>) -> anyhow::Result<Vec<Method>> {
    if e == ExperimentId::NmseVsNr {
        if names.is_some() {
            bail!("nmse-vs-nr takes no `methods`");
        }
        return Ok(vec![Method::Estimation]);
    }
    let known: Vec<Method> = if e.is_single_user() {
        SingleUserMethod::ALL.into_iter().map(Method::Single).collect()
    } else {
        Strategy::ALL.into_iter().map(Method::Multi).collect()
    };
    let methods = match names {
        None if e == ExperimentId::JtSweep => vec![Method::Multi(Strategy::Joint)],
        None => known,
        Some(list) => list
            .iter()
            .map(|n| {
                known.iter().copied().find(|m| m.label() == n).with_context(|| {
                    format!(
                        "unknown method `{n}` for {e}; known: {}",
                        known.iter().map(|m| m.label()).collect::<Vec<_>>().join(", ")
                    )
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?,
    };
    if methods.is_empty() {
        bail!("`methods` must not be empty");
    }
    Ok(methods)
}

pub fn read_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    ExperimentConfig::from_toml_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> anyhow::Result<()> {
    let text = cfg.to_toml_string()?;
    std::fs::write(path, text).with_context(|| format!("writing config {}", path.display()))
}
