use std::path::{Path, PathBuf};

use levy_parametrix::mc_oracle::Bandwidth;
use levy_parametrix::sde_model::{Coefficient, CoefficientField, CoefficientSpec, PerturbationFamily};
use levy_parametrix::{LatticeF64, ParametrixConfigF64, SdeModelF64, SimulationPlanF64, TemperedStableSpecF64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Prefix of environment variables that override config keys.
pub const ENV_PREFIX: &str = "PARAMETRIX_";

/// One experiment, as read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub noise: TemperedStableSpecF64,
    #[serde(default)]
    pub coefficients: CoefficientsSection,
    pub horizon: HorizonSection,
    #[serde(default)]
    pub parametrix: ParametrixConfigF64,
    #[serde(default)]
    pub mc: Option<McSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientsSection {
    pub drift: CoefficientSpec<f64>,
    pub sigma: CoefficientSpec<f64>,
    pub eta: f64,
    pub kappa: f64,
    pub perturbation: Option<PerturbationSection>,
}

impl Default for CoefficientsSection {
    fn default() -> Self {
        Self {
            drift: CoefficientSpec::Constant { value: 0.0 },
            sigma: CoefficientSpec::Constant { value: 1.0 },
            eta: 1.0,
            kappa: 4.0,
            perturbation: None,
        }
    }
}

/// Perturbation family, its indices and the range of the `Δ_n` test lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSection {
    #[serde(flatten)]
    pub family: PerturbationFamily<f64>,
    pub n: Vec<usize>,
    #[serde(default = "default_test_range")]
    pub test_range: [f64; 2],
}

fn default_test_range() -> [f64; 2] {
    [-5.0, 5.0]
}

/// Time window and output lattice. Exactly one of `x` (density over terminal
/// points) and `y` (density over initial points) is fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSection {
    #[serde(default)]
    pub t: f64,
    pub big_t: f64,
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub y: Option<f64>,
    pub lattice: LatticeF64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_steps: usize,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth<f64>,
    /// Density CSV to compare the estimate against, relative to the config file.
    #[serde(default)]
    pub compare: Option<PathBuf>,
    /// Range of points where the comparison is made; whole lattice if unset.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_se_factor")]
    pub se_factor: f64,
    #[serde(default = "default_peak_fraction")]
    pub peak_fraction: f64,
}

fn default_batch() -> usize {
    4096
}

fn default_bandwidth() -> Bandwidth<f64> {
    Bandwidth::Robust
}

fn default_se_factor() -> f64 {
    3.0
}

fn default_peak_fraction() -> f64 {
    0.01
}

/// Which endpoint of the transition density is held fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fixed {
    Initial(f64),
    Terminal(f64),
}

impl ExperimentConfig {
    pub fn model(&self) -> SdeModelF64 {
        let c = &self.coefficients;
        let mut field = CoefficientField::new(Coefficient::from(&c.drift), Coefficient::from(&c.sigma));
        field.eta = c.eta;
        field.kappa = c.kappa;
        SdeModelF64::new(self.noise.clone(), field)
    }

    pub fn fixed(&self) -> Fixed {
        match (self.horizon.x, self.horizon.y) {
            (Some(x), _) => Fixed::Initial(x),
            (None, Some(y)) => Fixed::Terminal(y),
            (None, None) => unreachable!("checked on load"),
        }
    }

    pub fn plan(&self) -> Result<SimulationPlanF64, CliError> {
        let mc = self.mc.as_ref().ok_or_else(|| CliError::config("the [mc] section is required"))?;
        let x0 = self.horizon.x.ok_or_else(|| CliError::config("horizon.x (the initial point) is required for simulation"))?;
        let mut plan = SimulationPlanF64::new(self.model(), self.horizon.t, self.horizon.big_t, x0, mc.n_steps, mc.n_paths, mc.seed);
        plan.batch_size = mc.batch_size;
        plan.truncation = mc.truncation;
        Ok(plan)
    }

    /// Structural checks that do not need any numerics.
    pub fn check(&self) -> Result<(), CliError> {
        let h = &self.horizon;
        if h.x.is_some() == h.y.is_some() {
            return Err(CliError::config("set exactly one of horizon.x and horizon.y"));
        }
        if !(h.big_t > h.t) {
            return Err(CliError::config(format!("horizon needs t < big_t, got {} and {}", h.t, h.big_t)));
        }
        let lat = &h.lattice;
        if !lat.count.is_power_of_two() || lat.count < 2 {
            return Err(CliError::config(format!("horizon.lattice.count = {} must be a power of two", lat.count)));
        }
        if !(lat.step > 0.0) || !lat.start.is_finite() {
            return Err(CliError::config("horizon.lattice needs a finite start and a positive step"));
        }
        if let Some(p) = &self.coefficients.perturbation {
            if p.n.is_empty() || p.n[0] == 0 || p.n.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::config("coefficients.perturbation.n must be positive and strictly increasing"));
            }
            if !(p.test_range[1] > p.test_range[0]) {
                return Err(CliError::config("coefficients.perturbation.test_range must be increasing"));
            }
        }
        if let Some(mc) = &self.mc {
            if mc.n_steps == 0 || mc.n_paths == 0 || mc.batch_size == 0 {
                return Err(CliError::config("mc.n_steps, mc.n_paths and mc.batch_size must be positive"));
            }
            if let Some([a, b]) = mc.window {
                if !(b > a) {
                    return Err(CliError::config("mc.window must be increasing"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form: sorted keys, defaults filled in.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(canonical_json(&value).as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let parts: Vec<String> =
                keys.iter().map(|k| format!("{}:{}", Value::String((*k).clone()), canonical_json(&map[*k]))).collect();
            format!("{{{}}}", parts.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// Applies `PARAMETRIX_SECTION__KEY=value` overrides. Path segments are
/// separated by a double underscore and lowercased; values are parsed as TOML
/// and fall back to plain strings. Returns the dotted paths that were set.
pub fn apply_overrides(
    doc: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<Vec<String>, CliError> {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    let mut applied = Vec::new();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(CliError::config(format!("malformed override variable {key}")));
        }
        let value = parse_value(&raw);
        let mut table = &mut *doc;
        for seg in &path[..path.len() - 1] {
            let entry = table.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::config(format!("override {key}: {seg} is not a section")))?;
        }
        table.insert(path[path.len() - 1].clone(), value);
        applied.push(path.join("."));
    }
    Ok(applied)
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// A loaded config with its hash and the directory relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub hash: String,
    pub base_dir: PathBuf,
    pub overrides: Vec<String>,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Parses `text`, applies overrides and an optional seed, and checks the result.
pub fn load_str(
    text: &str,
    vars: impl IntoIterator<Item = (String, String)>,
    seed: Option<u64>,
) -> Result<(ExperimentConfig, Vec<String>), CliError> {
    let mut doc: toml::Table = text.parse().map_err(|e| CliError::config(format!("config does not parse: {e}")))?;
    let mut overrides = apply_overrides(&mut doc, vars)?;
    if let Some(seed) = seed {
        let mc = doc
            .get_mut("mc")
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| CliError::config("--seed needs an [mc] section"))?;
        let seed = i64::try_from(seed).map_err(|_| CliError::config("--seed must fit in a signed 64-bit integer"))?;
        mc.insert("seed".into(), toml::Value::Integer(seed));
        overrides.push("mc.seed".into());
    }
    let config: ExperimentConfig =
        toml::Value::Table(doc).try_into().map_err(|e| CliError::config(format!("invalid config: {e}")))?;
    config.check()?;
    Ok((config, overrides))
}

pub fn load(path: &Path, vars: impl IntoIterator<Item = (String, String)>, seed: Option<u64>) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let (config, overrides) = load_str(&text, vars, seed)?;
    let hash = config.hash();
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, hash, base_dir, overrides })
}
