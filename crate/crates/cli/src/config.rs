use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shrinking_gaps::evolution::{FitMethod, InitialState};
use shrinking_gaps::models::PotentialTerm;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(alias = "schema_version")]
    pub spec_version: u32,
    pub model: ModelSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_shift() -> f64 {
    1.0
}

fn default_period() -> f64 {
    2.0 * std::f64::consts::PI
}

fn default_fourier_cap() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSection {
    Howland {
        alpha: f64,
        #[serde(rename = "N")]
        n_max: usize,
        /// Absolute coupling.
        epsilon: Option<f64>,
        /// Coupling as a multiple of the admissible `ε_max`.
        epsilon_fraction: Option<f64>,
        #[serde(default)]
        potential: Vec<PotentialTerm>,
        k_smooth: u32,
        #[serde(default = "default_shift")]
        shift: f64,
        #[serde(default = "default_period")]
        period: f64,
    },
    Discrete {
        alpha: f64,
        #[serde(rename = "N")]
        n_max: usize,
        lambda: f64,
        a0: f64,
        #[serde(default)]
        a_cos: Vec<f64>,
        #[serde(default)]
        a_sin: Vec<f64>,
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default = "default_fourier_cap")]
        fourier_cap: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Decay class of the reduced perturbation; defaults to `k_smooth − 1`
    /// for the Howland model and 5 for the discrete one.
    pub p: Option<f64>,
    pub q: Option<usize>,
    pub tol: f64,
    pub strict: bool,
    /// Sample times per period for family norms and series.
    pub grid: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection { p: None, q: None, tol: 1e-12, strict: true, grid: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionSection {
    pub n_periods: usize,
    pub steps_per_period: usize,
    pub psi0: InitialState,
    /// Replaces the seed of a random initial state.
    pub seed: Option<u64>,
    pub window_fraction: f64,
    pub method: FitMethod,
    pub intra_period: bool,
    /// Sample grid for the trivial bound.
    pub bound_grid: usize,
    /// Initial state read from a JSON file `{re: [...], im: [...]}`,
    /// relative to the config file. Takes precedence over `psi0`.
    pub psi0_file: Option<PathBuf>,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        EvolutionSection {
            n_periods: 1000,
            steps_per_period: 64,
            psi0: InitialState::Ground,
            seed: None,
            window_fraction: 0.9,
            method: FitMethod::EnvelopeLsq,
            intra_period: false,
            bound_grid: 64,
            psi0_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), formats: vec![Format::Json, Format::Csv] }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Reads a config file into a generic TOML tree; `.json` files are parsed
/// as JSON, everything else as TOML.
pub fn read_tree(path: &Path) -> CliResult<toml::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        json_to_toml(&v).ok_or_else(|| CliError::Validation(format!("{}: null values are not allowed", path.display())))
    } else {
        text.parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

fn json_to_toml(v: &serde_json::Value) -> Option<toml::Value> {
    use serde_json::Value as J;
    Some(match v {
        J::Null => return None,
        J::Bool(b) => toml::Value::Boolean(*b),
        J::Number(n) => match n.as_i64() {
            Some(i) => toml::Value::Integer(i),
            None => toml::Value::Float(n.as_f64()?),
        },
        J::String(s) => toml::Value::String(s.clone()),
        J::Array(a) => toml::Value::Array(a.iter().map(json_to_toml).collect::<Option<_>>()?),
        J::Object(o) => {
            let mut t = toml::Table::new();
            for (k, v) in o {
                t.insert(k.clone(), json_to_toml(v)?);
            }
            toml::Value::Table(t)
        }
    })
}

/// Sets `a.b.c = value` inside the tree, creating tables on the way.
pub fn set_path(tree: &mut toml::Value, path: &str, value: toml::Value) -> CliResult<()> {
    let mut node = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Validation(format!("--sweep: empty component in key '{path}'")));
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("--sweep: '{path}' does not name a table entry")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("split always yields at least one component")
}

/// Parses a sweep value as a TOML literal, falling back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Loads a config file and applies `key=value` overrides. Without overrides
/// the file is deserialized directly so errors carry line and column.
pub fn load(path: &Path, overrides: &[(String, toml::Value)]) -> CliResult<ExperimentConfig> {
    if overrides.is_empty() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: ExperimentConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        };
        return cfg.finish(path);
    }
    let mut tree = read_tree(path)?;
    for (k, v) in overrides {
        set_path(&mut tree, k, v.clone())?;
    }
    ExperimentConfig::from_tree(tree, path)
}

impl ExperimentConfig {
    /// Deserializes and validates; relative file references are resolved
    /// against the directory of `origin`.
    pub fn from_tree(tree: toml::Value, origin: &Path) -> CliResult<Self> {
        let cfg: ExperimentConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("{}: {e}", origin.display())))?;
        cfg.finish(origin)
    }

    fn finish(mut self, origin: &Path) -> CliResult<Self> {
        let cfg = &mut self;
        if let Some(f) = &cfg.evolution.psi0_file {
            if f.is_relative() {
                let base = origin.parent().unwrap_or(Path::new(""));
                cfg.evolution.psi0_file = Some(base.join(f));
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// Domain checks, each naming the offending field.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, msg: String| Err(CliError::Validation(format!("{field}: {msg}")));
        if self.spec_version != SCHEMA_VERSION {
            return bad("spec_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.spec_version));
        }
        let alpha_ok = |a: f64| a > 0.0 && a < 1.0;
        match &self.model {
            ModelSection::Howland { alpha, n_max, epsilon, epsilon_fraction, k_smooth, shift, period, .. } => {
                if !alpha_ok(*alpha) {
                    return bad("model.alpha", format!("must lie in (0, 1), got {alpha}"));
                }
                if *n_max < 1 {
                    return bad("model.N", "must be at least 1".into());
                }
                match (epsilon, epsilon_fraction) {
                    (Some(_), Some(_)) => {
                        return bad("model.epsilon", "give either epsilon or epsilon_fraction, not both".into())
                    }
                    (None, None) => return bad("model.epsilon", "one of epsilon or epsilon_fraction is required".into()),
                    (Some(e), None) if !e.is_finite() => return bad("model.epsilon", format!("must be finite, got {e}")),
                    (None, Some(f)) if !(f.is_finite() && *f >= 0.0) => {
                        return bad("model.epsilon_fraction", format!("must be finite and non-negative, got {f}"))
                    }
                    _ => {}
                }
                if *k_smooth < 2 {
                    return bad("model.k_smooth", format!("must be at least 2, got {k_smooth}"));
                }
                if !(*shift > 0.0) {
                    return bad("model.shift", format!("must be positive, got {shift}"));
                }
                if !(*period > 0.0 && period.is_finite()) {
                    return bad("model.period", format!("must be positive, got {period}"));
                }
            }
            ModelSection::Discrete { alpha, n_max, lambda, a0, period, fourier_cap, .. } => {
                if !alpha_ok(*alpha) {
                    return bad("model.alpha", format!("must lie in (0, 1), got {alpha}"));
                }
                if *n_max < 2 {
                    return bad("model.N", "must be at least 2".into());
                }
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return bad("model.lambda", format!("must be positive, got {lambda}"));
                }
                if !(*a0 > 0.0 && a0.is_finite()) {
                    return bad("model.a0", format!("must be positive, got {a0}"));
                }
                if !(*period > 0.0 && period.is_finite()) {
                    return bad("model.period", format!("must be positive, got {period}"));
                }
                if *fourier_cap < 1 {
                    return bad("model.fourier_cap", "must be at least 1".into());
                }
            }
        }
        let pl = &self.pipeline;
        if let Some(p) = pl.p {
            if !(p > 2.0 && p.is_finite()) {
                return bad("pipeline.p", format!("must exceed 2, got {p}"));
            }
        }
        let p = self.class_p();
        if let Some(q) = pl.q {
            if q < 1 || q as f64 >= p - 1.0 {
                return bad("pipeline.q", format!("need 1 <= q < p - 1 with p = {p}, got {q}"));
            }
        }
        if !(pl.tol > 0.0 && pl.tol < 1.0) {
            return bad("pipeline.tol", format!("must lie in (0, 1), got {}", pl.tol));
        }
        if pl.grid < 4 {
            return bad("pipeline.grid", format!("must be at least 4, got {}", pl.grid));
        }
        let ev = &self.evolution;
        if ev.n_periods < 1 {
            return bad("evolution.n_periods", "must be at least 1".into());
        }
        if ev.steps_per_period < 1 {
            return bad("evolution.steps_per_period", "must be at least 1".into());
        }
        if !(ev.window_fraction > 0.0 && ev.window_fraction <= 1.0) {
            return bad("evolution.window_fraction", format!("must lie in (0, 1], got {}", ev.window_fraction));
        }
        match &ev.psi0 {
            InitialState::Gaussian { width, .. } if !(*width > 0.0) => {
                return bad("evolution.psi0.width", format!("must be positive, got {width}"))
            }
            InitialState::Random { blocks, .. } if *blocks < 1 => {
                return bad("evolution.psi0.blocks", "must be at least 1".into())
            }
            InitialState::Vector { re, im } if re.len() != im.len() => {
                return bad("evolution.psi0", format!("re has {} entries, im has {}", re.len(), im.len()))
            }
            _ => {}
        }
        if self.output.formats.is_empty() {
            return bad("output.formats", "list at least one format".into());
        }
        if let Some(f) = &self.evolution.psi0_file {
            if !f.is_file() {
                return bad("evolution.psi0_file", format!("{} does not exist", f.display()));
            }
        }
        Ok(())
    }

    /// Physical driving period.
    pub fn model_period(&self) -> f64 {
        match &self.model {
            ModelSection::Howland { period, .. } | ModelSection::Discrete { period, .. } => *period,
        }
    }

    pub fn class_p(&self) -> f64 {
        match (&self.model, self.pipeline.p) {
            (_, Some(p)) => p,
            (ModelSection::Howland { k_smooth, .. }, None) => *k_smooth as f64 - 1.0,
            (ModelSection::Discrete { .. }, None) => 5.0,
        }
    }

    pub fn initial_state(&self) -> CliResult<InitialState> {
        if let Some(f) = &self.evolution.psi0_file {
            let text = std::fs::read_to_string(f).map_err(|e| CliError::io(f, e))?;
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct Amplitudes {
                re: Vec<f64>,
                im: Vec<f64>,
            }
            let a: Amplitudes = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("evolution.psi0_file {}: {e}", f.display())))?;
            return Ok(InitialState::Vector { re: a.re, im: a.im });
        }
        Ok(match (&self.evolution.psi0, self.evolution.seed) {
            (InitialState::Random { blocks, .. }, Some(seed)) => InitialState::Random { blocks: *blocks, seed },
            (s, _) => s.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
spec_version = 1
[model]
kind = "howland"
alpha = 0.5
N = 8
epsilon = 0.0
k_smooth = 6
"#;

    fn parse(text: &str) -> CliResult<ExperimentConfig> {
        ExperimentConfig::from_tree(toml::Value::Table(text.parse().unwrap()), Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.pipeline.tol, 1e-12);
        assert!(c.pipeline.strict);
        assert_eq!(c.class_p(), 5.0);
        assert_eq!(c.evolution.steps_per_period, 64);
    }

    #[test]
    fn alpha_out_of_range_names_field() {
        let e = parse(&MINIMAL.replace("alpha = 0.5", "alpha = 1.2")).unwrap_err();
        assert!(e.to_string().starts_with("model.alpha"), "{e}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let e = parse(&MINIMAL.replace("k_smooth = 6", "k_smooth = 6\nfoo = 1")).unwrap_err();
        assert!(e.to_string().contains("foo"), "{e}");
    }

    #[test]
    fn schema_version_alias() {
        let c = parse(&MINIMAL.replace("spec_version", "schema_version")).unwrap();
        assert_eq!(c.spec_version, 1);
    }

    #[test]
    fn set_path_creates_tables() {
        let mut t = toml::Value::Table(MINIMAL.parse().unwrap());
        set_path(&mut t, "evolution.n_periods", parse_value("200")).unwrap();
        set_path(&mut t, "model.alpha", parse_value("0.25")).unwrap();
        let c = ExperimentConfig::from_tree(t, Path::new("test.toml")).unwrap();
        assert_eq!(c.evolution.n_periods, 200);
        match c.model {
            ModelSection::Howland { alpha, .. } => assert_eq!(alpha, 0.25),
            _ => panic!(),
        }
    }

    #[test]
    fn sweep_values_parse_as_literals() {
        assert_eq!(parse_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_value("0.5"), toml::Value::Float(0.5));
        assert_eq!(parse_value("tail_lsq"), toml::Value::String("tail_lsq".into()));
    }
}
