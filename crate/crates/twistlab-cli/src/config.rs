//! Flat key-value experiment configuration: one `key = value` pair per line,
//! `#` starts a comment. Every key has a default; command-line flags override
//! file values. The full schema is documented in the repository README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, serde::Serialize)]
pub struct Config {
    // annulus geometry and resolution
    pub a: f64,
    pub b: f64,
    pub n_r: usize,
    pub n_t: usize,
    // test-map family
    pub flow_eps: f64,
    pub flow_m: usize,
    pub flow_time: f64,
    pub flow_steps: usize,
    pub suite_extra: usize,
    // torus problem
    pub rho: f64,
    pub torus_a: f64,
    pub torus_k: i64,
    pub torus_n: usize,
    pub rho_sweep: Vec<f64>,
    pub a_sweep: Vec<f64>,
    // energy table and EL / loop solves
    pub k_min: i64,
    pub k_max: i64,
    pub el_k: i64,
    pub loop_n: usize,
    pub loop_k: i64,
    pub loop_nodes: usize,
    pub dump_fields: bool,
    // tolerances
    pub rel_tol_energy: f64,
    pub symmetrise_margin_tol: f64,
    // bookkeeping
    pub seed: u64,
    pub out_dir: PathBuf,
    pub module: Option<String>,
    pub map_file: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: std::f64::consts::E,
            n_r: 257,
            n_t: 256,
            flow_eps: 0.1,
            flow_m: 2,
            flow_time: 1.0,
            flow_steps: 200,
            suite_extra: 0,
            rho: 4.0,
            torus_a: 0.5,
            torus_k: 1,
            torus_n: 256,
            rho_sweep: Vec::new(),
            a_sweep: Vec::new(),
            k_min: -3,
            k_max: 3,
            el_k: 1,
            loop_n: 2,
            loop_k: 1,
            loop_nodes: 1025,
            dump_fields: false,
            rel_tol_energy: 1e-3,
            symmetrise_margin_tol: 1e-4,
            seed: 0,
            out_dir: default_out_dir(),
            module: None,
            map_file: None,
        }
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("TWISTLAB_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("twistlab-out"))
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn parse_list(value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| ConfigError(format!("bad list entry `{s}`")))
        })
        .collect()
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Config::default();
        let mut pairs = BTreeMap::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {}: expected `key = value`", line_no + 1))
            })?;
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        for (key, value) in pairs {
            config.set(&key, &value)?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |what: &str| ConfigError(format!("key `{key}`: bad {what} `{value}`"));
        match key {
            "a" => self.a = value.parse().map_err(|_| bad("number"))?,
            "b" => self.b = value.parse().map_err(|_| bad("number"))?,
            "n_r" => self.n_r = value.parse().map_err(|_| bad("count"))?,
            "n_t" => self.n_t = value.parse().map_err(|_| bad("count"))?,
            "flow_eps" => self.flow_eps = value.parse().map_err(|_| bad("number"))?,
            "flow_m" => self.flow_m = value.parse().map_err(|_| bad("count"))?,
            "flow_time" => self.flow_time = value.parse().map_err(|_| bad("number"))?,
            "flow_steps" => self.flow_steps = value.parse().map_err(|_| bad("count"))?,
            "suite_extra" => self.suite_extra = value.parse().map_err(|_| bad("count"))?,
            "rho" => self.rho = value.parse().map_err(|_| bad("number"))?,
            "torus_a" => self.torus_a = value.parse().map_err(|_| bad("number"))?,
            "torus_k" => self.torus_k = value.parse().map_err(|_| bad("integer"))?,
            "torus_n" => self.torus_n = value.parse().map_err(|_| bad("count"))?,
            "rho_sweep" => self.rho_sweep = parse_list(value)?,
            "a_sweep" => self.a_sweep = parse_list(value)?,
            "k_min" => self.k_min = value.parse().map_err(|_| bad("integer"))?,
            "k_max" => self.k_max = value.parse().map_err(|_| bad("integer"))?,
            "el_k" => self.el_k = value.parse().map_err(|_| bad("integer"))?,
            "loop_n" => self.loop_n = value.parse().map_err(|_| bad("count"))?,
            "loop_k" => self.loop_k = value.parse().map_err(|_| bad("integer"))?,
            "loop_nodes" => self.loop_nodes = value.parse().map_err(|_| bad("count"))?,
            "dump_fields" => self.dump_fields = value.parse().map_err(|_| bad("bool"))?,
            "rel_tol_energy" => self.rel_tol_energy = value.parse().map_err(|_| bad("number"))?,
            "symmetrise_margin_tol" => {
                self.symmetrise_margin_tol = value.parse().map_err(|_| bad("number"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("integer"))?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "module" => self.module = Some(value.to_string()),
            "map_file" => self.map_file = Some(PathBuf::from(value)),
            other => return Err(ConfigError(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Validate cross-field constraints, naming the offending fields.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.a > 0.0 && self.b > self.a) {
            return Err(ConfigError(format!(
                "fields a/b: need 0 < a < b, got a={}, b={}",
                self.a, self.b
            )));
        }
        if !(self.rho > 1.0) {
            return Err(ConfigError(format!(
                "field rho: need rho > 1 to avoid self-intersection, got {}",
                self.rho
            )));
        }
        if !(0.0..1.0).contains(&self.torus_a) {
            return Err(ConfigError(format!(
                "field torus_a: need 0 <= a < 1, got {}",
                self.torus_a
            )));
        }
        for tol in [self.rel_tol_energy, self.symmetrise_margin_tol] {
            if !(tol > 0.0) {
                return Err(ConfigError(format!(
                    "fields rel_tol_energy/symmetrise_margin_tol: tolerances must be positive, got {tol}"
                )));
            }
        }
        Ok(())
    }
}
