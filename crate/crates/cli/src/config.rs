//! Run configuration: a single JSON file drives every subcommand; unknown
//! fields are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde_json::Value;

use delsarte::potential::{Potential, SegmentMode};

#[derive(Debug, Clone)]
pub enum PotentialSpec {
    Expression(String),
    Csv(PathBuf),
}

#[derive(Debug, Clone)]
pub enum OrderSpec {
    Fixed(usize),
    Auto { target: f64 },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    pub b: f64,
    pub mode: SegmentMode,
    pub grid: Option<usize>,
    pub h: Option<Complex64>,
    pub order: OrderSpec,
    pub uniform_refit: bool,
    pub bc_left: (f64, f64),
    pub bc_right: (f64, f64),
    pub omega_range: (f64, f64),
    pub count: usize,
    pub include_negative: bool,
    pub omegas: Vec<f64>,
    pub taylor_depth: usize,
    pub n_range: (usize, usize),
    pub kernel_lattice: usize,
    pub oracle_lattice: usize,
    pub dump_eigenfunctions: bool,
    pub hash: String,
}

const KNOWN_KEYS: &[&str] = &[
    "potential",
    "b",
    "mode",
    "grid",
    "h",
    "N",
    "uniform_refit",
    "bc",
    "omega_range",
    "count",
    "include_negative",
    "omegas",
    "taylor_depth",
    "n_range",
    "kernel_lattice",
    "oracle_lattice",
    "dump_eigenfunctions",
];

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub struct ConfigError(pub String);

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("config JSON: {e}")))?;
        let hash = format!("{:016x}", fnv1a(text.as_bytes()));
        Self::from_value(&value, hash)
    }

    fn from_value(v: &Value, hash: String) -> Result<RunConfig, ConfigError> {
        let obj = v
            .as_object()
            .ok_or_else(|| ConfigError("config must be a JSON object".into()))?;
        for key in obj.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError(format!("unknown config key '{key}'")));
            }
        }
        let err = |m: &str| ConfigError(m.to_string());

        let potential = match &v["potential"] {
            Value::String(s) => PotentialSpec::Expression(s.clone()),
            Value::Object(o) => {
                let p = o
                    .get("csv")
                    .and_then(Value::as_str)
                    .ok_or_else(|| err("potential object needs a 'csv' path"))?;
                PotentialSpec::Csv(PathBuf::from(p))
            }
            _ => return Err(err("'potential' must be an expression string or {\"csv\": path}")),
        };
        let b = v["b"]
            .as_f64()
            .ok_or_else(|| err("'b' must be a positive number"))?;
        if !(b.is_finite() && b > 0.0) {
            return Err(err("'b' must be a positive number"));
        }
        let mode: SegmentMode = v
            .get("mode")
            .and_then(Value::as_str)
            .unwrap_or("half")
            .parse()
            .map_err(|e| ConfigError(format!("{e}")))?;
        let grid = match v.get("grid") {
            None | Some(Value::Null) => None,
            Some(g) => {
                let n = g
                    .as_u64()
                    .ok_or_else(|| err("'grid' must be an integer"))? as usize;
                Some(n)
            }
        };
        let h = match v.get("h") {
            None | Some(Value::Null) => Some(Complex64::ZERO),
            Some(Value::String(s)) if s == "auto" => None,
            Some(Value::Number(n)) => Some(Complex64::new(n.as_f64().unwrap(), 0.0)),
            Some(Value::Array(a)) if a.len() == 2 => {
                let re = a[0].as_f64().ok_or_else(|| err("'h' pair must be numbers"))?;
                let im = a[1].as_f64().ok_or_else(|| err("'h' pair must be numbers"))?;
                Some(Complex64::new(re, im))
            }
            _ => return Err(err("'h' must be a number, [re, im], or \"auto\"")),
        };
        let order = match v.get("N") {
            None | Some(Value::Null) => OrderSpec::Fixed(8),
            Some(Value::Number(n)) => OrderSpec::Fixed(n.as_u64().unwrap_or(8) as usize),
            Some(Value::Object(o)) => {
                let target = o
                    .get("auto")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| err("'N' object needs {\"auto\": target_eps}"))?;
                OrderSpec::Auto { target }
            }
            _ => return Err(err("'N' must be an integer or {\"auto\": eps}")),
        };
        let pair = |key: &str, default: (f64, f64)| -> Result<(f64, f64), ConfigError> {
            match v.get(key) {
                None | Some(Value::Null) => Ok(default),
                Some(Value::Array(a)) if a.len() == 2 => {
                    let x = a[0].as_f64().ok_or_else(|| err("range must be numeric"))?;
                    let y = a[1].as_f64().ok_or_else(|| err("range must be numeric"))?;
                    Ok((x, y))
                }
                _ => Err(ConfigError(format!("'{key}' must be a two-element array"))),
            }
        };
        let bc = |side: &str| -> Result<(f64, f64), ConfigError> {
            match v.get("bc") {
                None | Some(Value::Null) => Ok((1.0, 0.0)),
                Some(Value::Object(o)) => match o.get(side) {
                    None => Ok((1.0, 0.0)),
                    Some(Value::Array(a)) if a.len() == 2 => {
                        let c = a[0].as_f64().ok_or_else(|| err("bc pair must be numeric"))?;
                        let s = a[1].as_f64().ok_or_else(|| err("bc pair must be numeric"))?;
                        Ok((c, s))
                    }
                    _ => Err(ConfigError(format!("bc '{side}' must be [cos a, sin a]"))),
                },
                _ => Err(err("'bc' must be an object")),
            }
        };
        let omegas = match v.get("omegas") {
            None | Some(Value::Null) => vec![],
            Some(Value::Array(a)) => a
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| err("'omegas' must be numeric")))
                .collect::<Result<_, _>>()?,
            _ => return Err(err("'omegas' must be an array of numbers")),
        };
        let n_range = match v.get("n_range") {
            None | Some(Value::Null) => (2, 12),
            Some(Value::Array(a)) if a.len() == 2 => (
                a[0].as_u64().ok_or_else(|| err("'n_range' must be integers"))? as usize,
                a[1].as_u64().ok_or_else(|| err("'n_range' must be integers"))? as usize,
            ),
            _ => return Err(err("'n_range' must be [lo, hi]")),
        };
        let usize_or = |key: &str, default: usize| -> Result<usize, ConfigError> {
            match v.get(key) {
                None | Some(Value::Null) => Ok(default),
                Some(n) => n
                    .as_u64()
                    .map(|n| n as usize)
                    .ok_or_else(|| ConfigError(format!("'{key}' must be an integer"))),
            }
        };
        Ok(RunConfig {
            potential,
            b,
            mode,
            grid,
            h,
            order,
            uniform_refit: v
                .get("uniform_refit")
                .and_then(Value::as_bool)
                .unwrap_or(false),
            bc_left: bc("left")?,
            bc_right: bc("right")?,
            omega_range: pair("omega_range", (0.1, 10.0))?,
            count: usize_or("count", 10)?,
            include_negative: v
                .get("include_negative")
                .and_then(Value::as_bool)
                .unwrap_or(false),
            omegas,
            taylor_depth: usize_or("taylor_depth", 4)?,
            n_range,
            kernel_lattice: usize_or("kernel_lattice", 129)?,
            oracle_lattice: usize_or("oracle_lattice", 513)?,
            dump_eigenfunctions: v
                .get("dump_eigenfunctions")
                .and_then(Value::as_bool)
                .unwrap_or(false),
            hash,
        })
    }

    /// Node count: explicit `grid`, otherwise the default density for the
    /// segment (kept odd).
    pub fn grid_nodes(&self) -> usize {
        if let Some(n) = self.grid {
            return if n % 2 == 0 { n + 1 } else { n };
        }
        let span = match self.mode {
            SegmentMode::Half => self.b,
            SegmentMode::Full => 2.0 * self.b,
        };
        let mut n = ((delsarte::grid::DEFAULT_NODES_PER_UNIT - 1) as f64 * span).round() as usize + 1;
        if n % 2 == 0 {
            n += 1;
        }
        n.max(5)
    }

    pub fn build_potential(&self, base_dir: &Path) -> Result<Potential, delsarte::Error> {
        let nodes = self.grid_nodes();
        match &self.potential {
            PotentialSpec::Expression(text) => {
                Potential::parse(text, self.b, self.mode, nodes)
            }
            PotentialSpec::Csv(path) => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                Potential::from_csv_path(&full, self.b, self.mode, nodes)
            }
        }
    }
}
