//! Run configuration: a TOML file whose (possibly nested) keys flatten to
//! the dotted names below. Unknown keys are rejected by name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::eigen::{EigenConfig, LanczosOptions};
use crate::feshbach::{StepConfig, Variant};
use crate::flow::{FlowConfig, OdeConfig, Target};
use crate::model::{H0Spectrum, H1Source, ModelSpec, NamedModel};
use crate::thermal::ThermalConfig;

pub const KNOWN_KEYS: &[&str] = &[
    "dimension",
    "g",
    "seed",
    "h0.mode",
    "h0.values",
    "h0.min",
    "h0.step",
    "h1.mode",
    "h1.matrix",
    "h1.sigma",
    "h1.name",
    "eigen.dense_threshold",
    "eigen.lanczos_tol",
    "eigen.lanczos_max_iter",
    "flow.k_min",
    "flow.variant",
    "flow.target",
    "flow.residual_tol",
    "flow.a1_floor",
    "flow.singular_floor",
    "flow.fallback_radius",
    "flow.ode_step",
    "flow.fixed_point_tol",
    "thermal.beta",
    "thermal.betas",
    "thermal.n",
    "thermal.k_min",
    "thermal.scan_radius",
    "thermal.scan_points",
    "exceptional.box",
    "exceptional.grid",
    "exceptional.scan_min",
    "exceptional.scan_max",
    "exceptional.scan_steps",
    "exceptional.flow_track",
    "exceptional.seed_levels",
    "output.dir",
    "output.formats",
    "log.level",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type Cfg<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Cfg<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSection {
    pub k_min: usize,
    pub variant: Variant,
    pub target: Target,
    pub residual_tol: f64,
    pub a1_floor: f64,
    pub singular_floor: f64,
    pub fallback_radius: Option<f64>,
    pub ode_step: f64,
    pub fixed_point_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalSection {
    pub beta: f64,
    pub betas: Vec<f64>,
    pub n: usize,
    pub k_min: usize,
    pub scan_radius: Option<f64>,
    pub scan_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalSection {
    /// `[re_min, re_max, im_min, im_max]`.
    pub search_box: [f64; 4],
    pub grid: [usize; 2],
    pub scan_min: f64,
    pub scan_max: f64,
    pub scan_steps: usize,
    pub flow_track: Option<PathBuf>,
    /// Number of lowest levels whose adjacent pairs seed the search.
    pub seed_levels: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub eigen: EigenConfig,
    pub flow: FlowSection,
    pub thermal: ThermalSection,
    pub exceptional: ExceptionalSection,
    pub output: OutputSection,
    pub log_level: String,
}

impl RunConfig {
    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            variant: self.flow.variant,
            residual_tol: self.flow.residual_tol,
            a1_floor: self.flow.a1_floor,
            singular_floor: self.flow.singular_floor,
            fallback_radius: self.flow.fallback_radius,
            eigen: self.eigen,
            ..StepConfig::default()
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            k_min: self.flow.k_min,
            target: self.flow.target,
            step: self.step_config(),
        }
    }

    pub fn ode_config(&self) -> OdeConfig {
        OdeConfig {
            h: self.flow.ode_step,
            variant: self.flow.variant,
            fixed_point_tol: self.flow.fixed_point_tol,
            ..OdeConfig::default()
        }
    }

    pub fn thermal_config(&self) -> ThermalConfig {
        ThermalConfig {
            scan_radius: self.thermal.scan_radius,
            scan_points: self.thermal.scan_points,
            ..ThermalConfig::new(self.thermal.beta, self.thermal.n)
        }
    }

    /// `flow.k_min` or `thermal.k_min` must lie below the model dimension.
    pub fn check_k_min(&self, key: &str, k_min: usize) -> Cfg<()> {
        let n = self.model.dimension;
        if k_min >= n {
            return err(format!("`{key}` = {k_min} must be below the dimension {n}"));
        }
        Ok(())
    }

    pub fn writes(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Keys(BTreeMap<String, toml::Value>);

impl Keys {
    fn f64(&self, key: &str) -> Cfg<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => as_f64(v)
                .map(Some)
                .ok_or_else(|| ConfigError(format!("`{key}` must be a number"))),
        }
    }

    fn usize(&self, key: &str) -> Cfg<Option<usize>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(_) => err(format!("`{key}` must be a non-negative integer")),
        }
    }

    fn str(&self, key: &str) -> Cfg<Option<&str>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => err(format!("`{key}` must be a string")),
        }
    }

    fn f64_list(&self, key: &str) -> Cfg<Option<Vec<f64>>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(as_f64)
                .collect::<Option<Vec<_>>>()
                .map(Some)
                .ok_or_else(|| ConfigError(format!("`{key}` must be an array of numbers"))),
            Some(_) => err(format!("`{key}` must be an array of numbers")),
        }
    }

    fn matrix(&self, key: &str) -> Cfg<Option<Vec<Vec<f64>>>> {
        let bad = || ConfigError(format!("`{key}` must be an array of numeric rows"));
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(rows)) => rows
                .iter()
                .map(|r| match r {
                    toml::Value::Array(a) => a.iter().map(as_f64).collect::<Option<Vec<_>>>(),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()
                .map(Some)
                .ok_or_else(bad),
            Some(_) => Err(bad()),
        }
    }
}

fn as_f64(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn positive(key: &str, x: f64) -> Cfg<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        err(format!("`{key}` must be strictly positive, got {x}"))
    }
}

fn model_section(keys: &Keys) -> Cfg<ModelSpec> {
    let g = keys.f64("g")?.unwrap_or(0.0);
    if !g.is_finite() {
        return err("`g` must be finite");
    }
    let seed = match keys.0.get("seed") {
        None => 0,
        Some(toml::Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(_) => return err("`seed` must be a non-negative integer"),
    };
    let h1_mode = keys.str("h1.mode")?.unwrap_or("random");
    let h1 = match h1_mode {
        "explicit" => H1Source::Explicit {
            matrix: keys
                .matrix("h1.matrix")?
                .ok_or(ConfigError("`h1.mode = explicit` needs `h1.matrix`".into()))?,
        },
        "random" => H1Source::Random {
            sigma: keys.f64("h1.sigma")?.unwrap_or(0.1),
        },
        "named" => {
            let name = keys
                .str("h1.name")?
                .ok_or(ConfigError("`h1.mode = named` needs `h1.name`".into()))?;
            H1Source::Named {
                name: NamedModel::parse(name).ok_or_else(|| {
                    ConfigError(format!(
                        "unknown `h1.name` {name:?} (expected model-a, two-level or block-parity)"
                    ))
                })?,
            }
        }
        other => {
            return err(format!(
                "unknown `h1.mode` {other:?} (expected explicit, random or named)"
            ))
        }
    };
    let implied_dim = match &h1 {
        H1Source::Explicit { matrix } => Some(matrix.len()),
        H1Source::Named { name } => Some(name.perturbation().nrows()),
        H1Source::Random { .. } => None,
    };
    let h0_mode = keys.str("h0.mode")?;
    let h0 = match (h0_mode, &h1) {
        (Some("explicit"), _) => H0Spectrum::Explicit {
            values: keys
                .f64_list("h0.values")?
                .ok_or(ConfigError("`h0.mode = explicit` needs `h0.values`".into()))?,
        },
        (Some("ladder"), _) | (None, H1Source::Random { .. } | H1Source::Explicit { .. }) => H0Spectrum::Ladder {
            min: keys.f64("h0.min")?.unwrap_or(0.0),
            step: keys.f64("h0.step")?.unwrap_or(1.0),
        },
        (None, H1Source::Named { name }) => H0Spectrum::Explicit {
            values: name.default_spectrum(),
        },
        (Some(other), _) => return err(format!("unknown `h0.mode` {other:?} (expected explicit or ladder)")),
    };
    let dimension = match (keys.usize("dimension")?, &h0, implied_dim) {
        (Some(d), ..) => d,
        (None, H0Spectrum::Explicit { values }, _) => values.len(),
        (None, _, Some(d)) => d,
        (None, ..) => return err("`dimension` is required for a random ladder model"),
    };
    if dimension < 2 {
        return err(format!("`dimension` must be at least 2, got {dimension}"));
    }
    if let Some(d) = implied_dim {
        if d != dimension {
            return err(format!("`dimension` = {dimension} but `h1` is {d}x{d}"));
        }
    }
    Ok(ModelSpec {
        dimension,
        h0,
        h1,
        g,
        seed,
    })
}

pub fn parse_config(text: &str, origin: &Path) -> Cfg<RunConfig> {
    let table: toml::Table =
        toml::from_str(text).map_err(|e| ConfigError(format!("{}: {}", origin.display(), e.message())))?;
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);
    if let Some(bad) = flat.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return err(format!("unknown configuration key `{bad}`"));
    }
    let keys = Keys(flat);
    let model = model_section(&keys)?;

    let eigen = EigenConfig {
        dense_threshold: keys.usize("eigen.dense_threshold")?.unwrap_or(64),
        lanczos: LanczosOptions {
            tol: positive("eigen.lanczos_tol", keys.f64("eigen.lanczos_tol")?.unwrap_or(1e-10))?,
            max_iter: keys.usize("eigen.lanczos_max_iter")?.unwrap_or(500),
            seed: model.seed,
        },
    };

    let step = StepConfig::default();
    let k_min = keys.usize("flow.k_min")?.unwrap_or(2);
    if k_min < 2 {
        return err(format!("`flow.k_min` = {k_min} must be at least 2"));
    }
    let variant = match keys.str("flow.variant")?.unwrap_or("derived") {
        "derived" => Variant::Derived,
        "literal" => Variant::Literal,
        other => {
            return err(format!(
                "unknown `flow.variant` {other:?} (expected derived or literal)"
            ))
        }
    };
    let target = match keys.str("flow.target")?.unwrap_or("fixed") {
        "fixed" => Target::Fixed,
        "rolling" => Target::Rolling,
        other => return err(format!("unknown `flow.target` {other:?} (expected fixed or rolling)")),
    };
    let ode = OdeConfig::default();
    let flow = FlowSection {
        k_min,
        variant,
        target,
        residual_tol: positive(
            "flow.residual_tol",
            keys.f64("flow.residual_tol")?.unwrap_or(step.residual_tol),
        )?,
        a1_floor: positive("flow.a1_floor", keys.f64("flow.a1_floor")?.unwrap_or(step.a1_floor))?,
        singular_floor: positive(
            "flow.singular_floor",
            keys.f64("flow.singular_floor")?.unwrap_or(step.singular_floor),
        )?,
        fallback_radius: keys
            .f64("flow.fallback_radius")?
            .map(|r| positive("flow.fallback_radius", r))
            .transpose()?,
        ode_step: positive("flow.ode_step", keys.f64("flow.ode_step")?.unwrap_or(ode.h))?,
        fixed_point_tol: positive(
            "flow.fixed_point_tol",
            keys.f64("flow.fixed_point_tol")?.unwrap_or(ode.fixed_point_tol),
        )?,
    };

    let betas = keys
        .f64_list("thermal.betas")?
        .unwrap_or_else(|| vec![1.0, 2.0, 5.0, 10.0, 20.0]);
    for &b in &betas {
        positive("thermal.betas", b)?;
    }
    if betas.windows(2).any(|w| !(w[1] > w[0])) {
        return err("`thermal.betas` must be strictly ascending");
    }
    let thermal_k_min = keys.usize("thermal.k_min")?.unwrap_or(2);
    if thermal_k_min < 2 {
        return err(format!("`thermal.k_min` = {thermal_k_min} must be at least 2"));
    }
    let thermal_n = keys.usize("thermal.n")?.unwrap_or(64);
    if thermal_n == 0 {
        return err("`thermal.n` must be at least 1");
    }
    let scan_points = keys.usize("thermal.scan_points")?.unwrap_or(512);
    if scan_points < 2 {
        return err("`thermal.scan_points` must be at least 2");
    }
    let thermal = ThermalSection {
        beta: positive("thermal.beta", keys.f64("thermal.beta")?.unwrap_or(1.0))?,
        betas,
        n: thermal_n,
        k_min: thermal_k_min,
        scan_radius: keys
            .f64("thermal.scan_radius")?
            .map(|r| positive("thermal.scan_radius", r))
            .transpose()?,
        scan_points,
    };

    let search_box = match keys.f64_list("exceptional.box")? {
        None => [-2.0, 2.0, -2.0, 2.0],
        Some(v) if v.len() == 4 && v[0] <= v[1] && v[2] <= v[3] && v.iter().all(|x| x.is_finite()) => {
            [v[0], v[1], v[2], v[3]]
        }
        Some(_) => return err("`exceptional.box` must be [re_min, re_max, im_min, im_max] with min <= max"),
    };
    let grid = match keys.0.get("exceptional.grid") {
        None => [9, 9],
        Some(toml::Value::Array(a)) if a.len() == 2 => {
            let to = |v: &toml::Value| match v {
                toml::Value::Integer(i) if *i >= 1 => Some(*i as usize),
                _ => None,
            };
            match (to(&a[0]), to(&a[1])) {
                (Some(x), Some(y)) => [x, y],
                _ => return err("`exceptional.grid` must be two positive integers"),
            }
        }
        Some(_) => return err("`exceptional.grid` must be two positive integers"),
    };
    let scan_min = keys.f64("exceptional.scan_min")?.unwrap_or(-2.0);
    let scan_max = keys.f64("exceptional.scan_max")?.unwrap_or(2.0);
    if !(scan_min < scan_max) {
        return err("`exceptional.scan_min` must be below `exceptional.scan_max`");
    }
    let scan_steps = keys.usize("exceptional.scan_steps")?.unwrap_or(401);
    if scan_steps < 3 {
        return err("`exceptional.scan_steps` must be at least 3");
    }
    let flow_track = keys.str("exceptional.flow_track")?.map(|p| {
        let p = PathBuf::from(p);
        if p.is_relative() {
            origin.parent().unwrap_or(Path::new(".")).join(p)
        } else {
            p
        }
    });
    let seed_levels = keys.usize("exceptional.seed_levels")?;
    if seed_levels.is_some_and(|l| l < 2) {
        return err("`exceptional.seed_levels` must be at least 2");
    }
    let exceptional = ExceptionalSection {
        search_box,
        grid,
        scan_min,
        scan_max,
        scan_steps,
        flow_track,
        seed_levels,
    };

    let formats = match keys.0.get("output.formats") {
        None => vec![Format::Csv, Format::Json],
        Some(toml::Value::Array(a)) => {
            let mut out = Vec::new();
            for v in a {
                match v.as_str() {
                    Some("csv") => out.push(Format::Csv),
                    Some("json") => out.push(Format::Json),
                    _ => return err(format!("`output.formats` entries must be \"csv\" or \"json\", got {v}")),
                }
            }
            out
        }
        Some(_) => return err("`output.formats` must be an array"),
    };
    let output = OutputSection {
        dir: PathBuf::from(keys.str("output.dir")?.unwrap_or("out")),
        formats,
    };
    let log_level = keys.str("log.level")?.unwrap_or("warn").to_string();
    if !["error", "warn", "info", "debug", "trace", "off"].contains(&log_level.as_str()) {
        return err(format!("unknown `log.level` {log_level:?}"));
    }

    Ok(RunConfig {
        model,
        eigen,
        flow,
        thermal,
        exceptional,
        output,
        log_level,
    })
}
