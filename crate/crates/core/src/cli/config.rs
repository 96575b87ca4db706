//! Scenario configs: TOML or JSON, unit-suffixed keys, strict schema.
//!
//! ```toml
//! scenario = "comb"
//! seed = 7
//!
//! [comb]
//! delta_mhz = 1.0
//! d0 = 0.3
//! ```
//!
//! Every dimensional key carries its unit as a suffix; values are resolved
//! to SI (`_hz`, `_s`) and written back that way in the manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Map, Value as Json};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScenarioKind {
    Comb,
    Pulse,
    Spin,
    Pump,
    Storage,
    Fit,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Comb,
        ScenarioKind::Pulse,
        ScenarioKind::Spin,
        ScenarioKind::Pump,
        ScenarioKind::Storage,
        ScenarioKind::Fit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Comb => "comb",
            ScenarioKind::Pulse => "pulse",
            ScenarioKind::Spin => "spin",
            ScenarioKind::Pump => "pump",
            ScenarioKind::Storage => "storage",
            ScenarioKind::Fit => "fit",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
                Error::config(Some("scenario"), format!("unknown scenario `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Freq,
    Time,
    /// Rate in 1/s.
    Rate,
    Scalar,
    Int,
    Text,
    FreqList,
    TimeList,
}

impl Kind {
    fn suffixes(self) -> &'static [(&'static str, f64)] {
        match self {
            Kind::Freq | Kind::FreqList => &[("_hz", 1.0), ("_khz", 1e3), ("_mhz", 1e6), ("_ghz", 1e9)],
            Kind::Time | Kind::TimeList => &[("_s", 1.0), ("_ms", 1e-3), ("_us", 1e-6), ("_ns", 1e-9)],
            Kind::Rate => &[("_per_s", 1.0)],
            _ => &[("", 1.0)],
        }
    }

    fn canonical_suffix(self) -> &'static str {
        self.suffixes()[0].0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    List(Vec<f64>),
    Text(String),
}

pub struct Param {
    pub name: &'static str,
    pub kind: Kind,
    pub default: Option<Value>,
}

const fn p(name: &'static str, kind: Kind) -> Param {
    Param { name, kind, default: None }
}

fn num(v: f64) -> Option<Value> {
    Some(Value::Num(v))
}

fn text(v: &str) -> Option<Value> {
    Some(Value::Text(v.to_owned()))
}

fn list(v: &[f64]) -> Option<Value> {
    Some(Value::List(v.to_vec()))
}

fn d(name: &'static str, kind: Kind, default: Option<Value>) -> Param {
    Param { name, kind, default }
}

fn afc_decay_params() -> Vec<Param> {
    vec![
        d("t2_fast", Kind::Time, num(15e-6)),
        d("t2_slow", Kind::Time, num(165e-6)),
        d("anchor_delay", Kind::Time, num(5e-6)),
        d("anchor_efficiency", Kind::Scalar, num(0.15)),
        p("weight", Kind::Scalar),
    ]
}

pub fn schema(kind: ScenarioKind) -> Vec<Param> {
    use Kind::*;
    let mut v = match kind {
        ScenarioKind::Comb => vec![
            d("delta", Freq, num(1e6)),
            d("d_peak", Scalar, num(4.0)),
            p("finesse", Scalar),
            d("d0", Scalar, num(0.3)),
            d("bandwidth", Freq, num(20e6)),
            d("tooth_shape", Text, text("square")),
            p("tooth_fwhm", Freq),
            p("broadening_shape", Text),
            p("broadening_fwhm", Freq),
            d("samples_per_period", Int, num(1024.0)),
            d("delay_min", Time, num(1e-6)),
            d("delay_max", Time, num(100e-6)),
            d("n_delays", Int, num(600.0)),
            d("noise", Scalar, num(0.0)),
        ],
        ScenarioKind::Pulse => vec![
            d("shape", Text, text("hsh")),
            d("omega", FreqList, list(&[0.6e6, 1.0e6, 1.5e6, 2.0e6])),
            d("t_flat", Time, num(5e-6)),
            d("edge_fraction", Scalar, num(0.1)),
            d("gamma", FreqList, list(&[10e6, 20e6, 50e6])),
            d("n_points", Int, num(101.0)),
            d("profile_span", Freq, num(20e6)),
            d("n_profile", Int, num(201.0)),
        ],
        ScenarioKind::Spin => vec![
            d("gamma_mw", Freq, num(0.73e6)),
            d("n_ions", Int, num(1e5)),
            d("t_s", Time, num(100e-6)),
            d("pi_eff", Scalar, num(0.97)),
            d("t2s", Time, num(1.2e-3)),
            d("mismatch_max", Time, num(2e-6)),
            d("n_mismatch", Int, num(41.0)),
            d("noise", Scalar, num(0.02)),
            d("fid_max", Time, num(2e-6)),
            d("n_fid", Int, num(201.0)),
        ],
        ScenarioKind::Pump => vec![
            d("rate", Rate, num(1e4)),
            d("scan", Freq, num(4e6)),
            d("cleaning_duration", Time, num(0.4)),
            d("init_duration", Time, num(0.3)),
            d("tau_fast", Time, num(36e-3)),
            d("tau_slow", Time, num(390e-3)),
            d("inhom_fwhm", Freq, num(1.3e9)),
            d("homogeneous_fwhm", Freq, num(50e3)),
            d("class_step", Freq, num(0.5e6)),
            d("window", Freq, num(30e6)),
            d("reference_depth", Scalar, num(4.5)),
            d("step", Time, num(1e-3)),
            d("span", Freq, num(40e6)),
            d("n_spectrum", Int, num(401.0)),
            d("probe_max", Time, num(2.0)),
            d("n_probe", Int, num(1000.0)),
            d("noise", Scalar, num(0.01)),
        ],
        ScenarioKind::Storage => vec![
            d("inv_delta", Time, num(7e-6)),
            d("t_s", Time, num(100e-6)),
            d("input_duration", Time, num(100e-9)),
            d("input_bandwidth", Freq, num(10e6)),
            d("control_shape", Text, text("hsh")),
            d("control_omega", Freq, num(0.6e6)),
            d("control_t_flat", Time, num(5e-6)),
            d("control_chirp", Freq, num(10e6)),
            d("mw_duration", Time, num(10e-6)),
            d("mw_chirp", Freq, num(3e6)),
            d("d_peak", Scalar, num(4.0)),
            d("d0", Scalar, num(0.3)),
            d("comb_bandwidth", Freq, num(20e6)),
            d("gamma_mw", Freq, num(0.73e6)),
            d("t2s", Time, num(1.2e-3)),
            d("pi_eff", Scalar, num(0.97)),
            p("eta_t", Scalar),
            d("n_points", Int, num(101.0)),
            d("sweep_min", Time, num(100e-6)),
            d("sweep_max", Time, num(1.3e-3)),
            d("n_sweep", Int, num(25.0)),
            d("noise", Scalar, num(0.02)),
        ],
        ScenarioKind::Fit => vec![
            p("model", Text),
            p("input", Text),
            d("x_column", Text, text("")),
            d("y_column", Text, text("")),
            d("sigma_column", Text, text("")),
        ],
    };
    if matches!(kind, ScenarioKind::Comb | ScenarioKind::Storage) {
        v.extend(afc_decay_params());
    }
    v
}

/// A fully resolved scenario: every schema key present (or explicitly
/// absent), values in SI.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// ODE tolerance for Bloch integrations; the library default if unset.
    pub tolerance: Option<f64>,
    pub values: BTreeMap<&'static str, Option<Value>>,
    /// Directory relative paths in the config are resolved against.
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn defaults(kind: ScenarioKind) -> Self {
        ScenarioConfig {
            kind,
            seed: 0,
            tolerance: None,
            values: schema(kind).into_iter().map(|p| (p.name, p.default)).collect(),
            base_dir: PathBuf::from("."),
        }
    }

    fn raw(&self, name: &str) -> Option<&Value> {
        self.values.get(name).and_then(|v| v.as_ref())
    }

    pub fn f(&self, name: &str) -> Result<f64> {
        self.opt_f(name)?
            .ok_or_else(|| Error::config(Some(name), "required value is missing"))
    }

    pub fn opt_f(&self, name: &str) -> Result<Option<f64>> {
        match self.raw(name) {
            None => Ok(None),
            Some(Value::Num(v)) => Ok(Some(*v)),
            Some(_) => Err(Error::config(Some(name), "expected a number")),
        }
    }

    pub fn int(&self, name: &str) -> Result<usize> {
        let v = self.f(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > 1e12 {
            return Err(Error::config(Some(name), format!("expected a non-negative integer, got {v}")));
        }
        Ok(v as usize)
    }

    pub fn list(&self, name: &str) -> Result<Vec<f64>> {
        match self.raw(name) {
            Some(Value::List(v)) => Ok(v.clone()),
            Some(Value::Num(v)) => Ok(vec![*v]),
            _ => Err(Error::config(Some(name), "expected a list of numbers")),
        }
    }

    pub fn text(&self, name: &str) -> Result<String> {
        match self.raw(name) {
            Some(Value::Text(s)) => Ok(s.clone()),
            None => Err(Error::config(Some(name), "required value is missing")),
            _ => Err(Error::config(Some(name), "expected a string")),
        }
    }

    pub fn opt_text(&self, name: &str) -> Result<Option<String>> {
        match self.raw(name) {
            None => Ok(None),
            Some(Value::Text(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Error::config(Some(name), "expected a string")),
        }
    }

    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let p = PathBuf::from(self.text(name)?);
        Ok(if p.is_absolute() { p } else { self.base_dir.join(p) })
    }

    /// Config in canonical SI form; loading it back gives the same values.
    pub fn to_json(&self) -> Json {
        let schema = schema(self.kind);
        let mut params = Map::new();
        for prm in &schema {
            let key = format!("{}{}", prm.name, prm.kind.canonical_suffix());
            let v = match self.raw(prm.name) {
                None => continue,
                Some(Value::Num(x)) if prm.kind == Kind::Int => json!(*x as u64),
                Some(Value::Num(x)) => json!(x),
                Some(Value::List(xs)) => json!(xs),
                Some(Value::Text(s)) if prm.name == "input" => {
                    json!(self.base_dir.join(s).to_string_lossy())
                }
                Some(Value::Text(s)) => json!(s),
            };
            params.insert(key, v);
        }
        let mut out = Map::new();
        out.insert("scenario".into(), json!(self.kind.name()));
        out.insert("seed".into(), json!(self.seed));
        if let Some(t) = self.tolerance {
            out.insert("tolerance".into(), json!(t));
        }
        out.insert(self.kind.name().into(), Json::Object(params));
        Json::Object(out)
    }
}

fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        let rest = t
            .strip_prefix(key)
            .or_else(|| t.strip_prefix(&format!("\"{key}\"")));
        rest.is_some_and(|r| {
            let r = r.trim_start();
            r.starts_with('=') || r.starts_with(':')
        })
    })
    .map(|i| i + 1)
}

fn with_location(mut e: Error, path: Option<&Path>, text: &str) -> Error {
    if let Error::Config { path: p, line, key, .. } = &mut e {
        if p.is_none() {
            *p = path.map(Path::to_path_buf);
        }
        if line.is_none() {
            if let Some(k) = key.as_deref() {
                *line = line_of(text, k);
            }
        }
    }
    e
}

fn json_to_value(key: &str, v: &Json) -> Result<Value> {
    match v {
        Json::Number(n) => Ok(Value::Num(n.as_f64().unwrap_or(f64::NAN))),
        Json::String(s) => Ok(Value::Text(s.clone())),
        Json::Array(a) => a
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| Error::config(Some(key), "list entries must be numbers"))
            })
            .collect::<Result<Vec<_>>>()
            .map(Value::List),
        _ => Err(Error::config(Some(key), "unsupported value type")),
    }
}

fn match_key(schema: &[Param], key: &str) -> Option<(usize, f64)> {
    schema.iter().enumerate().find_map(|(i, prm)| {
        prm.kind.suffixes().iter().find_map(|&(suf, scale)| {
            let base = key.strip_suffix(suf)?;
            (base == prm.name).then_some((i, scale))
        })
    })
}

fn accepted_keys(schema: &[Param]) -> String {
    schema
        .iter()
        .map(|p| match p.kind {
            Kind::Freq | Kind::FreqList => format!("{}_{{hz,khz,mhz,ghz}}", p.name),
            Kind::Time | Kind::TimeList => format!("{}_{{s,ms,us,ns}}", p.name),
            Kind::Rate => format!("{}_per_s", p.name),
            _ => p.name.to_owned(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn resolve(doc: &Map<String, Json>) -> Result<ScenarioConfig> {
    // A manifest wraps the config it was produced from.
    if let Some(Json::Object(inner)) = doc.get("config") {
        return resolve(inner);
    }
    let kind: ScenarioKind = match doc.get("scenario") {
        Some(Json::String(s)) => s.parse()?,
        Some(_) => return Err(Error::config(Some("scenario"), "must be a string")),
        None => {
            return Err(Error::config(
                None,
                "missing `scenario` (one of comb, pulse, spin, pump, storage, fit)",
            ))
        }
    };
    let mut cfg = ScenarioConfig::defaults(kind);
    for (k, v) in doc {
        match k.as_str() {
            "scenario" => {}
            "seed" => {
                cfg.seed = v
                    .as_u64()
                    .ok_or_else(|| Error::config(Some("seed"), "must be a non-negative integer"))?;
            }
            "tolerance" => {
                let t = v
                    .as_f64()
                    .filter(|t| *t > 0.0 && t.is_finite())
                    .ok_or_else(|| Error::config(Some("tolerance"), "must be a positive number"))?;
                cfg.tolerance = Some(t);
            }
            s if s == kind.name() => {}
            other => {
                return Err(Error::config(
                    Some(other),
                    format!("unknown key or section (expected `scenario`, `seed`, `tolerance`, `[{kind}]`)"),
                ))
            }
        }
    }
    let schema = schema(kind);
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    let params = match doc.get(kind.name()) {
        None => Map::new(),
        Some(Json::Object(m)) => m.clone(),
        Some(_) => return Err(Error::config(Some(kind.name()), "must be a table")),
    };
    for (key, raw) in &params {
        let Some((i, scale)) = match_key(&schema, key) else {
            return Err(Error::config(
                Some(key),
                format!("unknown key for `{kind}`; accepted keys: {}", accepted_keys(&schema)),
            ));
        };
        let prm = &schema[i];
        if let Some(prev) = seen.insert(prm.name, key) {
            return Err(Error::config(Some(key), format!("`{}` is already set by `{prev}`", prm.name)));
        }
        let v = json_to_value(key, raw)?;
        // divide for sub-unit prefixes so 5 us lands on the same double as 5e-6
        let conv = |x: f64| if scale < 1.0 { x / scale.recip().round() } else { x * scale };
        let v = match (prm.kind, v) {
            (Kind::Text, Value::Text(s)) => Value::Text(s),
            (Kind::FreqList | Kind::TimeList, Value::List(xs)) => {
                Value::List(xs.into_iter().map(conv).collect())
            }
            (Kind::FreqList | Kind::TimeList, Value::Num(x)) => Value::List(vec![conv(x)]),
            (Kind::Text, _) => return Err(Error::config(Some(key), "expected a string")),
            (_, Value::Num(x)) => Value::Num(conv(x)),
            (_, _) => return Err(Error::config(Some(key), "expected a number")),
        };
        let bad = match &v {
            Value::Num(x) => !x.is_finite(),
            Value::List(xs) => xs.iter().any(|x| !x.is_finite()),
            Value::Text(_) => false,
        };
        if bad {
            return Err(Error::config(Some(key), "value must be finite"));
        }
        cfg.values.insert(prm.name, Some(v));
    }
    Ok(cfg)
}

fn toml_to_json(v: toml::Value) -> Json {
    match v {
        toml::Value::String(s) => Json::String(s),
        toml::Value::Integer(i) => json!(i),
        toml::Value::Float(f) => json!(f),
        toml::Value::Boolean(b) => Json::Bool(b),
        toml::Value::Datetime(d) => Json::String(d.to_string()),
        toml::Value::Array(a) => Json::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Json::Object(t.into_iter().map(|(k, v)| (k, toml_to_json(v))).collect()),
    }
}

/// Parses config text; JSON if it starts with `{`, TOML otherwise.
pub fn parse(text: &str, path: Option<&Path>) -> Result<ScenarioConfig> {
    let loc = |line: Option<usize>, message: String| Error::Config {
        path: path.map(Path::to_path_buf),
        line,
        key: None,
        message,
    };
    if text.trim().is_empty() {
        return Err(loc(None, "config is empty; a `scenario` key is required".into()));
    }
    let doc: Map<String, Json> = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| loc(Some(e.line()), e.to_string()))?
    } else {
        let t: toml::Table = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
            loc(line, e.message().to_owned())
        })?;
        match toml_to_json(toml::Value::Table(t)) {
            Json::Object(m) => m,
            _ => unreachable!(),
        }
    };
    let mut cfg = resolve(&doc).map_err(|e| with_location(e, path, text))?;
    if let Some(dir) = path.and_then(Path::parent) {
        cfg.base_dir = dir.to_path_buf();
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: Some(path.to_path_buf()),
        line: None,
        key: None,
        message: e.to_string(),
    })?;
    parse(&text, Some(path))
}
