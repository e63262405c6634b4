//! The run configuration: a flat `key = value` file, one setting per line,
//! `#` starting a comment.
//!
//! ```text
//! # grid
//! dim = 2
//! n = 64
//! length = 1.0
//! # initial condition
//! preset = cosine          # cosine | gaussian_bump | cone | random_bandlimited | from_file
//! k = 1
//! amplitude = 0.001
//! # flow
//! t_final = 0.01
//! n_steps = 200
//! snapshot_stride = 1
//! truncation = none        # none | auto | <level>
//! c_star = auto            # auto | <value>
//! ```
//!
//! See [`KEYS`] for the full list and defaults. Every problem is reported
//! with its key and line; nothing is silently defaulted beyond the
//! documented defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::energy::Truncation;
use crate::flow::{CStar, FlowConfig};
use crate::grid::{Field, Grid};
use crate::presets::Preset;
use crate::prox::ProxOptions;

/// Recognised keys with their defaults (`None` = required or preset-specific).
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("dim", Some("1")),
    ("n", None),
    ("length", Some("1.0")),
    ("preset", None),
    ("k", Some("1")),
    ("amplitude", None),
    ("center", Some("domain centre")),
    ("width", None),
    ("slope", None),
    ("max_mode", Some("4")),
    ("seed", Some("0")),
    ("path", None),
    ("t_final", None),
    ("n_steps", None),
    ("snapshot_stride", Some("1")),
    ("truncation", Some("none")),
    ("c_star", Some("auto")),
    ("grad_tol", Some("1e-10·max(1, ‖u‖)")),
    ("max_newton", Some("50")),
    ("max_cg", Some("10·n^dim")),
    ("out", Some("out")),
    ("formats", Some("csv, json")),
    ("test_fields", Some("20")),
    ("steps_list", Some("8, 16, 32, 64")),
    ("sweep_axis", None),
    ("sweep_values", None),
    ("self_test_corrupt", Some("false")),
];

const PRESET_KEYS: &[(&str, &[&str])] = &[
    ("cosine", &["k", "amplitude"]),
    ("gaussian_bump", &["center", "width", "amplitude"]),
    ("cone", &["center", "slope"]),
    ("random_bandlimited", &["max_mode", "amplitude", "seed"]),
    ("from_file", &["path"]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.reason),
            None => write!(f, "{}: {}", self.key, self.reason),
        }
    }
}

/// All problems found in one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "level", rename_all = "lowercase")]
pub enum TruncationSpec {
    None,
    /// `10 · max(1, max Δ_h u⁰)`
    Auto,
    Level(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSpec {
    pub t_final: f64,
    pub n_steps: usize,
    pub snapshot_stride: usize,
    pub truncation: TruncationSpec,
    pub c_star: CStar,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSpec {
    pub grad_tol: Option<f64>,
    pub max_newton: usize,
    pub max_cg: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub csv: bool,
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySpec {
    pub test_fields: usize,
    pub steps_list: Vec<usize>,
    pub self_test_corrupt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Tau,
    N,
    Amplitude,
    #[serde(rename = "N")]
    Level,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tau => "tau",
            Self::N => "n",
            Self::Amplitude => "amplitude",
            Self::Level => "N",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub initial: Preset,
    pub flow: FlowSpec,
    pub solver: SolverSpec,
    pub output: OutputSpec,
    pub verify: VerifySpec,
    pub sweep: Option<SweepSpec>,
    /// Seed of the random preset and of the verification test fields.
    pub seed: u64,
}

impl RunConfig {
    pub fn grid(&self) -> Grid {
        Grid::new(self.grid.dim, self.grid.n, self.grid.length).expect("validated")
    }

    pub fn initial_state(&self) -> crate::Result<Field> {
        self.initial.build(self.grid())
    }

    pub fn truncation(&self, u0: &Field) -> Truncation {
        match self.flow.truncation {
            TruncationSpec::None => Truncation::None,
            TruncationSpec::Auto => Truncation::auto(u0),
            TruncationSpec::Level(n) => Truncation::Level(n),
        }
    }

    pub fn prox_options(&self, policy: Truncation) -> ProxOptions {
        let mut p = ProxOptions::new(self.flow.t_final / self.flow.n_steps as f64).with_policy(policy);
        p.grad_tol = self.solver.grad_tol;
        p.max_newton = self.solver.max_newton;
        p.max_cg = self.solver.max_cg;
        p
    }

    pub fn flow_config(&self, policy: Truncation) -> FlowConfig {
        let mut cfg = FlowConfig::new(self.flow.t_final, self.flow.n_steps).with_stride(self.flow.snapshot_stride);
        cfg.prox = self.prox_options(policy);
        cfg.c_star = self.flow.c_star;
        cfg
    }

    /// Replaces the seed everywhere it is used.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        if let Preset::RandomBandlimited { seed: s, .. } = &mut self.initial {
            *s = seed;
        }
    }
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct Reader {
    entries: BTreeMap<String, Entry>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn error(&mut self, line: Option<usize>, key: &str, reason: impl Into<String>) {
        self.errors.push(ConfigError {
            line,
            key: key.to_string(),
            reason: reason.into(),
        });
    }

    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let (line, v) = self.raw(key)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.error(Some(line), key, format!("expected {what}, got '{v}'"));
                None
            }
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        if !self.entries.contains_key(key) {
            self.error(None, key, "missing required key");
            return None;
        }
        self.parse(key, what)
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    /// Records a constraint violation unless `ok`.
    fn check(&mut self, key: &str, ok: bool, reason: &str) {
        if !ok {
            let line = self.line(key);
            self.error(line, key, reason);
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<Vec<T>> {
        let (line, v) = self.raw(key)?;
        let mut out = Vec::new();
        for item in v.split(',').map(str::trim) {
            match item.parse::<T>() {
                Ok(x) => out.push(x),
                Err(_) => {
                    self.error(Some(line), key, format!("expected a comma-separated list of {what}, got '{item}'"));
                    return None;
                }
            }
        }
        Some(out)
    }
}

/// Parses and validates a configuration. Relative `path` values resolve
/// against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigErrors> {
    let mut r = Reader {
        entries: BTreeMap::new(),
        errors: Vec::new(),
    };
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            r.error(Some(line), content, "expected 'key = value'");
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            r.error(Some(line), "", "empty key");
            continue;
        }
        if !KEYS.iter().any(|(k, _)| *k == key) {
            r.error(Some(line), key, "unknown key");
            continue;
        }
        if value.is_empty() {
            r.error(Some(line), key, "empty value");
            continue;
        }
        if let Some(first) = r.entries.get(key) {
            let first = first.line;
            r.error(Some(line), key, format!("duplicate key (first set on line {first})"));
            continue;
        }
        r.entries.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
                used: false,
            },
        );
    }

    // grid
    let dim = r.parse::<usize>("dim", "an integer").unwrap_or(1);
    r.check("dim", dim == 1 || dim == 2, "dim must be 1 or 2");
    let n = r.required::<usize>("n", "an integer");
    if let Some(n) = n {
        r.check("n", n >= 4, "n ≥ 4");
    }
    let length = r.parse::<f64>("length", "a number").unwrap_or(1.0);
    r.check("length", length.is_finite() && length > 0.0, "length must be positive");

    // initial condition
    let seed = r.parse::<u64>("seed", "a nonnegative integer").unwrap_or(0);
    let preset_name = r.raw("preset").map(|(_, v)| v);
    if preset_name.is_none() {
        r.error(None, "preset", "missing required key");
    }
    let initial = preset_name.and_then(|name| read_preset(&mut r, &name, length, seed, base_dir));

    // flow
    let t_final = r.required::<f64>("t_final", "a number");
    if let Some(t) = t_final {
        r.check("t_final", t.is_finite() && t > 0.0, "t_final must be positive");
    }
    let n_steps = r.required::<usize>("n_steps", "an integer");
    if let Some(s) = n_steps {
        r.check("n_steps", s >= 1, "n_steps must be at least 1");
    }
    let snapshot_stride = r.parse::<usize>("snapshot_stride", "an integer").unwrap_or(1);
    r.check("snapshot_stride", snapshot_stride >= 1, "snapshot_stride must be at least 1");
    let truncation = match r.raw("truncation") {
        None => TruncationSpec::None,
        Some((_, v)) if v == "none" => TruncationSpec::None,
        Some((_, v)) if v == "auto" => TruncationSpec::Auto,
        Some((line, v)) => match v.parse::<f64>() {
            Ok(x) if x.is_finite() && x > 0.0 => TruncationSpec::Level(x),
            _ => {
                r.error(Some(line), "truncation", format!("expected 'none', 'auto' or a positive level, got '{v}'"));
                TruncationSpec::None
            }
        },
    };
    let c_star = match r.raw("c_star") {
        None => CStar::Auto,
        Some((_, v)) if v == "auto" => CStar::Auto,
        Some((line, v)) => match v.parse::<f64>() {
            Ok(x) if x.is_finite() && x > 0.0 => CStar::Value(x),
            _ => {
                r.error(Some(line), "c_star", format!("expected 'auto' or a positive value, got '{v}'"));
                CStar::Auto
            }
        },
    };

    // solver
    let grad_tol = r.parse::<f64>("grad_tol", "a number");
    if let Some(t) = grad_tol {
        r.check("grad_tol", t.is_finite() && t > 0.0, "grad_tol must be positive");
    }
    let max_newton = r.parse::<usize>("max_newton", "an integer").unwrap_or(50);
    r.check("max_newton", max_newton >= 1, "max_newton must be at least 1");
    let max_cg = r.parse::<usize>("max_cg", "an integer");
    if let Some(m) = max_cg {
        r.check("max_cg", m >= 1, "max_cg must be at least 1");
    }

    // output
    let directory = r.raw("out").map(|(_, v)| PathBuf::from(v)).unwrap_or_else(|| PathBuf::from("out"));
    let (mut csv, mut json) = (true, true);
    if let Some(formats) = r.list::<String>("formats", "format names") {
        csv = false;
        json = false;
        for f in formats {
            match f.as_str() {
                "csv" => csv = true,
                "json" => json = true,
                other => {
                    let line = r.line("formats");
                    r.error(line, "formats", format!("unknown format '{other}' (csv, json)"));
                }
            }
        }
    }

    // verification
    let test_fields = r.parse::<usize>("test_fields", "an integer").unwrap_or(20);
    let steps_list = r.list::<usize>("steps_list", "integers").unwrap_or_else(|| vec![8, 16, 32, 64]);
    r.check(
        "steps_list",
        !steps_list.is_empty() && steps_list[0] >= 1 && steps_list.windows(2).all(|w| w[0] < w[1]),
        "steps_list must be positive and strictly increasing",
    );
    let self_test_corrupt = r.parse::<bool>("self_test_corrupt", "true or false").unwrap_or(false);

    let sweep = read_sweep(&mut r, t_final, &initial);

    let unused: Vec<(String, usize)> = r
        .entries
        .iter()
        .filter(|(_, e)| !e.used)
        .map(|(k, e)| (k.clone(), e.line))
        .collect();
    for (k, line) in unused {
        r.error(Some(line), &k, "does not apply to the selected preset");
    }

    if !r.errors.is_empty() {
        r.errors.sort_by_key(|e| (e.line.unwrap_or(0), e.key.clone()));
        return Err(ConfigErrors(r.errors));
    }
    Ok(RunConfig {
        grid: GridSpec {
            dim,
            n: n.expect("checked"),
            length,
        },
        initial: initial.expect("checked"),
        flow: FlowSpec {
            t_final: t_final.expect("checked"),
            n_steps: n_steps.expect("checked"),
            snapshot_stride,
            truncation,
            c_star,
        },
        solver: SolverSpec {
            grad_tol,
            max_newton,
            max_cg,
        },
        output: OutputSpec { directory, csv, json },
        verify: VerifySpec {
            test_fields,
            steps_list,
            self_test_corrupt,
        },
        sweep,
        seed,
    })
}

fn read_preset(r: &mut Reader, name: &str, length: f64, seed: u64, base_dir: &Path) -> Option<Preset> {
    let Some((_, keys)) = PRESET_KEYS.iter().find(|(p, _)| *p == name) else {
        let line = r.line("preset");
        let names: Vec<&str> = PRESET_KEYS.iter().map(|(p, _)| *p).collect();
        r.error(line, "preset", format!("unknown preset '{name}' ({})", names.join(", ")));
        return None;
    };
    // `seed` also drives the test fields, so it is never reported unused
    if let Some(e) = r.entries.get_mut("seed") {
        e.used = true;
    }
    let centre = [0.5 * length, 0.5 * length];
    let center = |r: &mut Reader| -> [f64; 2] {
        match r.list::<f64>("center", "numbers") {
            Some(c) if c.len() == 1 => [c[0], centre[1]],
            Some(c) if c.len() == 2 => [c[0], c[1]],
            Some(_) => {
                let line = r.line("center");
                r.error(line, "center", "expected one or two coordinates");
                centre
            }
            None => centre,
        }
    };
    let amplitude = |r: &mut Reader| -> Option<f64> {
        let a = r.required::<f64>("amplitude", "a number")?;
        r.check("amplitude", a.is_finite(), "amplitude must be finite");
        Some(a)
    };
    debug_assert!(!keys.is_empty());
    match name {
        "cosine" => {
            let k = r.parse::<usize>("k", "an integer").unwrap_or(1);
            let amplitude = amplitude(r)?;
            Some(Preset::Cosine { k, amplitude })
        }
        "gaussian_bump" => {
            let center = center(r);
            let width = r.required::<f64>("width", "a number")?;
            r.check("width", width > 0.0, "width must be positive");
            let amplitude = amplitude(r)?;
            Some(Preset::GaussianBump { center, width, amplitude })
        }
        "cone" => {
            let center = center(r);
            let slope = r.required::<f64>("slope", "a number")?;
            r.check("slope", slope.is_finite(), "slope must be finite");
            Some(Preset::Cone { center, slope })
        }
        "random_bandlimited" => {
            let max_mode = r.parse::<usize>("max_mode", "an integer").unwrap_or(4);
            r.check("max_mode", max_mode >= 1, "max_mode must be at least 1");
            let amplitude = amplitude(r)?;
            Some(Preset::RandomBandlimited {
                max_mode,
                amplitude,
                seed,
            })
        }
        "from_file" => {
            let (_, p) = match r.raw("path") {
                Some(x) => x,
                None => {
                    r.error(None, "path", "missing required key");
                    return None;
                }
            };
            let p = PathBuf::from(p);
            let path = if p.is_absolute() { p } else { base_dir.join(p) };
            Some(Preset::FromFile { path })
        }
        _ => unreachable!("listed preset"),
    }
}

fn read_sweep(r: &mut Reader, t_final: Option<f64>, initial: &Option<Preset>) -> Option<SweepSpec> {
    let axis = match r.raw("sweep_axis") {
        None => {
            if r.entries.contains_key("sweep_values") {
                let line = r.line("sweep_values");
                r.raw("sweep_values");
                r.error(line, "sweep_values", "requires sweep_axis");
            }
            return None;
        }
        Some((line, v)) => match v.as_str() {
            "tau" => SweepAxis::Tau,
            "n" => SweepAxis::N,
            "amplitude" => SweepAxis::Amplitude,
            "N" => SweepAxis::Level,
            other => {
                r.error(Some(line), "sweep_axis", format!("unknown axis '{other}' (tau, n, amplitude, N)"));
                return None;
            }
        },
    };
    if !r.entries.contains_key("sweep_values") {
        r.error(None, "sweep_values", "missing required key");
        return None;
    }
    let values = r.list::<f64>("sweep_values", "numbers")?;
    let line = r.line("sweep_values");
    for &v in &values {
        let ok = match axis {
            SweepAxis::Tau => v > 0.0 && t_final.is_none_or(|t| {
                let steps = t / v;
                (steps - steps.round()).abs() <= 1e-9 * steps && steps.round() >= 1.0
            }),
            SweepAxis::N => v >= 4.0 && v.fract() == 0.0,
            SweepAxis::Amplitude => v.is_finite(),
            SweepAxis::Level => v.is_finite() && v > 0.0,
        };
        if !ok {
            let reason = match axis {
                SweepAxis::Tau => format!("tau {v} must be positive and divide t_final into whole steps"),
                SweepAxis::N => format!("n {v} must be an integer ≥ 4"),
                SweepAxis::Amplitude => format!("amplitude {v} must be finite"),
                SweepAxis::Level => format!("N {v} must be positive"),
            };
            r.error(line, "sweep_values", reason);
        }
    }
    if axis == SweepAxis::Amplitude {
        if let Some(Preset::FromFile { .. }) = initial {
            r.error(line, "sweep_axis", "the from_file preset has no amplitude");
        }
    }
    Some(SweepSpec { axis, values })
}

impl SweepSpec {
    /// The member configuration for one sweep value.
    pub fn member(&self, base: &RunConfig, value: f64) -> RunConfig {
        let mut cfg = base.clone();
        cfg.sweep = None;
        match self.axis {
            SweepAxis::Tau => cfg.flow.n_steps = (cfg.flow.t_final / value).round() as usize,
            SweepAxis::N => cfg.grid.n = value as usize,
            SweepAxis::Amplitude => match &mut cfg.initial {
                Preset::Cosine { amplitude, .. }
                | Preset::GaussianBump { amplitude, .. }
                | Preset::RandomBandlimited { amplitude, .. } => *amplitude = value,
                Preset::Cone { slope, .. } => *slope = value,
                Preset::FromFile { .. } => unreachable!("rejected at parse time"),
            },
            SweepAxis::Level => cfg.flow.truncation = TruncationSpec::Level(value),
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigErrors> {
        parse_config(text, Path::new("/data"))
    }

    const MINIMAL: &str = "n = 32\npreset = cosine\namplitude = 1e-3\nt_final = 0.01\nn_steps = 10\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.grid, GridSpec { dim: 1, n: 32, length: 1.0 });
        assert_eq!(c.initial, Preset::Cosine { k: 1, amplitude: 1e-3 });
        assert_eq!(c.flow.snapshot_stride, 1);
        assert_eq!(c.flow.truncation, TruncationSpec::None);
        assert_eq!(c.flow.c_star, CStar::Auto);
        assert_eq!(c.solver, SolverSpec { grad_tol: None, max_newton: 50, max_cg: None });
        assert_eq!(c.output.directory, PathBuf::from("out"));
        assert!(c.output.csv && c.output.json);
        assert_eq!(c.verify.test_fields, 20);
        assert_eq!(c.verify.steps_list, vec![8, 16, 32, 64]);
        assert!(!c.verify.self_test_corrupt);
        assert!(c.sweep.is_none());
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn small_grid_is_rejected() {
        let e = parse(&MINIMAL.replace("n = 32", "n = 3")).unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert_eq!(e.0[0].key, "n");
        assert_eq!(e.0[0].line, Some(1));
        assert!(e.0[0].reason.contains("n ≥ 4"));
    }

    #[test]
    fn duplicate_and_unknown_keys_are_errors() {
        let text = format!("{MINIMAL}n = 64\nbogus = 1\n");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.0.len(), 2);
        assert!(e.0[0].reason.contains("duplicate") && e.0[0].line == Some(6));
        assert!(e.0[1].reason.contains("unknown key") && e.0[1].key == "bogus");
    }

    #[test]
    fn all_errors_are_collected() {
        let text = "dim = 3\nn = x\npreset = cosine\nt_final = -1\ntruncation = maybe\nwidth = 0.1\n";
        let e = parse(text).unwrap_err();
        let keys: Vec<&str> = e.0.iter().map(|e| e.key.as_str()).collect();
        for k in ["dim", "n", "amplitude", "t_final", "n_steps", "truncation", "width"] {
            assert!(keys.contains(&k), "{k} missing from {e}");
        }
    }

    #[test]
    fn comments_blank_lines_and_whitespace_are_ignored() {
        let text = "# header\n\n  n = 32   # cells\npreset=cosine\namplitude =1e-3\nt_final= 0.01\nn_steps = 10\n";
        assert!(parse(text).is_ok());
    }

    #[test]
    fn preset_parameters_and_relative_paths() {
        let c = parse("dim = 2\nn = 16\npreset = cone\ncenter = 0.25, 0.75\nslope = 0.2\nt_final = 1\nn_steps = 2\ntruncation = 25\nc_star = 100\n").unwrap();
        assert_eq!(c.initial, Preset::Cone { center: [0.25, 0.75], slope: 0.2 });
        assert_eq!(c.flow.truncation, TruncationSpec::Level(25.0));
        assert_eq!(c.flow.c_star, CStar::Value(100.0));
        let c = parse("n = 16\npreset = from_file\npath = u0.csv\nt_final = 1\nn_steps = 2\n").unwrap();
        assert_eq!(c.initial, Preset::FromFile { path: PathBuf::from("/data/u0.csv") });
        let e = parse("n = 16\npreset = cosine\namplitude = 1\nslope = 2\nt_final = 1\nn_steps = 2\n").unwrap_err();
        assert!(e.0[0].reason.contains("does not apply"));
    }

    #[test]
    fn sweep_members_vary_one_axis() {
        let text = format!("{MINIMAL}sweep_axis = tau\nsweep_values = 0.001, 0.0005\n");
        let c = parse(&text).unwrap();
        let s = c.sweep.clone().unwrap();
        assert_eq!(s.member(&c, 0.0005).flow.n_steps, 20);
        let bad = format!("{MINIMAL}sweep_axis = tau\nsweep_values = 0.003\n");
        assert!(parse(&bad).is_err());
        let text = format!("{MINIMAL}sweep_axis = N\nsweep_values = 2, 4\n");
        let c = parse(&text).unwrap();
        let m = c.sweep.clone().unwrap().member(&c, 4.0);
        assert_eq!(m.flow.truncation, TruncationSpec::Level(4.0));
        assert!(parse(&format!("{MINIMAL}sweep_values = 1\n")).is_err());
    }
}
