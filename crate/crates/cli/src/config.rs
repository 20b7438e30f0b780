//! Flat `key=value` run configuration.
//!
//! Every key has a documented default; the resolved configuration is written
//! back in the same format as the run manifest, so a manifest can be fed to
//! `--config` to repeat a run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Solve,
    Sweep,
    Resolution,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::Solve => "solve",
            Self::Sweep => "sweep",
            Self::Resolution => "resolution",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "generate" => Some(Self::Generate),
            "solve" => Some(Self::Solve),
            "sweep" => Some(Self::Sweep),
            "resolution" => Some(Self::Resolution),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Svd,
    Tsvd,
    Csvd,
    StdMem,
    Mem,
    ExpMem,
    ScMem,
}

impl SolverKind {
    const ALL: [(&'static str, SolverKind); 7] = [
        ("svd", Self::Svd),
        ("tsvd", Self::Tsvd),
        ("csvd", Self::Csvd),
        ("stdmem", Self::StdMem),
        ("mem", Self::Mem),
        ("expmem", Self::ExpMem),
        ("scmem", Self::ScMem),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, k)| *k == self).map(|(n, _)| *n).unwrap_or("?")
    }

    pub fn is_svd(self) -> bool {
        matches!(self, Self::Svd | Self::Tsvd | Self::Csvd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectChoice {
    TwoGaussian,
    DeltaPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Flat,
    Gaussian,
    TwoGaussian,
}

impl ModelChoice {
    fn name(self) -> &'static str {
        match self {
            Self::Flat => "flat",
            Self::Gaussian => "gaussian",
            Self::TwoGaussian => "two_gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Std,
    Direct,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostChoice {
    Chi2,
    Norm,
}

/// Fully resolved configuration; every field holds a concrete value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub object: ObjectChoice,
    pub half_gap: f64,
    pub beta: f64,
    pub ntau: usize,
    pub grid_a: f64,
    pub grid_b: f64,
    pub grid_n: usize,
    pub support: Option<(f64, f64)>,
    pub noise: f64,
    pub seed: u64,
    pub solver: SolverKind,
    pub rank_tol: f64,
    pub cutoff: Option<f64>,
    pub cutoffs: Vec<f64>,
    pub csvd_cost: CostChoice,
    pub normalization: bool,
    pub sum_rule: bool,
    pub theta: Option<f64>,
    pub alpha: f64,
    pub alphas: Vec<f64>,
    pub xi: f64,
    pub eps: Option<f64>,
    pub max_iters: usize,
    pub model: ModelChoice,
    pub model_params: Vec<f64>,
    pub variant: Variant,
    pub max_outer: usize,
    pub outer_eps: f64,
    pub sweep_seeds: usize,
    pub betas: Vec<f64>,
    pub half_gaps: Vec<f64>,
    pub prominence: f64,
}

/// One problem found while reading a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown key '{key}'")]
    UnknownKey { key: String },
    #[error("{origin}: line {line}: expected key=value, got '{text}'")]
    Syntax { origin: String, line: usize, text: String },
    #[error("key '{key}' given twice in {origin}")]
    Duplicate { key: String, origin: String },
    #[error("{key}: cannot read '{value}' as {expected}")]
    Type { key: String, value: String, expected: &'static str },
    #[error("{key} = {value} is out of range: {range}")]
    Range { key: String, value: String, range: &'static str },
    #[error("{0}")]
    Inconsistent(String),
}

/// Every error found, reported together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Recognized keys with their documented defaults and a short description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("command", "", "command name; must match the subcommand when present"),
    ("object", "two_gaussian", "true object: two_gaussian | delta_pair"),
    ("half_gap", "1", "half separation of the delta pair"),
    ("beta", "10", "inverse temperature, > 0"),
    ("ntau", "25", "number of imaginary-time points, >= 1"),
    ("grid_a", "-5", "lower end of the object grid"),
    ("grid_b", "5", "upper end of the object grid"),
    ("grid_n", "201", "number of grid points, >= 2"),
    ("support", "auto", "none | lo,hi; auto means -2,2 for resolution and none otherwise"),
    ("noise", "0", "relative noise level, >= 0"),
    ("seed", "0", "noise seed"),
    ("solver", "tsvd", "svd | tsvd | csvd | stdmem | mem | expmem | scmem"),
    ("rank_tol", "1e-10", "relative rank tolerance, in (0, 1)"),
    ("cutoff", "auto", "auto (mean relative error) | cut-off on lambda_i/lambda_1, >= 0"),
    ("cutoffs", "0.1,0.05,0.01,0.001", "cut-offs swept by the sweep command"),
    ("csvd_cost", "chi2", "chi2 | norm"),
    ("constraints", "auto", "auto | none | comma list of normalization, sum_rule"),
    ("theta", "auto", "auto (1e4/c^2) | penalty stiffness >= 0"),
    ("alpha", "1", "entropy weight, > 0"),
    ("alphas", "1e-4,1e-2,1,1e2", "entropy weights swept by the sweep command"),
    ("xi", "0.1", "mixing parameter, in (0, 1)"),
    ("eps", "auto", "auto (1e-6 |M|) | stop tolerance > 0"),
    ("max_iters", "500", "inner iteration cap, >= 1"),
    ("model", "auto", "flat | gaussian | two_gaussian; auto means flat, or two_gaussian for scmem"),
    ("model_params", "auto", "auto | comma list of model parameters"),
    ("variant", "std", "inner solver of scmem: std | direct | exp"),
    ("max_outer", "30", "outer iteration cap of scmem, >= 1"),
    ("outer_eps", "1e-4", "relative outer stop tolerance of scmem, > 0"),
    ("sweep_seeds", "1", "consecutive seeds per sweep value, >= 1"),
    ("betas", "5,10,20", "inverse temperatures of the resolution command"),
    ("half_gaps", "0:1.95:0.05", "half gaps of the resolution command, list or start:stop:step"),
    ("prominence", "0.5", "peak prominence relative to the maximum, >= 0"),
];

/// Raw `key=value` pairs from a configuration file together with the lines
/// that could not be read. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_kv_text(text: &str, origin: &str) -> (Vec<(String, String)>, Vec<ConfigError>) {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_string(), v.trim().to_string())),
            _ => errors.push(ConfigError::Syntax {
                origin: origin.to_string(),
                line: i + 1,
                text: line.to_string(),
            }),
        }
    }
    (out, errors)
}

/// File text (if any) and flag pairs to a resolved configuration; syntax
/// errors in the file are reported together with everything else.
pub fn load_config(
    command: Command,
    file: Option<(&str, &str)>,
    flag_pairs: &[(String, String)],
) -> Result<RunConfig, ConfigErrors> {
    let (file_pairs, syntax) = file.map_or_else(Default::default, |(text, origin)| parse_kv_text(text, origin));
    match parse_config(command, &file_pairs, flag_pairs) {
        Ok(c) if syntax.is_empty() => Ok(c),
        Ok(_) => Err(ConfigErrors(syntax)),
        Err(ConfigErrors(rest)) => Err(ConfigErrors(syntax.into_iter().chain(rest).collect())),
    }
}

struct Reader {
    values: BTreeMap<String, String>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn raw(&self, key: &str) -> String {
        self.values.get(key).cloned().unwrap_or_else(|| {
            KEYS.iter()
                .find(|(k, _, _)| *k == key)
                .map(|(_, d, _)| d.to_string())
                .expect("key is listed")
        })
    }

    fn type_err(&mut self, key: &str, value: &str, expected: &'static str) {
        self.errors.push(ConfigError::Type {
            key: key.into(),
            value: value.into(),
            expected,
        });
    }

    fn range_err(&mut self, key: &str, value: &str, range: &'static str) {
        self.errors.push(ConfigError::Range {
            key: key.into(),
            value: value.into(),
            range,
        });
    }

    fn real(&mut self, key: &str, ok: impl Fn(f64) -> bool, range: &'static str, fallback: f64) -> f64 {
        let raw = self.raw(key);
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() && ok(v) => v,
            Ok(v) if v.is_finite() => {
                self.range_err(key, &raw, range);
                fallback
            }
            _ => {
                self.type_err(key, &raw, "a finite real number");
                fallback
            }
        }
    }

    fn auto_real(&mut self, key: &str, ok: impl Fn(f64) -> bool, range: &'static str) -> Option<f64> {
        if self.raw(key) == "auto" {
            None
        } else {
            Some(self.real(key, ok, range, f64::NAN))
        }
    }

    fn integer(&mut self, key: &str, min: u64, range: &'static str, fallback: u64) -> u64 {
        let raw = self.raw(key);
        match raw.parse::<u64>() {
            Ok(v) if v >= min => v,
            Ok(_) => {
                self.range_err(key, &raw, range);
                fallback
            }
            Err(_) => {
                self.type_err(key, &raw, "a non-negative integer");
                fallback
            }
        }
    }

    fn real_list(&mut self, key: &str, ok: impl Fn(f64) -> bool, range: &'static str) -> Vec<f64> {
        let raw = self.raw(key);
        let parsed = parse_real_list(&raw);
        match parsed {
            Some(v) if !v.is_empty() => {
                if v.iter().all(|x| ok(*x)) {
                    v
                } else {
                    self.range_err(key, &raw, range);
                    Vec::new()
                }
            }
            _ => {
                self.type_err(key, &raw, "a comma list of reals or start:stop:step");
                Vec::new()
            }
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)], expected: &'static str) -> Option<T> {
        let raw = self.raw(key);
        match options.iter().find(|(n, _)| *n == raw) {
            Some((_, v)) => Some(*v),
            None => {
                self.type_err(key, &raw, expected);
                None
            }
        }
    }
}

/// Comma list of reals, or `start:stop:step` expanded inclusively.
pub fn parse_real_list(raw: &str) -> Option<Vec<f64>> {
    if raw.contains(':') {
        let parts: Vec<f64> = raw.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().ok()?;
        let [start, stop, step] = parts.as_slice() else {
            return None;
        };
        if !(*step > 0.0 && start.is_finite() && stop.is_finite() && stop >= start) {
            return None;
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        if n > 100_000 {
            return None;
        }
        // rounded to 12 significant digits so 0.15 is not 0.15000000000000002
        return Some(
            (0..=n)
                .map(|i| format!("{:.11e}", start + i as f64 * step).parse().expect("formatted float"))
                .collect(),
        );
    }
    raw.split(',')
        .map(|p| p.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect()
}

/// Merges file pairs and flag pairs (flags win), rejects unknown keys and
/// resolves every default. All problems are returned together.
pub fn parse_config(
    command: Command,
    file_pairs: &[(String, String)],
    flag_pairs: &[(String, String)],
) -> Result<RunConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let mut values = BTreeMap::new();
    for (origin, pairs) in [("config file", file_pairs), ("flags", flag_pairs)] {
        let mut seen = BTreeMap::new();
        for (k, v) in pairs {
            if !KEYS.iter().any(|(key, _, _)| key == k) {
                errors.push(ConfigError::UnknownKey { key: k.clone() });
                continue;
            }
            if seen.insert(k.clone(), ()).is_some() {
                errors.push(ConfigError::Duplicate {
                    key: k.clone(),
                    origin: origin.into(),
                });
            }
            values.insert(k.clone(), v.clone());
        }
    }
    let mut r = Reader { values, errors };

    if let Some(c) = r.values.get("command").cloned() {
        if c != command.name() {
            r.errors.push(ConfigError::Inconsistent(format!(
                "command = {c} does not match the '{}' subcommand",
                command.name()
            )));
        }
    }

    let object = r
        .choice(
            "object",
            &[("two_gaussian", ObjectChoice::TwoGaussian), ("delta_pair", ObjectChoice::DeltaPair)],
            "two_gaussian | delta_pair",
        )
        .unwrap_or(ObjectChoice::TwoGaussian);
    let half_gap = r.real("half_gap", |v| v >= 0.0, ">= 0", 1.0);
    let beta = r.real("beta", |v| v > 0.0, "> 0", 10.0);
    let ntau = r.integer("ntau", 1, ">= 1", 25) as usize;
    let grid_a = r.real("grid_a", |_| true, "", -5.0);
    let grid_b = r.real("grid_b", |_| true, "", 5.0);
    let grid_n = r.integer("grid_n", 2, ">= 2", 201) as usize;
    if grid_a >= grid_b {
        r.errors.push(ConfigError::Inconsistent(format!(
            "grid_a = {grid_a} must be below grid_b = {grid_b}"
        )));
    }
    let support_raw = r.raw("support");
    let support = match support_raw.as_str() {
        "none" => None,
        "auto" => (command == Command::Resolution).then_some((-2.0, 2.0)),
        other => match parse_real_list(other).as_deref() {
            Some([lo, hi]) if lo < hi => Some((*lo, *hi)),
            Some([_, _]) => {
                r.range_err("support", other, "lo < hi");
                None
            }
            _ => {
                r.type_err("support", other, "none | auto | lo,hi");
                None
            }
        },
    };
    let noise = r.real("noise", |v| v >= 0.0, ">= 0", 0.0);
    let seed = r.integer("seed", 0, ">= 0", 0);
    let solver = r
        .choice("solver", &SolverKind::ALL, "svd | tsvd | csvd | stdmem | mem | expmem | scmem")
        .unwrap_or(SolverKind::Tsvd);
    let rank_tol = r.real("rank_tol", |v| v > 0.0 && v < 1.0, "rank_tol in (0, 1)", 1e-10);
    let cutoff = r.auto_real("cutoff", |v| v >= 0.0, ">= 0");
    let cutoffs = r.real_list("cutoffs", |v| v >= 0.0, "every cut-off >= 0");
    let csvd_cost = r
        .choice("csvd_cost", &[("chi2", CostChoice::Chi2), ("norm", CostChoice::Norm)], "chi2 | norm")
        .unwrap_or(CostChoice::Chi2);
    let constraints_raw = r.raw("constraints");
    let (normalization, sum_rule) = match constraints_raw.as_str() {
        "auto" => (solver == SolverKind::Csvd, solver == SolverKind::Csvd),
        "none" => (false, false),
        list => {
            let mut n = false;
            let mut s = false;
            for item in list.split(',').map(str::trim) {
                match item {
                    "normalization" => n = true,
                    "sum_rule" => s = true,
                    _ => r.type_err("constraints", list, "auto | none | normalization,sum_rule"),
                }
            }
            (n, s)
        }
    };
    if solver == SolverKind::Csvd && !(normalization || sum_rule) {
        r.errors.push(ConfigError::Inconsistent(
            "solver csvd needs at least one constraint".into(),
        ));
    }
    let theta = r.auto_real("theta", |v| v >= 0.0, "theta >= 0");
    let alpha = r.real("alpha", |v| v > 0.0, "alpha > 0", 1.0);
    let alphas = r.real_list("alphas", |v| v > 0.0, "every alpha > 0");
    let xi = r.real("xi", |v| v > 0.0 && v < 1.0, "xi in (0, 1)", 0.1);
    let eps = r.auto_real("eps", |v| v > 0.0, "eps > 0");
    let max_iters = r.integer("max_iters", 1, ">= 1", 500) as usize;
    let model_raw = r.raw("model");
    let model = match model_raw.as_str() {
        "auto" if solver == SolverKind::ScMem => ModelChoice::TwoGaussian,
        "auto" => ModelChoice::Flat,
        "flat" => ModelChoice::Flat,
        "gaussian" => ModelChoice::Gaussian,
        "two_gaussian" => ModelChoice::TwoGaussian,
        other => {
            r.type_err("model", other, "auto | flat | gaussian | two_gaussian");
            ModelChoice::Flat
        }
    };
    if solver == SolverKind::ScMem && model == ModelChoice::Flat {
        r.errors.push(ConfigError::Inconsistent(
            "solver scmem needs a parametrized model class (gaussian or two_gaussian)".into(),
        ));
    }
    let model_params = match r.raw("model_params").as_str() {
        "auto" => match model {
            ModelChoice::Flat => vec![1.0 / (grid_b - grid_a)],
            ModelChoice::Gaussian => vec![1.0, 0.0, 1.0],
            ModelChoice::TwoGaussian => vec![0.5, 0.5, -1.0, 1.0, 1.0, 1.0],
        },
        other => match parse_real_list(other) {
            Some(v) => v,
            None => {
                r.type_err("model_params", other, "auto | comma list of reals");
                Vec::new()
            }
        },
    };
    let expected_params = match model {
        ModelChoice::Flat => 1,
        ModelChoice::Gaussian => 3,
        ModelChoice::TwoGaussian => 6,
    };
    if !model_params.is_empty() && model_params.len() != expected_params {
        r.errors.push(ConfigError::Inconsistent(format!(
            "model {} takes {expected_params} parameter(s), got {}",
            model.name(),
            model_params.len()
        )));
    }
    if model == ModelChoice::Flat && model_params.first().is_some_and(|v| v.is_nan() || *v <= 0.0) {
        r.range_err("model_params", &r.raw("model_params"), "flat level > 0");
    }
    let variant = r
        .choice(
            "variant",
            &[("std", Variant::Std), ("direct", Variant::Direct), ("exp", Variant::Exp)],
            "std | direct | exp",
        )
        .unwrap_or(Variant::Std);
    let max_outer = r.integer("max_outer", 1, ">= 1", 30) as usize;
    let outer_eps = r.real("outer_eps", |v| v > 0.0, "outer_eps > 0", 1e-4);
    let sweep_seeds = r.integer("sweep_seeds", 1, ">= 1", 1) as usize;
    let betas = r.real_list("betas", |v| v > 0.0, "every beta > 0");
    let half_gaps = r.real_list("half_gaps", |v| v >= 0.0, "every half gap >= 0");
    let prominence = r.real("prominence", |v| v >= 0.0, ">= 0", 0.5);

    if !r.errors.is_empty() {
        return Err(ConfigErrors(r.errors));
    }
    Ok(RunConfig {
        command,
        object,
        half_gap,
        beta,
        ntau,
        grid_a,
        grid_b,
        grid_n,
        support,
        noise,
        seed,
        solver,
        rank_tol,
        cutoff,
        cutoffs,
        csvd_cost,
        normalization,
        sum_rule,
        theta,
        alpha,
        alphas,
        xi,
        eps,
        max_iters,
        model,
        model_params,
        variant,
        max_outer,
        outer_eps,
        sweep_seeds,
        betas,
        half_gaps,
        prominence,
    })
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| format!("{x:?}"))
}

impl RunConfig {
    /// Resolved configuration in `key=value` form, one key per line, in the
    /// order of [`KEYS`]. Reals use the shortest round-trip representation.
    pub fn to_kv_text(&self) -> String {
        let constraints = match (self.normalization, self.sum_rule) {
            (false, false) => "none".to_string(),
            (true, false) => "normalization".to_string(),
            (false, true) => "sum_rule".to_string(),
            (true, true) => "normalization,sum_rule".to_string(),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("command", self.command.name().into()),
            (
                "object",
                match self.object {
                    ObjectChoice::TwoGaussian => "two_gaussian",
                    ObjectChoice::DeltaPair => "delta_pair",
                }
                .into(),
            ),
            ("half_gap", format!("{:?}", self.half_gap)),
            ("beta", format!("{:?}", self.beta)),
            ("ntau", self.ntau.to_string()),
            ("grid_a", format!("{:?}", self.grid_a)),
            ("grid_b", format!("{:?}", self.grid_b)),
            ("grid_n", self.grid_n.to_string()),
            ("support", self.support.map_or_else(|| "none".into(), |(a, b)| format!("{a:?},{b:?}"))),
            ("noise", format!("{:?}", self.noise)),
            ("seed", self.seed.to_string()),
            ("solver", self.solver.name().into()),
            ("rank_tol", format!("{:?}", self.rank_tol)),
            ("cutoff", auto(self.cutoff)),
            ("cutoffs", list(&self.cutoffs)),
            (
                "csvd_cost",
                match self.csvd_cost {
                    CostChoice::Chi2 => "chi2",
                    CostChoice::Norm => "norm",
                }
                .into(),
            ),
            ("constraints", constraints),
            ("theta", auto(self.theta)),
            ("alpha", format!("{:?}", self.alpha)),
            ("alphas", list(&self.alphas)),
            ("xi", format!("{:?}", self.xi)),
            ("eps", auto(self.eps)),
            ("max_iters", self.max_iters.to_string()),
            ("model", self.model.name().into()),
            ("model_params", list(&self.model_params)),
            (
                "variant",
                match self.variant {
                    Variant::Std => "std",
                    Variant::Direct => "direct",
                    Variant::Exp => "exp",
                }
                .into(),
            ),
            ("max_outer", self.max_outer.to_string()),
            ("outer_eps", format!("{:?}", self.outer_eps)),
            ("sweep_seeds", self.sweep_seeds.to_string()),
            ("betas", list(&self.betas)),
            ("half_gaps", list(&self.half_gaps)),
            ("prominence", format!("{:?}", self.prominence)),
        ];
        debug_assert_eq!(pairs.len(), KEYS.len());
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Output root: the flag wins over the environment variable, which wins
/// over `./runs`.
pub fn resolve_output_root(flag: Option<PathBuf>, env: Option<String>) -> PathBuf {
    flag.or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub const OUTPUT_ROOT_ENV: &str = "LININV_OUTPUT_ROOT";
