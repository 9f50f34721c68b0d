//! Run configuration: INI-style config file (key = value under [section]
//! headers) merged with command-line flags; flags win.

use porofem::assembly::ModelParams;
use porofem::error::{Error, Result};
use porofem::scenario::{self, Scenario};
use porofem::stepper::Theta;
use porofem::verify::DtPolicy;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: String,
    pub param_set: String,
    /// Field overrides applied on top of the named parameter set.
    pub overrides: Vec<(String, f64)>,
    pub n: usize,
    pub mesh_list: Option<Vec<usize>>,
    pub theta: Theta,
    pub dt: DtSpec,
    pub final_time: f64,
    pub output_dir: PathBuf,
    pub emit_vtk: bool,
    pub emit_monitors: bool,
    pub emit_csv: bool,
    pub pretty: bool,
    pub jobs: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub linear_tol: f64,
    /// Constant source for the pure-flux scenario.
    pub flux_source: f64,
}

/// Time-step request as written in config: a number, `h2`, or `h2/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtSpec {
    Fixed(f64),
    HSquared(f64),
    /// Pick the study default for the chosen theta.
    Auto,
}

impl DtSpec {
    pub fn policy(self, theta: Theta, for_study: bool) -> DtPolicy {
        match self {
            DtSpec::Fixed(v) => DtPolicy::Fixed(v),
            DtSpec::HSquared(s) => DtPolicy::HSquared(s),
            DtSpec::Auto => match (theta, for_study) {
                // studies chase spatial rates: keep time error subdominant
                (Theta::Monolithic, true) => DtPolicy::HSquared(0.5),
                _ => DtPolicy::HSquared(1.0),
            },
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let out = std::env::var_os("PF_OUTPUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        Self {
            scenario: "test1".into(),
            param_set: "test1-soft".into(),
            overrides: Vec::new(),
            n: 6,
            mesh_list: None,
            theta: Theta::Monolithic,
            dt: DtSpec::Auto,
            final_time: 1.0,
            output_dir: out,
            emit_vtk: true,
            emit_monitors: true,
            emit_csv: true,
            pretty: false,
            jobs: 1,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            linear_tol: 1e-12,
            flux_source: 1.0,
        }
    }
}

impl RunConfig {
    /// Resolve the physical parameters: named set plus field overrides.
    pub fn params(&self) -> Result<ModelParams> {
        let mut p = scenario::param_set(&self.param_set)?;
        for (key, value) in &self.overrides {
            match key.as_str() {
                "lambda" => p.lambda = *value,
                "mu" => p.mu = *value,
                "alpha" => p.alpha = *value,
                "c0" => p.c0 = *value,
                "permeability" => p.permeability = *value,
                "mu_f" => p.mu_f = *value,
                "rho_f" => p.rho_f = *value,
                "gravity_x" => p.gravity[0] = *value,
                "gravity_y" => p.gravity[1] = *value,
                _ => {
                    return Err(Error::InvalidArgument(format!("unknown parameter '{key}'")));
                }
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let params = self.params()?;
        let mut s = match self.scenario.as_str() {
            "pure-flux-source" => scenario::pure_flux_source(params, self.flux_source),
            name => scenario::by_name(name, params)?,
        };
        s.final_time = self.final_time;
        Ok(s)
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("malformed value for '{key}': '{value}'")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::InvalidArgument(format!("malformed value for '{key}': '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("malformed value for '{key}': '{value}'"))),
    }
}

fn parse_theta(value: &str) -> Result<Theta> {
    match value {
        "0" => Ok(Theta::Decoupled),
        "1" => Ok(Theta::Monolithic),
        _ => Err(Error::InvalidArgument(format!("theta must be 0 or 1, got '{value}'"))),
    }
}

fn parse_dt(value: &str) -> Result<DtSpec> {
    match value {
        "h2" => Ok(DtSpec::HSquared(1.0)),
        "h2/2" => Ok(DtSpec::HSquared(0.5)),
        "auto" => Ok(DtSpec::Auto),
        v => Ok(DtSpec::Fixed(parse_f64("dt", v)?)),
    }
}

fn parse_mesh_list(value: &str) -> Result<Vec<usize>> {
    let ns: Result<Vec<usize>> = value.split(',').map(|s| parse_usize("mesh_list", s.trim())).collect();
    let ns = ns?;
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::InvalidArgument("mesh_list needs positive entries".into()));
    }
    Ok(ns)
}

const PARAM_KEYS: [&str; 9] = [
    "lambda",
    "mu",
    "alpha",
    "c0",
    "permeability",
    "mu_f",
    "rho_f",
    "gravity_x",
    "gravity_y",
];

/// Apply one key = value pair (section-qualified) to the config.
fn apply_key(config: &mut RunConfig, section: &str, key: &str, value: &str) -> Result<()> {
    match (section, key) {
        ("run", "scenario") | ("", "scenario") => config.scenario = value.into(),
        ("run", "params") | ("", "params") => config.param_set = value.into(),
        ("run", "n") | ("", "n") => {
            config.n = parse_usize(key, value)?;
            if config.n == 0 {
                return Err(Error::InvalidArgument("n must be >= 1".into()));
            }
        }
        ("run", "mesh_list") | ("", "mesh_list") => {
            config.mesh_list = Some(parse_mesh_list(value)?)
        }
        ("run", "theta") | ("", "theta") => config.theta = parse_theta(value)?,
        ("run", "dt") | ("", "dt") => config.dt = parse_dt(value)?,
        ("run", "T") | ("", "T") => config.final_time = parse_f64(key, value)?,
        ("run", "output_dir") | ("", "output_dir") => config.output_dir = PathBuf::from(value),
        ("run", "vtk") | ("", "vtk") => config.emit_vtk = parse_bool(key, value)?,
        ("run", "monitors") | ("", "monitors") => config.emit_monitors = parse_bool(key, value)?,
        ("run", "csv") | ("", "csv") => config.emit_csv = parse_bool(key, value)?,
        ("run", "pretty") | ("", "pretty") => config.pretty = parse_bool(key, value)?,
        ("run", "jobs") | ("", "jobs") => config.jobs = parse_usize(key, value)?.max(1),
        ("run", "flux_source") | ("", "flux_source") => {
            config.flux_source = parse_f64(key, value)?
        }
        ("newton", "tol") => config.newton_tol = parse_f64(key, value)?,
        ("newton", "max_iter") => config.newton_max_iter = parse_usize(key, value)?,
        ("linear", "tol") => config.linear_tol = parse_f64(key, value)?,
        ("params", k) if PARAM_KEYS.contains(&k) => {
            config.overrides.push((k.to_string(), parse_f64(k, value)?))
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown key '{key}' in section '[{section}]'"
            )))
        }
    }
    Ok(())
}

/// Parse an INI-style config file into an existing config.
pub fn parse_file(config: &mut RunConfig, text: &str) -> Result<()> {
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidArgument(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        apply_key(config, &section, key.trim(), value.trim())?;
    }
    Ok(())
}

/// Parse command-line flags (after the subcommand) on top of the config.
pub fn parse_flags(config: &mut RunConfig, args: &[String]) -> Result<()> {
    let mut it = args.iter().peekable();
    let need_value = |it: &mut std::iter::Peekable<std::slice::Iter<String>>,
                          flag: &str|
     -> Result<String> {
        it.next()
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("flag {flag} needs a value")))
    };
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--scenario" => config.scenario = need_value(&mut it, arg)?,
            "--params" => config.param_set = need_value(&mut it, arg)?,
            "--n" => config.n = parse_usize("n", &need_value(&mut it, arg)?)?,
            "--mesh-list" => config.mesh_list = Some(parse_mesh_list(&need_value(&mut it, arg)?)?),
            "--theta" => config.theta = parse_theta(&need_value(&mut it, arg)?)?,
            "--dt" => config.dt = parse_dt(&need_value(&mut it, arg)?)?,
            "--T" => config.final_time = parse_f64("T", &need_value(&mut it, arg)?)?,
            "--out" => config.output_dir = PathBuf::from(need_value(&mut it, arg)?),
            "--vtk" => config.emit_vtk = true,
            "--no-vtk" => config.emit_vtk = false,
            "--monitors" => config.emit_monitors = true,
            "--no-monitors" => config.emit_monitors = false,
            "--pretty" => config.pretty = true,
            "--jobs" => config.jobs = parse_usize("jobs", &need_value(&mut it, arg)?)?.max(1),
            "--flux-source" => config.flux_source = parse_f64("flux_source", &need_value(&mut it, arg)?)?,
            "--newton-tol" => config.newton_tol = parse_f64("newton tol", &need_value(&mut it, arg)?)?,
            "--newton-max-iter" => {
                config.newton_max_iter = parse_usize("newton max_iter", &need_value(&mut it, arg)?)?
            }
            "--linear-tol" => config.linear_tol = parse_f64("linear tol", &need_value(&mut it, arg)?)?,
            "--lambda" | "--mu" | "--alpha" | "--c0" | "--permeability" | "--mu-f" | "--rho-f"
            | "--gravity-x" | "--gravity-y" => {
                let key = arg.trim_start_matches("--").replace('-', "_");
                let v = parse_f64(&key, &need_value(&mut it, arg)?)?;
                config.overrides.push((key, v));
            }
            other => {
                return Err(Error::InvalidArgument(format!("unknown flag '{other}'")));
            }
        }
    }
    Ok(())
}

/// Build the final configuration from an optional file and flags.
pub fn resolve(config_path: Option<&str>, flags: &[String]) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        parse_file(&mut config, &text)?;
    }
    parse_flags(&mut config, flags)?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documentation() {
        let c = RunConfig::default();
        assert_eq!(c.scenario, "test1");
        assert_eq!(c.param_set, "test1-soft");
        assert_eq!(c.n, 6);
        assert_eq!(c.theta, Theta::Monolithic);
        assert_eq!(c.dt, DtSpec::Auto);
        // run default: dt = h^2
        match c.dt.policy(c.theta, false) {
            DtPolicy::HSquared(s) => assert_eq!(s, 1.0),
            _ => panic!("expected h^2 policy"),
        }
    }

    #[test]
    fn file_and_flag_merge() {
        let mut c = RunConfig::default();
        parse_file(
            &mut c,
            "[run]\nscenario = test2\nn = 12\ntheta = 0\n[params]\nlambda = 5.0\n[newton]\ntol = 1e-8\n",
        )
        .unwrap();
        assert_eq!(c.scenario, "test2");
        assert_eq!(c.n, 12);
        assert_eq!(c.theta, Theta::Decoupled);
        assert_eq!(c.newton_tol, 1e-8);
        // flag overrides the file's lambda
        parse_flags(&mut c, &["--lambda".into(), "1e3".into()]).unwrap();
        let p = c.params().unwrap();
        assert_eq!(p.lambda, 1e3);
    }

    #[test]
    fn lambda_override_beats_table_value() {
        let mut c = RunConfig::default();
        parse_flags(&mut c, &["--lambda".into(), "1e3".into()]).unwrap();
        let p = c.params().unwrap();
        assert_eq!(p.lambda, 1e3);
        assert_eq!(p.mu, 0.1); // rest untouched
    }

    #[test]
    fn mesh_list_parses() {
        let mut c = RunConfig::default();
        parse_flags(&mut c, &["--mesh-list".into(), "3,6,12,24".into()]).unwrap();
        assert_eq!(c.mesh_list, Some(vec![3, 6, 12, 24]));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = RunConfig::default();
        assert!(parse_file(&mut c, "bogus = 1\n").is_err());
        assert!(parse_file(&mut c, "[params]\nbogus = 1\n").is_err());
        assert!(parse_flags(&mut c, &["--frobnicate".into()]).is_err());
        assert!(parse_file(&mut c, "[run]\ntheta = 2\n").is_err());
        assert!(parse_file(&mut c, "[run]\nn = abc\n").is_err());
    }

    #[test]
    fn dt_spellings() {
        assert_eq!(parse_dt("h2").unwrap(), DtSpec::HSquared(1.0));
        assert_eq!(parse_dt("h2/2").unwrap(), DtSpec::HSquared(0.5));
        assert_eq!(parse_dt("0.025").unwrap(), DtSpec::Fixed(0.025));
        assert!(parse_dt("h3").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut c = RunConfig::default();
        parse_file(&mut c, "# comment\n\n[run]\nn = 4 ; trailing\n").unwrap();
        assert_eq!(c.n, 4);
    }
}
