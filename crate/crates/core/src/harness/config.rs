//! Flat key/value settings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{HarnessError, Result};
use crate::extrapolation::HjPrefactor;
use crate::multiphase::{MultiphaseConfig, MultiphaseScheme};
use crate::schemes::{Scheme, SchemeConfig};
use crate::solver::SolverConfig;

/// Raw settings as strings, keyed by name. Later layers overwrite earlier ones.
pub type RawConfig = BTreeMap<String, String>;

pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, help: &'static str) -> Key {
    Key { name, help }
}

pub const KEYS: &[Key] = &[
    key("problem", "fp1d, fp2d, pm2d, diffusion, pm-demo or multiphase"),
    key("scheme", "ljko, evbdf2, vim or bdf2"),
    key("nx", "cells per unit length at level 0"),
    key("tau", "time step at level 0"),
    key("levels", "number of refinement levels in a sweep"),
    key("first_level", "index of the coarsest level; nx and tau are refined this many times first"),
    key("t_start", "initial time of the exact solution"),
    key("t_end", "final time"),
    key("window_start", "errors are summed over times after this one"),
    key("window", "restart (run from window_start) or restrict (run from t_start, sum after window_start)"),
    key("g", "drift strength of the Fokker-Planck potential V = -g x"),
    key("delta", "porous-medium exponent"),
    key("normalize", "rescale the initial density to unit mass"),
    key("alpha", "extrapolation parameter, beta = alpha - 1"),
    key("init_substeps", "LJKO sub-steps producing the second state"),
    key("hj_prefactor", "elapsed or reciprocal"),
    key("vim_fresh_potential", "recompute the VIM interpolation potential"),
    key("snapshots", "comma-separated output times"),
    key("capillary", "capillary strength of the multiphase demo"),
    key("barrier_init", "initial barrier parameter, relative to the mean density"),
    key("barrier_shrink", "barrier reduction factor per stage"),
    key("barrier_final", "final barrier parameter, relative to the mean density"),
    key("newton_tol", "Newton tolerance, relative to the mean density"),
    key("max_newton", "Newton iterations per barrier stage"),
    key("fraction_to_boundary", "fraction-to-boundary parameter"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    /// Fokker-Planck on `[0, 1]` against the exact solution.
    Fp1d,
    /// Fokker-Planck on `[0, 1]^2`, exact solution in `x`.
    Fp2d,
    /// Porous medium on `[0, 1]^2` against the Barenblatt profile.
    Pm2d,
    /// Pure diffusion of a Gaussian bump on `[0, 1]`.
    Diffusion,
    /// Porous medium with drift from an indicator datum on `[0, 1]`.
    PmDemo,
    /// Water and oil in a vertical rectangle.
    Multiphase,
}

impl Problem {
    pub const ALL: [Problem; 6] =
        [Problem::Fp1d, Problem::Fp2d, Problem::Pm2d, Problem::Diffusion, Problem::PmDemo, Problem::Multiphase];

    pub fn name(self) -> &'static str {
        match self {
            Problem::Fp1d => "fp1d",
            Problem::Fp2d => "fp2d",
            Problem::Pm2d => "pm2d",
            Problem::Diffusion => "diffusion",
            Problem::PmDemo => "pm-demo",
            Problem::Multiphase => "multiphase",
        }
    }

    pub fn has_exact(self) -> bool {
        matches!(self, Problem::Fp1d | Problem::Fp2d | Problem::Pm2d)
    }
}

impl FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Problem::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown problem `{s}`"))
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Start the scheme at `window_start` from the exact solution.
    #[default]
    Restart,
    /// Start at `t_start`; only times after `window_start` enter the error.
    Restrict,
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "restart" => Ok(Window::Restart),
            "restrict" => Ok(Window::Restrict),
            other => Err(format!("unknown window `{other}` (expected restart or restrict)")),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Restart => "restart",
            Window::Restrict => "restrict",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub problem: Problem,
    pub scheme: Scheme,
    pub nx: usize,
    pub tau: f64,
    pub levels: usize,
    pub first_level: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub window_start: f64,
    pub window: Window,
    pub g: f64,
    pub delta: f64,
    pub normalize: bool,
    pub alpha: f64,
    pub init_substeps: usize,
    pub prefactor: HjPrefactor,
    pub vim_fresh_potential: bool,
    pub snapshots: Vec<f64>,
    pub capillary: f64,
    pub solver: SolverConfig,
}

/// Start time of the Barenblatt test for exponent `delta`.
pub fn barenblatt_t0(delta: f64) -> f64 {
    if delta >= 4.0 {
        1e-6
    } else if delta >= 3.0 {
        1e-5
    } else {
        1e-4
    }
}

impl Settings {
    pub fn defaults(problem: Problem) -> Settings {
        let base = Settings {
            problem,
            scheme: Scheme::Evbdf2,
            nx: 10,
            tau: 0.05,
            levels: 1,
            first_level: 0,
            t_start: 0.0,
            t_end: 0.25,
            window_start: 0.0,
            window: Window::Restart,
            g: 1.0,
            delta: 2.0,
            normalize: false,
            alpha: 4.0 / 3.0,
            init_substeps: 1,
            prefactor: HjPrefactor::default(),
            vim_fresh_potential: false,
            snapshots: Vec::new(),
            capillary: 0.05,
            solver: SolverConfig::default(),
        };
        match problem {
            Problem::Fp1d => base,
            Problem::Fp2d => Settings { nx: 8, ..base },
            Problem::Pm2d => Settings { nx: 8, tau: 2e-4, t_start: 1e-4, t_end: 1.1e-3, ..base },
            Problem::Diffusion => Settings { nx: 50, tau: 0.01, t_end: 0.06, snapshots: vec![0.02, 0.04, 0.06], ..base },
            Problem::PmDemo => {
                Settings { nx: 100, tau: 0.002, t_end: 0.02, snapshots: vec![0.004, 0.008, 0.02], ..base }
            }
            Problem::Multiphase => Settings {
                scheme: Scheme::Ljko,
                nx: 10,
                tau: 1.0,
                t_end: 120.0,
                snapshots: vec![8.0, 16.0, 24.0, 48.0, 120.0],
                ..base
            },
        }
    }

    /// Typed settings from raw key/value pairs. Unknown keys are rejected.
    pub fn from_raw(raw: &RawConfig) -> Result<Settings> {
        for k in raw.keys() {
            if !KEYS.iter().any(|key| key.name == k) {
                return Err(HarnessError::Config(format!("unknown key `{k}`")));
            }
        }
        let problem = match raw.get("problem") {
            Some(v) => parse::<Problem>("problem", v)?,
            None => Problem::Fp1d,
        };
        let mut s = Settings::defaults(problem);
        if problem == Problem::Pm2d && raw.contains_key("delta") {
            s.delta = parse("delta", &raw["delta"])?;
            s.t_start = barenblatt_t0(s.delta);
            s.t_end = s.t_start + 1e-3;
        }
        if problem == Problem::Pm2d && raw.contains_key("t_start") && !raw.contains_key("t_end") {
            s.t_start = parse("t_start", &raw["t_start"])?;
            s.t_end = s.t_start + 1e-3;
        }
        for (k, v) in raw {
            s.set(k, v)?;
        }
        s.validate()?;
        Ok(s)
    }

    fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "problem" => {}
            "scheme" => self.scheme = parse(k, v)?,
            "nx" => self.nx = parse(k, v)?,
            "tau" => self.tau = parse(k, v)?,
            "levels" => self.levels = parse(k, v)?,
            "first_level" => self.first_level = parse(k, v)?,
            "t_start" => self.t_start = parse(k, v)?,
            "t_end" => self.t_end = parse(k, v)?,
            "window_start" => self.window_start = parse(k, v)?,
            "window" => self.window = parse(k, v)?,
            "g" => self.g = parse(k, v)?,
            "delta" => self.delta = parse(k, v)?,
            "normalize" => self.normalize = parse(k, v)?,
            "alpha" => self.alpha = parse(k, v)?,
            "init_substeps" => self.init_substeps = parse(k, v)?,
            "hj_prefactor" => self.prefactor = parse(k, v)?,
            "vim_fresh_potential" => self.vim_fresh_potential = parse(k, v)?,
            "snapshots" => {
                self.snapshots = v
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| parse::<f64>(k, p))
                    .collect::<Result<_>>()?
            }
            "capillary" => self.capillary = parse(k, v)?,
            "barrier_init" => self.solver.barrier_init = parse(k, v)?,
            "barrier_shrink" => self.solver.barrier_shrink = parse(k, v)?,
            "barrier_final" => self.solver.barrier_final = parse(k, v)?,
            "newton_tol" => self.solver.newton_tol = parse(k, v)?,
            "max_newton" => self.solver.max_newton = parse(k, v)?,
            "fraction_to_boundary" => self.solver.fraction_to_boundary = parse(k, v)?,
            other => return Err(HarnessError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.nx == 0 || self.levels == 0 {
            return bad("nx and levels must be positive".into());
        }
        if self.first_level + self.levels > 20 {
            return bad("too many refinement levels".into());
        }
        if !(self.t_end > self.start_time()) {
            return bad(format!("t_end {} must exceed the start time {}", self.t_end, self.start_time()));
        }
        if self.problem == Problem::Pm2d && !(self.t_start > 0.0) {
            return bad("the Barenblatt profile needs t_start > 0".into());
        }
        if self.problem == Problem::Multiphase && !matches!(self.scheme, Scheme::Ljko | Scheme::Evbdf2) {
            return bad(format!("multiphase runs support ljko and evbdf2, not {}", self.scheme));
        }
        if !(self.capillary >= 0.0) {
            return bad("capillary must be nonnegative".into());
        }
        self.scheme_config(0).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        for m in 0..self.levels {
            self.steps(m)?;
        }
        Ok(())
    }

    /// Time at which the scheme starts.
    pub fn start_time(&self) -> f64 {
        match self.window {
            Window::Restart => self.t_start.max(self.window_start),
            Window::Restrict => self.t_start,
        }
    }

    /// Refinement exponent of sweep level `m`.
    fn refinement(&self, m: usize) -> usize {
        self.first_level + m
    }

    pub fn level_nx(&self, m: usize) -> usize {
        self.nx << self.refinement(m)
    }

    pub fn level_tau(&self, m: usize) -> f64 {
        self.tau / (1u64 << self.refinement(m)) as f64
    }

    /// Number of steps from the start time to `t_end` at level `m`.
    pub fn steps(&self, m: usize) -> Result<usize> {
        whole_steps(self.t_end - self.start_time(), self.level_tau(m))
            .ok_or_else(|| HarnessError::Config(format!("t_end is not a whole number of steps of {}", self.level_tau(m))))
    }

    /// Step indices of the snapshot times at level `m`; empty means every step.
    pub fn snapshot_steps(&self, m: usize) -> Result<Vec<usize>> {
        let t0 = self.start_time();
        let mut out = Vec::new();
        for &t in &self.snapshots {
            let n = whole_steps(t - t0, self.level_tau(m))
                .ok_or_else(|| HarnessError::Config(format!("snapshot time {t} is not on the time grid")))?;
            if n > self.steps(m)? {
                return Err(HarnessError::Config(format!("snapshot time {t} is after t_end")));
            }
            out.push(n);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn scheme_config(&self, m: usize) -> SchemeConfig {
        SchemeConfig {
            scheme: self.scheme,
            tau: self.level_tau(m),
            steps: self.steps(m).unwrap_or(0),
            alpha: self.alpha,
            init_substeps: self.init_substeps,
            prefactor: self.prefactor,
            vim_fresh_potential: self.vim_fresh_potential,
            solver: self.solver.clone(),
        }
    }

    pub fn multiphase_config(&self, m: usize) -> MultiphaseConfig {
        MultiphaseConfig {
            scheme: if self.scheme == Scheme::Evbdf2 { MultiphaseScheme::Evbdf2 } else { MultiphaseScheme::Ljko },
            tau: self.level_tau(m),
            steps: self.steps(m).unwrap_or(0),
            snapshot_times: self.snapshots.iter().map(|t| t - self.start_time()).collect(),
            alpha: self.alpha,
            prefactor: self.prefactor,
            solver: self.solver.clone(),
        }
    }
}

fn whole_steps(span: f64, tau: f64) -> Option<usize> {
    if !(span >= 0.0) {
        return None;
    }
    let n = (span / tau).round();
    ((n * tau - span).abs() <= 1e-9 * tau.max(span)).then_some(n as usize)
}

fn parse<T: FromStr>(k: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| HarnessError::Config(format!("{k} = `{v}`: {e}")))
}

/// Flatten a TOML document into raw pairs. Arrays become comma-separated lists.
pub fn parse_toml(text: &str) -> Result<RawConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
    let mut raw = RawConfig::new();
    for (k, v) in table {
        raw.insert(k.clone(), scalar(&k, &v)?);
    }
    Ok(raw)
}

pub fn read_toml(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_toml(&text)
}

fn scalar(k: &str, v: &toml::Value) -> Result<String> {
    use toml::Value;
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        Value::Array(items) => Ok(items.iter().map(|x| scalar(k, x)).collect::<Result<Vec<_>>>()?.join(",")),
        _ => Err(HarnessError::Config(format!("key `{k}` must be a scalar or an array"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(pairs: &[(&str, &str)]) -> RawConfig {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_validate() {
        for p in Problem::ALL {
            Settings::defaults(p).validate().unwrap();
            assert_eq!(p.to_string().parse::<Problem>().unwrap(), p);
        }
    }

    #[test]
    fn keys_override_defaults() {
        let s = Settings::from_raw(&raw(&[("scheme", "vim"), ("nx", "20"), ("tau", "0.025"), ("max_newton", "50")])).unwrap();
        assert_eq!(s.scheme, Scheme::Vim);
        assert_eq!(s.nx, 20);
        assert_eq!(s.solver.max_newton, 50);
        assert_eq!(s.steps(0).unwrap(), 10);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(Settings::from_raw(&raw(&[("bogus", "1")])), Err(HarnessError::Config(_))));
        assert!(Settings::from_raw(&raw(&[("tau", "abc")])).is_err());
        assert!(Settings::from_raw(&raw(&[("tau", "0.03")])).is_err());
        assert!(Settings::from_raw(&raw(&[("problem", "multiphase"), ("scheme", "vim")])).is_err());
        assert!(Settings::from_raw(&raw(&[("window", "late")])).is_err());
    }

    #[test]
    fn level_refinement() {
        let s = Settings::from_raw(&raw(&[("levels", "3"), ("first_level", "1")])).unwrap();
        assert_eq!(s.level_nx(0), 20);
        assert_eq!(s.level_nx(2), 80);
        assert_eq!(s.level_tau(2), 0.05 / 8.0);
        assert_eq!(s.steps(2).unwrap(), 40);
    }

    #[test]
    fn barenblatt_start_follows_delta() {
        let s = Settings::from_raw(&raw(&[("problem", "pm2d"), ("delta", "3")])).unwrap();
        assert_eq!(s.t_start, 1e-5);
        assert!((s.t_end - 1.01e-3).abs() < 1e-15);
        assert_eq!(s.steps(0).unwrap(), 5);
        let s = Settings::from_raw(&raw(&[("problem", "pm2d"), ("delta", "4"), ("t_end", "0.000401")])).unwrap();
        assert_eq!(s.steps(0).unwrap(), 2);
    }

    #[test]
    fn window_moves_the_start() {
        let restart = Settings::from_raw(&raw(&[("window_start", "0.05")])).unwrap();
        assert_eq!(restart.start_time(), 0.05);
        assert_eq!(restart.steps(0).unwrap(), 4);
        let restrict = Settings::from_raw(&raw(&[("window_start", "0.05"), ("window", "restrict")])).unwrap();
        assert_eq!(restrict.start_time(), 0.0);
        assert_eq!(restrict.steps(0).unwrap(), 5);
    }

    #[test]
    fn snapshot_steps_on_grid() {
        let s = Settings::defaults(Problem::Diffusion);
        assert_eq!(s.snapshot_steps(0).unwrap(), vec![2, 4, 6]);
        let off = Settings { snapshots: vec![0.015], ..s.clone() };
        assert!(off.snapshot_steps(0).is_err());
    }

    #[test]
    fn toml_flattening() {
        let raw = parse_toml("scheme = \"bdf2\"\nnx = 40\ntau = 0.0125\nsnapshots = [0.1, 0.2]\nnormalize = true\n").unwrap();
        assert_eq!(raw["nx"], "40");
        assert_eq!(raw["snapshots"], "0.1,0.2");
        let s = Settings::from_raw(&raw).unwrap();
        assert_eq!(s.snapshots, vec![0.1, 0.2]);
        assert!(s.normalize);
        assert!(parse_toml("[solver]\nx = 1\n").is_err());
    }
}
