//! Named configurations and the reference values `--check` compares against.

use super::config::RawConfig;
use super::study::ConvergenceReport;
use super::{HarnessError, Result};

pub struct Preset {
    pub name: &'static str,
    pub about: &'static str,
    pub pairs: &'static [(&'static str, &'static str)],
    pub reference: Option<Reference>,
}

/// Published values a sweep is held to.
#[derive(Clone, Copy, Debug)]
pub enum Reference {
    /// Errors within `error_tol` (relative) and rates within `rate_tol`.
    Column { errors: &'static [f64], rates: &'static [f64], error_tol: f64, rate_tol: f64 },
    /// Every rate after the first at most `max`.
    Degraded { max: f64 },
    /// Increasing rates with the last at least `min_final`.
    Increasing { min_final: f64 },
    /// Last rate at least `min` for `delta = 2`, in `range` otherwise.
    PorousMedium { min: f64, range: (f64, f64) },
}

pub const BDF2_ERRORS: [f64; 6] = [2.091e-2, 6.376e-3, 1.791e-3, 4.849e-4, 1.280e-4, 3.324e-5];
pub const BDF2_RATES: [f64; 5] = [1.713, 1.832, 1.885, 1.922, 1.945];
pub const EVBDF2_ERRORS: [f64; 6] = [2.217e-2, 7.016e-3, 2.044e-3, 5.653e-4, 1.508e-4, 3.933e-5];
pub const EVBDF2_RATES: [f64; 5] = [1.660, 1.779, 1.854, 1.906, 1.939];
pub const VIM_ERRORS: [f64; 6] = [5.895e-2, 3.615e-2, 2.294e-2, 1.468e-2, 1.234e-2, 9.983e-3];
pub const VIM_LATE_ERRORS: [f64; 6] = [4.667e-3, 1.024e-3, 2.517e-4, 6.264e-5, 1.562e-5, 3.901e-6];
pub const VIM_LATE_RATES: [f64; 5] = [2.188, 2.025, 2.007, 2.003, 2.002];
pub const FP2D_ERRORS: [f64; 5] = [2.111e-2, 6.800e-3, 2.017e-3, 5.669e-4, 1.535e-4];

macro_rules! table1 {
    ($($extra:expr),*) => {
        &[("problem", "fp1d"), ("nx", "10"), ("tau", "0.05"), ("levels", "6"), ("t_end", "0.25"), ("g", "1"), $($extra),*]
    };
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "table1-ljko",
        about: "1D Fokker-Planck, first-order LJKO, six levels",
        pairs: table1![("scheme", "ljko")],
        reference: None,
    },
    Preset {
        name: "table1-evbdf2",
        about: "1D Fokker-Planck, EVBDF2, six levels",
        pairs: table1![("scheme", "evbdf2")],
        reference: Some(Reference::Column { errors: &EVBDF2_ERRORS, rates: &EVBDF2_RATES, error_tol: 0.05, rate_tol: 0.05 }),
    },
    Preset {
        name: "table1-bdf2",
        about: "1D Fokker-Planck, naive BDF2, six levels",
        pairs: table1![("scheme", "bdf2")],
        reference: Some(Reference::Column { errors: &BDF2_ERRORS, rates: &BDF2_RATES, error_tol: 0.05, rate_tol: 0.05 }),
    },
    Preset {
        name: "table1-vim",
        about: "1D Fokker-Planck, VIM on [0, 0.25]",
        pairs: table1![("scheme", "vim")],
        reference: Some(Reference::Degraded { max: 0.8 }),
    },
    Preset {
        name: "table1-vim-late",
        about: "1D Fokker-Planck, VIM restarted at t = 0.05 from the exact solution",
        pairs: table1![("scheme", "vim"), ("window_start", "0.05"), ("window", "restart")],
        reference: Some(Reference::Column { errors: &VIM_LATE_ERRORS, rates: &VIM_LATE_RATES, error_tol: 0.10, rate_tol: 0.05 }),
    },
    Preset {
        name: "table2-fp2d",
        about: "2D Fokker-Planck on Cartesian grids, EVBDF2",
        pairs: &[("problem", "fp2d"), ("scheme", "evbdf2"), ("nx", "8"), ("tau", "0.05"), ("levels", "5"), ("t_end", "0.25")],
        reference: Some(Reference::Increasing { min_final: 1.75 }),
    },
    Preset {
        name: "table3-pm",
        about: "2D porous medium against the Barenblatt profile, EVBDF2 (set --delta)",
        pairs: &[("problem", "pm2d"), ("scheme", "evbdf2"), ("nx", "8"), ("tau", "2e-4"), ("levels", "5"), ("delta", "2")],
        reference: Some(Reference::PorousMedium { min: 1.7, range: (1.3, 2.2) }),
    },
    Preset {
        name: "demo-diffusion",
        about: "diffusion of a Gaussian bump, 50 cells, tau = 0.01",
        pairs: &[("problem", "diffusion")],
        reference: None,
    },
    Preset {
        name: "demo-pm",
        about: "porous medium with drift from an indicator datum, tau = 0.002",
        pairs: &[("problem", "pm-demo"), ("delta", "2"), ("g", "1")],
        reference: None,
    },
    Preset {
        name: "demo-multiphase",
        about: "water above oil in [0, 1] x [0, 2], 120 LJKO steps",
        pairs: &[("problem", "multiphase")],
        reference: None,
    },
];

pub fn find(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        HarnessError::Usage(format!("unknown preset `{name}` (available: {})", names.join(", ")))
    })
}

impl Preset {
    pub fn raw(&self) -> RawConfig {
        self.pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }
}

/// One line of a reference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub pass: bool,
    pub what: String,
}

/// Compare a sweep with a reference; levels missing from the sweep are skipped.
pub fn check(reference: &Reference, report: &ConvergenceReport, delta: f64) -> Vec<CheckLine> {
    let errors: Vec<f64> = report.levels.iter().map(|l| l.error).collect();
    let rates = &report.rates;
    let mut out = Vec::new();
    match *reference {
        Reference::Column { errors: want, rates: want_rates, error_tol, rate_tol } => {
            for (m, (e, w)) in errors.iter().zip(want).enumerate() {
                let rel = (e - w).abs() / w;
                out.push(CheckLine { pass: rel <= error_tol, what: format!("level {m}: error {e:.4e} vs {w:.3e} ({:.1}%)", 100.0 * rel) });
            }
            for (m, (r, w)) in rates.iter().zip(want_rates).enumerate() {
                out.push(CheckLine {
                    pass: (r - w).abs() <= rate_tol,
                    what: format!("level {}: rate {r:.3} vs {w:.3}", m + 1),
                });
            }
        }
        Reference::Degraded { max } => {
            for (m, r) in rates.iter().enumerate().skip(1) {
                out.push(CheckLine { pass: *r <= max, what: format!("level {}: rate {r:.3} <= {max}", m + 1) });
            }
        }
        Reference::Increasing { min_final } => {
            let increasing = rates.windows(2).all(|w| w[1] > w[0]);
            out.push(CheckLine { pass: increasing && !rates.is_empty(), what: format!("rates increasing: {rates:.3?}") });
            if let Some(last) = rates.last() {
                out.push(CheckLine { pass: *last >= min_final, what: format!("final rate {last:.3} >= {min_final}") });
            }
        }
        Reference::PorousMedium { min, range } => {
            if let Some(&last) = rates.last() {
                let (pass, what) = if delta == 2.0 {
                    (last >= min, format!("delta = 2: final rate {last:.3} >= {min}"))
                } else {
                    (last >= range.0 && last <= range.1, format!("delta = {delta}: final rate {last:.3} in [{}, {}]", range.0, range.1))
                };
                out.push(CheckLine { pass, what });
            }
        }
    }
    if out.is_empty() {
        out.push(CheckLine { pass: false, what: "not enough levels to compare".into() });
    }
    out
}
