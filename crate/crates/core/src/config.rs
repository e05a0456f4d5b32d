//! JSON run configuration.
//!
//! A configuration file fully determines a run. All keys are optional and
//! fall back to experiment defaults; command-line flags override file
//! values. Tableaux may be given by registry name or inline, with
//! coefficients as numbers or rational strings ("1/6").

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::forward::{PhiSetting, ProblemConfig};
use crate::grid::Grid1D;
use crate::rational::Coeff;
use crate::relaxation::RelaxationPolicy;
use crate::tableau::{builtin_scheme, ButcherTableau, ExactTableau, IMEXPair, SchemeCoeffs};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SchemeSpec {
    Name(String),
    Custom {
        name: String,
        explicit: TableauSpec,
        implicit: TableauSpec,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableauSpec {
    pub a: Vec<Vec<Coeff>>,
    pub b: Vec<Coeff>,
    /// Optional; defaults to the row sums of `a`.
    pub c: Option<Vec<Coeff>>,
}

impl TableauSpec {
    fn resolve(&self) -> Result<(ButcherTableau, Option<ExactTableau>)> {
        let mut all_exact = true;
        let mut a = Vec::with_capacity(self.a.len());
        let mut a_exact = Vec::with_capacity(self.a.len());
        for row in &self.a {
            let mut rf = Vec::with_capacity(row.len());
            let mut re = Vec::with_capacity(row.len());
            for cell in row {
                let (v, ex) = cell.resolve()?;
                rf.push(v);
                match ex {
                    Some(r) => re.push(r),
                    None => all_exact = false,
                }
            }
            a.push(rf);
            a_exact.push(re);
        }
        let mut b = Vec::new();
        let mut b_exact = Vec::new();
        for cell in &self.b {
            let (v, ex) = cell.resolve()?;
            b.push(v);
            match ex {
                Some(r) => b_exact.push(r),
                None => all_exact = false,
            }
        }
        let (c, c_exact) = match &self.c {
            Some(cs) => {
                let mut c = Vec::new();
                let mut ce = Vec::new();
                for cell in cs {
                    let (v, ex) = cell.resolve()?;
                    c.push(v);
                    match ex {
                        Some(r) => ce.push(r),
                        None => all_exact = false,
                    }
                }
                (c, ce)
            }
            None => {
                let c: Vec<f64> = a
                    .iter()
                    .map(|row| row.iter().sum())
                    .collect();
                let ce: Vec<_> = if all_exact {
                    a_exact
                        .iter()
                        .map(|row| row.iter().copied().sum())
                        .collect()
                } else {
                    Vec::new()
                };
                (c, ce)
            }
        };
        let tab = ButcherTableau { a, b, c };
        let exact = all_exact.then(|| ExactTableau {
            a: a_exact,
            b: b_exact,
            c: c_exact,
        });
        Ok((tab, exact))
    }
}

impl SchemeSpec {
    pub fn resolve(&self) -> Result<IMEXPair> {
        match self {
            SchemeSpec::Name(name) => builtin_scheme(name),
            SchemeSpec::Custom {
                name,
                explicit,
                implicit,
            } => {
                let (ex, ex_exact) = explicit.resolve()?;
                let (im, im_exact) = implicit.resolve()?;
                let mut pair = IMEXPair::new(name.clone(), ex, im)?;
                if let (Some(e), Some(i)) = (ex_exact, im_exact) {
                    pair.exact = Some((e, i));
                    pair.validate()?;
                }
                Ok(pair)
            }
        }
    }
}

/// Initial/target data presets for the generic `forward` and `optimize`
/// experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataPreset {
    /// rho0 = cos x, j0 = 0, rho_d = exp(-T) cos x (the manufactured
    /// diffusion-limit problem with a known exact control).
    HeatCosine,
    /// rho0 = j0 = 0, rho_d = (1 - x^2)/2 (the boundary-control benchmark).
    Benchmark,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Forward,
    Optimize,
    OrderStudy,
    Benchmark,
    CeVerify,
    CheckScheme,
}

fn default_phi() -> serde_json::Value {
    serde_json::Value::String("auto".into())
}

/// The raw file schema. Every field optional; `resolve` applies defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: Option<SchemeSpec>,
    pub eps: Option<f64>,
    pub nu: Option<f64>,
    pub t_final: Option<f64>,
    pub n_steps: Option<usize>,
    pub cells: Option<usize>,
    pub u_lo: Option<f64>,
    pub u_hi: Option<f64>,
    #[serde(default = "default_phi")]
    pub phi: serde_json::Value,
    pub relaxation: Option<RelaxationPolicy>,
    pub experiment: Option<ExperimentKind>,
    pub data: Option<DataPreset>,
    /// Sweep lists for the study experiments.
    pub eps_list: Option<Vec<f64>>,
    pub n_list: Option<Vec<usize>>,
    /// Explicit control for `forward` runs (one value per step).
    pub control: Option<Vec<f64>>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub workers: Option<usize>,
    /// Dump the backward stage multipliers of the final adjoint solve.
    pub dump_stages: Option<bool>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: None,
            eps: None,
            nu: None,
            t_final: None,
            n_steps: None,
            cells: None,
            u_lo: None,
            u_hi: None,
            phi: default_phi(),
            relaxation: None,
            experiment: None,
            data: None,
            eps_list: None,
            n_list: None,
            control: None,
            max_iters: None,
            tol: None,
            workers: None,
            dump_stages: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let read = |p: &Path| -> Result<RunConfig> {
            let text = std::fs::read_to_string(p)?;
            Self::from_json(&text)
        };
        read(path).map_err(|e| Error::ConfigFile {
            path: path.display().to_string(),
            source: Box::new(e),
        })
    }

    pub fn phi_setting(&self) -> Result<PhiSetting> {
        match &self.phi {
            serde_json::Value::String(s) if s.eq_ignore_ascii_case("auto") => Ok(PhiSetting::Auto),
            serde_json::Value::Number(n) => {
                let v = n.as_f64().ok_or_else(|| {
                    Error::Config(format!("key 'phi': cannot read {n} as a number"))
                })?;
                Ok(PhiSetting::Fixed(v))
            }
            other => Err(Error::Config(format!(
                "key 'phi': expected \"auto\" or a number, got {other}"
            ))),
        }
    }

    /// Builds the solver configuration, taking missing values from the
    /// given defaults.
    pub fn resolve(&self, defaults: &Defaults) -> Result<ProblemConfig> {
        let pair = match &self.scheme {
            Some(spec) => spec.resolve()?,
            None => builtin_scheme(defaults.scheme)?,
        };
        let scheme = SchemeCoeffs::from_pair(&pair)?;
        let cells = self.cells.unwrap_or(defaults.cells);
        let cfg = ProblemConfig {
            scheme,
            grid: Grid1D::new(cells)?,
            eps: self.eps.unwrap_or(defaults.eps),
            nu: self.nu.unwrap_or(defaults.nu),
            t_final: self.t_final.unwrap_or(defaults.t_final),
            n_steps: self.n_steps.unwrap_or(defaults.n_steps),
            u_lo: self.u_lo.unwrap_or(defaults.u_lo),
            u_hi: self.u_hi.unwrap_or(defaults.u_hi),
            relaxation: self.relaxation.unwrap_or(RelaxationPolicy::Optimal),
            phi: self.phi_setting()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fallback values used when the file leaves a key unset.
#[derive(Debug, Clone, Copy)]
pub struct Defaults {
    pub scheme: &'static str,
    pub eps: f64,
    pub nu: f64,
    pub t_final: f64,
    pub n_steps: usize,
    pub cells: usize,
    pub u_lo: f64,
    pub u_hi: f64,
}

/// The boundary-control benchmark setup.
pub const BENCHMARK_DEFAULTS: Defaults = Defaults {
    scheme: "GSA342",
    eps: 0.0,
    nu: 1e-3,
    t_final: 1.58,
    n_steps: 100,
    cells: 50,
    u_lo: -1.0,
    u_hi: 1.0,
};

/// The manufactured-solution order study setup.
pub const ORDER_STUDY_DEFAULTS: Defaults = Defaults {
    scheme: "GSA342",
    eps: 0.0,
    nu: 0.0,
    t_final: 1.0,
    n_steps: 20,
    cells: 20,
    u_lo: -1.0,
    u_hi: 1.0,
};
