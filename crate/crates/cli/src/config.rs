//! JSON run configuration. Expressions are JSON strings in the grammar of
//! [`crate::expr`].

use std::path::PathBuf;

use serde::Deserialize;

use crate::error::CliError;
use crate::expr::{parse_expr, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Stationary,
    Evolve,
    EpsStudy,
    GridStudy,
    FrameCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Stationary => "stationary",
            Mode::Evolve => "evolve",
            Mode::EpsStudy => "eps-study",
            Mode::GridStudy => "grid-study",
            Mode::FrameCheck => "frame-check",
        }
    }
}

/// A number, or a constant expression such as `"pi/2"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Expr(String),
}

impl Scalar {
    pub fn value(&self, field: &'static str) -> Result<f64, CliError> {
        match self {
            Scalar::Number(v) => Ok(*v),
            Scalar::Expr(s) => {
                let e = parse(field, s)?;
                e.eval(0.0, 0.0, 0.0)
                    .map_err(|err| CliError::Config(format!("{field}: {err}")))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lx: Scalar,
    pub ly: Scalar,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub nu: f64,
    pub epsilon: f64,
    /// Truncation radius for the convection term.
    #[serde(rename = "M", default)]
    pub m: Option<f64>,
}

fn zero_pair() -> [String; 2] {
    ["0".into(), "0".into()]
}

fn zero() -> String {
    "0".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Data {
    #[serde(default = "zero_pair")]
    pub f: [String; 2],
    #[serde(default = "zero")]
    pub g: String,
    #[serde(default = "zero_pair")]
    pub u0: [String; 2],
}

impl Default for Data {
    fn default() -> Self {
        Data {
            f: zero_pair(),
            g: zero(),
            u0: zero_pair(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Time {
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "N")]
    pub n_steps: usize,
    /// Dump every `stride`-th state to `trajectory/`; defaults to `N`.
    #[serde(default)]
    pub stride: Option<usize>,
    /// Constant for the local-existence time estimate.
    #[serde(default = "one")]
    pub c_user: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    pub tol_picard: Option<f64>,
    pub tol_uzawa: Option<f64>,
    pub tol_cg: Option<f64>,
    pub max_picard: Option<usize>,
    pub max_uzawa: Option<usize>,
    pub max_cg: Option<usize>,
}

/// Analytic solution for error tables.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exact {
    pub u: [String; 2],
    #[serde(default)]
    pub p: Option<String>,
}

/// Height function for `frame-check`: a coefficient list (`d = 2`,
/// `rho = sum c_k y1^k`), a list of `[a, b, c]` monomials `c y1^a y2^b`, or
/// an expression in `x` (= y1) and `y` (= y2).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Height {
    Coefficients(Vec<f64>),
    Monomials(Vec<(usize, usize, f64)>),
    Expr(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub d: usize,
    pub rho: Height,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Sample `y'` in `[-radius, radius]^{d-1}`.
    #[serde(default = "one")]
    pub radius: f64,
}

fn default_points() -> usize {
    1000
}

fn default_vi_samples() -> usize {
    200
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub domain: Option<Domain>,
    #[serde(default)]
    pub physics: Option<Physics>,
    #[serde(default)]
    pub data: Data,
    #[serde(default)]
    pub time: Option<Time>,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exact: Option<Exact>,
    #[serde(default)]
    pub eps_list: Option<Vec<f64>>,
    #[serde(default)]
    pub levels: Option<Vec<[usize; 2]>>,
    #[serde(default = "default_vi_samples")]
    pub vi_samples: usize,
    #[serde(default)]
    pub frame: Option<Frame>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn domain(&self) -> Result<&Domain, CliError> {
        self.domain
            .as_ref()
            .ok_or_else(|| missing("domain", self.mode))
    }

    pub fn physics(&self) -> Result<&Physics, CliError> {
        self.physics
            .as_ref()
            .ok_or_else(|| missing("physics", self.mode))
    }

    pub fn time(&self) -> Result<&Time, CliError> {
        self.time.as_ref().ok_or_else(|| missing("time", self.mode))
    }

    pub fn frame(&self) -> Result<&Frame, CliError> {
        self.frame
            .as_ref()
            .ok_or_else(|| missing("frame", self.mode))
    }

    /// Parses every expression the configuration refers to, so that syntax
    /// errors surface before any solve starts.
    pub fn check_expressions(&self) -> Result<(), CliError> {
        for (name, s) in [
            ("data.f[0]", &self.data.f[0]),
            ("data.f[1]", &self.data.f[1]),
            ("data.g", &self.data.g),
            ("data.u0[0]", &self.data.u0[0]),
            ("data.u0[1]", &self.data.u0[1]),
        ] {
            parse(name, s)?;
        }
        if let Some(ex) = &self.exact {
            parse("exact.u[0]", &ex.u[0])?;
            parse("exact.u[1]", &ex.u[1])?;
            if let Some(p) = &ex.p {
                parse("exact.p", p)?;
            }
        }
        Ok(())
    }
}

fn missing(section: &str, mode: Mode) -> CliError {
    CliError::Config(format!(
        "section `{section}` is required for mode {}",
        mode.name()
    ))
}

pub fn parse(field: &str, src: &str) -> Result<Expr, CliError> {
    parse_expr(src).map_err(|e| CliError::Config(format!("{field}: {e} in \"{src}\"")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_and_defaults() {
        let c = RunConfig::from_json(
            r#"{"mode": "stationary",
                "domain": {"lx": "pi", "ly": 2, "nx": 8, "ny": 8},
                "physics": {"nu": 1, "epsilon": 0.1}}"#,
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Stationary);
        assert_eq!(
            c.domain().unwrap().lx.value("lx").unwrap(),
            std::f64::consts::PI
        );
        assert_eq!(c.data.g, "0");
        assert_eq!(c.vi_samples, 200);
        assert!(c.time().is_err());
        c.check_expressions().unwrap();
    }

    #[test]
    fn unknown_fields_and_bad_expressions_rejected() {
        assert!(RunConfig::from_json(r#"{"mode": "stationary", "bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mode": "sideways"}"#).is_err());
        let c = RunConfig::from_json(r#"{"mode": "stationary", "data": {"g": "sin("}}"#).unwrap();
        let err = c.check_expressions().unwrap_err().to_string();
        assert!(err.contains("data.g") && err.contains("offset 4"), "{err}");
    }

    #[test]
    fn height_representations() {
        let f: Frame = serde_json::from_str(r#"{"d": 2, "rho": [0, 1, 0.5]}"#).unwrap();
        assert!(matches!(f.rho, Height::Coefficients(ref c) if c.len() == 3));
        let f: Frame =
            serde_json::from_str(r#"{"d": 3, "rho": [[1, 0, 0.5], [0, 2, 1]]}"#).unwrap();
        assert!(matches!(f.rho, Height::Monomials(ref m) if m.len() == 2));
        let f: Frame = serde_json::from_str(r#"{"d": 2, "rho": "sin(x)"}"#).unwrap();
        assert!(matches!(f.rho, Height::Expr(_)));
    }
}
