//! Result files: CSV tables, the design file and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use delaysync_core::synthesis::{ControllerDesign, DesignMethod};
use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::config::{matrix, rows_of, Config, Rows};
use crate::error::CliError;

/// C's `%.17g`.
pub fn g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..17).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{x:.*}", (16 - exp) as usize)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: header.join(",") + "\n" }
    }

    pub fn with_header(header: Vec<String>) -> Self {
        Self { text: header.join(",") + "\n" }
    }

    pub fn row(&mut self, values: impl IntoIterator<Item = f64>) {
        let cells: Vec<String> = values.into_iter().map(g17).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn text_row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Collects written files so the manifest can list them.
pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        fs::write(&path, contents)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolverSettings {
    pub margin_rel: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub free_bound: f64,
    pub early_stop: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// `None` when the config could not be read.
    pub config: Option<Config>,
    pub solver: SolverSettings,
    pub jobs: usize,
    pub seed: u64,
    pub status: String,
    pub exit_code: i32,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<PathBuf>,
}

/// Serializable form of a [`ControllerDesign`], consumed by `simulate` and `audit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignFile {
    pub method: DesignMethod,
    pub base_gain: Rows,
    pub coupling: f64,
    pub gain: Rows,
    pub c_min: f64,
    pub c_max: f64,
    pub h: f64,
    pub epsilon: f64,
    pub design_points: Vec<[f64; 2]>,
    pub region: Option<Vec<[f64; 2]>>,
}

fn pair(z: &Complex<f64>) -> [f64; 2] {
    [z.re, z.im]
}

impl DesignFile {
    pub fn from_design(d: &ControllerDesign) -> Self {
        Self {
            method: d.certificate.method,
            base_gain: rows_of(&d.base_gain),
            coupling: d.coupling,
            gain: rows_of(&d.gain()),
            c_min: d.c_range.0,
            c_max: d.c_range.1,
            h: d.certificate.h,
            epsilon: d.certificate.epsilon,
            design_points: d.certificate.design_points.iter().map(pair).collect(),
            region: d.certificate.region.as_ref().map(|r| r.iter().map(pair).collect()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("design file: {e}")))
    }

    /// The effective gain `c * K_base`.
    pub fn effective_gain(&self) -> Result<DMatrix<f64>, CliError> {
        Ok(matrix("design.base_gain", &self.base_gain)? * self.coupling)
    }
}

pub fn fmt_complex(z: Complex<f64>) -> String {
    let mut s = String::new();
    let _ = if z.im >= 0.0 {
        write!(s, "{:.4}+{:.4}i", z.re, z.im)
    } else {
        write!(s, "{:.4}-{:.4}i", z.re, -z.im)
    };
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_c_printf() {
        assert_eq!(g17(0.1), "0.10000000000000001");
        assert_eq!(g17(1.0), "1");
        assert_eq!(g17(-2.5), "-2.5");
        assert_eq!(g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(g17(123456789012345678.0), "1.2345678901234568e+17");
        assert_eq!(g17(0.0001), "0.0001");
        assert_eq!(g17(f64::NAN), "nan");
    }

    #[test]
    fn g17_round_trips() {
        for x in [std::f64::consts::PI, 1.0 / 3.0, 6.02214076e23, -1e-300, 0.4190] {
            assert_eq!(g17(x).parse::<f64>().unwrap(), x);
        }
    }
}
