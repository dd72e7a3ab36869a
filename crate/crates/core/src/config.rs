//! Optical-system parameters, simulation grid settings and the key-value
//! configuration format.
//!
//! Layout lengths are stored in millimeters, wavelengths in nanometers and
//! source mode radii in inverse micrometers. Conversions to the micrometer
//! units used by the numerics happen in [`crate::propagation`].

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

/// Parameters of the Gaussian two-photon source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    /// Signal mode-profile radius in momentum space, 1/um.
    pub delta_s_per_um: f64,
    /// Idler mode-profile radius in momentum space, 1/um.
    pub delta_i_per_um: f64,
    /// Pearson correlation of the momentum amplitude, open interval (-1, 1).
    pub rho: f64,
    pub lambda_s_nm: f64,
    pub lambda_i_nm: f64,
}

/// One arm of the setup: free space `d1`, lens `f1` with aperture `r1`,
/// free space `d2`, lens `f2` with aperture `r2`, free space `d3`.
///
/// All lengths in millimeters; apertures are radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmLayout {
    pub d1_mm: f64,
    pub d2_mm: f64,
    pub d3_mm: f64,
    pub f1_mm: f64,
    pub f2_mm: f64,
    pub r1_mm: f64,
    pub r2_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalSystem {
    pub source: SourceParams,
    pub signal_arm: ArmLayout,
    pub idler_arm: ArmLayout,
}

/// Which photon an arm carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Photon {
    Signal,
    Idler,
}

impl Photon {
    pub fn name(self) -> &'static str {
        match self {
            Photon::Signal => "signal",
            Photon::Idler => "idler",
        }
    }
}

impl OpticalSystem {
    pub fn arm(&self, photon: Photon) -> &ArmLayout {
        match photon {
            Photon::Signal => &self.signal_arm,
            Photon::Idler => &self.idler_arm,
        }
    }

    pub fn wavelength_nm(&self, photon: Photon) -> f64 {
        match photon {
            Photon::Signal => self.source.lambda_s_nm,
            Photon::Idler => self.source.lambda_i_nm,
        }
    }

    /// Copy with a different signal collimating lens, keeping it at its
    /// focal distance from the source.
    pub fn with_signal_focal(mut self, f_s_mm: f64) -> Self {
        self.signal_arm.f1_mm = f_s_mm;
        self.signal_arm.d1_mm = f_s_mm;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.source.rho = rho;
        self
    }

    /// Every constraint this system violates, with field paths.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let s = &self.source;
        positive(&mut out, "source.delta_s_per_um", s.delta_s_per_um);
        positive(&mut out, "source.delta_i_per_um", s.delta_i_per_um);
        positive(&mut out, "source.lambda_s_nm", s.lambda_s_nm);
        positive(&mut out, "source.lambda_i_nm", s.lambda_i_nm);
        if !(s.rho > -1.0 && s.rho < 1.0) {
            out.push(Violation::new("source.rho", "rho must lie in (-1, 1)"));
        }
        for photon in [Photon::Signal, Photon::Idler] {
            let arm = self.arm(photon);
            let p = photon.name();
            for (name, d) in [("d1_mm", arm.d1_mm), ("d2_mm", arm.d2_mm), ("d3_mm", arm.d3_mm)] {
                if !(d >= 0.0 && d.is_finite()) {
                    out.push(Violation::new(
                        format!("{p}.{name}"),
                        "distance must be finite and non-negative",
                    ));
                }
            }
            for (name, f) in [("f1_mm", arm.f1_mm), ("f2_mm", arm.f2_mm)] {
                if f == 0.0 || f.is_nan() {
                    out.push(Violation::new(format!("{p}.{name}"), "focal length must be nonzero"));
                }
            }
            for (name, r) in [("r1_mm", arm.r1_mm), ("r2_mm", arm.r2_mm)] {
                if !(r > 0.0) {
                    out.push(Violation::new(format!("{p}.{name}"), "aperture radius must be positive"));
                }
            }
        }
        out
    }

    /// Returns the system unchanged if every invariant holds.
    pub fn validated(self) -> Result<Self, ValidationError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(ValidationError { violations })
        }
    }
}

fn positive(out: &mut Vec<Violation>, path: &str, value: f64) {
    if !(value > 0.0 && value.is_finite()) {
        out.push(Violation::new(path, "must be finite and positive"));
    }
}

/// The laboratory configuration used throughout: all lenses at their focal
/// distances, 100 mm between the lenses of each arm, degenerate 532 nm
/// photons, equal mode radii of 0.25 1/um. Correlation is left at zero.
pub fn default_lab_system(f_s_mm: f64) -> OpticalSystem {
    let f_mo = 2.5;
    let f_i1 = 30.0;
    let f_i2 = 1000.0;
    OpticalSystem {
        source: SourceParams {
            delta_s_per_um: 0.25,
            delta_i_per_um: 0.25,
            rho: 0.0,
            lambda_s_nm: 532.0,
            lambda_i_nm: 532.0,
        },
        signal_arm: ArmLayout {
            d1_mm: f_s_mm,
            d2_mm: 100.0,
            d3_mm: f_mo,
            f1_mm: f_s_mm,
            f2_mm: f_mo,
            r1_mm: 25.0 / 2.0,
            r2_mm: 8.0 / 2.0,
        },
        idler_arm: ArmLayout {
            d1_mm: f_i1,
            d2_mm: 100.0,
            d3_mm: f_i2,
            f1_mm: f_i1,
            f2_mm: f_i2,
            r1_mm: 25.0 / 2.0,
            r2_mm: 50.0 / 2.0,
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid optical system")?;
        for v in &self.violations {
            write!(f, "; {v}")?;
        }
        Ok(())
    }
}

/// Sampling of one plane. `None` means "derive automatically".
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlaneSpec {
    /// Half-extent in micrometers.
    pub half_extent_um: Option<f64>,
    pub samples: Option<usize>,
}

/// Planes of one arm in propagation order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmGrid {
    pub source: PlaneSpec,
    pub lens1: PlaneSpec,
    pub lens2: PlaneSpec,
    pub terminal: PlaneSpec,
}

impl ArmGrid {
    pub fn planes(&self) -> [(&'static str, &PlaneSpec); 4] {
        [
            ("source", &self.source),
            ("lens1", &self.lens1),
            ("lens2", &self.lens2),
            ("terminal", &self.terminal),
        ]
    }

    fn planes_mut(&mut self) -> [(&'static str, &mut PlaneSpec); 4] {
        [
            ("source", &mut self.source),
            ("lens1", &mut self.lens1),
            ("lens2", &mut self.lens2),
            ("terminal", &mut self.terminal),
        ]
    }
}

pub const MIN_SAMPLES: usize = 16;

/// Grid settings for both arms. Unset planes are sized from the system (see
/// [`crate::propagation::ArmPlanes`]); `refine` multiplies every sample
/// interval count, so `refine = 2` halves all spacings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub signal: ArmGrid,
    pub idler: ArmGrid,
    pub refine: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            signal: ArmGrid::default(),
            idler: ArmGrid::default(),
            refine: 1,
        }
    }
}

impl GridSpec {
    pub fn arm(&self, photon: Photon) -> &ArmGrid {
        match photon {
            Photon::Signal => &self.signal,
            Photon::Idler => &self.idler,
        }
    }

    pub fn refined(mut self, factor: usize) -> Self {
        self.refine = factor;
        self
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.refine == 0 {
            out.push(Violation::new("grid.refine", "must be at least 1"));
        }
        for photon in [Photon::Signal, Photon::Idler] {
            for (plane, spec) in self.arm(photon).planes() {
                let path = format!("grid.{}.{plane}", photon.name());
                if let Some(h) = spec.half_extent_um {
                    if !(h > 0.0 && h.is_finite()) {
                        out.push(Violation::new(format!("{path}_half"), "half-extent must be positive"));
                    }
                }
                if let Some(n) = spec.samples {
                    if n < MIN_SAMPLES {
                        out.push(Violation::new(
                            format!("{path}_n"),
                            format!("sample count must be at least {MIN_SAMPLES}"),
                        ));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` has the wrong unit, expected `{expected}`")]
    UnitMismatch {
        line: usize,
        key: String,
        expected: String,
    },
    #[error("line {line}: value of `{key}` must be numeric")]
    NotNumeric { line: usize, key: String },
    #[error("line {line}: `{key}` is given twice (radius and diameter)")]
    Duplicate { line: usize, key: String },
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

const SOURCE_KEYS: [(&str, &str); 5] = [
    ("delta_s", "_per_um"),
    ("delta_i", "_per_um"),
    ("rho", ""),
    ("lambda_s", "_nm"),
    ("lambda_i", "_nm"),
];

const ARM_KEYS: [&str; 7] = ["d1", "d2", "d3", "f1", "f2", "r1", "r2"];

const UNIT_SUFFIXES: [&str; 5] = ["_diam_mm", "_per_um", "_mm", "_nm", "_um"];

fn split_unit(name: &str) -> (&str, &str) {
    for suffix in UNIT_SUFFIXES {
        if let Some(base) = name.strip_suffix(suffix) {
            return (base, suffix);
        }
    }
    (name, "")
}

fn line_of(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map_or(0, |i| i + 1)
}

fn line_at_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Parses the key-value configuration text.
///
/// Every `source.*`, `signal.*` and `idler.*` key is required; apertures may
/// be given as radius (`r1_mm`) or diameter (`r1_diam_mm`). `grid.*` keys are
/// optional overrides.
pub fn load_config(text: &str) -> Result<(OpticalSystem, GridSpec), ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        line: e.span().map_or(0, |s| line_at_offset(text, s.start)),
        message: e.message().to_string(),
    })?;
    let mut entries = Vec::new();
    flatten("", &table, &mut entries);

    let mut values: BTreeMap<String, f64> = BTreeMap::new();
    let mut grid = GridSpec::default();
    for (key, value) in entries {
        let line = line_of(text, &key);
        let number = match value {
            toml::Value::Float(x) => x,
            toml::Value::Integer(i) => i as f64,
            _ => return Err(ConfigError::NotNumeric { line, key }),
        };
        let (section, name) = key.split_once('.').unwrap_or(("", key.as_str()));
        match section {
            "source" | "signal" | "idler" => {
                let (canonical, scale) = canonical_system_key(section, name, line, &key)?;
                if values.insert(canonical.clone(), number * scale).is_some() {
                    return Err(ConfigError::Duplicate { line, key: canonical });
                }
            }
            "grid" => apply_grid_key(&mut grid, name, number, line, &key)?,
            _ => return Err(ConfigError::UnknownKey { line, key }),
        }
    }

    let mut missing = Vec::new();
    let mut take = |key: String| -> f64 {
        values.get(&key).copied().unwrap_or_else(|| {
            missing.push(key);
            f64::NAN
        })
    };
    let source = SourceParams {
        delta_s_per_um: take("source.delta_s_per_um".into()),
        delta_i_per_um: take("source.delta_i_per_um".into()),
        rho: take("source.rho".into()),
        lambda_s_nm: take("source.lambda_s_nm".into()),
        lambda_i_nm: take("source.lambda_i_nm".into()),
    };
    let mut arm = |p: &str| ArmLayout {
        d1_mm: take(format!("{p}.d1_mm")),
        d2_mm: take(format!("{p}.d2_mm")),
        d3_mm: take(format!("{p}.d3_mm")),
        f1_mm: take(format!("{p}.f1_mm")),
        f2_mm: take(format!("{p}.f2_mm")),
        r1_mm: take(format!("{p}.r1_mm")),
        r2_mm: take(format!("{p}.r2_mm")),
    };
    let signal_arm = arm("signal");
    let idler_arm = arm("idler");
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    let system = OpticalSystem {
        source,
        signal_arm,
        idler_arm,
    }
    .validated()?;
    let grid_violations = grid.violations();
    if !grid_violations.is_empty() {
        return Err(ValidationError {
            violations: grid_violations,
        }
        .into());
    }
    Ok((system, grid))
}

/// Maps a `section.name_unit` key onto the canonical stored key and the factor
/// converting its value (diameters become radii).
fn canonical_system_key(
    section: &str,
    name: &str,
    line: usize,
    key: &str,
) -> Result<(String, f64), ConfigError> {
    let (base, unit) = split_unit(name);
    let expected = if section == "source" {
        SOURCE_KEYS.iter().find(|(b, _)| *b == base).map(|(_, u)| *u)
    } else if ARM_KEYS.contains(&base) {
        Some("_mm")
    } else {
        None
    };
    let Some(expected) = expected else {
        return Err(ConfigError::UnknownKey {
            line,
            key: key.to_string(),
        });
    };
    if unit == expected {
        return Ok((format!("{section}.{base}{unit}"), 1.0));
    }
    if unit == "_diam_mm" && base.starts_with('r') && section != "source" {
        return Ok((format!("{section}.{base}_mm"), 0.5));
    }
    Err(ConfigError::UnitMismatch {
        line,
        key: key.to_string(),
        expected: format!("{section}.{base}{expected}"),
    })
}

fn apply_grid_key(grid: &mut GridSpec, name: &str, value: f64, line: usize, key: &str) -> Result<(), ConfigError> {
    let unknown = || ConfigError::UnknownKey {
        line,
        key: key.to_string(),
    };
    if name == "refine" {
        grid.refine = to_count(value, line, key)?;
        return Ok(());
    }
    let (arm_name, rest) = name.split_once('.').ok_or_else(unknown)?;
    let arm = match arm_name {
        "signal" => &mut grid.signal,
        "idler" => &mut grid.idler,
        _ => return Err(unknown()),
    };
    let (plane, field) = rest.split_once('_').ok_or_else(unknown)?;
    let spec = arm
        .planes_mut()
        .into_iter()
        .find(|(p, _)| *p == plane)
        .map(|(_, s)| s)
        .ok_or_else(unknown)?;
    let lens_plane = plane.starts_with("lens");
    match field {
        "n" => spec.samples = Some(to_count(value, line, key)?),
        "half_mm" if lens_plane => spec.half_extent_um = Some(value * 1e3),
        "half_um" if !lens_plane => spec.half_extent_um = Some(value),
        "half_mm" | "half_um" => {
            let unit = if lens_plane { "mm" } else { "um" };
            return Err(ConfigError::UnitMismatch {
                line,
                key: key.to_string(),
                expected: format!("grid.{arm_name}.{plane}_half_{unit}"),
            });
        }
        _ => return Err(unknown()),
    }
    Ok(())
}

fn to_count(value: f64, line: usize, key: &str) -> Result<usize, ConfigError> {
    if value >= 0.0 && value.fract() == 0.0 && value < 1e9 {
        Ok(value as usize)
    } else {
        Err(ConfigError::Parse {
            line,
            message: format!("`{key}` must be a non-negative integer"),
        })
    }
}

/// Writes a configuration that [`load_config`] reads back to the same values.
pub fn to_config_text(system: &OpticalSystem, grid: &GridSpec) -> String {
    let mut out = String::new();
    let s = &system.source;
    let _ = writeln!(out, "source.delta_s_per_um = {:?}", s.delta_s_per_um);
    let _ = writeln!(out, "source.delta_i_per_um = {:?}", s.delta_i_per_um);
    let _ = writeln!(out, "source.rho = {:?}", s.rho);
    let _ = writeln!(out, "source.lambda_s_nm = {:?}", s.lambda_s_nm);
    let _ = writeln!(out, "source.lambda_i_nm = {:?}", s.lambda_i_nm);
    for photon in [Photon::Signal, Photon::Idler] {
        let a = system.arm(photon);
        let p = photon.name();
        out.push('\n');
        for (k, v) in [
            ("d1_mm", a.d1_mm),
            ("d2_mm", a.d2_mm),
            ("d3_mm", a.d3_mm),
            ("f1_mm", a.f1_mm),
            ("f2_mm", a.f2_mm),
            ("r1_mm", a.r1_mm),
            ("r2_mm", a.r2_mm),
        ] {
            let _ = writeln!(out, "{p}.{k} = {v:?}");
        }
    }
    if grid.refine != 1 {
        let _ = writeln!(out, "\ngrid.refine = {}", grid.refine);
    }
    for photon in [Photon::Signal, Photon::Idler] {
        for (plane, spec) in grid.arm(photon).planes() {
            let p = photon.name();
            if let Some(h) = spec.half_extent_um {
                if plane.starts_with("lens") {
                    let _ = writeln!(out, "grid.{p}.{plane}_half_mm = {:?}", h / 1e3);
                } else {
                    let _ = writeln!(out, "grid.{p}.{plane}_half_um = {h:?}");
                }
            }
            if let Some(n) = spec.samples {
                let _ = writeln!(out, "grid.{p}.{plane}_n = {n}");
            }
        }
    }
    out
}
