//! Scenario configuration: a line-oriented `key = value` grammar.
//!
//! Blank lines and text after `#` are ignored. Every key may appear at most
//! once. Relative paths are resolved against the directory of the
//! configuration file. See the README for the full key list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cloakopt_core::optimizer::InitialGuess;
use cloakopt_core::{OptimizeOptions, Point, ProblemData, RegionSpec, RobinSign, Shape, SourceSpec, TimeGrid};

use crate::error::{CliError, ParseError, Result};

/// Where the computational mesh comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    /// Structured crossed-triangle square of `cells × cells` cells centred at
    /// the origin, tagged by [`Geometry`].
    Generate { side: f64, cells: usize },
    /// Tagged ASCII mesh file.
    File(PathBuf),
}

/// Obstacle and cloak layout for generated meshes.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Circle { center: Point, obstacle_radius: f64, cloak_thickness: f64 },
    Polygon { points: Vec<Point>, cloak_width: f64 },
}

impl Geometry {
    pub fn region_spec(&self) -> RegionSpec {
        match self {
            Geometry::Circle { center, obstacle_radius, cloak_thickness } => {
                RegionSpec::circular(*center, *obstacle_radius, *cloak_thickness)
            }
            Geometry::Polygon { points, cloak_width } => RegionSpec::polygon_offset(points.clone(), *cloak_width),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    Steady,
    Transient { grid: TimeGrid, theta: f64, include_final: bool },
}

/// Settings of the finite-difference gradient audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub coordinates: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Half-width of the random control box the audit point is drawn from.
    pub amplitude: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { coordinates: 12, step: 1e-6, tolerance: 1e-5, seed: 7, amplitude: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mesh: MeshSource,
    pub geometry: Geometry,
    pub data: ProblemData,
    pub regime: Regime,
    pub optimizer: OptimizeOptions,
    pub audit: AuditOptions,
    pub out_dir: PathBuf,
    pub threads: usize,
}

pub const DEFAULT_CENTER: Point = [0.01, 0.005];
/// Distance of the default probing source from the obstacle centre.
pub const DEFAULT_SOURCE_OFFSET: f64 = 1.8;

impl Default for ScenarioConfig {
    fn default() -> Self {
        let center = DEFAULT_CENTER;
        let source = SourceSpec {
            support: Shape::Disk { center: [center[0] + DEFAULT_SOURCE_OFFSET, center[1]], radius: 0.2 },
            magnitude: 100.0,
        };
        Self {
            mesh: MeshSource::Generate { side: 5.0, cells: 41 },
            geometry: Geometry::Circle { center, obstacle_radius: 0.72, cloak_thickness: 0.48 },
            data: ProblemData::with_source(source),
            regime: Regime::Steady,
            optimizer: OptimizeOptions::default(),
            audit: AuditOptions::default(),
            out_dir: PathBuf::from("out"),
            threads: 1,
        }
    }
}

impl ScenarioConfig {
    /// Moves the centre of the disk source, keeping its radius.
    pub fn set_source_center(&mut self, center: Point) {
        let radius = match self.data.source.support {
            Shape::Disk { radius, .. } => radius,
            _ => 0.2,
        };
        self.data.source.support = Shape::Disk { center, radius };
    }

    pub fn source_center(&self) -> Option<Point> {
        match self.data.source.support {
            Shape::Disk { center, .. } => Some(center),
            _ => None,
        }
    }
}

const KEYS: &[&str] = &[
    "mesh",
    "side",
    "cells",
    "obstacle",
    "center_x",
    "center_y",
    "obstacle_radius",
    "cloak_thickness",
    "polygon",
    "cloak_width",
    "source_x",
    "source_y",
    "source_radius",
    "s",
    "mu",
    "alpha",
    "robin",
    "T_o",
    "epsilon",
    "beta",
    "beta_g",
    "xi",
    "xi_g",
    "gamma",
    "gamma_g",
    "interface_load",
    "regime",
    "T",
    "N",
    "theta",
    "include_final",
    "max_iterations",
    "max_stage_iterations",
    "barrier_initial",
    "barrier_shrink",
    "barrier_final",
    "gradient_tolerance",
    "relative_decrease_tolerance",
    "armijo_c1",
    "backtrack_factor",
    "max_backtracks",
    "initial_step",
    "memory",
    "normalize_barrier",
    "initial_guess",
    "initial_value",
    "check_coordinates",
    "check_step",
    "check_tolerance",
    "seed",
    "check_amplitude",
    "out",
    "threads",
];

const GEOMETRY_KEYS: &[&str] = &[
    "side",
    "cells",
    "obstacle",
    "center_x",
    "center_y",
    "obstacle_radius",
    "cloak_thickness",
    "polygon",
    "cloak_width",
];

const TRANSIENT_KEYS: &[&str] = &["T", "N", "theta", "include_final"];

/// Raw entries with their line numbers; typed getters remove what they read.
struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ParseError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ParseError::at(line, format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ParseError::at(line, "missing key before `=`"));
            }
            if !KEYS.contains(&key) {
                return Err(ParseError::at(line, format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(ParseError::at(line, format!("missing value for `{key}`")));
            }
            if let Some((first, _)) = map.insert(key.to_string(), (line, value.to_string())) {
                return Err(ParseError::at(line, format!("duplicate key `{key}` (first set on line {first})")));
            }
        }
        Ok(Self { map })
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(l, _)| *l)
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn take_with<T>(
        &mut self,
        key: &str,
        what: &str,
        parse: impl FnOnce(&str) -> Option<T>,
    ) -> Result<Option<(usize, T)>, ParseError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((line, value)) => match parse(&value) {
                Some(v) => Ok(Some((line, v))),
                None => Err(ParseError::at(line, format!("`{key}` expects {what}, got `{value}`"))),
            },
        }
    }

    fn f64(&mut self, key: &str) -> Result<Option<(usize, f64)>, ParseError> {
        self.take_with(key, "a finite number", |s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    fn usize(&mut self, key: &str) -> Result<Option<(usize, usize)>, ParseError> {
        self.take_with(key, "a non-negative integer", |s| s.parse::<usize>().ok())
    }

    fn u64(&mut self, key: &str) -> Result<Option<(usize, u64)>, ParseError> {
        self.take_with(key, "a non-negative integer", |s| s.parse::<u64>().ok())
    }

    fn bool(&mut self, key: &str) -> Result<Option<(usize, bool)>, ParseError> {
        self.take_with(key, "`true` or `false`", |s| match s {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    fn word<'a>(&mut self, key: &str, choices: &[&'a str]) -> Result<Option<(usize, &'a str)>, ParseError> {
        let what = format!("one of {}", choices.join(", "));
        self.take_with(key, &what, |s| choices.iter().copied().find(|c| *c == s))
    }

    fn string(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }
}

fn parse_points(s: &str) -> Option<Vec<Point>> {
    s.split(';')
        .map(|pair| {
            let mut it = pair.split_whitespace().map(|t| t.parse::<f64>().ok().filter(|x| x.is_finite()));
            match (it.next(), it.next(), it.next()) {
                (Some(Some(x)), Some(Some(y)), None) => Some([x, y]),
                _ => None,
            }
        })
        .collect()
}

fn check(line: usize, ok: bool, message: impl FnOnce() -> String) -> Result<(), ParseError> {
    if ok {
        Ok(())
    } else {
        Err(ParseError::at(line, message()))
    }
}

fn positive(e: &mut Entries, key: &str, target: &mut f64) -> Result<(), ParseError> {
    if let Some((line, v)) = e.f64(key)? {
        check(line, v > 0.0, || format!("`{key}` must be positive, got {v}"))?;
        *target = v;
    }
    Ok(())
}

fn non_negative(e: &mut Entries, key: &str, target: &mut f64) -> Result<(), ParseError> {
    if let Some((line, v)) = e.f64(key)? {
        check(line, v >= 0.0, || format!("`{key}` must be non-negative, got {v}"))?;
        *target = v;
    }
    Ok(())
}

fn any_f64(e: &mut Entries, key: &str, target: &mut f64) -> Result<(), ParseError> {
    if let Some((_, v)) = e.f64(key)? {
        *target = v;
    }
    Ok(())
}

fn count(e: &mut Entries, key: &str, min: usize, target: &mut usize) -> Result<(), ParseError> {
    if let Some((line, v)) = e.usize(key)? {
        check(line, v >= min, || format!("`{key}` must be at least {min}, got {v}"))?;
        *target = v;
    }
    Ok(())
}

/// Parses configuration text. `base` is the directory relative paths are
/// resolved against; referenced files must exist.
pub fn parse_config(text: &str, base: &Path) -> Result<ScenarioConfig, ParseError> {
    let mut e = Entries::parse(text)?;
    let mut cfg = ScenarioConfig::default();

    let mesh_file = match e.string("mesh") {
        None => None,
        Some((_, v)) if v == "generate" => None,
        Some((line, v)) => {
            let path = base.join(&v);
            check(line, path.is_file(), || format!("mesh file `{}` does not exist", path.display()))?;
            Some((line, path))
        }
    };
    if let Some((line, path)) = mesh_file {
        if let Some(k) = GEOMETRY_KEYS.iter().find(|k| e.has(k)) {
            let kl = e.line(k).unwrap_or(line);
            return Err(ParseError::at(kl, format!("`{k}` cannot be combined with a mesh file (line {line})")));
        }
        cfg.mesh = MeshSource::File(path);
    } else {
        parse_generated(&mut e, &mut cfg)?;
    }

    parse_physics(&mut e, &mut cfg)?;
    parse_regime(&mut e, &mut cfg)?;
    parse_optimizer(&mut e, &mut cfg.optimizer)?;

    let a = &mut cfg.audit;
    count(&mut e, "check_coordinates", 1, &mut a.coordinates)?;
    positive(&mut e, "check_step", &mut a.step)?;
    positive(&mut e, "check_tolerance", &mut a.tolerance)?;
    positive(&mut e, "check_amplitude", &mut a.amplitude)?;
    if let Some((_, v)) = e.u64("seed")? {
        a.seed = v;
    }

    if let Some((_, v)) = e.string("out") {
        cfg.out_dir = base.join(v);
    }
    count(&mut e, "threads", 1, &mut cfg.threads)?;

    debug_assert!(e.map.is_empty(), "unconsumed keys: {:?}", e.map.keys());
    Ok(cfg)
}

fn parse_generated(e: &mut Entries, cfg: &mut ScenarioConfig) -> Result<(), ParseError> {
    let (mut side, mut cells) = (5.0, 41);
    positive(e, "side", &mut side)?;
    count(e, "cells", 1, &mut cells)?;
    cfg.mesh = MeshSource::Generate { side, cells };

    let shape = e.word("obstacle", &["circle", "polygon"])?;
    let obstacle_line = shape.map(|(l, _)| l);
    match shape.map(|(_, s)| s).unwrap_or("circle") {
        "circle" => {
            if let Some(k) = ["polygon", "cloak_width"].iter().find(|k| e.has(k)) {
                return Err(ParseError::at(e.line(k).unwrap_or(0), format!("`{k}` needs `obstacle = polygon`")));
            }
            let mut center = DEFAULT_CENTER;
            let (mut r, mut t) = (0.72, 0.48);
            any_f64(e, "center_x", &mut center[0])?;
            any_f64(e, "center_y", &mut center[1])?;
            positive(e, "obstacle_radius", &mut r)?;
            positive(e, "cloak_thickness", &mut t)?;
            cfg.geometry = Geometry::Circle { center, obstacle_radius: r, cloak_thickness: t };
            cfg.set_source_center([center[0] + DEFAULT_SOURCE_OFFSET, center[1]]);
        }
        _ => {
            if let Some(k) = ["center_x", "center_y", "obstacle_radius", "cloak_thickness"].iter().find(|k| e.has(k)) {
                return Err(ParseError::at(e.line(k).unwrap_or(0), format!("`{k}` needs `obstacle = circle`")));
            }
            let line = obstacle_line.unwrap_or(0);
            let (_, points) = e
                .take_with("polygon", "`x y; x y; ...` with at least 3 vertices", |s| {
                    parse_points(s).filter(|p| p.len() >= 3)
                })?
                .ok_or_else(|| ParseError::at(line, "missing required key `polygon` for `obstacle = polygon`"))?;
            let mut width = 0.3;
            positive(e, "cloak_width", &mut width)?;
            cfg.geometry = Geometry::Polygon { points, cloak_width: width };
            cfg.set_source_center([DEFAULT_SOURCE_OFFSET, 0.0]);
        }
    }
    Ok(())
}

fn parse_physics(e: &mut Entries, cfg: &mut ScenarioConfig) -> Result<(), ParseError> {
    let mut center = cfg.source_center().unwrap_or([0.0, 0.0]);
    let mut radius = 0.2;
    any_f64(e, "source_x", &mut center[0])?;
    any_f64(e, "source_y", &mut center[1])?;
    positive(e, "source_radius", &mut radius)?;
    let d = &mut cfg.data;
    d.source.support = Shape::Disk { center, radius };
    any_f64(e, "s", &mut d.source.magnitude)?;
    positive(e, "mu", &mut d.mu)?;
    any_f64(e, "alpha", &mut d.alpha)?;
    any_f64(e, "T_o", &mut d.t_obstacle)?;
    positive(e, "epsilon", &mut d.epsilon)?;
    if let Some((_, s)) = e.word("robin", &["plus", "minus"])? {
        d.robin_sign = if s == "plus" { RobinSign::Plus } else { RobinSign::Minus };
    }
    let w = &mut d.weights;
    non_negative(e, "beta", &mut w.beta)?;
    non_negative(e, "beta_g", &mut w.beta_g)?;
    non_negative(e, "xi", &mut w.xi)?;
    non_negative(e, "xi_g", &mut w.xi_g)?;
    non_negative(e, "gamma", &mut w.gamma)?;
    non_negative(e, "gamma_g", &mut w.gamma_g)?;
    // The interface load is always the Dirichlet lifting of the obstacle
    // temperature; the key only documents that choice.
    e.word("interface_load", &["lifting"])?;
    Ok(())
}

fn parse_regime(e: &mut Entries, cfg: &mut ScenarioConfig) -> Result<(), ParseError> {
    let regime = e.word("regime", &["steady", "transient"])?;
    match regime {
        None | Some((_, "steady")) => {
            if let Some(k) = TRANSIENT_KEYS.iter().find(|k| e.has(k)) {
                return Err(ParseError::at(e.line(k).unwrap_or(0), format!("`{k}` needs `regime = transient`")));
            }
            cfg.regime = Regime::Steady;
        }
        Some((line, _)) => {
            let missing = |k: &str| ParseError::at(line, format!("missing required key `{k}` for `regime = transient`"));
            let (tl, t_final) = e.f64("T")?.ok_or_else(|| missing("T"))?;
            check(tl, t_final > 0.0, || format!("`T` must be positive, got {t_final}"))?;
            let (nl, steps) = e.usize("N")?.ok_or_else(|| missing("N"))?;
            check(nl, steps >= 1, || format!("`N` must be at least 1, got {steps}"))?;
            let mut theta = 1.0;
            if let Some((l, v)) = e.f64("theta")? {
                check(l, (0.0..=1.0).contains(&v), || format!("`theta` must lie in [0, 1], got {v}"))?;
                theta = v;
            }
            let include_final = e.bool("include_final")?.is_none_or(|(_, b)| b);
            let grid = TimeGrid::new(t_final, steps).map_err(|err| ParseError::at(line, err.to_string()))?;
            cfg.regime = Regime::Transient { grid, theta, include_final };
        }
    }
    Ok(())
}

fn parse_optimizer(e: &mut Entries, o: &mut OptimizeOptions) -> Result<(), ParseError> {
    count(e, "max_iterations", 1, &mut o.max_iterations)?;
    count(e, "max_stage_iterations", 1, &mut o.max_stage_iterations)?;
    positive(e, "barrier_initial", &mut o.barrier_initial)?;
    let final_line = e.line("barrier_final").unwrap_or(0);
    positive(e, "barrier_final", &mut o.barrier_final)?;
    if let Some((l, v)) = e.f64("barrier_shrink")? {
        check(l, v > 0.0 && v < 1.0, || format!("`barrier_shrink` must lie in (0, 1), got {v}"))?;
        o.barrier_shrink = v;
    }
    non_negative(e, "gradient_tolerance", &mut o.gradient_tolerance)?;
    non_negative(e, "relative_decrease_tolerance", &mut o.relative_decrease_tolerance)?;
    if let Some((l, v)) = e.f64("armijo_c1")? {
        check(l, v > 0.0 && v < 1.0, || format!("`armijo_c1` must lie in (0, 1), got {v}"))?;
        o.armijo_c1 = v;
    }
    if let Some((l, v)) = e.f64("backtrack_factor")? {
        check(l, v > 0.0 && v < 1.0, || format!("`backtrack_factor` must lie in (0, 1), got {v}"))?;
        o.backtrack_factor = v;
    }
    count(e, "max_backtracks", 1, &mut o.max_backtracks)?;
    positive(e, "initial_step", &mut o.initial_step)?;
    count(e, "memory", 0, &mut o.memory)?;
    if let Some((_, b)) = e.bool("normalize_barrier")? {
        o.normalize_barrier = b;
    }
    let guess = e.word("initial_guess", &["zeros", "constant"])?;
    let value = e.f64("initial_value")?;
    match (guess, value) {
        (Some((_, "constant")), Some((_, c))) => o.initial_guess = InitialGuess::Constant(c),
        (Some((l, "constant")), None) => {
            return Err(ParseError::at(l, "missing required key `initial_value` for `initial_guess = constant`"))
        }
        (_, Some((l, _))) => return Err(ParseError::at(l, "`initial_value` needs `initial_guess = constant`")),
        _ => o.initial_guess = InitialGuess::Zeros,
    }
    if o.barrier_final > o.barrier_initial {
        return Err(ParseError::at(final_line, "`barrier_final` must not exceed `barrier_initial`"));
    }
    Ok(())
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base).map_err(|e| CliError::parse(path, e))
}
