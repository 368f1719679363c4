//! Scenario files: TOML with a window, a source, a destination, an optional
//! auxiliary process, parameters, checks and output settings.

use std::path::PathBuf;

use diffalloc_core::mixed::{ChiConfig, ChiSpec};
use diffalloc_core::sampling::{derive_seed, poisson_atoms, rng_from_seed};
use diffalloc_core::{
    Atom, AtomMeasure, Component, CurveDensity, GridDensity, Measure, Point, Window, MAX_DIM,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    /// Master seed; every random input derives from it unless seeded explicitly.
    pub seed: u64,
    #[serde(default)]
    pub pipeline: PipelineChoice,
    pub window: WindowSpec,
    pub source: ComponentSpec,
    pub destination: DestinationSpec,
    #[serde(default)]
    pub chi: ChiFile,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineChoice {
    #[default]
    Auto,
    Stable,
    Layered,
    Mixed,
    Quantile,
    Product,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub sides: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DestinationSpec {
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ComponentSpec {
    /// Constant density; in the source, `mass` defaults to the destination total.
    Lebesgue { mass: Option<f64> },
    /// Density proportional to one coordinate.
    Linear {
        #[serde(default)]
        axis: usize,
        mass: f64,
        cells: Option<usize>,
    },
    /// Full-width lines parallel to the first axis, `mass` in total.
    Lines { heights: Vec<f64>, mass: f64 },
    Circle {
        centre: Vec<f64>,
        radius: f64,
        mass: f64,
    },
    Atoms {
        points: Vec<Vec<f64>>,
        masses: Option<Vec<f64>>,
    },
    /// Unit-mass (or `atom_mass`) atoms at a Poisson sample.
    Poisson {
        intensity: f64,
        quantum: Option<f64>,
        seed: Option<u64>,
        atom_mass: Option<f64>,
    },
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChiFile {
    #[default]
    None,
    Threshold {
        c: Option<f64>,
        #[serde(default)]
        voronoi: bool,
    },
    Poisson {
        intensity: f64,
        seed: Option<u64>,
        #[serde(default)]
        voronoi: bool,
    },
    Explicit {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        voronoi: bool,
    },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub alpha: f64,
    pub resolution: f64,
    pub max_stages: Option<usize>,
    pub tie_tolerance: Option<f64>,
    pub check_invariants: bool,
    pub n_max: usize,
    pub phi_bits: u32,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            alpha: 1.0,
            resolution: 0.05,
            max_stages: None,
            tie_tolerance: None,
            check_invariants: true,
            n_max: diffalloc_core::layered::DEFAULT_N_MAX,
            phi_bits: diffalloc_core::quantile::DEFAULT_PHI_BITS,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    Balance,
    Palm,
    Equivariance,
}

impl CheckKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckKind::Balance => "balance",
            CheckKind::Palm => "palm",
            CheckKind::Equivariance => "equivariance",
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Checks {
    pub run: Vec<CheckKind>,
    pub balance: BalanceCheck,
    pub equivariance: EquivarianceCheck,
    pub palm: PalmCheck,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            run: vec![CheckKind::Balance],
            balance: BalanceCheck::default(),
            equivariance: EquivarianceCheck::default(),
            palm: PalmCheck::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceCheck {
    pub regions: usize,
    /// Smallest box extent; defaults to four times the resolution.
    pub min_side: Option<f64>,
    /// Tolerance for diffuse destinations; defaults to three times the resolution.
    pub tolerance: Option<f64>,
    /// Relative tolerance for atom cells.
    pub cell_tolerance: f64,
}

impl Default for BalanceCheck {
    fn default() -> Self {
        BalanceCheck {
            regions: 100,
            min_side: None,
            tolerance: None,
            cell_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EquivarianceCheck {
    pub shift: Vec<f64>,
    /// Allowed relative difference of piece masses.
    pub mass_tolerance: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticName {
    Count,
    Nearest,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PalmCheck {
    pub intensity: f64,
    pub sides: Vec<f64>,
    pub samples: usize,
    pub statistic: StatisticName,
    pub radius: f64,
    pub resolution: f64,
    pub threshold: f64,
    pub calibration_repetitions: usize,
    pub seed: Option<u64>,
}

impl Default for PalmCheck {
    fn default() -> Self {
        PalmCheck {
            intensity: 1.0,
            sides: vec![8.0, 8.0],
            samples: 500,
            statistic: StatisticName::Count,
            radius: 1.0,
            resolution: 0.1,
            threshold: 0.01,
            calibration_repetitions: 200,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub dir: Option<PathBuf>,
    pub plot: bool,
}

/// Parses and validates a scenario; returns it with any warnings.
pub fn parse_scenario(text: &str) -> Result<(Scenario, Vec<String>), CliError> {
    let s: Scenario = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let warnings = s.validate()?;
    Ok((s, warnings))
}

fn semantic(msg: impl Into<String>) -> CliError {
    CliError::Parse(msg.into())
}

impl Scenario {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "scenario".into())
    }

    fn validate(&self) -> Result<Vec<String>, CliError> {
        let p = &self.params;
        if !(p.alpha > 0.0 && p.alpha.is_finite()) {
            return Err(semantic(format!(
                "params.alpha must be positive, got {}",
                p.alpha
            )));
        }
        if !(p.resolution > 0.0 && p.resolution.is_finite()) {
            return Err(semantic(format!(
                "params.resolution must be positive, got {}",
                p.resolution
            )));
        }
        if p.n_max == 0 {
            return Err(semantic("params.n_max must be at least 1"));
        }
        if self.destination.components.is_empty() {
            return Err(semantic("destination needs at least one component"));
        }
        let d = self.window.sides.len();
        if d == 0 || d > MAX_DIM {
            return Err(semantic(format!(
                "window.sides must have 1 or 2 entries, got {d}"
            )));
        }
        if matches!(
            self.source,
            ComponentSpec::Atoms { .. } | ComponentSpec::Poisson { .. }
        ) {
            return Err(semantic("the source must be diffuse (no atoms or poisson)"));
        }
        if self.checks.run.contains(&CheckKind::Equivariance)
            && self.checks.equivariance.shift.len() != d
        {
            return Err(semantic(
                "checks.equivariance.shift needs one entry per window axis",
            ));
        }
        let mut warnings = Vec::new();
        let diffuse_only = self.destination.components.iter().all(|c| {
            !matches!(
                c,
                ComponentSpec::Atoms { .. } | ComponentSpec::Poisson { .. }
            )
        });
        if diffuse_only
            && matches!(self.chi, ChiFile::None | ChiFile::Threshold { .. })
            && self.pipeline != PipelineChoice::Product
        {
            warnings.push(
                "the destination is diffuse and chi provides no points; the run will stop with NO_AUX_CHI"
                    .into(),
            );
        }
        Ok(warnings)
    }
}

/// Concrete inputs of a scenario for one master seed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub window: Window,
    pub xi: Measure,
    pub eta: Measure,
    pub chi: ChiSpec,
    pub seed: u64,
}

fn point(w: &Window, c: &[f64], what: &str) -> Result<Point, CliError> {
    w.point(c).map_err(|e| semantic(format!("{what}: {e}")))
}

fn component(
    w: &Window,
    spec: &ComponentSpec,
    default_mass: Option<f64>,
    seed: u64,
    resolution: f64,
) -> Result<Component, CliError> {
    let core = |e: diffalloc_core::Error| semantic(e.to_string());
    Ok(match spec {
        ComponentSpec::Lebesgue { mass } => {
            let m = mass
                .or(default_mass)
                .ok_or_else(|| semantic("a destination lebesgue component needs a mass"))?;
            Component::Grid(GridDensity::uniform(w, m / w.volume()).map_err(core)?)
        }
        ComponentSpec::Linear { axis, mass, cells } => {
            if *axis >= w.dim() {
                return Err(semantic(format!("linear axis {axis} outside the window")));
            }
            let mut n = vec![1usize; w.dim()];
            n[*axis] = cells.unwrap_or((w.side(*axis) / resolution).ceil() as usize);
            let side = w.side(*axis);
            // density c * x with total mass: c = 2 mass / (side^2 * other sides)
            let c = 2.0 * mass / (side * w.volume());
            let a = *axis;
            Component::Grid(GridDensity::from_fn(w, &n, |x| c * x[a]).map_err(core)?)
        }
        ComponentSpec::Lines { heights, mass } => {
            if w.dim() != 2 {
                return Err(semantic("lines need a two-dimensional window"));
            }
            if heights.is_empty() {
                return Err(semantic("lines need at least one height"));
            }
            let density = mass / (heights.len() as f64 * w.side(0));
            Component::Curve(CurveDensity::horizontal_lines(w, heights, density).map_err(core)?)
        }
        ComponentSpec::Circle {
            centre,
            radius,
            mass,
        } => {
            let c = point(w, centre, "circle centre")?;
            let density = mass / (2.0 * std::f64::consts::PI * radius);
            Component::Curve(CurveDensity::circle(w, &c, *radius, density).map_err(core)?)
        }
        ComponentSpec::Atoms { points, masses } => {
            if let Some(m) = masses {
                if m.len() != points.len() {
                    return Err(semantic("atoms need one mass per point"));
                }
            }
            let atoms = points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    Ok(Atom {
                        location: point(w, p, "atom")?,
                        mass: masses.as_ref().map_or(1.0, |m| m[i]),
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Component::Atoms(AtomMeasure::new(atoms).map_err(core)?)
        }
        ComponentSpec::Poisson {
            intensity,
            quantum,
            seed: own,
            atom_mass,
        } => {
            let mut rng = rng_from_seed(own.unwrap_or(seed));
            let a = poisson_atoms(w, *intensity, *quantum, &mut rng).map_err(core)?;
            Component::Atoms(match atom_mass {
                Some(m) => a.scaled(*m),
                None => a,
            })
        }
    })
}

impl Scenario {
    /// Builds the measures; `seed` overrides the master seed.
    pub fn resolve(&self, seed: Option<u64>) -> Result<Resolved, CliError> {
        let seed = seed.unwrap_or(self.seed);
        let core = |e: diffalloc_core::Error| semantic(e.to_string());
        let w = Window::new(&self.window.sides).map_err(core)?;
        let res = self.params.resolution;
        let comps = self
            .destination
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| component(&w, c, None, derive_seed(seed, k as u64), res))
            .collect::<Result<Vec<_>, _>>()?;
        let eta = Measure::new(w, comps).map_err(core)?;
        let src = component(&w, &self.source, Some(eta.total_mass()), seed, res)?;
        let xi = Measure::new(w, vec![src]).map_err(core)?;
        let chi_seed = derive_seed(seed, 1_000_000);
        let chi = match &self.chi {
            ChiFile::None => ChiSpec::default(),
            ChiFile::Threshold { c, voronoi } => ChiSpec {
                config: ChiConfig::Threshold { c: *c },
                voronoi: *voronoi,
            },
            ChiFile::Poisson {
                intensity,
                seed: own,
                voronoi,
            } => ChiSpec {
                config: ChiConfig::Poisson {
                    intensity: *intensity,
                    seed: own.unwrap_or(chi_seed),
                },
                voronoi: *voronoi,
            },
            ChiFile::Explicit { points, voronoi } => ChiSpec {
                config: ChiConfig::Explicit(
                    points
                        .iter()
                        .map(|p| point(&w, p, "chi point"))
                        .collect::<Result<_, _>>()?,
                ),
                voronoi: *voronoi,
            },
        };
        Ok(Resolved {
            window: w,
            xi,
            eta,
            chi,
            seed,
        })
    }
}

impl Resolved {
    /// Every input translated by `v`. Poisson auxiliary points are sampled
    /// first so that they move with the rest.
    pub fn shifted(&self, v: &[f64; MAX_DIM]) -> Result<Resolved, CliError> {
        let core = |e: diffalloc_core::Error| CliError::Core(e);
        let chi_points = match &self.chi.config {
            ChiConfig::Poisson { intensity, seed } => Some(
                diffalloc_core::quantile::build_aux_poisson(&self.window, *intensity, *seed)
                    .map_err(core)?
                    .points
                    .atoms()
                    .iter()
                    .map(|a| a.location)
                    .collect::<Vec<_>>(),
            ),
            ChiConfig::Explicit(p) => Some(p.clone()),
            _ => None,
        };
        let config = match chi_points {
            Some(p) => ChiConfig::Explicit(p.iter().map(|q| self.window.shift(q, v)).collect()),
            None => self.chi.config.clone(),
        };
        Ok(Resolved {
            window: self.window,
            xi: self.xi.shifted(v).map_err(core)?,
            eta: self.eta.shifted(v).map_err(core)?,
            chi: ChiSpec {
                config,
                voronoi: self.chi.voronoi,
            },
            seed: self.seed,
        })
    }

    /// The same inputs with Poisson auxiliary points made explicit.
    pub fn explicit_chi(&self) -> Result<Resolved, CliError> {
        self.shifted(&[0.0; MAX_DIM])
    }
}
