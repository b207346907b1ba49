//! Scenario configuration (TOML), named presets and assembly of the coupled model.

use serde::{Deserialize, Serialize};

use crate::coupling::{CoupledModel, CoupledState, CouplingConfig};
use crate::error::{Error, Result};
use crate::material::{MaterialField, MualemArgument, VanGenuchtenParams};
use crate::richards2d::{FluxEvaluation, Grid2D, NewtonSettings, RichardsSolver};
use crate::surface1d::{self, Boundary, BoundarySpec, Rainfall, SurfaceModel, SurfaceSolver};

pub const PRESETS: [&str; 6] = [
    "trench-loam",
    "trench-clay",
    "trench-mixed",
    "hillslope-sandy",
    "hillslope-silt",
    "hillslope-silt-lowrain",
];

/// Lengths in m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub lx: f64,
    pub lz: f64,
    pub mx: usize,
    pub mz: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MualemChoice {
    WaterContent,
    #[default]
    EffectiveSaturation,
}

impl From<MualemChoice> for MualemArgument {
    fn from(m: MualemChoice) -> Self {
        match m {
            MualemChoice::WaterContent => MualemArgument::WaterContent,
            MualemChoice::EffectiveSaturation => MualemArgument::EffectiveSaturation,
        }
    }
}

/// Soil: a preset name, optionally with individual parameters replaced.
/// `alpha` in 1/m, `k_s` in m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoilSpec {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_s: Option<f64>,
}

impl SoilSpec {
    pub fn named(name: &str) -> Self {
        Self {
            preset: name.to_string(),
            alpha: None,
            n: None,
            theta_r: None,
            theta_s: None,
            k_s: None,
        }
    }

    pub fn resolve(&self, mualem: MualemChoice) -> Result<VanGenuchtenParams> {
        let base = VanGenuchtenParams::preset(&self.preset).ok_or_else(|| {
            Error::Config(format!(
                "unknown soil preset '{}' (known: {})",
                self.preset,
                VanGenuchtenParams::PRESET_NAMES.join(", ")
            ))
        })?;
        let p = VanGenuchtenParams::new(
            self.alpha.unwrap_or(base.alpha),
            self.n.unwrap_or(base.n),
            self.theta_r.unwrap_or(base.theta_r),
            self.theta_s.unwrap_or(base.theta_s),
            self.k_s.unwrap_or(base.k_s),
        )?;
        Ok(p.with_mualem(mualem.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaterialSpec {
    Homogeneous {
        soil: SoilSpec,
        #[serde(default)]
        mualem: MualemChoice,
    },
    /// `center_x` in m, `steepness` in 1/m.
    Blended {
        left: SoilSpec,
        right: SoilSpec,
        center_x: f64,
        steepness: f64,
        #[serde(default)]
        mualem: MualemChoice,
    },
    /// Constant capacity (1/m) and conductivity (m/s).
    Linear { capacity: f64, conductivity: f64 },
}

impl MaterialSpec {
    pub fn field(&self) -> Result<MaterialField> {
        let f = match self {
            Self::Homogeneous { soil, mualem } => MaterialField::Homogeneous(soil.resolve(*mualem)?),
            Self::Blended {
                left,
                right,
                center_x,
                steepness,
                mualem,
            } => MaterialField::Blended {
                left: left.resolve(*mualem)?,
                right: right.resolve(*mualem)?,
                center_x: *center_x,
                steepness: *steepness,
            },
            Self::Linear {
                capacity,
                conductivity,
            } => MaterialField::Linear {
                capacity: *capacity,
                conductivity: *conductivity,
            },
        };
        f.validate()?;
        Ok(f)
    }
}

/// `ψ_0(x, z) = constant + z_coeff·z + x_coeff·x` (m); `h0` in m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub constant: f64,
    pub z_coeff: f64,
    #[serde(default)]
    pub x_coeff: f64,
    pub h0: f64,
}

impl InitialSpec {
    pub fn psi0(&self, x: f64, z: f64) -> f64 {
        self.constant + self.z_coeff * z + self.x_coeff * x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SubsurfaceBoundary {
    /// No-flux everywhere except the interface.
    NoFlux,
    /// Both vertical edges below `height` (m) hold the initial profile.
    SideDirichlet { height: f64 },
    /// Bottom edge held at zero head.
    BottomZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateUnit {
    #[serde(rename = "m/s")]
    MPerS,
    #[serde(rename = "m/min")]
    MPerMin,
    #[serde(rename = "cm/h")]
    CmPerH,
}

impl RateUnit {
    pub fn to_si(self, v: f64) -> f64 {
        match self {
            Self::MPerS => v,
            Self::MPerMin => surface1d::rate_from_per_minute(v),
            Self::CmPerH => v / 100.0 / 3600.0,
        }
    }

    pub fn from_si(self, v: f64) -> f64 {
        match self {
            Self::MPerS => v,
            Self::MPerMin => surface1d::rate_to_per_minute(v),
            Self::CmPerH => v * 100.0 * 3600.0,
        }
    }
}

/// Rainfall `rate` in `unit` until `cutoff` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RainSpec {
    pub rate: f64,
    pub unit: RateUnit,
    pub cutoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryChoice {
    Transmissive,
    Wall,
}

impl From<BoundaryChoice> for Boundary {
    fn from(b: BoundaryChoice) -> Self {
        match b {
            BoundaryChoice::Transmissive => Boundary::Transmissive,
            BoundaryChoice::Wall => Boundary::Wall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManningUnit {
    /// s·m^{-1/3}
    Si,
    /// the per-minute convention, min·m^{-1/3}
    Minutes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SurfaceSpec {
    /// `g` in m/s².
    Swe {
        g: f64,
        left: BoundaryChoice,
        right: BoundaryChoice,
    },
    /// `slope` dimensionless; `direction` ±1 (−1 drains towards x = 0).
    Kinematic {
        manning_n: f64,
        manning_unit: ManningUnit,
        slope: f64,
        direction: f64,
        left: BoundaryChoice,
        right: BoundaryChoice,
    },
}

impl SurfaceSpec {
    pub fn model(&self) -> SurfaceModel {
        match *self {
            Self::Swe { g, .. } => SurfaceModel::Swe { g },
            Self::Kinematic {
                manning_n,
                manning_unit,
                slope,
                direction,
                ..
            } => SurfaceModel::Kinematic {
                manning_n: match manning_unit {
                    ManningUnit::Si => manning_n,
                    ManningUnit::Minutes => surface1d::manning_from_minutes(manning_n),
                },
                slope,
                direction,
            },
        }
    }

    pub fn boundaries(&self) -> BoundarySpec {
        let (l, r) = match *self {
            Self::Swe { left, right, .. } | Self::Kinematic { left, right, .. } => (left, right),
        };
        BoundarySpec {
            left: l.into(),
            right: r.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FluxChoice {
    #[default]
    Midpoint,
    Variational,
}

/// `tol` in m, `dt` in s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub omega: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub output_every: usize,
    #[serde(default)]
    pub flux: FluxChoice,
    /// Surface depth deficits (m) down to this size are clamped to the floor.
    #[serde(default = "default_clamp_limit")]
    pub surface_clamp_limit: f64,
}

fn default_clamp_limit() -> f64 {
    surface1d::DEFAULT_CLAMP_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub damping: usize,
}

impl Default for NewtonSpec {
    fn default() -> Self {
        let d = NewtonSettings::default();
        Self {
            abs_tol: d.abs_tol,
            rel_tol: d.rel_tol,
            max_iters: d.max_iters,
            damping: d.damping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub geometry: Geometry,
    pub material: MaterialSpec,
    pub initial: InitialSpec,
    pub boundary: SubsurfaceBoundary,
    pub rain: RainSpec,
    pub surface: SurfaceSpec,
    pub coupling: CouplingSpec,
    #[serde(default)]
    pub newton: NewtonSpec,
}

fn trench(name: &str, material: MaterialSpec) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        geometry: Geometry {
            lx: 2.0,
            lz: 3.0,
            mx: 5,
            mz: 8,
        },
        material,
        initial: InitialSpec {
            constant: 1.0,
            z_coeff: -1.0,
            x_coeff: 0.0,
            h0: 1e-6,
        },
        boundary: SubsurfaceBoundary::SideDirichlet { height: 1.0 },
        rain: RainSpec {
            rate: 10.0,
            unit: RateUnit::CmPerH,
            cutoff: 7200.0,
        },
        surface: SurfaceSpec::Swe {
            g: 9.81,
            left: BoundaryChoice::Transmissive,
            right: BoundaryChoice::Transmissive,
        },
        coupling: CouplingSpec {
            omega: 1.0,
            tol: 1e-8,
            max_iters: 200,
            dt: 36.0,
            n_steps: 300,
            output_every: 10,
            flux: FluxChoice::Midpoint,
            surface_clamp_limit: surface1d::DEFAULT_CLAMP_LIMIT,
        },
        newton: NewtonSpec::default(),
    }
}

fn hillslope(name: &str, soil: &str, dt: f64, rain_per_min: f64, clamp: f64) -> ScenarioConfig {
    let n_steps = (300.0 * 60.0 / dt).round() as usize;
    ScenarioConfig {
        name: name.to_string(),
        geometry: Geometry {
            lx: 400.0,
            lz: 5.0,
            mx: 5,
            mz: 25,
        },
        material: MaterialSpec::Homogeneous {
            soil: SoilSpec::named(soil),
            mualem: MualemChoice::EffectiveSaturation,
        },
        initial: InitialSpec {
            constant: 4.0,
            z_coeff: -1.0,
            x_coeff: 0.2 / 400.0,
            h0: 0.0,
        },
        boundary: SubsurfaceBoundary::NoFlux,
        rain: RainSpec {
            rate: rain_per_min,
            unit: RateUnit::MPerMin,
            cutoff: 200.0 * 60.0,
        },
        surface: SurfaceSpec::Kinematic {
            manning_n: 3.31e-3,
            manning_unit: ManningUnit::Minutes,
            slope: 0.0005,
            direction: -1.0,
            left: BoundaryChoice::Transmissive,
            right: BoundaryChoice::Wall,
        },
        coupling: CouplingSpec {
            omega: 1.0,
            tol: 1e-8,
            max_iters: 200,
            dt,
            n_steps,
            // one snapshot per 10 simulated minutes
            output_every: (600.0 / dt).round() as usize,
            flux: FluxChoice::Midpoint,
            surface_clamp_limit: clamp,
        },
        newton: NewtonSpec::default(),
    }
}

/// Named preset in SI units.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let homogeneous = |soil: &str| MaterialSpec::Homogeneous {
        soil: SoilSpec::named(soil),
        mualem: MualemChoice::EffectiveSaturation,
    };
    Ok(match name {
        "trench-loam" => trench(name, homogeneous("silt-loam")),
        "trench-clay" => trench(name, homogeneous("beit-netofa-clay")),
        "trench-mixed" => trench(
            name,
            MaterialSpec::Blended {
                left: SoilSpec::named("silt-loam"),
                right: SoilSpec::named("beit-netofa-clay"),
                center_x: 1.0,
                steepness: 4.0,
                mualem: MualemChoice::EffectiveSaturation,
            },
        ),
        // sandy loam infiltrates faster than it rains, so the dry surface is clamped
        "hillslope-sandy" => hillslope(name, "sandy-loam", 60.0, 3.3e-4, 1.0),
        "hillslope-silt" => hillslope(name, "silt-loam", 1.0, 3.3e-4, surface1d::DEFAULT_CLAMP_LIMIT),
        "hillslope-silt-lowrain" => hillslope(name, "silt-loam", 1.0, 3.3e-5, surface1d::DEFAULT_CLAMP_LIMIT),
        _ => {
            return Err(Error::Config(format!(
                "unknown preset '{name}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    })
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key=value` overrides, where `key` is a dotted path into the
    /// config (e.g. `coupling.dt=18`) and `value` is TOML (bare words are strings).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            set_path(&mut root, &path, value).map_err(|e| Error::Config(format!("override '{item}': {e}")))?;
        }
        root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        let g = &self.geometry;
        Grid2D::new(g.lx, g.lz, g.mx, g.mz).map_err(|e| Error::Config(e.to_string()))?;
        if let SubsurfaceBoundary::SideDirichlet { height } = self.boundary {
            if !(height >= 0.0 && height < g.lz) {
                return cfg_err(format!("Dirichlet height {height} must lie in [0, L_z)"));
            }
        }
        let end = self.coupling.dt * self.coupling.n_steps as f64;
        if !(self.rain.cutoff >= 0.0 && self.rain.cutoff <= end * (1.0 + 1e-12)) {
            return cfg_err(format!("rain cutoff {} must lie within [0, T = {end}]", self.rain.cutoff));
        }
        if !(self.rain.rate.is_finite() && self.rain.rate >= 0.0) {
            return cfg_err("rain rate must be finite and nonnegative".into());
        }
        if !(self.coupling.surface_clamp_limit >= 0.0) {
            return cfg_err("surface_clamp_limit must be nonnegative".into());
        }
        if !(self.initial.h0 >= 0.0) {
            return cfg_err("h0 must be nonnegative".into());
        }
        self.material.field().map_err(|e| Error::Config(e.to_string()))?;
        self.surface.model().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.coupling_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.newton_settings().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn coupling_config(&self) -> CouplingConfig {
        let c = &self.coupling;
        CouplingConfig {
            omega: c.omega,
            tol: c.tol,
            max_iters: c.max_iters,
            dt: c.dt,
            n_steps: c.n_steps,
            output_every: c.output_every,
        }
    }

    pub fn newton_settings(&self) -> NewtonSettings {
        let n = &self.newton;
        NewtonSettings {
            abs_tol: n.abs_tol,
            rel_tol: n.rel_tol,
            max_iters: n.max_iters,
            damping: n.damping,
        }
    }

    pub fn rainfall(&self) -> Rainfall {
        Rainfall {
            rate: self.rain.unit.to_si(self.rain.rate),
            cutoff: self.rain.cutoff,
        }
    }

    /// Assembles the coupled model and its initial state.
    pub fn build(&self) -> Result<(CoupledModel, CoupledState)> {
        self.validate()?;
        let g = &self.geometry;
        let grid = Grid2D::new(g.lx, g.lz, g.mx, g.mz)?;
        let mut richards = RichardsSolver::new(grid, self.material.field()?, self.newton_settings())?;
        richards.flux_mode = match self.coupling.flux {
            FluxChoice::Midpoint => FluxEvaluation::Midpoint,
            FluxChoice::Variational => FluxEvaluation::Variational,
        };
        let init = self.initial.clone();
        match self.boundary {
            SubsurfaceBoundary::NoFlux => {}
            SubsurfaceBoundary::SideDirichlet { height } => {
                let lx = g.lx;
                richards.fix_nodes(
                    |x, z| (x == 0.0 || (x - lx).abs() < 1e-9 * lx) && z <= height + 1e-12,
                    |x, z| init.psi0(x, z),
                );
            }
            SubsurfaceBoundary::BottomZero => richards.fix_nodes(|_, z| z == 0.0, |_, _| 0.0),
        }
        let mut surface = SurfaceSolver::new(self.surface.model(), grid.dx(), self.surface.boundaries())?;
        surface.clamp_limit = self.coupling.surface_clamp_limit;
        let model = CoupledModel::new(richards, surface, self.rainfall(), self.coupling_config())?;
        let state = model.initial_state(|x, z| init.psi0(x, z), init.h0);
        Ok((model, state))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(node: &mut toml::Value, path: &[&str], value: toml::Value) -> std::result::Result<(), String> {
    let table = node.as_table_mut().ok_or("path does not lead through a table")?;
    match path {
        [] => Err("empty key".into()),
        [last] => {
            let coerced = match (table.get(*last), value) {
                // integers given for float fields
                (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, v) => v,
            };
            table.insert(last.to_string(), coerced);
            Ok(())
        }
        [head, rest @ ..] => {
            let child = table
                .entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            set_path(child, rest, value)
        }
    }
}
