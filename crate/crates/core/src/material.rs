//! Van Genuchten–Mualem soil hydraulics and spatial material fields.
//!
//! All heads are in metres (negative when unsaturated), conductivities in m/s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which water-content measure enters the Mualem conductivity bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MualemArgument {
    /// Raw volumetric water content θ(ψ). For θ_S < 1 this makes K jump at ψ = 0.
    #[default]
    WaterContent,
    /// Effective saturation (θ − θ_R)/(θ_S − θ_R); K is continuous at ψ = 0.
    EffectiveSaturation,
}

/// Soil constants of the van Genuchten–Mualem model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VanGenuchtenParams {
    /// Inverse air-entry suction (1/m).
    pub alpha: f64,
    /// Pore-size distribution exponent, > 1.
    pub n: f64,
    pub theta_r: f64,
    pub theta_s: f64,
    /// Saturated conductivity (m/s).
    pub k_s: f64,
    #[serde(default)]
    pub mualem: MualemArgument,
}

impl VanGenuchtenParams {
    pub const BEIT_NETOFA_CLAY: Self = Self {
        alpha: 0.152,
        n: 1.17,
        theta_r: 0.0,
        theta_s: 0.446,
        k_s: 9.49e-9,
        mualem: MualemArgument::WaterContent,
    };

    pub const SILT_LOAM: Self = Self {
        alpha: 0.423,
        n: 2.06,
        theta_r: 0.131,
        theta_s: 0.396,
        k_s: 5.74e-7,
        mualem: MualemArgument::WaterContent,
    };

    /// Sandy loam with the largest of the three tabulated conductivities.
    pub const SANDY_LOAM: Self = Self {
        alpha: 100.0,
        n: 2.0,
        theta_r: 0.2,
        theta_s: 1.0,
        k_s: 1.16e-5,
        mualem: MualemArgument::WaterContent,
    };

    pub const PRESET_NAMES: [&'static str; 3] = ["beit-netofa-clay", "silt-loam", "sandy-loam"];

    pub fn new(alpha: f64, n: f64, theta_r: f64, theta_s: f64, k_s: f64) -> Result<Self> {
        let p = Self {
            alpha,
            n,
            theta_r,
            theta_s,
            k_s,
            mualem: MualemArgument::WaterContent,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "beit-netofa-clay" => Some(Self::BEIT_NETOFA_CLAY),
            "silt-loam" => Some(Self::SILT_LOAM),
            "sandy-loam" => Some(Self::SANDY_LOAM),
            _ => None,
        }
    }

    pub fn with_mualem(mut self, mualem: MualemArgument) -> Self {
        self.mualem = mualem;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.n, self.theta_r, self.theta_s, self.k_s]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("van Genuchten parameters must be finite"));
        }
        if self.n <= 1.0 {
            return Err(Error::invalid(format!("n_G must exceed 1, got {}", self.n)));
        }
        if !(0.0 <= self.theta_r && self.theta_r < self.theta_s && self.theta_s <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 <= theta_R < theta_S <= 1, got theta_R = {}, theta_S = {}",
                self.theta_r, self.theta_s
            )));
        }
        if self.alpha <= 0.0 || self.k_s <= 0.0 {
            return Err(Error::invalid("alpha and K_s must be positive"));
        }
        Ok(())
    }

    fn m(&self) -> f64 {
        (self.n - 1.0) / self.n
    }

    /// Volumetric water content θ(ψ).
    pub fn theta(&self, psi: f64) -> f64 {
        if psi > 0.0 {
            return self.theta_s;
        }
        let x = self.alpha * psi.abs();
        let frac = 1.0 / (1.0 + x.powf(self.n));
        self.theta_r + (self.theta_s - self.theta_r) * frac.powf(self.m())
    }

    /// Hydraulic conductivity K(ψ).
    pub fn conductivity(&self, psi: f64) -> f64 {
        if psi > 0.0 {
            return self.k_s;
        }
        let w = self.mualem_argument(psi);
        let m = self.m();
        let bracket = -(m * (-w.powf(1.0 / m)).ln_1p()).exp_m1();
        self.k_s * w.sqrt() * bracket * bracket
    }

    /// Hydraulic capacity c(ψ) = dθ/dψ.
    pub fn capacity(&self, psi: f64) -> f64 {
        if psi > 0.0 {
            return 0.0;
        }
        let x = self.alpha * psi.abs();
        self.alpha
            * (self.theta_s - self.theta_r)
            * (self.n - 1.0)
            * x.powf(self.n - 1.0)
            * (1.0 + x.powf(self.n)).powf(1.0 / self.n - 2.0)
    }

    /// One-sided derivative dK/dψ; zero on the saturated branch ψ ≥ 0.
    pub fn conductivity_derivative(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            return 0.0;
        }
        let w = self.mualem_argument(psi);
        let dw_dpsi = match self.mualem {
            MualemArgument::WaterContent => self.capacity(psi),
            MualemArgument::EffectiveSaturation => {
                self.capacity(psi) / (self.theta_s - self.theta_r)
            }
        };
        let m = self.m();
        let wp = w.powf(1.0 / m);
        let inner = (1.0 - wp).max(f64::MIN_POSITIVE);
        let bracket = -(m * inner.ln()).exp_m1();
        let dbracket_dw = inner.powf(m - 1.0) * wp / w;
        let dk_dw = self.k_s * (0.5 / w.sqrt() * bracket * bracket + w.sqrt() * 2.0 * bracket * dbracket_dw);
        dk_dw * dw_dpsi
    }

    fn mualem_argument(&self, psi: f64) -> f64 {
        let theta = self.theta(psi);
        match self.mualem {
            MualemArgument::WaterContent => theta,
            MualemArgument::EffectiveSaturation => {
                (theta - self.theta_r) / (self.theta_s - self.theta_r)
            }
        }
    }

    /// Location and value of the capacity maximum, by golden-section search on (−10, 0).
    pub fn max_capacity(&self) -> (f64, f64) {
        let invphi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (-10.0_f64, 0.0_f64);
        let mut x1 = hi - invphi * (hi - lo);
        let mut x2 = lo + invphi * (hi - lo);
        let (mut f1, mut f2) = (self.capacity(x1), self.capacity(x2));
        while hi - lo > 1e-13 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + invphi * (hi - lo);
                f2 = self.capacity(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - invphi * (hi - lo);
                f1 = self.capacity(x1);
            }
        }
        let psi = 0.5 * (lo + hi);
        (psi, self.capacity(psi))
    }

    fn blend(left: &Self, right: &Self, beta: f64) -> Self {
        let mix = |l: f64, r: f64| (1.0 - beta) * l + beta * r;
        Self {
            alpha: mix(left.alpha, right.alpha),
            n: mix(left.n, right.n),
            theta_r: mix(left.theta_r, right.theta_r),
            theta_s: mix(left.theta_s, right.theta_s),
            k_s: mix(left.k_s, right.k_s),
            mualem: left.mualem,
        }
    }
}

/// Constitutive law at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointMaterial {
    VanGenuchten(VanGenuchtenParams),
    /// θ = c·ψ with constant K: the linearised model.
    Linear { capacity: f64, conductivity: f64 },
}

impl PointMaterial {
    pub fn theta(&self, psi: f64) -> f64 {
        match self {
            Self::VanGenuchten(p) => p.theta(psi),
            Self::Linear { capacity, .. } => capacity * psi,
        }
    }

    pub fn conductivity(&self, psi: f64) -> f64 {
        match self {
            Self::VanGenuchten(p) => p.conductivity(psi),
            Self::Linear { conductivity, .. } => *conductivity,
        }
    }

    pub fn capacity(&self, psi: f64) -> f64 {
        match self {
            Self::VanGenuchten(p) => p.capacity(psi),
            Self::Linear { capacity, .. } => *capacity,
        }
    }

    pub fn conductivity_derivative(&self, psi: f64) -> f64 {
        match self {
            Self::VanGenuchten(p) => p.conductivity_derivative(psi),
            Self::Linear { .. } => 0.0,
        }
    }
}

/// Spatial distribution of soil properties over x.
#[derive(Debug, Clone, PartialEq)]
pub enum MaterialField {
    Homogeneous(VanGenuchtenParams),
    /// tanh blend from `left` to `right` centred at `center_x`.
    Blended {
        left: VanGenuchtenParams,
        right: VanGenuchtenParams,
        center_x: f64,
        steepness: f64,
    },
    Linear { capacity: f64, conductivity: f64 },
}

impl MaterialField {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Homogeneous(p) => p.validate(),
            Self::Blended {
                left,
                right,
                center_x,
                steepness,
            } => {
                left.validate()?;
                right.validate()?;
                if !center_x.is_finite() || !(*steepness > 0.0) || !steepness.is_finite() {
                    return Err(Error::invalid("blend needs finite center and positive steepness"));
                }
                Ok(())
            }
            Self::Linear {
                capacity,
                conductivity,
            } => {
                if !(*capacity >= 0.0 && *conductivity > 0.0) {
                    return Err(Error::invalid("linear material needs c >= 0 and K > 0"));
                }
                Ok(())
            }
        }
    }

    /// Blend weight β(x) = (tanh(steepness·(x − center)) + 1)/2; zero for unblended fields.
    pub fn blend_weight(&self, x: f64) -> f64 {
        match self {
            Self::Blended {
                center_x,
                steepness,
                ..
            } => 0.5 * ((steepness * (x - center_x)).tanh() + 1.0),
            _ => 0.0,
        }
    }

    /// Van Genuchten parameters at `x`, `None` for the linear material.
    pub fn params_at(&self, x: f64) -> Option<VanGenuchtenParams> {
        match self {
            Self::Homogeneous(p) => Some(*p),
            Self::Blended { left, right, .. } => {
                Some(VanGenuchtenParams::blend(left, right, self.blend_weight(x)))
            }
            Self::Linear { .. } => None,
        }
    }

    pub fn at(&self, x: f64) -> PointMaterial {
        match self {
            Self::Linear {
                capacity,
                conductivity,
            } => PointMaterial::Linear {
                capacity: *capacity,
                conductivity: *conductivity,
            },
            _ => PointMaterial::VanGenuchten(self.params_at(x).expect("van Genuchten field")),
        }
    }

    /// True when the field does not vary with x.
    pub fn is_uniform(&self) -> bool {
        !matches!(self, Self::Blended { .. })
    }
}
