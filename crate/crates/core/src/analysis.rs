//! Convergence analysis of the relaxed Dirichlet–source coupling iteration for
//! the linear 1D-0D model: a heat equation on a soil column of depth `L`
//! (capacity `c`, conductivity `K`) whose top value is the water height of an
//! ODE fed by the column's surface flux.
//!
//! The fully discrete iteration (linear elements, implicit Euler) contracts
//! the interface error by the scalar
//!
//! ```text
//! S = b²·α − a/2,      Σ(ω) = ω·S + 1 − ω,      ω_opt = 1/(1 − S)
//! ```
//!
//! where `a`, `b` are the diagonal and off-diagonal of the interior system
//! matrix `M_II + Δt·A_II` and `α` is the last diagonal entry of its inverse.
//! The continuous (Laplace-domain) analogues are [`rho_continuous`] and
//! [`omega_opt_continuous`].

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Parameters of the linear column model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModelParams {
    /// Hydraulic capacity (1/m).
    pub c: f64,
    /// Hydraulic conductivity (m/s).
    pub k: f64,
    /// Column depth (m).
    pub depth: f64,
    pub dt: f64,
    pub dz: f64,
    /// Number of elements over the depth.
    pub elements: usize,
    pub omega: f64,
}

impl LinearModelParams {
    pub fn new(c: f64, k: f64, depth: f64, dt: f64, elements: usize, omega: f64) -> Result<Self> {
        let p = Self {
            c,
            k,
            depth,
            dt,
            dz: depth / elements as f64,
            elements,
            omega,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds the parameters from a mesh width; `depth / dz` must be an integer.
    pub fn with_spacing(c: f64, k: f64, depth: f64, dt: f64, dz: f64, omega: f64) -> Result<Self> {
        if !(dz > 0.0) {
            return Err(Error::invalid("dz must be positive"));
        }
        let m = (depth / dz).round();
        if m < 1.0 || ((m * dz - depth) / depth).abs() > 1e-9 {
            return Err(Error::invalid(format!("depth {depth} is not a multiple of dz {dz}")));
        }
        let mut p = Self::new(c, k, depth, dt, m as usize, omega)?;
        p.dz = dz;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.c) && pos(self.k) && pos(self.depth) && pos(self.dt) && pos(self.dz)) {
            return Err(Error::invalid("c, K, L, dt and dz must be positive and finite"));
        }
        if self.elements < 2 {
            return Err(Error::invalid("the column needs at least two elements"));
        }
        if ((self.dz * self.elements as f64 - self.depth) / self.depth).abs() > 1e-12 {
            return Err(Error::invalid("dz * M must equal L"));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::invalid(format!("omega must lie in (0, 1], got {}", self.omega)));
        }
        Ok(())
    }
}

/// Closed-form analysis of one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisResult {
    pub a: f64,
    pub b: f64,
    pub alpha_sum: f64,
    pub s: f64,
    pub omega_opt: f64,
}

/// Diagonal `a` and off-diagonal `b` of `M_II + Δt·A_II`.
pub fn toeplitz_coeffs(p: &LinearModelParams) -> (f64, f64) {
    toeplitz_coeffs_raw(p.c, p.k, p.dt, p.dz)
}

pub(crate) fn toeplitz_coeffs_raw(c: f64, k: f64, dt: f64, dz: f64) -> (f64, f64) {
    let a = 2.0 / 3.0 * c * dz + 2.0 * k * dt / dz;
    let b = c * dz / 6.0 - k * dt / dz;
    (a, b)
}

/// Corner entry of `(M_II + Δt·A_II)^{-1}` via the eigen-decomposition of the
/// tridiagonal Toeplitz matrix, as an O(M) trigonometric sum.
pub fn alpha_sum(a: f64, b: f64, elements: usize, dz: f64, depth: f64) -> Result<f64> {
    let ratio = dz / depth;
    let mut acc = 0.0;
    for j in 1..elements {
        let angle = j as f64 * PI * ratio;
        let denom = 0.5 * a - b * angle.cos();
        if !(denom > 0.0) {
            return Err(Error::NotPositiveDefinite { mode: j, value: denom });
        }
        let s = angle.sin();
        acc += s * s / denom;
    }
    Ok(ratio * acc)
}

/// Iteration factor without relaxation and the optimal relaxation parameter.
pub fn discrete_s(p: &LinearModelParams) -> Result<AnalysisResult> {
    p.validate()?;
    let (a, b) = toeplitz_coeffs(p);
    let alpha = alpha_sum(a, b, p.elements, p.dz, p.depth)?;
    let s = b * b * alpha - 0.5 * a;
    Ok(AnalysisResult {
        a,
        b,
        alpha_sum: alpha,
        s,
        omega_opt: 1.0 / (1.0 - s),
    })
}

/// Iteration factor with relaxation, Σ(ω) = ωS + 1 − ω.
pub fn sigma(omega: f64, s: f64) -> f64 {
    omega * s + (1.0 - omega)
}

fn check_laplace(s: Complex64) -> Result<()> {
    if s.re > 0.0 && s.im.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLaplaceVariable { re: s.re, im: s.im })
    }
}

/// coth via exponentials of the decaying branch; saturates to ±1 for large arguments.
fn coth(z: Complex64) -> Complex64 {
    if z.norm() > 350.0 {
        return Complex64::new(if z.re >= 0.0 { 1.0 } else { -1.0 }, 0.0);
    }
    let sign = if z.re >= 0.0 { 1.0 } else { -1.0 };
    let e = (-2.0 * sign * z).exp();
    sign * (1.0 + e) / (1.0 - e)
}

/// √(cK/s)·coth(√(cs/K)·L), the Laplace-domain interface response.
fn interface_response(s: Complex64, c: f64, k: f64, depth: f64) -> Complex64 {
    let root = (c * k / s).sqrt();
    let arg = (c * s / k).sqrt() * depth;
    root * coth(arg)
}

/// Continuous convergence factor ρ(s, ω) = 1 − ω − ω√(cK/s)·coth(√(cs/K)L).
pub fn rho_continuous(s: Complex64, omega: f64, c: f64, k: f64, depth: f64) -> Result<Complex64> {
    check_laplace(s)?;
    Ok(1.0 - omega - omega * interface_response(s, c, k, depth))
}

/// Frequency-dependent optimal relaxation, the ω with ρ(s, ω) = 0.
pub fn omega_opt_continuous(s: Complex64, c: f64, k: f64, depth: f64) -> Result<Complex64> {
    check_laplace(s)?;
    Ok(1.0 / (1.0 + interface_response(s, c, k, depth)))
}

/// Laplace transform of the coupled water height, ĥ(s) = −K/(s + √(cK/s)·coth(√(cs/K)L)).
pub fn laplace_height(s: Complex64, c: f64, k: f64, depth: f64) -> Result<Complex64> {
    check_laplace(s)?;
    Ok(-k / (s + interface_response(s, c, k, depth)))
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (l0, l1) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(l0 + (l1 - l0) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub c: f64,
    pub k: f64,
    pub dt: f64,
    pub dz: f64,
    pub result: AnalysisResult,
}

/// Which pair of parameters a sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepSpec {
    /// Vary capacity and conductivity at fixed mesh.
    Physics { c: Vec<f64>, k: Vec<f64>, dt: f64, dz: f64, depth: f64 },
    /// Vary time step and mesh width at fixed material.
    Grids { dt: Vec<f64>, dz: Vec<f64>, c: f64, k: f64, depth: f64 },
}

impl SweepSpec {
    /// Default 25×25 physics sweep over [1e-3, 1e3]².
    pub fn physics_default(dt: f64, dz: f64) -> Self {
        Self::Physics {
            c: log_space(1e-3, 1e3, 25),
            k: log_space(1e-3, 1e3, 25),
            dt,
            dz,
            depth: 1.0,
        }
    }

    fn points(&self) -> Vec<(f64, f64, f64, f64, f64)> {
        match self {
            Self::Physics { c, k, dt, dz, depth } => c
                .iter()
                .flat_map(|&ci| k.iter().map(move |&ki| (ci, ki, *dt, *dz, *depth)))
                .collect(),
            Self::Grids { dt, dz, c, k, depth } => dt
                .iter()
                .flat_map(|&ti| dz.iter().map(move |&zi| (*c, *k, ti, zi, *depth)))
                .collect(),
        }
    }
}

/// Evaluates the sweep in row-major order (outer parameter first). Points are
/// independent, so they are evaluated in parallel and collected in order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.points()
        .into_par_iter()
        .map(|(c, k, dt, dz, depth)| {
            let p = LinearModelParams::with_spacing(c, k, depth, dt, dz, 1.0)?;
            Ok(SweepRow {
                c,
                k,
                dt,
                dz: p.dz,
                result: discrete_s(&p)?,
            })
        })
        .collect()
}

/// Sweep CSV: `c, K, dt, dz, a, b, alpha, S, abs_S, omega_opt`.
pub fn write_sweep_csv<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    use crate::linear1d::fmt_f;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["c", "K", "dt", "dz", "a", "b", "alpha", "S", "abs_S", "omega_opt"])?;
    for r in rows {
        let v = &r.result;
        out.write_record(
            [r.c, r.k, r.dt, r.dz, v.a, v.b, v.alpha_sum, v.s, v.s.abs(), v.omega_opt].map(fmt_f),
        )?;
    }
    out.flush()?;
    Ok(())
}
