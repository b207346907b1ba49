//! 1D surface flow: shallow water equations or the kinematic-wave
//! approximation, cell-centred finite volumes with a local Lax-Friedrichs flux
//! and implicit Euler in time. All quantities are SI.

use log::debug;

use crate::error::{Error, Result};
use crate::linalg::solve_dense;

/// Depth below which cells are clamped after a solve.
pub const H_FLOOR: f64 = 1e-12;

/// Most negative depth that is clamped silently (with a log entry) instead of reported.
pub const DEFAULT_CLAMP_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceModel {
    /// Full SWE without friction or bathymetry; `g` in m/s².
    Swe { g: f64 },
    /// Kinematic wave with Manning velocity `u = direction·√S_f/n·h^{2/3}`;
    /// `manning_n` in s·m^{-1/3}, `direction` is ±1.
    Kinematic { manning_n: f64, slope: f64, direction: f64 },
}

impl SurfaceModel {
    pub fn components(&self) -> usize {
        match self {
            Self::Swe { .. } => 2,
            Self::Kinematic { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Swe { g } if g > 0.0 && g.is_finite() => Ok(()),
            Self::Swe { .. } => Err(Error::invalid("gravity must be positive")),
            Self::Kinematic { manning_n, slope, direction } => {
                if !(manning_n > 0.0 && slope > 0.0 && manning_n.is_finite() && slope.is_finite()) {
                    return Err(Error::invalid("Manning coefficient and slope must be positive"));
                }
                if direction.abs() != 1.0 {
                    return Err(Error::invalid("flow direction must be +1 or -1"));
                }
                Ok(())
            }
        }
    }

    /// Velocity from the conserved variables; zero for dry cells.
    fn velocity(&self, q: [f64; 2]) -> f64 {
        let h = q[0].max(0.0);
        match *self {
            Self::Swe { .. } => {
                if h > 0.0 {
                    q[1] / h
                } else {
                    0.0
                }
            }
            Self::Kinematic { manning_n, slope, direction } => {
                direction * slope.sqrt() / manning_n * h.powf(2.0 / 3.0)
            }
        }
    }

    fn flux(&self, q: [f64; 2]) -> [f64; 2] {
        let h = q[0].max(0.0);
        let u = self.velocity(q);
        match *self {
            Self::Swe { g } => [q[1], q[1] * u + 0.5 * g * h * h],
            Self::Kinematic { .. } => [h * u, 0.0],
        }
    }

    fn wave_speed(&self, q: [f64; 2]) -> f64 {
        let h = q[0].max(0.0);
        let u = self.velocity(q);
        match *self {
            Self::Swe { g } => u.abs() + (g * h).sqrt(),
            Self::Kinematic { .. } => 5.0 / 3.0 * u.abs(),
        }
    }
}

/// Physical flux of the conserved state `q = (h, hu)`; the second component is
/// ignored and returned as zero for the kinematic model.
pub fn physical_flux(q: [f64; 2], model: &SurfaceModel) -> Result<[f64; 2]> {
    if !(q[0] >= 0.0) {
        return Err(Error::NegativeDepth { cell: 0, height: q[0] });
    }
    Ok(model.flux(q))
}

/// Local Lax-Friedrichs flux between two states.
pub fn llf_flux(ql: [f64; 2], qr: [f64; 2], model: &SurfaceModel) -> [f64; 2] {
    let (fl, fr) = (model.flux(ql), model.flux(qr));
    let lambda = model.wave_speed(ql).max(model.wave_speed(qr));
    let mut out = [0.0; 2];
    for i in 0..model.components() {
        out[i] = 0.5 * (fl[i] + fr[i]) - 0.5 * lambda * (qr[i] - ql[i]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Zero-gradient ghost cell (copy of the adjacent cell).
    Transmissive,
    /// Zero discharge: mirrored ghost for SWE, zero flux for the kinematic wave.
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundarySpec {
    pub left: Boundary,
    pub right: Boundary,
}

/// Piecewise-constant rainfall: `rate` (m/s) for `t ≤ cutoff`, zero afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rainfall {
    pub rate: f64,
    pub cutoff: f64,
}

impl Rainfall {
    pub const NONE: Self = Self { rate: 0.0, cutoff: 0.0 };

    pub fn at(&self, t: f64) -> f64 {
        if t <= self.cutoff {
            self.rate
        } else {
            0.0
        }
    }
}

/// Per-cell conserved variables; `hu` is empty for the kinematic model.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceState {
    pub h: Vec<f64>,
    pub hu: Vec<f64>,
}

impl SurfaceState {
    pub fn uniform(model: &SurfaceModel, cells: usize, h: f64) -> Self {
        Self {
            h: vec![h; cells],
            hu: if model.components() == 2 { vec![0.0; cells] } else { Vec::new() },
        }
    }

    pub fn cells(&self) -> usize {
        self.h.len()
    }

    fn q(&self, l: usize) -> [f64; 2] {
        [self.h[l], self.hu.get(l).copied().unwrap_or(0.0)]
    }

    fn pack(&self, ncomp: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(ncomp * self.cells());
        for l in 0..self.cells() {
            v.push(self.h[l]);
            if ncomp == 2 {
                v.push(self.hu[l]);
            }
        }
        v
    }

    fn unpack(v: &[f64], ncomp: usize) -> Self {
        Self {
            h: v.iter().step_by(ncomp).copied().collect(),
            hu: if ncomp == 2 { v.iter().skip(1).step_by(2).copied().collect() } else { Vec::new() },
        }
    }

    /// Total water volume per unit width, Σ h·dx.
    pub fn volume(&self, dx: f64) -> f64 {
        self.h.iter().sum::<f64>() * dx
    }
}

/// Implicit finite-volume solver for one surface strip.
#[derive(Debug, Clone)]
pub struct SurfaceSolver {
    pub model: SurfaceModel,
    pub dx: f64,
    pub boundaries: BoundarySpec,
    pub max_newton: usize,
    /// Depths in `[-clamp_limit, H_FLOOR)` are clamped to `H_FLOOR`; deeper deficits are errors.
    pub clamp_limit: f64,
    /// When false, depths are left as computed (for the linear model, where `h` may be negative).
    pub enforce_floor: bool,
}

/// Diagnostics of one implicit step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub newton_iterations: usize,
    pub residual: f64,
    /// Volume (m², per unit width) added by clamping.
    pub clamped_volume: f64,
}

impl SurfaceSolver {
    pub fn new(model: SurfaceModel, dx: f64, boundaries: BoundarySpec) -> Result<Self> {
        model.validate()?;
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::invalid("dx must be positive"));
        }
        Ok(Self {
            model,
            dx,
            boundaries,
            max_newton: 50,
            clamp_limit: DEFAULT_CLAMP_LIMIT,
            enforce_floor: true,
        })
    }

    fn ghost(&self, q: [f64; 2], side: Boundary) -> Option<[f64; 2]> {
        match (side, self.model) {
            (Boundary::Transmissive, _) => Some(q),
            (Boundary::Wall, SurfaceModel::Swe { .. }) => Some([q[0], -q[1]]),
            (Boundary::Wall, SurfaceModel::Kinematic { .. }) => None,
        }
    }

    /// Numerical fluxes at the `cells + 1` cell interfaces.
    pub fn interface_fluxes(&self, state: &SurfaceState) -> Vec<[f64; 2]> {
        let n = state.cells();
        let mut out = Vec::with_capacity(n + 1);
        let first = state.q(0);
        out.push(match self.ghost(first, self.boundaries.left) {
            Some(g) => llf_flux(g, first, &self.model),
            None => [0.0; 2],
        });
        for l in 1..n {
            out.push(llf_flux(state.q(l - 1), state.q(l), &self.model));
        }
        let last = state.q(n - 1);
        out.push(match self.ghost(last, self.boundaries.right) {
            Some(g) => llf_flux(last, g, &self.model),
            None => [0.0; 2],
        });
        out
    }

    fn residual(&self, v: &[f64], old: &[f64], source: &[f64], dt: f64) -> Vec<f64> {
        let ncomp = self.model.components();
        let state = SurfaceState::unpack(v, ncomp);
        let fluxes = self.interface_fluxes(&state);
        let ratio = dt / self.dx;
        let mut r = Vec::with_capacity(v.len());
        for l in 0..state.cells() {
            for c in 0..ncomp {
                let mut val = v[l * ncomp + c] - old[l * ncomp + c] + ratio * (fluxes[l + 1][c] - fluxes[l][c]);
                if c == 0 {
                    val -= dt * source[l];
                }
                r.push(val);
            }
        }
        r
    }

    /// One implicit Euler step. `source[l]` is the total height source `s_l + r`
    /// (m/s) of cell `l`, held constant over the step.
    pub fn implicit_fv_step(&self, old: &SurfaceState, source: &[f64], dt: f64) -> Result<(SurfaceState, StepReport)> {
        let ncomp = self.model.components();
        if source.len() != old.cells() || old.cells() == 0 {
            return Err(Error::invalid("source length must match the cell count"));
        }
        if ncomp == 2 && old.hu.len() != old.cells() {
            return Err(Error::invalid("SWE state needs one discharge per cell"));
        }
        if !(dt > 0.0) || source.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("dt must be positive and sources finite"));
        }
        let q_old = old.pack(ncomp);
        let mut q = q_old.clone();
        let n = q.len();
        let mut r = self.residual(&q, &q_old, source, dt);
        let mut report = StepReport::default();
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut converged = false;
        for it in 0..=self.max_newton {
            let rn = norm(&r);
            report.residual = rn;
            if rn <= 1e-12 * norm(&q).max(1.0) {
                report.newton_iterations = it;
                converged = true;
                break;
            }
            if it == self.max_newton || !rn.is_finite() {
                break;
            }
            let mut jac = vec![0.0; n * n];
            for j in 0..n {
                let eps = 1e-8 * q[j].abs().max(1.0);
                let mut qp = q.clone();
                qp[j] += eps;
                let rp = self.residual(&qp, &q_old, source, dt);
                for i in 0..n {
                    jac[i * n + j] = (rp[i] - r[i]) / eps;
                }
            }
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = solve_dense(jac, n, &neg)?;
            let mut lambda = 1.0;
            loop {
                let trial: Vec<f64> = q.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
                let rt = self.residual(&trial, &q_old, source, dt);
                if norm(&rt) < rn || lambda < 1e-3 {
                    q = trial;
                    r = rt;
                    break;
                }
                lambda *= 0.5;
            }
        }
        if !converged {
            return Err(Error::NewtonFailed {
                iterations: self.max_newton,
                residual: report.residual,
            });
        }
        let mut state = SurfaceState::unpack(&q, ncomp);
        for (l, h) in state.h.iter_mut().enumerate() {
            if !h.is_finite() {
                return Err(Error::NegativeDepth { cell: l, height: *h });
            }
            if self.enforce_floor && *h < H_FLOOR {
                if *h < -self.clamp_limit {
                    return Err(Error::NegativeDepth { cell: l, height: *h });
                }
                report.clamped_volume += (H_FLOOR - *h) * self.dx;
                *h = H_FLOOR;
            }
        }
        if report.clamped_volume > 0.0 {
            debug!("surface depth clamped to {H_FLOOR:e} m; added volume {:e} m^2", report.clamped_volume);
        }
        debug!("surface step: {} Newton iterations, residual {:e}", report.newton_iterations, report.residual);
        Ok((state, report))
    }

    /// Outflow probe at the left boundary: (h_0, u_0, q_out), where
    /// q_out = −h_0·u_0 is the discharge leaving through x = 0.
    pub fn outflow_probe(&self, state: &SurfaceState) -> (f64, f64, f64) {
        let q = state.q(0);
        let u = self.model.velocity(q);
        (q[0], u, 0.0 - q[0] * u)
    }
}

/// Converts a Manning coefficient given in m^{1/3}·min to SI (s·m^{-1/3}).
pub fn manning_from_minutes(n_min: f64) -> f64 {
    n_min * 60.0
}

pub fn manning_to_minutes(n_si: f64) -> f64 {
    n_si / 60.0
}

/// Converts a rate in m/min to m/s.
pub fn rate_from_per_minute(r: f64) -> f64 {
    r / 60.0
}

pub fn rate_to_per_minute(r: f64) -> f64 {
    r * 60.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const SWE: SurfaceModel = SurfaceModel::Swe { g: 9.81 };

    fn kin(direction: f64) -> SurfaceModel {
        SurfaceModel::Kinematic {
            manning_n: manning_from_minutes(3.31e-3),
            slope: 0.0005,
            direction,
        }
    }

    const WALLS: BoundarySpec = BoundarySpec {
        left: Boundary::Wall,
        right: Boundary::Wall,
    };

    #[test]
    fn physical_flux_hand_values() {
        assert_eq!(physical_flux([1.0, 0.0], &SWE).unwrap(), [0.0, 4.905]);
        assert_eq!(physical_flux([0.0, 0.0], &kin(1.0)).unwrap(), [0.0, 0.0]);
        assert!(physical_flux([-1e-3, 0.0], &SWE).is_err());
        // u in m/min from the tabulated units
        let u_min = 0.0005f64.sqrt() / 3.31e-3 * 0.01f64.powf(2.0 / 3.0);
        assert_relative_eq!(u_min, 0.313_562, max_relative = 1e-5);
        let f = physical_flux([0.01, 0.0], &kin(1.0)).unwrap();
        assert_relative_eq!(f[0], 0.01 * u_min / 60.0, max_relative = 1e-14);
    }

    #[test]
    fn llf_consistency_and_dissipation() {
        for (q, m) in [([0.3, 0.2], SWE), ([0.02, 0.0], kin(-1.0)), ([1.0, 0.0], SWE)] {
            assert_eq!(llf_flux(q, q, &m), m.flux(q));
        }
        // h_L = 2, h_R = 1 at rest: F_h = 0.5·λ with λ = √(2g)
        let f = llf_flux([2.0, 0.0], [1.0, 0.0], &SWE);
        assert_relative_eq!(f[0], 0.5 * (2.0f64 * 9.81).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(f[1], 0.5 * (0.5 * 9.81 * 4.0 + 0.5 * 9.81), max_relative = 1e-15);
    }

    #[test]
    fn steady_state_is_preserved() {
        let solver = SurfaceSolver::new(SWE, 0.4, WALLS).unwrap();
        let s0 = SurfaceState::uniform(&SWE, 5, 0.1);
        let (s1, rep) = solver.implicit_fv_step(&s0, &[0.0; 5], 36.0).unwrap();
        assert_eq!(rep.newton_iterations, 0);
        assert_eq!(s0, s1);
    }

    #[test]
    fn uniform_rain_raises_uniformly() {
        for model in [SWE, kin(1.0)] {
            let open = BoundarySpec {
                left: Boundary::Transmissive,
                right: Boundary::Transmissive,
            };
            let solver = SurfaceSolver::new(model, 80.0, open).unwrap();
            let s0 = SurfaceState::uniform(&model, 5, 0.01);
            let (s1, _) = solver.implicit_fv_step(&s0, &[1e-5; 5], 60.0).unwrap();
            for h in &s1.h {
                assert_relative_eq!(*h, 0.01 + 6e-4, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn wall_boundaries_conserve_volume() {
        for model in [SWE, kin(-1.0), kin(1.0)] {
            let solver = SurfaceSolver::new(model, 0.5, WALLS).unwrap();
            let mut s = SurfaceState::uniform(&model, 8, 0.0);
            for (l, h) in s.h.iter_mut().enumerate() {
                *h = 0.05 + 0.02 * (l as f64).sin();
            }
            let v0 = s.volume(0.5);
            for _ in 0..10 {
                s = solver.implicit_fv_step(&s, &[0.0; 8], 0.1).unwrap().0;
                assert!(((s.volume(0.5) - v0) / v0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sources_change_volume_by_their_integral() {
        let model = kin(-1.0);
        let solver = SurfaceSolver::new(model, 80.0, WALLS).unwrap();
        let mut s = SurfaceState::uniform(&model, 5, 1e-3);
        let src = [1e-6, -2e-7, 3e-6, 0.0, 5e-6];
        let v0 = s.volume(80.0);
        s = solver.implicit_fv_step(&s, &src, 60.0).unwrap().0;
        let added: f64 = src.iter().sum::<f64>() * 60.0 * 80.0;
        assert!(((s.volume(80.0) - v0) - added).abs() < 1e-10 * added.abs());
    }

    #[test]
    fn outflow_leaves_through_transmissive_boundary() {
        let model = kin(-1.0);
        let solver = SurfaceSolver::new(
            model,
            80.0,
            BoundarySpec {
                left: Boundary::Transmissive,
                right: Boundary::Wall,
            },
        )
        .unwrap();
        let s0 = SurfaceState::uniform(&model, 5, 1e-2);
        let (s1, _) = solver.implicit_fv_step(&s0, &[0.0; 5], 60.0).unwrap();
        assert!(s1.volume(80.0) < s0.volume(80.0));
        let (h0, u0, q) = solver.outflow_probe(&s1);
        assert!(u0 < 0.0 && q == -h0 * u0 && q > 0.0);
    }

    #[test]
    fn small_deficits_are_clamped_large_ones_reported() {
        let model = kin(1.0);
        let solver = SurfaceSolver::new(model, 1.0, WALLS).unwrap();
        let s0 = SurfaceState::uniform(&model, 3, 0.0);
        let (s1, rep) = solver.implicit_fv_step(&s0, &[-1e-10; 3], 1.0).unwrap();
        assert!(s1.h.iter().all(|&h| h == H_FLOOR));
        assert!(rep.clamped_volume > 0.0);
        assert!(matches!(
            solver.implicit_fv_step(&s0, &[-1e-3; 3], 1.0),
            Err(Error::NegativeDepth { .. })
        ));
    }

    #[test]
    fn unit_conversions_round_trip() {
        assert_relative_eq!(manning_to_minutes(manning_from_minutes(3.31e-3)), 3.31e-3, max_relative = 1e-12);
        assert_relative_eq!(rate_to_per_minute(rate_from_per_minute(3.3e-4)), 3.3e-4, max_relative = 1e-12);
        assert_relative_eq!(rate_from_per_minute(3.3e-4), 5.5e-6, max_relative = 1e-12);
    }

    #[test]
    fn rainfall_schedule() {
        let r = Rainfall { rate: 2.0, cutoff: 10.0 };
        assert_eq!(r.at(10.0), 2.0);
        assert_eq!(r.at(10.5), 0.0);
        assert_eq!(Rainfall::NONE.at(0.0), 0.0);
    }

    #[test]
    fn validation() {
        assert!(SurfaceSolver::new(SurfaceModel::Swe { g: 0.0 }, 1.0, WALLS).is_err());
        assert!(SurfaceSolver::new(kin(0.5), 1.0, WALLS).is_err());
        assert!(SurfaceSolver::new(SWE, 0.0, WALLS).is_err());
    }
}
