//! Richards' equation in mixed form on a rectangle `[0, L_x] × [0, L_z]`:
//! bilinear finite elements with 2×2 Gauss quadrature, implicit Euler in time
//! and Newton's method. The top edge `z = L_z` is the interface with the
//! surface flow and always carries Dirichlet data; further Dirichlet nodes can
//! be fixed at construction. All other boundaries are no-flux.

use std::io::Write;

use log::debug;

use crate::error::{Error, Result};
use crate::linalg::BandedMatrix;
use crate::linear1d::fmt_f;
use crate::material::{MaterialField, PointMaterial};

/// Uniform Cartesian grid; nodes are numbered x-fastest, `j·(M_x+1) + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub lx: f64,
    pub lz: f64,
    pub mx: usize,
    pub mz: usize,
}

impl Grid2D {
    pub fn new(lx: f64, lz: f64, mx: usize, mz: usize) -> Result<Self> {
        if !(lx > 0.0 && lz > 0.0 && lx.is_finite() && lz.is_finite()) || mx == 0 || mz == 0 {
            return Err(Error::invalid("grid lengths and element counts must be positive"));
        }
        Ok(Self { lx, lz, mx, mz })
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.mx as f64
    }

    pub fn dz(&self) -> f64 {
        self.lz / self.mz as f64
    }

    pub fn nodes(&self) -> usize {
        (self.mx + 1) * (self.mz + 1)
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.mx + 1) + i
    }

    pub fn node_x(&self, n: usize) -> f64 {
        (n % (self.mx + 1)) as f64 * self.dx()
    }

    pub fn node_z(&self, n: usize) -> f64 {
        (n / (self.mx + 1)) as f64 * self.dz()
    }

    /// Indices of the `M_x + 1` interface nodes, left to right.
    pub fn top_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.mx).map(move |i| self.node(i, self.mz))
    }

    fn element_nodes(&self, i: usize, j: usize) -> [usize; 4] {
        let n0 = self.node(i, j);
        let up = self.mx + 1;
        [n0, n0 + 1, n0 + up, n0 + up + 1]
    }
}

/// Nodal pressure heads at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsurfaceState {
    pub psi: Vec<f64>,
    pub t: f64,
}

impl SubsurfaceState {
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            psi: (0..grid.nodes()).map(|n| f(grid.node_x(n), grid.node_z(n))).collect(),
            t: 0.0,
        }
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        if self.psi.len() != grid.nodes() {
            return Err(Error::invalid("state size does not match the grid"));
        }
        if self.psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("state contains non-finite heads"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Maximum number of step halvings per iteration.
    pub damping: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_iters: 50,
            damping: 10,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::invalid("Newton tolerances must be positive and max_iters >= 1"));
        }
        Ok(())
    }
}

/// How the interface flux per surface cell is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FluxEvaluation {
    /// `−K(ψ)(∂_zψ + 1)·Δx` at the top-edge midpoint of each cell.
    #[default]
    Midpoint,
    /// Nodal boundary fluxes recovered from the weak-form residual, lumped to cells.
    Variational,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
}

const GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Shape values and reference gradients at the four quadrature points.
struct Quadrature {
    /// [qp][local node]
    phi: [[f64; 4]; 4],
    /// [qp][local node] = (∂ξ, ∂η)
    dphi: [[[f64; 2]; 4]; 4],
    /// reference coordinates (ξ, η) per qp
    points: [[f64; 2]; 4],
}

fn quadrature() -> Quadrature {
    let mut q = Quadrature {
        phi: [[0.0; 4]; 4],
        dphi: [[[0.0; 2]; 4]; 4],
        points: [[0.0; 2]; 4],
    };
    let mut k = 0;
    for &eta in &GAUSS {
        for &xi in &GAUSS {
            q.points[k] = [xi, eta];
            q.phi[k] = [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), (1.0 - xi) * eta, xi * eta];
            q.dphi[k] = [[-(1.0 - eta), -(1.0 - xi)], [1.0 - eta, -xi], [-eta, 1.0 - xi], [eta, xi]];
            k += 1;
        }
    }
    q
}

/// Richards solver bound to a grid and material field.
pub struct RichardsSolver {
    grid: Grid2D,
    field: MaterialField,
    quad: Quadrature,
    /// material at each (element, qp), element-major
    qp_material: Vec<PointMaterial>,
    /// Dirichlet data fixed for the whole run (besides the interface)
    fixed: Vec<Option<f64>>,
    pub settings: NewtonSettings,
    pub flux_mode: FluxEvaluation,
}

impl std::fmt::Debug for RichardsSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RichardsSolver")
            .field("grid", &self.grid)
            .field("field", &self.field)
            .field("settings", &self.settings)
            .field("flux_mode", &self.flux_mode)
            .finish()
    }
}

impl RichardsSolver {
    pub fn new(grid: Grid2D, field: MaterialField, settings: NewtonSettings) -> Result<Self> {
        field.validate()?;
        settings.validate()?;
        let quad = quadrature();
        let (dx, _) = (grid.dx(), grid.dz());
        let mut qp_material = Vec::with_capacity(grid.mx * grid.mz * 4);
        for _j in 0..grid.mz {
            for i in 0..grid.mx {
                for p in &quad.points {
                    qp_material.push(field.at((i as f64 + p[0]) * dx));
                }
            }
        }
        Ok(Self {
            grid,
            field,
            quad,
            qp_material,
            fixed: vec![None; grid.nodes()],
            settings,
            flux_mode: FluxEvaluation::default(),
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn field(&self) -> &MaterialField {
        &self.field
    }

    /// Fixes Dirichlet data `value(x, z)` at every non-interface node selected by `select(x, z)`.
    pub fn fix_nodes(&mut self, select: impl Fn(f64, f64) -> bool, value: impl Fn(f64, f64) -> f64) {
        let top = self.grid.mz;
        for n in 0..self.grid.nodes() {
            let (x, z) = (self.grid.node_x(n), self.grid.node_z(n));
            if n / (self.grid.mx + 1) != top && select(x, z) {
                self.fixed[n] = Some(value(x, z));
            }
        }
    }

    pub fn fixed_nodes(&self) -> &[Option<f64>] {
        &self.fixed
    }

    /// Full Dirichlet vector: fixed nodes plus interface data `top` (one per top node).
    pub fn dirichlet(&self, top: &[f64]) -> Result<Vec<Option<f64>>> {
        if top.len() != self.grid.mx + 1 {
            return Err(Error::invalid("interface data needs M_x + 1 values"));
        }
        if top.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("interface Dirichlet data must be finite"));
        }
        let mut d = self.fixed.clone();
        for (n, &v) in self.grid.top_nodes().zip(top) {
            d[n] = Some(v);
        }
        Ok(d)
    }

    /// Material at node `n`.
    pub fn node_material(&self, n: usize) -> PointMaterial {
        self.field.at(self.grid.node_x(n))
    }

    fn element_loop(
        &self,
        psi: &[f64],
        mut body: impl FnMut(usize, [usize; 4], usize, &PointMaterial, f64, [f64; 2]) -> Result<()>,
    ) -> Result<()> {
        let (dx, dz) = (self.grid.dx(), self.grid.dz());
        for j in 0..self.grid.mz {
            for i in 0..self.grid.mx {
                let e = j * self.grid.mx + i;
                let nodes = self.grid.element_nodes(i, j);
                for q in 0..4 {
                    let mut val = 0.0;
                    let mut grad = [0.0; 2];
                    for a in 0..4 {
                        let p = psi[nodes[a]];
                        val += self.quad.phi[q][a] * p;
                        grad[0] += self.quad.dphi[q][a][0] / dx * p;
                        grad[1] += self.quad.dphi[q][a][1] / dz * p;
                    }
                    body(e, nodes, q, &self.qp_material[e * 4 + q], val, grad)?;
                }
            }
        }
        Ok(())
    }

    /// Weak-form residual without Dirichlet replacement.
    fn raw_residual(&self, psi_new: &[f64], psi_old: &[f64], dt: f64) -> Result<Vec<f64>> {
        let (dx, dz) = (self.grid.dx(), self.grid.dz());
        let w = 0.25 * dx * dz;
        let mut r = vec![0.0; self.grid.nodes()];
        let mut old_theta = vec![0.0; self.qp_material.len()];
        self.element_loop(psi_old, |e, _, q, mat, val, _| {
            old_theta[e * 4 + q] = mat.theta(val);
            Ok(())
        })?;
        self.element_loop(psi_new, |e, nodes, q, mat, val, grad| {
            let theta = mat.theta(val);
            let k = mat.conductivity(val);
            if !theta.is_finite() || !k.is_finite() || !old_theta[e * 4 + q].is_finite() {
                return Err(Error::NonFinite { element: e });
            }
            let dtheta = theta - old_theta[e * 4 + q];
            let flux = [k * grad[0], k * (grad[1] + 1.0)];
            for a in 0..4 {
                let g = [self.quad.dphi[q][a][0] / dx, self.quad.dphi[q][a][1] / dz];
                r[nodes[a]] += w * (dtheta * self.quad.phi[q][a] + dt * (flux[0] * g[0] + flux[1] * g[1]));
            }
            Ok(())
        })?;
        Ok(r)
    }

    /// Nodal residual; Dirichlet rows hold `ψ_n − value`.
    pub fn assemble_residual(
        &self,
        psi_new: &[f64],
        psi_old: &[f64],
        dt: f64,
        dirichlet: &[Option<f64>],
    ) -> Result<Vec<f64>> {
        let mut r = self.raw_residual(psi_new, psi_old, dt)?;
        for (n, d) in dirichlet.iter().enumerate() {
            if let Some(v) = d {
                r[n] = psi_new[n] - v;
            }
        }
        Ok(r)
    }

    /// Newton Jacobian of [`Self::assemble_residual`] with identity Dirichlet rows.
    pub fn assemble_jacobian(&self, psi_new: &[f64], dt: f64, dirichlet: &[Option<f64>]) -> Result<BandedMatrix> {
        let (dx, dz) = (self.grid.dx(), self.grid.dz());
        let w = 0.25 * dx * dz;
        let band = self.grid.mx + 2;
        let mut jac = BandedMatrix::zeros(self.grid.nodes(), band, band);
        self.element_loop(psi_new, |e, nodes, q, mat, val, grad| {
            let c = mat.capacity(val);
            let k = mat.conductivity(val);
            let dk = mat.conductivity_derivative(val);
            if !c.is_finite() || !k.is_finite() || !dk.is_finite() {
                return Err(Error::NonFinite { element: e });
            }
            let flux = [grad[0], grad[1] + 1.0];
            let phi = &self.quad.phi[q];
            let g: [[f64; 2]; 4] = std::array::from_fn(|a| {
                [self.quad.dphi[q][a][0] / dx, self.quad.dphi[q][a][1] / dz]
            });
            for a in 0..4 {
                if dirichlet[nodes[a]].is_some() {
                    continue;
                }
                let flux_dot = flux[0] * g[a][0] + flux[1] * g[a][1];
                for b in 0..4 {
                    let stiff = g[b][0] * g[a][0] + g[b][1] * g[a][1];
                    let v = c * phi[b] * phi[a] + dt * (k * stiff + dk * phi[b] * flux_dot);
                    jac.add(nodes[a], nodes[b], w * v);
                }
            }
            Ok(())
        })?;
        for (n, d) in dirichlet.iter().enumerate() {
            if d.is_some() {
                jac.set_identity_row(n);
            }
        }
        Ok(jac)
    }

    /// Solves one implicit Euler step with interface data `top`, starting
    /// Newton from `guess` (defaults to the old state).
    pub fn newton_step_solve(
        &self,
        old: &SubsurfaceState,
        dt: f64,
        top: &[f64],
        guess: Option<&[f64]>,
    ) -> Result<(SubsurfaceState, NewtonReport)> {
        old.validate(&self.grid)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        let dirichlet = self.dirichlet(top)?;
        let mut psi = guess.unwrap_or(&old.psi).to_vec();
        if psi.len() != self.grid.nodes() {
            return Err(Error::invalid("initial guess size does not match the grid"));
        }
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut r = self.assemble_residual(&psi, &old.psi, dt, &dirichlet)?;
        let r0 = norm(&r);
        let mut rn = r0;
        let s = self.settings;
        for it in 1..=s.max_iters {
            let jac = self.assemble_jacobian(&psi, dt, &dirichlet)?;
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = jac.solve(&neg)?;
            let mut lambda = 1.0;
            let mut halvings = 0;
            loop {
                let trial: Vec<f64> = psi.iter().zip(&delta).map(|(p, d)| p + lambda * d).collect();
                let rt = self.assemble_residual(&trial, &old.psi, dt, &dirichlet);
                let accept = match &rt {
                    Ok(v) => norm(v) < rn || halvings >= s.damping,
                    Err(_) => false,
                };
                if accept || halvings >= s.damping {
                    psi = trial;
                    r = rt?;
                    break;
                }
                lambda *= 0.5;
                halvings += 1;
            }
            rn = norm(&r);
            if rn <= s.abs_tol || rn <= s.rel_tol * r0 {
                debug!("Richards Newton converged in {it} iterations, residual {rn:e}");
                return Ok((
                    SubsurfaceState { psi, t: old.t + dt },
                    NewtonReport {
                        iterations: it,
                        residual: rn,
                    },
                ));
            }
        }
        Err(Error::NewtonFailed {
            iterations: s.max_iters,
            residual: rn,
        })
    }

    /// Flux integral `∫_{C_l} v·n dx` through each top cell (m²/s), positive
    /// when water leaves the soil. The variational mode needs the old state and
    /// the time step of the solve that produced `state`.
    pub fn interface_flux(&self, state: &SubsurfaceState, old: Option<(&SubsurfaceState, f64)>) -> Result<Vec<f64>> {
        match (self.flux_mode, old) {
            (FluxEvaluation::Midpoint, _) => Ok(self.interface_flux_midpoint(state)),
            (FluxEvaluation::Variational, Some((old, dt))) => self.interface_flux_variational(state, old, dt),
            (FluxEvaluation::Variational, None) => {
                Err(Error::invalid("variational flux needs the previous state and dt"))
            }
        }
    }

    pub fn interface_flux_midpoint(&self, state: &SubsurfaceState) -> Vec<f64> {
        let g = &self.grid;
        let (dx, dz) = (g.dx(), g.dz());
        (0..g.mx)
            .map(|l| {
                let tl = state.psi[g.node(l, g.mz)];
                let tr = state.psi[g.node(l + 1, g.mz)];
                let bl = state.psi[g.node(l, g.mz - 1)];
                let br = state.psi[g.node(l + 1, g.mz - 1)];
                let psi_mid = 0.5 * (tl + tr);
                let dpsi_dz = 0.5 * ((tl + tr) - (bl + br)) / dz;
                let k = self.field.at((l as f64 + 0.5) * dx).conductivity(psi_mid);
                -k * (dpsi_dz + 1.0) * dx
            })
            .collect()
    }

    /// Nodal interface fluxes `∫_Γ v·n φ_i` from the weak form, split onto cells:
    /// each cell receives half of an interior node's flux and all of an end node's.
    pub fn interface_flux_variational(
        &self,
        state: &SubsurfaceState,
        old: &SubsurfaceState,
        dt: f64,
    ) -> Result<Vec<f64>> {
        let r = self.raw_residual(&state.psi, &old.psi, dt)?;
        let g = &self.grid;
        let nodal: Vec<f64> = g.top_nodes().map(|n| -r[n] / dt).collect();
        Ok((0..g.mx)
            .map(|l| {
                let left = if l == 0 { nodal[0] } else { 0.5 * nodal[l] };
                let right = if l + 1 == g.mx { nodal[l + 1] } else { 0.5 * nodal[l + 1] };
                left + right
            })
            .collect())
    }

    /// ∫θ(ψ) over the domain.
    pub fn water_volume(&self, psi: &[f64]) -> Result<f64> {
        let w = 0.25 * self.grid.dx() * self.grid.dz();
        let mut total = 0.0;
        self.element_loop(psi, |_, _, _, mat, val, _| {
            total += w * mat.theta(val);
            Ok(())
        })?;
        Ok(total)
    }

    /// Snapshot CSV: `x, z, psi, theta, K`.
    pub fn write_field_csv<W: Write>(&self, w: W, state: &SubsurfaceState) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "z", "psi", "theta", "K"])?;
        for (n, &psi) in state.psi.iter().enumerate() {
            let m = self.node_material(n);
            out.write_record([
                fmt_f(self.grid.node_x(n)),
                fmt_f(self.grid.node_z(n)),
                fmt_f(psi),
                fmt_f(m.theta(psi)),
                fmt_f(m.conductivity(psi)),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::VanGenuchtenParams;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn silt() -> MaterialField {
        MaterialField::Homogeneous(VanGenuchtenParams::SILT_LOAM)
    }

    fn mixed() -> MaterialField {
        MaterialField::Blended {
            left: VanGenuchtenParams::SILT_LOAM,
            right: VanGenuchtenParams::BEIT_NETOFA_CLAY,
            center_x: 1.0,
            steepness: 4.0,
        }
    }

    fn no_dirichlet(grid: &Grid2D) -> Vec<Option<f64>> {
        vec![None; grid.nodes()]
    }

    /// Straightforward per-element, per-node quadrature of the weak form,
    /// written against the reference element without shared helpers.
    fn slow_residual(grid: &Grid2D, field: &MaterialField, new: &[f64], old: &[f64], dt: f64) -> Vec<f64> {
        let (dx, dz) = (grid.dx(), grid.dz());
        let g = 1.0 / (2.0 * 3f64.sqrt());
        let pts = [0.5 - g, 0.5 + g];
        let mut r = vec![0.0; grid.nodes()];
        for j in 0..grid.mz {
            for i in 0..grid.mx {
                let ids = [grid.node(i, j), grid.node(i + 1, j), grid.node(i, j + 1), grid.node(i + 1, j + 1)];
                let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
                for &xi in &pts {
                    for &eta in &pts {
                        let basis = |(cx, cy): (f64, f64)| {
                            let bx = if cx == 0.0 { 1.0 - xi } else { xi };
                            let by = if cy == 0.0 { 1.0 - eta } else { eta };
                            let gx = if cx == 0.0 { -1.0 } else { 1.0 } * by / dx;
                            let gy = if cy == 0.0 { -1.0 } else { 1.0 } * bx / dz;
                            (bx * by, gx, gy)
                        };
                        let mat = field.at((i as f64 + xi) * dx);
                        let (mut pn, mut po, mut px, mut pz) = (0.0, 0.0, 0.0, 0.0);
                        for a in 0..4 {
                            let (b, gx, gy) = basis(corners[a]);
                            pn += b * new[ids[a]];
                            po += b * old[ids[a]];
                            px += gx * new[ids[a]];
                            pz += gy * new[ids[a]];
                        }
                        let k = mat.conductivity(pn);
                        for a in 0..4 {
                            let (b, gx, gy) = basis(corners[a]);
                            r[ids[a]] += 0.25 * dx * dz
                                * ((mat.theta(pn) - mat.theta(po)) * b + dt * k * (px * gx + (pz + 1.0) * gy));
                        }
                    }
                }
            }
        }
        r
    }

    #[test]
    fn grid_indexing() {
        let g = Grid2D::new(2.0, 3.0, 5, 8).unwrap();
        assert_eq!(g.nodes(), 54);
        assert_eq!(g.node(5, 8), 53);
        assert!((g.node_x(53) - 2.0).abs() < 1e-15 && (g.node_z(53) - 3.0).abs() < 1e-15);
        assert_eq!(g.top_nodes().collect::<Vec<_>>(), (48..54).collect::<Vec<_>>());
        assert!(Grid2D::new(1.0, 1.0, 0, 2).is_err());
    }

    #[test]
    fn hydrostatic_state_has_zero_residual_and_flux() {
        let grid = Grid2D::new(2.0, 3.0, 4, 6).unwrap();
        let field = MaterialField::Linear {
            capacity: 0.0,
            conductivity: 3e-6,
        };
        let solver = RichardsSolver::new(grid, field, NewtonSettings::default()).unwrap();
        let state = SubsurfaceState::from_fn(&grid, |_, z| 2.5 - z);
        let top: Vec<f64> = grid.top_nodes().map(|n| state.psi[n]).collect();
        let d = solver.dirichlet(&top).unwrap();
        let r = solver.assemble_residual(&state.psi, &state.psi, 10.0, &d).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        // saturated van Genuchten columns are hydrostatic too
        let solver = RichardsSolver::new(grid, silt(), NewtonSettings::default()).unwrap();
        let state = SubsurfaceState::from_fn(&grid, |_, z| 3.5 - z);
        let r = solver.assemble_residual(&state.psi, &state.psi, 10.0, &no_dirichlet(&grid)).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        assert!(solver.interface_flux_midpoint(&state).iter().all(|v| v.abs() < 1e-18));
    }

    #[test]
    fn residual_matches_slow_quadrature() {
        let grid = Grid2D::new(2.0, 3.0, 5, 8).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for field in [silt(), mixed()] {
            let solver = RichardsSolver::new(grid, field.clone(), NewtonSettings::default()).unwrap();
            let new: Vec<f64> = (0..grid.nodes()).map(|_| rng.random_range(-3.0..0.5)).collect();
            let old: Vec<f64> = (0..grid.nodes()).map(|_| rng.random_range(-3.0..0.5)).collect();
            let fast = solver.raw_residual(&new, &old, 36.0).unwrap();
            let slow = slow_residual(&grid, &field, &new, &old, 36.0);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let grid = Grid2D::new(2.0, 3.0, 3, 4).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        for field in [silt(), mixed()] {
            let solver = RichardsSolver::new(grid, field, NewtonSettings::default()).unwrap();
            // stay away from the kink at ψ = 0
            let psi: Vec<f64> = (0..grid.nodes()).map(|_| rng.random_range(-3.0..-0.2)).collect();
            let old: Vec<f64> = psi.iter().map(|p| p - 0.1).collect();
            let mut d = no_dirichlet(&grid);
            d[grid.node(1, grid.mz)] = Some(-0.5);
            let jac = solver.assemble_jacobian(&psi, 36.0, &d).unwrap();
            for _ in 0..5 {
                let v: Vec<f64> = (0..grid.nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let h = 1e-6;
                let plus: Vec<f64> = psi.iter().zip(&v).map(|(p, x)| p + h * x).collect();
                let minus: Vec<f64> = psi.iter().zip(&v).map(|(p, x)| p - h * x).collect();
                let rp = solver.assemble_residual(&plus, &old, 36.0, &d).unwrap();
                let rm = solver.assemble_residual(&minus, &old, 36.0, &d).unwrap();
                let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                let jv = jac.mul_vec(&v);
                let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for (a, b) in jv.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn stiffness_is_symmetric_for_constant_k() {
        let grid = Grid2D::new(1.0, 1.0, 3, 3).unwrap();
        let field = MaterialField::Linear {
            capacity: 0.7,
            conductivity: 2.0,
        };
        let solver = RichardsSolver::new(grid, field, NewtonSettings::default()).unwrap();
        let psi = vec![0.3; grid.nodes()];
        let jac = solver.assemble_jacobian(&psi, 0.1, &no_dirichlet(&grid)).unwrap();
        for i in 0..grid.nodes() {
            for j in 0..grid.nodes() {
                assert!((jac.get(i, j) - jac.get(j, i)).abs() < 1e-12);
            }
        }
        // constant across states in the linear case
        let other = solver.assemble_jacobian(&vec![-2.0; grid.nodes()], 0.1, &no_dirichlet(&grid)).unwrap();
        for i in 0..grid.nodes() {
            for j in 0..grid.nodes() {
                assert_eq!(jac.get(i, j), other.get(i, j));
            }
        }
    }

    #[test]
    fn saturated_state_has_no_mass_term() {
        let grid = Grid2D::new(1.0, 1.0, 2, 2).unwrap();
        let solver = RichardsSolver::new(grid, silt(), NewtonSettings::default()).unwrap();
        let psi = vec![0.5; grid.nodes()];
        let a = solver.assemble_jacobian(&psi, 1.0, &no_dirichlet(&grid)).unwrap();
        let b = solver.assemble_jacobian(&psi, 2.0, &no_dirichlet(&grid)).unwrap();
        for i in 0..grid.nodes() {
            for j in 0..grid.nodes() {
                assert!((2.0 * a.get(i, j) - b.get(i, j)).abs() < 1e-20);
            }
        }
    }

    #[test]
    fn linear_material_converges_in_one_iteration() {
        let grid = Grid2D::new(1.0, 1.0, 2, 10).unwrap();
        let field = MaterialField::Linear {
            capacity: 1.0,
            conductivity: 1.0,
        };
        let solver = RichardsSolver::new(grid, field, NewtonSettings::default()).unwrap();
        let old = SubsurfaceState::from_fn(&grid, |_, z| 2.0 - z);
        let (_, rep) = solver.newton_step_solve(&old, 0.1, &[0.0; 3], None).unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn nan_dirichlet_is_rejected() {
        let grid = Grid2D::new(1.0, 1.0, 2, 2).unwrap();
        let solver = RichardsSolver::new(grid, silt(), NewtonSettings::default()).unwrap();
        let old = SubsurfaceState::from_fn(&grid, |_, z| -z);
        let out = solver.newton_step_solve(&old, 1.0, &[0.0, f64::NAN, 0.0], None);
        assert!(matches!(out, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn trench_step_converges() {
        let grid = Grid2D::new(2.0, 3.0, 5, 8).unwrap();
        let mut solver = RichardsSolver::new(grid, silt(), NewtonSettings::default()).unwrap();
        solver.fix_nodes(|x, z| (x == 0.0 || x == 2.0) && z <= 1.0, |_, z| 1.0 - z);
        let old = SubsurfaceState::from_fn(&grid, |_, z| 1.0 - z);
        let (_, rep) = solver.newton_step_solve(&old, 36.0, &[1e-3; 6], None).unwrap();
        assert!(rep.iterations <= 50);
    }

    #[test]
    fn uniform_gradient_flux() {
        let grid = Grid2D::new(2.0, 1.0, 4, 4).unwrap();
        let field = MaterialField::Linear {
            capacity: 1.0,
            conductivity: 2e-6,
        };
        let solver = RichardsSolver::new(grid, field, NewtonSettings::default()).unwrap();
        let state = SubsurfaceState::from_fn(&grid, |_, z| 0.3 * z - 1.0);
        for f in solver.interface_flux_midpoint(&state) {
            assert!((f - (-2e-6 * 1.3 * 0.5)).abs() < 1e-20);
        }
    }

    #[test]
    fn variational_flux_balances_storage() {
        let grid = Grid2D::new(2.0, 1.0, 3, 6).unwrap();
        let field = MaterialField::Linear {
            capacity: 0.8,
            conductivity: 0.5,
        };
        let mut solver = RichardsSolver::new(grid, field, NewtonSettings::default()).unwrap();
        solver.flux_mode = FluxEvaluation::Variational;
        let mut state = SubsurfaceState::from_fn(&grid, |x, z| 1.0 - z + 0.1 * x);
        for step in 0..4 {
            let top = vec![0.2 * step as f64; 4];
            let (next, _) = solver.newton_step_solve(&state, 0.05, &top, None).unwrap();
            let flux: f64 = solver.interface_flux(&next, Some((&state, 0.05))).unwrap().iter().sum();
            let dv = solver.water_volume(&next.psi).unwrap() - solver.water_volume(&state.psi).unwrap();
            // outward flux drains storage
            assert!((dv + 0.05 * flux).abs() <= 1e-8 * dv.abs().max(1e-12));
            state = next;
        }
    }

    #[test]
    fn refinement_differences_shrink() {
        let run = |mz: usize| {
            let grid = Grid2D::new(1.0, 1.0, 1, mz).unwrap();
            let solver = RichardsSolver::new(grid, silt(), NewtonSettings::default()).unwrap();
            let old = SubsurfaceState::from_fn(&grid, |_, z| -1.0 - z);
            let (s, _) = solver.newton_step_solve(&old, 600.0, &[0.0; 2], None).unwrap();
            // sample at z = 0.5, 0.75
            let at = |z: f64| s.psi[grid.node(0, (z * mz as f64).round() as usize)];
            [at(0.5), at(0.75)]
        };
        let (a, b, c) = (run(4), run(8), run(16));
        let d1 = (a[0] - b[0]).abs() + (a[1] - b[1]).abs();
        let d2 = (b[0] - c[0]).abs() + (b[1] - c[1]).abs();
        assert!(d2 < d1, "{d1} {d2}");
    }

    #[test]
    fn field_csv_has_one_row_per_node() {
        let grid = Grid2D::new(1.0, 1.0, 2, 2).unwrap();
        let solver = RichardsSolver::new(grid, silt(), NewtonSettings::default()).unwrap();
        let state = SubsurfaceState::from_fn(&grid, |_, z| -z);
        let mut buf = Vec::new();
        solver.write_field_csv(&mut buf, &state).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x,z,psi,theta,K");
        assert_eq!(text.lines().count(), 10);
    }
}
