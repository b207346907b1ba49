//! Sequential (Gauss–Seidel) coupling of the 2D Richards solver with the 1D
//! surface solver: per time step, iterate Richards solve → interface flux →
//! surface step → relaxation until the water-height update stalls.

use std::io::Write;

use log::{info, warn};

use crate::analysis::{self, LinearModelParams};
use crate::error::{Error, Result};
use crate::linear1d::{fmt_f, fmt_opt, observed_cr};
use crate::richards2d::{RichardsSolver, SubsurfaceState};
use crate::surface1d::{Rainfall, SurfaceSolver, SurfaceState};

/// Lower bound substituted for a vanishing mean capacity in [`predict_s`].
pub const C_GUARD: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingConfig {
    pub omega: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub dt: f64,
    pub n_steps: usize,
    /// Field snapshots every this many steps (0 disables them).
    pub output_every: usize,
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::invalid(format!("omega must lie in (0, 1], got {}", self.omega)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::invalid("tol and max_iters must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.n_steps == 0 {
            return Err(Error::invalid("dt and the step count must be positive"));
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

/// Interface values at the `M_x + 1` top nodes: end nodes copy their cell,
/// interior nodes average the two neighbouring cells.
pub fn map_height_to_head(h: &[f64]) -> Vec<f64> {
    let n = h.len();
    let mut out = Vec::with_capacity(n + 1);
    out.push(h[0]);
    out.extend(h.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(h[n - 1]);
    out
}

/// Source per cell (m/s) from the flux integral through it.
pub fn map_flux_to_source(flux: &[f64], dx: f64) -> Vec<f64> {
    flux.iter().map(|f| f / dx).collect()
}

pub fn relax(h_tilde: &[f64], h_prev: &[f64], omega: f64) -> Vec<f64> {
    h_tilde.iter().zip(h_prev).map(|(t, p)| omega * t + (1.0 - omega) * p).collect()
}

pub fn residual_norm(h_tilde: &[f64], h_prev: &[f64]) -> f64 {
    h_tilde.iter().zip(h_prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Linear-analysis prediction from spatially averaged coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub c_bar: f64,
    pub k_bar: f64,
    pub abs_s: f64,
    pub omega_opt: f64,
    /// Whether `c̄` was raised to [`C_GUARD`].
    pub c_guarded: bool,
}

/// Feeds the nodal means of `c(ψ)` and `K(ψ)` into the discrete analysis for a
/// column of depth `L_z` with the solver's vertical mesh.
pub fn predict_s(richards: &RichardsSolver, state: &SubsurfaceState, dt: f64) -> Result<Prediction> {
    let n = state.psi.len() as f64;
    let (mut c_sum, mut k_sum) = (0.0, 0.0);
    for (i, &psi) in state.psi.iter().enumerate() {
        let m = richards.node_material(i);
        c_sum += m.capacity(psi);
        k_sum += m.conductivity(psi);
    }
    let (c_bar, k_bar) = (c_sum / n, k_sum / n);
    let c_guarded = !(c_bar >= C_GUARD);
    let grid = richards.grid();
    let p = LinearModelParams::new(c_bar.max(C_GUARD), k_bar, grid.lz, dt, grid.mz.max(2), 1.0)?;
    let r = analysis::discrete_s(&p)?;
    Ok(Prediction {
        c_bar,
        k_bar,
        abs_s: r.s.abs(),
        omega_opt: r.omega_opt,
        c_guarded,
    })
}

/// Per-step record of the coupling iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub t: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub prediction: Option<Prediction>,
}

impl StepRecord {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn cr(&self) -> Option<f64> {
        if self.converged {
            observed_cr(&self.residuals)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub subsurface: SubsurfaceState,
    pub surface: SurfaceState,
    pub n: usize,
}

/// Time average of the defined `CR_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrSummary {
    pub mean: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
    /// Defined entries dropped by the exclusion threshold.
    pub excluded: usize,
}

pub fn time_averaged_cr(records: &[StepRecord], exclude_above: Option<f64>) -> CrSummary {
    let mut sum = 0.0;
    let mut s = CrSummary {
        mean: None,
        defined: 0,
        undefined: 0,
        excluded: 0,
    };
    for r in records {
        match r.cr() {
            None => s.undefined += 1,
            Some(cr) if exclude_above.is_some_and(|t| cr > t) => s.excluded += 1,
            Some(cr) => {
                sum += cr;
                s.defined += 1;
            }
        }
    }
    if s.defined > 0 {
        s.mean = Some(sum / s.defined as f64);
    }
    s
}

/// Outflow probe sample at the left boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub t: f64,
    pub h0: f64,
    pub u0: f64,
    pub q_out: f64,
}

/// Both solvers plus forcing and iteration settings.
#[derive(Debug)]
pub struct CoupledModel {
    pub richards: RichardsSolver,
    pub surface: SurfaceSolver,
    pub rain: Rainfall,
    pub config: CouplingConfig,
}

impl CoupledModel {
    pub fn new(richards: RichardsSolver, surface: SurfaceSolver, rain: Rainfall, config: CouplingConfig) -> Result<Self> {
        config.validate()?;
        if (richards.grid().dx() - surface.dx).abs() > 1e-12 * surface.dx {
            return Err(Error::invalid("surface and subsurface grids must share dx"));
        }
        Ok(Self {
            richards,
            surface,
            rain,
            config,
        })
    }

    /// Initial coupled state; interface nodes take their values from `h0`.
    pub fn initial_state(&self, psi0: impl Fn(f64, f64) -> f64, h0: f64) -> CoupledState {
        let grid = *self.richards.grid();
        let surface = SurfaceState::uniform(&self.surface.model, grid.mx, h0);
        let mut subsurface = SubsurfaceState::from_fn(&grid, psi0);
        for (n, v) in self.richards.fixed_nodes().iter().enumerate() {
            if let Some(v) = v {
                subsurface.psi[n] = *v;
            }
        }
        for (n, v) in grid.top_nodes().zip(map_height_to_head(&surface.h)) {
            subsurface.psi[n] = v;
        }
        CoupledState {
            subsurface,
            surface,
            n: 0,
        }
    }

    /// One time step of the relaxed coupling iteration. The committed state is
    /// the last accepted iterate, with the interface nodes set from the new height.
    pub fn run_coupled_step(&self, state: &CoupledState) -> Result<(CoupledState, StepRecord)> {
        let cfg = &self.config;
        let n = state.n + 1;
        let t = state.subsurface.t + cfg.dt;
        let rain = self.rain.at(t);
        let dx = self.surface.dx;
        let mut h = state.surface.h.clone();
        let mut psi_iter = state.subsurface.clone();
        let mut residuals = Vec::new();
        let wrap = |iteration: usize, e: Error| Error::InStep {
            step: n,
            iteration,
            source: Box::new(e),
        };
        for k in 1..=cfg.max_iters {
            let top = map_height_to_head(&h);
            let (psi_new, _) = self
                .richards
                .newton_step_solve(&state.subsurface, cfg.dt, &top, Some(&psi_iter.psi))
                .map_err(|e| wrap(k, e))?;
            let flux = self
                .richards
                .interface_flux(&psi_new, Some((&state.subsurface, cfg.dt)))
                .map_err(|e| wrap(k, e))?;
            let source: Vec<f64> = map_flux_to_source(&flux, dx).into_iter().map(|s| s + rain).collect();
            let (q_tilde, _) = self
                .surface
                .implicit_fv_step(&state.surface, &source, cfg.dt)
                .map_err(|e| wrap(k, e))?;
            let res = residual_norm(&q_tilde.h, &h);
            h = relax(&q_tilde.h, &h, cfg.omega);
            psi_iter = psi_new;
            residuals.push(res);
            if res < cfg.tol {
                let mut subsurface = psi_iter;
                let grid = self.richards.grid();
                for (node, v) in grid.top_nodes().zip(map_height_to_head(&h)) {
                    subsurface.psi[node] = v;
                }
                let surface = SurfaceState { h, hu: q_tilde.hu };
                let prediction = predict_s(&self.richards, &subsurface, cfg.dt).ok();
                let record = StepRecord {
                    n,
                    t,
                    residuals,
                    converged: true,
                    prediction,
                };
                return Ok((CoupledState { subsurface, surface, n }, record));
            }
            if !res.is_finite() {
                break;
            }
        }
        Err(Error::Diverged { step: n, residuals })
    }

    /// Runs the configured number of steps from `state`. A failing step ends the
    /// run; everything recorded up to that point is kept.
    pub fn run(&self, mut state: CoupledState) -> SimulationOutput {
        let mut out = SimulationOutput::default();
        out.probes.push(self.probe(&state));
        if self.config.output_every > 0 {
            out.snapshots.push(state.subsurface.clone());
        }
        for _ in 0..self.config.n_steps {
            match self.run_coupled_step(&state) {
                Ok((next, record)) => {
                    state = next;
                    if record.n % 100 == 0 {
                        info!("step {} (t = {} s): {} iterations", record.n, record.t, record.iterations());
                    }
                    out.records.push(record);
                    out.probes.push(self.probe(&state));
                    let every = self.config.output_every;
                    if every > 0 && state.n % every == 0 {
                        out.snapshots.push(state.subsurface.clone());
                    }
                }
                Err(e) => {
                    if let Error::Diverged { step, residuals } = &e {
                        out.records.push(StepRecord {
                            n: *step,
                            t: state.subsurface.t + self.config.dt,
                            residuals: residuals.clone(),
                            converged: false,
                            prediction: None,
                        });
                    }
                    warn!("run stopped: {e}");
                    out.failure = Some(e);
                    break;
                }
            }
        }
        out.final_state = Some(state);
        out
    }

    fn probe(&self, state: &CoupledState) -> Probe {
        let (h0, u0, q_out) = self.surface.outflow_probe(&state.surface);
        Probe {
            t: state.subsurface.t,
            h0,
            u0,
            q_out,
        }
    }
}

#[derive(Debug, Default)]
pub struct SimulationOutput {
    pub records: Vec<StepRecord>,
    pub probes: Vec<Probe>,
    pub snapshots: Vec<SubsurfaceState>,
    pub final_state: Option<CoupledState>,
    pub failure: Option<Error>,
}

/// Trace CSV: `n, t, K_n, res_first, res_last, CR_n, c_bar, K_bar, abs_S_pred, omega_opt_pred, c_guard`.
pub fn write_trace_csv<W: Write>(w: W, records: &[StepRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "n",
        "t",
        "K_n",
        "res_first",
        "res_last",
        "CR_n",
        "c_bar",
        "K_bar",
        "abs_S_pred",
        "omega_opt_pred",
        "c_guard",
    ])?;
    for r in records {
        let p = r.prediction;
        out.write_record([
            r.n.to_string(),
            fmt_f(r.t),
            r.iterations().to_string(),
            fmt_opt(r.residuals.first().copied()),
            fmt_opt(r.residuals.last().copied()),
            fmt_opt(r.cr()),
            fmt_opt(p.map(|p| p.c_bar)),
            fmt_opt(p.map(|p| p.k_bar)),
            fmt_opt(p.map(|p| p.abs_s)),
            fmt_opt(p.map(|p| p.omega_opt)),
            p.map_or("NA".into(), |p| u8::from(p.c_guarded).to_string()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Probe CSV: `t, h0, u0, q_out`.
pub fn write_probe_csv<W: Write>(w: W, probes: &[Probe]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "h0", "u0", "q_out"])?;
    for p in probes {
        out.write_record([fmt_f(p.t), fmt_f(p.h0), fmt_f(p.u0), fmt_f(p.q_out)])?;
    }
    out.flush()?;
    Ok(())
}
