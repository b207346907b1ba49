//! Fully discrete linear 1D-0D model and its relaxed coupling iteration.
//!
//! The column occupies `z ∈ (−L, 0)` with `M` linear elements. Node 0 carries a
//! homogeneous Dirichlet value, nodes `1..M−1` are interior unknowns and node
//! `M` is the interface value `ψ_Γ`, identified with the water height `h`.

use std::io::Write;

use crate::analysis::{self, LinearModelParams};
use crate::error::{Error, Result};
use crate::linalg::solve_toeplitz_tridiagonal;

pub const DEFAULT_MAX_ITERS: usize = 200;

/// Residuals beyond this are treated as blow-up and end the iteration early.
const BLOWUP: f64 = 1e150;

/// Assembled linear system plus the previous-step state.
#[derive(Debug, Clone)]
pub struct Linear1DSystem {
    params: LinearModelParams,
    a: f64,
    b: f64,
    /// c·Δz/6, the off-diagonal of the interior mass matrix and `M_IΓ`'s last entry.
    mass_off: f64,
    psi_interior: Vec<f64>,
    psi_gamma: f64,
    step: usize,
}

/// Record of one time step of the coupling iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    /// Relaxed iterates `ψ_Γ^{n,k}`, k = 1..K_n.
    pub iterates: Vec<f64>,
    /// `|ψ̃_Γ^{n,k} − ψ_Γ^{n,k−1}|`, k = 1..K_n.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl StepTrace {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn cr(&self) -> Option<f64> {
        observed_cr(&self.residuals)
    }
}

impl Linear1DSystem {
    /// Sets up the system with `ψ_0(z) = 1 − z/L` at the interior nodes and `h_0 = 0`.
    pub fn new(params: LinearModelParams) -> Result<Self> {
        let depth = params.depth;
        Self::with_initial(params, |z| 1.0 - z / depth, 0.0)
    }

    pub fn with_initial(params: LinearModelParams, psi0: impl Fn(f64) -> f64, h0: f64) -> Result<Self> {
        params.validate()?;
        let (a, b) = analysis::toeplitz_coeffs(&params);
        // positive definiteness of the interior matrix
        analysis::alpha_sum(a, b, params.elements, params.dz, params.depth)?;
        let psi_interior = (1..params.elements)
            .map(|j| psi0(-params.depth + j as f64 * params.dz))
            .collect();
        Ok(Self {
            params,
            a,
            b,
            mass_off: params.c * params.dz / 6.0,
            psi_interior,
            psi_gamma: h0,
            step: 0,
        })
    }

    pub fn params(&self) -> &LinearModelParams {
        &self.params
    }

    /// Diagonal and off-diagonal of `M_II + Δt·A_II`.
    pub fn coeffs(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn psi_interior(&self) -> &[f64] {
        &self.psi_interior
    }

    pub fn psi_gamma(&self) -> f64 {
        self.psi_gamma
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Right-hand side of the interior solve for interface iterate `psi_gamma_iter`.
    pub fn subsurface_rhs(&self, psi_gamma_iter: f64) -> Vec<f64> {
        let n = self.psi_interior.len();
        let diag = 4.0 * self.mass_off;
        let prev = &self.psi_interior;
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| {
                let mut v = diag * prev[i];
                if i > 0 {
                    v += self.mass_off * prev[i - 1];
                }
                if i + 1 < n {
                    v += self.mass_off * prev[i + 1];
                }
                v
            })
            .collect();
        rhs[n - 1] += self.mass_off * self.psi_gamma - self.b * psi_gamma_iter;
        rhs
    }

    /// Interior heads `ψ_I^{n,k}` for the interface value `ψ_Γ^{n,k−1}`.
    pub fn subsurface_solve(&self, psi_gamma_iter: f64) -> Result<Vec<f64>> {
        solve_toeplitz_tridiagonal(self.a, self.b, &self.subsurface_rhs(psi_gamma_iter))
    }

    /// Surface height update `ψ̃_Γ^{n,k}` from the new interior heads.
    pub fn surface_update(&self, psi_interior_new: &[f64], psi_gamma_iter: f64) -> f64 {
        let last = psi_interior_new.len() - 1;
        let p = &self.params;
        -self.b * psi_interior_new[last] - 0.5 * self.a * psi_gamma_iter
            + self.mass_off * self.psi_interior[last]
            + (1.0 + 2.0 * self.mass_off) * self.psi_gamma
            - p.dt * p.k
    }

    /// One pass of subsurface solve followed by surface update, without relaxation.
    pub fn coupled_map(&self, psi_gamma_iter: f64) -> Result<(f64, Vec<f64>)> {
        let interior = self.subsurface_solve(psi_gamma_iter)?;
        Ok((self.surface_update(&interior, psi_gamma_iter), interior))
    }

    /// Runs the relaxed iteration for the next time step and commits the last
    /// accepted iterate. Exceeding `max_iters` (or blowing up) yields
    /// [`Error::Diverged`] carrying the residual history; the state is then left
    /// at the previous time level.
    pub fn run_time_step(&mut self, omega: f64, tol: f64, max_iters: usize) -> Result<StepTrace> {
        if !(omega > 0.0 && omega <= 1.0) {
            return Err(Error::invalid(format!("omega must lie in (0, 1], got {omega}")));
        }
        if !(tol > 0.0) || max_iters == 0 {
            return Err(Error::invalid("tol and max_iters must be positive"));
        }
        let step = self.step + 1;
        let mut iterate = self.psi_gamma;
        let mut trace = StepTrace {
            step,
            iterates: Vec::new(),
            residuals: Vec::new(),
            converged: false,
        };
        // The map is affine, so after the first full evaluation the defect
        // r = ψ̃ − ψ is advanced through the homogeneous response to each
        // increment. This keeps residuals near `tol` free of cancellation.
        let (tilde, mut interior) = self.coupled_map(iterate)?;
        let mut defect = tilde - iterate;
        for _ in 0..max_iters {
            let res = defect.abs();
            let delta = omega * defect;
            iterate += delta;
            trace.iterates.push(iterate);
            trace.residuals.push(res);
            if res < tol {
                trace.converged = true;
                break;
            }
            if !res.is_finite() || res > BLOWUP {
                break;
            }
            let (d_tilde, d_interior) = self.homogeneous_response(delta)?;
            for (v, d) in interior.iter_mut().zip(&d_interior) {
                *v += d;
            }
            defect += d_tilde - delta;
        }
        if !trace.converged {
            return Err(Error::Diverged {
                step,
                residuals: trace.residuals,
            });
        }
        self.psi_interior = interior;
        self.psi_gamma = iterate;
        self.step = step;
        Ok(trace)
    }

    /// Change of `(ψ̃_Γ, ψ_I)` caused by changing the interface iterate by `delta`.
    fn homogeneous_response(&self, delta: f64) -> Result<(f64, Vec<f64>)> {
        let n = self.psi_interior.len();
        let mut rhs = vec![0.0; n];
        rhs[n - 1] = -self.b * delta;
        let d_interior = solve_toeplitz_tridiagonal(self.a, self.b, &rhs)?;
        let d_tilde = -self.b * d_interior[n - 1] - 0.5 * self.a * delta;
        Ok((d_tilde, d_interior))
    }

    /// Direct solution of the monolithic one-step system, i.e. the fixed point
    /// of the coupling iteration.
    pub fn direct_step(&self) -> Result<(f64, Vec<f64>)> {
        // ψ̃ = S·ψ + ξ is affine; two evaluations determine it
        let (f0, _) = self.coupled_map(0.0)?;
        let (f1, _) = self.coupled_map(1.0)?;
        let slope = f1 - f0;
        let gamma = f0 / (1.0 - slope);
        Ok((gamma, self.subsurface_solve(gamma)?))
    }
}

/// Mean of consecutive residual ratios `res_k/res_{k−1}` over `k = 2..K_n−1`
/// (1-based), i.e. all ratios except the one involving the final residual.
/// `None` when fewer than three residuals exist.
pub fn observed_cr(residuals: &[f64]) -> Option<f64> {
    let kn = residuals.len();
    if kn < 3 {
        return None;
    }
    let sum: f64 = (1..kn - 1).map(|i| residuals[i] / residuals[i - 1]).sum();
    Some(sum / (kn - 2) as f64)
}

/// Observed rate for a run that may have diverged: takes the residual history
/// from either the trace or the divergence report.
pub fn observed_cr_of(outcome: &Result<StepTrace>) -> Option<f64> {
    match outcome {
        Ok(t) => t.cr(),
        Err(e) => match e.root() {
            Error::Diverged { residuals, .. } => observed_cr(residuals),
            _ => None,
        },
    }
}

/// Outcome of a multi-step run.
#[derive(Debug, Clone)]
pub struct LinearRun {
    pub traces: Vec<StepTrace>,
    pub s: f64,
    pub sigma: f64,
    /// Present when the run stopped on a divergent step.
    pub diverged: Option<(usize, Vec<f64>)>,
}

/// Runs `n_steps` steps, stopping at the first divergent one.
pub fn run(params: LinearModelParams, n_steps: usize, tol: f64, max_iters: usize) -> Result<LinearRun> {
    let s = analysis::discrete_s(&params)?.s;
    let mut sys = Linear1DSystem::new(params)?;
    let mut out = LinearRun {
        traces: Vec::new(),
        s,
        sigma: analysis::sigma(params.omega, s),
        diverged: None,
    };
    for _ in 0..n_steps {
        match sys.run_time_step(params.omega, tol, max_iters) {
            Ok(t) => out.traces.push(t),
            Err(Error::Diverged { step, residuals }) => {
                out.traces.push(StepTrace {
                    step,
                    iterates: Vec::new(),
                    residuals: residuals.clone(),
                    converged: false,
                });
                out.diverged = Some((step, residuals));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub(crate) fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f)
}

/// Per-iteration CSV: `n, k, psi_gamma, residual`.
pub fn write_trace_csv<W: Write>(w: W, run: &LinearRun) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "k", "psi_gamma", "residual"])?;
    for t in &run.traces {
        for (k, res) in t.residuals.iter().enumerate() {
            let psi = t.iterates.get(k).copied();
            out.write_record([t.step.to_string(), (k + 1).to_string(), fmt_opt(psi), fmt_f(*res)])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-step CSV: `n, K_n, CR_n, S, sigma_omega`.
pub fn write_summary_csv<W: Write>(w: W, run: &LinearRun) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "K_n", "CR_n", "S", "sigma_omega"])?;
    for t in &run.traces {
        out.write_record([
            t.step.to_string(),
            t.iterations().to_string(),
            fmt_opt(t.cr()),
            fmt_f(run.s),
            fmt_f(run.sigma),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(dt: f64, m: usize, omega: f64) -> LinearModelParams {
        LinearModelParams::new(1.0, 1.0, 1.0, dt, m, omega).unwrap()
    }

    /// Monolithic (M)×(M) system in the unknowns (ψ_I, ψ_Γ), solved densely.
    fn dense_direct(sys: &Linear1DSystem) -> f64 {
        let m = sys.params.elements;
        let (a, b) = sys.coeffs();
        let mut mat = vec![0.0; m * m];
        for i in 0..m - 1 {
            mat[i * m + i] = a;
            if i > 0 {
                mat[i * m + i - 1] = b;
            }
            mat[i * m + i + 1] = b;
        }
        mat[(m - 1) * m + m - 2] = b;
        mat[(m - 1) * m + m - 1] = 1.0 + a / 2.0;
        let mut rhs = sys.subsurface_rhs(0.0);
        let p = &sys.params;
        let last = m - 2;
        rhs.push(
            sys.mass_off * sys.psi_interior[last] + (1.0 + 2.0 * sys.mass_off) * sys.psi_gamma - p.dt * p.k,
        );
        crate::linalg::solve_dense(mat, m, &rhs).unwrap()[m - 1]
    }

    #[test]
    fn scalar_interior_solve() {
        let sys = Linear1DSystem::new(params(0.1, 2, 1.0)).unwrap();
        let (a, _) = sys.coeffs();
        let rhs = sys.subsurface_rhs(0.3);
        let x = sys.subsurface_solve(0.3).unwrap();
        assert_relative_eq!(x[0], rhs[0] / a, max_relative = 1e-15);
    }

    #[test]
    fn homogeneous_data_gives_zero_interior() {
        let sys = Linear1DSystem::with_initial(params(0.1, 8, 1.0), |_| 0.0, 0.0).unwrap();
        assert!(sys.subsurface_solve(0.0).unwrap().iter().all(|&v| v == 0.0));
        assert_relative_eq!(sys.surface_update(&[0.0; 7], 0.0), -0.1, max_relative = 1e-15);
    }

    #[test]
    fn surface_map_is_affine_with_slope_s() {
        for (dt, m) in [(0.1, 2), (0.1, 20), (1e-3, 50), (1.0, 10)] {
            let sys = Linear1DSystem::new(params(dt, m, 1.0)).unwrap();
            let s = analysis::discrete_s(sys.params()).unwrap().s;
            let (f0, _) = sys.coupled_map(0.25).unwrap();
            let (f1, _) = sys.coupled_map(-1.75).unwrap();
            assert!(((f1 - f0) / -2.0 - s).abs() < 1e-12 * s.abs().max(1.0), "dt={dt} m={m}");
        }
    }

    #[test]
    fn fixed_point_is_stationary() {
        let sys = Linear1DSystem::new(params(0.1, 20, 1.0)).unwrap();
        let (g, _) = sys.direct_step().unwrap();
        assert!((sys.coupled_map(g).unwrap().0 - g).abs() < 1e-12);
        assert!((dense_direct(&sys) - g).abs() < 1e-12);
    }

    #[test]
    fn optimal_relaxation_takes_two_iterations() {
        for (dt, m) in [(0.1, 10), (0.01, 20), (0.5, 40)] {
            let p = params(dt, m, 1.0);
            let w = analysis::discrete_s(&p).unwrap().omega_opt;
            let mut sys = Linear1DSystem::new(p).unwrap();
            let t = sys.run_time_step(w, 1e-8, 200).unwrap();
            assert_eq!(t.iterations(), 2);
            assert!(t.cr().is_none());
        }
    }

    #[test]
    fn error_contracts_by_sigma() {
        for omega in [0.3, 0.7, 1.0] {
            let p = params(0.1, 20, omega);
            let mut sys = Linear1DSystem::new(p).unwrap();
            for _ in 0..3 {
                let exact = dense_direct(&sys);
                let start = sys.psi_gamma();
                let sig = analysis::sigma(omega, analysis::discrete_s(&p).unwrap().s);
                let t = sys.run_time_step(omega, 1e-13, 200).unwrap();
                let mut prev = start - exact;
                for &it in t.iterates.iter().take(4) {
                    let err = it - exact;
                    assert!((err / prev - sig).abs() < 1e-10, "omega={omega}");
                    prev = err;
                }
            }
        }
    }

    #[test]
    fn cr_matches_sigma() {
        let p = params(0.1, 10, 0.6);
        let r = run(p, 3, 1e-8, 200).unwrap();
        for t in &r.traces {
            assert!((t.cr().unwrap() - r.sigma.abs()).abs() < 1e-8);
        }
    }

    #[test]
    fn observed_cr_cases() {
        let r: f64 = 0.37;
        assert_relative_eq!(observed_cr(&[1.0, r, r * r, r.powi(3)]).unwrap(), r, max_relative = 1e-15);
        assert!(observed_cr(&[1.0, 1e-9]).is_none());
        assert!(observed_cr(&[]).is_none());
        assert_eq!(observed_cr(&[1.0, 0.5, 1e-20]), Some(0.5));
    }

    #[test]
    fn divergence_is_reported_with_history() {
        // coarse mesh and large time step: |S| > 1
        let p = params(1.0, 20, 1.0);
        let s = analysis::discrete_s(&p).unwrap().s;
        assert!(s.abs() > 1.0);
        let mut sys = Linear1DSystem::new(p).unwrap();
        let out = sys.run_time_step(1.0, 1e-8, 50);
        match &out {
            Err(Error::Diverged { step, residuals }) => {
                assert_eq!(*step, 1);
                assert_eq!(residuals.len(), 50);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!((observed_cr_of(&out).unwrap() - s.abs()).abs() < 1e-8);
        assert_eq!(sys.step(), 0);
    }

    #[test]
    fn runs_are_bit_identical() {
        let p = params(0.05, 25, 0.9);
        let a = run(p, 5, 1e-10, 200).unwrap();
        let b = run(p, 5, 1e-10, 200).unwrap();
        assert_eq!(a.traces, b.traces);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_trace_csv(&mut x, &a).unwrap();
        write_trace_csv(&mut y, &b).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn csv_layout() {
        let r = run(params(0.1, 4, 1.0), 2, 1e-8, 200).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n,K_n,CR_n,S,sigma_omega");
        assert_eq!(lines.count(), 2);
    }
}
