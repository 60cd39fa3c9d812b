//! Time stepping for a truncated GP hierarchy
//! `i d/dt gamma^(k) = [-Delta, gamma^(k)] + mu B gamma^(k+p/2)`.
//!
//! A step is Strang-split: half a free flow (an exact Fourier phase), one
//! RK4 step of the interaction, half a free flow. Levels whose coupling
//! input lies above the truncation take it from the closure.

use num_complex::Complex64;
use serde::Serialize;

use crate::contractions::{b_full, b_full_mixture};
use crate::error::{GphError, Result};
use crate::exec::Exec;
use crate::grid::{FourierMultiplier, Grid};
use crate::nls::WaveFunction;
use crate::state::{ClosurePolicy, DenseMarginal, HierarchyTruncation, MixtureState};

/// Side length above which `min_eig` falls back to a power-iteration estimate.
const FULL_MIN_EIG_SIDE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub level: usize,
    pub trace: f64,
    /// Hermiticity residual of the last step, measured before enforcement.
    pub herm_residual: f64,
    /// `max |gamma^(k-1) - Tr_k gamma^(k)|`, with `gamma^(0) = 1`.
    pub admiss_residual: f64,
    pub min_eig: f64,
}

#[derive(Debug, Clone)]
pub struct HierarchyRun {
    pub times: Vec<f64>,
    pub snapshots: Vec<HierarchyTruncation>,
    pub diagnostics: Vec<DiagnosticRow>,
}

impl HierarchyRun {
    pub fn last(&self) -> &HierarchyTruncation {
        self.snapshots.last().expect("run has at least the initial snapshot")
    }
}

fn free_flow_multiplier(grid: &Grid, order: usize, tau: f64) -> Result<FourierMultiplier> {
    let k2 = grid.freq_sq();
    let fwd: Vec<Complex64> = k2.iter().map(|&q| Complex64::from_polar(1.0, -tau * q)).collect();
    let bwd: Vec<Complex64> = fwd.iter().map(|c| c.conj()).collect();
    let mut m = FourierMultiplier::identity(2 * order);
    for s in 0..order {
        m = m.with_slot(s, fwd.clone())?.with_slot(order + s, bwd.clone())?;
    }
    Ok(m)
}

fn free_flow_state(phi: &WaveFunction, tau: f64) -> Result<WaveFunction> {
    let grid = phi.grid();
    let mut v = phi.values().to_vec();
    grid.forward_transform(&mut v, 1)?;
    for (c, q) in v.iter_mut().zip(grid.freq_sq()) {
        *c *= Complex64::from_polar(1.0, -tau * q);
    }
    grid.inverse_transform(&mut v, 1)?;
    WaveFunction::new(grid.clone(), v)
}

fn phase_state(phi: &WaveFunction, tau: f64, p: u32, mu: f64) -> Result<WaveFunction> {
    let half_p = p as i32 / 2;
    let v = phi
        .values()
        .iter()
        .map(|z| z * Complex64::from_polar(1.0, -tau * mu * z.norm_sqr().powi(half_p)))
        .collect();
    WaveFunction::new(phi.grid().clone(), v)
}

fn check_finite(levels: &[DenseMarginal], t: f64) -> Result<()> {
    for g in levels {
        if g.data().iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(GphError::IntegrationFailure {
                t,
                reason: format!("non-finite entry in level {}", g.order()),
            });
        }
    }
    Ok(())
}

struct Stepped {
    truncation: HierarchyTruncation,
    herm_residual: Vec<f64>,
}

fn step_impl(t: &HierarchyTruncation, dt: f64, exec: Exec) -> Result<Stepped> {
    let grid = t.grid().clone();
    let depth = t.depth();
    let half_p = t.p as usize / 2;
    let half_flow = |levels: &mut [DenseMarginal]| -> Result<()> {
        for g in levels.iter_mut() {
            g.apply_multiplier(&free_flow_multiplier(&grid, g.order(), dt / 2.0)?)?;
        }
        Ok(())
    };

    let mut y0 = t.marginals.clone();
    half_flow(&mut y0)?;

    // closure inputs at the RK4 stage times 0, dt/2, dt
    let oracle_mid = match &t.closure {
        ClosurePolicy::Oracle(m) => Some(m.map_states(|phi| free_flow_state(phi, dt / 2.0))?),
        ClosurePolicy::Zero => None,
    };
    let closed: Vec<usize> = (1..=depth).filter(|k| k + half_p > depth).collect();
    let closure_at = |tau: f64| -> Result<Vec<Option<DenseMarginal>>> {
        let mut out = vec![None; depth];
        if let Some(m) = &oracle_mid {
            let staged = m.map_states(|phi| phase_state(phi, tau, t.p, t.mu))?;
            for &k in &closed {
                out[k - 1] = Some(b_full_mixture(&staged, k, t.p, exec)?);
            }
        }
        Ok(out)
    };
    let closures = [closure_at(0.0)?, closure_at(dt / 2.0)?, closure_at(dt)?];

    let minus_i_mu = Complex64::new(0.0, -t.mu);
    let rhs = |y: &[DenseMarginal], stage: usize| -> Result<Vec<DenseMarginal>> {
        (1..=depth)
            .map(|k| {
                let mut b = if k + half_p <= depth {
                    b_full(&y[k + half_p - 1], k, t.p, exec)?
                } else {
                    match &closures[stage][k - 1] {
                        Some(b) => b.clone(),
                        None => return DenseMarginal::zeros(&grid, k),
                    }
                };
                b.data_mut().iter_mut().for_each(|v| *v *= minus_i_mu);
                Ok(b)
            })
            .collect()
    };
    let axpy = |y: &[DenseMarginal], k: &[DenseMarginal], h: f64| -> Result<Vec<DenseMarginal>> {
        y.iter()
            .zip(k)
            .map(|(a, b)| {
                let mut c = a.clone();
                c.add_scaled(b, Complex64::new(h, 0.0))?;
                Ok(c)
            })
            .collect()
    };

    let mut y = y0.clone();
    if t.mu != 0.0 {
        let k1 = rhs(&y0, 0)?;
        let k2 = rhs(&axpy(&y0, &k1, dt / 2.0)?, 1)?;
        let k3 = rhs(&axpy(&y0, &k2, dt / 2.0)?, 1)?;
        let k4 = rhs(&axpy(&y0, &k3, dt)?, 2)?;
        for (i, g) in y.iter_mut().enumerate() {
            g.add_scaled(&k1[i], Complex64::new(dt / 6.0, 0.0))?;
            g.add_scaled(&k2[i], Complex64::new(dt / 3.0, 0.0))?;
            g.add_scaled(&k3[i], Complex64::new(dt / 3.0, 0.0))?;
            g.add_scaled(&k4[i], Complex64::new(dt / 6.0, 0.0))?;
        }
    }
    half_flow(&mut y)?;
    check_finite(&y, dt)?;

    let herm_residual = y.iter().map(|g| g.hermiticity_residual()).collect();
    let marginals = y
        .iter()
        .map(|g| {
            let mut s = g.symmetrize(exec);
            s.hermitize();
            s
        })
        .collect();

    let closure = match oracle_mid {
        Some(m) => ClosurePolicy::Oracle(
            m.map_states(|phi| free_flow_state(&phase_state(phi, dt, t.p, t.mu)?, dt / 2.0))?,
        ),
        None => ClosurePolicy::Zero,
    };
    Ok(Stepped {
        truncation: HierarchyTruncation {
            marginals,
            p: t.p,
            mu: t.mu,
            closure,
        },
        herm_residual,
    })
}

/// One Strang step of length `dt` (negative steps run backwards).
pub fn hierarchy_step(t: &HierarchyTruncation, dt: f64, exec: Exec) -> Result<HierarchyTruncation> {
    if dt == 0.0 || !dt.is_finite() {
        return Err(GphError::InvalidParameter(format!("dt = {dt}")));
    }
    Ok(step_impl(t, dt, exec)?.truncation)
}

fn diagnostics(t: &HierarchyTruncation, time: f64, herm: &[f64]) -> Result<Vec<DiagnosticRow>> {
    let mut rows = Vec::with_capacity(t.depth());
    for (i, g) in t.marginals.iter().enumerate() {
        let admiss_residual = if i == 0 {
            (g.trace_complex() - 1.0).norm()
        } else {
            t.marginals[i - 1].max_abs_diff(&g.partial_trace(1)?)
        };
        let min_eig = if g.side() <= FULL_MIN_EIG_SIDE {
            g.min_eigenvalue()?
        } else {
            g.min_eigenvalue_estimate(200, 0)
        };
        rows.push(DiagnosticRow {
            t: time,
            level: i + 1,
            trace: g.trace(),
            herm_residual: herm[i],
            admiss_residual,
            min_eig,
        });
    }
    Ok(rows)
}

/// Evolve to `horizon`, keeping a snapshot and diagnostic rows every
/// `cadence` steps and at the final time.
pub fn hierarchy_evolve(
    t0: &HierarchyTruncation,
    dt: f64,
    horizon: f64,
    cadence: usize,
    exec: Exec,
) -> Result<HierarchyRun> {
    if !(dt > 0.0) || !(horizon >= 0.0) || cadence == 0 {
        return Err(GphError::InvalidParameter(format!(
            "dt = {dt}, horizon = {horizon}, cadence = {cadence}"
        )));
    }
    let steps = (horizon / dt).round() as usize;
    let zeros = vec![0.0; t0.depth()];
    let mut run = HierarchyRun {
        times: vec![0.0],
        snapshots: vec![t0.clone()],
        diagnostics: diagnostics(t0, 0.0, &zeros)?,
    };
    let mut cur = t0.clone();
    for i in 1..=steps {
        let time = i as f64 * dt;
        let stepped = step_impl(&cur, dt, exec).map_err(|e| match e {
            GphError::IntegrationFailure { reason, .. } => GphError::IntegrationFailure { t: time, reason },
            other => other,
        })?;
        cur = stepped.truncation;
        if i % cadence == 0 || i == steps {
            run.diagnostics.extend(diagnostics(&cur, time, &stepped.herm_residual)?);
            run.times.push(time);
            run.snapshots.push(cur.clone());
        }
    }
    Ok(run)
}

/// `max_t ||gamma^(1)(t) - gamma_ref^(1)(t)||_inf` against mixtures sampled at the run's times.
pub fn level_one_error(run: &HierarchyRun, reference: &[MixtureState], exec: Exec) -> Result<f64> {
    if reference.len() != run.snapshots.len() {
        return Err(GphError::ShapeMismatch {
            expected: run.snapshots.len(),
            got: reference.len(),
        });
    }
    let mut err = 0.0f64;
    for (snap, m) in run.snapshots.iter().zip(reference) {
        err = err.max(snap.level(1).max_abs_diff(&m.marginal(1, exec)?));
    }
    Ok(err)
}
