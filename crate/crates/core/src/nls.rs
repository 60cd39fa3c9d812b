//! Split-step Fourier integration of `i d_t phi = -Delta phi + mu |phi|^p phi`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GphError, Result};
use crate::grid::{bracket_symbol, l2_norm, Grid};

/// Amplitude above which a run is declared blown up.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    grid: Grid,
    values: Vec<Complex64>,
}

impl WaveFunction {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.slot_size() {
            return Err(GphError::ShapeMismatch {
                expected: grid.slot_size(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(GphError::InvalidParameter("wave function has non-finite values".into()));
        }
        Ok(WaveFunction { grid, values })
    }

    /// Build from a function of position.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> Complex64) -> Result<Self> {
        let values = (0..grid.slot_size()).map(|s| f(grid.position(s))).collect();
        WaveFunction::new(grid.clone(), values)
    }

    /// Build from unitary Fourier coefficients.
    pub fn from_coefficients(grid: &Grid, mut coeffs: Vec<Complex64>) -> Result<Self> {
        grid.inverse_transform(&mut coeffs, 1)?;
        WaveFunction::new(grid.clone(), coeffs)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// `||phi||^2_{L^2}` by quadrature.
    pub fn mass(&self) -> f64 {
        l2_norm(&self.grid, &self.values, 1).powi(2)
    }

    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if m <= 0.0 {
            return Err(GphError::InvalidParameter("cannot normalize a zero wave function".into()));
        }
        let s = 1.0 / m.sqrt();
        self.values.iter_mut().for_each(|v| *v *= s);
        Ok(self)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        WaveFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn coefficients(&self) -> Vec<Complex64> {
        let mut c = self.values.clone();
        self.grid
            .forward_transform(&mut c, 1)
            .expect("length checked at construction");
        c
    }

    /// `||grad phi||^2`, computed spectrally.
    pub fn gradient_norm_sq(&self) -> f64 {
        self.coefficients()
            .iter()
            .zip(self.grid.freq_sq())
            .map(|(c, k2)| k2 * c.norm_sqr())
            .sum()
    }

    /// `||<grad>^alpha phi||^2`.
    pub fn bracket_norm_sq(&self, alpha: f64) -> f64 {
        self.coefficients()
            .iter()
            .zip(bracket_symbol(&self.grid, alpha))
            .map(|(c, b)| b * b * c.norm_sqr())
            .sum()
    }

    /// `int |phi|^r dx`.
    pub fn lp_integral(&self, r: f64) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.norm().powf(r)).sum::<f64>()
    }

    pub fn max_diff(&self, other: &WaveFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Normalized plane wave `e^{i xi.x} / sqrt(L^d)` at integer modes.
pub fn plane_wave(grid: &Grid, modes: [i64; 2]) -> Result<WaveFunction> {
    let k = modes.map(|m| 2.0 * std::f64::consts::PI * m as f64 / grid.length());
    let amp = 1.0 / grid.length().powf(grid.dim() as f64 / 2.0);
    WaveFunction::from_fn(grid, |x| Complex64::from_polar(amp, k[0] * x[0] + k[1] * x[1]))
}

/// Mass-one periodic Gaussian `exp(-|x - c|^2 / (2 w^2))` using the nearest image.
pub fn gaussian(grid: &Grid, center: [f64; 2], width: f64) -> Result<WaveFunction> {
    if !(width > 0.0) {
        return Err(GphError::InvalidParameter(format!("gaussian width {width} must be > 0")));
    }
    let l = grid.length();
    let d = grid.dim();
    WaveFunction::from_fn(grid, |x| {
        let r2: f64 = (0..d)
            .map(|a| {
                let mut dx = (x[a] - center[a]).rem_euclid(l);
                if dx > l / 2.0 {
                    dx -= l;
                }
                dx * dx
            })
            .sum();
        Complex64::new((-r2 / (2.0 * width * width)).exp(), 0.0)
    })?
    .normalized()
}

/// Mass-one random state with Fourier coefficients decaying like `<xi>^-decay`.
pub fn random_state(grid: &Grid, seed: u64, decay: f64) -> Result<WaveFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = bracket_symbol(grid, -decay);
    let coeffs = weights
        .iter()
        .map(|w| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im) * *w
        })
        .collect();
    WaveFunction::from_coefficients(grid, coeffs)?.normalized()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlsParams {
    pub p: u32,
    pub mu: f64,
    /// May be negative to run the flow backwards.
    pub dt: f64,
    pub t_final: f64,
}

impl NlsParams {
    pub fn new(p: u32, mu: f64, dt: f64, t_final: f64) -> Result<Self> {
        let params = NlsParams { p, mu, dt, t_final };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p != 2 && self.p != 4 {
            return Err(GphError::InvalidParameter(format!("p = {} not in {{2, 4}}", self.p)));
        }
        if !self.mu.is_finite() {
            return Err(GphError::InvalidParameter("mu must be finite".into()));
        }
        if !(self.dt.is_finite() && self.dt != 0.0) {
            return Err(GphError::InvalidParameter(format!("dt = {} must be nonzero", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(GphError::InvalidParameter(format!("T = {} must be >= 0", self.t_final)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt.abs()).round() as usize
    }
}

/// Reusable Strang stepper with the linear propagator precomputed.
#[derive(Debug, Clone)]
pub struct StrangStepper {
    grid: Grid,
    p: u32,
    mu: f64,
    dt: f64,
    linear: Vec<Complex64>,
}

impl StrangStepper {
    pub fn new(grid: &Grid, params: &NlsParams) -> Result<Self> {
        params.validate()?;
        let linear = grid
            .freq_sq()
            .into_iter()
            .map(|k2| Complex64::from_polar(1.0, -params.dt * k2))
            .collect();
        Ok(StrangStepper {
            grid: grid.clone(),
            p: params.p,
            mu: params.mu,
            dt: params.dt,
            linear,
        })
    }

    fn nonlinear_phase(&self, values: &mut [Complex64], tau: f64) {
        if self.mu == 0.0 {
            return;
        }
        let half_p = self.p as i32 / 2;
        for v in values.iter_mut() {
            let rho = v.norm_sqr().powi(half_p);
            *v *= Complex64::from_polar(1.0, -tau * self.mu * rho);
        }
    }

    /// Advance `values` in place by one step.
    pub fn step_in_place(&self, values: &mut [Complex64]) -> Result<()> {
        self.nonlinear_phase(values, self.dt / 2.0);
        self.grid.forward_transform(values, 1)?;
        values.iter_mut().zip(&self.linear).for_each(|(v, e)| *v *= e);
        self.grid.inverse_transform(values, 1)?;
        self.nonlinear_phase(values, self.dt / 2.0);
        Ok(())
    }
}

fn check_health(values: &[Complex64], t: f64) -> Result<()> {
    let mut max = 0.0f64;
    for v in values {
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(GphError::IntegrationFailure {
                t,
                reason: "non-finite value".into(),
            });
        }
        max = max.max(v.norm());
    }
    if max > BLOWUP_THRESHOLD {
        return Err(GphError::IntegrationFailure {
            t,
            reason: format!("amplitude {max:e} exceeds blowup threshold"),
        });
    }
    Ok(())
}

/// One Strang step: half nonlinear phase, full linear step, half nonlinear phase.
pub fn strang_step(phi: &WaveFunction, params: &NlsParams) -> Result<WaveFunction> {
    let stepper = StrangStepper::new(phi.grid(), params)?;
    let mut values = phi.values().to_vec();
    stepper.step_in_place(&mut values)?;
    check_health(&values, params.dt)?;
    WaveFunction::new(phi.grid().clone(), values)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<WaveFunction>,
}

impl Trajectory {
    pub fn last(&self) -> &WaveFunction {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Repeated Strang steps, recording every `record_every` steps and at the end.
pub fn evolve(phi0: &WaveFunction, params: &NlsParams, record_every: usize) -> Result<Trajectory> {
    let stepper = StrangStepper::new(phi0.grid(), params)?;
    let steps = params.steps();
    let every = record_every.max(1);
    let mut values = phi0.values().to_vec();
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![phi0.clone()],
    };
    for i in 1..=steps {
        let t = i as f64 * params.dt;
        stepper.step_in_place(&mut values)?;
        check_health(&values, t)?;
        if i % every == 0 || i == steps {
            traj.times.push(t);
            traj.states.push(WaveFunction::new(phi0.grid().clone(), values.clone())?);
        }
    }
    Ok(traj)
}

/// `E_1(phi) = 1/2 ||grad phi||^2 + mu/(p+2) int |phi|^(p+2)`.
pub fn nls_energy(phi: &WaveFunction, p: u32, mu: f64) -> f64 {
    let kinetic = 0.5 * phi.gradient_norm_sq();
    if mu == 0.0 {
        return kinetic;
    }
    kinetic + mu / (p as f64 + 2.0) * phi.lp_integral(p as f64 + 2.0)
}
