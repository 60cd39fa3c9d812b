//! Interaction contractions `B^pm_{j; k+1..k+p/2}` and the one-level energy
//! operators `K_l`.
//!
//! A delta pair inside a `B` kernel is realized by index pinning: the
//! eliminated integral and the delta cancel, so no `dx` factor appears.

use num_complex::Complex64;

use crate::error::{GphError, Result};
use crate::exec::Exec;
use crate::grid::{bracket_symbol, FourierMultiplier, Grid};
use crate::state::{check_capacity, tensor_power, DenseMarginal, MixtureState};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContractionSpec {
    pub p: u32,
    /// Target variable, 1-based.
    pub j: usize,
    /// Output order.
    pub k: usize,
}

impl ContractionSpec {
    pub fn new(p: u32, j: usize, k: usize) -> Result<Self> {
        if p != 2 && p != 4 {
            return Err(GphError::InvalidParameter(format!("p = {p} not in {{2, 4}}")));
        }
        if j == 0 || j > k {
            return Err(GphError::InvalidParameter(format!("need 1 <= j <= k, got j = {j}, k = {k}")));
        }
        Ok(ContractionSpec { p, j, k })
    }

    pub fn half_p(&self) -> usize {
        self.p as usize / 2
    }

    pub fn k_p(&self) -> usize {
        1 + self.half_p()
    }

    pub fn input_order(&self) -> usize {
        self.k + self.half_p()
    }
}

pub fn k_p(p: u32) -> usize {
    1 + p as usize / 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Plus,
    Minus,
}

/// `sum_{i < h} N^i`: offset step of the index `(y, .., y)` over `h` slots.
fn diag_step(m: usize, h: usize) -> usize {
    (0..h).map(|i| m.pow(i as u32)).sum()
}

fn pin(gamma: &DenseMarginal, spec: ContractionSpec, side: Side, exec: Exec) -> Result<DenseMarginal> {
    if gamma.order() != spec.input_order() {
        return Err(GphError::OrderMismatch(format!(
            "contraction expects order {}, got {}",
            spec.input_order(),
            gamma.order()
        )));
    }
    let grid = gamma.grid();
    let m = grid.slot_size();
    let h = spec.half_p();
    let mut out = DenseMarginal::zeros(grid, spec.k)?;
    let side_out = out.side();
    let big = gamma.side();
    let nh = m.pow(h as u32);
    let step = diag_step(m, h);
    let digit_div = m.pow((spec.k - spec.j) as u32);
    let data = gamma.data();
    exec.fill_chunks(out.data_mut(), side_out, |r, row| {
        let xr = (r / digit_div) % m;
        for (c, v) in row.iter_mut().enumerate() {
            let y = match side {
                Side::Plus => xr,
                Side::Minus => (c / digit_div) % m,
            };
            *v = data[(r * nh + y * step) * big + c * nh + y * step];
        }
    });
    Ok(out)
}

/// Pins the last `p/2` unprimed and primed variables to `x_j`.
pub fn b_plus_dense(gamma: &DenseMarginal, spec: ContractionSpec, exec: Exec) -> Result<DenseMarginal> {
    pin(gamma, spec, Side::Plus, exec)
}

/// Pins the last `p/2` unprimed and primed variables to `x'_j`.
pub fn b_minus_dense(gamma: &DenseMarginal, spec: ContractionSpec, exec: Exec) -> Result<DenseMarginal> {
    pin(gamma, spec, Side::Minus, exec)
}

/// `B gamma^(k+p/2) = sum_j (B^+_j - B^-_j) gamma^(k+p/2)`.
pub fn b_full(gamma: &DenseMarginal, k: usize, p: u32, exec: Exec) -> Result<DenseMarginal> {
    let mut out = DenseMarginal::zeros(gamma.grid(), k)?;
    for j in 1..=k {
        let spec = ContractionSpec::new(p, j, k)?;
        out.add_scaled(&b_plus_dense(gamma, spec, exec)?, Complex64::new(1.0, 0.0))?;
        out.add_scaled(&b_minus_dense(gamma, spec, exec)?, Complex64::new(-1.0, 0.0))?;
    }
    Ok(out)
}

/// Closed form of the contractions on a mixture, without building the
/// order `k + p/2` tensor: each component contributes
/// `mu_j sum_t (a_t rho(x_t) + b_t rho(x'_t)) prod phi(x) prod conj(phi(x'))`
/// with `rho = |phi|^p` and `(t, a_t, b_t)` taken from `targets`.
fn mixture_contraction(
    state: &MixtureState,
    k: usize,
    p: u32,
    targets: &[(usize, f64, f64)],
    exec: Exec,
) -> Result<DenseMarginal> {
    let mut out = DenseMarginal::zeros(state.grid(), k)?;
    let side = out.side();
    let m = state.grid().slot_size();
    let half_p = p as i32 / 2;
    let comps: Vec<(f64, Vec<Complex64>, Vec<f64>)> = state
        .components()
        .iter()
        .map(|(w, phi)| {
            let rho = phi.values().iter().map(|v| v.norm_sqr().powi(half_p)).collect();
            (*w, tensor_power(phi.values(), k), rho)
        })
        .collect();
    exec.fill_chunks(out.data_mut(), side, |r, row| {
        for (w, v, rho) in &comps {
            let a = v[r] * *w;
            for (c, o) in row.iter_mut().enumerate() {
                let mut f = 0.0;
                for &(j, plus, minus) in targets {
                    let div = m.pow((k - j) as u32);
                    f += plus * rho[(r / div) % m] + minus * rho[(c / div) % m];
                }
                *o += a * v[c].conj() * f;
            }
        }
    });
    Ok(out)
}

pub fn b_plus_mixture(state: &MixtureState, spec: ContractionSpec, exec: Exec) -> Result<DenseMarginal> {
    mixture_contraction(state, spec.k, spec.p, &[(spec.j, 1.0, 0.0)], exec)
}

pub fn b_minus_mixture(state: &MixtureState, spec: ContractionSpec, exec: Exec) -> Result<DenseMarginal> {
    mixture_contraction(state, spec.k, spec.p, &[(spec.j, 0.0, 1.0)], exec)
}

pub fn b_full_mixture(state: &MixtureState, k: usize, p: u32, exec: Exec) -> Result<DenseMarginal> {
    ContractionSpec::new(p, 1, k)?;
    let targets: Vec<_> = (1..=k).map(|j| (j, 1.0, -1.0)).collect();
    mixture_contraction(state, k, p, &targets, exec)
}

/// `Tr((1 - Delta_{x_1}) gamma)`.
pub fn kinetic_trace(gamma: &DenseMarginal) -> Result<Complex64> {
    let mut g = gamma.clone();
    let mult = FourierMultiplier::identity(2 * gamma.order()).with_real_slot(0, &bracket_symbol(gamma.grid(), 2.0))?;
    g.apply_multiplier(&mult)?;
    Ok(g.trace_complex())
}

/// `int dx gamma(x, .., x; x, .., x)`, i.e. `Tr_1 B^+_{1;2..k} gamma`.
pub fn full_diagonal(gamma: &DenseMarginal) -> Complex64 {
    let m = gamma.grid().slot_size();
    let step = diag_step(m, gamma.order());
    let side = gamma.side();
    let s: Complex64 = (0..m).map(|x| gamma.entry(x * step, x * step)).sum();
    debug_assert!(m.saturating_sub(1) * step < side);
    s * gamma.grid().cell_volume()
}

/// Apply one `K` block to the last `k_p` variables of an order-`order`
/// kernel and trace them out; returns an order `order - k_p` kernel
/// (a single value when `order == k_p`).
pub(crate) fn reduce_last_block(
    grid: &Grid,
    data: &[Complex64],
    order: usize,
    p: u32,
    mu: f64,
) -> Result<Vec<Complex64>> {
    let kp = k_p(p);
    if order < kp {
        return Err(GphError::OrderMismatch(format!("order {order} below k_p = {kp}")));
    }
    let m = grid.slot_size();
    let out_order = order - kp;
    let small = m.pow(out_order as u32);
    let big = small * m.pow(kp as u32);
    let w1 = grid.cell_volume();

    // kinetic part: trace out the block's last k_p - 1 variables, then
    // (1 - Delta) on the remaining one before tracing it
    let tail = m.pow(kp as u32 - 1);
    let w_tail = w1.powi(kp as i32 - 1);
    let mid = small * m;
    let mut reduced = vec![ZERO; mid * mid];
    for r in 0..mid {
        for c in 0..mid {
            let mut s = ZERO;
            for y in 0..tail {
                s += data[(r * tail + y) * big + c * tail + y];
            }
            reduced[r * mid + c] = s * w_tail;
        }
    }
    let q = 2 * (out_order + 1);
    check_capacity(grid, q)?;
    let mult = FourierMultiplier::identity(q).with_real_slot(out_order, &bracket_symbol(grid, 2.0))?;
    crate::grid::apply_multiplier(grid, &mut reduced, &mult)?;

    let step = diag_step(m, kp);
    let coupling = mu / (p as f64 + 2.0);
    let mut out = vec![ZERO; small * small];
    for r in 0..small {
        for c in 0..small {
            let mut kin = ZERO;
            let mut pot = ZERO;
            for x in 0..m {
                kin += reduced[(r * m + x) * mid + c * m + x];
                if coupling != 0.0 {
                    pot += data[(r * m.pow(kp as u32) + x * step) * big + c * m.pow(kp as u32) + x * step];
                }
            }
            out[r * small + c] = (kin * 0.5 + pot * coupling) * w1;
        }
    }
    Ok(out)
}

/// `Tr(K_1 gamma^(k_p)) = 1/2 Tr((1 - Delta) gamma^(1)) + mu/(p+2) Tr_1 B^+ gamma^(k_p)`.
pub fn k_op_trace(gamma: &DenseMarginal, p: u32, mu: f64) -> Result<f64> {
    if gamma.order() != k_p(p) {
        return Err(GphError::OrderMismatch(format!(
            "k_op_trace expects order k_p = {}, got {}",
            k_p(p),
            gamma.order()
        )));
    }
    let v = reduce_last_block(gamma.grid(), gamma.data(), gamma.order(), p, mu)?;
    Ok(v[0].re)
}
