//! Periodic grids, unitary discrete Fourier transforms and Fourier multipliers.
//!
//! A field of order `q` on a grid of dimension `d` with `n` points per axis is
//! a flat row-major array of `n^(d*q)` complex values. The `q` spatial
//! arguments are called *slots*; slot `s` occupies axes `s*d .. (s+1)*d`, so a
//! slot index runs over `0..n^d` with the first axis varying slowest.
//!
//! The transform is normalized so that `e^{i xi.x} / sqrt(L^d)` has a single
//! unit coefficient, which makes Parseval read
//! `dx^(d q) * sum |f|^2 == sum |f_hat|^2`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{GphError, Result};

#[derive(Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n && self.length == other.length
    }
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(GphError::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(GphError::InvalidGrid(format!(
                "{n} points per axis; need a power of two >= 4"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(GphError::InvalidGrid(format!("period length {length} must be > 0")));
        }
        let mut planner = FftPlanner::new();
        Ok(Grid {
            dim,
            n,
            length,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Quadrature weight of one slot, `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Number of lattice points of one slot, `n^d`.
    pub fn slot_size(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Entry count of an order-`order` field, failing on overflow.
    pub fn field_len(&self, order: usize) -> Result<usize> {
        let mut len: usize = 1;
        for _ in 0..order {
            len = len.checked_mul(self.slot_size()).ok_or(GphError::Capacity {
                entries: u128::MAX,
                required_bytes: u128::MAX,
                cap: usize::MAX,
            })?;
        }
        Ok(len)
    }

    /// Integer mode of FFT-ordered axis index `i`; Nyquist lands on the negative side.
    pub fn mode(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Angular frequency `2 pi m / L` of axis index `i`.
    pub fn freq(&self, i: usize) -> f64 {
        2.0 * PI * self.mode(i) as f64 / self.length
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.freq(i)).collect()
    }

    /// Axis indices of slot index `s` (first axis slowest).
    pub fn slot_axes(&self, s: usize) -> [usize; 2] {
        match self.dim {
            1 => [s, 0],
            _ => [s / self.n, s % self.n],
        }
    }

    pub fn slot_index(&self, axes: &[usize]) -> usize {
        axes.iter().take(self.dim).fold(0, |acc, &a| acc * self.n + a)
    }

    /// Frequency vector of slot index `s` (unused trailing entry is zero in 1-d).
    pub fn slot_freq(&self, s: usize) -> [f64; 2] {
        let a = self.slot_axes(s);
        match self.dim {
            1 => [self.freq(a[0]), 0.0],
            _ => [self.freq(a[0]), self.freq(a[1])],
        }
    }

    pub fn slot_modes(&self, s: usize) -> [i64; 2] {
        let a = self.slot_axes(s);
        match self.dim {
            1 => [self.mode(a[0]), 0],
            _ => [self.mode(a[0]), self.mode(a[1])],
        }
    }

    /// `|xi|^2` for every slot index.
    pub fn freq_sq(&self) -> Vec<f64> {
        (0..self.slot_size())
            .map(|s| {
                let f = self.slot_freq(s);
                f[0] * f[0] + f[1] * f[1]
            })
            .collect()
    }

    /// Position of slot index `s`, origin at zero.
    pub fn position(&self, s: usize) -> [f64; 2] {
        let a = self.slot_axes(s);
        let dx = self.dx();
        match self.dim {
            1 => [a[0] as f64 * dx, 0.0],
            _ => [a[0] as f64 * dx, a[1] as f64 * dx],
        }
    }

    fn check_len(&self, data: &[Complex64], order: usize) -> Result<()> {
        let expected = self.field_len(order)?;
        if data.len() != expected {
            return Err(GphError::ShapeMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(())
    }

    fn axis_pass(&self, data: &mut [Complex64], total_axes: usize, axis: usize, inverse: bool) {
        let n = self.n;
        let fft = if inverse { &self.inv } else { &self.fwd };
        // unitary per-axis factors: forward sqrt(L)/n, inverse 1/sqrt(L)
        let scale = if inverse {
            1.0 / self.length.sqrt()
        } else {
            self.length.sqrt() / n as f64
        };
        let stride = n.pow((total_axes - 1 - axis) as u32);
        if stride == 1 {
            fft.process(data);
            data.iter_mut().for_each(|v| *v *= scale);
            return;
        }
        let block = n * stride;
        let mut buf = vec![Complex64::new(0.0, 0.0); block];
        for chunk in data.chunks_mut(block) {
            for inner in 0..stride {
                for k in 0..n {
                    buf[inner * n + k] = chunk[k * stride + inner];
                }
            }
            fft.process(&mut buf);
            for inner in 0..stride {
                for k in 0..n {
                    chunk[k * stride + inner] = buf[inner * n + k] * scale;
                }
            }
        }
    }

    fn slot_pass(&self, data: &mut [Complex64], order: usize, slot: usize, inverse: bool) {
        let total = order * self.dim;
        for a in 0..self.dim {
            self.axis_pass(data, total, slot * self.dim + a, inverse);
        }
    }

    /// In-place unitary forward transform over every slot.
    pub fn forward_transform(&self, data: &mut [Complex64], order: usize) -> Result<()> {
        self.check_len(data, order)?;
        for s in 0..order {
            self.slot_pass(data, order, s, false);
        }
        Ok(())
    }

    pub fn inverse_transform(&self, data: &mut [Complex64], order: usize) -> Result<()> {
        self.check_len(data, order)?;
        for s in 0..order {
            self.slot_pass(data, order, s, true);
        }
        Ok(())
    }

    /// Forward transform restricted to the listed slots.
    pub fn forward_slots(&self, data: &mut [Complex64], order: usize, slots: &[usize]) -> Result<()> {
        self.check_len(data, order)?;
        for &s in slots {
            self.slot_pass(data, order, s, false);
        }
        Ok(())
    }

    pub fn inverse_slots(&self, data: &mut [Complex64], order: usize, slots: &[usize]) -> Result<()> {
        self.check_len(data, order)?;
        for &s in slots {
            self.slot_pass(data, order, s, true);
        }
        Ok(())
    }
}

/// `<xi>^alpha = (1 + |xi|^2)^(alpha/2)` on every slot index.
pub fn bracket_symbol(grid: &Grid, alpha: f64) -> Vec<f64> {
    grid.freq_sq()
        .into_iter()
        .map(|k2| (1.0 + k2).powf(alpha / 2.0))
        .collect()
}

/// `|xi|^2`, the symbol of `-Delta`.
pub fn laplacian_symbol(grid: &Grid) -> Vec<f64> {
    grid.freq_sq()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpFamily {
    /// Indicators of `2^j <= |xi| < 2^(j+1)`, with `|xi| < 2` for `j = 0`.
    Sharp,
    /// Raised-cosine partition on a log2 scale; `p_j` lives in
    /// `2^(j-1/2) < |xi| < 2^(j+3/2)`, inside `(2/3) 2^j < |xi| < 3 * 2^j`.
    Smooth,
}

fn smooth_cumulative(t: f64) -> f64 {
    // 1 for t <= 1/2, 0 for t >= 3/2
    if t <= 0.5 {
        1.0
    } else if t >= 1.5 {
        0.0
    } else {
        0.5 * (1.0 + (PI * (t - 0.5)).cos())
    }
}

fn cumulative_value(abs_xi: f64, j: usize, family: LpFamily) -> f64 {
    match family {
        LpFamily::Sharp => {
            if abs_xi < 2f64.powi(j as i32 + 1) {
                1.0
            } else {
                0.0
            }
        }
        LpFamily::Smooth => {
            if abs_xi == 0.0 {
                1.0
            } else {
                smooth_cumulative(abs_xi.log2() - j as f64)
            }
        }
    }
}

/// Symbol of `P_{<=j}`.
pub fn lp_cumulative_symbol(grid: &Grid, j: usize, family: LpFamily) -> Vec<f64> {
    grid.freq_sq()
        .into_iter()
        .map(|k2| cumulative_value(k2.sqrt(), j, family))
        .collect()
}

/// Symbol of the dyadic piece `P_j`.
pub fn lp_symbol(grid: &Grid, j: usize, family: LpFamily) -> Vec<f64> {
    grid.freq_sq()
        .into_iter()
        .map(|k2| {
            let a = k2.sqrt();
            let upper = cumulative_value(a, j, family);
            if j == 0 {
                upper
            } else {
                upper - cumulative_value(a, j - 1, family)
            }
        })
        .collect()
}

/// Number of dyadic pieces needed so that `sum_{j < count} P_j` is the identity
/// on this lattice.
pub fn lp_level_count(grid: &Grid, family: LpFamily) -> usize {
    let max_abs = grid
        .freq_sq()
        .into_iter()
        .fold(0.0f64, |m, k2| m.max(k2.sqrt()));
    let mut j = 0;
    while cumulative_value(max_abs, j, family) < 1.0 {
        j += 1;
    }
    j + 1
}

/// Indicator of the frequency cube `prod_i [(r_i - 1/2) s, (r_i + 1/2) s)` for
/// one slot (`r` holds one integer per axis); cube `0` is centered at the origin.
pub fn cube_symbol(grid: &Grid, r: &[i64], side: f64) -> Vec<f64> {
    (0..grid.slot_size())
        .map(|s| {
            let c = cube_index(grid, s, side);
            if (0..grid.dim()).all(|a| c[a] == r[a]) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Cube index of slot index `s` for cubes of side `side`.
pub fn cube_index(grid: &Grid, s: usize, side: f64) -> [i64; 2] {
    let f = grid.slot_freq(s);
    let idx = |v: f64| (v / side + 0.5).floor() as i64;
    match grid.dim() {
        1 => [idx(f[0]), 0],
        _ => [idx(f[0]), idx(f[1])],
    }
}

/// Symbol re-indexed by `xi -> -xi`. Right multiplication of a kernel by an
/// operator with symbol `a` acts on the primed slot with `a(-xi)` in the
/// transform convention used here.
pub fn reflect_symbol<T: Copy>(grid: &Grid, symbol: &[T]) -> Vec<T> {
    let n = grid.n();
    (0..grid.slot_size())
        .map(|s| {
            let a = grid.slot_axes(s);
            let r: Vec<usize> = (0..grid.dim()).map(|i| (n - a[i]) % n).collect();
            symbol[grid.slot_index(&r)]
        })
        .collect()
}

fn to_complex(symbol: &[f64]) -> Vec<Complex64> {
    symbol.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Separable Fourier multiplier: one optional symbol per slot.
#[derive(Debug, Clone)]
pub struct FourierMultiplier {
    order: usize,
    symbols: Vec<Option<Vec<Complex64>>>,
}

impl FourierMultiplier {
    pub fn identity(order: usize) -> Self {
        FourierMultiplier {
            order,
            symbols: vec![None; order],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Compose `symbol` onto `slot` (multiplies with any symbol already there).
    pub fn with_slot(mut self, slot: usize, symbol: Vec<Complex64>) -> Result<Self> {
        if slot >= self.order {
            return Err(GphError::OrderMismatch(format!(
                "slot {slot} out of range for order {}",
                self.order
            )));
        }
        self.symbols[slot] = Some(match self.symbols[slot].take() {
            None => symbol,
            Some(old) => old.iter().zip(&symbol).map(|(a, b)| a * b).collect(),
        });
        Ok(self)
    }

    pub fn with_real_slot(self, slot: usize, symbol: &[f64]) -> Result<Self> {
        self.with_slot(slot, to_complex(symbol))
    }

    pub fn with_real_slots(mut self, slots: &[usize], symbol: &[f64]) -> Result<Self> {
        for &s in slots {
            self = self.with_real_slot(s, symbol)?;
        }
        Ok(self)
    }

    pub fn is_identity(&self) -> bool {
        self.symbols.iter().all(Option::is_none)
    }

    fn active_slots(&self) -> Vec<usize> {
        (0..self.order).filter(|&s| self.symbols[s].is_some()).collect()
    }

    /// Multiply already-transformed coefficients in place.
    pub fn multiply_coefficients(&self, grid: &Grid, coeffs: &mut [Complex64]) {
        let m = grid.slot_size();
        for s in self.active_slots() {
            let sym = self.symbols[s].as_ref().expect("active slot");
            let stride = m.pow((self.order - 1 - s) as u32);
            for (i, c) in coeffs.iter_mut().enumerate() {
                *c *= sym[(i / stride) % m];
            }
        }
    }
}

/// Apply `mult` to an order-`mult.order()` field: transform the affected
/// slots, multiply, transform back.
pub fn apply_multiplier(grid: &Grid, data: &mut [Complex64], mult: &FourierMultiplier) -> Result<()> {
    let slots = mult.active_slots();
    if slots.is_empty() {
        grid.check_len(data, mult.order)?;
        return Ok(());
    }
    grid.forward_slots(data, mult.order, &slots)?;
    mult.multiply_coefficients(grid, data);
    grid.inverse_slots(data, mult.order, &slots)?;
    Ok(())
}

/// `P_j` (or `P_{<=j}` when `cumulative`) acting on slot `arg`.
pub fn lp_project(
    grid: &Grid,
    data: &[Complex64],
    order: usize,
    j: usize,
    family: LpFamily,
    arg: usize,
) -> Result<Vec<Complex64>> {
    let mut out = data.to_vec();
    let mult = FourierMultiplier::identity(order).with_real_slot(arg, &lp_symbol(grid, j, family))?;
    apply_multiplier(grid, &mut out, &mult)?;
    Ok(out)
}

/// Quadrature L2 norm of an order-`order` field.
pub fn l2_norm(grid: &Grid, data: &[Complex64], order: usize) -> f64 {
    let w = grid.cell_volume().powi(order as i32);
    (w * data.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(len: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn grid_construction() {
        let g = Grid::new(1, 8, 2.0 * PI).unwrap();
        assert!((g.dx() - PI / 4.0).abs() < 1e-15);
        let modes: Vec<i64> = (0..8).map(|i| g.mode(i)).collect();
        assert_eq!(modes, vec![0, 1, 2, 3, -4, -3, -2, -1]);

        let g = Grid::new(1, 4, 1.0).unwrap();
        let f = g.frequencies();
        let expect = [0.0, 2.0 * PI, -4.0 * PI, -2.0 * PI];
        for (a, b) in f.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }

        let g = Grid::new(2, 16, 2.0 * PI).unwrap();
        assert_eq!(g.slot_size(), 256);
        assert!((g.cell_volume() - (PI / 8.0).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::new(1, 12, 1.0).is_err());
        assert!(Grid::new(1, 2, 1.0).is_err());
        assert!(Grid::new(3, 8, 1.0).is_err());
        assert!(Grid::new(1, 8, -1.0).is_err());
    }

    #[test]
    fn constant_field_has_unit_zero_mode() {
        let g = Grid::new(1, 16, 2.0 * PI).unwrap();
        let mut f = vec![Complex64::new(1.0 / g.length().sqrt(), 0.0); 16];
        g.forward_transform(&mut f, 1).unwrap();
        assert!((f[0] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(f[1..].iter().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn plane_wave_has_single_coefficient_2d() {
        let g = Grid::new(2, 8, 3.0).unwrap();
        let mut f: Vec<Complex64> = (0..g.slot_size())
            .map(|s| {
                let x = g.position(s);
                let k = [g.freq(2), g.freq(7)];
                Complex64::from_polar(1.0 / g.length(), k[0] * x[0] + k[1] * x[1])
            })
            .collect();
        g.forward_transform(&mut f, 1).unwrap();
        let hit = g.slot_index(&[2, 7]);
        assert!((f[hit] - Complex64::new(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn round_trip_and_parseval_all_orders() {
        let g = Grid::new(1, 4, 1.7).unwrap();
        for order in 1..=4 {
            let f = random_field(g.field_len(order).unwrap(), order as u64);
            let mut c = f.clone();
            g.forward_transform(&mut c, order).unwrap();
            let coeff_norm: f64 = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let l2 = l2_norm(&g, &f, order);
            assert!((coeff_norm - l2).abs() / l2 < 1e-12);
            g.inverse_transform(&mut c, order).unwrap();
            assert!(max_diff(&c, &f) < 1e-12);
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let mut f = vec![Complex64::new(0.0, 0.0); 10];
        assert!(matches!(
            g.forward_transform(&mut f, 1),
            Err(GphError::ShapeMismatch { expected: 8, got: 10 })
        ));
    }

    #[test]
    fn bracket_on_mode_one() {
        let g = Grid::new(1, 8, 2.0 * PI).unwrap();
        let mut f: Vec<Complex64> = (0..8)
            .map(|s| Complex64::from_polar(1.0 / g.length().sqrt(), g.position(s)[0]))
            .collect();
        let m = FourierMultiplier::identity(1)
            .with_real_slot(0, &bracket_symbol(&g, 1.0))
            .unwrap();
        let orig = f.clone();
        apply_multiplier(&g, &mut f, &m).unwrap();
        for (a, b) in f.iter().zip(&orig) {
            assert!((a - b * 2f64.sqrt()).norm() < 1e-13);
        }
    }

    #[test]
    fn alpha_zero_is_identity() {
        let g = Grid::new(1, 8, 2.0 * PI).unwrap();
        let f = random_field(64, 3);
        let mut h = f.clone();
        let m = FourierMultiplier::identity(2)
            .with_real_slots(&[0, 1], &bracket_symbol(&g, 0.0))
            .unwrap();
        apply_multiplier(&g, &mut h, &m).unwrap();
        assert!(max_diff(&f, &h) < 1e-14);
    }

    #[test]
    fn disjoint_multipliers_commute() {
        let g = Grid::new(1, 8, 2.0 * PI).unwrap();
        let f = random_field(64, 9);
        let a = FourierMultiplier::identity(2)
            .with_real_slot(0, &bracket_symbol(&g, 0.7))
            .unwrap();
        let b = FourierMultiplier::identity(2)
            .with_real_slot(1, &lp_symbol(&g, 1, LpFamily::Smooth))
            .unwrap();
        let mut ab = f.clone();
        apply_multiplier(&g, &mut ab, &a).unwrap();
        apply_multiplier(&g, &mut ab, &b).unwrap();
        let mut ba = f;
        apply_multiplier(&g, &mut ba, &b).unwrap();
        apply_multiplier(&g, &mut ba, &a).unwrap();
        assert!(max_diff(&ab, &ba) < 1e-13);
    }

    #[test]
    fn sharp_projector_examples() {
        let g = Grid::new(1, 16, 2.0 * PI).unwrap();
        let wave = |m: f64| -> Vec<Complex64> {
            (0..16)
                .map(|s| Complex64::from_polar(1.0, m * g.position(s)[0]))
                .collect()
        };
        let f = wave(4.0);
        let p2 = lp_project(&g, &f, 1, 2, LpFamily::Sharp, 0).unwrap();
        let p1 = lp_project(&g, &f, 1, 1, LpFamily::Sharp, 0).unwrap();
        assert!(max_diff(&p2, &f) < 1e-13);
        assert!(p1.iter().all(|v| v.norm() < 1e-13));

        let c = wave(0.0);
        for family in [LpFamily::Sharp, LpFamily::Smooth] {
            for j in 0..lp_level_count(&g, family) {
                let p = lp_project(&g, &c, 1, j, family, 0).unwrap();
                if j == 0 {
                    assert!(max_diff(&p, &c) < 1e-13);
                } else {
                    assert!(p.iter().all(|v| v.norm() < 1e-13));
                }
            }
        }
    }

    #[test]
    fn smooth_family_support() {
        let g = Grid::new(1, 128, 2.0 * PI).unwrap();
        let k2 = g.freq_sq();
        for j in 0..lp_level_count(&g, LpFamily::Smooth) {
            let sym = lp_symbol(&g, j, LpFamily::Smooth);
            for (v, k2) in sym.iter().zip(&k2) {
                let a = k2.sqrt();
                if *v != 0.0 {
                    if j == 0 {
                        assert!(a <= 3.0);
                    } else {
                        let lo = 2.0 / 3.0 * 2f64.powi(j as i32);
                        let hi = 3.0 * 2f64.powi(j as i32);
                        assert!(a > lo && a < hi, "j={j} |xi|={a}");
                    }
                }
                assert!(*v >= -1e-15 && *v <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn cube_symbol_selects_unit_cells() {
        let g = Grid::new(1, 8, 2.0 * PI).unwrap();
        let total: Vec<f64> = (-4..4)
            .map(|r| cube_symbol(&g, &[r, 0], 1.0))
            .fold(vec![0.0; 8], |acc, s| acc.iter().zip(&s).map(|(a, b)| a + b).collect());
        assert!(total.iter().all(|&v| v == 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn lp_partition_reconstructs(seed in 0u64..1000, order in 1usize..=2, dim in 1usize..=2) {
            let g = Grid::new(dim, 8, 2.0 * PI).unwrap();
            let f = random_field(g.field_len(order).unwrap(), seed);
            for family in [LpFamily::Sharp, LpFamily::Smooth] {
                let mut acc = vec![Complex64::new(0.0, 0.0); f.len()];
                for j in 0..lp_level_count(&g, family) {
                    let p = lp_project(&g, &f, order, j, family, order - 1).unwrap();
                    acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
                }
                prop_assert!(max_diff(&acc, &f) < 1e-12);
            }
        }

        #[test]
        fn bracket_powers_compose(seed in 0u64..1000, a in 0.0f64..1.5, b in 0.0f64..1.5) {
            let g = Grid::new(1, 8, 2.0 * PI).unwrap();
            let f = random_field(64, seed);
            let ma = FourierMultiplier::identity(2).with_real_slots(&[0, 1], &bracket_symbol(&g, a)).unwrap();
            let mb = FourierMultiplier::identity(2).with_real_slots(&[0, 1], &bracket_symbol(&g, b)).unwrap();
            let mab = FourierMultiplier::identity(2).with_real_slots(&[0, 1], &bracket_symbol(&g, a + b)).unwrap();
            let mut x = f.clone();
            apply_multiplier(&g, &mut x, &ma).unwrap();
            apply_multiplier(&g, &mut x, &mb).unwrap();
            let mut y = f;
            apply_multiplier(&g, &mut y, &mab).unwrap();
            let scale = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
            prop_assert!(max_diff(&x, &y) / scale < 1e-12);
        }
    }
}
