//! Marginal density matrices: exact low-rank mixtures and dense kernels.
//!
//! A [`DenseMarginal`] of order `k` stores `gamma(x_1..x_k; x'_1..x'_k)` as a
//! field of order `2k` whose first `k` slots are unprimed. Read as a matrix,
//! rows are the unprimed multi-index and columns the primed one; the integral
//! operator it represents is that matrix times `dx^(d k)`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GphError, Result};
use crate::exec::Exec;
use crate::grid::{apply_multiplier, FourierMultiplier, Grid};
use crate::nls::{NlsParams, StrangStepper, WaveFunction};

/// Default cap on the number of complex entries in a dense tensor.
pub const DEFAULT_MEM_CAP: usize = 1 << 27;

/// Largest matrix side for which positivity uses a full eigendecomposition.
pub const FULL_EIGEN_MAX_SIDE: usize = 4096;

const SNAPSHOT_MAGIC: &[u8; 4] = b"GPH1";
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Entry cap, overridable through `GPH_MEM_CAP`.
pub fn mem_cap() -> usize {
    std::env::var("GPH_MEM_CAP")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MEM_CAP)
}

/// Fail eagerly if an order-`order` field on `grid` would exceed the cap.
pub fn check_capacity(grid: &Grid, order: usize) -> Result<usize> {
    let entries = (grid.slot_size() as u128).checked_pow(order as u32).unwrap_or(u128::MAX);
    let cap = mem_cap();
    if entries > cap as u128 {
        return Err(GphError::Capacity {
            entries,
            required_bytes: entries.saturating_mul(16),
            cap,
        });
    }
    Ok(entries as usize)
}

/// `phi^{tensor k}` as a flat vector over `N^k` points.
pub fn tensor_power(values: &[Complex64], k: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(1.0, 0.0)];
    for _ in 0..k {
        out = out
            .iter()
            .flat_map(|a| values.iter().map(move |b| a * b))
            .collect();
    }
    out
}

/// Positive-weight superposition of factorized states `sum_j mu_j Gamma_{phi_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    components: Vec<(f64, WaveFunction)>,
}

impl MixtureState {
    pub fn new(components: Vec<(f64, WaveFunction)>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| GphError::InvalidParameter("mixture needs at least one component".into()))?;
        let grid = first.1.grid().clone();
        let mut total = 0.0;
        for (j, (w, phi)) in components.iter().enumerate() {
            if !(*w > 0.0 && w.is_finite()) {
                return Err(GphError::InvalidParameter(format!("weight {j} = {w} must be > 0")));
            }
            if phi.grid() != &grid {
                return Err(GphError::InvalidParameter(format!("component {j} lives on a different grid")));
            }
            if (phi.mass() - 1.0).abs() > 1e-12 {
                return Err(GphError::InvalidParameter(format!(
                    "component {j} has mass {} != 1",
                    phi.mass()
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(GphError::InvalidParameter(format!("weights sum to {total} != 1")));
        }
        Ok(MixtureState { components })
    }

    /// Normalize weights and states before validating.
    pub fn from_unnormalized(components: Vec<(f64, WaveFunction)>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.0).sum();
        let comps = components
            .into_iter()
            .map(|(w, phi)| Ok((w / total, phi.normalized()?)))
            .collect::<Result<Vec<_>>>()?;
        MixtureState::new(comps)
    }

    pub fn pure(phi: WaveFunction) -> Result<Self> {
        MixtureState::new(vec![(1.0, phi)])
    }

    pub fn grid(&self) -> &Grid {
        self.components[0].1.grid()
    }

    pub fn components(&self) -> &[(f64, WaveFunction)] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Convex combination `t * self + (1 - t) * other`.
    pub fn convex_combination(&self, other: &MixtureState, t: f64) -> Result<Self> {
        let mut comps: Vec<_> = self.components.iter().map(|(w, p)| (w * t, p.clone())).collect();
        comps.extend(other.components.iter().map(|(w, p)| (w * (1.0 - t), p.clone())));
        comps.retain(|c| c.0 > 0.0);
        MixtureState::new(comps)
    }

    /// Order-`k` marginal `sum_j mu_j (|phi_j><phi_j|)^{tensor k}`.
    pub fn marginal(&self, k: usize, exec: Exec) -> Result<DenseMarginal> {
        mixture_marginal(self, k, exec)
    }

    /// Replace every component by the output of `f`, keeping weights.
    pub fn map_states(&self, f: impl Fn(&WaveFunction) -> Result<WaveFunction>) -> Result<Self> {
        let comps = self
            .components
            .iter()
            .map(|(w, p)| Ok((*w, f(p)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixtureState { components: comps })
    }
}

#[derive(Debug, Clone)]
pub struct MixtureTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<MixtureState>,
}

/// Evolve every component by the p-NLS; records like [`crate::nls::evolve`].
pub fn evolve_mixture(
    state: &MixtureState,
    params: &NlsParams,
    record_every: usize,
    exec: Exec,
) -> Result<MixtureTrajectory> {
    let comps = state.components();
    let trajs = exec.map(comps.len(), |j| crate::nls::evolve(&comps[j].1, params, record_every));
    let trajs = trajs.into_iter().collect::<Result<Vec<_>>>()?;
    let times = trajs[0].times.clone();
    let states = (0..times.len())
        .map(|i| MixtureState {
            components: comps
                .iter()
                .zip(&trajs)
                .map(|((w, _), tr)| (*w, tr.states[i].clone()))
                .collect(),
        })
        .collect();
    Ok(MixtureTrajectory { times, states })
}

/// Advance each component of a mixture by one Strang step.
pub fn step_mixture(state: &MixtureState, stepper: &StrangStepper) -> Result<MixtureState> {
    state.map_states(|phi| {
        let mut v = phi.values().to_vec();
        stepper.step_in_place(&mut v)?;
        WaveFunction::new(phi.grid().clone(), v)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMarginal {
    grid: Grid,
    order: usize,
    data: Vec<Complex64>,
}

impl DenseMarginal {
    pub fn zeros(grid: &Grid, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(GphError::OrderMismatch("marginal order must be >= 1".into()));
        }
        let len = check_capacity(grid, 2 * order)?;
        Ok(DenseMarginal {
            grid: grid.clone(),
            order,
            data: vec![ZERO; len],
        })
    }

    pub fn from_data(grid: &Grid, order: usize, data: Vec<Complex64>) -> Result<Self> {
        if order == 0 {
            return Err(GphError::OrderMismatch("marginal order must be >= 1".into()));
        }
        let expected = grid.field_len(2 * order)?;
        if data.len() != expected {
            return Err(GphError::ShapeMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(DenseMarginal {
            grid: grid.clone(),
            order,
            data,
        })
    }

    /// Random hermitian positive kernel `sum_r v_r v_r^*` with unit trace.
    /// Not bosonic-symmetric in general.
    pub fn random_psd(grid: &Grid, order: usize, rank: usize, seed: u64) -> Result<Self> {
        let mut g = DenseMarginal::zeros(grid, order)?;
        let side = g.side();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vecs: Vec<Vec<Complex64>> = (0..rank.max(1))
            .map(|_| {
                (0..side)
                    .map(|_| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(re, im)
                    })
                    .collect()
            })
            .collect();
        Exec::default().fill_chunks(&mut g.data, side, |r, row| {
            for v in &vecs {
                let a = v[r];
                row.iter_mut().zip(v).for_each(|(o, b)| *o += a * b.conj());
            }
        });
        let tr = g.trace();
        g.scale(1.0 / tr);
        Ok(g)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Matrix side `N^k`.
    pub fn side(&self) -> usize {
        self.grid.slot_size().pow(self.order as u32)
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.side() + col]
    }

    /// Quadrature weight `dx^(d k)` of the matricized operator.
    pub fn weight(&self) -> f64 {
        self.grid.cell_volume().powi(self.order as i32)
    }

    pub fn trace_complex(&self) -> Complex64 {
        let side = self.side();
        let s: Complex64 = (0..side).map(|i| self.data[i * side + i]).sum();
        s * self.weight()
    }

    pub fn trace(&self) -> f64 {
        self.trace_complex().re
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add_scaled(&mut self, other: &DenseMarginal, c: Complex64) -> Result<()> {
        self.same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b * c);
        Ok(())
    }

    fn same_shape(&self, other: &DenseMarginal) -> Result<()> {
        if self.grid != other.grid || self.order != other.order {
            return Err(GphError::OrderMismatch(format!(
                "marginals of order {} and {} on different shapes",
                self.order, other.order
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &DenseMarginal) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Kernel of the adjoint operator: `conj(gamma(x'; x))`.
    pub fn adjoint(&self) -> DenseMarginal {
        let side = self.side();
        let mut out = self.data.clone();
        for r in 0..side {
            for c in 0..side {
                out[r * side + c] = self.data[c * side + r].conj();
            }
        }
        DenseMarginal {
            grid: self.grid.clone(),
            order: self.order,
            data: out,
        }
    }

    pub fn hermiticity_residual(&self) -> f64 {
        let side = self.side();
        let mut m = 0.0f64;
        for r in 0..side {
            for c in r..side {
                m = m.max((self.data[r * side + c] - self.data[c * side + r].conj()).norm());
            }
        }
        m
    }

    pub fn hermitize(&mut self) {
        let side = self.side();
        for r in 0..side {
            for c in r..side {
                let a = self.data[r * side + c];
                let b = self.data[c * side + r];
                let h = (a + b.conj()) * 0.5;
                self.data[r * side + c] = h;
                self.data[c * side + r] = h.conj();
            }
        }
    }

    /// Permute the `2k` slots: output slot `i` reads input slot `perm[i]`.
    pub fn permute_slots(&self, perm: &[usize], exec: Exec) -> DenseMarginal {
        let q = 2 * self.order;
        assert_eq!(perm.len(), q, "permutation length");
        let m = self.grid.slot_size();
        let in_strides: Vec<usize> = (0..q).map(|s| m.pow((q - 1 - s) as u32)).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = vec![ZERO; self.data.len()];
        let chunk = m.pow(self.order as u32);
        let data = &self.data;
        exec.fill_chunks(&mut out, chunk, |ci, block| {
            for (o, v) in block.iter_mut().enumerate() {
                let mut rest = ci * chunk + o;
                let mut src = 0;
                for s in (0..q).rev() {
                    src += (rest % m) * src_strides[s];
                    rest /= m;
                }
                *v = data[src];
            }
        });
        DenseMarginal {
            grid: self.grid.clone(),
            order: self.order,
            data: out,
        }
    }

    /// Average over `S_k x S_k` permutations of the unprimed and primed slots.
    pub fn symmetrize(&self, exec: Exec) -> DenseMarginal {
        let k = self.order;
        if k == 1 {
            return self.clone();
        }
        let perms = permutations(k);
        let mut current = self.clone();
        for primed in [false, true] {
            let mut acc = vec![ZERO; current.data.len()];
            for p in &perms {
                let full: Vec<usize> = (0..2 * k)
                    .map(|s| match (primed, s < k) {
                        (false, true) => p[s],
                        (true, false) => k + p[s - k],
                        _ => s,
                    })
                    .collect();
                let permuted = current.permute_slots(&full, exec);
                acc.iter_mut().zip(&permuted.data).for_each(|(a, b)| *a += b);
            }
            let w = 1.0 / perms.len() as f64;
            acc.iter_mut().for_each(|v| *v *= w);
            current.data = acc;
        }
        current
    }

    pub fn symmetry_residual(&self, exec: Exec) -> f64 {
        self.max_abs_diff(&self.symmetrize(exec))
    }

    /// Trace out the last `m` variables with weight `dx^(d m)`.
    pub fn partial_trace(&self, m: usize) -> Result<DenseMarginal> {
        if m >= self.order {
            return Err(GphError::OrderMismatch(format!(
                "cannot trace {m} variables of an order-{} marginal",
                self.order
            )));
        }
        if m == 0 {
            return Ok(self.clone());
        }
        let big = self.side();
        let nm = self.grid.slot_size().pow(m as u32);
        let small = big / nm;
        let w = self.grid.cell_volume().powi(m as i32);
        let mut out = DenseMarginal::zeros(&self.grid, self.order - m)?;
        for r in 0..small {
            for c in 0..small {
                let mut s = ZERO;
                for y in 0..nm {
                    s += self.data[(r * nm + y) * big + c * nm + y];
                }
                out.data[r * small + c] = s * w;
            }
        }
        Ok(out)
    }

    /// Apply a separable multiplier of order `2k` directly to the kernel slots
    /// (primed slots use the transform convention, see [`crate::grid::reflect_symbol`]).
    pub fn apply_multiplier(&mut self, mult: &FourierMultiplier) -> Result<()> {
        if mult.order() != 2 * self.order {
            return Err(GphError::OrderMismatch(format!(
                "multiplier of order {} on a marginal of order {}",
                mult.order(),
                self.order
            )));
        }
        apply_multiplier(&self.grid, &mut self.data, mult)
    }

    /// Weighted matrix `dx^(d k) * gamma` of the integral operator.
    pub fn to_matrix(&self) -> DMatrix<Complex64> {
        let side = self.side();
        let w = self.weight();
        DMatrix::from_fn(side, side, |r, c| self.data[r * side + c] * w)
    }

    /// Eigenvalues of the hermitian part of the operator, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let side = self.side();
        if side > FULL_EIGEN_MAX_SIDE {
            return Err(GphError::Eigen(format!(
                "matrix side {side} exceeds full-eigensolver limit {FULL_EIGEN_MAX_SIDE}"
            )));
        }
        let m = self.to_matrix();
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = h.symmetric_eigenvalues();
        let mut v: Vec<f64> = eig.iter().copied().collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(GphError::Eigen("non-finite eigenvalue".into()));
        }
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    /// Minimum eigenvalue: exact up to side 4096, seeded power-iteration
    /// estimate above that.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        if self.side() <= FULL_EIGEN_MAX_SIDE {
            return Ok(self.eigenvalues()?[0]);
        }
        Ok(self.min_eigenvalue_estimate(500, 0x5eed))
    }

    /// Shifted power iteration on the hermitian part.
    pub fn min_eigenvalue_estimate(&self, iters: usize, seed: u64) -> f64 {
        let side = self.side();
        let w = self.weight();
        let apply = |v: &DVector<Complex64>| -> DVector<Complex64> {
            DVector::from_fn(side, |r, _| {
                let row = &self.data[r * side..(r + 1) * side];
                let mut s = ZERO;
                for c in 0..side {
                    let h = (row[c] + self.data[c * side + r].conj()) * 0.5;
                    s += h * v[c];
                }
                s * w
            })
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut start = || {
            let v = DVector::from_fn(side, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            });
            let n = v.norm();
            v / Complex64::new(n, 0.0)
        };
        let mut v = start();
        let mut lam_max = 0.0;
        for _ in 0..iters {
            let av = apply(&v);
            lam_max = v.dotc(&av).re;
            let n = av.norm();
            if n == 0.0 {
                return 0.0;
            }
            v = av / Complex64::new(n, 0.0);
        }
        let shift = lam_max.abs();
        let mut u = start();
        let mut mu = 0.0;
        for _ in 0..iters {
            let bu = &u * Complex64::new(shift, 0.0) - apply(&u);
            mu = u.dotc(&bu).re;
            let n = bu.norm();
            if n == 0.0 {
                break;
            }
            u = bu / Complex64::new(n, 0.0);
        }
        shift - mu
    }

    /// Minimum eigenvalue, or an error if it is below `-tol`.
    pub fn check_positive(&self, tol: f64) -> Result<f64> {
        let min = self.min_eigenvalue()?;
        if min < -tol {
            return Err(GphError::NotPositive(min));
        }
        Ok(min)
    }

    /// Serialize: `GPH1`, d, n (u64 LE), L (f64 LE), then row-major
    /// (re, im) pairs as f64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 16 * self.data.len());
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&(self.grid.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.grid.n() as u64).to_le_bytes());
        out.extend_from_slice(&self.grid.length().to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 28 || &bytes[..4] != SNAPSHOT_MAGIC {
            return Err(GphError::Snapshot("missing GPH1 header".into()));
        }
        let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("8-byte slice") };
        let d = u64::from_le_bytes(word(4)) as usize;
        let n = u64::from_le_bytes(word(12)) as usize;
        let l = f64::from_le_bytes(word(20));
        let grid = Grid::new(d, n, l).map_err(|e| GphError::Snapshot(e.to_string()))?;
        let payload = &bytes[28..];
        if !payload.len().is_multiple_of(16) {
            return Err(GphError::Snapshot("payload is not a whole number of complex entries".into()));
        }
        let entries = payload.len() / 16;
        let m = grid.slot_size();
        let mut order = 0;
        let mut len = 1usize;
        while len < entries {
            len = len.saturating_mul(m * m);
            order += 1;
        }
        if len != entries || order == 0 {
            return Err(GphError::Snapshot(format!(
                "{entries} entries is not (n^d)^(2k) for n = {n}, d = {d}"
            )));
        }
        let data = payload
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        DenseMarginal::from_data(&grid, order, data)
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        DenseMarginal::from_bytes(&buf)
    }
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// `(|phi><phi|)^{tensor k}`.
pub fn factorized_marginal(phi: &WaveFunction, k: usize, exec: Exec) -> Result<DenseMarginal> {
    mixture_marginal(&MixtureState { components: vec![(1.0, phi.clone())] }, k, exec)
}

pub fn mixture_marginal(state: &MixtureState, k: usize, exec: Exec) -> Result<DenseMarginal> {
    let mut g = DenseMarginal::zeros(state.grid(), k)?;
    let side = g.side();
    let powers: Vec<(f64, Vec<Complex64>)> = state
        .components()
        .iter()
        .map(|(w, phi)| (*w, tensor_power(phi.values(), k)))
        .collect();
    exec.fill_chunks(&mut g.data, side, |r, row| {
        for (w, v) in &powers {
            let a = v[r] * *w;
            row.iter_mut().zip(v).for_each(|(o, b)| *o += a * b.conj());
        }
    });
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClosurePolicy {
    /// The above-truncation marginal is taken to be zero.
    Zero,
    /// The above-truncation marginal comes from this mixture, evolved in lockstep.
    Oracle(MixtureState),
}

#[derive(Debug, Clone)]
pub struct HierarchyTruncation {
    pub marginals: Vec<DenseMarginal>,
    pub p: u32,
    pub mu: f64,
    pub closure: ClosurePolicy,
}

impl HierarchyTruncation {
    pub fn new(marginals: Vec<DenseMarginal>, p: u32, mu: f64, closure: ClosurePolicy) -> Result<Self> {
        if marginals.is_empty() {
            return Err(GphError::OrderMismatch("truncation needs at least one level".into()));
        }
        if p != 2 && p != 4 {
            return Err(GphError::InvalidParameter(format!("p = {p} not in {{2, 4}}")));
        }
        let grid = marginals[0].grid().clone();
        for (i, g) in marginals.iter().enumerate() {
            if g.order() != i + 1 || g.grid() != &grid {
                return Err(GphError::OrderMismatch(format!(
                    "level {} has order {} or a different grid",
                    i + 1,
                    g.order()
                )));
            }
        }
        if let ClosurePolicy::Oracle(m) = &closure {
            if m.grid() != &grid {
                return Err(GphError::InvalidParameter("oracle mixture lives on a different grid".into()));
            }
        }
        Ok(HierarchyTruncation {
            marginals,
            p,
            mu,
            closure,
        })
    }

    /// Levels `1..=depth` of `state`; `oracle` selects the closure.
    pub fn from_mixture(
        state: &MixtureState,
        depth: usize,
        p: u32,
        mu: f64,
        oracle: bool,
        exec: Exec,
    ) -> Result<Self> {
        let marginals = (1..=depth)
            .map(|k| mixture_marginal(state, k, exec))
            .collect::<Result<Vec<_>>>()?;
        let closure = if oracle {
            ClosurePolicy::Oracle(state.clone())
        } else {
            ClosurePolicy::Zero
        };
        HierarchyTruncation::new(marginals, p, mu, closure)
    }

    pub fn depth(&self) -> usize {
        self.marginals.len()
    }

    pub fn grid(&self) -> &Grid {
        self.marginals[0].grid()
    }

    /// 1-based level access.
    pub fn level(&self, k: usize) -> &DenseMarginal {
        &self.marginals[k - 1]
    }
}

/// `max |gamma^(k) - Tr_{k+1} gamma^(k+1)|` for each `k < K`.
pub fn check_admissible(t: &HierarchyTruncation) -> Result<Vec<f64>> {
    t.marginals
        .windows(2)
        .map(|w| Ok(w[0].max_abs_diff(&w[1].partial_trace(1)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nls::{gaussian, plane_wave, random_state};
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(1, n, 2.0 * PI).unwrap()
    }

    fn random_mixture(g: &Grid, comps: usize, seed: u64) -> MixtureState {
        let c = (0..comps)
            .map(|j| (1.0 + j as f64, random_state(g, seed * 31 + j as u64, 1.5).unwrap()))
            .collect();
        MixtureState::from_unnormalized(c).unwrap()
    }

    #[test]
    fn factorized_entries() {
        let g = grid(4);
        let phi = random_state(&g, 1, 1.0).unwrap();
        let v = phi.values();
        let g1 = factorized_marginal(&phi, 1, Exec::Sequential).unwrap();
        assert!((g1.trace() - 1.0).abs() < 1e-12);
        assert_eq!(g1.entry(1, 3), v[1] * v[3].conj());
        let g2 = factorized_marginal(&phi, 2, Exec::Parallel).unwrap();
        let (a, b, c, d) = (0, 3, 2, 1);
        let want = v[a] * v[b] * v[c].conj() * v[d].conj();
        assert!((g2.entry(a * 4 + b, c * 4 + d) - want).norm() < 1e-15);
    }

    #[test]
    fn constant_state_entries() {
        let g = grid(4);
        let phi = plane_wave(&g, [0, 0]).unwrap();
        let g3 = factorized_marginal(&phi, 3, Exec::default()).unwrap();
        let want = (2.0 * PI).powi(-3);
        assert!(g3.data().iter().all(|v| (v.re - want).abs() < 1e-15 && v.im.abs() < 1e-15));
    }

    #[test]
    fn capacity_error_names_bytes() {
        let g = Grid::new(2, 64, 1.0).unwrap();
        let phi = plane_wave(&g, [0, 0]).unwrap();
        match factorized_marginal(&phi, 2, Exec::Sequential) {
            Err(GphError::Capacity { entries, required_bytes, .. }) => {
                assert_eq!(entries, 4096u128.pow(4));
                assert_eq!(required_bytes, 16 * entries);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn mixture_examples() {
        let g = grid(8);
        let phi = gaussian(&g, [1.0, 0.0], 0.8).unwrap();
        let single = MixtureState::pure(phi.clone()).unwrap();
        assert_eq!(
            mixture_marginal(&single, 2, Exec::Sequential).unwrap(),
            factorized_marginal(&phi, 2, Exec::Sequential).unwrap()
        );

        let a = plane_wave(&g, [1, 0]).unwrap();
        let b = plane_wave(&g, [-1, 0]).unwrap();
        let mix = MixtureState::new(vec![(0.5, a.clone()), (0.5, b.clone())]).unwrap();
        let m = mix.marginal(1, Exec::Sequential).unwrap();
        assert!((m.trace() - 1.0).abs() < 1e-12);
        let (va, vb) = (a.values(), b.values());
        for r in 0..8 {
            for c in 0..8 {
                let want = 0.5 * (va[r] * va[c].conj() + vb[r] * vb[c].conj());
                assert!((m.entry(r, c) - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn random_mixture_is_positive() {
        let g = grid(8);
        let m = random_mixture(&g, 3, 2).marginal(2, Exec::default()).unwrap();
        assert!(m.min_eigenvalue().unwrap() >= -1e-10);
    }

    #[test]
    fn mixture_validation() {
        let g = grid(8);
        let a = plane_wave(&g, [1, 0]).unwrap();
        assert!(MixtureState::new(vec![(0.7, a.clone())]).is_err());
        assert!(MixtureState::new(vec![(1.0, a.scaled(Complex64::new(2.0, 0.0)))]).is_err());
        assert!(MixtureState::new(vec![(1.5, a.clone()), (-0.5, a)]).is_err());
    }

    #[test]
    fn partial_trace_examples() {
        let g = grid(8);
        let phi = random_state(&g, 5, 1.2).unwrap();
        let g2 = factorized_marginal(&phi, 2, Exec::Sequential).unwrap();
        let g1 = factorized_marginal(&phi, 1, Exec::Sequential).unwrap();
        let t = g2.partial_trace(1).unwrap();
        assert!(t.max_abs_diff(&g1) < 1e-15);
        assert!((t.trace() - g2.trace()).abs() < 1e-12);
        assert!(g2.partial_trace(2).is_err());

        let g3 = random_mixture(&g, 3, 7).marginal(3, Exec::default()).unwrap();
        let r = g3.partial_trace(2).unwrap();
        assert!(r.hermiticity_residual() < 1e-14);
        assert!(r.min_eigenvalue().unwrap() >= -1e-12);
    }

    #[test]
    fn admissibility_report() {
        let g = grid(8);
        let mix = random_mixture(&g, 2, 3);
        let mut t = HierarchyTruncation::from_mixture(&mix, 3, 2, 1.0, false, Exec::default()).unwrap();
        assert!(check_admissible(&t).unwrap().iter().all(|&d| d <= 1e-12));
        let eps = 1e-3;
        t.marginals[0].data_mut()[5] += Complex64::new(eps, 0.0);
        let dev = check_admissible(&t).unwrap();
        assert!((dev[0] - eps).abs() < 1e-12);
        assert!(dev[1] <= 1e-12);
    }

    #[test]
    fn symmetrize_examples() {
        let g = grid(4);
        let sym = random_mixture(&g, 2, 9).marginal(2, Exec::default()).unwrap();
        assert!(sym.symmetry_residual(Exec::Sequential) < 1e-15);

        // a swapped-argument defect of size eps on one entry and its mirror
        let eps = 1e-3;
        let mut bad = sym.clone();
        let (x1, x2, y1, y2) = (0usize, 1usize, 2usize, 3usize);
        let idx = |a: usize, b: usize, c: usize, d: usize| (a * 4 + b) * 16 + c * 4 + d;
        bad.data_mut()[idx(x1, x2, y1, y2)] += Complex64::new(eps, 0.0);
        let out = bad.symmetrize(Exec::Parallel);
        assert!(out.symmetry_residual(Exec::Sequential) < 1e-15);
        assert!((out.max_abs_diff(&bad) - 0.75 * eps).abs() < 1e-12);

        // defect only in the unprimed swap: gamma(x1,x2;.) vs gamma(x2,x1;.)
        let mut swap = sym.clone();
        swap.data_mut()[idx(x1, x2, y1, y2)] += Complex64::new(eps / 2.0, 0.0);
        swap.data_mut()[idx(x2, x1, y1, y2)] -= Complex64::new(eps / 2.0, 0.0);
        swap.data_mut()[idx(x1, x2, y2, y1)] += Complex64::new(eps / 2.0, 0.0);
        swap.data_mut()[idx(x2, x1, y2, y1)] -= Complex64::new(eps / 2.0, 0.0);
        let out = swap.symmetrize(Exec::Sequential);
        assert!((out.max_abs_diff(&swap) - eps / 2.0).abs() < 1e-12);
        assert!(out.max_abs_diff(&sym) < 1e-15);
    }

    #[test]
    fn factorized_is_positive() {
        let g = grid(8);
        let phi = random_state(&g, 11, 1.0).unwrap();
        let g2 = factorized_marginal(&phi, 2, Exec::default()).unwrap();
        let min = g2.check_positive(1e-12).unwrap();
        assert!(min >= -1e-12);
        let top = *g2.eigenvalues().unwrap().last().unwrap();
        assert!((top - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_estimate_matches_full_eigensolver() {
        let g = grid(8);
        let mut m = DenseMarginal::random_psd(&g, 1, 3, 1).unwrap();
        m.data_mut()[0] -= Complex64::new(3.0, 0.0);
        let exact = m.min_eigenvalue().unwrap();
        let est = m.min_eigenvalue_estimate(2000, 3);
        assert!((exact - est).abs() < 1e-6 * exact.abs().max(1.0));
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        let g = Grid::new(1, 4, 1.3).unwrap();
        let m = DenseMarginal::random_psd(&g, 2, 2, 4).unwrap();
        m.write_snapshot(&path).unwrap();
        let back = DenseMarginal::read_snapshot(&path).unwrap();
        assert_eq!(back, m);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"GPH1");
        assert!(DenseMarginal::from_bytes(&bytes[..bytes.len() - 16]).is_err());
        assert!(DenseMarginal::from_bytes(b"GPH0").is_err());
    }

    #[test]
    fn adjoint_and_hermitize() {
        let g = grid(4);
        let mut m = DenseMarginal::random_psd(&g, 2, 2, 8).unwrap();
        assert!(m.hermiticity_residual() < 1e-15);
        m.data_mut()[1] += Complex64::new(0.0, 1e-3);
        assert!(m.hermiticity_residual() > 5e-4);
        assert!((m.adjoint().adjoint().max_abs_diff(&m)) == 0.0);
        m.hermitize();
        assert!(m.hermiticity_residual() < 1e-18);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn mixtures_admissible(seed in 0u64..500, comps in 1usize..4) {
                let g = grid(4);
                let mix = random_mixture(&g, comps, seed);
                for k in 1..3 {
                    let hi = mix.marginal(k + 1, Exec::default()).unwrap();
                    let lo = mix.marginal(k, Exec::default()).unwrap();
                    prop_assert!(hi.partial_trace(1).unwrap().max_abs_diff(&lo) < 1e-13);
                }
            }

            #[test]
            fn marginal_linear_in_mixture(seed in 0u64..500, t in 0.05f64..0.95) {
                let g = grid(4);
                let a = random_mixture(&g, 2, seed);
                let b = random_mixture(&g, 1, seed + 1000);
                let c = a.convex_combination(&b, t).unwrap();
                let mut want = a.marginal(2, Exec::default()).unwrap();
                want.scale(t);
                want.add_scaled(&b.marginal(2, Exec::default()).unwrap(), Complex64::new(1.0 - t, 0.0)).unwrap();
                prop_assert!(c.marginal(2, Exec::default()).unwrap().max_abs_diff(&want) < 1e-14);
            }

            #[test]
            fn positivity_survives_trace_and_symmetrize(seed in 0u64..500) {
                let g = grid(4);
                let m = DenseMarginal::random_psd(&g, 2, 2, seed).unwrap();
                prop_assert!(m.partial_trace(1).unwrap().min_eigenvalue().unwrap() >= -1e-12);
                prop_assert!(m.symmetrize(Exec::default()).min_eigenvalue().unwrap() >= -1e-12);
            }
        }
    }
}
