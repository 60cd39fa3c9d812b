//! Sobolev-type norms of marginals, the energy `E_1`, the higher-order
//! functionals `<K^(m)>`, their weighted series, the focusing `D` factor,
//! and the term-by-term cancellation diagnostics of the conservation law.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::contractions::{b_minus_dense, b_plus_dense, full_diagonal, k_p, kinetic_trace, reduce_last_block, ContractionSpec};
use crate::error::{GphError, Result};
use crate::exec::Exec;
use crate::grid::{bracket_symbol, cube_index, cube_symbol, reflect_symbol, FourierMultiplier, Grid};
use crate::nls::nls_energy;
use crate::state::{DenseMarginal, HierarchyTruncation, MixtureState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    HilbertSchmidt,
    Trace,
}

/// `S^(k,alpha) gamma S^(k,alpha)`: `<xi>^alpha` on every slot.
pub fn sobolev_weighted(gamma: &DenseMarginal, alpha: f64) -> Result<DenseMarginal> {
    let mut g = gamma.clone();
    if alpha != 0.0 {
        let slots: Vec<usize> = (0..2 * gamma.order()).collect();
        let mult = FourierMultiplier::identity(2 * gamma.order())
            .with_real_slots(&slots, &bracket_symbol(gamma.grid(), alpha))?;
        g.apply_multiplier(&mult)?;
    }
    Ok(g)
}

/// `(Tr |S gamma S|^2)^(1/2)`.
pub fn hs_sobolev_norm(gamma: &DenseMarginal, alpha: f64) -> Result<f64> {
    let g = sobolev_weighted(gamma, alpha)?;
    let s: f64 = g.data().iter().map(|v| v.norm_sqr()).sum();
    Ok(g.weight() * s.sqrt())
}

/// `Tr |S gamma S|`, the sum of singular values of the weighted matrix.
pub fn trace_sobolev_norm(gamma: &DenseMarginal, alpha: f64) -> Result<f64> {
    let side = gamma.side();
    if side > crate::state::FULL_EIGEN_MAX_SIDE {
        let entries = (side as u128) * (side as u128);
        return Err(GphError::Capacity {
            entries,
            required_bytes: entries * 16,
            cap: crate::state::FULL_EIGEN_MAX_SIDE * crate::state::FULL_EIGEN_MAX_SIDE,
        });
    }
    let g = sobolev_weighted(gamma, alpha)?;
    Ok(g.to_matrix().singular_values().iter().sum())
}

pub fn sobolev_norm(gamma: &DenseMarginal, alpha: f64, kind: NormKind) -> Result<f64> {
    match kind {
        NormKind::HilbertSchmidt => hs_sobolev_norm(gamma, alpha),
        NormKind::Trace => trace_sobolev_norm(gamma, alpha),
    }
}

/// Level-`k` norm of a mixture marginal from its components.
pub fn mixture_level_norm(state: &MixtureState, k: usize, alpha: f64, kind: NormKind) -> f64 {
    let comps = state.components();
    match kind {
        NormKind::Trace => comps
            .iter()
            .map(|(w, phi)| w * phi.bracket_norm_sq(alpha).powi(k as i32))
            .sum(),
        NormKind::HilbertSchmidt => {
            let grid = state.grid();
            let sym = bracket_symbol(grid, alpha);
            let coeffs: Vec<Vec<Complex64>> = comps
                .iter()
                .map(|(_, phi)| phi.coefficients().iter().zip(&sym).map(|(c, s)| c * s).collect())
                .collect();
            let mut total = 0.0;
            for (i, (wi, _)) in comps.iter().enumerate() {
                for (j, (wj, _)) in comps.iter().enumerate() {
                    let ip: Complex64 = coeffs[i].iter().zip(&coeffs[j]).map(|(a, b)| a.conj() * b).sum();
                    total += wi * wj * ip.norm_sqr().powi(k as i32);
                }
            }
            total.sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceNorm {
    pub value: f64,
    /// Bound on the omitted levels (zero for exact closed forms).
    pub tail_bound: f64,
    /// Number of levels summed explicitly (0 for closed forms).
    pub levels: usize,
}

/// `sum_k xi^k ||gamma^(k)||` for a mixture. Without `k_max` and with the
/// trace kind this is the closed form `sum_j mu_j xi s_j / (1 - xi s_j)`,
/// `s_j = ||<grad>^alpha phi_j||^2`.
pub fn xi_sequence_norm(
    state: &MixtureState,
    xi: f64,
    alpha: f64,
    kind: NormKind,
    k_max: Option<usize>,
) -> Result<SequenceNorm> {
    if !(xi > 0.0) {
        return Err(GphError::InvalidParameter(format!("xi = {xi} must be > 0")));
    }
    let ratios: Vec<f64> = state
        .components()
        .iter()
        .map(|(_, phi)| xi * phi.bracket_norm_sq(alpha))
        .collect();
    let divergent = ratios.iter().position(|&r| r >= 1.0 - 1e-12);
    // exact remainder of the trace series past level K; bounds the HS one too
    let trace_tail = |k: usize| -> f64 {
        state
            .components()
            .iter()
            .zip(&ratios)
            .map(|((w, _), r)| w * r.powi(k as i32 + 1) / (1.0 - r))
            .sum()
    };
    match (kind, k_max) {
        (NormKind::Trace, None) => {
            if let Some(j) = divergent {
                return Err(GphError::Divergence {
                    component: j,
                    ratio: ratios[j],
                });
            }
            let value = state
                .components()
                .iter()
                .zip(&ratios)
                .map(|((w, _), r)| w * r / (1.0 - r))
                .sum();
            Ok(SequenceNorm {
                value,
                tail_bound: 0.0,
                levels: 0,
            })
        }
        (_, k_max) => {
            let k_max = k_max.unwrap_or(200);
            let value = (1..=k_max)
                .map(|k| xi.powi(k as i32) * mixture_level_norm(state, k, alpha, kind))
                .sum();
            let tail_bound = match divergent {
                Some(j) if kind == NormKind::Trace => {
                    return Err(GphError::Divergence {
                        component: j,
                        ratio: ratios[j],
                    })
                }
                Some(_) => f64::INFINITY,
                None => trace_tail(k_max),
            };
            Ok(SequenceNorm {
                value,
                tail_bound,
                levels: k_max,
            })
        }
    }
}

/// Partial sum over the levels of a dense truncation; the tail is a
/// geometric estimate from the last two levels.
pub fn xi_sequence_norm_truncation(t: &HierarchyTruncation, xi: f64, alpha: f64, kind: NormKind) -> Result<SequenceNorm> {
    let terms = t
        .marginals
        .iter()
        .enumerate()
        .map(|(i, g)| Ok(xi.powi(i as i32 + 1) * sobolev_norm(g, alpha, kind)?))
        .collect::<Result<Vec<f64>>>()?;
    let value = terms.iter().sum();
    let tail_bound = match terms.len() {
        0 | 1 => f64::INFINITY,
        n => {
            let r = terms[n - 1] / terms[n - 2];
            if r < 1.0 {
                terms[n - 1] * r / (1.0 - r)
            } else {
                f64::INFINITY
            }
        }
    };
    Ok(SequenceNorm {
        value,
        tail_bound,
        levels: terms.len(),
    })
}

/// Average energy per particle `sum_j mu_j E_1(phi_j)`.
pub fn e1(state: &MixtureState, p: u32, mu: f64) -> f64 {
    state.components().iter().map(|(w, phi)| w * nls_energy(phi, p, mu)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyPath {
    LowRank,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub m: usize,
    pub value: f64,
    pub path: EnergyPath,
    pub t: f64,
}

/// `<K^(m)> = sum_j mu_j (1/2 + E_1(phi_j))^m`.
pub fn k_energy(state: &MixtureState, m: usize, p: u32, mu: f64) -> EnergyReport {
    let value = state
        .components()
        .iter()
        .map(|(w, phi)| w * (0.5 + nls_energy(phi, p, mu)).powi(m as i32))
        .sum();
    EnergyReport {
        m,
        value,
        path: EnergyPath::LowRank,
        t: 0.0,
    }
}

/// `<K^(m)>` from a dense order `m k_p` marginal, applying one `K` block at
/// a time and tracing it out.
pub fn k_energy_dense(gamma: &DenseMarginal, m: usize, p: u32, mu: f64) -> Result<EnergyReport> {
    let kp = k_p(p);
    if m == 0 || gamma.order() != m * kp {
        return Err(GphError::OrderMismatch(format!(
            "k_energy_dense with m = {m} needs order {}, got {}",
            m * kp,
            gamma.order()
        )));
    }
    let mut data = gamma.data().to_vec();
    let mut order = gamma.order();
    while order > 0 {
        data = reduce_last_block(gamma.grid(), &data, order, p, mu)?;
        order -= kp;
    }
    Ok(EnergyReport {
        m,
        value: data[0].re,
        path: EnergyPath::Dense,
        t: 0.0,
    })
}

/// Scale multiplying `xi` in the higher-order energy series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "d")]
pub enum SeriesScale {
    /// `2 xi`.
    TwoXi,
    /// `2 xi / D`, the scale under which the focusing lower bound closes.
    TwoXiOverD(f64),
    /// `2 D xi`.
    TwoDXi(f64),
}

impl SeriesScale {
    pub fn factor(&self, xi: f64) -> f64 {
        match *self {
            SeriesScale::TwoXi => 2.0 * xi,
            SeriesScale::TwoXiOverD(d) => 2.0 * xi / d,
            SeriesScale::TwoDXi(d) => 2.0 * d * xi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSeries {
    /// `(c xi)^m <K^(m)>` for `m = 1..=M_max`.
    pub terms: Vec<f64>,
    pub partial_sum: f64,
    /// Geometric estimate from the last term ratio.
    pub tail_estimate: f64,
    /// Exact remainder from the low-rank closed form.
    pub tail_exact: f64,
}

impl KSeries {
    /// Partial sum plus the exact remainder.
    pub fn total(&self) -> f64 {
        self.partial_sum + self.tail_exact
    }
}

/// `sum_{m >= 1} (c xi)^m <K^(m)>` with `c xi` given by `scale`.
pub fn k_series(state: &MixtureState, xi: f64, m_max: usize, p: u32, mu: f64, scale: SeriesScale) -> Result<KSeries> {
    if m_max < 2 {
        return Err(GphError::InvalidParameter("M_max must be >= 2".into()));
    }
    let c = scale.factor(xi);
    let bases: Vec<f64> = state
        .components()
        .iter()
        .map(|(_, phi)| c * (0.5 + nls_energy(phi, p, mu)))
        .collect();
    if let Some(j) = bases.iter().position(|&a| a.abs() >= 1.0 || !a.is_finite()) {
        return Err(GphError::Divergence {
            component: j,
            ratio: bases[j],
        });
    }
    let terms: Vec<f64> = (1..=m_max)
        .map(|m| {
            state
                .components()
                .iter()
                .zip(&bases)
                .map(|((w, _), a)| w * a.powi(m as i32))
                .sum()
        })
        .collect();
    let partial_sum = terms.iter().sum();
    let r = terms[m_max - 1] / terms[m_max - 2];
    let tail_estimate = if r.abs() < 1.0 {
        terms[m_max - 1] * r / (1.0 - r)
    } else {
        f64::INFINITY
    };
    let tail_exact = state
        .components()
        .iter()
        .zip(&bases)
        .map(|((w, _), a)| w * a.powi(m_max as i32 + 1) / (1.0 - a))
        .sum();
    Ok(KSeries {
        terms,
        partial_sum,
        tail_estimate,
        tail_exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DFactor {
    pub d: f64,
    /// `|mu|` must stay below this for `D > 0`.
    pub mu_threshold: f64,
    /// Set when `alpha <= alpha_0`, where the Sobolev constant is not
    /// guaranteed to exist.
    pub below_alpha0: bool,
}

/// `D = 1 - |mu| C_0 / (1 - 4^-(1 - alpha k_p))`.
pub fn d_factor(alpha: f64, p: u32, dim: usize, mu: f64, c0: f64) -> Result<DFactor> {
    let kp = k_p(p) as f64;
    if alpha * kp >= 1.0 {
        return Err(GphError::OutOfRegime(format!(
            "alpha k_p = {} must be < 1 for the L2-subcritical focusing bound",
            alpha * kp
        )));
    }
    if !(c0 > 0.0) {
        return Err(GphError::InvalidParameter(format!("C_0 = {c0} must be > 0")));
    }
    let alpha0 = (kp - 1.0) * dim as f64 / (2.0 * kp);
    let gap = 1.0 - 4f64.powf(-(1.0 - alpha * kp));
    Ok(DFactor {
        d: 1.0 - mu.abs() * c0 / gap,
        mu_threshold: gap / c0,
        below_alpha0: alpha <= alpha0,
    })
}

/// How `xi` is obtained from `xi'` in the a priori bound chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiRule {
    /// `xi = (1 + 2 C / (p+2))^(-1/k_p) xi'`.
    AsStated,
    /// `xi = xi'^(k_p) / (1 + 2 C / (p+2))`: compares `m`-th series terms
    /// with the level-`m k_p` terms of the sequence norm. Never larger than
    /// [`XiRule::AsStated`].
    ProofConsistent,
}

/// `xi` for a given `xi'`, measured Sobolev constant and `D` (1 when defocusing).
pub fn xi_from_xi_prime(xi_prime: f64, c_sob: f64, p: u32, d: f64, rule: XiRule) -> f64 {
    let base = 1.0 + 2.0 * c_sob / (p as f64 + 2.0);
    let kp = k_p(p) as f64;
    match rule {
        XiRule::AsStated => base.powf(-1.0 / kp) * xi_prime / d,
        XiRule::ProofConsistent => d * xi_prime.powf(kp) / base,
    }
}

/// The four traces of the conservation proof, each split into its `+` and
/// `-` constituents.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CancellationTerms {
    pub a_h1: [Complex64; 2],
    pub a_b1: [Complex64; 2],
    pub a_h2: [Complex64; 2],
    pub a_b2: [Complex64; 2],
    pub mu: f64,
}

fn diff(t: [Complex64; 2]) -> Complex64 {
    t[0] - t[1]
}

impl CancellationTerms {
    pub fn a_h1(&self) -> Complex64 {
        diff(self.a_h1)
    }
    pub fn a_b1(&self) -> Complex64 {
        diff(self.a_b1)
    }
    pub fn a_h2(&self) -> Complex64 {
        diff(self.a_h2)
    }
    pub fn a_b2(&self) -> Complex64 {
        diff(self.a_b2)
    }

    /// `|A_h1|`, `|A_h2 + mu A_b1|`, `|A_b2|`.
    pub fn residuals(&self) -> [f64; 3] {
        [
            self.a_h1().norm(),
            (self.a_h2() + self.a_b1() * self.mu).norm(),
            self.a_b2().norm(),
        ]
    }

    /// Largest constituent magnitude entering each residual.
    pub fn scales(&self) -> [f64; 3] {
        let m = |v: &[Complex64]| v.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mu_b1 = [self.a_b1[0] * self.mu, self.a_b1[1] * self.mu];
        [
            m(&self.a_h1),
            m(&[self.a_h2[0], self.a_h2[1], mu_b1[0], mu_b1[1]]),
            m(&self.a_b2),
        ]
    }

    /// Residuals divided by their scales (0 when every constituent vanishes).
    pub fn relative_residuals(&self) -> [f64; 3] {
        let r = self.residuals();
        let s = self.scales();
        std::array::from_fn(|i| if s[i] > 0.0 { r[i] / s[i] } else { r[i] })
    }

    fn add(&mut self, o: &CancellationTerms) {
        for (a, b) in [
            (&mut self.a_h1, &o.a_h1),
            (&mut self.a_b1, &o.a_b1),
            (&mut self.a_h2, &o.a_h2),
            (&mut self.a_b2, &o.a_b2),
        ] {
            a[0] += b[0];
            a[1] += b[1];
        }
    }
}

/// Multiply by `sum_{s in slots} sym(xi_s)` in Fourier space.
fn apply_slot_sum(grid: &Grid, data: &mut [Complex64], order: usize, slots: &[usize], sym: &[f64]) -> Result<()> {
    grid.forward_slots(data, order, slots)?;
    let m = grid.slot_size();
    let strides: Vec<usize> = slots.iter().map(|&s| m.pow((order - 1 - s) as u32)).collect();
    for (i, v) in data.iter_mut().enumerate() {
        let f: f64 = strides.iter().map(|st| sym[(i / st) % m]).sum();
        *v *= f;
    }
    grid.inverse_slots(data, order, slots)
}

fn terms_unchecked(g_kp: &DenseMarginal, g_big: &DenseMarginal, p: u32, mu: f64, exec: Exec) -> Result<CancellationTerms> {
    let kp = k_p(p);
    if g_kp.order() != kp || g_big.order() != 2 * kp - 1 {
        return Err(GphError::OrderMismatch(format!(
            "cancellation terms need orders {kp} and {}, got {} and {}",
            2 * kp - 1,
            g_kp.order(),
            g_big.order()
        )));
    }
    let grid = g_kp.grid();
    let lap = grid.freq_sq();
    let coupling = mu / (p as f64 + 2.0);
    let mut out = CancellationTerms {
        mu,
        ..Default::default()
    };
    let unprimed: Vec<usize> = (0..kp).collect();
    let primed: Vec<usize> = (kp..2 * kp).collect();
    for (idx, slots) in [unprimed, primed].iter().enumerate() {
        let mut h = g_kp.clone();
        apply_slot_sum(grid, h.data_mut(), 2 * kp, slots, &lap)?;
        out.a_h1[idx] = kinetic_trace(&h)? * 0.5;
        out.a_h2[idx] = full_diagonal(&h) * coupling;
    }
    for j in 1..=kp {
        let spec = ContractionSpec::new(p, j, kp)?;
        for (idx, b) in [b_plus_dense(g_big, spec, exec)?, b_minus_dense(g_big, spec, exec)?]
            .iter()
            .enumerate()
        {
            out.a_b1[idx] += kinetic_trace(b)? * 0.5;
            out.a_b2[idx] += full_diagonal(b) * coupling;
        }
    }
    Ok(out)
}

/// Global traces `A_h1, A_b1, A_h2, A_b2` for `gamma^(k_p)` and
/// `gamma^(2 k_p - 1)`. Rejects inputs that are not bosonic-symmetric.
pub fn cancellation_terms(
    g_kp: &DenseMarginal,
    g_big: &DenseMarginal,
    p: u32,
    mu: f64,
    exec: Exec,
) -> Result<CancellationTerms> {
    for g in [g_kp, g_big] {
        let res = g.symmetry_residual(exec);
        if res > 1e-10 * g.max_abs().max(1e-300) {
            return Err(GphError::Asymmetric(res));
        }
    }
    terms_unchecked(g_kp, g_big, p, mu, exec)
}

/// Cube projector `P_{Q_r, Q_r'}` on an order-`q` marginal: `r` and `r'`
/// hold `q` cube indices per axis, flattened slot-major.
pub fn cube_project(gamma: &DenseMarginal, r: &[[i64; 2]], r_prime: &[[i64; 2]], side: f64) -> Result<DenseMarginal> {
    let k = gamma.order();
    if r.len() != k || r_prime.len() != k {
        return Err(GphError::OrderMismatch(format!("cube indices for {k} variables expected")));
    }
    let grid = gamma.grid();
    let mut mult = FourierMultiplier::identity(2 * k);
    for s in 0..k {
        mult = mult.with_real_slot(s, &cube_symbol(grid, &r[s], side))?;
        // primed variables carry the conjugate frequency in this transform convention
        mult = mult.with_real_slot(k + s, &reflect_symbol(grid, &cube_symbol(grid, &r_prime[s], side)))?;
    }
    let mut g = gamma.clone();
    g.apply_multiplier(&mult)?;
    Ok(g)
}

/// The four traces evaluated on `P_{Q_r, Q_r'} gamma^(2 k_p - 1)` and its
/// partial trace. Cube projections need not preserve bosonic symmetry, so no
/// symmetry check is made here.
pub fn cube_restricted_terms(
    g_big: &DenseMarginal,
    r: &[[i64; 2]],
    r_prime: &[[i64; 2]],
    side: f64,
    p: u32,
    mu: f64,
    exec: Exec,
) -> Result<CancellationTerms> {
    let projected = cube_project(g_big, r, r_prime, side)?;
    let g_kp = projected.partial_trace(k_p(p) - 1)?;
    terms_unchecked(&g_kp, &projected, p, mu, exec)
}

/// Distinct cube indices met by the grid's frequencies.
pub fn occupied_cubes(grid: &Grid, side: f64) -> Vec<[i64; 2]> {
    let mut v: Vec<[i64; 2]> = (0..grid.slot_size()).map(|s| cube_index(grid, s, side)).collect();
    v.sort();
    v.dedup();
    v
}

/// Sum of [`cube_restricted_terms`] over every pair of occupied cube tuples.
pub fn cube_sum_terms(g_big: &DenseMarginal, side: f64, p: u32, mu: f64, exec: Exec) -> Result<CancellationTerms> {
    let cubes = occupied_cubes(g_big.grid(), side);
    let q = g_big.order();
    let tuples = cartesian(&cubes, q);
    let mut total = CancellationTerms {
        mu,
        ..Default::default()
    };
    for r in &tuples {
        for rp in &tuples {
            total.add(&cube_restricted_terms(g_big, r, rp, side, p, mu, exec)?);
        }
    }
    Ok(total)
}

fn cartesian(items: &[[i64; 2]], q: usize) -> Vec<Vec<[i64; 2]>> {
    let mut out = vec![Vec::new()];
    for _ in 0..q {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                items.iter().map(move |it| {
                    let mut v = prefix.clone();
                    v.push(*it);
                    v
                })
            })
            .collect();
    }
    out
}
