use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ClosureKind, ExperimentConfig, ExperimentKind, FocusingScale};
use crate::contractions::k_p;
use crate::error::{GphError, Result};
use crate::exec::Exec;
use crate::functionals::{cancellation_terms, d_factor, k_energy, xi_from_xi_prime, SeriesScale};
use crate::hierarchy::hierarchy_evolve;
use crate::inequality::{
    alpha0, bound_chain_check, dm_gn_check_mixture, empirical_constants, fit_slope, freq_restriction_chain,
    sample_ratios, squared_constant, RatioKind, Regime, SampleSpec,
};
use crate::nls::{evolve, nls_energy, random_state, NlsParams};
use crate::state::{evolve_mixture, HierarchyTruncation, MixtureState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_sha256: String,
    pub code_version: String,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<FileEntry>,
    /// Set when the run stopped early; the files listed are the ones written before.
    pub error: Option<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(FileEntry {
            name: name.into(),
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(bytes)),
        });
        Ok(())
    }

    fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| GphError::Io(std::io::Error::other(e)))?;
        }
        let bytes = w.into_inner().map_err(|e| GphError::Io(std::io::Error::other(e.to_string())))?;
        self.write_bytes(name, &bytes)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("serializable");
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }
}

/// Validates `config` for `kind`, runs it and writes the data files plus
/// `manifest.json` into `out`. On a numerical failure the files written so
/// far are kept and listed in the manifest together with the error.
pub fn run(config: &ExperimentConfig, kind: ExperimentKind, out: &Path) -> Result<RunManifest> {
    config.validate(kind)?;
    fs::create_dir_all(out)?;
    let started = now();
    let mut outputs = Outputs {
        dir: out.to_path_buf(),
        files: Vec::new(),
    };
    let result = dispatch(config, kind, &mut outputs);
    let manifest = RunManifest {
        experiment: kind.name().into(),
        config_sha256: hex(&Sha256::digest(config.to_json().as_bytes())),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        started_unix: started,
        finished_unix: now(),
        files: outputs.files.clone(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let mut s = serde_json::to_string_pretty(&manifest).expect("serializable");
    s.push('\n');
    fs::write(out.join("manifest.json"), s)?;
    result.map(|_| manifest)
}

fn dispatch(cfg: &ExperimentConfig, kind: ExperimentKind, out: &mut Outputs) -> Result<()> {
    match kind {
        ExperimentKind::Nls => run_nls(cfg, out),
        ExperimentKind::Conserve => run_conserve(cfg, out),
        ExperimentKind::Hierarchy => run_hierarchy(cfg, out),
        ExperimentKind::Sobolev => run_ratios(cfg, out, RatioKind::Sobolev),
        ExperimentKind::Gn => run_ratios(cfg, out, RatioKind::GagliardoNirenberg),
        ExperimentKind::Dmgn => run_dmgn(cfg, out),
        ExperimentKind::Chain => run_chain(cfg, out),
        ExperimentKind::Cancel => run_cancel(cfg, out),
    }
}

fn nls_params(cfg: &ExperimentConfig, t_final: f64) -> Result<NlsParams> {
    NlsParams::new(cfg.params.p, cfg.params.mu, cfg.params.dt, t_final)
}

#[derive(Serialize)]
struct NlsRow {
    t: f64,
    component: usize,
    mass: f64,
    energy: f64,
    energy_drift: f64,
    max_abs: f64,
}

fn run_nls(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let state = cfg.mixture_state()?;
    let params = nls_params(cfg, cfg.params.t_final)?;
    let mut rows = Vec::new();
    let mut failure = None;
    for (j, (_, phi)) in state.components().iter().enumerate() {
        let e0 = nls_energy(phi, params.p, params.mu);
        match evolve(phi, &params, cfg.params.record_every) {
            Ok(traj) => {
                for (t, psi) in traj.times.iter().zip(&traj.states) {
                    let e = nls_energy(psi, params.p, params.mu);
                    rows.push(NlsRow {
                        t: *t,
                        component: j,
                        mass: psi.mass(),
                        energy: e,
                        energy_drift: ((e - e0) / e0).abs(),
                        max_abs: psi.max_abs(),
                    });
                }
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    out.write_csv("nls.csv", &rows)?;
    failure.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct KRow {
    t: f64,
    m: usize,
    #[serde(rename = "K_m")]
    k_m: f64,
    rel_drift: f64,
}

fn run_conserve(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let state = cfg.mixture_state()?;
    let pr = &cfg.params;
    let traj = evolve_mixture(&state, &nls_params(cfg, pr.t_final)?, pr.record_every, Exec::default())?;
    let base: Vec<f64> = (1..=pr.m_max).map(|m| k_energy(&state, m, pr.p, pr.mu).value).collect();
    let mut rows = Vec::new();
    for (t, s) in traj.times.iter().zip(&traj.states) {
        for m in 1..=pr.m_max {
            let k = k_energy(s, m, pr.p, pr.mu).value;
            rows.push(KRow {
                t: *t,
                m,
                k_m: k,
                rel_drift: ((k - base[m - 1]) / base[m - 1]).abs(),
            });
        }
    }
    out.write_csv("kseries.csv", &rows)
}

#[derive(Serialize)]
struct OracleRow {
    t: f64,
    level: usize,
    err_inf: f64,
}

fn run_hierarchy(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let state = cfg.mixture_state()?;
    let pr = &cfg.params;
    let exec = Exec::default();
    let t0 = HierarchyTruncation::from_mixture(&state, pr.depth, pr.p, pr.mu, pr.closure == ClosureKind::Oracle, exec)?;
    let run = hierarchy_evolve(&t0, pr.dt, pr.t_final, pr.record_every, exec)?;
    out.write_csv("diagnostics.csv", &run.diagnostics)?;
    let reference = evolve_mixture(&state, &nls_params(cfg, pr.t_final)?, pr.record_every, exec)?;
    let mut rows = Vec::new();
    for ((t, snap), m) in run.times.iter().zip(&run.snapshots).zip(&reference.states) {
        for k in 1..=snap.depth() {
            rows.push(OracleRow {
                t: *t,
                level: k,
                err_inf: snap.level(k).max_abs_diff(&m.marginal(k, exec)?),
            });
        }
    }
    out.write_csv("oracle_error.csv", &rows)?;
    for (k, g) in run.last().marginals.iter().enumerate() {
        out.write_bytes(&format!("gamma{}.gph", k + 1), &g.to_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RatioRow<'a> {
    experiment: &'a str,
    alpha: f64,
    sample: usize,
    lhs: f64,
    rhs: f64,
    ratio: f64,
    out_of_regime: bool,
}

#[derive(Serialize)]
struct FitRow {
    alpha: f64,
    eps: f64,
    #[serde(rename = "C_hat")]
    c_hat: f64,
    n_samples: usize,
    slope: f64,
}

fn sample_spec(cfg: &ExperimentConfig) -> SampleSpec {
    SampleSpec {
        q: cfg.sampling_q(),
        decay: cfg.sampling.decay,
        seed: cfg.seed,
        count: cfg.sampling.count,
    }
}

fn run_ratios(cfg: &ExperimentConfig, out: &mut Outputs, kind: RatioKind) -> Result<()> {
    let grid = cfg.sampling_grid()?;
    let spec = sample_spec(cfg);
    let name = match kind {
        RatioKind::Sobolev => "sobolev",
        RatioKind::GagliardoNirenberg => "gn",
    };
    let records = sample_ratios(&spec, &grid, &cfg.params.alpha, kind, Exec::default())?;
    let rows: Vec<RatioRow> = records
        .iter()
        .map(|r| RatioRow {
            experiment: name,
            alpha: r.alpha,
            sample: r.sample,
            lhs: r.lhs,
            rhs: r.rhs,
            ratio: r.ratio,
            out_of_regime: r.out_of_regime,
        })
        .collect();
    out.write_csv("ratios.csv", &rows)?;
    let consts = empirical_constants(&records, spec.q, grid.dim());
    let a0 = alpha0(spec.q, grid.dim());
    let fitted: Vec<_> = consts.iter().filter(|c| c.alpha > a0).collect();
    let x: Vec<f64> = fitted.iter().map(|c| c.eps.ln()).collect();
    let y: Vec<f64> = fitted.iter().map(|c| c.c_hat.ln()).collect();
    let slope = fit_slope(&x, &y).unwrap_or(f64::NAN);
    let fit: Vec<FitRow> = consts
        .iter()
        .map(|c| FitRow {
            alpha: c.alpha,
            eps: c.eps,
            c_hat: c.c_hat,
            n_samples: c.n_samples,
            slope,
        })
        .collect();
    out.write_csv("fit.csv", &fit)
}

#[derive(Serialize)]
struct DmRow {
    state: String,
    alpha: f64,
    lhs: f64,
    rhs: f64,
    ratio: f64,
    out_of_regime: bool,
}

fn run_dmgn(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let state = cfg.mixture_state()?;
    let mut rows = Vec::new();
    let mut targets: Vec<(String, MixtureState)> = state
        .components()
        .iter()
        .enumerate()
        .map(|(j, (_, phi))| Ok((format!("component{j}"), MixtureState::pure(phi.clone())?)))
        .collect::<Result<_>>()?;
    targets.push(("mixture".into(), state));
    for (name, s) in &targets {
        for &a in &cfg.params.alpha {
            let r = dm_gn_check_mixture(s, a, cfg.params.p);
            rows.push(DmRow {
                state: name.clone(),
                alpha: a,
                lhs: r.lhs,
                rhs: r.rhs,
                ratio: r.ratio,
                out_of_regime: r.out_of_regime,
            });
        }
    }
    out.write_csv("dmgn.csv", &rows)
}

#[derive(Serialize)]
struct ChainConstants {
    regime: Regime,
    c_sob: f64,
    c0: Option<f64>,
    alpha: Option<f64>,
    d: f64,
    mu_threshold: Option<f64>,
    xi: f64,
    xi_prime: f64,
    scale: SeriesScale,
    sample_count: usize,
    sample_decay: f64,
    holds: bool,
    max_middle_drift: f64,
}

#[derive(Serialize)]
struct LpRow {
    t: f64,
    sobolev_trace: f64,
    dyadic_sum: f64,
    dyadic_bound: f64,
    energy: f64,
    energy_lower: f64,
    holds: bool,
}

fn run_chain(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let pr = &cfg.params;
    let exec = Exec::default();
    let state = cfg.mixture_state()?;
    let sgrid = cfg.sampling_grid()?;
    let spec = sample_spec(cfg);
    let c_sob = squared_constant(&spec, &sgrid, 1.0, exec)?;
    let focusing = pr.mu < 0.0;
    let (regime, d, c0, alpha, thr) = if focusing {
        let a = pr.alpha[0];
        let c0 = squared_constant(&spec, &sgrid, a, exec)?;
        let df = d_factor(a, pr.p, cfg.grid.d, pr.mu, c0)?;
        (Regime::FocusingL2Subcritical, df.d, Some(c0), Some(a), Some(df.mu_threshold))
    } else {
        (Regime::Defocusing, 1.0, None, None, None)
    };
    if !(d > 0.0) {
        return Err(GphError::OutOfRegime(format!("D = {d} <= 0: |mu| above the threshold")));
    }
    let xi = pr.xi.unwrap_or_else(|| xi_from_xi_prime(pr.xi_prime, c_sob, pr.p, d, pr.xi_rule));
    let scale = match (focusing, pr.focusing_scale) {
        (false, _) => SeriesScale::TwoXi,
        (true, FocusingScale::OverD) => SeriesScale::TwoXiOverD(d),
        (true, FocusingScale::TimesD) => SeriesScale::TwoDXi(d),
    };
    let traj = evolve_mixture(&state, &nls_params(cfg, pr.t_final)?, pr.record_every, exec)?;
    let rep = bound_chain_check(&traj, xi, pr.xi_prime, pr.p, pr.mu, regime, scale, pr.m_max)?;
    out.write_csv("chain.csv", &rep.rows)?;
    if let Some(a) = alpha {
        let mut rows = Vec::new();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let r = freq_restriction_chain(s, a, pr.p, pr.mu, d)?;
            rows.push(LpRow {
                t: *t,
                sobolev_trace: r.sobolev_trace,
                dyadic_sum: r.dyadic_sum(),
                dyadic_bound: r.dyadic_bound,
                energy: r.energy,
                energy_lower: r.energy_lower,
                holds: r.holds().iter().all(|&b| b),
            });
        }
        out.write_csv("lpchain.csv", &rows)?;
    }
    out.write_json(
        "constants.json",
        &ChainConstants {
            regime,
            c_sob,
            c0,
            alpha,
            d,
            mu_threshold: thr,
            xi,
            xi_prime: pr.xi_prime,
            scale,
            sample_count: spec.count,
            sample_decay: spec.decay,
            holds: rep.holds(),
            max_middle_drift: rep.max_middle_drift(),
        },
    )
}

#[derive(Serialize)]
struct CancelRow {
    input: usize,
    mu: f64,
    a_h1: f64,
    a_h2_plus_mu_a_b1: f64,
    a_b2: f64,
    rel_h1: f64,
    rel_h2_b1: f64,
    rel_b2: f64,
}

/// Seeded admissible symmetric input: a mixture of one to three random states.
pub fn cancel_input(grid: &crate::grid::Grid, seed: u64, index: usize) -> Result<MixtureState> {
    let comps = (0..1 + index % 3)
        .map(|j| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add((index * 7 + j) as u64);
            Ok((1.0 + j as f64, random_state(grid, s, 1.0)?))
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureState::from_unnormalized(comps)
}

fn run_cancel(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let grid = cfg.grid()?;
    let pr = &cfg.params;
    let kp = k_p(pr.p);
    let exec = Exec::default();
    let mut rows = Vec::new();
    for i in 0..pr.cancel_inputs {
        let m = cancel_input(&grid, cfg.seed, i)?;
        let t = cancellation_terms(&m.marginal(kp, exec)?, &m.marginal(2 * kp - 1, exec)?, pr.p, pr.mu, exec)?;
        let r = t.residuals();
        let rel = t.relative_residuals();
        rows.push(CancelRow {
            input: i,
            mu: pr.mu,
            a_h1: r[0],
            a_h2_plus_mu_a_b1: r[1],
            a_b2: r[2],
            rel_h1: rel[0],
            rel_h2_b1: rel[1],
            rel_b2: rel[2],
        });
    }
    out.write_csv("cancel.csv", &rows)
}
