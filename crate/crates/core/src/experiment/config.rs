use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contractions::k_p;
use crate::error::{GphError, Result};
use crate::functionals::XiRule;
use crate::grid::Grid;
use crate::nls::{gaussian, plane_wave, random_state};
use crate::state::{check_capacity, MixtureState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Nls,
    Conserve,
    Hierarchy,
    Sobolev,
    Gn,
    Dmgn,
    Chain,
    Cancel,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Nls,
        ExperimentKind::Conserve,
        ExperimentKind::Hierarchy,
        ExperimentKind::Sobolev,
        ExperimentKind::Gn,
        ExperimentKind::Dmgn,
        ExperimentKind::Chain,
        ExperimentKind::Cancel,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Nls => "nls",
            ExperimentKind::Conserve => "conserve",
            ExperimentKind::Hierarchy => "hierarchy",
            ExperimentKind::Sobolev => "sobolev",
            ExperimentKind::Gn => "gn",
            ExperimentKind::Dmgn => "dmgn",
            ExperimentKind::Chain => "chain",
            ExperimentKind::Cancel => "cancel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            d: 1,
            n: 64,
            length: 2.0 * PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosureKind {
    Zero,
    Oracle,
}

/// Series scale in the focusing chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusingScale {
    /// `2 xi / D`.
    OverD,
    /// `2 D xi`.
    TimesD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub p: u32,
    pub mu: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Truncation depth of the hierarchy.
    #[serde(rename = "K")]
    pub depth: usize,
    /// Explicit `xi`; derived from `xi_prime` by `xi_rule` when absent.
    pub xi: Option<f64>,
    pub xi_prime: f64,
    pub xi_rule: XiRule,
    pub focusing_scale: FocusingScale,
    pub alpha: Vec<f64>,
    #[serde(rename = "M_max")]
    pub m_max: usize,
    /// Steps between recorded snapshots.
    pub record_every: usize,
    pub closure: ClosureKind,
    /// Number of random inputs for the cancellation experiment.
    pub cancel_inputs: usize,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig {
            p: 2,
            mu: 1.0,
            dt: 1e-3,
            t_final: 1.0,
            depth: 2,
            xi: None,
            xi_prime: 0.4,
            xi_rule: XiRule::ProofConsistent,
            focusing_scale: FocusingScale::OverD,
            alpha: vec![0.3, 0.5, 0.75, 1.0],
            m_max: 8,
            record_every: 100,
            closure: ClosureKind::Oracle,
            cancel_inputs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateConfig {
    PlaneWave { mode: [i64; 2] },
    Gaussian { center: [f64; 2], width: f64 },
    /// Seeded by the run seed plus `seed`.
    Random { seed: u64, decay: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub weight: f64,
    pub state: StateConfig,
}

fn default_mixture() -> Vec<ComponentConfig> {
    [(0.5, PI, 0.8), (0.3, 2.0, 1.0), (0.2, 4.5, 1.2)]
        .into_iter()
        .map(|(weight, c, width)| ComponentConfig {
            weight,
            state: StateConfig::Gaussian {
                center: [c, 0.0],
                width,
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Argument count; `k_p` when absent.
    pub q: Option<usize>,
    pub decay: f64,
    pub count: usize,
    /// Points per axis of the sampling grid.
    pub n: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            q: None,
            decay: 2.0,
            count: 1000,
            n: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub grid: GridConfig,
    pub params: ParamsConfig,
    pub mixture: Vec<ComponentConfig>,
    pub sampling: SamplingConfig,
    pub output: Option<String>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            grid: GridConfig::default(),
            params: ParamsConfig::default(),
            mixture: default_mixture(),
            sampling: SamplingConfig::default(),
            output: None,
            seed: 0,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> GphError {
    GphError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GphError::ConfigParse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.d, self.grid.n, self.grid.length).map_err(|e| invalid("grid", e.to_string()))
    }

    pub fn sampling_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.d, self.sampling.n, self.grid.length).map_err(|e| invalid("sampling.n", e.to_string()))
    }

    pub fn sampling_q(&self) -> usize {
        self.sampling.q.unwrap_or_else(|| k_p(self.params.p))
    }

    /// The initial mixture; weights are normalized.
    pub fn mixture_state(&self) -> Result<MixtureState> {
        let grid = self.grid()?;
        let comps = self
            .mixture
            .iter()
            .map(|c| {
                let phi = match c.state {
                    StateConfig::PlaneWave { mode } => plane_wave(&grid, mode),
                    StateConfig::Gaussian { center, width } => gaussian(&grid, center, width),
                    StateConfig::Random { seed, decay } => random_state(&grid, self.seed.wrapping_add(seed), decay),
                }
                .map_err(|e| invalid("mixture", e.to_string()))?;
                Ok((c.weight, phi))
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureState::from_unnormalized(comps).map_err(|e| invalid("mixture", e.to_string()))
    }

    /// Checks the preconditions of the experiment this config runs.
    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        let grid = self.grid()?;
        let pr = &self.params;
        if pr.p != 2 && pr.p != 4 {
            return Err(invalid("params.p", format!("p = {} must be 2 or 4", pr.p)));
        }
        if !(pr.dt.is_finite() && pr.dt > 0.0) {
            return Err(invalid("params.dt", format!("dt = {} must be positive", pr.dt)));
        }
        if !(pr.t_final.is_finite() && pr.t_final >= 0.0) {
            return Err(invalid("params.T", format!("T = {} must be >= 0", pr.t_final)));
        }
        if pr.record_every == 0 {
            return Err(invalid("params.record_every", "must be >= 1"));
        }
        if pr.m_max < 2 {
            return Err(invalid("params.M_max", format!("M_max = {} must be >= 2", pr.m_max)));
        }
        if pr.alpha.is_empty() || pr.alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(invalid("params.alpha", "needs at least one positive value"));
        }
        if self.mixture.is_empty() {
            return Err(invalid("mixture", "needs at least one component"));
        }
        if self.mixture.iter().any(|c| !(c.weight > 0.0)) {
            return Err(invalid("mixture", "weights must be positive"));
        }
        self.mixture_state()?;
        let kp = k_p(pr.p);
        match kind {
            ExperimentKind::Hierarchy => {
                if pr.depth == 0 {
                    return Err(invalid("params.K", "truncation depth must be >= 1"));
                }
                check_capacity(&grid, pr.depth).map_err(|e| invalid("params.K", e.to_string()))?;
            }
            ExperimentKind::Cancel => {
                check_capacity(&grid, 2 * kp - 1).map_err(|e| invalid("grid.n", e.to_string()))?;
                if pr.cancel_inputs == 0 {
                    return Err(invalid("params.cancel_inputs", "must be >= 1"));
                }
            }
            ExperimentKind::Sobolev | ExperimentKind::Gn | ExperimentKind::Chain => {
                let q = self.sampling_q();
                if !(2..=3).contains(&q) {
                    return Err(invalid("sampling.q", format!("q = {q} must be 2 or 3")));
                }
                if self.grid.d == 2 && q != 2 {
                    return Err(invalid("sampling.q", "d = 2 supports q = 2 only"));
                }
                if !(self.sampling.decay > self.grid.d as f64 / 2.0) {
                    return Err(invalid("sampling.decay", format!("decay must exceed d/2 = {}", self.grid.d as f64 / 2.0)));
                }
                if self.sampling.count == 0 {
                    return Err(invalid("sampling.count", "must be >= 1"));
                }
                let sg = self.sampling_grid()?;
                check_capacity(&sg, q.div_ceil(2)).map_err(|e| invalid("sampling.n", e.to_string()))?;
            }
            _ => {}
        }
        if kind == ExperimentKind::Chain {
            if !(pr.xi_prime > 0.0 && pr.xi_prime < 1.0) {
                return Err(invalid("params.xi_prime", "must lie in (0, 1)"));
            }
            if let Some(xi) = pr.xi {
                if !(xi > 0.0 && xi < pr.xi_prime) {
                    return Err(invalid("params.xi", "must lie in (0, xi_prime)"));
                }
            }
            if pr.mu < 0.0 {
                if pr.p as f64 >= 4.0 / self.grid.d as f64 {
                    return Err(invalid(
                        "params.p",
                        format!("focusing chain needs the L2-subcritical range p < 4/d, got p = {}", pr.p),
                    ));
                }
                let a = pr.alpha[0];
                if a * kp as f64 >= 1.0 {
                    return Err(invalid(
                        "params.alpha",
                        format!("alpha k_p = {} must be < 1 in the focusing L2-subcritical regime", a * kp as f64),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Reads and parses a config file; a missing or malformed file is a parse error.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| GphError::ConfigParse(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}
