//! Config-driven experiment runs that write CSV/JSON results and a manifest.

mod config;
mod run;

pub use config::{
    parse_config, ClosureKind, ComponentConfig, ExperimentConfig, ExperimentKind, FocusingScale, GridConfig,
    ParamsConfig, SamplingConfig, StateConfig,
};
pub use run::{cancel_input, run, FileEntry, RunManifest};

/// Column layout of every file an experiment writes.
pub const CSV_SCHEMAS: &str = "\
nls        nls.csv            t,component,mass,energy,energy_drift,max_abs
conserve   kseries.csv        t,m,K_m,rel_drift
hierarchy  diagnostics.csv    t,level,trace,herm_residual,admiss_residual,min_eig
           oracle_error.csv   t,level,err_inf
           gamma<k>.gph       final marginal snapshots (binary)
sobolev    ratios.csv         experiment,alpha,sample,lhs,rhs,ratio,out_of_regime
           fit.csv            alpha,eps,C_hat,n_samples,slope
gn         ratios.csv, fit.csv as for sobolev
dmgn       dmgn.csv           state,alpha,lhs,rhs,ratio,out_of_regime
chain      chain.csv          t,first,middle,last,slack_first,slack_last,middle_drift,in_domain
           lpchain.csv        t,sobolev_trace,dyadic_sum,dyadic_bound,energy,energy_lower,holds (focusing only)
           constants.json     measured constants, D, xi, scale
cancel     cancel.csv         input,mu,a_h1,a_h2_plus_mu_a_b1,a_b2,rel_h1,rel_h2_b1,rel_b2
every run  manifest.json      config hash, version, timestamps, per-file sha256";
