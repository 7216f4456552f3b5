//! The experiment implementations behind each subcommand.
//!
//! Every experiment writes CSV artifacts through [`Artifacts`] so that a
//! failed run can remove its partial outputs. Data files never contain
//! wall-clock measurements — timing goes to the manifest — so reruns with an
//! equal seed are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use boed_core::engine::{
    barber_agakov_bound, expected_utility, icnn_expected_utility, nested_mc_eig, rank_designs,
    IcnnUtilityConfig, UtilityBudget, UtilityTable,
};
use boed_core::ipm::{MetricKind, MetricSpec};
use boed_core::landscape::{coarse_grid_regret, high_utility_region, region_csv, regret_csv};
use boed_core::models::{
    AbModel, Design, LinearGaussianModel, ModelSpec, PreferenceModel, SignAmbiguousModel,
};
use boed_core::reference::{
    ab_kl_utility, ab_w1_utility, coord_table_csv, design_reference, lg_eig_exact,
    lg_w2_utility_exact,
};
use boed_core::stability::{
    bound_check_csv, contamination_csv, contamination_experiment, likelihood_bound_check,
    prior_bound_check, ContaminationConfig, LinearObservation1D, Measure1D,
};

use crate::config::RunSettings;

/// Failure category mapped to process exit codes (2 config, 3 numerical).
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            RunError::Config(m) | RunError::Numerical(m) => m,
        }
    }
}

fn numerical(e: boed_core::Error) -> RunError {
    RunError::Numerical(e.to_string())
}

/// Tracks files written by one run so partial outputs can be removed on
/// failure.
pub struct Artifacts {
    out_dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(out_dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(out_dir)
            .map_err(|e| RunError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Artifacts { out_dir: out_dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, body: &str) -> Result<(), RunError> {
        let path = self.out_dir.join(name);
        fs::write(&path, body)
            .map_err(|e| RunError::Config(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn remove_partial(&mut self) {
        for path in self.written.drain(..) {
            let _ = fs::remove_file(path);
        }
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.written
    }
}

fn resolve_metrics(settings: &RunSettings, default: &[MetricKind]) -> Result<Vec<MetricSpec>, RunError> {
    if settings.metrics.is_empty() {
        return Ok(default.iter().map(|&k| MetricSpec::new(k)).collect());
    }
    settings
        .metrics
        .iter()
        .map(|name| {
            MetricKind::parse(name)
                .map(MetricSpec::new)
                .ok_or_else(|| RunError::Config(format!("unknown metric `{name}`")))
        })
        .collect()
}

// A utility table CSV without the wall-clock column (which would break
// byte-identical reruns); per-run timing lives in the manifest instead.
fn table_csv(table: &UtilityTable) -> String {
    let mut out = String::from("design,estimate,stderr,metric,seed\n");
    for i in 0..table.designs.len() {
        let _ = writeln!(
            out,
            "{},{:.9},{:.9},{},{}",
            table.designs[i].label(),
            table.estimates[i],
            table.std_errors[i],
            table.metric.kind.name(),
            table.seed
        );
    }
    out
}

// Evaluate designs across a bounded worker pool. Each design's estimate
// depends only on its own deterministic substreams, so the result is
// identical for every thread count; threads only change wall time.
fn evaluate_parallel(
    model: &ModelSpec,
    designs: &[Design],
    metric: &MetricSpec,
    budget: &UtilityBudget,
    threads: usize,
) -> Result<UtilityTable, RunError> {
    let workers = threads.max(1).min(designs.len().max(1));
    let mut results: Vec<Option<(f64, f64)>> = vec![None; designs.len()];
    std::thread::scope(|scope| -> Result<(), RunError> {
        let mut handles = Vec::new();
        for w in 0..workers {
            let idx: Vec<usize> = (w..designs.len()).step_by(workers).collect();
            handles.push((
                idx.clone(),
                scope.spawn(move || -> Result<Vec<(f64, f64)>, boed_core::Error> {
                    idx.iter()
                        .map(|&i| expected_utility(model, &designs[i], metric, budget))
                        .collect()
                }),
            ));
        }
        for (idx, handle) in handles {
            let vals = handle
                .join()
                .map_err(|_| RunError::Numerical("worker panicked".into()))?
                .map_err(numerical)?;
            for (&i, v) in idx.iter().zip(vals) {
                results[i] = Some(v);
            }
        }
        Ok(())
    })?;
    let (estimates, std_errors): (Vec<f64>, Vec<f64>) =
        results.into_iter().map(|v| v.expect("all indices filled")).unzip();
    Ok(UtilityTable {
        designs: designs.to_vec(),
        estimates,
        std_errors,
        seconds_per_design: vec![0.0; designs.len()],
        metric: metric.clone(),
        seed: budget.seed,
    })
}

fn budget(settings: &RunSettings) -> UtilityBudget {
    UtilityBudget {
        n_outer: settings.n_outer,
        n_prior: settings.n_prior,
        n_posterior: settings.n_posterior,
        seed: settings.seed,
    }
}

/// A/B allocation experiment: closed-form W1/KL references plus Monte Carlo
/// tables for the requested metrics over all N + 1 allocations.
pub fn run_abtest(settings: &RunSettings, artifacts: &mut Artifacts) -> Result<(), RunError> {
    let model = AbModel::default();
    let mut exact = String::from("n_a,w1_exact,kl_exact\n");
    for n_a in 0..=model.budget_n {
        let _ = writeln!(
            exact,
            "{n_a},{:.9},{:.9}",
            ab_w1_utility(&model, n_a),
            ab_kl_utility(&model, n_a)
        );
    }
    artifacts.write("abtest_exact.csv", &exact)?;

    let designs: Vec<Design> = (0..=model.budget_n).map(Design::Allocation).collect();
    let spec = ModelSpec::Ab(model);
    for metric in resolve_metrics(settings, &[MetricKind::W1_1D])? {
        let table = evaluate_parallel(&spec, &designs, &metric, &budget(settings), settings.threads)?;
        artifacts.write(&format!("abtest_{}.csv", metric.kind.name()), &table_csv(&table))?;
    }
    Ok(())
}

/// Preference-threshold landscape: utility tables over the 81-point design
/// grid for the requested metrics.
pub fn run_preference(settings: &RunSettings, artifacts: &mut Artifacts) -> Result<(), RunError> {
    let model = PreferenceModel::default();
    let designs: Vec<Design> = model.design_grid.iter().map(|&x| Design::Scalar(x)).collect();
    let spec = ModelSpec::Preference(model);
    for metric in resolve_metrics(settings, &[MetricKind::W1_1D, MetricKind::KlKde])? {
        let table = evaluate_parallel(&spec, &designs, &metric, &budget(settings), settings.threads)?;
        artifacts.write(&format!("preference_{}.csv", metric.kind.name()), &table_csv(&table))?;
    }
    Ok(())
}

/// Rare-event contamination experiment (long-form CSV).
pub fn run_contamination(settings: &RunSettings, artifacts: &mut Artifacts) -> Result<(), RunError> {
    let cfg = ContaminationConfig {
        eps: settings.eps,
        sample_sizes: settings.sample_sizes.clone(),
        replicates: settings.replicates,
        ..ContaminationConfig::default()
    };
    let metrics = resolve_metrics(settings, &[MetricKind::W1_1D, MetricKind::KlKde])?;
    let rows = contamination_experiment(&cfg, &metrics, settings.seed).map_err(numerical)?;
    artifacts.write("contamination.csv", &contamination_csv(&rows))
}

/// Conjugate linear-Gaussian benchmark: exact W2^2 and EIG per design, plus
/// the nested Monte Carlo EIG estimate that exhibits the failure mode.
pub fn run_linear_gaussian(settings: &RunSettings, artifacts: &mut Artifacts) -> Result<(), RunError> {
    let model = LinearGaussianModel::default();
    let spec = ModelSpec::LinearGaussian(model.clone());
    let mut out = String::from("xi,w2_exact,eig_exact,nmc_eig\n");
    for &xi in &model.design_set {
        let nmc = nested_mc_eig(&spec, &Design::Scalar(xi), 64, 512, settings.seed)
            .map_err(numerical)?;
        let _ = writeln!(
            out,
            "{xi},{:.9},{:.9},{:.9}",
            lg_w2_utility_exact(&model, xi),
            lg_eig_exact(&model, xi),
            nmc
        );
    }
    artifacts.write("linear_gaussian.csv", &out)
}

/// Sign-ambiguous benchmark: per-coordinate and per-design quadrature
/// references, the Barber-Agakov lower bounds, and (when `w2_icnn` is among
/// the requested metrics) the trained-transport utility table with its
/// ranking string.
pub fn run_sign_ambiguous(settings: &RunSettings, artifacts: &mut Artifacts) -> Result<(), RunError> {
    let model = SignAmbiguousModel::default();
    artifacts.write("sign_coord_reference.csv", &coord_table_csv(&model).map_err(numerical)?)?;

    let mut refs = String::from("design,eig_exact,w2sq_exact\n");
    let mut ba = String::from("design,ba_bound,seed\n");
    for (label, coords) in model.benchmark_designs() {
        let (eig, w2) = design_reference(&model, &coords).map_err(numerical)?;
        let _ = writeln!(refs, "{label},{eig:.9},{w2:.9}");
        let bound = barber_agakov_bound(&model, &Design::Subset(coords), settings.ba_samples, settings.seed)
            .map_err(numerical)?;
        let _ = writeln!(ba, "{label},{bound:.9},{}", settings.seed);
    }
    artifacts.write("sign_design_reference.csv", &refs)?;
    artifacts.write("sign_ba.csv", &ba)?;

    if settings.metrics.iter().any(|m| MetricKind::parse(m) == Some(MetricKind::W2Icnn)) {
        let spec = ModelSpec::SignAmbiguous(model.clone());
        let cfg = IcnnUtilityConfig {
            n_outer: settings.icnn_outer,
            seed: settings.seed,
            ..IcnnUtilityConfig::default()
        };
        let mut designs = Vec::new();
        let mut estimates = Vec::new();
        let mut std_errors = Vec::new();
        let mut labels = Vec::new();
        for (label, coords) in model.benchmark_designs() {
            let d = Design::Subset(coords);
            let (est, se) = icnn_expected_utility(&spec, &d, &cfg).map_err(numerical)?;
            labels.push((label, est));
            designs.push(d);
            estimates.push(est);
            std_errors.push(se);
        }
        let n = designs.len();
        let table = UtilityTable {
            designs,
            estimates,
            std_errors,
            seconds_per_design: vec![0.0; n],
            metric: MetricSpec::new(MetricKind::W2Icnn),
            seed: settings.seed,
        };
        artifacts.write("sign_icnn.csv", &table_csv(&table))?;
        rank_designs(&table).map_err(numerical)?; // validates non-emptiness
        labels.sort_by(|a, b| b.1.total_cmp(&a.1));
        let ranking: String = labels.iter().map(|(l, _)| *l).collect();
        artifacts.write("sign_ranking.txt", &format!("{ranking}\n"))?;
    }
    Ok(())
}

/// Landscape diagnostics on the preference grid: high-utility regions at the
/// configured thresholds and coarse-grid regret at the configured strides.
pub fn run_regret(settings: &RunSettings, artifacts: &mut Artifacts) -> Result<(), RunError> {
    let model = PreferenceModel::default();
    let designs: Vec<Design> = model.design_grid.iter().map(|&x| Design::Scalar(x)).collect();
    let spec = ModelSpec::Preference(model);
    for metric in resolve_metrics(settings, &[MetricKind::W1_1D, MetricKind::KlKde])? {
        let table = evaluate_parallel(&spec, &designs, &metric, &budget(settings), settings.threads)?;
        let name = metric.kind.name();
        artifacts.write(&format!("regret_landscape_{name}.csv"), &table_csv(&table))?;
        let regions: Vec<_> = settings
            .thresholds
            .iter()
            .map(|&t| high_utility_region(&table, t))
            .collect::<Result<_, _>>()
            .map_err(numerical)?;
        artifacts.write(&format!("region_{name}.csv"), &region_csv(name, &regions))?;
        let regrets: Vec<_> = settings
            .k_list
            .iter()
            .map(|&k| coarse_grid_regret(&table, k))
            .collect::<Result<_, _>>()
            .map_err(numerical)?;
        artifacts.write(&format!("regret_{name}.csv"), &regret_csv(name, &regrets))?;
    }
    Ok(())
}

/// Numerical checks of the two stability bounds on fixed 1-D instances,
/// one CSV row per (case, metric) with both sides of the inequality.
pub fn run_stability(settings: &RunSettings, artifacts: &mut Artifacts) -> Result<(), RunError> {
    let _ = settings;
    let prior = boed_core::models::Gaussian1D::new(0.0, 1.0);
    let base = LinearObservation1D { slope: 1.0, intercept: 0.0, noise_sigma: 0.5 };
    let likelihood_cases: Vec<(String, LinearObservation1D)> = vec![
        ("slope_1.05".into(), LinearObservation1D { slope: 1.05, ..base.clone() }),
        ("intercept_0.1".into(), LinearObservation1D { intercept: 0.1, ..base.clone() }),
        ("slope_0.9_intercept_0.2".into(), LinearObservation1D {
            slope: 0.9,
            intercept: 0.2,
            ..base.clone()
        }),
    ];
    let (r, sigma) = (1.0, 0.3);
    let mu = Measure1D::TruncatedGaussian { mean: 0.5, sd: 0.2 };
    let prior_cases: Vec<(String, Measure1D)> = vec![
        ("discretize_200".into(), Measure1D::quantile_discretization(0.5, 0.2, r, 200)),
        ("discretize_800".into(), Measure1D::quantile_discretization(0.5, 0.2, r, 800)),
    ];

    let mut rows = Vec::new();
    for kind in [MetricKind::W1_1D, MetricKind::Ed2, MetricKind::Mmd2] {
        let metric = MetricSpec::new(kind);
        for (name, perturbed) in &likelihood_cases {
            let (lhs, rhs) =
                likelihood_bound_check(&base, perturbed, &prior, &metric).map_err(numerical)?;
            rows.push((format!("likelihood_{name}"), kind, lhs, rhs));
        }
        for (name, tilde) in &prior_cases {
            let (lhs, rhs) =
                prior_bound_check(&mu, tilde, r, sigma, &metric).map_err(numerical)?;
            rows.push((format!("prior_{name}"), kind, lhs, rhs));
        }
    }
    artifacts.write("stability_bounds.csv", &bound_check_csv(&rows))
}
