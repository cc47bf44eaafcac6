use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use corrcv::bias::{
    canonical_c_tilde, empirical_draws, estimate_from_draws, fast_draws, lmm_analytic_wcv, marginal_moments,
    BiasEstimate, BootstrapConfig, Estimator, ReplicateDraws,
};
use corrcv::cv::{cv_fit, make_folds, CvReport, FoldPlan, Scenario, TrueEffects};
use corrcv::glmm::{FittedGlmm, GlmmLearner, Learner};
use corrcv::model::{Dataset, Loss, ModelFamily};
use corrcv::rng::{domain, stream};
use corrcv::sim::{self, ExperimentConfig, SimConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{manifest, BootstrapArgs, CvArgs, CvcArgs, DataArgs, ExperimentArgs, FitArgs, Failure, FoldArgs, OracleArgs, RocArgs, SimulateArgs, StructureArg};

type Res<T> = Result<T, Failure>;

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Read input files; a missing or unreadable input is a usage error.
fn read_input(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Res<()> {
    ensure_parent(path)?;
    corrcv::io::write_json(path, value).map_err(|e| runtime(path, e))
}

fn ensure_parent(path: &Path) -> Res<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| runtime(p, e)),
        _ => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> Res<()> {
    fs::create_dir_all(dir).map_err(|e| runtime(dir, e))
}

fn create(path: &Path) -> Res<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| runtime(path, e))
}

fn load(args: &DataArgs) -> Res<(Dataset, ModelFamily)> {
    let family = args.family()?;
    let text = read_input(&args.data)?;
    let data = corrcv::io::read_dataset(text.as_bytes()).map_err(|e| config_err(format!("{}: {e}", args.data.display())))?;
    let data = match args.structure {
        StructureArg::Iid => Dataset::new(data.x().clone(), data.y().clone())?,
        StructureArg::Clustered if data.clusters().is_none() => {
            return Err(config_err("--structure clustered needs entity and day columns"))
        }
        StructureArg::Spatial if data.spatial().is_none() => {
            return Err(config_err("--structure spatial needs coord1, coord2 and region columns"))
        }
        _ => data,
    };
    if data.clusters().is_some() && data.spatial().is_some() {
        return Err(config_err("dataset has both cluster and spatial columns"));
    }
    family.check_responses(data.y().as_slice())?;
    Ok((data, family))
}

fn check_losses(losses: &[Loss], family: &ModelFamily) -> Res<()> {
    match losses.iter().find(|l| !l.supports(family)) {
        Some(l) => Err(config_err(format!("loss {l} does not apply to {:?} responses", family.distribution))),
        None => Ok(()),
    }
}

fn plan_for(data: &Dataset, args: &FoldArgs) -> Res<FoldPlan> {
    if args.scenario == Scenario::SharedEntities && data.clusters().is_none() {
        return Err(config_err("scenario shared_entities needs clustered data"));
    }
    Ok(make_folds(data.n(), args.folds, args.seed)?)
}

fn bootstrap_config(args: &BootstrapArgs, seed: u64) -> Res<BootstrapConfig> {
    let cfg = BootstrapConfig {
        b: args.b,
        b1: args.b1,
        b2: args.b2,
        moment_draws: args.moment_draws,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn folds_json(args: &FoldArgs) -> Value {
    json!({"folds": args.folds, "scenario": args.scenario, "seed": args.seed})
}

fn data_json(args: &DataArgs) -> Value {
    json!({"data": args.data.display().to_string(), "structure": args.structure, "family": args.family, "phi": args.phi})
}

pub fn simulate(a: &SimulateArgs, argv: &[String]) -> Res<()> {
    let mut raw: Value = serde_json::from_str(&read_input(&a.config)?)
        .map_err(|e| config_err(format!("{}: {e}", a.config.display())))?;
    if let Some(seed) = a.seed {
        raw["seed"] = json!(seed);
    }
    if raw.get("seed").is_none() {
        return Err(config_err("a seed is required (config field `seed` or --seed)"));
    }
    let cfg = SimConfig::from_value(raw)?;
    let s = sim::generate(&cfg, &mut stream(cfg.seed, domain::GENERATE, 0))?;
    ensure_dir(&a.out)?;
    let data_path = a.out.join("data.csv");
    corrcv::io::write_dataset(&s.data, create(&data_path)?).map_err(|e| runtime(&data_path, e))?;
    let effects = match &s.truth.effects {
        TrueEffects::None => json!(null),
        TrueEffects::Clustered { sigma_u, sigma_s, u, s } => json!({
            "sigma_u": sigma_u,
            "sigma_s": sigma_s,
            "entity_effects": u.as_slice(),
            "day_effects": s.as_slice(),
        }),
        TrueEffects::Spatial { kernel, .. } => json!({"kernel": kernel}),
    };
    let truth = json!({
        "kind": cfg.kind,
        "family": s.truth.family,
        "beta": cfg.beta(),
        "intercept": cfg.intercept,
        "effects": effects,
    });
    let truth_path = a.out.join("truth.json");
    write_json(&truth_path, &truth)?;
    let config = serde_json::to_value(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    manifest::write(
        &manifest::path_for(&a.out, true),
        "simulate",
        argv,
        &config,
        Some(cfg.seed),
        &[data_path, truth_path],
    )
}

pub fn fit(a: &FitArgs, argv: &[String]) -> Res<()> {
    let (data, family) = load(&a.data)?;
    let f = GlmmLearner::new(family).fit(&data)?;
    let out = json!({"n": data.n(), "p": data.p(), "fit": f.summary()});
    write_json(&a.out, &out)?;
    manifest::write(&manifest::path_for(&a.out, false), "fit", argv, &data_json(&a.data), None, &[a.out.clone()])
}

/// Full-data fit and cold-started held-out linear predictors.
fn fit_and_cv(data: &Dataset, family: ModelFamily, plan: &FoldPlan, scenario: Scenario) -> Res<(GlmmLearner, FittedGlmm, nalgebra::DVector<f64>)> {
    let learner = GlmmLearner::new(family);
    let f = learner.fit(data)?;
    let eta = cv_fit(&learner, data, plan, scenario, None)?.eta_cv;
    Ok((learner, f, eta))
}

#[derive(Serialize)]
struct CvEntry {
    loss: Loss,
    cv: f64,
    per_fold: Vec<f64>,
}

pub fn cv(a: &CvArgs, argv: &[String]) -> Res<()> {
    let (data, family) = load(&a.data)?;
    check_losses(&a.losses, &family)?;
    let plan = plan_for(&data, &a.folds)?;
    let learner = GlmmLearner::new(family);
    let eta = cv_fit(&learner, &data, &plan, a.folds.scenario, None)?.eta_cv;
    let mut results = Vec::new();
    for &loss in &a.losses {
        let r = CvReport::from_predictions(loss, family.link, &data, &plan, &eta)?;
        results.push(CvEntry {
            loss,
            cv: r.cv_value,
            per_fold: r.per_fold_losses,
        });
    }
    let out = json!({"n": data.n(), "folds": plan.k(), "scenario": a.folds.scenario, "results": results});
    write_json(&a.out, &out)?;
    let mut config = data_json(&a.data);
    config["cv"] = folds_json(&a.folds);
    config["losses"] = json!(a.losses);
    manifest::write(&manifest::path_for(&a.out, false), "cv", argv, &config, Some(a.folds.seed), &[a.out.clone()])
}

#[derive(Serialize)]
struct EstimateEntry {
    estimator: Estimator,
    w_cv: f64,
    mc_se: f64,
    cv_c: f64,
    replicates: usize,
    degenerate: bool,
}

#[derive(Serialize)]
struct CvcEntry {
    loss: Loss,
    cv: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    w_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w_tilde: Option<f64>,
    /// CV plus the first available correction.
    cv_c: f64,
    estimates: Vec<EstimateEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    skipped: Vec<Skipped>,
}

/// Requested estimator that does not cover this loss.
#[derive(Serialize)]
struct Skipped {
    estimator: Estimator,
    reason: String,
}

pub fn cvc(a: &CvcArgs, argv: &[String]) -> Res<()> {
    let (data, family) = load(&a.data)?;
    check_losses(&a.losses, &family)?;
    let plan = plan_for(&data, &a.folds)?;
    let bcfg = bootstrap_config(&a.bootstrap, a.folds.seed)?;
    let scenario = a.folds.scenario;
    let mut estimators = a.estimators.clone();
    estimators.dedup();
    if estimators.contains(&Estimator::Analytic) && !family.is_gaussian_identity() {
        return Err(config_err("the analytic estimator needs --family gaussian"));
    }
    let (learner, f, eta) = fit_and_cv(&data, family, &plan, scenario)?;
    let wants = |e: Estimator| estimators.contains(&e);
    let empirical = if wants(Estimator::Empirical) {
        Some(empirical_draws(&learner, &data, &plan, &f, &bcfg, scenario)?)
    } else {
        None
    };
    let mm = if wants(Estimator::Fast) || wants(Estimator::Canonical) {
        Some(marginal_moments(&f.beta, &f, &data, bcfg.moment_draws, bcfg.seed)?)
    } else {
        None
    };
    let fast = match (&mm, wants(Estimator::Fast)) {
        (Some(mm), true) => Some(fast_draws(&data, &plan, &f, mm, &bcfg, scenario)?),
        _ => None,
    };
    let analytic = if wants(Estimator::Analytic) {
        Some(lmm_analytic_wcv(&data, &f, &plan, scenario)?)
    } else {
        None
    };
    let from = |d: &Option<ReplicateDraws>, loss: Loss| -> Res<BiasEstimate> {
        let d = d.as_ref().expect("draws exist for requested estimators");
        Ok(estimate_from_draws(d, Some(loss), |e| loss.l2_at(e, family.link))?)
    };
    let mut results = Vec::new();
    for &loss in &a.losses {
        let cv = CvReport::from_predictions(loss, family.link, &data, &plan, &eta)?.cv_value;
        let mut estimates = Vec::new();
        let mut skipped = Vec::new();
        for &e in &estimators {
            let est = match e {
                Estimator::Empirical => from(&empirical, loss)?,
                Estimator::Fast => from(&fast, loss)?,
                Estimator::Canonical => {
                    match canonical_c_tilde(&data, &plan, loss, &f, mm.as_ref().expect("moments"), &bcfg, scenario) {
                        Ok(est) => est,
                        Err(corrcv::Error::Unsupported(reason)) => {
                            skipped.push(Skipped { estimator: e, reason });
                            continue;
                        }
                        Err(err) => return Err(err.into()),
                    }
                }
                Estimator::Analytic => {
                    if loss != Loss::Squared {
                        return Err(config_err("the analytic estimator applies to squared loss only"));
                    }
                    analytic.clone().expect("analytic estimate")
                }
            };
            estimates.push(EstimateEntry {
                estimator: e,
                w_cv: est.w_cv,
                mc_se: est.mc_se,
                cv_c: cv + est.w_cv,
                replicates: est.replicates,
                degenerate: est.degenerate,
            });
        }
        let Some(first) = estimates.first() else {
            return Err(config_err(format!("no requested estimator supports loss {loss}")));
        };
        let cv_c = first.cv_c;
        let pick = |e: Estimator| estimates.iter().find(|x| x.estimator == e).map(|x| x.w_cv);
        results.push(CvcEntry {
            loss,
            cv,
            w_hat: pick(Estimator::Empirical),
            w_tilde: pick(Estimator::Fast),
            cv_c,
            estimates,
            skipped,
        });
    }
    let out = json!({
        "n": data.n(),
        "folds": plan.k(),
        "scenario": scenario,
        "fit": f.summary(),
        "results": results,
    });
    write_json(&a.out, &out)?;
    let mut config = data_json(&a.data);
    config["cv"] = folds_json(&a.folds);
    config["losses"] = json!(a.losses);
    config["estimators"] = json!(estimators);
    config["bootstrap"] = json!(bcfg);
    manifest::write(&manifest::path_for(&a.out, false), "cvc", argv, &config, Some(a.folds.seed), &[a.out.clone()])
}

pub fn roc(a: &RocArgs, argv: &[String]) -> Res<()> {
    let (data, family) = load(&a.data)?;
    if family.distribution != corrcv::model::Distribution::Bernoulli {
        return Err(config_err("ROC curves need --family bernoulli"));
    }
    if a.grid < 2 {
        return Err(config_err("--grid must be at least 2"));
    }
    let plan = plan_for(&data, &a.folds)?;
    let bcfg = bootstrap_config(&a.bootstrap, a.folds.seed)?;
    let scenario = a.folds.scenario;
    let (learner, f, eta) = fit_and_cv(&data, family, &plan, scenario)?;
    let draws = match a.estimator {
        Estimator::Fast => {
            let mm = marginal_moments(&f.beta, &f, &data, bcfg.moment_draws, bcfg.seed)?;
            fast_draws(&data, &plan, &f, &mm, &bcfg, scenario)?
        }
        Estimator::Empirical => empirical_draws(&learner, &data, &plan, &f, &bcfg, scenario)?,
        e => return Err(config_err(format!("ROC corrections use the fast or empirical bootstrap, not {e:?}"))),
    };
    let grid = corrcv::roc::threshold_grid(a.grid);
    let scores: Vec<f64> = eta.iter().map(|&e| family.link.mean(e)).collect();
    let y: Vec<f64> = data.y().iter().copied().collect();
    let curve = corrcv::roc::roc_curve(&y, &scores, &grid)?;
    let w_pr = corrcv::roc::wcv_pr(&draws, &grid)?;
    let w: Vec<f64> = w_pr.iter().map(|e| e.w_cv).collect();
    let corrected = corrcv::roc::correct_roc(&curve, &w)?;

    ensure_dir(&a.out)?;
    let csv_path = a.out.join("roc.csv");
    corrected.write_csv(create(&csv_path)?).map_err(|e| runtime(&csv_path, e))?;
    let summary_path = a.out.join("roc.json");
    let summary = json!({
        "summary": corrected.summary(),
        "estimator": a.estimator,
        "w_pr": w,
        "mc_se_pr": w_pr.iter().map(|e| e.mc_se).collect::<Vec<_>>(),
    });
    write_json(&summary_path, &summary)?;
    let mut config = data_json(&a.data);
    config["cv"] = folds_json(&a.folds);
    config["estimator"] = json!(a.estimator);
    config["grid"] = json!(a.grid);
    config["bootstrap"] = json!(bcfg);
    manifest::write(
        &manifest::path_for(&a.out, true),
        "roc",
        argv,
        &config,
        Some(a.folds.seed),
        &[csv_path, summary_path],
    )
}

pub fn experiment(a: &ExperimentArgs, argv: &[String]) -> Res<()> {
    let mut raw: Value = serde_json::from_str(&read_input(&a.config)?)
        .map_err(|e| config_err(format!("{}: {e}", a.config.display())))?;
    if !raw.is_object() {
        return Err(config_err(format!("{}: expected a JSON object", a.config.display())));
    }
    if raw.get("sim").is_none() {
        raw["sim"] = json!({});
    }
    if let Some(seed) = a.seed {
        raw["sim"]["seed"] = json!(seed);
    }
    if let Some(reps) = a.reps {
        raw["sim"]["reps"] = json!(reps);
    }
    if raw["sim"].get("seed").is_none() {
        return Err(config_err("a seed is required (config field `sim.seed` or --seed)"));
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(raw).map_err(|e| config_err(format!("{}: {e}", a.config.display())))?;
    cfg.validate()?;

    let report = sim::run_experiment(&cfg)?;
    let summary = sim::summarize(&report)?;
    ensure_dir(&a.out)?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    let rows = a.out.join("reps.csv");
    report.write_rows_csv(create(&rows)?).map_err(|e| runtime(&rows, e))?;
    outputs.push(rows);
    if cfg.roc {
        let p = a.out.join("roc.csv");
        report.write_roc_csv(create(&p)?).map_err(|e| runtime(&p, e))?;
        outputs.push(p);
    }
    let sp = a.out.join("summary.json");
    write_json(&sp, &summary)?;
    outputs.push(sp);
    for stat in summary.histogram_statistics() {
        let p = a.out.join(format!("hist_{stat}.csv"));
        summary.write_histogram_csv(&stat, create(&p)?).map_err(|e| runtime(&p, e))?;
        outputs.push(p);
    }
    if !report.failures.is_empty() {
        let p = a.out.join("failures.json");
        write_json(&p, &report.failures)?;
        outputs.push(p);
    }
    let config = serde_json::to_value(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    manifest::write(&manifest::path_for(&a.out, true), "experiment", argv, &config, Some(cfg.sim.seed), &outputs)
}

pub fn oracle(a: &OracleArgs, argv: &[String]) -> Res<()> {
    let fx = sim::fixtures::by_name(&a.fixture)?;
    let r = sim::fixtures::oracle(&fx, a.reps, a.seed)?;
    let z = (r.analytic - r.brute_force) / r.mc_se;
    println!("fixture      {}", r.fixture);
    println!("analytic     {:.8}", r.analytic);
    println!("brute force  {:.8} (MC se {:.8}, {} reps)", r.brute_force, r.mc_se, r.reps);
    println!("z            {z:.3}");
    if let Some(out) = &a.out {
        write_json(out, &r)?;
        let config = json!({"fixture": a.fixture, "reps": a.reps, "seed": a.seed});
        manifest::write(&manifest::path_for(out, false), "oracle", argv, &config, Some(a.seed), &[out.clone()])?;
    }
    Ok(())
}
