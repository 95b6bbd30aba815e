//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bnmm_core::diagnostics::{gr_report, monitored_scalars, write_trace, GrReport};
use bnmm_core::effects::{
    allocation_summary, edge_mask, summarize_effects, Contrast, EdgeMask, EffectSummary, Interval,
};
use bnmm_core::sampler::{run_chains, ChainConfig, InitMode};
use bnmm_core::sbm::{select_q as icl_select, IclMode};
use bnmm_core::simulate::{
    generate, mean_sd, run_replicate, write_metrics_csv, ExposureType, FitSettings, Noise, Scenario, SimConfig,
};
use bnmm_core::{standardize_covariates, Hyperparams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::draws::{read_draws, write_draws, DrawsLayout};
use crate::error::{at, CliError, CliResult};
use crate::io::{self, prepare_out_dir, read_dataset, write_atomic, write_dataset, write_json};
use crate::manifest::{check_schema, FileDigest, RunManifest, MANIFEST_FILE, SCHEMA_VERSION};
use crate::{
    BenchArgs, DesignArgs, ExposureArg, FitArgs, IclArg, InitArg, NoiseArg, PresetArg, ReportArgs, SelectQArgs,
    SimulateArgs,
};

pub const DRAWS_FILE: &str = "draws.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const EFFECTS_FILE: &str = "effects.json";
pub const GR_FILE: &str = "gr.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const EDGE_MASK_FILE: &str = "edge_mask.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn sim_config(d: &DesignArgs) -> CliResult<SimConfig> {
    let scenario = Scenario::from_number(d.scenario)?;
    let noise = match d.noise {
        NoiseArg::Low => Noise::Low,
        NoiseArg::High => Noise::High,
    };
    let mut c = match d.preset {
        PresetArg::Full => SimConfig::full(scenario, noise, d.seed),
        PresetArg::Desk => SimConfig::desk(scenario, noise, d.seed),
    };
    if let Some(n) = d.subjects {
        c.n_subjects = n;
    }
    if let Some(k) = d.scans {
        c.n_scans = k;
    }
    if let Some(v) = d.nodes {
        c.n_nodes = v;
    }
    if let Some(q) = d.blocks {
        c.n_blocks = q;
    }
    if let Some(e) = d.exposure {
        c.exposure_type = match e {
            ExposureArg::Continuous => ExposureType::Continuous,
            ExposureArg::Binary => ExposureType::Binary,
        };
    }
    c.validate()?;
    Ok(c)
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("plain data serializes")
}

fn digests(files: &[PathBuf], base: &Path) -> CliResult<Vec<FileDigest>> {
    files.iter().map(|f| FileDigest::of(f, base)).collect()
}

fn finish(dir: &Path, mut manifest: RunManifest, outputs: &[PathBuf], start: Instant) -> CliResult<()> {
    manifest.outputs = digests(outputs, dir)?;
    manifest.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let start = Instant::now();
    let config = sim_config(&a.design)?;
    prepare_out_dir(&a.out, a.force)?;
    let (dataset, truth) = generate(&config)?;
    let mut outputs = write_dataset(&a.out, &dataset)?;
    let truth_path = a.out.join(TRUTH_FILE);
    write_json(
        &truth_path,
        &json!({ "schema_version": SCHEMA_VERSION, "truth": truth }),
    )?;
    outputs.push(truth_path);
    let mut manifest = RunManifest::new("simulate", to_value(&config));
    manifest.seeds = vec![config.seed];
    finish(&a.out, manifest, &outputs, start)?;
    println!(
        "wrote {} subjects x {} scans ({} nodes, {} blocks) to {}",
        config.n_subjects,
        config.n_scans,
        config.n_nodes,
        config.n_blocks,
        a.out.display()
    );
    Ok(())
}

fn parse_range(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("block-count range must look like 2:10, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn icl_mode(m: IclArg) -> IclMode {
    match m {
        IclArg::Layered => IclMode::Layered,
        IclArg::Pooled => IclMode::Pooled,
    }
}

pub fn select_q(a: &SelectQArgs) -> CliResult<()> {
    let (lo, hi) = parse_range(&a.q_range)?;
    let data = read_dataset(&a.data)?;
    let sel = icl_select(&data.dataset, lo, hi, a.seed, icl_mode(a.icl))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["n_blocks", "icl", "log_likelihood", "penalty", "converged"]).map_err(err)?;
    for r in &sel.results {
        w.write_record([
            r.n_blocks.to_string(),
            format!("{:?}", r.icl_score),
            format!("{:?}", r.log_likelihood),
            format!("{:?}", r.penalty),
            r.converged.to_string(),
        ])
        .map_err(err)?;
    }
    let table = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    match &a.out {
        Some(path) => {
            if path.exists() && !a.force {
                return Err(CliError::Usage(format!(
                    "{} already exists; pass --force to overwrite",
                    path.display()
                )));
            }
            write_atomic(path, &table)?;
        }
        None => print!("{}", String::from_utf8_lossy(&table)),
    }
    println!("selected Q = {}", sel.best_q);
    Ok(())
}

/// Fit settings as read from a config file; every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_blocks: Option<usize>,
    /// ICL search range used when `n_blocks` is absent.
    pub q_min: usize,
    pub q_max: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub init_mode: InitMode,
    pub joint_outcome: bool,
    pub standardize: bool,
    pub hyper: Option<Hyperparams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_blocks: None,
            q_min: 2,
            q_max: 10,
            n_iter: 5000,
            burn_in: 2000,
            thin: 1,
            n_chains: 3,
            seed: 0,
            init_mode: InitMode::BlockAverage,
            joint_outcome: true,
            standardize: false,
            hyper: None,
        }
    }
}

/// What a fit records so that `report` can decode and summarise it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub fit: FitConfig,
    pub layout: DrawsLayout,
    pub contrast: Contrast,
    pub covariate_names: Vec<String>,
    pub subject_ids: Vec<String>,
}

/// Accepts a bare fit configuration or the manifest of an earlier fit.
fn load_fit_config(path: &Path) -> CliResult<FitConfig> {
    let value: Value = io::read_json(path)?;
    let inner = if value.get("schema_version").is_some() && value.get("command").is_some() {
        check_schema(path, &value)?;
        value
            .pointer("/config/fit")
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("{}: not the manifest of a fit", path.display())))?
    } else {
        value
    };
    serde_json::from_value(inner).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn resolve_fit_config(a: &FitArgs) -> CliResult<FitConfig> {
    let mut c = match &a.config {
        Some(p) => load_fit_config(p)?,
        None => FitConfig::default(),
    };
    if let Some(q) = a.blocks {
        c.n_blocks = Some(q);
    }
    if let Some(r) = &a.q_range {
        (c.q_min, c.q_max) = parse_range(r)?;
        if a.blocks.is_none() {
            c.n_blocks = None;
        }
    }
    if let Some(x) = a.iters {
        c.n_iter = x;
    }
    if let Some(x) = a.burn {
        c.burn_in = x;
    }
    if let Some(x) = a.thin {
        c.thin = x;
    }
    if let Some(x) = a.chains {
        c.n_chains = x;
    }
    if let Some(x) = a.seed {
        c.seed = x;
    }
    if let Some(m) = a.init {
        c.init_mode = match m {
            InitArg::BlockAverage => InitMode::BlockAverage,
            InitArg::Random => InitMode::Random,
        };
    }
    if a.standardize {
        c.standardize = true;
    }
    if a.conditional_outcome {
        c.joint_outcome = false;
    }
    Ok(c)
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg = resolve_fit_config(a)?;
    let loaded = read_dataset(&a.data)?;
    let dataset = if cfg.standardize {
        standardize_covariates(&loaded.dataset)
    } else {
        loaded.dataset.clone()
    };
    prepare_out_dir(&a.out, a.force)?;
    let mut manifest = RunManifest::new("fit", Value::Null);

    let n_blocks = match cfg.n_blocks {
        Some(q) => q,
        None => {
            let t = Instant::now();
            let sel = icl_select(&dataset, cfg.q_min, cfg.q_max, cfg.seed, IclMode::Layered)?;
            manifest.timings.insert("select_q_seconds".into(), t.elapsed().as_secs_f64());
            eprintln!("ICL selected Q = {}", sel.best_q);
            sel.best_q
        }
    };
    cfg.n_blocks = Some(n_blocks);
    let hyper = cfg.hyper.clone().unwrap_or_else(|| Hyperparams::new(n_blocks));
    cfg.hyper = Some(hyper.clone());
    let chain = ChainConfig {
        n_iter: cfg.n_iter,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        n_chains: cfg.n_chains,
        seed: cfg.seed,
        n_blocks,
        init_mode: cfg.init_mode,
        joint_outcome: cfg.joint_outcome,
    };
    chain.validate()?;
    hyper.validate(n_blocks)?;

    let t = Instant::now();
    let draws = run_chains(&dataset, &chain, &hyper)?;
    manifest.timings.insert("sampling_seconds".into(), t.elapsed().as_secs_f64());

    let layout = DrawsLayout {
        n_blocks,
        n_nodes: dataset.n_nodes,
        n_coef: dataset.n_covariates + 1,
    };
    let mut bytes = Vec::new();
    write_draws(&draws, &layout, &mut bytes)?;
    let draws_path = a.out.join(DRAWS_FILE);
    write_atomic(&draws_path, &bytes)?;

    let record = FitRecord {
        fit: cfg,
        layout,
        contrast: Contrast::default_for(&dataset),
        covariate_names: loaded.covariate_names.clone(),
        subject_ids: loaded.ids.clone(),
    };
    manifest.config = to_value(&record);
    manifest.seeds = draws.chains.iter().map(|c| c.seed).collect();
    let base = a.data.parent().unwrap_or(Path::new("."));
    manifest.inputs = digests(&loaded.files, base)?;
    finish(&a.out, manifest, &[draws_path], start)?;
    println!(
        "stored {} draws from {} chains at Q = {n_blocks} in {}",
        draws.n_draws(),
        draws.n_chains(),
        a.out.display()
    );
    Ok(())
}

fn parse_contrast(s: &str) -> CliResult<Contrast> {
    let bad = || CliError::Usage(format!("contrast must look like 1,0, got {s:?}"));
    let (z, zs) = s.split_once(',').ok_or_else(bad)?;
    let z: f64 = z.trim().parse().map_err(|_| bad())?;
    let zs: f64 = zs.trim().parse().map_err(|_| bad())?;
    if !(z.is_finite() && zs.is_finite()) {
        return Err(bad());
    }
    Ok(Contrast::new(z, zs))
}

fn interval_json(i: &Interval) -> Value {
    json!({ "mean": i.mean, "median": i.median, "ci_low": i.lower, "ci_high": i.upper })
}

fn effects_json(s: &EffectSummary, labels: &[usize]) -> Value {
    let inclusion: Vec<Value> = s
        .median_model
        .inclusion_tau
        .iter_pairs()
        .zip(s.median_model.inclusion_gamma.values())
        .map(|(((q, r), t), g)| json!({ "q": q, "r": r, "tau": t, "gamma": g }))
        .collect();
    json!({
        "schema_version": SCHEMA_VERSION,
        "contrast": { "z": s.contrast.z, "z_star": s.contrast.z_star },
        "n_draws": s.n_draws,
        "effects": {
            "nde": interval_json(&s.nde),
            "nie": interval_json(&s.nie),
            "te": interval_json(&s.te),
            "nie_pos": interval_json(&s.nie_pos),
            "nie_neg": interval_json(&s.nie_neg),
        },
        "median_model": {
            "active_pairs": s.median_model.active_pairs,
            "inclusion": inclusion,
        },
        "consensus_allocation": labels,
    })
}

fn gr_json(gr: Option<&GrReport>, threshold: f64, warnings: &[String]) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "threshold": threshold,
        "split": gr.map(|g| g.split),
        "psrf": gr.map(|g| g.entries.iter().map(|(k, d)| (k.clone(), json!(d.psrf))).collect::<serde_json::Map<_, _>>()),
        "detail": gr.map(|g| to_value(&g.entries)),
        "warnings": warnings,
    })
}

fn mask_csv(mask: &EdgeMask) -> Vec<u8> {
    let n = mask.size();
    let mut out = String::with_capacity(n * n * 2);
    for j in 0..n {
        let row: Vec<&str> = (0..n).map(|l| if mask.get(j, l) { "1" } else { "0" }).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    let start = Instant::now();
    let manifest_path = a.fit.join(MANIFEST_FILE);
    let fit_manifest = RunManifest::read(&manifest_path)?;
    if fit_manifest.command != "fit" {
        return Err(CliError::Data(format!(
            "{} was written by `{}`, not `fit`",
            manifest_path.display(),
            fit_manifest.command
        )));
    }
    let record: FitRecord = serde_json::from_value(fit_manifest.config.clone())
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
    let draws_path = a.fit.join(DRAWS_FILE);
    let expected = fit_manifest
        .output(DRAWS_FILE)
        .ok_or_else(|| CliError::Data(format!("{}: no draws recorded", manifest_path.display())))?;
    let bytes = fs::read(&draws_path).map_err(at(&draws_path))?;
    if io::sha256_bytes(&bytes) != expected.sha256 {
        return Err(CliError::Data(format!(
            "{}: contents do not match the digest in the manifest",
            draws_path.display()
        )));
    }
    let draws = read_draws(
        bytes.as_slice(),
        &record.layout,
        &fit_manifest.seeds,
        record.fit.n_iter,
        record.fit.burn_in,
        record.fit.thin,
    )?;
    let contrast = match &a.contrast {
        Some(s) => parse_contrast(s)?,
        None => record.contrast,
    };
    if !(a.psrf_threshold.is_finite() && a.psrf_threshold >= 1.0) {
        return Err(CliError::Usage("psrf threshold must be a finite number of at least 1".into()));
    }

    let out = a.out.clone().unwrap_or_else(|| a.fit.join("report"));
    prepare_out_dir(&out, a.force)?;

    let summary = summarize_effects(&draws, contrast)?;
    let alloc = allocation_summary(&draws)?;
    let mask = edge_mask(&summary.median_model.active_pairs, &alloc.consensus);

    let can_gr = if a.split { draws.n_draws() >= 4 } else { draws.n_chains() >= 2 };
    let gr = if can_gr { Some(gr_report(&draws, contrast, a.split)?) } else { None };
    let mut warnings = Vec::new();
    match &gr {
        Some(g) => {
            for (name, d) in &g.entries {
                if !(d.psrf <= a.psrf_threshold) {
                    warnings.push(format!(
                        "warning: PSRF of {name} is {:.3}, above {}; chains may not have converged",
                        d.psrf, a.psrf_threshold
                    ));
                }
            }
        }
        None => warnings.push("warning: PSRF needs at least two chains; convergence not assessed".into()),
    }
    for w in &warnings {
        eprintln!("{w}");
    }

    let effects_path = out.join(EFFECTS_FILE);
    write_json(&effects_path, &effects_json(&summary, alloc.consensus.labels()))?;
    let gr_path = out.join(GR_FILE);
    write_json(&gr_path, &gr_json(gr.as_ref(), a.psrf_threshold, &warnings))?;
    let trace_path = out.join(TRACE_FILE);
    let mut trace = Vec::new();
    write_trace(&monitored_scalars(&draws, contrast), &mut trace)?;
    write_atomic(&trace_path, &trace)?;
    let mask_path = out.join(EDGE_MASK_FILE);
    write_atomic(&mask_path, &mask_csv(&mask))?;

    let mut manifest = RunManifest::new(
        "report",
        json!({
            "contrast": contrast,
            "split": a.split,
            "psrf_threshold": a.psrf_threshold,
        }),
    );
    manifest.seeds = fit_manifest.seeds.clone();
    manifest.inputs = digests(&[manifest_path, draws_path], &a.fit)?;
    finish(&out, manifest, &[effects_path, gr_path, trace_path, mask_path], start)?;

    let show = |name: &str, i: &Interval| {
        println!(
            "{name:<8} mean {:+.4}  median {:+.4}  95% CI [{:+.4}, {:+.4}]",
            i.mean, i.median, i.lower, i.upper
        )
    };
    show("NDE", &summary.nde);
    show("NIE", &summary.nie);
    show("TE", &summary.te);
    show("NIE+", &summary.nie_pos);
    show("NIE-", &summary.nie_neg);
    println!("active block pairs: {:?}", summary.median_model.active_pairs);
    Ok(())
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let start = Instant::now();
    let config = sim_config(&a.design)?;
    let fit = FitSettings {
        n_iter: a.iters,
        burn_in: a.burn,
        thin: 1,
        n_chains: a.chains,
    };
    if a.reps == 0 {
        return Err(CliError::Usage("need at least one replicate".into()));
    }
    prepare_out_dir(&a.out, a.force)?;
    let mut results = Vec::with_capacity(a.reps);
    for r in 0..a.reps {
        let res = run_replicate(&config, &fit, r)?;
        eprintln!(
            "rep {r}: sensitivity {:?} specificity {:?} TE bias {:+.2}% {:.1}s",
            res.selection.sensitivity, res.selection.specificity, res.bias.te.value, res.seconds
        );
        results.push(res);
    }
    let metrics_path = a.out.join(METRICS_FILE);
    let mut bytes = Vec::new();
    write_metrics_csv(&config, &results, &mut bytes)?;
    write_atomic(&metrics_path, &bytes)?;

    let stat = |f: &dyn Fn(&bnmm_core::simulate::ReplicateResult) -> Option<f64>| {
        mean_sd(results.iter().map(f)).map(|(m, s)| json!({ "mean": m, "sd": s }))
    };
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "replicates": results.len(),
        "sensitivity": stat(&|r| r.selection.sensitivity),
        "specificity": stat(&|r| r.selection.specificity),
        "bias_nde": stat(&|r| Some(r.bias.nde.value)),
        "bias_nie": stat(&|r| Some(r.bias.nie.value)),
        "bias_te": stat(&|r| Some(r.bias.te.value)),
        "te_coverage": results.iter().filter(|r| r.te_covered).count() as f64 / results.len() as f64,
        "seconds": stat(&|r| Some(r.seconds)),
    });
    let summary_path = a.out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;

    let mut manifest = RunManifest::new("bench", json!({ "simulation": config, "fit": fit }));
    manifest.seeds = results.iter().map(|r| r.seed).collect();
    finish(&a.out, manifest, &[metrics_path, summary_path], start)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    Ok(())
}
