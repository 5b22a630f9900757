//! Command-line front end: one config file, eight subcommands, deterministic
//! output trees.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 provider error,
//! 4 fit error.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use polibias::config::AuditConfig;
use polibias::econ::{
    build_design, infer, ols_fit, robust_se, EconError, HcType, ModelSpec, ObsRow, TermSpec,
};
use polibias::estimator::{
    aggregate_bias, bias_table, AggregateRow, BiasRecord, EstimatorError, UnitPolicy,
};
use polibias::ingest::{
    self, filter_waves, load_dataset, stratify, Dataset, RegionMap, StratumKey,
    StratumLabel,
};
use polibias::parser::parse_answer;
use polibias::questionnaire::{builtin_ess16, load_questionnaire, validate_item, Questionnaire};
use polibias::report::{
    aggregate_csv, aggregate_text, bias_csv, bias_text, item_distribution_csv,
    lr_histogram_csv, provenance_header, regression_csv, regression_text, stability_csv,
    stability_text, write_artifact, StabilityRow,
};
use polibias::sampler::{
    detect_zero_variance, run_samples, summarize_batch, ChatTransport, HttpTransport, RunStore,
    SampleMode, SamplerError,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PROVIDER: u8 = 3;
const EXIT_FIT: u8 = 4;

struct AppError {
    code: u8,
    message: String,
}

impl AppError {
    fn usage(message: impl Into<String>) -> AppError {
        AppError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
    fn data(message: impl Into<String>) -> AppError {
        AppError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
    fn provider(message: impl Into<String>) -> AppError {
        AppError {
            code: EXIT_PROVIDER,
            message: message.into(),
        }
    }
    fn fit(message: impl Into<String>) -> AppError {
        AppError {
            code: EXIT_FIT,
            message: message.into(),
        }
    }
}

impl From<ingest::IngestError> for AppError {
    fn from(e: ingest::IngestError) -> AppError {
        AppError::data(e.to_string())
    }
}

impl From<EstimatorError> for AppError {
    fn from(e: EstimatorError) -> AppError {
        AppError::data(e.to_string())
    }
}

impl From<EconError> for AppError {
    fn from(e: EconError) -> AppError {
        AppError::fit(e.to_string())
    }
}

impl From<SamplerError> for AppError {
    fn from(e: SamplerError) -> AppError {
        match e {
            SamplerError::StoreFormat { .. } | SamplerError::EmptyBatch(_) => {
                AppError::data(e.to_string())
            }
            _ => AppError::provider(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "polibias",
    version,
    about = "Measures an LLM's political-economy bias against survey respondents"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Answer questions from the run store only; never touch the network
    #[arg(long, global = true)]
    replay: bool,
    /// Seed for synthetic generation and retry jitter
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated survey waves to keep, e.g. 8,9,10
    #[arg(long, global = true)]
    waves: Option<String>,
    /// Comma-separated strata keys: country, gender, graduate, macroregion
    #[arg(long, global = true)]
    strata: Option<String>,
    /// Fail when no group interval contains the unit value
    #[arg(long = "strict-match", global = true)]
    strict_match: bool,
    /// Unit-value policy: round or mode
    #[arg(long = "unit-policy", global = true)]
    unit_policy: Option<String>,
    /// Robust-SE flavour: 0 or 1
    #[arg(long, global = true)]
    hc: Option<String>,
    /// Worker threads for parallel sections (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample every item N times (or replay the store) and emit the
    /// stability table
    Sample {
        /// Run identifier inside the store; defaults to the store's only run
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Parse one free-text answer against an item's scale
    Parse {
        #[arg(long)]
        item: String,
        /// Literal answer text
        #[arg(long, conflicts_with = "file")]
        text: Option<String>,
        /// File containing the answer text
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Validate the respondent CSV and print ingestion provenance
    IngestCheck,
    /// Bias records plus aggregate tables
    Bias {
        #[arg(long)]
        run_id: Option<String>,
    },
    /// OLS decomposition of the bias records
    Regress {
        /// spb or absolute_bias
        #[arg(long, default_value = "spb")]
        response: String,
        /// Comma-separated terms among: topic, country, gender, graduate,
        /// macroregion
        #[arg(long, default_value = "topic")]
        terms: String,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Per-item answer distributions and the left-right histogram
    Distributions,
    /// Generate a synthetic dataset with its ground-truth sidecar
    Simulate {
        /// Population spec JSON; a small demonstration spec is used when
        /// omitted
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// All tables in one deterministic output tree
    Report {
        #[arg(long)]
        run_id: Option<String>,
    },
}

/// Effective settings after flag > config > default precedence.
struct Ctx {
    cfg: AuditConfig,
    questionnaire: Questionnaire,
    out_dir: PathBuf,
    replay: bool,
    waves: Option<BTreeSet<u8>>,
    strata: BTreeSet<StratumKey>,
    /// Canonical serialization of the effective config, hashed into every
    /// provenance header.
    config_text: String,
}

fn build_ctx(cli: &Cli) -> Result<Ctx, AppError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| AppError::usage(format!("cannot read {}: {e}", path.display())))?;
            AuditConfig::from_toml(&text).map_err(|e| AppError::usage(e.to_string()))?
        }
        None => AuditConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.audit.seed = Some(seed);
    }
    if cli.strict_match {
        cfg.audit.strict_match = true;
    }
    if let Some(policy) = &cli.unit_policy {
        UnitPolicy::parse(policy)
            .ok_or_else(|| AppError::usage(format!("--unit-policy must be round or mode, got {policy}")))?;
        cfg.audit.unit_policy = policy.clone();
    }
    if let Some(hc) = &cli.hc {
        let parsed = HcType::parse(hc)
            .ok_or_else(|| AppError::usage(format!("--hc must be 0 or 1, got {hc}")))?;
        cfg.audit.hc = match parsed {
            HcType::Hc0 => 0,
            HcType::Hc1 => 1,
        };
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = Some(out.clone());
    }
    cfg.validate().map_err(|e| AppError::usage(e.to_string()))?;

    let questionnaire = match &cfg.paths.questionnaire {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| AppError::usage(format!("cannot read {}: {e}", path.display())))?;
            load_questionnaire(&text).map_err(|e| AppError::data(e.to_string()))?
        }
        None => builtin_ess16(),
    };

    let waves = match &cli.waves {
        Some(list) => {
            let mut set = BTreeSet::new();
            for part in list.split(',') {
                let w: u8 = part
                    .trim()
                    .parse()
                    .map_err(|_| AppError::usage(format!("bad wave \"{part}\" in --waves")))?;
                if !(1..=10).contains(&w) {
                    return Err(AppError::usage(format!("wave {w} outside 1..10")));
                }
                set.insert(w);
            }
            Some(set)
        }
        None => None,
    };

    let mut strata = BTreeSet::new();
    if let Some(list) = &cli.strata {
        for part in list.split(',') {
            let key = StratumKey::parse(part.trim()).ok_or_else(|| {
                AppError::usage(format!(
                    "unknown stratum key \"{part}\"; expected country, gender, graduate or macroregion"
                ))
            })?;
            strata.insert(key);
        }
    }

    let out_dir = cfg
        .paths
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    // the provenance hash covers the analysis settings, not where the
    // artifacts land
    let config_text = {
        let mut canonical = cfg.clone();
        canonical.paths.out_dir = None;
        canonical.to_toml()
    };
    Ok(Ctx {
        cfg,
        questionnaire,
        out_dir,
        replay: cli.replay,
        waves,
        strata,
        config_text,
    })
}

impl Ctx {
    fn store_path(&self) -> Result<&Path, AppError> {
        self.cfg
            .paths
            .run_store
            .as_deref()
            .ok_or_else(|| AppError::usage("paths.run_store must be set for this command"))
    }

    fn open_store(&self) -> Result<RunStore, AppError> {
        let path = self.store_path()?;
        if self.replay && !path.exists() {
            return Err(AppError::usage(format!(
                "--replay given but run store {} does not exist",
                path.display()
            )));
        }
        Ok(RunStore::open(path)?)
    }

    fn dataset(&self) -> Result<Dataset, AppError> {
        let path = self
            .cfg
            .paths
            .dataset
            .as_deref()
            .ok_or_else(|| AppError::usage("paths.dataset must be set for this command"))?;
        if !path.exists() {
            return Err(AppError::data(format!(
                "dataset {} does not exist",
                path.display()
            )));
        }
        let ds = load_dataset(path, &self.questionnaire)?;
        match &self.waves {
            Some(waves) => Ok(filter_waves(&ds, waves)?),
            None => Ok(ds),
        }
    }

    fn region_map(&self) -> Result<RegionMap, AppError> {
        match &self.cfg.paths.region_map {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| AppError::usage(format!("cannot read {}: {e}", path.display())))?;
                Ok(RegionMap::from_toml(&text)?)
            }
            None => Ok(RegionMap::default_ess32()),
        }
    }

    fn resolve_run_id(&self, store: &RunStore, requested: &Option<String>) -> Result<String, AppError> {
        if let Some(id) = requested {
            return Ok(id.clone());
        }
        let mut ids = store.run_ids();
        ids.sort();
        ids.dedup();
        match ids.len() {
            0 => {
                if self.replay {
                    Err(AppError::data("run store is empty"))
                } else {
                    Ok("run".to_string())
                }
            }
            1 => Ok(ids.remove(0)),
            _ => Err(AppError::usage(format!(
                "store holds several runs ({}); pick one with --run-id",
                ids.join(", ")
            ))),
        }
    }

    fn provenance(&self, with_store: bool, with_dataset: bool) -> String {
        let mut inputs: Vec<(&str, Vec<u8>)> =
            vec![("config", self.config_text.as_bytes().to_vec())];
        if with_store {
            if let Some(path) = self.cfg.paths.run_store.as_deref() {
                inputs.push(("run_store", std::fs::read(path).unwrap_or_default()));
            }
        }
        if with_dataset {
            if let Some(path) = self.cfg.paths.dataset.as_deref() {
                inputs.push(("dataset", std::fs::read(path).unwrap_or_default()));
            }
        }
        let borrowed: Vec<(&str, &[u8])> =
            inputs.iter().map(|(n, b)| (*n, b.as_slice())).collect();
        provenance_header(&borrowed)
    }

    fn emit(&self, name: &str, header: &str, body: &str) -> Result<(), AppError> {
        write_artifact(&self.out_dir, name, &format!("{header}{body}"))
            .map_err(|e| AppError::data(format!("cannot write {name}: {e}")))
    }
}

/// Transport that refuses to run; replay mode never calls it.
struct OfflineTransport;

impl ChatTransport for OfflineTransport {
    fn complete(&self, _prompt: &str) -> Result<String, String> {
        Err("offline: --replay given, refusing network access".to_string())
    }
}

/// Replays or samples each item once, returning per-item batches of parsed
/// values plus stability rows. Items whose batch contains unparsed records
/// are collected as failures.
fn collect_batches(
    ctx: &Ctx,
    store: &mut RunStore,
    run_id: &str,
) -> Result<(BTreeMap<String, Vec<f64>>, Vec<StabilityRow>, Vec<String>), AppError> {
    let mode = if ctx.replay {
        SampleMode::Replay
    } else {
        SampleMode::Live
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.audit.seed.unwrap_or(0));
    let transport: Box<dyn ChatTransport> = if ctx.replay {
        Box::new(OfflineTransport)
    } else {
        Box::new(HttpTransport::new(ctx.cfg.provider.clone())?)
    };
    let mut batches = BTreeMap::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for item in ctx.questionnaire.all_items() {
        let batch = run_samples(
            item,
            ctx.cfg.audit.repetitions,
            &ctx.cfg.provider,
            transport.as_ref(),
            store,
            mode,
            run_id,
            &mut rng,
        )?;
        match (summarize_batch(&batch, ctx.cfg.audit.ci_level), batch.parsed_values()) {
            (Ok(stats), Ok(values)) => {
                let zero_variance = detect_zero_variance(&batch)?;
                rows.push(StabilityRow {
                    item_id: item.id.clone(),
                    stats,
                    zero_variance,
                });
                batches.insert(item.id.clone(), values);
            }
            (Err(e), _) | (_, Err(e)) => failures.push(format!("{}: {e}", item.id)),
        }
    }
    Ok((batches, rows, failures))
}

fn cmd_sample(ctx: &Ctx, run_id: &Option<String>) -> Result<(), AppError> {
    let mut store = ctx.open_store()?;
    let run_id = ctx.resolve_run_id(&store, run_id)?;
    let (_, rows, failures) = collect_batches(ctx, &mut store, &run_id)?;
    let header = ctx.provenance(true, false);
    ctx.emit("stability.txt", &header, &stability_text(&rows))?;
    ctx.emit("stability.csv", &header, &stability_csv(&rows))?;
    print!("{}", stability_text(&rows));
    if !failures.is_empty() {
        return Err(AppError::provider(format!(
            "unusable item batches: {}",
            failures.join("; ")
        )));
    }
    Ok(())
}

fn cmd_parse(ctx: &Ctx, item: &str, text: &Option<String>, file: &Option<PathBuf>) -> Result<(), AppError> {
    let item = ctx
        .questionnaire
        .all_items()
        .find(|i| i.id == item)
        .ok_or_else(|| AppError::usage(format!("unknown item \"{item}\"")))?;
    let text = match (text, file) {
        (Some(t), _) => t.clone(),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(|e| AppError::usage(format!("cannot read {}: {e}", path.display())))?,
        (None, None) => {
            use std::io::Read;
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| AppError::usage(format!("cannot read stdin: {e}")))?;
            buf
        }
    };
    let parsed = parse_answer(&text, &item.scale).map_err(|e| AppError::data(e.to_string()))?;
    println!(
        "{}",
        serde_json::json!({
            "item": item.id,
            "value": parsed.value,
            "strategy": parsed.strategy.as_str(),
            "matched": parsed.matched,
            "approximate": parsed.approximate,
        })
    );
    Ok(())
}

fn cmd_ingest_check(ctx: &Ctx) -> Result<(), AppError> {
    let ds = ctx.dataset()?;
    for item in ctx.questionnaire.all_items() {
        let report = validate_item(item);
        for v in &report.violations {
            println!("questionnaire violation: {v}");
        }
    }
    let p = &ds.provenance;
    println!("source: {}", p.source);
    println!("raw rows: {}", p.raw_rows);
    println!("kept: {}", p.kept);
    println!("dropped (no usable fields): {}", p.dropped_no_usable_fields);
    println!("skipped (unparseable): {}", p.skipped_unparseable);
    for note in &p.notes {
        println!("note: {note}");
    }
    let mut wave_counts: BTreeMap<u8, usize> = BTreeMap::new();
    for rec in &ds.records {
        *wave_counts.entry(rec.wave).or_default() += 1;
    }
    for (wave, count) in wave_counts {
        println!("wave {wave}: {count} records");
    }
    Ok(())
}

/// Per-stratum bias estimation. Failed strata (for example too-small cells)
/// are reported, not fatal, unless every stratum fails.
fn strata_bias(
    ctx: &Ctx,
    dataset: &Dataset,
    batches: &BTreeMap<String, Vec<f64>>,
) -> Result<(Vec<(StratumLabel, Vec<BiasRecord>)>, Vec<String>), AppError> {
    let region_map;
    let map_ref = if ctx.strata.contains(&StratumKey::Macroregion) {
        region_map = ctx.region_map()?;
        Some(&region_map)
    } else {
        None
    };
    let strata = stratify(dataset, &ctx.strata, map_ref)?;
    let est_cfg = ctx.cfg.estimator_config();
    let mut out = Vec::new();
    let mut notes = Vec::new();
    for (label, sub) in &strata {
        match bias_table(&ctx.questionnaire, batches, sub, &est_cfg) {
            Ok(records) => out.push((label.clone(), records)),
            Err(e) => notes.push(format!("stratum {label}: {e}")),
        }
    }
    if out.is_empty() && !strata.is_empty() {
        return Err(AppError::data(format!(
            "no stratum produced bias estimates: {}",
            notes.join("; ")
        )));
    }
    Ok((out, notes))
}

fn stratum_aggregate_rows(
    per_stratum: &[(StratumLabel, Vec<BiasRecord>)],
    ci_level: f64,
) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for (label, records) in per_stratum {
        for mut row in aggregate_bias(records, ci_level) {
            if row.label == "Overall" {
                row.label = label.to_string();
                rows.push(row);
            }
        }
    }
    rows
}

fn cmd_bias(ctx: &Ctx, run_id: &Option<String>) -> Result<(), AppError> {
    let mut store = ctx.open_store()?;
    let run_id = ctx.resolve_run_id(&store, run_id)?;
    let (batches, _, failures) = collect_batches(ctx, &mut store, &run_id)?;
    if !failures.is_empty() {
        return Err(AppError::provider(format!(
            "unusable item batches: {}",
            failures.join("; ")
        )));
    }
    let dataset = ctx.dataset()?;
    let est_cfg = ctx.cfg.estimator_config();
    let records = bias_table(&ctx.questionnaire, &batches, &dataset, &est_cfg)?;
    let aggregates = aggregate_bias(&records, ctx.cfg.audit.ci_level);
    let header = ctx.provenance(true, true);
    ctx.emit("bias.csv", &header, &bias_csv(&records, est_cfg.center))?;
    ctx.emit("bias.txt", &header, &bias_text(&records, est_cfg.center))?;
    ctx.emit("aggregates.txt", &header, &aggregate_text(&aggregates))?;
    ctx.emit("aggregates.csv", &header, &aggregate_csv(&aggregates))?;
    print!("{}", aggregate_text(&aggregates));
    if !ctx.strata.is_empty() {
        let (per_stratum, notes) = strata_bias(ctx, &dataset, &batches)?;
        let rows = stratum_aggregate_rows(&per_stratum, ctx.cfg.audit.ci_level);
        let mut body = aggregate_text(&rows);
        for note in &notes {
            body.push_str(&format!("# skipped: {note}\n"));
        }
        ctx.emit("strata_aggregates.txt", &header, &body)?;
        ctx.emit("strata_aggregates.csv", &header, &aggregate_csv(&rows))?;
    }
    Ok(())
}

fn parse_terms(terms: &str) -> Result<(bool, BTreeSet<StratumKey>), AppError> {
    let mut topic = false;
    let mut keys = BTreeSet::new();
    for part in terms.split(',') {
        match part.trim() {
            "topic" => topic = true,
            other => {
                let key = StratumKey::parse(other).ok_or_else(|| {
                    AppError::usage(format!(
                        "unknown term \"{other}\"; expected topic, country, gender, graduate or macroregion"
                    ))
                })?;
                keys.insert(key);
            }
        }
    }
    if !topic && keys.is_empty() {
        return Err(AppError::usage("--terms must name at least one term"));
    }
    Ok((topic, keys))
}

fn obs_rows_from_records(
    per_stratum: &[(StratumLabel, Vec<BiasRecord>)],
    response: &str,
    with_topic: bool,
    keys: &BTreeSet<StratumKey>,
) -> Result<Vec<ObsRow>, AppError> {
    let mut rows = Vec::new();
    for (label, records) in per_stratum {
        for rec in records {
            let y = match response {
                "spb" => rec.spb,
                "absolute_bias" => rec.absolute_bias,
                other => {
                    return Err(AppError::usage(format!(
                        "--response must be spb or absolute_bias, got {other}"
                    )))
                }
            };
            let mut cats = BTreeMap::new();
            if with_topic {
                cats.insert("topic".to_string(), rec.topic.as_str().to_string());
            }
            for key in keys {
                let (name, value) = match key {
                    StratumKey::Country => ("country", label.country.clone().unwrap_or_default()),
                    StratumKey::Gender => (
                        "gender",
                        label.gender.map(|g| g.as_str().to_string()).unwrap_or_default(),
                    ),
                    StratumKey::Graduate => (
                        "graduate",
                        label
                            .graduate
                            .map(|g| if g { "yes" } else { "no" }.to_string())
                            .unwrap_or_default(),
                    ),
                    StratumKey::Macroregion => (
                        "macroregion",
                        label.macroregion.map(|m| m.to_string()).unwrap_or_default(),
                    ),
                };
                cats.insert(name.to_string(), value);
            }
            rows.push(ObsRow { y, cats });
        }
    }
    Ok(rows)
}

fn run_regression(
    ctx: &Ctx,
    rows: &[ObsRow],
    response: &str,
) -> Result<(String, String), AppError> {
    if rows.is_empty() {
        return Err(AppError::data("no observations for the regression"));
    }
    // deterministic benchmark: the lexicographically first observed level
    let mut terms = Vec::new();
    let term_names: BTreeSet<&String> = rows.iter().flat_map(|r| r.cats.keys()).collect();
    for name in term_names {
        let baseline = rows
            .iter()
            .filter_map(|r| r.cats.get(name))
            .min()
            .expect("term observed")
            .clone();
        terms.push(TermSpec {
            name: name.clone(),
            baseline,
        });
    }
    let benchmark_notes: Vec<String> = terms
        .iter()
        .map(|t| format!("{} = {}", t.name, t.baseline))
        .collect();
    let spec = ModelSpec {
        response: response.to_string(),
        terms,
    };
    let design = build_design(rows, &spec)?;
    let fit = ols_fit(&design)?;
    let hc = if ctx.cfg.audit.hc == 0 {
        HcType::Hc0
    } else {
        HcType::Hc1
    };
    let se = robust_se(&fit, &design, hc);
    let coef_rows = infer(&fit, &se);
    Ok((
        regression_text(&fit, &coef_rows, hc, &benchmark_notes),
        regression_csv(&coef_rows),
    ))
}

fn cmd_regress(
    ctx: &Ctx,
    response: &str,
    terms: &str,
    run_id: &Option<String>,
) -> Result<(), AppError> {
    let (with_topic, keys) = parse_terms(terms)?;
    let mut store = ctx.open_store()?;
    let run_id = ctx.resolve_run_id(&store, run_id)?;
    let (batches, _, failures) = collect_batches(ctx, &mut store, &run_id)?;
    if !failures.is_empty() {
        return Err(AppError::provider(format!(
            "unusable item batches: {}",
            failures.join("; ")
        )));
    }
    let dataset = ctx.dataset()?;
    let per_stratum: Vec<(StratumLabel, Vec<BiasRecord>)> = if keys.is_empty() {
        let est_cfg = ctx.cfg.estimator_config();
        vec![(
            StratumLabel::default(),
            bias_table(&ctx.questionnaire, &batches, &dataset, &est_cfg)?,
        )]
    } else {
        // regression terms dictate the stratification
        let mut ctx_keys = Ctx {
            strata: keys.clone(),
            ..clone_ctx(ctx)
        };
        ctx_keys.strata = keys.clone();
        strata_bias(&ctx_keys, &dataset, &batches)?.0
    };
    let rows = obs_rows_from_records(&per_stratum, response, with_topic, &keys)?;
    let (text, csv) = run_regression(ctx, &rows, response)?;
    let header = ctx.provenance(true, true);
    ctx.emit("regression.txt", &header, &text)?;
    ctx.emit("regression.csv", &header, &csv)?;
    print!("{text}");
    Ok(())
}

fn clone_ctx(ctx: &Ctx) -> Ctx {
    Ctx {
        cfg: ctx.cfg.clone(),
        questionnaire: ctx.questionnaire.clone(),
        out_dir: ctx.out_dir.clone(),
        replay: ctx.replay,
        waves: ctx.waves.clone(),
        strata: ctx.strata.clone(),
        config_text: ctx.config_text.clone(),
    }
}

fn cmd_distributions(ctx: &Ctx) -> Result<(), AppError> {
    let dataset = ctx.dataset()?;
    let header = ctx.provenance(false, true);
    for item in &ctx.questionnaire.items {
        ctx.emit(
            &format!("dist_{}.csv", item.id),
            &header,
            &item_distribution_csv(&dataset, item),
        )?;
    }
    ctx.emit("lr_histogram.csv", &header, &lr_histogram_csv(&dataset))?;
    println!("wrote {} distribution files to {}", ctx.questionnaire.items.len() + 1, ctx.out_dir.display());
    Ok(())
}

/// Demonstration population: inequality-style items with left-leaning
/// groups agreeing more strongly.
fn demo_population_spec(questionnaire: &Questionnaire) -> ingest::synth::PopulationSpec {
    let items = questionnaire
        .items
        .iter()
        .map(|item| ingest::synth::ItemSpecEntry {
            item_id: item.id.clone(),
            per_group: (0..11)
                .map(|g| {
                    let span = (item.scale.max_code - item.scale.min_code) as f64;
                    let mean = item.scale.min_code as f64 + span * (g as f64 / 10.0) * 0.8 + 0.1 * span;
                    ingest::synth::AnswerDist::Discretized { mean, sd: 1.0 }
                })
                .collect(),
        })
        .collect();
    ingest::synth::PopulationSpec {
        items,
        group_sizes: vec![200; 11],
        countries: vec!["IT".into(), "DE".into(), "SE".into(), "PL".into()],
        waves: vec![8, 9, 10],
        fixed_gender: None,
        id_prefix: "demo".to_string(),
    }
}

fn cmd_simulate(ctx: &Ctx, spec_path: &Option<PathBuf>) -> Result<(), AppError> {
    let seed = ctx
        .cfg
        .audit
        .seed
        .ok_or_else(|| AppError::usage("simulate requires --seed (or audit.seed in the config)"))?;
    let spec = match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| AppError::usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| AppError::data(format!("invalid population spec: {e}")))?
        }
        None => demo_population_spec(&ctx.questionnaire),
    };
    let (dataset, truth) =
        ingest::synth::generate_synthetic_population(&spec, &ctx.questionnaire, seed)?;
    std::fs::create_dir_all(&ctx.out_dir)
        .map_err(|e| AppError::data(format!("cannot create out dir: {e}")))?;
    let csv_path = ctx.out_dir.join("synthetic_dataset.csv");
    ingest::synth::write_dataset_csv(&dataset, &ctx.questionnaire, &csv_path)?;
    let truth_json = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    write_artifact(&ctx.out_dir, "ground_truth.json", &truth_json)
        .map_err(|e| AppError::data(e.to_string()))?;
    let spec_json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    write_artifact(&ctx.out_dir, "population_spec.json", &spec_json)
        .map_err(|e| AppError::data(e.to_string()))?;
    println!(
        "wrote {} records to {}",
        dataset.records.len(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_report(ctx: &Ctx, run_id: &Option<String>) -> Result<(), AppError> {
    let mut store = ctx.open_store()?;
    let run_id = ctx.resolve_run_id(&store, run_id)?;
    let (batches, stability_rows, failures) = collect_batches(ctx, &mut store, &run_id)?;
    if !failures.is_empty() {
        return Err(AppError::provider(format!(
            "unusable item batches: {}",
            failures.join("; ")
        )));
    }
    let dataset = ctx.dataset()?;
    let est_cfg = ctx.cfg.estimator_config();
    let header_store = ctx.provenance(true, false);
    let header_both = ctx.provenance(true, true);
    let header_data = ctx.provenance(false, true);

    ctx.emit("stability.txt", &header_store, &stability_text(&stability_rows))?;
    ctx.emit("stability.csv", &header_store, &stability_csv(&stability_rows))?;

    let records = bias_table(&ctx.questionnaire, &batches, &dataset, &est_cfg)?;
    let aggregates = aggregate_bias(&records, ctx.cfg.audit.ci_level);
    ctx.emit("bias.csv", &header_both, &bias_csv(&records, est_cfg.center))?;
    ctx.emit("bias.txt", &header_both, &bias_text(&records, est_cfg.center))?;
    ctx.emit("aggregates.txt", &header_both, &aggregate_text(&aggregates))?;
    ctx.emit("aggregates.csv", &header_both, &aggregate_csv(&aggregates))?;

    if !ctx.strata.is_empty() {
        let (per_stratum, notes) = strata_bias(ctx, &dataset, &batches)?;
        let rows = stratum_aggregate_rows(&per_stratum, ctx.cfg.audit.ci_level);
        let mut body = aggregate_text(&rows);
        for note in &notes {
            body.push_str(&format!("# skipped: {note}\n"));
        }
        ctx.emit("strata_aggregates.txt", &header_both, &body)?;
        ctx.emit("strata_aggregates.csv", &header_both, &aggregate_csv(&rows))?;
    }

    // topic-only decomposition of spb
    let overall = vec![(StratumLabel::default(), records.clone())];
    let rows = obs_rows_from_records(&overall, "spb", true, &BTreeSet::new())?;
    let (text, csv) = run_regression(ctx, &rows, "spb")?;
    ctx.emit("regression.txt", &header_both, &text)?;
    ctx.emit("regression.csv", &header_both, &csv)?;

    for item in &ctx.questionnaire.items {
        ctx.emit(
            &format!("dist_{}.csv", item.id),
            &header_data,
            &item_distribution_csv(&dataset, item),
        )?;
    }
    ctx.emit("lr_histogram.csv", &header_data, &lr_histogram_csv(&dataset))?;
    println!("report written to {}", ctx.out_dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), AppError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| AppError::usage(format!("cannot configure thread pool: {e}")))?;
    }
    let ctx = build_ctx(cli)?;
    match &cli.cmd {
        Cmd::Sample { run_id } => cmd_sample(&ctx, run_id),
        Cmd::Parse { item, text, file } => cmd_parse(&ctx, item, text, file),
        Cmd::IngestCheck => cmd_ingest_check(&ctx),
        Cmd::Bias { run_id } => cmd_bias(&ctx, run_id),
        Cmd::Regress {
            response,
            terms,
            run_id,
        } => cmd_regress(&ctx, response, terms, run_id),
        Cmd::Distributions => cmd_distributions(&ctx),
        Cmd::Simulate { spec } => cmd_simulate(&ctx, spec),
        Cmd::Report { run_id } => cmd_report(&ctx, run_id),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
