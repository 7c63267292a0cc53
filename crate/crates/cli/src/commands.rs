use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;

use trajgp::cluster::{
    adjusted_rand_index, agglomerative_cluster, build_profiles, cluster_summaries, model_select,
    normalized_mutual_info, stability_protocol, write_assignments, write_summaries, ComparisonRow, Linkage, Method,
    StabilityReport,
};
use trajgp::data::{
    clean_encounters, generate_synthetic_cohort, prepare_dataset, read_csv, read_dataset, read_jsonl, read_labels,
    write_dataset, write_jsonl, write_labels, CleanPatient, FeatureGroup, IngestReport, PatientSequence, SkippedLine,
    SplitDataset,
};
use trajgp::evaluation::{
    ablation_study, ablation_text, aligned_table, evaluate_model, importance_text, permutation_importance,
    run_seed_protocol, seed_summary_text, to_json, EvalError, MetricReport, ModelComparison,
};
use trajgp::extractors::Arch;
use trajgp::model::{train_dkl, DklModel, Head, ModelError};

use crate::config::{ExperimentConfig, METRIC_NAMES};
use crate::error::CliError;
use crate::manifest::RunManifest;

/// Shared state of one command: effective configuration, output directory
/// and the files written so far.
pub struct Run {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub out: PathBuf,
    started: DateTime<Utc>,
    artifacts: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &'static str, config: ExperimentConfig, out: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        Ok(Self {
            command,
            config,
            out,
            started: Utc::now(),
            artifacts: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(path.clone());
        Ok(path)
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    ) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))?;
        f(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(path.clone());
        Ok(path)
    }

    fn record(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.artifacts.extend(paths);
    }

    pub fn finish(self) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: self.config.hash(),
            seed: self.config.seed,
            started_at: self.started,
            finished_at: Utc::now(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: self.artifacts,
        };
        let path = manifest.write(&self.out)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("{what} not found at expected path {}", path.display())));
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<DklModel, CliError> {
    require_file(path, "model checkpoint")?;
    Ok(DklModel::load(path)?)
}

fn load_dataset(dir: &Path, config: &ExperimentConfig) -> Result<SplitDataset, CliError> {
    require_file(&dir.join("layout.json"), "preprocessed dataset")?;
    let ds = read_dataset(dir)?;
    if ds.layout != config.layout() {
        return Err(CliError::Config(format!(
            "dataset in {} has embedding_dim {}, configuration expects {}",
            dir.display(),
            ds.layout.embedding_dim,
            config.layout().embedding_dim
        )));
    }
    Ok(ds)
}

fn load_patients(input: &Path, config: &ExperimentConfig) -> Result<(Vec<CleanPatient>, IngestReport, Vec<SkippedLine>), CliError> {
    require_file(input, "encounter file")?;
    let file = File::open(input).map_err(|e| CliError::io(input, e))?;
    let ingested = if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(file)?
    } else {
        read_jsonl(BufReader::new(file))?
    };
    let (patients, report) = clean_encounters(&ingested.encounters, &config.layout(), &config.data.preprocess.acuity_codes);
    Ok((patients, report, ingested.skipped))
}

pub fn parse_groups(list: &str) -> Result<Vec<FeatureGroup>, CliError> {
    list.split(',')
        .map(|g| g.trim().parse::<FeatureGroup>().map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

pub fn generate(mut run: Run) -> Result<(), CliError> {
    let n = run.config.data.n_patients;
    if n < 3 {
        return Err(CliError::Config(format!("data.n_patients must be at least 3, got {n}")));
    }
    let cohort = generate_synthetic_cohort(n, run.config.seed, &run.config.data.synthetic)?;
    run.write_with("encounters.jsonl", |w| {
        write_jsonl(w, &cohort.encounters).map_err(|e| CliError::Data(e.to_string()))
    })?;
    run.write_with("labels.csv", |w| Ok(write_labels(w, &cohort.labels)?))?;
    log::info!("generated {} encounters for {n} patients", cohort.encounters.len());
    run.finish()
}

#[derive(Serialize)]
struct PreprocessReport<'a> {
    ingest: &'a IngestReport,
    skipped_lines: &'a [SkippedLine],
    train_patients: usize,
    val_patients: usize,
    test_patients: usize,
}

pub fn preprocess(mut run: Run, input: &Path) -> Result<(), CliError> {
    let (patients, report, skipped) = load_patients(input, &run.config)?;
    let ds = prepare_dataset(&patients, &run.config.layout(), run.config.seed)?;
    let files = write_dataset(&run.out, &ds)?;
    run.record([files.layout, files.stats]);
    run.record(files.splits);
    run.record(files.shards);
    let summary = PreprocessReport {
        ingest: &report,
        skipped_lines: &skipped,
        train_patients: ds.train.len(),
        val_patients: ds.val.len(),
        test_patients: ds.test.len(),
    };
    run.write("ingest_report.json", &to_json(&summary))?;
    run.finish()
}

pub fn train(mut run: Run, data: &Path, resume: bool) -> Result<(), CliError> {
    let model_path = run.path("model.json");
    if resume {
        let manifest_path = RunManifest::path(&run.out, "train");
        require_file(&manifest_path, "training manifest to resume from")?;
        let previous = RunManifest::read(&manifest_path)?;
        let hash = run.config.hash();
        if previous.config_hash != hash {
            return Err(CliError::Config(format!(
                "cannot resume: configuration hash {hash} differs from the recorded {}",
                previous.config_hash
            )));
        }
        load_model(&model_path)?;
        log::info!("training already complete for this configuration; keeping {}", model_path.display());
        return Ok(());
    }
    let ds = load_dataset(data, &run.config)?;
    let cfg = run.config.train_config();
    match train_dkl(&cfg, &ds.train, &ds.val) {
        Ok(outcome) => {
            write_log(&mut run, &outcome.log)?;
            outcome.model.save(&model_path)?;
            run.record([model_path]);
            log::info!("best epoch {}", outcome.best_epoch);
            run.finish()
        }
        Err(ModelError::Diverged {
            epoch,
            reason,
            last_good,
        }) => {
            write_log(&mut run, &last_good.log)?;
            let path = run.path("model_last_good.json");
            last_good.model.save(&path)?;
            run.record([path.clone()]);
            run.finish()?;
            Err(CliError::Numerical(format!(
                "training diverged at epoch {epoch} ({reason}); last good parameters saved to {}",
                path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn write_log(run: &mut Run, log: &[trajgp::model::LogEntry]) -> Result<(), CliError> {
    let lines: String = log
        .iter()
        .map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n")
        .collect();
    run.write("train_log.jsonl", &lines)?;
    Ok(())
}

fn metric_cells(r: &MetricReport, metrics: &[String]) -> Vec<String> {
    metrics
        .iter()
        .map(|m| match m.as_str() {
            "mse" => format!("{:.4}", r.mse),
            "mae" => format!("{:.4}", r.mae),
            "r2" => r.r2.map_or_else(|| "n/a".into(), |v| format!("{v:.4}")),
            "clinical_accuracy" => format!("{:.2}", r.clinical_accuracy),
            "crps" => format!("{:.4}", r.crps),
            _ => format!("{:.2}", r.coverage95),
        })
        .collect()
}

fn metric_header(m: &str) -> &'static str {
    match m {
        "mse" => "MSE",
        "mae" => "MAE",
        "r2" => "R²",
        "clinical_accuracy" => "±0.1 (%)",
        "crps" => "CRPS",
        _ => "Cov95 (%)",
    }
}

fn ordered_metrics(config: &ExperimentConfig) -> Vec<String> {
    METRIC_NAMES
        .iter()
        .filter(|m| config.metrics.iter().any(|c| c == *m))
        .map(|m| m.to_string())
        .collect()
}

#[derive(Serialize)]
struct EvaluationReport {
    arch: Arch,
    head: Head,
    comparison: ModelComparison,
}

fn model_label(model: &DklModel) -> String {
    format!("DKL {} ({})", model.extractor.arch, model.head)
}

pub fn evaluate(mut run: Run, data: &Path, model_path: &Path) -> Result<(), CliError> {
    let ds = load_dataset(data, &run.config)?;
    let model = load_model(model_path)?;
    let comparison = evaluate_model(&model, &ds)?;
    let report = EvaluationReport {
        arch: model.extractor.arch,
        head: model.head,
        comparison,
    };
    run.write("evaluation.json", &to_json(&report))?;
    let metrics = ordered_metrics(&run.config);
    let mut headers = vec!["Model"];
    headers.extend(metrics.iter().map(|m| metric_header(m)));
    headers.push("N");
    let row = |name: String, r: &MetricReport| {
        let mut cells = vec![name];
        cells.extend(metric_cells(r, &metrics));
        cells.push(r.n_samples.to_string());
        cells
    };
    let text = aligned_table(
        &headers,
        &[row(model_label(&model), &comparison.model), row("Constant mean".into(), &comparison.baseline)],
    );
    run.write("evaluation.txt", &text)?;
    print!("{text}");
    run.finish()
}

pub fn protocol(mut run: Run, input: &Path) -> Result<(), CliError> {
    let (patients, _, _) = load_patients(input, &run.config)?;
    let cfg = run.config.train_config();
    match run_seed_protocol(&patients, &run.config.layout(), &cfg, &run.config.seeds) {
        Ok(summary) => {
            run.write("seed_protocol.json", &to_json(&summary))?;
            let label = format!("DKL {} ({})", cfg.extractor.arch, cfg.head);
            let text = seed_summary_text(&label, &summary);
            run.write("seed_protocol.txt", &text)?;
            print!("{text}");
            run.finish()
        }
        Err(EvalError::SeedFailed { seed, source, partial }) => {
            run.write("seed_protocol_partial.json", &to_json(&partial))?;
            run.finish()?;
            Err(CliError::from(EvalError::SeedFailed { seed, source, partial }))
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct TruthAgreement {
    chosen_ari: f64,
    chosen_nmi: f64,
    ward_ari: f64,
    ward_nmi: f64,
}

#[derive(Serialize)]
struct ClusterReport {
    n_patients: usize,
    chosen_method: Method,
    chosen_c: usize,
    rows: Vec<ComparisonRow>,
    stability: StabilityReport,
    truth: Option<TruthAgreement>,
}

fn comparison_table(rows: &[ComparisonRow], chosen: (Method, usize)) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let sizes: Vec<String> = r.sizes.iter().map(usize::to_string).collect();
            let mark = if (r.method, r.c) == chosen { "*" } else { "" };
            if let Some(reason) = &r.excluded {
                return vec![
                    format!("{}{mark}", r.method),
                    r.c.to_string(),
                    "-".into(),
                    "-".into(),
                    "-".into(),
                    sizes.join("/"),
                    format!("excluded: {reason}"),
                ];
            }
            vec![
                format!("{}{mark}", r.method),
                r.c.to_string(),
                format!("{:.4}", r.silhouette),
                format!("{:.4}", r.davies_bouldin),
                format!("{:.2}", r.calinski_harabasz),
                sizes.join("/"),
                if r.imbalanced { "yes".into() } else { "no".into() },
            ]
        })
        .collect();
    aligned_table(
        &["Method", "c", "Silhouette", "Davies-Bouldin", "Calinski-Harabasz", "Sizes", "Imbalanced"],
        &cells,
    )
}

pub fn cluster(mut run: Run, data: &Path, model_path: &Path, labels: Option<&Path>) -> Result<(), CliError> {
    let ds = load_dataset(data, &run.config)?;
    let model = load_model(model_path)?;
    let sequences: Vec<PatientSequence> = ds.all().cloned().collect();
    let outputs = model.patient_outputs(&sequences)?;
    let profiles = build_profiles(&outputs, &run.config.profile_config())?;
    let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.values.clone()).collect();
    let ids: Vec<String> = profiles.iter().map(|p| p.patient_id.clone()).collect();
    let selection = model_select(&points, &run.config.select_config())?;
    let stability = stability_protocol(&points, selection.method, selection.c, &run.config.stability_config())?;

    let truth = match labels {
        None => None,
        Some(path) => {
            require_file(path, "ground-truth labels")?;
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            let known: std::collections::BTreeMap<String, usize> = read_labels(file)?
                .into_iter()
                .map(|l| (l.patient_id, l.archetype.index()))
                .collect();
            let truth: Vec<usize> = ids
                .iter()
                .map(|id| {
                    known
                        .get(id)
                        .copied()
                        .ok_or_else(|| CliError::Data(format!("no ground-truth label for patient {id}")))
                })
                .collect::<Result<_, _>>()?;
            let ward = agglomerative_cluster(&points, selection.c, Linkage::Ward)?;
            Some(TruthAgreement {
                chosen_ari: adjusted_rand_index(&selection.labels.labels, &truth),
                chosen_nmi: normalized_mutual_info(&selection.labels.labels, &truth),
                ward_ari: adjusted_rand_index(&ward.labels, &truth),
                ward_nmi: normalized_mutual_info(&ward.labels, &truth),
            })
        }
    };

    let labels = &selection.labels.labels;
    run.write_with("assignments.csv", |w| Ok(write_assignments(w, &ids, labels)?))?;
    let mean_channel = model.latent_dim();
    let summaries = cluster_summaries(&profiles, labels, mean_channel);
    run.write_with("cluster_summaries.csv", |w| Ok(write_summaries(w, &summaries)?))?;
    let noise = match model.head {
        Head::Gp => model.svgp_state()?.noise,
        Head::Mle => model.mle_variance.unwrap_or(0.0),
    };
    run.write_with("trajectories.csv", |w| {
        let m = model.latent_dim();
        let latent_cols: Vec<String> = (0..m).map(|k| format!("latent_{k}")).collect();
        let io = |e: std::io::Error| CliError::Data(e.to_string());
        writeln!(w, "patient_id,record,time_days,{},mean,variance_obs,variance_latent", latent_cols.join(",")).map_err(io)?;
        for o in &outputs {
            for i in 0..o.times.len() {
                let latents: Vec<String> = o.latents[i].iter().map(|v| v.to_string()).collect();
                writeln!(
                    w,
                    "{},{i},{},{},{},{},{}",
                    o.patient_id,
                    o.times[i],
                    latents.join(","),
                    o.means[i],
                    o.variances[i],
                    (o.variances[i] - noise).max(0.0)
                )
                .map_err(io)?;
            }
        }
        Ok(())
    })?;

    let report = ClusterReport {
        n_patients: ids.len(),
        chosen_method: selection.method,
        chosen_c: selection.c,
        rows: selection.rows.clone(),
        stability,
        truth,
    };
    run.write("cluster_report.json", &to_json(&report))?;
    let mut text = comparison_table(&selection.rows, (selection.method, selection.c));
    text.push_str(&format!(
        "\nChosen: {} with c = {}\nStability over {} runs: ARI {:.4} ± {:.4}, NMI {:.4} ± {:.4}\n",
        selection.method,
        selection.c,
        report.stability.n_runs,
        report.stability.ari_mean,
        report.stability.ari_std,
        report.stability.nmi_mean,
        report.stability.nmi_std
    ));
    if let Some(t) = &report.truth {
        text.push_str(&format!(
            "Agreement with ground truth: chosen ARI {:.4} NMI {:.4}; ward ARI {:.4} NMI {:.4}\n",
            t.chosen_ari, t.chosen_nmi, t.ward_ari, t.ward_nmi
        ));
    }
    run.write("cluster_report.txt", &text)?;
    print!("{text}");
    run.finish()
}

pub fn ablate(mut run: Run, input: &Path, groups: &[FeatureGroup]) -> Result<(), CliError> {
    let (patients, _, _) = load_patients(input, &run.config)?;
    let table = ablation_study(
        &patients,
        &run.config.layout(),
        &run.config.train_config(),
        groups,
        run.config.seed,
    )?;
    run.write("ablation.json", &to_json(&table))?;
    let text = ablation_text(&table);
    run.write("ablation.txt", &text)?;
    print!("{text}");
    run.finish()
}

pub fn importance(mut run: Run, data: &Path, model_path: &Path, groups: &[FeatureGroup]) -> Result<(), CliError> {
    let ds = load_dataset(data, &run.config)?;
    let model = load_model(model_path)?;
    let reports = groups
        .iter()
        .map(|&g| permutation_importance(&model, &ds.test, &ds.layout, g, run.config.seed))
        .collect::<Result<Vec<_>, _>>()?;
    run.write("importance.json", &to_json(&reports))?;
    let text = importance_text(&reports);
    run.write("importance.txt", &text)?;
    print!("{text}");
    run.finish()
}
