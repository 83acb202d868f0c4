//! The pipeline stages and the run directory they share.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use ews_core::alarm::EventPrReport;
use ews_core::artifacts::{
    fio2_from_pf_csv, predictions_to_csv, COHORT_DIR, EVENTS_DIR, PF_DIR, PREDICTIONS_DIR,
};
use ews_core::cohort::{generate_synthetic_cohort, load_cohort, save_cohort, Cohort, GriddedStay};
use ews_core::features::{build_matrix, FeatureMatrix};
use ews_core::labeler::{events_from_json, events_to_json, labels_from_csv, labels_to_csv, Label};
use ews_core::oxy::{
    evaluate_pao2_models, filter_abga_dataset, synthetic_abga, train_mlp, training_examples, MlpModel, NamedEstimator,
    FULL_NN_INPUTS, SPO2_NN_INPUTS,
};
use ews_core::pf::{EstimatorKind, Pao2Estimator};
use ews_core::pipeline::{evaluate_splits, out_of_sample_scores, prepare_cohort, train_splits, ExperimentReport, SplitModels, StayTimeline};
use ews_core::variables::FIO2_ESTIMATE;
use ews_monitor::MonitorConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::manifest::{hash_json, Manifest, StageRecord, StageStatus};
use crate::plots::{lead_histogram_svg, pr_curves_svg};
use crate::CliError;

pub const LABELS_DIR: &str = "labels";
pub const FEATURES_FILE: &str = "features/features.csv";
pub const PAO2_MODEL_FILE: &str = "models/pao2.json";
pub const EWS_MODELS_FILE: &str = "models/ews_splits.json";
pub const REPORTS_DIR: &str = "reports";

pub const SYNTH: &str = "synth";
pub const TRAIN_PAO2: &str = "train-pao2";
pub const LABEL: &str = "label";
pub const FEATURIZE: &str = "featurize";
pub const TRAIN_EWS: &str = "train-ews";
pub const EVALUATE: &str = "evaluate";

/// Configuration hash per stage, each covering its upstream stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageHashes {
    pub synth: String,
    pub train_pao2: String,
    pub label: String,
    pub featurize: String,
    pub train_ews: String,
    pub evaluate: String,
}

fn file_hash(path: Option<&PathBuf>) -> Result<Option<String>, CliError> {
    path.map(|p| fs::read(p).map(|b| hash_json(&b)).map_err(|e| CliError::io(p, e))).transpose()
}

impl StageHashes {
    pub fn new(cfg: &PipelineConfig) -> Result<Self, CliError> {
        let synth = hash_json(&(SYNTH, cfg.grid_step, &cfg.synth));
        let train_pao2 = hash_json(&(TRAIN_PAO2, cfg.pao2_seed(0), &cfg.pao2));
        let network_hash = (cfg.label.estimator != EstimatorKind::Pnl).then_some(&train_pao2);
        let label = hash_json(&(LABEL, &synth, network_hash, &cfg.label.estimator, &cfg.label.labeler, file_hash(cfg.label.fio2_table.as_ref())?));
        let featurize = hash_json(&(FEATURIZE, &label, cfg.feature_config()?));
        let e = &cfg.experiment;
        let train_ews = hash_json(&(TRAIN_EWS, &featurize, e.n_splits, e.train_fraction, e.validation_fraction, e.seed, &e.gbdt, &e.baseline_c));
        let evaluate = hash_json(&(EVALUATE, &train_ews, &e.alarm, e.spo2_thresholds, e.operating_recall));
        Ok(StageHashes { synth, train_pao2, label, featurize, train_ews, evaluate })
    }
}

#[derive(Serialize, Deserialize)]
struct Pao2Artifact {
    config_hash: String,
    kind: EstimatorKind,
    model: MlpModel,
}

#[derive(Serialize, Deserialize)]
struct EwsArtifact {
    config_hash: String,
    models: Vec<SplitModels>,
}

#[derive(Serialize)]
struct ReportArtifact<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    report: &'a ExperimentReport,
}

pub struct Run {
    pub dir: PathBuf,
    pub cfg: PipelineConfig,
    pub hashes: StageHashes,
    manifest: Manifest,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes")
}

impl Run {
    pub fn open(cfg: PipelineConfig) -> Result<Self, CliError> {
        let dir = cfg.run_dir.clone();
        let hashes = StageHashes::new(&cfg)?;
        let manifest = Manifest::load_or_new(&dir)?;
        Ok(Run { dir, cfg, hashes, manifest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Marks `stage` incomplete and clears its previous outputs.
    fn begin(&mut self, stage: &str, hash: &str, outputs: &[&str]) -> Result<(), CliError> {
        log::info!("{stage}: starting (config {})", &hash[..12]);
        for o in outputs {
            let p = self.dir.join(o);
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
            } else if p.exists() {
                fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
            }
        }
        self.manifest.config_hash = hash_json(&self.cfg);
        self.manifest.stages.insert(
            stage.to_string(),
            StageRecord { status: StageStatus::Incomplete, config_hash: hash.to_string(), outputs: vec![], summary: json!(null) },
        );
        self.manifest.save(&self.dir)
    }

    fn finish(&mut self, stage: &str, hash: &str, outputs: &[&str], summary: serde_json::Value) -> Result<(), CliError> {
        log::info!("{stage}: done {summary}");
        self.manifest.stages.insert(
            stage.to_string(),
            StageRecord {
                status: StageStatus::Complete,
                config_hash: hash.to_string(),
                outputs: outputs.iter().map(|s| s.to_string()).collect(),
                summary,
            },
        );
        self.manifest.save(&self.dir)
    }

    fn require(&self, stage: &str, hash: &str, artifact: &str) -> Result<(), CliError> {
        self.manifest.require(&self.dir, stage, hash, artifact).map(|_| ())
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn load_cohort(&self) -> Result<Cohort, CliError> {
        let load = load_cohort(&self.path(COHORT_DIR), self.cfg.grid_step)?;
        for w in &load.warnings {
            log::warn!("{w:?}");
        }
        Ok(load.cohort)
    }

    /// Stay ids in the labeled cohort, sorted.
    fn labeled_ids(&self) -> Result<Vec<String>, CliError> {
        let dir = self.path(LABELS_DIR);
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn labels(&self, id: &str) -> Result<Vec<Label>, CliError> {
        let path = self.path(LABELS_DIR).join(format!("{id}.csv"));
        Ok(labels_from_csv(&read(&path)?, &path)?.into_iter().map(|(_, l)| l).collect())
    }

    pub fn synth(&mut self) -> Result<(), CliError> {
        let hash = self.hashes.synth.clone();
        self.begin(SYNTH, &hash, &[COHORT_DIR])?;
        let s = &self.cfg.synth;
        let cohort = generate_synthetic_cohort(s.seed, s.n_stays, s)?;
        save_cohort(&cohort, &self.path(COHORT_DIR))?;
        let summary = json!({"stays": cohort.len(), "stays_with_planted_episodes": cohort.truth.len()});
        self.finish(SYNTH, &hash, &[COHORT_DIR], summary)
    }

    pub fn train_pao2(&mut self) -> Result<(), CliError> {
        let hash = self.hashes.train_pao2.clone();
        let report_file = format!("{REPORTS_DIR}/pao2_errors.csv");
        self.begin(TRAIN_PAO2, &hash, &[PAO2_MODEL_FILE, &report_file])?;
        let p = &self.cfg.pao2;
        let (train, _) = filter_abga_dataset(synthetic_abga(self.cfg.pao2_seed(0), p.n_train, &p.abga));
        let (valid, _) = filter_abga_dataset(synthetic_abga(self.cfg.pao2_seed(1), p.n_valid, &p.abga));
        let (test, _) = filter_abga_dataset(synthetic_abga(self.cfg.pao2_seed(2), p.n_test, &p.abga));
        let inputs = if p.network == EstimatorKind::Fullnn { FULL_NN_INPUTS } else { SPO2_NN_INPUTS };
        let names: Vec<String> = inputs.iter().map(|s| s.to_string()).collect();
        let model = train_mlp(
            &training_examples(&train, &names, p.hyperparams.gamma),
            &training_examples(&valid, &names, p.hyperparams.gamma),
            &names,
            &p.hyperparams,
            &p.training,
            self.cfg.pao2_seed(3),
        )?;
        let name = p.network.to_string();
        let report = evaluate_pao2_models(&[NamedEstimator::pnl(), NamedEstimator::network(&name, &model)], &test);
        write(&self.path(&report_file), report.to_csv())?;
        let overall = |m: &str| report.row(m, (0.0, 100.0)).and_then(|r| r.median_abs_error);
        let summary = json!({
            "network": name,
            "train_samples": train.len(),
            "test_samples": test.len(),
            "median_abs_error_network": overall(&name),
            "median_abs_error_pnl": overall("pnl"),
        });
        let artifact = Pao2Artifact { config_hash: hash.clone(), kind: p.network, model };
        write(&self.path(PAO2_MODEL_FILE), json_pretty(&artifact))?;
        self.finish(TRAIN_PAO2, &hash, &[PAO2_MODEL_FILE, &report_file], summary)
    }

    fn estimator(&self) -> Result<Pao2Estimator, CliError> {
        let kind = self.cfg.label.estimator;
        if kind == EstimatorKind::Pnl {
            return Ok(Pao2Estimator::Pnl);
        }
        self.require(TRAIN_PAO2, &self.hashes.train_pao2, PAO2_MODEL_FILE)?;
        let path = self.path(PAO2_MODEL_FILE);
        let a: Pao2Artifact = serde_json::from_str(&read(&path)?).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
        if a.kind != kind {
            return Err(CliError::Config(format!("label.estimator is {kind} but {} holds a {} network", path.display(), a.kind)));
        }
        a.model.validate()?;
        Ok(Pao2Estimator::Network { kind, model: a.model })
    }

    pub fn label(&mut self) -> Result<(), CliError> {
        self.require(SYNTH, &self.hashes.synth, COHORT_DIR)?;
        let estimator = self.estimator()?;
        let hash = self.hashes.label.clone();
        let outputs = [PF_DIR, EVENTS_DIR, LABELS_DIR];
        self.begin(LABEL, &hash, &outputs)?;
        let cohort = self.load_cohort()?;
        let prepared = prepare_cohort(&cohort.stays, &estimator, &self.cfg.fio2_table()?, &self.cfg.label.labeler)?;
        for o in outputs {
            fs::create_dir_all(self.path(o)).map_err(|e| CliError::io(&self.path(o), e))?;
        }
        for p in &prepared {
            let id = &p.stay.stay_id;
            write(&self.path(PF_DIR).join(format!("{id}.csv")), p.track.to_csv())?;
            write(&self.path(EVENTS_DIR).join(format!("{id}.json")), events_to_json(&p.labels.events)?)?;
            write(&self.path(LABELS_DIR).join(format!("{id}.csv")), labels_to_csv(&p.labels.labels, p.stay.grid_step))?;
        }
        let count = |l: Label| prepared.iter().map(|p| p.labels.labels.iter().filter(|&&x| x == l).count()).sum::<usize>();
        let summary = json!({
            "estimator": estimator.kind().to_string(),
            "stays": prepared.len(),
            "events": prepared.iter().map(|p| p.labels.events.len()).sum::<usize>(),
            "positive_points": count(Label::Positive),
            "negative_points": count(Label::Negative),
            "undefined_points": count(Label::Undefined),
            "ventilated_points_without_peep": prepared.iter().map(|p| p.labels.n_data_quality_flags).sum::<usize>(),
        });
        self.finish(LABEL, &hash, &outputs, summary)
    }

    pub fn featurize(&mut self) -> Result<(), CliError> {
        self.require(LABEL, &self.hashes.label, LABELS_DIR)?;
        let hash = self.hashes.featurize.clone();
        self.begin(FEATURIZE, &hash, &[FEATURES_FILE])?;
        let features = self.cfg.feature_config()?;
        let mut stays: Vec<(GriddedStay, Vec<Label>)> = Vec::new();
        for mut stay in self.load_cohort()?.stays {
            let id = stay.stay_id.clone();
            let pf_path = self.path(PF_DIR).join(format!("{id}.csv"));
            let fio2 = fio2_from_pf_csv(&read(&pf_path)?, &pf_path)?;
            let labels = self.labels(&id)?;
            if fio2.len() != stay.n_grid() || labels.len() != stay.n_grid() {
                return Err(CliError::Artifact(format!("stay {id}: label or P/F files do not match the cohort grid")));
            }
            stay.set_derived(FIO2_ESTIMATE, fio2);
            stays.push((stay, labels));
        }
        let pairs: Vec<(&GriddedStay, &[Label])> = stays.iter().map(|(s, l)| (s, &l[..])).collect();
        let matrix = build_matrix(&pairs, &features)?;
        let path = self.path(FEATURES_FILE);
        fs::create_dir_all(path.parent().expect("nested path")).map_err(|e| CliError::io(&path, e))?;
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        matrix.write_csv(std::io::BufWriter::new(file))?;
        let summary = json!({"rows": matrix.n_rows(), "columns": matrix.n_cols(), "positive_fraction": matrix.prevalence()});
        self.finish(FEATURIZE, &hash, &[FEATURES_FILE], summary)
    }

    fn matrix(&self) -> Result<FeatureMatrix, CliError> {
        let path = self.path(FEATURES_FILE);
        let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(FeatureMatrix::read_csv(BufReader::new(file), &path)?)
    }

    pub fn train_ews(&mut self) -> Result<(), CliError> {
        self.require(FEATURIZE, &self.hashes.featurize, FEATURES_FILE)?;
        let hash = self.hashes.train_ews.clone();
        self.begin(TRAIN_EWS, &hash, &[EWS_MODELS_FILE])?;
        let matrix = self.matrix()?;
        let ids = self.labeled_ids()?;
        let models = train_splits(&matrix, &ids, &self.cfg.experiment)?;
        let summary = json!({
            "splits": models.len(),
            "best_iterations": models.iter().map(|m| m.ews.best_iteration).collect::<Vec<_>>(),
            "baseline_c_leaves": models.iter().map(|m| m.baseline_c.tree.n_leaves()).collect::<Vec<_>>(),
        });
        write(&self.path(EWS_MODELS_FILE), serde_json::to_string(&EwsArtifact { config_hash: hash.clone(), models })
            .map_err(|e| CliError::Artifact(e.to_string()))?)?;
        self.finish(TRAIN_EWS, &hash, &[EWS_MODELS_FILE], summary)
    }

    fn timelines(&self, ids: &[String]) -> Result<Vec<StayTimeline>, CliError> {
        ids.iter()
            .map(|id| {
                let events_path = self.path(EVENTS_DIR).join(format!("{id}.json"));
                Ok(StayTimeline {
                    stay_id: id.clone(),
                    grid_step: self.cfg.grid_step,
                    n_grid: self.labels(id)?.len(),
                    events: events_from_json(&read(&events_path)?)?,
                })
            })
            .collect()
    }

    pub fn evaluate(&mut self) -> Result<(), CliError> {
        self.require(TRAIN_EWS, &self.hashes.train_ews, EWS_MODELS_FILE)?;
        self.require(FEATURIZE, &self.hashes.featurize, FEATURES_FILE)?;
        let models_path = self.path(EWS_MODELS_FILE);
        let artifact: EwsArtifact =
            serde_json::from_str(&read(&models_path)?).map_err(|e| CliError::Artifact(format!("{}: {e}", models_path.display())))?;
        if artifact.config_hash != self.hashes.train_ews {
            return Err(CliError::Mismatch { stage: TRAIN_EWS.into(), found: artifact.config_hash, expected: self.hashes.train_ews.clone() });
        }
        let hash = self.hashes.evaluate.clone();
        let files = ["experiment.json", "event_pr.csv", "pr_points.csv", "timing.json", "pr_curve.svg", "lead_times.svg"]
            .map(|f| format!("{REPORTS_DIR}/{f}"));
        let mut outputs: Vec<&str> = files.iter().map(String::as_str).collect();
        outputs.push(PREDICTIONS_DIR);
        self.begin(EVALUATE, &hash, &outputs)?;

        let matrix = self.matrix()?;
        let timelines = self.timelines(&self.labeled_ids()?)?;
        let report = evaluate_splits(&matrix, &timelines, &self.cfg.experiment, &artifact.models)?;
        let reports: [&EventPrReport; 4] = report.reports();
        write(&self.path(&files[0]), json_pretty(&ReportArtifact { config_hash: &hash, report: &report }))?;
        let mut curve_csv = String::new();
        let mut points_csv = String::new();
        for (k, r) in reports.iter().enumerate() {
            let skip = usize::from(k > 0);
            curve_csv.extend(r.to_csv().lines().skip(skip).map(|l| format!("{l}\n")));
            points_csv.extend(r.points_csv().lines().skip(skip).map(|l| format!("{l}\n")));
        }
        write(&self.path(&files[1]), curve_csv)?;
        write(&self.path(&files[2]), points_csv)?;
        write(&self.path(&files[3]), json_pretty(&report.timing))?;
        write(&self.path(&files[4]), pr_curves_svg(&reports))?;
        write(&self.path(&files[5]), lead_histogram_svg(&report.timing.leads_s, self.cfg.experiment.alarm.horizon))?;

        let scores = out_of_sample_scores(&matrix, &timelines, &artifact.models)?;
        fs::create_dir_all(self.path(PREDICTIONS_DIR)).map_err(|e| CliError::io(&self.path(PREDICTIONS_DIR), e))?;
        for s in &scores {
            write(&self.path(PREDICTIONS_DIR).join(format!("{}.csv", s.stay_id)), predictions_to_csv(s))?;
        }
        let summary = json!({
            "auprc": reports.iter().map(|r| (r.model.clone(), r.auprc_mean)).collect::<std::collections::BTreeMap<_, _>>(),
            "prevalence": report.ews.prevalence,
            "median_lead_s": report.timing.median_lead_s,
            "caught_events": report.timing.caught_events,
            "events": report.timing.events,
        });
        self.finish(EVALUATE, &hash, &outputs, summary)
    }

    pub fn pipeline(&mut self) -> Result<(), CliError> {
        self.synth()?;
        self.train_pao2()?;
        self.label()?;
        self.featurize()?;
        self.train_ews()?;
        self.evaluate()
    }

    pub fn monitor_config(&self) -> Result<MonitorConfig, CliError> {
        let epoch = DateTime::parse_from_rfc3339(&self.cfg.serve.epoch)
            .map_err(|e| CliError::Config(format!("serve.epoch: {e}")))?
            .with_timezone(&Utc);
        Ok(MonitorConfig {
            data_dir: self.dir.clone(),
            annotation_dir: None,
            host: self.cfg.serve.host.clone(),
            port: self.cfg.serve.port,
            epoch,
            grid_step: self.cfg.grid_step,
        })
    }

    pub fn serve(&self) -> Result<(), CliError> {
        self.require(LABEL, &self.hashes.label, EVENTS_DIR)?;
        if self.require(EVALUATE, &self.hashes.evaluate, PREDICTIONS_DIR).is_err() {
            log::warn!("no current evaluation in {}; predictions will be unavailable", self.dir.display());
        }
        let config = self.monitor_config()?;
        let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io(&self.dir, e))?;
        Ok(rt.block_on(ews_monitor::serve(&config))?)
    }
}
