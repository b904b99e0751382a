//! Command implementations behind the `bda` binary. Each command reads a
//! JSON run config, writes its artifacts under the configured output
//! directory, and records a provenance manifest with the config digest so
//! any run can be replayed exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    adaptation_study, asymmetric_sweep, event_cross_validation, symmetric_sweep,
    write_adaptation_csv, write_grid_csv, write_sweep_csv, FoldSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_maps, GradeScheme};
use crate::network::{Checkpoint, DecisionRule, ModelParams, NetworkConfig};
use crate::raster_ops::ResolutionSchedule;
use crate::scene_data::{
    generate_synthetic_scene, load_manifest, rasterize_grade_map, save_manifest, DatasetManifest,
    HazardType, LoadedScene, SceneRecord, Split,
};
use crate::training::{
    train_stage1_localization, train_stage2_siamese, TraceRow, TrainConfig,
};

/// Top-level run configuration, deserialized from the `--config` JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Stage-2 checkpoints evaluated as an ensemble; empty means
    /// `<output_dir>/stage2.json`.
    pub checkpoints: Vec<PathBuf>,
    pub train: TrainConfig,
    pub network: NetworkConfig,
    pub rule: DecisionRule,
    pub schedule: ResolutionSchedule,
    /// Optional JSON file with a FoldSpec; `folds` defaults to per-event
    /// singleton folds when absent.
    pub fold_spec: Option<PathBuf>,
    pub scheme: String,
    /// Event id fine-tuned on by `adapt`; defaults to the manifest's
    /// holdout-split event.
    pub adapt_event: Option<String>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::from("data/manifest.json"),
            output_dir: PathBuf::from("out"),
            checkpoints: vec![],
            train: TrainConfig::default(),
            network: NetworkConfig::default(),
            rule: DecisionRule::default(),
            schedule: ResolutionSchedule::default(),
            fold_spec: None,
            scheme: "fine".into(),
            adapt_event: None,
            seed: 0,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub resolutions: Option<Vec<f64>>,
    pub scheme: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(Error::ManifestNotFound(path.to_path_buf()));
        }
        let raw = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) -> Result<()> {
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if let Some(res) = &ov.resolutions {
            self.schedule = ResolutionSchedule::new(res.clone())?;
        }
        if let Some(scheme) = &ov.scheme {
            self.scheme = scheme.clone();
        }
        // One global seed drives every stochastic component.
        self.train.seed = self.seed;
        self.network.seed = self.seed;
        self.train.augmentation.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.network.validate()?;
        GradeScheme::by_name(&self.scheme)?;
        if !self.manifest.exists() {
            return Err(Error::ManifestNotFound(self.manifest.clone()));
        }
        if let Some(fs) = &self.fold_spec {
            if !fs.exists() {
                return Err(Error::DanglingPath(fs.clone()));
            }
        }
        Ok(())
    }

    fn checkpoint_paths(&self) -> Vec<PathBuf> {
        if self.checkpoints.is_empty() {
            vec![self.output_dir.join("stage2.json")]
        } else {
            self.checkpoints.clone()
        }
    }

    /// SHA-256 of the effective config serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

/// Written next to every command's outputs; no timestamps, so re-runs are
/// byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunProvenance {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

fn write_provenance(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let prov = RunProvenance {
        command: command.into(),
        seed: cfg.seed,
        config_digest: cfg.digest(),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_json(&dir.join(format!("{command}_provenance.json")), &prov)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(["epoch", "split", "loss", "f1_loc", "f1_cls"])
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))?;
    for r in rows {
        wtr.write_record([
            r.epoch.to_string(),
            r.split.clone(),
            format!("{}", r.loss),
            format!("{}", r.f1_loc),
            format!("{}", r.f1_cls),
        ])
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))?;
    }
    wtr.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

const SYNTH_PROFILES: [[f64; 4]; 4] = [
    [0.55, 0.15, 0.15, 0.15],
    [0.25, 0.25, 0.25, 0.25],
    [0.40, 0.10, 0.20, 0.30],
    [0.40, 0.30, 0.20, 0.10],
];

const SYNTH_HAZARDS: [HazardType; 3] =
    [HazardType::Fire, HazardType::Flood, HazardType::Earthquake];

/// Generate a deterministic synthetic dataset: PNG scene pairs, grade
/// masks, and a manifest. Scene i belongs to event `event-(i mod events)`;
/// every fourth scene lands in the test split and the last event doubles
/// as the holdout for adaptation runs.
pub fn cmd_synth(
    seed: u64,
    scenes: usize,
    side: usize,
    events: usize,
    out: &Path,
) -> Result<()> {
    if events == 0 {
        return Err(Error::InvalidArgument("events must be >= 1".into()));
    }
    ensure_dir(out)?;
    let mut records = Vec::with_capacity(scenes);
    let mut non_holdout = 0usize;
    for i in 0..scenes {
        let profile = SYNTH_PROFILES[i % SYNTH_PROFILES.len()];
        let hazard = SYNTH_HAZARDS[(i / SYNTH_PROFILES.len()) % SYNTH_HAZARDS.len()];
        let scene =
            generate_synthetic_scene(seed.wrapping_add(i as u64), side, 4, profile, hazard)?;
        let (mask, _) = rasterize_grade_map(&scene);
        let pre_path = PathBuf::from(format!("scene_{i:04}_pre.png"));
        let post_path = PathBuf::from(format!("scene_{i:04}_post.png"));
        let mask_path = PathBuf::from(format!("scene_{i:04}_mask.png"));
        crate::scene_data::write_image_png(&scene.pre, &out.join(&pre_path))?;
        crate::scene_data::write_image_png(&scene.post, &out.join(&post_path))?;
        crate::scene_data::write_mask_png(&mask, &out.join(&mask_path))?;
        let event_idx = i % events;
        let split = if event_idx == events - 1 && events > 1 {
            Split::Holdout
        } else {
            non_holdout += 1;
            // Every fourth non-holdout scene is held out for evaluation.
            if non_holdout % 4 == 0 {
                Split::Test
            } else {
                Split::Train
            }
        };
        records.push(SceneRecord {
            event_id: format!("event-{event_idx}"),
            hazard_type: hazard,
            split,
            pre_path,
            post_path,
            mask_path,
            gsd: scene.pre.gsd,
        });
    }
    let manifest = DatasetManifest::new(records, out.to_path_buf());
    save_manifest(&manifest, &out.join("manifest.json"))
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<LoadedScene>> {
    let manifest = load_manifest(&cfg.manifest)?;
    manifest.filter_by_split(split).load_all()
}

/// Train both stages on the manifest's train split; writes stage1/stage2
/// checkpoints and the loss trace.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    ensure_dir(&cfg.output_dir)?;
    let scenes = load_split(cfg, Split::Train)?;
    let s1 = train_stage1_localization(&scenes, &cfg.network, &cfg.train)?;
    let s2 = train_stage2_siamese(&scenes, &s1.params, &cfg.network, &cfg.train)?;
    let stage1_path = cfg.output_dir.join("stage1.json");
    let stage2_path = cfg.output_dir.join("stage2.json");
    let trace_path = cfg.output_dir.join("loss_trace.csv");
    Checkpoint { config: cfg.network.with_head(1), params: s1.params }.save(&stage1_path)?;
    Checkpoint { config: cfg.network.with_head(5), params: s2.params }.save(&stage2_path)?;
    let mut trace = s1.trace;
    trace.extend(s2.trace);
    write_trace_csv(&trace_path, &trace)?;
    write_provenance(
        &cfg.output_dir,
        "train",
        cfg,
        &[&cfg.manifest],
        &[&stage1_path, &stage2_path, &trace_path],
    )
}

fn load_models(cfg: &RunConfig) -> Result<(Vec<ModelParams>, NetworkConfig)> {
    let paths = cfg.checkpoint_paths();
    let mut models = Vec::with_capacity(paths.len());
    let mut net = None;
    for p in &paths {
        let ck = Checkpoint::load(p)?;
        if let Some(existing) = &net {
            if *existing != ck.config {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint {} has a different network config",
                    p.display()
                )));
            }
        } else {
            net = Some(ck.config);
        }
        models.push(ck.params);
    }
    Ok((models, net.ok_or_else(|| Error::Empty("checkpoint list".into()))?))
}

/// Evaluate the checkpoint ensemble on the test split. With `oracle` the
/// ground-truth masks are scored against themselves instead (sanity path:
/// every defined metric is 1).
pub fn cmd_eval(cfg: &RunConfig, oracle: bool) -> Result<()> {
    cfg.validate()?;
    ensure_dir(&cfg.output_dir)?;
    let scheme = GradeScheme::by_name(&cfg.scheme)?;
    let scenes = load_split(cfg, Split::Test)?;
    let truths: Vec<_> = scenes.iter().map(|s| s.truth.clone()).collect();
    let report = if oracle {
        evaluate_maps(&truths, &truths, &scheme)?
    } else {
        let (models, net) = load_models(cfg)?;
        let native = scenes
            .first()
            .ok_or_else(|| Error::Empty("test split".into()))?
            .pre
            .gsd;
        crate::analysis::cell_eval(&scenes, &models, &net, &cfg.rule, &scheme, native, native)?
    };
    let report_path = cfg.output_dir.join("report.json");
    write_json(&report_path, &report)?;
    write_provenance(&cfg.output_dir, "eval", cfg, &[&cfg.manifest], &[&report_path])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    Symmetric,
    Asymmetric,
}

impl std::str::FromStr for SweepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<SweepMode> {
        match s {
            "symmetric" => Ok(SweepMode::Symmetric),
            "asymmetric" => Ok(SweepMode::Asymmetric),
            other => Err(Error::InvalidArgument(format!("unknown sweep mode '{other}'"))),
        }
    }
}

/// Resolution sweep over the test split with the checkpoint ensemble.
pub fn cmd_sweep(cfg: &RunConfig, mode: SweepMode) -> Result<()> {
    cfg.validate()?;
    ensure_dir(&cfg.output_dir)?;
    let scheme = GradeScheme::by_name(&cfg.scheme)?;
    let scenes = load_split(cfg, Split::Test)?;
    let (models, net) = load_models(cfg)?;
    let out = match mode {
        SweepMode::Symmetric => {
            let series = symmetric_sweep(
                &scenes,
                &models,
                &net,
                &cfg.rule,
                &scheme,
                &cfg.schedule,
            )?;
            let path = cfg.output_dir.join("sweep_symmetric.csv");
            write_sweep_csv(&path, &series)?;
            path
        }
        SweepMode::Asymmetric => {
            let grid = asymmetric_sweep(
                &scenes,
                &models,
                &net,
                &cfg.rule,
                &scheme,
                &cfg.schedule,
            )?;
            let path = cfg.output_dir.join("sweep_asymmetric.csv");
            write_grid_csv(&path, &grid)?;
            path
        }
    };
    write_provenance(&cfg.output_dir, "sweep", cfg, &[&cfg.manifest], &[&out])
}

fn fold_spec_for(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<FoldSpec> {
    match &cfg.fold_spec {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|source| Error::Io { path: path.clone(), source })?;
            serde_json::from_str(&raw)
                .map_err(|e| Error::InvalidArgument(format!("fold spec {}: {e}", path.display())))
        }
        None => {
            // Per-event singleton folds: plain leave-one-event-out.
            Ok(FoldSpec {
                folds: manifest
                    .event_ids()
                    .into_iter()
                    .map(|e| crate::analysis::NamedFold {
                        name: format!("leave-out-{e}"),
                        events: vec![e],
                    })
                    .collect(),
            })
        }
    }
}

/// Event-level cross-validation over every scene in the manifest.
pub fn cmd_folds(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    ensure_dir(&cfg.output_dir)?;
    let scheme = GradeScheme::by_name(&cfg.scheme)?;
    let manifest = load_manifest(&cfg.manifest)?;
    let folds = fold_spec_for(cfg, &manifest)?;
    let scenes = manifest.load_all()?;
    let cv = event_cross_validation(&scenes, &folds, &cfg.network, &cfg.train, &cfg.rule, &scheme)?;
    let path = cfg.output_dir.join("folds.json");
    write_json(&path, &cv)?;
    write_provenance(&cfg.output_dir, "folds", cfg, &[&cfg.manifest], &[&path])
}

/// Fine-tuning adaptation curve on the configured new event (default: the
/// holdout split's event), starting from the stage-2 checkpoint.
pub fn cmd_adapt(cfg: &RunConfig, shares: &[f64]) -> Result<()> {
    cfg.validate()?;
    ensure_dir(&cfg.output_dir)?;
    let scheme = GradeScheme::by_name(&cfg.scheme)?;
    let manifest = load_manifest(&cfg.manifest)?;
    let event = match &cfg.adapt_event {
        Some(e) => e.clone(),
        None => {
            let holdout = manifest.filter_by_split(Split::Holdout);
            holdout
                .event_ids()
                .first()
                .cloned()
                .ok_or_else(|| Error::Empty("holdout split (set adapt_event)".into()))?
        }
    };
    let scenes = manifest.filter_by_event(std::slice::from_ref(&event)).load_all()?;
    let (models, net) = load_models(cfg)?;
    let curve = adaptation_study(
        &models[0],
        &scenes,
        shares,
        &net,
        &cfg.train,
        &cfg.rule,
        &scheme,
    )?;
    let path = cfg.output_dir.join("adaptation.csv");
    write_adaptation_csv(&path, &curve)?;
    let json_path = cfg.output_dir.join("adaptation.json");
    write_json(&json_path, &curve)?;
    write_provenance(&cfg.output_dir, "adapt", cfg, &[&cfg.manifest], &[&path, &json_path])
}

/// Exit-code contract: 2 for configuration/validation problems, 1 for
/// runtime failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_)
        | Error::ManifestNotFound(_)
        | Error::ManifestSchema(_)
        | Error::DanglingPath(_) => 2,
        _ => 1,
    }
}
