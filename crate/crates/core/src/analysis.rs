//! Experimental harnesses: symmetric and asymmetric resolution sweeps,
//! event-level cross-validation, and fine-tuning adaptation curves.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate_maps, GradeScheme, MetricsReport};
use crate::network::{decide, ensemble_predict, DecisionRule, ModelParams, NetworkConfig};
use crate::raster_ops::{degrade_restore, ResolutionSchedule};
use crate::scene_data::LoadedScene;
use crate::training::{
    fine_tune, train_stage1_localization, train_stage2_siamese, FineTuneShare, TrainConfig,
};

/// One evaluated resolution of the symmetric sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gsd: f64,
    pub report: MetricsReport,
}

/// Metric reports indexed by (pre GSD, post GSD) over the full schedule.
/// `cells[i][j]` holds the report for pre degraded to `schedule[i]` and
/// post degraded to `schedule[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierGrid {
    pub schedule: ResolutionSchedule,
    pub cells: Vec<Vec<MetricsReport>>,
}

impl FrontierGrid {
    pub fn diagonal(&self) -> Vec<SweepPoint> {
        self.schedule
            .gsd_values
            .iter()
            .enumerate()
            .map(|(i, &gsd)| SweepPoint { gsd, report: self.cells[i][i].clone() })
            .collect()
    }
}

fn check_native(scenes: &[LoadedScene], schedule: &ResolutionSchedule) -> Result<()> {
    if scenes.is_empty() {
        return Err(Error::Empty("sweep scene set".into()));
    }
    let min = schedule.gsd_values[0];
    for s in scenes {
        if s.pre.gsd != min {
            return Err(Error::InvalidArgument(format!(
                "schedule minimum {min} must equal native gsd {}",
                s.pre.gsd
            )));
        }
    }
    Ok(())
}

/// Evaluate one (r_pre, r_post) cell: degrade-restore both images of every
/// scene, run the ensemble, and pool the pixel tallies. Both sweeps call
/// this, so the asymmetric grid's diagonal is bit-equal to the symmetric
/// series by construction.
pub fn cell_eval(
    scenes: &[LoadedScene],
    models: &[ModelParams],
    net_cfg: &NetworkConfig,
    rule: &DecisionRule,
    scheme: &GradeScheme,
    r_pre: f64,
    r_post: f64,
) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(scenes.len());
    let mut truths = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let pre = degrade_restore(&scene.pre, r_pre)?;
        let post = degrade_restore(&scene.post, r_post)?;
        let soft = ensemble_predict(models, net_cfg, &pre, &post)?;
        preds.push(decide(&soft, rule));
        truths.push(scene.truth.clone());
    }
    evaluate_maps(&preds, &truths, scheme)
}

/// Degrade both images to each scheduled resolution and re-evaluate the
/// trained model. No retraining per resolution.
pub fn symmetric_sweep(
    scenes: &[LoadedScene],
    models: &[ModelParams],
    net_cfg: &NetworkConfig,
    rule: &DecisionRule,
    scheme: &GradeScheme,
    schedule: &ResolutionSchedule,
) -> Result<Vec<SweepPoint>> {
    check_native(scenes, schedule)?;
    schedule
        .gsd_values
        .iter()
        .map(|&r| {
            Ok(SweepPoint {
                gsd: r,
                report: cell_eval(scenes, models, net_cfg, rule, scheme, r, r)?,
            })
        })
        .collect()
}

/// Evaluate every (r_pre, r_post) pair of the schedule, row-major.
pub fn asymmetric_sweep(
    scenes: &[LoadedScene],
    models: &[ModelParams],
    net_cfg: &NetworkConfig,
    rule: &DecisionRule,
    scheme: &GradeScheme,
    schedule: &ResolutionSchedule,
) -> Result<FrontierGrid> {
    check_native(scenes, schedule)?;
    let mut cells = Vec::with_capacity(schedule.gsd_values.len());
    for &r_pre in &schedule.gsd_values {
        let mut row = Vec::with_capacity(schedule.gsd_values.len());
        for &r_post in &schedule.gsd_values {
            row.push(cell_eval(scenes, models, net_cfg, rule, scheme, r_pre, r_post)?);
        }
        cells.push(row);
    }
    Ok(FrontierGrid { schedule: schedule.clone(), cells })
}

/// Named leave-out folds of event ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFold {
    pub name: String,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub folds: Vec<NamedFold>,
}

impl FoldSpec {
    /// The three enumerated xBD leave-out folds.
    pub fn xbd() -> FoldSpec {
        let fold = |name: &str, events: &[&str]| NamedFold {
            name: name.into(),
            events: events.iter().map(|s| s.to_string()).collect(),
        };
        FoldSpec {
            folds: vec![
                fold("fold-1", &["pinery-bushfire", "joplin-tornado", "sunda-tsunami"]),
                fold("fold-2", &["moore-tornado", "portugal-wildfire"]),
                fold("fold-3", &["lower-puna-volcano", "tuscaloosa-tornado", "woolsey-fire"]),
            ],
        }
    }

    /// Folds must be pairwise disjoint and every listed event must appear
    /// in `known_events`.
    pub fn validate(&self, known_events: &[String]) -> Result<()> {
        if self.folds.is_empty() {
            return Err(Error::Empty("fold spec".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for fold in &self.folds {
            if fold.events.is_empty() {
                return Err(Error::Empty(format!("fold '{}'", fold.name)));
            }
            for e in &fold.events {
                if !seen.insert(e.clone()) {
                    return Err(Error::InvalidArgument(format!(
                        "event '{e}' appears in more than one fold"
                    )));
                }
                if !known_events.contains(e) {
                    return Err(Error::InvalidArgument(format!(
                        "fold '{}' lists unknown event '{e}'",
                        fold.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Unweighted arithmetic mean of the headline metric values across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAverage {
    pub f1_loc: f64,
    pub f1_binary: f64,
    pub f1_cls: f64,
    pub score: f64,
    pub per_grade: Vec<f64>,
}

pub fn fold_average(reports: &[MetricsReport]) -> Result<FoldAverage> {
    if reports.is_empty() {
        return Err(Error::Empty("fold report list".into()));
    }
    let n = reports.len() as f64;
    let n_grades = reports[0].per_grade.len();
    let mut per_grade = vec![0.0; n_grades];
    for r in reports {
        if r.per_grade.len() != n_grades {
            return Err(Error::ShapeMismatch("per-grade length differs across folds".into()));
        }
        for (acc, s) in per_grade.iter_mut().zip(&r.per_grade) {
            *acc += s.f1;
        }
    }
    per_grade.iter_mut().for_each(|v| *v /= n);
    Ok(FoldAverage {
        f1_loc: reports.iter().map(|r| r.f1_loc.f1).sum::<f64>() / n,
        f1_binary: reports.iter().map(|r| r.f1_binary.f1).sum::<f64>() / n,
        f1_cls: reports.iter().map(|r| r.f1_cls).sum::<f64>() / n,
        score: reports.iter().map(|r| r.score).sum::<f64>() / n,
        per_grade,
    })
}

/// Per-fold bookkeeping: which events were trained on and which tested,
/// plus the resulting report. Auditable for train/test overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub name: String,
    pub train_events: Vec<String>,
    pub test_events: Vec<String>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub per_fold: Vec<FoldResult>,
    pub average: FoldAverage,
}

/// For each fold: train both stages on every event not in the fold, then
/// evaluate on the held-out events.
pub fn event_cross_validation(
    scenes: &[LoadedScene],
    folds: &FoldSpec,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    rule: &DecisionRule,
    scheme: &GradeScheme,
) -> Result<CrossValidation> {
    let mut known: Vec<String> = scenes.iter().map(|s| s.record.event_id.clone()).collect();
    known.sort();
    known.dedup();
    folds.validate(&known)?;
    let mut per_fold = Vec::with_capacity(folds.folds.len());
    for fold in &folds.folds {
        let (test, train): (Vec<&LoadedScene>, Vec<&LoadedScene>) =
            scenes.iter().partition(|s| fold.events.contains(&s.record.event_id));
        if train.is_empty() {
            return Err(Error::Empty(format!("training set for fold '{}'", fold.name)));
        }
        if test.is_empty() {
            return Err(Error::Empty(format!("test set for fold '{}'", fold.name)));
        }
        let train: Vec<LoadedScene> = train.into_iter().cloned().collect();
        let test: Vec<LoadedScene> = test.into_iter().cloned().collect();
        let s1 = train_stage1_localization(&train, net_cfg, train_cfg)?;
        let s2 = train_stage2_siamese(&train, &s1.params, net_cfg, train_cfg)?;
        let report = cell_eval(
            &test,
            std::slice::from_ref(&s2.params),
            net_cfg,
            rule,
            scheme,
            test[0].pre.gsd,
            test[0].pre.gsd,
        )?;
        let mut train_events: Vec<String> =
            train.iter().map(|s| s.record.event_id.clone()).collect();
        train_events.sort();
        train_events.dedup();
        per_fold.push(FoldResult {
            name: fold.name.clone(),
            train_events,
            test_events: fold.events.clone(),
            report,
        });
    }
    let average = fold_average(&per_fold.iter().map(|f| f.report.clone()).collect::<Vec<_>>())?;
    Ok(CrossValidation { per_fold, average })
}

/// Adaptation gain at share s relative to the untuned baseline.
pub fn adaptation_gain(f1_at_s: f64, f1_at_zero: f64) -> f64 {
    f1_at_s - f1_at_zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRow {
    pub share: f64,
    pub f1_loc: f64,
    pub f1_binary: f64,
    pub f1_cls: f64,
    pub per_grade: Vec<f64>,
    pub a_loc: f64,
    pub a_binary: f64,
    pub a_cls: f64,
    pub a_per_grade: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationCurve {
    pub rows: Vec<AdaptationRow>,
    /// Scene indices (into the new-event list) reserved for evaluation.
    pub test_indices: Vec<usize>,
}

/// Indices of the fixed evaluation half of a new event, under the same
/// deterministic shuffle the fine-tuning subsets use. Any share <= 0.5
/// draws from the other half, so subsets never touch the test half.
pub fn adaptation_test_half(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.split_off(n / 2)
}

/// Fine-tune on nested subsets of a new event and track the F1 gains
/// A(s) = F1(s) - F1(0) on the event's fixed test half.
pub fn adaptation_study(
    params: &ModelParams,
    new_event_scenes: &[LoadedScene],
    shares: &[f64],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    rule: &DecisionRule,
    scheme: &GradeScheme,
) -> Result<AdaptationCurve> {
    if new_event_scenes.len() < 2 {
        return Err(Error::Empty("new-event scene set (need at least 2 scenes)".into()));
    }
    let test_indices = adaptation_test_half(new_event_scenes.len(), train_cfg.seed);
    let test: Vec<LoadedScene> =
        test_indices.iter().map(|&i| new_event_scenes[i].clone()).collect();
    let native = test[0].pre.gsd;
    let eval = |p: &ModelParams| {
        cell_eval(&test, std::slice::from_ref(p), net_cfg, rule, scheme, native, native)
    };
    let baseline = eval(params)?;
    let mut rows = Vec::with_capacity(shares.len());
    for &s in shares {
        let share = FineTuneShare::new(s)?;
        let tuned = fine_tune(params, new_event_scenes, share, net_cfg, train_cfg)?;
        let report = eval(&tuned.params)?;
        rows.push(AdaptationRow {
            share: s,
            f1_loc: report.f1_loc.f1,
            f1_binary: report.f1_binary.f1,
            f1_cls: report.f1_cls,
            per_grade: report.per_grade.iter().map(|g| g.f1).collect(),
            a_loc: adaptation_gain(report.f1_loc.f1, baseline.f1_loc.f1),
            a_binary: adaptation_gain(report.f1_binary.f1, baseline.f1_binary.f1),
            a_cls: adaptation_gain(report.f1_cls, baseline.f1_cls),
            a_per_grade: report
                .per_grade
                .iter()
                .zip(&baseline.per_grade)
                .map(|(r, b)| adaptation_gain(r.f1, b.f1))
                .collect(),
        });
    }
    Ok(AdaptationCurve { rows, test_indices })
}

fn push_metric_rows(wtr: &mut csv::Writer<std::fs::File>, r_pre: f64, r_post: f64, report: &MetricsReport) -> Result<()> {
    let mut write = |metric: &str, value: f64| -> Result<()> {
        wtr.write_record([
            format!("{r_pre}"),
            format!("{r_post}"),
            metric.to_string(),
            format!("{value}"),
        ])
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
    };
    write("f1_loc", report.f1_loc.f1)?;
    write("f1_binary", report.f1_binary.f1)?;
    write("f1_cls", report.f1_cls)?;
    write("score", report.score)?;
    for (i, g) in report.per_grade.iter().enumerate() {
        write(&format!("f1_grade_{}", i + 1), g.f1)?;
    }
    Ok(())
}

/// Columns: r_pre, r_post, metric, value. The symmetric series writes its
/// resolution into both r columns.
pub fn write_sweep_csv(path: &std::path::Path, series: &[SweepPoint]) -> Result<()> {
    let mut wtr = csv_writer(path)?;
    for p in series {
        push_metric_rows(&mut wtr, p.gsd, p.gsd, &p.report)?;
    }
    wtr.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

pub fn write_grid_csv(path: &std::path::Path, grid: &FrontierGrid) -> Result<()> {
    let mut wtr = csv_writer(path)?;
    for (i, &r_pre) in grid.schedule.gsd_values.iter().enumerate() {
        for (j, &r_post) in grid.schedule.gsd_values.iter().enumerate() {
            push_metric_rows(&mut wtr, r_pre, r_post, &grid.cells[i][j])?;
        }
    }
    wtr.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Columns: s, metric, f1, a.
pub fn write_adaptation_csv(path: &std::path::Path, curve: &AdaptationCurve) -> Result<()> {
    let mut wtr = csv_writer_with(path, &["s", "metric", "f1", "a"])?;
    for row in &curve.rows {
        let mut write = |metric: &str, f1: f64, a: f64| -> Result<()> {
            wtr.write_record([
                format!("{}", row.share),
                metric.to_string(),
                format!("{f1}"),
                format!("{a}"),
            ])
            .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
        };
        write("f1_loc", row.f1_loc, row.a_loc)?;
        write("f1_binary", row.f1_binary, row.a_binary)?;
        write("f1_cls", row.f1_cls, row.a_cls)?;
        for (i, (&f1, &a)) in row.per_grade.iter().zip(&row.a_per_grade).enumerate() {
            write(&format!("f1_grade_{}", i + 1), f1, a)?;
        }
    }
    wtr.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn csv_writer(path: &std::path::Path) -> Result<csv::Writer<std::fs::File>> {
    csv_writer_with(path, &["r_pre", "r_post", "metric", "value"])
}

fn csv_writer_with(path: &std::path::Path, header: &[&str]) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(header)
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))?;
    Ok(wtr)
}
