//! Pixel-level evaluation: per-grade F1/precision/recall, localization F1,
//! harmonic-mean macro F1, binary damage F1, challenge score, confusion
//! matrices, and grade-scheme remapping for coarse label schemes.
//!
//! All metrics pool pixel counts across scenes first (micro-aggregation),
//! then compute ratios. Unclassified truth pixels are excluded everywhere.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{decide, ensemble_predict, DecisionRule, ModelParams, NetworkConfig};
use crate::scene_data::{LoadedScene, UNCLASSIFIED};

/// Mapping from the fine grades 1-4 onto coarse labels. Must be total and
/// surjective; background 0 and UNCLASSIFIED pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeScheme {
    pub name: String,
    /// map[g-1] is the coarse label of fine grade g.
    pub map: [u8; 4],
    pub labels: Vec<String>,
}

impl GradeScheme {
    pub fn fine() -> GradeScheme {
        GradeScheme {
            name: "fine".into(),
            map: [1, 2, 3, 4],
            labels: vec!["no damage".into(), "minor".into(), "major".into(), "destroyed".into()],
        }
    }

    /// Coarse 3-grade scheme merging minor and major damage.
    pub fn ahr() -> GradeScheme {
        GradeScheme {
            name: "ahr".into(),
            map: [1, 2, 2, 3],
            labels: vec!["possibly damaged".into(), "damaged".into(), "destroyed".into()],
        }
    }

    pub fn by_name(name: &str) -> Result<GradeScheme> {
        match name {
            "fine" => Ok(GradeScheme::fine()),
            "ahr" => Ok(GradeScheme::ahr()),
            other => Err(Error::InvalidArgument(format!("unknown grade scheme '{other}'"))),
        }
    }

    pub fn n_grades(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_grades() as u8;
        for (i, &m) in self.map.iter().enumerate() {
            if m < 1 || m > n {
                return Err(Error::InvalidArgument(format!(
                    "grade {} maps to {m}, outside 1..={n}",
                    i + 1
                )));
            }
        }
        for coarse in 1..=n {
            if !self.map.contains(&coarse) {
                return Err(Error::InvalidArgument(format!("coarse label {coarse} unused")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, grade: u8) -> u8 {
        match grade {
            1..=4 => self.map[grade as usize - 1],
            other => other,
        }
    }
}

/// Raw pixel counts pooled over scenes. Confusion rows are ground truth
/// (row 0 = background), columns are predictions (column 0 = predicted
/// background, the "missed" column for building rows).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTally {
    pub n_grades: usize,
    pub confusion: Array2<u64>,
    pub unclassified: u64,
}

impl PixelTally {
    pub fn new(n_grades: usize) -> PixelTally {
        PixelTally {
            n_grades,
            confusion: Array2::zeros((n_grades + 1, n_grades + 1)),
            unclassified: 0,
        }
    }

    pub fn accumulate(
        &mut self,
        pred: &Array2<u8>,
        truth: &Array2<u8>,
        scheme: &GradeScheme,
    ) -> Result<()> {
        if pred.dim() != truth.dim() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", pred.dim(), truth.dim())));
        }
        for (&p, &t) in pred.iter().zip(truth.iter()) {
            if t == UNCLASSIFIED {
                self.unclassified += 1;
                continue;
            }
            let tc = scheme.apply(t) as usize;
            let pc = scheme.apply(p) as usize;
            self.confusion[(tc, pc)] += 1;
        }
        Ok(())
    }

    /// Merge counts from another tally (associative, order-free).
    pub fn merge(&mut self, other: &PixelTally) {
        debug_assert_eq!(self.n_grades, other.n_grades);
        self.confusion += &other.confusion;
        self.unclassified += other.unclassified;
    }

    pub fn building_pixels(&self) -> u64 {
        (1..=self.n_grades).map(|r| self.confusion.row(r).sum()).sum()
    }
}

/// One F1 with its own precision/recall. `defined` is false when both the
/// positive truth and positive prediction sets were empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Stat {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub defined: bool,
}

impl F1Stat {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> F1Stat {
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        F1Stat {
            f1: f1_from_pr(precision, recall),
            precision,
            recall,
            defined: tp + fp + fn_ > 0,
        }
    }
}

/// F1 = 2PR/(P+R), 0 when P+R = 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Harmonic mean of per-grade F1 scores; any zero component forces 0.
pub fn macro_f1(per_grade: &[f64]) -> Result<f64> {
    if per_grade.is_empty() {
        return Err(Error::Empty("per-grade F1 list".into()));
    }
    if per_grade.iter().any(|&f| f == 0.0) {
        return Ok(0.0);
    }
    Ok(per_grade.len() as f64 / per_grade.iter().map(|f| 1.0 / f).sum::<f64>())
}

/// xView2 leaderboard blend: 0.3 * localization + 0.7 * classification.
pub fn challenge_score(f1_loc: f64, f1_cls: f64) -> f64 {
    0.3 * f1_loc + 0.7 * f1_cls
}

fn loc_stat(tally: &PixelTally) -> F1Stat {
    let n = tally.n_grades;
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for r in 0..=n {
        for c in 0..=n {
            let v = tally.confusion[(r, c)];
            match (r >= 1, c >= 1) {
                (true, true) => tp += v,
                (false, true) => fp += v,
                (true, false) => fn_ += v,
                (false, false) => {}
            }
        }
    }
    F1Stat::from_counts(tp, fp, fn_)
}

fn grade_stat(tally: &PixelTally, grade: usize) -> F1Stat {
    let n = tally.n_grades;
    let tp = tally.confusion[(grade, grade)];
    let fn_ = tally.confusion.row(grade).sum() - tp;
    // One-vs-rest over truth building pixels only: background-truth rows
    // do not contribute false positives to damage grades.
    let fp: u64 = (1..=n).filter(|&r| r != grade).map(|r| tally.confusion[(r, grade)]).sum();
    F1Stat::from_counts(tp, fp, fn_)
}

fn binary_stat(tally: &PixelTally) -> F1Stat {
    let n = tally.n_grades;
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for r in 1..=n {
        for c in 0..=n {
            let v = tally.confusion[(r, c)];
            let truth_damaged = r >= 2;
            let pred_damaged = c >= 2;
            match (truth_damaged, pred_damaged) {
                (true, true) => tp += v,
                (true, false) => fn_ += v,
                (false, true) => fp += v,
                (false, false) => {}
            }
        }
    }
    F1Stat::from_counts(tp, fp, fn_)
}

/// Full evaluation report computed from pooled pixel counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: String,
    pub f1_loc: F1Stat,
    pub per_grade: Vec<F1Stat>,
    pub f1_binary: F1Stat,
    pub f1_cls: f64,
    pub score: f64,
    pub confusion: Vec<Vec<u64>>,
    pub building_pixels: u64,
    pub unclassified_pixels: u64,
}

impl MetricsReport {
    pub fn from_tally(tally: &PixelTally, scheme: &GradeScheme) -> Result<MetricsReport> {
        let per_grade: Vec<F1Stat> = (1..=tally.n_grades).map(|g| grade_stat(tally, g)).collect();
        let f1_loc = loc_stat(tally);
        // Grades absent from both truth and prediction are undefined and
        // excluded from the macro mean rather than counted as zeros.
        let defined: Vec<f64> =
            per_grade.iter().filter(|s| s.defined).map(|s| s.f1).collect();
        let f1_cls = if defined.is_empty() { 0.0 } else { macro_f1(&defined)? };
        Ok(MetricsReport {
            scheme: scheme.name.clone(),
            f1_loc,
            per_grade,
            f1_binary: binary_stat(tally),
            f1_cls,
            score: challenge_score(f1_loc.f1, f1_cls),
            confusion: tally
                .confusion
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            building_pixels: tally.building_pixels(),
            unclassified_pixels: tally.unclassified,
        })
    }
}

/// Binary building-vs-background pixel F1 over aligned grade maps.
pub fn localization_f1(preds: &[Array2<u8>], truths: &[Array2<u8>]) -> Result<F1Stat> {
    let tally = tally_maps(preds, truths, &GradeScheme::fine())?;
    Ok(loc_stat(&tally))
}

/// One-vs-rest per-grade stats plus the confusion matrix under a scheme.
pub fn per_grade_f1(
    preds: &[Array2<u8>],
    truths: &[Array2<u8>],
    scheme: &GradeScheme,
) -> Result<(Vec<F1Stat>, Array2<u64>)> {
    let tally = tally_maps(preds, truths, scheme)?;
    let stats = (1..=tally.n_grades).map(|g| grade_stat(&tally, g)).collect();
    Ok((stats, tally.confusion))
}

/// Damaged (grade >= 2) vs undamaged F1 among truth building pixels.
pub fn binary_f1(preds: &[Array2<u8>], truths: &[Array2<u8>]) -> Result<F1Stat> {
    let tally = tally_maps(preds, truths, &GradeScheme::fine())?;
    Ok(binary_stat(&tally))
}

pub fn tally_maps(
    preds: &[Array2<u8>],
    truths: &[Array2<u8>],
    scheme: &GradeScheme,
) -> Result<PixelTally> {
    if preds.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    scheme.validate()?;
    let mut tally = PixelTally::new(scheme.n_grades());
    for (p, t) in preds.iter().zip(truths.iter()) {
        tally.accumulate(p, t, scheme)?;
    }
    Ok(tally)
}

/// Report from already-decided grade maps.
pub fn evaluate_maps(
    preds: &[Array2<u8>],
    truths: &[Array2<u8>],
    scheme: &GradeScheme,
) -> Result<MetricsReport> {
    if preds.is_empty() {
        return Err(Error::Empty("evaluation subset".into()));
    }
    let tally = tally_maps(preds, truths, scheme)?;
    MetricsReport::from_tally(&tally, scheme)
}

/// Run the ensemble over every scene, decide grades, pool pixel counts
/// across scenes, then compute metrics.
pub fn evaluate(
    scenes: &[LoadedScene],
    models: &[ModelParams],
    net_cfg: &NetworkConfig,
    rule: &DecisionRule,
    scheme: &GradeScheme,
) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return Err(Error::Empty("evaluation subset".into()));
    }
    scheme.validate()?;
    let mut tally = PixelTally::new(scheme.n_grades());
    for scene in scenes {
        let soft = ensemble_predict(models, net_cfg, &scene.pre, &scene.post)?;
        let pred = decide(&soft, rule);
        tally.accumulate(&pred, &scene.truth, scheme)?;
    }
    MetricsReport::from_tally(&tally, scheme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_prediction_all_ones() {
        let truth = array![[0u8, 1, 2], [3, 4, 0], [1, 1, 2]];
        let report = evaluate_maps(&[truth.clone()], &[truth.clone()], &GradeScheme::fine()).unwrap();
        assert_eq!(report.f1_loc.f1, 1.0);
        assert!(report.per_grade.iter().all(|s| s.f1 == 1.0));
        assert_eq!(report.f1_cls, 1.0);
        assert_eq!(report.f1_binary.f1, 1.0);
        assert_eq!(report.score, 1.0);
        for (r, row) in report.confusion.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if r != c {
                    assert_eq!(v, 0);
                }
            }
        }
    }

    #[test]
    fn macro_f1_paper_rows() {
        let m = macro_f1(&[0.9234, 0.6444, 0.7859, 0.8640]).unwrap();
        assert!((m - 0.7897).abs() < 5e-4, "{m}");
        let m = macro_f1(&[0.9264, 0.6733, 0.5970, 0.8600]).unwrap();
        assert!((m - 0.7404).abs() < 5e-4, "{m}");
        // Idempotence on equal inputs.
        let m = macro_f1(&[0.7, 0.7, 0.7, 0.7]).unwrap();
        assert!((m - 0.7).abs() < 1e-12);
        // Zero component collapses the harmonic mean.
        assert_eq!(macro_f1(&[0.9, 0.0, 0.8, 0.7]).unwrap(), 0.0);
        assert!(macro_f1(&[]).is_err());
    }

    #[test]
    fn challenge_score_paper_rows() {
        assert!((challenge_score(0.8624, 0.7897) - 0.8119).abs() < 1e-3);
        assert!((challenge_score(0.8587, 0.7640) - 0.7924).abs() < 1e-3);
        assert_eq!(challenge_score(1.0, 1.0), 1.0);
    }

    #[test]
    fn f1_from_paper_precision_recall() {
        assert!((f1_from_pr(0.7983, 0.9377) - 0.8624).abs() < 5e-4);
        assert_eq!(f1_from_pr(0.0, 0.0), 0.0);
    }

    #[test]
    fn localization_counts() {
        let truth = array![[1u8, 1, 0], [0, 2, 0]];
        let pred = array![[1u8, 0, 3], [0, 2, 0]];
        // TP=2 (both maps building), FN=1, FP=1.
        let s = localization_f1(&[pred], &[truth]).unwrap();
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn localization_no_truth_buildings_flagged() {
        let truth = Array2::<u8>::zeros((2, 2));
        let pred = Array2::<u8>::zeros((2, 2));
        let s = localization_f1(&[pred], &[truth]).unwrap();
        assert_eq!(s.f1, 0.0);
        assert!(!s.defined);
    }

    #[test]
    fn per_grade_hand_counted_micro_case() {
        // Two scenes; hand-counted tallies per grade.
        let t1 = array![[1u8, 1, 2], [2, 3, 4]];
        let p1 = array![[1u8, 2, 2], [0, 3, 3]];
        let t2 = array![[4u8, 0], [1, 2]];
        let p2 = array![[4u8, 1], [1, 2]];
        let (stats, conf) = per_grade_f1(&[p1, p2], &[t1, t2], &GradeScheme::fine()).unwrap();
        // Grade 1: truth {3 pixels}, TP=2, FN=1 (pred 2), FP=0.
        assert_eq!((stats[0].precision, stats[0].recall), (1.0, 2.0 / 3.0));
        // Grade 2: truth 3 pixels, TP=2, FN=1 (missed -> col 0), FP=1.
        assert!((stats[1].precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((stats[1].recall - 2.0 / 3.0).abs() < 1e-12);
        // Grade 4: truth 2, TP=1, FN=1 (pred 3), FP=0.
        assert_eq!((stats[3].precision, stats[3].recall), (1.0, 0.5));
        // Missed column bookkeeping.
        assert_eq!(conf[(2, 0)], 1);
        // Row sums equal truth counts per grade.
        assert_eq!(conf.row(1).sum(), 3);
        assert_eq!(conf.row(2).sum(), 3);
        assert_eq!(conf.row(3).sum(), 1);
        assert_eq!(conf.row(4).sum(), 2);
    }

    #[test]
    fn ahr_scheme_merges_minor_major() {
        let truth = array![[2u8]];
        let pred = array![[3u8]];
        let (stats, _) = per_grade_f1(&[pred], &[truth], &GradeScheme::ahr()).unwrap();
        // Fine 2 vs 3 agree as coarse "damaged" (index 1).
        assert_eq!(stats[1].f1, 1.0);
    }

    #[test]
    fn binary_half_damaged_case() {
        // 8x8, all truth damaged, predictions damage half.
        let truth = Array2::<u8>::from_elem((8, 8), 3);
        let mut pred = Array2::<u8>::from_elem((8, 8), 3);
        for y in 0..4 {
            for x in 0..8 {
                pred[(y, x)] = 1;
            }
        }
        let s = binary_f1(&[pred], &[truth]).unwrap();
        assert!((s.f1 - 2.0 * 0.5 / 1.5).abs() < 1e-12);

        // Degenerate: no damaged truth and no damaged predictions.
        let truth = Array2::<u8>::from_elem((2, 2), 1);
        let pred = truth.clone();
        let s = binary_f1(&[pred], &[truth]).unwrap();
        assert_eq!(s.f1, 0.0);
        assert!(!s.defined);
    }

    #[test]
    fn unclassified_excluded_everywhere() {
        let truth = array![[UNCLASSIFIED, 1], [2, UNCLASSIFIED]];
        let pred = array![[4u8, 1], [2, 4]];
        let report = evaluate_maps(&[pred], &[truth], &GradeScheme::fine()).unwrap();
        assert_eq!(report.unclassified_pixels, 2);
        assert_eq!(report.building_pixels, 2);
        assert_eq!(report.f1_loc.f1, 1.0);
    }

    #[test]
    fn report_internally_consistent() {
        let truth = array![[1u8, 2, 3, 4], [1, 1, 2, 0], [3, 4, 2, 1]];
        let pred = array![[1u8, 3, 3, 4], [2, 1, 2, 1], [3, 1, 2, 1]];
        let report = evaluate_maps(&[pred], &[truth], &GradeScheme::fine()).unwrap();
        let recomputed = macro_f1(&report.per_grade.iter().map(|s| s.f1).collect::<Vec<_>>()).unwrap();
        assert!((report.f1_cls - recomputed).abs() <= 1e-12);
        assert!(
            (report.score - challenge_score(report.f1_loc.f1, report.f1_cls)).abs() <= 1e-12
        );
        for s in report.per_grade.iter().chain([&report.f1_loc, &report.f1_binary]) {
            assert!((s.f1 - f1_from_pr(s.precision, s.recall)).abs() <= 1e-12);
        }
    }

    #[test]
    fn remap_commutes_with_counting() {
        let truth = array![[1u8, 2, 3, 4, 0], [2, 3, 1, 4, 2]];
        let pred = array![[1u8, 3, 2, 4, 2], [2, 2, 1, 3, 3]];
        let scheme = GradeScheme::ahr();
        // Route A: remap maps first, count under identity-coarse scheme.
        let remap = |m: &Array2<u8>| m.mapv(|g| scheme.apply(g));
        // Identity on the coarse labels 1..3 (4 never occurs post-remap).
        let coarse_id = GradeScheme {
            name: "coarse".into(),
            map: [1, 2, 3, 3],
            labels: scheme.labels.clone(),
        };
        let a = tally_maps(&[remap(&pred)], &[remap(&truth)], &coarse_id).unwrap();
        // Route B: count fine maps under the ahr scheme.
        let b = tally_maps(&[pred], &[truth], &scheme).unwrap();
        assert_eq!(a.confusion, b.confusion);
    }

    #[test]
    fn empty_subset_errors() {
        assert!(evaluate_maps(&[], &[], &GradeScheme::fine()).is_err());
    }
}
