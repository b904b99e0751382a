//! Two-stage training: localization U-Net first, then the Siamese damage
//! classifier initialized from it. AdamW optimization with decoupled
//! weight decay, class-imbalance oversampling, and fine-tuning on a share
//! of a new event. Bit-reproducible for a fixed seed.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::{evaluate_maps, GradeScheme};
use crate::network::{
    decide, forward_localization, forward_siamese, init_params, localization_loss_grad,
    siamese_loss_grad, transfer_localization_weights, DecisionRule, ModelParams, NetworkConfig,
};
use crate::raster_ops::{augment, AugmentationConfig};
use crate::scene_data::{LoadedScene, MaskStack, UNCLASSIFIED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub oversample_damaged_factor: usize,
    pub oversample_minor_major_factor: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            epochs_stage1: 6,
            epochs_stage2: 8,
            batch_size: 4,
            oversample_damaged_factor: 2,
            oversample_minor_major_factor: 2,
            seed: 0,
            loss: LossConfig::default(),
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1)")));
            }
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        if self.oversample_damaged_factor < 1 || self.oversample_minor_major_factor < 1 {
            return Err(Error::InvalidArgument("oversampling factors must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        self.loss.validate()
    }
}

/// Fine-tuning share of a new event's scenes, in [0, 0.5].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneShare(pub f64);

impl FineTuneShare {
    pub fn new(s: f64) -> Result<FineTuneShare> {
        if !(0.0..=0.5).contains(&s) {
            return Err(Error::InvalidArgument(format!("share must be in [0, 0.5], got {s}")));
        }
        Ok(FineTuneShare(s))
    }
}

/// First/second moment accumulators and step count for AdamW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One AdamW update: standard Adam moments with bias correction, then the
/// decoupled decay theta <- theta - lr * lambda * theta applied separately
/// from the gradient step.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    for e in &grads.entries {
        if e.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(e.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .entries
        .iter_mut()
        .zip(&grads.entries)
        .zip(state.m.entries.iter_mut())
        .zip(state.v.entries.iter_mut())
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
            p.data[i] -= cfg.learning_rate * cfg.weight_decay * p.data[i];
        }
    }
    Ok(())
}

/// Grade-presence summary driving the oversampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSummary {
    pub has_damage: bool,
    pub has_minor_major: bool,
}

pub fn summarize_truth(truth: &Array2<u8>) -> SceneSummary {
    let mut has_damage = false;
    let mut has_minor_major = false;
    for &g in truth.iter() {
        if (2..=4).contains(&g) {
            has_damage = true;
        }
        if g == 2 || g == 3 {
            has_minor_major = true;
        }
    }
    SceneSummary { has_damage, has_minor_major }
}

/// Repetition count of one scene per epoch under the factor rule.
pub fn sampler_count(summary: &SceneSummary, cfg: &TrainConfig) -> usize {
    let mut count = 1;
    if summary.has_damage {
        count *= cfg.oversample_damaged_factor;
    }
    if summary.has_minor_major {
        count *= cfg.oversample_minor_major_factor;
    }
    count
}

/// Deterministic epoch index sequence: undamaged scenes once, damaged
/// scenes oversampled by the configured factors, shuffled by seed+epoch.
pub fn build_sampler(
    summaries: &[SceneSummary],
    cfg: &TrainConfig,
    epoch: usize,
) -> Vec<usize> {
    let mut order = Vec::new();
    for (i, s) in summaries.iter().enumerate() {
        for _ in 0..sampler_count(s, cfg) {
            order.push(i);
        }
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e3779b9).wrapping_add(epoch as u64 + 1));
    order.shuffle(&mut rng);
    order
}

/// One row of the training loss trace (emitted as CSV by the CLI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub f1_loc: f64,
    pub f1_cls: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
}

fn mask_target(truth: &Array2<u8>) -> MaskStack {
    // UNCLASSIFIED maps to all-zero channels, same as background.
    let cleaned = truth.mapv(|g| if g == UNCLASSIFIED { 0 } else { g });
    MaskStack::from_grade_map(&cleaned)
}

fn epoch_eval_stage1(
    params: &ModelParams,
    net_cfg: &NetworkConfig,
    scenes: &[LoadedScene],
) -> Result<f64> {
    let mut preds = Vec::with_capacity(scenes.len());
    let mut truths = Vec::with_capacity(scenes.len());
    for s in scenes {
        let loc = forward_localization(params, net_cfg, &s.pre)?;
        preds.push(loc.mapv(|v| u8::from(v >= 0.5)));
        truths.push(s.truth.mapv(|g| if (1..=4).contains(&g) { 1 } else { 0 }));
    }
    Ok(crate::metrics::localization_f1(&preds, &truths)?.f1)
}

fn epoch_eval_stage2(
    params: &ModelParams,
    net_cfg: &NetworkConfig,
    scenes: &[LoadedScene],
) -> Result<(f64, f64)> {
    let rule = DecisionRule::default();
    let mut preds = Vec::with_capacity(scenes.len());
    let mut truths = Vec::with_capacity(scenes.len());
    for s in scenes {
        let soft = forward_siamese(params, net_cfg, &s.pre, &s.post)?;
        preds.push(decide(&soft, &rule));
        truths.push(s.truth.clone());
    }
    let report = evaluate_maps(&preds, &truths, &GradeScheme::fine())?;
    Ok((report.f1_loc.f1, report.f1_cls))
}

/// Stage 1: train the 1-channel localization U-Net on pre-event images.
pub fn train_stage1_localization(
    scenes: &[LoadedScene],
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("training scene set".into()));
    }
    let loc_cfg = net_cfg.with_head(1);
    let mut params = init_params(&loc_cfg)?;
    let mut state = AdamState::new(&params);
    let summaries: Vec<SceneSummary> = scenes.iter().map(|s| summarize_truth(&s.truth)).collect();
    let mut trace = Vec::new();
    let mut counter = 0u64;
    for epoch in 0..cfg.epochs_stage1 {
        let order = build_sampler(&summaries, cfg, epoch);
        let mut epoch_loss = 0.0;
        let mut n_examples = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut batch_grads: Option<ModelParams> = None;
            for &idx in batch {
                let scene = &scenes[idx];
                let target = mask_target(&scene.truth);
                let (pre, _, mask) =
                    augment(&scene.pre, &scene.post, &target, &cfg.augmentation, counter);
                counter += 1;
                let loc = mask.data.index_axis(ndarray::Axis(0), 0).to_owned();
                let (loss, grads) =
                    localization_loss_grad(&params, &loc_cfg, &pre, &loc, &cfg.loss)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, step: n_examples });
                }
                epoch_loss += loss;
                n_examples += 1;
                match &mut batch_grads {
                    Some(acc) => acc.add_assign(&grads),
                    None => batch_grads = Some(grads),
                }
            }
            let mut grads = batch_grads.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            adamw_step(&mut params, &grads, &mut state, cfg)?;
        }
        let f1_loc = epoch_eval_stage1(&params, &loc_cfg, scenes)?;
        trace.push(TraceRow {
            epoch,
            split: "train".into(),
            loss: epoch_loss / n_examples as f64,
            f1_loc,
            f1_cls: 0.0,
        });
    }
    Ok(TrainOutcome { params, trace })
}

/// Stage 2: transfer the stage-1 trunk and train the 5-channel Siamese
/// model with the oversampler and augmentations.
pub fn train_stage2_siamese(
    scenes: &[LoadedScene],
    stage1_params: &ModelParams,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("training scene set".into()));
    }
    let params = transfer_localization_weights(stage1_params, net_cfg)?;
    train_siamese_from(params, scenes, net_cfg, cfg, cfg.epochs_stage2)
}

fn train_siamese_from(
    mut params: ModelParams,
    scenes: &[LoadedScene],
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainOutcome> {
    let siam_cfg = net_cfg.with_head(crate::scene_data::MASK_CHANNELS);
    let mut state = AdamState::new(&params);
    let summaries: Vec<SceneSummary> = scenes.iter().map(|s| summarize_truth(&s.truth)).collect();
    let mut trace = Vec::new();
    let mut counter = 1u64 << 32; // disjoint from the stage-1 counter range
    for epoch in 0..epochs {
        let order = build_sampler(&summaries, cfg, epoch);
        let mut epoch_loss = 0.0;
        let mut n_examples = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut batch_grads: Option<ModelParams> = None;
            for &idx in batch {
                let scene = &scenes[idx];
                let target = mask_target(&scene.truth);
                let (pre, post, mask) =
                    augment(&scene.pre, &scene.post, &target, &cfg.augmentation, counter);
                counter += 1;
                let (loss, grads) =
                    siamese_loss_grad(&params, &siam_cfg, &pre, &post, &mask, &cfg.loss)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, step: n_examples });
                }
                epoch_loss += loss;
                n_examples += 1;
                match &mut batch_grads {
                    Some(acc) => acc.add_assign(&grads),
                    None => batch_grads = Some(grads),
                }
            }
            let mut grads = batch_grads.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            adamw_step(&mut params, &grads, &mut state, cfg)?;
        }
        let (f1_loc, f1_cls) = epoch_eval_stage2(&params, &siam_cfg, scenes)?;
        trace.push(TraceRow {
            epoch,
            split: "train".into(),
            loss: epoch_loss / n_examples as f64,
            f1_loc,
            f1_cls,
        });
    }
    Ok(TrainOutcome { params, trace })
}

/// Deterministic selection of floor(share * n) scene indices; subsets are
/// nested across increasing shares for a fixed seed.
pub fn fine_tune_subset(n: usize, share: FineTuneShare, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let k = (share.0 * n as f64).floor() as usize;
    order.truncate(k);
    order
}

/// Continue training on floor(share * n) scenes of a new event.
/// share = 0 returns the parameters unchanged.
pub fn fine_tune(
    params: &ModelParams,
    new_event_scenes: &[LoadedScene],
    share: FineTuneShare,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let subset = fine_tune_subset(new_event_scenes.len(), share, cfg.seed);
    if subset.is_empty() {
        return Ok(TrainOutcome { params: params.clone(), trace: vec![] });
    }
    let selected: Vec<LoadedScene> = subset.iter().map(|&i| new_event_scenes[i].clone()).collect();
    train_siamese_from(params.clone(), &selected, net_cfg, cfg, cfg.epochs_stage2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;
    use crate::scene_data::{
        generate_synthetic_scene, rasterize_grade_map, HazardType, SceneRecord, Split,
    };

    fn tiny_net() -> NetworkConfig {
        NetworkConfig {
            input_side: 32,
            encoder_widths: vec![4, 8],
            head_channels: 5,
            seed: 1,
        }
    }

    pub(crate) fn synthetic_scenes(
        n: usize,
        side: usize,
        seed0: u64,
        profile: [f64; 4],
    ) -> Vec<LoadedScene> {
        (0..n)
            .map(|i| {
                let scene = generate_synthetic_scene(
                    seed0 + i as u64,
                    side,
                    4,
                    profile,
                    HazardType::Fire,
                )
                .unwrap();
                let (truth, _) = rasterize_grade_map(&scene);
                LoadedScene {
                    record: SceneRecord {
                        event_id: format!("event-{}", i % 2),
                        hazard_type: HazardType::Fire,
                        split: Split::Train,
                        pre_path: "pre.png".into(),
                        post_path: "post.png".into(),
                        mask_path: "mask.png".into(),
                        gsd: 0.5,
                    },
                    pre: scene.pre,
                    post: scene.post,
                    truth,
                }
            })
            .collect()
    }

    #[test]
    fn adamw_first_step_hand_evaluated() {
        let mut params = ModelParams {
            entries: vec![ParamEntryHelper::entry("w", vec![1], vec![0.0])],
        };
        let grads = ModelParams {
            entries: vec![ParamEntryHelper::entry("w", vec![1], vec![1.0])],
        };
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        // Delta = -lr * 1/(1 + eps) with eps = 1e-8.
        assert!((params.entries[0].data[0] + 0.0999999990).abs() < 1e-9);
    }

    struct ParamEntryHelper;
    impl ParamEntryHelper {
        fn entry(name: &str, shape: Vec<usize>, data: Vec<f64>) -> crate::network::ParamEntry {
            crate::network::ParamEntry { name: name.into(), shape, data }
        }
    }

    #[test]
    fn adamw_zero_grad_no_decay_leaves_params() {
        let mut params = ModelParams {
            entries: vec![ParamEntryHelper::entry("w", vec![2], vec![1.0, -0.5])],
        };
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        assert_eq!(params.entries[0].data, vec![1.0, -0.5]);
    }

    #[test]
    fn adamw_pure_decoupled_decay() {
        let mut params = ModelParams {
            entries: vec![ParamEntryHelper::entry("w", vec![1], vec![1.0])],
        };
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        assert!((params.entries[0].data[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn adamw_lambda_zero_matches_reference_adam() {
        // Element-wise reference implementation of the published update.
        let mut rng_vals = vec![0.3, -0.7, 1.2, 0.05];
        let grads_vals = vec![0.5, -0.2, 0.9, -1.1];
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        let mut params = ModelParams {
            entries: vec![ParamEntryHelper::entry("w", vec![4], rng_vals.clone())],
        };
        let grads = ModelParams {
            entries: vec![ParamEntryHelper::entry("w", vec![4], grads_vals.clone())],
        };
        let mut state = AdamState::new(&params);
        let mut m = vec![0.0; 4];
        let mut v = vec![0.0; 4];
        for t in 1..=3 {
            adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
            for i in 0..4 {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads_vals[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads_vals[i] * grads_vals[i];
                let mh = m[i] / (1.0 - cfg.beta1.powi(t));
                let vh = v[i] / (1.0 - cfg.beta2.powi(t));
                rng_vals[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
            }
        }
        for i in 0..4 {
            assert!((params.entries[0].data[i] - rng_vals[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn adamw_non_finite_gradient_names_parameter() {
        let mut params = ModelParams {
            entries: vec![ParamEntryHelper::entry("enc0.w", vec![1], vec![0.0])],
        };
        let grads = ModelParams {
            entries: vec![ParamEntryHelper::entry("enc0.w", vec![1], vec![f64::NAN])],
        };
        let mut state = AdamState::new(&params);
        match adamw_step(&mut params, &grads, &mut state, &TrainConfig::default()) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "enc0.w"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn sampler_counts_follow_factor_rule() {
        let cfg = TrainConfig::default();
        // Undamaged-only scene: once per epoch.
        let s = SceneSummary { has_damage: false, has_minor_major: false };
        assert_eq!(sampler_count(&s, &cfg), 1);
        // Grade-3 scene with default factors: exactly 4 per epoch.
        let s = SceneSummary { has_damage: true, has_minor_major: true };
        assert_eq!(sampler_count(&s, &cfg), 4);
        // Destroyed-only scene: damaged factor only.
        let s = SceneSummary { has_damage: true, has_minor_major: false };
        assert_eq!(sampler_count(&s, &cfg), 2);
    }

    #[test]
    fn sampler_all_undamaged_is_permutation() {
        let cfg = TrainConfig::default();
        let summaries =
            vec![SceneSummary { has_damage: false, has_minor_major: false }; 10];
        let order = build_sampler(&summaries, &cfg, 0);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_epochs_differ_but_multiset_fixed() {
        let cfg = TrainConfig::default();
        let summaries: Vec<SceneSummary> = (0..8)
            .map(|i| SceneSummary { has_damage: i % 2 == 0, has_minor_major: i % 4 == 0 })
            .collect();
        let e0 = build_sampler(&summaries, &cfg, 0);
        let e1 = build_sampler(&summaries, &cfg, 1);
        assert_ne!(e0, e1);
        let mut a = e0.clone();
        let mut b = e1.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_eq!(build_sampler(&summaries, &cfg, 0), e0);
    }

    #[test]
    fn stage1_zero_epochs_returns_init() {
        let scenes = synthetic_scenes(4, 32, 50, [0.5, 0.2, 0.2, 0.1]);
        let net = tiny_net();
        let cfg = TrainConfig { epochs_stage1: 0, ..TrainConfig::default() };
        let out = train_stage1_localization(&scenes, &net, &cfg).unwrap();
        assert_eq!(out.params, init_params(&net.with_head(1)).unwrap());
        assert!(out.trace.is_empty());
    }

    #[test]
    fn stage1_loss_descends_and_is_deterministic() {
        let scenes = synthetic_scenes(8, 32, 60, [0.5, 0.2, 0.2, 0.1]);
        let net = tiny_net();
        let cfg = TrainConfig { epochs_stage1: 4, ..TrainConfig::default() };
        let a = train_stage1_localization(&scenes, &net, &cfg).unwrap();
        let b = train_stage1_localization(&scenes, &net, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert!(
            a.trace.last().unwrap().loss < a.trace.first().unwrap().loss,
            "no descent: {:?}",
            a.trace
        );
    }

    #[test]
    fn stage2_zero_epochs_equals_transfer() {
        let scenes = synthetic_scenes(4, 32, 70, [0.25, 0.25, 0.25, 0.25]);
        let net = tiny_net();
        let cfg = TrainConfig { epochs_stage1: 1, epochs_stage2: 0, ..TrainConfig::default() };
        let s1 = train_stage1_localization(&scenes, &net, &cfg).unwrap();
        let s2 = train_stage2_siamese(&scenes, &s1.params, &net, &cfg).unwrap();
        assert_eq!(s2.params, transfer_localization_weights(&s1.params, &net).unwrap());
    }

    #[test]
    fn stage2_improves_over_untrained_transfer() {
        let scenes = synthetic_scenes(10, 32, 80, [0.25, 0.25, 0.25, 0.25]);
        let net = tiny_net();
        let cfg = TrainConfig {
            epochs_stage1: 3,
            epochs_stage2: 6,
            ..TrainConfig::default()
        };
        let s1 = train_stage1_localization(&scenes, &net, &cfg).unwrap();
        let transferred = transfer_localization_weights(&s1.params, &net).unwrap();
        let mean_loss = |p: &ModelParams| -> f64 {
            scenes
                .iter()
                .map(|s| {
                    siamese_loss_grad(p, &net, &s.pre, &s.post, &mask_target(&s.truth), &cfg.loss)
                        .unwrap()
                        .0
                })
                .sum::<f64>()
                / scenes.len() as f64
        };
        let before = mean_loss(&transferred);
        let s2 = train_stage2_siamese(&scenes, &s1.params, &net, &cfg).unwrap();
        let after = mean_loss(&s2.params);
        assert!(after < before, "mean loss {before} -> {after}");
        assert!(
            s2.trace.last().unwrap().loss < s2.trace.first().unwrap().loss,
            "no descent: {:?}",
            s2.trace
        );
    }

    #[test]
    fn fine_tune_zero_share_is_identity() {
        let scenes = synthetic_scenes(6, 32, 90, [0.25, 0.25, 0.25, 0.25]);
        let net = tiny_net();
        let params = init_params(&net).unwrap();
        let out =
            fine_tune(&params, &scenes, FineTuneShare::new(0.0).unwrap(), &net, &TrainConfig::default())
                .unwrap();
        assert_eq!(out.params, params);
    }

    #[test]
    fn fine_tune_subsets_nested_and_deterministic() {
        let seed = 5;
        let s2 = fine_tune_subset(20, FineTuneShare::new(0.2).unwrap(), seed);
        let s5 = fine_tune_subset(20, FineTuneShare::new(0.5).unwrap(), seed);
        assert_eq!(s2.len(), 4);
        assert_eq!(s5.len(), 10);
        assert_eq!(&s5[..4], &s2[..]);
        assert_eq!(fine_tune_subset(20, FineTuneShare::new(0.5).unwrap(), seed), s5);
    }

    #[test]
    fn share_out_of_range_rejected() {
        assert!(FineTuneShare::new(0.6).is_err());
        assert!(FineTuneShare::new(-0.1).is_err());
    }
}
