//! End-to-end synthetic benchmark used to size the acceptance run:
//! trains both stages on 64 synthetic 128-px scenes and reports held-out
//! F1 scores and wall time.

use std::time::Instant;

use bda_core::metrics::GradeScheme;
use bda_core::network::{DecisionRule, NetworkConfig};
use bda_core::raster_ops::AugmentationConfig;
use bda_core::scene_data::{
    generate_synthetic_scene, rasterize_grade_map, HazardType, LoadedScene, SceneRecord, Split,
};
use bda_core::training::{train_stage1_localization, train_stage2_siamese, TrainConfig};

fn scenes(n: usize, seed0: u64, split: Split) -> Vec<LoadedScene> {
    let profiles = [
        [0.55, 0.15, 0.15, 0.15],
        [0.25, 0.25, 0.25, 0.25],
        [0.40, 0.10, 0.20, 0.30],
        [0.40, 0.30, 0.20, 0.10],
    ];
    let hazards = [HazardType::Fire, HazardType::Flood, HazardType::Earthquake];
    (0..n)
        .map(|i| {
            let scene = generate_synthetic_scene(
                seed0 + i as u64,
                128,
                6,
                profiles[i % profiles.len()],
                hazards[i % hazards.len()],
            )
            .unwrap();
            let (truth, _) = rasterize_grade_map(&scene);
            LoadedScene {
                record: SceneRecord {
                    event_id: format!("event-{}", i % 4),
                    hazard_type: hazards[i % hazards.len()],
                    split,
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

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs1: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let epochs2: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let widths: Vec<usize> = args
        .get(3)
        .map(|s| s.split(',').map(|w| w.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![8, 16, 32]);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let train = scenes(64, 1000, Split::Train);
    let test = scenes(16, 9000, Split::Test);
    let net = NetworkConfig {
        input_side: 128,
        encoder_widths: widths,
        head_channels: 5,
        seed: 7,
    };
    let cfg = TrainConfig {
        learning_rate: lr,
        epochs_stage1: epochs1,
        epochs_stage2: epochs2,
        augmentation: AugmentationConfig::light(7),
        seed: 7,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let s1 = train_stage1_localization(&train, &net, &cfg).unwrap();
    println!("stage1 done in {:.1}s", t0.elapsed().as_secs_f64());
    for r in &s1.trace {
        println!("  s1 epoch {} loss {:.4} f1_loc {:.4}", r.epoch, r.loss, r.f1_loc);
    }
    let s2 = train_stage2_siamese(&train, &s1.params, &net, &cfg).unwrap();
    println!("stage2 done in {:.1}s total", t0.elapsed().as_secs_f64());
    for r in &s2.trace {
        println!(
            "  s2 epoch {} loss {:.4} f1_loc {:.4} f1_cls {:.4}",
            r.epoch, r.loss, r.f1_loc, r.f1_cls
        );
    }
    let report = bda_core::analysis::cell_eval(
        &test,
        std::slice::from_ref(&s2.params),
        &net,
        &DecisionRule::default(),
        &GradeScheme::fine(),
        0.5,
        0.5,
    )
    .unwrap();
    println!(
        "held-out: f1_loc {:.4} f1_cls {:.4} per-grade {:?} in {:.1}s",
        report.f1_loc.f1,
        report.f1_cls,
        report.per_grade.iter().map(|g| (g.f1 * 1e4).round() / 1e4).collect::<Vec<_>>(),
        t0.elapsed().as_secs_f64()
    );
    let coarse = bda_core::analysis::cell_eval(
        &test,
        std::slice::from_ref(&s2.params),
        &net,
        &DecisionRule::default(),
        &GradeScheme::fine(),
        10.0,
        10.0,
    )
    .unwrap();
    println!(
        "10 m: f1_loc {:.4} f1_cls {:.4} per-grade {:?}",
        coarse.f1_loc.f1,
        coarse.f1_cls,
        coarse.per_grade.iter().map(|g| (g.f1 * 1e4).round() / 1e4).collect::<Vec<_>>(),
    );
}
