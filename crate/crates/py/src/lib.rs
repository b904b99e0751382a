//! Python bindings for the damage-assessment pipeline. Exposes synthetic
//! scene generation, two-stage training, prediction, evaluation, and the
//! metric helpers. Build as a cdylib and import as `bda_py`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use bda_core::analysis::cell_eval;
use bda_core::metrics::GradeScheme;
use bda_core::network::{
    decide, ensemble_predict, Checkpoint, DecisionRule, NetworkConfig,
};
use bda_core::raster_ops::{degrade_restore, AugmentationConfig};
use bda_core::scene_data::{
    generate_synthetic_scene, rasterize_grade_map, HazardType, LoadedScene, SceneRecord, Split,
};
use bda_core::training::{
    fine_tune, train_stage1_localization, train_stage2_siamese, FineTuneShare, TrainConfig,
};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_hazard(name: &str) -> PyResult<HazardType> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown hazard '{name}'")))
}

/// One synthetic pre/post scene pair with its rasterized ground truth.
#[pyclass(from_py_object)]
#[derive(Clone)]
pub struct Scene {
    inner: LoadedScene,
}

#[pymethods]
impl Scene {
    /// Deterministic synthetic scene. `profile` is the per-grade building
    /// probability (4 values summing to 1).
    #[staticmethod]
    #[pyo3(signature = (seed, side=64, n_buildings=4, profile=vec![0.25, 0.25, 0.25, 0.25], hazard="fire", event_id=None))]
    fn synthetic(
        seed: u64,
        side: usize,
        n_buildings: usize,
        profile: Vec<f64>,
        hazard: &str,
        event_id: Option<String>,
    ) -> PyResult<Scene> {
        let profile: [f64; 4] = profile
            .try_into()
            .map_err(|_| PyValueError::new_err("profile needs exactly 4 values"))?;
        let hazard_type = parse_hazard(hazard)?;
        let pair = generate_synthetic_scene(seed, side, n_buildings, profile, hazard_type)
            .map_err(err)?;
        let (truth, _) = rasterize_grade_map(&pair);
        Ok(Scene {
            inner: LoadedScene {
                record: SceneRecord {
                    event_id: event_id.unwrap_or_else(|| pair.event_id.clone()),
                    hazard_type,
                    split: Split::Train,
                    pre_path: "pre.png".into(),
                    post_path: "post.png".into(),
                    mask_path: "mask.png".into(),
                    gsd: pair.pre.gsd,
                },
                pre: pair.pre,
                post: pair.post,
                truth,
            },
        })
    }

    #[getter]
    fn event_id(&self) -> String {
        self.inner.record.event_id.clone()
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.pre.height()
    }

    #[getter]
    fn gsd(&self) -> f64 {
        self.inner.pre.gsd
    }

    /// Ground-truth grade map as nested lists (0 background, 1-4 grades).
    fn truth(&self) -> Vec<Vec<u8>> {
        self.inner.truth.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// Pre-event image as a flat row-major (channel, y, x) list.
    fn pre_pixels(&self) -> Vec<f64> {
        self.inner.pre.pixels.iter().copied().collect()
    }

    /// Both images degraded to `gsd` and restored to the native grid,
    /// returned as a new scene (truth unchanged).
    fn degraded(&self, gsd: f64) -> PyResult<Scene> {
        let mut out = self.clone();
        out.inner.pre = degrade_restore(&self.inner.pre, gsd).map_err(err)?;
        out.inner.post = degrade_restore(&self.inner.post, gsd).map_err(err)?;
        Ok(out)
    }
}

/// A trained Siamese damage classifier (stage-2 checkpoint).
#[pyclass]
pub struct Model {
    params: bda_core::network::ModelParams,
    net: NetworkConfig,
}

#[pymethods]
impl Model {
    /// Run both training stages on `scenes`.
    #[staticmethod]
    #[pyo3(signature = (scenes, encoder_widths=vec![8, 16, 32], epochs_stage1=2, epochs_stage2=4, seed=0, learning_rate=1e-3))]
    fn train(
        scenes: Vec<Scene>,
        encoder_widths: Vec<usize>,
        epochs_stage1: usize,
        epochs_stage2: usize,
        seed: u64,
        learning_rate: f64,
    ) -> PyResult<Model> {
        let loaded: Vec<LoadedScene> = scenes.iter().map(|s| s.inner.clone()).collect();
        let side = loaded
            .first()
            .ok_or_else(|| PyValueError::new_err("empty scene list"))?
            .pre
            .height();
        let net = NetworkConfig {
            input_side: side,
            encoder_widths,
            head_channels: 5,
            seed,
        };
        let cfg = TrainConfig {
            learning_rate,
            epochs_stage1,
            epochs_stage2,
            seed,
            augmentation: AugmentationConfig::light(seed),
            ..TrainConfig::default()
        };
        let s1 = train_stage1_localization(&loaded, &net, &cfg).map_err(err)?;
        let s2 = train_stage2_siamese(&loaded, &s1.params, &net, &cfg).map_err(err)?;
        Ok(Model { params: s2.params, net })
    }

    /// Predicted grade map for one scene.
    #[pyo3(signature = (scene, loc_threshold=0.5))]
    fn predict(&self, scene: &Scene, loc_threshold: f64) -> PyResult<Vec<Vec<u8>>> {
        let rule = DecisionRule { loc_threshold, ..DecisionRule::default() };
        let soft = ensemble_predict(
            std::slice::from_ref(&self.params),
            &self.net,
            &scene.inner.pre,
            &scene.inner.post,
        )
        .map_err(err)?;
        let grades = decide(&soft, &rule);
        Ok(grades.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Pixel-level evaluation over `scenes`; returns a dict with f1_loc,
    /// f1_binary, f1_cls, score, and per_grade.
    #[pyo3(signature = (scenes, scheme="fine", gsd=None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        scenes: Vec<Scene>,
        scheme: &str,
        gsd: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let scheme = GradeScheme::by_name(scheme).map_err(err)?;
        let loaded: Vec<LoadedScene> = scenes.iter().map(|s| s.inner.clone()).collect();
        let native = loaded
            .first()
            .ok_or_else(|| PyValueError::new_err("empty scene list"))?
            .pre
            .gsd;
        let r = gsd.unwrap_or(native);
        let report = cell_eval(
            &loaded,
            std::slice::from_ref(&self.params),
            &self.net,
            &DecisionRule::default(),
            &scheme,
            r,
            r,
        )
        .map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("f1_loc", report.f1_loc.f1)?;
        out.set_item("f1_binary", report.f1_binary.f1)?;
        out.set_item("f1_cls", report.f1_cls)?;
        out.set_item("score", report.score)?;
        out.set_item(
            "per_grade",
            report.per_grade.iter().map(|g| g.f1).collect::<Vec<_>>(),
        )?;
        Ok(out)
    }

    /// Continue training on `share` of a new event's scenes.
    #[pyo3(signature = (scenes, share, epochs=2, seed=0))]
    fn fine_tuned(
        &self,
        scenes: Vec<Scene>,
        share: f64,
        epochs: usize,
        seed: u64,
    ) -> PyResult<Model> {
        let loaded: Vec<LoadedScene> = scenes.iter().map(|s| s.inner.clone()).collect();
        let cfg = TrainConfig { epochs_stage2: epochs, seed, ..TrainConfig::default() };
        let share = FineTuneShare::new(share).map_err(err)?;
        let out = fine_tune(&self.params, &loaded, share, &self.net, &cfg).map_err(err)?;
        Ok(Model { params: out.params, net: self.net.clone() })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint { config: self.net.clone(), params: self.params.clone() }
            .save(std::path::Path::new(path))
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        let ck = Checkpoint::load(std::path::Path::new(path)).map_err(err)?;
        Ok(Model { params: ck.params, net: ck.config })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.params.param_count()
    }
}

/// Harmonic-mean macro F1; any zero component forces 0.
#[pyfunction]
fn macro_f1(per_grade: Vec<f64>) -> PyResult<f64> {
    bda_core::metrics::macro_f1(&per_grade).map_err(err)
}

/// xView2 challenge score 0.3*F1_loc + 0.7*F1_cls.
#[pyfunction]
fn challenge_score(f1_loc: f64, f1_cls: f64) -> f64 {
    bda_core::metrics::challenge_score(f1_loc, f1_cls)
}

/// F1 from precision and recall.
#[pyfunction]
fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    bda_core::metrics::f1_from_pr(precision, recall)
}

/// Adaptation gain A(s) = F1(s) - F1(0).
#[pyfunction]
fn adaptation_gain(f1_at_s: f64, f1_at_zero: f64) -> f64 {
    bda_core::analysis::adaptation_gain(f1_at_s, f1_at_zero)
}

/// Dice coefficient between flat prediction and target vectors.
#[pyfunction]
#[pyo3(signature = (pred, target, epsilon=1e-6))]
fn dice_coefficient(pred: Vec<f64>, target: Vec<f64>, epsilon: f64) -> PyResult<f64> {
    let p = ndarray::Array1::from(pred);
    let g = ndarray::Array1::from(target);
    bda_core::losses::dice_coefficient(p.view(), g.view(), epsilon).map_err(err)
}

/// Focal loss between flat prediction and target vectors.
#[pyfunction]
#[pyo3(signature = (pred, target, gamma=2.0, epsilon=1e-6))]
fn focal_loss(pred: Vec<f64>, target: Vec<f64>, gamma: f64, epsilon: f64) -> PyResult<f64> {
    let p = ndarray::Array1::from(pred);
    let g = ndarray::Array1::from(target);
    bda_core::losses::focal_loss(p.view(), g.view(), gamma, epsilon).map_err(err)
}

#[pymodule]
fn bda_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(challenge_score, m)?)?;
    m.add_function(wrap_pyfunction!(f1_from_pr, m)?)?;
    m.add_function(wrap_pyfunction!(adaptation_gain, m)?)?;
    m.add_function(wrap_pyfunction!(dice_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    Ok(())
}
