//! Small Siamese U-Net with shared weights, concatenation fusion, a
//! 5-channel head, the damage decision rule, and prediction ensembling.
//!
//! One parameter set serves both forward passes of the Siamese model; the
//! trunk (encoder + decoder) is identical to the stage-1 localization
//! U-Net so its weights transfer exactly.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossConfig};
use crate::nn;
use crate::scene_data::{MaskStack, RasterImage, MASK_CHANNELS};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_side: usize,
    /// Channel widths per encoder level; the last entry is the bottleneck.
    pub encoder_widths: Vec<usize>,
    /// 1 for the localization stage, 5 for the Siamese stage.
    pub head_channels: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_side: 128,
            encoder_widths: vec![16, 32, 64],
            head_channels: MASK_CHANNELS,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn levels(&self) -> usize {
        self.encoder_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() {
            return Err(Error::InvalidArgument("encoder_widths must be non-empty".into()));
        }
        if self.head_channels != 1 && self.head_channels != MASK_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "head_channels must be 1 or {MASK_CHANNELS}"
            )));
        }
        let div = 1usize << (self.levels() - 1);
        if self.input_side % div != 0 {
            return Err(Error::InvalidArgument(format!(
                "input side {} not divisible by {div}",
                self.input_side
            )));
        }
        Ok(())
    }

    pub fn with_head(&self, head_channels: usize) -> NetworkConfig {
        NetworkConfig { head_channels, ..self.clone() }
    }
}

/// One named weight array. Shape is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named weight arrays; the single shared parameter
/// set of the model. Doubles as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelParams {
    pub entries: Vec<ParamEntry>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: vec![0.0; e.data.len()],
                })
                .collect(),
        }
    }

    /// Element-wise accumulate; shapes must agree entry-for-entry.
    pub fn add_assign(&mut self, other: &ModelParams) {
        debug_assert_eq!(self.entries.len(), other.entries.len());
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            debug_assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for e in self.entries.iter_mut() {
            for v in e.data.iter_mut() {
                *v *= factor;
            }
        }
    }

    fn array4(&self, name: &str) -> Result<Array4<f64>> {
        let e = self.get(name)?;
        let s = &e.shape;
        Array4::from_shape_vec((s[0], s[1], s[2], s[3]), e.data.clone())
            .map_err(|err| Error::ShapeMismatch(format!("{name}: {err}")))
    }

    fn array2(&self, name: &str) -> Result<Array2<f64>> {
        let e = self.get(name)?;
        Array2::from_shape_vec((e.shape[0], e.shape[1]), e.data.clone())
            .map_err(|err| Error::ShapeMismatch(format!("{name}: {err}")))
    }

    fn array1(&self, name: &str) -> Result<Array1<f64>> {
        let e = self.get(name)?;
        Ok(Array1::from_vec(e.data.clone()))
    }

    fn set(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.name == name) {
            e.shape = shape;
            e.data = data;
        } else {
            self.entries.push(ParamEntry { name: name.into(), shape, data });
        }
    }
}

/// Decision rule turning the soft 5-channel output into grades.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionRule {
    pub loc_threshold: f64,
    pub mode: DecisionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionMode {
    WeightedAverage,
    Argmax,
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule { loc_threshold: 0.5, mode: DecisionMode::WeightedAverage }
    }
}

fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

fn head_spec(cfg: &NetworkConfig) -> (&'static str, usize) {
    let c0 = cfg.encoder_widths[0];
    if cfg.head_channels == 1 {
        ("head", c0)
    } else {
        ("fusion", 2 * c0)
    }
}

/// Fresh parameters: He fan-in initialization from the configured seed,
/// zero biases.
pub fn init_params(cfg: &NetworkConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::default();
    let widths = &cfg.encoder_widths;
    let levels = cfg.levels();
    let mut in_ch = IMAGE_CHANNELS;
    for (i, &out_ch) in widths.iter().enumerate() {
        let fan_in = in_ch * 9;
        params.set(
            &format!("enc{i}.w"),
            vec![out_ch, in_ch, 3, 3],
            he_normal(&mut rng, fan_in, out_ch * in_ch * 9),
        );
        params.set(&format!("enc{i}.b"), vec![out_ch], vec![0.0; out_ch]);
        in_ch = out_ch;
    }
    for i in (0..levels - 1).rev() {
        let cat = widths[i + 1] + widths[i];
        let out_ch = widths[i];
        params.set(
            &format!("dec{i}.w"),
            vec![out_ch, cat, 3, 3],
            he_normal(&mut rng, cat * 9, out_ch * cat * 9),
        );
        params.set(&format!("dec{i}.b"), vec![out_ch], vec![0.0; out_ch]);
    }
    let (head_name, head_in) = head_spec(cfg);
    params.set(
        &format!("{head_name}.w"),
        vec![cfg.head_channels, head_in],
        he_normal(&mut rng, head_in, cfg.head_channels * head_in),
    );
    params.set(&format!("{head_name}.b"), vec![cfg.head_channels], vec![0.0; cfg.head_channels]);
    Ok(params)
}

/// Copy the stage-1 trunk into a fresh Siamese parameter set; the fusion
/// layer is freshly initialized from `cfg.seed`.
pub fn transfer_localization_weights(
    loc_params: &ModelParams,
    cfg: &NetworkConfig,
) -> Result<ModelParams> {
    let siamese_cfg = cfg.with_head(MASK_CHANNELS);
    let mut params = init_params(&siamese_cfg)?;
    for entry in &loc_params.entries {
        if entry.name.starts_with("enc") || entry.name.starts_with("dec") {
            let dst = params.get(&entry.name)?;
            if dst.shape != entry.shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter '{}': {:?} vs {:?}",
                    entry.name, dst.shape, entry.shape
                )));
            }
            params.set(&entry.name, entry.shape.clone(), entry.data.clone());
        }
    }
    Ok(params)
}

struct TrunkLayers {
    enc: Vec<(Array4<f64>, Array1<f64>)>,
    dec: Vec<(Array4<f64>, Array1<f64>)>,
}

fn trunk_layers(params: &ModelParams, cfg: &NetworkConfig) -> Result<TrunkLayers> {
    let levels = cfg.levels();
    let mut enc = Vec::with_capacity(levels);
    for i in 0..levels {
        enc.push((params.array4(&format!("enc{i}.w"))?, params.array1(&format!("enc{i}.b"))?));
    }
    let mut dec = Vec::with_capacity(levels - 1);
    for i in 0..levels - 1 {
        dec.push((params.array4(&format!("dec{i}.w"))?, params.array1(&format!("dec{i}.b"))?));
    }
    Ok(TrunkLayers { enc, dec })
}

struct TrunkCache {
    conv_in: Vec<Array3<f64>>,
    enc_pre: Vec<Array3<f64>>,
    enc_act: Vec<Array3<f64>>,
    dec_in: Vec<Array3<f64>>,
    dec_pre: Vec<Array3<f64>>,
}

fn forward_trunk(layers: &TrunkLayers, x: &Array3<f64>) -> (Array3<f64>, TrunkCache) {
    let levels = layers.enc.len();
    let mut cache = TrunkCache {
        conv_in: Vec::with_capacity(levels),
        enc_pre: Vec::with_capacity(levels),
        enc_act: Vec::with_capacity(levels),
        dec_in: vec![Array3::zeros((0, 0, 0)); levels.saturating_sub(1)],
        dec_pre: vec![Array3::zeros((0, 0, 0)); levels.saturating_sub(1)],
    };
    let mut cur = x.clone();
    for (i, (w, b)) in layers.enc.iter().enumerate() {
        if i > 0 {
            cur = nn::avgpool2_forward(&cur);
        }
        let pre = nn::conv3x3_forward(&cur, w, b);
        let act = nn::relu_forward(&pre);
        cache.conv_in.push(cur);
        cache.enc_pre.push(pre);
        cache.enc_act.push(act.clone());
        cur = act;
    }
    // cur is the bottleneck activation.
    for i in (0..levels - 1).rev() {
        let up = nn::upsample2_forward(&cur);
        let cat = nn::concat_channels(&up, &cache.enc_act[i]);
        let (w, b) = &layers.dec[i];
        let pre = nn::conv3x3_forward(&cat, w, b);
        cur = nn::relu_forward(&pre);
        cache.dec_in[i] = cat;
        cache.dec_pre[i] = pre;
    }
    (cur, cache)
}

/// Accumulates trunk gradients into `grads`; returns nothing for the input.
fn backward_trunk(
    layers: &TrunkLayers,
    cache: &TrunkCache,
    gfeat: Array3<f64>,
    grads: &mut ModelParams,
) {
    let levels = layers.enc.len();
    let mut enc_act_grads: Vec<Option<Array3<f64>>> = vec![None; levels];
    let mut g = gfeat;
    for i in 0..levels - 1 {
        let gpre = nn::relu_backward(&cache.dec_pre[i], &g);
        let (w, _) = &layers.dec[i];
        let (gcat, gw, gb) = nn::conv3x3_backward(&cache.dec_in[i], w, &gpre);
        accumulate(grads, &format!("dec{i}.w"), gw.as_slice().unwrap());
        accumulate(grads, &format!("dec{i}.b"), gb.as_slice().unwrap());
        let up_channels = if i == levels - 2 {
            layers.enc[levels - 1].0.dim().0
        } else {
            layers.dec[i + 1].0.dim().0
        };
        let (gup, gskip) = nn::split_channels(&gcat, up_channels);
        add_opt(&mut enc_act_grads[i], gskip);
        g = nn::upsample2_backward(&gup);
    }
    add_opt(&mut enc_act_grads[levels - 1], g);

    let mut carry: Option<Array3<f64>> = None;
    for i in (0..levels).rev() {
        let mut gact = enc_act_grads[i].take().expect("encoder grad present");
        if let Some(c) = carry.take() {
            gact += &c;
        }
        let gpre = nn::relu_backward(&cache.enc_pre[i], &gact);
        let (w, _) = &layers.enc[i];
        let (gx, gw, gb) = nn::conv3x3_backward(&cache.conv_in[i], w, &gpre);
        accumulate(grads, &format!("enc{i}.w"), gw.as_slice().unwrap());
        accumulate(grads, &format!("enc{i}.b"), gb.as_slice().unwrap());
        if i > 0 {
            carry = Some(nn::avgpool2_backward(&gx));
        }
    }
}

fn accumulate(grads: &mut ModelParams, name: &str, values: &[f64]) {
    let e = grads
        .entries
        .iter_mut()
        .find(|e| e.name == name)
        .expect("gradient entry exists");
    for (a, b) in e.data.iter_mut().zip(values) {
        *a += b;
    }
}

fn add_opt(slot: &mut Option<Array3<f64>>, g: Array3<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn check_input(cfg: &NetworkConfig, image: &RasterImage) -> Result<()> {
    cfg.validate()?;
    if image.channels() != IMAGE_CHANNELS {
        return Err(Error::ShapeMismatch(format!(
            "expected {IMAGE_CHANNELS} image channels, got {}",
            image.channels()
        )));
    }
    let div = 1usize << (cfg.levels() - 1);
    if image.height() % div != 0 || image.width() % div != 0 {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} not divisible by {div}",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Stage-1 forward pass: building probability map from the pre-event image.
pub fn forward_localization(
    params: &ModelParams,
    cfg: &NetworkConfig,
    pre: &RasterImage,
) -> Result<Array2<f64>> {
    check_input(cfg, pre)?;
    let layers = trunk_layers(params, cfg)?;
    let (feat, _) = forward_trunk(&layers, &pre.pixels);
    let w = params.array2("head.w")?;
    let b = params.array1("head.b")?;
    let out = nn::sigmoid_forward(&nn::conv1x1_forward(&feat, &w, &b));
    Ok(out.index_axis(ndarray::Axis(0), 0).to_owned())
}

/// Siamese forward pass: shared trunk on pre and post, channel
/// concatenation, 1x1 fusion, 5 sigmoid channels.
pub fn forward_siamese(
    params: &ModelParams,
    cfg: &NetworkConfig,
    pre: &RasterImage,
    post: &RasterImage,
) -> Result<MaskStack> {
    check_input(cfg, pre)?;
    check_input(cfg, post)?;
    if pre.pixels.dim() != post.pixels.dim() {
        return Err(Error::ShapeMismatch("pre/post dimensions differ".into()));
    }
    let layers = trunk_layers(params, cfg)?;
    let (f_pre, _) = forward_trunk(&layers, &pre.pixels);
    let (f_post, _) = forward_trunk(&layers, &post.pixels);
    let cat = nn::concat_channels(&f_pre, &f_post);
    let w = params.array2("fusion.w")?;
    let b = params.array1("fusion.b")?;
    let out = nn::sigmoid_forward(&nn::conv1x1_forward(&cat, &w, &b));
    MaskStack::from_data(out)
}

/// Loss and full parameter gradient for one localization training example.
pub fn localization_loss_grad(
    params: &ModelParams,
    cfg: &NetworkConfig,
    pre: &RasterImage,
    target_loc: &Array2<f64>,
    loss_cfg: &LossConfig,
) -> Result<(f64, ModelParams)> {
    check_input(cfg, pre)?;
    if target_loc.dim() != (pre.height(), pre.width()) {
        return Err(Error::ShapeMismatch("target/image dimensions differ".into()));
    }
    let layers = trunk_layers(params, cfg)?;
    let (feat, cache) = forward_trunk(&layers, &pre.pixels);
    let w = params.array2("head.w")?;
    let b = params.array1("head.b")?;
    let logits = nn::conv1x1_forward(&feat, &w, &b);
    let pred = nn::sigmoid_forward(&logits);
    let target = target_loc
        .clone()
        .into_shape((1, pre.height(), pre.width()))
        .expect("reshape");
    let (loss, gpred) = combined_loss(pred.view(), target.view(), loss_cfg)?;

    let mut grads = params.zeros_like();
    let glogits = nn::sigmoid_backward(&pred, &gpred);
    let (gfeat, gw, gb) = nn::conv1x1_backward(&feat, &w, &glogits);
    accumulate(&mut grads, "head.w", gw.as_slice().unwrap());
    accumulate(&mut grads, "head.b", gb.as_slice().unwrap());
    backward_trunk(&layers, &cache, gfeat, &mut grads);
    Ok((loss, grads))
}

/// Loss and full parameter gradient for one Siamese training example.
/// Trunk gradients accumulate over both branches (shared weights).
pub fn siamese_loss_grad(
    params: &ModelParams,
    cfg: &NetworkConfig,
    pre: &RasterImage,
    post: &RasterImage,
    target: &MaskStack,
    loss_cfg: &LossConfig,
) -> Result<(f64, ModelParams)> {
    check_input(cfg, pre)?;
    check_input(cfg, post)?;
    let layers = trunk_layers(params, cfg)?;
    let (f_pre, cache_pre) = forward_trunk(&layers, &pre.pixels);
    let (f_post, cache_post) = forward_trunk(&layers, &post.pixels);
    let cat = nn::concat_channels(&f_pre, &f_post);
    let w = params.array2("fusion.w")?;
    let b = params.array1("fusion.b")?;
    let logits = nn::conv1x1_forward(&cat, &w, &b);
    let pred = nn::sigmoid_forward(&logits);
    let (loss, gpred) = combined_loss(pred.view(), target.data.view(), loss_cfg)?;

    let mut grads = params.zeros_like();
    let glogits = nn::sigmoid_backward(&pred, &gpred);
    let (gcat, gw, gb) = nn::conv1x1_backward(&cat, &w, &glogits);
    accumulate(&mut grads, "fusion.w", gw.as_slice().unwrap());
    accumulate(&mut grads, "fusion.b", gb.as_slice().unwrap());
    let c0 = f_pre.dim().0;
    let (g_pre, g_post) = nn::split_channels(&gcat, c0);
    backward_trunk(&layers, &cache_pre, g_pre, &mut grads);
    backward_trunk(&layers, &cache_post, g_post, &mut grads);
    Ok((loss, grads))
}

/// Collapse a soft 5-channel prediction into a per-pixel grade map.
pub fn decide(pred: &MaskStack, rule: &DecisionRule) -> Array2<u8> {
    let h = pred.height();
    let w = pred.width();
    let mut grades = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if pred.data[(0, y, x)] < rule.loc_threshold {
                continue;
            }
            let p: [f64; 4] = std::array::from_fn(|i| pred.data[(i + 1, y, x)]);
            let grade = match rule.mode {
                DecisionMode::WeightedAverage => {
                    let total: f64 = p.iter().sum();
                    if total == 0.0 {
                        1
                    } else {
                        let d: f64 =
                            p.iter().enumerate().map(|(i, &v)| (i + 1) as f64 * v).sum::<f64>()
                                / total;
                        // Round half up toward higher damage.
                        ((d + 0.5).floor() as u8).clamp(1, 4)
                    }
                }
                DecisionMode::Argmax => {
                    let mut best = 0usize;
                    for i in 1..4 {
                        if p[i] > p[best] {
                            best = i;
                        }
                    }
                    (best + 1) as u8
                }
            };
            grades[(y, x)] = grade;
        }
    }
    grades
}

/// Arithmetic mean of the soft outputs over an ensemble of models.
pub fn ensemble_predict(
    models: &[ModelParams],
    cfg: &NetworkConfig,
    pre: &RasterImage,
    post: &RasterImage,
) -> Result<MaskStack> {
    if models.is_empty() {
        return Err(Error::Empty("model ensemble".into()));
    }
    let mut acc: Option<Array3<f64>> = None;
    for m in models {
        let out = forward_siamese(m, cfg, pre, post)?;
        match &mut acc {
            Some(a) => *a += &out.data,
            None => acc = Some(out.data),
        }
    }
    let mut data = acc.unwrap();
    data.mapv_inplace(|v| v / models.len() as f64);
    MaskStack::from_data(data)
}

/// Self-describing checkpoint container; JSON round-trip is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&raw)?)
    }
}
