//! Dice and Focal losses and their weighted combination, with exact
//! analytic gradients. All reductions run row-major in double precision
//! so repeated runs are bit-stable.

use ndarray::{Array3, ArrayView1, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Focal exponent; 0 reduces to cross-entropy.
    pub gamma: f64,
    pub dice_weight: f64,
    pub focal_weight: f64,
    /// Denominator guard and log clamp.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.0,
            dice_weight: 1.0,
            focal_weight: 1.0,
            epsilon: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::InvalidArgument("gamma must be >= 0".into()));
        }
        if self.dice_weight < 0.0 || self.focal_weight < 0.0 {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if self.dice_weight == 0.0 && self.focal_weight == 0.0 {
            return Err(Error::InvalidArgument("loss weights must not both be zero".into()));
        }
        Ok(())
    }
}

/// Dice overlap coefficient 2*sum(p*g) / (sum(p^2) + sum(g^2) + eps),
/// 1 at perfect overlap, 0 on disjoint supports.
pub fn dice_coefficient(p: ArrayView1<f64>, g: ArrayView1<f64>, epsilon: f64) -> Result<f64> {
    if p.len() != g.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", p.len(), g.len())));
    }
    let mut num = 0.0;
    let mut den = epsilon;
    for (&pi, &gi) in p.iter().zip(g.iter()) {
        num += pi * gi;
        den += pi * pi + gi * gi;
    }
    Ok(2.0 * num / den)
}

/// Mean over pixels of -(1 - r)^gamma * log(r), where
/// r = (1-g)(1-p) + g*p is the probability assigned to the true side.
/// Predictions are clamped to [eps, 1-eps] before the log.
pub fn focal_loss(p: ArrayView1<f64>, g: ArrayView1<f64>, gamma: f64, epsilon: f64) -> Result<f64> {
    if p.len() != g.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", p.len(), g.len())));
    }
    if p.is_empty() {
        return Err(Error::Empty("focal loss inputs".into()));
    }
    let mut acc = 0.0;
    for (&pi, &gi) in p.iter().zip(g.iter()) {
        let pc = pi.clamp(epsilon, 1.0 - epsilon);
        let r = (1.0 - gi) * (1.0 - pc) + gi * pc;
        acc += -(1.0 - r).powf(gamma) * r.ln();
    }
    Ok(acc / p.len() as f64)
}

/// Scalar combined loss over all channels plus its gradient w.r.t. pred:
/// dice_weight * sum_c (1 - dice_c) + focal_weight * sum_c focal_c.
pub fn combined_loss(
    pred: ArrayView3<f64>,
    target: ArrayView3<f64>,
    cfg: &LossConfig,
) -> Result<(f64, Array3<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", pred.dim(), target.dim())));
    }
    cfg.validate()?;
    let (channels, h, w) = pred.dim();
    let n = (h * w) as f64;
    let mut loss = 0.0;
    let mut grad = Array3::zeros(pred.dim());
    for c in 0..channels {
        let pc = pred.index_axis(ndarray::Axis(0), c);
        let gc = target.index_axis(ndarray::Axis(0), c);

        if cfg.dice_weight > 0.0 {
            let mut num = 0.0; // sum p*g
            let mut den = cfg.epsilon; // sum p^2 + sum g^2 + eps
            for (&pi, &gi) in pc.iter().zip(gc.iter()) {
                num += pi * gi;
                den += pi * pi + gi * gi;
            }
            loss += cfg.dice_weight * (1.0 - 2.0 * num / den);
            // d(1 - 2num/den)/dp_i = -(2 g_i den - 2 num * 2 p_i) / den^2
            let den2 = den * den;
            for y in 0..h {
                for x in 0..w {
                    let pi = pc[(y, x)];
                    let gi = gc[(y, x)];
                    grad[(c, y, x)] +=
                        cfg.dice_weight * (-(2.0 * gi * den - 4.0 * num * pi) / den2);
                }
            }
        }

        if cfg.focal_weight > 0.0 {
            let gamma = cfg.gamma;
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let pi = pc[(y, x)];
                    let gi = gc[(y, x)];
                    let clamped = pi.clamp(cfg.epsilon, 1.0 - cfg.epsilon);
                    let r = (1.0 - gi) * (1.0 - clamped) + gi * clamped;
                    acc += -(1.0 - r).powf(gamma) * r.ln();
                    // dL/dr = gamma (1-r)^(gamma-1) ln r - (1-r)^gamma / r;
                    // dr/dp = 2g - 1; clamped pixels get zero gradient.
                    if pi > cfg.epsilon && pi < 1.0 - cfg.epsilon {
                        let dldr = if gamma == 0.0 {
                            -1.0 / r
                        } else {
                            gamma * (1.0 - r).powf(gamma - 1.0) * r.ln() - (1.0 - r).powf(gamma) / r
                        };
                        grad[(c, y, x)] += cfg.focal_weight * dldr * (2.0 * gi - 1.0) / n;
                    }
                }
            }
            loss += cfg.focal_weight * acc / n;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-6;

    #[test]
    fn dice_perfect_overlap() {
        let g = Array1::from_vec(vec![1.0, 0.0, 1.0, 1.0]);
        let d = dice_coefficient(g.view(), g.view(), EPS).unwrap();
        assert!((d - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn dice_half_confidence_closed_form() {
        // p = 0.5 everywhere, g = 1: 2(0.5N)/(0.25N + N) = 0.8.
        let n = 64;
        let p = Array1::from_elem(n, 0.5);
        let g = Array1::from_elem(n, 1.0);
        let d = dice_coefficient(p.view(), g.view(), EPS).unwrap();
        assert!((d - 0.8).abs() < 1e-6);
    }

    #[test]
    fn dice_disjoint_supports() {
        let p = Array1::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let g = Array1::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let d = dice_coefficient(p.view(), g.view(), EPS).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn dice_symmetric_for_binary_inputs() {
        let p = Array1::from_vec(vec![1.0, 0.0, 1.0, 0.0, 1.0]);
        let g = Array1::from_vec(vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        let a = dice_coefficient(p.view(), g.view(), EPS).unwrap();
        let b = dice_coefficient(g.view(), p.view(), EPS).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dice_length_mismatch_errors() {
        let p = Array1::zeros(3);
        let g = Array1::zeros(4);
        assert!(dice_coefficient(p.view(), g.view(), EPS).is_err());
    }

    #[test]
    fn focal_correct_confident_is_tiny() {
        let g = Array1::from_vec(vec![1.0, 0.0, 1.0]);
        let loss = focal_loss(g.view(), g.view(), 2.0, EPS).unwrap();
        assert!(loss <= 2e-6, "loss = {loss}");
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let loss = focal_loss(
            Array1::from_elem(1, 0.5).view(),
            Array1::from_elem(1, 1.0).view(),
            0.0,
            EPS,
        )
        .unwrap();
        assert!((loss - 0.693147).abs() < 1e-6);

        // Property: gamma = 0 matches the binary cross-entropy through r.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Array1<f64> = Array1::from_iter((0..100).map(|_| rng.gen_range(0.01..0.99)));
        let g: Array1<f64> = Array1::from_iter((0..100).map(|_| f64::from(rng.gen::<bool>())));
        let focal = focal_loss(p.view(), g.view(), 0.0, EPS).unwrap();
        let bce = -p
            .iter()
            .zip(g.iter())
            .map(|(&pi, &gi)| gi * pi.ln() + (1.0 - gi) * (1.0 - pi).ln())
            .sum::<f64>()
            / 100.0;
        assert!((focal - bce).abs() <= 1e-12);
    }

    #[test]
    fn focal_hand_evaluated_point() {
        // gamma=2, g=1, p=0.9: r=0.9, loss = 0.01 * -ln(0.9) = 1.05361e-3.
        let loss = focal_loss(
            Array1::from_elem(1, 0.9).view(),
            Array1::from_elem(1, 1.0).view(),
            2.0,
            EPS,
        )
        .unwrap();
        assert!((loss - 1.05361e-3).abs() < 1e-7, "loss = {loss}");
    }

    #[test]
    fn focal_monotone_in_p_for_positive_target() {
        let g = Array1::from_elem(1, 1.0);
        let mut prev = f64::INFINITY;
        for i in 1..99 {
            let p = Array1::from_elem(1, i as f64 / 100.0);
            let loss = focal_loss(p.view(), g.view(), 2.0, EPS).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn combined_on_perfect_hard_masks() {
        // Every damage channel gets support; empty channels are the
        // documented degenerate case with dice loss 1.
        let mut target = Array3::zeros((5, 8, 8));
        for (i, g) in (1..=4).enumerate() {
            for x in 0..8 {
                target[(0, 2 * i, x)] = 1.0;
                target[(g, 2 * i, x)] = 1.0;
            }
        }
        let (loss, grad) = combined_loss(target.view(), target.view(), &LossConfig::default()).unwrap();
        assert!(loss < 5e-5, "loss = {loss}");
        let max_grad = grad.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max_grad <= 1e-4, "max grad = {max_grad}");
    }

    #[test]
    fn combined_dice_weight_zero_is_focal_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = Array3::from_shape_fn((5, 6, 6), |_| rng.gen_range(0.05..0.95));
        let target = Array3::from_shape_fn((5, 6, 6), |_| f64::from(rng.gen::<bool>()));
        let cfg = LossConfig { dice_weight: 0.0, ..LossConfig::default() };
        let (loss, _) = combined_loss(pred.view(), target.view(), &cfg).unwrap();
        let mut expect = 0.0;
        for c in 0..5 {
            expect += focal_loss(
                Array1::from_iter(pred.index_axis(ndarray::Axis(0), c).iter().copied()).view(),
                Array1::from_iter(target.index_axis(ndarray::Axis(0), c).iter().copied()).view(),
                cfg.gamma,
                cfg.epsilon,
            )
            .unwrap();
        }
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pred = Array3::from_shape_fn((5, 8, 8), |_| rng.gen_range(0.05..0.95));
        let target = Array3::from_shape_fn((5, 8, 8), |_| f64::from(rng.gen::<bool>()));
        let cfg = LossConfig::default();
        let (_, grad) = combined_loss(pred.view(), target.view(), &cfg).unwrap();
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for c in 0..5 {
            for y in 0..8 {
                for x in 0..8 {
                    let orig = pred[(c, y, x)];
                    pred[(c, y, x)] = orig + h;
                    let (lp, _) = combined_loss(pred.view(), target.view(), &cfg).unwrap();
                    pred[(c, y, x)] = orig - h;
                    let (lm, _) = combined_loss(pred.view(), target.view(), &cfg).unwrap();
                    pred[(c, y, x)] = orig;
                    let fd = (lp - lm) / (2.0 * h);
                    let a = grad[(c, y, x)];
                    let rel = (a - fd).abs() / fd.abs().max(a.abs()).max(1e-8);
                    max_rel = max_rel.max(rel);
                }
            }
        }
        assert!(max_rel <= 1e-4, "max relative error = {max_rel}");
    }

    #[test]
    fn combined_shape_mismatch_errors() {
        let a = Array3::<f64>::zeros((5, 4, 4));
        let b = Array3::<f64>::zeros((5, 4, 5));
        assert!(combined_loss(a.view(), b.view(), &LossConfig::default()).is_err());
    }
}
