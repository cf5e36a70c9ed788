//! Foreground-weighted binary cross entropy.

use serde::{Deserialize, Serialize};

use crate::mask::{Label, LabelMask};

/// Probabilities are clamped to `[DELTA, 1 - DELTA]` before taking logs.
pub const DELTA: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Background-to-foreground pixel ratio of the batch.
    Ratio,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FgWeightPolicy {
    pub mode: WeightMode,
    pub fixed_value: f64,
    pub max_weight: f64,
    pub epsilon: f64,
}

impl Default for FgWeightPolicy {
    fn default() -> Self {
        Self {
            mode: WeightMode::Ratio,
            fixed_value: 1.0,
            max_weight: 50.0,
            epsilon: 1e-7,
        }
    }
}

/// Weight of the foreground term for one batch.
///
/// For the ratio mode: `clamp(N_bg / (N_fg + eps), 1, max_weight)` over the
/// non-ignore pixels; exactly 1 when the batch has no foreground.
pub fn fg_weight<'a>(masks: impl IntoIterator<Item = &'a LabelMask>, policy: &FgWeightPolicy) -> f64 {
    let (mut fg, mut bg) = (0usize, 0usize);
    for m in masks {
        fg += m.count(Label::Foreground);
        bg += m.count(Label::Background);
    }
    if fg + bg == 0 {
        log::warn!("batch has only ignore pixels; foreground weight set to 1");
        return 1.0;
    }
    match policy.mode {
        WeightMode::Fixed => policy.fixed_value,
        WeightMode::Ratio if fg == 0 => 1.0,
        WeightMode::Ratio => (bg as f64 / (fg as f64 + policy.epsilon)).clamp(1.0, policy.max_weight.max(1.0)),
    }
}

fn clamp_prob(p: f32) -> f64 {
    (p as f64).clamp(DELTA, 1.0 - DELTA)
}

/// `mean(-[w*y*ln p + (1-y)*ln(1-p)])` over non-ignore pixels; 0 (with a
/// warning) when every pixel is ignored.
pub fn weighted_bce(probs: &[f32], labels: &[Label], weight: f64) -> f64 {
    assert_eq!(probs.len(), labels.len(), "probability / label count mismatch");
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&p, &l) in probs.iter().zip(labels) {
        let p = clamp_prob(p);
        match l {
            Label::Foreground => sum -= weight * p.ln(),
            Label::Background => sum -= (1.0 - p).ln(),
            Label::Ignore => continue,
        }
        count += 1;
    }
    if count == 0 {
        log::warn!("loss evaluated on an empty pixel set");
        return 0.0;
    }
    sum / count as f64
}

/// Loss and its derivative with respect to each probability. The
/// derivative is 0 on ignore pixels and wherever the clamp is active.
pub fn weighted_bce_with_grad(probs: &[f32], labels: &[Label], weight: f64) -> (f64, Vec<f32>) {
    let loss = weighted_bce(probs, labels, weight);
    let count = labels.iter().filter(|&&l| l != Label::Ignore).count();
    let mut grad = vec![0.0f32; probs.len()];
    if count == 0 {
        return (loss, grad);
    }
    let inv = 1.0 / count as f64;
    for ((g, &p), &l) in grad.iter_mut().zip(probs).zip(labels) {
        let pd = p as f64;
        if !(DELTA..=1.0 - DELTA).contains(&pd) {
            continue;
        }
        *g = match l {
            Label::Foreground => (-weight / pd * inv) as f32,
            Label::Background => (1.0 / (1.0 - pd) * inv) as f32,
            Label::Ignore => 0.0,
        };
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(labels: &[Label]) -> LabelMask {
        LabelMask::new(labels.len(), 1, labels.to_vec())
    }

    const F: Label = Label::Foreground;
    const B: Label = Label::Background;
    const I: Label = Label::Ignore;

    #[test]
    fn quarter_foreground_gives_three() {
        let m = mask(&[F, B, B, B, I]);
        let w = fg_weight([&m], &FgWeightPolicy::default());
        assert!((w - 3.0).abs() < 1e-6, "{w}");
    }

    #[test]
    fn weight_is_one_without_foreground() {
        let m = mask(&[B, B, I]);
        assert_eq!(fg_weight([&m], &FgWeightPolicy::default()), 1.0);
        let all_ignore = mask(&[I, I]);
        assert_eq!(fg_weight([&all_ignore], &FgWeightPolicy::default()), 1.0);
    }

    #[test]
    fn weight_clamped_to_unit_when_all_foreground() {
        let m = mask(&[F, F, F]);
        assert_eq!(fg_weight([&m], &FgWeightPolicy::default()), 1.0);
    }

    #[test]
    fn weight_capped() {
        let mut labels = vec![B; 1000];
        labels[0] = F;
        let m = mask(&labels);
        assert_eq!(fg_weight([&m], &FgWeightPolicy::default()), 50.0);
    }

    #[test]
    fn half_probability_balanced_is_ln2() {
        let loss = weighted_bce(&[0.5, 0.5, 0.5, 0.5], &[F, B, F, B], 1.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn single_weighted_pixel() {
        let loss = weighted_bce(&[0.5], &[F], 3.0);
        assert!((loss - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 2.079442).abs() < 1e-6);
    }

    #[test]
    fn perfect_prediction_is_minimal() {
        let loss = weighted_bce(&[1.0, 0.0, 1.0], &[F, B, F], 7.0);
        // The foreground term is scaled by the weight.
        assert!(loss <= 7.0 * -(1.0 - DELTA).ln() + 1e-15);
        let unweighted = weighted_bce(&[1.0, 0.0], &[F, B], 1.0);
        assert!(unweighted <= -(1.0 - DELTA).ln() + 1e-15);
    }

    #[test]
    fn ignore_pixels_excluded() {
        let a = weighted_bce(&[0.3, 0.9], &[F, I], 2.0);
        let b = weighted_bce(&[0.3], &[F], 2.0);
        assert_eq!(a, b);
        assert_eq!(weighted_bce(&[0.2, 0.4], &[I, I], 1.0), 0.0);
    }

    fn label_strategy() -> impl Strategy<Value = Label> {
        prop_oneof![Just(F), Just(B), Just(I)]
    }

    proptest! {
        #[test]
        fn unit_weight_is_plain_bce(
            data in prop::collection::vec((0.001f32..0.999, label_strategy()), 1..64)
        ) {
            let (p, l): (Vec<f32>, Vec<Label>) = data.into_iter().unzip();
            let plain = {
                let mut s = 0.0;
                let mut n = 0;
                for (&p, &l) in p.iter().zip(&l) {
                    let p = p as f64;
                    match l {
                        F => s -= p.ln(),
                        B => s -= (1.0 - p).ln(),
                        I => continue,
                    }
                    n += 1;
                }
                if n == 0 { 0.0 } else { s / n as f64 }
            };
            prop_assert!((weighted_bce(&p, &l, 1.0) - plain).abs() < 1e-12);
        }

        #[test]
        fn gradient_matches_analytic_derivative(
            data in prop::collection::vec((0.001f32..0.999, label_strategy()), 1..64),
            w in 0.5f64..20.0,
        ) {
            let (p, l): (Vec<f32>, Vec<Label>) = data.into_iter().unzip();
            let (_, g) = weighted_bce_with_grad(&p, &l, w);
            let n = l.iter().filter(|&&x| x != I).count() as f64;
            for ((&pi, &li), &gi) in p.iter().zip(&l).zip(&g) {
                let y = if li == F { 1.0 } else { 0.0 };
                let expect = if li == I || n == 0.0 {
                    0.0
                } else {
                    let pi = pi as f64;
                    -(w * y / pi - (1.0 - y) / (1.0 - pi)) / n
                };
                let tol = 1e-6 * expect.abs().max(1.0);
                prop_assert!((gi as f64 - expect).abs() <= tol, "{gi} vs {expect}");
            }
        }
    }
}
