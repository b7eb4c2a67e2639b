//! Log-losses for classification, per-pixel segmentation, their sum, and
//! the padded sequence objective.
//!
//! All logs clamp their argument at [`LOG_EPS`] so a zero probability gives a
//! large finite loss instead of infinity.

use crate::error::{arg, shape, Error, Result};
use crate::micrograd::layers::softmax_axis0;
use crate::tensor::Tensor;

pub const LOG_EPS: f64 = 1e-12;

/// `−ln(max(p, ε))` and whether the clamp was hit.
pub fn clamped_nll(p: f64) -> (f64, bool) {
    if p < LOG_EPS {
        (-LOG_EPS.ln(), true)
    } else {
        (-p.ln(), false)
    }
}

/// Classification loss `−ln p_u` for a single distribution.
pub fn cls_loss(p: &[f64], u: usize) -> Result<f64> {
    if u >= p.len() {
        return arg(format!("class {u} outside distribution of {}", p.len()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return arg(format!("distribution sums to {total}"));
    }
    Ok(clamped_nll(p[u]).0)
}

/// Mean per-pixel log-loss. `probs` is laid out `(K, …)`: axis 0 indexes the
/// class and the remaining axes enumerate the `N` pixels.
pub fn seg_loss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let k = probs.shape()[0];
    let n = probs.len() / k.max(1);
    if labels.len() != n || n == 0 {
        return shape(format!("{} labels for {n} pixels", labels.len()));
    }
    let m = probs.data();
    let mut total = 0.0;
    for (i, &s) in labels.iter().enumerate() {
        if s >= k {
            return arg(format!("label {s} at pixel {i} outside {k} classes"));
        }
        total += clamped_nll(m[s * n + i]).0;
    }
    Ok(total / n as f64)
}

/// The multi-task objective: segmentation loss plus classification loss.
pub fn joint_loss(seg_component: f64, cls_component: f64) -> Result<f64> {
    if !seg_component.is_finite() || !cls_component.is_finite() {
        return Err(Error::NonFinite("joint loss component".into()));
    }
    Ok(seg_component + cls_component)
}

/// Negative mean log-likelihood of `targets` under per-step softmaxes of
/// `logits` (shape `(T, V)`); steps whose target is `pad` are left out.
pub fn seq_nll(logits: &Tensor, targets: &[usize], pad: usize) -> Result<f64> {
    Ok(seq_nll_with_grad(logits, targets, pad)?.0)
}

/// [`seq_nll`] together with its gradient with respect to the logits.
pub fn seq_nll_with_grad(logits: &Tensor, targets: &[usize], pad: usize) -> Result<(f64, Tensor, usize)> {
    let [t, v] = logits.shape()[..] else {
        return shape(format!("logits must be (T, V), got {:?}", logits.shape()));
    };
    if targets.len() != t {
        return shape(format!("{} targets for {t} steps", targets.len()));
    }
    let counted = targets.iter().filter(|&&w| w != pad).count();
    if counted == 0 {
        return arg("every target step is padding");
    }
    let mut grad = Tensor::zeros(&[t, v]);
    let mut total = 0.0;
    let mut clamped = 0;
    let scale = 1.0 / counted as f64;
    for (step, &w) in targets.iter().enumerate() {
        if w == pad {
            continue;
        }
        if w >= v {
            return arg(format!("target {w} outside vocabulary of {v}"));
        }
        let row = Tensor::vector(logits.data()[step * v..(step + 1) * v].to_vec());
        let p = softmax_axis0(&row);
        let (nll, hit) = clamped_nll(p.data()[w]);
        total += nll;
        clamped += hit as usize;
        let g = &mut grad.data_mut()[step * v..(step + 1) * v];
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = scale * (p.data()[k] - if k == w { 1.0 } else { 0.0 });
        }
    }
    Ok((total * scale, grad, clamped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cls_loss_anchors() {
        let mut onehot = vec![0.0; 17];
        onehot[4] = 1.0;
        assert_eq!(cls_loss(&onehot, 4).unwrap(), 0.0);
        let uniform = vec![1.0 / 17.0; 17];
        assert!((cls_loss(&uniform, 9).unwrap() - 17f64.ln()).abs() < 1e-12);
        assert!((cls_loss(&[0.5, 0.5], 1).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cls_loss_clamps_zero_probability() {
        let l = cls_loss(&[1.0, 0.0], 1).unwrap();
        assert!(l.is_finite());
        assert!((l - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn cls_loss_rejects_bad_input() {
        assert!(cls_loss(&[0.5, 0.4], 0).is_err());
        assert!(cls_loss(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn seg_loss_uniform_binary_is_ln2() {
        let probs = Tensor::full(&[2, 3, 3], 0.5);
        let labels = [0, 1, 1, 0, 0, 1, 1, 1, 0];
        assert!((seg_loss(&probs, &labels).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn seg_loss_matches_pixel_loop() {
        // (K=2, N=4) laid out class-major.
        let fg = [0.9, 0.2, 0.6, 0.35];
        let mut data: Vec<f64> = fg.iter().map(|p| 1.0 - p).collect();
        data.extend_from_slice(&fg);
        let probs = Tensor::from_vec(&[2, 2, 2], data).unwrap();
        let labels = [1, 0, 1, 0];
        let mut oracle = 0.0;
        for i in 0..4 {
            let p = if labels[i] == 1 { fg[i] } else { 1.0 - fg[i] };
            oracle -= p.ln();
        }
        oracle /= 4.0;
        assert!((seg_loss(&probs, &labels).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn joint_loss_is_exact_sum() {
        assert_eq!(joint_loss(0.5, 0.25).unwrap(), 0.75);
        assert_eq!(joint_loss(0.0, 0.0).unwrap(), 0.0);
        assert!(joint_loss(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn seq_nll_uniform_is_ln_vocab() {
        let logits = Tensor::zeros(&[5, 12]);
        let l = seq_nll(&logits, &[3, 4, 2, 0, 0], 0).unwrap();
        assert!((l - 12f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn seq_nll_hand_built_three_steps() {
        let logits = Tensor::from_vec(
            &[3, 3],
            vec![2.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.5, 0.5, 3.0],
        )
        .unwrap();
        let targets = [0, 1, 2];
        let mut oracle = 0.0;
        for s in 0..3 {
            let row = &logits.data()[s * 3..s * 3 + 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            oracle -= (row[targets[s]].exp() / z).ln();
        }
        oracle /= 3.0;
        // padding id 7 never occurs, so all steps count
        assert!((seq_nll(&logits, &targets, 7).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn seq_nll_ignores_padded_steps() {
        let mut logits = Tensor::from_vec(&[3, 4], (0..12).map(|v| (v as f64).sin()).collect()).unwrap();
        let a = seq_nll(&logits, &[2, 1, 0], 0).unwrap();
        logits.data_mut()[8..12].copy_from_slice(&[9.0, -9.0, 4.0, 1.0]);
        let b = seq_nll(&logits, &[2, 1, 0], 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seq_nll_all_pad_is_an_error() {
        assert!(matches!(
            seq_nll(&Tensor::zeros(&[2, 3]), &[0, 0], 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn seq_nll_confident_logits_give_zero() {
        let mut logits = Tensor::full(&[2, 3], -1e3);
        logits.data_mut()[1] = 1e3;
        logits.data_mut()[5] = 1e3;
        assert!(seq_nll(&logits, &[1, 2], 0).unwrap().abs() < 1e-12);
    }
}
