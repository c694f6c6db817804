//! Classification and regression losses.

use super::network::{Gradients, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// `ln(sum(exp(row)))`, stable.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy of `softmax(logits)` against class indices.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax(logits) - onehot(targets)) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor2, targets: &[usize]) -> Result<(f64, Tensor2)> {
    if logits.rows() != targets.len() {
        return Err(Error::config(format!(
            "{} logit rows but {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::invalid(format!(
            "target class {t} out of range for {} logits",
            logits.cols()
        )));
    }
    let n = logits.rows().max(1) as f64;
    let mut grad = Tensor2::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        loss += lse - row[t];
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = (row[c] - lse).exp() / n;
        }
        g[t] -= 1.0 / n;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite cross-entropy".into()));
    }
    Ok((loss.max(0.0), grad))
}

/// Value and gradients of the anchored squared-error loss
///
/// `(1/N)·‖target − prediction‖² + (1/N)·‖γ·(θ − θ_anc)‖²`
///
/// with `N` the batch size and the norm over every element.
#[derive(Clone, Debug)]
pub struct AnchoredLoss {
    pub loss: f64,
    pub data_term: f64,
    pub anchor_term: f64,
    /// d loss / d prediction.
    pub prediction_grad: Tensor2,
    /// d anchor_term / d θ; the data term's parameter gradient comes from backprop.
    pub anchor_grads: Gradients,
}

pub fn anchored_mse_loss(
    target: &Tensor2,
    prediction: &Tensor2,
    params: &[&[f64]],
    anchors: Option<&[Vec<f64>]>,
    gamma: f64,
) -> Result<AnchoredLoss> {
    let anchors = anchors.ok_or_else(|| Error::config("anchored loss requires anchors"))?;
    if target.shape() != prediction.shape() {
        return Err(Error::config(format!(
            "target shape {:?} differs from prediction shape {:?}",
            target.shape(),
            prediction.shape()
        )));
    }
    if anchors.len() != params.len() || anchors.iter().zip(params).any(|(a, p)| a.len() != p.len()) {
        return Err(Error::config("anchor shapes do not match parameter shapes"));
    }
    let n = target.rows().max(1) as f64;

    let mut data_term = 0.0;
    let grad_data: Vec<f64> = target
        .as_slice()
        .iter()
        .zip(prediction.as_slice())
        .map(|(z, zh)| {
            let d = zh - z;
            data_term += d * d;
            2.0 * d / n
        })
        .collect();
    data_term /= n;

    let g2 = gamma * gamma;
    let mut anchor_term = 0.0;
    let anchor_grads = params
        .iter()
        .zip(anchors)
        .map(|(p, a)| {
            p.iter()
                .zip(a)
                .map(|(t, ta)| {
                    let d = gamma * (t - ta);
                    anchor_term += d * d;
                    2.0 * g2 * (t - ta) / n
                })
                .collect()
        })
        .collect();
    anchor_term /= n;

    let loss = data_term + anchor_term;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite anchored loss".into()));
    }
    Ok(AnchoredLoss {
        loss,
        data_term,
        anchor_term,
        prediction_grad: Tensor2::from_vec(target.rows(), target.cols(), grad_data)?,
        anchor_grads: Gradients(anchor_grads),
    })
}

/// [`anchored_mse_loss`] over a network's own parameters and anchors.
pub fn anchored_mse_for(net: &Network, target: &Tensor2, prediction: &Tensor2, gamma: f64) -> Result<AnchoredLoss> {
    anchored_mse_loss(target, prediction, &net.params(), net.anchors(), gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_class_count() {
        let (loss, _) = softmax_cross_entropy(&Tensor2::filled(3, 5, 0.7), &[0, 2, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let logits = Tensor2::from_rows(&[[800.0, 0.0, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((0.0..1e-12).contains(&loss));
        assert!(grad.all_finite());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = Tensor2::from_rows(&[[0.1, -0.4, 1.2], [2.0, 0.0, -1.0]]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        let p = softmax_rows(&logits);
        for r in 0..2 {
            for c in 0..3 {
                let onehot = if (r, c) == (0, 2) || (r, c) == (1, 0) { 1.0 } else { 0.0 };
                assert!((grad.get(r, c) - (p.get(r, c) - onehot) / 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        assert!(softmax_cross_entropy(&Tensor2::zeros(1, 3), &[3]).is_err());
    }

    #[test]
    fn anchor_term_vanishes_at_anchor() {
        let z = Tensor2::from_rows(&[[1.0, 2.0], [0.0, -1.0]]).unwrap();
        let zh = Tensor2::from_rows(&[[1.5, 2.0], [0.0, 0.0]]).unwrap();
        let theta = vec![0.3, -0.7];
        let out = anchored_mse_loss(&z, &zh, &[&theta], Some(std::slice::from_ref(&theta)), 0.03).unwrap();
        assert_eq!(out.anchor_term, 0.0);
        assert!((out.loss - (0.25 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_weight_example() {
        let z = Tensor2::from_rows(&[[4.0]]).unwrap();
        let theta = vec![2.0];
        let out = anchored_mse_loss(&z, &z, &[&theta], Some(&[vec![1.0]]), 0.03).unwrap();
        assert!((out.loss - 9e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_anchor_is_plain_l2() {
        let z = Tensor2::from_rows(&[[1.0, 0.0], [2.0, 3.0], [0.5, 0.5]]).unwrap();
        let zh = Tensor2::from_rows(&[[0.0, 0.0], [2.0, 1.0], [1.0, 0.5]]).unwrap();
        let theta = vec![1.0, -2.0, 0.5];
        let g = 0.03;
        let out = anchored_mse_loss(&z, &zh, &[&theta], Some(&[vec![0.0; 3]]), g).unwrap();
        let mse = (1.0 + 4.0 + 0.25) / 3.0;
        let l2 = g * g / 3.0 * (1.0 + 4.0 + 0.25);
        assert!((out.loss - (mse + l2)).abs() < 1e-15);
    }

    #[test]
    fn missing_anchors_is_config_error() {
        let z = Tensor2::zeros(1, 1);
        assert!(matches!(
            anchored_mse_loss(&z, &z, &[], None, 0.03),
            Err(Error::Config(_))
        ));
    }
}
