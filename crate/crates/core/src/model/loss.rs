use super::ModelError;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Mean cross-entropy over the positions whose `loss_mask` entry is 1.
///
/// Plain language samples use a full mask; teacher samples switch on only
/// the label-token positions.
pub fn lm_loss<T: Scalar>(logits: &Tensor<T>, targets: &[u32], loss_mask: &[f32]) -> Result<T, ModelError> {
    let (rows, vocab) = logits.as_matrix();
    if targets.len() != rows || loss_mask.len() != rows {
        return Err(ModelError::LossShape { rows, targets: targets.len(), weights: loss_mask.len() });
    }
    let mut total = 0.0f64;
    let mut count = 0.0f64;
    for (r, (&t, &w)) in targets.iter().zip(loss_mask).enumerate() {
        if w == 0.0 {
            continue;
        }
        if t as usize >= vocab {
            return Err(ModelError::UnknownToken { id: t, vocab });
        }
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_f64_lossy()));
        let lse = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).sum::<f64>().ln() + max;
        total += w as f64 * (lse - row[t as usize].to_f64_lossy());
        count += w as f64;
    }
    if count == 0.0 {
        return Err(ModelError::EmptyLossMask);
    }
    Ok(T::from_f64_lossy(total / count))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = Tensor::<f32>::zeros(&[3, 50]);
        let l = lm_loss(&logits, &[1, 2, 3], &[1.0; 3]).unwrap();
        assert!((l as f64 - 50f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn confident_target_has_near_zero_loss() {
        let mut logits = Tensor::<f32>::zeros(&[1, 10]);
        logits.data_mut()[4] = 1e4;
        assert!(lm_loss(&logits, &[4], &[1.0]).unwrap() <= 1e-4);
    }

    #[test]
    fn single_position_matches_hand_computation() {
        // 4-token vocabulary, second row selected.
        let logits = Tensor::<f64>::new(vec![2, 4], vec![5.0, 0.0, 0.0, 0.0, 0.5, -1.0, 2.0, 0.25]).unwrap();
        let l = lm_loss(&logits, &[0, 2], &[0.0, 1.0]).unwrap();
        let z = [0.5f64, -1.0, 2.0, 0.25];
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let want = -(2.0f64.exp() / denom).ln();
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn all_zero_mask_is_an_error() {
        let logits = Tensor::<f32>::zeros(&[2, 4]);
        assert!(matches!(lm_loss(&logits, &[0, 1], &[0.0, 0.0]), Err(ModelError::EmptyLossMask)));
    }
}
