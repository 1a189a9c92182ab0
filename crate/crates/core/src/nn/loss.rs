use super::{NnError, Tensor};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before the log.
pub const PROB_FLOOR: f64 = 1e-7;

/// `−Σ wᵢ log p_i[yᵢ] / Σ wᵢ` over a `[batch, classes]` probability matrix.
pub fn weighted_cross_entropy(probs: &Tensor, targets: &[usize], weights: &[f64]) -> Result<Tensor, NnError> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] != targets.len() || weights.len() != targets.len() {
        return Err(NnError::Shape {
            op: "weighted_cross_entropy".into(),
            detail: format!("probs {shape:?}, {} targets, {} weights", targets.len(), weights.len()),
        });
    }
    let classes = shape[1];
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(NnError::BadTarget { target: t, classes });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(NnError::ZeroWeight);
    }
    let p = probs.data();
    let loss = targets
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (&t, &w))| -w * p[i * classes + t].clamp(PROB_FLOOR, 1.0).ln())
        .sum::<f64>()
        / total;
    let (targets, weights) = (targets.to_vec(), weights.to_vec());
    let pc = probs.clone();
    Ok(Tensor::from_op(
        vec![loss],
        vec![],
        "weighted_cross_entropy",
        vec![probs.clone()],
        Box::new(move |g, _| {
            let p = pc.data();
            let mut gp = vec![0.0; p.len()];
            for (i, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
                let v = p[i * classes + t];
                if (PROB_FLOOR..=1.0).contains(&v) {
                    gp[i * classes + t] = -g[0] * w / (v * total);
                }
            }
            vec![Some(gp)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_twelve_classes_is_ln12() {
        let p = Tensor::new(vec![1.0 / 12.0; 24], &[2, 12]).unwrap();
        let l = weighted_cross_entropy(&p, &[3, 7], &[1.0, 1.0]).unwrap().item().unwrap();
        assert!((l - 12f64.ln()).abs() < 1e-12);
        assert!((l - 2.4849).abs() < 1e-4);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let p = Tensor::new(vec![0.0, 1.0, 1.0, 0.0], &[2, 2]).unwrap();
        let l = weighted_cross_entropy(&p, &[1, 0], &[1.0, 2.0]).unwrap().item().unwrap();
        assert!(l.abs() <= PROB_FLOOR);
    }

    #[test]
    fn doubling_weight_equals_duplicating_sample() {
        let rows = [0.2, 0.5, 0.3, 0.6, 0.1, 0.3];
        let p = Tensor::new(rows.to_vec(), &[2, 3]).unwrap();
        let doubled = weighted_cross_entropy(&p, &[1, 0], &[2.0, 1.0]).unwrap().item().unwrap();
        let mut dup = rows[..3].to_vec();
        dup.extend_from_slice(&rows);
        let p3 = Tensor::new(dup, &[3, 3]).unwrap();
        let duplicated = weighted_cross_entropy(&p3, &[1, 1, 0], &[1.0, 1.0, 1.0]).unwrap().item().unwrap();
        assert!((doubled - duplicated).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_and_bad_target_are_errors() {
        let p = Tensor::new(vec![0.5; 4], &[2, 2]).unwrap();
        assert!(matches!(weighted_cross_entropy(&p, &[0, 1], &[0.0, 0.0]), Err(NnError::ZeroWeight)));
        assert!(matches!(weighted_cross_entropy(&p, &[0, 2], &[1.0, 1.0]), Err(NnError::BadTarget { .. })));
    }
}
