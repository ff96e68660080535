//! Gradient Rollout over per-block attention and attention gradients.

use crate::error::{invalid, Result};
use crate::model::AttentionTrace;
use crate::tensor::Tensor;

/// Head-mean of `heads x T x T` as a `T x T` row-major matrix.
pub(crate) fn head_mean(t: &Tensor) -> Vec<f64> {
    let [heads, rows, cols] = t.shape() else {
        unreachable!("head_mean on rank-{} tensor", t.rank());
    };
    let plane = rows * cols;
    let mut out = vec![0.0; plane];
    for h in 0..*heads {
        for (o, v) in out.iter_mut().zip(&t.data()[h * plane..(h + 1) * plane]) {
            *o += v;
        }
    }
    let inv = 1.0 / *heads as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// `I + mean_h(A ∘ G)` for one block.
pub(crate) fn rollout_factor(attn: &Tensor, grad: &Tensor) -> Result<Vec<f64>> {
    Ok(identity_plus(head_mean(&attn.hadamard(grad)?), attn.shape()[1]))
}

pub(crate) fn identity_plus(mut m: Vec<f64>, tokens: usize) -> Vec<f64> {
    for i in 0..tokens {
        m[i * tokens + i] += 1.0;
    }
    m
}

/// Row 0 of `F_1 · F_2 · … · F_B`.
pub(crate) fn class_row(factors: &[Vec<f64>], tokens: usize) -> Vec<f64> {
    let mut row = vec![0.0; tokens];
    row[0] = 1.0;
    for f in factors {
        let mut next = vec![0.0; tokens];
        for (i, r) in row.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            for (n, v) in next.iter_mut().zip(&f[i * tokens..(i + 1) * tokens]) {
                *n += r * v;
            }
        }
        row = next;
    }
    row
}

pub(crate) fn check_tokens(trace: &AttentionTrace) -> Result<usize> {
    let Some(first) = trace.attentions.first() else {
        return invalid("gradient rollout needs at least one block");
    };
    let tokens = first.shape()[1];
    for a in &trace.attentions {
        if a.shape()[1] != tokens {
            return invalid(format!("token count mismatch across blocks: {} vs {}", tokens, a.shape()[1]));
        }
    }
    Ok(tokens)
}

/// Class-token row of the gradient-weighted attention rollout.
pub fn gradient_rollout(trace: &AttentionTrace) -> Result<Vec<f64>> {
    let tokens = check_tokens(trace)?;
    let factors =
        trace.attentions.iter().zip(&trace.grads).map(|(a, g)| rollout_factor(a, g)).collect::<Result<Vec<_>>>()?;
    Ok(class_row(&factors, tokens))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(h: usize, n: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![h, n, n], data).unwrap()
    }

    #[test]
    fn zero_gradients_give_class_basis_vector() {
        let a = t3(2, 3, vec![1.0 / 3.0; 18]);
        let trace = AttentionTrace::new(vec![a.clone(), a], vec![Tensor::zeros(&[2, 3, 3]); 2]).unwrap();
        assert_eq!(gradient_rollout(&trace).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn single_block_hand_arithmetic() {
        let a = t3(1, 3, vec![0.5, 0.25, 0.25, 0.2, 0.6, 0.2, 0.1, 0.1, 0.8]);
        let g = t3(1, 3, vec![1.0, -2.0, 4.0, 0.5, 1.0, 0.0, 3.0, 2.0, 1.0]);
        let trace = AttentionTrace::new(vec![a], vec![g]).unwrap();
        // row 0 of I + A∘G: [1 + 0.5, -0.5, 1.0]
        assert_eq!(gradient_rollout(&trace).unwrap(), vec![1.5, -0.5, 1.0]);
    }

    #[test]
    fn zero_gradient_block_is_identity_factor() {
        let a = t3(2, 3, (0..18).map(|i| (i % 5) as f64 / 5.0).collect());
        let g = t3(2, 3, (0..18).map(|i| (i as f64 - 7.0) / 3.0).collect());
        let single = AttentionTrace::new(vec![a.clone()], vec![g.clone()]).unwrap();
        let double = AttentionTrace::new(vec![a.clone(), a], vec![g, Tensor::zeros(&[2, 3, 3])]).unwrap();
        assert_eq!(gradient_rollout(&single).unwrap(), gradient_rollout(&double).unwrap());
    }

    #[test]
    fn two_blocks_match_full_matrix_product() {
        let a1 = t3(2, 3, (0..18).map(|i| ((i * 7) % 11) as f64 / 11.0).collect());
        let g1 = t3(2, 3, (0..18).map(|i| ((i * 5) % 7) as f64 - 3.0).collect());
        let a2 = t3(2, 3, (0..18).map(|i| ((i * 3) % 13) as f64 / 13.0).collect());
        let g2 = t3(2, 3, (0..18).map(|i| ((i * 2) % 9) as f64 - 4.0).collect());
        let factor = |a: &Tensor, g: &Tensor| {
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let idx = |h: usize| h * 9 + i * 3 + j;
                    m[i][j] = (a.data()[idx(0)] * g.data()[idx(0)] + a.data()[idx(1)] * g.data()[idx(1)]) / 2.0
                        + if i == j { 1.0 } else { 0.0 };
                }
            }
            m
        };
        let (f1, f2) = (factor(&a1, &g1), factor(&a2, &g2));
        let mut expected = [0.0; 3];
        for j in 0..3 {
            for k in 0..3 {
                expected[j] += f1[0][k] * f2[k][j];
            }
        }
        let trace = AttentionTrace::new(vec![a1, a2], vec![g1, g2]).unwrap();
        let got = gradient_rollout(&trace).unwrap();
        for j in 0..3 {
            assert!((got[j] - expected[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_token_mismatch_and_empty() {
        let trace = AttentionTrace::new(
            vec![Tensor::zeros(&[1, 3, 3]), Tensor::zeros(&[1, 4, 4])],
            vec![Tensor::zeros(&[1, 3, 3]), Tensor::zeros(&[1, 4, 4])],
        )
        .unwrap();
        assert!(gradient_rollout(&trace).is_err());
        let empty = AttentionTrace::new(vec![], vec![]).unwrap();
        assert!(gradient_rollout(&empty).is_err());
    }
}
