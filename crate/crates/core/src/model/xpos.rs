//! Rotary position encoding with per-pair exponential decay (xPos).
//!
//! Pair `i` of a head vector at position `m` is rotated by `m * theta_i`,
//! `theta_i = 10000^(-2i / head_dim)`, and scaled by `zeta_i^(m / B)` for
//! queries and `zeta_i^(-m / B)` for keys, with
//! `zeta_i = (2i / head_dim + gamma) / (1 + gamma)` and `B` the scale base.
//! The query/key scales cancel up to `zeta_i^((m - n) / B)`, so scores depend
//! only on relative position.

use std::sync::Arc;

use super::ModelError;
use crate::numerics::{NumericsError, PairRotation, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XposDecay {
    pub gamma: f64,
    pub scale_base: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Query,
    Key,
}

pub fn zeta(pair: usize, head_dim: usize, gamma: f64) -> f64 {
    (2.0 * pair as f64 / head_dim as f64 + gamma) / (1.0 + gamma)
}

pub fn theta(pair: usize, head_dim: usize) -> f64 {
    10000f64.powf(-2.0 * pair as f64 / head_dim as f64)
}

/// Rotation/scale table for the given row positions. Angles and scales are
/// computed in f64 before conversion.
pub fn rotation_table<T: Scalar>(
    positions: &[usize],
    head_dim: usize,
    decay: Option<XposDecay>,
    side: Side,
) -> Result<PairRotation<T>, ModelError> {
    if head_dim % 2 != 0 {
        return Err(ModelError::InvalidConfig(format!("head_dim {head_dim} must be even")));
    }
    let pairs = head_dim / 2;
    let n = positions.len() * pairs;
    let (mut cos, mut sin, mut scale) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &m in positions {
        for p in 0..pairs {
            let angle = m as f64 * theta(p, head_dim);
            cos.push(T::from_f64_lossy(angle.cos()));
            sin.push(T::from_f64_lossy(angle.sin()));
            let s = match decay {
                None => 1.0,
                Some(d) => {
                    let exponent = m as f64 / d.scale_base;
                    let z = zeta(p, head_dim, d.gamma);
                    match side {
                        Side::Query => z.powf(exponent),
                        Side::Key => z.powf(-exponent),
                    }
                }
            };
            scale.push(T::from_f64_lossy(s));
        }
    }
    Ok(PairRotation { rows: positions.len(), pairs, cos, sin, scale })
}

fn apply<T: Scalar>(x: &Tensor<T>, table: &PairRotation<T>) -> Result<Tensor<T>, ModelError> {
    let mut g = crate::numerics::Graph::new();
    let xi = g.constant(x.clone());
    g.rotate_pairs(xi, Arc::new(table.clone()));
    let empty: std::collections::BTreeMap<String, Tensor<T>> = Default::default();
    g.evaluate(&empty).map_err(ModelError::from)
}

/// Applies xPos to query and key rows (`rows x head_dim`) at `positions`.
pub fn xpos_apply<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    positions: &[usize],
    decay: Option<XposDecay>,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let (rows, head_dim) = q.as_matrix();
    if k.shape() != q.shape() || rows != positions.len() {
        return Err(ModelError::Numerics(NumericsError::BadShape(format!(
            "q {:?}, k {:?}, {} positions",
            q.shape(),
            k.shape(),
            positions.len()
        ))));
    }
    let tq = rotation_table(positions, head_dim, decay, Side::Query)?;
    let tk = rotation_table(positions, head_dim, decay, Side::Key)?;
    Ok((apply(q, &tq)?, apply(k, &tk)?))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const DECAY: Option<XposDecay> = Some(XposDecay { gamma: 0.4, scale_base: 512.0 });

    fn random_rows(rng: &mut ChaCha8Rng, rows: usize, hd: usize) -> Tensor<f32> {
        Tensor::new(vec![rows, hd], (0..rows * hd).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn position_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = random_rows(&mut rng, 1, 8);
        let k = random_rows(&mut rng, 1, 8);
        let (q2, k2) = xpos_apply(&q, &k, &[0], DECAY).unwrap();
        assert_eq!(q2, q);
        assert_eq!(k2, k);
    }

    #[test]
    fn without_decay_rotation_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_rows(&mut rng, 5, 16);
        let positions = [3, 17, 100, 511, 2047];
        let (q2, _) = xpos_apply(&q, &q, &positions, None).unwrap();
        for r in 0..5 {
            let (a, b) = (dot(q.row(r), q.row(r)).sqrt(), dot(q2.row(r), q2.row(r)).sqrt());
            assert!((a - b).abs() < 1e-6 * a.max(1.0));
        }
    }

    #[test]
    fn zeta_lies_in_unit_interval_and_grows_with_pair_index() {
        let hd = 16;
        let mut prev = 0.0;
        for p in 0..hd / 2 {
            let z = zeta(p, hd, 0.4);
            assert!(z > 0.0 && z <= 1.0);
            assert!(z > prev);
            prev = z;
        }
    }

    #[test]
    fn scores_depend_only_on_relative_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hd = 16;
        for _ in 0..100 {
            let m = rng.random_range(0..512usize);
            let n = rng.random_range(0..512usize);
            let delta = rng.random_range(0..512usize);
            let q = random_rows(&mut rng, 1, hd);
            let k = random_rows(&mut rng, 1, hd);
            let (qm, _) = xpos_apply(&q, &q, &[m], DECAY).unwrap();
            let (_, kn) = xpos_apply(&k, &k, &[n], DECAY).unwrap();
            let (qs, _) = xpos_apply(&q, &q, &[m + delta], DECAY).unwrap();
            let (_, ks) = xpos_apply(&k, &k, &[n + delta], DECAY).unwrap();
            let (a, b) = (dot(qm.data(), kn.data()), dot(qs.data(), ks.data()));
            assert!((a - b).abs() <= 1e-5, "m={m} n={n} delta={delta}: {a} vs {b}");
        }
    }

    #[test]
    fn odd_head_dim_is_rejected() {
        let q = Tensor::<f32>::zeros(&[1, 3]);
        assert!(xpos_apply(&q, &q, &[0], DECAY).is_err());
    }
}
