//! Deterministic in-memory all-reduce.
//!
//! Elementwise sum over gradient sets in ascending set order with sequential
//! pairwise accumulation. The order is part of the contract: it is what
//! makes gradient accumulation bit-identical across worker/cumul splits.

use crate::error::{Error, Result};
use crate::exec;
use crate::lowprec::Half;

fn check_shapes<T>(sets: &[Vec<Vec<T>>]) -> Result<()> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Shape("all_reduce needs at least one gradient set".into()))?;
    for (w, s) in sets.iter().enumerate() {
        if s.len() != first.len() {
            return Err(Error::Shape(format!(
                "set {w} has {} tensors, expected {}",
                s.len(),
                first.len()
            )));
        }
        for (l, t) in s.iter().enumerate() {
            if t.len() != first[l].len() {
                return Err(Error::Shape(format!(
                    "set {w} tensor {l} has {} elements, expected {}",
                    t.len(),
                    first[l].len()
                )));
            }
        }
    }
    Ok(())
}

/// Sum fp32 gradient sets elementwise, set 0 first.
pub fn all_reduce(sets: &[Vec<Vec<f32>>]) -> Result<Vec<Vec<f32>>> {
    check_shapes(sets)?;
    let layers = sets[0].len();
    Ok(exec::map_indices(layers, |l| {
        let mut acc = sets[0][l].clone();
        for s in &sets[1..] {
            for (a, &g) in acc.iter_mut().zip(&s[l]) {
                *a += g;
            }
        }
        acc
    }))
}

/// Sum half-precision gradient sets. Partial sums run in fp32 and the result
/// is rounded back to half once, emulating a reduction whose wire format is
/// 16-bit. Overflow (Inf/NaN in any input) propagates to the output, where
/// the overflow detector will find it.
pub fn all_reduce_half(sets: &[Vec<Vec<Half>>]) -> Result<Vec<Vec<Half>>> {
    check_shapes(sets)?;
    let layers = sets[0].len();
    Ok(exec::map_indices(layers, |l| {
        let mut acc: Vec<f32> = sets[0][l].iter().map(|h| h.to_f32()).collect();
        for s in &sets[1..] {
            for (a, h) in acc.iter_mut().zip(&s[l]) {
                *a += h.to_f32();
            }
        }
        acc.into_iter().map(Half::from_f32).collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowprec::round_tensor;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn single_worker_is_identity() {
        let set = vec![vec![vec![1.0f32, -2.0], vec![0.5]]];
        assert_eq!(all_reduce(&set).unwrap(), set[0]);
    }

    #[test]
    fn two_workers_sum() {
        let sets = vec![vec![vec![1.0f32, 2.0]], vec![vec![3.0f32, 4.0]]];
        assert_eq!(all_reduce(&sets).unwrap(), vec![vec![4.0, 6.0]]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let sets = vec![vec![vec![1.0f32, 2.0]], vec![vec![3.0f32]]];
        assert!(all_reduce(&sets).is_err());
        assert!(all_reduce(&[]).is_err());
    }

    #[test]
    fn eight_workers_match_serial_loop() {
        let mut rng = crate::rng::substream(3, "allreduce-test");
        let sets: Vec<Vec<Vec<f32>>> = (0..8)
            .map(|_| {
                vec![
                    (0..37).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                    (0..11).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                ]
            })
            .collect();
        let got = all_reduce(&sets).unwrap();
        // Oracle: plain serial loop in worker order.
        let mut expect = sets[0].clone();
        for s in &sets[1..] {
            for (l, t) in s.iter().enumerate() {
                for (e, &g) in expect[l].iter_mut().zip(t) {
                    *e += g;
                }
            }
        }
        assert_eq!(got, expect, "must be bit-identical to the serial loop");
    }

    #[test]
    fn half_reduce_propagates_overflow() {
        let sets = vec![
            vec![round_tensor(&[60000.0, 1.0])],
            vec![round_tensor(&[60000.0, 1.0])],
        ];
        let out = all_reduce_half(&sets).unwrap();
        assert!(!out[0][0].is_finite());
        assert_eq!(out[0][1].to_f32(), 2.0);
    }

    proptest! {
        /// Scaling every input by a power of two scales the reduced output
        /// exactly (fp32 multiplication by 2^k is exact short of overflow).
        #[test]
        fn linear_in_power_of_two(
            xs in proptest::collection::vec(-100.0f32..100.0, 1..40),
            k in -3i32..4,
        ) {
            let alpha = (2.0f32).powi(k);
            let sets: Vec<Vec<Vec<f32>>> =
                vec![vec![xs.clone()], vec![xs.iter().map(|x| x * 0.5).collect()]];
            let scaled: Vec<Vec<Vec<f32>>> = sets
                .iter()
                .map(|s| s.iter().map(|t| t.iter().map(|x| x * alpha).collect()).collect())
                .collect();
            let base = all_reduce(&sets).unwrap();
            let got = all_reduce(&scaled).unwrap();
            for (b, g) in base[0].iter().zip(&got[0]) {
                prop_assert_eq!(b * alpha, *g);
            }
        }
    }
}
