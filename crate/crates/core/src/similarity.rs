//! Feature similarities mapped into `[0, 1]`.

use crate::error::{AriaError, Result};
use crate::features::{FeatureKind, FeatureSpec, FeatureValue};

/// `1 / (1 + ‖a − b‖₂)` on already-standardized vectors.
#[inline]
pub fn scaled_vector_similarity(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 / (1.0 + d2.sqrt())
}

/// Length of the longest common subsequence (two-row dynamic program).
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut curr = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}

/// LCS length by the bit-parallel recurrence `V ← (V + (V & Mₓ)) | (V & ¬Mₓ)`
/// over match masks of `a`; the zero bits of `V` count the common
/// subsequence. Symbols are small integers (chord intervals).
pub fn lcs_len_bits(a: &[u8], b: &[u8]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let alphabet = *a.iter().max().unwrap_or(&0) as usize + 1;
    let words = a.len().div_ceil(64);
    if words == 1 && alphabet <= 16 {
        let mut masks = [0u64; 16];
        for (i, &c) in a.iter().enumerate() {
            masks[c as usize] |= 1 << i;
        }
        let mut v = !0u64;
        for &c in b {
            let m = masks.get(c as usize).copied().unwrap_or(0);
            v = v.wrapping_add(v & m) | (v & !m);
        }
        let valid = if a.len() == 64 { !0 } else { (1u64 << a.len()) - 1 };
        return (!v & valid).count_ones() as usize;
    }
    let mut masks = vec![0u64; alphabet * words];
    for (i, &c) in a.iter().enumerate() {
        masks[c as usize * words + i / 64] |= 1 << (i % 64);
    }
    let zero = vec![0u64; words];
    let mut v = vec![!0u64; words];
    for &c in b {
        let m = if (c as usize) < alphabet {
            &masks[c as usize * words..(c as usize + 1) * words]
        } else {
            &zero[..]
        };
        let mut carry = false;
        for (vw, &mw) in v.iter_mut().zip(m) {
            let (s1, c1) = vw.overflowing_add(*vw & mw);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            carry = c1 || c2;
            *vw = s2 | (*vw & !mw);
        }
    }
    let tail = a.len() % 64;
    v.iter()
        .enumerate()
        .map(|(w, &vw)| {
            let valid = if w + 1 == words && tail != 0 { (1u64 << tail) - 1 } else { !0 };
            (!vw & valid).count_ones() as usize
        })
        .sum()
}

/// LCS length divided by the longer sequence's length. Two empty sequences
/// are identical (1); an empty and a non-empty sequence share nothing (0).
pub fn lcs_similarity(a: &[u8], b: &[u8]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    lcs_len_bits(a, b) as f64 / longest as f64
}

/// `sim_d(a, b)` for raw (unstandardized) values under `spec`.
///
/// Vector values are divided by the spec's standard deviations; dimensions
/// with zero spread are ignored.
pub fn feature_similarity(spec: &FeatureSpec, a: FeatureValue<'_>, b: FeatureValue<'_>) -> Result<f64> {
    match (spec.kind, a, b) {
        (FeatureKind::StandardizedEuclidean, FeatureValue::Vector(a), FeatureValue::Vector(b)) => {
            if a.len() != spec.dimension || b.len() != spec.dimension || spec.std_vector.len() != spec.dimension {
                return Err(AriaError::DimensionMismatch(format!(
                    "feature `{}` expects dimension {}, got {} and {}",
                    spec.id,
                    spec.dimension,
                    a.len(),
                    b.len()
                )));
            }
            let d2: f64 = a
                .iter()
                .zip(b)
                .zip(&spec.std_vector)
                .filter(|(_, &s)| s > 0.0)
                .map(|((x, y), s)| {
                    let z = (x - y) / s;
                    z * z
                })
                .sum();
            Ok(1.0 / (1.0 + d2.sqrt()))
        }
        (FeatureKind::LcsSequence, FeatureValue::Sequence(a), FeatureValue::Sequence(b)) => Ok(lcs_similarity(a, b)),
        _ => Err(AriaError::InvalidInput(format!(
            "value kinds do not match feature `{}` ({:?})",
            spec.id, spec.kind
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive LCS over all subsequences of the shorter input.
    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        fn is_subseq(s: &[u8], t: &[u8]) -> bool {
            let mut it = t.iter();
            s.iter().all(|x| it.any(|y| y == x))
        }
        let n = a.len();
        (0u32..(1 << n))
            .filter_map(|mask| {
                let sub: Vec<u8> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
                is_subseq(&sub, b).then_some(sub.len())
            })
            .max()
            .unwrap_or(0)
    }

    fn spec(std: Vec<f64>) -> FeatureSpec {
        let mut s = FeatureSpec::vector("f", "c", std.len(), "f");
        s.std_vector = std;
        s
    }

    #[test]
    fn identical_vectors_have_unit_similarity() {
        let v = [0.3, -1.2, 4.0];
        let sim = feature_similarity(&spec(vec![1.0, 2.0, 0.5]), FeatureValue::Vector(&v), FeatureValue::Vector(&v)).unwrap();
        assert_eq!(sim, 1.0);
    }

    #[test]
    fn unit_standardized_distance_gives_half() {
        let sim = feature_similarity(
            &spec(vec![2.0, 1.0]),
            FeatureValue::Vector(&[0.0, 5.0]),
            FeatureValue::Vector(&[2.0, 5.0]),
        )
        .unwrap();
        assert_eq!(sim, 0.5);
    }

    #[test]
    fn lcs_example_two_thirds() {
        assert_eq!(brute_lcs(&[2, 5, 7], &[2, 7]), 2);
        assert_eq!(lcs_len(&[2u8, 5, 7], &[2, 7]), 2);
        assert!((lcs_similarity(&[2, 5, 7], &[2, 7]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lcs_edge_cases() {
        assert_eq!(lcs_similarity(&[], &[]), 1.0);
        assert_eq!(lcs_similarity(&[], &[3]), 0.0);
        assert_eq!(lcs_similarity(&[4, 4], &[4, 4]), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = feature_similarity(&spec(vec![1.0, 1.0]), FeatureValue::Vector(&[1.0]), FeatureValue::Vector(&[1.0, 2.0]));
        assert!(matches!(err, Err(AriaError::DimensionMismatch(_))));
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force(
            a in prop::collection::vec(0u8..12, 0..9),
            b in prop::collection::vec(0u8..12, 0..12),
        ) {
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
            let s = lcs_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn bit_parallel_lcs_matches_dp(
            a in prop::collection::vec(0u8..12, 0..150),
            b in prop::collection::vec(0u8..14, 0..150),
        ) {
            prop_assert_eq!(lcs_len_bits(&a, &b), lcs_len(&a, &b));
            prop_assert_eq!(lcs_len_bits(&b, &a), lcs_len(&a, &b));
        }

        #[test]
        fn vector_similarity_in_unit_interval(
            a in prop::collection::vec(-100.0f64..100.0, 4),
            b in prop::collection::vec(-100.0f64..100.0, 4),
        ) {
            let s = scaled_vector_similarity(&a, &b);
            prop_assert!(s > 0.0 && s <= 1.0);
            prop_assert_eq!(s == 1.0, a == b);
        }
    }
}
