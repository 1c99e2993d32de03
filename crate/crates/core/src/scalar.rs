//! Scalar math shared by the completeness and information-gain code.
//!
//! Everything here is generic over [`num_traits::Float`] so the same routines
//! serve `f64` (the crate default, see [`crate::Bits`]) and `f32` callers.

use num_traits::Float;

/// Shannon entropy in bits of a probability vector.
///
/// Zero-probability entries contribute nothing. The input is not renormalized.
pub fn entropy_bits<T: Float>(probabilities: &[T]) -> T {
    probabilities
        .iter()
        .filter(|p| **p > T::zero())
        .fold(T::zero(), |acc, &p| acc - p * p.log2())
}

/// `sum(weights[i] for selected i) / sum(weights)`; zero when the total weight is zero.
pub fn weighted_fraction<T: Float>(weights: &[T], selected: &[bool]) -> T {
    let total = weights.iter().fold(T::zero(), |a, &w| a + w);
    if total <= T::zero() {
        return T::zero();
    }
    let hit = weights
        .iter()
        .zip(selected)
        .filter(|(_, s)| **s)
        .fold(T::zero(), |a, (&w, _)| a + w);
    hit / total
}

/// True when `value` reaches `threshold`, tolerating float noise from ratios
/// such as `7.0 / 10.0` compared against a literal `0.7`.
pub fn meets<T: Float>(value: T, threshold: T) -> bool {
    let eps = T::from(1e-12).unwrap_or_else(T::epsilon);
    value + eps >= threshold
}

/// Whether a probability vector sums to one within `tol`.
pub fn is_distribution<T: Float>(probabilities: &[T], tol: T) -> bool {
    !probabilities.is_empty()
        && probabilities.iter().all(|p| *p >= T::zero())
        && (probabilities.iter().fold(T::zero(), |a, &p| a + p) - T::one()).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_uniform_vectors() {
        assert_eq!(entropy_bits(&[0.5_f64, 0.5]), 1.0);
        assert_eq!(entropy_bits(&[0.25_f64; 4]), 2.0);
        assert!((entropy_bits(&[0.25_f32; 4]) - 2.0).abs() < 1e-6);
        assert_eq!(entropy_bits::<f64>(&[1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn weighted_fraction_hand_case() {
        let w = [0.5, 0.3, 0.2];
        assert!((weighted_fraction(&w, &[true, true, false]) - 0.8).abs() < 1e-12);
        assert_eq!(weighted_fraction::<f64>(&[], &[]), 0.0);
    }

    #[test]
    fn meets_is_tolerant_at_the_boundary() {
        assert!(meets(7.0 / 10.0, 0.7));
        assert!(!meets(7.0 / 11.0, 0.7));
        assert!(meets(8.0 / 11.0, 0.7));
    }
}
