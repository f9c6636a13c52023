//! Discrete Fourier transform.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley-Tukey transform; other
//! lengths fall back to the direct O(n²) sum.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

/// Forward DFT, `X[k] = Σ x[n]·e^{-j2πkn/N}`, unnormalized.
pub fn fft(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    if n <= 1 {
        return input.to_vec();
    }
    if !n.is_power_of_two() {
        return dft(input);
    }
    let bits = n.trailing_zeros();
    let mut a: Vec<Complex64> = (0..n)
        .map(|i| input[i.reverse_bits() >> (usize::BITS - bits)])
        .collect();
    let mut len = 2;
    while len <= n {
        let w = Complex64::from_polar(1.0, -2.0 * PI / len as f64);
        for start in (0..n).step_by(len) {
            let mut tw = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = a[start + k];
                let v = a[start + k + len / 2] * tw;
                a[start + k] = u + v;
                a[start + k + len / 2] = u - v;
                tw *= w;
            }
        }
        len <<= 1;
    }
    a
}

fn dft(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let phase = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
                    x * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn radix2_matches_direct_sum(
            re in proptest::collection::vec(-1.0f64..1.0, 64),
            im in proptest::collection::vec(-1.0f64..1.0, 64),
        ) {
            let x: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
            let fast = fft(&x);
            let slow = dft(&x);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = vec![Complex64::new(0.0, 0.0); 16];
        x[0] = Complex64::new(1.0, 0.0);
        for v in fft(&x) {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn non_power_of_two_uses_direct_sum() {
        let x: Vec<Complex64> = (0..12).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let y = fft(&x);
        assert!((y[0].re - 66.0).abs() < 1e-9);
    }
}
