//! Low-discrepancy sequences.

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `k` in `base` (van der Corput).
pub fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while k > 0 {
        r += f * (k % base) as f64;
        k /= base;
        f *= inv;
    }
    r
}

/// The `k`-th point of the Halton sequence in `[0,1)^dim`, `dim ≤ 16`.
pub fn halton(k: u64, dim: usize) -> Vec<f64> {
    assert!(
        dim <= PRIMES.len(),
        "Halton dimension above {}",
        PRIMES.len()
    );
    PRIMES[..dim]
        .iter()
        .map(|&b| radical_inverse(k, b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_der_corput_prefix() {
        let v: Vec<f64> = (1..5).map(|k| radical_inverse(k, 2)).collect();
        assert_eq!(v, vec![0.5, 0.25, 0.75, 0.125]);
        assert_eq!(halton(1, 2), vec![0.5, 1.0 / 3.0]);
    }
}
