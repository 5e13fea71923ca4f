use crate::error::{Error, Result};

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut x = 0.0;
    while i > 0 {
        x += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    x
}

/// First `n` Halton points in `[0,1)^d`, starting from index 1 (the origin is skipped).
pub fn halton(n: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    if d == 0 || d > PRIMES.len() {
        return Err(Error::Precondition(format!(
            "Halton dimension must be in 1..={}, got {d}",
            PRIMES.len()
        )));
    }
    Ok((1..=n as u64)
        .map(|i| PRIMES[..d].iter().map(|&p| radical_inverse(i, p)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_points_by_hand() {
        let h = halton(3, 2).unwrap();
        let expect = [[0.5, 1.0 / 3.0], [0.25, 2.0 / 3.0], [0.75, 1.0 / 9.0]];
        for (p, e) in h.iter().zip(expect) {
            assert!((p[0] - e[0]).abs() < 1e-15 && (p[1] - e[1]).abs() < 1e-15);
        }
    }
}
