use rand::seq::SliceRandom;
use rand::Rng;

use super::RandomStream;
use crate::error::{Error, Result};

/// Latin hypercube sample of `n` points in `[0,1)^d`: each coordinate has exactly
/// one point in every stratum `[(j-1)/n, j/n)`.
pub fn lhs(n: usize, d: usize, stream: &RandomStream) -> Result<Vec<Vec<f64>>> {
    if d == 0 {
        return Err(Error::Precondition("LHS dimension must be positive".into()));
    }
    let mut rng = stream.rng();
    let mut pts = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(&mut rng);
        for (i, p) in pts.iter_mut().enumerate() {
            let u: f64 = rng.random();
            p[j] = (perm[i] as f64 + u) / n as f64;
        }
    }
    Ok(pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified() {
        let pts = lhs(50, 3, &RandomStream::new(5)).unwrap();
        for j in 0..3 {
            let mut seen = [false; 50];
            for p in &pts {
                let s = (p[j] * 50.0).floor() as usize;
                assert!(!seen[s]);
                seen[s] = true;
            }
        }
    }
}
