use crate::error::{Error, Result};

const BITS: usize = 32;

pub const SOBOL_MAX_DIM: usize = 20;

/// Primitive polynomials (with leading and trailing bits) and initial direction
/// integers for dimensions 2..=20 (Joe and Kuo's new-joe-kuo-6 table).
const TABLE: [(u32, &[u32]); SOBOL_MAX_DIM - 1] = [
    (3, &[1]),
    (7, &[1, 3]),
    (11, &[1, 3, 1]),
    (13, &[1, 1, 1]),
    (19, &[1, 1, 3, 3]),
    (25, &[1, 3, 5, 13]),
    (37, &[1, 1, 5, 5, 17]),
    (41, &[1, 1, 5, 5, 5]),
    (47, &[1, 1, 7, 11, 19]),
    (55, &[1, 1, 5, 1, 1]),
    (59, &[1, 1, 1, 3, 11]),
    (61, &[1, 3, 5, 5, 31]),
    (67, &[1, 3, 3, 9, 7, 49]),
    (91, &[1, 1, 1, 15, 21, 21]),
    (97, &[1, 3, 1, 13, 27, 49]),
    (103, &[1, 1, 1, 15, 7, 5]),
    (109, &[1, 3, 1, 15, 13, 25]),
    (115, &[1, 1, 5, 5, 19, 61]),
    (131, &[1, 3, 7, 11, 23, 15, 103]),
];

fn directions(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = 1u32 << (BITS - 1 - j);
        }
        return v;
    }
    let (poly, m) = TABLE[dim - 1];
    let s = (32 - poly.leading_zeros() - 1) as usize;
    let a = (poly >> 1) & ((1 << (s - 1)) - 1);
    for j in 0..s {
        v[j] = m[j] << (BITS - 1 - j);
    }
    for j in s..BITS {
        let mut x = v[j - s] ^ (v[j - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                x ^= v[j - k];
            }
        }
        v[j] = x;
    }
    v
}

/// First `n` points of the unscrambled Sobol sequence in `[0,1)^d` (Gray-code order),
/// skipping the origin.
pub fn sobol(n: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    if d == 0 || d > SOBOL_MAX_DIM {
        return Err(Error::Precondition(format!(
            "Sobol dimension must be in 1..={SOBOL_MAX_DIM}, got {d}"
        )));
    }
    if n as u64 >= 1u64 << BITS {
        return Err(Error::Precondition(
            "too many Sobol points requested".into(),
        ));
    }
    let dirs: Vec<[u32; BITS]> = (0..d).map(directions).collect();
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut x = vec![0u32; d];
    let mut out = Vec::with_capacity(n);
    for i in 1..=n as u64 {
        let c = (i - 1).trailing_ones() as usize;
        for (xj, dj) in x.iter_mut().zip(&dirs) {
            *xj ^= dj[c];
        }
        out.push(x.iter().map(|&v| v as f64 * scale).collect());
    }
    Ok(out)
}
