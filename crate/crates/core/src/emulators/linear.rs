use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PayoffKind, StateMatrix};

/// Intrinsic payoff used as an extra regressor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffFeature {
    pub kind: PayoffKind,
    pub strike: f64,
}

/// A set of monomial regressors, optionally on the coordinates sorted in
/// decreasing order, optionally with the payoff appended. The intercept is implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub dim: usize,
    pub terms: Vec<Vec<u32>>,
    #[serde(default)]
    pub sorted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<PayoffFeature>,
}

impl BasisSet {
    pub fn new(
        dim: usize,
        terms: Vec<Vec<u32>>,
        sorted: bool,
        payoff: Option<PayoffFeature>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Precondition(
                "basis dimension must be positive".into(),
            ));
        }
        for t in &terms {
            if t.len() != dim {
                return Err(Error::dims("monomial exponent vector", dim, t.len()));
            }
            if t.iter().all(|&e| e == 0) {
                return Err(Error::Precondition(
                    "constant monomial duplicates the intercept".into(),
                ));
            }
        }
        Ok(BasisSet {
            dim,
            terms,
            sorted,
            payoff,
        })
    }

    /// Number of regressors excluding the intercept.
    pub fn n_features(&self) -> usize {
        self.terms.len() + usize::from(self.payoff.is_some())
    }

    /// Number of fitted coefficients including the intercept.
    pub fn n_coefficients(&self) -> usize {
        self.n_features() + 1
    }

    /// Writes `[1, f_1(x), ..., f_R(x)]` into `out`.
    pub fn features_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        let mut sorted_buf = [0.0f64; 16];
        let mut heap;
        let z: &[f64] = if self.sorted {
            let buf: &mut [f64] = if x.len() <= 16 {
                &mut sorted_buf[..x.len()]
            } else {
                heap = vec![0.0; x.len()];
                &mut heap
            };
            buf.copy_from_slice(x);
            buf.sort_by(|a, b| b.total_cmp(a));
            buf
        } else {
            x
        };
        for t in &self.terms {
            let mut v = 1.0;
            for (xi, &e) in z.iter().zip(t) {
                if e > 0 {
                    v *= xi.powi(e as i32);
                }
            }
            out.push(v);
        }
        if let Some(p) = &self.payoff {
            out.push(p.kind.value(p.strike, x));
        }
    }
}

/// All monomials of total degree `1..=degree` in `dim` variables, ordered by
/// degree and then lexicographically (e.g. `x1, x2, x1^2, x1 x2, x2^2`).
pub fn polynomial_bases(
    degree: u32,
    dim: usize,
    payoff: Option<PayoffFeature>,
    sorted: bool,
) -> Result<BasisSet> {
    if degree == 0 {
        return Err(Error::Precondition(
            "polynomial degree must be at least 1".into(),
        ));
    }
    let mut terms = Vec::new();
    for deg in 1..=degree {
        let mut cur = vec![0u32; dim];
        compositions(deg, 0, &mut cur, &mut terms);
    }
    BasisSet::new(dim, terms, sorted, payoff)
}

fn compositions(left: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        compositions(left - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Ordinary least squares fit on a basis set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub basis: BasisSet,
    /// Intercept first, then one coefficient per basis function.
    pub coef: Vec<f64>,
}

impl LinearFit {
    pub fn predict_row(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        self.basis.features_into(x, buf);
        buf.iter().zip(&self.coef).map(|(f, c)| f * c).sum()
    }
}

pub fn fit_lm(x: &StateMatrix, y: &[f64], basis: &BasisSet) -> Result<LinearFit> {
    if x.cols() != basis.dim {
        return Err(Error::dims("regression inputs", basis.dim, x.cols()));
    }
    if x.rows() != y.len() {
        return Err(Error::dims("regression responses", x.rows(), y.len()));
    }
    let p = basis.n_coefficients();
    let mut a = DMatrix::<f64>::zeros(x.rows(), p);
    let mut buf = Vec::with_capacity(p);
    for (i, row) in x.iter_rows().enumerate() {
        basis.features_into(row, &mut buf);
        for (j, f) in buf.iter().enumerate() {
            a[(i, j)] = *f;
        }
    }
    let coef = least_squares(a, y, Collinear::Reject)?;
    Ok(LinearFit {
        basis: basis.clone(),
        coef,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Collinear {
    /// Report rank deficiency as an error.
    Reject,
    /// Zero out coefficients of columns that add nothing to the span.
    Drop,
}

const RANK_TOL: f64 = 1e-10;

/// Least squares via Householder QR on unit-norm columns.
pub(crate) fn least_squares(a: DMatrix<f64>, y: &[f64], mode: Collinear) -> Result<Vec<f64>> {
    let (n, p) = a.shape();
    if n < p {
        return Err(Error::InsufficientData {
            step: None,
            needed: p,
            got: n,
        });
    }
    if y.iter().any(|v| !v.is_finite()) || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression data".into()));
    }
    let mut keep: Vec<usize> = (0..p).collect();
    loop {
        let mut sub = a.select_columns(&keep);
        let mut norms = Vec::with_capacity(keep.len());
        for mut col in sub.column_iter_mut() {
            let nrm = col.norm();
            norms.push(nrm);
            if nrm > 0.0 {
                col /= nrm;
            }
        }
        let qr = sub.qr();
        let r = qr.r();
        let bad: Vec<usize> = (0..keep.len())
            .filter(|&j| norms[j] == 0.0 || r[(j, j)].abs() < RANK_TOL)
            .collect();
        if !bad.is_empty() {
            let cols: Vec<usize> = bad.iter().map(|&j| keep[j]).collect();
            if mode == Collinear::Reject {
                return Err(Error::RankDeficient { columns: cols });
            }
            keep.retain(|c| !cols.contains(c));
            if keep.is_empty() {
                return Ok(vec![0.0; p]);
            }
            continue;
        }
        let mut qty = DVector::from_column_slice(y);
        qr.q_tr_mul(&mut qty);
        let m = keep.len();
        let rhs = qty.rows(0, m).into_owned();
        let beta = r.solve_upper_triangular(&rhs).ok_or(Error::RankDeficient {
            columns: keep.clone(),
        })?;
        let mut coef = vec![0.0; p];
        for (j, &c) in keep.iter().enumerate() {
            coef[c] = beta[j] / norms[j];
        }
        return Ok(coef);
    }
}
