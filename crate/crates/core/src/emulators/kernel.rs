use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StateMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Epanechnikov,
}

impl KernelKind {
    /// Product-kernel weight of scaled offsets `u_i = (x_i - s_i) / h_i`, up to a constant.
    fn weight(self, x: &[f64], s: &[f64], h: &[f64]) -> f64 {
        match self {
            KernelKind::Gaussian => {
                let q: f64 = x
                    .iter()
                    .zip(s)
                    .zip(h)
                    .map(|((a, b), h)| ((a - b) / h).powi(2))
                    .sum();
                (-0.5 * q).exp()
            }
            KernelKind::Epanechnikov => {
                let mut w = 1.0;
                for ((a, b), h) in x.iter().zip(s).zip(h) {
                    let u = (a - b) / h;
                    if u.abs() >= 1.0 {
                        return 0.0;
                    }
                    w *= 1.0 - u * u;
                }
                w
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(Vec<f64>),
    /// Leave-one-out cross-validation over multiples of the rule-of-thumb bandwidth.
    Cv,
}

/// Nadaraya-Watson regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelFit {
    pub kernel: KernelKind,
    pub bandwidth: Vec<f64>,
    pub sites: StateMatrix,
    pub y: Vec<f64>,
}

/// Number of multiplicative factors tried by cross-validation.
pub const CV_GRID: usize = 25;
/// Largest number of held-out points scored during cross-validation.
const CV_MAX_EVAL: usize = 2000;

pub fn cv_factors() -> Vec<f64> {
    (0..CV_GRID)
        .map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / (CV_GRID - 1) as f64))
        .collect()
}

/// Per-coordinate rule-of-thumb bandwidth `sd_i * (4 / ((d + 2) n))^(1 / (d + 4))`.
pub fn silverman(x: &StateMatrix) -> Vec<f64> {
    let n = x.rows() as f64;
    let d = x.cols() as f64;
    let factor = (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0));
    (0..x.cols())
        .map(|j| {
            let c = x.column(j);
            let m = c.iter().sum::<f64>() / n;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            if sd > 0.0 {
                sd * factor
            } else {
                1.0
            }
        })
        .collect()
}

pub fn fit_kernel(
    x: &StateMatrix,
    y: &[f64],
    kernel: KernelKind,
    bandwidth: &Bandwidth,
) -> Result<KernelFit> {
    if x.rows() != y.len() {
        return Err(Error::dims(
            "kernel regression responses",
            x.rows(),
            y.len(),
        ));
    }
    if x.rows() < 2 {
        return Err(Error::InsufficientData {
            step: None,
            needed: 2,
            got: x.rows(),
        });
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) => {
            if h.len() != x.cols() {
                return Err(Error::dims("bandwidth vector", x.cols(), h.len()));
            }
            if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Precondition("bandwidths must be positive".into()));
            }
            h.clone()
        }
        Bandwidth::Cv => {
            let base = silverman(x);
            let mut best = (f64::INFINITY, base.clone());
            for f in cv_factors() {
                let h: Vec<f64> = base.iter().map(|b| b * f).collect();
                let mse = loo_mse(x, y, kernel, &h);
                if mse < best.0 {
                    best = (mse, h);
                }
            }
            best.1
        }
    };
    Ok(KernelFit {
        kernel,
        bandwidth: h,
        sites: x.clone(),
        y: y.to_vec(),
    })
}

/// Leave-one-out mean squared error of the regression with bandwidth `h`.
pub fn loo_mse(x: &StateMatrix, y: &[f64], kernel: KernelKind, h: &[f64]) -> f64 {
    let n = x.rows();
    let stride = n.div_ceil(CV_MAX_EVAL).max(1);
    let mut sse = 0.0;
    let mut cnt = 0;
    for i in (0..n).step_by(stride) {
        let xi = x.row(i);
        let (mut num, mut den) = (0.0, 0.0);
        for (j, s) in x.iter_rows().enumerate() {
            if j != i {
                let w = kernel.weight(xi, s, h);
                num += w * y[j];
                den += w;
            }
        }
        let pred = if den > 0.0 {
            num / den
        } else {
            nearest(x, y, xi, h, Some(i))
        };
        sse += (pred - y[i]).powi(2);
        cnt += 1;
    }
    sse / cnt as f64
}

fn nearest(x: &StateMatrix, y: &[f64], q: &[f64], h: &[f64], skip: Option<usize>) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for (j, s) in x.iter_rows().enumerate() {
        if Some(j) == skip {
            continue;
        }
        let d: f64 = q
            .iter()
            .zip(s)
            .zip(h)
            .map(|((a, b), h)| ((a - b) / h).powi(2))
            .sum();
        if d < best.0 {
            best = (d, y[j]);
        }
    }
    best.1
}

impl KernelFit {
    pub fn predict_row(&self, q: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (s, y) in self.sites.iter_rows().zip(&self.y) {
            let w = self.kernel.weight(q, s, &self.bandwidth);
            num += w * y;
            den += w;
        }
        if den > 0.0 {
            num / den
        } else {
            nearest(&self.sites, &self.y, q, &self.bandwidth, None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::RandomStream;

    #[test]
    fn cv_close_to_grid_optimum() {
        let n = 200;
        let s = RandomStream::new(21);
        let u = s.child("x", 0).uniforms(n);
        let e = s.child("e", 0).standard_normals(n);
        let xs: Vec<f64> = u.iter().map(|v| v * 6.0).collect();
        let y: Vec<f64> = xs.iter().zip(&e).map(|(x, e)| x.sin() + 0.3 * e).collect();
        let x = StateMatrix::new(n, 1, xs).unwrap();
        for kern in [KernelKind::Gaussian, KernelKind::Epanechnikov] {
            let fit = fit_kernel(&x, &y, kern, &Bandwidth::Cv).unwrap();
            let chosen = loo_mse(&x, &y, kern, &fit.bandwidth);
            // brute-force scan over a much finer and wider grid
            let best = (0..400)
                .map(|i| 10f64.powf(-3.0 + 4.0 * i as f64 / 399.0))
                .map(|h| loo_mse(&x, &y, kern, &[h]))
                .fold(f64::INFINITY, f64::min);
            assert!(chosen <= 1.5 * best, "{kern:?}: {chosen} vs {best}");
        }
    }

    #[test]
    fn zero_weight_falls_back_to_nearest() {
        let x = StateMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let fit = fit_kernel(
            &x,
            &[3.0, 5.0],
            KernelKind::Epanechnikov,
            &Bandwidth::Fixed(vec![0.1]),
        )
        .unwrap();
        assert_eq!(fit.predict_row(&[0.8]), 5.0);
        assert_eq!(fit.predict_row(&[0.02]), 3.0);
    }
}
