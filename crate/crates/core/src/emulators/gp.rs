use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::nelder_mead;
use crate::error::{Error, Result};
use crate::model::StateMatrix;
use crate::sampling::{lhs, RandomStream};

/// Default limit on the number of unique training sites.
pub const GP_SITE_CAP: usize = 1500;

/// Lower bound on the fitted process variance as a fraction of the larger of the
/// response spread and the mean noise variance. Designs clustered on the zero
/// contour otherwise let the likelihood explain everything as noise.
const MIN_SIGNAL_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKernel {
    Gaussian,
    Matern52,
}

impl CovKernel {
    /// Correlation as a function of squared scaled distance.
    fn corr(self, r2: f64) -> f64 {
        match self {
            CovKernel::Gaussian => (-0.5 * r2).exp(),
            CovKernel::Matern52 => {
                let r = (5.0 * r2).sqrt();
                (1.0 + r + r * r / 3.0) * (-r).exp()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub kernel: CovKernel,
    pub lengthscales: Vec<f64>,
    /// Process variance `sigma_p^2`.
    pub variance: f64,
    /// Homoskedastic noise variance added to every site.
    #[serde(default)]
    pub nugget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub restarts: usize,
    pub max_evals: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            restarts: 5,
            max_evals: 200,
        }
    }
}

/// Log-likelihood at the first starting point and at the returned optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct MleTrace {
    pub initial_loglik: f64,
    pub final_loglik: f64,
    pub evals: usize,
}

/// Gaussian process regression with a constant trend estimated by GLS and
/// per-site noise variances on the covariance diagonal.
#[derive(Clone, Debug)]
pub struct GpFit {
    pub hyper: GpHyper,
    pub sites: StateMatrix,
    pub ybar: Vec<f64>,
    pub noise: Vec<f64>,
    pub beta0: f64,
    pub jitter: f64,
    pub loglik: f64,
    pub mle: Option<MleTrace>,
    scaled: Vec<f64>,
    alpha: Vec<f64>,
    chol: DMatrix<f64>,
}

impl PartialEq for GpFit {
    fn eq(&self, other: &Self) -> bool {
        self.hyper == other.hyper
            && self.sites == other.sites
            && self.ybar == other.ybar
            && self.noise == other.noise
    }
}

#[derive(Serialize, Deserialize)]
struct GpRecord {
    hyper: GpHyper,
    sites: StateMatrix,
    ybar: Vec<f64>,
    noise: Vec<f64>,
}

impl Serialize for GpFit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GpRecord {
            hyper: self.hyper.clone(),
            sites: self.sites.clone(),
            ybar: self.ybar.clone(),
            noise: self.noise.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GpFit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = GpRecord::deserialize(d)?;
        GpFit::new(rec.sites, rec.ybar, rec.noise, rec.hyper).map_err(serde::de::Error::custom)
    }
}

struct Factor {
    chol: DMatrix<f64>,
    alpha: Vec<f64>,
    beta0: f64,
    jitter: f64,
    loglik: f64,
}

fn scale_sites(sites: &StateMatrix, lengthscales: &[f64]) -> Vec<f64> {
    let mut z = sites.as_slice().to_vec();
    for row in z.chunks_exact_mut(lengthscales.len()) {
        for (v, l) in row.iter_mut().zip(lengthscales) {
            *v /= l;
        }
    }
    z
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn factorize(
    scaled: &[f64],
    d: usize,
    y: &[f64],
    noise: &[f64],
    hyper: &GpHyper,
) -> Result<Factor> {
    let n = y.len();
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let zi = &scaled[i * d..(i + 1) * d];
        for j in 0..i {
            let v = hyper.variance * hyper.kernel.corr(sqdist(zi, &scaled[j * d..(j + 1) * d]));
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
        c[(i, i)] = hyper.variance + noise[i] + hyper.nugget;
    }
    let mut jitter = 0.0;
    let chol = loop {
        let mut m = c.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            break ch.unpack();
        }
        jitter = if jitter == 0.0 {
            1e-8 * hyper.variance
        } else {
            jitter * 10.0
        };
        if jitter > 1e-4 * hyper.variance * (1.0 + 1e-9) {
            return Err(Error::NotPositiveDefinite {
                jitter: jitter / 10.0,
            });
        }
    };
    let mut u = DVector::from_element(n, 1.0);
    let mut v = DVector::from_column_slice(y);
    chol.solve_lower_triangular_mut(&mut u);
    chol.solve_lower_triangular_mut(&mut v);
    let beta0 = u.dot(&v) / u.dot(&u);
    let w = &v - &u * beta0;
    let logdet: f64 = (0..n).map(|i| chol[(i, i)].ln()).sum();
    let loglik = -0.5 * w.dot(&w) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut alpha = w;
    chol.tr_solve_lower_triangular_mut(&mut alpha);
    Ok(Factor {
        chol,
        alpha: alpha.as_slice().to_vec(),
        beta0,
        jitter,
        loglik,
    })
}

impl GpFit {
    /// Condition a GP with known hyperparameters on site averages `ybar` whose
    /// noise variances are `noise`.
    pub fn new(
        sites: StateMatrix,
        ybar: Vec<f64>,
        noise: Vec<f64>,
        hyper: GpHyper,
    ) -> Result<Self> {
        Self::new_capped(sites, ybar, noise, hyper, GP_SITE_CAP)
    }

    pub fn new_capped(
        sites: StateMatrix,
        ybar: Vec<f64>,
        noise: Vec<f64>,
        hyper: GpHyper,
        cap: usize,
    ) -> Result<Self> {
        let n = sites.rows();
        let d = sites.cols();
        if n > cap {
            return Err(Error::TooManySites { cap, got: n });
        }
        if n == 0 {
            return Err(Error::InsufficientData {
                step: None,
                needed: 1,
                got: 0,
            });
        }
        if ybar.len() != n {
            return Err(Error::dims("GP responses", n, ybar.len()));
        }
        if noise.len() != n {
            return Err(Error::dims("GP noise variances", n, noise.len()));
        }
        if hyper.lengthscales.len() != d {
            return Err(Error::dims("GP lengthscales", d, hyper.lengthscales.len()));
        }
        if hyper
            .lengthscales
            .iter()
            .any(|l| !(l.is_finite() && *l > 0.0))
            || !(hyper.variance.is_finite() && hyper.variance > 0.0)
            || !(hyper.nugget.is_finite() && hyper.nugget >= 0.0)
            || noise.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Precondition(
                "GP hyperparameters and noise variances must be positive and finite".into(),
            ));
        }
        if ybar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GP responses".into()));
        }
        let scaled = scale_sites(&sites, &hyper.lengthscales);
        let f = factorize(&scaled, d, &ybar, &noise, &hyper)?;
        Ok(GpFit {
            hyper,
            sites,
            ybar,
            noise,
            beta0: f.beta0,
            jitter: f.jitter,
            loglik: f.loglik,
            mle: None,
            scaled,
            alpha: f.alpha,
            chol: f.chol,
        })
    }

    /// Fit by maximum likelihood over lengthscales and process variance (and a
    /// homoskedastic nugget when `noise` is absent).
    pub fn fit_mle(
        sites: StateMatrix,
        ybar: Vec<f64>,
        noise: Option<Vec<f64>>,
        kernel: CovKernel,
        opts: &MleOptions,
        cap: usize,
        stream: &RandomStream,
    ) -> Result<Self> {
        let n = sites.rows();
        let d = sites.cols();
        if n > cap {
            return Err(Error::TooManySites { cap, got: n });
        }
        if ybar.len() != n {
            return Err(Error::dims("GP responses", n, ybar.len()));
        }
        let fit_nugget = noise.is_none();
        let noise = noise.unwrap_or_else(|| vec![0.0; n]);
        if noise.len() != n {
            return Err(Error::dims("GP noise variances", n, noise.len()));
        }
        let mean = ybar.iter().sum::<f64>() / n as f64;
        let yvar = ybar.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        let noise_mean = noise.iter().sum::<f64>() / n as f64;
        let v0 = yvar.max(noise_mean).max(1e-12);

        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for j in 0..d {
            let c = sites.column(j);
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = if hi > lo { hi - lo } else { 1.0 };
            lower.push((0.05 * range).ln());
            upper.push((3.0 * range).ln());
        }
        lower.push((MIN_SIGNAL_FRACTION * v0).ln());
        upper.push((1e2 * v0).ln());
        if fit_nugget {
            lower.push((1e-8 * v0).ln());
            upper.push((2.0 * v0).ln());
        }
        let p = lower.len();

        let hyper_of = |t: &[f64]| GpHyper {
            kernel,
            lengthscales: t[..d].iter().map(|v| v.exp()).collect(),
            variance: t[d].exp(),
            nugget: if fit_nugget { t[d + 1].exp() } else { 0.0 },
        };
        let objective = |t: &[f64]| -> f64 {
            let h = hyper_of(t);
            let scaled = scale_sites(&sites, &h.lengthscales);
            match factorize(&scaled, d, &ybar, &noise, &h) {
                Ok(f) => -f.loglik,
                Err(_) => f64::INFINITY,
            }
        };

        let starts = lhs(opts.restarts.max(1), p, stream)?;
        let step: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| 0.2 * (u - l))
            .collect();
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut initial = f64::NEG_INFINITY;
        let mut evals = 0;
        for (i, s) in starts.iter().enumerate() {
            let x0: Vec<f64> = s
                .iter()
                .zip(lower.iter().zip(&upper))
                .map(|(u, (l, h))| l + u * (h - l))
                .collect();
            if i == 0 {
                initial = -objective(&x0);
            }
            let m = nelder_mead(&objective, &x0, &step, &lower, &upper, opts.max_evals);
            evals += m.evals;
            if best.as_ref().is_none_or(|b| m.value < b.1) {
                best = Some((m.x, m.value));
            }
        }
        let (t, _) = best.expect("at least one restart");
        let mut fit = GpFit::new_capped(sites, ybar, noise, hyper_of(&t), cap)?;
        fit.mle = Some(MleTrace {
            initial_loglik: initial,
            final_loglik: fit.loglik,
            evals,
        });
        Ok(fit)
    }

    /// Same hyperparameters, new data.
    pub fn refit(&self, sites: StateMatrix, ybar: Vec<f64>, noise: Vec<f64>) -> Result<Self> {
        GpFit::new(sites, ybar, noise, self.hyper.clone())
    }

    fn cross_cov(&self, q: &[f64], zq: &mut Vec<f64>) -> Vec<f64> {
        let d = self.sites.cols();
        zq.clear();
        zq.extend(q.iter().zip(&self.hyper.lengthscales).map(|(v, l)| v / l));
        self.scaled
            .chunks_exact(d)
            .map(|z| self.hyper.variance * self.hyper.kernel.corr(sqdist(zq, z)))
            .collect()
    }

    pub fn predict_mean_row(&self, q: &[f64]) -> f64 {
        let d = self.sites.cols();
        let mut zq = [0.0f64; 16];
        let mut heap;
        let zq: &mut [f64] = if d <= 16 {
            &mut zq[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for ((z, v), l) in zq.iter_mut().zip(q).zip(&self.hyper.lengthscales) {
            *z = v / l;
        }
        let mut m = 0.0;
        for (z, a) in self.scaled.chunks_exact(d).zip(&self.alpha) {
            m += a * self.hyper.kernel.corr(sqdist(zq, z));
        }
        self.beta0 + self.hyper.variance * m
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict_row(&self, q: &[f64]) -> (f64, f64) {
        let mut zq = Vec::new();
        let k = self.cross_cov(q, &mut zq);
        let mean = self.beta0 + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let mut v = DVector::from_vec(k);
        self.chol.solve_lower_triangular_mut(&mut v);
        let var = (self.hyper.variance - v.dot(&v)).max(0.0);
        (mean, var.sqrt())
    }
}
