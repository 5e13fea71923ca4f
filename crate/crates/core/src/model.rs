//! Model specifications, state simulation and payoffs.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix of path states: one row per path, one column per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl StateMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("state matrix buffer", rows * cols, data.len()));
        }
        Ok(StateMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        StateMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dims("state matrix row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(StateMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn repeat_row(row: &[f64], n: usize) -> Self {
        let mut data = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        StateMatrix {
            rows: n,
            cols: row.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[j]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        StateMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "row length must match column count");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn append(&mut self, other: &StateMatrix) {
        assert_eq!(other.cols, self.cols, "column counts must match");
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    Gbm,
    GbmCor,
    GbmMatrix,
    ExpouSv,
    GbmMovingAve,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    Put,
    Call,
    MaxiCall,
    MiniPut,
    GeomPut,
    DigitalPut,
    SvPut,
}

impl PayoffKind {
    /// Undiscounted intrinsic value of one state.
    pub fn value(self, strike: f64, x: &[f64]) -> f64 {
        let mean = || x.iter().sum::<f64>() / x.len() as f64;
        match self {
            PayoffKind::Put => (strike - mean()).max(0.0),
            PayoffKind::Call => (mean() - strike).max(0.0),
            PayoffKind::MaxiCall => {
                let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (m - strike).max(0.0)
            }
            PayoffKind::MiniPut => {
                let m = x.iter().copied().fold(f64::INFINITY, f64::min);
                (strike - m).max(0.0)
            }
            PayoffKind::GeomPut => {
                let g = (x.iter().map(|v| v.ln()).sum::<f64>() / x.len() as f64).exp();
                (strike - g).max(0.0)
            }
            PayoffKind::DigitalPut => {
                if mean() < strike {
                    1.0
                } else {
                    0.0
                }
            }
            PayoffKind::SvPut => (strike - x[0]).max(0.0),
        }
    }
}

macro_rules! impl_from_str_via_serde {
    ($t:ty) => {
        impl std::str::FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                serde_json::from_value(serde_json::Value::String(s.to_string()))
                    .map_err(|_| Error::Precondition(format!("unknown tag `{s}`")))
            }
        }
    };
}
impl_from_str_via_serde!(Dynamics);
impl_from_str_via_serde!(PayoffKind);

/// A scalar broadcast to every coordinate, or an explicit per-coordinate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Default for Param {
    fn default() -> Self {
        Param::Scalar(0.0)
    }
}

impl Param {
    pub fn expand(&self, dim: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            Param::Scalar(v) => Ok(vec![*v; dim]),
            Param::Vector(v) if v.len() == dim => Ok(v.clone()),
            Param::Vector(v) if v.len() == 1 => Ok(vec![v[0]; dim]),
            Param::Vector(v) => Err(Error::model(
                field,
                format!("expected 1 or {dim} entries, got {}", v.len()),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Volatility {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

/// Parameters of the exponential Ornstein-Uhlenbeck stochastic volatility factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    /// Mean-reversion speed of the log-volatility.
    pub alpha: f64,
    /// Long-run mean of the log-volatility.
    pub mean: f64,
    /// Volatility of the log-volatility.
    pub vol: f64,
    /// Extra multiplicative scale on the log-volatility noise.
    #[serde(default = "one")]
    pub eps_y: f64,
    /// Correlation between price and volatility shocks.
    #[serde(default)]
    pub rho: f64,
    /// Euler sub-step used inside each exercise interval.
    pub euler_dt: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    /// Horizon `T` in years.
    pub maturity: f64,
    /// Spacing between exercise dates.
    pub dt: f64,
    pub r: f64,
    #[serde(default)]
    pub div: Param,
    pub sigma: Volatility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub x0: Param,
    pub strike: f64,
    pub payoff: PayoffKind,
    pub dynamics: Dynamics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sv: Option<SvParams>,
    #[serde(default, flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::model("dim", "must be at least 1"));
        }
        for (name, v) in [("maturity", self.maturity), ("dt", self.dt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::model(name, "must be positive and finite"));
            }
        }
        let k = (self.maturity / self.dt).round();
        if k < 1.0 || (k * self.dt - self.maturity).abs() > 1e-9 {
            return Err(Error::model(
                "dt",
                format!(
                    "maturity {} is not an integer multiple of dt {}",
                    self.maturity, self.dt
                ),
            ));
        }
        if !self.r.is_finite() {
            return Err(Error::model("r", "must be finite"));
        }
        if !self.strike.is_finite() {
            return Err(Error::model("strike", "must be finite"));
        }
        let div = self.div.expand(self.dim, "div")?;
        if div.iter().any(|v| !v.is_finite()) {
            return Err(Error::model("div", "must be finite"));
        }
        let x0 = self.x0.expand(self.dim, "x0")?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::model("x0", "must be finite"));
        }
        match self.dynamics {
            Dynamics::Gbm | Dynamics::GbmCor | Dynamics::GbmMatrix => {
                if x0.iter().any(|&v| v <= 0.0) {
                    return Err(Error::model("x0", "GBM states must be strictly positive"));
                }
            }
            Dynamics::GbmMovingAve | Dynamics::ExpouSv => {
                if x0[0] <= 0.0 {
                    return Err(Error::model(
                        "x0",
                        "price coordinate must be strictly positive",
                    ));
                }
            }
        }
        if self.dynamics == Dynamics::ExpouSv {
            if self.dim != 2 {
                return Err(Error::model(
                    "dim",
                    "stochastic volatility model has dim = 2",
                ));
            }
            let sv = self
                .sv
                .as_ref()
                .ok_or_else(|| Error::model("sv", "required for expou_sv dynamics"))?;
            if !(sv.euler_dt > 0.0 && sv.euler_dt <= self.dt) {
                return Err(Error::model("sv.euler_dt", "must lie in (0, dt]"));
            }
            if sv.rho.abs() > 1.0 {
                return Err(Error::model("sv.rho", "must lie in [-1, 1]"));
            }
        }
        if self.payoff == PayoffKind::SvPut && self.dynamics != Dynamics::ExpouSv {
            return Err(Error::model("payoff", "sv_put requires expou_sv dynamics"));
        }
        Simulator::new(self).map(|_| ())
    }

    /// Number of exercise dates `K` after time zero.
    pub fn steps(&self) -> usize {
        (self.maturity / self.dt).round() as usize
    }

    pub fn x0(&self) -> Vec<f64> {
        self.x0
            .expand(self.dim, "x0")
            .expect("x0 validated against dim")
    }

    pub fn discount(&self, k: usize) -> f64 {
        (-self.r * k as f64 * self.dt).exp()
    }

    /// Discounted payoff `h(k, x)` of a single state.
    pub fn reward_row(&self, k: usize, x: &[f64]) -> f64 {
        self.discount(k) * self.payoff.value(self.strike, x)
    }

    pub fn reward(&self, k: usize, states: &StateMatrix) -> Vec<f64> {
        let disc = self.discount(k);
        states
            .iter_rows()
            .map(|x| disc * self.payoff.value(self.strike, x))
            .collect()
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self)
    }
}

/// Undiscounted payoff of every row.
pub fn payoff(states: &StateMatrix, model: &ModelSpec) -> Result<Vec<f64>> {
    check_cols(states, model)?;
    Ok(states
        .iter_rows()
        .map(|x| model.payoff.value(model.strike, x))
        .collect())
}

/// `exp(-r k dt) * payoff` for every row at step `k`.
pub fn discounted_reward(k: usize, states: &StateMatrix, model: &ModelSpec) -> Result<Vec<f64>> {
    check_cols(states, model)?;
    if k > model.steps() {
        return Err(Error::StepOutOfRange {
            step: k,
            max: model.steps(),
        });
    }
    Ok(model.reward(k, states))
}

/// Advance every row by one interval `dt` under the model dynamics.
pub fn sim_step<R: Rng + ?Sized>(
    states: &StateMatrix,
    model: &ModelSpec,
    dt: f64,
    rng: &mut R,
) -> Result<StateMatrix> {
    check_cols(states, model)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Precondition(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let sim = Simulator::new(model)?;
    sim.check_states(states)?;
    Ok(sim.step(states, dt, rng))
}

fn check_cols(states: &StateMatrix, model: &ModelSpec) -> Result<()> {
    if states.cols() != model.dim {
        return Err(Error::dims("state columns", model.dim, states.cols()));
    }
    Ok(())
}

/// Pre-computed one-step transition for a model.
#[derive(Clone, Debug)]
pub struct Simulator {
    dynamics: Dynamics,
    dim: usize,
    r: f64,
    div: Vec<f64>,
    /// Log-drift per unit time for each coordinate.
    drift: Vec<f64>,
    vol: Vec<f64>,
    /// Lower Cholesky factor of the per-unit-time covariance, row-major.
    chol: Option<Vec<f64>>,
    sv: Option<SvParams>,
}

impl Simulator {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        let d = model.dim;
        let div = model.div.expand(d, "div")?;
        let mut chol = None;
        let vol: Vec<f64> = match (&model.sigma, model.dynamics) {
            (Volatility::Matrix(m), Dynamics::GbmMatrix) => {
                if m.len() != d || m.iter().any(|r| r.len() != d) {
                    return Err(Error::model(
                        "sigma",
                        format!("expected a {d}x{d} covariance matrix"),
                    ));
                }
                let flat: Vec<f64> = m.iter().flatten().copied().collect();
                for i in 0..d {
                    for j in 0..i {
                        if (flat[i * d + j] - flat[j * d + i]).abs() > 1e-12 {
                            return Err(Error::model(
                                "sigma",
                                "covariance matrix must be symmetric",
                            ));
                        }
                    }
                }
                chol = Some(cholesky(&flat, d).ok_or_else(|| {
                    Error::model("sigma", "covariance matrix is not positive definite")
                })?);
                (0..d).map(|i| flat[i * d + i].sqrt()).collect()
            }
            (Volatility::Matrix(_), _) => {
                return Err(Error::model(
                    "sigma",
                    "matrix volatility requires gbm_matrix dynamics",
                ))
            }
            (_, Dynamics::GbmMatrix) => {
                return Err(Error::model(
                    "sigma",
                    "gbm_matrix dynamics require a covariance matrix",
                ))
            }
            (Volatility::Scalar(s), _) => vec![*s; d],
            (Volatility::Vector(v), _) => Param::Vector(v.clone()).expand(d, "sigma")?,
        };
        if vol.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::model(
                "sigma",
                "volatilities must be non-negative and finite",
            ));
        }
        if model.dynamics == Dynamics::GbmCor {
            let rho = model
                .rho
                .ok_or_else(|| Error::model("rho", "required for gbm_cor dynamics"))?;
            let mut cov = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] = if i == j {
                        vol[i] * vol[i]
                    } else {
                        rho * vol[i] * vol[j]
                    };
                }
            }
            chol = Some(cholesky(&cov, d).ok_or_else(|| {
                Error::model("rho", "correlation matrix is not positive definite")
            })?);
        }
        let drift = (0..d)
            .map(|i| model.r - div[i] - 0.5 * vol[i] * vol[i])
            .collect();
        Ok(Simulator {
            dynamics: model.dynamics,
            dim: d,
            r: model.r,
            div,
            drift,
            vol,
            chol,
            sv: model.sv.clone(),
        })
    }

    pub(crate) fn check_states(&self, states: &StateMatrix) -> Result<()> {
        for (i, x) in states.iter_rows().enumerate() {
            for (j, &v) in x.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("state row {i}, column {j}")));
                }
                let must_be_positive = match self.dynamics {
                    Dynamics::Gbm | Dynamics::GbmCor | Dynamics::GbmMatrix => true,
                    Dynamics::GbmMovingAve | Dynamics::ExpouSv => j == 0,
                };
                if must_be_positive && v <= 0.0 {
                    return Err(Error::NonPositiveState {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn step<R: Rng + ?Sized>(&self, states: &StateMatrix, dt: f64, rng: &mut R) -> StateMatrix {
        let mut out = states.clone();
        for i in 0..out.rows() {
            self.step_row(out.row_mut(i), dt, rng);
        }
        out
    }

    /// Advance one state in place. Draws a fixed number of normals per call.
    pub fn step_row<R: Rng + ?Sized>(&self, x: &mut [f64], dt: f64, rng: &mut R) {
        let d = self.dim;
        let sq = dt.sqrt();
        match self.dynamics {
            Dynamics::Gbm => {
                for ((xi, mu), v) in x[..d].iter_mut().zip(&self.drift).zip(&self.vol) {
                    let z: f64 = rng.sample(StandardNormal);
                    *xi *= (mu * dt + v * sq * z).exp();
                }
            }
            Dynamics::GbmCor | Dynamics::GbmMatrix => {
                let l = self
                    .chol
                    .as_ref()
                    .expect("correlated dynamics carry a factor");
                let mut z = [0.0f64; 16];
                let mut zv;
                let z: &mut [f64] = if d <= 16 {
                    &mut z[..d]
                } else {
                    zv = vec![0.0; d];
                    &mut zv
                };
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..d {
                    let mut w = 0.0;
                    for j in 0..=i {
                        w += l[i * d + j] * z[j];
                    }
                    x[i] *= (self.drift[i] * dt + sq * w).exp();
                }
            }
            Dynamics::GbmMovingAve => {
                let z: f64 = rng.sample(StandardNormal);
                for i in (1..d).rev() {
                    x[i] = x[i - 1];
                }
                x[0] *= (self.drift[0] * dt + self.vol[0] * sq * z).exp();
            }
            Dynamics::ExpouSv => {
                let sv = self.sv.as_ref().expect("validated sv parameters");
                let n = (dt / sv.euler_dt).round().max(1.0) as usize;
                let h = dt / n as f64;
                let sh = h.sqrt();
                let rho_c = (1.0 - sv.rho * sv.rho).max(0.0).sqrt();
                let mu = self.r - self.div[0];
                for _ in 0..n {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let w2 = sv.rho * z1 + rho_c * z2;
                    let y = x[1];
                    let vol = y.exp();
                    x[0] *= ((mu - 0.5 * vol * vol) * h + vol * sh * z1).exp();
                    x[1] = y + sv.alpha * (sv.mean - y) * h + sv.vol * sv.eps_y * sh * w2;
                }
            }
        }
    }
}

/// Dense Cholesky of a small row-major SPD matrix.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    // allow exactly singular zero-vol coordinates
                    if s > -1e-14 {
                        l[i * n + i] = 0.0;
                        continue;
                    }
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else if l[j * n + j] > 0.0 {
                l[i * n + j] = s / l[j * n + j];
            } else if s.abs() > 1e-14 {
                return None;
            }
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn put1d() -> ModelSpec {
        ModelSpec {
            dim: 1,
            maturity: 1.0,
            dt: 0.04,
            r: 0.06,
            div: Param::Scalar(0.0),
            sigma: Volatility::Scalar(0.2),
            rho: None,
            x0: Param::Scalar(40.0),
            strike: 40.0,
            payoff: PayoffKind::Put,
            dynamics: Dynamics::Gbm,
            sv: None,
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn gbm_one_step_mean() {
        let m = put1d();
        let x = StateMatrix::repeat_row(&[40.0], 1_000_000);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = sim_step(&x, &m, 0.04, &mut rng).unwrap();
        let mean = y.as_slice().iter().sum::<f64>() / 1e6;
        let expect = 40.0 * (0.06f64 * 0.04).exp();
        assert!((mean - expect).abs() < 0.01, "{mean} vs {expect}");
    }

    #[test]
    fn rewards_and_payoffs() {
        let m = put1d();
        let x = StateMatrix::from_rows(&[vec![36.0], vec![44.0]]).unwrap();
        assert_eq!(payoff(&x, &m).unwrap(), vec![4.0, 0.0]);
        let h = discounted_reward(25, &x, &m).unwrap();
        assert!((h[0] - 4.0 * (-0.06f64).exp()).abs() < 1e-12);
        assert!(discounted_reward(26, &x, &m).is_err());
    }

    #[test]
    fn payoff_kinds() {
        let x = [90.0, 120.0, 100.0];
        assert_eq!(PayoffKind::MaxiCall.value(100.0, &x), 20.0);
        assert_eq!(PayoffKind::MiniPut.value(100.0, &x), 10.0);
        assert!((PayoffKind::Put.value(110.0, &x) - 6.666666666666671).abs() < 1e-9);
        assert_eq!(PayoffKind::DigitalPut.value(110.0, &x), 1.0);
        let g = (90.0f64 * 120.0 * 100.0).powf(1.0 / 3.0);
        assert!((PayoffKind::GeomPut.value(110.0, &x) - (110.0 - g)).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = put1d();
        let bad = StateMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sim_step(&bad, &m, 0.04, &mut rng),
            Err(Error::NonPositiveState { .. })
        ));
        let wide = StateMatrix::zeros(2, 2);
        assert!(matches!(
            payoff(&wide, &m),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut m2 = put1d();
        m2.dt = 0.03;
        assert!(m2.validate().is_err());
        assert!("nope".parse::<Dynamics>().is_err());
        assert_eq!(
            "gbm_moving_ave".parse::<Dynamics>().unwrap(),
            Dynamics::GbmMovingAve
        );
    }

    #[test]
    fn moving_average_shifts_window() {
        let mut m = put1d();
        m.dim = 3;
        m.dynamics = Dynamics::GbmMovingAve;
        m.payoff = PayoffKind::Call;
        m.x0 = Param::Vector(vec![100.0, 0.0, 0.0]);
        m.validate().unwrap();
        let sim = m.simulator().unwrap();
        let mut x = [100.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        sim.step_row(&mut x, 0.04, &mut rng);
        assert_eq!(x[1], 100.0);
        assert_eq!(x[2], 0.0);
    }
}
