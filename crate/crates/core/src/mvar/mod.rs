//! Multivariate autoregressive models: least-squares fitting, order
//! selection, stability, simulation and the frequency-domain objects built
//! from a fitted model.

mod spectral;

use nalgebra::DMatrix;
use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use spectral::{spectral_decomposition, SpectralDecomposition, DEFAULT_N_FREQS};

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_RIDGE: f64 = 1e-4;

/// `y(n) = Σ_k A(k) y(n-k) + u(n)`, with `A(k)[i][j]` mapping the past of
/// channel `j` onto the present of channel `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvarModel {
    pub coeffs: Vec<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
    pub fs: f64,
}

impl MvarModel {
    pub fn new(coeffs: Vec<DMatrix<f64>>, sigma: DMatrix<f64>, fs: f64) -> Result<Self> {
        let c = sigma.nrows();
        if coeffs.is_empty() {
            return Err(Error::invalid("MVAR order must be ≥ 1"));
        }
        if sigma.ncols() != c || coeffs.iter().any(|a| a.shape() != (c, c)) {
            return Err(Error::invalid("MVAR matrices must all be C×C"));
        }
        Ok(MvarModel { coeffs, sigma, fs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn channels(&self) -> usize {
        self.sigma.nrows()
    }

    /// The pC×pC companion matrix of the recursion.
    pub fn companion(&self) -> DMatrix<f64> {
        let c = self.channels();
        let p = self.order();
        let mut m = DMatrix::zeros(c * p, c * p);
        for (k, a) in self.coeffs.iter().enumerate() {
            m.view_mut((0, k * c), (c, c)).copy_from(a);
        }
        for i in c..c * p {
            m[(i, i - c)] = 1.0;
        }
        m
    }

    pub fn spectral_radius(&self) -> f64 {
        self.companion()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Draw `n` samples (rows) after discarding `burn_in`, with Gaussian
    /// innovations of covariance `sigma`.
    pub fn simulate<R: Rng + ?Sized>(&self, n: usize, burn_in: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let c = self.channels();
        let p = self.order();
        let chol = self
            .sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("innovation covariance is not positive definite".into()))?;
        let l = chol.l();
        let total = n + burn_in;
        let mut y = DMatrix::<f64>::zeros(total, c);
        let mut z = nalgebra::DVector::<f64>::zeros(c);
        for t in 0..total {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let mut cur = &l * &z;
            for k in 1..=p.min(t) {
                let past = y.row(t - k).transpose();
                cur += &self.coeffs[k - 1] * past;
            }
            y.row_mut(t).copy_from(&cur.transpose());
        }
        Ok(y.rows(burn_in, n).into_owned())
    }
}

/// Multichannel least squares with a ridge term `ridge · mean(diag(XᵀX))`.
/// Each channel is mean-removed first; rows are samples.
pub fn fit_mvar(x: ArrayView2<f64>, order: usize, ridge: f64, fs: f64) -> Result<MvarModel> {
    let (n, c) = x.dim();
    if order == 0 {
        return Err(Error::invalid("MVAR order must be ≥ 1"));
    }
    if n <= c * order + order {
        return Err(Error::InsufficientSamples {
            rows: n,
            order,
            channels: c,
        });
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge must be ≥ 0, got {ridge}")));
    }
    let means: Vec<f64> = (0..c).map(|j| x.column(j).sum() / n as f64).collect();
    let y = DMatrix::from_fn(n, c, |i, j| x[[i, j]] - means[j]);

    let rows = n - order;
    let design = DMatrix::from_fn(rows, c * order, |r, col| {
        let lag = col / c + 1;
        y[(r + order - lag, col % c)]
    });
    let target = y.rows(order, rows).into_owned();

    let mut gram = design.transpose() * &design;
    let lambda = ridge * gram.diagonal().mean();
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = design.transpose() * &target;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("regularized normal equations".into()))?;
    let b = chol.solve(&rhs);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("regularized normal equations".into()));
    }

    let coeffs = (0..order).map(|k| b.rows(k * c, c).transpose()).collect();
    let resid = &target - &design * &b;
    let sigma = resid.transpose() * &resid / rows as f64;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    MvarModel::new(coeffs, sigma, fs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    pub order: usize,
    pub aic: Vec<f64>,
}

/// Minimizes `AIC(p) = ln det Σ_p + 2 p C² / N` over `1..=p_max`.
pub fn select_order(x: ArrayView2<f64>, p_max: usize, ridge: f64, fs: f64) -> Result<OrderSelection> {
    if p_max == 0 {
        return Err(Error::invalid("p_max must be ≥ 1"));
    }
    let (n, c) = x.dim();
    let mut aic = Vec::with_capacity(p_max);
    for p in 1..=p_max {
        let m = fit_mvar(x, p, ridge, fs)?;
        let det = m.sigma.determinant();
        let value = if det > 0.0 {
            det.ln() + 2.0 * (p * c * c) as f64 / n as f64
        } else {
            f64::INFINITY
        };
        aic.push(value);
    }
    let order = aic
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i + 1)
        .unwrap_or(1);
    Ok(OrderSelection { order, aic })
}
