//! Area-level random-effects model
//! `y_i | θ_i ~ N(θ_i, V_i)`, `θ_i ~ N(x_iᵀβ, A)`
//! with known sampling variances `V_i`: GLS regression, variance-component
//! estimation of `A`, EBLUP / empirical-Bayes point estimates, the balanced
//! (equal-variance) closed forms including the James–Stein estimator, and a
//! general-covariance variant where the sampling errors are correlated.

use crate::error::{Error, Result};
use crate::numeric::linalg::{dot, psd_rank, Cholesky, Matrix, SymmetricMatrix};
use crate::numeric::root::brent_root;
use serde::{Deserialize, Serialize};

/// Area-level dataset: direct estimates `y`, design matrix `X` (including
/// any intercept column) and known sampling variances `V`, one row per area.
#[derive(Debug, Clone)]
pub struct AreaDataset {
    ids: Vec<String>,
    y: Vec<f64>,
    x: Matrix,
    v: Vec<f64>,
}

impl AreaDataset {
    /// Build and validate a dataset. Requires `m > p`, strictly positive
    /// finite sampling variances, finite responses and a full-column-rank
    /// design.
    pub fn new(ids: Vec<String>, y: Vec<f64>, x_rows: Vec<Vec<f64>>, v: Vec<f64>) -> Result<Self> {
        let m = y.len();
        if ids.len() != m || x_rows.len() != m || v.len() != m {
            return Err(Error::Validation(format!(
                "inconsistent lengths: ids={}, y={}, x={}, v={}",
                ids.len(),
                m,
                x_rows.len(),
                v.len()
            )));
        }
        let x = Matrix::from_rows(&x_rows)?;
        let p = x.ncols();
        if m <= p {
            return Err(Error::Validation(format!(
                "need more areas than regressors: m={m}, p={p}"
            )));
        }
        for (i, &vi) in v.iter().enumerate() {
            if !(vi > 0.0) || !vi.is_finite() {
                return Err(Error::Validation(format!(
                    "sampling variance must be positive and finite: V[{}]={vi} (area {})",
                    i, ids[i]
                )));
            }
        }
        if y.iter().any(|t| !t.is_finite()) || x_rows.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::Validation("non-finite value in y or X".into()));
        }
        // full column rank check on the Gram matrix
        let gram =
            SymmetricMatrix::from_fn(p, |a, b| (0..m).map(|i| x.get(i, a) * x.get(i, b)).sum());
        if psd_rank(&gram, 1e-12) < p {
            return Err(Error::SingularDesign(
                "design matrix is rank deficient (collinear columns)".into(),
            ));
        }
        Ok(AreaDataset { ids, y, x, v })
    }

    /// Convenience constructor that prepends an intercept column.
    pub fn with_intercept(
        ids: Vec<String>,
        y: Vec<f64>,
        covariates: Vec<Vec<f64>>,
        v: Vec<f64>,
    ) -> Result<Self> {
        let rows = covariates
            .into_iter()
            .map(|r| {
                let mut row = Vec::with_capacity(r.len() + 1);
                row.push(1.0);
                row.extend(r);
                row
            })
            .collect();
        AreaDataset::new(ids, y, rows, v)
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn mean_v(&self) -> f64 {
        self.v.iter().sum::<f64>() / self.m() as f64
    }

    /// The common sampling variance, or `NotBalanced` if they differ by
    /// more than a relative 1e-9.
    pub fn balanced_variance(&self) -> Result<f64> {
        let min = self.v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.v.iter().cloned().fold(0.0f64, f64::max);
        if max - min > 1e-9 * max {
            return Err(Error::NotBalanced { min, max });
        }
        Ok(self.v.iter().sum::<f64>() / self.m() as f64)
    }

    /// Same data with every sampling variance replaced by `v`.
    pub fn balanced_replace_v(&self, v: f64) -> AreaDataset {
        let mut d = self.clone();
        d.v = vec![v; self.m()];
        d
    }

    fn sample_var_y(&self) -> f64 {
        let m = self.m() as f64;
        let mean = self.y.iter().sum::<f64>() / m;
        self.y.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (m - 1.0).max(1.0)
    }
}

/// Variance-component estimator for `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FhMethod {
    /// Moment method solving the weighted residual identity
    /// Σ (y_i - x_iᵀβ̃(A))² / (V_i + A) = m - p, alternating GLS and a
    /// one-dimensional root solve.
    FhMoment,
    /// Closed-form ANOVA moment estimator on OLS residuals, truncated at 0.
    PrAnova,
    /// Maximum likelihood on the marginal N(Xβ, diag(V_i + A)).
    Ml,
    /// Restricted maximum likelihood.
    Reml,
}

impl FhMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FhMethod::FhMoment => "fh-moment",
            FhMethod::PrAnova => "pr-anova",
            FhMethod::Ml => "ml",
            FhMethod::Reml => "reml",
        }
    }

    pub fn parse(s: &str) -> Result<FhMethod> {
        match s {
            "fh-moment" | "fh" | "moment" => Ok(FhMethod::FhMoment),
            "pr-anova" | "pr" | "anova" => Ok(FhMethod::PrAnova),
            "ml" => Ok(FhMethod::Ml),
            "reml" => Ok(FhMethod::Reml),
            other => Err(Error::Validation(format!("unknown method '{other}'"))),
        }
    }
}

/// Weighted least squares at a fixed `A`, with the pieces downstream
/// routines keep reusing.
pub struct GlsFit {
    pub beta: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Σ r_i² / (V_i + A)
    pub weighted_rss: f64,
    /// Cholesky factor of Xᵀ D⁻¹ X with D = diag(V_i + A)
    pub xtwx_chol: Cholesky,
}

impl GlsFit {
    /// x'(XᵀD⁻¹X)⁻¹x for an arbitrary vector.
    pub fn quad_form_inv(&self, x: &[f64]) -> f64 {
        dot(&self.xtwx_chol.solve(x), x)
    }
}

/// GLS fit of β at a fixed variance component `A >= 0`.
pub fn gls_fit(data: &AreaDataset, a: f64) -> Result<GlsFit> {
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("A must be nonnegative, got {a}")));
    }
    let m = data.m();
    let p = data.p();
    let mut xtwx = SymmetricMatrix::zeros(p);
    let mut xtwy = vec![0.0; p];
    for i in 0..m {
        let w = 1.0 / (data.v[i] + a);
        let xi = data.x_row(i);
        for r in 0..p {
            let wxr = w * xi[r];
            xtwy[r] += wxr * data.y[i];
            for c in 0..=r {
                xtwx.add_to(r, c, wxr * xi[c]);
            }
        }
    }
    let chol = xtwx
        .cholesky()
        .map_err(|_| Error::SingularDesign("weighted normal equations are singular".into()))?;
    let beta = chol.solve(&xtwy);
    let fitted: Vec<f64> = (0..m).map(|i| dot(data.x_row(i), &beta)).collect();
    let residuals: Vec<f64> = (0..m).map(|i| data.y[i] - fitted[i]).collect();
    let weighted_rss = (0..m)
        .map(|i| residuals[i] * residuals[i] / (data.v[i] + a))
        .sum();
    Ok(GlsFit {
        beta,
        fitted,
        residuals,
        weighted_rss,
        xtwx_chol: chol,
    })
}

/// GLS estimate of the regression coefficients at a fixed `A`.
pub fn gls_beta(data: &AreaDataset, a: f64) -> Result<Vec<f64>> {
    Ok(gls_fit(data, a)?.beta)
}

/// Ordinary least squares pieces used by the balanced-case formulas.
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Σ r_i² = ||y - P_X y||²
    pub rss: f64,
    /// leverages h_ii = x_iᵀ(XᵀX)⁻¹x_i
    pub h_diag: Vec<f64>,
}

pub fn ols_fit(data: &AreaDataset) -> Result<OlsFit> {
    let m = data.m();
    let p = data.p();
    let mut gram = SymmetricMatrix::zeros(p);
    let mut xty = vec![0.0; p];
    for i in 0..m {
        let xi = data.x_row(i);
        for r in 0..p {
            xty[r] += xi[r] * data.y[i];
            for c in 0..=r {
                gram.add_to(r, c, xi[r] * xi[c]);
            }
        }
    }
    let chol = gram
        .cholesky()
        .map_err(|_| Error::SingularDesign("XᵀX is singular".into()))?;
    let beta = chol.solve(&xty);
    let fitted: Vec<f64> = (0..m).map(|i| dot(data.x_row(i), &beta)).collect();
    let residuals: Vec<f64> = (0..m).map(|i| data.y[i] - fitted[i]).collect();
    let rss = residuals.iter().map(|r| r * r).sum();
    let h_diag = (0..m)
        .map(|i| dot(&chol.solve(data.x_row(i)), data.x_row(i)))
        .collect();
    Ok(OlsFit {
        beta,
        fitted,
        residuals,
        rss,
        h_diag,
    })
}

/// Estimated variance component with convergence provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AEstimate {
    pub a_hat: f64,
    pub iterations: usize,
    /// True when the estimate was truncated at (or solved to) zero.
    pub at_boundary: bool,
}

const MAX_OUTER_ITER: usize = 200;
const ROOT_TOL: f64 = 1e-10;

/// Estimate the between-area variance `A` by the selected method. Never
/// returns a negative estimate; a zero is flagged `at_boundary`.
pub fn estimate_a(data: &AreaDataset, method: FhMethod) -> Result<AEstimate> {
    match method {
        FhMethod::PrAnova => pr_anova(data),
        FhMethod::FhMoment => fh_moment(data),
        FhMethod::Ml => likelihood_a(data, false),
        FhMethod::Reml => likelihood_a(data, true),
    }
}

fn pr_anova_raw(data: &AreaDataset) -> Result<f64> {
    let ols = ols_fit(data)?;
    let m = data.m() as f64;
    let p = data.p() as f64;
    let adj: f64 = (0..data.m())
        .map(|i| data.v[i] * (1.0 - ols.h_diag[i]))
        .sum();
    Ok((ols.rss - adj) / (m - p))
}

fn pr_anova(data: &AreaDataset) -> Result<AEstimate> {
    let raw = pr_anova_raw(data)?;
    Ok(AEstimate {
        a_hat: raw.max(0.0),
        iterations: 1,
        at_boundary: raw <= 0.0,
    })
}

/// Left-hand side of the moment identity at fixed residuals.
fn weighted_rss_at(residuals: &[f64], v: &[f64], a: f64) -> f64 {
    residuals
        .iter()
        .zip(v)
        .map(|(r, vi)| r * r / (vi + a))
        .sum()
}

fn fh_moment(data: &AreaDataset) -> Result<AEstimate> {
    let target = (data.m() - data.p()) as f64;
    let mut a = pr_anova_raw(data)?.max(0.0);
    for iteration in 1..=MAX_OUTER_ITER {
        let fit = gls_fit(data, a)?;
        let h = |t: f64| weighted_rss_at(&fit.residuals, &data.v, t) - target;
        let a_new = if h(0.0) <= 0.0 {
            0.0
        } else {
            // h is strictly decreasing in t for fixed residuals
            let mut hi = a.max(data.mean_v()).max(1.0);
            while h(hi) > 0.0 {
                hi *= 2.0;
                if hi > 1e300 {
                    return Err(Error::NonConvergence(
                        "moment equation has no finite root".into(),
                    ));
                }
            }
            brent_root(h, 0.0, hi, ROOT_TOL)?
        };
        let done = (a_new - a).abs() <= 1e-8 * (1.0 + a_new);
        a = a_new;
        if done {
            return Ok(AEstimate {
                a_hat: a,
                iterations: iteration,
                at_boundary: a == 0.0,
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "moment iteration did not stabilize in {MAX_OUTER_ITER} passes"
    )))
}

/// Profile score of the (restricted) log-likelihood in A. The envelope
/// theorem lets us differentiate at the profiled β̃(A).
fn likelihood_score(data: &AreaDataset, a: f64, restricted: bool) -> Result<f64> {
    let fit = gls_fit(data, a)?;
    let mut s = 0.0;
    for i in 0..data.m() {
        let d = data.v[i] + a;
        s += -0.5 / d + 0.5 * fit.residuals[i] * fit.residuals[i] / (d * d);
    }
    if restricted {
        // + tr[(XᵀD⁻¹X)⁻¹ XᵀD⁻²X] / 2
        let p = data.p();
        let inv = fit.xtwx_chol.inverse();
        let mut xtw2x = SymmetricMatrix::zeros(p);
        for i in 0..data.m() {
            let d = data.v[i] + a;
            let w2 = 1.0 / (d * d);
            let xi = data.x_row(i);
            for r in 0..p {
                for c in 0..=r {
                    xtw2x.add_to(r, c, w2 * xi[r] * xi[c]);
                }
            }
        }
        let mut tr = 0.0;
        for r in 0..p {
            for c in 0..p {
                tr += inv.get(r, c) * xtw2x.get(r, c);
            }
        }
        s += 0.5 * tr;
    }
    Ok(s)
}

fn likelihood_a(data: &AreaDataset, restricted: bool) -> Result<AEstimate> {
    use std::cell::Cell;
    let evals = Cell::new(0usize);
    let score = |a: f64| -> Result<f64> {
        evals.set(evals.get() + 1);
        likelihood_score(data, a, restricted)
    };
    if score(0.0)? <= 0.0 {
        return Ok(AEstimate {
            a_hat: 0.0,
            iterations: evals.get(),
            at_boundary: true,
        });
    }
    // A cannot plausibly exceed a large multiple of the total variation
    let a_max = 1e4
        * data
            .sample_var_y()
            .max(data.mean_v() * 1e-6)
            .max(f64::MIN_POSITIVE);
    if score(a_max)? > 0.0 {
        return Err(Error::NonConvergence(format!(
            "likelihood still increasing at A_max = {a_max:e}"
        )));
    }
    let mut failure = None;
    let a_hat = brent_root(
        |a| match score(a) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e);
                0.0
            }
        },
        0.0,
        a_max,
        ROOT_TOL,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(AEstimate {
        a_hat,
        iterations: evals.get(),
        at_boundary: false,
    })
}

/// Fitted area-level model: variance component, regression coefficients,
/// per-area shrinkage weights `B_i = V_i / (V_i + Â)` and EBLUP point
/// estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FayHerriotFit {
    pub a_hat: f64,
    pub beta_hat: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub method: FhMethod,
    pub iterations: usize,
    pub at_boundary: bool,
}

impl FayHerriotFit {
    pub fn fit(data: &AreaDataset, method: FhMethod) -> Result<FayHerriotFit> {
        let est = estimate_a(data, method)?;
        Self::at_fixed_a(data, est.a_hat, method, est.iterations, est.at_boundary)
    }

    /// Assemble the fit at an externally supplied `A` (plug-in use).
    pub fn with_a(data: &AreaDataset, a: f64, method: FhMethod) -> Result<FayHerriotFit> {
        Self::at_fixed_a(data, a, method, 0, a == 0.0)
    }

    fn at_fixed_a(
        data: &AreaDataset,
        a: f64,
        method: FhMethod,
        iterations: usize,
        at_boundary: bool,
    ) -> Result<FayHerriotFit> {
        let g = gls_fit(data, a)?;
        let b_hat: Vec<f64> = data.v.iter().map(|&vi| vi / (vi + a)).collect();
        let theta_hat: Vec<f64> = (0..data.m())
            .map(|i| (1.0 - b_hat[i]) * data.y[i] + b_hat[i] * g.fitted[i])
            .collect();
        Ok(FayHerriotFit {
            a_hat: a,
            beta_hat: g.beta,
            b_hat,
            theta_hat,
            method,
            iterations,
            at_boundary,
        })
    }

    /// Regression fits x_iᵀβ̂.
    pub fn regression_fit(&self, data: &AreaDataset) -> Vec<f64> {
        (0..data.m())
            .map(|i| dot(data.x_row(i), &self.beta_hat))
            .collect()
    }
}

/// EBLUP point estimates `θ̂_i = (1 - B̂_i) y_i + B̂_i x_iᵀβ̂`, each a convex
/// combination of the direct estimate and the regression fit.
pub fn eblup(data: &AreaDataset, fit: &FayHerriotFit) -> Vec<f64> {
    (0..data.m())
        .map(|i| {
            let f = dot(data.x_row(i), &fit.beta_hat);
            (1.0 - fit.b_hat[i]) * data.y[i] + fit.b_hat[i] * f
        })
        .collect()
}

/// Balanced-case shrinkage fit built around the UMVUE weight
/// `B̂ = V (m - p - 2) / S`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalancedFit {
    /// The common sampling variance.
    pub v_common: f64,
    /// Residual sum of squares ||y - P_X y||².
    pub s: f64,
    /// Unbiased shrinkage weight estimate (may exceed 1).
    pub b_hat_eb: f64,
    /// Positive-part weight min(B̂, 1).
    pub b_hat_plus: f64,
    /// Leverages h_ii; these sum to p.
    pub h_diag: Vec<f64>,
    pub beta_ols: Vec<f64>,
    /// Set when S = 0 and the regression fit was returned unshrunk.
    pub degenerate_residuals: bool,
    /// Shrinkage point estimates.
    pub estimate: Vec<f64>,
}

/// James–Stein estimator for the balanced model: shrinks the direct
/// estimates toward the OLS regression plane with weight `V(m-p-2)/S`.
/// With `positive_part`, the weight is capped at 1 so the estimator never
/// crosses the regression surface.
pub fn james_stein(data: &AreaDataset, positive_part: bool) -> Result<BalancedFit> {
    let v = data.balanced_variance()?;
    let m = data.m();
    let p = data.p();
    if m <= p + 2 {
        return Err(Error::TooFewAreas {
            m,
            required: p + 2,
            context: "James-Stein weight",
        });
    }
    let ols = ols_fit(data)?;
    let y_scale = data
        .y
        .iter()
        .cloned()
        .fold(1.0f64, |acc, t| acc.max(t.abs()));
    let degenerate = ols.rss <= 100.0 * (m as f64) * (f64::EPSILON * y_scale).powi(2);
    if degenerate {
        return Ok(BalancedFit {
            v_common: v,
            s: ols.rss,
            b_hat_eb: f64::INFINITY,
            b_hat_plus: 1.0,
            h_diag: ols.h_diag,
            beta_ols: ols.beta,
            degenerate_residuals: true,
            estimate: ols.fitted,
        });
    }
    let b_eb = v * (m - p - 2) as f64 / ols.rss;
    let b_plus = b_eb.min(1.0);
    let w = if positive_part { b_plus } else { b_eb };
    let estimate: Vec<f64> = (0..m)
        .map(|i| (1.0 - w) * data.y[i] + w * ols.fitted[i])
        .collect();
    Ok(BalancedFit {
        v_common: v,
        s: ols.rss,
        b_hat_eb: b_eb,
        b_hat_plus: b_plus,
        h_diag: ols.h_diag,
        beta_ols: ols.beta,
        degenerate_residuals: false,
        estimate,
    })
}

/// Exact Bayes risk of the James–Stein estimator under the balanced model
/// with true shrinkage weight `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct JamesSteinRisk {
    /// V(1-B) + V B h_ii + 2 V B (1 - h_ii)/(m - p), per area.
    pub per_area: Vec<f64>,
    /// V [m - (m - p - 2) B]; equals the sum of the per-area risks.
    pub total: f64,
}

pub fn james_stein_risk(data: &AreaDataset, b: f64) -> Result<JamesSteinRisk> {
    let v = data.balanced_variance()?;
    let m = data.m();
    let p = data.p();
    if m <= p + 2 {
        return Err(Error::TooFewAreas {
            m,
            required: p + 2,
            context: "James-Stein risk",
        });
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::Domain(format!("B must lie in [0, 1], got {b}")));
    }
    let ols = ols_fit(data)?;
    let mp = (m - p) as f64;
    let per_area: Vec<f64> = ols
        .h_diag
        .iter()
        .map(|&h| v * (1.0 - b) + v * b * h + 2.0 * v * b * (1.0 - h) / mp)
        .collect();
    let total = v * (m as f64 - (m - p - 2) as f64 * b);
    Ok(JamesSteinRisk { per_area, total })
}

/// Source of the shrinkage weight for the balanced-loss estimator.
#[derive(Debug, Clone, Copy)]
pub enum BSource {
    Known(f64),
    /// Estimate by the UMVUE weight V(m-p-2)/S, optionally capped at 1.
    EmpiricalBayes {
        positive_part: bool,
    },
}

/// Bayes / empirical-Bayes estimator under balanced loss
/// `w ||y - T||² + (1 - w) ||T - θ||²`:
/// `[1 - (1-w) B] y + (1-w) B P_X y`. At `w = 0` this is the squared-error
/// Bayes rule; at `w = 1` it returns the direct estimates untouched.
pub fn balanced_loss_estimate(data: &AreaDataset, w: f64, source: BSource) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Domain(format!(
            "loss weight w must lie in [0, 1], got {w}"
        )));
    }
    data.balanced_variance()?;
    let (b, fitted) = match source {
        BSource::Known(b) => {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Domain(format!("B must lie in [0, 1], got {b}")));
            }
            (b, ols_fit(data)?.fitted)
        }
        BSource::EmpiricalBayes { positive_part } => {
            let js = james_stein(data, positive_part)?;
            let b = if positive_part {
                js.b_hat_plus
            } else {
                js.b_hat_eb
            };
            let fitted = (0..data.m())
                .map(|i| dot(data.x_row(i), &js.beta_ols))
                .collect();
            (b, fitted)
        }
    };
    let shrink = (1.0 - w) * b;
    Ok((0..data.m())
        .map(|i| (1.0 - shrink) * data.y[i] + shrink * fitted[i])
        .collect())
}

/// Area-level model with a general (possibly non-diagonal) positive-definite
/// sampling covariance `V`: `y | θ ~ N(θ, V)`, `θ ~ N(Xβ, A I)`.
#[derive(Debug, Clone)]
pub struct GeneralVModel {
    y: Vec<f64>,
    x: Matrix,
    v: SymmetricMatrix,
}

impl GeneralVModel {
    pub fn new(y: Vec<f64>, x_rows: Vec<Vec<f64>>, v: SymmetricMatrix) -> Result<Self> {
        let m = y.len();
        if v.order() != m || x_rows.len() != m {
            return Err(Error::Validation(format!(
                "inconsistent dimensions: y={m}, x={}, V={}",
                x_rows.len(),
                v.order()
            )));
        }
        let x = Matrix::from_rows(&x_rows)?;
        if x.ncols() >= m {
            return Err(Error::Validation(format!(
                "need more areas than regressors: m={m}, p={}",
                x.ncols()
            )));
        }
        v.cholesky()?; // positive definiteness
        Ok(GeneralVModel { y, x, v })
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn v(&self) -> &SymmetricMatrix {
        &self.v
    }

    /// Build from an area dataset (diagonal V).
    pub fn from_area(data: &AreaDataset) -> GeneralVModel {
        GeneralVModel {
            y: data.y().to_vec(),
            x: data.x().clone(),
            v: SymmetricMatrix::diagonal(data.v()),
        }
    }

    /// Cholesky of V + A·I.
    pub(crate) fn va_chol(&self, a: f64) -> Result<Cholesky> {
        let mut va = self.v.clone();
        for i in 0..self.m() {
            va.add_to(i, i, a);
        }
        va.cholesky()
    }

    /// GLS coefficients β̃(A) = [Xᵀ(V+AI)⁻¹X]⁻¹ Xᵀ(V+AI)⁻¹ y and the fitted
    /// values, plus the Cholesky factors downstream formulas reuse.
    pub(crate) fn gls_parts(&self, a: f64) -> Result<GeneralVGls> {
        let chol = self.va_chol(a)?;
        let winv_x = chol.solve_matrix(&self.x); // (V+AI)⁻¹X
        let p = self.p();
        let gram = SymmetricMatrix::from_fn(p, |r, c| {
            (0..self.m())
                .map(|i| self.x.get(i, r) * winv_x.get(i, c))
                .sum()
        });
        let winv_y = chol.solve(&self.y);
        let rhs: Vec<f64> = (0..p)
            .map(|r| (0..self.m()).map(|i| self.x.get(i, r) * winv_y[i]).sum())
            .collect();
        let gram_chol = gram
            .cholesky()
            .map_err(|_| Error::SingularDesign("Xᵀ(V+AI)⁻¹X is singular".into()))?;
        let beta = gram_chol.solve(&rhs);
        let fitted = self.x.mul_vec(&beta);
        Ok(GeneralVGls {
            va_chol: chol,
            gram_chol,
            fitted,
        })
    }
}

pub(crate) struct GeneralVGls {
    pub va_chol: Cholesky,
    pub gram_chol: Cholesky,
    pub fitted: Vec<f64>,
}

/// BLUP under the general-covariance model at a known `A`:
/// `(I - B) y + B X β̃(A)` with `B = (V + A I)⁻¹ V`, computed as
/// `y - (V + A I)⁻¹ V (y - X β̃)` so no explicit inverse is formed.
pub fn general_v_blup(model: &GeneralVModel, a: f64) -> Result<Vec<f64>> {
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("A must be nonnegative, got {a}")));
    }
    let parts = model.gls_parts(a)?;
    let resid: Vec<f64> = (0..model.m())
        .map(|i| model.y[i] - parts.fitted[i])
        .collect();
    let v_resid = model.v.mul_vec(&resid);
    let shrink = parts.va_chol.solve(&v_resid);
    Ok((0..model.m()).map(|i| model.y[i] - shrink[i]).collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numeric::rng::RngStream;

    pub(crate) fn toy_dataset(seed: u64, m: usize, p: usize) -> AreaDataset {
        let mut rng = RngStream::seed_from(seed);
        let ids = (0..m).map(|i| format!("a{i}")).collect();
        let x_rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let mut row = vec![1.0];
                for _ in 1..p {
                    row.push(rng.next_normal() * 2.0);
                }
                row
            })
            .collect();
        let v: Vec<f64> = (0..m).map(|_| 0.5 + rng.next_f64() * 1.5).collect();
        let beta: Vec<f64> = (0..p).map(|_| rng.next_normal()).collect();
        let a_true: f64 = 1.0;
        let y: Vec<f64> = (0..m)
            .map(|i| {
                dot(&x_rows[i], &beta)
                    + rng.next_normal() * a_true.sqrt()
                    + rng.next_normal() * v[i].sqrt()
            })
            .collect();
        AreaDataset::new(ids, y, x_rows, v).unwrap()
    }

    #[test]
    fn dataset_validation() {
        // nonpositive variance
        let err = AreaDataset::new(
            vec!["a".into(), "b".into()],
            vec![1.0, 2.0],
            vec![vec![1.0], vec![1.0]],
            vec![1.0, 0.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        // duplicated covariate column
        let err = AreaDataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![1.0, 2.0, 3.0],
            vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularDesign(_)));
    }

    #[test]
    fn gls_intercept_only_equal_v_is_mean() {
        let y = vec![3.0, 5.0, 10.0, 2.0];
        let data = AreaDataset::new(
            (0..4).map(|i| i.to_string()).collect(),
            y.clone(),
            vec![vec![1.0]; 4],
            vec![2.0; 4],
        )
        .unwrap();
        let mean = y.iter().sum::<f64>() / 4.0;
        for &a in &[0.0, 1.0, 57.0] {
            let beta = gls_beta(&data, a).unwrap();
            assert!((beta[0] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn gls_analytic_weights() {
        // m = 3, V = (1,2,3), A = 1: weights ∝ (1/2, 1/3, 1/4)
        let y = vec![1.0, 2.0, 4.0];
        let data = AreaDataset::new(
            (0..3).map(|i| i.to_string()).collect(),
            y.clone(),
            vec![vec![1.0]; 3],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let w = [0.5, 1.0 / 3.0, 0.25];
        let want = (0..3).map(|i| w[i] * y[i]).sum::<f64>() / w.iter().sum::<f64>();
        let beta = gls_beta(&data, 1.0).unwrap();
        assert!((beta[0] - want).abs() < 1e-12);
    }

    #[test]
    fn gls_matches_explicit_normal_equations() {
        // brute-force oracle: build the weighted normal equations densely
        // and solve by Gauss-Jordan elimination
        let data = toy_dataset(11, 12, 3);
        let a = 0.7;
        let beta = gls_beta(&data, a).unwrap();
        let p = data.p();
        let mut aug = vec![vec![0.0f64; p + 1]; p];
        for i in 0..data.m() {
            let w = 1.0 / (data.v()[i] + a);
            let xi = data.x_row(i);
            for r in 0..p {
                for c in 0..p {
                    aug[r][c] += w * xi[r] * xi[c];
                }
                aug[r][p] += w * xi[r] * data.y()[i];
            }
        }
        for k in 0..p {
            let piv = (k..p)
                .max_by(|&i, &j| aug[i][k].abs().partial_cmp(&aug[j][k].abs()).unwrap())
                .unwrap();
            aug.swap(k, piv);
            let d = aug[k][k];
            for c in 0..=p {
                aug[k][c] /= d;
            }
            for r in 0..p {
                if r != k {
                    let f = aug[r][k];
                    for c in 0..=p {
                        aug[r][c] -= f * aug[k][c];
                    }
                }
            }
        }
        for r in 0..p {
            assert!(
                (beta[r] - aug[r][p]).abs() <= 1e-8 * (1.0 + aug[r][p].abs()),
                "beta[{r}] = {} vs oracle {}",
                beta[r],
                aug[r][p]
            );
        }
    }

    #[test]
    fn moment_lhs_nonincreasing_in_a() {
        let data = toy_dataset(5, 15, 2);
        let fit = gls_fit(&data, 0.8).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let a = k as f64 * 0.25;
            let lhs = weighted_rss_at(&fit.residuals, data.v(), a);
            assert!(lhs <= prev + 1e-12, "lhs increased at A={a}");
            prev = lhs;
        }
    }

    #[test]
    fn balanced_moment_solution_closed_form() {
        // balanced case: Â = S/(m-p) - V, or 0 if negative
        let data = toy_dataset(9, 10, 2).balanced_replace_v(1.3);
        let est = estimate_a(&data, FhMethod::FhMoment).unwrap();
        let ols = ols_fit(&data).unwrap();
        let closed = (ols.rss / (10.0 - 2.0) - 1.3).max(0.0);
        assert!(
            (est.a_hat - closed).abs() <= 1e-7 * (1.0 + closed),
            "{} vs {closed}",
            est.a_hat
        );
        // PR ANOVA coincides with the moment solution when balanced
        let pr = estimate_a(&data, FhMethod::PrAnova).unwrap();
        assert!((pr.a_hat - closed).abs() <= 1e-9 * (1.0 + closed));
    }

    #[test]
    fn boundary_estimate_flagged() {
        // y exactly on the regression plane forces Â = 0 for every method
        let ids: Vec<String> = (0..8).map(|i| i.to_string()).collect();
        let x_rows: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..8).map(|i| 2.0 + 3.0 * i as f64).collect();
        let data = AreaDataset::new(ids, y, x_rows, vec![1.0; 8]).unwrap();
        for method in [
            FhMethod::FhMoment,
            FhMethod::PrAnova,
            FhMethod::Ml,
            FhMethod::Reml,
        ] {
            let est = estimate_a(&data, method).unwrap();
            assert_eq!(est.a_hat, 0.0, "{method:?}");
            assert!(est.at_boundary, "{method:?}");
        }
    }

    #[test]
    fn ml_reml_score_sign_at_root() {
        let data = toy_dataset(33, 40, 2);
        for restricted in [false, true] {
            let est = likelihood_a(&data, restricted).unwrap();
            if !est.at_boundary {
                let s = likelihood_score(&data, est.a_hat, restricted).unwrap();
                assert!(s.abs() < 1e-6, "score at root: {s}");
            }
        }
    }

    #[test]
    fn reml_exceeds_ml_typically() {
        // REML corrects the downward ML bias; on a batch of random datasets
        // the average REML estimate should exceed the average ML estimate.
        let mut ml_sum = 0.0;
        let mut reml_sum = 0.0;
        for seed in 0..30 {
            let data = toy_dataset(100 + seed, 12, 3);
            ml_sum += estimate_a(&data, FhMethod::Ml).unwrap().a_hat;
            reml_sum += estimate_a(&data, FhMethod::Reml).unwrap().a_hat;
        }
        assert!(reml_sum > ml_sum, "reml {reml_sum} vs ml {ml_sum}");
    }

    #[test]
    fn eblup_shrinkage_limits() {
        let data = toy_dataset(2, 10, 2);
        // Â = 0 ⇒ full shrinkage to the regression fit
        let fit = FayHerriotFit::with_a(&data, 0.0, FhMethod::FhMoment).unwrap();
        let reg = fit.regression_fit(&data);
        for i in 0..data.m() {
            assert!((fit.theta_hat[i] - reg[i]).abs() < 1e-10);
            assert_eq!(fit.b_hat[i], 1.0);
        }
        // V → 0 ⇒ no shrinkage: emulate with tiny variances
        let tiny = AreaDataset::new(
            data.ids().to_vec(),
            data.y().to_vec(),
            (0..data.m()).map(|i| data.x_row(i).to_vec()).collect(),
            vec![1e-12; data.m()],
        )
        .unwrap();
        let fit = FayHerriotFit::with_a(&tiny, 1.0, FhMethod::FhMoment).unwrap();
        for i in 0..tiny.m() {
            assert!((fit.theta_hat[i] - tiny.y()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn eblup_between_direct_and_regression() {
        let data = toy_dataset(21, 25, 3);
        let fit = FayHerriotFit::fit(&data, FhMethod::Reml).unwrap();
        let reg = fit.regression_fit(&data);
        for i in 0..data.m() {
            let lo = data.y()[i].min(reg[i]) - 1e-10;
            let hi = data.y()[i].max(reg[i]) + 1e-10;
            assert!(fit.theta_hat[i] >= lo && fit.theta_hat[i] <= hi);
        }
        let via_op = eblup(&data, &fit);
        assert_eq!(via_op, fit.theta_hat);
    }

    #[test]
    fn james_stein_hand_example() {
        // m = 5, intercept only, V = 1, y = (2,-2,1,-1,0):
        // S = 10, B̂ = 2/10 = 0.2, estimate = 0.8 y
        let y = vec![2.0, -2.0, 1.0, -1.0, 0.0];
        let data = AreaDataset::new(
            (0..5).map(|i| i.to_string()).collect(),
            y.clone(),
            vec![vec![1.0]; 5],
            vec![1.0; 5],
        )
        .unwrap();
        let js = james_stein(&data, false).unwrap();
        assert!((js.s - 10.0).abs() < 1e-12);
        assert!((js.b_hat_eb - 0.2).abs() < 1e-12);
        for i in 0..5 {
            assert!((js.estimate[i] - 0.8 * y[i]).abs() < 1e-12);
        }
        // leverages sum to p
        let hsum: f64 = js.h_diag.iter().sum();
        assert!((hsum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn james_stein_degenerate_residuals() {
        let x_rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| 1.0 + 2.0 * i as f64).collect();
        let data = AreaDataset::new(
            (0..6).map(|i| i.to_string()).collect(),
            y.clone(),
            x_rows,
            vec![1.0; 6],
        )
        .unwrap();
        let js = james_stein(&data, false).unwrap();
        assert!(js.degenerate_residuals);
        for i in 0..6 {
            assert!((js.estimate[i] - y[i]).abs() < 1e-9); // fit = y here
        }
    }

    #[test]
    fn james_stein_positive_part_caps_at_regression() {
        // very small S relative to V pushes B̂ past 1
        let y = vec![0.1, -0.1, 0.05, -0.05, 0.0, 0.02];
        let data = AreaDataset::new(
            (0..6).map(|i| i.to_string()).collect(),
            y,
            vec![vec![1.0]; 6],
            vec![10.0; 6],
        )
        .unwrap();
        let js = james_stein(&data, true).unwrap();
        assert!(js.b_hat_eb > 1.0);
        assert_eq!(js.b_hat_plus, 1.0);
        let fit0 = js.beta_ols[0];
        for e in &js.estimate {
            assert!((e - fit0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_areas_refused() {
        let data = AreaDataset::new(
            (0..3).map(|i| i.to_string()).collect(),
            vec![1.0, 2.0, 3.0],
            vec![vec![1.0]; 3],
            vec![1.0; 3],
        )
        .unwrap();
        assert!(matches!(
            james_stein(&data, false),
            Err(Error::TooFewAreas { .. })
        ));
    }

    #[test]
    fn risk_formula_values() {
        let data = toy_dataset(3, 15, 2).balanced_replace_v(1.0);
        // B → 0 recovers the direct-estimator risk V
        let r = james_stein_risk(&data, 0.0).unwrap();
        for v in &r.per_area {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // m=15, p=2, V=1, B=1/2: total = 15 - 11/2
        let r = james_stein_risk(&data, 0.5).unwrap();
        assert!((r.total - 9.5).abs() < 1e-12);
        let sum: f64 = r.per_area.iter().sum();
        assert!((sum - r.total).abs() < 1e-10);
    }

    #[test]
    fn balanced_identity_links_js_and_moment_weights() {
        // interior moment solution: (m-p-2)V/S = ((m-p-2)/(m-p)) V/(V+Â)
        let data = toy_dataset(17, 12, 2).balanced_replace_v(0.8);
        let est = estimate_a(&data, FhMethod::FhMoment).unwrap();
        if est.a_hat > 0.0 {
            let js = james_stein(&data, false).unwrap();
            let lhs = js.b_hat_eb;
            let rhs = (12.0 - 2.0 - 2.0) / (12.0 - 2.0) * 0.8 / (0.8 + est.a_hat);
            assert!((lhs - rhs).abs() < 1e-7 * lhs, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn balanced_loss_limits_and_hand_value() {
        let y = vec![1.0, 0.0];
        let data = AreaDataset::new(
            vec!["a".into(), "b".into()],
            y.clone(),
            vec![vec![1.0]; 2],
            vec![1.0; 2],
        )
        .unwrap();
        // w = 1: pure goodness of fit returns y
        let t = balanced_loss_estimate(&data, 1.0, BSource::Known(0.4)).unwrap();
        assert_eq!(t, y);
        // w = 0: squared-error Bayes rule (1-B) y + B P_X y
        let t = balanced_loss_estimate(&data, 0.0, BSource::Known(0.4)).unwrap();
        assert!((t[0] - (0.6 * 1.0 + 0.4 * 0.5)).abs() < 1e-12);
        // w = 0.5, B = 0.4: [1 - 0.2] y + 0.2 (0.5, 0.5) = (0.9, 0.1)
        let t = balanced_loss_estimate(&data, 0.5, BSource::Known(0.4)).unwrap();
        assert!((t[0] - 0.9).abs() < 1e-12);
        assert!((t[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn general_v_reduces_to_diagonal_case() {
        let data = toy_dataset(8, 9, 2);
        let model = GeneralVModel::from_area(&data);
        let a = 0.9;
        let blup = general_v_blup(&model, a).unwrap();
        let fit = FayHerriotFit::with_a(&data, a, FhMethod::FhMoment).unwrap();
        for i in 0..data.m() {
            assert!((blup[i] - fit.theta_hat[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn general_v_two_by_two_conditional_mean_oracle() {
        // correlated 2x2 case checked against scalar cofactor algebra
        let y = vec![1.4, -0.3];
        let x_rows = vec![vec![1.0], vec![1.0]];
        let (v11, v22): (f64, f64) = (1.0, 2.0);
        let v12 = 0.5 * (v11 * v22).sqrt();
        let mut v = SymmetricMatrix::zeros(2);
        v.set(0, 0, v11);
        v.set(1, 1, v22);
        v.set(1, 0, v12);
        let a = 1.0;
        let model = GeneralVModel::new(y.clone(), x_rows, v).unwrap();
        let got = general_v_blup(&model, a).unwrap();

        // oracle: Σ = V + A I inverted by cofactors; β̃ = (1ᵀΣ⁻¹y)/(1ᵀΣ⁻¹1);
        // θ = y - Σ⁻¹ V (y - 1β̃) computed entirely with scalars
        let (s11, s22, s12) = (v11 + a, v22 + a, v12);
        let det = s11 * s22 - s12 * s12;
        let (i11, i22, i12) = (s22 / det, s11 / det, -s12 / det);
        let ones_si_y = i11 * y[0] + i12 * y[1] + i12 * y[0] + i22 * y[1];
        let ones_si_ones = i11 + 2.0 * i12 + i22;
        let beta = ones_si_y / ones_si_ones;
        let r = [y[0] - beta, y[1] - beta];
        let vr = [v11 * r[0] + v12 * r[1], v12 * r[0] + v22 * r[1]];
        let si_vr = [i11 * vr[0] + i12 * vr[1], i12 * vr[0] + i22 * vr[1]];
        let oracle = [y[0] - si_vr[0], y[1] - si_vr[1]];
        for i in 0..2 {
            assert!(
                (got[i] - oracle[i]).abs() < 1e-10,
                "{} vs {}",
                got[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn general_v_full_shrinkage_at_zero() {
        let data = toy_dataset(4, 7, 2);
        let model = GeneralVModel::from_area(&data);
        let blup = general_v_blup(&model, 0.0).unwrap();
        let parts = model.gls_parts(0.0).unwrap();
        for i in 0..model.m() {
            assert!((blup[i] - parts.fitted[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn permutation_and_location_equivariance() {
        let data = toy_dataset(42, 14, 2);
        let fit = FayHerriotFit::fit(&data, FhMethod::FhMoment).unwrap();

        // permute areas: rotate by 5
        let rot = |k: usize| (k + 5) % 14;
        let perm_data = AreaDataset::new(
            (0..14).map(|i| data.ids()[rot(i)].clone()).collect(),
            (0..14).map(|i| data.y()[rot(i)]).collect(),
            (0..14).map(|i| data.x_row(rot(i)).to_vec()).collect(),
            (0..14).map(|i| data.v()[rot(i)]).collect(),
        )
        .unwrap();
        let perm_fit = FayHerriotFit::fit(&perm_data, FhMethod::FhMoment).unwrap();
        assert!((perm_fit.a_hat - fit.a_hat).abs() <= 1e-9 * (1.0 + fit.a_hat));
        for r in 0..data.p() {
            assert!((perm_fit.beta_hat[r] - fit.beta_hat[r]).abs() < 1e-8);
        }
        for i in 0..14 {
            assert!((perm_fit.theta_hat[i] - fit.theta_hat[rot(i)]).abs() < 1e-7);
        }

        // location shift y -> y + X c
        let c = vec![2.5, -1.0];
        let shifted = AreaDataset::new(
            data.ids().to_vec(),
            (0..14)
                .map(|i| data.y()[i] + dot(data.x_row(i), &c))
                .collect(),
            (0..14).map(|i| data.x_row(i).to_vec()).collect(),
            data.v().to_vec(),
        )
        .unwrap();
        let sfit = FayHerriotFit::fit(&shifted, FhMethod::FhMoment).unwrap();
        assert!((sfit.a_hat - fit.a_hat).abs() <= 1e-7 * (1.0 + fit.a_hat));
        for r in 0..2 {
            assert!((sfit.beta_hat[r] - (fit.beta_hat[r] + c[r])).abs() < 1e-7);
        }
        for i in 0..14 {
            let shift = dot(data.x_row(i), &c);
            assert!((sfit.theta_hat[i] - (fit.theta_hat[i] + shift)).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let data = toy_dataset(77, 20, 3);
        for method in [
            FhMethod::FhMoment,
            FhMethod::PrAnova,
            FhMethod::Ml,
            FhMethod::Reml,
        ] {
            let f1 = FayHerriotFit::fit(&data, method).unwrap();
            let f2 = FayHerriotFit::fit(&data, method).unwrap();
            assert_eq!(f1.a_hat.to_bits(), f2.a_hat.to_bits());
            assert_eq!(f1.theta_hat, f2.theta_hat);
        }
    }
}
