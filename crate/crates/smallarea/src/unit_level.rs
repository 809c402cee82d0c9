//! Nested-error regression for unit-level data:
//! `y_ij = x_ijᵀβ + v_i + e_ij`, `v_i ~ N(0, σ²_v)`, `e_ij ~ N(0, σ²_e)`,
//! observed for `n_i` sampled units out of `N_i` in each of `m` areas.
//!
//! Provides block-structured GLS (the per-area covariance is
//! `σ²_e I + σ²_v 11ᵀ`, inverted by the rank-one identity, so no n×n solve
//! ever happens), ANOVA variance-component estimators, BLUP/EBLUP of both
//! the area means `θ_i = X̄_iᵀβ + v_i` and the finite-population means
//! `γ_i`, a second-order-unbiased MSE estimator, and hierarchical Bayes by
//! one-dimensional quadrature over the variance ratio `λ = σ²_e/σ²_v`.

use crate::error::{Error, Result};
use crate::numeric::linalg::{dot, psd_rank, solve_psd_rank_deficient, Cholesky, SymmetricMatrix};
use crate::posterior1d::Posterior1d;
use crate::uncertainty::{MseDecomposition, MseKind};
use serde::{Deserialize, Serialize};

/// One small area: sampled responses and covariate rows, the population
/// size, and the population covariate mean (including the intercept slot).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitArea {
    pub id: String,
    pub y: Vec<f64>,
    pub x_rows: Vec<Vec<f64>>,
    pub n_pop: u64,
    pub x_pop_mean: Vec<f64>,
}

/// Validated unit-level dataset with per-area summaries precomputed.
#[derive(Debug, Clone)]
pub struct UnitDataset {
    areas: Vec<UnitArea>,
    p: usize,
    n_total: usize,
    /// sampled means ȳ_is
    ybar_s: Vec<f64>,
    /// sampled covariate means x̄_is
    xbar_s: Vec<Vec<f64>>,
    /// unsampled covariate means x̄_i(u); equals x̄_is when f_i = 1
    xbar_u: Vec<Vec<f64>>,
    /// sampling fractions f_i = n_i/N_i
    f: Vec<f64>,
}

impl UnitDataset {
    pub fn new(areas: Vec<UnitArea>) -> Result<Self> {
        if areas.is_empty() {
            return Err(Error::Validation("no areas".into()));
        }
        let p = areas[0].x_pop_mean.len();
        if p == 0 {
            return Err(Error::Validation(
                "need at least one covariate column".into(),
            ));
        }
        let m = areas.len();
        let mut n_total = 0usize;
        let mut ybar_s = Vec::with_capacity(m);
        let mut xbar_s = Vec::with_capacity(m);
        let mut xbar_u = Vec::with_capacity(m);
        let mut f = Vec::with_capacity(m);
        for (k, area) in areas.iter().enumerate() {
            let n_i = area.y.len();
            if n_i == 0 {
                return Err(Error::Validation(format!(
                    "area {} has no sampled units",
                    area.id
                )));
            }
            if area.x_rows.len() != n_i {
                return Err(Error::Validation(format!(
                    "area {}: {} responses but {} covariate rows",
                    area.id,
                    n_i,
                    area.x_rows.len()
                )));
            }
            if area.n_pop < n_i as u64 {
                return Err(Error::Validation(format!(
                    "area {}: population {} smaller than sample {}",
                    area.id, area.n_pop, n_i
                )));
            }
            if area.x_pop_mean.len() != p || area.x_rows.iter().any(|r| r.len() != p) {
                return Err(Error::Validation(format!(
                    "area {}: covariate dimension mismatch (p = {p})",
                    area.id
                )));
            }
            if area.y.iter().any(|v| !v.is_finite())
                || area.x_rows.iter().flatten().any(|v| !v.is_finite())
                || area.x_pop_mean.iter().any(|v| !v.is_finite())
            {
                return Err(Error::Validation(format!(
                    "area {}: non-finite value",
                    area.id
                )));
            }
            n_total += n_i;
            let nf = n_i as f64;
            ybar_s.push(area.y.iter().sum::<f64>() / nf);
            let mut xs = vec![0.0; p];
            for row in &area.x_rows {
                for (a, b) in xs.iter_mut().zip(row) {
                    *a += b;
                }
            }
            for a in xs.iter_mut() {
                *a /= nf;
            }
            let fi = nf / area.n_pop as f64;
            f.push(fi);
            // X̄_i = f x̄_is + (1-f) x̄_iu fixes the unsampled mean
            let mut xu = vec![0.0; p];
            if area.n_pop == n_i as u64 {
                // census: no unsampled units; the population mean must be
                // the sampled mean
                for j in 0..p {
                    let diff = (area.x_pop_mean[j] - xs[j]).abs();
                    if diff > 1e-6 * (1.0 + xs[j].abs()) {
                        return Err(Error::Validation(format!(
                            "area {}: fully sampled but population covariate mean differs from the sampled mean",
                            area.id
                        )));
                    }
                }
                xu.copy_from_slice(&xs);
            } else {
                for j in 0..p {
                    xu[j] = (area.n_pop as f64 * area.x_pop_mean[j] - nf * xs[j])
                        / (area.n_pop as f64 - nf);
                }
            }
            xbar_s.push(xs);
            xbar_u.push(xu);
            let _ = k;
        }
        let ds = UnitDataset {
            areas,
            p,
            n_total,
            ybar_s,
            xbar_s,
            xbar_u,
            f,
        };
        // estimation methods impose their own degree-of-freedom demands
        // (singleton-area data is fine for GLS at known components, so the
        // dataset itself only needs identifiable regression coefficients)
        if ds.n_total <= p {
            return Err(Error::Validation(format!(
                "need n > p: n = {}, p = {p}",
                ds.n_total
            )));
        }
        // full column rank of the stacked design, via its Gram matrix
        let mut gram = SymmetricMatrix::zeros(p);
        for area in &ds.areas {
            for row in &area.x_rows {
                for r in 0..p {
                    for c in 0..=r {
                        gram.add_to(r, c, row[r] * row[c]);
                    }
                }
            }
        }
        if psd_rank(&gram, 1e-12) < p {
            return Err(Error::SingularDesign(
                "stacked unit-level design is rank deficient".into(),
            ));
        }
        Ok(ds)
    }

    pub fn m(&self) -> usize {
        self.areas.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn areas(&self) -> &[UnitArea] {
        &self.areas
    }

    pub fn n_i(&self, i: usize) -> usize {
        self.areas[i].y.len()
    }

    pub fn ybar_s(&self) -> &[f64] {
        &self.ybar_s
    }

    pub fn xbar_s(&self, i: usize) -> &[f64] {
        &self.xbar_s[i]
    }

    pub fn xbar_u(&self, i: usize) -> &[f64] {
        &self.xbar_u[i]
    }

    pub fn sampling_fraction(&self) -> &[f64] {
        &self.f
    }
}

/// Estimated variance components of the nested-error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2_e: f64,
    pub sigma2_v: f64,
    pub method: UnitMethod,
    /// n* = n - tr[(XᵀX)⁻¹ Σ n_i² x̄_is x̄_isᵀ]
    pub n_star: f64,
    /// rank of the within-area centered covariates
    pub p_star: usize,
    /// set when the raw between-area estimate was negative and truncated
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitMethod {
    Anova,
    Ml,
    Reml,
}

impl UnitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            UnitMethod::Anova => "anova",
            UnitMethod::Ml => "ml",
            UnitMethod::Reml => "reml",
        }
    }
}

impl VarianceComponents {
    pub fn new(sigma2_e: f64, sigma2_v: f64, method: UnitMethod) -> Result<Self> {
        if !(sigma2_e > 0.0) || !(sigma2_v >= 0.0) {
            return Err(Error::Validation(format!(
                "need σ²_e > 0 and σ²_v >= 0, got ({sigma2_e}, {sigma2_v})"
            )));
        }
        Ok(VarianceComponents {
            sigma2_e,
            sigma2_v,
            method,
            n_star: f64::NAN,
            p_star: 0,
            truncated: false,
        })
    }

    /// δ_i = σ²_v / (σ²_v + σ²_e/n_i)
    pub fn delta(&self, n_i: usize) -> f64 {
        let nf = n_i as f64;
        nf * self.sigma2_v / (self.sigma2_e + nf * self.sigma2_v)
    }
}

/// Block GLS pieces at given variance components. The per-area inverse is
/// `(σ²_e I + σ²_v J)⁻¹ = σ_e⁻²[I - κ_i J]` with
/// `κ_i = σ²_v/(σ²_e + n_i σ²_v)`.
pub(crate) struct UnitGls {
    pub beta: Vec<f64>,
    /// Cholesky of X⁽¹⁾ᵀ Σ₁₁⁻¹ X⁽¹⁾ (with the σ²_e scale included)
    pub gram_chol: Cholesky,
    /// weighted residual quadratic form yᵀΣ⁻¹y - β̃ᵀXᵀΣ⁻¹y
    pub q_form: f64,
}

pub(crate) fn unit_gls_parts(data: &UnitDataset, sigma2_e: f64, sigma2_v: f64) -> Result<UnitGls> {
    if !(sigma2_e > 0.0) {
        return Err(Error::Validation(format!(
            "σ²_e must be positive, got {sigma2_e}"
        )));
    }
    if !(sigma2_v >= 0.0) {
        return Err(Error::Validation(format!(
            "σ²_v must be nonnegative, got {sigma2_v}"
        )));
    }
    let p = data.p();
    let inv_e = 1.0 / sigma2_e;
    let mut gram = SymmetricMatrix::zeros(p);
    let mut rhs = vec![0.0; p];
    let mut ytsy = 0.0;
    for (i, area) in data.areas.iter().enumerate() {
        let n_i = area.y.len() as f64;
        let kappa = sigma2_v / (sigma2_e + n_i * sigma2_v);
        // Σ_block⁻¹ = inv_e (I - κ J)
        for (row, &yv) in area.x_rows.iter().zip(&area.y) {
            for r in 0..p {
                rhs[r] += inv_e * row[r] * yv;
                for c in 0..=r {
                    gram.add_to(r, c, inv_e * row[r] * row[c]);
                }
            }
            ytsy += inv_e * yv * yv;
        }
        let sum_y = n_i * data.ybar_s[i];
        let sx = &data.xbar_s[i];
        for r in 0..p {
            rhs[r] -= inv_e * kappa * n_i * sx[r] * n_i * data.ybar_s[i];
            for c in 0..=r {
                gram.add_to(r, c, -inv_e * kappa * n_i * sx[r] * n_i * sx[c]);
            }
        }
        ytsy -= inv_e * kappa * sum_y * sum_y;
    }
    let gram_chol = gram
        .cholesky()
        .map_err(|_| Error::SingularDesign("unit-level weighted Gram matrix is singular".into()))?;
    let beta = gram_chol.solve(&rhs);
    let q_form = ytsy - dot(&beta, &rhs);
    Ok(UnitGls {
        beta,
        gram_chol,
        q_form,
    })
}

/// GLS estimate of β at the given variance components.
pub fn unit_gls(data: &UnitDataset, psi: &VarianceComponents) -> Result<Vec<f64>> {
    Ok(unit_gls_parts(data, psi.sigma2_e, psi.sigma2_v)?.beta)
}

/// ANOVA variance-component estimators: the within-area estimator uses the
/// OLS residuals of the group-centered regression; the between-area
/// estimator matches raw-OLS residual moments and is truncated at zero.
pub fn anova_components(data: &UnitDataset) -> Result<VarianceComponents> {
    let p = data.p();
    let n = data.n_total() as f64;
    let m = data.m() as f64;

    // within: regress y_ij - ȳ_is on x_ij - x̄_is (rank-deficient aware:
    // columns constant within areas center to zero)
    let mut cgram = SymmetricMatrix::zeros(p);
    let mut crhs = vec![0.0; p];
    for (i, area) in data.areas.iter().enumerate() {
        for (row, &yv) in area.x_rows.iter().zip(&area.y) {
            let yc = yv - data.ybar_s[i];
            for r in 0..p {
                let xr = row[r] - data.xbar_s[i][r];
                crhs[r] += xr * yc;
                for c in 0..=r {
                    cgram.add_to(r, c, xr * (row[c] - data.xbar_s[i][c]));
                }
            }
        }
    }
    let (b_within, p_star) = solve_psd_rank_deficient(&cgram, &crhs, 1e-12)?;
    let dof_e = n - m - p_star as f64;
    if dof_e <= 0.0 {
        return Err(Error::InsufficientWithinVariation { dof: dof_e as i64 });
    }
    let mut rss_e = 0.0;
    for (i, area) in data.areas.iter().enumerate() {
        for (row, &yv) in area.x_rows.iter().zip(&area.y) {
            let mut fit = 0.0;
            for r in 0..p {
                fit += (row[r] - data.xbar_s[i][r]) * b_within[r];
            }
            let e = (yv - data.ybar_s[i]) - fit;
            rss_e += e * e;
        }
    }
    let sigma2_e = rss_e / dof_e;

    // between: raw OLS residual sum of squares
    let mut gram = SymmetricMatrix::zeros(p);
    let mut rhs = vec![0.0; p];
    for area in &data.areas {
        for (row, &yv) in area.x_rows.iter().zip(&area.y) {
            for r in 0..p {
                rhs[r] += row[r] * yv;
                for c in 0..=r {
                    gram.add_to(r, c, row[r] * row[c]);
                }
            }
        }
    }
    let gram_chol = gram
        .cholesky()
        .map_err(|_| Error::SingularDesign("XᵀX is singular".into()))?;
    let beta_ols = gram_chol.solve(&rhs);
    let mut rss_u = 0.0;
    for area in &data.areas {
        for (row, &yv) in area.x_rows.iter().zip(&area.y) {
            let e = yv - dot(row, &beta_ols);
            rss_u += e * e;
        }
    }
    // n* = n - tr[(XᵀX)⁻¹ Σ n_i² x̄ x̄ᵀ]
    let ginv = gram_chol.inverse();
    let mut tr = 0.0;
    for (i, _) in data.areas.iter().enumerate() {
        let n_i = data.n_i(i) as f64;
        let sx = &data.xbar_s[i];
        for r in 0..p {
            for c in 0..p {
                tr += ginv.get(r, c) * n_i * n_i * sx[r] * sx[c];
            }
        }
    }
    let n_star = n - tr;
    let raw_v = (rss_u - (n - p as f64) * sigma2_e) / n_star;
    Ok(VarianceComponents {
        sigma2_e,
        sigma2_v: raw_v.max(0.0),
        method: UnitMethod::Anova,
        n_star,
        p_star,
        truncated: raw_v <= 0.0,
    })
}

/// Fitted unit-level model: coefficients, shrinkage weights, the
/// (large-population) area means θ̃_i and the exact finite-population means
/// γ̃_i = f_i ȳ_is + (1-f_i) θ̃_{i(u)}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitFit {
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    /// θ̃_i = X̄_iᵀβ̃ + δ_i(ȳ_is - x̄_isᵀβ̃): the infinite-population target.
    pub theta: Vec<f64>,
    /// γ̃_i: the finite-population mean predictor.
    pub gamma: Vec<f64>,
}

/// BLUP of the area means and finite-population means at given components.
pub fn unit_blup(data: &UnitDataset, psi: &VarianceComponents) -> Result<UnitFit> {
    let gls = unit_gls_parts(data, psi.sigma2_e, psi.sigma2_v)?;
    Ok(blup_from_parts(data, &gls.beta, |n_i| psi.delta(n_i)))
}

fn blup_from_parts(data: &UnitDataset, beta: &[f64], delta_of_n: impl Fn(usize) -> f64) -> UnitFit {
    let m = data.m();
    let mut fit = UnitFit {
        beta: beta.to_vec(),
        delta: Vec::with_capacity(m),
        theta: Vec::with_capacity(m),
        gamma: Vec::with_capacity(m),
    };
    for (i, area) in data.areas.iter().enumerate() {
        let delta = delta_of_n(data.n_i(i));
        let resid = data.ybar_s[i] - dot(&data.xbar_s[i], beta);
        let theta = dot(&area.x_pop_mean, beta) + delta * resid;
        let theta_u = dot(&data.xbar_u[i], beta) + delta * resid;
        let f = data.f[i];
        fit.delta.push(delta);
        fit.theta.push(theta);
        fit.gamma.push(f * data.ybar_s[i] + (1.0 - f) * theta_u);
    }
    fit
}

/// Exact variances and covariance of the ANOVA estimators under normality,
/// from the quadratic-form identities of the two residual sums of squares.
/// The group-centering projector annihilates the area effects, which is
/// what collapses every trace to closed form.
pub(crate) struct AnovaMoments {
    pub var_e: f64,
    pub var_v: f64,
    pub cov_ev: f64,
}

pub(crate) fn anova_moments(
    data: &UnitDataset,
    sigma2_e: f64,
    sigma2_v: f64,
    n_star: f64,
    p_star: usize,
) -> Result<AnovaMoments> {
    let n = data.n_total() as f64;
    let m = data.m() as f64;
    let p = data.p() as f64;
    let dof_e = n - m - p_star as f64;
    if dof_e <= 0.0 {
        return Err(Error::InsufficientWithinVariation { dof: dof_e as i64 });
    }
    let se2 = sigma2_e * sigma2_e;
    let var_e = 2.0 * se2 / dof_e;

    // ||Zᵀ(I - P_X)Z||²_F with ZᵀZ = diag(n_i) and (ZᵀX) rows n_i x̄_isᵀ
    let pdim = data.p();
    let mut gram = SymmetricMatrix::zeros(pdim);
    for area in &data.areas {
        for row in &area.x_rows {
            for r in 0..pdim {
                for c in 0..=r {
                    gram.add_to(r, c, row[r] * row[c]);
                }
            }
        }
    }
    let chol = gram
        .cholesky()
        .map_err(|_| Error::SingularDesign("XᵀX is singular".into()))?;
    let mu = data.m();
    // rows of ZᵀX
    let ztx: Vec<Vec<f64>> = (0..mu)
        .map(|i| {
            let n_i = data.n_i(i) as f64;
            data.xbar_s[i].iter().map(|&x| n_i * x).collect()
        })
        .collect();
    // (XᵀX)⁻¹ (ZᵀX)ᵀ columns
    let solved: Vec<Vec<f64>> = ztx.iter().map(|row| chol.solve(row)).collect();
    let mut frob2 = 0.0;
    for i in 0..mu {
        for j in 0..mu {
            let mut t = if i == j { data.n_i(i) as f64 } else { 0.0 };
            t -= dot(&ztx[i], &solved[j]);
            frob2 += t * t;
        }
    }
    let sv2 = sigma2_v * sigma2_v;
    let var_qu = 2.0 * (se2 * (n - p) + 2.0 * sigma2_e * sigma2_v * n_star + sv2 * frob2);
    let var_v =
        (var_qu + (n - p) * (n - p) * var_e - 2.0 * (n - p) * 2.0 * se2) / (n_star * n_star);
    let cov_ev = (2.0 * se2 - (n - p) * var_e) / n_star;
    Ok(AnovaMoments {
        var_e,
        var_v,
        cov_ev,
    })
}

/// Second-order-unbiased MSE estimator for the EBLUP of the area means:
/// per area `g1 + g2 + 2 g3` with
///   g1_i = (1-δ_i)σ²_v,
///   g2_i = (X̄_i - δ_i x̄_is)ᵀ (XᵀΣ⁻¹X)⁻¹ (X̄_i - δ_i x̄_is),
///   g3_i = n_i⁻²(σ²_v + σ²_e/n_i)⁻³ var(σ²_v σ̂²_e - σ²_e σ̂²_v);
/// the bias term of the general form drops for the ANOVA (and REML)
/// estimators. The `g1` column carries the debiasing g3, mirroring the
/// area-level convention.
pub fn unit_mse(data: &UnitDataset, psi: &VarianceComponents) -> Result<MseDecomposition> {
    let gls = unit_gls_parts(data, psi.sigma2_e, psi.sigma2_v)?;
    let (n_star, p_star) = if psi.n_star.is_finite() {
        (psi.n_star, psi.p_star)
    } else {
        // components supplied externally: recompute the design constants
        let a = anova_components(data)?;
        (a.n_star, a.p_star)
    };
    let moments = anova_moments(data, psi.sigma2_e, psi.sigma2_v, n_star, p_star)?;
    let var_cross = psi.sigma2_v * psi.sigma2_v * moments.var_e
        + psi.sigma2_e * psi.sigma2_e * moments.var_v
        - 2.0 * psi.sigma2_v * psi.sigma2_e * moments.cov_ev;
    let m = data.m();
    let mut g1 = Vec::with_capacity(m);
    let mut g2 = Vec::with_capacity(m);
    let mut g3 = Vec::with_capacity(m);
    let mut g1_col = Vec::with_capacity(m);
    let mut total = Vec::with_capacity(m);
    for (i, area) in data.areas.iter().enumerate() {
        let n_i = data.n_i(i) as f64;
        let delta = psi.delta(data.n_i(i));
        let t1 = (1.0 - delta) * psi.sigma2_v;
        let d: Vec<f64> = area
            .x_pop_mean
            .iter()
            .zip(&data.xbar_s[i])
            .map(|(xp, xs)| xp - delta * xs)
            .collect();
        let t2 = dot(&gls.gram_chol.solve(&d), &d);
        let denom = psi.sigma2_v + psi.sigma2_e / n_i;
        let t3 = var_cross / (n_i * n_i * denom * denom * denom);
        g1.push(t1);
        g2.push(t2);
        g3.push(t3);
        g1_col.push(t1 + t3);
        total.push(t1 + t2 + 2.0 * t3);
    }
    Ok(MseDecomposition {
        g1: g1_col,
        g2,
        g3,
        total,
        kind: MseKind::SecondOrder,
        at_boundary: psi.sigma2_v == 0.0 || psi.truncated,
    })
}

/// Inverse-gamma hyperparameters of the hierarchical-Bayes prior:
/// σ²_e ~ IG(a0/2, g0/2), σ²_v ~ IG(a1/2, g1/2) (density ∝ e^{-β/x}x^{-α-1}
/// for IG(β, α)), flat prior on the regression coefficients. All of
/// `a0, g0, g1` may be zero; `a1` must be positive for a proper joint
/// prior, and small values keep the prior diffuse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbPrior {
    pub a0: f64,
    pub g0: f64,
    pub a1: f64,
    pub g1: f64,
}

impl Default for HbPrior {
    fn default() -> Self {
        HbPrior {
            a0: 0.0,
            g0: 0.0,
            a1: 0.01,
            g1: 0.0,
        }
    }
}

impl HbPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.a0 >= 0.0 && self.g0 >= 0.0 && self.g1 >= 0.0) {
            return Err(Error::Validation(
                "hyperparameters a0, g0, g1 must be nonnegative".into(),
            ));
        }
        if !(self.a1 > 0.0) {
            return Err(Error::Validation(
                "hyperparameter a1 must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Hierarchical-Bayes output for the finite-population means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitHb {
    /// γ̂_i^HB = E[γ̃_i(λ, y) | y]
    pub gamma: Vec<f64>,
    /// posterior variances V(γ_i | y)
    pub variance: Vec<f64>,
    /// posterior mean of the variance ratio λ = σ²_e/σ²_v
    pub e_lambda: f64,
    /// posterior mode of λ
    pub lambda_mode: f64,
    pub quad_error: f64,
}

/// Conditional pieces at a fixed variance ratio λ (σ²_e scale = 1).
struct LambdaNode {
    gamma: Vec<f64>,
    /// conditional posterior variance of γ_i given λ, scaled by σ²_e
    w_over_sigma_e: Vec<f64>,
    /// s(λ) = q(λ) + a0 + a1 λ
    s: f64,
}

fn lambda_node(data: &UnitDataset, lambda: f64, prior: &HbPrior) -> Result<LambdaNode> {
    let gls = unit_gls_parts(data, 1.0, 1.0 / lambda)?;
    let m = data.m();
    let mut gamma = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    for (i, area) in data.areas.iter().enumerate() {
        let n_i = data.n_i(i) as f64;
        let delta = n_i / (n_i + lambda);
        let resid = data.ybar_s[i] - dot(&data.xbar_s[i], &gls.beta);
        let theta_u = dot(&data.xbar_u[i], &gls.beta) + delta * resid;
        let f = data.f[i];
        gamma.push(f * data.ybar_s[i] + (1.0 - f) * theta_u);
        let unsampled = area.n_pop - data.n_i(i) as u64;
        if unsampled == 0 {
            w.push(0.0);
        } else {
            let d: Vec<f64> = data.xbar_u[i]
                .iter()
                .zip(&data.xbar_s[i])
                .map(|(xu, xs)| xu - delta * xs)
                .collect();
            let beta_var = dot(&gls.gram_chol.solve(&d), &d);
            let cond = (1.0 - delta) / lambda + 1.0 / unsampled as f64 + beta_var;
            w.push((1.0 - f) * (1.0 - f) * cond);
        }
    }
    Ok(LambdaNode {
        gamma,
        w_over_sigma_e: w,
        s: gls.q_form + prior.a0 + prior.a1 * lambda,
    })
}

fn log_posterior_lambda(data: &UnitDataset, lambda: f64, prior: &HbPrior, c: f64) -> f64 {
    if !(lambda > 0.0) {
        return f64::NEG_INFINITY;
    }
    match unit_gls_parts(data, 1.0, 1.0 / lambda) {
        Ok(gls) => {
            // |Σ(λ)| = Π (1 + n_i/λ)
            let log_det_sigma: f64 = data
                .areas
                .iter()
                .map(|a| (1.0 + a.y.len() as f64 / lambda).ln())
                .sum();
            let s = gls.q_form + prior.a0 + prior.a1 * lambda;
            if !(s > 0.0) {
                return f64::NEG_INFINITY;
            }
            -0.5 * (log_det_sigma + gls.gram_chol.log_det()) + (prior.g1 / 2.0 - 1.0) * lambda.ln()
                - c * s.ln()
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Hierarchical Bayes for the finite-population means: β and the residual
/// precision integrate out analytically (normal/inverse-gamma conjugacy),
/// leaving one-dimensional quadrature over λ = σ²_e/σ²_v:
///   γ̂_i = E[γ̃_i(λ)|y],
///   V(γ_i|y) = E[w_i(λ)|y] + Var[γ̃_i(λ)|y],
/// where w_i is the conditional posterior variance given λ.
pub fn unit_hb(data: &UnitDataset, prior: &HbPrior, tol: f64) -> Result<UnitHb> {
    prior.validate()?;
    let n = data.n_total() as f64;
    let p = data.p() as f64;
    let c = (n - p + prior.g0 + prior.g1) / 2.0;
    // E[σ²_e | λ, y] = s(λ)/(2(c-1)) requires c > 1
    if c <= 1.0 {
        return Err(Error::ImproperPosterior {
            m: data.m(),
            p: data.p(),
        });
    }
    let post = Posterior1d::build(|l| log_posterior_lambda(data, l, prior, c), 1.0, tol)?;
    let (e_lambda, e_l_err) = post.expect(|l| l, 0.0)?;

    let m = data.m();
    use std::cell::RefCell;
    use std::collections::HashMap;
    use std::rc::Rc;
    let cache: RefCell<HashMap<u64, Rc<LambdaNode>>> = RefCell::new(HashMap::new());
    let node = |l: f64| -> Rc<LambdaNode> {
        let key = l.to_bits();
        if let Some(nd) = cache.borrow().get(&key) {
            return Rc::clone(nd);
        }
        let nd = Rc::new(lambda_node(data, l, prior).expect("λ > 0 keeps the blocks regular"));
        cache.borrow_mut().insert(key, Rc::clone(&nd));
        nd
    };

    let gamma_scale = data.ybar_s.iter().map(|t| t.abs()).fold(1.0f64, f64::max);
    let two_c1 = 2.0 * (c - 1.0);

    let mut gamma = Vec::with_capacity(m);
    let mut variance = Vec::with_capacity(m);
    let mut worst = post.norm_quad.abs_error_estimate.max(e_l_err);
    for i in 0..m {
        let (g_mean, e1) = post.expect(|l| node(l).gamma[i], gamma_scale)?;
        let (g_sq, e2) = post.expect(
            |l| {
                let g = node(l).gamma[i];
                g * g
            },
            gamma_scale * gamma_scale,
        )?;
        let (w_mean, e3) = post.expect(
            |l| {
                let nd = node(l);
                nd.w_over_sigma_e[i] * nd.s / two_c1
            },
            0.0,
        )?;
        gamma.push(g_mean);
        variance.push(w_mean + (g_sq - g_mean * g_mean).max(0.0));
        worst = worst.max(e1).max(e2).max(e3);
    }
    Ok(UnitHb {
        gamma,
        variance,
        e_lambda,
        lambda_mode: post.mode,
        quad_error: worst,
    })
}

/// BLUP of the finite-population means at a fixed variance ratio λ
/// (the point-mass reduction of the HB estimator).
pub fn unit_blup_at_ratio(data: &UnitDataset, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("λ must be positive, got {lambda}")));
    }
    let gls = unit_gls_parts(data, 1.0, 1.0 / lambda)?;
    let fit = blup_from_parts(data, &gls.beta, |n_i| n_i as f64 / (n_i as f64 + lambda));
    Ok(fit.gamma)
}
