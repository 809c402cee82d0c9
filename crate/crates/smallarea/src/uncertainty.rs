//! Frequentist uncertainty measures for EBLUP point estimates: the
//! three-term MSE decomposition, its naive and second-order-unbiased
//! estimators, Morris' approximation to the posterior variance, and the
//! plug-in MSE for the general-covariance model.
//!
//! The decomposition separates (1) prediction error with known parameters,
//! (2) the cost of estimating β, and (3) the cost of estimating A:
//!   g1_i = V_i (1 - B_i)
//!   g2_i = B_i² x_iᵀ (Xᵀ D⁻¹ X)⁻¹ x_i          (D = diag(V_j + A))
//!   g3_i = V_i² (V_i + A)⁻³ Var(Â)

use crate::error::{Error, Result};
use crate::fay_herriot::{gls_fit, AreaDataset, FayHerriotFit, FhMethod, GeneralVModel};
use crate::numeric::linalg::{Matrix, SymmetricMatrix};
use serde::{Deserialize, Serialize};

/// Which estimator a decomposition belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MseKind {
    /// g-terms evaluated at the true A (approximation target).
    TrueApprox,
    /// Naive plug-in g1(Â) + g2(Â) + g3(Â); not second-order unbiased.
    NaivePlugin,
    /// Second-order unbiased estimator: g1 + g2 + 2 g3 (+ ML bias term).
    SecondOrder,
    /// Morris' approximation to the posterior variance.
    Morris,
}

/// Per-area three-term uncertainty decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseDecomposition {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    /// Per-area total of the measure (for `SecondOrder` this includes the
    /// extra g3 used to debias g1, so total = g1 + g2 + 2 g3 - bias term).
    pub total: Vec<f64>,
    pub kind: MseKind,
    /// Set when Â = 0: the measure is returned but known to behave poorly
    /// at the boundary.
    pub at_boundary: bool,
}

pub(crate) struct GTerms {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
}

/// Raw g-terms at a given `A` and a given `Var(Â)`.
pub fn g_terms(data: &AreaDataset, a: f64, var_a: f64) -> Result<MseDecomposition> {
    let t = g_terms_inner(data, a, var_a)?;
    let total: Vec<f64> = (0..data.m()).map(|i| t.g1[i] + t.g2[i] + t.g3[i]).collect();
    Ok(MseDecomposition {
        g1: t.g1,
        g2: t.g2,
        g3: t.g3,
        total,
        kind: MseKind::TrueApprox,
        at_boundary: a == 0.0,
    })
}

fn g_terms_inner(data: &AreaDataset, a: f64, var_a: f64) -> Result<GTerms> {
    if !(a >= 0.0) || !(var_a >= 0.0) {
        return Err(Error::Domain(format!(
            "g-terms need A >= 0 and Var(Â) >= 0, got A={a}, Var={var_a}"
        )));
    }
    let m = data.m();
    let fit = gls_fit(data, a)?; // only the Gram factor is used
    let mut g1 = Vec::with_capacity(m);
    let mut g2 = Vec::with_capacity(m);
    let mut g3 = Vec::with_capacity(m);
    for i in 0..m {
        let vi = data.v()[i];
        let d = vi + a;
        let b = vi / d;
        g1.push(vi * (1.0 - b));
        // B_i² A x'{Σ (1-B_j) x x'}⁻¹ x = B_i² x'(XᵀD⁻¹X)⁻¹x: the A in the
        // numerator cancels against the A inside the weighted Gram matrix,
        // so this stays defined at A = 0.
        g2.push(b * b * fit.quad_form_inv(data.x_row(i)));
        g3.push(vi * vi / (d * d * d) * var_a);
    }
    Ok(GTerms { g1, g2, g3 })
}

/// Asymptotic variance of `Â` for each estimation method:
/// * ANOVA moment estimator: 2 m⁻² Σ (V_j + A)²  (variance of the residual
///   quadratic form behind the closed-form estimator)
/// * moment (iterated) estimator: 2 m [Σ (V_j + A)⁻¹]⁻²
/// * ML / REML: inverse expected information, 2 [Σ (V_j + A)⁻²]⁻¹
pub fn var_a_asymptotic(data: &AreaDataset, a: f64, method: FhMethod) -> f64 {
    let m = data.m() as f64;
    match method {
        FhMethod::PrAnova => {
            let s: f64 = data.v().iter().map(|&v| (v + a) * (v + a)).sum();
            2.0 * s / (m * m)
        }
        FhMethod::FhMoment => {
            let s: f64 = data.v().iter().map(|&v| 1.0 / (v + a)).sum();
            2.0 * m / (s * s)
        }
        FhMethod::Ml | FhMethod::Reml => {
            let s: f64 = data.v().iter().map(|&v| 1.0 / ((v + a) * (v + a))).sum();
            2.0 / s
        }
    }
}

/// Asymptotic bias of `Â`. Zero for the moment estimators and REML; for ML
/// the familiar trace term -Var_REML(Â)/2 · tr[(XᵀD⁻¹X)⁻¹ XᵀD⁻²X].
pub fn bias_a_asymptotic(data: &AreaDataset, a: f64, method: FhMethod) -> Result<f64> {
    match method {
        FhMethod::PrAnova | FhMethod::FhMoment | FhMethod::Reml => Ok(0.0),
        FhMethod::Ml => {
            let fit = gls_fit(data, a)?;
            let p = data.p();
            let inv = fit.xtwx_chol.inverse();
            let mut xtw2x = SymmetricMatrix::zeros(p);
            for i in 0..data.m() {
                let d = data.v()[i] + a;
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
            let var_reml = var_a_asymptotic(data, a, FhMethod::Reml);
            Ok(-0.5 * var_reml * tr)
        }
    }
}

/// Second-order unbiased MSE estimator: per area
/// `g1(Â) + g2(Â) + 2 g3(Â) - b(Â) ∂g1/∂A`, where the bias term vanishes
/// for the moment estimators and REML. Reported `g1` is the debiased
/// `g1(Â) + g3(Â)`, mirroring how the three columns are usually tabulated.
pub fn mse_second_order(data: &AreaDataset, fit: &FayHerriotFit) -> Result<MseDecomposition> {
    let a = fit.a_hat;
    let var_a = var_a_asymptotic(data, a, fit.method);
    let t = g_terms_inner(data, a, var_a)?;
    let bias = bias_a_asymptotic(data, a, fit.method)?;
    let m = data.m();
    let mut g1_col = Vec::with_capacity(m);
    let mut total = Vec::with_capacity(m);
    for i in 0..m {
        // ∂g1/∂A = B_i²
        let b = fit.b_hat[i];
        let corrected = t.g1[i] + t.g2[i] + 2.0 * t.g3[i] - bias * b * b;
        g1_col.push(t.g1[i] + t.g3[i] - bias * b * b);
        total.push(corrected);
    }
    Ok(MseDecomposition {
        g1: g1_col,
        g2: t.g2,
        g3: t.g3,
        total,
        kind: MseKind::SecondOrder,
        at_boundary: fit.a_hat == 0.0,
    })
}

/// Naive plug-in estimator `g1(Â) + g2(Â) + g3(Â)`. Understates the MSE:
/// `E[g1(Â)] = g1(A) - g3(A) + o(1/m)`, so the g3-sized debiasing of the
/// second-order estimator is missing.
pub fn mse_naive(data: &AreaDataset, fit: &FayHerriotFit) -> Result<MseDecomposition> {
    let a = fit.a_hat;
    let var_a = var_a_asymptotic(data, a, fit.method);
    let t = g_terms_inner(data, a, var_a)?;
    let total: Vec<f64> = (0..data.m()).map(|i| t.g1[i] + t.g2[i] + t.g3[i]).collect();
    Ok(MseDecomposition {
        g1: t.g1,
        g2: t.g2,
        g3: t.g3,
        total,
        kind: MseKind::NaivePlugin,
        at_boundary: fit.a_hat == 0.0,
    })
}

/// Morris' approximation to the hierarchical-Bayes moments: point estimate
/// with the deflated weight `B̂ᴹ_i = ((m-p-2)/(m-p)) V_i/(V_i+Â)` and an
/// area-specific variance approximation `s²_i = g1M + g2M + g3M` whose
/// third term grows with the observed residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorrisFit {
    pub b_hat_m: Vec<f64>,
    pub theta_m: Vec<f64>,
    /// t̂_i = x_iᵀ(XᵀD⁻¹X)⁻¹x_i / (V_i + Â)
    pub t_hat: Vec<f64>,
    pub v_bar: f64,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    /// s²_i = g1_i + g2_i + g3_i
    pub s2: Vec<f64>,
}

/// Requires `m > p + 2` and the moment-method `Â` (with its GLS `β̂`).
pub fn morris_measure(data: &AreaDataset, a_hat: f64, beta_hat: &[f64]) -> Result<MorrisFit> {
    let m = data.m();
    let p = data.p();
    if m <= p + 2 {
        return Err(Error::TooFewAreas {
            m,
            required: p + 2,
            context: "Morris variance",
        });
    }
    if !(a_hat >= 0.0) {
        return Err(Error::Domain(format!("A must be nonnegative, got {a_hat}")));
    }
    let fit = gls_fit(data, a_hat)?;
    let deflate = (m - p - 2) as f64 / (m - p) as f64;
    let v_bar = data.mean_v();
    let mut out = MorrisFit {
        b_hat_m: Vec::with_capacity(m),
        theta_m: Vec::with_capacity(m),
        t_hat: Vec::with_capacity(m),
        v_bar,
        g1: Vec::with_capacity(m),
        g2: Vec::with_capacity(m),
        g3: Vec::with_capacity(m),
        s2: Vec::with_capacity(m),
    };
    for i in 0..m {
        let vi = data.v()[i];
        let d = vi + a_hat;
        let b_m = deflate * vi / d;
        let xi = data.x_row(i);
        let fitted: f64 = xi.iter().zip(beta_hat).map(|(x, b)| x * b).sum();
        let resid = data.y()[i] - fitted;
        let t_hat = fit.quad_form_inv(xi) / d;
        let g1 = vi * (1.0 - b_m);
        let g2 = vi * b_m * t_hat;
        let g3 = 2.0 * b_m * b_m * resid * resid / (m - p - 2) as f64 * (v_bar + a_hat) / d;
        out.b_hat_m.push(b_m);
        out.theta_m.push((1.0 - b_m) * data.y()[i] + b_m * fitted);
        out.t_hat.push(t_hat);
        out.g1.push(g1);
        out.g2.push(g2);
        out.g3.push(g3);
        out.s2.push(g1 + g2 + g3);
    }
    Ok(out)
}

impl MorrisFit {
    pub fn decomposition(&self) -> MseDecomposition {
        MseDecomposition {
            g1: self.g1.clone(),
            g2: self.g2.clone(),
            g3: self.g3.clone(),
            total: self.s2.clone(),
            kind: MseKind::Morris,
            at_boundary: false,
        }
    }
}

/// Plug-in second-order MSE matrix for the general-covariance model:
/// `V(I-B) + B X [Xᵀ(V+AI)⁻¹X]⁻¹ Xᵀ Bᵀ + 2 V K³ V [tr(V⁻²)]⁻¹` with
/// `K = (V+AI)⁻¹ - (V+AI)⁻¹X[Xᵀ(V+AI)⁻¹X]⁻¹Xᵀ(V+AI)⁻¹`.
pub fn general_v_plugin_mse(model: &GeneralVModel, a: f64) -> Result<SymmetricMatrix> {
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("A must be nonnegative, got {a}")));
    }
    let m = model.m();
    let parts = model.gls_parts(a)?;
    let v = model.v().to_dense();

    // (V+AI)⁻¹V and (V+AI)⁻¹X
    let va_inv_v = parts.va_chol.solve_matrix(&v);
    let va_inv_x = parts.va_chol.solve_matrix(model.x());

    // term 1: V(I-B) = V - V(V+AI)⁻¹V
    let v_vainv_v = v.mul(&va_inv_v);
    let mut term1 = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            term1.set(i, j, v.get(i, j) - v_vainv_v.get(i, j));
        }
    }

    // term 2: B X G⁻¹ Xᵀ Bᵀ with B = (V+AI)⁻¹V; BX = (V+AI)⁻¹ V X
    let bx = parts.va_chol.solve_matrix(&v.mul(model.x()));
    let ginv_bxt = parts.gram_chol.solve_matrix(&bx.transpose());
    let term2 = bx.mul(&ginv_bxt);

    // K = (V+AI)⁻¹ - (V+AI)⁻¹X G⁻¹ Xᵀ(V+AI)⁻¹
    let ginv_xt_vainv = parts.gram_chol.solve_matrix(&va_inv_x.transpose());
    let correction = va_inv_x.mul(&ginv_xt_vainv);
    let va_inv = parts.va_chol.solve_matrix(&Matrix::identity(m));
    let mut k = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            k.set(i, j, va_inv.get(i, j) - correction.get(i, j));
        }
    }
    let k3 = k.mul(&k).mul(&k);
    let term3 = v.mul(&k3).mul(&v);

    // tr(V⁻²) = ||V⁻¹||²_F
    let v_chol = model.v().cholesky()?;
    let v_inv = v_chol.solve_matrix(&Matrix::identity(m));
    let mut tr_vinv2 = 0.0;
    for i in 0..m {
        for j in 0..m {
            tr_vinv2 += v_inv.get(i, j) * v_inv.get(j, i);
        }
    }
    let scale3 = 2.0 / tr_vinv2;

    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out.set(
                i,
                j,
                term1.get(i, j) + term2.get(i, j) + scale3 * term3.get(i, j),
            );
        }
    }
    Ok(out.symmetric_part())
}

/// The annihilator `K X = 0` identity, exposed for diagnostics/testing.
pub fn general_v_k_matrix(model: &GeneralVModel, a: f64) -> Result<Matrix> {
    let m = model.m();
    let parts = model.gls_parts(a)?;
    let va_inv_x = parts.va_chol.solve_matrix(model.x());
    let ginv_xt_vainv = parts.gram_chol.solve_matrix(&va_inv_x.transpose());
    let correction = va_inv_x.mul(&ginv_xt_vainv);
    let va_inv = parts.va_chol.solve_matrix(&Matrix::identity(m));
    let mut k = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            k.set(i, j, va_inv.get(i, j) - correction.get(i, j));
        }
    }
    Ok(k)
}
