//! Hierarchical Bayes for the area-level model under the flat prior
//! π(β, A) = 1: the regression coefficients integrate out analytically, so
//! only the between-area variance `A` is handled numerically, by adaptive
//! quadrature over its one-dimensional marginal posterior
//!
//!   log π(A | y) = -½ [ Σ log(V_i + A) + log|XᵀD⁻¹X| + Σ r_i²/(V_i + A) ]
//!
//! with D = diag(V_i + A) and r the GLS residuals at A. The flat prior
//! yields a proper posterior exactly when m > p + 2. Point estimates and
//! the three-term posterior-variance split all reduce to one-dimensional
//! integrals against this density; no sampling is involved anywhere.

use crate::error::{Error, Result};
use crate::fay_herriot::{gls_fit, james_stein, ols_fit, AreaDataset, GeneralVModel};
use crate::numeric::linalg::SymmetricMatrix;
use crate::numeric::normal::{ln_gamma, reg_lower_gamma};
use crate::posterior1d::{Posterior1d, Posterior1dParams};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// Default relative quadrature tolerance for posterior functionals.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Kind {
    Quadrature,
    PointMass(f64),
}

/// Marginal posterior of the between-area variance on an adaptively built
/// grid, with its normalizer and mean. Downstream moments are computed by
/// [`hb_estimate`]; a degenerate point mass is available for reductions to
/// the known-A formulas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HbPosterior {
    kind: Kind,
    /// A values where the unnormalized log density was evaluated, increasing.
    pub grid: Vec<f64>,
    /// Unnormalized log density on `grid`.
    pub log_density: Vec<f64>,
    /// Maximum of the log density (shift used by the quadrature).
    pub log_max: f64,
    /// ∫ exp(log π(A|y) - log_max) dA
    pub normalizer: f64,
    /// Posterior mean E[A | y].
    pub e_a: f64,
    /// Posterior mode of A.
    pub mode: f64,
    /// Point where the log density has dropped 40 nats below the mode.
    pub upper_drop: f64,
    lower_drop: f64,
    scale: f64,
    pub tol: f64,
    /// Set when more than 1% of the posterior mass sits below
    /// 1e-8 · mean(V); the density near the origin is then delicate.
    pub low_a_mass_warning: bool,
    /// Worst absolute quadrature error estimate among normalizer and E[A].
    pub quad_error: f64,
    m: usize,
    p: usize,
}

fn log_posterior_a(data: &AreaDataset, a: f64) -> f64 {
    match gls_fit(data, a) {
        Ok(fit) => {
            let sum_log: f64 = data.v().iter().map(|&v| (v + a).ln()).sum();
            -0.5 * (sum_log + fit.xtwx_chol.log_det() + fit.weighted_rss)
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Posterior of `A` under the flat prior, by adaptive quadrature.
/// Requires `m > p + 2` for propriety. The posterior mean `e_a` is finite
/// only when `m > p + 4` (the tail decays like A^{-(m-p)/2}); below that it
/// is reported as infinity while every θ-moment remains well defined.
pub fn posterior_a(data: &AreaDataset, tol: f64) -> Result<HbPosterior> {
    let (m, p) = (data.m(), data.p());
    if m <= p + 2 {
        return Err(Error::ImproperPosterior { m, p });
    }
    let post = Posterior1d::build(|a| log_posterior_a(data, a), data.mean_v(), tol)?;
    // the posterior tail decays like A^{-(m-p)/2}: proper for m > p+2, but
    // the mean is finite only for m > p+4
    let (e_a, e_a_err) = if m > p + 4 {
        post.expect(|a| a, 0.0)?
    } else {
        (f64::INFINITY, 0.0)
    };
    let low_mass = post.mass_below(1e-8 * data.mean_v())?;
    let (grid, log_density) = post.evaluations();
    Ok(HbPosterior {
        kind: Kind::Quadrature,
        grid,
        log_density,
        log_max: post.log_max,
        normalizer: post.normalizer,
        e_a,
        mode: post.mode,
        upper_drop: post.upper_drop,
        lower_drop: post.lower_drop,
        scale: post.scale,
        tol,
        low_a_mass_warning: low_mass > 0.01,
        quad_error: post.norm_quad.abs_error_estimate.max(e_a_err),
        m,
        p,
    })
}

impl HbPosterior {
    /// Degenerate posterior concentrated at a single `A`; turns the HB
    /// formulas into their known-A conditional counterparts.
    pub fn point_mass(a: f64) -> HbPosterior {
        HbPosterior {
            kind: Kind::PointMass(a),
            grid: vec![a],
            log_density: vec![0.0],
            log_max: 0.0,
            normalizer: 1.0,
            e_a: a,
            mode: a,
            upper_drop: a,
            lower_drop: a,
            scale: a.max(1.0),
            tol: DEFAULT_TOL,
            low_a_mass_warning: false,
            quad_error: 0.0,
            m: 0,
            p: 0,
        }
    }

    fn params(&self) -> Posterior1dParams {
        Posterior1dParams {
            scale: self.scale,
            mode: self.mode,
            log_max: self.log_max,
            lower_drop: self.lower_drop,
            upper_drop: self.upper_drop,
            tol: self.tol,
        }
    }
}

/// Per-node conditional quantities reused by every moment integral.
struct NodeData {
    b: Vec<f64>,
    fitted: Vec<f64>,
    /// g2_i(A) = B_i² x'(XᵀD⁻¹X)⁻¹x
    g2: Vec<f64>,
}

fn node_data(data: &AreaDataset, a: f64) -> Result<NodeData> {
    let fit = gls_fit(data, a)?;
    let m = data.m();
    let mut b = Vec::with_capacity(m);
    let mut g2 = Vec::with_capacity(m);
    for i in 0..m {
        let vi = data.v()[i];
        let bi = vi / (vi + a);
        b.push(bi);
        g2.push(bi * bi * fit.quad_form_inv(data.x_row(i)));
    }
    Ok(NodeData {
        b,
        fitted: fit.fitted,
        g2,
    })
}

/// Point estimates and the three-term posterior-variance decomposition:
/// `V(θ_i|y) = E[g1_i(A)|y] + E[g2_i(A)|y] + Var[B_i(y_i - x_iᵀβ̃(A))|y]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HbEstimate {
    /// E(θ_i | y) = (1 - E[B_i|y]) y_i + E[B_i x_iᵀβ̃(A) | y]
    pub theta: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    /// Posterior variances g1 + g2 + g3.
    pub variance: Vec<f64>,
    /// E[B_i | y].
    pub e_b: Vec<f64>,
    /// Worst per-area absolute quadrature error estimate.
    pub quad_error: f64,
}

/// Evaluate the posterior-mean and posterior-variance functionals of each
/// area mean against a posterior produced by [`posterior_a`] on the same
/// dataset.
pub fn hb_estimate(data: &AreaDataset, post: &HbPosterior) -> Result<HbEstimate> {
    if let Kind::PointMass(a) = post.kind {
        let nd = node_data(data, a)?;
        let m = data.m();
        let mut out = HbEstimate {
            theta: Vec::with_capacity(m),
            g1: Vec::with_capacity(m),
            g2: nd.g2.clone(),
            g3: vec![0.0; m],
            variance: Vec::with_capacity(m),
            e_b: nd.b.clone(),
            quad_error: 0.0,
        };
        for i in 0..m {
            let g1 = data.v()[i] * (1.0 - nd.b[i]);
            out.theta
                .push((1.0 - nd.b[i]) * data.y()[i] + nd.b[i] * nd.fitted[i]);
            out.g1.push(g1);
            out.variance.push(g1 + nd.g2[i]);
        }
        return Ok(out);
    }
    if post.m != data.m() || post.p != data.p() {
        return Err(Error::Validation(
            "posterior was built from a dataset of different shape".into(),
        ));
    }

    let cache: RefCell<HashMap<u64, Rc<NodeData>>> = RefCell::new(HashMap::new());
    let node = |a: f64| -> Rc<NodeData> {
        let key = a.to_bits();
        if let Some(nd) = cache.borrow().get(&key) {
            return Rc::clone(nd);
        }
        let nd = Rc::new(node_data(data, a).expect("A >= 0 keeps the GLS system regular"));
        cache.borrow_mut().insert(key, Rc::clone(&nd));
        nd
    };

    let post1d = Posterior1d::from_params(|a| log_posterior_a(data, a), post.params())?;

    let m = data.m();
    // magnitude hints for the absolute error floors
    let at_mode = node(post.mode.max(post.scale * 1e-6));
    let fit_scale = at_mode
        .fitted
        .iter()
        .map(|f| f.abs())
        .fold(1.0f64, f64::max);

    let mut out = HbEstimate {
        theta: Vec::with_capacity(m),
        g1: Vec::with_capacity(m),
        g2: Vec::with_capacity(m),
        g3: Vec::with_capacity(m),
        variance: Vec::with_capacity(m),
        e_b: Vec::with_capacity(m),
        quad_error: 0.0,
    };
    let mut worst = 0.0f64;
    for i in 0..m {
        let vi = data.v()[i];
        let yi = data.y()[i];
        let resid_scale = (yi.abs() + fit_scale).max(1.0);

        let (e_b, e1) = post1d.expect(|a| node(a).b[i], 0.0)?;
        let (e_bfit, e2) = post1d.expect(|a| node(a).b[i] * node(a).fitted[i], fit_scale)?;
        let (e_g1, e3) = post1d.expect(|a| vi * (1.0 - node(a).b[i]), 0.0)?;
        let (e_g2, e4) = post1d.expect(|a| node(a).g2[i], 0.0)?;
        let (e_br, e5) = post1d.expect(
            |a| {
                let nd = node(a);
                nd.b[i] * (yi - nd.fitted[i])
            },
            resid_scale,
        )?;
        let (e_b2r2, e6) = post1d.expect(
            |a| {
                let nd = node(a);
                let br = nd.b[i] * (yi - nd.fitted[i]);
                br * br
            },
            resid_scale * resid_scale,
        )?;

        let theta = (1.0 - e_b) * yi + e_bfit;
        let g3 = (e_b2r2 - e_br * e_br).max(0.0);
        out.theta.push(theta);
        out.g1.push(e_g1);
        out.g2.push(e_g2);
        out.g3.push(g3);
        out.variance.push(e_g1 + e_g2 + g3);
        out.e_b.push(e_b);
        worst = worst.max(e1).max(e2).max(e3).max(e4).max(e5).max(e6);
    }
    out.quad_error = worst;
    Ok(out)
}

/// Exact balanced-case posterior of the shrinkage weight `B = V/(V+A)`
/// under the flat prior on (β, A):
/// π(B|y) ∝ B^{(m-p-4)/2} exp(-B S/(2V)) on (0, 1). Moments come from
/// regularized incomplete-gamma ratios; the mode is min((m-p-4)V/S, 1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BalancedPosteriorB {
    pub s: f64,
    pub v: f64,
    pub m: usize,
    pub p: usize,
    pub e_b: f64,
    pub var_b: f64,
    pub mode_b: f64,
}

pub fn balanced_posterior_b(data: &AreaDataset) -> Result<BalancedPosteriorB> {
    let v = data.balanced_variance()?;
    let (m, p) = (data.m(), data.p());
    if m <= p + 2 {
        return Err(Error::TooFewAreas {
            m,
            required: p + 2,
            context: "posterior of B",
        });
    }
    let s = ols_fit(data)?.rss;
    let shape = (m - p - 2) as f64 / 2.0; // B^{shape-1} e^{-λB}
    let lambda = s / (2.0 * v);
    let (e_b, e_b2) = if lambda <= 0.0 {
        // no residual information: pure power density on (0,1)
        (shape / (shape + 1.0), shape / (shape + 2.0))
    } else {
        // γ(a, λ)-ratios: E B^k = λ^{-k} Γ(a+k) P(a+k, λ) / (Γ(a) P(a, λ))
        let p0 = reg_lower_gamma(shape, lambda);
        let p1 = reg_lower_gamma(shape + 1.0, lambda);
        let p2 = reg_lower_gamma(shape + 2.0, lambda);
        let e1 = (ln_gamma(shape + 1.0) - ln_gamma(shape)).exp() * p1 / (lambda * p0);
        let e2 = (ln_gamma(shape + 2.0) - ln_gamma(shape)).exp() * p2 / (lambda * lambda * p0);
        (e1, e2)
    };
    let mode = if s > 0.0 {
        (((m as f64 - p as f64 - 4.0) * v) / s).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(BalancedPosteriorB {
        s,
        v,
        m,
        p,
        e_b,
        var_b: (e_b2 - e_b * e_b).max(0.0),
        mode_b: mode,
    })
}

/// Large-m closed-form approximations to the balanced-case posterior
/// moments: the point estimate is the James–Stein estimate, and the
/// posterior variance picks up an area-specific residual term,
/// `V(1-B̂) + V B̂ h_ii + 2(m-p-2) V² r_i² / S²` with `B̂ = (m-p-2)V/S`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorrisApprox {
    pub theta: Vec<f64>,
    pub variance: Vec<f64>,
}

pub fn morris_posterior_approx(data: &AreaDataset) -> Result<MorrisApprox> {
    let js = james_stein(data, false)?;
    if js.degenerate_residuals {
        return Err(Error::BoundaryEstimate(
            "residual sum of squares is zero; the closed-form posterior approximation divides by S"
                .into(),
        ));
    }
    let v = js.v_common;
    let m = data.m();
    let p = data.p();
    let b = js.b_hat_eb;
    let mut variance = Vec::with_capacity(m);
    for i in 0..m {
        let fitted: f64 = data
            .x_row(i)
            .iter()
            .zip(&js.beta_ols)
            .map(|(x, c)| x * c)
            .sum();
        let r = data.y()[i] - fitted;
        let third = 2.0 * (m - p - 2) as f64 * v * v * r * r / (js.s * js.s);
        variance.push(v * (1.0 - b) + v * b * js.h_diag[i] + third);
    }
    Ok(MorrisApprox {
        theta: js.estimate,
        variance,
    })
}

/// Hierarchical Bayes for the general-covariance model: flat prior on
/// (β, A), matrix shrinkage `B(A) = (V + AI)⁻¹V`, posterior covariance
/// `V(I - E[B]) + E[B X G⁻¹ Xᵀ Bᵀ] + Var[B(y - Xβ̃(A))]`.
#[derive(Debug, Clone)]
pub struct GeneralVHb {
    pub theta: Vec<f64>,
    pub covariance: SymmetricMatrix,
    pub e_a: f64,
    pub normalizer: f64,
    pub quad_error: f64,
}

pub fn general_v_hb(model: &GeneralVModel, tol: f64) -> Result<GeneralVHb> {
    let (m, p) = (model.m(), model.p());
    if m <= p + 2 {
        return Err(Error::ImproperPosterior { m, p });
    }
    let mean_diag = (0..m).map(|i| model.v().get(i, i)).sum::<f64>() / m as f64;
    let log_density = |a: f64| -> f64 {
        match model.gls_parts(a) {
            Ok(parts) => {
                let resid: Vec<f64> = (0..m).map(|i| model.y()[i] - parts.fitted[i]).collect();
                let q: f64 = parts
                    .va_chol
                    .solve(&resid)
                    .iter()
                    .zip(&resid)
                    .map(|(u, r)| u * r)
                    .sum();
                -0.5 * (parts.va_chol.log_det() + parts.gram_chol.log_det() + q)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let post = Posterior1d::build(log_density, mean_diag, tol)?;
    let (e_a, e_a_err) = if m > p + 4 {
        post.expect(|a| a, 0.0)?
    } else {
        (f64::INFINITY, 0.0)
    };

    // matrix-valued moments on the normalizer-refined rule
    let rule = post.rule();
    let mut z = 0.0;
    let mut theta = vec![0.0; m];
    let mut e_shrunk = vec![0.0; m];
    let mut e_ss = SymmetricMatrix::zeros(m);
    let mut term12 = SymmetricMatrix::zeros(m);
    for &(a, w) in &rule {
        if w == 0.0 {
            continue;
        }
        z += w;
        let parts = model.gls_parts(a)?;
        let resid: Vec<f64> = (0..m).map(|i| model.y()[i] - parts.fitted[i]).collect();
        let v_resid = model.v().mul_vec(&resid);
        let shrunk = parts.va_chol.solve(&v_resid); // B(y - Xβ̃)
        for i in 0..m {
            theta[i] += w * (model.y()[i] - shrunk[i]);
            e_shrunk[i] += w * shrunk[i];
        }
        // V(I-B) = V - V(V+AI)⁻¹V
        let va_inv_v = parts.va_chol.solve_matrix(&model.v().to_dense());
        let v_vainv_v = model.v().to_dense().mul(&va_inv_v);
        // BX = (V+AI)⁻¹VX, then BX G⁻¹ XᵀBᵀ
        let bx = parts
            .va_chol
            .solve_matrix(&model.v().to_dense().mul(model.x()));
        let ginv_bxt = parts.gram_chol.solve_matrix(&bx.transpose());
        let t2 = bx.mul(&ginv_bxt);
        for i in 0..m {
            for j in 0..=i {
                let t1 = model.v().get(i, j) - 0.5 * (v_vainv_v.get(i, j) + v_vainv_v.get(j, i));
                let t2s = 0.5 * (t2.get(i, j) + t2.get(j, i));
                term12.add_to(i, j, w * (t1 + t2s));
                e_ss.add_to(
                    i,
                    j,
                    w * 0.5 * (shrunk[i] * shrunk[j] + shrunk[j] * shrunk[i]),
                );
            }
        }
    }
    for t in theta.iter_mut() {
        *t /= z;
    }
    let covariance = SymmetricMatrix::from_fn(m, |i, j| {
        term12.get(i, j) / z + e_ss.get(i, j) / z - (e_shrunk[i] / z) * (e_shrunk[j] / z)
    });
    Ok(GeneralVHb {
        theta,
        covariance,
        e_a,
        normalizer: post.normalizer,
        quad_error: post.norm_quad.abs_error_estimate.max(e_a_err),
    })
}
