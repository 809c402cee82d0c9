//! Shared scaffolding for one-dimensional posteriors of a nonnegative
//! variance-type parameter: mode location, bracketing of the density by a
//! 40-nat drop, and expectations by adaptive quadrature on the transformed
//! variable t = A / (s + A).
//!
//! All densities are handled in log scale shifted by the log of the mode
//! density, so overflow never enters; the transform keeps the long right
//! tails these posteriors are known for inside the unit interval.

use crate::error::{Error, Result};
use crate::numeric::quad::{adaptive, segment_nodes, QuadratureResult};
use crate::numeric::root::brent_root;
use std::cell::RefCell;
use std::collections::BTreeMap;

/// Nats below the mode at which the density is considered negligible for
/// grid construction (the integration itself still covers the full line).
const DROP_NATS: f64 = 40.0;

pub(crate) struct Posterior1d<F: Fn(f64) -> f64> {
    log_density: F,
    /// substitution scale: t = A/(scale+A)
    pub scale: f64,
    pub mode: f64,
    pub log_max: f64,
    /// left/right points where the log density has dropped 40 nats
    pub lower_drop: f64,
    pub upper_drop: f64,
    /// ∫ exp(log_density - log_max) dA
    pub normalizer: f64,
    pub norm_quad: QuadratureResult,
    pub tol: f64,
    t_splits: Vec<f64>,
    /// memo of log-density evaluations keyed by the bit pattern of A
    /// (nonnegative doubles order correctly by bits)
    cache: RefCell<BTreeMap<u64, f64>>,
    /// t-space rule refined on the normalizer, for matrix-valued sums
    rule_bounds: Vec<(f64, f64)>,
}

pub(crate) struct Posterior1dParams {
    pub scale: f64,
    pub mode: f64,
    pub log_max: f64,
    pub lower_drop: f64,
    pub upper_drop: f64,
    pub tol: f64,
}

impl<F: Fn(f64) -> f64> Posterior1d<F> {
    /// Locate the mode and drop points of `log_density`, then integrate the
    /// normalizer. `scale_hint` sets the order of magnitude scanned.
    pub fn build(log_density: F, scale_hint: f64, tol: f64) -> Result<Self> {
        if !(scale_hint > 0.0) || !scale_hint.is_finite() {
            return Err(Error::Domain(format!(
                "scale hint must be positive, got {scale_hint}"
            )));
        }
        // coarse geometric scan for the mode, including the origin
        let mut best_a = 0.0;
        let mut best = log_density(0.0);
        let mut grid = vec![0.0];
        let n_scan = 121;
        for k in 0..n_scan {
            let e = -10.0 + 20.0 * k as f64 / (n_scan - 1) as f64;
            let a = scale_hint * 10f64.powf(e);
            grid.push(a);
            let f = log_density(a);
            if f > best || !best.is_finite() {
                best = f;
                best_a = a;
            }
        }
        if !best.is_finite() {
            return Err(Error::NonConvergence(
                "posterior density is nowhere finite on the scanned grid".into(),
            ));
        }
        // golden-section refinement between the scan neighbors of the max
        let idx = grid.iter().position(|&a| a == best_a).unwrap();
        let lo = if idx == 0 { 0.0 } else { grid[idx - 1] };
        let hi = if idx + 1 < grid.len() {
            grid[idx + 1]
        } else {
            best_a * 10.0
        };
        let (mode, log_max) = golden_max(&log_density, lo, hi, 120);
        let (mode, log_max) = if log_max >= best {
            (mode, log_max)
        } else {
            (best_a, best)
        };

        // right drop points: 40 nats bounds the support for grid seeding,
        // 3 nats tracks the bulk and sets the substitution scale (a scale
        // taken from the far tail would cram the mass against t = 0)
        let drop_right = |nats: f64| -> Result<f64> {
            let target = log_max - nats;
            let mut hi = (mode.max(f64::MIN_POSITIVE)).max(scale_hint * 1e-9);
            let mut guard = 0;
            while log_density(hi) > target {
                hi *= 2.0;
                guard += 1;
                if guard > 4000 {
                    return Err(Error::NonConvergence(
                        "posterior density does not decay on the right (improper?)".into(),
                    ));
                }
            }
            if log_density(mode) <= target {
                Ok(hi)
            } else {
                brent_root(|a| log_density(a) - target, mode, hi, 1e-6 * hi.max(1.0))
            }
        };
        let upper_drop = drop_right(DROP_NATS)?;
        let bulk = drop_right(3.0)?;
        let target = log_max - DROP_NATS;
        // left drop point, when the density vanishes toward the origin
        let tiny = (mode.max(scale_hint)) * 1e-14;
        let lower_drop = if log_density(tiny) < target && mode > tiny {
            brent_root(
                |a| log_density(a) - target,
                tiny,
                mode,
                1e-6 * mode.max(1.0),
            )?
        } else {
            0.0
        };

        let scale = mode.max(bulk).max(scale_hint * 1e-12);
        let to_t = |a: f64| a / (scale + a);
        let mut t_splits = vec![to_t(upper_drop)];
        if mode > 0.0 {
            t_splits.push(to_t(mode));
        }
        if lower_drop > 0.0 {
            t_splits.push(to_t(lower_drop));
        }

        let mut post = Posterior1d {
            log_density,
            scale,
            mode,
            log_max,
            lower_drop,
            upper_drop,
            normalizer: 0.0,
            norm_quad: QuadratureResult {
                value: 0.0,
                abs_error_estimate: 0.0,
                evaluations: 0,
            },
            tol,
            t_splits,
            cache: RefCell::new(BTreeMap::new()),
            rule_bounds: Vec::new(),
        };
        let (norm, bounds) = post.integrate_with_rule(|_| 1.0, 0.0)?;
        if !(norm.value > 0.0) || !norm.value.is_finite() {
            return Err(Error::NonConvergence(format!(
                "posterior normalizer is not a positive finite number: {}",
                norm.value
            )));
        }
        post.normalizer = norm.value;
        post.norm_quad = norm;
        post.rule_bounds = bounds;
        Ok(post)
    }

    /// Rebuild from previously located parameters (skips the searches).
    pub fn from_params(log_density: F, params: Posterior1dParams) -> Result<Self> {
        let Posterior1dParams {
            scale,
            mode,
            log_max,
            lower_drop,
            upper_drop,
            tol,
        } = params;
        let to_t = |a: f64| a / (scale + a);
        let mut t_splits = vec![to_t(upper_drop)];
        if mode > 0.0 {
            t_splits.push(to_t(mode));
        }
        if lower_drop > 0.0 {
            t_splits.push(to_t(lower_drop));
        }
        let mut post = Posterior1d {
            log_density,
            scale,
            mode,
            log_max,
            lower_drop,
            upper_drop,
            normalizer: 0.0,
            norm_quad: QuadratureResult {
                value: 0.0,
                abs_error_estimate: 0.0,
                evaluations: 0,
            },
            tol,
            t_splits,
            cache: RefCell::new(BTreeMap::new()),
            rule_bounds: Vec::new(),
        };
        let (norm, bounds) = post.integrate_with_rule(|_| 1.0, 0.0)?;
        post.normalizer = norm.value;
        post.norm_quad = norm;
        post.rule_bounds = bounds;
        Ok(post)
    }

    fn density_shifted(&self, a: f64) -> f64 {
        let key = a.to_bits();
        if let Some(&v) = self.cache.borrow().get(&key) {
            return (v - self.log_max).exp();
        }
        let v = (self.log_density)(a);
        self.cache.borrow_mut().insert(key, v);
        (v - self.log_max).exp()
    }

    /// ∫ f(A) exp(log_density(A) - log_max) dA with adaptive refinement;
    /// `f_scale` sets the absolute error floor tol·normalizer·f_scale.
    fn integrate_with_rule(
        &self,
        f: impl Fn(f64) -> f64,
        f_scale: f64,
    ) -> Result<(QuadratureResult, Vec<(f64, f64)>)> {
        let s = self.scale;
        let integrand = |t: f64| {
            let om = 1.0 - t;
            let a = s * t / om;
            let jac = s / (om * om);
            let w = self.density_shifted(a);
            if w == 0.0 {
                return 0.0; // far tails: avoid 0·inf at t -> 1
            }
            f(a) * w * jac
        };
        let floor = self.tol * self.normalizer.max(f64::MIN_POSITIVE) * f_scale;
        adaptive(integrand, 0.0, 1.0, self.tol, &self.t_splits, floor)
    }

    /// Posterior expectation E[f(A)] with an absolute floor scaled by
    /// `f_scale` (a bound on the size of f near the bulk of the mass).
    pub fn expect(&self, f: impl Fn(f64) -> f64, f_scale: f64) -> Result<(f64, f64)> {
        let (q, _) = self.integrate_with_rule(f, f_scale)?;
        Ok((
            q.value / self.normalizer,
            q.abs_error_estimate / self.normalizer,
        ))
    }

    /// Posterior mass of {A <= a0}.
    pub fn mass_below(&self, a0: f64) -> Result<f64> {
        if a0 <= 0.0 {
            return Ok(0.0);
        }
        let t0 = a0 / (self.scale + a0);
        let s = self.scale;
        let integrand = |t: f64| {
            let om = 1.0 - t;
            let a = s * t / om;
            let jac = s / (om * om);
            let w = self.density_shifted(a);
            if w == 0.0 {
                0.0
            } else {
                w * jac
            }
        };
        // plain fixed-target integration over (0, t0)
        let floor = self.tol * self.normalizer;
        let (q, _) = adaptive(integrand, 0.0, t0, self.tol, &[], floor)?;
        Ok((q.value / self.normalizer).clamp(0.0, 1.0))
    }

    /// Fixed quadrature rule (A, weight) in density-shifted units, refined
    /// against the normalizer: Σ w_k ≈ normalizer. For vector/matrix-valued
    /// expectations, sum payloads against these weights and divide by the
    /// normalizer.
    pub fn rule(&self) -> Vec<(f64, f64)> {
        let s = self.scale;
        segment_nodes(&self.rule_bounds)
            .into_iter()
            .map(|(t, wt)| {
                let om = 1.0 - t;
                let a = s * t / om;
                let jac = s / (om * om);
                let w = self.density_shifted(a);
                (a, if w == 0.0 { 0.0 } else { w * jac * wt })
            })
            .collect()
    }

    /// All log-density evaluations made so far, in increasing A.
    pub fn evaluations(&self) -> (Vec<f64>, Vec<f64>) {
        let cache = self.cache.borrow();
        let mut a = Vec::with_capacity(cache.len());
        let mut ld = Vec::with_capacity(cache.len());
        for (&bits, &v) in cache.iter() {
            a.push(f64::from_bits(bits));
            ld.push(v);
        }
        (a, ld)
    }
}

/// Golden-section maximization on [lo, hi].
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.6180339887498949;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if (b - a).abs() <= 1e-12 * (1.0 + b.abs()) {
            break;
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_posterior_moments() {
        // density ∝ a^3 e^{-a/2}: Gamma(4, scale 2), mean 8, mode 6
        let post = Posterior1d::build(|a: f64| 3.0 * a.ln() - a / 2.0, 1.0, 1e-9).unwrap();
        assert!((post.mode - 6.0).abs() < 1e-4, "mode {}", post.mode);
        let (mean, _) = post.expect(|a| a, 10.0).unwrap();
        assert!((mean - 8.0).abs() < 1e-6, "mean {mean}");
        let (m2, _) = post.expect(|a| a * a, 100.0).unwrap();
        assert!((m2 - 80.0).abs() < 1e-4, "second moment {m2}"); // 4·5·4
    }

    #[test]
    fn decreasing_density_mode_at_origin() {
        // exponential: mode at 0, mean 1/3
        let post = Posterior1d::build(|a: f64| -3.0 * a, 1.0, 1e-9).unwrap();
        assert!(post.mode < 1e-6, "mode {}", post.mode);
        let (mean, _) = post.expect(|a| a, 1.0).unwrap();
        assert!((mean - 1.0 / 3.0).abs() < 1e-7, "mean {mean}");
    }

    #[test]
    fn heavy_tail_mean_correct() {
        // density ∝ (1 + a/s)^{-7} with s = 1e6: mean s/5 (Pareto-type)
        let s = 1.0e6;
        let post = Posterior1d::build(move |a: f64| -7.0 * (1.0 + a / s).ln(), 1.0, 1e-9).unwrap();
        let (mean, _) = post.expect(|a| a, s).unwrap();
        let exact = s / 5.0;
        assert!(
            (mean - exact).abs() < 1e-5 * exact,
            "mean {mean} vs {exact}"
        );
    }

    #[test]
    fn rule_reproduces_normalizer_and_mean() {
        let post = Posterior1d::build(|a: f64| 2.0 * a.ln() - a, 1.0, 1e-10).unwrap();
        let rule = post.rule();
        let z: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert!((z - post.normalizer).abs() < 1e-8 * post.normalizer);
        let mean_rule: f64 = rule.iter().map(|&(a, w)| a * w).sum::<f64>() / z;
        assert!((mean_rule - 3.0).abs() < 1e-6, "{mean_rule}"); // Gamma(3,1) mean
    }

    #[test]
    fn mass_below_splits_correctly() {
        // exponential(1): P(A <= ln 2) = 1/2
        let post = Posterior1d::build(|a: f64| -a, 1.0, 1e-10).unwrap();
        let half = post.mass_below(std::f64::consts::LN_2).unwrap();
        assert!((half - 0.5).abs() < 1e-8, "{half}");
    }

    #[test]
    fn scale_hint_can_be_far_off() {
        // hint off by 6 orders of magnitude still lands the right mean
        let post = Posterior1d::build(|a: f64| 3.0 * a.ln() - a / 2.0, 1.0e6, 1e-9).unwrap();
        let (mean, _) = post.expect(|a| a, 10.0).unwrap();
        assert!((mean - 8.0).abs() < 1e-5, "mean {mean}");
    }
}
