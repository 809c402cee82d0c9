//! Adaptive Gauss–Kronrod quadrature on finite intervals, the unit
//! interval, and the positive half-line.
//!
//! The half-line integrator substitutes A = t/(1-t) and integrates over
//! t in (0, 1); posteriors of between-area variances have long right tails,
//! so a fixed truncation point would be unsafe while the transformed
//! integrand simply decays polynomially toward t = 1. Kronrod nodes are
//! interior, so integrands are never evaluated at the endpoints.

use crate::error::{Error, Result};

/// Outcome of an adaptive quadrature run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    /// Estimated absolute error; the true error is below this for smooth
    /// unimodal integrands.
    pub abs_error_estimate: f64,
    /// Number of integrand evaluations performed (>= 15).
    pub evaluations: usize,
}

// 15-point Kronrod nodes on [-1, 1] (positive half; symmetric).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// 7-point Gauss weights (nodes are XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One G7/K15 panel on [a, b]: returns (kronrod value, error estimate).
fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let h = 0.5 * (b - a);
    let center = 0.5 * (a + b);

    let fc = f(center);
    let mut resk = WGK[7] * fc;
    let mut resg = WG[3] * fc;
    let mut resabs = WGK[7] * fc.abs();
    let mut fv = [0.0f64; 15];
    fv[7] = fc;

    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv[j] = f1;
        fv[14 - j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }

    let reskh = resk * 0.5;
    let mut resasc = WGK[7] * (fc - reskh).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv[j] - reskh).abs() + (fv[14 - j] - reskh).abs());
    }

    let value = resk * h;
    let resabs = resabs * h.abs();
    let resasc = resasc * h.abs();
    let mut err = ((resk - resg) * h).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * 1.0f64.min((200.0 * err / resasc).powf(1.5));
    }
    let round_off = 50.0 * f64::EPSILON * resabs;
    if round_off > f64::MIN_POSITIVE {
        err = err.max(round_off);
    }
    (value, err)
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

const MAX_SEGMENTS: usize = 4096;

/// Adaptive integration of `f` over a finite interval to relative
/// tolerance `tol`, optionally seeded with interior split points.
pub fn integrate_finite_with_splits(
    f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    splits: &[f64],
) -> Result<QuadratureResult> {
    adaptive(f, a, b, tol, splits, 0.0).map(|(r, _)| r)
}

/// As above, but convergence also accepts an absolute error floor (for
/// expectation integrands that may nearly cancel), and the final segment
/// list is returned so callers can reuse the refined rule.
pub(crate) fn adaptive(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    splits: &[f64],
    abs_floor: f64,
) -> Result<(QuadratureResult, Vec<(f64, f64)>)> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "quadrature needs tol > 0, got {tol}"
        )));
    }
    if !(b > a) {
        return Err(Error::Domain(format!(
            "empty integration interval [{a}, {b}]"
        )));
    }
    let mut cuts: Vec<f64> = vec![a];
    for &s in splits {
        if s > a && s < b {
            cuts.push(s);
        }
    }
    cuts.push(b);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();

    let mut evals = 0usize;
    let mut segs: Vec<Segment> = Vec::new();
    for w in cuts.windows(2) {
        let (v, e) = gk15(&mut f, w[0], w[1]);
        evals += 15;
        segs.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }

    loop {
        let total: f64 = segs.iter().map(|s| s.value).sum();
        let err: f64 = segs.iter().map(|s| s.error).sum();
        let target = (tol * total.abs()).max(abs_floor).max(f64::MIN_POSITIVE);
        let done = err <= target || err <= 1e-300;
        if done || segs.len() >= MAX_SEGMENTS {
            if !done {
                return Err(Error::NonConvergence(format!(
                    "quadrature error {err:e} above target {target:e} after {evals} evaluations"
                )));
            }
            let bounds = segs.iter().map(|s| (s.a, s.b)).collect();
            return Ok((
                QuadratureResult {
                    value: total,
                    abs_error_estimate: err,
                    evaluations: evals,
                },
                bounds,
            ));
        }
        // split the worst segment
        let (worst, _) = segs
            .iter()
            .enumerate()
            .max_by(|(_, s), (_, t)| s.error.partial_cmp(&t.error).unwrap())
            .unwrap();
        let s = segs[worst];
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            // interval no longer splittable in f64; accept what we have
            let bounds = segs.iter().map(|s| (s.a, s.b)).collect();
            return Ok((
                QuadratureResult {
                    value: segs.iter().map(|s| s.value).sum(),
                    abs_error_estimate: err,
                    evaluations: evals,
                },
                bounds,
            ));
        }
        let (v1, e1) = gk15(&mut f, s.a, mid);
        let (v2, e2) = gk15(&mut f, mid, s.b);
        evals += 30;
        segs[worst] = Segment {
            a: s.a,
            b: mid,
            value: v1,
            error: e1,
        };
        segs.push(Segment {
            a: mid,
            b: s.b,
            value: v2,
            error: e2,
        });
    }
}

/// Expand segment bounds into explicit Kronrod nodes and weights, so a rule
/// refined against one integrand can be reused on related ones.
pub(crate) fn segment_nodes(bounds: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(bounds.len() * 15);
    for &(a, b) in bounds {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        rule.push((c, WGK[7] * h));
        for j in 0..7 {
            let x = h * XGK[j];
            rule.push((c - x, WGK[j] * h));
            rule.push((c + x, WGK[j] * h));
        }
    }
    rule
}

/// Adaptive integration over the unit interval (0, 1).
pub fn integrate_unit_interval(f: impl FnMut(f64) -> f64, tol: f64) -> Result<QuadratureResult> {
    integrate_finite_with_splits(f, 0.0, 1.0, tol, &[])
}

/// Adaptive integration of `g` over (0, ∞) via the substitution
/// A = t/(1-t).
pub fn integrate_positive_halfline(
    mut g: impl FnMut(f64) -> f64,
    tol: f64,
) -> Result<QuadratureResult> {
    integrate_unit_interval(
        move |t| {
            let om = 1.0 - t;
            g(t / om) / (om * om)
        },
        tol,
    )
}
