//! Adaptive Gauss-Kronrod quadrature on a finite interval.

use crate::{MedZimError, Result};
use num_traits::Float;

// 15-point Kronrod rule with embedded 7-point Gauss rule (positive half,
// center last). Standard QUADPACK abscissae and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_2,
    0.949_107_912_342_758_524_5,
    0.864_864_423_359_769_072_8,
    0.741_531_185_599_394_439_9,
    0.586_087_235_467_691_130_3,
    0.405_845_151_377_397_166_9,
    0.207_784_955_007_898_467_6,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_96,
    0.063_092_092_629_978_553_29,
    0.104_790_010_322_250_183_8,
    0.140_653_259_715_525_918_8,
    0.169_004_726_639_267_902_8,
    0.190_350_578_064_785_409_9,
    0.204_432_940_075_298_892_4,
    0.209_482_141_084_727_828_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_3,
    0.279_705_391_489_276_667_9,
    0.381_830_050_505_118_944_9,
    0.417_959_183_673_469_387_8,
];

/// Tolerances and subdivision budget for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_subdivisions: 200,
        }
    }
}

fn gk15<F: Float>(f: &impl Fn(F) -> F, a: F, b: F) -> (F, F) {
    let half = F::from(0.5).unwrap();
    let center = half * (a + b);
    let half_len = half * (b - a);
    let fc = f(center);
    let mut kronrod = fc * F::from(WGK[7]).unwrap();
    let mut gauss = fc * F::from(WG[3]).unwrap();
    for j in 0..7 {
        let dx = half_len * F::from(XGK[j]).unwrap();
        let fsum = f(center - dx) + f(center + dx);
        kronrod = kronrod + F::from(WGK[j]).unwrap() * fsum;
        if j % 2 == 1 {
            gauss = gauss + F::from(WG[j / 2]).unwrap() * fsum;
        }
    }
    kronrod = kronrod * half_len;
    gauss = gauss * half_len;
    (kronrod, (kronrod - gauss).abs())
}

/// Integrates `f` over `[a, b]`, bisecting the segment with the largest
/// error estimate until the tolerance is met. Errors out when the budget of
/// `max_subdivisions` is exhausted first.
pub fn integrate<F: Float>(
    f: impl Fn(F) -> F,
    a: F,
    b: F,
    spec: &QuadratureSpec,
) -> Result<F> {
    if !(b > a) {
        return Ok(F::zero());
    }
    let mut segments: Vec<(F, F, F, F)> = Vec::with_capacity(32);
    let (v, e) = gk15(&f, a, b);
    segments.push((a, b, v, e));
    for _ in 0..spec.max_subdivisions {
        let total: F = segments.iter().fold(F::zero(), |s, seg| s + seg.2);
        let err: F = segments.iter().fold(F::zero(), |s, seg| s + seg.3);
        let tol = F::from(spec.abs_tol)
            .unwrap()
            .max(F::from(spec.rel_tol).unwrap() * total.abs());
        if err <= tol {
            return Ok(total);
        }
        // split the worst segment
        let (idx, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (lo, hi, _, _) = segments.swap_remove(idx);
        let mid = F::from(0.5).unwrap() * (lo + hi);
        if !(mid > lo && mid < hi) {
            // interval no longer splittable; keep going with what we have
            let (v, e) = gk15(&f, lo, hi);
            segments.push((lo, hi, v, e));
            continue;
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        segments.push((lo, mid, v1, e1));
        segments.push((mid, hi, v2, e2));
    }
    let total: F = segments.iter().fold(F::zero(), |s, seg| s + seg.2);
    let err: F = segments.iter().fold(F::zero(), |s, seg| s + seg.3);
    let tol = F::from(spec.abs_tol)
        .unwrap()
        .max(F::from(spec.rel_tol).unwrap() * total.abs());
    if err <= tol {
        Ok(total)
    } else {
        Err(MedZimError::Quadrature {
            index: 0,
            detail: format!(
                "error estimate {:e} above tolerance after {} subdivisions",
                err.to_f64().unwrap_or(f64::NAN),
                spec.max_subdivisions
            ),
        })
    }
}
