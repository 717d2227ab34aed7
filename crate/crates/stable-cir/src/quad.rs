//! Adaptive Gauss-Kronrod quadrature.
//!
//! A 7-15 point Gauss-Kronrod pair drives globally adaptive bisection:
//! the interval with the largest error estimate is split until the summed
//! error estimate drops below the requested absolute tolerance.

use crate::error::{Error, Result};

/// Abscissae of the 15-point Kronrod rule on [-1,1] (positive half, descending).
/// Even-indexed entries are also the 7-point Gauss abscissae.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639,
    0.949_107_912_342_758_525,
    0.864_864_423_359_769_073,
    0.741_531_185_599_394_440,
    0.586_087_235_467_691_130,
    0.405_845_151_377_397_167,
    0.207_784_955_007_898_468,
    0.000_000_000_000_000_000,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_553,
    0.104_790_010_322_250_184,
    0.140_653_259_715_525_919,
    0.169_004_726_639_267_903,
    0.190_350_578_064_785_410,
    0.204_432_940_075_298_892,
    0.209_482_141_084_727_828,
];

/// 7-point Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693,
    0.279_705_391_489_276_668,
    0.381_830_050_505_118_945,
    0.417_959_183_673_469_388,
];

/// One Gauss-Kronrod pass over [a,b]: returns (kronrod value, error estimate).
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut res_gauss = WG[3] * fc;
    let mut res_kronrod = WGK[7] * fc;
    let mut res_abs = WGK[7] * fc.abs();

    let mut fv = [0.0f64; 15];
    fv[7] = fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv[j] = f1;
        fv[14 - j] = f2;
        res_kronrod += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_gauss += WG[j / 2] * (f1 + f2);
        }
    }

    let mean = 0.5 * res_kronrod;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for (j, v) in fv.iter().enumerate().take(7) {
        res_asc += WGK[j] * ((v - mean).abs() + (fv[14 - j] - mean).abs());
    }

    let value = res_kronrod * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();

    // QUADPACK-style rescaled error
    let mut err = ((res_kronrod - res_gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / res_asc).powf(1.5);
        err = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    let tiny = f64::MIN_POSITIVE / (50.0 * f64::EPSILON);
    if res_abs > tiny {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

#[derive(Debug, Clone, Copy)]
struct Interval {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

/// Integrate `f` over [a,b] to absolute tolerance `abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<QuadResult> {
    integrate_with_limit(f, a, b, abs_tol, 4096)
}

/// As [`integrate`] with an explicit subdivision cap.
pub fn integrate_with_limit<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain("integration bounds must be finite".into()));
    }
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            subdivisions: 0,
        });
    }

    let (v, e) = gk15(&f, a, b);
    let mut heap: Vec<Interval> = vec![Interval {
        a,
        b,
        value: v,
        error: e,
    }];
    let mut total_err = e;
    let mut subdivisions = 0usize;

    while total_err > abs_tol {
        if subdivisions >= max_subdivisions {
            return Err(Error::Quadrature(format!(
                "tolerance {abs_tol:.1e} not reached after {subdivisions} subdivisions \
                 (error estimate {total_err:.1e})"
            )));
        }
        // pop worst interval
        let (idx, _) = heap
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("heap nonempty");
        let worst = heap.swap_remove(idx);
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval too small to split further; accept its estimate
            heap.push(Interval {
                error: 0.0,
                ..worst
            });
            total_err -= worst.error;
            continue;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        total_err += e1 + e2 - worst.error;
        heap.push(Interval {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Interval {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        subdivisions += 1;
    }

    // sum leaf panels once at the end (avoids cancellation drift)
    let total_val = heap.iter().map(|iv| iv.value).sum();
    total_err = heap.iter().map(|iv| iv.error).sum();
    Ok(QuadResult {
        value: total_val,
        error: total_err,
        subdivisions,
    })
}

/// The 15 Kronrod nodes and weights mapped to [a,b]; used to build fixed
/// composite grids where the integrand is known to be smooth per panel.
pub fn k15_panel(a: f64, b: f64) -> ([f64; 15], [f64; 15]) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut xs = [0.0f64; 15];
    let mut ws = [0.0f64; 15];
    for j in 0..7 {
        xs[j] = c - h * XGK[j];
        xs[14 - j] = c + h * XGK[j];
        ws[j] = h * WGK[j];
        ws[14 - j] = h * WGK[j];
    }
    xs[7] = c;
    ws[7] = h * WGK[7];
    (xs, ws)
}
