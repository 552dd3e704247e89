//! Adaptive Gauss–Kronrod (7/15) quadrature for complex integrands.

use num_complex::Complex64;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 48;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-14,
            rel: 1e-12,
        }
    }
}

fn kronrod<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kron += pair * WGK[j];
        if j % 2 == 1 {
            gauss += pair * WG[j / 2];
        }
    }
    (kron * h, ((kron - gauss) * h).norm())
}

/// `∫_a^b f` with the interval pre-split at `breaks` (points outside `(a, b)` are ignored).
pub fn integrate<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<Complex64> {
    let mut points = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    inner.dedup();
    points.extend(inner);
    points.push(b);
    let pieces = (points.len() - 1) as f64;
    let mut total = Complex64::new(0.0, 0.0);
    for w in points.windows(2) {
        let piece_tol = Tolerance {
            abs: tol.abs / pieces,
            rel: tol.rel,
        };
        total += adapt(&f, w[0], w[1], piece_tol, 0)?;
    }
    Ok(total)
}

fn adapt<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    tol: Tolerance,
    depth: u32,
) -> Result<Complex64> {
    let (value, err) = kronrod(f, a, b);
    if err <= tol.abs.max(tol.rel * value.norm()) {
        return Ok(value);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::Numeric(format!(
            "quadrature did not converge on [{a:.6e}, {b:.6e}]: error estimate {err:.3e}, value {value:.6e}"
        )));
    }
    let mid = 0.5 * (a + b);
    let half = Tolerance {
        abs: tol.abs / 2.0,
        rel: tol.rel,
    };
    Ok(adapt(f, a, mid, half, depth + 1)? + adapt(f, mid, b, half, depth + 1)?)
}
