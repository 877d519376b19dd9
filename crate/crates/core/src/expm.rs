//! Dense complex matrix exponential by scaling and squaring with a degree-13
//! Padé approximant (Higham 2005).

use ndarray::Array2;
use ndarray_linalg::{FactorizeInto, Solve};
use num_complex::Complex64 as C64;

use crate::error::Result;

const THETA_13: f64 = 5.371_920_351_148_152;

const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(a: &Array2<C64>) -> f64 {
    a.columns().into_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(A)` for a square complex matrix.
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return Ok(Array2::zeros((0, 0)));
    }

    let norm = one_norm(a);
    let s = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as i32 } else { 0 };
    let scaled = a * C64::new(2f64.powi(-s), 0.0);

    let ident: Array2<C64> = Array2::eye(n);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let b = |k: usize| C64::new(B13[k], 0.0);

    let u_inner = &a6 * b(13) + &a4 * b(11) + &a2 * b(9);
    let u = scaled.dot(&(a6.dot(&u_inner) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &ident * b(1)));
    let v_inner = &a6 * b(12) + &a4 * b(10) + &a2 * b(8);
    let v = a6.dot(&v_inner) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &ident * b(0);

    let p = &v + &u;
    let q = &v - &u;
    // Solve Q X = P column by column.
    let lu = q.factorize_into()?;
    let mut r = Array2::zeros((n, n));
    for (j, col) in p.columns().into_iter().enumerate() {
        let x = lu.solve(&col.to_owned())?;
        r.column_mut(j).assign(&x);
    }
    for _ in 0..s {
        r = r.dot(&r);
    }
    Ok(r)
}
