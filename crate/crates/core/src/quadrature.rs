//! Adaptive Gauss-Kronrod (7/15) integration of vector-valued integrands.

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
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 40;

fn gk15(
    f: &impl Fn(f64, &mut [f64]),
    a: f64,
    b: f64,
    n: usize,
    buf: &mut [f64],
) -> (Vec<f64>, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = vec![0.0; n];
    let mut gauss = vec![0.0; n];
    let mut accumulate = |x: f64, wk: f64, wg: f64, buf: &mut [f64]| {
        f(x, buf);
        for i in 0..n {
            kronrod[i] += wk * buf[i];
            gauss[i] += wg * buf[i];
        }
    };
    for k in 0..7 {
        let wg = if k % 2 == 1 { WG[k / 2] } else { 0.0 };
        accumulate(c - h * XGK[k], WGK[k], wg, buf);
        accumulate(c + h * XGK[k], WGK[k], wg, buf);
    }
    accumulate(c, WGK[7], WG[3], buf);
    let mut err = 0.0f64;
    for i in 0..n {
        kronrod[i] *= h;
        err = err.max((kronrod[i] - h * gauss[i]).abs());
    }
    (kronrod, err)
}

/// Integrates `f` over `[a, b]` to an absolute tolerance `tol` per component.
///
/// `f(x, out)` writes the `n` integrand components at `x` into `out`.
pub fn integrate(f: impl Fn(f64, &mut [f64]), a: f64, b: f64, n: usize, tol: f64) -> Vec<f64> {
    let mut total = vec![0.0; n];
    if a == b {
        return total;
    }
    let mut buf = vec![0.0; n];
    let width = (b - a).abs();
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (value, err) = gk15(&f, lo, hi, n, &mut buf);
        let share = tol * (hi - lo).abs() / width;
        if err <= share.max(f64::EPSILON * value.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            || depth >= MAX_DEPTH
        {
            for i in 0..n {
                total[i] += value[i];
            }
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_gaussian() {
        let v = integrate(|x, out| out[0] = x * x * x + 1.0, 0.0, 2.0, 1, 1e-12);
        assert!((v[0] - 6.0).abs() < 1e-12);
        let v = integrate(|x, out| out[0] = (-x * x).exp(), -12.0, 12.0, 1, 1e-12);
        assert!((v[0] - std::f64::consts::PI.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn vector_components_are_independent() {
        let v = integrate(
            |x, out| {
                out[0] = x.sin();
                out[1] = x.cos();
            },
            0.0,
            std::f64::consts::PI,
            2,
            1e-12,
        );
        assert!((v[0] - 2.0).abs() < 1e-12);
        assert!(v[1].abs() < 1e-12);
    }
}
