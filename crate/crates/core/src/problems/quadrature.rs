//! Adaptive Gauss–Kronrod (7/15) quadrature for a pair of integrands sharing
//! evaluations.

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
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: `(kronrod estimate, |kronrod − gauss|)` per component.
fn gk15<F: FnMut(f64) -> [f64; 2]>(f: &mut F, a: f64, b: f64) -> ([f64; 2], [f64; 2]) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = [fc[0] * WGK[7], fc[1] * WGK[7]];
    let mut g = [fc[0] * WG[3], fc[1] * WG[3]];
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for m in 0..2 {
            k[m] += WGK[j] * (f1[m] + f2[m]);
            if j % 2 == 1 {
                g[m] += WG[j / 2] * (f1[m] + f2[m]);
            }
        }
    }
    (
        [k[0] * h, k[1] * h],
        [((k[0] - g[0]) * h).abs(), ((k[1] - g[1]) * h).abs()],
    )
}

/// Integrates both components of `f` over `[a, b]` split into `panels`
/// initial pieces, bisecting any piece whose error exceeds its share of
/// `abs_tol`. Returns `None` if `max_depth` bisections do not suffice.
pub(crate) fn integrate_pair<F: FnMut(f64) -> [f64; 2]>(
    mut f: F,
    a: f64,
    b: f64,
    panels: usize,
    abs_tol: f64,
    max_depth: usize,
) -> Option<[f64; 2]> {
    let width = b - a;
    let mut total = [0.0; 2];
    let mut stack: Vec<(f64, f64, usize)> = (0..panels)
        .rev()
        .map(|i| {
            let lo = a + width * i as f64 / panels as f64;
            let hi = a + width * (i + 1) as f64 / panels as f64;
            (lo, hi, 0)
        })
        .collect();
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = gk15(&mut f, lo, hi);
        let budget = abs_tol * (hi - lo) / width;
        if err[0].max(err[1]) <= budget {
            total[0] += val[0];
            total[1] += val[1];
        } else if depth >= max_depth {
            return None;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    Some(total)
}
