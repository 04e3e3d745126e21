//! Quadrature helpers: composite Gauss–Legendre on panels and the trapezoid rule.

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// 8-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss8<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for k in 0..4 {
        let dx = h * GL8_X[k];
        s += GL8_W[k] * (f(c - dx) + f(c + dx));
    }
    s * h
}

/// Composite 8-point Gauss–Legendre on `[a, b]`.
///
/// Panel edges include every entry of `breaks` that falls strictly inside the
/// interval (kinks of the integrand), and no panel is wider than `max_panel`.
pub fn composite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, breaks: &[f64], max_panel: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let mut edges: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    edges.push(a);
    edges.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    edges.push(b);
    edges.sort_by(|x, y| x.total_cmp(y));
    edges.dedup();

    let mut total = 0.0;
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let len = hi - lo;
        if len <= 0.0 {
            continue;
        }
        let pieces = (len / max_panel).ceil().max(1.0) as usize;
        let step = len / pieces as f64;
        for p in 0..pieces {
            let x0 = lo + p as f64 * step;
            let x1 = if p + 1 == pieces { hi } else { x0 + step };
            total += gauss8(f, x0, x1);
        }
    }
    total
}

/// Trapezoid rule for samples on a uniform grid with spacing `dx`.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            dx * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}
