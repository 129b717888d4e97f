//! Log-log growth fits.

/// Least-squares slope of `ln y` against `ln x`.
///
/// Pairs with a non-positive or non-finite coordinate are skipped. Returns
/// `None` when fewer than two usable pairs remain or all `x` coincide.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pairs = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite() && **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (libm::log(*x), libm::log(*y)));
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (lx, ly) in pairs.clone() {
        n += 1.0;
        sx += lx;
        sy += ly;
    }
    if n < 2.0 {
        return None;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (lx, ly) in pairs {
        sxx += (lx - mx) * (lx - mx);
        sxy += (lx - mx) * (ly - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    Some(sxy / sxx)
}
