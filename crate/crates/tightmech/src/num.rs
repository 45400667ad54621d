//! Small numeric primitives shared across the solver: scalar searches,
//! quadrature and grid utilities. All searches are derivative-free; the model
//! only promises continuity plus shape (unimodality / sign change).

/// 1/phi, the golden-section step ratio.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimize `f` on `[a, b]` by golden-section search down to bracket `width`.
/// Returns `(x_min, f_min)`. Assumes `f` is unimodal on the bracket; callers
/// that cannot guarantee that should scan first.
pub fn golden_min(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, width: f64) -> (f64, f64) {
    debug_assert!(a <= b);
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > width {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    let fm = f(mid);
    if fm <= f1 && fm <= f2 {
        (mid, fm)
    } else if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Maximize `f` on `[a, b]`; returns `(x_max, f_max)`.
pub fn golden_max(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, width: f64) -> (f64, f64) {
    let (x, neg) = golden_min(|t| -f(t), a, b, width);
    (x, -neg)
}

/// Find a root of `f` on `[a, b]` by bisection, assuming `f(a)` and `f(b)`
/// bracket zero. Returns the midpoint of the final bracket of width `xtol`.
pub fn bisect_root(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, xtol: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let mut flo = f(lo);
    let fhi = f(hi);
    debug_assert!(
        flo.signum() != fhi.signum() || flo == 0.0 || fhi == 0.0,
        "bisect_root: no sign change on [{lo}, {hi}]"
    );
    if flo == 0.0 {
        return lo;
    }
    if fhi == 0.0 {
        return hi;
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Trapezoid rule over an arbitrary sorted grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    let mut acc = 0.0;
    for i in 1..grid.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    acc
}

/// `n` equally spaced points from `a` to `b` inclusive, endpoints exact.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "linspace needs at least two points");
    let mut out = Vec::with_capacity(n);
    let step = (b - a) / (n - 1) as f64;
    for i in 0..n {
        out.push(a + step * i as f64);
    }
    out[n - 1] = b;
    out
}

/// Piecewise-linear interpolation on sorted knots, clamped at both ends.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(!xs.is_empty());
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    // partition_point returns the first knot strictly above x, so i-1 <= x < i.
    let i = xs.partition_point(|&k| k <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Largest `|a[i] - b[i]|` over two equally long slices.
pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Format with 17 significant digits so the value round-trips through text.
/// All CSV emitters share this so files are byte-identical across runs.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Diagnostics go to stderr only when TIGHTMECH_LOG is set; library output
/// stays byte-identical otherwise.
pub(crate) fn debug_log(args: std::fmt::Arguments) {
    if std::env::var_os("TIGHTMECH_LOG").is_some() {
        eprintln!("[tightmech] {args}");
    }
}

/// Map `f` over `0..n`, splitting into `jobs` contiguous chunks on scoped
/// threads. Output order matches the index order regardless of `jobs`.
pub fn par_map<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let jobs = jobs.min(n);
    let chunk = n.div_ceil(jobs);
    let mut parts: Vec<Vec<T>> = Vec::with_capacity(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let f = &f;
                let lo = j * chunk;
                let hi = ((j + 1) * chunk).min(n);
                scope.spawn(move || (lo..hi).map(f).collect::<Vec<T>>())
            })
            .collect();
        for h in handles {
            parts.push(h.join().expect("par_map worker panicked"));
        }
    });
    parts.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_min_quadratic() {
        let (x, fx) = golden_min(|t| (t - 0.3).powi(2) + 1.0, 0.0, 1.0, 1e-10);
        // Value-comparison searches localize a quadratic argmin only to
        // ~sqrt(machine eps); the value itself is good to full precision.
        assert!((x - 0.3).abs() < 3e-8);
        assert!((fx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn golden_min_endpoint() {
        // Monotone increasing: minimum sits at the left endpoint.
        let (x, _) = golden_min(|t| t, 0.0, 1.0, 1e-10);
        assert!(x < 1e-9);
    }

    #[test]
    fn bisect_root_cubic() {
        let r = bisect_root(|t| t * t * t - 0.125, 0.0, 1.0, 1e-12);
        assert!((r - 0.5).abs() < 1e-11);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let g = linspace(0.0, 2.0, 7);
        let v: Vec<f64> = g.iter().map(|x| 3.0 * x + 1.0).collect();
        // Trapezoid is exact on affine integrands.
        assert!((trapezoid(&g, &v) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn interp_midpoints() {
        let xs = [0.0, 1.0, 3.0];
        let ys = [0.0, 2.0, 2.0];
        assert_eq!(interp(&xs, &ys, 0.5), 1.0);
        assert_eq!(interp(&xs, &ys, 2.0), 2.0);
        assert_eq!(interp(&xs, &ys, -1.0), 0.0);
        assert_eq!(interp(&xs, &ys, 9.0), 2.0);
    }

    #[test]
    fn par_map_order_independent_of_jobs() {
        let seq = par_map(17, 1, |i| i * i);
        let par = par_map(17, 4, |i| i * i);
        assert_eq!(seq, par);
    }
}
