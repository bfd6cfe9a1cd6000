//! Adaptive Simpson quadrature.

const MAX_DEPTH: u32 = 50;
/// Levels that are always subdivided, so smooth peaks are not missed.
const MIN_DEPTH: u32 = 6;

/// `∫_a^b f` to relative tolerance `rel_tol` (absolute floor `1e-300`).
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    // a coarse pass sets the absolute scale for the tolerance
    let scale = coarse_abs(&f, a, b).max(whole.abs()).max(1e-300);
    recurse(&f, a, b, fa, fm, fb, whole, rel_tol * scale, MAX_DEPTH)
}

fn coarse_abs(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let n = 64;
    let h = (b - a) / n as f64;
    (0..=n).map(|i| f(a + h * i as f64).abs()).sum::<f64>() * h.abs()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || (MAX_DEPTH - depth >= MIN_DEPTH && delta.abs() <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
