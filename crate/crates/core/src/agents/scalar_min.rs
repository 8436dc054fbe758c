/// Minimizes a smooth unimodal function on `[lo, hi]`: golden-section
/// bracketing followed by a safeguarded Newton polish on the derivative.
///
/// Stops when `|f'| <= 1e-10` in the interior or the minimizer sits on a bound
/// with the derivative pointing outward.
pub fn minimize_scalar(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    d2f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
) -> f64 {
    if hi <= lo {
        return lo;
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if b - a <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut x = 0.5 * (a + b);
    // bracket for the polish: f' changes sign inside [a, b] unless the
    // minimizer is on the boundary
    let (mut left, mut right) = (lo, hi);
    for _ in 0..100 {
        let g = df(x);
        if g.abs() <= 1e-10 {
            break;
        }
        if g > 0.0 {
            right = x;
        } else {
            left = x;
        }
        if (x <= lo && g >= 0.0) || (x >= hi && g <= 0.0) {
            break;
        }
        let curvature = d2f(x);
        let mut next = if curvature > 0.0 { x - g / curvature } else { f64::NAN };
        if !(next > left && next < right) {
            // fall back to bisection of the sign bracket
            next = 0.5 * (left + right);
        }
        if (next - x).abs() <= f64::EPSILON * (1.0 + x.abs()) {
            break;
        }
        x = next;
    }
    // boundary optimality
    for bound in [lo, hi] {
        if f(bound) < f(x) {
            x = bound;
        }
    }
    x
}
