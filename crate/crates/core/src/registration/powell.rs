//! Powell's direction-set minimizer with Brent line searches.

const GOLDEN: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105_1;
const TINY: f64 = 1e-20;
const MAX_BRACKET_GROWTH: f64 = 100.0;
const BRENT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy)]
pub struct PowellOptions {
    /// Relative decrease of the objective below which iteration stops.
    pub ftol: f64,
    /// Parameter displacement (Euclidean) below which iteration stops; also the line-search tolerance.
    pub xtol: f64,
    pub max_iterations: usize,
    /// Initial bracketing step along each direction.
    pub initial_step: f64,
}

#[derive(Debug, Clone)]
pub struct PowellOutcome<const N: usize> {
    pub x: [f64; N],
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        (self.f)(x)
    }
}

/// Minimizes `f` from `x0`. The returned value never exceeds `f(x0)`.
pub fn minimize<const N: usize, F>(f: F, x0: [f64; N], opts: &PowellOptions) -> PowellOutcome<N>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut f = Counted { f, evals: 0 };
    let mut dirs: Vec<[f64; N]> = (0..N)
        .map(|i| {
            let mut d = [0.0; N];
            d[i] = 1.0;
            d
        })
        .collect();

    let mut x = x0;
    let mut fx = f.call(&x);
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let x_start = x;
        let f_start = fx;
        let mut biggest_drop = 0.0;
        let mut biggest_idx = 0;

        for (i, d) in dirs.iter().enumerate() {
            let before = fx;
            let (nx, nf) = line_minimize(&mut f, &x, fx, d, opts);
            x = nx;
            fx = nf;
            if before - fx > biggest_drop {
                biggest_drop = before - fx;
                biggest_idx = i;
            }
        }

        let moved = norm(&sub(&x, &x_start));
        if 2.0 * (f_start - fx) <= opts.ftol * (f_start.abs() + fx.abs()) + TINY || moved < opts.xtol {
            break;
        }

        // Try replacing the direction of largest decrease with the net displacement.
        let delta = sub(&x, &x_start);
        let extrapolated = add(&x, &delta);
        let fe = f.call(&extrapolated);
        if fe < f_start {
            let t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - biggest_drop).powi(2)
                - biggest_drop * (f_start - fe).powi(2);
            if t < 0.0 {
                let len = norm(&delta);
                if len > 0.0 {
                    let unit = scale(&delta, 1.0 / len);
                    let (nx, nf) = line_minimize(&mut f, &x, fx, &unit, opts);
                    x = nx;
                    fx = nf;
                    dirs[biggest_idx] = dirs[N - 1];
                    dirs[N - 1] = unit;
                }
            }
        }
    }

    PowellOutcome { x, value: fx, iterations, evaluations: f.evals }
}

/// Minimizes along `x + α d`; returns the new point only if it improves on `fx`.
fn line_minimize<const N: usize, F>(
    f: &mut Counted<F>,
    x: &[f64; N],
    fx: f64,
    d: &[f64; N],
    opts: &PowellOptions,
) -> ([f64; N], f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let mut g = |alpha: f64| {
        let p = add(x, &scale(d, alpha));
        f.call(&p)
    };
    let (a, b, c, fb) = bracket(&mut g, fx, opts.initial_step);
    let (alpha, fmin) = brent(&mut g, a, b, c, fb, 0.5 * opts.xtol);
    if fmin < fx {
        (add(x, &scale(d, alpha)), fmin)
    } else {
        (*x, fx)
    }
}

/// Returns `(a, b, c, f(b))` with `b` between `a` and `c` and `f(b) <= f(a), f(c)`.
fn bracket(g: &mut impl FnMut(f64) -> f64, f0: f64, step: f64) -> (f64, f64, f64, f64) {
    let (mut a, mut fa) = (0.0, f0);
    let (mut b, mut fb) = (step, g(step));
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = b + GOLDEN * (b - a);
    let mut fc = g(c);
    let limit = MAX_BRACKET_GROWTH * step.abs();
    while fb > fc {
        if (c - a).abs() > limit {
            return (a, c, c, fc);
        }
        let r = (b - a) * (fb - fc);
        let q = (b - c) * (fb - fa);
        let denom = 2.0 * (q - r).abs().max(TINY).copysign(q - r);
        let mut u = b - ((b - c) * q - (b - a) * r) / denom;
        let ulim = b + MAX_BRACKET_GROWTH * (c - b);
        let fu;
        if (b - u) * (u - c) > 0.0 {
            let fu_ = g(u);
            if fu_ < fc {
                return (b, u, c, fu_);
            } else if fu_ > fb {
                return (a, b, u, fb);
            }
            u = c + GOLDEN * (c - b);
            fu = g(u);
        } else if (c - u) * (u - ulim) > 0.0 {
            let fu_ = g(u);
            if fu_ < fc {
                b = c;
                c = u;
                u = c + GOLDEN * (c - b);
                fb = fc;
                fc = fu_;
                fu = g(u);
            } else {
                fu = fu_;
            }
        } else if (u - ulim) * (ulim - c) >= 0.0 {
            u = ulim;
            fu = g(u);
        } else {
            u = c + GOLDEN * (c - b);
            fu = g(u);
        }
        a = b;
        b = c;
        c = u;
        fa = fb;
        fb = fc;
        fc = fu;
    }
    let _ = fa;
    (a, b, c, fb)
}

/// Brent's parabolic/golden-section minimization within a bracket, absolute tolerance `tol`.
fn brent(g: &mut impl FnMut(f64) -> f64, ax: f64, bx: f64, cx: f64, fbx: f64, tol: f64) -> (f64, f64) {
    let mut a = ax.min(cx);
    let mut b = ax.max(cx);
    let (mut x, mut w, mut v) = (bx, bx, bx);
    let (mut fx, mut fw, mut fv) = (fbx, fbx, fbx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..BRENT_MAX_ITER {
        let xm = 0.5 * (a + b);
        let tol1 = tol + 1e-10 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

fn add<const N: usize>(a: &[f64; N], b: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| a[i] + b[i])
}

fn sub<const N: usize>(a: &[f64; N], b: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| a[i] - b[i])
}

fn scale<const N: usize>(a: &[f64; N], s: f64) -> [f64; N] {
    std::array::from_fn(|i| a[i] * s)
}

fn norm<const N: usize>(a: &[f64; N]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
