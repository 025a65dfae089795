//! Independent reference solvers used to check the spectral machinery:
//! finite-difference boundary-value solves, finite-difference Laplacians and a
//! classical Runge-Kutta integrator. Nothing here shares code with the
//! spectral path.

/// Solves the tridiagonal system with sub-diagonal `a`, diagonal `b`,
/// super-diagonal `c` (Thomas algorithm; `a[0]` and `c[n-1]` are ignored).
pub fn tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let den = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / den;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Fourth-order (Numerov) solve of `-u'' = f` on `[0, L]` with `u(0) = u(L) = 0`,
/// on `f.len()` equally spaced nodes including both ends.
pub fn numerov_dirichlet(f: &[f64], length: f64) -> Vec<f64> {
    let p = f.len();
    assert!(p >= 3, "need at least one interior node");
    let h = length / (p - 1) as f64;
    let inner = p - 2;
    let a = vec![-1.0; inner];
    let b = vec![2.0; inner];
    let c = vec![-1.0; inner];
    let d: Vec<f64> = (1..p - 1)
        .map(|i| h * h * (f[i - 1] + 10.0 * f[i] + f[i + 1]) / 12.0)
        .collect();
    let mut u = vec![0.0; p];
    u[1..p - 1].copy_from_slice(&tridiagonal(&a, &b, &c, &d));
    u
}

/// Stray-field component `H = -u'` where `u'' = g'` on `[0, L]`, `u(0) = u(L) = 0`,
/// solved by Numerov with the analytic source derivative `dg` and differentiated
/// with a fourth-order central stencil. Values at the first and last two nodes are
/// one-sided and less accurate; callers compare away from the ends.
pub fn stray_fd(dg: impl Fn(f64) -> f64, length: f64, points: usize) -> Vec<f64> {
    let h = length / (points - 1) as f64;
    let rhs: Vec<f64> = (0..points).map(|i| -dg(i as f64 * h)).collect();
    let u = numerov_dirichlet(&rhs, length);
    (0..points)
        .map(|i| {
            if i >= 2 && i + 2 < points {
                -(u[i - 2] - 8.0 * u[i - 1] + 8.0 * u[i + 1] - u[i + 2]) / (12.0 * h)
            } else if i + 1 < points && i >= 1 {
                -(u[i + 1] - u[i - 1]) / (2.0 * h)
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Fourth-order central Laplacian at nodes `2..n-2`; other entries are `NaN`.
pub fn fd_laplacian4(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|i| {
            if i >= 2 && i + 2 < n {
                (-u[i - 2] + 16.0 * u[i - 1] - 30.0 * u[i] + 16.0 * u[i + 1] - u[i + 2]) / (12.0 * h * h)
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Classical RK4 for `y' = f(y)` over `[0, t]` in `steps` equal steps.
pub fn rk4(y0: &[f64], t: f64, steps: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let h = t / steps as f64;
    let axpy = |y: &[f64], k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let mut y = y0.to_vec();
    for _ in 0..steps {
        let k1 = f(&y);
        let k2 = f(&axpy(&y, &k1, 0.5 * h));
        let k3 = f(&axpy(&y, &k2, 0.5 * h));
        let k4 = f(&axpy(&y, &k3, h));
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// Relative discrete `ℓ²` error `|a − b| / |b|` over entries where both are finite.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        if x.is_finite() && y.is_finite() {
            num += (x - y).powi(2);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn numerov_is_fourth_order() {
        // -u'' = π² sin(πx) on [0, 1] has u = sin(πx).
        let err = |p: usize| {
            let h = 1.0 / (p - 1) as f64;
            let f: Vec<f64> = (0..p).map(|i| PI * PI * (PI * i as f64 * h).sin()).collect();
            let u = numerov_dirichlet(&f, 1.0);
            (0..p).map(|i| (u[i] - (PI * i as f64 * h).sin()).abs()).fold(0.0, f64::max)
        };
        let r = err(33) / err(65);
        assert!((14.0..18.0).contains(&r), "ratio {r}");
    }

    #[test]
    fn stray_fd_on_a_smooth_bump() {
        // g = sin²(πx) on [0, 1]: u' = g − mean(g), H = 1/2 − sin²(πx).
        let p = 257;
        let h = stray_fd(|x| PI * (2.0 * PI * x).sin(), 1.0, p);
        let exact: Vec<f64> = (0..p).map(|i| 0.5 - (PI * i as f64 / (p - 1) as f64).sin().powi(2)).collect();
        let err = (2..p - 2).map(|i| (h[i] - exact[i]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-7, "err {err}");
    }

    #[test]
    fn laplacian_and_rk4() {
        let p = 101;
        let hx = 1.0 / (p - 1) as f64;
        let u: Vec<f64> = (0..p).map(|i| (i as f64 * hx).powi(4)).collect();
        let lap = fd_laplacian4(&u, hx);
        assert!((2..p - 2).all(|i| (lap[i] - 12.0 * (i as f64 * hx).powi(2)).abs() < 1e-9));
        let y = rk4(&[1.0], 1.0, 100, |y| vec![-y[0]]);
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn thomas_matches_dense() {
        let a = [0.0, 1.0, 2.0];
        let b = [4.0, 5.0, 6.0];
        let c = [1.0, 1.0, 0.0];
        let x = [1.0, -2.0, 3.0];
        let d = [b[0] * x[0] + c[0] * x[1], a[1] * x[0] + b[1] * x[1] + c[1] * x[2], a[2] * x[1] + b[2] * x[2]];
        let got = tridiagonal(&a, &b, &c, &d);
        assert!(got.iter().zip(&x).all(|(g, e)| (g - e).abs() < 1e-14));
    }
}
