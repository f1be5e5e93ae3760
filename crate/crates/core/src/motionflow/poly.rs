use crate::imaging::{convolve_separable, gaussian_kernel, Plane};
use crate::par;

/// Per-pixel local model `f(p) ≈ pᵀAp + bᵀp + c` with `p = (x, y)`
/// relative to the pixel centre, `x` horizontal.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub h: usize,
    pub w: usize,
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a22: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub c: Vec<f64>,
}

impl Quadratic {
    pub fn at(&self, y: usize, x: usize) -> ([f64; 3], [f64; 2], f64) {
        let i = y * self.w + x;
        ([self.a11[i], self.a12[i], self.a22[i]], [self.b1[i], self.b2[i]], self.c[i])
    }

    /// Bilinear lookup of `(A, b)` at fractional coordinates, replicate border.
    pub(crate) fn sample(&self, y: f64, x: f64) -> ([f64; 3], [f64; 2]) {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let taps = [
            (y0 * self.w + x0, (1.0 - fy) * (1.0 - fx)),
            (y0 * self.w + x1, (1.0 - fy) * fx),
            (y1 * self.w + x0, fy * (1.0 - fx)),
            (y1 * self.w + x1, fy * fx),
        ];
        let mix = |f: &[f64]| taps.iter().map(|&(i, k)| f[i] * k).sum::<f64>();
        ([mix(&self.a11), mix(&self.a12), mix(&self.a22)], [mix(&self.b1), mix(&self.b2)])
    }
}

/// Solve the symmetric positive-definite system `g · r = m` in place by
/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve6(mut g: [[f64; 6]; 6], mut m: [f64; 6]) -> [f64; 6] {
    for col in 0..6 {
        let piv = (col..6)
            .max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs()))
            .unwrap();
        g.swap(col, piv);
        m.swap(col, piv);
        let d = g[col][col];
        assert!(d.abs() > 1e-300, "polynomial expansion: singular normal equations");
        for row in col + 1..6 {
            let f = g[row][col] / d;
            for k in col..6 {
                g[row][k] -= f * g[col][k];
            }
            m[row] -= f * m[col];
        }
    }
    let mut r = [0.0; 6];
    for row in (0..6).rev() {
        let s: f64 = (row + 1..6).map(|k| g[row][k] * r[k]).sum();
        r[row] = (m[row] - s) / g[row][row];
    }
    r
}

/// Weighted least-squares quadratic fit over each `poly_n × poly_n`
/// neighbourhood with Gaussian weights of width `poly_sigma`.
///
/// The basis is `[1, x, y, x², y², xy]`; its moments separate into 1-D
/// correlations, and with replicate borders every neighbourhood shares the
/// same Gram matrix, so the fit is six separable filters followed by one
/// fixed 6×6 solve per pixel.
pub fn polynomial_expansion(frame: &Plane, poly_n: usize, poly_sigma: f64) -> Quadratic {
    assert!(poly_n % 2 == 1 && poly_n >= 3, "poly_n must be odd and at least 3");
    assert!(poly_sigma > 0.0, "poly_sigma must be positive");
    let r = poly_n / 2;
    let g = gaussian_kernel(poly_sigma, r);
    let off = |i: usize| i as f64 - r as f64;
    let k0 = g.clone();
    let k1: Vec<f64> = g.iter().enumerate().map(|(i, w)| w * off(i)).collect();
    let k2: Vec<f64> = g.iter().enumerate().map(|(i, w)| w * off(i) * off(i)).collect();

    // (x-power, y-power) of each basis function.
    const POW: [(usize, usize); 6] = [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1)];
    let ks = [&k0, &k1, &k2];
    let moments: Vec<Plane> = par::map_range(6, |j| {
        let (px, py) = POW[j];
        convolve_separable(frame, ks[px], ks[py])
    });

    // Gram matrix: Σ w(x)w(y) x^(pa+pb) y^(qa+qb).
    let mom1 = |p: usize| -> f64 { g.iter().enumerate().map(|(i, w)| w * off(i).powi(p as i32)).sum() };
    let mut gram = [[0.0; 6]; 6];
    for a in 0..6 {
        for b in 0..6 {
            gram[a][b] = mom1(POW[a].0 + POW[b].0) * mom1(POW[a].1 + POW[b].1);
        }
    }
    // Columns of the inverse, so each pixel costs a 6×6 mat-vec.
    let mut inv = [[0.0; 6]; 6];
    for col in 0..6 {
        let mut e = [0.0; 6];
        e[col] = 1.0;
        let x = solve6(gram, e);
        for row in 0..6 {
            inv[row][col] = x[row];
        }
    }

    let n = frame.h * frame.w;
    let mut q = Quadratic {
        h: frame.h,
        w: frame.w,
        a11: vec![0.0; n],
        a12: vec![0.0; n],
        a22: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
        c: vec![0.0; n],
    };
    for i in 0..n {
        let m: [f64; 6] = std::array::from_fn(|j| moments[j].data[i]);
        let r: [f64; 6] = std::array::from_fn(|row| (0..6).map(|k| inv[row][k] * m[k]).sum());
        q.c[i] = r[0];
        q.b1[i] = r[1];
        q.b2[i] = r[2];
        q.a11[i] = r[3];
        q.a22[i] = r[4];
        q.a12[i] = r[5] * 0.5;
    }
    q
}
