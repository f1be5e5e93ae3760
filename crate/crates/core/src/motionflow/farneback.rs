use super::{gaussian_pyramid, polynomial_expansion, FarnebackConfig, FlowField, Quadratic};
use crate::error::{Error, Result};
use crate::imaging::{box_blur, convolve_separable, gaussian_kernel, resize_bilinear, Plane};
use crate::par;
use crate::tensor::Tensor;

/// Regularizer added to the 2×2 determinant so flat regions resolve to zero
/// displacement instead of dividing by zero.
const DET_EPS: f64 = 1e-3 / (255.0 * 255.0 * 255.0 * 255.0);

/// Dense flow from `prev` to `next`: `next(p + d(p)) ≈ prev(p)`.
pub fn farneback_flow(prev: &Tensor<f32>, next: &Tensor<f32>, cfg: &FarnebackConfig) -> Result<FlowField> {
    if prev.shape() != next.shape() {
        return Err(Error::shape("farneback_flow", prev.shape(), next.shape()));
    }
    let (u, v) = farneback_planes(&Plane::from_tensor(prev)?, &Plane::from_tensor(next)?, cfg)?;
    Ok(FlowField::from_planes(&u, &v))
}

/// [`farneback_flow`] on 64-bit planes, returning `(u, v)`.
pub fn farneback_planes(prev: &Plane, next: &Plane, cfg: &FarnebackConfig) -> Result<(Plane, Plane)> {
    cfg.validate()?;
    if (prev.h, prev.w) != (next.h, next.w) {
        return Err(Error::shape("farneback_flow", &[prev.h, prev.w], &[next.h, next.w]));
    }
    let pyr0 = gaussian_pyramid(prev, cfg)?;
    let pyr1 = gaussian_pyramid(next, cfg)?;

    let mut flow: Option<(Plane, Plane)> = None;
    for level in (0..cfg.levels).rev() {
        let (p0, p1) = (&pyr0[level], &pyr1[level]);
        let (mut u, mut v) = match flow.take() {
            None => (Plane::zeros(p0.h, p0.w), Plane::zeros(p0.h, p0.w)),
            Some((u, v)) => {
                let up = 1.0 / cfg.pyr_scale;
                let mut u = resize_bilinear(&u, p0.h, p0.w);
                let mut v = resize_bilinear(&v, p0.h, p0.w);
                u.data.iter_mut().for_each(|x| *x *= up);
                v.data.iter_mut().for_each(|x| *x *= up);
                (u, v)
            }
        };
        let mut expansions = par::map_range(2, |i| {
            polynomial_expansion(if i == 0 { p0 } else { p1 }, cfg.poly_n, cfg.poly_sigma)
        });
        let r1 = expansions.pop().unwrap();
        let r0 = expansions.pop().unwrap();
        for _ in 0..cfg.iterations {
            update(&r0, &r1, &mut u, &mut v, cfg)?;
        }
        flow = Some((u, v));
    }
    Ok(flow.unwrap())
}

/// One refinement: linearize around the current flow, average the normal
/// equations over the window, and re-solve for the displacement.
fn update(r0: &Quadratic, r1: &Quadratic, u: &mut Plane, v: &mut Plane, cfg: &FarnebackConfig) -> Result<()> {
    let n = r0.h * r0.w;
    // G = AᵀA (g11, g12, g22) and h = AᵀΔb (h1, h2).
    let mut fields: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    for y in 0..r0.h {
        for x in 0..r0.w {
            let i = y * r0.w + x;
            let (dx, dy) = (u.data[i], v.data[i]);
            let ([a11, a12, a22], [b1, b2], _) = r0.at(y, x);
            let ([c11, c12, c22], [e1, e2]) = r1.sample(y as f64 + dy, x as f64 + dx);
            let (m11, m12, m22) = ((a11 + c11) * 0.5, (a12 + c12) * 0.5, (a22 + c22) * 0.5);
            let db1 = -0.5 * (e1 - b1) + m11 * dx + m12 * dy;
            let db2 = -0.5 * (e2 - b2) + m12 * dx + m22 * dy;
            fields[0][i] = m11 * m11 + m12 * m12;
            fields[1][i] = m11 * m12 + m12 * m22;
            fields[2][i] = m12 * m12 + m22 * m22;
            fields[3][i] = m11 * db1 + m12 * db2;
            fields[4][i] = m12 * db1 + m22 * db2;
        }
    }
    let half = cfg.winsize / 2;
    let kernel = gaussian_kernel(0.3 * half as f64, half);
    let blurred: Vec<Plane> = par::map_range(5, |j| {
        let p = Plane::new(r0.h, r0.w, fields[j].clone());
        if cfg.gaussian_window {
            convolve_separable(&p, &kernel, &kernel)
        } else {
            box_blur(&p, cfg.winsize)
        }
    });
    for i in 0..n {
        let (g11, g12, g22) = (blurred[0].data[i], blurred[1].data[i], blurred[2].data[i]);
        let (h1, h2) = (blurred[3].data[i], blurred[4].data[i]);
        let inv = 1.0 / (g11 * g22 - g12 * g12 + DET_EPS);
        let du = (g22 * h1 - g12 * h2) * inv;
        let dv = (g11 * h2 - g12 * h1) * inv;
        if !(du.is_finite() && dv.is_finite()) {
            return Err(Error::NonFinite("farneback_flow".into()));
        }
        u.data[i] = du;
        v.data[i] = dv;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(h: usize, w: usize, cy: f64, cx: f64, sigma: f64) -> Plane {
        Plane::from_fn(h, w, |y, x| {
            let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            0.1 + 0.8 * (-r2 / (2.0 * sigma * sigma)).exp()
        })
    }

    fn mean_over_support(prev: &Plane, u: &Plane, v: &Plane) -> (f64, f64) {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
        for i in 0..prev.data.len() {
            if prev.data[i] > 0.1 + 0.8 * 0.5 {
                su += u.data[i];
                sv += v.data[i];
                n += 1.0;
            }
        }
        (su / n, sv / n)
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = blob(40, 40, 18.0, 21.0, 5.0);
        let (u, v) = farneback_planes(&f, &f, &FarnebackConfig::low()).unwrap();
        assert!(u.data.iter().chain(&v.data).all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn recovers_known_shift() {
        let prev = blob(64, 64, 32.0, 30.0, 6.0);
        let next = blob(64, 64, 32.0, 32.0, 6.0);
        let (u, v) = farneback_planes(&prev, &next, &FarnebackConfig::low()).unwrap();
        let (mu, mv) = mean_over_support(&prev, &u, &v);
        assert!((mu - 2.0).abs() < 0.5 && mv.abs() < 0.5, "({mu}, {mv})");
    }

    #[test]
    fn endpoint_error_for_each_axis_shift() {
        for (dx, dy) in [(2.0, 0.0), (-2.0, 0.0), (0.0, 3.0), (0.0, -3.0)] {
            let prev = blob(64, 64, 32.0, 32.0, 6.0);
            let next = blob(64, 64, 32.0 + dy, 32.0 + dx, 6.0);
            let (u, v) = farneback_planes(&prev, &next, &FarnebackConfig::low()).unwrap();
            let (mut epe, mut n) = (0.0, 0.0);
            for i in 0..prev.data.len() {
                if prev.data[i] > 0.5 {
                    epe += ((u.data[i] - dx).powi(2) + (v.data[i] - dy).powi(2)).sqrt();
                    n += 1.0;
                }
            }
            assert!(epe / n < 0.5, "shift ({dx}, {dy}): epe {}", epe / n);
        }
    }

    #[test]
    fn rejects_mismatched_frames() {
        let a = Tensor::<f32>::zeros(&[16, 16]);
        let b = Tensor::<f32>::zeros(&[16, 20]);
        assert!(matches!(
            farneback_flow(&a, &b, &FarnebackConfig::low()),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
