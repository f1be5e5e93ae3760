use super::FarnebackConfig;
use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur, resize_bilinear, Plane};

/// Smallest extent allowed at the coarsest level.
const MIN_EXTENT: usize = 8;

fn scaled(extent: usize, scale: f64) -> usize {
    // round half up
    (extent as f64 * scale + 0.5).floor() as usize
}

/// Image pyramid, finest first. Each level is the previous one blurred with
/// `σ = (1/pyr_scale − 1) / 2` and resampled by `pyr_scale`.
pub fn gaussian_pyramid(frame: &Plane, cfg: &FarnebackConfig) -> Result<Vec<Plane>> {
    cfg.validate()?;
    let mut levels = vec![frame.clone()];
    let sigma = (1.0 / cfg.pyr_scale - 1.0) * 0.5;
    for _ in 1..cfg.levels {
        let prev = levels.last().unwrap();
        let (h, w) = (scaled(prev.h, cfg.pyr_scale), scaled(prev.w, cfg.pyr_scale));
        if h < MIN_EXTENT || w < MIN_EXTENT {
            return Err(Error::InvalidArgument(format!(
                "pyramid level {}x{} from {}x{} is below the {MIN_EXTENT}px minimum",
                h,
                w,
                frame.h,
                frame.w
            )));
        }
        levels.push(resize_bilinear(&gaussian_blur(prev, sigma), h, w));
    }
    if frame.h < MIN_EXTENT || frame.w < MIN_EXTENT {
        return Err(Error::InvalidArgument(format!(
            "frame {}x{} below the {MIN_EXTENT}px minimum",
            frame.h, frame.w
        )));
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(scale: f64, levels: usize) -> FarnebackConfig {
        FarnebackConfig {
            pyr_scale: scale,
            levels,
            ..FarnebackConfig::low()
        }
    }

    #[test]
    fn single_level_is_input() {
        let p = Plane::from_fn(16, 12, |y, x| (y * 12 + x) as f64 / 200.0);
        let pyr = gaussian_pyramid(&p, &cfg(0.5, 1)).unwrap();
        assert_eq!(pyr, vec![p]);
    }

    #[test]
    fn extents_round_half_up() {
        let p = Plane::zeros(64, 64);
        let pyr = gaussian_pyramid(&p, &cfg(0.5, 2)).unwrap();
        assert_eq!(pyr.iter().map(|l| (l.h, l.w)).collect::<Vec<_>>(), vec![(64, 64), (32, 32)]);
        let pyr = gaussian_pyramid(&Plane::zeros(32, 32), &cfg(0.3, 2)).unwrap();
        assert_eq!((pyr[1].h, pyr[1].w), (10, 10));
        assert!(gaussian_pyramid(&Plane::zeros(32, 32), &cfg(0.3, 3)).is_err());
    }

    #[test]
    fn constant_frame_stays_constant() {
        let p = Plane::new(40, 40, vec![0.6; 1600]);
        for level in gaussian_pyramid(&p, &cfg(0.5, 3)).unwrap() {
            assert!(level.data.iter().all(|v| (v - 0.6).abs() < 1e-12));
        }
    }
}
