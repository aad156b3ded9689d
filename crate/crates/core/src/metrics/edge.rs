use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub(crate) const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Edge maps whose peak magnitude does not exceed this are treated as flat.
pub const EDGE_PEAK_FLOOR: f64 = 1e-10;

/// Sobel gradient magnitude with replicated borders, divided by its maximum
/// (all zeros when the image is flat). Works per `(n, c)` plane.
pub fn sobel_edge_map(img: &Tensor) -> Result<Tensor> {
    let s = img.shape();
    if s.h() < 3 || s.w() < 3 {
        return Err(Error::shape(format!(
            "edge map needs at least 3×3 pixels, got {s}"
        )));
    }
    let (h, w) = (s.h() as isize, s.w() as isize);
    let mut out = Tensor::zeros(s);
    let plane_len = s.plane();
    for (p, src) in img.data().chunks(plane_len).enumerate() {
        let px = |y: isize, x: isize| src[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
        let dst = &mut out.data_mut()[p * plane_len..(p + 1) * plane_len];
        let mut peak = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                // Differences first, so flat neighbourhoods give exact zeros.
                let gx = (px(y - 1, x + 1) - px(y - 1, x - 1))
                    + 2.0 * (px(y, x + 1) - px(y, x - 1))
                    + (px(y + 1, x + 1) - px(y + 1, x - 1));
                let gy = (px(y + 1, x - 1) - px(y - 1, x - 1))
                    + 2.0 * (px(y + 1, x) - px(y - 1, x))
                    + (px(y + 1, x + 1) - px(y - 1, x + 1));
                let m = (gx * gx + gy * gy).sqrt();
                dst[(y * w + x) as usize] = m;
                peak = peak.max(m);
            }
        }
        if peak > EDGE_PEAK_FLOOR {
            dst.iter_mut().for_each(|v| *v /= peak);
        } else {
            dst.fill(0.0);
        }
    }
    Ok(out)
}
