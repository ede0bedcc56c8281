//! Independent reference implementations shared by the integration tests.

use damage_core::tensor::Padding;
use damage_core::Tensor;

/// Direct sum over the kernel window; zero padding split with the odd pixel
/// after, output `ceil(n / stride)` for same padding.
#[allow(clippy::needless_range_loop)]
pub fn naive_conv(x: &Tensor, k: &Tensor, bias: &[f64], stride: usize, padding: Padding) -> Tensor {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ks, f) = (k.shape()[0], k.shape()[3]);
    let (oh, ow, pt, pl) = match padding {
        Padding::Valid => ((h - ks) / stride + 1, (w - ks) / stride + 1, 0, 0),
        Padding::Same => {
            let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
            let ph = ((oh - 1) * stride + ks).saturating_sub(h);
            let pw = ((ow - 1) * stride + ks).saturating_sub(w);
            (oh, ow, ph / 2, pw / 2)
        }
    };
    let mut out = Tensor::zeros(&[oh, ow, f]);
    for oy in 0..oh {
        for ox in 0..ow {
            for fi in 0..f {
                let mut s = bias[fi];
                for ky in 0..ks {
                    for kx in 0..ks {
                        let iy = (oy * stride + ky) as isize - pt as isize;
                        let ix = (ox * stride + kx) as isize - pl as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..c {
                            s += x.get(&[iy as usize, ix as usize, ci]) * k.get(&[ky, kx, ci, fi]);
                        }
                    }
                }
                out.set(&[oy, ox, fi], s);
            }
        }
    }
    out
}
