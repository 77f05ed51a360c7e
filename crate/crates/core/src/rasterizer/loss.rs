use crate::error::{Error, Result};
use crate::image::Image;
use crate::ssim::ssim_channels;

#[derive(Clone, Debug)]
pub struct PhotometricLoss {
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    /// dL/d(rendered color).
    pub grad: Image,
}

/// `lambda * (1 - SSIM) / 2 + (1 - lambda) * L1` between two RGB images.
pub fn photometric_loss(rendered: &Image, target: &Image, lambda: f64) -> Result<PhotometricLoss> {
    if !rendered.same_shape(target) {
        return Err(Error::usage(format!(
            "rendered image is {}x{}x{}, target is {}x{}x{}",
            rendered.width, rendered.height, rendered.channels, target.width, target.height, target.channels
        )));
    }
    let n = rendered.data.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height, rendered.channels);
    let mut l1 = 0.0;
    for ((g, r), t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        l1 += d.abs();
        *g = (1.0 - lambda) * d.signum() * f64::from(d != 0.0) / n;
    }
    l1 /= n;
    let mut dssim = 0.0;
    if lambda != 0.0 {
        let (s, sg) = ssim_channels(rendered, target, true)?;
        dssim = 0.5 * (1.0 - s);
        for (g, ds) in grad.data.iter_mut().zip(sg.expect("gradient requested")) {
            *g -= 0.5 * lambda * ds;
        }
    }
    Ok(PhotometricLoss {
        total: lambda * dssim + (1.0 - lambda) * l1,
        l1,
        dssim,
        grad,
    })
}
