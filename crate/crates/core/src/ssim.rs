//! Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), evaluated on the
//! valid region only, together with its analytic gradient.

use crate::error::{Error, Result};
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable Gaussian filter of a `w x h` plane.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = (0..WINDOW).map(|a| k[a] * row[x + a]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|b| k[b] * tmp[(y + b) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter`]: scatter a valid-sized gradient back to full size.
fn filter_adjoint(g: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for b in 0..WINDOW {
                tmp[(y + b) * ow + x] += k[b] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for a in 0..WINDOW {
                out[y * w + x + a] += k[a] * v;
            }
        }
    }
    out
}

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::usage("ssim inputs differ in shape"));
    }
    if a.channels != 1 {
        return Err(Error::usage("ssim plane must be single-channel"));
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::usage(format!(
            "image {}x{} is smaller than the {WINDOW}x{WINDOW} ssim window",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Mean SSIM of two single-channel planes with dynamic range 1, and optionally
/// its gradient w.r.t. `x`.
pub fn ssim_plane(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check(x, y)?;
    let (w, h) = (x.width, x.height);
    let k = kernel();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let xx: Vec<f64> = x.data.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data.iter().zip(&y.data).map(|(a, b)| a * b).collect();
    let mx = filter(&x.data, w, h, &k);
    let my = filter(&y.data, w, h, &k);
    let exx = filter(&xx, w, h, &k);
    let eyy = filter(&yy, w, h, &k);
    let exy = filter(&xy, w, h, &k);
    let n = mx.len();
    let mut total = 0.0;
    let (mut g_mx, mut g_exx, mut g_exy) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let sxx = exx[i] - ux * ux;
        let syy = eyy[i] - uy * uy;
        let sxy = exy[i] - ux * uy;
        let a1 = 2.0 * ux * uy + c1;
        let a2 = 2.0 * sxy + c2;
        let b1 = ux * ux + uy * uy + c1;
        let b2 = sxx + syy + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let inv = 1.0 / (n as f64);
            // dS/d(mx), with sxx, sxy expressed through exx, exy
            let d_mx = (2.0 * uy * a2 + a1 * (-2.0 * uy)) / (b1 * b2) - s * (2.0 * ux / b1 + (-2.0 * ux) / b2);
            g_mx[i] = d_mx * inv;
            g_exx[i] = -s / b2 * inv;
            g_exy[i] = 2.0 * a1 / (b1 * b2) * inv;
        }
    }
    let mean = total / n as f64;
    if !want_grad {
        return Ok((mean, None));
    }
    let a = filter_adjoint(&g_mx, w, h, &k);
    let b = filter_adjoint(&g_exx, w, h, &k);
    let c = filter_adjoint(&g_exy, w, h, &k);
    let grad = (0..w * h)
        .map(|p| a[p] + 2.0 * x.data[p] * b[p] + y.data[p] * c[p])
        .collect();
    Ok((mean, Some(grad)))
}

/// Mean of per-channel SSIM, with the gradient w.r.t. `x` laid out like `x.data`.
pub fn ssim_channels(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    if !x.same_shape(y) {
        return Err(Error::usage("ssim inputs differ in shape"));
    }
    let nc = x.channels;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; x.data.len()]);
    for c in 0..nc {
        let (s, g) = ssim_plane(&x.channel(c), &y.channel(c), want_grad)?;
        total += s;
        if let (Some(out), Some(g)) = (grad.as_mut(), g) {
            for (p, v) in g.iter().enumerate() {
                out[p * nc + c] = v / nc as f64;
            }
        }
    }
    Ok((total / nc as f64, grad))
}
