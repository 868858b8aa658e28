//! Affine sampling grids and bilinear sampling.
//!
//! Normalized coordinates span `[-1, 1]` on each axis and follow the
//! align-corners convention: `-1` is the first pixel centre and `+1` the
//! last. Samples that fall outside the source read zeros.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Number of values per affine row: `(s_h, s_w, t_x, t_y)`.
pub const THETA_LEN: usize = 4;

/// Normalized coordinate of lattice point `j` out of `len`; a single point sits at 0.
#[inline]
pub fn lattice<F: Element>(j: usize, len: usize) -> F {
    if len == 1 {
        F::zero()
    } else {
        F::from_f64(-1.0 + 2.0 * j as f64 / (len - 1) as f64)
    }
}

/// Sampling grid `[n, out_h, out_w, 2]` of source `(x, y)` for each theta row.
///
/// `x = s_w * u + t_x` and `y = s_h * v + t_y` for target lattice point `(u, v)`.
pub fn affine_grid<F: Element>(theta: &Tensor<F>, out_h: usize, out_w: usize) -> Result<Tensor<F>> {
    let [n, k] = theta.dims2("affine_grid")?;
    if k != THETA_LEN {
        return Err(Error::Axis { op: "affine_grid", axis: 1, expected: THETA_LEN, got: k });
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument("affine_grid output extents must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(n * out_h * out_w * 2);
    for row in theta.data().chunks(THETA_LEN) {
        let (sh, sw, tx, ty) = (row[0], row[1], row[2], row[3]);
        for i in 0..out_h {
            let v: F = lattice(i, out_h);
            for j in 0..out_w {
                let u: F = lattice(j, out_w);
                out.push(sw * u + tx);
                out.push(sh * v + ty);
            }
        }
    }
    Tensor::new([n, out_h, out_w, 2], out)
}

pub fn affine_grid_backward<F: Element>(grad_grid: &Tensor<F>) -> Tensor<F> {
    let (n, out_h, out_w) = (grad_grid.shape()[0], grad_grid.shape()[1], grad_grid.shape()[2]);
    let g = grad_grid.data();
    let mut out = Vec::with_capacity(n * THETA_LEN);
    for item in 0..n {
        let (mut gsh, mut gsw, mut gtx, mut gty) = (F::zero(), F::zero(), F::zero(), F::zero());
        for i in 0..out_h {
            let v: F = lattice(i, out_h);
            for j in 0..out_w {
                let u: F = lattice(j, out_w);
                let base = ((item * out_h + i) * out_w + j) * 2;
                let (gx, gy) = (g[base], g[base + 1]);
                gsw += gx * u;
                gtx += gx;
                gsh += gy * v;
                gty += gy;
            }
        }
        out.extend([gsh, gsw, gtx, gty]);
    }
    Tensor::new([n, THETA_LEN], out).expect("theta shape")
}

/// Bilinear corner weights and integer origin for a pixel coordinate.
struct Corners<F> {
    x0: isize,
    y0: isize,
    fx: F,
    fy: F,
}

impl<F: Element> Corners<F> {
    /// Coordinates within a few ulps of a pixel centre snap onto it, so lattice points sample exactly.
    #[inline]
    fn new(px: F, py: F, w: usize, h: usize) -> Self {
        let px = snap(px, w);
        let py = snap(py, h);
        let fx0 = px.floor();
        let fy0 = py.floor();
        Self {
            x0: fx0.as_f64() as isize,
            y0: fy0.as_f64() as isize,
            fx: px - fx0,
            fy: py - fy0,
        }
    }
}

#[inline]
fn snap<F: Element>(p: F, extent: usize) -> F {
    let r = p.round();
    if (p - r).abs() <= F::epsilon() * F::from_usize(4 * extent.max(1)) {
        r
    } else {
        p
    }
}

#[inline]
fn to_pixel<F: Element>(coord: F, extent: usize) -> F {
    (coord + F::one()) / F::from_f64(2.0) * F::from_usize(extent - 1)
}

#[inline]
fn fetch<F: Element>(plane: &[F], h: usize, w: usize, y: isize, x: isize) -> F {
    if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
        F::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

fn check_sample_shapes<F: Element>(input: &Tensor<F>, grid: &Tensor<F>) -> Result<([usize; 4], usize, usize)> {
    let dims = input.dims4("bilinear_sample")?;
    let gs = grid.shape();
    if gs.len() != 4 || gs[3] != 2 {
        return Err(Error::Rank { op: "bilinear_sample grid", expected: 4, got: gs.to_vec() });
    }
    if gs[0] != dims[0] {
        return Err(Error::Axis { op: "bilinear_sample", axis: 0, expected: dims[0], got: gs[0] });
    }
    Ok((dims, gs[1], gs[2]))
}

/// Samples `input: [n, c, h, w]` at `grid: [n, out_h, out_w, 2]`.
pub fn bilinear_sample<F: Element>(input: &Tensor<F>, grid: &Tensor<F>) -> Result<Tensor<F>> {
    let ([n, c, h, w], oh, ow) = check_sample_shapes(input, grid)?;
    let x = input.data();
    let gd = grid.data();
    let mut out = vec![F::zero(); n * c * oh * ow];
    for item in 0..n {
        for p in 0..oh * ow {
            let base = (item * oh * ow + p) * 2;
            let cr = Corners::new(to_pixel(gd[base], w), to_pixel(gd[base + 1], h), w, h);
            let (one_fx, one_fy) = (F::one() - cr.fx, F::one() - cr.fy);
            for ch in 0..c {
                let plane = &x[(item * c + ch) * h * w..(item * c + ch + 1) * h * w];
                let v00 = fetch(plane, h, w, cr.y0, cr.x0);
                let v01 = fetch(plane, h, w, cr.y0, cr.x0 + 1);
                let v10 = fetch(plane, h, w, cr.y0 + 1, cr.x0);
                let v11 = fetch(plane, h, w, cr.y0 + 1, cr.x0 + 1);
                out[(item * c + ch) * oh * ow + p] =
                    one_fy * (one_fx * v00 + cr.fx * v01) + cr.fy * (one_fx * v10 + cr.fx * v11);
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Gradients of [`bilinear_sample`] for the source tensor and the grid coordinates.
pub fn bilinear_sample_backward<F: Element>(
    input: &Tensor<F>,
    grid: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let ([n, c, h, w], oh, ow) = check_sample_shapes(input, grid)?;
    let x = input.data();
    let gd = grid.data();
    let go = grad_out.data();
    let mut gx = vec![F::zero(); x.len()];
    let mut gg = vec![F::zero(); gd.len()];
    let half = F::from_f64(0.5);
    let (sx, sy) = (half * F::from_usize(w - 1), half * F::from_usize(h - 1));
    for item in 0..n {
        for p in 0..oh * ow {
            let base = (item * oh * ow + p) * 2;
            let cr = Corners::new(to_pixel(gd[base], w), to_pixel(gd[base + 1], h), w, h);
            let (one_fx, one_fy) = (F::one() - cr.fx, F::one() - cr.fy);
            let (mut dpx, mut dpy) = (F::zero(), F::zero());
            for ch in 0..c {
                let off = (item * c + ch) * h * w;
                let plane = &x[off..off + h * w];
                let g = go[(item * c + ch) * oh * ow + p];
                let v00 = fetch(plane, h, w, cr.y0, cr.x0);
                let v01 = fetch(plane, h, w, cr.y0, cr.x0 + 1);
                let v10 = fetch(plane, h, w, cr.y0 + 1, cr.x0);
                let v11 = fetch(plane, h, w, cr.y0 + 1, cr.x0 + 1);
                dpx += g * (one_fy * (v01 - v00) + cr.fy * (v11 - v10));
                dpy += g * (one_fx * (v10 - v00) + cr.fx * (v11 - v01));
                let corners = [
                    (cr.y0, cr.x0, one_fy * one_fx),
                    (cr.y0, cr.x0 + 1, one_fy * cr.fx),
                    (cr.y0 + 1, cr.x0, cr.fy * one_fx),
                    (cr.y0 + 1, cr.x0 + 1, cr.fy * cr.fx),
                ];
                for (yy, xx, wgt) in corners {
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        gx[off + yy as usize * w + xx as usize] += g * wgt;
                    }
                }
            }
            gg[base] = dpx * sx;
            gg[base + 1] = dpy * sy;
        }
    }
    Ok((Tensor::new(input.shape(), gx)?, Tensor::new(grid.shape(), gg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(sh: f64, sw: f64, tx: f64, ty: f64) -> Tensor<f64> {
        Tensor::from_f64([1, 4], &[sh, sw, tx, ty]).unwrap()
    }

    #[test]
    fn identity_warp_is_exact_at_32_bit() {
        for h in 1..=20 {
            for w in 1..=20 {
                let x = Tensor::<f32>::from_fn([1, 1, h, w], |i| (i as f32 * 0.7310).sin() * 50.0);
                let theta = Tensor::<f32>::from_f64([1, 4], &[1.0, 1.0, 0.0, 0.0]).unwrap();
                let out = bilinear_sample(&x, &affine_grid(&theta, h, w).unwrap()).unwrap();
                assert!(out.bit_eq(&x), "{h}x{w}");
            }
        }
    }

    #[test]
    fn identity_grid_matches_lattice() {
        let g = affine_grid(&theta(1.0, 1.0, 0.0, 0.0), 3, 3).unwrap();
        assert_eq!(&g.data()[..6], &[-1.0, -1.0, 0.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn half_scale_spans_central_half() {
        let g = affine_grid(&theta(0.5, 0.5, 0.0, 0.0), 5, 5).unwrap();
        let xs: Vec<f64> = g.data().iter().step_by(2).copied().collect();
        let ys: Vec<f64> = g.data().iter().skip(1).step_by(2).copied().collect();
        assert_eq!(xs.iter().cloned().fold(f64::INFINITY, f64::min), -0.5);
        assert_eq!(xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 0.5);
        assert_eq!(ys.iter().cloned().fold(f64::INFINITY, f64::min), -0.5);
        assert_eq!(ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 0.5);
    }

    #[test]
    fn right_center_crop_coordinates() {
        let g = affine_grid(&theta(0.5, 0.5, 0.5, 0.0), 2, 2).unwrap();
        // (u, v) in {-1, 1}^2 -> x in {0, 1}, y in {-0.5, 0.5}
        assert_eq!(g.data(), [0.0, -0.5, 1.0, -0.5, 0.0, 0.5, 1.0, 0.5]);
    }

    #[test]
    fn single_point_grid_is_the_translation() {
        let g = affine_grid(&theta(0.5, 0.5, 0.25, -0.125), 1, 1).unwrap();
        assert_eq!(g.data(), [0.25, -0.125]);
    }

    #[test]
    fn center_of_two_by_two_is_mean() {
        let x = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let grid = Tensor::<f64>::from_f64([1, 1, 1, 2], &[0.0, 0.0]).unwrap();
        assert_eq!(bilinear_sample(&x, &grid).unwrap().item(), 2.5);
    }

    #[test]
    fn fully_outside_reads_zero() {
        let x = Tensor::<f64>::from_fn([1, 1, 4, 4], |i| 1.0 + i as f64);
        let grid = Tensor::<f64>::from_f64([1, 1, 1, 2], &[2.0, 0.0]).unwrap();
        assert_eq!(bilinear_sample(&x, &grid).unwrap().item(), 0.0);
    }

    #[test]
    fn lattice_points_are_exact() {
        let x = Tensor::<f64>::from_fn([1, 2, 5, 4], |i| (i as f64 * 0.37).sin());
        let grid = affine_grid(&theta(1.0, 1.0, 0.0, 0.0), 5, 4).unwrap();
        assert!(bilinear_sample(&x, &grid).unwrap().bit_eq(&x));
    }
}
