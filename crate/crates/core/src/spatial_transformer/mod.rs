//! Translation-only spatial transformers that crop `T` regions per item.
//!
//! Each head pools its stage feature, maps it linearly to `2T` numbers and
//! squashes them with `tanh` into the translation box that keeps a crop of
//! fixed scale `s` inside `[-1, 1]`. Regions are sampled from the stage
//! feature and folded into the batch axis item-major: row `item * T + r`.

pub mod sampling;

use rand::Rng;

pub use sampling::{affine_grid, bilinear_sample, lattice, THETA_LEN};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{Bound, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_REGIONS: usize = 4;
pub const DEFAULT_SCALE: f64 = 0.5;

/// One crop: scales and translation in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub s_h: f64,
    pub s_w: f64,
    pub t_x: f64,
    pub t_y: f64,
}

impl AffineParams {
    pub fn centered(scale: f64) -> Self {
        Self { s_h: scale, s_w: scale, t_x: 0.0, t_y: 0.0 }
    }

    /// Whether the crop lies inside the source on both axes.
    pub fn in_bounds(&self) -> bool {
        self.t_x.abs() + self.s_w <= 1.0 && self.t_y.abs() + self.s_h <= 1.0
    }

    pub fn theta<F: Element>(&self) -> [F; THETA_LEN] {
        [F::from_f64(self.s_h), F::from_f64(self.s_w), F::from_f64(self.t_x), F::from_f64(self.t_y)]
    }

    /// Pixel-space corners `(x0, y0, x1, y1)` of the crop on an `h x w` image.
    pub fn pixel_rect(&self, h: usize, w: usize) -> (f64, f64, f64, f64) {
        let px = |c: f64, extent: usize| (c + 1.0) / 2.0 * (extent.max(1) - 1) as f64;
        (
            px(self.t_x - self.s_w, w),
            px(self.t_y - self.s_h, h),
            px(self.t_x + self.s_w, w),
            px(self.t_y + self.s_h, h),
        )
    }
}

/// How the head's weight matrix starts out; the bias always starts at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    #[default]
    Zero,
    Uniform,
}

/// Cropped regions of one stage together with their bookkeeping.
#[derive(Debug, Clone)]
pub struct Regions {
    /// `[n * T, c, out_h, out_w]`
    pub regions: Var,
    /// `[n, 2T]` as `(t_x, t_y)` pairs
    pub translations: Var,
    pub params: Vec<Vec<AffineParams>>,
    /// `(item, region)` for each row of `regions`.
    pub index: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct LocalizationHead {
    channels: usize,
    regions: usize,
    scale_h: f64,
    scale_w: f64,
    weight: ParamId,
    bias: ParamId,
}

impl LocalizationHead {
    /// Registers `st.<stage>.loc.weight` (`[2T, c]`) and `st.<stage>.loc.bias` (`[2T]`).
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        stage: usize,
        channels: usize,
        regions: usize,
        scale: f64,
        init: HeadInit,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if channels == 0 || regions == 0 {
            return Err(Error::Config("localization head needs channels >= 1 and regions >= 1".into()));
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Config(format!("crop scale {scale} must lie in (0, 1]")));
        }
        let shape = [2 * regions, channels];
        let name = format!("st.{stage}.loc.weight");
        let weight = match init {
            HeadInit::Zero => store.add(name, Tensor::zeros(shape))?,
            HeadInit::Uniform => store.add_uniform(name, shape, 1.0 / (channels as f64).sqrt(), rng)?,
        };
        let bias = store.add(format!("st.{stage}.loc.bias"), Tensor::zeros([2 * regions]))?;
        Ok(Self { channels, regions, scale_h: scale, scale_w: scale, weight, bias })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn scale(&self) -> (f64, f64) {
        (self.scale_h, self.scale_w)
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    /// Translations `[n, 2T]` bounded by `1 - s` on each axis.
    pub fn translations<F: Element>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        let [_, c, _, _] = g.value(x).dims4("localize_regions")?;
        if c != self.channels {
            return Err(Error::Axis { op: "localize_regions", axis: 1, expected: self.channels, got: c });
        }
        let pooled = g.global_avg_pool(x)?;
        let pooled = g.flatten(pooled)?;
        let pre = g.linear(pooled, p[self.weight], Some(p[self.bias]))?;
        let squashed = g.tanh(pre);
        let (bx, by) = (1.0 - self.scale_w, 1.0 - self.scale_h);
        if bx == by {
            return Ok(g.scale(squashed, F::from_f64(bx)));
        }
        let k = 2 * self.regions;
        let bounds = Tensor::from_fn([1, k], |i| F::from_f64(if i % 2 == 0 { bx } else { by }));
        let bounds = g.input(bounds);
        g.broadcast_mul(squashed, bounds)
    }

    /// Translations plus the per-item list of `T` crops they describe.
    pub fn localize_regions<F: Element>(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        x: Var,
    ) -> Result<(Var, Vec<Vec<AffineParams>>)> {
        let t = self.translations(g, p, x)?;
        let params = g
            .value(t)
            .data()
            .chunks(2 * self.regions)
            .map(|row| {
                row.chunks(2)
                    .map(|pair| AffineParams {
                        s_h: self.scale_h,
                        s_w: self.scale_w,
                        t_x: pair[0].as_f64(),
                        t_y: pair[1].as_f64(),
                    })
                    .collect()
            })
            .collect();
        Ok((t, params))
    }

    /// Samples `T` crops of `x` at `out_h x out_w`, folded into the batch axis.
    pub fn extract_regions<F: Element>(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        x: Var,
        out_h: usize,
        out_w: usize,
    ) -> Result<Regions> {
        let n = g.shape(x)[0];
        let (translations, params) = self.localize_regions(g, p, x)?;
        let theta =
            g.region_theta(translations, self.regions, F::from_f64(self.scale_h), F::from_f64(self.scale_w))?;
        let grid = g.affine_grid(theta, out_h, out_w)?;
        let source = if self.regions == 1 { x } else { g.repeat_items(x, self.regions)? };
        let regions = g.bilinear_sample(source, grid)?;
        let index = (0..n).flat_map(|i| (0..self.regions).map(move |r| (i, r))).collect();
        Ok(Regions { regions, translations, params, index })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gradcheck::grad_check;

    fn head(c: usize, t: usize, scale: f64, init: HeadInit) -> (ParamStore<f64>, LocalizationHead) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = LocalizationHead::new(&mut store, 3, c, t, scale, init, &mut rng).unwrap();
        (store, h)
    }

    #[test]
    fn parameter_names_and_shapes() {
        let (store, h) = head(6, 4, 0.5, HeadInit::Zero);
        assert_eq!(store.get(h.weight()).name(), "st.3.loc.weight");
        assert_eq!(store.get(h.weight()).value().shape(), [8, 6]);
        assert_eq!(store.get(h.bias()).name(), "st.3.loc.bias");
        assert_eq!(store.get(h.bias()).value().shape(), [8]);
    }

    #[test]
    fn zero_head_gives_centered_half_crops() {
        let (store, h) = head(2, 4, 0.5, HeadInit::Zero);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(Tensor::from_fn([3, 2, 4, 4], |i| i as f64));
        let (t, params) = h.localize_regions(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(t), [3, 8]);
        assert_eq!(params.len(), 3);
        for item in &params {
            assert_eq!(item.len(), 4);
            assert!(item.iter().all(|a| *a == AffineParams::centered(0.5)));
        }
    }

    #[test]
    fn saturated_head_stays_inside_the_box() {
        let (mut store, h) = head(1, 1, 0.5, HeadInit::Zero);
        store.get_mut(h.weight()).set_value(Tensor::from_f64([2, 1], &[1e6, -1e6]).unwrap()).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(Tensor::full([1, 1, 2, 2], 5.0));
        let (_, params) = h.localize_regions(&mut g, &p, x).unwrap();
        let a = params[0][0];
        assert!(a.t_x < 0.5 && a.t_x > 0.4999);
        assert!(a.t_y > -0.5 && a.t_y < -0.4999);
        assert!(a.in_bounds());
    }

    #[test]
    fn identity_hook_reproduces_the_feature() {
        let (store, h) = head(3, 2, 1.0, HeadInit::Uniform);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let src = Tensor::from_fn([2, 3, 5, 4], |i| (i as f64 * 0.41).cos());
        let x = g.input(src.clone());
        let r = h.extract_regions(&mut g, &p, x, 5, 4).unwrap();
        assert_eq!(r.index, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let out = g.value(r.regions);
        for (row, &(item, _)) in r.index.iter().enumerate() {
            let got = out.narrow_batch(row, 1).unwrap();
            assert!(got.bit_eq(&src.narrow_batch(item, 1).unwrap()));
        }
    }

    #[test]
    fn zero_init_ramp_crops_match_coordinate_formula() {
        let (store, h) = head(1, 4, 0.5, HeadInit::Zero);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(Tensor::from_fn([1, 1, 8, 8], |i| i as f64));
        let r = h.extract_regions(&mut g, &p, x, 8, 8).unwrap();
        let out = g.value(r.regions);
        assert_eq!(out.shape(), [4, 1, 8, 8]);
        for region in 0..4 {
            for i in 0..8 {
                for j in 0..8 {
                    // ramp value 8*row + col is linear, so bilinear sampling is exact
                    let u = -1.0 + 2.0 * j as f64 / 7.0;
                    let v = -1.0 + 2.0 * i as f64 / 7.0;
                    let col = (0.5 * u + 1.0) * 3.5;
                    let row = (0.5 * v + 1.0) * 3.5;
                    let got = out.data()[region * 64 + i * 8 + j];
                    assert!((got - (8.0 * row + col)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_through_extraction_match_differences() {
        let (store, h) = head(3, 2, 0.5, HeadInit::Uniform);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::from_fn([2, 3, 5, 5], |_| rng.gen_range(-1.0..1.0));
        let mut inputs = vec![x];
        inputs.extend(store.values());
        let report = grad_check(&inputs, 1e-5, |g, vars| {
            let p = Bound::from_vars(vars[1..].to_vec());
            Ok(h.extract_regions(g, &p, vars[0], 4, 4)?.regions)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-5, "{report:?}");
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let (store, h) = head(4, 2, 0.5, HeadInit::Zero);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(Tensor::zeros([1, 3, 2, 2]));
        assert!(matches!(h.translations(&mut g, &p, x), Err(Error::Axis { axis: 1, .. })));
    }

    #[test]
    fn pixel_rect_of_centered_half_crop() {
        let a = AffineParams::centered(0.5);
        assert_eq!(a.pixel_rect(9, 9), (2.0, 2.0, 6.0, 6.0));
    }
}
