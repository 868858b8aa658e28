//! Gradient-check suites over the kernels and the composed modules.
//!
//! Inputs are drawn away from the kinks of ReLU, max and bilinear sampling
//! so central differences are meaningful. Everything runs at 64-bit.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gradcheck::grad_check_refined;
use crate::graph::{Graph, Var};
use crate::network::{total_loss, LossWeights, Sglanet};
use crate::param::{Bound, ParamStore};
use crate::sca::{apply_attention, spatial_attention, AttentionMode, ScaModule};
use crate::spatial_transformer::{HeadInit, LocalizationHead};
use crate::tensor::Tensor;

/// Largest relative error a suite accepts.
pub const TOLERANCE: f64 = 1e-4;

/// Step ladder: the first step is the nominal one, the rest re-probe kinks.
const STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Tensor,
    Sca,
    St,
    Network,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Scope::All,
            "tensor" => Scope::Tensor,
            "sca" => Scope::Sca,
            "st" => Scope::St,
            "network" => Scope::Network,
            other => return Err(Error::Argument(format!("unknown scope {other:?}"))),
        })
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::All => "all",
            Scope::Tensor => "tensor",
            Scope::Sca => "sca",
            Scope::St => "st",
            Scope::Network => "network",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub scope: Scope,
    pub name: String,
    pub max_rel_error: f64,
    pub probed: usize,
    pub refined: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

/// Replaces every `*.bias` parameter with uniform noise in `±0.2`.
pub fn jitter_biases(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for p in store.iter_mut() {
        if p.name().ends_with(".bias") {
            let (value, _) = p.parts_mut();
            for v in value.data_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
}

fn uniform(shape: impl Into<Vec<usize>>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Magnitudes in `[0.1, 1]` with random sign.
fn off_zero(shape: impl Into<Vec<usize>>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced by 0.1 in shuffled order.
fn distinct(shape: impl Into<Vec<usize>>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let shape = shape.into();
    let len: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Tensor::from_fn(shape, |i| order[i] as f64 * 0.1 - len as f64 * 0.05)
}

struct Runner {
    scope: Scope,
    out: Vec<CheckOutcome>,
}

impl Runner {
    fn check<Fwd>(&mut self, name: &str, inputs: &[Tensor<f64>], forward: Fwd) -> Result<()>
    where
        Fwd: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let report = grad_check_refined(inputs, &STEPS, TOLERANCE, forward)?;
        self.out.push(CheckOutcome {
            scope: self.scope,
            name: name.to_string(),
            max_rel_error: report.max_rel_error,
            probed: report.probed,
            refined: report.refined,
        });
        Ok(())
    }

    /// Checks `forward` with respect to `x` and every parameter of `store`.
    fn check_params<Fwd>(&mut self, name: &str, x: Tensor<f64>, store: &ParamStore<f64>, forward: Fwd) -> Result<()>
    where
        Fwd: Fn(&mut Graph<f64>, &Bound, Var) -> Result<Var>,
    {
        let mut inputs = vec![x];
        inputs.extend(store.values());
        self.check(name, &inputs, |g, vars| {
            let p = Bound::from_vars(vars[1..].to_vec());
            forward(g, &p, vars[0])
        })
    }
}

fn tensor_suite(r: &mut Runner) -> Result<()> {
    let rng = &mut ChaCha8Rng::seed_from_u64(100);
    let x = uniform([1, 2, 4, 4], rng);
    let w = uniform([3, 2, 3, 3], rng);
    let b = uniform([3], rng);
    r.check("conv2d", &[x.clone(), w.clone(), b.clone()], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1))?;
    let x5 = uniform([2, 2, 5, 5], rng);
    r.check("conv2d_stride2", &[x5, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1))?;
    let (xl, wl, bl) = (uniform([3, 4], rng), uniform([5, 4], rng), uniform([5], rng));
    r.check("linear", &[xl, wl, bl], |g, v| g.linear(v[0], v[1], Some(v[2])))?;
    r.check("relu", &[off_zero([2, 3, 3], rng)], |g, v| Ok(g.relu(v[0])))?;
    r.check("tanh", &[uniform([2, 5], rng)], |g, v| Ok(g.tanh(v[0])))?;
    r.check("global_avg_pool", &[uniform([2, 3, 3, 4], rng)], |g, v| g.global_avg_pool(v[0]))?;
    r.check("channel_mean", &[uniform([2, 3, 3, 4], rng)], |g, v| g.channel_mean(v[0]))?;
    r.check("max_pool", &[distinct([1, 2, 5, 5], rng)], |g, v| g.max_pool(v[0], 3, 1, 1))?;
    r.check("max_pool_stride2", &[distinct([1, 2, 6, 6], rng)], |g, v| g.max_pool(v[0], 2, 2, 0))?;
    r.check("group_max", &[distinct([6, 4], rng)], |g, v| g.group_max(v[0], 3))?;
    let (a, c) = (uniform([2, 1, 3, 3], rng), uniform([2, 4, 1, 1], rng));
    r.check("broadcast_mul", &[a, c], |g, v| g.broadcast_mul(v[0], v[1]))?;
    let (p, q) = (uniform([2, 2, 3], rng), uniform([2, 3, 3], rng));
    r.check("concat_slice", &[p, q], |g, v| {
        let cat = g.concat_channels(&[v[0], v[1]])?;
        g.slice_channels(cat, 1, 3)
    })?;
    r.check("softmax_cross_entropy", &[uniform([4, 5], rng)], |g, v| {
        g.softmax_cross_entropy(v[0], &[0, 4, 2, 2])
    })?;
    let (l1, l2) = (uniform([1], rng), uniform([1], rng));
    r.check("weighted_sum", &[l1, l2], |g, v| g.weighted_sum(&[(v[0], 1.0), (v[1], 0.5)]))?;
    r.check("repeat_items", &[uniform([2, 3], rng)], |g, v| g.repeat_items(v[0], 3))?;
    Ok(())
}

fn sca_suite(r: &mut Runner) -> Result<()> {
    let rng = &mut ChaCha8Rng::seed_from_u64(200);
    let mut store = ParamStore::new();
    let module = ScaModule::new(&mut store, 1, 8, 2, rng)?;
    let x = uniform([2, 8, 3, 3], rng).map(f64::abs);
    r.check("spatial_attention", &[x.clone()], |g, v| spatial_attention(g, v[0]))?;
    r.check_params("channel_attention", x.clone(), &store, |g, p, x| module.channel_attention(g, p, x))?;
    r.check_params("hybrid_attention", x.clone(), &store, |g, p, x| Ok(module.hybrid_attention(g, p, x)?.hybrid))?;
    r.check_params("sca_gate", x.clone(), &store, |g, p, x| Ok(module.forward(g, p, x, AttentionMode::Gate)?.0))?;
    r.check_params("sca_residual", x, &store, |g, p, x| {
        let maps = module.hybrid_attention(g, p, x)?;
        apply_attention(g, x, &maps, AttentionMode::Residual)
    })?;
    Ok(())
}

fn st_suite(r: &mut Runner) -> Result<()> {
    let rng = &mut ChaCha8Rng::seed_from_u64(300);
    let theta = Tensor::from_fn([3, 4], |i| if i % 4 < 2 { rng.gen_range(0.3..0.7) } else { rng.gen_range(-0.3..0.3) });
    r.check("affine_grid", &[theta], |g, v| g.affine_grid(v[0], 3, 4))?;
    // pixel positions with fractional part in [0.2, 0.8]
    let (h, w) = (5usize, 6usize);
    let mut grid = Vec::new();
    for _ in 0..2 * 3 * 3 {
        let px = rng.gen_range(0..w - 1) as f64 + rng.gen_range(0.2..0.8);
        let py = rng.gen_range(0..h - 1) as f64 + rng.gen_range(0.2..0.8);
        grid.push(px / (w - 1) as f64 * 2.0 - 1.0);
        grid.push(py / (h - 1) as f64 * 2.0 - 1.0);
    }
    let grid = Tensor::new([2, 3, 3, 2], grid)?;
    let src = uniform([2, 2, h, w], rng);
    r.check("bilinear_sample", &[src, grid], |g, v| g.bilinear_sample(v[0], v[1]))?;
    let mut store = ParamStore::new();
    let head = LocalizationHead::new(&mut store, 1, 3, 2, 0.5, HeadInit::Uniform, rng)?;
    jitter_biases(&mut store, 301);
    let x = uniform([2, 3, 5, 5], rng);
    r.check_params("extract_regions", x, &store, |g, p, x| Ok(head.extract_regions(g, p, x, 4, 4)?.regions))?;
    Ok(())
}

fn network_suite(r: &mut Runner) -> Result<()> {
    let config = ModelConfig::micro();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let net = Sglanet::new(&config, &mut store, &mut rng)?;
    jitter_biases(&mut store, 401);
    // gated features are cubic in activation scale, so inputs span [-3, 3]
    let x = uniform([2, config.in_channels, config.resolution, config.resolution], &mut rng).map(|v| 3.0 * v);
    r.check_params("glofls", x.clone(), &store, |g, p, x| {
        let stages = net.backbone_forward(g, p, x)?;
        let tapped: Vec<Var> = config.tapped.iter().map(|&s| stages[s - 1]).collect();
        Ok(net.glofls_forward(g, p, &tapped)?.1)
    })?;
    r.check_params("locfls", x.clone(), &store, |g, p, x| {
        let stages = net.backbone_forward(g, p, x)?;
        let tapped: Vec<Var> = config.tapped.iter().map(|&s| stages[s - 1]).collect();
        Ok(net.locfls_forward(g, p, &tapped)?.1)
    })?;
    r.check_params("sglanet_loss", x, &store, |g, p, x| {
        let out = net.forward(g, p, x)?;
        Ok(total_loss(g, &out, &[0, 2], LossWeights::default())?.total)
    })?;
    Ok(())
}

/// Runs the suites selected by `scope` and reports every check.
pub fn run_suite(scope: Scope) -> Result<Vec<CheckOutcome>> {
    let scopes = match scope {
        Scope::All => vec![Scope::Tensor, Scope::Sca, Scope::St, Scope::Network],
        s => vec![s],
    };
    let mut out = Vec::new();
    for s in scopes {
        let mut r = Runner { scope: s, out: Vec::new() };
        match s {
            Scope::Tensor => tensor_suite(&mut r)?,
            Scope::Sca => sca_suite(&mut r)?,
            Scope::St => st_suite(&mut r)?,
            Scope::Network => network_suite(&mut r)?,
            Scope::All => unreachable!(),
        }
        out.extend(r.out);
    }
    Ok(out)
}
