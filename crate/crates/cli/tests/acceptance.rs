//! End-to-end acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process;
use std::time::{Duration, Instant};

use common::*;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sglanet::config::{ModelConfig, Preset, TrainConfig};
use sglanet::network::{total_loss, LossWeights, Sglanet};
use sglanet::ops::{conv2d, softmax_cross_entropy};
use sglanet::sca::ScaModule;
use sglanet::spatial_transformer::{affine_grid, bilinear_sample, AffineParams, HeadInit, LocalizationHead};
use sglanet::synthetic::write_corpus;
use sglanet::training::{load_dataset, lr_schedule, topk_accuracy, LoadedSplit, Split, Trainer};
use sglanet::{Element, Graph, ParamStore, Tensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random<F: Element>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::from_fn(shape.to_vec(), |_| F::from_f64(rng.gen_range(-1.0..1.0)))
}

fn ulps<F: Element>(a: F, b: F) -> u64 {
    if a == b {
        0
    } else {
        (a.bits() as i128 - b.bits() as i128).unsigned_abs() as u64
    }
}

const EXPECTED_OPS: [&str; 26] = [
    "conv2d",
    "conv2d_stride2",
    "linear",
    "relu",
    "tanh",
    "global_avg_pool",
    "channel_mean",
    "max_pool",
    "max_pool_stride2",
    "group_max",
    "broadcast_mul",
    "concat_slice",
    "softmax_cross_entropy",
    "weighted_sum",
    "repeat_items",
    "spatial_attention",
    "channel_attention",
    "hybrid_attention",
    "sca_gate",
    "sca_residual",
    "affine_grid",
    "bilinear_sample",
    "extract_regions",
    "glofls",
    "locfls",
    "sglanet_loss",
];

fn gradient_suite() -> Outcome {
    let micro = ModelConfig::micro();
    ensure(
        micro.resolution == 8 && micro.widths.iter().all(|&w| w <= 8) && micro.classes == 3,
        || format!("micro config drifted: {micro:?}"),
    )?;
    let start = Instant::now();
    let out = run(&["gradcheck", "--scope", "all"]);
    let elapsed = start.elapsed();
    ensure(out.status.success(), || format!("gradcheck exited {:?}: {}", out.status.code(), stderr(&out)))?;
    let lines = json_lines(&stdout(&out));
    let mut worst = 0.0f64;
    for op in EXPECTED_OPS {
        let line = lines.iter().find(|l| l["op"] == op).ok_or_else(|| format!("{op} was not checked"))?;
        let err = line["max_rel_error"].as_f64().unwrap();
        ensure(err <= 1e-4, || format!("{op}: relative error {err:.3e}"))?;
        worst = worst.max(err);
    }
    ensure(elapsed < Duration::from_secs(60), || format!("suite took {elapsed:?}"))?;
    Ok(format!("{} checks, worst relative error {worst:.2e}, {:.1}s", lines.len(), elapsed.as_secs_f64()))
}

fn hybrid_decomposes<F: Element>(rng: &mut ChaCha8Rng) -> Result<u64, String> {
    let mut worst = 0;
    for _ in 0..100 {
        let (r, hidden, h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=5));
        let c = r * hidden;
        let mut store = ParamStore::<F>::new();
        let module = ScaModule::new(&mut store, 1, c, r, rng).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(random(&[2, c, h, w], rng));
        let maps = module.hybrid_attention(&mut g, &p, x).map_err(|e| e.to_string())?;
        let (s, ch, hy) = (g.value(maps.spatial), g.value(maps.channel), g.value(maps.hybrid));
        for (i, &v) in hy.data().iter().enumerate() {
            let (n, k, site) = (i / (c * h * w), (i / (h * w)) % c, i % (h * w));
            worst = worst.max(ulps(v, s.data()[n * h * w + site] * ch.data()[n * c + k]));
        }
    }
    Ok(worst)
}

fn loss_decomposes<F: Element>(rng: &mut ChaCha8Rng) -> Result<(u64, bool), String> {
    let cfg = ModelConfig::micro();
    let mut store = ParamStore::<F>::new();
    let net = Sglanet::new(&cfg, &mut store, rng).map_err(|e| e.to_string())?;
    let image = random::<F>(&[3, cfg.in_channels, cfg.resolution, cfg.resolution], rng);
    let labels = [0, 2, 1];
    let (mut worst, mut degenerate_exact) = (0, true);
    for g1 in [0.0, 0.25, 0.5, 1.0, 2.5] {
        for g2 in [0.0, 0.3, 0.5, 1.0, 4.0] {
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let x = g.input(image.clone());
            let out = net.forward(&mut g, &p, x).map_err(|e| e.to_string())?;
            let t = total_loss(&mut g, &out, &labels, LossWeights::new(g1, g2).unwrap()).map_err(|e| e.to_string())?;
            let [l, j, gl, lo] = [t.total, t.joint, t.global, t.local].map(|v| g.value(v).item());
            worst = worst.max(ulps(l, j + F::from_f64(g1) * gl + F::from_f64(g2) * lo));
            if g1 == 0.0 && g2 == 0.0 {
                degenerate_exact &= l.bits() == j.bits();
            }
        }
    }
    Ok((worst, degenerate_exact))
}

fn equation_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h32 = hybrid_decomposes::<f32>(&mut rng)?;
    let h64 = hybrid_decomposes::<f64>(&mut rng)?;
    ensure(h32 <= 1 && h64 <= 1, || format!("hybrid differs from spatial*channel by {h32}/{h64} ulp"))?;
    let (l32, z32) = loss_decomposes::<f32>(&mut rng)?;
    let (l64, z64) = loss_decomposes::<f64>(&mut rng)?;
    ensure(l32 <= 1 && l64 <= 1, || format!("total loss off by {l32}/{l64} ulp"))?;
    ensure(z32 && z64, || "zero weights do not reproduce the joint loss bit-exactly".into())?;
    Ok(format!("hybrid {h32}/{h64} ulp, total loss {l32}/{l64} ulp (f32/f64), zero weights bit-exact"))
}

fn ramp(c: usize, h: usize, w: usize, coef: &[[f64; 3]]) -> Tensor<f64> {
    Tensor::from_fn([1, c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        coef[ch][0] + coef[ch][1] * x as f64 + coef[ch][2] * y as f64
    })
}

fn st_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identity = 0.0f32;
    for _ in 0..200 {
        let (h, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let x = random::<f32>(&[1, 2, h, w], &mut rng).map(|v| v * 10.0);
        let theta = Tensor::new([1, 4], AffineParams::centered(1.0).theta::<f32>().to_vec()).unwrap();
        let out = bilinear_sample(&x, &affine_grid(&theta, h, w).unwrap()).unwrap();
        identity = out.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(identity, f32::max);
    }
    ensure(identity <= 1e-6, || format!("identity warp error {identity:e}"))?;

    let (c, h, w, regions) = (2, 8, 8, 4);
    let mut crop_err = 0.0f64;
    let mut crops = 0;
    for init in [HeadInit::Zero, HeadInit::Uniform] {
        for _ in 0..25 {
            let coef: Vec<[f64; 3]> = (0..c).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
            let mut store = ParamStore::<f64>::new();
            let head = LocalizationHead::new(&mut store, 1, c, regions, 0.5, init, &mut rng).unwrap();
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let x = g.input(ramp(c, h, w, &coef));
            let reg = head.extract_regions(&mut g, &p, x, h, w).unwrap();
            let out = g.value(reg.regions);
            for (r, params) in reg.params[0].iter().enumerate() {
                ensure(params.s_h == 0.5 && params.s_w == 0.5 && params.in_bounds(), || format!("bad crop {params:?}"))?;
                if init == HeadInit::Zero {
                    ensure(*params == AffineParams::centered(0.5), || format!("zero head gave {params:?}"))?;
                }
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            let u = -1.0 + 2.0 * j as f64 / (w - 1) as f64;
                            let v = -1.0 + 2.0 * i as f64 / (h - 1) as f64;
                            let px = (0.5 * u + params.t_x + 1.0) / 2.0 * (w - 1) as f64;
                            let py = (0.5 * v + params.t_y + 1.0) / 2.0 * (h - 1) as f64;
                            let want = coef[ch][0] + coef[ch][1] * px + coef[ch][2] * py;
                            let got = out.data()[((r * c + ch) * h + i) * w + j];
                            crop_err = crop_err.max((got - want).abs());
                        }
                    }
                }
                crops += 1;
            }
        }
    }
    ensure(crop_err <= 1e-9, || format!("crop differs from the coordinate oracle by {crop_err:e}"))?;

    let mut violations = 0;
    for _ in 0..1000 {
        let (h, w) = (rng.gen_range(2..=9), rng.gen_range(2..=9));
        let x = random::<f64>(&[1, 1, h, w], &mut rng);
        let (s_h, s_w) = (rng.gen_range(0.05..=1.0), rng.gen_range(0.05..=1.0));
        let p = AffineParams {
            s_h,
            s_w,
            t_x: rng.gen_range(-1.0..=1.0) * (1.0 - s_w),
            t_y: rng.gen_range(-1.0..=1.0) * (1.0 - s_h),
        };
        let grid = affine_grid(&Tensor::new([1, 4], p.theta::<f64>().to_vec()).unwrap(), rng.gen_range(1..=8), rng.gen_range(1..=8)).unwrap();
        let out = bilinear_sample(&x, &grid).unwrap();
        let (lo, hi) = (x.min_value(), x.max_value());
        violations += out.data().iter().filter(|&&v| v < lo - 1e-12 || v > hi + 1e-12).count();
    }
    ensure(violations == 0, || format!("{violations} samples left the source range"))?;
    Ok(format!("identity max err {identity:.1e}, {crops} ramp crops max err {crop_err:.1e}, 1000 convex instances ok"))
}

fn naive_conv(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>, stride: usize, pad: usize) -> Vec<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, kh, kw) = (ws[0], ws[2], ws[3]);
    let (oh, ow) = ((h + 2 * pad - kh) / stride + 1, (wd + 2 * pad - kw) / stride + 1);
    let mut out = Vec::with_capacity(n * co * oh * ow);
    for bn in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.data()[o] as f64;
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                let sy = (y * stride + i) as isize - pad as isize;
                                let sx = (xo * stride + j) as isize - pad as isize;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                    let xv = x.data()[((bn * ci + c) * h + sy as usize) * wd + sx as usize];
                                    acc += xv as f64 * w.data()[((o * ci + c) * kh + i) * kw + j] as f64;
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn sort_rank(row: &[f64], label: usize) -> usize {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx.iter().position(|&i| i == label).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let mut conv_err = 0.0f64;
    let mut conv_cases = 0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=6));
        let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let x = random::<f32>(&[n, ci, h, w], &mut rng);
        for k in 1..=6 {
            for stride in 1..=3 {
                for pad in 0..=2 {
                    if h + 2 * pad < k || w + 2 * pad < k {
                        continue;
                    }
                    let wt = random::<f32>(&[co, ci, k, k], &mut rng);
                    let b = random::<f32>(&[co], &mut rng);
                    let got = conv2d(&x, &wt, Some(&b), stride, pad).map_err(|e| e.to_string())?;
                    let want = naive_conv(&x, &wt, &b, stride, pad);
                    ensure(got.len() == want.len(), || format!("seed {seed}: output size {} vs {}", got.len(), want.len()))?;
                    conv_err = got.data().iter().zip(&want).map(|(a, b)| (*a as f64 - b).abs()).fold(conv_err, f64::max);
                    conv_cases += 1;
                }
            }
        }
    }
    ensure(conv_err <= 1e-5, || format!("conv2d differs from the loop oracle by {conv_err:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for instance in 0..1000 {
        let (n, classes) = (rng.gen_range(1..=6), rng.gen_range(1..=10));
        let logits = Tensor::<f64>::from_fn([n, classes], |_| rng.gen_range(-3i32..=3) as f64);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let k = rng.gen_range(1..=classes);
        let got = topk_accuracy(&logits, &labels, k).map_err(|e| e.to_string())?;
        let hits = logits.data().chunks(classes).zip(&labels).filter(|(r, &l)| sort_rank(r, l) < k).count();
        ensure(got == hits as f64 / n as f64, || format!("top-{k} instance {instance}: {got} vs oracle"))?;
    }

    let mut ce_err = 0.0f64;
    for _ in 0..1000 {
        let (n, k) = (rng.gen_range(1..=6), rng.gen_range(2..=12));
        let logits = random::<f64>(&[n, k], &mut rng).map(|v| v * 8.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let want = logits
            .data()
            .chunks(k)
            .zip(&labels)
            .map(|(row, &l)| row.iter().map(|z| z.exp()).sum::<f64>().ln() - row[l])
            .sum::<f64>()
            / n as f64;
        let got = softmax_cross_entropy(&logits, &labels).map_err(|e| e.to_string())?.loss;
        ce_err = ce_err.max((got - want).abs());
    }
    ensure(ce_err <= 1e-10, || format!("cross-entropy differs from log-sum-exp by {ce_err:e}"))?;
    Ok(format!("conv {conv_cases} cases max err {conv_err:.1e}, top-k 1000/1000 exact, cross-entropy max err {ce_err:.1e}"))
}

struct ToyRun {
    dir: PathBuf,
    train_top1: f64,
    test_top1: f64,
    test_n: u64,
    elapsed: Duration,
}

fn eval_top1(ckpt: &Path, data: &Path, split: &str) -> Result<(f64, u64), String> {
    let out = run(&["eval", path(ckpt), "--data", path(data), "--split", split]);
    ensure(out.status.success(), || format!("eval exited {:?}: {}", out.status.code(), stderr(&out)))?;
    let report = &json_lines(&stdout(&out))[0];
    Ok((report["top1"].as_f64().unwrap(), report["n"].as_u64().unwrap()))
}

fn toy_run(root: &Path, data: &Path, name: &str, extra: &[&str]) -> Result<ToyRun, String> {
    let cfg = write_config(root, "toy.toml", "split = [0.8, 0.0, 0.2]\n");
    let dir = root.join(name);
    let mut args = vec!["train", "--config", path(&cfg), "--data", path(data), "--out", path(&dir)];
    args.extend_from_slice(extra);
    let start = Instant::now();
    let out = run(&args);
    let elapsed = start.elapsed();
    ensure(out.status.success(), || format!("{name} training exited {:?}: {}", out.status.code(), stderr(&out)))?;
    let best = dir.join("best.sgla");
    let (train_top1, _) = eval_top1(&best, data, "train")?;
    let (test_top1, test_n) = eval_top1(&best, data, "test")?;
    Ok(ToyRun { dir, train_top1, test_top1, test_n, elapsed })
}

fn toy_training(root: &Path, trained: &mut Option<PathBuf>) -> Outcome {
    let data = root.join("corpus");
    write_corpus(&data, 250, 7).map_err(|e| e.to_string())?;
    let full = toy_run(root, &data, "full", &[])?;
    *trained = Some(full.dir.join("best.sgla"));
    let joint = toy_run(root, &data, "joint-only", &["--gamma1", "0", "--gamma2", "0"])?;
    let summary = format!(
        "full: train {:.3} test {:.3} in {:.0}s; joint-only: train {:.3} test {:.3} in {:.0}s",
        full.train_top1,
        full.test_top1,
        full.elapsed.as_secs_f64(),
        joint.train_top1,
        joint.test_top1,
        joint.elapsed.as_secs_f64()
    );
    ensure(full.test_n == 200 && joint.test_n == 200, || format!("test split has {} images, expected 200", full.test_n))?;
    ensure(full.train_top1 >= 0.95, || format!("train top-1 below 0.95; {summary}"))?;
    ensure(full.test_top1 >= 0.80, || format!("test top-1 below 0.80; {summary}"))?;
    ensure(full.elapsed < Duration::from_secs(15 * 60), || format!("training exceeded 15 min; {summary}"))?;
    ensure(full.test_top1 >= joint.test_top1 - 0.02, || format!("three-loss run trails joint-only by more than 2 points; {summary}"))?;
    Ok(summary)
}

fn loss_trace(data: &LoadedSplit) -> Result<Vec<u32>, String> {
    let mut trainer = Trainer::new(desk()).map_err(|e| e.to_string())?;
    let order = trainer.epoch_order(data.len(), 0);
    let mut trace = Vec::new();
    for chunk in order.chunks(4).cycle().take(10) {
        let (images, labels) = data.batch(chunk, None).map_err(|e| e.to_string())?;
        let (loss, _) = trainer.train_step(&images, &labels, 1e-2).map_err(|e| e.to_string())?;
        trace.push((loss.loss as f32).to_bits());
    }
    Ok(trace)
}

fn protocol_fidelity(root: &Path) -> Outcome {
    let class = root.join("split").join("only");
    fs::create_dir_all(&class).unwrap();
    let pixel = RgbImage::from_pixel(1, 1, Rgb([10, 20, 30]));
    for i in 0..1000 {
        pixel.save(class.join(format!("{i:04}.png"))).unwrap();
    }
    let index = load_dataset(&root.join("split"), [0.6, 0.1, 0.3], 0).map_err(|e| e.to_string())?;
    let counts = (index.train.len(), index.val.len(), index.test.len());
    ensure(counts == (600, 100, 300), || format!("split gave {counts:?}"))?;

    let paper = TrainConfig::preset(Preset::Paper);
    let lrs = [0, 29, 30, 59, 60].map(|e| lr_schedule(e, &paper));
    let want = [1e-2, 1e-2, 1e-3, 1e-3, 1e-4];
    ensure(lrs.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-15), || format!("schedule {lrs:?}"))?;

    let data_dir = root.join("trace");
    write_corpus(&data_dir, 5, 9).map_err(|e| e.to_string())?;
    let cfg = desk();
    let index = load_dataset(&data_dir, [1.0, 0.0, 0.0], cfg.train.seed).map_err(|e| e.to_string())?;
    let norm = sglanet::training::Normalization { mean: cfg.train.mean, std: cfg.train.std };
    let data = LoadedSplit::load(index.split(Split::Train), cfg.model.resolution, &norm).map_err(|e| e.to_string())?;
    let (a, b) = (loss_trace(&data)?, loss_trace(&data)?);
    ensure(a == b, || "10-step loss traces differ between runs".into())?;
    Ok(format!("split {counts:?}, lr {lrs:?}, 10-step traces bit-identical"))
}

fn visualization(root: &Path, trained: Option<&Path>) -> Outcome {
    let trained = trained.ok_or("no trained toy checkpoint")?;
    let image = root.join("corpus").join("disk-stripes").join("0000.png");
    let count_files = |dir: &Path| fs::read_dir(dir).map(|d| d.count()).unwrap_or(0);

    let vis = root.join("vis-trained");
    let out = run(&["visualize", path(trained), path(&image), "--out", path(&vis)]);
    ensure(out.status.success(), || format!("visualize exited {:?}: {}", out.status.code(), stderr(&out)))?;
    let tapped = desk().model.tapped;
    let files = count_files(&vis);
    ensure(files == 2 * tapped.len(), || format!("{files} files for {} tapped stages", tapped.len()))?;
    for s in &tapped {
        for name in [format!("sca-stage{s}.png"), format!("st-stage{s}.png")] {
            ensure(vis.join(&name).is_file(), || format!("{name} missing"))?;
        }
    }

    let zero = untrained_checkpoint(desk(), &root.join("untrained"), "model.sgla");
    let vis0 = root.join("vis-untrained");
    let out = run(&["visualize", path(&zero), path(&image), "--out", path(&vis0)]);
    ensure(out.status.success(), || format!("visualize exited {:?}: {}", out.status.code(), stderr(&out)))?;
    let r = desk().model.resolution;
    let (x0, y0, x1, y1) = AffineParams::centered(0.5).pixel_rect(r, r);
    let rects = json_lines(&stdout(&out));
    ensure(rects.len() == tapped.len() * desk().model.regions, || format!("{} rectangles", rects.len()))?;
    for rect in &rects {
        let got = ["x0", "y0", "x1", "y1"].map(|k| rect[k].as_f64().unwrap());
        ensure(got == [x0, y0, x1, y1], || format!("untrained region {got:?}, expected centred half crop"))?;
    }
    let boxes = image::open(vis0.join(format!("st-stage{}.png", tapped[0]))).map_err(|e| e.to_string())?.to_rgb8();
    let (cx0, cy0, cx1, cy1) = (x0.round() as u32, y0.round() as u32, x1.round() as u32, y1.round() as u32);
    let corners = [(cx0, cy0), (cx1, cy0), (cx0, cy1), (cx1, cy1)];
    let source = image::open(&image).unwrap().to_rgb8();
    ensure(corners.iter().all(|&(x, y)| boxes.get_pixel(x, y) != source.get_pixel(x, y)), || "box corners not drawn".into())?;
    Ok(format!("{files} files from the trained model; untrained boxes at ({x0}, {y0})-({x1}, {y1})"))
}

fn report(id: usize, name: &str, outcome: std::thread::Result<Outcome>) -> bool {
    let (passed, detail) = match outcome {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => (false, format!("panicked: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())),
    };
    println!("{} criterion {id} ({name}): {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let root = root.path();
    let mut trained = None;
    let results = [
        report(1, "gradient suite", panic::catch_unwind(gradient_suite)),
        report(2, "equation fidelity", panic::catch_unwind(equation_fidelity)),
        report(3, "spatial transformer fidelity", panic::catch_unwind(st_fidelity)),
        report(4, "oracle equivalence", panic::catch_unwind(oracle_equivalence)),
        report(5, "toy training", panic::catch_unwind(AssertUnwindSafe(|| toy_training(root, &mut trained)))),
        report(6, "protocol fidelity", panic::catch_unwind(|| protocol_fidelity(root))),
        report(7, "visualization", panic::catch_unwind(|| visualization(root, trained.as_deref()))),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        process::exit(1);
    }
}
