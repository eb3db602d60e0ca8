//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use deforma_core::affine::{fit_affine, rescale_affine};
use deforma_core::metrics::{masked_ssim, ssim};
use deforma_core::nnloss::{
    combined_objective, gan_losses, l1_loss, nn_loss, nn_loss_bruteforce, nn_loss_fast,
    GeneratorLoss, DEFAULT_LAMBDA,
};
use deforma_core::pose::encode_heatmaps;
use deforma_core::regions::{
    apply_symmetry, decompose, limb_rectangle, rasterize_mask, Mask, Part, Region, RegionConfig,
};
use deforma_core::tensor::{joint, pose_to_json, write_tensor, Joint, Keypoints, NUM_JOINTS};
use deforma_core::warp::{merge_average, merge_linear, merge_max, warp_feature};
use deforma_core::{AffineTransform, Config, LossReport, Point2, SsimParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, (h, w, c): (usize, usize, usize), lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(h, w, c, |_, _, _| rng.random_range(lo..hi)).unwrap()
}

fn rel_close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= abs.max(rel * a.abs().max(b.abs()))
}

// ---------------------------------------------------------------- 1

fn nn_equivalence() -> Outcome {
    let start = Instant::now();
    let shapes = [(8, 8, 1), (16, 16, 8), (64, 32, 16)];
    let windows = [1, 3, 5];
    let mut r = rng(101);
    let mut worst = 0f64;
    for i in 0..200 {
        let shape = shapes[i % 3];
        let n = windows[(i / 3) % 3];
        let a = random_tensor(&mut r, shape, -1.0, 1.0);
        let b = random_tensor(&mut r, shape, -1.0, 1.0);
        let fast = nn_loss_fast(&a, &b, n).map_err(|e| e.to_string())?;
        let brute = nn_loss_bruteforce(&a, &b, n).map_err(|e| e.to_string())?;
        ensure!(
            rel_close(fast, brute, 1e-5, 1e-9),
            "pair {i} {shape:?} n={n}: fast {fast} vs brute {brute}"
        );
        if brute != 0.0 {
            worst = worst.max((fast - brute).abs() / brute.abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("200 pairs, worst relative gap {worst:.2e}, {secs:.2}s"))
}

// ---------------------------------------------------------------- 2

fn nn_special_cases() -> Outcome {
    let mut r = rng(202);
    for i in 0..50 {
        let shape = (r.random_range(1..12), r.random_range(1..12), r.random_range(1..6));
        let a = random_tensor(&mut r, shape, -2.0, 2.0);
        let b = random_tensor(&mut r, shape, -2.0, 2.0);

        let mut l1_oracle = 0f64;
        for (x, y) in a.data().iter().zip(b.data()) {
            l1_oracle += (x - y).abs() as f64;
        }
        let l1 = l1_loss(&a, &b).unwrap();
        ensure!(rel_close(l1, l1_oracle, 1e-6, 1e-9), "pair {i}: l1 {l1} vs loop {l1_oracle}");
        ensure!(nn_loss(&a, &b, 1).unwrap() == l1, "pair {i}: n=1 differs from l1");
        ensure!(nn_loss_fast(&a, &b, 1).unwrap() == l1, "pair {i}: fast n=1 differs from l1");
        ensure!(
            rel_close(nn_loss_bruteforce(&a, &b, 1).unwrap(), l1, 1e-6, 1e-9),
            "pair {i}: brute n=1 far from l1"
        );

        for n in [1, 3, 5, 7] {
            ensure!(nn_loss(&a, &a, n).unwrap() == 0.0, "pair {i}: self loss n={n}");
            ensure!(nn_loss_bruteforce(&a, &a, n).unwrap() == 0.0, "pair {i}: brute self loss n={n}");
        }
        let mut prev_fast = f64::INFINITY;
        let mut prev_brute = f64::INFINITY;
        for n in [1, 3, 5, 7] {
            let f = nn_loss_fast(&a, &b, n).unwrap();
            let br = nn_loss_bruteforce(&a, &b, n).unwrap();
            ensure!(f <= prev_fast && br <= prev_brute, "pair {i}: loss grew at n={n}");
            prev_fast = f;
            prev_brute = br;
        }
    }
    Ok("50 pairs".into())
}

// ---------------------------------------------------------------- 3

fn timed(f: impl Fn() -> f64) -> (f64, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn nn_performance() -> Outcome {
    let start = Instant::now();
    let mut r = rng(303);
    let a = random_tensor(&mut r, (128, 64, 64), -1.0, 1.0);
    let b = random_tensor(&mut r, (128, 64, 64), -1.0, 1.0);
    // warm up the thread pool and caches
    nn_loss_fast(&a, &b, 5).unwrap();
    // interleaved runs, fastest of each, to damp scheduler noise
    let (mut fast, mut brute) = (0.0, 0.0);
    let (mut t_fast, mut t_brute) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..15 {
        let (v, t) = timed(|| nn_loss_fast(&a, &b, 5).unwrap());
        (fast, t_fast) = (v, t_fast.min(t));
        let (v, t) = timed(|| nn_loss_bruteforce(&a, &b, 5).unwrap());
        (brute, t_brute) = (v, t_brute.min(t));
    }
    ensure!(rel_close(fast, brute, 1e-5, 1e-9), "values differ: {fast} vs {brute}");
    let ratio = t_fast / t_brute;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "fast {:.2} ms, brute {:.2} ms, ratio {ratio:.3}, {secs:.1}s",
        t_fast * 1e3,
        t_brute * 1e3
    );
    ensure!(ratio <= 0.5, "{detail}");
    ensure!(secs < 30.0, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 4

fn random_transform(r: &mut ChaCha8Rng) -> AffineTransform {
    loop {
        let t = AffineTransform::new(
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
            r.random_range(-100.0..100.0),
            r.random_range(-100.0..100.0),
        );
        if t.det().abs() > 0.1 {
            return t;
        }
    }
}

fn affine_recovery() -> Outcome {
    let mut r = rng(404);
    let mut worst = 0f64;
    for i in 0..1000 {
        let truth = random_transform(&mut r);
        let j1 = Point2::new(r.random_range(0.0..200.0), r.random_range(0.0..200.0));
        let j2 = Point2::new(r.random_range(0.0..200.0), r.random_range(0.0..200.0));
        if j1.distance(j2) < 5.0 {
            continue;
        }
        let src = limb_rectangle(j1, j2, r.random_range(5.0..60.0)).unwrap();
        let dst: Vec<Point2> = src
            .iter()
            .map(|p| {
                Point2::new(
                    truth.a11 * p.x + truth.a12 * p.y + truth.tx,
                    truth.a21 * p.x + truth.a22 * p.y + truth.ty,
                )
            })
            .collect();
        let fit = fit_affine(&src, &dst).map_err(|e| format!("fit {i}: {e}"))?;
        for (got, want) in fit.params().iter().zip(truth.params()) {
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
            ensure!(err < 1e-6, "fit {i}: parameter {got} vs {want}");
        }
    }

    for i in 0..1000 {
        let t = random_transform(&mut r);
        let from = (r.random_range(1..512), r.random_range(1..512));
        let to = (r.random_range(1..512), r.random_range(1..512));
        let p = Point2::new(r.random_range(0.0..from.1 as f64), r.random_range(0.0..from.0 as f64));
        let (sx, sy) = (to.1 as f64 / from.1 as f64, to.0 as f64 / from.0 as f64);
        let scaled = rescale_affine(&t, from, to).apply(Point2::new(p.x * sx, p.y * sy));
        let q = t.apply(p);
        let want = Point2::new(q.x * sx, q.y * sy);
        let scale = want.x.abs().max(want.y.abs()).max(1.0);
        ensure!(
            scaled.distance(want) <= 1e-6 * scale,
            "rescale {i}: {scaled:?} vs {want:?}"
        );
    }
    Ok(format!("worst parameter error {worst:.2e}"))
}

// ---------------------------------------------------------------- 5

fn single_joint(x: f32, y: f32) -> Keypoints {
    let mut joints = [None; NUM_JOINTS];
    joints[joint::NECK] = Some(Joint::new(x, y));
    Keypoints::new(joints).unwrap()
}

fn heatmap_values() -> Outcome {
    let sigma = Config::default().sigma;
    ensure!(sigma == 6.0, "default sigma is {sigma}");
    let hm = encode_heatmaps(&single_joint(10.0, 20.0), 64, 64, sigma).unwrap();
    let at_joint = hm.value(joint::NECK, 20, 10) as f64;
    ensure!((at_joint - 1.0).abs() < 1e-6, "value at joint {at_joint}");
    let e = (-1f64).exp();
    for (row, col) in [(20, 46), (56, 10)] {
        let v = hm.value(joint::NECK, row, col) as f64;
        ensure!((v - e).abs() < 1e-6, "value at distance 36: {v}");
    }
    for j in 0..NUM_JOINTS {
        if j != joint::NECK {
            ensure!(
                (0..64).all(|r| (0..64).all(|c| hm.value(j, r, c) == 0.0)),
                "missing joint {j} has a non-zero map"
            );
        }
    }

    let mut r = rng(505);
    let (h, w) = (48, 40);
    for i in 0..100 {
        // coordinates on a 1/256 grid so integer shifts stay exact in f32
        let mut joints = [None; NUM_JOINTS];
        for slot in joints.iter_mut() {
            if r.random_bool(0.8) {
                let x = r.random_range(0..w * 256) as f32 / 256.0;
                let y = r.random_range(0..h * 256) as f32 / 256.0;
                *slot = Some(Joint::new(x, y));
            }
        }
        let kp = Keypoints::new(joints).unwrap();
        let (dx, dy) = (r.random_range(-10i32..=10), r.random_range(-10i32..=10));
        let base = encode_heatmaps(&kp, h, w, sigma).unwrap();
        let moved = encode_heatmaps(&kp.translated(dx as f32, dy as f32), h, w, sigma).unwrap();
        for row in 0..h as i32 {
            for col in 0..w as i32 {
                let (r2, c2) = (row + dy, col + dx);
                if r2 < 0 || c2 < 0 || r2 >= h as i32 || c2 >= w as i32 {
                    continue;
                }
                for j in 0..NUM_JOINTS {
                    let a = base.value(j, row as usize, col as usize);
                    let b = moved.value(j, r2 as usize, c2 as usize);
                    ensure!(a == b, "pose {i} joint {j}: {a} vs {b} at ({row},{col})");
                }
            }
        }
    }
    Ok("100 translated poses".into())
}

// ---------------------------------------------------------------- 6

fn warp_identity_and_shift() -> Outcome {
    let mut r = rng(606);
    for i in 0..100 {
        let shape = (r.random_range(1..20), r.random_range(1..20), r.random_range(1..5));
        let (h, w, c) = shape;
        let f = random_tensor(&mut r, shape, -5.0, 5.0);
        let out = warp_feature(&f, &Mask::ones(h, w), &AffineTransform::IDENTITY).unwrap();
        let same = out.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "tensor {i}: identity warp is not bit-exact");

        let mask_bits: Vec<f32> = (0..h * w).map(|_| r.random_range(0..2) as f32).collect();
        let mask = Mask::from_tensor(Tensor::new(h, w, 1, mask_bits.clone()).unwrap()).unwrap();
        let (dx, dy) = (r.random_range(-6i64..=6), r.random_range(-6i64..=6));
        let t = AffineTransform::translation(dx as f64, dy as f64);
        let out = warp_feature(&f, &mask, &t).unwrap();
        for row in 0..h {
            for col in 0..w {
                let (sr, sc) = (row as i64 - dy, col as i64 - dx);
                let inside = sr >= 0 && sc >= 0 && sr < h as i64 && sc < w as i64;
                for ch in 0..c {
                    let want = if inside {
                        let (sr, sc) = (sr as usize, sc as usize);
                        f.get(sr, sc, ch) * mask_bits[sr * w + sc]
                    } else {
                        0.0
                    };
                    let got = out.get(row, col, ch);
                    ensure!(got == want, "tensor {i} shift ({dx},{dy}): {got} vs {want}");
                }
            }
        }
    }
    Ok("100 tensors".into())
}

// ---------------------------------------------------------------- 7

fn merges() -> Outcome {
    let mut r = rng(707);
    for i in 0..100 {
        let shape = (r.random_range(1..9), r.random_range(1..9), r.random_range(1..4));
        let (h, w, c) = shape;
        let parts: Vec<Tensor> = (0..10).map(|_| random_tensor(&mut r, shape, 0.0, 1.0)).collect();
        let raw: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..h * w).map(|_| r.random_range(0.01..1.0)).collect())
            .collect();
        let weights: Vec<Tensor> = raw
            .iter()
            .map(|wv| {
                let data = (0..h * w)
                    .map(|loc| (wv[loc] / raw.iter().map(|x| x[loc]).sum::<f64>()) as f32)
                    .collect();
                Tensor::new(h, w, 1, data).unwrap()
            })
            .collect();

        let mx = merge_max(&parts).unwrap();
        let avg = merge_average(&parts).unwrap();
        let lin = merge_linear(&parts, &weights).unwrap();
        let uniform = vec![Tensor::filled(h, w, 1, 0.1); 10];
        let lin_uniform = merge_linear(&parts, &uniform).unwrap();

        for row in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let mut m = f32::NEG_INFINITY;
                    let mut s = 0f64;
                    let mut l = 0f64;
                    for (k, p) in parts.iter().enumerate() {
                        let v = p.get(row, col, ch);
                        if v > m {
                            m = v;
                        }
                        s += v as f64;
                        l += weights[k].get(row, col, 0) as f64 * v as f64;
                    }
                    let mean = s / 10.0;
                    let at = format!("stack {i} at ({row},{col},{ch})");
                    ensure!(mx.get(row, col, ch) == m, "{at}: max");
                    ensure!((avg.get(row, col, ch) as f64 - mean).abs() < 1e-6, "{at}: average");
                    ensure!((lin.get(row, col, ch) as f64 - l).abs() < 1e-6, "{at}: linear");
                    ensure!(
                        (lin_uniform.get(row, col, ch) - avg.get(row, col, ch)).abs() < 1e-6,
                        "{at}: uniform linear vs average"
                    );
                    ensure!(mx.get(row, col, ch) >= avg.get(row, col, ch), "{at}: max < average");
                }
            }
        }
    }
    Ok("100 stacks of 10".into())
}

// ---------------------------------------------------------------- 8

/// Inclusive point-in-convex-polygon test from edge cross products.
fn inside_polygon(corners: &[Point2; 4], p: Point2) -> bool {
    let mut pos = false;
    let mut neg = false;
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        let scale = a.distance(b).max(1.0);
        if cross > 1e-9 * scale {
            pos = true;
        } else if cross < -1e-9 * scale {
            neg = true;
        }
    }
    !(pos && neg)
}

fn full_pose(r: &mut ChaCha8Rng, h: f32, w: f32) -> Keypoints {
    let mut joints = [None; NUM_JOINTS];
    for slot in joints.iter_mut() {
        *slot = Some(Joint::new(r.random_range(0.0..w), r.random_range(0.0..h)));
    }
    Keypoints::new(joints).unwrap()
}

fn region_geometry() -> Outcome {
    let mut r = rng(808);
    let mut ones = 0usize;
    for i in 0..200 {
        let j1 = Point2::new(r.random_range(-10.0..74.0), r.random_range(-10.0..74.0));
        let j2 = Point2::new(r.random_range(-10.0..74.0), r.random_range(-10.0..74.0));
        let Some(corners) = limb_rectangle(j1, j2, r.random_range(1.0..30.0)) else {
            continue;
        };
        let region = Region { part: Part::LUArm, corners: Some(corners), source_dims: (64, 64) };
        let mask = rasterize_mask(&region, 64, 64);
        for row in 0..64 {
            for col in 0..64 {
                let want = inside_polygon(&corners, Point2::new(col as f64, row as f64));
                let got = mask.get(row, col) == 1.0;
                ensure!(got == want, "rectangle {i}: pixel ({row},{col}) mask {got} oracle {want}");
                ones += got as usize;
            }
        }
    }

    let cfg = RegionConfig::default();
    let anchors = [joint::L_SHOULDER, joint::R_SHOULDER, joint::L_HIP, joint::R_HIP];
    for i in 0..100 {
        let kp = full_pose(&mut r, 128.0, 64.0);
        let xs: Vec<f64> = anchors.iter().map(|&j| kp.get(j).unwrap().x as f64).collect();
        let ys: Vec<f64> = anchors.iter().map(|&j| kp.get(j).unwrap().y as f64).collect();
        let bw = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        let bh = ys.iter().cloned().fold(f64::MIN, f64::max) - ys.iter().cloned().fold(f64::MAX, f64::min);
        let expected = (bw * bw + bh * bh).sqrt() / 3.0;
        for region in decompose(&kp, 128, 64, &cfg) {
            let (Some(c), Some(_)) = (region.corners, region.part.limb_joints()) else {
                continue;
            };
            let minor = c[0].distance(c[3]);
            ensure!(
                (minor - expected).abs() < 1e-4,
                "pose {i} {}: minor axis {minor} vs {expected}",
                region.part
            );
        }
    }

    let pairs = [
        (Part::LUArm, Part::RUArm),
        (Part::LLArm, Part::RLArm),
        (Part::LULeg, Part::RULeg),
        (Part::LLLeg, Part::RLLeg),
    ];
    let marker = |part: Part, side: f64| {
        let k = part.index() as f64 + side;
        Some([
            Point2::new(k, 0.0),
            Point2::new(k + 1.0, 0.0),
            Point2::new(k + 1.0, 1.0),
            Point2::new(k, 1.0),
        ])
    };
    for (left, right) in pairs {
        for bits in 0..16u32 {
            let present = |b: u32| bits & (1 << b) != 0;
            let build = |side: f64, l: bool, rr: bool| -> Vec<Region> {
                Part::ALL
                    .iter()
                    .map(|&part| {
                        let on = if part == left {
                            l
                        } else if part == right {
                            rr
                        } else {
                            true
                        };
                        Region {
                            part,
                            corners: if on { marker(part, side) } else { None },
                            source_dims: (10, 10),
                        }
                    })
                    .collect()
            };
            let a = build(0.0, present(0), present(1));
            let b = build(100.0, present(2), present(3));
            let out = apply_symmetry(&a, &b);
            for (idx, region) in out.iter().enumerate() {
                let part = Part::ALL[idx];
                let want = if part == left || part == right {
                    let twin = if part == left { right } else { left };
                    let (own_a, own_b, twin_a) = (
                        a[part.index()].corners,
                        b[part.index()].corners,
                        a[twin.index()].corners,
                    );
                    if own_a.is_none() && own_b.is_some() && twin_a.is_some() {
                        twin_a
                    } else {
                        own_a
                    }
                } else {
                    a[idx].corners
                };
                ensure!(
                    region.corners == want,
                    "pair {left}/{right} case {bits:04b}: {part} wrong"
                );
            }
            ensure!(apply_symmetry(&out, &b) == out, "pair {left}/{right} case {bits:04b}: not idempotent");
        }
    }
    Ok(format!("200 rectangles ({ones} lit pixels), 100 poses, 4x16 symmetry cases"))
}

// ---------------------------------------------------------------- 9

/// Direct windowed SSIM: every 11x11 window evaluated with its own 2D
/// Gaussian weights.
fn ssim_oracle(x: &Tensor, y: &Tensor) -> f64 {
    let (h, w, c) = x.shape();
    let mut weights = [[0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let mut score = 0.0;
    for ch in 0..c {
        let mut sum = 0.0;
        let mut count = 0;
        for r0 in 0..=h - 11 {
            for c0 in 0..=w - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let g = weights[i][j] / total;
                        mx += g * x.get(r0 + i, c0 + j, ch) as f64;
                        my += g * y.get(r0 + i, c0 + j, ch) as f64;
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let g = weights[i][j] / total;
                        let a = x.get(r0 + i, c0 + j, ch) as f64 - mx;
                        let b = y.get(r0 + i, c0 + j, ch) as f64 - my;
                        vx += g * a * a;
                        vy += g * b * b;
                        cov += g * a * b;
                    }
                }
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        score += sum / count as f64;
    }
    score / c as f64
}

fn ssim_checks() -> Outcome {
    let p = SsimParams::default();
    let mut r = rng(909);
    let mut worst = 0f64;
    for i in 0..50 {
        let shape = (r.random_range(11..24), r.random_range(11..24), r.random_range(1..4));
        let x = random_tensor(&mut r, shape, 0.0, 1.0);
        // y: a noisy copy of x so the scores spread over a useful range
        let noise = r.random_range(0.0..0.5f32);
        let jitter = random_tensor(&mut r, shape, -0.5, 0.5);
        let y = Tensor::from_fn(shape.0, shape.1, shape.2, |row, col, ch| {
            (x.get(row, col, ch) + noise * jitter.get(row, col, ch)).clamp(0.0, 1.0)
        })
        .unwrap();

        let self_score = ssim(&x, &x, &p).unwrap();
        ensure!((self_score - 1.0).abs() < 1e-9, "pair {i}: self ssim {self_score}");
        let xy = ssim(&x, &y, &p).unwrap();
        let yx = ssim(&y, &x, &p).unwrap();
        ensure!((xy - yx).abs() < 1e-9, "pair {i}: asymmetric {xy} vs {yx}");
        let oracle = ssim_oracle(&x, &y);
        worst = worst.max((xy - oracle).abs());
        ensure!((xy - oracle).abs() < 1e-6, "pair {i}: {xy} vs oracle {oracle}");
        let masked = masked_ssim(&x, &y, &Mask::ones(shape.0, shape.1), &p).unwrap();
        ensure!(masked == xy, "pair {i}: all-ones mask {masked} vs {xy}");
    }
    Ok(format!("50 pairs, worst oracle gap {worst:.2e}"))
}

// ---------------------------------------------------------------- 10

fn losses() -> Outcome {
    let (d, _) = gan_losses(&[0.5], &[0.5], GeneratorLoss::NonSaturating).unwrap();
    let want = 2.0 * std::f64::consts::LN_2;
    ensure!((d - want).abs() < 1e-9, "d-term {d} vs {want}");
    ensure!(DEFAULT_LAMBDA == 0.01, "default lambda {DEFAULT_LAMBDA}");
    ensure!(Config::default().lambda == 0.01, "config lambda {}", Config::default().lambda);

    let mut r = rng(1010);
    for i in 0..100 {
        let shape = (r.random_range(1..10), r.random_range(1..10), r.random_range(1..4));
        let a = random_tensor(&mut r, shape, 0.0, 1.0);
        let b = random_tensor(&mut r, shape, 0.0, 1.0);
        let real: Vec<f64> = (0..r.random_range(1..6)).map(|_| r.random_range(0.01..0.99)).collect();
        let fake: Vec<f64> = (0..r.random_range(1..6)).map(|_| r.random_range(0.01..0.99)).collect();
        let n = [1, 3, 5][i % 3];
        let lambda = if i % 2 == 0 { DEFAULT_LAMBDA } else { r.random_range(0.0..1.0) };
        let form = if i % 4 == 3 { GeneratorLoss::Saturating } else { GeneratorLoss::NonSaturating };
        let rep = LossReport::compute(&a, &b, &a, &b, &real, &fake, n, lambda, form).unwrap();

        let d_oracle = -real.iter().map(|s| s.ln()).sum::<f64>() / real.len() as f64
            - fake.iter().map(|s| (1.0 - s).ln()).sum::<f64>() / fake.len() as f64;
        let g_oracle = match form {
            GeneratorLoss::NonSaturating => -fake.iter().map(|s| s.ln()).sum::<f64>() / fake.len() as f64,
            GeneratorLoss::Saturating => fake.iter().map(|s| (1.0 - s).ln()).sum::<f64>() / fake.len() as f64,
        };
        ensure!(rep.nn >= 0.0 && rep.l1 >= 0.0, "report {i}: negative loss");
        ensure!(rep.nn <= rep.l1, "report {i}: nn above l1");
        ensure!((rep.gan_d - d_oracle).abs() < 1e-9, "report {i}: d {}", rep.gan_d);
        ensure!((rep.gan_g - g_oracle).abs() < 1e-9, "report {i}: g {}", rep.gan_g);
        ensure!(
            rep.combined == combined_objective(rep.gan_g, rep.nn, rep.lambda)
                && (rep.combined - (rep.gan_g + lambda * rep.nn)).abs() < 1e-9,
            "report {i}: combined {}",
            rep.combined
        );
        ensure!(rep.lambda == lambda && rep.n == n, "report {i}: settings not recorded");
    }
    Ok("100 reports".into())
}

// ---------------------------------------------------------------- 11

fn deforma(args: &[&str]) -> Result<(Vec<u8>, String), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deforma"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "deforma {args:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok((out.stdout, String::from_utf8_lossy(&out.stderr).into_owned()))
}

fn write_pose_file(path: &Path, kp: &Keypoints) {
    std::fs::write(path, pose_to_json(kp)).unwrap();
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_owned()
}

fn determinism_and_format() -> Outcome {
    let mut r = rng(1111);
    let mut header_checked = 0;
    for i in 0..100 {
        let (h, w, c) = (r.random_range(1..9), r.random_range(1..9), r.random_range(1..5));
        let mut data: Vec<f32> = (0..h * w * c)
            .map(|_| loop {
                let v = f32::from_bits(r.random::<u32>());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let specials = [-0.0f32, 0.0, f32::from_bits(1), f32::from_bits(0x8000_0001), f32::from_bits(0x007f_ffff)];
        for (k, s) in specials.iter().enumerate() {
            let idx = (k * 7 + i) % data.len();
            data[idx] = *s;
        }
        let t = Tensor::new(h, w, c, data).unwrap();
        let bytes = t.to_bytes();
        let mut header = b"DFT1".to_vec();
        for d in [h, w, c] {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        header.push(0);
        ensure!(bytes[..17] == header[..], "tensor {i}: header bytes");
        let payload: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        ensure!(bytes[17..] == payload[..], "tensor {i}: payload bytes");
        let back = Tensor::from_bytes(&bytes).map_err(|e| e.to_string())?;
        ensure!(back.shape() == t.shape(), "tensor {i}: shape");
        ensure!(
            back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "tensor {i}: payload not bit-exact"
        );
        header_checked += 1;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let file = |name: &str| -> PathBuf { d.join(name) };
    let pose_a = full_pose(&mut r, 128.0, 64.0);
    let pose_b = full_pose(&mut r, 128.0, 64.0);
    write_pose_file(&file("a.json"), &pose_a);
    write_pose_file(&file("b.json"), &pose_b);
    write_tensor(&random_tensor(&mut r, (32, 16, 4), -1.0, 1.0), file("feat.dft")).unwrap();
    write_tensor(&random_tensor(&mut r, (128, 64, 3), 0.0, 1.0), file("img.dft")).unwrap();
    write_tensor(&random_tensor(&mut r, (24, 20, 3), 0.0, 1.0), file("x.dft")).unwrap();
    write_tensor(&random_tensor(&mut r, (24, 20, 3), 0.0, 1.0), file("y.dft")).unwrap();
    let (a, b) = (path_str(&file("a.json")), path_str(&file("b.json")));
    let regions = path_str(&file("regions.json"));
    deforma(&["regions", "--pose-a", &a, "--pose-b", &b, "--height", "128", "--width", "64", "--out", &regions])?;

    let feat = path_str(&file("feat.dft"));
    let img = path_str(&file("img.dft"));
    let x = path_str(&file("x.dft"));
    let y = path_str(&file("y.dft"));
    // (name, args, writes a file through --out)
    let commands: Vec<(&str, Vec<&str>, bool)> = vec![
        ("heatmap", vec!["heatmap", "--pose", &a, "--height", "64", "--width", "32"], true),
        ("regions", vec!["regions", "--pose-a", &a, "--pose-b", &b, "--height", "128", "--width", "64"], true),
        ("mask", vec!["mask", "--regions", &regions, "--part", "luarm"], true),
        ("affine", vec!["affine", "--regions", &regions, "--part", "rlleg", "--to", "32x16"], false),
        (
            "warp",
            vec!["warp", "--features", &feat, "--pose-a", &a, "--pose-b", &b, "--image-height", "128", "--image-width", "64"],
            true,
        ),
        ("nnloss", vec!["nnloss", "--a", &x, "--b", &y, "--n", "3"], false),
        ("ssim", vec!["ssim", "--a", &x, "--b", &y], false),
        ("perturb", vec!["perturb", "--pose", &a, "--sigma-noise", "3", "--seed", "7"], true),
        ("deform-image", vec!["deform-image", "--image", &img, "--pose-a", &a, "--pose-b", &b], true),
        ("bench", vec!["bench", "--height", "16", "--width", "16", "--channels", "8", "--n", "3"], false),
    ];
    let mut names = Vec::new();
    for (name, args, writes) in &commands {
        let mut runs = Vec::new();
        for run in 0..2 {
            let mut argv = args.clone();
            let out = path_str(&file(&format!("{name}.{run}.out")));
            if *writes {
                argv.extend(["--out", &out]);
            }
            let (stdout, _) = deforma(&argv)?;
            let written = if *writes { std::fs::read(&out).map_err(|e| e.to_string())? } else { Vec::new() };
            runs.push((stdout, written));
        }
        ensure!(runs[0] == runs[1], "{name}: output differs between runs");
        ensure!(!runs[0].0.is_empty() || !runs[0].1.is_empty(), "{name}: produced nothing");
        names.push(*name);
    }
    Ok(format!("{header_checked} round trips; {} subcommands: {}", names.len(), names.join(" ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("nn-loss fast path matches brute force", nn_equivalence),
        ("nn-loss special cases", nn_special_cases),
        ("nn-loss fast path performance", nn_performance),
        ("affine recovery and rescaling", affine_recovery),
        ("heatmap values and translation", heatmap_values),
        ("warp identity and integer shifts", warp_identity_and_shift),
        ("merge strategies", merges),
        ("region geometry and symmetry", region_geometry),
        ("ssim", ssim_checks),
        ("loss terms", losses),
        ("cli determinism and tensor format", determinism_and_format),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
