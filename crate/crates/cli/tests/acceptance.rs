//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Run a subset with `cargo test --release --test acceptance -- 3 4`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use idrive::analysis::CorrelationReport;
use idrive::codec::{decode, encode, AgentBox, AgentKind, DensityMap, SupervisionMask, TIMESTEPS};
use idrive::config::Config;
use idrive::data::{generate_dataset, load_dataset, Sample};
use idrive::losses::{bev_loss, density_loss, total_loss, traffic_loss, waypoint_loss, LossParts, LossWeights};
use idrive::model::{Head, Model, ModelConfig, ModelInput, Targets};
use idrive::sensor::{bev_cell_center, build_pseudo_image, rasterize_bev, transform_points, BevConfig, EgoPose, PointCloud};
use idrive::sim::{evaluate_route, generate_scenario, lead_vehicle_scenario, ExpertPolicy, ModelPolicy, Report, RouteResult, SimConfig, Weather};
use idrive::tensor::{grad_check, grad_check_coords, read_checkpoint, write_checkpoint, Activation, Checkpoint, Graph, ParamId, Precision, Tensor, Var};
use idrive::train::{load_model, Trainer};
use idrive_cli::{cmd_analyze, cmd_eval, cmd_gen_data, cmd_train, load_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn ok<T>(r: idrive::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(start: Instant, limit: Duration, what: &str) -> std::result::Result<(), String> {
    let t = start.elapsed();
    ensure!(t < limit, "{what} took {:.1}s, limit {:.0}s", t.as_secs_f64(), limit.as_secs_f64());
    Ok(())
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

// ---------------------------------------------------------------------------
// 1. gradients

/// Values in ±[0.1, 1.0], kept away from the kinks of relu and abs.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// `sum(y ⊙ W)` with `W` a fixed pseudo-random tensor of `y`'s shape, so
/// every output coordinate contributes a distinct weight.
fn weighted(g: &mut Graph<f64>, y: Var) -> idrive::Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ n as u64);
    let w = Tensor::new(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let wv = g.constant(w);
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

struct PrimitiveCase {
    name: &'static str,
    shape: Vec<usize>,
    f: Box<dyn Fn(&mut Graph<f64>, Var, &Tensor<f64>) -> idrive::Result<Var>>,
    /// Second operand, drawn fresh per trial.
    other: Vec<usize>,
}

fn case(
    name: &'static str,
    shape: &[usize],
    other: &[usize],
    f: impl Fn(&mut Graph<f64>, Var, &Tensor<f64>) -> idrive::Result<Var> + 'static,
) -> PrimitiveCase {
    PrimitiveCase {
        name,
        shape: shape.to_vec(),
        f: Box::new(f),
        other: other.to_vec(),
    }
}

fn primitive_cases() -> Vec<PrimitiveCase> {
    vec![
        case("matmul lhs", &[3, 4], &[4, 2], |g, x, o| {
            let b = g.constant(o.clone());
            g.matmul(x, b)
        }),
        case("matmul rhs", &[4, 2], &[3, 4], |g, x, o| {
            let a = g.constant(o.clone());
            g.matmul(a, x)
        }),
        case("add", &[3, 4], &[3, 4], |g, x, o| {
            let b = g.constant(o.clone());
            g.add(x, b)
        }),
        case("sub", &[3, 4], &[3, 4], |g, x, o| {
            let b = g.constant(o.clone());
            g.sub(b, x)
        }),
        case("mul", &[3, 4], &[3, 4], |g, x, o| {
            let b = g.constant(o.clone());
            g.mul(x, b)
        }),
        case("square", &[5], &[], |g, x, _| g.mul(x, x)),
        case("scale", &[6], &[], |g, x, _| Ok(g.scale(x, -1.7))),
        case("add_scalar", &[6], &[], |g, x, _| Ok(g.add_scalar(x, 0.3))),
        case("one_minus", &[6], &[], |g, x, _| Ok(g.one_minus(x))),
        case("abs", &[6], &[], |g, x, _| Ok(g.abs(x))),
        case("add_bias input", &[3, 4], &[4], |g, x, o| {
            let b = g.constant(o.clone());
            g.add_bias(x, b, 1)
        }),
        case("add_bias bias", &[3], &[3, 4, 2], |g, x, o| {
            let a = g.constant(o.clone());
            g.add_bias(a, x, 0)
        }),
        case("mul_broadcast input", &[2, 3, 4], &[3], |g, x, o| {
            let w = g.constant(o.clone());
            g.mul_broadcast(x, w, 1)
        }),
        case("mul_broadcast weight", &[4], &[2, 3, 4], |g, x, o| {
            let a = g.constant(o.clone());
            g.mul_broadcast(a, x, 2)
        }),
        case("relu", &[8], &[], |g, x, _| Ok(g.activation(x, Activation::Relu))),
        case("gelu", &[8], &[], |g, x, _| Ok(g.activation(x, Activation::Gelu))),
        case("sigmoid", &[8], &[], |g, x, _| Ok(g.activation(x, Activation::Sigmoid))),
        case("tanh", &[8], &[], |g, x, _| Ok(g.activation(x, Activation::Tanh))),
        case("softmax axis 0", &[3, 4], &[], |g, x, _| g.softmax(x, 0)),
        case("softmax axis 1", &[3, 4], &[], |g, x, _| g.softmax(x, 1)),
        case("sum", &[2, 3], &[], |g, x, _| {
            let s = g.sum(x);
            g.mul(s, s)
        }),
        case("mean", &[2, 3], &[], |g, x, _| {
            let s = g.mean(x);
            g.mul(s, s)
        }),
        case("global_avg_pool", &[3, 4, 4], &[], |g, x, _| g.global_avg_pool(x)),
        case("avg_pool_2d", &[2, 4, 6], &[], |g, x, _| g.avg_pool_2d(x, 2)),
        case("reshape", &[2, 6], &[], |g, x, _| g.reshape(x, &[3, 4])),
        case("transpose", &[3, 5], &[], |g, x, _| g.transpose(x)),
        case("concat axis 0", &[2, 3], &[1, 3], |g, x, o| {
            let b = g.constant(o.clone());
            g.concat(&[b, x, x], 0)
        }),
        case("concat axis 1", &[2, 3], &[2, 2], |g, x, o| {
            let b = g.constant(o.clone());
            g.concat(&[x, b], 1)
        }),
        case("narrow", &[3, 6], &[], |g, x, _| g.narrow(x, 1, 2, 3)),
        case("conv2d input", &[2, 5, 5], &[3, 2, 3, 3], |g, x, o| {
            let w = g.constant(o.clone());
            g.conv2d(x, w, 1, 1)
        }),
        case("conv2d kernel", &[3, 2, 3, 3], &[2, 5, 5], |g, x, o| {
            let a = g.constant(o.clone());
            g.conv2d(a, x, 1, 1)
        }),
        case("conv2d strided", &[2, 7, 7], &[2, 2, 3, 3], |g, x, o| {
            let w = g.constant(o.clone());
            g.conv2d(x, w, 2, 0)
        }),
        case("depthwise_conv2d input", &[2, 5, 5], &[2, 3, 3], |g, x, o| {
            let w = g.constant(o.clone());
            g.depthwise_conv2d(x, w, 1, 1)
        }),
        case("depthwise_conv2d kernel", &[2, 3, 3], &[2, 6, 6], |g, x, o| {
            let a = g.constant(o.clone());
            g.depthwise_conv2d(a, x, 2, 1)
        }),
        case("upsample_nearest", &[2, 3, 3], &[], |g, x, _| g.upsample_nearest(x, 2)),
        case("conv1d_same input", &[9], &[5], |g, x, o| {
            let w = g.constant(o.clone());
            g.conv1d_same(x, w)
        }),
        case("conv1d_same kernel", &[5], &[9], |g, x, o| {
            let a = g.constant(o.clone());
            g.conv1d_same(a, x)
        }),
        case("layer_norm input", &[3, 5], &[2, 5], |g, x, o| {
            let gamma = g.constant(Tensor::new(&[5], o.data()[..5].to_vec())?);
            let beta = g.constant(Tensor::new(&[5], o.data()[5..].to_vec())?);
            g.layer_norm(x, gamma, beta, 1e-5)
        }),
        case("layer_norm gamma", &[5], &[3, 5], |g, x, o| {
            let a = g.constant(o.clone());
            let beta = g.constant(Tensor::zeros(&[5]));
            g.layer_norm(a, x, beta, 1e-5)
        }),
        case("layer_norm beta", &[5], &[3, 5], |g, x, o| {
            let a = g.constant(o.clone());
            let gamma = g.constant(Tensor::new(&[5], vec![1.0; 5])?);
            g.layer_norm(a, gamma, x, 1e-5)
        }),
        case("bce_with_logits", &[2, 4], &[8], |g, x, o| {
            let t: Vec<f64> = o.data().iter().map(|v| v.abs()).collect();
            g.bce_with_logits(x, &t)
        }),
        case("cross_entropy", &[3, 5], &[], |g, x, _| g.cross_entropy(x, &[0, 2, 1, 1, 2])),
        case("smooth_l1_masked", &[8], &[8], |g, x, o| {
            // inputs are scaled near zero below, so residuals sit in
            // [0.08, 0.8] or [1.08, 1.8], clear of the transition at 1
            let t: Vec<f64> = o.data().iter().enumerate().map(|(i, v)| 0.8 * v + if i % 2 == 0 { 0.0 } else { v.signum() }).collect();
            let mask = [true, true, false, true, true, true, false, true];
            g.smooth_l1_masked(x, &t, &mask)
        }),
    ]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    let mut checks = 0;
    for c in primitive_cases() {
        for trial in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * trial + c.name.len() as u64);
            let mut x = away_from_zero(&mut rng, &c.shape);
            if c.name == "smooth_l1_masked" {
                x.data_mut().iter_mut().for_each(|v| *v *= 1e-3);
            }
            let other = if c.other.is_empty() { Tensor::zeros(&[1]) } else { away_from_zero(&mut rng, &c.other) };
            let f = |g: &mut Graph<f64>, xv: Var| {
                let y = (c.f)(g, xv, &other)?;
                weighted(g, y)
            };
            let rep = ok(grad_check(f, &x, 1e-5))?;
            checks += 1;
            if rep.max_relative_error > worst.0 {
                worst = (rep.max_relative_error, c.name);
            }
            ensure!(rep.max_relative_error < 1e-4, "{} trial {trial}: relative error {:.3e}", c.name, rep.max_relative_error);
        }
    }
    let e2e = end_to_end_grad_check()?;
    within(start, Duration::from_secs(300), "gradient checks")?;
    Ok(format!(
        "{checks} primitive checks, worst {:.2e} ({}); end-to-end worst {:.2e} over {} coordinates; {:.0}s",
        worst.0,
        worst.1,
        e2e.0,
        e2e.1,
        start.elapsed().as_secs_f64()
    ))
}

fn sample_targets(r: usize, seed: u64) -> Targets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents: Vec<AgentBox> = (0..3)
        .map(|i| AgentBox {
            x: 6.0 + 8.0 * i as f64,
            y: rng.gen_range(-8.0..8.0),
            w: 2.0,
            l: 4.5,
            theta: rng.gen_range(-1.0..1.0),
            timestep: 1 + i % 3,
            kind: AgentKind::Vehicle,
        })
        .collect();
    let (density, mask) = encode(&agents, r);
    Targets {
        waypoints: [[2.0, 0.1], [4.0, 0.2], [6.0, 0.4], [8.0, 0.7]],
        density,
        mask,
        bev: (0..r * r).map(|i| ((i / 7) % 3) as u8).collect(),
        traffic: [true, false],
        weather: 2,
    }
}

/// Width-¼, R=64 model in f64 on one sample. Each parameter tensor is
/// probed at its largest-gradient coordinate and one random coordinate.
fn end_to_end_grad_check() -> std::result::Result<(f64, usize), String> {
    let cfg = ModelConfig {
        width_factor: 0.25,
        r: 64,
        precision: Precision::F64,
        ..ModelConfig::default()
    };
    let mut model: Model<f64> = ok(Model::new(cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // zero biases hide relu kinks and make many gradients vanish
    let biases: Vec<ParamId> = model.params.iter().filter(|(_, n, _)| n.ends_with(".b")).map(|(i, _, _)| i).collect();
    for id in biases {
        for v in model.params.get_mut(id).data_mut() {
            *v = rng.gen_range(-0.05..0.05);
        }
    }
    let n = 256 * 256;
    let input = ModelInput {
        lidar: ok(Tensor::new(&[4, 256, 256], (0..4 * n).map(|_| rng.gen_range(0.0..1.0)).collect()))?,
        image: ok(Tensor::new(&[3, 256, 256], (0..3 * n).map(|_| rng.gen_range(0.0..1.0)).collect()))?,
        goal: [10.0, 1.0],
    };
    let targets = sample_targets(64, 3);
    let w = LossWeights::default();
    let loss = |model: &Model<f64>, grads: bool| -> idrive::Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let hv = model.forward(&mut g, &p, &input)?;
        let (terms, _) = model.loss_terms(&mut g, &hv, &targets)?;
        let l = model.weighted_loss(&mut g, &terms, &w)?;
        let v = g.data(l)[0];
        if !grads {
            return Ok((v, Vec::new()));
        }
        g.backward(l)?;
        let gr = p.iter().map(|&v| g.grad(v).map(|s| s.to_vec()).unwrap_or_default()).collect();
        Ok((v, gr))
    };
    let (_, grads) = ok(loss(&model, true))?;
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut worst = 0.0f64;
    let mut probed = 0;
    for id in ids {
        let g = &grads[id.0];
        ensure!(!g.is_empty(), "no gradient for {}", model.params.name(id));
        let x0 = model.params.get(id).data().to_vec();
        let best = (0..g.len()).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap();
        let coords = [best, rng.gen_range(0..g.len())];
        let rep = grad_check_coords(g, &x0, 1e-5, &coords, |buf| {
            model.params.get_mut(id).data_mut().copy_from_slice(buf);
            Ok(loss(&model, false)?.0)
        });
        model.params.get_mut(id).data_mut().copy_from_slice(&x0);
        let rep = ok(rep)?;
        probed += rep.probed;
        ensure!(
            rep.max_relative_error < 1e-3,
            "end-to-end: {} relative error {:.3e}",
            model.params.name(id),
            rep.max_relative_error
        );
        worst = worst.max(rep.max_relative_error);
    }
    Ok((worst, probed))
}

// ---------------------------------------------------------------------------
// 2. shapes

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let model: Model<f32> = ok(Model::new(ModelConfig::default()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 256 * 256;
    let input = ModelInput {
        lidar: ok(Tensor::new(&[4, 256, 256], (0..4 * n).map(|_| rng.gen_range(0.0f32..1.0)).collect()))?,
        image: ok(Tensor::new(&[3, 256, 256], (0..3 * n).map(|_| rng.gen_range(0.0f32..1.0)).collect()))?,
        goal: [15.0, 0.0],
    };
    let out = ok(model.predict(&input))?;
    ensure!(out.feature_shape == [1024, 8, 8], "fused feature {:?}", out.feature_shape);
    ensure!(out.density.r == 256 && out.density.data.len() == n * 21, "density r {} len {}", out.density.r, out.density.data.len());
    ensure!(out.bev.len() == n * 3, "bev holds {} values", out.bev.len());
    ensure!(out.waypoints.len() == 4 && out.traffic.len() == 2 && out.weather.len() == 4, "head sizes");
    let all = out.waypoints.iter().flatten().chain(&out.bev).chain(&out.traffic).chain(&out.weather);
    ensure!(all.into_iter().all(|v| v.is_finite()), "non-finite output");
    within(start, Duration::from_secs(60), "full-scale forward")?;
    Ok(format!(
        "feature 8x8x1024, density 256x256x21, bev 256x256x3, waypoints 4x2, traffic 2, weather 4; {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 3. rasterization

/// Per-point binning straight from the stated mapping: 8 cells per metre,
/// x in [0, 32) forward with the far edge at row 0, y in [-16, 16) left to
/// right.
fn naive_bins(points: &[[f64; 3]], z_ground: f64) -> (Vec<u32>, usize) {
    let mut grid = vec![0u32; 256 * 256 * 2];
    let mut dropped = 0;
    for p in points {
        let (x, y, z) = (p[0], p[1], p[2]);
        if !(0.0..32.0).contains(&x) || !(-16.0..16.0).contains(&y) {
            dropped += 1;
            continue;
        }
        let row = 255 - (x * 8.0).floor() as usize;
        let col = ((y + 16.0) * 8.0).floor() as usize;
        let bin = usize::from(z > z_ground);
        grid[(row * 256 + col) * 2 + bin] += 1;
    }
    (grid, dropped)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = BevConfig::default();
    let pts: Vec<[f64; 3]> = (0..10_000)
        .map(|_| [rng.gen_range(-4.0..36.0), rng.gen_range(-18.0..18.0), rng.gen_range(-0.5..2.5)])
        .collect();
    let h = rasterize_bev(&PointCloud::new(pts.clone(), 0), &cfg);
    let (want, dropped) = naive_bins(&pts, cfg.z_ground);
    ensure!(h.counts() == want.as_slice(), "histogram differs from per-point binning");
    ensure!(h.discarded == dropped, "discarded {} vs {}", h.discarded, dropped);
    ensure!(h.total() as usize + h.discarded == pts.len(), "count not conserved");

    // static world, moving ego: every frame's above-ground channel agrees
    // after alignment to the current pose
    let poses = [EgoPose::new(0.0, 0.0, 0.0), EgoPose::new(1.5, 0.25, 0.1), EgoPose::new(3.0, 0.75, 0.2)];
    let current = poses[2];
    let world: Vec<[f64; 3]> = (0..400)
        .map(|_| {
            let (row, col) = (rng.gen_range(40..240), rng.gen_range(40..216));
            let (x, y) = bev_cell_center(row, col, 256);
            let z = if rng.gen_bool(0.7) { 1.0 } else { 0.0 };
            [x, y, z]
        })
        .collect();
    let world = transform_points(&PointCloud::new(world, 0), &current, &EgoPose::origin());
    let clouds: Vec<PointCloud> = poses
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let mut c = transform_points(&world, &EgoPose::origin(), p);
            c.frame_time_index = t as i32 - 2;
            c
        })
        .collect();
    let img = ok(build_pseudo_image(&clouds, &poses, &cfg))?;
    let mut above = 0u64;
    let mut ground = 0u64;
    for row in 0..256 {
        for col in 0..256 {
            let c = img.count(row, col, 3);
            ensure!(img.count(row, col, 1) == c && img.count(row, col, 2) == c, "frames disagree at cell ({row}, {col})");
            above += c as u64;
            ground += img.count(row, col, 0) as u64;
        }
    }
    let n_above = world.points.iter().filter(|p| p[2] > cfg.z_ground).count() as u64;
    ensure!(above == n_above, "{above} above-ground counts for {n_above} points");
    ensure!(ground == 3 * (400 - n_above), "ground channel holds {ground}");
    Ok(format!("10000 points binned exactly ({} discarded); 3 aligned frames agree", h.discarded))
}

// ---------------------------------------------------------------------------
// 4. density codec

fn random_agents(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Vec<AgentBox> {
    let s = r as f64 / 32.0;
    let mut out: Vec<AgentBox> = Vec::new();
    while out.len() < n {
        let kind = if rng.gen_bool(0.3) { AgentKind::Pedestrian } else { AgentKind::Vehicle };
        let (w, l) = match kind {
            AgentKind::Pedestrian => (rng.gen_range(0.4..0.8), rng.gen_range(0.4..1.2)),
            AgentKind::Vehicle => (rng.gen_range(1.6..2.4), rng.gen_range(3.5..5.5)),
        };
        let a = AgentBox {
            x: rng.gen_range(0.0..32.0),
            y: rng.gen_range(-16.0..16.0),
            w,
            l,
            theta: rng.gen_range(-PI..PI),
            timestep: rng.gen_range(1..=TIMESTEPS),
            kind,
        };
        let cell = |b: &AgentBox| ((b.x * s).floor() as i64, ((b.y + 16.0) * s).floor() as i64);
        let (ci, cj) = cell(&a);
        let clash = out.iter().any(|b| {
            let (bi, bj) = cell(b);
            b.timestep == a.timestep && (ci - bi).abs().max((cj - bj).abs()) < 2
        });
        if !clash {
            out.push(a);
        }
    }
    out
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut dc, mut ds, mut dt) = (0.0f64, 0.0f64, 0.0f64);
    let mut total = 0;
    for set in 0..100 {
        let r = if set % 2 == 0 { 256 } else { 64 };
        let n = rng.gen_range(1..=8);
        let agents = random_agents(&mut rng, n, r);
        let (map, _) = encode(&agents, r);
        let found = decode(&map, 0.5);
        ensure!(found.len() == agents.len(), "set {set}: decoded {} of {} agents", found.len(), agents.len());
        for a in &agents {
            let b = found
                .iter()
                .filter(|b| b.timestep == a.timestep)
                .min_by(|p, q| (p.x - a.x).hypot(p.y - a.y).total_cmp(&(q.x - a.x).hypot(q.y - a.y)))
                .ok_or_else(|| format!("set {set}: no match at timestep {}", a.timestep))?;
            ensure!(a.kind == b.kind, "set {set}: kind changed");
            dc = dc.max((a.x - b.x).abs()).max((a.y - b.y).abs());
            ds = ds.max((a.w - b.w).abs()).max((a.l - b.l).abs());
            dt = dt.max(angle_diff(a.theta, b.theta));
            total += 1;
        }
    }
    ensure!(dc < 1e-6 && ds < 1e-6 && dt < 1e-9, "centre {dc:.2e} size {ds:.2e} heading {dt:.2e}");
    Ok(format!("{total} agents in 100 sets; centre {dc:.1e} m, size {ds:.1e} m, heading {dt:.1e} rad"))
}

// ---------------------------------------------------------------------------
// 5. losses

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = LossParts {
            wp: rng.gen_range(0.0..5.0),
            heat: rng.gen_range(0.0..5.0),
            reg: rng.gen_range(0.0..5.0),
            m: rng.gen_range(0.0..5.0),
            light: rng.gen_range(0.0..5.0),
            sign: rng.gen_range(0.0..5.0),
            wc: rng.gen_range(0.0..5.0),
        };
        let w = LossWeights {
            lambda_wp: rng.gen_range(0.01..2.0),
            lambda_o: rng.gen_range(0.0..2.0),
            lambda_m: rng.gen_range(0.0..2.0),
            lambda_tf: rng.gen_range(0.0..2.0),
            lambda_wc: rng.gen_range(0.0..2.0),
            alpha: rng.gen_range(0.0..2.0),
            beta: rng.gen_range(0.0..2.0),
            gamma: rng.gen_range(0.0..2.0),
            delta: rng.gen_range(0.0..2.0),
        };
        let b = total_loss(&p, &w);
        let o = w.alpha * p.heat + w.beta * p.reg;
        let tf = w.gamma * p.light + w.delta * p.sign;
        let want = w.lambda_wp * p.wp + w.lambda_o * o + w.lambda_m * p.m + w.lambda_tf * tf + w.lambda_wc * p.wc;
        worst = worst.max((b.total - want).abs());
    }
    ensure!(worst < 1e-9, "weighted sum off by {worst:.2e}");

    let wp = [[3.0, 0.0], [6.0, 0.1], [9.0, 0.3], [12.0, 0.6]];
    ensure!(ok(waypoint_loss(&wp, &wp))? == 0.0, "waypoint loss of a perfect prediction");
    let classes: Vec<u8> = (0..64).map(|i| (i % 3) as u8).collect();
    let mut logits = vec![-1e4; 64 * 3];
    for (i, &c) in classes.iter().enumerate() {
        logits[i * 3 + c as usize] = 1e4;
    }
    ensure!(ok(bev_loss(&logits, &classes))? == 0.0, "bev loss of a perfect prediction");
    // probabilities are clamped 1e-12 from 0 and 1 before the log
    let tl = ok(traffic_loss([1.0 - 1e-12, 1e-12], [true, false], 1.0, 1.0))?;
    ensure!(tl.value < 1e-10, "traffic loss of a perfect prediction {:.2e}", tl.value);

    let agent = AgentBox { x: 9.0, y: -2.0, w: 2.0, l: 4.5, theta: 0.7, timestep: 2, kind: AgentKind::Vehicle };
    let (target, _) = encode(&[agent], 64);
    let mut pred = DensityMap::zeros(64);
    for (i, v) in pred.data.iter_mut().enumerate() {
        *v = if i % 7 == 0 { 0.3 } else { rng.gen_range(-5.0..5.0) };
    }
    let empty = SupervisionMask { r: 64, cells: vec![false; 64 * 64 * TIMESTEPS] };
    let d = ok(density_loss(&pred, &target, &empty, 1.0, 1.0))?;
    ensure!(d.reg == 0.0, "empty-mask regression term {}", d.reg);
    let mut g: Graph<f64> = Graph::new();
    let x = g.param(ok(Tensor::new(&[6], vec![0.5, -3.0, 2.0, 1.0, 0.0, 9.0]))?);
    let l = ok(g.smooth_l1_masked(x, &[0.0; 6], &[false; 6]))?;
    ensure!(g.data(l)[0] == 0.0, "graph smooth-L1 with an empty mask");
    Ok(format!("weighted sum within {worst:.1e} over 1000 draws; perfect predictions give zero; empty mask gives 0"))
}

// ---------------------------------------------------------------------------
// 6. overfit

fn dataset_metrics(m: &Model<f32>, data: &[Sample]) -> std::result::Result<(f64, f64, f64), String> {
    let (mut wp, mut bev, mut wc) = (0.0, 0.0, 0.0);
    for s in data {
        let o = ok(m.predict(&s.input()))?;
        let t = ok(s.targets(m.cfg.r))?;
        wp += ok(waypoint_loss(&o.waypoints, &t.waypoints))?;
        let c = o.bev_classes();
        bev += c.iter().zip(&t.bev).filter(|(a, b)| a == b).count() as f64 / c.len() as f64;
        wc += f64::from(u8::from(o.weather_class() == t.weather));
    }
    let n = data.len() as f64;
    Ok((wp / n, bev / n, wc / n))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let config = ok(Config::load(&configs_dir().join("overfit.conf")))?;
    ensure!(config.model.width_factor == 0.25 && config.model.r == 64, "overfit.conf is not the width-1/4, R=64 model");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    ok(generate_dataset(dir.path(), 8, 5, &config.data, &config.sim))?;
    let (data, skipped) = ok(load_dataset(dir.path(), &config.sim.bev))?;
    ensure!(data.len() == 8 && skipped.is_empty(), "loaded {} frames", data.len());
    let mut t = ok(Trainer::new(ok(Model::<f32>::new(config.model.clone()))?, config.train))?;
    let mut last = (f64::NAN, 0.0, 0.0);
    while t.step < 2000 {
        ok(t.train_step(&data))?;
        if t.step % 10 == 0 {
            last = dataset_metrics(&t.model, &data)?;
            if last.0 < 0.1 && last.1 > 0.95 && last.2 == 1.0 {
                within(start, Duration::from_secs(1800), "overfit")?;
                return Ok(format!(
                    "step {}: waypoint L1 {:.3} m, bev accuracy {:.3}, weather accuracy {:.2}; {:.0}s",
                    t.step,
                    last.0,
                    last.1,
                    last.2,
                    start.elapsed().as_secs_f64()
                ));
            }
            within(start, Duration::from_secs(1800), "overfit")?;
        }
    }
    Err(format!("after 2000 steps: waypoint L1 {:.3}, bev {:.3}, weather {:.2}", last.0, last.1, last.2))
}

// ---------------------------------------------------------------------------
// 7-10 share one desk-scale model trained through the CLI entry points.

struct Desk {
    _dir: tempfile::TempDir,
    config: Config,
    ckpt: PathBuf,
    model: Model<f32>,
    root: PathBuf,
}

fn train_desk() -> std::result::Result<Desk, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ok(load_config(Some(&configs_dir().join("desk.conf"))))?;
    let data = dir.path().join("data");
    ok(cmd_gen_data(&config, &data, 96, 3))?;
    let ckpt = dir.path().join("desk.ckpt");
    ok(cmd_train(&config, &data, &ckpt, None))?;
    let c: Checkpoint<f32> = ok(read_checkpoint(&ckpt))?;
    let model = ok(load_model(config.model.clone(), &c))?;
    Ok(Desk {
        root: dir.path().to_path_buf(),
        _dir: dir,
        config,
        ckpt,
        model,
    })
}

fn check_identities(r: &RouteResult, sim: &SimConfig) -> std::result::Result<(), String> {
    ensure!((r.ds - r.rc * r.is).abs() < 1e-9, "DS {} != RC {} * IS {}", r.ds, r.rc, r.is);
    let mut is = 1.0;
    for e in &r.events {
        is *= ok(sim.penalties.get(e.kind))?;
    }
    ensure!((r.is - is).abs() < 1e-9, "IS {} != product of penalties {is}", r.is);
    Ok(())
}

fn criterion_7(desk: &std::result::Result<Desk, String>) -> Outcome {
    let sim = SimConfig::default();
    let empty = generate_scenario(0, 0);
    ensure!(empty.npcs.is_empty() && empty.pedestrians.is_empty() && empty.lights.is_empty(), "difficulty 0 is not empty");
    let run = ok(evaluate_route(&empty, &mut ExpertPolicy::new(sim.expert), &sim))?;
    let r = &run.result;
    ensure!((r.rc, r.is, r.ds) == (100.0, 1.0, 100.0), "expert RC {} IS {} DS {}", r.rc, r.is, r.ds);
    check_identities(r, &sim)?;

    let desk = desk.as_ref().map_err(|e| format!("desk model: {e}"))?;
    let sim = &desk.config.sim;
    let mut good = 0;
    let mut rows = Vec::new();
    for seed in 100..105u64 {
        let sc = generate_scenario(seed, 0);
        let run = ok(evaluate_route(&sc, &mut ModelPolicy { model: &desk.model }, sim))?;
        let r = &run.result;
        check_identities(r, sim)?;
        use idrive::sim::InfractionKind::*;
        let collisions = r.events.iter().filter(|e| matches!(e.kind, Ped | Veh | Lay)).count();
        if r.rc > 90.0 && collisions == 0 {
            good += 1;
        }
        rows.push(format!("{:.0}", r.rc));
    }
    ensure!(good >= 4, "only {good} of 5 routes clean (RC {})", rows.join(" "));
    Ok(format!("expert 100/1/100; desk model clean on {good} of 5 routes (RC {})", rows.join(" ")))
}

fn criterion_8(desk: &std::result::Result<Desk, String>) -> Outcome {
    let desk = desk.as_ref().map_err(|e| format!("desk model: {e}"))?;
    let mut out = Vec::new();
    for seed in [500u64, 501] {
        let mut means = Vec::new();
        for w in [Weather::Sunny, Weather::Rainy] {
            let sc = lead_vehicle_scenario(seed, w);
            let run = ok(evaluate_route(&sc, &mut ModelPolicy { model: &desk.model }, &desk.config.sim))?;
            ensure!(!run.desired_speeds.is_empty(), "no planning steps");
            means.push(run.desired_speeds.iter().sum::<f64>() / run.desired_speeds.len() as f64);
        }
        ensure!(means[1] < means[0], "seed {seed}: rainy {:.3} m/s not below sunny {:.3} m/s", means[1], means[0]);
        out.push(format!("seed {seed} sunny {:.2} rainy {:.2}", means[0], means[1]));
    }
    Ok(format!("mean desired speed {}", out.join(", ")))
}

fn criterion_9(desk: &std::result::Result<Desk, String>) -> Outcome {
    let desk = desk.as_ref().map_err(|e| format!("desk model: {e}"))?;
    let a = desk.root.join("corr_a.tsv");
    let b = desk.root.join("corr_b.tsv");
    let ra: CorrelationReport = ok(cmd_analyze(Some(&desk.config), &desk.ckpt, &a, 7, 12))?;
    let rb = ok(cmd_analyze(Some(&desk.config), &desk.ckpt, &b, 7, 12))?;
    for i in 0..5 {
        ensure!(ra.matrix[i][i] == 1.0, "diagonal {i} is {}", ra.matrix[i][i]);
        for j in 0..5 {
            let v = ra.matrix[i][j];
            ensure!((-1.0..=1.0).contains(&v), "entry ({i}, {j}) = {v}");
            ensure!(v == ra.matrix[j][i], "asymmetric at ({i}, {j})");
        }
    }
    ensure!(ra == rb, "reports differ between runs");
    let (ta, tb) = (std::fs::read(&a).map_err(|e| e.to_string())?, std::fs::read(&b).map_err(|e| e.to_string())?);
    ensure!(ta == tb, "report files differ between runs");
    Ok(format!("5x5 matrix in [-1, 1], unit diagonal, symmetric; identical across runs (plan x BEV {:.3})", ra.get(Head::Planning, Head::Bev)))
}

fn criterion_10(desk: &std::result::Result<Desk, String>) -> Outcome {
    let desk = desk.as_ref().map_err(|e| format!("desk model: {e}"))?;
    let original: Checkpoint<f32> = ok(read_checkpoint(&desk.ckpt))?;
    let copy = desk.root.join("copy.ckpt");
    ok(write_checkpoint(&copy, &original))?;
    let bytes_a = std::fs::read(&desk.ckpt).map_err(|e| e.to_string())?;
    let bytes_b = std::fs::read(&copy).map_err(|e| e.to_string())?;
    ensure!(bytes_a == bytes_b, "rewritten checkpoint differs");
    let back: Checkpoint<f32> = ok(read_checkpoint(&copy))?;
    ensure!(back.encode() == original.encode(), "decoded checkpoint differs");
    let reloaded = ok(load_model(desk.config.model.clone(), &back))?;
    for ((_, name, a), (_, _, b)) in desk.model.params.iter().zip(reloaded.params.iter()) {
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure!(same && a.shape() == b.shape(), "parameter {name} changed");
    }

    let routes = desk.root.join("routes.txt");
    std::fs::write(&routes, "route 100 0\nroute 7 1\nlead 500 rainy\n").map_err(|e| e.to_string())?;
    let (ra, rb) = (desk.root.join("a.tsv"), desk.root.join("b.tsv"));
    ok(cmd_eval(&desk.config, Some(&copy), &routes, &ra))?;
    ok(cmd_eval(&desk.config, Some(&desk.ckpt), &routes, &rb))?;
    let (ta, tb) = (std::fs::read(&ra).map_err(|e| e.to_string())?, std::fs::read(&rb).map_err(|e| e.to_string())?);
    ensure!(ta == tb, "eval reports differ");
    let parsed = ok(Report::parse(&String::from_utf8_lossy(&ta)))?;
    ensure!(parsed.rows.len() == 3, "report has {} rows", parsed.rows.len());
    Ok(format!("{} checkpoint bytes round-trip exactly; 3-route eval reports byte-identical", bytes_a.len()))
}

// ---------------------------------------------------------------------------

fn report(n: usize, start: Instant, r: Outcome) -> bool {
    let t = start.elapsed().as_secs_f64();
    match r {
        Ok(m) => {
            println!("PASS criterion {n}: {m} [{t:.1}s]");
            true
        }
        Err(m) => {
            println!("FAIL criterion {n}: {m} [{t:.1}s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut passed = 0;
    let mut failed = Vec::new();
    let mut tally = |n: usize, ok: bool| {
        if ok {
            passed += 1;
        } else {
            failed.push(n);
        }
    };
    let standalone: [(usize, fn() -> Outcome); 6] =
        [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5), (6, criterion_6)];
    for (n, f) in standalone {
        if wants(n) {
            let s = Instant::now();
            tally(n, report(n, s, f()));
        }
    }
    let shared: [(usize, fn(&std::result::Result<Desk, String>) -> Outcome); 4] =
        [(7, criterion_7), (8, criterion_8), (9, criterion_9), (10, criterion_10)];
    if shared.iter().any(|(n, _)| wants(*n)) {
        let s = Instant::now();
        let desk = train_desk();
        println!("desk model trained in {:.1}s", s.elapsed().as_secs_f64());
        for (n, f) in shared {
            if wants(n) {
                let s = Instant::now();
                tally(n, report(n, s, f(&desk)));
            }
        }
    }
    println!("acceptance: {passed} passed, {} failed", failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
