use std::f64::consts::LN_2;

use idrive::codec::{encode, AgentBox, AgentKind, DensityMap, SupervisionMask};
use idrive::losses::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn straight() -> Vec<[f64; 2]> {
    vec![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]]
}

#[test]
fn waypoint_loss_examples() {
    let e = straight();
    assert_eq!(waypoint_loss(&e, &e).unwrap(), 0.0);
    let shifted: Vec<_> = e.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
    assert_eq!(waypoint_loss(&shifted, &e).unwrap(), 0.5);
    let mut one = e.clone();
    one[2][1] += 2.0;
    assert_eq!(waypoint_loss(&one, &e).unwrap(), 0.25);
    assert_eq!(waypoint_loss(&e[..3], &e).unwrap_err().category(), "contract");
}

#[test]
fn density_loss_self_entropy() {
    let eps = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut target = DensityMap::zeros(16);
    let n = 16 * 16;
    let mut want = 0.0;
    for cell in 0..n {
        for t in 0..3 {
            let y = if rng.gen_bool(0.2) { 1.0 - eps } else { eps };
            target.data[cell * 21 + t * 7] = y;
            want += -(y * y.ln() + (1.0 - y) * (1.0 - y).ln());
        }
    }
    want /= (n * 3) as f64;
    let mask = SupervisionMask { r: 16, cells: vec![false; n * 3] };
    let l = density_loss(&target, &target, &mask, 1.0, 1.0).unwrap();
    assert!((l.heat - want).abs() < 1e-12);
    assert_eq!(l.reg, 0.0);
}

#[test]
fn density_reg_empty_mask_and_half_residual() {
    let a = AgentBox { x: 8.0, y: 1.0, w: 2.0, l: 4.5, theta: 0.4, timestep: 1, kind: AgentKind::Vehicle };
    let (target, mask) = encode(&[a], 32);
    let mut pred = target.clone();
    for v in pred.data.iter_mut().step_by(7) {
        *v = v.clamp(1e-6, 1.0);
    }
    let empty = SupervisionMask { r: 32, cells: vec![false; 32 * 32 * 3] };
    let mut noisy = pred.clone();
    for (i, v) in noisy.data.iter_mut().enumerate() {
        if i % 7 != 0 {
            *v += 3.0;
        }
    }
    assert_eq!(density_loss(&noisy, &target, &empty, 1.0, 1.0).unwrap().reg, 0.0);

    // one regression entry off by 0.5 at the masked cell
    let (row, col) = idrive::sensor::bev_cell(8.0, 1.0, 32).unwrap();
    let i = pred.idx(row, col, 3);
    pred.data[i] += 0.5;
    let l = density_loss(&pred, &target, &mask, 1.0, 1.0).unwrap();
    assert!((l.reg - 0.125 / 6.0).abs() < 1e-15);
    assert!(density_loss(&DensityMap::zeros(16), &target, &mask, 1.0, 1.0).is_err());
}

#[test]
fn bev_loss_examples() {
    let classes = vec![0u8, 1, 2, 1];
    let mut perfect = vec![-1e4; 12];
    for (i, &c) in classes.iter().enumerate() {
        perfect[i * 3 + c as usize] = 1e4;
    }
    assert_eq!(bev_loss(&perfect, &classes).unwrap(), 0.0);
    let uniform = vec![0.3; 12];
    assert!((bev_loss(&uniform, &classes).unwrap() - 3f64.ln()).abs() < 1e-15);
    assert_eq!(bev_loss(&uniform, &[0, 1, 3, 0]).unwrap_err().category(), "contract");
}

#[test]
fn bev_loss_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 500;
    let logits: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let classes: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let mut want = 0.0;
    for i in 0..n {
        let z: f64 = (0..3).map(|c| logits[i * 3 + c].exp()).sum();
        want += -(logits[i * 3 + classes[i] as usize].exp() / z).ln();
    }
    want /= n as f64;
    assert!((bev_loss(&logits, &classes).unwrap() - want).abs() < 1e-9);
}

#[test]
fn traffic_loss_examples() {
    let near = 1.0 - 1e-7;
    let l = traffic_loss([near, 1e-7], [true, false], 1.0, 1.0).unwrap();
    assert!(l.value <= 1e-6);
    let h = traffic_loss([0.5, 0.5], [true, false], 1.0, 1.0).unwrap();
    assert!((h.light - LN_2).abs() < 1e-15 && (h.sign - LN_2).abs() < 1e-15);
    let w = traffic_loss([0.5, 0.5], [false, true], 2.0, 1.0).unwrap();
    assert!((w.value - 3.0 * LN_2).abs() < 1e-15);
    let err = traffic_loss([1.0, 0.5], [true, true], 1.0, 1.0).unwrap_err();
    assert_eq!(err.category(), "numeric");
}

#[test]
fn weather_loss_examples() {
    assert!((weather_loss([0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
    assert!(weather_loss([0.25; 4], 4).is_err());
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert_eq!(total_loss(&LossParts::default(), &w).total, 0.0);
    let ones = LossParts { wp: 1.0, heat: 1.0, reg: 0.0, m: 1.0, light: 1.0, sign: 0.0, wc: 1.0 };
    assert!((total_loss(&ones, &w).total - 2.2).abs() < 1e-12);
    let ablated = LossWeights { lambda_o: 0.0, lambda_m: 0.0, lambda_tf: 0.0, lambda_wc: 0.0, ..w };
    let p = LossParts { wp: 0.7, heat: 3.0, reg: 2.0, m: 5.0, light: 1.0, sign: 9.0, wc: 4.0 };
    assert_eq!(total_loss(&p, &ablated).total, 0.7);
}

fn random_parts(rng: &mut ChaCha8Rng) -> LossParts {
    LossParts {
        wp: rng.gen_range(0.0..5.0),
        heat: rng.gen_range(0.0..5.0),
        reg: rng.gen_range(0.0..5.0),
        m: rng.gen_range(0.0..5.0),
        light: rng.gen_range(0.0..5.0),
        sign: rng.gen_range(0.0..5.0),
        wc: rng.gen_range(0.0..5.0),
    }
}

proptest! {
    #[test]
    fn total_is_weighted_sum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_parts(&mut rng);
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
        let want = w.lambda_wp * b.wp + w.lambda_o * b.o + w.lambda_m * b.m + w.lambda_tf * b.tf + w.lambda_wc * b.wc;
        prop_assert!((b.total - want).abs() < 1e-9);
        prop_assert!((b.o - (w.alpha * p.heat + w.beta * p.reg)).abs() < 1e-12);
        prop_assert!(b.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn doubling_a_lambda_doubles_its_term(seed in any::<u64>(), which in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_parts(&mut rng);
        let zero = LossWeights { lambda_wp: 1e-300, lambda_o: 0.0, lambda_m: 0.0, lambda_tf: 0.0, lambda_wc: 0.0, ..Default::default() };
        let mut one = zero;
        let mut two = zero;
        let lam = rng.gen_range(0.1..2.0);
        match which {
            0 => { one.lambda_wp = lam; two.lambda_wp = 2.0 * lam; }
            1 => { one.lambda_o = lam; two.lambda_o = 2.0 * lam; }
            2 => { one.lambda_m = lam; two.lambda_m = 2.0 * lam; }
            3 => { one.lambda_tf = lam; two.lambda_tf = 2.0 * lam; }
            _ => { one.lambda_wc = lam; two.lambda_wc = 2.0 * lam; }
        }
        let base = total_loss(&p, &zero).total;
        let t1 = total_loss(&p, &one).total - base;
        let t2 = total_loss(&p, &two).total - base;
        prop_assert_eq!(t2, 2.0 * t1);
    }
}
