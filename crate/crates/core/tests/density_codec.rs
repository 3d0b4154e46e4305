use std::f64::consts::PI;

use idrive::codec::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random agents whose centre cells are at least `sep` cells apart per
/// timestep, all inside the BEV range.
fn random_agents(rng: &mut ChaCha8Rng, n: usize, r: usize, sep: usize) -> Vec<AgentBox> {
    let s = r as f64 / 32.0;
    let mut out: Vec<AgentBox> = Vec::new();
    let mut tries = 0;
    while out.len() < n && tries < 10_000 {
        tries += 1;
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
            timestep: rng.gen_range(1..=3),
            kind,
        };
        let cell = |b: &AgentBox| ((b.x * s).floor() as i64, ((b.y + 16.0) * s).floor() as i64);
        let (ci, cj) = cell(&a);
        let clash = out.iter().any(|b| {
            let (bi, bj) = cell(b);
            b.timestep == a.timestep && (ci - bi).abs().max((cj - bj).abs()) < sep as i64
        });
        if !clash {
            out.push(a);
        }
    }
    out
}

fn matched(found: &[AgentBox], want: &AgentBox) -> Option<AgentBox> {
    found
        .iter()
        .filter(|b| b.timestep == want.timestep)
        .min_by(|a, b| {
            let da = (a.x - want.x).hypot(a.y - want.y);
            let db = (b.x - want.x).hypot(b.y - want.y);
            da.partial_cmp(&db).unwrap()
        })
        .copied()
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[test]
fn round_trip_five_agents() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for r in [64, 256] {
        let agents = random_agents(&mut rng, 5, r, 2);
        assert_eq!(agents.len(), 5);
        let (map, mask) = encode(&agents, r);
        assert_eq!(mask.count(), 5);
        let found = decode(&map, 0.5);
        assert_eq!(found.len(), 5);
        for a in &agents {
            let b = matched(&found, a).unwrap();
            assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6);
            assert!((a.w - b.w).abs() < 1e-6 && (a.l - b.l).abs() < 1e-6);
            assert!(angle_diff(a.theta, b.theta) < 1e-9);
            assert_eq!(a.kind, b.kind);
        }
    }
}

#[test]
fn out_of_range_agents_are_skipped() {
    let a = AgentBox {
        x: -1.0,
        y: 0.0,
        w: 2.0,
        l: 4.0,
        theta: 0.0,
        timestep: 1,
        kind: AgentKind::Vehicle,
    };
    let (map, mask) = encode(&[a, AgentBox { x: 33.0, ..a }, AgentBox { y: 16.0, ..a }], 64);
    assert_eq!(mask.count(), 0);
    assert!(map.data.iter().all(|&v| v == 0.0));
}

#[test]
fn heat_stays_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let agents = random_agents(&mut rng, 8, 64, 1);
    let (map, _) = encode(&agents, 64);
    for t in 1..=3 {
        for row in 0..64 {
            for col in 0..64 {
                let h = map.heat(row, col, t);
                assert!((0.0..=1.0).contains(&h));
            }
        }
    }
}

#[test]
fn agents_ten_metres_apart() {
    let base = AgentBox {
        x: 4.0,
        y: -3.0,
        w: 1.9,
        l: 4.6,
        theta: 0.3,
        timestep: 2,
        kind: AgentKind::Vehicle,
    };
    let (map, _) = encode(&[base, AgentBox { x: 14.0, ..base }], 256);
    let found = decode(&map, 0.3);
    assert_eq!(found.len(), 2);
    assert!(found.iter().all(|b| b.timestep == 2));
}

#[test]
fn chw_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (map, _) = encode(&random_agents(&mut rng, 4, 32, 2), 32);
    assert_eq!(DensityMap::from_chw(32, &map.to_chw()), map);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_property(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = random_agents(&mut rng, n, 64, 2);
        let (map, _) = encode(&agents, 64);
        let found = decode(&map, 0.5);
        prop_assert_eq!(found.len(), agents.len());
        for a in &agents {
            let b = matched(&found, a).unwrap();
            prop_assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6);
            prop_assert!((a.w - b.w).abs() < 1e-6 && (a.l - b.l).abs() < 1e-6);
            prop_assert!(angle_diff(a.theta, b.theta) < 1e-9);
        }
    }

    #[test]
    fn encode_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = random_agents(&mut rng, 6, 64, 1);
        let (a, ma) = encode(&agents, 64);
        let (b, mb) = encode(&agents, 64);
        prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(ma, mb);
    }

    #[test]
    fn raising_threshold_never_adds_detections(seed in any::<u64>(), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = DensityMap::zeros(32);
        for v in map.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(decode(&map, hi).len() <= decode(&map, lo).len());
    }
}
