use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::feathash::HashedVec;
use crate::ndcompute::{Checkpoint, ConvStackSpec, Tensor};

fn small_config() -> NetworkConfig {
    NetworkConfig {
        num_units: 3,
        depth: 3,
        hash_dim: 32,
        basis_capacity: 4,
        stop_threshold: 0.05,
        empty_threshold: 0.5,
        expand_threshold: 0.7,
        aging_rate: 1.5,
        initial_max_age: 3,
        sparsity_weight: 0.0,
        learning_rate: 0.1,
    }
}

fn net(seed: u64) -> Network {
    Network::new(small_config(), ConvStackSpec::single(2), seed).unwrap()
}

fn sample(rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(&[1, 8, 8]);
    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
    t
}

fn unit_hash(rng: &mut ChaCha8Rng, s: usize) -> HashedVec {
    let v: Vec<f32> = (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    HashedVec { values: v.iter().map(|x| x / n).collect(), source_dim: s }
}

/// A unit vector whose inner product with `h` is exactly `c`.
fn at_angle(h: &HashedVec, c: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let w = unit_hash(rng, h.dim());
    let d: f64 = w.values.iter().zip(&h.values).map(|(a, b)| *a as f64 * *b as f64).sum();
    let mut perp: Vec<f64> = w.values.iter().zip(&h.values).map(|(a, b)| *a as f64 - d * *b as f64).collect();
    let n = perp.iter().map(|x| x * x).sum::<f64>().sqrt();
    perp.iter_mut().for_each(|x| *x /= n);
    let s = (1.0 - c * c).sqrt();
    h.values.iter().zip(&perp).map(|(a, p)| (c * *a as f64 + s * p) as f32).collect()
}

#[test]
fn fresh_network_initializes_a_random_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut n = net(1);
    let h = unit_hash(&mut rng, 32);
    let (id, init) = n.select_unit(&h, &[], &mut rng).unwrap();
    assert!(init);
    let b = &n.unit(id).unwrap().basis;
    assert_eq!(b.nonzero_count(), 1);
    for (a, e) in b.slot(0).unwrap().iter().zip(&h.values) {
        assert!((a - e).abs() < 1e-6);
    }
    // Different rng seeds reach different units.
    let picks: std::collections::HashSet<usize> = (0..20)
        .map(|s| {
            let mut n = net(1);
            n.select_unit(&h, &[], &mut ChaCha8Rng::seed_from_u64(s)).unwrap().0
        })
        .collect();
    assert!(picks.len() > 1);
}

#[test]
fn strong_projection_beats_empty_units() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut n = net(2);
    let h = unit_hash(&mut rng, 32);
    let v = at_angle(&h, 0.9, &mut rng);
    n.unit_mut(1).unwrap().basis.initialize(&v);
    let before = n.state_checksum();
    assert_eq!(n.select_unit(&h, &[], &mut rng).unwrap(), (1, false));
    assert_eq!(n.state_checksum(), before);
}

#[test]
fn weak_projection_initializes_an_empty_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut n = net(3);
    let h = unit_hash(&mut rng, 32);
    let v = at_angle(&h, 0.1, &mut rng);
    n.unit_mut(1).unwrap().basis.initialize(&v);
    let (id, init) = n.select_unit(&h, &[], &mut rng).unwrap();
    assert!(init);
    assert_ne!(id, 1);
    assert_eq!(n.unit(id).unwrap().basis.nonzero_count(), 1);
}

#[test]
fn no_empties_left_means_argmax_even_if_weak() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut n = net(4);
    let h = unit_hash(&mut rng, 32);
    for (id, c) in [(0, 0.1), (1, 0.3), (2, 0.2)] {
        let v = at_angle(&h, c, &mut rng);
        n.unit_mut(id).unwrap().basis.initialize(&v);
    }
    assert_eq!(n.select_unit(&h, &[], &mut rng).unwrap(), (1, false));
    assert_eq!(n.select_unit(&h, &[1], &mut rng).unwrap(), (2, false));
    assert!(matches!(n.select_unit(&h, &[0, 1, 2], &mut rng), Err(HrnError::Exhausted)));
}

#[test]
fn argmax_ties_go_to_lowest_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut n = net(5);
    let h = unit_hash(&mut rng, 32);
    let v = at_angle(&h, 0.8, &mut rng);
    for id in 0..3 {
        n.unit_mut(id).unwrap().basis.initialize(&v);
    }
    assert_eq!(n.best_initialized(&h, &[]).unwrap().0, 0);
    assert_eq!(n.best_initialized(&h, &[0]).unwrap().0, 1);
}

#[test]
fn projection_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = 32;
    let mut b = Basis::new(s, 4, 3);
    let first = unit_hash(&mut rng, s);
    b.initialize(&first.values);
    while b.nonzero_count() < 3 {
        let g = unit_hash(&mut rng, s);
        b.expand(&g.values, 2.0);
    }
    let h = unit_hash(&mut rng, s);
    let p = b.project(&h.values);

    // Oracle: least squares over the raw basis columns via normal equations.
    let cols: Vec<Vec<f64>> = b.vectors().map(|(_, v)| v.iter().map(|x| *x as f64).collect()).collect();
    let k = cols.len();
    let mut ata = vec![vec![0.0f64; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            ata[i][j] = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
        }
        ata[i][k] = cols[i].iter().zip(&h.values).map(|(a, b)| a * *b as f64).sum();
    }
    for i in 0..k {
        let piv = ata[i][i];
        for j in i..=k {
            ata[i][j] /= piv;
        }
        for r in 0..k {
            if r != i {
                let f = ata[r][i];
                for j in i..=k {
                    ata[r][j] -= f * ata[i][j];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..k).map(|i| ata[i][k]).collect();
    for d in 0..s {
        let want: f64 = (0..k).map(|i| coef[i] * cols[i][d]).sum();
        assert!((p.projection[d] as f64 - want).abs() < 1e-6);
        assert!((p.residue[d] as f64 - (h.values[d] as f64 - want)).abs() < 1e-6);
    }
    let pn = p.projection.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    assert!((pn - p.magnitude).abs() < 1e-6);
}

#[test]
fn route_depth_three_uses_at_most_two_selections() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut n = net(7);
    n.set_thresholds(0.0, 0.5, 0.7);
    for _ in 0..30 {
        let x = sample(&mut rng);
        let t = n.route(&x, Mode::Train, &mut rng).unwrap();
        assert!(t.levels.len() <= 2);
        let g = {
            let mut tape = crate::ndcompute::Tape::new();
            n.route_eval_on_tape(&mut tape, &x).unwrap()
        };
        assert!(g.applied.len() <= 1);
    }
}

#[test]
fn low_first_residue_stops_early() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut n = net(8);
    let x = sample(&mut rng);
    // Empty network: the first unit is initialized with h0, so its residue is 0.
    let t = n.route(&x, Mode::Train, &mut rng).unwrap();
    assert_eq!(t.levels.len(), 1);
    assert!(t.stopped_early());
    assert!(t.levels[0].initialized);
    assert_eq!(t.output, t.levels[0].residue);
    assert!(t.levels[0].residue_norm < 1e-6);
}

#[test]
fn eval_routes_are_pure_and_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut n = net(9);
    for _ in 0..40 {
        n.route(&sample(&mut rng), Mode::Train, &mut rng).unwrap();
    }
    let before = n.state_checksum();
    for _ in 0..10 {
        let x = sample(&mut rng);
        let a = n.route_eval(&x).unwrap();
        let b = n.route(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(n.state_checksum(), before);
}

#[test]
fn all_zero_input_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut n = net(10);
    assert!(matches!(n.route(&Tensor::zeros(&[1, 8, 8]), Mode::Train, &mut rng), Err(HrnError::DegenerateInput)));
}

#[test]
fn eval_on_empty_network_yields_zero_output() {
    let n = net(11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = n.route_eval(&sample(&mut rng)).unwrap();
    assert!(t.levels.is_empty());
    assert_eq!(t.end, RouteEnd::Exhausted);
    assert_eq!(t.output, vec![0.0; 32]);
}

#[test]
fn add_units_keeps_old_routes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut n = net(12);
    for _ in 0..40 {
        n.route(&sample(&mut rng), Mode::Train, &mut rng).unwrap();
    }
    let xs: Vec<Tensor> = (0..10).map(|_| sample(&mut rng)).collect();
    let before: Vec<RouteTrace> = xs.iter().map(|x| n.route_eval(x).unwrap()).collect();
    let old_units: Vec<UnitState> = n.units().to_vec();

    let same = n.clone();
    assert!(n.add_units(0, ConvStackSpec::single(2)).unwrap().is_empty());
    assert_eq!(n, same);

    let ids = n.add_units(2, ConvStackSpec::single(2)).unwrap();
    assert_eq!(ids, vec![3, 4]);
    assert_eq!(n.num_units(), 5);
    assert_eq!(n.config().num_units, 5);
    assert!(ids.iter().all(|id| n.unit(*id).unwrap().basis.is_empty()));
    assert_eq!(&n.units()[..3], old_units.as_slice());
    let after: Vec<RouteTrace> = xs.iter().map(|x| n.route_eval(x).unwrap()).collect();
    assert_eq!(before, after);

    assert!(n.add_units(1, ConvStackSpec::single(4)).is_err());
}

#[test]
fn duplicate_hash_seeds_are_rejected() {
    let c = small_config();
    let conv = ConvStackSpec::single(2);
    assert!(Network::with_hash_seeds(c.clone(), conv.clone(), 1, &[2, 3, 1], 0).is_err());
    assert!(Network::with_hash_seeds(c.clone(), conv.clone(), 1, &[2, 2, 4], 0).is_err());
    assert!(Network::with_hash_seeds(c, conv, 1, &[2, 3, 4], 0).is_ok());
    let n = net(13);
    let mut seeds: Vec<u64> = n.units().iter().map(|u| u.hash.seed()).collect();
    seeds.push(n.input_hash().seed());
    seeds.sort();
    seeds.dedup();
    assert_eq!(seeds.len(), 4);
}

#[test]
fn channel_mismatch_conv_is_rejected() {
    let mut conv = ConvStackSpec::single(2);
    conv.layers[0].out_channels = 3;
    assert!(Network::new(small_config(), conv, 0).is_err());
}

#[test]
fn usage_ratio_counting() {
    let r = UsageRatios::from_routes([vec![1usize, 2], vec![3, 2]]).unwrap();
    assert_eq!(r.ratio(0, 1), 0.5);
    assert_eq!(r.ratio(0, 3), 0.5);
    assert_eq!(r.ratio(1, 2), 1.0);
    let same = UsageRatios::from_routes(vec![vec![0usize, 1]; 5]).unwrap();
    assert_eq!(same.ratio(0, 0), 1.0);
    assert_eq!(same.ratio(1, 1), 1.0);
    assert!(UsageRatios::from_routes(Vec::<Vec<usize>>::new()).is_err());
    assert!(usage_ratios(&[]).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut n = net(14);
    for _ in 0..50 {
        n.route(&sample(&mut rng), Mode::Train, &mut rng).unwrap();
    }
    let (meta, tensors) = n.to_parts();
    let ck = Checkpoint { meta: meta.to_string(), tensors };
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    let back = Checkpoint::read_from(&buf[..]).unwrap();
    let meta: serde_json::Value = serde_json::from_str(&back.meta).unwrap();
    let m = Network::from_parts(&meta, &back).unwrap();
    assert_eq!(m, n);
    assert_eq!(m.state_checksum(), n.state_checksum());
}

#[test]
fn trace_log_round_trip_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut n = net(15);
    let mut lines = Vec::new();
    for i in 0..5 {
        let t = n.route(&sample(&mut rng), Mode::Train, &mut rng).unwrap();
        lines.push(TraceRecord::from_trace(&t, i, "train", 0, 0).to_line());
    }
    lines.insert(2, "{not json".into());
    let text = lines.join("\n");
    let (records, errors) = parse_trace_log(text.as_bytes()).unwrap();
    assert_eq!(records.len(), 5);
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0].line, 3);
}
