use bat_core::data::{generate_synthetic, Batch, SignalMode, SyntheticSpec};
use bat_core::embedding::{RegistryMode, SensorRegistry};
use bat_core::model::{
    axial_pass, init_block, representation_cost, track_forward, AttentionMode, Axis, BatModel, BlockSpec, ModelConfig,
    RepresentationScheme, TrackOrder,
};
use bat_core::numerics::{ParamStore, PoolMode, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const E: usize = 8;

fn spec() -> BlockSpec {
    BlockSpec { dim: E, heads: 2, dropout: 0.0, attention_dropout: 0.0 }
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn block_store(prefix: &str, layers: usize) -> ParamStore {
    let mut s = ParamStore::new();
    for l in 0..layers {
        init_block(&mut s, &format!("{prefix}.layer{l}"), &spec(), 13 + l as u64).unwrap();
    }
    s
}

/// Value at `[b, t, d, :]` of a `[B, T, D, E]` tensor.
fn cell(x: &Tensor, t: usize, d: usize) -> &[f64] {
    let s = x.shape();
    let start = (t * s[2] + d) * s[3];
    &x.data()[start..start + s[3]]
}

/// Reorders the sensor axis (`by_sensor`) or time axis of a `[1, T, D, E]` tensor.
fn reorder(x: &Tensor, perm: &[usize], by_sensor: bool) -> Tensor {
    let s = x.shape();
    let mut out = Vec::with_capacity(x.len());
    for t in 0..s[1] {
        for d in 0..s[2] {
            let (tt, dd) = if by_sensor { (t, perm[d]) } else { (perm[t], d) };
            out.extend_from_slice(cell(x, tt, dd));
        }
    }
    Tensor::new(s.to_vec(), out).unwrap()
}

fn run_pass(store: &ParamStore, x: &Tensor, axis: Axis) -> Tensor {
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone());
    let pad = Tensor::full(&x.shape()[..2], 1.0);
    let out = axial_pass(&mut tape, store, "t.layer0", &spec(), xi, axis, &pad).unwrap();
    tape.value(out.x).clone()
}

fn run_track(store: &ParamStore, x: &Tensor, order: TrackOrder) -> Tensor {
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone());
    let pad = Tensor::full(&x.shape()[..2], 1.0);
    let y = track_forward(&mut tape, store, "t", &spec(), 2, order, xi, &pad, 0, &mut Vec::new()).unwrap();
    tape.value(y).clone()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn passes_are_equivariant_to_reordering_either_axis() {
    let store = block_store("t", 1);
    let x = random(&[1, 6, 5, E], 1);
    let sensor_perm = [3, 0, 4, 1, 2];
    let time_perm = [5, 2, 0, 1, 4, 3];
    for axis in [Axis::Time, Axis::Sensor] {
        for (perm, by_sensor) in [(&sensor_perm[..], true), (&time_perm[..], false)] {
            let direct = reorder(&run_pass(&store, &x, axis), perm, by_sensor);
            let permuted = run_pass(&store, &reorder(&x, perm, by_sensor), axis);
            assert!(max_diff(direct.data(), permuted.data()) < 1e-12, "{axis:?} by_sensor={by_sensor}");
        }
    }
}

#[test]
fn lanes_of_a_pass_are_independent() {
    let store = block_store("t", 1);
    let x = random(&[1, 6, 5, E], 2);
    let mut bumped = x.clone();
    for (k, v) in bumped.data_mut()[(2 * 5 + 3) * E..(2 * 5 + 4) * E].iter_mut().enumerate() {
        *v += 0.3 * k as f64;
    }
    for axis in [Axis::Time, Axis::Sensor] {
        let (a, b) = (run_pass(&store, &x, axis), run_pass(&store, &bumped, axis));
        for t in 0..6 {
            for d in 0..5 {
                let same_lane = match axis {
                    Axis::Time => d == 3,
                    Axis::Sensor => t == 2,
                };
                let diff = max_diff(cell(&a, t, d), cell(&b, t, d));
                if same_lane {
                    assert!(diff > 1e-6, "{axis:?} ({t},{d}) should react");
                } else {
                    assert_eq!(diff, 0.0, "{axis:?} ({t},{d}) leaked");
                }
            }
        }
    }
}

#[test]
fn single_axis_tracks_keep_the_other_axis_separate() {
    let store = block_store("t", 2);
    let x = random(&[1, 5, 4, E], 3);
    let mut bumped = x.clone();
    for (k, v) in bumped.data_mut()[..E].iter_mut().enumerate() {
        *v -= 0.2 * k as f64;
    }
    let cases = [(TrackOrder::TimeOnly, true), (TrackOrder::SensorOnly, false)];
    for (order, lanes_are_sensors) in cases {
        let (a, b) = (run_track(&store, &x, order), run_track(&store, &bumped, order));
        for t in 0..5 {
            for d in 0..4 {
                let touched = if lanes_are_sensors { d == 0 } else { t == 0 };
                assert_eq!(max_diff(cell(&a, t, d), cell(&b, t, d)) > 0.0, touched, "{order:?} ({t},{d})");
            }
        }
    }
    let (a, b) = (run_track(&store, &x, TrackOrder::TimeThenSensor), run_track(&store, &bumped, TrackOrder::TimeThenSensor));
    assert!((0..5).all(|t| (0..4).all(|d| max_diff(cell(&a, t, d), cell(&b, t, d)) > 0.0)));
}

#[test]
fn single_axis_models_capture_only_their_axis() {
    let raw = generate_synthetic(&SyntheticSpec::new(SignalMode::CrossAxis, 20, 6, 3, 0.3, 1)).unwrap();
    let ds = raw.standardized(&raw.fit_standardization().unwrap()).unwrap();
    let batch = Batch::from_dataset(&ds, &[0, 1]).unwrap();
    for (mode, axes) in [
        (AttentionMode::TimeOnly, vec![Axis::Time]),
        (AttentionMode::SensorOnly, vec![Axis::Sensor]),
        (AttentionMode::Biaxial, vec![Axis::Time, Axis::Sensor, Axis::Sensor, Axis::Time]),
    ] {
        let model = model_for(&ds.name, &ds.sensor_names, mode, ds.n_demographics());
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch, &ds.name, true).unwrap();
        assert_eq!(out.taps.iter().map(|t| t.axis).collect::<Vec<_>>(), axes, "{mode:?}");
    }
}

fn model_for(name: &str, sensors: &[String], mode: AttentionMode, p: usize) -> BatModel {
    let mut registry = SensorRegistry::new(RegistryMode::Shared);
    registry.register(name, sensors).unwrap();
    let cfg = ModelConfig { mode, embed_dim: E, heads: 2, dropout: 0.0, max_time: 20.0, ..ModelConfig::default() };
    BatModel::new(cfg, registry, p, 2, 4).unwrap()
}

/// The first `t` time steps of sample `i` of `batch`, as a batch of one.
fn truncated(batch: &Batch, i: usize, t: usize) -> Batch {
    let (bt, d) = (batch.t, batch.d);
    let cells = |x: &Tensor| Tensor::new(vec![1, t, d], x.data()[i * bt * d..i * bt * d + t * d].to_vec()).unwrap();
    let steps = |x: &Tensor| Tensor::new(vec![1, t], x.data()[i * bt..i * bt + t].to_vec()).unwrap();
    let p = batch.n_demographics();
    Batch {
        b: 1,
        t,
        d,
        values: cells(&batch.values),
        mask: cells(&batch.mask),
        times: steps(&batch.times),
        padding: steps(&batch.padding),
        demographics: Tensor::new(vec![1, p], batch.demographics.data()[i * p..(i + 1) * p].to_vec()).unwrap(),
        labels: vec![batch.labels[i]],
        sample_ids: vec![batch.sample_ids[i].clone()],
    }
}

/// `batch` (one sample) extended with `extra` padded steps full of junk.
fn padded_with_junk(batch: &Batch, extra: usize, seed: u64) -> Batch {
    let (t, d) = (batch.t, batch.d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grow = |x: &Tensor, per_step: usize, shape: Vec<usize>| {
        let mut v = x.data().to_vec();
        v.extend((0..extra * per_step).map(|_| rng.gen_range(-5.0..5.0)));
        Tensor::new(shape, v).unwrap()
    };
    let values = grow(&batch.values, d, vec![1, t + extra, d]);
    let mask = grow(&batch.mask, d, vec![1, t + extra, d]);
    let times = grow(&batch.times, 1, vec![1, t + extra]);
    let mut padding = batch.padding.data().to_vec();
    padding.extend(std::iter::repeat(0.0).take(extra));
    Batch {
        t: t + extra,
        values,
        mask,
        times,
        padding: Tensor::new(vec![1, t + extra], padding).unwrap(),
        ..batch.clone()
    }
}

#[test]
fn padded_steps_never_change_logits() {
    let raw = generate_synthetic(&SyntheticSpec::new(SignalMode::CrossAxis, 20, 8, 4, 0.4, 2)).unwrap();
    let ds = raw.standardized(&raw.fit_standardization().unwrap()).unwrap();
    let full = Batch::from_dataset(&ds, &[0, 1, 2]).unwrap();
    for mode in [AttentionMode::Biaxial, AttentionMode::TimeOnly, AttentionMode::SensorOnly] {
        for pool in [PoolMode::Mean, PoolMode::Max] {
            let mut model = model_for(&ds.name, &ds.sensor_names, mode, ds.n_demographics());
            model.config.pool = pool;
            for (i, t) in [(0, 5), (1, 3), (2, 8)] {
                let short = truncated(&full, i, t);
                let long = padded_with_junk(&short, 6, i as u64);
                let logits = |b: &Batch| {
                    let mut tape = Tape::new();
                    let out = model.forward(&mut tape, b, &ds.name, false).unwrap();
                    tape.value(out.logits).data().to_vec()
                };
                let diff = max_diff(&logits(&short), &logits(&long));
                assert!(diff < 1e-9, "{mode:?} {pool:?} sample {i}: {diff}");
            }
        }
    }
}

fn loss_of(tape: &mut Tape, y: Var) -> Var {
    let pad = Tensor::full(&tape.shape(y)[..2], 1.0);
    let p = tape.masked_pool(y, &pad, &[1, 2], PoolMode::Mean).unwrap();
    let q = tape.mul(p, p).unwrap();
    tape.sum(q)
}

#[test]
fn shared_block_collects_gradient_from_both_passes() {
    let shared = block_store("t", 1);
    let mut split = ParamStore::new();
    for p in shared.iter() {
        for axis in ["time", "sensor"] {
            split.insert(&p.name.replacen("t.", &format!("{axis}."), 1), p.tensor.clone()).unwrap();
        }
    }
    let x = random(&[2, 5, 4, E], 6);
    let pad = Tensor::full(&[2, 5], 1.0);

    let mut shared_grads = shared.clone();
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone());
    let y = track_forward(&mut tape, &shared_grads, "t", &spec(), 1, TrackOrder::TimeThenSensor, xi, &pad, 0, &mut Vec::new())
        .unwrap();
    let loss = loss_of(&mut tape, y);
    tape.backward(loss).unwrap();
    shared_grads.zero_grad();
    tape.accumulate_param_grads(&mut shared_grads);

    let mut tape = Tape::new();
    let xi = tape.constant(x);
    let h = axial_pass(&mut tape, &split, "time.layer0", &spec(), xi, Axis::Time, &pad).unwrap();
    let y = axial_pass(&mut tape, &split, "sensor.layer0", &spec(), h.x, Axis::Sensor, &pad).unwrap();
    let loss = loss_of(&mut tape, y.x);
    tape.backward(loss).unwrap();
    split.zero_grad();
    tape.accumulate_param_grads(&mut split);

    for p in shared_grads.iter() {
        let g_time = &split.by_name(&p.name.replacen("t.", "time.", 1)).unwrap().grad;
        let g_sensor = &split.by_name(&p.name.replacen("t.", "sensor.", 1)).unwrap().grad;
        assert!(g_time.iter().any(|g| *g != 0.0) && g_sensor.iter().any(|g| *g != 0.0), "{}", p.name);
        for ((g, a), b) in p.grad.iter().zip(g_time).zip(g_sensor) {
            assert!((g - (a + b)).abs() <= 1e-12 * (1.0 + g.abs()), "{}", p.name);
        }
    }
}

#[test]
fn biaxial_track_owns_one_block_per_layer() {
    let mut registry = SensorRegistry::new(RegistryMode::Shared);
    registry.register("x", &["a".to_string(), "b".to_string()]).unwrap();
    for layers in [1, 2, 3] {
        let cfg = ModelConfig { embed_dim: E, heads: 2, layers, ..ModelConfig::default() };
        let model = BatModel::new(cfg, registry.clone(), 0, 2, 1).unwrap();
        assert_eq!(model.track_param_count(0), layers * block_store("t", 1).iter().map(|p| p.tensor.len()).sum::<usize>());
        assert_eq!(model.track_param_count(0), model.track_param_count(1));
    }
}

#[test]
fn axial_scores_never_exceed_full_attention() {
    // T + D < T·D fails only at T = D = 2, where both sides equal 16
    for t in 2..=32usize {
        for d in 2..=32usize {
            let axial = representation_cost(t, d, 0.0, RepresentationScheme::Axial).score_entries;
            let full = representation_cost(t, d, 0.0, RepresentationScheme::DenseTupleWithMissing).score_entries;
            assert_eq!(axial, (d * t * t + t * d * d) as f64);
            if (t, d) == (2, 2) {
                assert_eq!(axial, full);
            } else {
                assert!(axial < full, "T={t} D={d}");
            }
        }
    }
    let store = block_store("t", 1);
    for (t, d) in [(2, 2), (3, 7), (8, 5), (16, 16), (32, 3)] {
        let mut tape = Tape::new();
        let x = tape.constant(random(&[2, t, d, E], 1));
        let pad = Tensor::full(&[2, t], 1.0);
        track_forward(&mut tape, &store, "t", &spec(), 1, TrackOrder::TimeThenSensor, x, &pad, 0, &mut Vec::new()).unwrap();
        let per_sample = representation_cost(t, d, 0.0, RepresentationScheme::Axial).score_entries;
        assert_eq!(tape.score_entries() as f64, 2.0 * spec().heads as f64 * per_sample, "T={t} D={d}");
    }
}
