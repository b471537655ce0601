use serde::{Deserialize, Serialize};

use crate::error::{BatError, Result};
use crate::numerics::{Init, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Time,
    Sensor,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Time => "time",
            Axis::Sensor => "sensor",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackOrder {
    TimeThenSensor,
    SensorThenTime,
    TimeOnly,
    SensorOnly,
}

impl TrackOrder {
    pub fn axes(self) -> &'static [Axis] {
        match self {
            TrackOrder::TimeThenSensor => &[Axis::Time, Axis::Sensor],
            TrackOrder::SensorThenTime => &[Axis::Sensor, Axis::Time],
            TrackOrder::TimeOnly => &[Axis::Time],
            TrackOrder::SensorOnly => &[Axis::Sensor],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrackOrder::TimeThenSensor => "time_then_sensor",
            TrackOrder::SensorThenTime => "sensor_then_time",
            TrackOrder::TimeOnly => "time_only",
            TrackOrder::SensorOnly => "sensor_only",
        }
    }
}

/// Hyperparameters shared by every block of a stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSpec {
    pub dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub attention_dropout: f64,
}

impl BlockSpec {
    pub fn hidden(&self) -> usize {
        4 * self.dim
    }
}

const BLOCK_PARAMS: [&str; 16] = [
    "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ln2.g",
    "ln2.b", "ff1.w", "ff1.b", "ff2.w", "ff2.b",
];

/// Adds the parameters of one pre-norm encoder block under `prefix`.
pub fn init_block(store: &mut ParamStore, prefix: &str, spec: &BlockSpec, seed: u64) -> Result<()> {
    let (e, h) = (spec.dim, spec.hidden());
    for name in BLOCK_PARAMS {
        let full = format!("{prefix}.{name}");
        let (shape, init) = match name {
            "ln1.g" | "ln2.g" => (vec![e], Init::Ones),
            "ff1.w" => (vec![e, h], Init::FanIn(e)),
            "ff1.b" => (vec![h], Init::Zeros),
            "ff2.w" => (vec![h, e], Init::FanIn(h)),
            n if n.contains(".w") => (vec![e, e], Init::FanIn(e)),
            _ => (vec![e], Init::Zeros),
        };
        store.init(&full, &shape, init, seed)?;
    }
    Ok(())
}

/// Output of a block plus the attention node, for weight capture.
pub struct BlockOutput {
    pub x: Var,
    pub attention: Var,
}

/// Pre-norm block over `[lanes, seq, E]`: `x + attn(ln1(x))`, then
/// `x + ffn(ln2(x))`.
pub fn block_forward(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    spec: &BlockSpec,
    x: Var,
    key_valid: Option<&[bool]>,
) -> Result<BlockOutput> {
    let mut p = |name: &str| -> Result<Var> { Ok(tape_param(tape, store, &format!("{prefix}.{name}"))?) };
    let (g1, b1, wq, bq, wk, bk, wv, bv, wo, bo) = (
        p("ln1.g")?,
        p("ln1.b")?,
        p("attn.wq")?,
        p("attn.bq")?,
        p("attn.wk")?,
        p("attn.bk")?,
        p("attn.wv")?,
        p("attn.bv")?,
        p("attn.wo")?,
        p("attn.bo")?,
    );
    let (g2, b2, f1w, f1b, f2w, f2b) = (p("ln2.g")?, p("ln2.b")?, p("ff1.w")?, p("ff1.b")?, p("ff2.w")?, p("ff2.b")?);

    let h = tape.layer_norm(x, g1, b1)?;
    let q = tape.linear(h, wq, Some(bq))?;
    let k = tape.linear(h, wk, Some(bk))?;
    let v = tape.linear(h, wv, Some(bv))?;
    let attention = tape.attention(q, k, v, spec.heads, key_valid, spec.attention_dropout)?;
    let a = tape.linear(attention, wo, Some(bo))?;
    let a = tape.dropout(a, spec.dropout)?;
    let x = tape.add(x, a)?;

    let h = tape.layer_norm(x, g2, b2)?;
    let f = tape.linear(h, f1w, Some(f1b))?;
    let f = tape.relu(f);
    let f = tape.linear(f, f2w, Some(f2b))?;
    let f = tape.dropout(f, spec.dropout)?;
    let x = tape.add(x, f)?;
    Ok(BlockOutput { x, attention })
}

fn tape_param(tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
    Ok(tape.param(store, store.id(name)?))
}

/// One attention pass along `axis` of a `[B, T, D, E]` tensor. The other axis
/// is folded into the lane dimension, so lanes never see each other. For the
/// time axis, padded time steps are masked as keys; `padding` is `[B, T]`.
pub fn axial_pass(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    spec: &BlockSpec,
    x: Var,
    axis: Axis,
    padding: &Tensor,
) -> Result<BlockOutput> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(BatError::dim(format!("axial pass over {:?}", s)));
    }
    let (b, t, d, e) = (s[0], s[1], s[2], s[3]);
    if padding.shape() != [b, t] {
        return Err(BatError::dim(format!("padding {:?} for input {:?}", padding.shape(), s)));
    }
    match axis {
        Axis::Time => {
            let folded = tape.permute(x, &[0, 2, 1, 3])?;
            let folded = tape.reshape(folded, &[b * d, t, e])?;
            let pv = padding.data();
            let mut valid = Vec::with_capacity(b * d * t);
            for bi in 0..b {
                for _ in 0..d {
                    valid.extend(pv[bi * t..(bi + 1) * t].iter().map(|&p| p > 0.0));
                }
            }
            let out = block_forward(tape, store, prefix, spec, folded, Some(&valid))?;
            let y = tape.reshape(out.x, &[b, d, t, e])?;
            let y = tape.permute(y, &[0, 2, 1, 3])?;
            Ok(BlockOutput { x: y, attention: out.attention })
        }
        Axis::Sensor => {
            let folded = tape.reshape(x, &[b * t, d, e])?;
            let out = block_forward(tape, store, prefix, spec, folded, None)?;
            let y = tape.reshape(out.x, &[b, t, d, e])?;
            Ok(BlockOutput { x: y, attention: out.attention })
        }
    }
}

/// Attention node captured during a track forward.
#[derive(Clone, Copy, Debug)]
pub struct AttentionTap {
    pub track: usize,
    pub axis: Axis,
    pub layer: usize,
    pub var: Var,
}

/// Runs a track: each of the `layers` blocks under `prefix` performs one
/// pass per axis of `order`, with the same block parameters for every pass.
#[allow(clippy::too_many_arguments)]
pub fn track_forward(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    spec: &BlockSpec,
    layers: usize,
    order: TrackOrder,
    x: Var,
    padding: &Tensor,
    track_index: usize,
    taps: &mut Vec<AttentionTap>,
) -> Result<Var> {
    let mut x = x;
    for layer in 0..layers {
        let block = format!("{prefix}.layer{layer}");
        for &axis in order.axes() {
            let out = axial_pass(tape, store, &block, spec, x, axis, padding)?;
            taps.push(AttentionTap { track: track_index, axis, layer, var: out.attention });
            x = out.x;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> BlockSpec {
        BlockSpec { dim: 8, heads: 2, dropout: 0.0, attention_dropout: 0.0 }
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn store(layers: usize) -> ParamStore {
        let mut s = ParamStore::new();
        for l in 0..layers {
            init_block(&mut s, &format!("t.layer{l}"), &spec(), 5).unwrap();
        }
        s
    }

    #[test]
    fn shapes_preserved() {
        let s = store(1);
        for axis in [Axis::Time, Axis::Sensor] {
            let mut tape = Tape::new();
            let x = tape.input(random(&[1, 4, 3, 8], 1));
            let y = axial_pass(&mut tape, &s, "t.layer0", &spec(), x, axis, &Tensor::full(&[1, 4], 1.0)).unwrap();
            assert_eq!(tape.shape(y.x), &[1, 4, 3, 8]);
        }
    }

    #[test]
    fn track_orders_do_not_commute() {
        let s = store(1);
        let run = |order| {
            let mut tape = Tape::new();
            let x = tape.input(random(&[1, 6, 4, 8], 2));
            let y = track_forward(&mut tape, &s, "t", &spec(), 1, order, x, &Tensor::full(&[1, 6], 1.0), 0, &mut Vec::new())
                .unwrap();
            tape.value(y).data().to_vec()
        };
        let a = run(TrackOrder::TimeThenSensor);
        let b = run(TrackOrder::SensorThenTime);
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-6, "{diff}");
        assert_eq!(a.len(), 6 * 4 * 8);
    }
}
