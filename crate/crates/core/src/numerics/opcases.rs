//! Randomized gradient-check cases, one per differentiable tape op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{grad_check, grad_check_training, GradReport};
use super::tape::{PoolMode, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    /// Run on a training tape, so dropout is active.
    pub training: bool,
    f: CaseFn,
}

impl OpCase {
    fn new(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Self {
        OpCase { name, inputs, training: false, f: Box::new(f) }
    }

    fn training(mut self) -> Self {
        self.training = true;
        self
    }

    pub fn eval(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        (self.f)(tape, vars)
    }

    pub fn check(&self, eps: f64, tol: f64, seed: u64) -> Result<GradReport> {
        if self.training {
            grad_check_training(|t, v| self.eval(t, v), &self.inputs, eps, tol, seed)
        } else {
            grad_check(|t, v| self.eval(t, v), &self.inputs, eps, tol)
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// `sum(y ⊙ w)` for a fixed random `w`, so every output entry carries a
/// distinct upstream gradient.
fn project(tape: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let w = tape.constant(w.clone());
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// One case per differentiable op, with inputs drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = Vec::new();

    let w = uniform(r, &[2, 3, 5]);
    cases.push(OpCase::new("matmul_shared", vec![uniform(r, &[2, 3, 4]), uniform(r, &[4, 5])], move |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[2, 3, 5]);
    cases.push(OpCase::new("matmul_batched", vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 4, 5])], move |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[2, 3, 4]);
    cases.push(OpCase::new(
        "linear",
        vec![uniform(r, &[2, 3, 5]), uniform(r, &[5, 4]), uniform(r, &[4])],
        move |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, &w)
        },
    ));
    let w = uniform(r, &[3, 4]);
    cases.push(OpCase::new("linear_no_bias", vec![uniform(r, &[3, 5]), uniform(r, &[5, 4])], move |t, v| {
        let y = t.linear(v[0], v[1], None)?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[3, 4]);
    cases.push(OpCase::new("add", vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])], move |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[3, 4]);
    cases.push(OpCase::new("mul", vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])], move |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[3, 4]);
    cases.push(OpCase::new("scale", vec![uniform(r, &[3, 4])], move |t, v| {
        let y = t.scale(v[0], -1.7);
        project(t, y, &w)
    }));
    let w = uniform(r, &[3, 4]);
    cases.push(OpCase::new("relu", vec![uniform(r, &[3, 4])], move |t, v| {
        let y = t.relu(v[0]);
        project(t, y, &w)
    }));
    let w = uniform(r, &[4, 5]);
    cases.push(
        OpCase::new("dropout", vec![uniform(r, &[4, 5])], move |t, v| {
            let y = t.dropout(v[0], 0.3)?;
            project(t, y, &w)
        })
        .training(),
    );
    let w = uniform(r, &[2, 3, 4]);
    cases.push(OpCase::new("softmax", vec![uniform(r, &[2, 3, 4])], move |t, v| {
        let y = t.softmax(v[0], 1)?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[3, 6]);
    cases.push(OpCase::new(
        "layer_norm",
        vec![uniform(r, &[3, 6]), uniform(r, &[6]), uniform(r, &[6])],
        move |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            project(t, y, &w)
        },
    ));
    let mask = Tensor::new(vec![2, 3, 2], vec![1., 0., 1., 1., 0., 1., 0., 0., 1., 0., 1., 1.]).expect("shape");
    for (name, mode) in [("masked_pool_mean", PoolMode::Mean), ("masked_pool_max", PoolMode::Max)] {
        let w = uniform(r, &[2, 4]);
        let m = mask.clone();
        cases.push(OpCase::new(name, vec![uniform(r, &[2, 3, 2, 4])], move |t, v| {
            let y = t.masked_pool(v[0], &m, &[1, 2], mode)?;
            project(t, y, &w)
        }));
    }
    let w = uniform(r, &[2, 3, 7]);
    cases.push(OpCase::new("concat", vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 3, 3])], move |t, v| {
        let y = t.concat(&[v[0], v[1]])?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[4, 2, 3]);
    cases.push(OpCase::new("permute", vec![uniform(r, &[2, 3, 4])], move |t, v| {
        let y = t.permute(v[0], &[2, 0, 1])?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[6, 4]);
    cases.push(OpCase::new("reshape", vec![uniform(r, &[2, 3, 4])], move |t, v| {
        let y = t.reshape(v[0], &[6, 4])?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[2, 3, 4, 5]);
    cases.push(OpCase::new("expand_leading", vec![uniform(r, &[4, 5])], move |t, v| {
        let y = t.expand_leading(v[0], &[2, 3])?;
        project(t, y, &w)
    }));
    let w = uniform(r, &[5, 3]);
    cases.push(OpCase::new("gather_rows", vec![uniform(r, &[4, 3])], move |t, v| {
        let y = t.gather_rows(v[0], &[2, 0, 2, 3, 2])?;
        project(t, y, &w)
    }));
    let valid = vec![true, true, false, true, true, true, true, false];
    let w = uniform(r, &[2, 4, 6]);
    let (keys, w2) = (valid.clone(), w.clone());
    let qkv = |r: &mut ChaCha8Rng| vec![uniform(r, &[2, 4, 6]), uniform(r, &[2, 4, 6]), uniform(r, &[2, 4, 6])];
    cases.push(OpCase::new("attention", qkv(r), move |t, v| {
        let y = t.attention(v[0], v[1], v[2], 2, Some(&keys), 0.0)?;
        project(t, y, &w)
    }));
    cases.push(
        OpCase::new("attention_dropout", qkv(r), move |t, v| {
            let y = t.attention(v[0], v[1], v[2], 3, Some(&valid), 0.25)?;
            project(t, y, &w2)
        })
        .training(),
    );
    cases.push(OpCase::new("sum", vec![uniform(r, &[3, 4])], |t, v| Ok(t.sum(v[0]))));
    cases.push(OpCase::new("mean", vec![uniform(r, &[3, 4])], |t, v| Ok(t.mean(v[0]))));
    let labels: Vec<usize> = (0..5).map(|_| r.gen_range(0..3)).collect();
    let logits = uniform(r, &[5, 3]);
    cases.push(OpCase::new("softmax_cross_entropy", vec![logits], move |t, v| t.softmax_cross_entropy(v[0], &labels)));
    cases
}
