//! Central finite-difference oracle for the analytic gradients.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::si_sdr_graph;
use crate::nn::{multi_head_attention, AttentionWeights};
use crate::rng::Rng;

/// Perturbation used for the central differences.
pub const STEP: f64 = 1e-4;

/// Denominator floor of the relative error, so near-zero gradients compare absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub elements: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Checks `build` against central differences. The scalar under test is
/// `sum(out ⊙ r)` for a fixed random projection `r`, so every output element
/// participates. `inputs` are `(shape, values)` pairs; all of them are checked.
pub fn check_gradients<F>(
    name: &str,
    inputs: &[(Vec<usize>, Vec<f64>)],
    tolerance: f64,
    seed: u64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut projection: Option<Vec<f64>> = None;
    let mut evaluate = |values: &[Vec<f64>], want_grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::<f64>::new();
        let vars = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), v)| g.leaf(shape.clone(), v.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut g, &vars)?;
        let n = g.value(out).len();
        let proj = projection.get_or_insert_with(|| {
            let mut rng = Rng::from_key(&[seed, 0x9c]);
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect()
        });
        let r = g.leaf(g.shape(out).to_vec(), proj.clone(), false)?;
        let weighted = g.mul(out, r)?;
        let loss = g.sum(weighted)?;
        let value = g.scalar(loss);
        let mut grads = Vec::new();
        if want_grads {
            g.backward(loss)?;
            for &v in &vars {
                grads.push(
                    g.grad(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; g.value(v).len()]),
                );
            }
        }
        Ok((value, grads))
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let (_, analytic) = evaluate(&base, true)?;
    let mut worst: f64 = 0.0;
    let mut elements = 0;
    let mut probe = base.clone();
    for (i, input) in base.iter().enumerate() {
        for j in 0..input.len() {
            probe[i][j] = input[j] + STEP;
            let (up, _) = evaluate(&probe, false)?;
            probe[i][j] = input[j] - STEP;
            let (down, _) = evaluate(&probe, false)?;
            probe[i][j] = input[j];
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
            elements += 1;
        }
    }
    Ok(GradCheckReport {
        op: name.to_string(),
        max_rel_error: worst,
        tolerance,
        elements,
    })
}

/// Every op name understood by [`grad_check`].
pub const CHECKED_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_const",
    "scale_by",
    "sum",
    "mean",
    "center",
    "square",
    "log10",
    "sin",
    "snake",
    "relu",
    "matmul",
    "add_bias",
    "conv1d",
    "conv1d_transposed",
    "pad_reflect",
    "layer_norm",
    "softmax",
    "concat",
    "slice",
    "transpose",
    "reshape",
    "passthrough_grad",
    "attention",
    "si_sdr_loss",
];

enum Domain {
    Symmetric(f64),
    Positive,
    AwayFromZero,
}

fn sample(shape: &[usize], domain: Domain, rng: &mut Rng) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| match domain {
            Domain::Symmetric(r) => rng.range(-r, r),
            Domain::Positive => rng.range(0.5, 2.0),
            Domain::AwayFromZero => {
                let m = rng.range(0.05, 1.0);
                if rng.uniform() < 0.5 {
                    -m
                } else {
                    m
                }
            }
        })
        .collect();
    (shape.to_vec(), values)
}

fn need(shapes: &[Vec<usize>], count: usize, op: &str) -> Result<()> {
    if shapes.len() < count || shapes.iter().take(count).any(|s| s.is_empty()) {
        return Err(Error::Config(alloc::format!(
            "grad_check `{op}` needs {count} shape(s)"
        )));
    }
    Ok(())
}

/// Runs the finite-difference oracle for one named op on random inputs.
///
/// `shapes[0]` is the primary input. Binary elementwise ops reuse it for both
/// operands; `matmul` takes `[m, k]` and `[k, n]`; `conv1d` takes the input
/// `[c_in, len]` and weight `[c_out, c_in, k]` (stride 2, padding 1);
/// `conv1d_transposed` takes `[c_in, len]` and `[c_in, c_out, k]` (stride 2,
/// padding 1, output padding 1); `attention` takes `[frames, dim]` with two
/// heads; `si_sdr_loss` takes a rank-1 length.
pub fn grad_check(op: &str, shapes: &[Vec<usize>], tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    need(shapes, 1, op)?;
    let mut rng = Rng::from_key(&[seed, 0x6c]);
    let s0 = shapes[0].clone();
    let last = *s0.last().unwrap();
    let sym = |rng: &mut Rng, s: &[usize]| sample(s, Domain::Symmetric(1.0), rng);
    let inputs: Vec<(Vec<usize>, Vec<f64>)>;
    macro_rules! run {
        ($f:expr) => {
            check_gradients(op, &inputs, tolerance, seed, $f)
        };
    }
    match op {
        "add" | "sub" | "mul" => {
            inputs = vec![sym(&mut rng, &s0), sym(&mut rng, &s0)];
            run!(|g, v| match op {
                "add" => g.add(v[0], v[1]),
                "sub" => g.sub(v[0], v[1]),
                _ => g.mul(v[0], v[1]),
            })
        }
        "div" => {
            inputs = vec![sym(&mut rng, &s0), sample(&s0, Domain::Positive, &mut rng)];
            run!(|g, v| g.div(v[0], v[1]))
        }
        "scale" => {
            inputs = vec![sym(&mut rng, &s0)];
            run!(|g, v| g.scale(v[0], -1.7))
        }
        "add_const" => {
            inputs = vec![sym(&mut rng, &s0)];
            run!(|g, v| g.add_const(v[0], 0.3))
        }
        "scale_by" => {
            inputs = vec![sym(&mut rng, &s0), sym(&mut rng, &[1])];
            run!(|g, v| g.scale_by(v[0], v[1]))
        }
        "sum" | "mean" | "center" | "square" | "sin" | "transpose" | "reshape" => {
            inputs = vec![sym(&mut rng, &s0)];
            run!(|g, v| match op {
                "sum" => g.sum(v[0]),
                "mean" => g.mean(v[0]),
                "center" => g.center(v[0]),
                "square" => g.square(v[0]),
                "sin" => g.sin(v[0]),
                "transpose" => g.transpose(v[0]),
                _ => {
                    let n = g.value(v[0]).len();
                    g.reshape(v[0], vec![n])
                }
            })
        }
        "snake" => {
            inputs = vec![sample(&s0, Domain::Symmetric(3.0), &mut rng)];
            run!(|g, v| g.snake(v[0]))
        }
        "relu" => {
            inputs = vec![sample(&s0, Domain::AwayFromZero, &mut rng)];
            run!(|g, v| g.relu(v[0]))
        }
        "log10" => {
            inputs = vec![sample(&s0, Domain::Positive, &mut rng)];
            run!(|g, v| g.log10(v[0]))
        }
        "matmul" => {
            need(shapes, 2, op)?;
            inputs = vec![sym(&mut rng, &s0), sym(&mut rng, &shapes[1])];
            run!(|g, v| g.matmul(v[0], v[1]))
        }
        "add_bias" => {
            inputs = vec![sym(&mut rng, &s0), sym(&mut rng, &[last])];
            run!(|g, v| g.add_bias(v[0], v[1]))
        }
        "conv1d" => {
            need(shapes, 2, op)?;
            let c_out = shapes[1][0];
            inputs = vec![sym(&mut rng, &s0), sym(&mut rng, &shapes[1]), sym(&mut rng, &[c_out])];
            run!(|g, v| g.conv1d(v[0], v[1], Some(v[2]), 2, 1))
        }
        "conv1d_transposed" => {
            need(shapes, 2, op)?;
            let c_out = shapes[1][1];
            inputs = vec![sym(&mut rng, &s0), sym(&mut rng, &shapes[1]), sym(&mut rng, &[c_out])];
            run!(|g, v| g.conv1d_transposed(v[0], v[1], Some(v[2]), 2, 1, 1))
        }
        "pad_reflect" => {
            inputs = vec![sym(&mut rng, &s0)];
            run!(|g, v| g.pad_reflect(v[0], 2, 1))
        }
        "layer_norm" => {
            inputs = vec![
                sym(&mut rng, &s0),
                sample(&[last], Domain::Positive, &mut rng),
                sym(&mut rng, &[last]),
            ];
            run!(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))
        }
        "softmax" => {
            inputs = vec![sample(&s0, Domain::Symmetric(2.0), &mut rng)];
            let axis = s0.len() - 1;
            run!(|g, v| g.softmax(v[0], axis))
        }
        "concat" => {
            inputs = vec![sym(&mut rng, &s0), sym(&mut rng, &s0)];
            run!(|g, v| g.concat(&[v[0], v[1]], 0))
        }
        "slice" => {
            if s0[0] < 2 {
                return Err(Error::Config("slice check needs a leading dim >= 2".into()));
            }
            inputs = vec![sym(&mut rng, &s0)];
            let n = s0[0] - 1;
            run!(|g, v| g.slice(v[0], 0, 1, n))
        }
        "passthrough_grad" => {
            inputs = vec![sym(&mut rng, &s0)];
            // value and gradient path coincide, so the straight-through rule is exact
            run!(|g, v| {
                let c = g.leaf(g.shape(v[0]).to_vec(), g.value(v[0]).to_vec(), false)?;
                g.passthrough_grad(v[0], c)
            })
        }
        "attention" => {
            let dim = s0[1];
            let mut all = vec![sym(&mut rng, &s0)];
            for _ in 0..4 {
                all.push(sample(&[dim, dim], Domain::Symmetric(0.5), &mut rng));
                all.push(sample(&[dim], Domain::Symmetric(0.1), &mut rng));
            }
            inputs = all;
            run!(|g, v| {
                let w = AttentionWeights {
                    wq: v[1],
                    bq: v[2],
                    wk: v[3],
                    bk: v[4],
                    wv: v[5],
                    bv: v[6],
                    wo: v[7],
                    bo: v[8],
                };
                multi_head_attention(g, v[0], &w, 2)
            })
        }
        "si_sdr_loss" => {
            let reference = sym(&mut rng, &s0);
            // estimate = reference + noise keeps the ratio away from the eps regime
            let noisy: Vec<f64> = reference.1.iter().map(|r| r + rng.range(-0.5, 0.5)).collect();
            inputs = vec![(s0.clone(), noisy), reference];
            run!(|g, v| si_sdr_graph(g, v[0], v[1], 1e-8))
        }
        other => Err(Error::Config(alloc::format!("grad_check: unknown op `{other}`"))),
    }
}
