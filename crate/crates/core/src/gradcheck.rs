//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Worst disagreement found by [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub const DEFAULT_STEP: f64 = 1e-6;
pub const MAX_COORDS: usize = 200;

/// Compares the tape gradient of `f(inputs)` against central differences.
///
/// `f` maps tape variables to a scalar. Up to `max_coords` coordinates,
/// chosen with `seed`, are probed across all inputs. Relative error is
/// `|a - n| / max(|a|, |n|, 1)`.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], step: f64, max_coords: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(format!("input{i}"), t.clone()))
        .collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let t = Tape::inference();
        let vs: Vec<Var<f64>> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let y = f(&t, &vs)?;
        if y.value().numel() != 1 {
            return Err(Error::Shape("gradient check needs a scalar function".into()));
        }
        Ok(y.value().data()[0])
    };

    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, max_coords.min(total)).into_vec();
    picks.sort_unstable();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: picks.len(),
    };
    let mut xs = inputs.to_vec();
    for flat in picks {
        let (mut which, mut idx) = (0, flat);
        while idx >= inputs[which].numel() {
            idx -= inputs[which].numel();
            which += 1;
        }
        let x0 = inputs[which].data()[idx];
        xs[which].data_mut()[idx] = x0 + step;
        let up = eval(&xs)?;
        xs[which].data_mut()[idx] = x0 - step;
        let down = eval(&xs)?;
        xs[which].data_mut()[idx] = x0;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[which].data()[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if rel > report.max_rel_error || !rel.is_finite() {
            report = GradCheckReport {
                max_rel_error: if rel.is_finite() { rel } else { f64::INFINITY },
                worst: (which, idx),
                analytic: a,
                numeric,
                ..report
            };
        }
    }
    Ok(report)
}

type CaseFn = Box<dyn Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>>;

/// One differentiable op wrapped as a scalar function of its inputs.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: CaseFn,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    use rand::Rng;
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values in `±[lo, hi]`, keeping clear of kinks at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    use rand::Rng;
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(y ⊙ r)` for a fixed random `r`, so every output element matters.
fn probe(t: &Tape<f64>, y: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let r = t.constant(uniform(&mut rng, y.shape(), -1.0, 1.0));
    Ok(t.sum_all(&t.mul(y, &r)?))
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>> + 'static,
) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(move |t, v| {
            let y = f(t, v)?;
            probe(t, &y, 7)
        }),
    }
}

/// Every differentiable tape op on small random shapes.
pub fn op_suite(seed: u64) -> Vec<OpCase> {
    use crate::ops::conv::Padding;
    use std::rc::Rc;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut r;
    let mut cases = vec![
        case(
            "linear",
            vec![uniform(rng, &[5, 3], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[4], -1.0, 1.0)],
            |t, v| t.linear(&v[0], &v[1], Some(&v[2])),
        ),
        case(
            "conv2d",
            vec![
                uniform(rng, &[2, 5, 4, 3], -1.0, 1.0),
                uniform(rng, &[2, 3, 3, 3], -1.0, 1.0),
                uniform(rng, &[2], -1.0, 1.0),
            ],
            |t, v| t.conv2d(&v[0], &v[1], Some(&v[2]), 1, Padding::Same),
        ),
        case(
            "conv2d_strided_valid",
            vec![uniform(rng, &[1, 6, 5, 2], -1.0, 1.0), uniform(rng, &[3, 2, 3, 3], -1.0, 1.0)],
            |t, v| t.conv2d(&v[0], &v[1], None, 2, Padding::Valid),
        ),
        case(
            "conv2d_1x1",
            vec![uniform(rng, &[2, 3, 3, 4], -1.0, 1.0), uniform(rng, &[5, 4, 1, 1], -1.0, 1.0)],
            |t, v| t.conv2d(&v[0], &v[1], None, 1, Padding::Same),
        ),
        case(
            "dwconv3x3",
            vec![
                uniform(rng, &[2, 4, 5, 3], -1.0, 1.0),
                uniform(rng, &[3, 1, 3, 3], -1.0, 1.0),
                uniform(rng, &[3], -1.0, 1.0),
            ],
            |t, v| t.dwconv3x3(&v[0], &v[1], Some(&v[2])),
        ),
        case(
            "layer_norm",
            vec![uniform(rng, &[4, 6], -2.0, 2.0), uniform(rng, &[6], 0.5, 1.5), uniform(rng, &[6], -0.5, 0.5)],
            |t, v| t.layer_norm(&v[0], &v[1], &v[2]),
        ),
        case("silu", vec![uniform(rng, &[3, 7], -3.0, 3.0)], |t, v| Ok(t.silu(&v[0]))),
        case("gelu", vec![uniform(rng, &[3, 7], -3.0, 3.0)], |t, v| Ok(t.gelu(&v[0]))),
        case("softplus", vec![uniform(rng, &[3, 7], -4.0, 4.0)], |t, v| Ok(t.softplus(&v[0]))),
        case("leaky_relu", vec![away_from_zero(rng, &[3, 7], 0.05, 2.0)], |t, v| Ok(t.leaky_relu(&v[0], 0.2))),
        case("neg_exp", vec![uniform(rng, &[2, 5], -1.0, 1.5)], |t, v| Ok(t.neg_exp(&v[0]))),
        case(
            "add",
            vec![uniform(rng, &[2, 3], -1.0, 1.0), uniform(rng, &[2, 3], -1.0, 1.0)],
            |t, v| t.add(&v[0], &v[1]),
        ),
        case(
            "sum_n",
            vec![
                uniform(rng, &[4, 2], -1.0, 1.0),
                uniform(rng, &[4, 2], -1.0, 1.0),
                uniform(rng, &[4, 2], -1.0, 1.0),
            ],
            |t, v| t.sum_n(v),
        ),
        case(
            "mul",
            vec![uniform(rng, &[3, 3], -1.0, 1.0), uniform(rng, &[3, 3], -1.0, 1.0)],
            |t, v| t.mul(&v[0], &v[1]),
        ),
        case(
            "scale",
            vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[1], 0.5, 1.5)],
            |t, v| t.scale(&v[0], &v[1]),
        ),
        case(
            "add_per_batch",
            vec![uniform(rng, &[3, 2, 2, 4], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0)],
            |t, v| t.add_per_batch(&v[0], &v[1]),
        ),
        case("gather_rows", vec![uniform(rng, &[5, 3], -1.0, 1.0)], |t, v| {
            t.gather_rows(&v[0], Rc::new(vec![4, 0, 2, 2, 1, 3]), 3, &[6, 3])
        }),
        case("pixel_shuffle", vec![uniform(rng, &[2, 2, 3, 8], -1.0, 1.0)], |t, v| t.pixel_shuffle(&v[0], 2)),
        case("reshape", vec![uniform(rng, &[2, 6], -1.0, 1.0)], |t, v| t.reshape(&v[0], &[3, 4])),
        case("split_last", vec![uniform(rng, &[3, 7], -1.0, 1.0)], |t, v| {
            let parts = t.split_last(&v[0], &[2, 4, 1])?;
            let sq = t.mul(&parts[1], &parts[1])?;
            t.concat_last(&[parts[2].clone(), sq, parts[0].clone()])
        }),
        case(
            "concat_last",
            vec![uniform(rng, &[2, 3, 2], -1.0, 1.0), uniform(rng, &[2, 3, 5], -1.0, 1.0)],
            |t, v| t.concat_last(v),
        ),
        case(
            "selective_scan",
            vec![
                uniform(rng, &[2, 5, 2], -1.0, 1.0),
                uniform(rng, &[2, 5, 2], 0.1, 1.0),
                uniform(rng, &[2, 3], -1.5, -0.2),
                uniform(rng, &[2, 5, 3], -1.0, 1.0),
                uniform(rng, &[2, 5, 3], -1.0, 1.0),
                uniform(rng, &[2], -1.0, 1.0),
            ],
            |t, v| t.selective_scan(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5]),
        ),
    ];
    cases.push(OpCase {
        name: "l1_loss",
        inputs: vec![uniform(rng, &[4, 5], -1.0, 1.0), uniform(rng, &[4, 5], -1.0, 1.0)],
        f: Box::new(|t, v| t.l1_loss(&v[0], &v[1])),
    });
    cases.push(OpCase {
        name: "sum_all",
        inputs: vec![uniform(rng, &[3, 4], -1.0, 1.0)],
        f: Box::new(|t, v| Ok(t.sum_all(&v[0]))),
    });
    cases
}

/// Runs [`op_suite`] and returns each op's report.
pub fn run_op_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    op_suite(seed)
        .into_iter()
        .map(|c| Ok((c.name, finite_diff_check(&c.f, &c.inputs, DEFAULT_STEP, MAX_COORDS, seed)?)))
        .collect()
}
