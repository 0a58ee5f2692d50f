//! Seeded gradient checks for every differentiable op, the cross-link chain,
//! and a complete two-stream model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_trials, CheckOptions, GradCheckReport};
use super::{Conv3dParams, Tape, Var};
use crate::attention::{apply_attention, attention_map, DEFAULT_NORM_EPS};
use crate::error::Result;
use crate::network::{FcanModel, ForwardOptions, NetworkConfig};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_TRIALS: usize = 20;

/// Names of the checks run by [`gradient_suite`], in order.
pub const CHECKS: [&str; 17] = [
    "conv3d",
    "conv3d_strided",
    "maxpool3d",
    "relu",
    "sigmoid",
    "replicate_channels",
    "mul",
    "add",
    "scale",
    "dropout",
    "reshape_flatten",
    "sum",
    "mean_var_normalize",
    "fully_connected",
    "softmax_cross_entropy",
    "crosslink_chain",
    "fcan_model",
];

fn uniform<T: Real>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(lo..hi)))
}

/// Values bounded away from zero so no finite-difference probe crosses a kink.
fn off_kink<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        T::from_f64_lossy(if rng.gen::<bool>() { m } else { -m })
    })
}

/// Distinct values spaced well beyond the difference step, shuffled.
fn distinct<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v.into_iter().map(T::from_f64_lossy).collect()).unwrap()
}

/// Scalar `sum(y * r)` with a fixed random `r`, so every output element
/// contributes with its own weight.
fn project<T: Real>(tape: &mut Tape<T>, y: Var, r: &Tensor<T>) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn rng_for(seed: u64, check: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((check as u64) << 32 | trial as u64);
    rng
}

type Checked<T> = (Vec<Tensor<T>>, Box<dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>>);

fn case<T: Real>(check: usize, rng: &mut ChaCha8Rng) -> Checked<T> {
    match CHECKS[check] {
        "conv3d" => {
            let x = uniform(&[2, 2, 3, 4, 4], -1.0, 1.0, rng);
            let w = uniform(&[3, 2, 3, 3, 3], -0.5, 0.5, rng);
            let b = uniform(&[3], -0.5, 0.5, rng);
            let r = uniform(&[2, 3, 3, 4, 4], -1.0, 1.0, rng);
            (
                vec![x, w, b],
                Box::new(move |t, v| {
                    let y = t.conv3d(v[0], v[1], Some(v[2]), Conv3dParams::same([3, 3, 3]))?;
                    project(t, y, &r)
                }),
            )
        }
        "conv3d_strided" => {
            let x = uniform(&[1, 2, 4, 5, 5], -1.0, 1.0, rng);
            let w = uniform(&[2, 2, 2, 3, 3], -0.5, 0.5, rng);
            let b = uniform(&[2], -0.5, 0.5, rng);
            let p = Conv3dParams {
                stride: [2, 2, 2],
                pad: [0, 1, 1],
            };
            let r = uniform(&[1, 2, 2, 3, 3], -1.0, 1.0, rng);
            (
                vec![x, w, b],
                Box::new(move |t, v| {
                    let y = t.conv3d(v[0], v[1], Some(v[2]), p)?;
                    project(t, y, &r)
                }),
            )
        }
        "maxpool3d" => {
            let x = distinct(&[1, 2, 4, 4, 4], rng);
            let r = uniform(&[1, 2, 2, 2, 2], -1.0, 1.0, rng);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = t.maxpool3d(v[0], [2, 2, 2], [2, 2, 2])?;
                    project(t, y, &r)
                }),
            )
        }
        "relu" | "sigmoid" => {
            let relu = CHECKS[check] == "relu";
            let x = off_kink(&[1, 2, 2, 3, 3], rng);
            let r = uniform(&[1, 2, 2, 3, 3], -1.0, 1.0, rng);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = if relu { t.relu(v[0]) } else { t.sigmoid(v[0]) };
                    project(t, y, &r)
                }),
            )
        }
        "replicate_channels" => {
            let x = uniform(&[2, 1, 2, 3, 3], -1.0, 1.0, rng);
            let r = uniform(&[2, 4, 2, 3, 3], -1.0, 1.0, rng);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = t.replicate_channels(v[0], 4)?;
                    project(t, y, &r)
                }),
            )
        }
        "mul" | "add" => {
            let mul = CHECKS[check] == "mul";
            let a = uniform(&[1, 3, 2, 2, 3], -1.0, 1.0, rng);
            let b = uniform(&[1, 3, 2, 2, 3], -1.0, 1.0, rng);
            let r = uniform(&[1, 3, 2, 2, 3], -1.0, 1.0, rng);
            (
                vec![a, b],
                Box::new(move |t, v| {
                    let y = if mul { t.mul(v[0], v[1])? } else { t.add(v[0], v[1])? };
                    project(t, y, &r)
                }),
            )
        }
        "scale" => {
            let x = uniform(&[2, 5], -1.0, 1.0, rng);
            let k = T::from_f64_lossy(rng.gen_range(-2.0..2.0));
            let r = uniform(&[2, 5], -1.0, 1.0, rng);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = t.scale(v[0], k);
                    project(t, y, &r)
                }),
            )
        }
        "dropout" => {
            let x = uniform(&[3, 6], -1.0, 1.0, rng);
            let mask_seed = rng.gen::<u64>();
            let r = uniform(&[3, 6], -1.0, 1.0, rng);
            (
                vec![x],
                Box::new(move |t, v| {
                    let mut m = ChaCha8Rng::seed_from_u64(mask_seed);
                    let y = t.dropout(v[0], 0.4, true, &mut m)?;
                    project(t, y, &r)
                }),
            )
        }
        "reshape_flatten" => {
            let x = uniform(&[2, 2, 1, 2, 3], -1.0, 1.0, rng);
            let r = uniform(&[2, 12], -1.0, 1.0, rng);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = t.reshape(v[0], &[4, 2, 3])?;
                    let y = t.reshape(y, &[2, 2, 1, 2, 3])?;
                    let y = t.flatten(y)?;
                    project(t, y, &r)
                }),
            )
        }
        "sum" => {
            let x = uniform(&[4, 3], -1.0, 1.0, rng);
            (vec![x], Box::new(|t, v| Ok(t.sum(v[0]))))
        }
        "mean_var_normalize" => {
            let x = uniform(&[2, 1, 2, 3, 3], -1.0, 1.0, rng);
            let r = uniform(&[2, 1, 2, 3, 3], -1.0, 1.0, rng);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = t.mean_var_normalize(v[0], T::from_f64_lossy(DEFAULT_NORM_EPS))?;
                    project(t, y, &r)
                }),
            )
        }
        "fully_connected" => {
            let x = uniform(&[3, 5], -1.0, 1.0, rng);
            let w = uniform(&[5, 4], -1.0, 1.0, rng);
            let b = uniform(&[4], -1.0, 1.0, rng);
            let r = uniform(&[3, 4], -1.0, 1.0, rng);
            (
                vec![x, w, b],
                Box::new(move |t, v| {
                    let y = t.fully_connected(v[0], v[1], v[2])?;
                    project(t, y, &r)
                }),
            )
        }
        "softmax_cross_entropy" => {
            let x = uniform(&[4, 5], -2.0, 2.0, rng);
            let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
            (vec![x], Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)))
        }
        "crosslink_chain" => {
            let x_rgb = uniform(&[1, 3, 2, 3, 3], -1.0, 1.0, rng);
            let x_flow = uniform(&[1, 3, 2, 3, 3], 0.0, 1.0, rng);
            let w = uniform(&[1, 3, 1, 1, 1], 0.5, 1.5, rng);
            let r = uniform(&[1, 3, 2, 3, 3], -1.0, 1.0, rng);
            (
                vec![x_rgb, x_flow, w],
                Box::new(move |t, v| {
                    let a = attention_map(t, v[2], v[1], DEFAULT_NORM_EPS)?;
                    let y = apply_attention(t, v[0], a)?;
                    project(t, y, &r)
                }),
            )
        }
        "fcan_model" => fcan_case(rng),
        other => unreachable!("unknown check {other}"),
    }
}

/// Network used by the whole-model check; under 1k parameters.
pub fn mini_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        frames: 4,
        height: 8,
        width: 8,
        conv_channels: vec![2, 3],
        pools: vec![[1, 2, 2], [2, 2, 2]],
        fc_hidden: 4,
        num_classes: 3,
        crosslink_depth: 1,
        dropout_fc: [0.0, 0.0],
        seed,
        ..NetworkConfig::default()
    }
}

fn fcan_case<T: Real>(rng: &mut ChaCha8Rng) -> Checked<T> {
    let model = FcanModel::<T>::build(&mini_config(rng.gen())).expect("valid mini config");
    let mut inputs: Vec<Tensor<T>> = model.parameters().into_iter().map(|(_, t)| t.clone()).collect();
    // Nonzero biases and link weights, so no path starts from an exact kink.
    for t in inputs.iter_mut() {
        if t.shape().len() == 1 || t.shape()[0] == 1 {
            *t = uniform(t.shape(), 0.05, 0.3, rng);
        }
    }
    let rgb = uniform::<T>(&[2, 3, 4, 8, 8], -0.5, 0.5, rng);
    let flow = uniform::<T>(&[2, 2, 4, 8, 8], -1.0, 1.0, rng);
    let labels = vec![rng.gen_range(0..3), rng.gen_range(0..3)];
    let n = inputs.len();
    inputs.push(rgb);
    inputs.push(flow);
    (
        inputs,
        Box::new(move |t, v| {
            let bound = model.bind_vars(&v[..n])?;
            let out = model.forward(t, &bound, v[n], Some(v[n + 1]), ForwardOptions::inference())?;
            let ls = t.softmax_cross_entropy(out.spatial_logits, &labels)?;
            let lt = t.softmax_cross_entropy(out.temporal_logits.expect("two-stream"), &labels)?;
            t.add(ls, lt)
        }),
    )
}

/// Runs every entry of [`CHECKS`] for `trials` seeded trials.
pub fn gradient_suite<T: Real>(trials: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    (0..CHECKS.len())
        .map(|check| run_check::<T>(check, trials, seed))
        .collect()
}

pub fn run_check<T: Real>(check: usize, trials: usize, seed: u64) -> Result<GradCheckReport> {
    check_trials(CHECKS[check], trials, CheckOptions::for_precision::<T>(), |trial| {
        case::<T>(check, &mut rng_for(seed, check, trial))
    })
}
