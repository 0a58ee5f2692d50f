//! Flow-guided cross-link attention.
//!
//! A cross-link turns a temporal-stream feature map `x_flow: [N,C,T,H,W]`
//! into a single-channel attention map and gates the matching spatial-stream
//! feature map with it:
//!
//! ```text
//! x_link = w_link (*) x_flow          1x1x1 conv, C -> 1, no bias
//! x_hat  = (x_link - mean) / std       per clip, over all T*H*W positions
//! a      = sigmoid(x_hat)              in (0, 1)
//! x_att  = repeat(a, C) . x_rgb        elementwise
//! ```
//!
//! Every step is recorded on the tape, so the spatial loss reaches `w_link`
//! and, unless detached, the temporal stream.

use crate::autograd::{Conv3dParams, Tape, Var};
use crate::error::{FcanError, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CrossLinkLayer<T> {
    /// Channel-reducing kernel, shape `[1, C, 1, 1, 1]`.
    pub w_link: Tensor<T>,
    /// 1-based index of the pooling stage this link taps.
    pub placement: usize,
    pub eps: f64,
}

impl<T: Real> CrossLinkLayer<T> {
    /// Every weight starts at `1/C`, so the untrained link averages channels.
    pub fn init(channels: usize, placement: usize) -> Result<Self> {
        if channels == 0 {
            return Err(FcanError::arg("init_crosslink", "channel count must be >= 1"));
        }
        let w = T::one() / T::from_usize(channels).unwrap();
        Ok(CrossLinkLayer {
            w_link: Tensor::full(&[1, channels, 1, 1, 1], w),
            placement,
            eps: DEFAULT_NORM_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.w_link.shape()[1]
    }

    /// Evaluates the attention map without recording gradients.
    pub fn attention(&self, x_flow: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let w = tape.constant(self.w_link.clone());
        let x = tape.constant(x_flow.clone());
        let a = attention_map(&mut tape, w, x, self.eps)?;
        Ok(tape.value(a).clone())
    }
}

/// `sigmoid(standardize(w_link (*) x_flow))`, shape `[N,1,T,H,W]`.
pub fn attention_map<T: Real>(tape: &mut Tape<T>, w_link: Var, x_flow: Var, eps: f64) -> Result<Var> {
    let [_, c, _, _, _] = tape.value(x_flow).dims5("attention_map")?;
    let ws = tape.value(w_link).shape();
    if ws != [1, c, 1, 1, 1] {
        return Err(FcanError::shape(
            "attention_map",
            format!(
                "cross-link weight {ws:?} does not match temporal features {:?}",
                tape.value(x_flow).shape()
            ),
        ));
    }
    let link = tape.conv3d(x_flow, w_link, None, Conv3dParams::default())?;
    let norm = tape.mean_var_normalize(link, T::from_f64_lossy(eps))?;
    Ok(tape.sigmoid(norm))
}

/// Gates `x_rgb: [N,C,T,H,W]` with an attention map `[N,1,T,H,W]`.
pub fn apply_attention<T: Real>(tape: &mut Tape<T>, x_rgb: Var, attention: Var) -> Result<Var> {
    let [n, c, t, h, w] = tape.value(x_rgb).dims5("apply_attention")?;
    let [an, ac, at, ah, aw] = tape.value(attention).dims5("apply_attention")?;
    if (an, ac, at, ah, aw) != (n, 1, t, h, w) {
        return Err(FcanError::shape(
            "apply_attention",
            format!(
                "attention {:?} does not cover features {:?}",
                tape.value(attention).shape(),
                tape.value(x_rgb).shape()
            ),
        ));
    }
    let gate = tape.replicate_channels(attention, c)?;
    tape.mul(gate, x_rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_weights_are_reciprocal_channel_count() {
        for (c, w) in [(4usize, 0.25f64), (1, 1.0), (16, 0.0625)] {
            let l = CrossLinkLayer::<f64>::init(c, 1).unwrap();
            assert!(l.w_link.data().iter().all(|&v| v == w));
            assert_eq!(l.w_link.shape(), &[1, c, 1, 1, 1]);
        }
        assert!(CrossLinkLayer::<f64>::init(0, 1).is_err());
    }

    #[test]
    fn uniform_flow_gives_half() {
        let l = CrossLinkLayer::<f64>::init(3, 1).unwrap();
        let x = Tensor::full(&[2, 3, 2, 4, 4], 1.7);
        let a = l.attention(&x).unwrap();
        assert_eq!(a.shape(), &[2, 1, 2, 4, 4]);
        assert!(a.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn channel_means_one_two_three() {
        // Channel values chosen so each position's channel mean is 1, 2, 3.
        let l = CrossLinkLayer::<f64>::init(2, 1).unwrap();
        let x = Tensor::from_vec(&[1, 2, 1, 1, 3], vec![0.5, 2.5, 2.0, 1.5, 1.5, 4.0]).unwrap();
        let a = l.attention(&x).unwrap();
        let expect = [0.227_103, 0.5, 0.772_897];
        for (v, e) in a.data().iter().zip(expect) {
            assert!((v - e).abs() < 1e-5, "{v} vs {e}");
        }
    }

    #[test]
    fn hotspot_is_attended() {
        let l = CrossLinkLayer::<f64>::init(4, 1).unwrap();
        let mut x = Tensor::full(&[1, 4, 1, 4, 4], 0.2);
        for c in 0..4 {
            x.set(&[0, c, 0, 1, 2], 1.0);
        }
        let a = l.attention(&x).unwrap();
        for (i, &v) in a.data().iter().enumerate() {
            if i == 6 {
                assert!(v > 0.5);
            } else {
                assert!(v < 0.5);
            }
        }
    }

    #[test]
    fn apply_halves_under_uniform_attention() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_fn(&[1, 3, 2, 2, 2], |i| i as f64 * 0.7 - 3.0);
        let xv = tape.constant(x.clone());
        let half = tape.constant(Tensor::full(&[1, 1, 2, 2, 2], 0.5));
        let ones = tape.constant(Tensor::full(&[1, 1, 2, 2, 2], 1.0));
        let y = apply_attention(&mut tape, xv, half).unwrap();
        assert_eq!(tape.value(y), &x.map(|v| v / 2.0));
        let z = apply_attention(&mut tape, xv, ones).unwrap();
        assert_eq!(tape.value(z), &x);
    }

    #[test]
    fn mismatches_rejected() {
        let mut tape = Tape::<f64>::new();
        let w = tape.constant(Tensor::full(&[1, 3, 1, 1, 1], 1.0 / 3.0));
        let x = tape.constant(Tensor::zeros(&[1, 4, 2, 2, 2]));
        assert!(attention_map(&mut tape, w, x, 1e-5).is_err());
        let a = tape.constant(Tensor::full(&[1, 1, 2, 4, 4], 0.5));
        assert!(apply_attention(&mut tape, x, a).is_err());
    }
}
