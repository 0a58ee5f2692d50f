//! Elementwise and shape-only ops.

use rand::Rng;

use crate::autograd::tape::{Op, Tape, Var};
use crate::error::{FcanError, Result};
use crate::tensor::{Real, Tensor};

/// Logistic function, saturating at the representable values nearest to 0
/// and 1 so the result always lies strictly inside (0, 1).
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / (one + one);
    y.max(T::min_positive_value()).min(hi)
}

impl<T: Real> Tape<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid_scalar);
        self.push(value, Op::Sigmoid { x }, &[x])
    }

    /// Repeats a single-channel map `[N,1,...]` into `[N,C,...]`.
    pub fn replicate_channels(&mut self, x: Var, channels: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if shape.len() < 2 || shape[1] != 1 {
            return Err(FcanError::shape(
                "replicate_channels",
                format!("expected [N,1,...], got {shape:?}"),
            ));
        }
        if channels == 0 {
            return Err(FcanError::arg("replicate_channels", "channel count must be >= 1"));
        }
        let n = shape[0];
        let per: usize = shape[2..].iter().product();
        let mut data = Vec::with_capacity(n * channels * per);
        for item in xv.data().chunks(per) {
            for _ in 0..channels {
                data.extend_from_slice(item);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[1] = channels;
        let value = Tensor::from_vec(&out_shape, data)?;
        Ok(self.push(value, Op::ReplicateChannels { x, channels }, &[x]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(FcanError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    /// Inverted dropout: in training, zero each element with probability `p`
    /// and scale survivors by `1/(1-p)`; identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(FcanError::arg("dropout", format!("probability must be in [0, 1), got {p}")));
        }
        let n = self.value(x).numel();
        let mask: Vec<T> = if training && p > 0.0 {
            let keep = T::from_f64_lossy(1.0 / (1.0 - p));
            (0..n)
                .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
                .collect()
        } else {
            vec![T::one(); n]
        };
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let value = Tensor::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Collapses everything after the batch axis: `[N, ...] -> [N, D]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let n = shape[0];
        let d = shape[1..].iter().product();
        self.reshape(x, &[n, d])
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().map(|v| v.to_f64_lossy()).sum::<f64>();
        let total = T::from_f64_lossy(total);
        self.push(Tensor::scalar(total), Op::Sum { x }, &[x])
    }
}

pub(crate) fn relu_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let xv = tape.value(x).data();
    if let Some(gx) = tape.acc(x, grads) {
        for ((a, &v), &g) in gx.iter_mut().zip(xv).zip(gout) {
            if v > T::zero() {
                *a += g;
            }
        }
    }
}

pub(crate) fn sigmoid_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    y: &Tensor<T>,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(gx) = tape.acc(x, grads) {
        for ((a, &s), &g) in gx.iter_mut().zip(y.data()).zip(gout) {
            *a += g * s * (T::one() - s);
        }
    }
}

pub(crate) fn replicate_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    channels: usize,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let per = tape.value(x).numel() / tape.value(x).shape()[0];
    if let Some(gx) = tape.acc(x, grads) {
        for (item, gslab) in gx.chunks_mut(per).zip(gout.chunks(per * channels)) {
            for ch in gslab.chunks(per) {
                item.iter_mut().zip(ch).for_each(|(a, &g)| *a += g);
            }
        }
    }
}

pub(crate) fn mul_backward<T: Real>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let bv = tape.value(b).data();
    if let Some(ga) = tape.acc(a, grads) {
        for ((acc, &y), &g) in ga.iter_mut().zip(bv).zip(gout) {
            *acc += g * y;
        }
    }
    let av = tape.value(a).data();
    if let Some(gb) = tape.acc(b, grads) {
        for ((acc, &x), &g) in gb.iter_mut().zip(av).zip(gout) {
            *acc += g * x;
        }
    }
}

pub(crate) fn add_backward<T: Real>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    for v in [a, b] {
        if let Some(g) = tape.acc(v, grads) {
            g.iter_mut().zip(gout).for_each(|(acc, &d)| *acc += d);
        }
    }
}

pub(crate) fn scale_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    factor: T,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(gx) = tape.acc(x, grads) {
        gx.iter_mut().zip(gout).for_each(|(a, &g)| *a += g * factor);
    }
}

pub(crate) fn dropout_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    mask: &[T],
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(gx) = tape.acc(x, grads) {
        for ((a, &m), &g) in gx.iter_mut().zip(mask).zip(gout) {
            *a += g * m;
        }
    }
}

pub(crate) fn reshape_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(gx) = tape.acc(x, grads) {
        gx.iter_mut().zip(gout).for_each(|(a, &g)| *a += g);
    }
}

pub(crate) fn sum_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(gx) = tape.acc(x, grads) {
        gx.iter_mut().for_each(|a| *a += gout[0]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        for &x in &[0.1f64, 1.0, 3.7, 12.0] {
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-15);
        }
        assert!((sigmoid_scalar(1.224_744_871_391_589f64) - 0.772_897_480_564_315_7).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        for &x in &[-1e4f32, -200.0, -90.0, -17.0, 17.0, 40.0, 1e4] {
            let y = sigmoid_scalar(x);
            assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");
        }
        for &x in &[-800.0f64, -40.0, 40.0, 800.0] {
            let y = sigmoid_scalar(x);
            assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");
        }
    }

    #[test]
    fn relu_clips_negatives() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_vec(&[4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn replicate_identity_and_copies() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::from_vec(&[1, 1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = tape.param(a.clone());
        let one = tape.replicate_channels(x, 1).unwrap();
        assert_eq!(tape.value(one), &a);
        let three = tape.replicate_channels(x, 3).unwrap();
        assert_eq!(tape.value(three).shape(), &[1, 3, 1, 2, 2]);
        assert_eq!(tape.value(three).data()[8..], [1.0, 2.0, 3.0, 4.0]);

        let five = tape.replicate_channels(x, 5).unwrap();
        let s = tape.sum(five);
        tape.backward(s).unwrap();
        assert!(tape.grad(x).data().iter().all(|&g| g == 5.0));
    }

    #[test]
    fn mul_by_ones_and_halves() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let av = tape.constant(a.clone());
        let ones = tape.constant(Tensor::full(&[2, 3], 1.0));
        let halves = tape.constant(Tensor::full(&[2, 3], 0.5));
        let y1 = tape.mul(av, ones).unwrap();
        let y2 = tape.mul(av, halves).unwrap();
        assert_eq!(tape.value(y1), &a);
        assert_eq!(tape.value(y2), &a.map(|v| v / 2.0));
        let bad = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.mul(av, bad).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn(&[100], |i| i as f32));
        let p0 = tape.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(tape.value(p0), tape.value(x));
        let inf = tape.dropout(x, 0.8, false, &mut rng).unwrap();
        assert_eq!(tape.value(inf), tape.value(x));
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[100_000], 1.0));
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let kept = tape.value(y).data().iter().filter(|&&v| v != 0.0).count();
        let frac = kept as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        assert!(tape
            .value(y)
            .data()
            .iter()
            .all(|&v| v == 0.0 || v == 2.0));
    }
}
