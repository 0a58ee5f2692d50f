use crate::autograd::tape::{Op, Tape, Var};
use crate::error::{FcanError, Result};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// Standardizes a single-channel map per batch item:
    /// `(x - mean) / sqrt(var + eps)` with population variance taken over all
    /// `T*H*W` positions.
    pub fn mean_var_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, _, _, _] = xv.dims5("mean_var_normalize")?;
        if c != 1 {
            return Err(FcanError::shape(
                "mean_var_normalize",
                format!("expected exactly one channel, got {:?}", xv.shape()),
            ));
        }
        let per = xv.numel() / n;
        let count = T::from_usize(per).unwrap();
        let mut out = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(n);
        for item in xv.data().chunks(per) {
            let rough = item.iter().copied().sum::<T>() / count;
            // One correction pass makes the mean of a constant map exact.
            let mean = rough + item.iter().map(|&v| v - rough).sum::<T>() / count;
            let var = item.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let inv = T::one() / (var + eps).sqrt();
            out.extend(item.iter().map(|&v| (v - mean) * inv));
            inv_std.push(inv);
        }
        let value = Tensor::from_vec(xv.shape(), out)?;
        Ok(self.push(value, Op::MeanVarNormalize { x, inv_std }, &[x]))
    }
}

pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    y: &Tensor<T>,
    inv_std: &[T],
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let n = inv_std.len();
    let per = y.numel() / n;
    let count = T::from_usize(per).unwrap();
    if let Some(gx) = tape.acc(x, grads) {
        for (i, &inv) in inv_std.iter().enumerate() {
            let r = i * per..(i + 1) * per;
            let (g, yi) = (&gout[r.clone()], &y.data()[r.clone()]);
            let g_mean = g.iter().copied().sum::<T>() / count;
            let gy_mean = g.iter().zip(yi).map(|(&a, &b)| a * b).sum::<T>() / count;
            for ((acc, &gj), &yj) in gx[r].iter_mut().zip(g).zip(yi) {
                *acc += inv * (gj - g_mean - yj * gy_mean);
            }
        }
    }
}
