use crate::autograd::tape::{Op, Tape, Var};
use crate::error::{FcanError, Result};
use crate::tensor::{Real, Tensor};

/// Pooled extents for `[T, H, W]` under window `k` and stride `s` (no padding).
pub fn pooled_extents(input: [usize; 3], k: [usize; 3], s: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for d in 0..3 {
        if s[d] == 0 || k[d] == 0 {
            return Err(FcanError::arg("maxpool3d", "window and stride must be >= 1"));
        }
        if k[d] > input[d] {
            return Err(FcanError::shape(
                "maxpool3d",
                format!("window {k:?} larger than input extents {input:?}"),
            ));
        }
        out[d] = (input[d] - k[d]) / s[d] + 1;
    }
    Ok(out)
}

impl<T: Real> Tape<T> {
    /// Max pooling over `[T,H,W]` windows; ties go to the first maximum in
    /// scan order, which is also where the gradient is routed.
    pub fn maxpool3d(&mut self, x: Var, k: [usize; 3], s: [usize; 3]) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, t, h, w] = xv.dims5("maxpool3d")?;
        let [to, ho, wo] = pooled_extents([t, h, w], k, s)?;
        let out_len = n * c * to * ho * wo;
        let mut out = Vec::with_capacity(out_len);
        let mut argmax = Vec::with_capacity(out_len);
        let data = xv.data();
        let plane = t * h * w;
        for nc in 0..n * c {
            let base = nc * plane;
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = T::neg_infinity();
                        let mut best_i = base;
                        for dt in 0..k[0] {
                            let it = ot * s[0] + dt;
                            for dh in 0..k[1] {
                                let ih = oh * s[1] + dh;
                                let row = base + (it * h + ih) * w + ow * s[2];
                                for (dw, &v) in data[row..row + k[2]].iter().enumerate() {
                                    if v > best {
                                        best = v;
                                        best_i = row + dw;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_i);
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, to, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool3d { x, argmax }, &[x]))
    }
}

pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    argmax: &[usize],
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(gx) = tape.acc(x, grads) {
        for (&i, &g) in argmax.iter().zip(gout) {
            gx[i] += g;
        }
    }
}
