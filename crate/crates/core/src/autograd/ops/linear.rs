use crate::autograd::tape::{Op, Tape, Var};
use crate::error::{FcanError, Result};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// `x: [N,D] . w: [D,K] + b: [K]`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, d] = self.value(x).dims2("fully_connected")?;
        let [wd, k] = self.value(w).dims2("fully_connected")?;
        if d != wd {
            return Err(FcanError::shape(
                "fully_connected",
                format!(
                    "input {:?} and weight {:?} disagree on the inner dimension",
                    self.value(x).shape(),
                    self.value(w).shape()
                ),
            ));
        }
        if self.value(b).numel() != k {
            return Err(FcanError::shape(
                "fully_connected",
                format!("bias {:?} must have {k} entries", self.value(b).shape()),
            ));
        }
        let bias = self.value(b).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| bias.iter().copied()).collect();
        T::gemm(
            false,
            false,
            n,
            k,
            d,
            T::one(),
            self.value(x).data(),
            self.value(w).data(),
            T::one(),
            &mut out,
        );
        let value = Tensor::from_vec(&[n, k], out)?;
        Ok(self.push(value, Op::FullyConnected { x, w, b }, &[x, w, b]))
    }
}

pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let [n, d] = tape.value(x).dims2("fully_connected").unwrap();
    let k = tape.value(w).shape()[1];
    let xv = tape.value(x).data();
    let wv = tape.value(w).data();
    if let Some(gx) = tape.acc(x, grads) {
        T::gemm(false, true, n, d, k, T::one(), gout, wv, T::one(), gx);
    }
    if let Some(gw) = tape.acc(w, grads) {
        T::gemm(true, false, d, k, n, T::one(), xv, gout, T::one(), gw);
    }
    if let Some(gb) = tape.acc(b, grads) {
        for row in gout.chunks(k) {
            gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
        }
    }
}
