use crate::autograd::tape::{Op, Tape, Var};
use crate::error::{FcanError, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let z = out[start..].iter().copied().sum::<T>();
        out[start..].iter_mut().for_each(|v| *v = *v / z);
    }
    out
}

impl<T: Real> Tape<T> {
    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [n, k] = self.value(logits).dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(FcanError::shape(
                "softmax_cross_entropy",
                format!("{n} logit rows but {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(FcanError::arg(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let data = self.value(logits).data();
        let mut total = T::zero();
        for (row, &l) in data.chunks(k).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            total += lse - row[l];
        }
        let probs = softmax_rows(data, k);
        let loss = total / T::from_usize(n).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }
}

pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    logits: Var,
    probs: &[T],
    labels: &[usize],
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let n = labels.len();
    let k = probs.len() / n;
    let scale = gout[0] / T::from_usize(n).unwrap();
    if let Some(g) = tape.acc(logits, grads) {
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..k {
                let onehot = if j == l { T::one() } else { T::zero() };
                g[i * k + j] += (probs[i * k + j] - onehot) * scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(logits: Vec<f64>, k: usize, labels: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let n = logits.len() / k;
        let x = tape.constant(Tensor::from_vec(&[n, k], logits).unwrap());
        let l = tape.softmax_cross_entropy(x, labels).unwrap();
        tape.value(l).data()[0]
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        assert!((loss_of(vec![0.3; 4], 4, &[2]) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits() {
        let l = loss_of(vec![10.0, -10.0], 2, &[0]);
        assert!((l - 2.061_153_6e-9).abs() < 1e-13, "{l}");
    }

    #[test]
    fn huge_logits_are_stable() {
        let l = loss_of(vec![1000.0, 0.0, -1000.0], 3, &[1]);
        assert!((l - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(tape.softmax_cross_entropy(x, &[3]).is_err());
    }
}
