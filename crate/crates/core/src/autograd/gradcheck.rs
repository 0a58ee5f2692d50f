//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, Serialize)]
pub struct GradEntry {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub precision: &'static str,
    pub trials: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub max_rel_err: f64,
    /// Worst entries across all trials, largest error first.
    pub worst: Vec<GradEntry>,
    pub failing: usize,
    /// Entries left out because a probe crossed a ReLU or max-pool kink.
    pub skipped: usize,
}

impl GradCheckReport {
    /// No failing entry, and at least as many entries compared as skipped.
    pub fn passed(&self) -> bool {
        self.failing == 0 && self.max_rel_err < self.tolerance && self.checked > 0 && self.skipped <= self.checked
    }

    fn empty<T: Real>(name: &str, tolerance: f64) -> Self {
        GradCheckReport {
            name: name.to_string(),
            precision: T::NAME,
            trials: 0,
            checked: 0,
            tolerance,
            max_rel_err: 0.0,
            worst: Vec::new(),
            failing: 0,
            skipped: 0,
        }
    }

    /// Folds another trial of the same check into this report.
    pub fn merge(&mut self, other: GradCheckReport) {
        self.trials += other.trials;
        self.checked += other.checked;
        self.failing += other.failing;
        self.skipped += other.skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.worst.extend(other.worst);
        self.worst
            .sort_by(|a, b| b.rel_err.partial_cmp(&a.rel_err).unwrap());
        self.worst.truncate(WORST_KEPT);
    }
}

const WORST_KEPT: usize = 5;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error.
    pub floor: f64,
    pub tolerance: f64,
}

impl CheckOptions {
    pub fn for_precision<T: Real>() -> Self {
        if T::NAME == "f64" {
            CheckOptions {
                step: T::fd_step().to_f64_lossy(),
                floor: 1e-4,
                tolerance: 1e-5,
            }
        } else {
            CheckOptions {
                step: T::fd_step().to_f64_lossy(),
                floor: 1e-1,
                tolerance: 1e-3,
            }
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_scalar<T: Real, F>(inputs: &[Tensor<T>], f: &F) -> Result<(T, u64)>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape.value(out).data()[0], tape.branch_signature()))
}

/// Compares the tape gradient of the scalar `f(inputs)` with respect to every
/// input element against a central difference. Entries whose probes land on
/// a different side of a ReLU or max-pool kink than the base point are
/// skipped, since the difference quotient is meaningless there.
pub fn check_gradients<T: Real, F>(
    name: &str,
    inputs: &[Tensor<T>],
    f: F,
    opts: CheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| tape.grad(v)).collect();
    let base = tape.branch_signature();

    let h = T::from_f64_lossy(opts.step);
    let two_h = (h + h).to_f64_lossy();
    let mut entries = Vec::new();
    let mut skipped = 0;
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let (plus, sp) = eval_scalar(&work, &f)?;
            work[i].data_mut()[j] = orig - h;
            let (minus, sm) = eval_scalar(&work, &f)?;
            work[i].data_mut()[j] = orig;
            if sp != base || sm != base {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus).to_f64_lossy() / two_h;
            let a = analytic[i].data()[j].to_f64_lossy();
            entries.push(GradEntry {
                input: i,
                index: j,
                analytic: a,
                numeric,
                rel_err: rel_err(a, numeric, opts.floor),
            });
        }
    }

    let mut report = GradCheckReport::empty::<T>(name, opts.tolerance);
    report.trials = 1;
    report.checked = entries.len();
    report.skipped = skipped;
    report.failing = entries
        .iter()
        .filter(|e| !(e.rel_err < opts.tolerance))
        .count();
    report.max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    entries.sort_by(|a, b| b.rel_err.partial_cmp(&a.rel_err).unwrap());
    entries.truncate(WORST_KEPT);
    report.worst = entries;
    Ok(report)
}

/// Runs `trials` seeded checks and merges them into one report.
pub fn check_trials<T: Real, G, F>(
    name: &str,
    trials: usize,
    opts: CheckOptions,
    mut make: G,
) -> Result<GradCheckReport>
where
    G: FnMut(usize) -> (Vec<Tensor<T>>, F),
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut report = GradCheckReport::empty::<T>(name, opts.tolerance);
    for trial in 0..trials {
        let (inputs, f) = make(trial);
        report.merge(check_gradients(name, &inputs, f, opts)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::OpKind;

    #[test]
    fn identity_subgraph_is_exact() {
        let x = Tensor::<f64>::from_fn(&[5], |i| i as f64 * 0.3 - 0.4);
        let r = check_gradients(
            "sum",
            &[x],
            |t, v| Ok(t.sum(v[0])),
            CheckOptions::for_precision::<f64>(),
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
        assert!(r.passed());
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 1, 2, 3], |i| i as f64 * 0.37 - 0.8);
        let r = check_gradients(
            "sigmoid (faulty)",
            &[x],
            |t, v| {
                t.inject_fault(OpKind::Sigmoid);
                let s = t.sigmoid(v[0]);
                Ok(t.sum(s))
            },
            CheckOptions::for_precision::<f64>(),
        )
        .unwrap();
        assert!(!r.passed());
        assert!(r.max_rel_err > 0.1);
    }

    #[test]
    fn probes_across_a_relu_kink_are_skipped() {
        // 0.003 and -0.004 sit within one f32 step of the ReLU kink; 0.5 does not.
        let x = Tensor::<f32>::from_vec(&[3], vec![0.003, -0.004, 0.5]).unwrap();
        let r = check_gradients(
            "relu",
            &[x],
            |t, v| {
                let y = t.relu(v[0]);
                Ok(t.sum(y))
            },
            CheckOptions::for_precision::<f32>(),
        )
        .unwrap();
        assert_eq!((r.checked, r.skipped), (1, 2));
        assert!(!r.passed());
    }
}
