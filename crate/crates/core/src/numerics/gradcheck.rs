//! Central finite-difference checks of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradient magnitudes below this are compared in absolute terms.
pub const DENOM_FLOOR: f64 = 1e-4;

/// Outcome for one checked input tensor.
#[derive(Clone, Debug)]
pub struct TensorReport {
    pub input: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    /// Cap on perturbed entries per tensor; evenly spaced when exceeded.
    pub max_entries: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tol: 1e-4,
            max_entries: None,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.len() != 1 {
        return Err(Error::Contract(format!(
            "gradcheck needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

impl GradCheck {
    pub fn new(step: f64, tol: f64) -> Self {
        GradCheck {
            step,
            tol,
            max_entries: None,
        }
    }

    pub fn with_max_entries(mut self, n: usize) -> Self {
        self.max_entries = Some(n);
        self
    }

    /// Compare analytic gradients of `f` with respect to every input
    /// against central differences.
    pub fn run<F>(&self, f: F, inputs: &[Tensor]) -> Result<Vec<TensorReport>>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        if let Some(i) = inputs.iter().position(|t| !t.all_finite()) {
            return Err(Error::Numeric(format!("gradcheck input {i} is not finite")));
        }
        let analytic: Vec<Tensor> = {
            let tape = Tape::new();
            let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
            let out = f(&tape, &vars)?;
            let grads = tape.backward(out)?;
            vars.iter()
                .zip(inputs)
                .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect()
        };

        let mut reports = Vec::with_capacity(inputs.len());
        let mut work = inputs.to_vec();
        for (idx, grad) in analytic.iter().enumerate() {
            let n = inputs[idx].len();
            let entries: Vec<usize> = match self.max_entries {
                Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
                _ => (0..n).collect(),
            };
            let mut report = TensorReport {
                input: idx,
                checked: entries.len(),
                max_rel_error: 0.0,
                worst_entry: 0,
                analytic: 0.0,
                numeric: 0.0,
                passed: true,
            };
            for &e in &entries {
                let orig = inputs[idx].data()[e];
                work[idx].data_mut()[e] = orig + self.step;
                let plus = eval(&f, &work)?;
                work[idx].data_mut()[e] = orig - self.step;
                let minus = eval(&f, &work)?;
                work[idx].data_mut()[e] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                if !numeric.is_finite() {
                    return Err(Error::Numeric(format!(
                        "finite difference of input {idx} entry {e} is not finite"
                    )));
                }
                let a = grad.data()[e];
                let err = relative_error(a, numeric);
                if err >= report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst_entry = e;
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
            report.passed = report.max_rel_error <= self.tol;
            reports.push(report);
        }
        Ok(reports)
    }
}

/// Single-input convenience wrapper.
pub fn gradcheck<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<TensorReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let mut r = GradCheck::new(step, tol).run(|tape, v| f(tape, v[0]), std::slice::from_ref(x))?;
    Ok(r.remove(0))
}
