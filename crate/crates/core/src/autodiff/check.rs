//! Finite-difference verification of analytic gradients in f64.

use super::{AutodiffError, Matrix, Tape, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Worst disagreement found for one input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub input: usize,
    pub max_error: f64,
    pub worst_element: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub inputs: Vec<InputReport>,
}

impl CheckReport {
    pub fn max_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < TOLERANCE
    }
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn evaluate<F>(f: &F, inputs: &[Matrix<f64>]) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let shape = tape.shape(out);
    if shape != (1, 1) {
        return Err(AutodiffError::NotScalarLoss { shape });
    }
    Ok(tape.value(out).get(0, 0))
}

/// Compare the tape gradient of `f` at `inputs` with central differences.
///
/// `f` builds a scalar from the leaves it is handed and must be deterministic.
pub fn check_gradients<F>(inputs: &[Matrix<f64>], f: F) -> Result<CheckReport, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;

    let mut reports = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.take_or_zeros(*var, inputs[i].shape());
        let mut report = InputReport {
            input: i,
            max_error: 0.0,
            worst_element: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
        };
        for r in 0..inputs[i].rows() {
            for c in 0..inputs[i].cols() {
                let x = inputs[i].get(r, c);
                probe[i].set(r, c, x + STEP);
                let plus = evaluate(&f, &probe)?;
                probe[i].set(r, c, x - STEP);
                let minus = evaluate(&f, &probe)?;
                probe[i].set(r, c, x);
                let numeric = (plus - minus) / (2.0 * STEP);
                let a = analytic.get(r, c);
                let err = relative_error(a, numeric);
                if err > report.max_error || (r, c) == (0, 0) {
                    report = InputReport {
                        input: i,
                        max_error: err.max(report.max_error),
                        worst_element: (r, c),
                        analytic: a,
                        numeric,
                    };
                }
            }
        }
        reports.push(report);
    }
    Ok(CheckReport { inputs: reports })
}
