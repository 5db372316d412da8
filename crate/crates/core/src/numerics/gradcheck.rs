use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumericError;
use crate::scalar::Scalar;

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst elementwise error per input, `|a - n| / max(1, |a|, |n|)`.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e < self.tol)
    }

    pub fn per_input(&self) -> impl Iterator<Item = bool> + '_ {
        self.max_rel_error.iter().map(move |&e| e < self.tol)
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

fn evaluate<T, F>(build: &F, inputs: &[Tensor<T>]) -> Result<(Tape<T>, Vec<Var>, Var), NumericError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, NumericError>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = build(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(NumericError::NonScalar(tape.value(out).shape().to_vec()));
    }
    Ok((tape, vars, out))
}

/// Checks the gradient of the scalar built by `build` with respect to every
/// input tensor, using central differences with the given `step`.
pub fn grad_check<T, F>(build: F, inputs: &[Tensor<T>], tol: f64, step: f64) -> Result<GradCheckReport, NumericError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, NumericError>,
{
    let (tape, vars, out) = evaluate(&build, inputs)?;
    let analytic = tape.gradients_wrt(out, &vars)?;
    drop(tape);

    let mut point: Vec<Tensor<T>> = inputs.to_vec();
    let mut max_rel_error = Vec::with_capacity(inputs.len());
    for (k, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for idx in 0..point[k].len() {
            let orig = point[k].data()[idx];
            point[k].data_mut()[idx] = orig + T::lit(step);
            let plus = {
                let (t, _, o) = evaluate(&build, &point)?;
                t.value(o).item().as_f64()
            };
            point[k].data_mut()[idx] = orig - T::lit(step);
            let minus = {
                let (t, _, o) = evaluate(&build, &point)?;
                t.value(o).item().as_f64()
            };
            point[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[idx].as_f64();
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport { max_rel_error, tol })
}
