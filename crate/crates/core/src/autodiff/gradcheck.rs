use super::{Gradients, ParamSet, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over all scalars of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub scalars_checked: usize,
}

/// Checks every scalar parameter of `params` against
/// `(f(w + eps) - f(w - eps)) / (2 eps)`.
///
/// `loss_fn` must build a scalar loss on the tape it is given and be
/// deterministic; two identical forward passes that disagree are an error.
pub fn check_gradients<F>(params: &ParamSet, eps: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<'_>) -> Result<Var>,
{
    check_gradients_with(params, eps, loss_fn, |_| {})
}

/// Like [`check_gradients`], but lets the caller tamper with the analytic
/// gradients before comparison (negative controls).
pub fn check_gradients_with<F, A>(
    params: &ParamSet,
    eps: f64,
    mut loss_fn: F,
    adjust: A,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<'_>) -> Result<Var>,
    A: FnOnce(&mut Gradients),
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }

    let mut tape = Tape::new(params);
    let loss = loss_fn(&mut tape)?;
    let first = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    adjust(&mut grads);

    let second = eval(params, &mut loss_fn)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        scalars_checked: 0,
    };
    for id in params.ids() {
        let analytic = grads.dense(params, id);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = params.value(id).data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(&work, &mut loss_fn)?;
            work.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(&work, &mut loss_fn)?;
            work.get_mut(id).value.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.scalars_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((params.get(id).name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}

fn eval<F>(params: &ParamSet, loss_fn: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let loss = loss_fn(&mut tape)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}
