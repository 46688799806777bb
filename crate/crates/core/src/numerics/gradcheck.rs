use crate::error::Result;
use crate::numerics::{Array, Tape, Var};
use crate::scalar::Scalar;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Evaluates the scalar built by `f` over fresh leaves for `params`.
pub fn evaluate<T, F>(f: &F, params: &[Array<T>]) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(&mut Tape<'t, T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.scalar(loss)
}

/// Analytic gradients of the scalar built by `f`, one per parameter.
pub fn analytic_gradients<T, F>(f: &F, params: &[Array<T>]) -> Result<(T, Vec<Array<T>>)>
where
    T: Scalar,
    F: for<'t> Fn(&mut Tape<'t, T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss)?, vars.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Compares tape gradients of `f` against `(f(θ+ε) - f(θ-ε)) / 2ε` for every
/// entry of every parameter.
pub fn finite_diff_check<T, F>(f: F, params: &[Array<T>], eps: T) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&mut Tape<'t, T>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = analytic_gradients(&f, params)?;
    let mut work: Vec<Array<T>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let two_eps = (eps + eps).as_f64();
    for p in 0..work.len() {
        for e in 0..work[p].len() {
            let orig = work[p].data()[e];
            work[p].data_mut()[e] = orig + eps;
            let plus = evaluate(&f, &work)?.as_f64();
            work[p].data_mut()[e] = orig - eps;
            let minus = evaluate(&f, &work)?.as_f64();
            work[p].data_mut()[e] = orig;
            let numeric = (plus - minus) / two_eps;
            let err = relative_error(analytic[p].data()[e].as_f64(), numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((p, e));
            }
        }
    }
    Ok(report)
}
