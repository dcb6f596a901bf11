use super::{AutodiffError, Graph, Tensor, Var};

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1e-8, |analytic|)` over all entries.
    pub max_relative_error: f64,
    /// Largest `|analytic - numeric|` over all entries.
    pub max_absolute_error: f64,
    /// `(param, flat index)` of the entry with the largest relative error.
    pub worst: Option<(usize, usize)>,
    /// Number of scalar entries checked.
    pub checked: usize,
}

/// Compares reverse-mode gradients with central differences of step `h`.
///
/// `f` receives a fresh graph and one [`Var`] per parameter and must return
/// a scalar loss. Returns the maximum relative error.
pub fn grad_check<E, F>(params: &[Tensor], h: f64, f: F) -> Result<f64, E>
where
    E: From<AutodiffError>,
    F: FnMut(&mut Graph<'_>, &[Var]) -> Result<Var, E>,
{
    grad_check_report(params, h, f).map(|r| r.max_relative_error)
}

/// Like [`grad_check`] but returns the full report.
pub fn grad_check_report<E, F>(params: &[Tensor], h: f64, mut f: F) -> Result<GradCheckReport, E>
where
    E: From<AutodiffError>,
    F: FnMut(&mut Graph<'_>, &[Var]) -> Result<Var, E>,
{
    if !(h > 0.0) {
        return Err(AutodiffError::InvalidArgument(format!("step must be positive, got {h}")).into());
    }
    let analytic: Vec<Tensor> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
        let loss = f(&mut g, &vars)?;
        let grads = g.backward(loss)?;
        vars.iter()
            .zip(params)
            .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
            .collect()
    };

    let mut eval = |ps: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p)).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.value(loss);
        v.item().ok_or_else(|| AutodiffError::NotScalar(v.shape().to_vec()).into())
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst: None,
        checked: 0,
    };
    for p in 0..work.len() {
        for i in 0..work[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p].data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(1e-8);
            report.checked += 1;
            report.max_absolute_error = report.max_absolute_error.max(abs);
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel;
                report.worst = Some((p, i));
            }
        }
    }
    Ok(report)
}
