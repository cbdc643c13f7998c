use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic gradients against central differences.
///
/// The error of one coordinate is `|analytic - numeric| / max(|analytic|, |numeric|, 1)`,
/// i.e. relative for gradients above one and absolute below.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// Set when `f(x ± h)` was non-finite or failed to evaluate.
    pub failure: Option<String>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_rel_error <= self.tol
    }
}

pub const DEFAULT_STEP: f64 = 1e-5;

/// Check a scalar function of one tensor.
pub fn gradcheck<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    gradcheck_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h, tol)
}

/// Check a scalar function of several tensors, perturbing every coordinate
/// of every input.
pub fn gradcheck_many<F>(f: F, xs: &[Tensor], h: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.scalar(out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        failure: None,
        tol,
    };
    let mut work = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        for c in 0..x.len() {
            let orig = x.data()[c];
            work[ti].data_mut()[c] = orig + h;
            let plus = eval(&work);
            work[ti].data_mut()[c] = orig - h;
            let minus = eval(&work);
            work[ti].data_mut()[c] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
                (p, m) => {
                    report.failure = Some(format!(
                        "f(x ± h) not finite at input {ti}, coordinate {c}: {:?} / {:?}",
                        p.map_err(|e| e.to_string()),
                        m.map_err(|e| e.to_string())
                    ));
                    report.worst = Some((ti, c));
                    return Ok(report);
                }
            };
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ti].data()[c];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((ti, c));
            }
        }
    }
    Ok(report)
}
