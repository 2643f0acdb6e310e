use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EntryError {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<EntryError>,
    /// Entries whose perturbation crossed a relu / clamp branch point.
    pub excluded: usize,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    pub fn worst(&self) -> Option<&EntryError> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(f64, Vec<i8>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape.value(loss).item()?, tape.kink_signature()))
}

/// Compares `backward` against central differences entry by entry.
///
/// `f` must build the same expression for every parameter value it is given.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let base_sig = tape.kink_signature();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

    let mut work = params.to_vec();
    let mut entries = Vec::new();
    let mut excluded = 0;
    for pi in 0..params.len() {
        for ei in 0..params[pi].numel() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let (fp, sp) = evaluate(&f, &work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let (fm, sm) = evaluate(&f, &work)?;
            work[pi].data_mut()[ei] = orig;
            if sp != base_sig || sm != base_sig {
                excluded += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[pi].data()[ei];
            entries.push(EntryError {
                param: pi,
                index: ei,
                analytic: a,
                numeric,
                rel_error: rel_error(a, numeric),
            });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        excluded,
        max_rel_error,
        tol,
    })
}
