//! Central finite-difference checking of tape gradients.

use super::{ParamStore, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Relative errors are computed against `max(|analytic|, |numeric|, floor)`
    /// so that near-zero gradients are judged on absolute error.
    pub floor: f64,
    /// At most this many entries are probed per parameter tensor (evenly
    /// strided); `usize::MAX` probes everything.
    pub max_entries_per_param: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            floor: 1e-4,
            max_entries_per_param: usize::MAX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Largest |numeric gradient| seen; lets callers confirm the loss is
    /// actually sensitive to the probed parameters.
    pub max_abs_numeric: f64,
}

/// Compares the tape gradient of the loss built by `f` against central
/// differences for every (sampled) parameter entry. Parameters are restored
/// before returning.
pub fn check_gradients<F>(
    params: &mut ParamStore,
    cfg: GradCheck,
    f: F,
) -> Result<GradReport, TensorError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, TensorError>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |params: &ParamStore| -> Result<f64, TensorError> {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss))
    };

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        max_abs_numeric: 0.0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let stride = if n <= cfg.max_entries_per_param {
            1
        } else {
            n.div_ceil(cfg.max_entries_per_param)
        };
        for i in (0..n).step_by(stride) {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + cfg.step;
            let plus = eval(params);
            params.get_mut(id).data_mut()[i] = orig - cfg.step;
            let minus = eval(params);
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * cfg.step);
            let a = analytic.get(id)[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            report.max_abs_numeric = report.max_abs_numeric.max(numeric.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
