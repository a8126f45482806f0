use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::ParamRegistry;
use crate::error::{Error, Result};

/// Entries whose analytic and numeric gradients are both at most this
/// large are not compared.
pub const MIN_MAGNITUDE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub compared: usize,
    /// Entries whose perturbation crossed a relu kink.
    pub kinks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn compared(&self) -> usize {
        self.params.iter().map(|p| p.compared).sum()
    }

    pub fn flagged(&self) -> usize {
        self.params.iter().map(|p| p.kinks.len()).sum()
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

/// Compares taped gradients with central differences for every parameter
/// entry. `loss` must record a scalar on the tape it is given and be
/// deterministic. Registry gradients are overwritten with the analytic ones.
pub fn gradient_check<F>(mut loss: F, registry: &mut ParamRegistry, step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamRegistry) -> Result<Var>,
{
    registry.zero_grad();
    let base_pattern = {
        let mut tape = Tape::new();
        let out = loss(&mut tape, registry)?;
        tape.backward(out, registry)?;
        tape.relu_pattern()
    };

    let mut eval = |reg: &ParamRegistry| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let out = loss(&mut tape, reg)?;
        let value = tape.scalar(out);
        if !value.is_finite() {
            return Err(Error::Numeric("loss is not finite during gradient check".into()));
        }
        Ok((value, tape.relu_pattern()))
    };

    let mut params = Vec::with_capacity(registry.len());
    for p in 0..registry.len() {
        let analytic = registry.at(p).tensor.grad().to_vec();
        let mut check = ParamCheck {
            name: registry.at(p).name.clone(),
            max_rel_err: 0.0,
            compared: 0,
            kinks: Vec::new(),
        };
        for i in 0..analytic.len() {
            let original = registry.at(p).tensor.values()[i];
            registry.at_mut(p).tensor.values_mut()[i] = original + step;
            let plus = eval(registry);
            registry.at_mut(p).tensor.values_mut()[i] = original - step;
            let minus = eval(registry);
            registry.at_mut(p).tensor.values_mut()[i] = original;
            let ((fp, pat_p), (fm, pat_m)) = (plus?, minus?);
            if pat_p != base_pattern || pat_m != base_pattern {
                check.kinks.push(i);
                continue;
            }
            let numeric = (fp - fm) / (2.0 * step);
            let scale = analytic[i].abs().max(numeric.abs());
            if scale <= MIN_MAGNITUDE {
                continue;
            }
            check.compared += 1;
            check.max_rel_err = check.max_rel_err.max((analytic[i] - numeric).abs() / scale);
        }
        params.push(check);
    }
    Ok(GradCheckReport { params })
}
