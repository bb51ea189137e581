//! Central-difference gradient checking.

use serde::Serialize;

use super::tape::{Tape, Var};
use super::tensor::ParamStore;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor so that parameters with vanishing gradients compare on
/// an absolute scale instead of amplifying rounding noise.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Compares the tape gradient of `loss_fn` against central differences for
/// every element of every parameter in `store`.
///
/// `loss_fn` must be deterministic. The store is restored before returning.
pub fn gradcheck<F>(store: &mut ParamStore, loss_fn: F, tolerance: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)?
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        Ok(tape.scalar(loss))
    };

    let ids: Vec<_> = store.iter().map(|(id, name, t)| (id, name.to_string(), t.numel())).collect();
    let mut entries = Vec::with_capacity(ids.len());
    for (id, name, n) in ids {
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let mut worst = (0.0, 0);
        for j in 0..n {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + DEFAULT_STEP;
            let plus = eval(store);
            store.get_mut(id).data_mut()[j] = orig - DEFAULT_STEP;
            let minus = eval(store);
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * DEFAULT_STEP);
            let err = relative_error(grad[j], numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, j);
            }
        }
        entries.push(ParamCheck {
            name,
            max_rel_err: worst.0,
            worst_index: worst.1,
            passed: worst.0 <= tolerance,
        });
    }
    Ok(GradcheckReport { tolerance, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::Tensor;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 0.5 / 1.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 2e-12) < 1e-5);
    }

    #[test]
    fn scaled_sum_passes() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap()).unwrap();
        let report = gradcheck(
            &mut store,
            |tape| {
                let x = tape.param(crate::tensor_core::ParamId(0));
                let y = tape.scale(x, 3.0);
                Ok(tape.sum(y))
            },
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
