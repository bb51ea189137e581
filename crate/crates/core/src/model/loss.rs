use crate::error::{Error, Result};
use crate::tensor_core::{Tape, Var};

use super::network::HeadOutputs;

/// Total loss node plus the component values for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    /// Span or evidence loss, whichever the mode uses.
    pub main: f64,
    pub lf: Option<f64>,
}

pub fn weighted_objective(omega: f64, lf: f64, main: f64) -> f64 {
    omega * lf + (1.0 - omega) * main
}

fn check_omega(omega: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Config(format!("omega {omega} outside [0, 1]")));
    }
    Ok(())
}

/// `ω·L_lf + (1−ω)·L_main`. The LF term is still computed for logging when
/// `ω = 0` but enters with weight zero.
fn combine(tape: &mut Tape, main: Var, lf: Option<Var>, omega: f64) -> Result<LossParts> {
    let main_value = tape.scalar(main);
    let (total, lf_value) = match lf {
        Some(lf) => (tape.weighted_sum(&[(lf, omega), (main, 1.0 - omega)])?, Some(tape.scalar(lf))),
        None => (tape.weighted_sum(&[(main, 1.0 - omega)])?, None),
    };
    Ok(LossParts {
        total,
        main: main_value,
        lf: lf_value,
    })
}

/// Span loss averages start and end cross-entropies.
pub fn multitask_loss(
    tape: &mut Tape,
    out: &HeadOutputs,
    span: (usize, usize),
    gold_lf: Option<usize>,
    omega: f64,
) -> Result<LossParts> {
    check_omega(omega)?;
    if gold_lf.is_none() && omega > 0.0 {
        return Err(Error::Config("a gold logical form is required when omega > 0".into()));
    }
    let s = tape.softmax_cross_entropy(out.start_logits, &[span.0])?;
    let e = tape.softmax_cross_entropy(out.end_logits, &[span.1])?;
    let main = tape.weighted_sum(&[(s, 0.5), (e, 0.5)])?;
    let lf = gold_lf.map(|g| tape.softmax_cross_entropy(out.lf_logits, &[g])).transpose()?;
    combine(tape, main, lf, omega)
}

pub fn evidence_loss(
    tape: &mut Tape,
    out: &HeadOutputs,
    is_evidence: bool,
    gold_lf: Option<usize>,
    omega: f64,
) -> Result<LossParts> {
    check_omega(omega)?;
    if gold_lf.is_none() && omega > 0.0 {
        return Err(Error::Config("a gold logical form is required when omega > 0".into()));
    }
    let logit = out
        .evidence_logit
        .ok_or_else(|| Error::Config("model was not built in evidence mode".into()))?;
    let main = tape.bce_with_logits(logit, &[f64::from(is_evidence)])?;
    let lf = gold_lf.map(|g| tape.softmax_cross_entropy(out.lf_logits, &[g])).transpose()?;
    combine(tape, main, lf, omega)
}

/// Best `(start, end)` by `start_logit + end_logit` with
/// `start <= end < start + max_answer_len`; non-finite logits mark excluded
/// positions.
pub fn decode_span(start: &[f64], end: &[f64], max_answer_len: usize) -> Result<(usize, usize)> {
    if start.len() != end.len() {
        return Err(Error::Dimension(format!("{} start vs {} end logits", start.len(), end.len())));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, &s) in start.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        for (j, &e) in end.iter().enumerate().skip(i).take(max_answer_len) {
            if !e.is_finite() {
                continue;
            }
            if best.is_none_or(|(b, _, _)| s + e > b) {
                best = Some((s + e, i, j));
            }
        }
    }
    best.map(|(_, i, j)| (i, j))
        .ok_or_else(|| Error::Decode("no valid answer span in the context".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::{ParamStore, Tensor};

    fn outputs(tape: &mut Tape, lf: &[f64]) -> HeadOutputs {
        let start = tape.constant(&Tensor::new(vec![1, 3], vec![0.2, 1.0, -0.5]).unwrap());
        let end = tape.constant(&Tensor::new(vec![1, 3], vec![0.0, 0.3, 0.9]).unwrap());
        let lf = tape.constant(&Tensor::new(vec![1, lf.len()], lf.to_vec()).unwrap());
        let ev = tape.constant(&Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        HeadOutputs {
            start_logits: start,
            end_logits: end,
            lf_logits: lf,
            evidence_logit: Some(ev),
        }
    }

    #[test]
    fn boundaries_of_omega() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let out = outputs(&mut tape, &[0.1, 0.7, -0.2]);
        for omega in [0.0, 0.3, 1.0] {
            let parts = multitask_loss(&mut tape, &out, (1, 2), Some(0), omega).unwrap();
            let expect = weighted_objective(omega, parts.lf.unwrap(), parts.main);
            assert!((tape.scalar(parts.total) - expect).abs() < 1e-12);
        }
        let zero = multitask_loss(&mut tape, &out, (1, 2), Some(0), 0.0).unwrap();
        assert_eq!(tape.scalar(zero.total), zero.main);
        assert!(multitask_loss(&mut tape, &out, (1, 2), None, 0.3).is_err());
        assert!(multitask_loss(&mut tape, &out, (1, 2), None, 0.0).is_ok());
        assert!((weighted_objective(0.3, 2.0, 1.0) - 1.3).abs() < 1e-12);
        assert!((weighted_objective(0.2, 1.0, 0.5) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn evidence_chance_level() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let out = outputs(&mut tape, &[0.0, 0.0]);
        let parts = evidence_loss(&mut tape, &out, true, Some(1), 0.0).unwrap();
        assert!((parts.main - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(tape.scalar(parts.total), parts.main);
    }

    #[test]
    fn decoding_respects_constraints() {
        let ninf = f64::NEG_INFINITY;
        assert_eq!(decode_span(&[0.0, 5.0, 0.0], &[0.0, 5.0, 0.0], 30).unwrap(), (1, 1));
        // best start after best end
        assert_eq!(decode_span(&[0.0, 0.0, 9.0], &[8.0, 0.0, 0.0], 30).unwrap(), (2, 2));
        assert_eq!(decode_span(&[3.0, 0.0, 0.0], &[0.0, 0.0, 1.0], 1).unwrap(), (0, 0));
        assert_eq!(decode_span(&[3.0, 0.0, 0.0], &[0.0, 0.0, 1.0], 3).unwrap(), (0, 2));
        assert!(decode_span(&[ninf, ninf], &[ninf, ninf], 3).is_err());
    }
}
