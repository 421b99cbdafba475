use super::{DrivingModel, ModelError};
use crate::data_ingest::{DrivingTrace, DRIVING, PARKED};

/// Log-likelihood of an observed trace, `log(δ D(z_1) P(2) D(z_2) … P(T) D(z_T))`,
/// by the scaled forward recursion. The step `t -> t+1` uses the transition
/// matrix of the minute of day of `t`. Returns `-inf` for impossible traces.
pub fn hmm_log_likelihood(model: &DrivingModel, trace: &DrivingTrace) -> Result<f64, ModelError> {
    let n = model.n_states();
    let emissions = model.structure.emissions();
    let states = trace.states();
    if let Some(index) = states.iter().position(|&z| z != PARKED && z != DRIVING) {
        return Err(ModelError::IncompatibleTrace {
            index,
            symbol: states[index],
        });
    }

    let mut alpha: Vec<f64> = (1..=n as u8)
        .map(|k| model.params.initial_dist[k as usize - 1] * emissions.d(states[0], k))
        .collect();
    let mut next = vec![0.0; n];
    let mut log_l = 0.0;
    let mut s = trace.minute_of_day(0);

    let rescale = |alpha: &mut Vec<f64>, log_l: &mut f64| -> bool {
        let c: f64 = alpha.iter().sum();
        if c <= 0.0 || !c.is_finite() {
            return false;
        }
        *log_l += c.ln();
        alpha.iter_mut().for_each(|a| *a /= c);
        true
    };
    if !rescale(&mut alpha, &mut log_l) {
        return Ok(f64::NEG_INFINITY);
    }

    for &z in &states[1..] {
        let p = model.transition_matrix_at(s);
        for (k, slot) in next.iter_mut().enumerate() {
            let to = k as u8 + 1;
            let d = emissions.d(z, to);
            *slot = if d == 0.0 {
                0.0
            } else {
                d * (1..=n as u8)
                    .map(|from| alpha[from as usize - 1] * p.p(from, to))
                    .sum::<f64>()
            };
        }
        std::mem::swap(&mut alpha, &mut next);
        if !rescale(&mut alpha, &mut log_l) {
            return Ok(f64::NEG_INFINITY);
        }
        s = s.advance(1);
    }
    Ok(log_l)
}
