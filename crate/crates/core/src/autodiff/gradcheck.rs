use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Matrix, Tape, Var};
use crate::error::{invalid, Result};

/// Adjoints below this magnitude are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub entries_checked: usize,
}

/// Compares reverse-mode adjoints of `build` against central differences on
/// up to `per_param` randomly chosen entries of every parameter matrix.
///
/// `build` must construct a scalar loss from the parameter leaves it is
/// handed, in order.
pub fn grad_check_fn<F>(
    params: &[Matrix],
    build: F,
    epsilon: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(invalid(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let eval = |ps: &[Matrix]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.scalar(loss)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (pi, p) in params.iter().enumerate() {
        if p.is_empty() {
            continue;
        }
        let analytic = grads.get_or_zeros(vars[pi], p.shape());
        let picks = sample(&mut rng, p.len(), per_param.min(p.len()));
        for idx in picks.iter() {
            let orig = p.data()[idx];
            work[pi].data_mut()[idx] = orig + epsilon;
            let up = eval(&work);
            work[pi].data_mut()[idx] = orig - epsilon;
            let down = eval(&work);
            work[pi].data_mut()[idx] = orig;

            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        entries_checked: checked,
    })
}
