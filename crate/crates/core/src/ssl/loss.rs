use sslse_autodiff::{BackwardRule, Real, Tape, Tensor, Var};

use super::{Result, SslError};

/// Largest accepted deviation of a row norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-4;

/// Index of the positive partner of row `i`: rows `2k` and `2k + 1` pair up.
pub fn positive_index(i: usize) -> usize {
    i ^ 1
}

struct NtXentRule<T> {
    temperature: T,
    /// Row-wise softmax over `k != i` of the scaled similarities.
    probs: Vec<T>,
}

impl<T: Real> BackwardRule<T> for NtXentRule<T> {
    fn name(&self) -> &'static str {
        "nt_xent"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad_output: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let z = inputs[0];
        let (rows, dim) = (z.shape()[0], z.shape()[1]);
        let scale = grad_output.item() / (T::from_usize(rows).expect("row count") * self.temperature);
        // dL/dS (S = Z Z^T / tau) scaled by 1/tau, symmetrized.
        let mut g = self.probs.clone();
        for i in 0..rows {
            g[i * rows + positive_index(i)] -= T::one();
        }
        let zd = z.data();
        let mut dz = vec![T::zero(); rows * dim];
        for i in 0..rows {
            let out = &mut dz[i * dim..(i + 1) * dim];
            for k in 0..rows {
                let coeff = (g[i * rows + k] + g[k * rows + i]) * scale;
                if coeff != T::zero() {
                    for (o, &v) in out.iter_mut().zip(&zd[k * dim..(k + 1) * dim]) {
                        *o += coeff * v;
                    }
                }
            }
        }
        vec![Some(Tensor::new(vec![rows, dim], dz).expect("same shape as z"))]
    }
}

/// Normalized temperature-scaled cross-entropy over `2N` unit rows.
///
/// For each row `i` the positive is row `i ^ 1` and every other row is a
/// negative; the loss averages `-log softmax` of the positive over all
/// `2N` rows.
pub fn nt_xent_loss<T: Real>(tape: &mut Tape<T>, z: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(SslError::NonPositiveTemperature(temperature));
    }
    let value = tape.value(z);
    let [rows, dim] = match *value.shape() {
        [r, d] => [r, d],
        _ => return Err(SslError::EmbeddingShape(value.shape().to_vec())),
    };
    if rows == 0 || rows % 2 != 0 {
        return Err(SslError::OddRowCount(rows));
    }
    let data = value.data();
    for (row, r) in data.chunks(dim).enumerate() {
        let norm = r.iter().map(|&v| v * v).sum::<T>().sqrt().to_f64_lossy();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(SslError::NonUnitRows { row, norm });
        }
    }

    let tau = T::from_f64_lossy(temperature);
    let mut sims = vec![T::zero(); rows * rows];
    for i in 0..rows {
        for k in i..rows {
            let s = data[i * dim..(i + 1) * dim]
                .iter()
                .zip(&data[k * dim..(k + 1) * dim])
                .map(|(&a, &b)| a * b)
                .sum::<T>()
                / tau;
            sims[i * rows + k] = s;
            sims[k * rows + i] = s;
        }
    }

    let mut probs = vec![T::zero(); rows * rows];
    let mut total = T::zero();
    for i in 0..rows {
        let row = &sims[i * rows..(i + 1) * rows];
        let max = (0..rows)
            .filter(|&k| k != i)
            .map(|k| row[k])
            .fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for k in (0..rows).filter(|&k| k != i) {
            let e = (row[k] - max).exp();
            probs[i * rows + k] = e;
            denom += e;
        }
        for k in 0..rows {
            probs[i * rows + k] /= denom;
        }
        total += max + denom.ln() - row[positive_index(i)];
    }
    let loss = total / T::from_usize(rows).expect("row count");
    Ok(tape.custom(&[z], Tensor::scalar(loss), NtXentRule { temperature: tau, probs }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(rows: &[&[f64]], tau: f64) -> f64 {
        let dim = rows[0].len();
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(vec![rows.len(), dim], rows.concat()).unwrap());
        let l = nt_xent_loss(&mut tape, z, tau).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn single_pair_is_zero() {
        assert_eq!(loss_of(&[&[1.0, 0.0], &[0.0, 1.0]], 0.5), 0.0);
    }

    #[test]
    fn identical_rows_give_log_three() {
        let r: &[f64] = &[0.6, 0.8];
        for tau in [0.1, 0.5, 2.0] {
            assert!((loss_of(&[r, r, r, r], tau) - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn worked_example() {
        let (a, b): (&[f64], &[f64]) = (&[1.0, 0.0], &[0.0, 1.0]);
        let expected = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        let got = loss_of(&[a, a, b, b], 1.0);
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn colder_temperature_penalizes_hard_negatives() {
        let s = 0.5f64.sqrt();
        let rows: [&[f64]; 4] = [&[1.0, 0.0], &[s, s], &[0.0, 1.0], &[1.0, 0.0]];
        assert!(loss_of(&rows, 0.1) > loss_of(&rows, 1.0));
    }

    #[test]
    fn input_errors() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.1]).unwrap());
        assert!(matches!(nt_xent_loss(&mut tape, z, 0.5), Err(SslError::NonUnitRows { row: 1, .. })));
        let z = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        assert!(matches!(nt_xent_loss(&mut tape, z, 0.0), Err(SslError::NonPositiveTemperature(_))));
        let z = tape.constant(Tensor::new(vec![3, 1], vec![1.0; 3]).unwrap());
        assert!(matches!(nt_xent_loss(&mut tape, z, 0.5), Err(SslError::OddRowCount(3))));
    }
}
