use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function with central
/// differences and returns the largest relative error over coordinates.
///
/// `f` receives a fresh 64-bit tape and the leaf holding `x`; both the
/// autodiff and the difference quotients run in 64-bit.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let base: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let eval = |vals: Vec<f64>, backprop: bool| -> Result<(f64, Option<Vec<f64>>)> {
        let mut tape = Tape::<f64>::new();
        let leaf = tape.leaf_raw(x.shape(), vals, backprop)?;
        let out = f(&mut tape, leaf)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Usage("grad_check needs a scalar-valued function".into()));
        }
        let y = tape.scalar(out);
        if !backprop {
            return Ok((y, None));
        }
        tape.backward(out)?;
        let g = tape
            .grad(leaf)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; base.len()]);
        Ok((y, Some(g)))
    };

    let (_, grad) = eval(base.clone(), true)?;
    let grad = grad.expect("requested");
    let mut worst = 0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let (fp, _) = eval(plus, false)?;
        let (fm, _) = eval(minus, false)?;
        let central = (fp - fm) / (2.0 * h);
        let rel = (grad[i] - central).abs() / central.abs().max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_exact() {
        let x = Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn sigmoid_of_sum() {
        let x = Tensor::new(&[3], vec![0.1, -0.4, 0.25]).unwrap();
        let err = grad_check(
            |t, v| {
                let s = t.sum(v);
                Ok(t.sigmoid(s))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
