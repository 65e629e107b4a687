use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HiddenStateStack;
use crate::tensor::{ParamStore, Tensor};

/// Ridge strength for the per-layer linear regressions.
pub const LINEAR_RIDGE: f64 = 1e-4;

/// Which negative log-likelihood the loss-fit baseline regresses on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NllInput {
    /// Mean per-token NLL of the prompt tokens.
    Prompt,
    /// Mean per-token NLL of the gold answer given the prompt.
    #[default]
    GoldAnswer,
}

impl NllInput {
    pub fn tag(self) -> u8 {
        match self {
            NllInput::Prompt => 0,
            NllInput::GoldAnswer => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(NllInput::Prompt),
            1 => Some(NllInput::GoldAnswer),
            _ => None,
        }
    }
}

/// Univariate least-squares map from NLL to success probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossFit {
    pub input: NllInput,
    pub slope: f64,
    pub intercept: f64,
}

impl LossFit {
    pub fn fit(input: NllInput, nll: &[f64], labels: &[f64]) -> Result<Self> {
        let (slope, intercept) = lossfit_fit(nll, labels)?;
        Ok(LossFit { input, slope, intercept })
    }

    pub fn predict(&self, nll: f64) -> f64 {
        (self.slope * nll + self.intercept).clamp(0.0, 1.0)
    }
}

/// Closed-form ordinary least squares `y ≈ slope·x + intercept`.
pub fn lossfit_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Input(format!("lossfit needs equal non-empty inputs, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Numerical("degenerate loss fit: all NLL values identical".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Ridge regression with an unpenalized intercept, solved by Cholesky on
/// the centered normal equations. Returns `(weights, intercept)`.
pub fn ridge_fit(rows: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<(Vec<f64>, f64)> {
    let n = rows.len();
    if n == 0 || n != y.len() {
        return Err(Error::Input(format!("ridge_fit needs matching rows, got {n} and {}", y.len())));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Input("ragged design matrix".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let my = y.iter().sum::<f64>() / n as f64;
    let mut a = vec![0f64; d * d];
    let mut rhs = vec![0f64; d];
    let mut c = vec![0f64; d];
    for (r, &t) in rows.iter().zip(y) {
        for j in 0..d {
            c[j] = r[j] - mean[j];
        }
        for i in 0..d {
            rhs[i] += c[i] * (t - my);
            for j in 0..=i {
                a[i * d + j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        a[i * d + i] += ridge;
        for j in 0..i {
            a[j * d + i] = a[i * d + j];
        }
    }
    let w = cholesky_solve(&mut a, &rhs, d)?;
    let b = my - w.iter().zip(&mean).map(|(x, m)| x * m).sum::<f64>();
    Ok((w, b))
}

fn cholesky_solve(a: &mut [f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numerical(format!("normal equations not positive definite at column {j}")));
        }
        let l = s.sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / l;
        }
    }
    let mut z = vec![0f64; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| a[i * d + k] * z[k]).sum();
        z[i] = (b[i] - s) / a[i * d + i];
    }
    let mut x = vec![0f64; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| a[k * d + i] * x[k]).sum();
        x[i] = (z[i] - s) / a[i * d + i];
    }
    Ok(x)
}

/// One ridge regression per base layer on the last-token hidden vector;
/// the prediction is the mean of the per-layer outputs clipped to [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    /// `w` is `N×d_model`, `b` is `N`.
    pub params: ParamStore,
}

impl LinearProbe {
    pub fn n_layers(&self) -> usize {
        self.params.get("w").expect("linear probe has w").dims2().0
    }

    pub fn d_model(&self) -> usize {
        self.params.get("w").expect("linear probe has w").dims2().1
    }

    /// Fits layers `1..=N`, where layer `l` reads stack index `l − 1`.
    pub fn fit(examples: &[(&HiddenStateStack, usize)], labels: &[f64]) -> Result<Self> {
        let Some((first, _)) = examples.first() else {
            return Err(Error::Input("linear probe needs training rows".into()));
        };
        let (n_layers, d) = (first.n_layers(), first.width());
        if examples.len() < d + 1 {
            return Err(Error::Input(format!(
                "linear probe needs ≥ {} rows, got {}",
                d + 1,
                examples.len()
            )));
        }
        let mut w = Vec::with_capacity(n_layers * d);
        let mut b = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let rows: Vec<Vec<f64>> = examples
                .iter()
                .map(|(s, last)| s.at(l, *last).iter().map(|&v| v as f64).collect())
                .collect();
            let (wl, bl) = ridge_fit(&rows, labels, LINEAR_RIDGE)?;
            w.extend(wl.iter().map(|&v| v as f32));
            b.push(bl as f32);
        }
        let mut params = ParamStore::new();
        params.insert("w", Tensor::new(&[n_layers, d], w)?)?;
        params.insert("b", Tensor::new(&[n_layers], b)?)?;
        Ok(LinearProbe { params })
    }

    pub fn predict(&self, stack: &HiddenStateStack, last: usize) -> Result<f64> {
        let (n, d) = (self.n_layers(), self.d_model());
        if stack.width() != d || stack.n_layers() < n {
            return Err(Error::Config(format!(
                "linear probe for {n} layers of width {d} cannot read a {}-layer width-{} stack",
                stack.n_layers(),
                stack.width()
            )));
        }
        let w = self.params.get("w")?;
        let b = self.params.get("b")?.data();
        let mut total = 0f64;
        for l in 0..n {
            let h = stack.at(l, last);
            total += w.row(l).iter().zip(h).map(|(&a, &x)| a as f64 * x as f64).sum::<f64>() + b[l] as f64;
        }
        Ok((total / n as f64).clamp(0.0, 1.0))
    }
}
