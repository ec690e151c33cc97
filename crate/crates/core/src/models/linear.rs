//! Ridge, binary logistic and multinomial (softmax) logistic regression.
//!
//! Logistic fits minimize `mean log-loss + ||w||^2 / (2 C n)` (intercepts
//! unpenalized) with damped Newton steps on standardized features, stopping
//! when the gradient max-norm drops below [`GRAD_TOL`] or after [`MAX_ITER`]
//! iterations.

use nalgebra::{DMatrix, DVector};

use super::Design;
use crate::error::{Error, Result};

pub const MAX_ITER: usize = 10_000;
pub const GRAD_TOL: f64 = 1e-8;

/// Column-wise centering and scaling fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub(crate) fn fit(x: &Design) -> Self {
        let (n, p) = (x.n, x.p);
        let mut mean = vec![0.0; p];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub(crate) fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) / s;
        }
    }

    pub(crate) fn transform(&self, x: &Design) -> Design {
        let mut data = vec![0.0; x.n * x.p];
        for i in 0..x.n {
            self.transform_row(x.row(i), &mut data[i * x.p..(i + 1) * x.p]);
        }
        Design { n: x.n, p: x.p, data }
    }
}

/// `y = intercept + x . coef`, with `x` optionally standardized first.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinearScore {
    scaler: Option<Standardizer>,
    coef: Vec<f64>,
    intercept: f64,
}

impl LinearScore {
    pub(crate) fn score(&self, row: &[f64]) -> f64 {
        match &self.scaler {
            Some(s) => {
                let mut buf = vec![0.0; row.len()];
                s.transform_row(row, &mut buf);
                self.intercept + dot(&buf, &self.coef)
            }
            None => self.intercept + dot(row, &self.coef),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ridge regression with an unpenalized intercept, solved in closed form on
/// centered data: `(Xc' Xc + alpha I) beta = Xc' yc`.
pub(crate) fn fit_ridge(x: &Design, y: &[f64], alpha: f64) -> Result<LinearScore> {
    let (n, p) = (x.n, x.p);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut x_mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in x_mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut centered = vec![0.0; p];
    for i in 0..n {
        for ((c, v), m) in centered.iter_mut().zip(x.row(i)).zip(&x_mean) {
            *c = v - m;
        }
        let yc = y[i] - y_mean;
        for a in 0..p {
            rhs[a] += centered[a] * yc;
            for b in a..p {
                gram[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..p {
        gram[(a, a)] += alpha;
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::SingularSystem(format!("ridge normal equations (alpha={alpha})")))?;
    let beta = chol.solve(&rhs);
    let coef: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - dot(&x_mean, &coef);
    Ok(LinearScore {
        scaler: None,
        coef,
        intercept,
    })
}

/// Intercept-only fallback used when the ridge system cannot be solved.
pub(crate) fn constant_score(p: usize, value: f64) -> LinearScore {
    LinearScore {
        scaler: None,
        coef: vec![0.0; p],
        intercept: value,
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Minimizes a smooth strictly convex objective by Newton's method with
/// Armijo backtracking. `eval(theta, want_hessian)` returns
/// `(loss, gradient, hessian?)`.
fn newton<F>(mut theta: Vec<f64>, mut eval: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], bool) -> (f64, Vec<f64>, Option<DMatrix<f64>>),
{
    let dim = theta.len();
    for _ in 0..MAX_ITER {
        let (loss, grad, hess) = eval(&theta, true);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < GRAD_TOL {
            return Ok(theta);
        }
        let mut hess = hess.expect("hessian requested");
        let g = DVector::from_vec(grad);
        let step = loop {
            if let Some(ch) = hess.clone().cholesky() {
                break ch.solve(&g);
            }
            let bump = 1e-10 * (1.0 + hess.diagonal().amax());
            for k in 0..dim {
                hess[(k, k)] += bump;
            }
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a - t * d).collect();
            let (l, _, _) = eval(&cand, false);
            if l.is_finite() && l <= loss - 1e-4 * t * slope {
                theta = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No further decrease is representable; the iterate is as good as it gets.
            return Ok(theta);
        }
    }
    Ok(theta)
}

/// Binary logistic regression on soft targets `y in [0, 1]`.
pub(crate) fn fit_logistic(x: &Design, y: &[f64], c: f64) -> Result<LinearScore> {
    let scaler = Standardizer::fit(x);
    let xs = scaler.transform(x);
    let (n, p) = (xs.n, xs.p);
    let nf = n as f64;
    let reg = 1.0 / (c * nf);
    let dim = p + 1;
    let theta = newton(vec![0.0; dim], |theta, want_h| {
        let (b, w) = (theta[0], &theta[1..]);
        let mut loss = 0.0;
        let mut grad = vec![0.0; dim];
        let mut h = if want_h { vec![0.0; dim * dim] } else { Vec::new() };
        for i in 0..n {
            let row = xs.row(i);
            let z = b + dot(row, w);
            loss += softplus(z) - y[i] * z;
            if !want_h {
                continue;
            }
            let pr = sigmoid(z);
            let r = pr - y[i];
            let s = pr * (1.0 - pr);
            grad[0] += r;
            h[0] += s;
            for a in 0..p {
                let xa = row[a];
                grad[a + 1] += r * xa;
                h[a + 1] += s * xa;
                let base = (a + 1) * dim;
                for bcol in a..p {
                    h[base + bcol + 1] += s * xa * row[bcol];
                }
            }
        }
        loss /= nf;
        loss += 0.5 * reg * dot(w, w);
        if !want_h {
            return (loss, grad, None);
        }
        for g in grad.iter_mut() {
            *g /= nf;
        }
        for a in 0..p {
            grad[a + 1] += reg * w[a];
        }
        let mut hm = DMatrix::<f64>::zeros(dim, dim);
        for r in 0..dim {
            for cidx in r..dim {
                let v = h[r * dim + cidx] / nf;
                hm[(r, cidx)] = v;
                hm[(cidx, r)] = v;
            }
        }
        hm[(0, 0)] += 1e-12;
        for a in 1..dim {
            hm[(a, a)] += reg;
        }
        (loss, grad, Some(hm))
    })?;
    Ok(LinearScore {
        scaler: Some(scaler),
        intercept: theta[0],
        coef: theta[1..].to_vec(),
    })
}

/// Multinomial logistic regression; `labels` in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SoftmaxModel {
    scaler: Standardizer,
    /// `n_classes x (p + 1)`, intercept first.
    theta: Vec<f64>,
    n_classes: usize,
    p: usize,
}

impl SoftmaxModel {
    pub(crate) fn logits(&self, row: &[f64]) -> Vec<f64> {
        let mut xs = vec![0.0; self.p];
        self.scaler.transform_row(row, &mut xs);
        let stride = self.p + 1;
        (0..self.n_classes)
            .map(|k| {
                let t = &self.theta[k * stride..(k + 1) * stride];
                t[0] + dot(&t[1..], &xs)
            })
            .collect()
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn fit_softmax(x: &Design, labels: &[usize], n_classes: usize, c: f64) -> Result<SoftmaxModel> {
    let scaler = Standardizer::fit(x);
    let xs = scaler.transform(x);
    let (n, p) = (xs.n, xs.p);
    let nf = n as f64;
    let reg = 1.0 / (c * nf);
    let stride = p + 1;
    let dim = n_classes * stride;
    let theta = newton(vec![0.0; dim], |theta, want_h| {
        let mut loss = 0.0;
        let mut grad = vec![0.0; dim];
        let mut h = if want_h { vec![0.0; dim * dim] } else { Vec::new() };
        let mut probs = vec![0.0; n_classes];
        let mut xt = vec![1.0; stride];
        for i in 0..n {
            xt[1..].copy_from_slice(xs.row(i));
            for (k, pk) in probs.iter_mut().enumerate() {
                *pk = dot(&theta[k * stride..(k + 1) * stride], &xt);
            }
            let m = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + probs.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            loss += lse - probs[labels[i]];
            if !want_h {
                continue;
            }
            for pk in probs.iter_mut() {
                *pk = (*pk - lse).exp();
            }
            for k in 0..n_classes {
                let r = probs[k] - if labels[i] == k { 1.0 } else { 0.0 };
                for j in 0..stride {
                    grad[k * stride + j] += r * xt[j];
                }
            }
            for k in 0..n_classes {
                for l in k..n_classes {
                    let a = probs[k] * (if k == l { 1.0 } else { 0.0 } - probs[l]);
                    if a == 0.0 {
                        continue;
                    }
                    for j in 0..stride {
                        let axj = a * xt[j];
                        let row = (k * stride + j) * dim + l * stride;
                        let start = if k == l { j } else { 0 };
                        for mcol in start..stride {
                            h[row + mcol] += axj * xt[mcol];
                        }
                    }
                }
            }
        }
        loss /= nf;
        let mut penalty = 0.0;
        for k in 0..n_classes {
            for j in 1..stride {
                penalty += theta[k * stride + j].powi(2);
            }
        }
        loss += 0.5 * reg * penalty;
        if !want_h {
            return (loss, grad, None);
        }
        for g in grad.iter_mut() {
            *g /= nf;
        }
        for k in 0..n_classes {
            for j in 1..stride {
                grad[k * stride + j] += reg * theta[k * stride + j];
            }
        }
        let mut hm = DMatrix::<f64>::zeros(dim, dim);
        for r in 0..dim {
            for cidx in r..dim {
                let v = h[r * dim + cidx] / nf;
                hm[(r, cidx)] = v;
                hm[(cidx, r)] = v;
            }
        }
        for k in 0..n_classes {
            // Intercepts are unpenalized and jointly shift-invariant.
            hm[(k * stride, k * stride)] += 1e-10;
            for j in 1..stride {
                hm[(k * stride + j, k * stride + j)] += reg;
            }
        }
        (loss, grad, Some(hm))
    })?;
    Ok(SoftmaxModel {
        scaler,
        theta,
        n_classes,
        p,
    })
}
