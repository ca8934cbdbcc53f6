//! Radial-kernel soft-margin SVM on scalar features.
//!
//! Each binary machine solves the dual
//!
//! ```text
//! min  1/2 a'Qa - e'a   s.t.  y'a = 0,  0 <= a_i <= C,   Q_ij = y_i y_j k(x_i, x_j)
//! ```
//!
//! by sequential minimal optimization: the first index is the maximal KKT
//! violator, the second is picked by second-order gain. Multi-class problems
//! are split one-vs-rest.

use thiserror::Error;

const TAU: f64 = 1e-12;

/// Kernel matrices up to this many entries are precomputed.
const DENSE_KERNEL_LIMIT: usize = 16 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("feature {index} is not finite")]
    NonFinite { index: usize },
    #[error("need at least two classes, found {0}")]
    SingleClass(usize),
    #[error("{features} features but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("invalid SVM parameter: {0}")]
    InvalidParam(String),
    #[error("cannot derive gamma from zero-variance features")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    /// Kernel width; `None` means `1 / variance(features)`.
    pub gamma: Option<f64>,
    pub c: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            gamma: None,
            c: 1.0,
            tolerance: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

#[inline]
pub fn rbf(gamma: f64, x: f64, y: f64) -> f64 {
    let d = x - y;
    (-gamma * d * d).exp()
}

/// One one-vs-rest machine: decision `sum(coef_i * k(sv_i, x)) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMachine {
    pub class: usize,
    pub support: Vec<f64>,
    /// `y_i * alpha_i`, within `[-C, C]`.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Final maximal KKT violation gap.
    pub kkt_gap: f64,
    pub iterations: usize,
}

impl BinaryMachine {
    pub fn decision(&self, gamma: f64, x: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(&s, &c)| c * rbf(gamma, s, x))
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub gamma: f64,
    pub c: f64,
    pub tolerance: f64,
    /// Sorted class labels; machines are in the same order.
    pub classes: Vec<usize>,
    pub machines: Vec<BinaryMachine>,
}

impl SvmModel {
    pub fn decision_values(&self, x: f64) -> Vec<f64> {
        self.machines.iter().map(|m| m.decision(self.gamma, x)).collect()
    }
}

enum Kernel<'a> {
    Dense { n: usize, k: Vec<f64> },
    Lazy { x: &'a [f64], gamma: f64 },
}

impl<'a> Kernel<'a> {
    fn new(x: &'a [f64], gamma: f64) -> Self {
        let n = x.len();
        if n * n <= DENSE_KERNEL_LIMIT {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                k[i * n + i] = 1.0;
                for j in (i + 1)..n {
                    let v = rbf(gamma, x[i], x[j]);
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            Kernel::Dense { n, k }
        } else {
            Kernel::Lazy { x, gamma }
        }
    }

    fn row<'b>(&'b self, i: usize, buf: &'b mut Vec<f64>) -> &'b [f64] {
        match self {
            Kernel::Dense { n, k } => &k[i * n..(i + 1) * n],
            Kernel::Lazy { x, gamma } => {
                buf.clear();
                buf.extend(x.iter().map(|&xj| rbf(*gamma, x[i], xj)));
                buf
            }
        }
    }
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
    gap: f64,
    iterations: usize,
}

fn solve_binary(kernel: &Kernel, y: &[f64], c: f64, tol: f64, max_iter: usize) -> Solution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    // gradient of the dual objective, starts at -e
    let mut grad = vec![-1.0; n];
    let mut buf_i = Vec::new();
    let mut buf_j = Vec::new();
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    while iterations < max_iter {
        // first index: maximal violator in the up set
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > g_max {
                    g_max = v;
                    i_sel = t;
                }
            }
        }
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            if low(alpha[t], y[t]) {
                g_min = g_min.min(-y[t] * grad[t]);
            }
        }
        gap = g_max - g_min;
        if i_sel == usize::MAX || gap < tol {
            break;
        }
        let i = i_sel;
        let k_i = kernel.row(i, &mut buf_i).to_vec();

        // second index: best second-order gain among low-set violators
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let b = g_max + y[t] * grad[t];
            if b > 0.0 {
                let mut a = 1.0 + 1.0 - 2.0 * k_i[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        if j_sel == usize::MAX {
            break;
        }
        let j = j_sel;
        let k_j = kernel.row(j, &mut buf_j);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = k_i[i] + k_j[j] - 2.0 * k_i[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }

        let d_i = (alpha[i] - old_i) * y[i];
        let d_j = (alpha[j] - old_j) * y[j];
        for t in 0..n {
            grad[t] += y[t] * (k_i[t] * d_i + k_j[t] * d_j);
        }
        iterations += 1;
    }

    // offset from free variables, or the midpoint of the feasible interval
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    Solution {
        alpha,
        rho,
        gap: gap.max(0.0),
        iterations,
    }
}

pub fn feature_variance(features: &[f64]) -> f64 {
    let n = features.len() as f64;
    let mean = features.iter().sum::<f64>() / n;
    features.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

pub fn svm_train(features: &[f64], labels: &[usize], params: &SvmParams) -> Result<SvmModel, SvmError> {
    if features.len() != labels.len() {
        return Err(SvmError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    if let Some(index) = features.iter().position(|x| !x.is_finite()) {
        return Err(SvmError::NonFinite { index });
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(SvmError::InvalidParam(format!("C must be positive, got {}", params.c)));
    }
    if params.tolerance.is_nan() || params.tolerance <= 0.0 {
        return Err(SvmError::InvalidParam(format!(
            "tolerance must be positive, got {}",
            params.tolerance
        )));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::SingleClass(classes.len()));
    }
    let gamma = match params.gamma {
        Some(g) if g > 0.0 && g.is_finite() => g,
        Some(g) => return Err(SvmError::InvalidParam(format!("gamma must be positive, got {g}"))),
        None => {
            let var = feature_variance(features);
            if var <= 0.0 {
                return Err(SvmError::ZeroVariance);
            }
            1.0 / var
        }
    };

    let kernel = Kernel::new(features, gamma);
    let machines = classes
        .iter()
        .map(|&class| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let sol = solve_binary(&kernel, &y, params.c, params.tolerance, params.max_iter);
            let mut support = Vec::new();
            let mut coef = Vec::new();
            for (t, &a) in sol.alpha.iter().enumerate() {
                if a > 0.0 {
                    support.push(features[t]);
                    coef.push(y[t] * a);
                }
            }
            BinaryMachine {
                class,
                support,
                coef,
                bias: -sol.rho,
                kkt_gap: sol.gap,
                iterations: sol.iterations,
            }
        })
        .collect();

    Ok(SvmModel {
        gamma,
        c: params.c,
        tolerance: params.tolerance,
        classes,
        machines,
    })
}

/// Class of the machine with the largest decision value; ties go to the
/// earlier class.
pub fn svm_predict(model: &SvmModel, x: f64) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (k, m) in model.machines.iter().enumerate() {
        let v = m.decision(model.gamma, x);
        if v > best_value {
            best_value = v;
            best = k;
        }
    }
    model.classes[best]
}

pub fn accuracy(model: &SvmModel, features: &[f64], labels: &[usize]) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let hits = features
        .iter()
        .zip(labels)
        .filter(|(&x, &l)| svm_predict(model, x) == l)
        .count();
    hits as f64 / features.len() as f64
}
