//! Small numeric helpers shared by the reasoner, policies and trainer.

/// Weights read from rule files are clamped into this open interval before
/// being turned into logits, so `1.0` and `0.0` stay representable.
pub const WEIGHT_EPS: f64 = 1e-6;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function expressed through its output.
#[inline]
pub fn sigmoid_grad_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

pub fn weight_to_logit(w: f64) -> f64 {
    let w = w.clamp(WEIGHT_EPS, 1.0 - WEIGHT_EPS);
    (w / (1.0 - w)).ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Vector-Jacobian product of softmax: given `p = softmax(x)` and `dL/dp`,
/// returns `dL/dx`.
pub fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    p.iter().zip(grad_p).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Log-sum-exp smooth maximum `gamma * ln(sum exp(x / gamma))`.
///
/// Callers guarantee `gamma > 0` and a non-empty slice; see
/// [`crate::reason::softor`] for the checked public entry point.
#[inline]
pub fn logsumexp_scaled(xs: &[f64], gamma: f64) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.len() == 1 {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| ((x - m) / gamma).exp()).sum();
    m + gamma * s.ln()
}

/// Binary entropy in nats with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

/// Categorical entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .map(|&q| if q <= 0.0 { 0.0 } else { -q * q.ln() })
        .sum()
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}
