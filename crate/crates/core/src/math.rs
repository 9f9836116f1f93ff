/// Softmax of `scale * scores` restricted to `support` (all actions when `None`).
/// Entries outside the support are exactly zero.
pub fn masked_softmax(scores: &[f64], scale: f64, support: Option<&[bool]>) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    masked_softmax_into(scores, scale, support, &mut out);
    out
}

pub fn masked_softmax_into(scores: &[f64], scale: f64, support: Option<&[bool]>, out: &mut [f64]) {
    let inside = |a: usize| support.is_none_or(|m| m[a]);
    let mut max = f64::NEG_INFINITY;
    for (a, &s) in scores.iter().enumerate() {
        if inside(a) {
            max = max.max(scale * s);
        }
    }
    let mut total = 0.0;
    for (a, (&s, o)) in scores.iter().zip(out.iter_mut()).enumerate() {
        *o = if inside(a) {
            let e = (scale * s - max).exp();
            total += e;
            e
        } else {
            0.0
        };
    }
    let inv = 1.0 / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation over sqrt(n)); zero for n < 2.
pub fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}
