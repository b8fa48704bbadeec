//! Log-domain reductions.
//!
//! Every entropy, norm and semigroup evaluation in the crate goes through
//! these helpers so that `exp(-phi / eps)` is never formed for small `eps`.

/// `log(sum(exp(x)))` over a slice. Empty input and all `-inf` give `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    log_sum_exp_iter(xs.iter().copied())
}

/// Two-pass log-sum-exp over anything that can be iterated twice.
pub fn log_sum_exp_iter<I>(xs: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = xs.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() || max.is_nan() {
        return max;
    }
    let sum: f64 = it.map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    if hi == f64::INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Weighted log-mean-exp: `log(sum_i w_i exp(x_i))` given `log w`.
pub fn log_weighted_sum_exp(log_w: &[f64], xs: &[f64]) -> f64 {
    debug_assert_eq!(log_w.len(), xs.len());
    log_sum_exp_iter(log_w.iter().zip(xs).map(|(lw, x)| lw + x))
}
