//! Scalar math shims. The crate is `no_std`, so transcendental functions are
//! routed through `libm`; everything funnels through here to keep results
//! identical between the forward implementations and the tape adjoints.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Numerically stable softmax with the standard max shift. Returns a vector
/// summing to 1 for any finite input.
pub fn softmax(logits: &[f64]) -> alloc::vec::Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in logits {
        if v > max {
            max = v;
        }
    }
    let mut out = alloc::vec::Vec::with_capacity(logits.len());
    let mut sum = 0.0;
    for &v in logits {
        let e = exp(v - max);
        sum += e;
        out.push(e);
    }
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// log(sum(exp(row))) with the same shift as [`softmax`].
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in row {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for &v in row {
        sum += exp(v - max);
    }
    max + ln(sum)
}
