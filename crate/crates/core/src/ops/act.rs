//! Elementwise activations and their derivatives.

use crate::tensor::Real;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let xf = x.to_f64().unwrap();
    T::lit(0.5 * xf * (1.0 + libm::erf(xf / std::f64::consts::SQRT_2)))
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let xf = x.to_f64().unwrap();
    let cdf = 0.5 * (1.0 + libm::erf(xf / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * xf * xf).exp() / (2.0 * std::f64::consts::PI).sqrt();
    T::lit(cdf + xf * pdf)
}

/// `ln(1 + e^x)`, linear above 20 to avoid overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn softplus_grad<T: Real>(x: T) -> T {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_zero() {
        assert_eq!(silu(0.0f64), 0.0);
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_does_not_overflow() {
        assert!((softplus(50.0f32) - 50.0).abs() < 1e-5);
        assert!(softplus(1000.0f64).is_finite());
        assert!(softplus(-1000.0f64) >= 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        type F = fn(f64) -> f64;
        let pairs: [(F, F); 3] = [(silu, silu_grad), (gelu, gelu_grad), (softplus, softplus_grad)];
        for (f, df) in pairs {
            for x in [-2.0, 0.5, 3.0] {
                let fd = (f(x + h) - f(x - h)) / (2.0 * h);
                assert!((fd - df(x)).abs() < 1e-5, "x={x}: {fd} vs {}", df(x));
            }
        }
    }
}
