use std::fmt;
use std::str::FromStr;

use crate::tensor::Scalar;
use crate::Error;

/// Pointwise non-linearity `f_i` of a block.
///
/// Derivatives at kinks are fixed: `relu'(0) = 0`, `abs'(0) = 0` and
/// `lrelu'(0) = slope`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Tanh,
    Relu,
    /// `x` for `x > 0`, `slope * x` otherwise. The slope may be negative.
    LeakyRelu(f64),
    Abs,
    Identity,
}

impl Activation {
    #[inline]
    pub fn eval<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > T::zero() {
                    x
                } else {
                    T::from_f64_lossy(slope) * x
                }
            }
            Activation::Abs => x.abs(),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, a: T) -> T {
        self.derivative_given_output(a, self.eval(a))
    }

    /// `f'(a)` when `y = f(a)` is already known; avoids a second `tanh`.
    #[inline]
    pub fn derivative_given_output<T: Scalar>(self, a: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::from_f64_lossy(slope)
                }
            }
            Activation::Abs => {
                if a > T::zero() {
                    T::one()
                } else if a < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }

    /// Whether the derivative is discontinuous at 0.
    pub fn has_kink(self) -> bool {
        matches!(
            self,
            Activation::Relu | Activation::LeakyRelu(_) | Activation::Abs
        )
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => f.write_str("tanh"),
            Activation::Relu => f.write_str("relu"),
            Activation::LeakyRelu(s) => write!(f, "lrelu({s})"),
            Activation::Abs => f.write_str("abs"),
            Activation::Identity => f.write_str("identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Accepts `tanh`, `relu`, `abs`, `identity` and `lrelu(<slope>)`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "abs" => Ok(Activation::Abs),
            "identity" | "linear" => Ok(Activation::Identity),
            _ => {
                let slope = s
                    .strip_prefix("lrelu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))?;
                Ok(Activation::LeakyRelu(slope))
            }
        }
    }
}
