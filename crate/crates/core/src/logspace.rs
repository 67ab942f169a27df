//! Non-negative reals carried by their logarithm.

use std::ops::{Add, Mul};

use serde::{Serialize, Serializer};

/// `exp(ln)`; `ln = -∞` encodes an exact zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogScalar {
    ln: f64,
}

impl LogScalar {
    pub const ZERO: Self = Self {
        ln: f64::NEG_INFINITY,
    };

    pub fn from_ln(ln: f64) -> Self {
        debug_assert!(!ln.is_nan());
        Self { ln }
    }

    pub fn from_value(v: f64) -> Self {
        debug_assert!(v >= 0.0);
        Self { ln: v.ln() }
    }

    pub fn ln(self) -> f64 {
        self.ln
    }

    /// May underflow to 0 although the scalar is positive.
    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn is_zero(self) -> bool {
        self.ln == f64::NEG_INFINITY
    }

    pub fn is_finite(self) -> bool {
        self.ln < f64::INFINITY
    }

    pub fn scale(self, c: f64) -> Self {
        self * Self::from_value(c)
    }

    /// `self / other`; `None` when `other` is zero.
    pub fn ratio(self, other: Self) -> Option<f64> {
        if other.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(0.0);
        }
        Some((self.ln - other.ln).exp())
    }
}

impl Add for LogScalar {
    type Output = Self;

    fn add(self, other: Self) -> Self {
        let (hi, lo) = if self.ln >= other.ln {
            (self.ln, other.ln)
        } else {
            (other.ln, self.ln)
        };
        if lo == f64::NEG_INFINITY {
            return Self { ln: hi };
        }
        Self {
            ln: hi + (lo - hi).exp().ln_1p(),
        }
    }
}

impl Mul for LogScalar {
    type Output = Self;

    fn mul(self, other: Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::ZERO;
        }
        Self {
            ln: self.ln + other.ln,
        }
    }
}

impl Serialize for LogScalar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("LogScalar", 2)?;
        st.serialize_field("ln", &(self.ln.is_finite().then_some(self.ln)))?;
        st.serialize_field("value", &self.value())?;
        st.end()
    }
}

/// Streaming log-sum-exp.
#[derive(Debug, Clone, Copy)]
pub struct LogSum {
    max: f64,
    sum: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSum {
    pub fn add_ln(&mut self, ln: f64) {
        if ln == f64::NEG_INFINITY {
            return;
        }
        if ln <= self.max {
            self.sum += (ln - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - ln).exp() + 1.0;
            self.max = ln;
        }
    }

    pub fn add(&mut self, other: &LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max <= self.max {
            self.sum += other.sum * (other.max - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        }
    }

    pub fn total(&self) -> LogScalar {
        if self.max == f64::NEG_INFINITY {
            LogScalar::ZERO
        } else {
            LogScalar::from_ln(self.max + self.sum.ln())
        }
    }
}
