//! Double-double reals for reference evaluations.
//!
//! A value is the unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`, giving
//! about 106 bits of significand. Arithmetic, `sqrt`, `exp` and `ln` are
//! accurate to that width. Trigonometric functions are evaluated on `hi` only.

use core::fmt;
use core::iter::Sum;
use core::num::FpCategory;
use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, Sub, SubAssign};

use num_traits::{Float, Num, NumCast, One, ParseFloatError, ToPrimitive, Zero};

use super::real::{Precision, Real};

#[derive(Debug, Default, Clone, Copy, PartialEq, PartialOrd)]
pub struct Extended {
    hi: f64,
    lo: f64,
}

const LN2: Extended = Extended {
    hi: core::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, libm::fma(a, b, -p))
}

impl Extended {
    pub const fn from_f64(x: f64) -> Self {
        Extended { hi: x, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    /// Renormalize `s + e` where `|e|` is at most about `ulp(s)`.
    fn norm(s: f64, e: f64) -> Self {
        if !s.is_finite() {
            return Extended::from_f64(s);
        }
        let h = s + e;
        Extended { hi: h, lo: e - (h - s) }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Extended::norm(p, e + self.lo * b)
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = libm::ldexp(1.0, k);
        Extended {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    /// `exp(r) − 1` for `|r| ≤ ln 2 / 2`: Taylor series on `r / 2^10`, then
    /// ten applications of `expm1(2s) = expm1(s) · (2 + expm1(s))`.
    fn expm1_reduced(self) -> Self {
        let s = self.scale_pow2(-10);
        let mut term = s;
        let mut sum = s;
        let mut n = 1.0;
        while term.hi.abs() > 1e-36 {
            n += 1.0;
            term = term * s / Extended::from_f64(n);
            sum += term;
        }
        let two = Extended::from_f64(2.0);
        for _ in 0..10 {
            sum = sum * (two + sum);
        }
        sum
    }
}

impl Real for Extended {
    const PRECISION: Precision = Precision::Extended;

    #[inline]
    fn lit(x: f64) -> Self {
        Extended::from_f64(x)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.hi + self.lo
    }
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.as_f64(), f)
    }
}

impl Add for Extended {
    type Output = Extended;
    fn add(self, rhs: Extended) -> Extended {
        let (s, e) = two_sum(self.hi, rhs.hi);
        if !s.is_finite() {
            return Extended::from_f64(s);
        }
        let (t, f) = two_sum(self.lo, rhs.lo);
        let r = Extended::norm(s, e + t);
        Extended::norm(r.hi, r.lo + f)
    }
}

impl Sub for Extended {
    type Output = Extended;
    #[inline]
    fn sub(self, rhs: Extended) -> Extended {
        self + -rhs
    }
}

impl Mul for Extended {
    type Output = Extended;
    fn mul(self, rhs: Extended) -> Extended {
        let (p, e) = two_prod(self.hi, rhs.hi);
        Extended::norm(p, e + (self.hi * rhs.lo + self.lo * rhs.hi))
    }
}

impl Div for Extended {
    type Output = Extended;
    /// Long division with three `f64` quotient digits.
    fn div(self, rhs: Extended) -> Extended {
        let q1 = self.hi / rhs.hi;
        if !q1.is_finite() || q1 == 0.0 {
            return Extended::from_f64(q1);
        }
        let r = self - rhs.mul_f64(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs.mul_f64(q2);
        let q3 = r.hi / rhs.hi;
        let (s, e) = two_sum(q1, q2);
        Extended::norm(s, e) + Extended::from_f64(q3)
    }
}

impl Rem for Extended {
    type Output = Extended;
    fn rem(self, rhs: Extended) -> Extended {
        self - (self / rhs).trunc() * rhs
    }
}

impl Neg for Extended {
    type Output = Extended;
    #[inline]
    fn neg(self) -> Extended {
        Extended {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

macro_rules! assign {
    ($($tr:ident $m:ident $op:tt),*) => {
        $(
            impl $tr for Extended {
                #[inline]
                fn $m(&mut self, rhs: Extended) {
                    *self = *self $op rhs;
                }
            }
        )*
    };
}

assign!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /);

impl Sum for Extended {
    fn sum<I: Iterator<Item = Extended>>(iter: I) -> Extended {
        iter.fold(Extended::zero(), |a, b| a + b)
    }
}

impl Zero for Extended {
    fn zero() -> Self {
        Extended::from_f64(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for Extended {
    fn one() -> Self {
        Extended::from_f64(1.0)
    }
}

impl Num for Extended {
    type FromStrRadixErr = ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, ParseFloatError> {
        f64::from_str_radix(s, radix).map(Extended::from_f64)
    }
}

impl ToPrimitive for Extended {
    fn to_i64(&self) -> Option<i64> {
        self.as_f64().to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.as_f64().to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.as_f64())
    }
}

impl NumCast for Extended {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(Extended::from_f64)
    }
}

macro_rules! on_hi {
    ($($m:ident),*) => {
        $(
            fn $m(self) -> Self {
                Extended::from_f64(Float::$m(self.hi))
            }
        )*
    };
}

macro_rules! predicate {
    ($($m:ident),*) => {
        $(
            #[inline]
            fn $m(self) -> bool {
                Float::$m(self.hi)
            }
        )*
    };
}

impl Float for Extended {
    predicate!(is_nan, is_infinite, is_finite, is_normal, is_sign_positive, is_sign_negative);
    on_hi!(cbrt, sin, cos, tan, asin, acos, atan, sinh, cosh, asinh, acosh, atanh);

    fn nan() -> Self {
        Extended::from_f64(f64::NAN)
    }
    fn infinity() -> Self {
        Extended::from_f64(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Extended::from_f64(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Extended::from_f64(-0.0)
    }
    fn min_value() -> Self {
        Extended::from_f64(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Extended::from_f64(f64::MIN_POSITIVE)
    }
    fn max_value() -> Self {
        Extended::from_f64(f64::MAX)
    }
    fn epsilon() -> Self {
        Extended::from_f64(f64::EPSILON * f64::EPSILON)
    }

    fn classify(self) -> FpCategory {
        self.hi.classify()
    }

    fn floor(self) -> Self {
        let f = libm::floor(self.hi);
        if f == self.hi {
            let (s, e) = two_sum(f, libm::floor(self.lo));
            Extended::norm(s, e)
        } else {
            Extended::from_f64(f)
        }
    }

    fn ceil(self) -> Self {
        -(-self).floor()
    }

    fn round(self) -> Self {
        (self + Extended::from_f64(0.5)).floor()
    }

    fn trunc(self) -> Self {
        if self.hi < 0.0 {
            self.ceil()
        } else {
            self.floor()
        }
    }

    fn fract(self) -> Self {
        self - self.trunc()
    }

    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn signum(self) -> Self {
        Extended::from_f64(self.hi.signum())
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }

    fn recip(self) -> Self {
        Extended::one() / self
    }

    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut k = n.unsigned_abs();
        let mut acc = Extended::one();
        while k > 0 {
            if k & 1 == 1 {
                acc *= base;
            }
            base *= base;
            k >>= 1;
        }
        acc
    }

    fn powf(self, n: Self) -> Self {
        if self.hi == 0.0 && n.hi > 0.0 {
            return Extended::zero();
        }
        (n * self.ln()).exp()
    }

    /// One Newton step from the `f64` root.
    fn sqrt(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Extended::from_f64(libm::sqrt(self.hi));
        }
        let y = libm::sqrt(self.hi);
        let (p, e) = two_prod(y, y);
        let r = (self - Extended { hi: p, lo: e }).hi;
        let (s, e) = two_sum(y, r / (2.0 * y));
        Extended::norm(s, e)
    }

    fn exp(self) -> Self {
        let h = self.hi;
        if h.is_nan() {
            return self;
        }
        if h > 709.0 {
            return Extended::infinity();
        }
        if h < -745.0 {
            return Extended::zero();
        }
        let k = libm::round(h / core::f64::consts::LN_2);
        let r = self - LN2.mul_f64(k);
        (r.expm1_reduced() + Extended::one()).scale_pow2(k as i32)
    }

    fn exp2(self) -> Self {
        (self * LN2).exp()
    }

    fn exp_m1(self) -> Self {
        if self.hi.abs() <= 0.34 {
            self.expm1_reduced()
        } else {
            self.exp() - Extended::one()
        }
    }

    /// Two Newton steps on `exp(y) = x` from the `f64` logarithm.
    fn ln(self) -> Self {
        let h = self.hi;
        if h.is_nan() || h < 0.0 {
            return Extended::nan();
        }
        if h == 0.0 {
            return Extended::neg_infinity();
        }
        if h.is_infinite() {
            return self;
        }
        let mut y = Extended::from_f64(libm::log(h));
        for _ in 0..2 {
            y = y + self * (-y).exp() - Extended::one();
        }
        y
    }

    fn ln_1p(self) -> Self {
        (Extended::one() + self).ln()
    }

    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }

    fn log2(self) -> Self {
        self.ln() / LN2
    }

    fn log10(self) -> Self {
        self.ln() / Extended::from_f64(10.0).ln()
    }

    fn tanh(self) -> Self {
        let e = (Extended::from_f64(-2.0) * self.abs()).exp();
        let t = (Extended::one() - e) / (Extended::one() + e);
        if self.hi < 0.0 {
            -t
        } else {
            t
        }
    }

    fn max(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }

    fn min(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }

    fn abs_sub(self, other: Self) -> Self {
        if self <= other {
            Extended::zero()
        } else {
            self - other
        }
    }

    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }

    fn atan2(self, other: Self) -> Self {
        Extended::from_f64(libm::atan2(self.hi, other.hi))
    }

    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        Float::integer_decode(self.hi)
    }
}
