//! Double-double scalar: an unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`,
//! giving roughly 106 bits of significand.
//!
//! Only what the finite-difference reference needs runs at full precision:
//! `+ − × ÷`, `sqrt`, `exp`, `ln`, comparisons, `abs`, `max`/`min`. Other
//! `Float` methods (trigonometry and friends) fall back to `f64` on `hi`.

use std::cmp::Ordering;
use std::fmt;
use std::num::FpCategory;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign,
};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

#[derive(Clone, Copy, Default)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const fn of(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub const fn from_parts_unchecked(hi: f64, lo: f64) -> Self {
        Dd { hi, lo }
    }

    /// Normalizes `hi + lo`.
    pub fn new(hi: f64, lo: f64) -> Self {
        let (h, l) = two_sum(hi, lo);
        Dd::finish(h, l)
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    #[inline]
    fn finish(hi: f64, lo: f64) -> Self {
        if hi.is_finite() {
            Dd { hi, lo }
        } else {
            Dd { hi, lo: 0.0 }
        }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let (h, l) = quick_two_sum(p, e + self.lo * b);
        Dd::finish(h, l)
    }

    fn ldexp(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Dd::finish(self.hi * f, self.lo * f)
    }
}

const LN2: Dd = Dd::from_parts_unchecked(std::f64::consts::LN_2, 2.319_046_813_846_299_6e-17);

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (h, l) = quick_two_sum(s, e + f);
        Dd::finish(h, l)
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (h, l) = quick_two_sum(p, e);
        Dd::finish(h, l)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        // Long division: three f64 quotient digits.
        let q1 = self.hi / b.hi;
        if !q1.is_finite() || q1 == 0.0 {
            return Dd::of(q1);
        }
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (h, l) = quick_two_sum(q1, q2);
        Dd::new(h, l) + Dd::of(q3)
    }
}

impl Rem for Dd {
    type Output = Dd;
    fn rem(self, b: Dd) -> Dd {
        self - (self / b).trunc() * b
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl $tr for Dd {
            #[inline]
            fn $m(&mut self, b: Dd) {
                *self = *self $op b;
            }
        }
    )*};
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /, RemAssign rem_assign %);

impl PartialEq for Dd {
    fn eq(&self, o: &Dd) -> bool {
        self.hi == o.hi && self.lo == o.lo
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, o: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&o.lo),
            ord => Some(ord),
        }
    }
}

impl fmt::Debug for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dd({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.hi, f)
    }
}

impl fmt::LowerExp for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerExp::fmt(&self.hi, f)
    }
}

impl Zero for Dd {
    fn zero() -> Dd {
        Dd::of(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for Dd {
    fn one() -> Dd {
        Dd::of(1.0)
    }
}

impl Num for Dd {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Dd, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Dd::of)
    }
}

impl ToPrimitive for Dd {
    fn to_i64(&self) -> Option<i64> {
        self.trunc().hi.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.trunc().hi.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi)
    }
}

impl FromPrimitive for Dd {
    fn from_i64(n: i64) -> Option<Dd> {
        let hi = n as f64;
        Some(Dd::new(hi, (n - hi as i64) as f64))
    }
    fn from_u64(n: u64) -> Option<Dd> {
        let hi = n as f64;
        Some(Dd::new(hi, (n as i128 - hi as i128) as f64))
    }
    fn from_f64(v: f64) -> Option<Dd> {
        Some(Dd::of(v))
    }
}

impl NumCast for Dd {
    fn from<T: ToPrimitive>(n: T) -> Option<Dd> {
        n.to_f64().map(Dd::of)
    }
}

fn exp(x: Dd) -> Dd {
    if x.hi.is_nan() {
        return x;
    }
    if x.hi > 709.0 {
        return Dd::of(f64::INFINITY);
    }
    if x.hi < -745.0 {
        return Dd::zero();
    }
    let k = (x.hi / LN2.hi).round();
    // |r| ≤ ln2/2, shrunk by 2^-5; each squaring below doubles the error.
    let r = (x - LN2.mul_f64(k)).ldexp(-5);
    let mut term = Dd::one();
    let mut sum = Dd::one();
    for n in 1..=16 {
        term = term * r / Dd::of(n as f64);
        sum += term;
    }
    for _ in 0..5 {
        sum = sum * sum;
    }
    sum.ldexp(k as i32)
}

fn ln(x: Dd) -> Dd {
    if x.hi.is_nan() || x.hi <= 0.0 || x.hi.is_infinite() {
        return Dd::of(x.hi.ln());
    }
    // Newton on exp(y) = x, doubling the correct digits each round.
    let mut y = Dd::of(x.hi.ln());
    for _ in 0..2 {
        y = y + x * exp(-y) - Dd::one();
    }
    y
}

fn sqrt(x: Dd) -> Dd {
    if x.hi <= 0.0 || !x.hi.is_finite() {
        return Dd::of(x.hi.sqrt());
    }
    let s = x.hi.sqrt();
    let (p, e) = two_prod(s, s);
    let r = (x - Dd::new(p, e)).hi;
    Dd::new(s, r / (2.0 * s))
}

macro_rules! via_f64 {
    ($($m:ident),*) => {$(
        fn $m(self) -> Dd {
            Dd::of(self.hi.$m())
        }
    )*};
}

impl Float for Dd {
    fn nan() -> Dd {
        Dd::of(f64::NAN)
    }
    fn infinity() -> Dd {
        Dd::of(f64::INFINITY)
    }
    fn neg_infinity() -> Dd {
        Dd::of(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Dd {
        Dd::of(-0.0)
    }
    fn min_value() -> Dd {
        Dd::of(f64::MIN)
    }
    fn min_positive_value() -> Dd {
        Dd::of(f64::MIN_POSITIVE)
    }
    fn max_value() -> Dd {
        Dd::of(f64::MAX)
    }
    fn epsilon() -> Dd {
        Dd::of(f64::EPSILON * f64::EPSILON)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Dd {
        let h = self.hi.floor();
        if h == self.hi {
            Dd::new(h, self.lo.floor())
        } else {
            Dd::of(h)
        }
    }
    fn ceil(self) -> Dd {
        -(-self).floor()
    }
    fn round(self) -> Dd {
        (self + Dd::of(0.5)).floor()
    }
    fn trunc(self) -> Dd {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }
    fn fract(self) -> Dd {
        self - self.trunc()
    }
    fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Dd {
        Dd::of(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Dd, b: Dd) -> Dd {
        self * a + b
    }
    fn recip(self) -> Dd {
        Dd::one() / self
    }
    fn powi(self, n: i32) -> Dd {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = Dd::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }
    fn powf(self, n: Dd) -> Dd {
        exp(n * ln(self))
    }
    fn sqrt(self) -> Dd {
        sqrt(self)
    }
    fn exp(self) -> Dd {
        exp(self)
    }
    fn exp2(self) -> Dd {
        exp(self * LN2)
    }
    fn ln(self) -> Dd {
        ln(self)
    }
    fn log(self, base: Dd) -> Dd {
        ln(self) / ln(base)
    }
    fn log2(self) -> Dd {
        ln(self) / LN2
    }
    fn log10(self) -> Dd {
        ln(self) / ln(Dd::of(10.0))
    }
    fn max(self, o: Dd) -> Dd {
        if self.is_nan() || o > self {
            o
        } else {
            self
        }
    }
    fn min(self, o: Dd) -> Dd {
        if self.is_nan() || o < self {
            o
        } else {
            self
        }
    }
    fn abs_sub(self, o: Dd) -> Dd {
        if self > o {
            self - o
        } else {
            Dd::zero()
        }
    }
    fn hypot(self, o: Dd) -> Dd {
        sqrt(self * self + o * o)
    }
    fn atan2(self, o: Dd) -> Dd {
        Dd::of(self.hi.atan2(o.hi))
    }
    fn sin_cos(self) -> (Dd, Dd) {
        (self.sin(), self.cos())
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }
    via_f64!(
        cbrt, sin, cos, tan, asin, acos, atan, exp_m1, ln_1p, sinh, cosh, tanh, asinh, acosh, atanh
    );
}
