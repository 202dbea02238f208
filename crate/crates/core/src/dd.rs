//! Double-double arithmetic (~106-bit significand) for reference
//! computations where `f64` rounding would swamp the quantity of interest,
//! such as central differences of a loss.
//!
//! Each value is an unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

const TAYLOR_TERMS: usize = 9;

/// `1/n!` for `n = 0..=TAYLOR_TERMS`.
fn inverse_factorials() -> &'static [Dd; TAYLOR_TERMS + 1] {
    static TABLE: OnceLock<[Dd; TAYLOR_TERMS + 1]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [Dd::ONE; TAYLOR_TERMS + 1];
        for n in 1..=TAYLOR_TERMS {
            t[n] = t[n - 1] / Dd::new(n as f64);
        }
        t
    })
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
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn is_positive(self) -> bool {
        self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
    }

    /// Multiplication by `2^k`, exact barring overflow.
    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Dd::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        const SQUARINGS: i32 = 10;
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::new(k)).ldexp(-SQUARINGS);
        // expm1(r) by Taylor series in Horner form; |r| < 3.4e-4 so the
        // truncation after r^9/9! is far below double-double precision.
        let inv = inverse_factorials();
        let mut sum = inv[TAYLOR_TERMS];
        for n in (1..TAYLOR_TERMS).rev() {
            sum = sum * r + inv[n];
        }
        let mut sum = sum * r;
        // expm1(2x) = 2·expm1(x) + expm1(x)²
        for _ in 0..SQUARINGS {
            sum = sum.ldexp(1) + sum * sum;
        }
        (sum + Dd::ONE).ldexp(k as i32)
    }

    /// Natural log by Newton refinement of the `f64` estimate.
    pub fn ln(self) -> Self {
        let mut y = Dd::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    pub fn tanh(self) -> Self {
        let t = (self.abs().ldexp(1)).neg().exp();
        let v = (Dd::ONE - t) / (Dd::ONE + t);
        if self.hi < 0.0 {
            -v
        } else {
            v
        }
    }

    pub fn sigmoid(self) -> Self {
        if self.hi >= 0.0 {
            Dd::ONE / (Dd::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Dd::ONE + e)
        }
    }

    pub fn max(self, other: Self) -> Self {
        if other.partial_cmp(&self) == Some(Ordering::Greater) {
            other
        } else {
            self
        }
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd::new(x)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, b: Dd) {
        *self = *self + b;
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, b.hi);
        let p2 = p2 + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::new(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: Dd, b: Dd) -> f64 {
        ((a - b).to_f64() / b.to_f64()).abs()
    }

    #[test]
    fn arithmetic_keeps_low_order_bits() {
        let third = Dd::ONE / Dd::new(3.0);
        let back = third * Dd::new(3.0);
        assert!((back - Dd::ONE).to_f64().abs() < 1e-31);
        let tiny = Dd::new(1.0) + Dd::new(1e-20);
        assert_eq!((tiny - Dd::ONE).to_f64(), 1e-20);
    }

    #[test]
    fn exp_ln_agree_with_f64_and_each_other() {
        for &x in &[-30.0, -2.5, -1e-3, 0.0, 1e-7, 0.5, 1.0, 7.25, 40.0] {
            let e = Dd::new(x).exp();
            assert!((e.to_f64() - x.exp()).abs() <= 4.0 * f64::EPSILON * x.exp());
            let back = e.ln();
            assert!((back - Dd::new(x)).to_f64().abs() < 1e-29 * x.abs().max(1.0), "x={x}");
        }
        // e to 32 digits
        let e = Dd {
            hi: std::f64::consts::E,
            lo: 1.445_646_891_729_250_2e-16,
        };
        assert!(rel(Dd::ONE.exp(), e) < 1e-31);
    }

    #[test]
    fn tanh_and_sigmoid() {
        for &x in &[-20.0, -0.7, -1e-4, 0.0, 1e-4, 0.7, 3.0, 20.0] {
            assert!((Dd::new(x).tanh().to_f64() - f64::tanh(x)).abs() < 4e-16);
            let s = Dd::new(x).sigmoid().to_f64();
            assert!((s - 1.0 / (1.0 + (-x).exp())).abs() < 4e-16);
            let sym = Dd::new(x).sigmoid() + Dd::new(-x).sigmoid() - Dd::ONE;
            assert!(sym.to_f64().abs() < 1e-30);
        }
        let t = Dd::new(-0.7).tanh() + Dd::new(0.7).tanh();
        assert_eq!(t.to_f64(), 0.0);
    }
}
