//! The exact coefficient ring for all series and graph weights: Laurent
//! polynomials in `h` (Planck constant) over the Gaussian rationals,
//! i.e. Q(i)[h, h^-1].
//!
//! Every quantity in this crate that is "a number" is a [`Scalar`]. There is
//! no floating point anywhere; equality with zero is decidable and exact.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// A Gaussian rational `re + im*i` with exact rational parts.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct GaussRat {
    pub re: BigRational,
    pub im: BigRational,
}

impl GaussRat {
    pub fn new(re: BigRational, im: BigRational) -> Self {
        GaussRat { re, im }
    }

    pub fn from_int(n: i64) -> Self {
        GaussRat {
            re: BigRational::from_integer(BigInt::from(n)),
            im: BigRational::zero(),
        }
    }

    pub fn from_frac(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        GaussRat {
            re: BigRational::new(BigInt::from(num), BigInt::from(den)),
            im: BigRational::zero(),
        }
    }

    /// The imaginary unit.
    pub fn i() -> Self {
        GaussRat {
            re: BigRational::zero(),
            im: BigRational::one(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        GaussRat {
            re: self.re.clone(),
            im: -self.im.clone(),
        }
    }

    /// Multiplicative inverse; panics on zero.
    pub fn inv(&self) -> Self {
        let norm = &self.re * &self.re + &self.im * &self.im;
        assert!(!norm.is_zero(), "division by zero in GaussRat");
        GaussRat {
            re: &self.re / &norm,
            im: -&self.im / &norm,
        }
    }

    fn mul_ref(&self, other: &GaussRat) -> GaussRat {
        GaussRat {
            re: &self.re * &other.re - &self.im * &other.im,
            im: &self.re * &other.im + &self.im * &other.re,
        }
    }
}

impl Add for GaussRat {
    type Output = GaussRat;
    fn add(self, rhs: GaussRat) -> GaussRat {
        GaussRat {
            re: self.re + rhs.re,
            im: self.im + rhs.im,
        }
    }
}

impl Neg for GaussRat {
    type Output = GaussRat;
    fn neg(self) -> GaussRat {
        GaussRat {
            re: -self.re,
            im: -self.im,
        }
    }
}

impl Mul for GaussRat {
    type Output = GaussRat;
    fn mul(self, rhs: GaussRat) -> GaussRat {
        self.mul_ref(&rhs)
    }
}

fn fmt_rat(r: &BigRational) -> String {
    if r.denom().is_one() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for GaussRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            return write!(f, "{}", fmt_rat(&self.re));
        }
        if self.re.is_zero() {
            if self.im.is_one() {
                return write!(f, "i");
            }
            if (-self.im.clone()).is_one() {
                return write!(f, "-i");
            }
            return write!(f, "{}*i", fmt_rat(&self.im));
        }
        let sign = if self.im.is_negative() { "-" } else { "+" };
        let abs_im = self.im.abs();
        if abs_im.is_one() {
            write!(f, "({}{}i)", fmt_rat(&self.re), sign)
        } else {
            write!(f, "({}{}{}*i)", fmt_rat(&self.re), sign, fmt_rat(&abs_im))
        }
    }
}

/// An element of Q(i)[h, h^-1]: a finite sum of Gaussian-rational
/// multiples of integer powers of `h`.
///
/// Stored sparsely by `h`-exponent; zero coefficients are never kept.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Scalar {
    terms: BTreeMap<i64, GaussRat>,
}

impl Scalar {
    pub fn zero() -> Self {
        Scalar {
            terms: BTreeMap::new(),
        }
    }

    pub fn one() -> Self {
        Scalar::from_int(1)
    }

    pub fn from_int(n: i64) -> Self {
        Scalar::term(GaussRat::from_int(n), 0)
    }

    pub fn from_frac(num: i64, den: i64) -> Self {
        Scalar::term(GaussRat::from_frac(num, den), 0)
    }

    pub fn i() -> Self {
        Scalar::term(GaussRat::i(), 0)
    }

    /// The generator `h` (one power of the Planck constant).
    pub fn hbar() -> Self {
        Scalar::term(GaussRat::from_int(1), 1)
    }

    /// A single term `c * h^k`.
    pub fn term(c: GaussRat, k: i64) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(k, c);
        }
        Scalar { terms }
    }

    /// `(-i h)^k` for integer `k` (negative allowed), the per-loop weight.
    pub fn neg_i_hbar_pow(k: i64) -> Self {
        // (-i)^k cycles with period 4; (-i)^-1 = i.
        let unit = match k.rem_euclid(4) {
            0 => GaussRat::from_int(1),
            1 => -GaussRat::i(),
            2 => GaussRat::from_int(-1),
            _ => GaussRat::i(),
        };
        Scalar::term(unit, k)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when the element is a single term `c * h^k`.
    pub fn is_monomial(&self) -> bool {
        self.terms.len() == 1
    }

    /// Inverse of a monomial element; `None` for zero or genuine sums.
    pub fn inv_monomial(&self) -> Option<Scalar> {
        if self.terms.len() != 1 {
            return None;
        }
        let (k, c) = self.terms.iter().next().unwrap();
        Some(Scalar::term(c.inv(), -k))
    }

    /// Lowest and highest `h`-exponents present, if nonzero.
    pub fn hbar_range(&self) -> Option<(i64, i64)> {
        let lo = self.terms.keys().next()?;
        let hi = self.terms.keys().next_back()?;
        Some((*lo, *hi))
    }

    /// Coefficient of `h^k`.
    pub fn coeff_of_hbar(&self, k: i64) -> GaussRat {
        self.terms.get(&k).cloned().unwrap_or_default()
    }

    pub fn scale_int(&self, n: i64) -> Scalar {
        self.mul_ref(&Scalar::from_int(n))
    }

    pub fn mul_ref(&self, other: &Scalar) -> Scalar {
        let mut out: BTreeMap<i64, GaussRat> = BTreeMap::new();
        for (ka, ca) in &self.terms {
            for (kb, cb) in &other.terms {
                let k = ka + kb;
                let c = ca.mul_ref(cb);
                match out.get_mut(&k) {
                    Some(acc) => *acc = acc.clone() + c,
                    None => {
                        out.insert(k, c);
                    }
                }
            }
        }
        out.retain(|_, c| !c.is_zero());
        Scalar { terms: out }
    }

    fn add_assign_ref(&mut self, other: &Scalar) {
        for (k, c) in &other.terms {
            match self.terms.get_mut(k) {
                Some(acc) => {
                    *acc = acc.clone() + c.clone();
                    if acc.is_zero() {
                        self.terms.remove(k);
                    }
                }
                None => {
                    self.terms.insert(*k, c.clone());
                }
            }
        }
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(mut self, rhs: Scalar) -> Scalar {
        self.add_assign_ref(&rhs);
        self
    }
}

impl AddAssign for Scalar {
    fn add_assign(&mut self, rhs: Scalar) {
        self.add_assign_ref(&rhs);
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    fn sub(self, rhs: Scalar) -> Scalar {
        self + (-rhs)
    }
}

impl SubAssign for Scalar {
    fn sub_assign(&mut self, rhs: Scalar) {
        self.add_assign_ref(&(-rhs));
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar {
            terms: self.terms.into_iter().map(|(k, c)| (k, -c)).collect(),
        }
    }
}

impl Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        Scalar::mul_ref(&self, &rhs)
    }
}

impl MulAssign for Scalar {
    fn mul_assign(&mut self, rhs: Scalar) {
        *self = Scalar::mul_ref(self, &rhs);
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "{}", c)?,
                1 => write!(f, "{}*h", c)?,
                _ => write!(f, "{}*h^{}", c, k)?,
            }
        }
        Ok(())
    }
}
