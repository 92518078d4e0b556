//! Truncated formal power series in Z-graded variables with exact
//! coefficients, plus graded derivations.
//!
//! Monomials are kept in a fixed canonical order (variable declaration
//! order); all Koszul reordering signs are absorbed into the coefficients.
//! Odd variables square to zero. A series carries a truncation order that
//! bounds the total polynomial degree in fiber and cofiber variables; base,
//! form and parameter variables are never truncated.

use crate::scalar::Scalar;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Role of a variable inside a coordinate system.
#[derive(Clone, Copy, PartialEq, Eq, Debug, PartialOrd, Ord)]
pub enum VarKind {
    /// Base coordinate `x^i` (always degree 0).
    Base,
    /// Fiber coordinate `y^i`.
    Fiber,
    /// Cofiber coordinate `xi_i` (cotangent partner of a fiber variable).
    Cofiber,
    /// One-form `dx^i` (degree +1).
    Form,
    /// Auxiliary even parameter (deformation time and the like); exempt
    /// from truncation and from the de Rham differential.
    Param,
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub degree: i64,
    pub kind: VarKind,
}

impl Variable {
    pub fn parity(&self) -> bool {
        self.degree.rem_euclid(2) == 1
    }
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum GradedError {
    #[error("coordinate system mismatch")]
    CoordsMismatch,
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("base variable `{0}` must have degree 0")]
    BaseDegree(String),
    #[error("form variable `{0}` must have degree 1")]
    FormDegree(String),
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("degree mismatch substituting for `{var}`: expected {expected}, got {got}")]
    SubstitutionDegree { var: String, expected: i64, got: i64 },
    #[error("missing assignment for generator `{0}`")]
    MissingAssignment(String),
    #[error("truncation mismatch: {0} vs {1}")]
    TruncMismatch(usize, usize),
}

/// An ordered list of graded variables. The declaration order fixes the
/// canonical monomial order once and for all.
#[derive(Debug)]
pub struct CoordinateSystem {
    vars: Vec<Variable>,
    by_name: BTreeMap<String, usize>,
}

pub type Coords = Arc<CoordinateSystem>;

impl CoordinateSystem {
    pub fn new(vars: Vec<Variable>) -> Result<Coords, GradedError> {
        let mut by_name = BTreeMap::new();
        for (i, v) in vars.iter().enumerate() {
            if by_name.insert(v.name.clone(), i).is_some() {
                return Err(GradedError::DuplicateName(v.name.clone()));
            }
            match v.kind {
                VarKind::Base if v.degree != 0 => {
                    return Err(GradedError::BaseDegree(v.name.clone()))
                }
                VarKind::Form if v.degree != 1 => {
                    return Err(GradedError::FormDegree(v.name.clone()))
                }
                _ => {}
            }
        }
        Ok(Arc::new(CoordinateSystem { vars, by_name }))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn var(&self, i: usize) -> &Variable {
        &self.vars[i]
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn indices_of_kind(&self, kind: VarKind) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&i| self.vars[i].kind == kind)
            .collect()
    }

    fn is_truncated(&self, i: usize) -> bool {
        matches!(self.vars[i].kind, VarKind::Fiber | VarKind::Cofiber)
    }
}

/// Exponent multi-index over a coordinate system. Odd variables only ever
/// carry exponent 0 or 1.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn unit(n: usize) -> Self {
        Monomial(vec![0; n])
    }

    pub fn var(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Monomial(e)
    }

    pub fn degree(&self, coords: &CoordinateSystem) -> i64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &e)| coords.var(i).degree * e as i64)
            .sum()
    }

    pub fn parity(&self, coords: &CoordinateSystem) -> bool {
        self.degree(coords).rem_euclid(2) == 1
    }

    /// Total polynomial degree in the truncated (fiber + cofiber) variables.
    pub fn trunc_degree(&self, coords: &CoordinateSystem) -> u32 {
        self.0
            .iter()
            .enumerate()
            .filter(|(i, _)| coords.is_truncated(*i))
            .map(|(_, &e)| e)
            .sum()
    }

    pub fn is_unit(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Koszul sign for multiplying canonical monomials `self * other`
    /// and re-sorting into canonical order; `None` when an odd variable
    /// would be squared.
    fn merge(&self, other: &Monomial, coords: &CoordinateSystem) -> Option<(Monomial, bool)> {
        let n = self.0.len();
        let mut out = vec![0u32; n];
        let mut swaps: u64 = 0;
        // Count, for each odd unit in `other`, the odd units of `self`
        // declared strictly after it.
        let mut odd_suffix: u64 = 0; // odd units of self with index > j, built backwards
        let mut suffix = vec![0u64; n + 1];
        for j in (0..n).rev() {
            suffix[j] = odd_suffix;
            if coords.var(j).parity() {
                odd_suffix += self.0[j] as u64;
            }
        }
        for j in 0..n {
            let a = self.0[j];
            let b = other.0[j];
            if a + b > 1 && coords.var(j).parity() {
                return None;
            }
            if b > 0 && coords.var(j).parity() {
                swaps += b as u64 * suffix[j];
            }
            out[j] = a + b;
        }
        Some((Monomial(out), swaps % 2 == 1))
    }
}

/// A truncated formal power series with [`Scalar`] coefficients.
#[derive(Clone, Debug)]
pub struct Series {
    coords: Coords,
    trunc: usize,
    terms: BTreeMap<Monomial, Scalar>,
}

impl PartialEq for Series {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.coords, &other.coords) && self.terms == other.terms
    }
}

impl Eq for Series {}

impl Series {
    pub fn zero(coords: &Coords, trunc: usize) -> Self {
        Series {
            coords: coords.clone(),
            trunc,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(coords: &Coords, trunc: usize, c: Scalar) -> Self {
        let mut s = Series::zero(coords, trunc);
        s.add_term(Monomial::unit(coords.len()), c);
        s
    }

    pub fn one(coords: &Coords, trunc: usize) -> Self {
        Series::constant(coords, trunc, Scalar::one())
    }

    pub fn generator(coords: &Coords, trunc: usize, i: usize) -> Self {
        let mut s = Series::zero(coords, trunc);
        s.add_term(Monomial::var(coords.len(), i), Scalar::one());
        s
    }

    pub fn generator_named(coords: &Coords, trunc: usize, name: &str) -> Result<Self, GradedError> {
        let i = coords
            .index_of(name)
            .ok_or_else(|| GradedError::UnknownGenerator(name.to_string()))?;
        Ok(Series::generator(coords, trunc, i))
    }

    pub fn coords(&self) -> &Coords {
        &self.coords
    }

    pub fn trunc(&self) -> usize {
        self.trunc
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Scalar)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> Scalar {
        self.terms.get(m).cloned().unwrap_or_else(Scalar::zero)
    }

    /// Adds `c * m`, dropping monomials that violate odd nilpotency or the
    /// truncation bound.
    pub fn add_term(&mut self, m: Monomial, c: Scalar) {
        if c.is_zero() {
            return;
        }
        for (i, &e) in m.0.iter().enumerate() {
            if e > 1 && self.coords.var(i).parity() {
                return;
            }
        }
        if m.trunc_degree(&self.coords) as usize > self.trunc {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(acc) => {
                *acc += c;
                if acc.is_zero() {
                    self.terms.remove(&m);
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    pub fn scale(&self, c: &Scalar) -> Series {
        let mut out = Series::zero(&self.coords, self.trunc);
        for (m, a) in &self.terms {
            out.add_term(m.clone(), a.mul_ref(c));
        }
        out
    }

    pub fn add(&self, other: &Series) -> Result<Series, GradedError> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Series) -> Result<Series, GradedError> {
        self.add(&other.scale(&Scalar::from_int(-1)))
    }

    fn check_same(&self, other: &Series) -> Result<(), GradedError> {
        if !Arc::ptr_eq(&self.coords, &other.coords) {
            return Err(GradedError::CoordsMismatch);
        }
        if self.trunc != other.trunc {
            return Err(GradedError::TruncMismatch(self.trunc, other.trunc));
        }
        Ok(())
    }

    /// Graded-commutative product, truncated.
    pub fn mul(&self, other: &Series) -> Result<Series, GradedError> {
        self.check_same(other)?;
        let mut out = Series::zero(&self.coords, self.trunc);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                if let Some((m, flip)) = ma.merge(mb, &self.coords) {
                    let mut c = ca.mul_ref(cb);
                    if flip {
                        c = -c;
                    }
                    out.add_term(m, c);
                }
            }
        }
        Ok(out)
    }

    /// Left partial derivative with respect to generator `v`.
    pub fn derive(&self, v: usize) -> Series {
        assert!(v < self.coords.len(), "generator index out of range");
        let odd_v = self.coords.var(v).parity();
        let mut out = Series::zero(&self.coords, self.trunc);
        for (m, c) in &self.terms {
            let e = m.0[v];
            if e == 0 {
                continue;
            }
            let mut m2 = m.clone();
            m2.0[v] = e - 1;
            let mut coeff = c.scale_int(e as i64);
            if odd_v {
                // Move d/dv from the left past the odd prefix of the monomial.
                let prefix_odd: u64 = (0..v)
                    .filter(|&i| self.coords.var(i).parity())
                    .map(|i| m.0[i] as u64)
                    .sum();
                if prefix_odd % 2 == 1 {
                    coeff = -coeff;
                }
            }
            out.add_term(m2, coeff);
        }
        out
    }

    /// Right partial derivative with respect to generator `v`.
    pub fn derive_right(&self, v: usize) -> Series {
        assert!(v < self.coords.len(), "generator index out of range");
        let odd_v = self.coords.var(v).parity();
        let mut out = Series::zero(&self.coords, self.trunc);
        for (m, c) in &self.terms {
            let e = m.0[v];
            if e == 0 {
                continue;
            }
            let mut m2 = m.clone();
            m2.0[v] = e - 1;
            let mut coeff = c.scale_int(e as i64);
            if odd_v {
                // Move d/dv from the right past the odd suffix of the monomial.
                let suffix_odd: u64 = (v + 1..self.coords.len())
                    .filter(|&i| self.coords.var(i).parity())
                    .map(|i| m.0[i] as u64)
                    .sum();
                if suffix_odd % 2 == 1 {
                    coeff = -coeff;
                }
            }
            out.add_term(m2, coeff);
        }
        out
    }

    pub fn derive_named(&self, name: &str) -> Result<Series, GradedError> {
        let i = self
            .coords
            .index_of(name)
            .ok_or_else(|| GradedError::UnknownGenerator(name.to_string()))?;
        Ok(self.derive(i))
    }

    /// Internal Z-degree when the series is homogeneous.
    pub fn homogeneous_degree(&self) -> Option<i64> {
        let mut deg = None;
        for m in self.terms.keys() {
            let d = m.degree(&self.coords);
            match deg {
                None => deg = Some(d),
                Some(old) if old != d => return None,
                _ => {}
            }
        }
        deg
    }

    /// Parity when all monomials agree mod 2 (weaker than homogeneity).
    pub fn uniform_parity(&self) -> Option<bool> {
        let mut par = None;
        for m in self.terms.keys() {
            let p = m.parity(&self.coords);
            match par {
                None => par = Some(p),
                Some(old) if old != p => return None,
                _ => {}
            }
        }
        par
    }

    /// Substitutes a series for every generator occurring in `self`.
    /// Each assigned series must match the degree of its generator.
    pub fn substitute(&self, assignment: &BTreeMap<usize, Series>) -> Result<Series, GradedError> {
        for (&v, sub) in assignment {
            if v >= self.coords.len() {
                return Err(GradedError::UnknownGenerator(format!("#{}", v)));
            }
            let var = self.coords.var(v);
            if let Some(d) = sub.homogeneous_degree() {
                if d != var.degree {
                    return Err(GradedError::SubstitutionDegree {
                        var: var.name.clone(),
                        expected: var.degree,
                        got: d,
                    });
                }
            } else if !sub.is_zero() {
                return Err(GradedError::SubstitutionDegree {
                    var: var.name.clone(),
                    expected: var.degree,
                    got: i64::MIN,
                });
            }
        }
        let mut out = Series::zero(&self.coords, self.trunc);
        for (m, c) in &self.terms {
            // Multiply substituted factors in canonical order; since each
            // factor has the degree of the generator it replaces, Koszul
            // bookkeeping matches the original monomial's.
            let mut acc = Series::constant(&self.coords, self.trunc, c.clone());
            for (i, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let factor = match assignment.get(&i) {
                    Some(s) => s.clone(),
                    None => {
                        return Err(GradedError::MissingAssignment(
                            self.coords.var(i).name.clone(),
                        ))
                    }
                };
                for _ in 0..e {
                    acc = acc.mul(&factor)?;
                    if acc.is_zero() {
                        break;
                    }
                }
                if acc.is_zero() {
                    break;
                }
            }
            out = out.add(&acc)?;
        }
        Ok(out)
    }

    /// Identity assignment on all generators, ready to be overridden.
    pub fn identity_assignment(coords: &Coords, trunc: usize) -> BTreeMap<usize, Series> {
        (0..coords.len())
            .map(|i| (i, Series::generator(coords, trunc, i)))
            .collect()
    }

    /// Drops all monomials whose truncated degree exceeds `order`.
    pub fn truncate_to(&self, order: usize) -> Series {
        let mut out = Series::zero(&self.coords, self.trunc);
        for (m, c) in &self.terms {
            if (m.trunc_degree(&self.coords) as usize) <= order {
                out.add_term(m.clone(), c.clone());
            }
        }
        out
    }

    /// Restriction to the part with zero exponent on every fiber/cofiber
    /// variable (the "value at y = 0").
    pub fn vertical_constant_part(&self) -> Series {
        self.truncate_to(0)
    }

    pub fn render(&self) -> String {
        format!("{}", self)
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, "  +  ")?;
            }
            first = false;
            write!(f, "({})", c)?;
            for (i, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if e == 1 {
                    write!(f, " {}", self.coords.var(i).name)?;
                } else {
                    write!(f, " {}^{}", self.coords.var(i).name, e)?;
                }
            }
        }
        Ok(())
    }
}

/// A graded derivation, stored through its action on the generators.
#[derive(Clone, Debug)]
pub struct Derivation {
    coords: Coords,
    pub degree: i64,
    /// `components[v]` is D(v); absent entries act as zero.
    components: BTreeMap<usize, Series>,
}

impl Derivation {
    pub fn new(
        coords: &Coords,
        degree: i64,
        components: BTreeMap<usize, Series>,
    ) -> Result<Self, GradedError> {
        for (&v, comp) in &components {
            if v >= coords.len() {
                return Err(GradedError::UnknownGenerator(format!("#{}", v)));
            }
            if !Arc::ptr_eq(comp.coords(), coords) {
                return Err(GradedError::CoordsMismatch);
            }
        }
        Ok(Derivation {
            coords: coords.clone(),
            degree,
            components,
        })
    }

    pub fn coords(&self) -> &Coords {
        &self.coords
    }

    pub fn component(&self, v: usize) -> Option<&Series> {
        self.components.get(&v)
    }

    /// D(f) = sum_v D(v) * d_left f / d v.
    pub fn apply(&self, f: &Series) -> Result<Series, GradedError> {
        if !Arc::ptr_eq(&self.coords, f.coords()) {
            return Err(GradedError::CoordsMismatch);
        }
        let mut out = Series::zero(f.coords(), f.trunc());
        for (&v, comp) in &self.components {
            let df = f.derive(v);
            if df.is_zero() {
                continue;
            }
            let comp = if comp.trunc() == f.trunc() {
                comp.clone()
            } else {
                let mut c = Series::zero(f.coords(), f.trunc());
                for (m, s) in comp.terms() {
                    c.add_term(m.clone(), s.clone());
                }
                c
            };
            out = out.add(&comp.mul(&df)?)?;
        }
        Ok(out)
    }

    /// Graded commutator [D1, D2] = D1 D2 - (-1)^{|D1||D2|} D2 D1, returned
    /// through its action on generators.
    pub fn commutator(&self, other: &Derivation) -> Result<Derivation, GradedError> {
        if !Arc::ptr_eq(&self.coords, &other.coords) {
            return Err(GradedError::CoordsMismatch);
        }
        let sign = (self.degree * other.degree).rem_euclid(2) == 1;
        let mut components = BTreeMap::new();
        let keys: std::collections::BTreeSet<usize> = self
            .components
            .keys()
            .chain(other.components.keys())
            .copied()
            .collect();
        // [D1,D2](v) needs D1 applied to D2(v) and vice versa; components of
        // either may involve any generator, so apply the full derivations.
        for v in keys {
            let trunc = self
                .components
                .values()
                .chain(other.components.values())
                .map(|s| s.trunc())
                .next()
                .unwrap_or(0);
            let d2v = other
                .components
                .get(&v)
                .cloned()
                .unwrap_or_else(|| Series::zero(&self.coords, trunc));
            let d1v = self
                .components
                .get(&v)
                .cloned()
                .unwrap_or_else(|| Series::zero(&self.coords, trunc));
            let a = self.apply(&d2v)?;
            let b = other.apply(&d1v)?;
            let term = if sign { a.add(&b)? } else { a.sub(&b)? };
            if !term.is_zero() {
                components.insert(v, term);
            }
        }
        Derivation::new(&self.coords, self.degree + other.degree, components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords_two_odd() -> Coords {
        CoordinateSystem::new(vec![
            Variable { name: "y1".into(), degree: 1, kind: VarKind::Fiber },
            Variable { name: "y2".into(), degree: 1, kind: VarKind::Fiber },
            Variable { name: "y3".into(), degree: 1, kind: VarKind::Fiber },
        ])
        .unwrap()
    }

    fn coords_even() -> Coords {
        CoordinateSystem::new(vec![
            Variable { name: "y1".into(), degree: 0, kind: VarKind::Fiber },
            Variable { name: "y2".into(), degree: 0, kind: VarKind::Fiber },
        ])
        .unwrap()
    }

    #[test]
    fn odd_nilpotency() {
        let c = coords_two_odd();
        let y1 = Series::generator(&c, 4, 0);
        assert!(y1.mul(&y1).unwrap().is_zero());
    }

    #[test]
    fn koszul_sign_on_swap() {
        let c = coords_two_odd();
        let y1 = Series::generator(&c, 4, 0);
        let y2 = Series::generator(&c, 4, 1);
        let ab = y1.mul(&y2).unwrap();
        let ba = y2.mul(&y1).unwrap();
        assert_eq!(ab, ba.scale(&Scalar::from_int(-1)));
        let m = Monomial(vec![1, 1, 0]);
        assert_eq!(ab.coeff(&m), Scalar::one());
    }

    #[test]
    fn hand_expansion_with_truncation() {
        // (2 + y1)(3 y1) = 6 y1 + 3 y1^2 over an even y1.
        let c = coords_even();
        let y1 = Series::generator(&c, 4, 0);
        let f = Series::constant(&c, 4, Scalar::from_int(2)).add(&y1).unwrap();
        let g = y1.scale(&Scalar::from_int(3));
        let p = f.mul(&g).unwrap();
        assert_eq!(p.coeff(&Monomial(vec![1, 0])), Scalar::from_int(6));
        assert_eq!(p.coeff(&Monomial(vec![2, 0])), Scalar::from_int(3));
        // Truncation below degree 2 drops the square.
        let c1 = coords_even();
        let y1t = Series::generator(&c1, 1, 0);
        let ft = Series::constant(&c1, 1, Scalar::from_int(2)).add(&y1t).unwrap();
        let pt = ft.mul(&y1t.scale(&Scalar::from_int(3))).unwrap();
        assert_eq!(pt.coeff(&Monomial(vec![1, 0])), Scalar::from_int(6));
        assert_eq!(pt.coeff(&Monomial(vec![2, 0])), Scalar::zero());
    }

    #[test]
    fn substitution_identity_and_expansion() {
        let c = coords_two_odd();
        let y1 = Series::generator(&c, 4, 0);
        let y2 = Series::generator(&c, 4, 1);
        let f = y1.mul(&y2).unwrap();
        let id = Series::identity_assignment(&c, 4);
        assert_eq!(f.substitute(&id).unwrap(), f);

        // (y1)^2 with y1 -> y1 + y2^2 over even variables.
        let ce = coords_even();
        let e1 = Series::generator(&ce, 4, 0);
        let e2 = Series::generator(&ce, 4, 1);
        let f = e1.mul(&e1).unwrap();
        let mut asg = Series::identity_assignment(&ce, 4);
        asg.insert(0, e1.add(&e2.mul(&e2).unwrap()).unwrap());
        let g = f.substitute(&asg).unwrap();
        assert_eq!(g.coeff(&Monomial(vec![2, 0])), Scalar::one());
        assert_eq!(g.coeff(&Monomial(vec![1, 2])), Scalar::from_int(2));
        assert_eq!(g.coeff(&Monomial(vec![0, 4])), Scalar::one());
    }

    #[test]
    fn substitution_degree_mismatch_rejected() {
        let c = coords_two_odd();
        let y1 = Series::generator(&c, 4, 0);
        let y2 = Series::generator(&c, 4, 1);
        let y3 = Series::generator(&c, 4, 2);
        let mut asg = Series::identity_assignment(&c, 4);
        asg.insert(0, y2.mul(&y3).unwrap()); // degree 2 replaces degree 1
        assert!(matches!(
            y1.substitute(&asg),
            Err(GradedError::SubstitutionDegree { .. })
        ));
    }

    #[test]
    fn left_derivative_signs() {
        let c = coords_two_odd();
        let y1 = Series::generator(&c, 4, 0);
        let y2 = Series::generator(&c, 4, 1);
        let f = y1.mul(&y2).unwrap();
        // d/dy1 (y1 y2) = y2
        assert_eq!(f.derive(0), y2);
        // d/dy2 (y1 y2) = -y1 (reorder past the odd y1)
        assert_eq!(f.derive(1), y1.scale(&Scalar::from_int(-1)));
        // Odd second derivative vanishes.
        assert!(f.derive(0).derive(0).is_zero());

        let ce = coords_even();
        let e1 = Series::generator(&ce, 4, 0);
        let cube = e1.mul(&e1).unwrap().mul(&e1).unwrap();
        let d = cube.derive(0);
        assert_eq!(d.coeff(&Monomial(vec![2, 0])), Scalar::from_int(3));
    }

    #[test]
    fn right_derivative_signs() {
        let c = coords_two_odd();
        let y1 = Series::generator(&c, 4, 0);
        let y2 = Series::generator(&c, 4, 1);
        let f = y1.mul(&y2).unwrap();
        // Right d/dy1 (y1 y2): move past the odd suffix y2.
        assert_eq!(f.derive_right(0), y2.scale(&Scalar::from_int(-1)));
        assert_eq!(f.derive_right(1), y1);
    }

    #[test]
    fn derivation_commutators() {
        // [d/dy1, d/dy1] = 2 (d/dy1)^2 = 0 for odd y1.
        let c = coords_two_odd();
        let one = Series::one(&c, 4);
        let d1 = Derivation::new(&c, -1, [(0usize, one.clone())].into()).unwrap();
        let sq = d1.commutator(&d1).unwrap();
        let probe = Series::generator(&c, 4, 0)
            .mul(&Series::generator(&c, 4, 1))
            .unwrap();
        assert!(sq.apply(&probe).unwrap().is_zero());

        // Even case: [y1 d/dy2, y2 d/dy1] = y1 d/dy1 - y2 d/dy2.
        let ce = coords_even();
        let e1 = Series::generator(&ce, 4, 0);
        let e2 = Series::generator(&ce, 4, 1);
        let da = Derivation::new(&ce, 0, [(1usize, e1.clone())].into()).unwrap();
        let db = Derivation::new(&ce, 0, [(0usize, e2.clone())].into()).unwrap();
        let comm = da.commutator(&db).unwrap();
        assert_eq!(comm.component(0), Some(&e1));
        assert_eq!(comm.component(1), Some(&e2.scale(&Scalar::from_int(-1))));
    }
}
