//! Finite-dimensional odd-symplectic BV calculus: the BV Laplacian, the
//! odd bracket it generates, BV integrals over gauge-fixing Lagrangians
//! with exact Gaussian-Berezin evaluation, the quantum master equation and
//! the BV pushforward.
//!
//! The even Gaussian sector is always relative to a declared normalization
//! unit: the bare Gaussian volume is a formal symbol set to 1, so every
//! statement proved here is of the form "this combination vanishes" or
//! "these two evaluations agree".

use crate::graded::{
    CoordinateSystem, Coords, GradedError, Series, VarKind, Variable,
};
use crate::scalar::{GaussRat, Scalar};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum BvError {
    #[error("psi must be an odd function of the q variables only")]
    BadGaugeFermion,
    #[error("quadratic form must be symmetric over even q variables")]
    BadQuadraticForm,
    #[error("quadratic form is not negative definite")]
    NotNegativeDefinite,
    #[error("even variable `{0}` survives outside the Gaussian support")]
    NonGaussianEvenSector(String),
    #[error("split breaks a symplectic pair")]
    SplitBreaksPair,
    #[error("quadratic form couples retained and integrated sectors")]
    CoupledSectors,
    #[error(transparent)]
    Graded(#[from] GradedError),
}

/// Super space R^{d|d} with Darboux pairs (q^i, p_i), deg p_i = -1 - deg q^i.
#[derive(Clone, Debug)]
pub struct OddSymplecticSpace {
    coords: Coords,
    trunc: usize,
    /// (q index, p index) per pair, in declaration order.
    pairs: Vec<(usize, usize)>,
}

impl OddSymplecticSpace {
    /// Builds the space from the q-degrees; q^i gets degree `degrees[i]`
    /// and its momentum p_i degree `-1 - degrees[i]`.
    pub fn new(degrees: &[i64], trunc: usize, params: &[&str]) -> Result<Self, GradedError> {
        let d = degrees.len();
        let mut vars = Vec::with_capacity(2 * d + params.len());
        for (i, &deg) in degrees.iter().enumerate() {
            vars.push(Variable {
                name: format!("q{}", i + 1),
                degree: deg,
                kind: VarKind::Fiber,
            });
        }
        for (i, &deg) in degrees.iter().enumerate() {
            vars.push(Variable {
                name: format!("p{}", i + 1),
                degree: -1 - deg,
                kind: VarKind::Cofiber,
            });
        }
        for p in params {
            vars.push(Variable {
                name: (*p).to_string(),
                degree: 0,
                kind: VarKind::Param,
            });
        }
        let coords = CoordinateSystem::new(vars)?;
        let pairs = (0..d).map(|i| (i, d + i)).collect();
        Ok(OddSymplecticSpace {
            coords,
            trunc,
            pairs,
        })
    }

    pub fn coords(&self) -> &Coords {
        &self.coords
    }

    pub fn trunc(&self) -> usize {
        self.trunc
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    pub fn q(&self, i: usize) -> Series {
        Series::generator(&self.coords, self.trunc, self.pairs[i].0)
    }

    pub fn p(&self, i: usize) -> Series {
        Series::generator(&self.coords, self.trunc, self.pairs[i].1)
    }

    fn q_parity(&self, i: usize) -> bool {
        self.coords.var(self.pairs[i].0).parity()
    }

    /// `Delta f = sum_i (-1)^{|q^i|} d^2 f / d q^i d p_i` (left derivatives).
    pub fn laplacian(&self, f: &Series) -> Series {
        let mut out = Series::zero(&self.coords, self.trunc);
        for (i, &(qi, pi)) in self.pairs.iter().enumerate() {
            let term = f.derive(pi).derive(qi);
            let term = if self.q_parity(i) {
                term.scale(&Scalar::from_int(-1))
            } else {
                term
            };
            out = out.add(&term).unwrap();
        }
        out
    }

    /// The odd Poisson bracket of the symplectic form:
    /// `(f,g) = sum_i (d_r f/d q^i)(d_l g/d p_i) - (d_r f/d p_i)(d_l g/d q^i)`.
    pub fn bracket(&self, f: &Series, g: &Series) -> Series {
        let mut out = Series::zero(&self.coords, self.trunc);
        for &(qi, pi) in &self.pairs {
            let t1 = f.derive_right(qi).mul(&g.derive(pi)).unwrap();
            let t2 = f.derive_right(pi).mul(&g.derive(qi)).unwrap();
            out = out.add(&t1.sub(&t2).unwrap()).unwrap();
        }
        out
    }

    /// `Delta(fg) - Delta f g - (-1)^{|f|} f Delta g - (-1)^{|f|} (f,g)`,
    /// with the bracket computed independently of the Laplacian; must be
    /// identically zero. Extended bilinearly over the parity parts of `f`.
    pub fn leibniz_defect(&self, f: &Series, g: &Series) -> Series {
        let mut out = Series::zero(&self.coords, self.trunc);
        for (fpart, fodd) in parity_parts(f) {
            if fpart.is_zero() {
                continue;
            }
            let sign = if fodd { -1 } else { 1 };
            let defect = self
                .laplacian(&fpart.mul(g).unwrap())
                .sub(&self.laplacian(&fpart).mul(g).unwrap())
                .unwrap()
                .sub(
                    &fpart
                        .mul(&self.laplacian(g))
                        .unwrap()
                        .scale(&Scalar::from_int(sign)),
                )
                .unwrap()
                .sub(&self.bracket(&fpart, g).scale(&Scalar::from_int(sign)))
                .unwrap();
            out = out.add(&defect).unwrap();
        }
        out
    }

    /// `1/2 (S,S) - i h Delta S`, the quantum-master-equation residual.
    pub fn qme_residual(&self, action: &Series) -> Series {
        let half = self.bracket(action, action).scale(&Scalar::from_frac(1, 2));
        let ihbar = Scalar::i().mul_ref(&Scalar::hbar());
        half.sub(&self.laplacian(action).scale(&ihbar)).unwrap()
    }
}

fn parity_parts(s: &Series) -> Vec<(Series, bool)> {
    let mut even = Series::zero(s.coords(), s.trunc());
    let mut odd = Series::zero(s.coords(), s.trunc());
    for (m, c) in s.terms() {
        if m.parity(s.coords()) {
            odd.add_term(m.clone(), c.clone());
        } else {
            even.add_term(m.clone(), c.clone());
        }
    }
    vec![(even, false), (odd, true)]
}

/// A polynomial times the Gaussian `exp(1/2 q^T Q q)` over a subset of the
/// even q variables; Q symmetric with a negative-definite rational
/// representative so the moments exist.
#[derive(Clone, Debug)]
pub struct GaussPoly {
    pub poly: Series,
    /// Pair indices whose (even) q enters the quadratic form.
    pub support: Vec<usize>,
    /// Q over `support`, symmetric negative definite.
    pub quad: Vec<Vec<BigRational>>,
}

impl GaussPoly {
    pub fn new(
        space: &OddSymplecticSpace,
        poly: Series,
        support: Vec<usize>,
        quad: Vec<Vec<BigRational>>,
    ) -> Result<Self, BvError> {
        let m = support.len();
        if quad.len() != m || quad.iter().any(|r| r.len() != m) {
            return Err(BvError::BadQuadraticForm);
        }
        for i in 0..m {
            if space.q_parity(support[i]) {
                return Err(BvError::BadQuadraticForm);
            }
            for j in 0..m {
                if quad[i][j] != quad[j][i] {
                    return Err(BvError::BadQuadraticForm);
                }
            }
        }
        // Sylvester criterion on -Q: all leading principal minors positive.
        let minus_q: Vec<Vec<BigRational>> = quad
            .iter()
            .map(|r| r.iter().map(|x| -x.clone()).collect())
            .collect();
        for k in 1..=m {
            let sub: Vec<Vec<BigRational>> = (0..k)
                .map(|i| (0..k).map(|j| minus_q[i][j].clone()).collect())
                .collect();
            if !determinant(&sub).is_positive() {
                return Err(BvError::NotNegativeDefinite);
            }
        }
        Ok(GaussPoly {
            poly,
            support,
            quad,
        })
    }

    /// Laplacian acting on the full integrand `poly * exp(G)`: the exponent
    /// contributes `sum_i (d_l poly/d p_i)(dG/d q^i)` over its support.
    pub fn laplacian(&self, space: &OddSymplecticSpace) -> GaussPoly {
        let mut poly = space.laplacian(&self.poly);
        for (a, &i) in self.support.iter().enumerate() {
            let dp = self.poly.derive(space.pairs[i].1);
            if dp.is_zero() {
                continue;
            }
            let mut dg = Series::zero(space.coords(), space.trunc());
            for (b, &j) in self.support.iter().enumerate() {
                let c = &self.quad[a][b];
                if c.is_zero() {
                    continue;
                }
                dg = dg
                    .add(&space.q(j).scale(&Scalar::term(
                        GaussRat::new(c.clone(), BigRational::zero()),
                        0,
                    )))
                    .unwrap();
            }
            poly = poly.add(&dp.mul(&dg).unwrap()).unwrap();
        }
        GaussPoly {
            poly,
            support: self.support.clone(),
            quad: self.quad.clone(),
        }
    }
}

fn determinant(m: &[Vec<BigRational>]) -> BigRational {
    let n = m.len();
    let mut a: Vec<Vec<BigRational>> = m.to_vec();
    let mut det = BigRational::one();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero());
        let Some(pivot) = pivot else {
            return BigRational::zero();
        };
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col].clone();
        let inv = a[col][col].recip();
        for r in (col + 1)..n {
            if a[r][col].is_zero() {
                continue;
            }
            let factor = a[r][col].clone() * inv.clone();
            for c in col..n {
                let sub = factor.clone() * a[col][c].clone();
                a[r][c] -= sub;
            }
        }
    }
    det
}

fn matrix_inverse(m: &[Vec<BigRational>]) -> Option<Vec<Vec<BigRational>>> {
    let n = m.len();
    let mut a: Vec<Vec<BigRational>> = m.to_vec();
    let mut inv: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        BigRational::one()
                    } else {
                        BigRational::zero()
                    }
                })
                .collect()
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(pivot, col);
        inv.swap(pivot, col);
        let d = a[col][col].recip();
        for c in 0..n {
            a[col][c] *= d.clone();
            inv[col][c] *= d.clone();
        }
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone();
            for c in 0..n {
                let s1 = f.clone() * a[col][c].clone();
                a[r][c] -= s1;
                let s2 = f.clone() * inv[col][c].clone();
                inv[r][c] -= s2;
            }
        }
    }
    Some(inv)
}

/// Wick moment of a product of centered Gaussian slots with covariance C:
/// sum over perfect matchings of products of pair covariances.
fn wick_moment(slots: &[usize], cov: &[Vec<BigRational>]) -> BigRational {
    if slots.is_empty() {
        return BigRational::one();
    }
    if slots.len() % 2 == 1 {
        return BigRational::zero();
    }
    let first = slots[0];
    let mut total = BigRational::zero();
    for k in 1..slots.len() {
        let partner = slots[k];
        let mut rest: Vec<usize> = Vec::with_capacity(slots.len() - 2);
        rest.extend_from_slice(&slots[1..k]);
        rest.extend_from_slice(&slots[k + 1..]);
        total += cov[first][partner].clone() * wick_moment(&rest, cov);
    }
    total
}

/// Validates the gauge fermion (odd, depends only on the q's of `pairs`)
/// and returns the substitution p_i -> d psi / d q^i on those pairs.
fn gauge_substitution(
    space: &OddSymplecticSpace,
    psi: &Series,
    pairs: &[usize],
) -> Result<BTreeMap<usize, Series>, BvError> {
    if !psi.is_zero() && psi.uniform_parity() != Some(true) {
        return Err(BvError::BadGaugeFermion);
    }
    let allowed: Vec<usize> = pairs.iter().map(|&i| space.pairs[i].0).collect();
    for (m, _) in psi.terms() {
        for (idx, &e) in m.0.iter().enumerate() {
            if e > 0
                && !allowed.contains(&idx)
                && space.coords().var(idx).kind != VarKind::Param
            {
                return Err(BvError::BadGaugeFermion);
            }
        }
    }
    let mut asg = Series::identity_assignment(space.coords(), space.trunc());
    for &i in pairs {
        let (qi, pi) = space.pairs[i];
        asg.insert(pi, psi.derive(qi));
    }
    Ok(asg)
}

/// Full BV integral of a Gaussian integrand over the Lagrangian
/// `p = d psi`: restricts, Berezin-integrates the odd q's (top coefficient,
/// orientation fixed by declaration order) and takes Wick moments over the
/// even q's. The bare Gaussian volume is the declared unit 1.
pub fn bv_integral(
    space: &OddSymplecticSpace,
    f: &GaussPoly,
    psi: &Series,
) -> Result<Scalar, BvError> {
    let all: Vec<usize> = (0..space.dim()).collect();
    let pushed = bv_pushforward(space, f, &all, psi)?;
    let mut total = Scalar::zero();
    for (m, c) in pushed.poly.terms() {
        // Only parameter variables may survive a full integral.
        if m.0.iter().enumerate().any(|(idx, &e)| {
            e > 0 && space.coords().var(idx).kind != VarKind::Param
        }) {
            continue;
        }
        if m.is_unit() {
            total += c.clone();
        }
    }
    Ok(total)
}

/// Partial BV integral over the pairs in `integrate`: restricts the
/// corresponding momenta to the gauge fermion, Berezin-integrates their
/// odd q's and Wick-integrates their even q's, leaving a Gaussian
/// integrand on the retained sector. The quadratic form must not couple
/// retained and integrated sectors.
pub fn bv_pushforward(
    space: &OddSymplecticSpace,
    f: &GaussPoly,
    integrate: &[usize],
    psi: &Series,
) -> Result<GaussPoly, BvError> {
    for &i in integrate {
        if i >= space.dim() {
            return Err(BvError::SplitBreaksPair);
        }
    }
    let mut int_pos = Vec::new();
    let mut keep_pos = Vec::new();
    for (a, &s) in f.support.iter().enumerate() {
        if integrate.contains(&s) {
            int_pos.push(a);
        } else {
            keep_pos.push(a);
        }
    }
    for &a in &int_pos {
        for &b in &keep_pos {
            if !f.quad[a][b].is_zero() {
                return Err(BvError::CoupledSectors);
            }
        }
    }
    let asg = gauge_substitution(space, psi, integrate)?;
    let restricted = f.poly.substitute(&asg)?;
    let sub_quad: Vec<Vec<BigRational>> = int_pos
        .iter()
        .map(|&a| int_pos.iter().map(|&b| -f.quad[a][b].clone()).collect())
        .collect();
    let cov = matrix_inverse(&sub_quad).ok_or(BvError::NotNegativeDefinite)?;
    let odd_qs: Vec<usize> = integrate
        .iter()
        .filter(|&&i| space.q_parity(i))
        .map(|&i| space.pairs[i].0)
        .collect();
    let even_int: Vec<usize> = integrate
        .iter()
        .copied()
        .filter(|&i| !space.q_parity(i))
        .collect();
    let coords = space.coords();
    let mut out_poly = Series::zero(coords, space.trunc());
    'outer: for (m, c) in restricted.terms() {
        // Berezin: the full odd top product must be present.
        for &qi in &odd_qs {
            if m.0[qi] != 1 {
                continue 'outer;
            }
        }
        // Koszul sign for extracting the integrated odd q's out to the
        // right of the monomial (so that a factorized integrand
        // f'(retained) * g''(integrated) integrates to f' * integral(g'')
        // with no extra sign).
        let mut sign = false;
        for &qi in &odd_qs {
            let mut cnt = 0u32;
            for idx in (qi + 1)..coords.len() {
                if coords.var(idx).parity() && m.0[idx] > 0 && !odd_qs.contains(&idx) {
                    cnt += m.0[idx];
                }
            }
            if cnt % 2 == 1 {
                sign = !sign;
            }
        }
        let mut residual_mono = m.clone();
        for &qi in &odd_qs {
            residual_mono.0[qi] = 0;
        }
        let mut slots: Vec<usize> = Vec::new();
        for &i in &even_int {
            let qi = space.pairs[i].0;
            let e = m.0[qi];
            if e == 0 {
                continue;
            }
            match int_pos.iter().position(|&a| f.support[a] == i) {
                Some(p) => {
                    for _ in 0..e {
                        slots.push(p);
                    }
                    residual_mono.0[qi] = 0;
                }
                None => {
                    return Err(BvError::NonGaussianEvenSector(
                        coords.var(qi).name.clone(),
                    ))
                }
            }
        }
        let moment = wick_moment(&slots, &cov);
        if moment.is_zero() {
            continue;
        }
        let mut coeff = c.mul_ref(&Scalar::term(
            GaussRat::new(moment, BigRational::zero()),
            0,
        ));
        if sign {
            coeff = -coeff;
        }
        out_poly.add_term(residual_mono, coeff);
    }
    let retained_support: Vec<usize> = keep_pos.iter().map(|&a| f.support[a]).collect();
    let retained_quad: Vec<Vec<BigRational>> = keep_pos
        .iter()
        .map(|&a| keep_pos.iter().map(|&b| f.quad[a][b].clone()).collect())
        .collect();
    Ok(GaussPoly {
        poly: out_poly,
        support: retained_support,
        quad: retained_quad,
    })
}

/// Restriction of the Laplacian to a subset of pairs (used as Delta').
pub fn partial_laplacian(space: &OddSymplecticSpace, f: &Series, pairs: &[usize]) -> Series {
    let mut out = Series::zero(space.coords(), space.trunc());
    for &i in pairs {
        let (qi, pi) = space.pairs[i];
        let term = f.derive(pi).derive(qi);
        let term = if space.q_parity(i) {
            term.scale(&Scalar::from_int(-1))
        } else {
            term
        };
        out = out.add(&term).unwrap();
    }
    out
}

/// Picks out the `h^k` part of every coefficient.
pub fn hbar_coefficient(s: &Series, k: i64) -> Series {
    let mut out = Series::zero(s.coords(), s.trunc());
    for (m, c) in s.terms() {
        let part = c.coeff_of_hbar(k);
        if !part.is_zero() {
            out.add_term(m.clone(), Scalar::term(part, 0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use rand::{Rng, SeedableRng};

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// R^{1|1}: q even degree 0, p odd degree -1.
    fn r11() -> OddSymplecticSpace {
        OddSymplecticSpace::new(&[0], 8, &[]).unwrap()
    }

    fn random_poly(
        sp: &OddSymplecticSpace,
        rng: &mut rand_chacha::ChaCha8Rng,
        max_factors: usize,
    ) -> Series {
        let mut total = Series::zero(sp.coords(), sp.trunc());
        for _ in 0..2 {
            let mut s = Series::constant(
                sp.coords(),
                sp.trunc(),
                Scalar::from_int(rng.gen_range(-3..=3)),
            );
            for _ in 0..rng.gen_range(0..=max_factors) {
                let i = rng.gen_range(0..sp.dim());
                let gene = if rng.gen_bool(0.5) { sp.q(i) } else { sp.p(i) };
                s = s.mul(&gene).unwrap();
            }
            total = total.add(&s).unwrap();
        }
        total
    }

    #[test]
    fn laplacian_examples() {
        let sp = r11();
        let q = sp.q(0);
        let p = sp.p(0);
        let qp = q.mul(&p).unwrap();
        assert_eq!(sp.laplacian(&qp), Series::one(sp.coords(), sp.trunc()));
        // Functions of q only are harmonic.
        let q3 = q.mul(&q).unwrap().mul(&q).unwrap();
        assert!(sp.laplacian(&q3).is_zero());
        // q^2 p -> 2 q.
        let q2p = q.mul(&q).unwrap().mul(&p).unwrap();
        assert_eq!(sp.laplacian(&q2p), q.scale(&Scalar::from_int(2)));
    }

    #[test]
    fn laplacian_squares_to_zero() {
        let sp = OddSymplecticSpace::new(&[0, 1], 8, &[]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let f = random_poly(&sp, &mut rng, 3);
            assert!(sp.laplacian(&sp.laplacian(&f)).is_zero());
        }
    }

    #[test]
    fn bracket_examples_and_defect() {
        let sp = r11();
        let q = sp.q(0);
        let p = sp.p(0);
        assert_eq!(sp.bracket(&q, &p), Series::one(sp.coords(), sp.trunc()));
        let q2 = q.mul(&q).unwrap();
        assert!(sp.leibniz_defect(&q2, &p).is_zero());
    }

    #[test]
    fn leibniz_defect_vanishes_on_random_pairs() {
        let sp = OddSymplecticSpace::new(&[0, 1, -1], 8, &[]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let f = random_poly(&sp, &mut rng, 3);
            let g = random_poly(&sp, &mut rng, 3);
            let defect = sp.leibniz_defect(&f, &g);
            assert!(defect.is_zero(), "defect = {}", defect);
        }
    }

    #[test]
    fn gaussian_unit_normalization() {
        // No odd q's at all: the bare Gaussian with psi = 0 is the declared
        // unit.
        let sp = r11();
        let g = GaussPoly::new(
            &sp,
            Series::one(sp.coords(), sp.trunc()),
            vec![0],
            vec![vec![rat(-1, 1)]],
        )
        .unwrap();
        let zero = Series::zero(sp.coords(), sp.trunc());
        assert_eq!(bv_integral(&sp, &g, &zero).unwrap(), Scalar::one());
    }

    /// One even Gaussian pair (q1) and one odd-q pair (q2, deg -1).
    fn gauss_space() -> (OddSymplecticSpace, Vec<Vec<BigRational>>) {
        let sp = OddSymplecticSpace::new(&[0, -1], 8, &[]).unwrap();
        (sp, vec![vec![rat(-1, 1)]])
    }

    #[test]
    fn wick_moments_hand_checked() {
        let (sp, quad) = gauss_space();
        let zero = Series::zero(sp.coords(), sp.trunc());
        // q2 saturates the odd top; <q1^2> = 1 and <q1^4> = 3 for C = 1.
        let top = GaussPoly::new(&sp, sp.q(1), vec![0], quad.clone()).unwrap();
        assert_eq!(bv_integral(&sp, &top, &zero).unwrap(), Scalar::one());
        let q2 = sp.q(0).mul(&sp.q(0)).unwrap();
        let q2top = GaussPoly::new(&sp, q2.mul(&sp.q(1)).unwrap(), vec![0], quad.clone()).unwrap();
        assert_eq!(bv_integral(&sp, &q2top, &zero).unwrap(), Scalar::one());
        let q4 = sp
            .q(0)
            .mul(&sp.q(0))
            .unwrap()
            .mul(&sp.q(0))
            .unwrap()
            .mul(&sp.q(0))
            .unwrap();
        let q4top = GaussPoly::new(&sp, q4.mul(&sp.q(1)).unwrap(), vec![0], quad).unwrap();
        assert_eq!(bv_integral(&sp, &q4top, &zero).unwrap(), Scalar::from_int(3));
    }

    #[test]
    fn integral_of_delta_exact_vanishes() {
        let (sp, quad) = gauss_space();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        // psi = 1/3 q2 q1: odd, q-only, degree -1.
        let psi = sp
            .q(1)
            .mul(&sp.q(0))
            .unwrap()
            .scale(&Scalar::from_frac(1, 3));
        for _ in 0..25 {
            let p = random_poly(&sp, &mut rng, 4);
            let gp = GaussPoly::new(&sp, p, vec![0], quad.clone()).unwrap();
            let dg = gp.laplacian(&sp);
            let val = bv_integral(&sp, &dg, &psi).unwrap();
            assert!(val.is_zero(), "integral of Delta-exact = {}", val);
        }
    }

    #[test]
    fn gauge_fixing_independence() {
        let (sp, quad) = gauss_space();
        // f = q2 * Gaussian is Delta-closed (no momenta anywhere).
        let f = GaussPoly::new(&sp, sp.q(1), vec![0], quad).unwrap();
        assert!(f.laplacian(&sp).poly.is_zero(), "fixture must be closed");
        let psi0 = Series::zero(sp.coords(), sp.trunc());
        let psi1 = sp
            .q(1)
            .mul(&sp.q(0))
            .unwrap()
            .scale(&Scalar::from_frac(1, 5));
        let v0 = bv_integral(&sp, &f, &psi0).unwrap();
        let v1 = bv_integral(&sp, &f, &psi1).unwrap();
        assert_eq!(v0, v1);
    }

    #[test]
    fn qme_examples() {
        let sp = OddSymplecticSpace::new(&[0, 0], 8, &[]).unwrap();
        // S = q1 q2, no momenta: (S,S) = 0 and Delta S = 0.
        let s = sp.q(0).mul(&sp.q(1)).unwrap();
        assert!(sp.qme_residual(&s).is_zero());
        // S = q p on R^{1|1}: (S,S) = 0 and Delta S = 1, residual -i h.
        let sp1 = r11();
        let s1 = sp1.q(0).mul(&sp1.p(0)).unwrap();
        let res = sp1.qme_residual(&s1);
        let expect = Series::constant(
            sp1.coords(),
            sp1.trunc(),
            -(Scalar::i().mul_ref(&Scalar::hbar())),
        );
        assert_eq!(res, expect);
    }

    #[test]
    fn qme_order_by_order_bookkeeping() {
        // For even h-free S0, S1, the h^1 part of the residual of
        // S = S0 + h S1 is (S0, S1) - i Delta S0.
        let sp = OddSymplecticSpace::new(&[0, 1], 8, &[]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let s0 = even_part(&random_poly(&sp, &mut rng, 3));
            let s1 = even_part(&random_poly(&sp, &mut rng, 3));
            let s = s0.add(&s1.scale(&Scalar::hbar())).unwrap();
            let res = sp.qme_residual(&s);
            let order1 = hbar_coefficient(&res, 1);
            let expect = sp
                .bracket(&s0, &s1)
                .sub(&sp.laplacian(&s0).scale(&Scalar::i()))
                .unwrap();
            assert_eq!(order1, expect);
        }
    }

    fn even_part(s: &Series) -> Series {
        let mut out = Series::zero(s.coords(), s.trunc());
        for (m, c) in s.terms() {
            if !m.parity(s.coords()) {
                out.add_term(m.clone(), c.clone());
            }
        }
        out
    }

    #[test]
    fn pushforward_trivial_and_factorized() {
        // Pairs: q1 even (retained), q2 even Gaussian, q3 odd (integrated).
        let sp = OddSymplecticSpace::new(&[0, 0, -1], 8, &[]).unwrap();
        let quad = vec![vec![rat(-1, 1), rat(0, 1)], vec![rat(0, 1), rat(-2, 1)]];
        let f = GaussPoly::new(
            &sp,
            sp.q(0)
                .mul(&sp.p(0))
                .unwrap()
                .mul(&sp.q(1))
                .unwrap()
                .mul(&sp.q(1))
                .unwrap()
                .mul(&sp.q(2))
                .unwrap(),
            vec![0, 1],
            quad,
        )
        .unwrap();
        let psi = Series::zero(sp.coords(), sp.trunc());
        // Trivial split: integrate nothing.
        let id = bv_pushforward(&sp, &f, &[], &psi).unwrap();
        assert_eq!(id.poly, f.poly);
        // f = f'(q1,p1) * g''(q2,q3) * Gaussian'': the pushforward is f'
        // times the scalar integral of g''; <q2^2> = 1/2 for Q = -2.
        let pushed = bv_pushforward(&sp, &f, &[1, 2], &psi).unwrap();
        let expect = sp
            .q(0)
            .mul(&sp.p(0))
            .unwrap()
            .scale(&Scalar::term(GaussRat::new(rat(1, 2), rat(0, 1)), 0));
        assert_eq!(pushed.poly, expect);
        assert_eq!(pushed.support, vec![0]);
        // Cross-coupled Gaussians are rejected.
        let bad_quad = vec![vec![rat(-1, 1), rat(1, 3)], vec![rat(1, 3), rat(-2, 1)]];
        let bad = GaussPoly::new(&sp, f.poly.clone(), vec![0, 1], bad_quad).unwrap();
        assert!(matches!(
            bv_pushforward(&sp, &bad, &[1, 2], &psi),
            Err(BvError::CoupledSectors)
        ));
    }

    #[test]
    fn pushforward_intertwines_laplacians() {
        // Delta'(pushforward f) = pushforward(Delta f): the double-primed
        // part of Delta integrates to zero and Delta' passes through.
        let sp = OddSymplecticSpace::new(&[0, 0, -1], 8, &[]).unwrap();
        let quad = vec![vec![rat(-1, 1)]];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let retained = [0usize];
        let integrated = [1usize, 2usize];
        let psi = sp
            .q(2)
            .mul(&sp.q(1))
            .unwrap()
            .scale(&Scalar::from_frac(1, 2));
        for _ in 0..20 {
            let poly = random_poly(&sp, &mut rng, 4);
            let f = GaussPoly::new(&sp, poly, vec![1], quad.clone()).unwrap();
            let lhs = partial_laplacian(
                &sp,
                &bv_pushforward(&sp, &f, &integrated, &psi).unwrap().poly,
                &retained,
            );
            let rhs = bv_pushforward(&sp, &f.laplacian(&sp), &integrated, &psi)
                .unwrap()
                .poly;
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn pushforward_deformation_is_delta_prime_exact() {
        // For Delta-closed f, d/dt of the pushforward under a psi
        // deformation equals Delta' of the exhibited primitive
        // sum over parity parts of -(-1)^{|part|} push(part * dpsi).
        //
        // Fixture: f = q3 p3 q2 + q1 p1 q2 + q1^2 (Delta f = -q2 + q2 = 0),
        // psi_t = t q2 q3. By hand: push(f) = t, so d/dt = 1, and the
        // primitive evaluates to +q1 p1 with Delta'(q1 p1) = 1.
        let sp = OddSymplecticSpace::new(&[0, 0, -1], 8, &["t"]).unwrap();
        let t = sp.coords().index_of("t").unwrap();
        let tgen = Series::generator(sp.coords(), sp.trunc(), t);
        let quad = vec![vec![rat(-1, 1)]];
        let integrated = [1usize, 2usize];
        let retained = [0usize];
        let poly = sp
            .q(2)
            .mul(&sp.p(2))
            .unwrap()
            .mul(&sp.q(1))
            .unwrap()
            .add(&sp.q(0).mul(&sp.p(0)).unwrap().mul(&sp.q(1)).unwrap())
            .unwrap()
            .add(&sp.q(0).mul(&sp.q(0)).unwrap())
            .unwrap();
        let f = GaussPoly::new(&sp, poly, vec![1], quad.clone()).unwrap();
        assert!(f.laplacian(&sp).poly.is_zero(), "fixture must be closed");
        let delta_psi = sp.q(1).mul(&sp.q(2)).unwrap();
        let psi_t = delta_psi.mul(&tgen).unwrap();
        let pushed = bv_pushforward(&sp, &f, &integrated, &psi_t).unwrap();
        let ddt = pushed.poly.derive(t);
        let mut ddt0 = Series::zero(sp.coords(), sp.trunc());
        for (m, c) in ddt.terms() {
            if m.0[t] == 0 {
                ddt0.add_term(m.clone(), c.clone());
            }
        }
        let base_psi = Series::zero(sp.coords(), sp.trunc());
        let mut prim_poly = Series::zero(sp.coords(), sp.trunc());
        for (part, odd) in parity_parts(&f.poly) {
            if part.is_zero() {
                continue;
            }
            let fd =
                GaussPoly::new(&sp, part.mul(&delta_psi).unwrap(), vec![1], quad.clone())
                    .unwrap();
            let pushed_part = bv_pushforward(&sp, &fd, &integrated, &base_psi).unwrap();
            let sign = if odd { 1 } else { -1 };
            prim_poly = prim_poly
                .add(&pushed_part.poly.scale(&Scalar::from_int(sign)))
                .unwrap();
        }
        let expect = partial_laplacian(&sp, &prim_poly, &retained);
        assert_eq!(ddt0, expect, "Stokes primitive mismatch");
        assert!(!ddt0.is_zero(), "deformation must be visible");
    }
}
