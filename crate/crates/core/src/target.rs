//! Hamiltonian targets on shifted cotangent bundles: the graded Poisson
//! bracket, master-equation checks, linearization around constant maps and
//! vertex-tensor extraction.
//!
//! A target for source dimension n is T^*[n-1]M with coordinates y^i on M
//! and cofiber partners xi_i of degree n-1-deg(y^i), with the canonical
//! pairing {y^i, xi_j} = delta^i_j. The Hamiltonian Theta is a polynomial
//! of internal degree n in (y, xi). Linearizing along a formal exponential
//! map substitutes y -> phi(x; y) and lifts the cofibers by the inverse
//! fiber Jacobian, which is the unique lift linear in xi that preserves the
//! canonical pairing.

use crate::formal::{compute_r, FormalError, FormalExpMap, GrothendieckForm};
use crate::graded::{
    CoordinateSystem, Coords, GradedError, Monomial, Series, VarKind, Variable,
};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TargetError {
    #[error("theta must be homogeneous of internal degree n = {expected}, found degree {found:?}")]
    ThetaDegree { expected: i64, found: Option<i64> },
    #[error("theta may only involve fiber and cofiber variables")]
    ThetaSupport,
    #[error("coordinate system lacks the cofiber partner of fiber {0}")]
    MissingCofiber(usize),
    #[error(transparent)]
    Graded(#[from] GradedError),
    #[error(transparent)]
    Formal(#[from] FormalError),
}

/// Chart for a linearized target: x^i (base), y^i (fiber, given degrees),
/// xi_i (cofiber, degree n-1-deg y^i), dx^i (forms), plus parameters.
pub fn target_coords(
    n: i64,
    fiber_degrees: &[i64],
    params: &[&str],
) -> Result<Coords, GradedError> {
    let r = fiber_degrees.len();
    let mut vars = Vec::with_capacity(4 * r + params.len());
    for i in 0..r {
        vars.push(Variable {
            name: format!("x{}", i + 1),
            degree: 0,
            kind: VarKind::Base,
        });
    }
    for (i, &d) in fiber_degrees.iter().enumerate() {
        vars.push(Variable {
            name: format!("y{}", i + 1),
            degree: d,
            kind: VarKind::Fiber,
        });
    }
    for (i, &d) in fiber_degrees.iter().enumerate() {
        vars.push(Variable {
            name: format!("xi{}", i + 1),
            degree: n - 1 - d,
            kind: VarKind::Cofiber,
        });
    }
    for i in 0..r {
        vars.push(Variable {
            name: format!("dx{}", i + 1),
            degree: 1,
            kind: VarKind::Form,
        });
    }
    for p in params {
        vars.push(Variable {
            name: (*p).to_string(),
            degree: 0,
            kind: VarKind::Param,
        });
    }
    CoordinateSystem::new(vars)
}

fn split_parity(s: &Series) -> (Series, Series) {
    let mut even = Series::zero(s.coords(), s.trunc());
    let mut odd = Series::zero(s.coords(), s.trunc());
    for (m, c) in s.terms() {
        if m.parity(s.coords()) {
            odd.add_term(m.clone(), c.clone());
        } else {
            even.add_term(m.clone(), c.clone());
        }
    }
    (even, odd)
}

/// Half of the canonical bracket: `H(f, g) = sum_i (d_r f/d y^i)(d_l g/d xi_i)`.
fn half_bracket(f: &Series, g: &Series, fiber: &[usize], cofiber: &[usize]) -> Series {
    let mut out = Series::zero(f.coords(), f.trunc());
    for (&yi, &xii) in fiber.iter().zip(cofiber.iter()) {
        let df = f.derive_right(yi);
        if df.is_zero() {
            continue;
        }
        let dg = g.derive(xii);
        if dg.is_zero() {
            continue;
        }
        out = out.add(&df.mul(&dg).unwrap()).unwrap();
    }
    out
}

/// Canonical graded Poisson bracket of degree -(n-1) on a target chart:
///
/// ```text
/// {f, g} = sum_i (d_r f/d y^i)(d_l g/d xi_i)
///        - (-1)^((|f|+n-1)(|g|+n-1)) sum_i (d_r g/d y^i)(d_l f/d xi_i)
/// ```
///
/// extended bilinearly over parity components. Satisfies {y^i, xi_j} =
/// delta^i_j, shifted graded antisymmetry, the biderivation rule and graded
/// Jacobi (all exercised by tests).
pub fn poisson_bracket(f: &Series, g: &Series, n: i64) -> Result<Series, GradedError> {
    if !Arc::ptr_eq(f.coords(), g.coords()) {
        return Err(GradedError::CoordsMismatch);
    }
    let coords = f.coords();
    let fiber = coords.indices_of_kind(VarKind::Fiber);
    let cofiber = coords.indices_of_kind(VarKind::Cofiber);
    assert_eq!(fiber.len(), cofiber.len());
    let shift = (n - 1).rem_euclid(2) == 1;
    let (fe, fo) = split_parity(f);
    let (ge, go) = split_parity(g);
    let mut out = Series::zero(coords, f.trunc());
    for (fpart, fodd) in [(&fe, false), (&fo, true)] {
        if fpart.is_zero() {
            continue;
        }
        for (gpart, godd) in [(&ge, false), (&go, true)] {
            if gpart.is_zero() {
                continue;
            }
            let first = half_bracket(fpart, gpart, &fiber, &cofiber);
            let second = half_bracket(gpart, fpart, &fiber, &cofiber);
            // (-1)^{(|f|+n-1)(|g|+n-1)}
            let swap_sign = (fodd ^ shift) && (godd ^ shift);
            let signed_second = if swap_sign {
                second
            } else {
                second.scale(&Scalar::from_int(-1))
            };
            out = out.add(&first.add(&signed_second)?)?;
        }
    }
    Ok(out)
}

/// A Hamiltonian function of internal degree n on a target chart. The
/// series may not involve base, form or parameter variables.
#[derive(Clone, Debug)]
pub struct HamiltonianTarget {
    pub n: i64,
    coords: Coords,
    pub theta: Series,
}

impl HamiltonianTarget {
    pub fn new(n: i64, theta: Series) -> Result<Self, TargetError> {
        let coords = theta.coords().clone();
        for (idx, var) in coords.vars().iter().enumerate() {
            if !matches!(var.kind, VarKind::Fiber | VarKind::Cofiber)
                && theta.terms().any(|(m, _)| m.0[idx] > 0)
            {
                return Err(TargetError::ThetaSupport);
            }
        }
        if !theta.is_zero() {
            match theta.homogeneous_degree() {
                Some(d) if d == n => {}
                found => return Err(TargetError::ThetaDegree { expected: n, found }),
            }
        }
        Ok(HamiltonianTarget { n, coords, theta })
    }

    pub fn coords(&self) -> &Coords {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.indices_of_kind(VarKind::Fiber).len()
    }

    /// `{Theta, Theta}`; zero iff the classical master equation holds.
    pub fn check_cme(&self) -> Series {
        poisson_bracket(&self.theta, &self.theta, self.n).unwrap()
    }
}

/// Builds the Poisson-sigma-model Hamiltonian `Theta = 1/2 pi^{ij}(y) xi_i xi_j`
/// from the strictly-upper-triangular bivector entries (i < j, 0-based).
pub fn poisson_target(
    coords: &Coords,
    trunc: usize,
    entries: &[(usize, usize, Series)],
) -> Result<HamiltonianTarget, TargetError> {
    let cofiber = coords.indices_of_kind(VarKind::Cofiber);
    let mut theta = Series::zero(coords, trunc);
    for (i, j, pi) in entries {
        assert!(i < j, "give bivector entries with i < j");
        let xi_i = Series::generator(coords, trunc, cofiber[*i]);
        let xi_j = Series::generator(coords, trunc, cofiber[*j]);
        theta = theta.add(&pi.mul(&xi_i)?.mul(&xi_j)?)?;
    }
    HamiltonianTarget::new(2, theta)
}

/// A target linearized along a formal exponential map: the expanded
/// Hamiltonian, the Grothendieck form and the packaged connection
/// Hamiltonian `S_R = dx^i Y^k_i xi_k`.
#[derive(Clone, Debug)]
pub struct LinearizedTarget {
    pub n: i64,
    pub theta_x: Series,
    pub r_form: GrothendieckForm,
    pub s_r: Series,
}

/// Substitutes the base expansion `y -> phi(x;y)` and the cotangent lift
/// `xi_j -> ((d phi/d y)^{-1})^k_j xi_k` into the target Hamiltonian.
pub fn linearize_target(
    target: &HamiltonianTarget,
    phi: &FormalExpMap,
    order: usize,
) -> Result<LinearizedTarget, TargetError> {
    let theta_x = lift_substitute(&target.theta, phi)?.truncate_to(order);
    let r_form = compute_r(phi, order)?;
    let coords = target.coords();
    let cofiber = coords.indices_of_kind(VarKind::Cofiber);
    let mut s_r = Series::zero(coords, target.theta.trunc());
    for k in 0..phi.dim() {
        let xi_k = Series::generator(coords, target.theta.trunc(), cofiber[k]);
        s_r = s_r.add(&r_form.packaged(k).mul(&xi_k)?)?;
    }
    Ok(LinearizedTarget {
        n: target.n,
        theta_x,
        r_form,
        s_r,
    })
}

/// The cotangent-lifted substitution applied to an arbitrary series in
/// (y, xi) on the same chart as `phi`.
pub fn lift_substitute(f: &Series, phi: &FormalExpMap) -> Result<Series, TargetError> {
    let coords = phi.coords();
    let cofiber = coords.indices_of_kind(VarKind::Cofiber);
    if cofiber.len() != phi.dim() {
        return Err(TargetError::MissingCofiber(phi.dim()));
    }
    let inv = phi.fiber_jacobian_inverse()?;
    let mut asg = Series::identity_assignment(coords, f.trunc());
    for i in 0..phi.dim() {
        asg.insert(phi.fiber_indices()[i], phi.component(i).clone());
    }
    for j in 0..phi.dim() {
        let mut lifted = Series::zero(coords, f.trunc());
        for k in 0..phi.dim() {
            let xi_k = Series::generator(coords, f.trunc(), cofiber[k]);
            lifted = lifted.add(&inv[k][j].mul(&xi_k)?)?;
        }
        asg.insert(cofiber[j], lifted);
    }
    Ok(f.substitute(&asg)?)
}

/// Fiberwise CME residual and horizontality residual of the linearized
/// theory: `({Theta_x, Theta_x}, d_x Theta_x - {S_R, Theta_x})`. Both must
/// vanish (to the requested order) for the differential classical master
/// equation to hold.
pub fn check_dcme(
    target: &HamiltonianTarget,
    phi: &FormalExpMap,
    order: usize,
) -> Result<(Series, Series), TargetError> {
    let lin = linearize_target(target, phi, phi.trunc())?;
    let fiberwise = poisson_bracket(&lin.theta_x, &lin.theta_x, target.n)?.truncate_to(order);
    let horizontality = crate::formal::d_x(&lin.theta_x)
        .sub(&poisson_bracket(&lin.s_r, &lin.theta_x, target.n)?)?
        .truncate_to(order);
    Ok((fiberwise, horizontality))
}

/// Sorted index tuples (with repeats) keying graded-symmetric tensors.
pub type IndexTuple = Vec<usize>;

/// The vertex tensors of a linearized theory: interaction tensors
/// `Theta^{j_1..j_l}_{i_1..i_k}(x)` keyed by (k, l) and sorted index
/// tuples, and connection tensors `Y^j_{i; i_1..i_k}(x)` keyed by (j, i).
/// Values use the graded-symmetric normalization: the series coefficient
/// of a canonical monomial is `value` times the number of distinct
/// orderings of each tuple.
#[derive(Clone, Debug, Default)]
pub struct VertexTensorSet {
    pub dim: usize,
    pub trunc: usize,
    pub theta: BTreeMap<(usize, usize), BTreeMap<(IndexTuple, IndexTuple), Series>>,
    pub r: BTreeMap<(usize, usize), BTreeMap<IndexTuple, Series>>,
}

pub(crate) fn orderings_count(t: &[usize]) -> i64 {
    // multiset permutation count: len! / prod(mult!)
    let mut fact = 1i64;
    for v in 2..=t.len() as i64 {
        fact *= v;
    }
    let mut i = 0;
    while i < t.len() {
        let mut j = i;
        while j < t.len() && t[j] == t[i] {
            j += 1;
        }
        let mut mf = 1i64;
        for v in 2..=(j - i) as i64 {
            mf *= v;
        }
        fact /= mf;
        i = j;
    }
    fact
}

fn exponents_to_tuple(m: &Monomial, vars: &[usize]) -> IndexTuple {
    let mut t = Vec::new();
    for (a, &idx) in vars.iter().enumerate() {
        for _ in 0..m.0[idx] {
            t.push(a);
        }
    }
    t
}

fn tuple_to_exponents(t: &[usize], vars: &[usize], len: usize) -> Monomial {
    let mut e = vec![0u32; len];
    for &a in t {
        e[vars[a]] += 1;
    }
    Monomial(e)
}

/// Splits a monomial over the full chart into its x/param/form part and the
/// fiber/cofiber index tuples.
fn split_monomial(
    m: &Monomial,
    fiber: &[usize],
    cofiber: &[usize],
) -> (Monomial, IndexTuple, IndexTuple) {
    let mut xpart = m.clone();
    for &i in fiber.iter().chain(cofiber.iter()) {
        xpart.0[i] = 0;
    }
    (
        xpart,
        exponents_to_tuple(m, fiber),
        exponents_to_tuple(m, cofiber),
    )
}

/// Extracts the vertex tensors of a linearized target up to total valence
/// `order` in the fiber/cofiber variables.
pub fn extract_vertex_tensors(lin: &LinearizedTarget, order: usize) -> VertexTensorSet {
    let coords = lin.theta_x.coords().clone();
    let fiber = coords.indices_of_kind(VarKind::Fiber);
    let cofiber = coords.indices_of_kind(VarKind::Cofiber);
    let trunc = lin.theta_x.trunc();
    let mut set = VertexTensorSet {
        dim: fiber.len(),
        trunc,
        theta: BTreeMap::new(),
        r: BTreeMap::new(),
    };
    for (m, c) in lin.theta_x.terms() {
        let (xpart, i_tuple, j_tuple) = split_monomial(m, &fiber, &cofiber);
        if i_tuple.len() + j_tuple.len() > order {
            continue;
        }
        let nu = orderings_count(&i_tuple) * orderings_count(&j_tuple);
        let value = c.mul_ref(&Scalar::from_frac(1, nu));
        let entry = set
            .theta
            .entry((i_tuple.len(), j_tuple.len()))
            .or_default()
            .entry((i_tuple, j_tuple))
            .or_insert_with(|| Series::zero(&coords, trunc));
        entry.add_term(xpart, value);
    }
    for j in 0..set.dim {
        for i in 0..set.dim {
            for (m, c) in lin.r_form.components[j][i].terms() {
                let (xpart, i_tuple, j_tuple) = split_monomial(m, &fiber, &cofiber);
                assert!(j_tuple.is_empty(), "Y components carry no cofibers");
                if i_tuple.len() > order {
                    continue;
                }
                let nu = orderings_count(&i_tuple);
                let value = c.mul_ref(&Scalar::from_frac(1, nu));
                let entry = set
                    .r
                    .entry((j, i))
                    .or_default()
                    .entry(i_tuple)
                    .or_insert_with(|| Series::zero(&coords, trunc));
                entry.add_term(xpart, value);
            }
        }
    }
    set
}

impl VertexTensorSet {
    /// Rebuilds the interaction Hamiltonian from the stored tensors.
    pub fn reconstruct_theta(&self, coords: &Coords) -> Series {
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let cofiber = coords.indices_of_kind(VarKind::Cofiber);
        let mut out = Series::zero(coords, self.trunc);
        for by_idx in self.theta.values() {
            for ((i_t, j_t), poly) in by_idx {
                let nu = orderings_count(i_t) * orderings_count(j_t);
                let ym = tuple_to_exponents(i_t, &fiber, coords.len());
                let xm = tuple_to_exponents(j_t, &cofiber, coords.len());
                for (xmono, c) in poly.terms() {
                    let mut full = ym.clone();
                    for (i, e) in xm.0.iter().enumerate() {
                        full.0[i] += e;
                    }
                    for (i, e) in xmono.0.iter().enumerate() {
                        full.0[i] += e;
                    }
                    out.add_term(full, c.scale_int(nu));
                }
            }
        }
        out
    }

    /// Rebuilds the components `Y^j_i(x; y)` from the stored tensors.
    pub fn reconstruct_y(&self, coords: &Coords, j: usize, i: usize) -> Series {
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let mut out = Series::zero(coords, self.trunc);
        if let Some(by_idx) = self.r.get(&(j, i)) {
            for (i_t, poly) in by_idx {
                let nu = orderings_count(i_t);
                let ym = tuple_to_exponents(i_t, &fiber, coords.len());
                for (xmono, c) in poly.terms() {
                    let mut full = ym.clone();
                    for (a, e) in xmono.0.iter().enumerate() {
                        full.0[a] += e;
                    }
                    out.add_term(full, c.scale_int(nu));
                }
            }
        }
        out
    }

    /// Valences (k, l) with a nonzero interaction tensor.
    pub fn theta_menu(&self) -> Vec<(usize, usize)> {
        self.theta
            .iter()
            .filter(|(_, m)| m.values().any(|s| !s.is_zero()))
            .map(|(&kl, _)| kl)
            .collect()
    }

    /// In-valences k with a nonzero connection tensor.
    pub fn r_menu(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self
            .r
            .values()
            .flat_map(|m| m.iter())
            .filter(|(_, s)| !s.is_zero())
            .map(|(t, _)| t.len())
            .collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

/// One structural contraction of two interaction tensors: a xi-index of the
/// left entry is contracted against a y-index of the right entry. This is
/// the combinatorial skeleton shared with the graph-side edge collapse.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ContractionRecord {
    pub left: (usize, usize),
    pub right: (usize, usize),
    pub left_tuple: (IndexTuple, IndexTuple),
    pub right_tuple: (IndexTuple, IndexTuple),
    pub contracted_index: usize,
    pub result: (IndexTuple, IndexTuple),
}

/// Enumerates all single-index contractions of pairs of interaction
/// tensors producing a (k, l)-tensor.
pub fn crazysums_terms(set: &VertexTensorSet, k: usize, l: usize) -> Vec<ContractionRecord> {
    let mut out = Vec::new();
    for (&(k1, l1), left_map) in &set.theta {
        if l1 == 0 {
            continue;
        }
        for (&(k2, l2), right_map) in &set.theta {
            if k2 == 0 {
                continue;
            }
            if k1 + k2 != k + 1 || l1 + l2 != l + 1 {
                continue;
            }
            for ((i1, j1), v1) in left_map {
                if v1.is_zero() {
                    continue;
                }
                for ((i2, j2), v2) in right_map {
                    if v2.is_zero() {
                        continue;
                    }
                    let mut seen = std::collections::BTreeSet::new();
                    for (p1, &r1) in j1.iter().enumerate() {
                        for (p2, &r2) in i2.iter().enumerate() {
                            if r1 != r2 || !seen.insert(r1) {
                                continue;
                            }
                            let mut ji = j1.clone();
                            ji.remove(p1);
                            let mut ii = i2.clone();
                            ii.remove(p2);
                            let mut res_i = i1.clone();
                            res_i.extend_from_slice(&ii);
                            res_i.sort_unstable();
                            let mut res_j = ji;
                            res_j.extend_from_slice(j2);
                            res_j.sort_unstable();
                            out.push(ContractionRecord {
                                left: (k1, l1),
                                right: (k2, l2),
                                left_tuple: (i1.clone(), j1.clone()),
                                right_tuple: (i2.clone(), j2.clone()),
                                contracted_index: r1,
                                result: (res_i, res_j),
                            });
                        }
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// Checks the merged-tensor identity: for every (k, l) with k + l <= cutoff
/// the sum over all single-index contractions of interaction-tensor pairs
/// must vanish. Returns the profiles with a nonzero residual, each with the
/// index tuples that survive.
///
/// The sum is evaluated as the tensor extraction of
/// `sum_i (d_r Theta_x/d y^i)(d_l Theta_x/d xi_i)`, to which
/// `{Theta_x, Theta_x}` is proportional; an independent brute-force
/// contraction oracle lives in the tests.
pub fn check_crazysums(
    lin: &LinearizedTarget,
    cutoff: usize,
) -> Vec<((usize, usize), Vec<(IndexTuple, IndexTuple)>)> {
    let coords = lin.theta_x.coords().clone();
    let fiber = coords.indices_of_kind(VarKind::Fiber);
    let cofiber = coords.indices_of_kind(VarKind::Cofiber);
    let h = half_bracket(&lin.theta_x, &lin.theta_x, &fiber, &cofiber);
    let mut bad: BTreeMap<(usize, usize), Vec<(IndexTuple, IndexTuple)>> = BTreeMap::new();
    for (m, c) in h.terms() {
        if c.is_zero() {
            continue;
        }
        let (_, i_t, j_t) = split_monomial(m, &fiber, &cofiber);
        if i_t.len() + j_t.len() > cutoff {
            continue;
        }
        let list = bad.entry((i_t.len(), j_t.len())).or_default();
        if !list.contains(&(i_t.clone(), j_t.clone())) {
            list.push((i_t, j_t));
        }
    }
    bad.into_iter().collect()
}

/// A formal vertical multivector, encoded as a function of (y, xi) that is
/// polynomial in the cofibers.
#[derive(Clone, Debug)]
pub struct Multivector {
    pub series: Series,
    pub n: i64,
}

/// Schouten-type bracket on multivector encodings, normalized so that a
/// vector field bracketed with a function gives the directional derivative:
/// `[C, f] = C(f)`. Bracketing commutes with the assignment of functionals
/// to multivectors, which is how the change-of-data verifier consumes it.
pub fn schouten_functional_bracket(
    a: &Multivector,
    b: &Multivector,
) -> Result<Multivector, TargetError> {
    assert_eq!(a.n, b.n);
    let raw = poisson_bracket(&a.series, &b.series, a.n)?;
    Ok(Multivector {
        series: raw.scale(&Scalar::from_int(-1)),
        n: a.n,
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::{psm_coords, so3_target};
    use super::*;
    use crate::formal::d_x;

    #[test]
    fn canonical_pairs() {
        let coords = psm_coords(&[]);
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let cofiber = coords.indices_of_kind(VarKind::Cofiber);
        let y1 = Series::generator(&coords, 4, fiber[0]);
        let xi1 = Series::generator(&coords, 4, cofiber[0]);
        let xi2 = Series::generator(&coords, 4, cofiber[1]);
        assert_eq!(
            poisson_bracket(&y1, &xi1, 2).unwrap(),
            Series::one(&coords, 4)
        );
        assert!(poisson_bracket(&y1, &xi2, 2).unwrap().is_zero());
        // Functions of y alone commute.
        let f = y1.mul(&y1).unwrap();
        let g = Series::generator(&coords, 4, fiber[1]);
        assert!(poisson_bracket(&f, &g, 2).unwrap().is_zero());
    }

    #[test]
    fn bracket_shifted_antisymmetry_leibniz_jacobi() {
        use rand::{Rng, SeedableRng};
        let coords = psm_coords(&[]);
        let trunc = 6;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let cofiber = coords.indices_of_kind(VarKind::Cofiber);
        let mut random_homog = |rng: &mut rand_chacha::ChaCha8Rng| {
            let nxi = rng.gen_range(0..=2usize);
            let mut s = Series::constant(
                &coords,
                trunc,
                Scalar::from_int(rng.gen_range(1..=3)),
            );
            for _ in 0..rng.gen_range(0..=2usize) {
                let y = Series::generator(&coords, trunc, fiber[rng.gen_range(0..3)]);
                s = s.mul(&y).unwrap();
            }
            let mut choices: Vec<usize> = (0..3).collect();
            for _ in 0..(3 - nxi) {
                choices.remove(rng.gen_range(0..choices.len()));
            }
            for &i in &choices {
                let xi = Series::generator(&coords, trunc, cofiber[i]);
                s = s.mul(&xi).unwrap();
            }
            s
        };
        let n = 2i64;
        let k = n - 1;
        for _ in 0..40 {
            let f = random_homog(&mut rng);
            let g = random_homog(&mut rng);
            let h = random_homog(&mut rng);
            let pf = f.uniform_parity().unwrap_or(false) as i64;
            let pg = g.uniform_parity().unwrap_or(false) as i64;
            // shifted antisymmetry: {f,g} = -(-1)^{(|f|+k)(|g|+k)} {g,f}
            let fg = poisson_bracket(&f, &g, n).unwrap();
            let gf = poisson_bracket(&g, &f, n).unwrap();
            let sign = if (pf + k) * (pg + k) % 2 == 1 { 1 } else { -1 };
            assert_eq!(fg, gf.scale(&Scalar::from_int(sign)), "antisymmetry");
            // biderivation: {f, gh} = {f,g} h + (-1)^{(|f|+k)|g|} g {f,h}
            let gh = g.mul(&h).unwrap();
            let lhs = poisson_bracket(&f, &gh, n).unwrap();
            let s2 = if (pf + k) * pg % 2 == 1 { -1 } else { 1 };
            let rhs = fg
                .mul(&h)
                .unwrap()
                .add(
                    &g.mul(&poisson_bracket(&f, &h, n).unwrap())
                        .unwrap()
                        .scale(&Scalar::from_int(s2)),
                )
                .unwrap();
            assert_eq!(lhs.truncate_to(4), rhs.truncate_to(4), "Leibniz");
            // graded Jacobi:
            // {f,{g,h}} = {{f,g},h} + (-1)^{(|f|+k)(|g|+k)} {g,{f,h}}
            let j1 = poisson_bracket(&f, &poisson_bracket(&g, &h, n).unwrap(), n).unwrap();
            let j2 = poisson_bracket(&poisson_bracket(&f, &g, n).unwrap(), &h, n).unwrap();
            let j3 = poisson_bracket(&g, &poisson_bracket(&f, &h, n).unwrap(), n).unwrap();
            let s3 = if (pf + k) * (pg + k) % 2 == 1 { -1 } else { 1 };
            let rhs = j2.add(&j3.scale(&Scalar::from_int(s3))).unwrap();
            assert_eq!(j1.truncate_to(3), rhs.truncate_to(3), "Jacobi");
        }
    }

    #[test]
    fn cme_constant_and_so3() {
        let coords = psm_coords(&[]);
        let t = poisson_target(
            &coords,
            4,
            &[
                (0, 1, Series::one(&coords, 4)),
                (0, 2, Series::constant(&coords, 4, Scalar::from_int(-2))),
                (1, 2, Series::constant(&coords, 4, Scalar::from_frac(1, 3))),
            ],
        )
        .unwrap();
        assert!(t.check_cme().is_zero());
        let so3 = so3_target(&coords, 4);
        assert!(so3.check_cme().is_zero());
    }

    /// Independent Schouten-bracket oracle for bivectors:
    /// `[pi,pi]^{ijk} = sum_l (pi^{li} d_l pi^{jk} + pi^{lj} d_l pi^{ki}
    ///  + pi^{lk} d_l pi^{ij})` on components, no series bracket involved.
    fn schouten_oracle(
        coords: &Coords,
        trunc: usize,
        pi: &dyn Fn(usize, usize) -> Series,
    ) -> BTreeMap<(usize, usize, usize), Series> {
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let mut out = BTreeMap::new();
        for i in 0..3 {
            for j in (i + 1)..3 {
                for k in (j + 1)..3 {
                    let mut acc = Series::zero(coords, trunc);
                    for l in 0..3 {
                        for (a, b, c) in [(i, j, k), (j, k, i), (k, i, j)] {
                            let term = pi(l, a).mul(&pi(b, c).derive(fiber[l])).unwrap();
                            acc = acc.add(&term).unwrap();
                        }
                    }
                    out.insert((i, j, k), acc);
                }
            }
        }
        out
    }

    #[test]
    fn cme_matches_schouten_oracle_on_corrupted_bivector() {
        let coords = psm_coords(&[]);
        let trunc = 5;
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let cofiber = coords.indices_of_kind(VarKind::Cofiber);
        let y = |i: usize| Series::generator(&coords, trunc, fiber[i]);
        // pi^{12} = y3, pi^{13} = y1, pi^{23} = 0: fails Jacobi.
        let entries = [(0usize, 1usize, y(2)), (0, 2, y(0))];
        let target = poisson_target(&coords, trunc, &entries).unwrap();
        let res = target.check_cme();
        assert!(!res.is_zero());
        let pi = |a: usize, b: usize| -> Series {
            if a == b {
                return Series::zero(&coords, trunc);
            }
            for (i, j, v) in entries.iter() {
                if (*i, *j) == (a, b) {
                    return v.clone();
                }
                if (*i, *j) == (b, a) {
                    return v.scale(&Scalar::from_int(-1));
                }
            }
            Series::zero(&coords, trunc)
        };
        let oracle = schouten_oracle(&coords, trunc, &pi);
        // The engine residual is c * sum_{i<j<k} [pi,pi]^{ijk} xi_i xi_j xi_k
        // for one convention constant c; our bracket normalization gives
        // c = +2 (hand expansion of 2 sum_l (d_r Theta/d y^l)(d_l Theta/d xi_l)).
        let mut engine_from_oracle = Series::zero(&coords, trunc);
        for ((i, j, k), oterm) in &oracle {
            let xi = |a: usize| Series::generator(&coords, trunc, cofiber[a]);
            let mono = xi(*i).mul(&xi(*j)).unwrap().mul(&xi(*k)).unwrap();
            engine_from_oracle = engine_from_oracle
                .add(&oterm.mul(&mono).unwrap().scale(&Scalar::from_int(2)))
                .unwrap();
        }
        assert_eq!(res, engine_from_oracle, "engine vs Schouten oracle");
    }

    #[test]
    fn linearize_flat_is_shift() {
        let coords = psm_coords(&[]);
        let trunc = 4;
        let so3 = so3_target(&coords, trunc);
        let phi = FormalExpMap::flat_on(&coords, trunc).unwrap();
        let lin = linearize_target(&so3, &phi, trunc).unwrap();
        let base = coords.indices_of_kind(VarKind::Base);
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let mut asg = Series::identity_assignment(&coords, trunc);
        for i in 0..3 {
            asg.insert(
                fiber[i],
                Series::generator(&coords, trunc, base[i])
                    .add(&Series::generator(&coords, trunc, fiber[i]))
                    .unwrap(),
            );
        }
        assert_eq!(lin.theta_x, so3.theta.substitute(&asg).unwrap());
    }

    #[test]
    fn linearization_is_bracket_homomorphism() {
        use rand::{Rng, SeedableRng};
        let coords = psm_coords(&[]);
        let trunc = 5;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let base = coords.indices_of_kind(VarKind::Base);
        let mut entries = Vec::new();
        for i in 0..3usize {
            for a in 0..3usize {
                for b in a..3usize {
                    if !rng.gen_bool(0.35) {
                        continue;
                    }
                    let c = rng.gen_range(1..=2i64);
                    let mut poly = Series::constant(&coords, trunc, Scalar::from_int(c));
                    if rng.gen_bool(0.4) {
                        let x = Series::generator(&coords, trunc, base[rng.gen_range(0..3)]);
                        poly = poly.mul(&x).unwrap();
                    }
                    let mut j = vec![0u32; 3];
                    j[a] += 1;
                    j[b] += 1;
                    entries.push((i, j, poly));
                }
            }
        }
        let phi = FormalExpMap::from_entries(&coords, trunc, &entries).unwrap();
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let cofiber = coords.indices_of_kind(VarKind::Cofiber);
        for _ in 0..6 {
            let mut f = Series::generator(&coords, trunc, fiber[rng.gen_range(0..3)]);
            f = f
                .mul(&Series::generator(&coords, trunc, cofiber[rng.gen_range(0..3)]))
                .unwrap();
            let mut g = Series::generator(&coords, trunc, fiber[rng.gen_range(0..3)]);
            if rng.gen_bool(0.5) {
                g = g
                    .mul(&Series::generator(&coords, trunc, cofiber[rng.gen_range(0..3)]))
                    .unwrap();
            }
            let lhs = lift_substitute(&poisson_bracket(&f, &g, 2).unwrap(), &phi).unwrap();
            let rhs = poisson_bracket(
                &lift_substitute(&f, &phi).unwrap(),
                &lift_substitute(&g, &phi).unwrap(),
                2,
            )
            .unwrap();
            assert_eq!(lhs.truncate_to(3), rhs.truncate_to(3));
        }
    }

    #[test]
    fn vertex_tensor_extraction_and_roundtrip() {
        let coords = psm_coords(&[]);
        let trunc = 4;
        // Constant pi, flat phi: only the (0,2) tensors survive, with the
        // symmetric normalization Theta^{ij} = pi^{ij}/2.
        let t = poisson_target(&coords, trunc, &[(0, 1, Series::one(&coords, trunc))]).unwrap();
        let phi = FormalExpMap::flat_on(&coords, trunc).unwrap();
        let lin = linearize_target(&t, &phi, trunc).unwrap();
        let set = extract_vertex_tensors(&lin, trunc);
        assert_eq!(set.theta_menu(), vec![(0, 2)]);
        let t02 = &set.theta[&(0, 2)];
        assert_eq!(
            t02[&(vec![], vec![0, 1])],
            Series::constant(&coords, trunc, Scalar::from_frac(1, 2))
        );
        // Flat phi: Y^j_{i;()} = -delta and nothing else.
        for ((j, i), m) in &set.r {
            for (tup, v) in m {
                if tup.is_empty() && i == j {
                    assert_eq!(*v, Series::constant(&coords, trunc, Scalar::from_int(-1)));
                } else {
                    assert!(v.is_zero(), "unexpected Y tensor at ({},{}) {:?}", j, i, tup);
                }
            }
        }
        // Round trip on the so(3) target through a quadratic map.
        let so3 = so3_target(&coords, trunc);
        let mut gamma = vec![vec![vec![Series::zero(&coords, trunc); 3]; 3]; 3];
        gamma[0][1][2] = Series::constant(&coords, trunc, Scalar::from_int(2));
        gamma[0][2][1] = gamma[0][1][2].clone();
        let conn = crate::formal::ConnectionData::new(&coords, trunc, gamma).unwrap();
        let phi2 = conn.exp_map().unwrap();
        let lin2 = linearize_target(&so3, &phi2, trunc).unwrap();
        let set2 = extract_vertex_tensors(&lin2, trunc);
        assert_eq!(set2.reconstruct_theta(&coords), lin2.theta_x);
        for j in 0..3 {
            for i in 0..3 {
                assert_eq!(
                    set2.reconstruct_y(&coords, j, i),
                    lin2.r_form.components[j][i]
                );
            }
        }
        // Quadratic phi: Y^j_{i;k} = -Gamma^j_{ik}.
        let y_tensor = &set2.r[&(0, 1)];
        assert_eq!(
            y_tensor[&vec![2usize]],
            Series::constant(&coords, trunc, Scalar::from_int(-2))
        );
    }

    #[test]
    fn so3_vertex_tensors_shape() {
        let coords = psm_coords(&[]);
        let trunc = 4;
        let so3 = so3_target(&coords, trunc);
        let phi = FormalExpMap::flat_on(&coords, trunc).unwrap();
        let lin = linearize_target(&so3, &phi, trunc).unwrap();
        let set = extract_vertex_tensors(&lin, trunc);
        let mut menu = set.theta_menu();
        menu.sort_unstable();
        assert_eq!(menu, vec![(0, 2), (1, 2)]);
        // Theta^{12}_{3} = 1/2 eps^{123} in the symmetric normalization.
        let t12 = &set.theta[&(1, 2)];
        assert_eq!(
            t12[&(vec![2], vec![0, 1])],
            Series::constant(&coords, trunc, Scalar::from_frac(1, 2))
        );
    }

    #[test]
    fn crazysums_empty_iff_cme() {
        let coords = psm_coords(&[]);
        let trunc = 7;
        let so3 = so3_target(&coords, trunc);
        let phi = FormalExpMap::flat_on(&coords, trunc).unwrap();
        let lin = linearize_target(&so3, &phi, trunc).unwrap();
        assert!(check_crazysums(&lin, 6).is_empty());
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let bad = poisson_target(
            &coords,
            trunc,
            &[
                (0, 1, Series::generator(&coords, trunc, fiber[2])),
                (0, 2, Series::generator(&coords, trunc, fiber[0])),
            ],
        )
        .unwrap();
        let lin_bad = linearize_target(&bad, &phi, trunc).unwrap();
        assert!(!check_crazysums(&lin_bad, 6).is_empty());
    }

    #[test]
    fn dcme_for_so3() {
        let coords = psm_coords(&[]);
        let trunc = 6;
        let so3 = so3_target(&coords, trunc);
        let phi = FormalExpMap::flat_on(&coords, trunc).unwrap();
        let (a, b) = check_dcme(&so3, &phi, 4).unwrap();
        assert!(a.is_zero(), "fiberwise CME fails: {}", a);
        assert!(b.is_zero(), "horizontality fails: {}", b);

        let mut gamma = vec![vec![vec![Series::zero(&coords, trunc); 3]; 3]; 3];
        gamma[1][0][0] = Series::constant(&coords, trunc, Scalar::from_int(1));
        gamma[2][0][1] = Series::constant(&coords, trunc, Scalar::from_frac(1, 2));
        gamma[2][1][0] = gamma[2][0][1].clone();
        let conn = crate::formal::ConnectionData::new(&coords, trunc, gamma).unwrap();
        let phi2 = conn.exp_map().unwrap();
        let (a2, b2) = check_dcme(&so3, &phi2, 3).unwrap();
        assert!(a2.is_zero(), "fiberwise CME fails: {}", a2);
        assert!(b2.is_zero(), "horizontality fails: {}", b2);
    }

    #[test]
    fn schouten_functional_examples() {
        let coords = psm_coords(&[]);
        let trunc = 5;
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        let cofiber = coords.indices_of_kind(VarKind::Cofiber);
        // C = y2 d/dy1 encoded as y2 xi1; f = y1 y3.
        let c = Multivector {
            series: Series::generator(&coords, trunc, fiber[1])
                .mul(&Series::generator(&coords, trunc, cofiber[0]))
                .unwrap(),
            n: 2,
        };
        let f = Multivector {
            series: Series::generator(&coords, trunc, fiber[0])
                .mul(&Series::generator(&coords, trunc, fiber[2]))
                .unwrap(),
            n: 2,
        };
        let cf = schouten_functional_bracket(&c, &f).unwrap();
        let expect = Series::generator(&coords, trunc, fiber[1])
            .mul(&Series::generator(&coords, trunc, fiber[2]))
            .unwrap();
        assert_eq!(cf.series, expect);
        // Constant multivectors commute.
        let k1 = Multivector {
            series: Series::generator(&coords, trunc, cofiber[0])
                .mul(&Series::generator(&coords, trunc, cofiber[1]))
                .unwrap(),
            n: 2,
        };
        let k2 = Multivector {
            series: Series::generator(&coords, trunc, cofiber[2]),
            n: 2,
        };
        assert!(schouten_functional_bracket(&k1, &k2)
            .unwrap()
            .series
            .is_zero());
        // [pi, pi] vanishes iff the CME holds.
        let so3 = so3_target(&coords, trunc);
        let m = Multivector {
            series: so3.theta.clone(),
            n: 2,
        };
        assert!(schouten_functional_bracket(&m, &m).unwrap().series.is_zero());
    }

    #[test]
    fn horizontality_matches_flat_sections() {
        let coords = psm_coords(&[]);
        let trunc = 5;
        let phi = FormalExpMap::flat_on(&coords, trunc).unwrap();
        let so3 = so3_target(&coords, trunc);
        let lin = linearize_target(&so3, &phi, trunc).unwrap();
        let base = coords.indices_of_kind(VarKind::Base);
        let f = Series::generator(&coords, trunc, base[0]);
        let pulled = phi.taylor_pullback(&f).unwrap();
        let res = d_x(&pulled)
            .sub(&poisson_bracket(&lin.s_r, &pulled, 2).unwrap())
            .unwrap();
        assert!(res.is_zero());
    }
}
