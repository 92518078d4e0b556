//! Formal exponential maps, Taylor pullbacks, the Grothendieck connection
//! and its flatness, gauge changes, and the symmetric-word differential
//! operators they induce.
//!
//! A formal exponential map on an n-dimensional base is the coefficient
//! family of
//!
//! ```text
//! phi^i(x; y) = x^i + y^i + sum_{|J| >= 2} phi^i_J(x) y^J
//! ```
//!
//! with polynomial coefficients in x. The associated connection form is
//!
//! ```text
//! Y^k_i = - [ (d phi / d y)^{-1} ]^k_j  d phi^j / d x^i
//! ```
//!
//! The overall minus makes Taylor pullbacks flat sections: for the flat map
//! the operator d_x + R annihilates every function of x + y. (The sign is
//! fixed here once; all downstream conventions inherit it.)

use crate::graded::{
    CoordinateSystem, Coords, GradedError, Monomial, Series, VarKind, Variable,
};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum FormalError {
    #[error("component {0} has a wrong forced part: expected x^i + y^i + O(y^2)")]
    BadForcedPart(usize),
    #[error("truncation {have} too small, need at least {need}")]
    TruncationTooSmall { have: usize, need: usize },
    #[error("word length {0} exceeds truncation {1}")]
    WordTooLong(usize, usize),
    #[error("variation touches forced order-0/1 coefficients of component {0}")]
    VariationTouchesLowOrder(usize),
    #[error("expected a vertical series (no dx factors)")]
    NotVertical,
    #[error(transparent)]
    Graded(#[from] GradedError),
}

/// Builds the standard chart for an n-dimensional base: x^1..x^n (base),
/// y^1..y^n (fiber, given degrees), dx^1..dx^n (forms), then any extra
/// even parameters.
pub fn geometry_coords(
    n: usize,
    fiber_degrees: &[i64],
    params: &[&str],
) -> Result<Coords, GradedError> {
    assert_eq!(fiber_degrees.len(), n);
    let mut vars = Vec::with_capacity(3 * n + params.len());
    for i in 0..n {
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
    for i in 0..n {
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

/// Re-expresses a series on another coordinate system by variable name.
/// Panics if a variable actually used by a term is missing on the target.
pub fn embed(s: &Series, target: &Coords) -> Series {
    let src = s.coords();
    let map: Vec<Option<usize>> = (0..src.len())
        .map(|i| target.index_of(&src.var(i).name))
        .collect();
    let mut out = Series::zero(target, s.trunc());
    for (m, c) in s.terms() {
        let mut e = vec![0u32; target.len()];
        for (i, &exp) in m.0.iter().enumerate() {
            if exp == 0 {
                continue;
            }
            let j = map[i].unwrap_or_else(|| {
                panic!("variable `{}` missing in target", src.var(i).name)
            });
            e[j] = exp;
        }
        out.add_term(Monomial(e), c.clone());
    }
    out
}

/// The de Rham differential in the base directions: `d_x s = dx^i d s/d x^i`
/// (form factor on the left). Param variables are not differentiated.
pub fn d_x(s: &Series) -> Series {
    let coords = s.coords().clone();
    let n_base = coords.indices_of_kind(VarKind::Base).len();
    let mut out = Series::zero(&coords, s.trunc());
    for i in coords.indices_of_kind(VarKind::Base) {
        let ds = s.derive(i);
        if ds.is_zero() {
            continue;
        }
        let dx_name = format!("d{}", coords.var(i).name);
        let dxi = coords
            .index_of(&dx_name)
            .unwrap_or_else(|| panic!("form partner `{}` missing", dx_name));
        let dx_gen = Series::generator(&coords, s.trunc(), dxi);
        out = out.add(&dx_gen.mul(&ds).unwrap()).unwrap();
    }
    let _ = n_base;
    out
}

/// A formal exponential map held as its n component series
/// `phi^i(x; y) = x^i + y^i + ...` on a shared chart.
#[derive(Clone, Debug)]
pub struct FormalExpMap {
    coords: Coords,
    trunc: usize,
    dim: usize,
    base: Vec<usize>,
    fiber: Vec<usize>,
    components: Vec<Series>,
    jac_inv: Arc<OnceLock<Vec<Vec<Series>>>>,
}

impl FormalExpMap {
    /// The flat map `phi^i = x^i + y^i` on a fresh chart.
    pub fn flat(n: usize, trunc: usize) -> Result<Self, FormalError> {
        let coords = geometry_coords(n, &vec![0; n], &[])?;
        Self::flat_on(&coords, trunc)
    }

    /// The flat map on an existing chart (useful when parameters are needed).
    pub fn flat_on(coords: &Coords, trunc: usize) -> Result<Self, FormalError> {
        let base = coords.indices_of_kind(VarKind::Base);
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        assert_eq!(base.len(), fiber.len());
        let n = base.len();
        let mut components = Vec::with_capacity(n);
        for i in 0..n {
            let x = Series::generator(coords, trunc, base[i]);
            let y = Series::generator(coords, trunc, fiber[i]);
            components.push(x.add(&y)?);
        }
        Ok(FormalExpMap {
            coords: coords.clone(),
            trunc,
            dim: n,
            base,
            fiber,
            components,
            jac_inv: Arc::new(OnceLock::new()),
        })
    }

    /// Builds a map from coefficient entries `(i, J, poly)` with |J| >= 2,
    /// where `poly` is a polynomial in the base (and param) variables on the
    /// same chart and `J` is an exponent vector over the fiber variables.
    pub fn from_entries(
        coords: &Coords,
        trunc: usize,
        entries: &[(usize, Vec<u32>, Series)],
    ) -> Result<Self, FormalError> {
        let mut map = Self::flat_on(coords, trunc)?;
        for (i, j_exp, poly) in entries {
            assert!(*i < map.dim, "component index out of range");
            let order: u32 = j_exp.iter().sum();
            if order < 2 {
                return Err(FormalError::VariationTouchesLowOrder(*i));
            }
            for (idx, var) in coords.vars().iter().enumerate() {
                if matches!(var.kind, VarKind::Fiber | VarKind::Form)
                    && poly.terms().any(|(m, _)| m.0[idx] > 0)
                {
                    return Err(FormalError::NotVertical);
                }
            }
            let mut mono_exp = vec![0u32; coords.len()];
            for (a, &e) in j_exp.iter().enumerate() {
                mono_exp[map.fiber[a]] = e;
            }
            let mut y_mono = Series::zero(coords, trunc);
            y_mono.add_term(Monomial(mono_exp), Scalar::one());
            let term = poly.mul(&y_mono)?;
            map.components[*i] = map.components[*i].add(&term)?;
        }
        map.jac_inv = Arc::new(OnceLock::new());
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<(), FormalError> {
        for (i, phi) in self.components.iter().enumerate() {
            // Order-0 part in y must be x^i, order-1 part exactly y^i.
            let mut low = Series::zero(&self.coords, self.trunc);
            for (m, c) in phi.terms() {
                if m.trunc_degree(&self.coords) <= 1 {
                    low.add_term(m.clone(), c.clone());
                }
            }
            let x = Series::generator(&self.coords, self.trunc, self.base[i]);
            let y = Series::generator(&self.coords, self.trunc, self.fiber[i]);
            if low != x.add(&y)? {
                return Err(FormalError::BadForcedPart(i));
            }
        }
        Ok(())
    }

    pub fn coords(&self) -> &Coords {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trunc(&self) -> usize {
        self.trunc
    }

    pub fn component(&self, i: usize) -> &Series {
        &self.components[i]
    }

    pub fn base_indices(&self) -> &[usize] {
        &self.base
    }

    pub fn fiber_indices(&self) -> &[usize] {
        &self.fiber
    }

    /// The fiber Jacobian `J^k_j = d phi^k / d y^j`.
    fn fiber_jacobian(&self) -> Vec<Vec<Series>> {
        (0..self.dim)
            .map(|k| {
                (0..self.dim)
                    .map(|j| self.components[k].derive(self.fiber[j]))
                    .collect()
            })
            .collect()
    }

    /// Inverse of the fiber Jacobian by the terminating Neumann series on
    /// its nilpotent correction. Computed once per map and cached.
    pub fn fiber_jacobian_inverse(&self) -> Result<Vec<Vec<Series>>, FormalError> {
        if let Some(inv) = self.jac_inv.get() {
            return Ok(inv.clone());
        }
        let inv = self.compute_jacobian_inverse()?;
        let _ = self.jac_inv.set(inv.clone());
        Ok(inv)
    }

    fn compute_jacobian_inverse(&self) -> Result<Vec<Vec<Series>>, FormalError> {
        let jac = self.fiber_jacobian();
        let n = self.dim;
        let one = Series::one(&self.coords, self.trunc);
        let zero = Series::zero(&self.coords, self.trunc);
        // A = J - I raises fiber degree by at least 1.
        let mut a = vec![vec![zero.clone(); n]; n];
        for k in 0..n {
            for j in 0..n {
                a[k][j] = if k == j {
                    jac[k][j].sub(&one)?
                } else {
                    jac[k][j].clone()
                };
            }
        }
        let mut inv: Vec<Vec<Series>> = (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| if k == j { one.clone() } else { zero.clone() })
                    .collect()
            })
            .collect();
        let mut power = inv.clone();
        for _ in 0..self.trunc {
            // power <- -A * power
            let mut next = vec![vec![zero.clone(); n]; n];
            let mut all_zero = true;
            for k in 0..n {
                for j in 0..n {
                    let mut acc = zero.clone();
                    for m in 0..n {
                        acc = acc.add(&a[k][m].mul(&power[m][j])?)?;
                    }
                    acc = acc.scale(&Scalar::from_int(-1));
                    if !acc.is_zero() {
                        all_zero = false;
                    }
                    next[k][j] = acc;
                }
            }
            if all_zero {
                break;
            }
            for k in 0..n {
                for j in 0..n {
                    inv[k][j] = inv[k][j].add(&next[k][j])?;
                }
            }
            power = next;
        }
        Ok(inv)
    }

    /// Taylor pullback of a polynomial in the base variables:
    /// substitutes `x^i -> phi^i(x; y)`.
    pub fn taylor_pullback(&self, f: &Series) -> Result<Series, FormalError> {
        let mut asg = Series::identity_assignment(&self.coords, self.trunc);
        for i in 0..self.dim {
            asg.insert(self.base[i], self.components[i].clone());
        }
        Ok(f.substitute(&asg)?)
    }
}

/// The Grothendieck form `R = Y^k_i(x;y) dx^i d/dy^k`, stored by its
/// components together with the packaged one-forms `R(y^k)`.
#[derive(Clone, Debug)]
pub struct GrothendieckForm {
    coords: Coords,
    trunc: usize,
    base: Vec<usize>,
    fiber: Vec<usize>,
    /// `components[k][i] = Y^k_i`.
    pub components: Vec<Vec<Series>>,
}

impl GrothendieckForm {
    pub fn new(
        coords: &Coords,
        trunc: usize,
        components: Vec<Vec<Series>>,
    ) -> GrothendieckForm {
        GrothendieckForm {
            coords: coords.clone(),
            trunc,
            base: coords.indices_of_kind(VarKind::Base),
            fiber: coords.indices_of_kind(VarKind::Fiber),
            components,
        }
    }

    pub fn coords(&self) -> &Coords {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.fiber.len()
    }

    /// `R(y^k) = dx^i Y^k_i` as a single series.
    pub fn packaged(&self, k: usize) -> Series {
        let mut out = Series::zero(&self.coords, self.trunc);
        for (i, &b) in self.base.iter().enumerate() {
            let dx_name = format!("d{}", self.coords.var(b).name);
            let dxi = self.coords.index_of(&dx_name).unwrap();
            let dx_gen = Series::generator(&self.coords, self.trunc, dxi);
            out = out
                .add(&dx_gen.mul(&self.components[k][i]).unwrap())
                .unwrap();
        }
        out
    }

    /// Applies R as a derivation: `R(s) = sum_k R(y^k) d s / d y^k`.
    pub fn apply(&self, s: &Series) -> Series {
        let mut out = Series::zero(&self.coords, self.trunc);
        for (k, &f) in self.fiber.iter().enumerate() {
            let ds = s.derive(f);
            if ds.is_zero() {
                continue;
            }
            out = out.add(&self.packaged(k).mul(&ds).unwrap()).unwrap();
        }
        out
    }

    /// `D_G s = d_x s + R(s)`.
    pub fn covariant_derivative(&self, s: &Series) -> Series {
        d_x(s).add(&self.apply(s)).unwrap()
    }

    /// Nonzero components of `d_x R + 1/2 [R, R]` up to fiber order `order`,
    /// evaluated as `(d_x + R)(R(y^k))` per fiber generator. The result is
    /// exact when the stored components are exact past `order` (the y-
    /// derivative inside R costs one order).
    pub fn flatness_residual(&self, order: usize) -> Vec<(usize, Series)> {
        let mut out = Vec::new();
        for k in 0..self.fiber.len() {
            let rk = self.packaged(k);
            let res = self.covariant_derivative(&rk).truncate_to(order);
            if !res.is_zero() {
                out.push((k, res));
            }
        }
        out
    }
}

/// Computes the Grothendieck form of a formal exponential map.
pub fn compute_r(phi: &FormalExpMap, order: usize) -> Result<GrothendieckForm, FormalError> {
    if order > phi.trunc() {
        return Err(FormalError::TruncationTooSmall {
            have: phi.trunc(),
            need: order,
        });
    }
    let n = phi.dim();
    let inv = phi.fiber_jacobian_inverse()?;
    let mut comps = Vec::with_capacity(n);
    for k in 0..n {
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = Series::zero(phi.coords(), phi.trunc());
            for j in 0..n {
                let dxphi = phi.component(j).derive(phi.base_indices()[i]);
                acc = acc.add(&inv[k][j].mul(&dxphi)?)?;
            }
            row.push(acc.scale(&Scalar::from_int(-1)).truncate_to(order));
        }
        comps.push(row);
    }
    Ok(GrothendieckForm::new(phi.coords(), phi.trunc(), comps))
}

/// A vertical vector field `C = C^k(x;y) d/dy^k`, the generator of a gauge
/// transformation of the exponential map.
#[derive(Clone, Debug)]
pub struct GaugeGenerator {
    coords: Coords,
    fiber: Vec<usize>,
    pub components: Vec<Series>,
    pub provenance: String,
}

impl GaugeGenerator {
    pub fn apply(&self, s: &Series) -> Series {
        let mut out = Series::zero(&self.coords, s.trunc());
        for (k, &f) in self.fiber.iter().enumerate() {
            let ds = s.derive(f);
            if ds.is_zero() {
                continue;
            }
            out = out.add(&self.components[k].mul(&ds).unwrap()).unwrap();
        }
        out
    }
}

/// `C = - (d_y phi)^{-1} . phi_dot` as vertical components; `phi_dot` must
/// vanish to fiber order 1 (the forced parts may not vary).
pub fn gauge_generator(
    phi: &FormalExpMap,
    phi_dot: &[Series],
    provenance: &str,
) -> Result<GaugeGenerator, FormalError> {
    assert_eq!(phi_dot.len(), phi.dim());
    for (i, v) in phi_dot.iter().enumerate() {
        for (m, c) in v.terms() {
            if m.trunc_degree(phi.coords()) < 2 && !c.is_zero() {
                return Err(FormalError::VariationTouchesLowOrder(i));
            }
        }
        for (idx, var) in phi.coords().vars().iter().enumerate() {
            if var.kind == VarKind::Form && v.terms().any(|(m, _)| m.0[idx] > 0) {
                return Err(FormalError::NotVertical);
            }
        }
    }
    let inv = phi.fiber_jacobian_inverse()?;
    let n = phi.dim();
    let mut comps = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Series::zero(phi.coords(), phi.trunc());
        for j in 0..n {
            acc = acc.add(&inv[k][j].mul(&phi_dot[j])?)?;
        }
        comps.push(acc.scale(&Scalar::from_int(-1)));
    }
    Ok(GaugeGenerator {
        coords: phi.coords().clone(),
        fiber: phi.fiber_indices().to_vec(),
        components: comps,
        provenance: provenance.to_string(),
    })
}

/// Torsion-free connection data: Christoffel symbols and optional higher
/// coefficients of the induced connection form.
#[derive(Clone, Debug)]
pub struct ConnectionData {
    coords: Coords,
    trunc: usize,
    /// `gamma[k][i][j]`, polynomial in x, symmetric in (i, j).
    pub gamma: Vec<Vec<Vec<Series>>>,
}

impl ConnectionData {
    pub fn new(
        coords: &Coords,
        trunc: usize,
        gamma: Vec<Vec<Vec<Series>>>,
    ) -> Result<Self, FormalError> {
        let n = gamma.len();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if gamma[k][i][j] != gamma[k][j][i] {
                        return Err(FormalError::BadForcedPart(k));
                    }
                }
            }
        }
        Ok(ConnectionData {
            coords: coords.clone(),
            trunc,
            gamma,
        })
    }

    /// The quadratic exponential map `phi^k = x^k + y^k - 1/2 G^k_ij y^i y^j`.
    pub fn exp_map(&self) -> Result<FormalExpMap, FormalError> {
        let n = self.gamma.len();
        let fiber = self.coords.indices_of_kind(VarKind::Fiber);
        let mut entries = Vec::new();
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    // y^i y^j with i <= j collects G^k_ij + G^k_ji = 2 G^k_ij
                    // off-diagonal, G^k_ii on the diagonal.
                    let g = &self.gamma[k][i][j];
                    if g.is_zero() {
                        continue;
                    }
                    let coeff = if i == j {
                        g.scale(&Scalar::from_frac(-1, 2))
                    } else {
                        g.scale(&Scalar::from_int(-1))
                    };
                    let mut j_exp = vec![0u32; fiber.len()];
                    j_exp[i] += 1;
                    j_exp[j] += 1;
                    entries.push((k, j_exp, coeff));
                }
            }
        }
        FormalExpMap::from_entries(&self.coords, self.trunc, &entries)
    }
}

/// A polynomial one-parameter family `phi_t` over a chart with a designated
/// parameter variable.
#[derive(Clone, Debug)]
pub struct ExpMapFamily {
    pub map: FormalExpMap,
    pub param: usize,
}

impl ExpMapFamily {
    pub fn new(map: FormalExpMap, param_name: &str) -> Self {
        let param = map
            .coords()
            .index_of(param_name)
            .expect("parameter variable missing");
        assert_eq!(map.coords().var(param).kind, VarKind::Param);
        ExpMapFamily { map, param }
    }

    /// Exact coefficientwise t-derivative of the components.
    pub fn velocity(&self) -> Vec<Series> {
        (0..self.map.dim())
            .map(|i| self.map.component(i).derive(self.param))
            .collect()
    }
}

/// Residual of the gauge-variation identity `dR/dt - d_x C - [R, C] = 0`,
/// reported per fiber generator, together with the flat-section variation
/// residual `ds/dt + C(s)` for `s = T phi_t^* f`.
pub struct GaugeVariationReport {
    pub connection_residual: Vec<(usize, Series)>,
    pub section_residual: Option<Series>,
}

pub fn check_gauge_variation(
    family: &ExpMapFamily,
    order: usize,
    probe: Option<&Series>,
) -> Result<GaugeVariationReport, FormalError> {
    let phi = &family.map;
    let r = compute_r(phi, order)?;
    let c = gauge_generator(phi, &family.velocity(), "family velocity")?;
    let mut connection_residual = Vec::new();
    for k in 0..phi.dim() {
        let rk = r.packaged(k);
        let ck = c.components[k].clone();
        // dR/dt - d_x C - (R C - C R) applied to y^k.
        let res = rk
            .derive(family.param)
            .sub(&d_x(&ck))?
            .sub(&r.apply(&ck))?
            .add(&c.apply(&rk))?
            .truncate_to(order);
        if !res.is_zero() {
            connection_residual.push((k, res));
        }
    }
    let section_residual = match probe {
        Some(f) => {
            let sigma = phi.taylor_pullback(f)?;
            let res = sigma
                .derive(family.param)
                .add(&c.apply(&sigma))?
                .truncate_to(order);
            if res.is_zero() {
                None
            } else {
                Some(res)
            }
        }
        None => None,
    };
    Ok(GaugeVariationReport {
        connection_residual,
        section_residual,
    })
}

/// A symmetric word of coordinate vector fields, given by fiber indices.
pub type SymmetricWord = Vec<usize>;

/// `pbw(X_1 ⊙ ... ⊙ X_m)(f)`: iterated t-derivatives at 0 of
/// `f(phi(t_1 X_1 + ... + t_m X_m))` for coordinate fields `X_a = d/dx^{i_a}`,
/// computed exactly on polynomial `f`.
pub fn pbw_apply(
    phi: &FormalExpMap,
    word: &SymmetricWord,
    f: &Series,
) -> Result<Series, FormalError> {
    let m = word.len();
    if m > phi.trunc() {
        return Err(FormalError::WordTooLong(m, phi.trunc()));
    }
    if m == 0 {
        return Ok(f.clone());
    }
    let n = phi.dim();
    // Extended chart with one even parameter per letter.
    let mut vars: Vec<Variable> = phi.coords().vars().to_vec();
    for a in 0..m {
        vars.push(Variable {
            name: format!("t_pbw{}", a + 1),
            degree: phi.coords().var(phi.fiber_indices()[word[a]]).degree,
            kind: VarKind::Param,
        });
    }
    let ext = CoordinateSystem::new(vars)?;
    let t_index: Vec<usize> = (0..m)
        .map(|a| ext.index_of(&format!("t_pbw{}", a + 1)).unwrap())
        .collect();

    let pulled = embed(&phi.taylor_pullback(f)?, &ext);
    // Substitute y^j -> sum over letters a with word[a] = j of t_a.
    let mut asg: BTreeMap<usize, Series> = Series::identity_assignment(&ext, phi.trunc());
    for j in 0..n {
        let yext = ext.index_of(&phi.coords().var(phi.fiber_indices()[j]).name).unwrap();
        let mut sum = Series::zero(&ext, phi.trunc());
        for (a, &wa) in word.iter().enumerate() {
            if wa == j {
                sum = sum.add(&Series::generator(&ext, phi.trunc(), t_index[a]))?;
            }
        }
        asg.insert(yext, sum);
    }
    let mut g = pulled.substitute(&asg)?;
    for a in (0..m).rev() {
        g = g.derive(t_index[a]);
    }
    // Set every parameter to zero: keep only t-free monomials.
    let mut restricted = Series::zero(&ext, phi.trunc());
    'outer: for (mono, cf) in g.terms() {
        for &ti in &t_index {
            if mono.0[ti] > 0 {
                continue 'outer;
            }
        }
        restricted.add_term(mono.clone(), cf.clone());
    }
    Ok(embed(&restricted, phi.coords()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly_x(coords: &Coords, trunc: usize, i: usize) -> Series {
        let base = coords.indices_of_kind(VarKind::Base);
        Series::generator(coords, trunc, base[i])
    }

    #[test]
    fn flat_map_gives_minus_delta() {
        let phi = FormalExpMap::flat(2, 4).unwrap();
        let r = compute_r(&phi, 4).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                let expect = if k == i {
                    Series::constant(phi.coords(), 4, Scalar::from_int(-1))
                } else {
                    Series::zero(phi.coords(), 4)
                };
                assert_eq!(r.components[k][i], expect);
            }
        }
        assert!(r.flatness_residual(3).is_empty());
    }

    #[test]
    fn quadratic_map_reproduces_christoffel_pattern() {
        // phi^i = x^i + y^i - 1/2 G^i_jk y^j y^k, constant symmetric G.
        let coords = geometry_coords(2, &[0, 0], &[]).unwrap();
        let trunc = 4;
        let mut gamma =
            vec![vec![vec![Series::zero(&coords, trunc); 2]; 2]; 2];
        // G^1_{12} = G^1_{21} = 3, G^2_{11} = 1.
        gamma[0][0][1] = Series::constant(&coords, trunc, Scalar::from_int(3));
        gamma[0][1][0] = gamma[0][0][1].clone();
        gamma[1][0][0] = Series::one(&coords, trunc);
        let conn = ConnectionData::new(&coords, trunc, gamma.clone()).unwrap();
        let phi = conn.exp_map().unwrap();
        let r = compute_r(&phi, 4).unwrap();
        // Linear part of Y^k_i must be -G^k_{ij} y^j.
        let fiber = coords.indices_of_kind(VarKind::Fiber);
        for k in 0..2 {
            for i in 0..2 {
                let lin = r.components[k][i].truncate_to(1).sub(
                    &r.components[k][i].truncate_to(0),
                ).unwrap();
                let mut expect = Series::zero(&coords, trunc);
                for j in 0..2 {
                    let yj = Series::generator(&coords, trunc, fiber[j]);
                    expect = expect
                        .add(&gamma[k][i][j].mul(&yj).unwrap().scale(&Scalar::from_int(-1)))
                        .unwrap();
                }
                assert_eq!(lin, expect, "k={} i={}", k, i);
                // Order-0 part is -delta.
                let zero_part = r.components[k][i].truncate_to(0);
                let expect0 = if k == i {
                    Series::constant(&coords, trunc, Scalar::from_int(-1))
                } else {
                    Series::zero(&coords, trunc)
                };
                assert_eq!(zero_part, expect0);
            }
        }
        assert!(r.flatness_residual(3).is_empty());
    }

    #[test]
    fn pullback_examples() {
        let phi = FormalExpMap::flat(2, 4).unwrap();
        let x1 = poly_x(phi.coords(), 4, 0);
        let pulled = phi.taylor_pullback(&x1).unwrap();
        let fiber = phi.fiber_indices();
        let y1 = Series::generator(phi.coords(), 4, fiber[0]);
        assert_eq!(pulled, x1.add(&y1).unwrap());

        // phi^1 = x1 + y1 + 1/2 y1^2, f = x1^2.
        let coords = geometry_coords(1, &[0], &[]).unwrap();
        let half = Series::constant(&coords, 4, Scalar::from_frac(1, 2));
        let phi = FormalExpMap::from_entries(&coords, 4, &[(0, vec![2], half)]).unwrap();
        let x = poly_x(&coords, 4, 0);
        let f = x.mul(&x).unwrap();
        let p = phi.taylor_pullback(&f).unwrap();
        // (x + y + y^2/2)^2 = x^2 + 2xy + y^2 + x y^2 + y^3 + y^4/4
        let y_idx = phi.fiber_indices()[0];
        let xi = coords.indices_of_kind(VarKind::Base)[0];
        let mono = |ex: u32, ey: u32| {
            let mut e = vec![0u32; coords.len()];
            e[xi] = ex;
            e[y_idx] = ey;
            Monomial(e)
        };
        assert_eq!(p.coeff(&mono(2, 0)), Scalar::from_int(1));
        assert_eq!(p.coeff(&mono(1, 1)), Scalar::from_int(2));
        assert_eq!(p.coeff(&mono(0, 2)), Scalar::from_int(1));
        assert_eq!(p.coeff(&mono(1, 2)), Scalar::from_int(1));
        assert_eq!(p.coeff(&mono(0, 3)), Scalar::from_int(1));
        assert_eq!(p.coeff(&mono(0, 4)), Scalar::from_frac(1, 4));

        // Constants pull back to themselves.
        let c = Series::constant(&coords, 4, Scalar::from_frac(7, 3));
        assert_eq!(phi.taylor_pullback(&c).unwrap(), c);
    }

    #[test]
    fn flat_sections_are_covariantly_constant() {
        let phi = FormalExpMap::flat(2, 5).unwrap();
        let r = compute_r(&phi, 5).unwrap();
        let x1 = poly_x(phi.coords(), 5, 0);
        let x2 = poly_x(phi.coords(), 5, 1);
        let f = x1.mul(&x2).unwrap();
        let sigma = phi.taylor_pullback(&f).unwrap();
        assert!(r.covariant_derivative(&sigma).is_zero());

        // y^1 is not a pullback: D_G y^1 = -dx^1.
        let y1 = Series::generator(phi.coords(), 5, phi.fiber_indices()[0]);
        let res = r.covariant_derivative(&y1);
        let dx1 = Series::generator(phi.coords(), 5, phi.coords().index_of("dx1").unwrap());
        assert_eq!(res, dx1.scale(&Scalar::from_int(-1)));
    }

    #[test]
    fn gauge_generator_of_quadratic_variation() {
        // phi_t = flat + t * (1/2 c^i_{jk} y^j y^k); at t = 0 the generator
        // is C^i = -1/2 c^i_{jk} y^j y^k + O(y^3).
        let coords = geometry_coords(1, &[0], &["t"]).unwrap();
        let t = coords.index_of("t").unwrap();
        let tgen = Series::generator(&coords, 4, t);
        let half_t = tgen.scale(&Scalar::from_frac(1, 2));
        let phi =
            FormalExpMap::from_entries(&coords, 4, &[(0, vec![2], half_t)]).unwrap();
        let family = ExpMapFamily::new(phi, "t");
        let vel = family.velocity();
        let c = gauge_generator(&family.map, &vel, "test").unwrap();
        // At t = 0: C^1 = -1/2 y^2.
        let y = Series::generator(&coords, 4, family.map.fiber_indices()[0]);
        let y2 = y.mul(&y).unwrap();
        let mut c0 = Series::zero(&coords, 4);
        for (m, cf) in c.components[0].terms() {
            if m.0[t] == 0 {
                c0.add_term(m.clone(), cf.clone());
            }
        }
        assert_eq!(c0, y2.scale(&Scalar::from_frac(-1, 2)));
        // The order-0/1 fiber parts of C vanish identically.
        for (m, cf) in c.components[0].terms() {
            assert!(m.trunc_degree(&coords) >= 2 || cf.is_zero());
        }
        // Zero variation gives C = 0.
        let zero_vel = vec![Series::zero(&coords, 4)];
        let c0 = gauge_generator(&family.map, &zero_vel, "zero").unwrap();
        assert!(c0.components[0].is_zero());
    }

    #[test]
    fn pbw_reduces_to_partials_for_flat_map() {
        let phi = FormalExpMap::flat(1, 4).unwrap();
        let x = poly_x(phi.coords(), 4, 0);
        let f = x.mul(&x).unwrap().mul(&x).unwrap(); // x^3
        let out = pbw_apply(&phi, &vec![0, 0], &f).unwrap();
        assert_eq!(out, x.scale(&Scalar::from_int(6)));
        // Empty word is the identity.
        assert_eq!(pbw_apply(&phi, &vec![], &f).unwrap(), f);
    }

    #[test]
    fn pbw_sees_quadratic_coefficient() {
        // phi^1 = x + y + phi11 y^2 with phi11 = 5/2: pbw(d1 ⊙ d1)(x) = 2 phi11.
        let coords = geometry_coords(1, &[0], &[]).unwrap();
        let c = Series::constant(&coords, 4, Scalar::from_frac(5, 2));
        let phi = FormalExpMap::from_entries(&coords, 4, &[(0, vec![2], c)]).unwrap();
        let x = poly_x(&coords, 4, 0);
        let out = pbw_apply(&phi, &vec![0, 0], &x).unwrap();
        assert_eq!(out, Series::constant(&coords, 4, Scalar::from_int(5)));
    }
}
