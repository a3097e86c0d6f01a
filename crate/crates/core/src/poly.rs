//! Multivariate polynomials and polynomial maps given by multi-index
//! coefficient tables. These back the manifold graphs and exceptional-set
//! surfaces: evaluation, exact Jacobians and substitution are all done at
//! the coefficient level, so derivatives carry no discretization error.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Coefficients smaller than this are dropped when normalizing a table.
const COEFF_EPS: f64 = 1e-14;

/// One term of a polynomial: coefficient times the monomial with the given
/// exponent multi-index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyTerm {
    pub multi_index: Vec<u32>,
    pub coeff: f64,
}

/// Real polynomial in `n_vars` variables, stored as multi-index -> coeff.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    n_vars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(n_vars: usize) -> Self {
        Self {
            n_vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n_vars: usize, c: f64) -> Self {
        let mut p = Self::zero(n_vars);
        if c.abs() > COEFF_EPS {
            p.terms.insert(vec![0; n_vars], c);
        }
        p
    }

    /// The monomial coeff * x_var.
    pub fn linear(n_vars: usize, var: usize, coeff: f64) -> Self {
        let mut p = Self::zero(n_vars);
        let mut idx = vec![0u32; n_vars];
        idx[var] = 1;
        if coeff.abs() > COEFF_EPS {
            p.terms.insert(idx, coeff);
        }
        p
    }

    pub fn from_terms(n_vars: usize, terms: &[PolyTerm]) -> Self {
        let mut p = Self::zero(n_vars);
        for t in terms {
            assert_eq!(t.multi_index.len(), n_vars, "multi-index arity mismatch");
            p.add_term(&t.multi_index, t.coeff);
        }
        p
    }

    pub fn to_terms(&self) -> Vec<PolyTerm> {
        self.terms
            .iter()
            .map(|(mi, &c)| PolyTerm {
                multi_index: mi.clone(),
                coeff: c,
            })
            .collect()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|mi| mi.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn coeff(&self, multi_index: &[u32]) -> f64 {
        self.terms.get(multi_index).copied().unwrap_or(0.0)
    }

    fn add_term(&mut self, multi_index: &[u32], coeff: f64) {
        let entry = self.terms.entry(multi_index.to_vec()).or_insert(0.0);
        *entry += coeff;
        if entry.abs() <= COEFF_EPS {
            self.terms.remove(multi_index);
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_vars);
        self.terms
            .iter()
            .map(|(mi, &c)| {
                c * mi
                    .iter()
                    .zip(x)
                    .map(|(&e, &xi)| xi.powi(e as i32))
                    .product::<f64>()
            })
            .sum()
    }

    /// Evaluation with complex arguments (same real coefficients).
    pub fn eval_complex(&self, z: &[Complex64]) -> Complex64 {
        assert_eq!(z.len(), self.n_vars);
        self.terms
            .iter()
            .map(|(mi, &c)| {
                let mono = mi
                    .iter()
                    .zip(z)
                    .map(|(&e, &zi)| zi.powu(e))
                    .product::<Complex64>();
                mono * c
            })
            .sum()
    }

    pub fn partial(&self, var: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.n_vars);
        for (mi, &c) in &self.terms {
            let e = mi[var];
            if e == 0 {
                continue;
            }
            let mut lower = mi.clone();
            lower[var] -= 1;
            out.add_term(&lower, c * e as f64);
        }
        out
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.n_vars, other.n_vars);
        let mut out = self.clone();
        for (mi, &c) in &other.terms {
            out.add_term(mi, c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.n_vars);
        for (mi, &c) in &self.terms {
            out.add_term(mi, c * s);
        }
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.n_vars, other.n_vars);
        let mut out = Polynomial::zero(self.n_vars);
        for (mi_a, &ca) in &self.terms {
            for (mi_b, &cb) in &other.terms {
                let mi: Vec<u32> = mi_a.iter().zip(mi_b).map(|(a, b)| a + b).collect();
                out.add_term(&mi, ca * cb);
            }
        }
        out
    }

    /// Substitute each variable by a polynomial in a (possibly different)
    /// variable set. `subs[i]` replaces variable i.
    pub fn substitute(&self, subs: &[Polynomial]) -> Polynomial {
        assert_eq!(subs.len(), self.n_vars);
        let out_vars = subs.first().map(|p| p.n_vars()).unwrap_or(0);
        let mut out = Polynomial::zero(out_vars);
        for (mi, &c) in &self.terms {
            let mut acc = Polynomial::constant(out_vars, 1.0);
            for (var, &e) in mi.iter().enumerate() {
                for _ in 0..e {
                    acc = acc.mul(&subs[var]);
                }
            }
            out = out.add(&acc.scale(c));
        }
        out
    }

    /// Drop all terms of total degree above `max_degree`.
    pub fn truncate_degree(&self, max_degree: u32) -> Polynomial {
        let mut out = Polynomial::zero(self.n_vars);
        for (mi, &c) in &self.terms {
            if mi.iter().sum::<u32>() <= max_degree {
                out.add_term(mi, c);
            }
        }
        out
    }

    /// Terms of total degree at least `min_degree`.
    pub fn tail_from_degree(&self, min_degree: u32) -> Polynomial {
        let mut out = Polynomial::zero(self.n_vars);
        for (mi, &c) in &self.terms {
            if mi.iter().sum::<u32>() >= min_degree {
                out.add_term(mi, c);
            }
        }
        out
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0f64, |m, c| m.max(c.abs()))
    }
}

/// Polynomial map R^{n_inputs} -> R^{components.len()}.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap {
    n_inputs: usize,
    components: Vec<Polynomial>,
}

impl PolyMap {
    pub fn new(n_inputs: usize, components: Vec<Polynomial>) -> Self {
        for c in &components {
            assert_eq!(c.n_vars(), n_inputs);
        }
        Self {
            n_inputs,
            components,
        }
    }

    pub fn zero(n_inputs: usize, n_outputs: usize) -> Self {
        Self::new(n_inputs, vec![Polynomial::zero(n_inputs); n_outputs])
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, k: usize) -> &Polynomial {
        &self.components[k]
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|p| p.eval(x)).collect()
    }

    /// Exact analytic Jacobian at `x` (n_outputs x n_inputs).
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_outputs(), self.n_inputs, |i, j| {
            self.components[i].partial(j).eval(x)
        })
    }

    /// Linear part as a matrix: L[i][j] = coefficient of x_j in component i.
    pub fn linear_part(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_outputs(), self.n_inputs, |i, j| {
            let mut mi = vec![0u32; self.n_inputs];
            mi[j] = 1;
            self.components[i].coeff(&mi)
        })
    }

    pub fn constant_part(&self) -> Vec<f64> {
        let zero = vec![0u32; self.n_inputs];
        self.components.iter().map(|p| p.coeff(&zero)).collect()
    }

    pub fn substitute(&self, subs: &[Polynomial]) -> PolyMap {
        let comps: Vec<Polynomial> = self.components.iter().map(|p| p.substitute(subs)).collect();
        let n = subs.first().map(|p| p.n_vars()).unwrap_or(0);
        PolyMap::new(n, comps)
    }

    pub fn truncate_degree(&self, max_degree: u32) -> PolyMap {
        PolyMap::new(
            self.n_inputs,
            self.components
                .iter()
                .map(|p| p.truncate_degree(max_degree))
                .collect(),
        )
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.components
            .iter()
            .fold(0.0f64, |m, p| m.max(p.max_abs_coeff()))
    }
}

/// Complex-coefficient polynomial in complex variables, used by PSH test
/// fixtures of the form max(0, 1 + eps*log|p(z)|).
#[derive(Debug, Clone)]
pub struct ComplexPoly {
    n_vars: usize,
    terms: Vec<(Vec<u32>, Complex64)>,
}

impl ComplexPoly {
    pub fn new(n_vars: usize, terms: Vec<(Vec<u32>, Complex64)>) -> Self {
        for (mi, _) in &terms {
            assert_eq!(mi.len(), n_vars);
        }
        Self { n_vars, terms }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        assert_eq!(z.len(), self.n_vars);
        self.terms
            .iter()
            .map(|(mi, c)| {
                let mono = mi
                    .iter()
                    .zip(z)
                    .map(|(&e, &zi)| zi.powu(e))
                    .product::<Complex64>();
                mono * c
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quad_fixture() -> PolyMap {
        // h(x) = (x1^2, x1*x2)
        PolyMap::new(
            2,
            vec![
                Polynomial::from_terms(
                    2,
                    &[PolyTerm {
                        multi_index: vec![2, 0],
                        coeff: 1.0,
                    }],
                ),
                Polynomial::from_terms(
                    2,
                    &[PolyTerm {
                        multi_index: vec![1, 1],
                        coeff: 1.0,
                    }],
                ),
            ],
        )
    }

    #[test]
    fn eval_and_partial() {
        let h = quad_fixture();
        assert_eq!(h.eval(&[2.0, 3.0]), vec![4.0, 6.0]);
        let j = h.jacobian(&[2.0, 3.0]);
        assert_abs_diff_eq!(j[(0, 0)], 4.0);
        assert_abs_diff_eq!(j[(0, 1)], 0.0);
        assert_abs_diff_eq!(j[(1, 0)], 3.0);
        assert_abs_diff_eq!(j[(1, 1)], 2.0);
    }

    #[test]
    fn substitution_matches_pointwise() {
        // p(x, y) = x*y + y^2 with y = 0.1*x1 substituted
        let p = Polynomial::from_terms(
            2,
            &[
                PolyTerm {
                    multi_index: vec![1, 1],
                    coeff: 1.0,
                },
                PolyTerm {
                    multi_index: vec![0, 2],
                    coeff: 1.0,
                },
            ],
        );
        let subs = vec![Polynomial::linear(1, 0, 1.0), Polynomial::linear(1, 0, 0.1)];
        let q = p.substitute(&subs);
        for x in [-0.7, 0.0, 0.3, 1.2] {
            assert_abs_diff_eq!(q.eval(&[x]), p.eval(&[x, 0.1 * x]), epsilon = 1e-14);
        }
    }

    #[test]
    fn linear_part_extraction() {
        let p = PolyMap::new(
            2,
            vec![
                Polynomial::from_terms(
                    2,
                    &[
                        PolyTerm {
                            multi_index: vec![1, 0],
                            coeff: 0.5,
                        },
                        PolyTerm {
                            multi_index: vec![2, 0],
                            coeff: 3.0,
                        },
                    ],
                ),
                Polynomial::zero(2),
            ],
        );
        let l = p.linear_part();
        assert_abs_diff_eq!(l[(0, 0)], 0.5);
        assert_abs_diff_eq!(l[(0, 1)], 0.0);
        assert_abs_diff_eq!(l[(1, 0)], 0.0);
    }

    #[test]
    fn truncate_and_tail() {
        let p = Polynomial::from_terms(
            1,
            &[
                PolyTerm {
                    multi_index: vec![1],
                    coeff: 1.0,
                },
                PolyTerm {
                    multi_index: vec![3],
                    coeff: 2.0,
                },
            ],
        );
        assert_eq!(p.truncate_degree(2).degree(), 1);
        assert_eq!(p.tail_from_degree(2).degree(), 3);
        assert!(p.tail_from_degree(4).is_zero());
    }
}
