//! Periodic grids on the circle and the flat 2-torus, trapezoid quadrature,
//! band-limited conformal factors and fiberwise sections.
//!
//! Every direction has period 2π. Nodes of the torus are stored with `x`
//! varying fastest: node `iy * resolution + ix` sits at `(x_ix, y_iy)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::wdot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Circle,
    Torus2,
}

impl DomainKind {
    pub fn dim(self) -> usize {
        match self {
            DomainKind::Circle => 1,
            DomainKind::Torus2 => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Domain {
    kind: DomainKind,
    resolution: usize,
    /// Node coordinates; the second entry is 0 on the circle.
    nodes: Vec<[f64; 2]>,
    quad_weights: Vec<f64>,
}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.resolution == other.resolution
    }
}

pub fn make_domain(kind: DomainKind, resolution: usize) -> Result<Arc<Domain>> {
    if resolution < 8 || !resolution.is_multiple_of(2) {
        return Err(Error::InvalidResolution(resolution));
    }
    let h = 2.0 * PI / resolution as f64;
    let grid: Vec<f64> = (0..resolution).map(|j| h * j as f64).collect();
    let (nodes, w) = match kind {
        DomainKind::Circle => (grid.iter().map(|&x| [x, 0.0]).collect::<Vec<_>>(), h),
        DomainKind::Torus2 => {
            let mut nodes = Vec::with_capacity(resolution * resolution);
            for &y in &grid {
                for &x in &grid {
                    nodes.push([x, y]);
                }
            }
            (nodes, h * h)
        }
    };
    let quad_weights = vec![w; nodes.len()];
    Ok(Arc::new(Domain { kind, resolution, nodes, quad_weights }))
}

impl Domain {
    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    /// Coordinates of node `i`, truncated to the domain dimension.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i][..self.dim()]
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim() as i32)
    }

    /// Quadrature weights repeated once per fiber component.
    pub fn section_weights(&self, rank: usize) -> Vec<f64> {
        self.quad_weights.repeat(rank)
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.quad_weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub kx: i64,
    #[serde(default)]
    pub ky: i64,
    pub phase: Phase,
    pub coef: f64,
}

impl Term {
    pub fn cos(kx: i64, ky: i64, coef: f64) -> Self {
        Self { kx, ky, phase: Phase::Cos, coef }
    }

    pub fn sin(kx: i64, ky: i64, coef: f64) -> Self {
        Self { kx, ky, phase: Phase::Sin, coef }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let arg = self.kx as f64 * x + self.ky as f64 * y;
        self.coef
            * match self.phase {
                Phase::Cos => arg.cos(),
                Phase::Sin => arg.sin(),
            }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let phase = match self.phase {
            Phase::Cos => "cos",
            Phase::Sin => "sin",
        };
        let arg = match (self.kx, self.ky) {
            (0, 0) => "0".to_string(),
            (kx, 0) => format!("{kx}x"),
            (0, ky) => format!("{ky}y"),
            (kx, ky) if ky < 0 => format!("{kx}x-{}y", -ky),
            (kx, ky) => format!("{kx}x+{ky}y"),
        };
        write!(f, "{}*{}({})", self.coef, phase, arg)
    }
}

/// A finite real trigonometric polynomial, the serialized form of a conformal
/// factor: `{"terms":[{"kx":2,"ky":0,"phase":"cos","coef":1.0}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FactorSpec {
    pub terms: Vec<Term>,
}

impl FactorSpec {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![Term::cos(0, 0, c)])
    }

    pub fn single(term: Term) -> Self {
        Self::new(vec![term])
    }

    pub fn description(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        self.terms.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" + ")
    }

    /// Sum of two factors, terms concatenated.
    pub fn plus(&self, other: &FactorSpec) -> FactorSpec {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        FactorSpec { terms }
    }

    pub fn scaled(&self, s: f64) -> FactorSpec {
        FactorSpec {
            terms: self.terms.iter().map(|t| Term { coef: t.coef * s, ..*t }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformalFactor {
    values: Vec<f64>,
    sup_norm: f64,
    description: String,
}

pub fn make_factor(domain: &Domain, spec: &FactorSpec) -> Result<ConformalFactor> {
    let nyquist = (domain.resolution() / 2) as i64;
    for t in &spec.terms {
        if domain.kind() == DomainKind::Circle && t.ky != 0 {
            return Err(Error::CircleModeY(t.ky));
        }
        if t.kx.abs() >= nyquist || t.ky.abs() >= nyquist {
            return Err(Error::Nyquist { kx: t.kx, ky: t.ky, resolution: domain.resolution() });
        }
    }
    let values: Vec<f64> = domain
        .nodes()
        .iter()
        .map(|&[x, y]| spec.terms.iter().map(|t| t.eval(x, y)).sum())
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(ConformalFactor::from_values(values, spec.description()))
}

impl ConformalFactor {
    pub fn from_values(values: Vec<f64>, description: impl Into<String>) -> Self {
        let sup_norm = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self { values, sup_norm, description: description.into() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Node values repeated for each of `rank` fiber components.
    pub fn lifted(&self, rank: usize) -> Vec<f64> {
        self.values.repeat(rank)
    }

    pub fn shifted(&self, s: f64) -> Self {
        Self::from_values(
            self.values.iter().map(|v| v + s).collect(),
            format!("{} + {}", self.description, s),
        )
    }
}

/// A section of a trivial rank-`r` bundle sampled at the nodes. Components
/// are stored fiber-major: entry `c * nodes + i` is component `c` at node `i`.
#[derive(Debug, Clone)]
pub struct Section {
    components: Vec<f64>,
    rank: usize,
    domain: Arc<Domain>,
}

impl Section {
    pub fn new(domain: Arc<Domain>, rank: usize, components: Vec<f64>) -> Result<Self> {
        let expected = rank * domain.len();
        if rank == 0 || components.len() != expected {
            return Err(Error::Dimension { expected, got: components.len() });
        }
        Ok(Self { components, rank, domain })
    }

    pub fn from_fn(domain: Arc<Domain>, rank: usize, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        let n = domain.len();
        let mut components = Vec::with_capacity(rank * n);
        for c in 0..rank {
            for i in 0..n {
                components.push(f(c, domain.node(i)));
            }
        }
        Self { components, rank, domain }
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    /// Fiber vector at node `i`.
    pub fn fiber(&self, i: usize) -> Vec<f64> {
        let n = self.domain.len();
        (0..self.rank).map(|c| self.components[c * n + i]).collect()
    }

    pub fn pointwise_norm(&self, i: usize) -> f64 {
        self.fiber(i).iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Quadrature approximation of `∫ (u(x), v(x))_x dvol`.
pub fn inner_product(u: &Section, v: &Section, domain: &Domain) -> Result<f64> {
    if u.rank != v.rank || *u.domain != *domain || *v.domain != *domain {
        return Err(Error::Mismatch);
    }
    Ok(wdot(&domain.section_weights(u.rank), &u.components, &v.components))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_grid_and_weights() {
        let d = make_domain(DomainKind::Circle, 8).unwrap();
        assert_eq!(d.len(), 8);
        for (j, node) in d.nodes().iter().enumerate() {
            assert_eq!(node[0], 2.0 * PI / 8.0 * j as f64);
        }
        assert!(d.quad_weights().iter().all(|&w| w == 2.0 * PI / 8.0));
    }

    #[test]
    fn torus_grid_and_weights() {
        let d = make_domain(DomainKind::Torus2, 16).unwrap();
        assert_eq!(d.len(), 256);
        let w = (2.0 * PI / 16.0).powi(2);
        assert!(d.quad_weights().iter().all(|&x| x == w));
        let total: f64 = d.quad_weights().iter().sum();
        assert!((total - 4.0 * PI * PI).abs() <= 1e-12 * 4.0 * PI * PI);
        // x fastest
        assert_eq!(d.node(1), &[2.0 * PI / 16.0, 0.0]);
        assert_eq!(d.node(16), &[0.0, 2.0 * PI / 16.0]);
    }

    #[test]
    fn bad_resolutions() {
        assert!(matches!(make_domain(DomainKind::Circle, 7), Err(Error::InvalidResolution(7))));
        assert!(make_domain(DomainKind::Circle, 6).is_err());
        assert!(make_domain(DomainKind::Torus2, 0).is_err());
    }

    #[test]
    fn factor_evaluation() {
        let c = make_domain(DomainKind::Circle, 8).unwrap();
        let one = make_factor(&c, &FactorSpec::constant(1.0)).unwrap();
        assert!(one.values().iter().all(|&v| v == 1.0));
        assert_eq!(one.sup_norm(), 1.0);

        let t = make_domain(DomainKind::Torus2, 16).unwrap();
        let f = make_factor(&t, &FactorSpec::single(Term::cos(2, 0, 1.0))).unwrap();
        assert_eq!(f.values()[0], 1.0);
        assert_eq!(f.description(), "1*cos(2x)");
    }

    #[test]
    fn nyquist_guard() {
        let c = make_domain(DomainKind::Circle, 16).unwrap();
        let err = make_factor(&c, &FactorSpec::single(Term::cos(9, 0, 1.0))).unwrap_err();
        assert!(matches!(err, Error::Nyquist { kx: 9, .. }));
        assert!(make_factor(&c, &FactorSpec::single(Term::cos(8, 0, 1.0))).is_err());
        assert!(make_factor(&c, &FactorSpec::single(Term::cos(7, 0, 1.0))).is_ok());
        assert!(matches!(
            make_factor(&c, &FactorSpec::single(Term::cos(1, 1, 1.0))),
            Err(Error::CircleModeY(1))
        ));
    }

    #[test]
    fn factor_spec_json_shape() {
        let json = r#"{"terms":[{"kx":2,"ky":0,"phase":"cos","coef":1.0},{"kx":1,"ky":-1,"phase":"sin","coef":0.5}]}"#;
        let spec: FactorSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.terms[1], Term::sin(1, -1, 0.5));
        let back: FactorSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(spec.description(), "1*cos(2x) + 0.5*sin(1x-1y)");
    }

    #[test]
    fn inner_products() {
        let t = make_domain(DomainKind::Torus2, 16).unwrap();
        let one = Section::from_fn(t.clone(), 1, |_, _| 1.0);
        let ip = inner_product(&one, &one, &t).unwrap();
        assert!((ip - 4.0 * PI * PI).abs() < 1e-12);

        let c = make_domain(DomainKind::Circle, 64).unwrap();
        let cos = Section::from_fn(c.clone(), 1, |_, p| p[0].cos());
        let sin = Section::from_fn(c.clone(), 1, |_, p| p[0].sin());
        assert!(inner_product(&cos, &sin, &c).unwrap().abs() < 1e-14);

        let t32 = make_domain(DomainKind::Torus2, 32).unwrap();
        let cx = Section::from_fn(t32.clone(), 1, |_, p| p[0].cos());
        let ip = inner_product(&cx, &cx, &t32).unwrap();
        assert!((ip - 2.0 * PI * PI).abs() < 1e-12 * 2.0 * PI * PI);
    }

    #[test]
    fn mismatched_sections() {
        let a = make_domain(DomainKind::Circle, 8).unwrap();
        let b = make_domain(DomainKind::Circle, 16).unwrap();
        let u = Section::from_fn(a.clone(), 1, |_, _| 1.0);
        let v = Section::from_fn(b, 1, |_, _| 1.0);
        let w = Section::from_fn(a.clone(), 2, |_, _| 1.0);
        assert!(inner_product(&u, &v, &a).is_err());
        assert!(inner_product(&u, &w, &a).is_err());
    }

    #[test]
    fn pointwise_norm_is_fiber_euclidean() {
        let c = make_domain(DomainKind::Circle, 8).unwrap();
        let s = Section::from_fn(c, 2, |comp, _| if comp == 0 { 3.0 } else { 4.0 });
        assert_eq!(s.pointwise_norm(5), 5.0);
    }
}
