//! Conformally covariant operator instances and the conjugated deformation
//! family `A_f(ε) = e^{ηεf} P e^{ηεf}`.
//!
//! Operators are dense matrices acting on node values (fiber-major for
//! rank > 1). Differentiation matrices are assembled from the exact discrete
//! Fourier series of the derivative symbol, so every resolved mode is an exact
//! eigenvector.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domains::{make_domain, ConformalFactor, Domain, DomainKind};
use crate::error::{Error, Result};
use crate::linalg::{wnorm, Matrix};

/// Conformal weights `(a, b)` of the covariance law
/// `P_{e^f g} = e^{-bf/2} P_g e^{af/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bidegree {
    a: f64,
    b: f64,
}

impl Bidegree {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a == b || !a.is_finite() || !b.is_finite() {
            return Err(Error::DegenerateBidegree { a, b });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `(a + b) / 4`
    pub fn c(&self) -> f64 {
        (self.a + self.b) / 4.0
    }

    /// `(a - b) / 4`; equals both `c - b/2` and `a/2 - c`.
    pub fn eta(&self) -> f64 {
        (self.a - self.b) / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    Periodic,
    Antiperiodic,
}

/// Closed-form spectrum of the deformed operator, used for validation only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactOracle {
    /// On the circle with metric `e^{εf} dθ²` the Dirac operator is unitarily
    /// equivalent to `-i d/ds` on a circle of length `L = ∫ e^{εf/2} dθ`.
    DiracArcLength { spin: Spin },
}

impl ExactOracle {
    /// Deformed length `L(ε)` by quadrature on `domain`.
    pub fn length(&self, domain: &Domain, factor: &ConformalFactor, eps: f64) -> f64 {
        let vals: Vec<f64> = factor.values().iter().map(|f| (0.5 * eps * f).exp()).collect();
        domain.integrate(&vals)
    }

    /// Eigenvalues with `|λ| <= bound`, ascending, each listed twice (real
    /// multiplicity 2), for the deformed circle of length `length`.
    pub fn deformed_spectrum(&self, length: f64, bound: f64) -> Vec<f64> {
        let ExactOracle::DiracArcLength { spin } = *self;
        let offset = match spin {
            Spin::Periodic => 0.0,
            Spin::Antiperiodic => 0.5,
        };
        let unit = 2.0 * PI / length;
        let kmax = (bound / unit).ceil() as i64 + 1;
        let mut out = Vec::new();
        for k in -kmax - 1..=kmax {
            let v = unit * (k as f64 + offset);
            if v.abs() <= bound {
                out.push(v);
                out.push(v);
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OperatorKind {
    ConformalLaplacianTorus,
    DiracCircle { spin: Spin },
    SyntheticPower { base: Box<OperatorKind>, power: u32 },
    /// Background replaced by a conjugated family matrix.
    Rebased { base: Box<OperatorKind> },
}

#[derive(Debug, Clone)]
pub struct CovariantOperator {
    pub name: String,
    pub kind: OperatorKind,
    pub bidegree: Bidegree,
    pub rank: usize,
    pub order: u32,
    pub background: Matrix,
    pub domain: Arc<Domain>,
    pub exact_oracle: Option<ExactOracle>,
}

impl CovariantOperator {
    pub fn eta(&self) -> f64 {
        self.bidegree.eta()
    }

    /// Quadrature weights for the `rank * nodes` coefficient vector.
    pub fn weights(&self) -> Vec<f64> {
        self.domain.section_weights(self.rank)
    }

    pub fn dim(&self) -> usize {
        self.background.dim()
    }

    pub fn symmetry_defect(&self) -> f64 {
        self.background.weighted_asymmetry(&self.weights())
    }

    /// The operator `e^{exponent} P e^{exponent}` for a node-space exponent
    /// field, as a new background. Used to continue deformations from a
    /// deformed metric.
    pub fn rebased(&self, exponent: &[f64], label: &str) -> Self {
        let e: Vec<f64> = exponent.iter().map(|x| x.exp()).collect();
        let lifted = e.repeat(self.rank);
        Self {
            name: format!("{}@{}", self.name, label),
            kind: OperatorKind::Rebased { base: Box::new(self.kind.clone()) },
            bidegree: self.bidegree,
            rank: self.rank,
            order: self.order,
            background: self.background.diag_sandwich(&lifted, &lifted),
            domain: self.domain.clone(),
            exact_oracle: None,
        }
    }

    pub fn descriptor(&self) -> Option<OperatorDescriptor> {
        let (kind, spin, power) = match &self.kind {
            OperatorKind::ConformalLaplacianTorus => (DescriptorKind::ConformalLaplacianTorus, None, None),
            OperatorKind::DiracCircle { spin } => (DescriptorKind::DiracCircle, Some(*spin), None),
            OperatorKind::SyntheticPower { base, power } => match **base {
                OperatorKind::ConformalLaplacianTorus => {
                    (DescriptorKind::ConformalLaplacianTorus, None, Some(*power))
                }
                OperatorKind::DiracCircle { spin } => (DescriptorKind::DiracCircle, Some(spin), Some(*power)),
                _ => return None,
            },
            OperatorKind::Rebased { .. } => return None,
        };
        Some(OperatorDescriptor {
            name: self.name.clone(),
            kind,
            resolution: self.domain.resolution(),
            spin,
            power,
            bidegree: Some(self.bidegree),
        })
    }
}

/// First row of the circulant matrix with symbol `sym(k)` over the modes
/// `k = offset + j`, `j` in a symmetric range. Entry `m` couples nodes whose
/// index difference is `m`; `kernel(k, Δ)` is the real part of the
/// per-mode contribution.
fn circulant_row(n: usize, modes: &[f64], kernel: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let h = 2.0 * PI / n as f64;
    (0..n)
        .map(|m| modes.iter().map(|&k| kernel(k, h * m as f64)).sum::<f64>() / n as f64)
        .collect()
}

fn circulant(n: usize, row: &[f64], skew: bool) -> Matrix {
    Matrix::from_fn(n, |j, l| {
        if j >= l {
            row[j - l]
        } else if skew {
            -row[l - j]
        } else {
            row[l - j]
        }
    })
}

/// Fourier matrix of `-d²/dx²` on the periodic grid. Modes run over
/// `(-n/2, n/2]`, so the Nyquist mode carries `(n/2)²`.
pub fn second_derivative_matrix(n: usize) -> Matrix {
    let modes: Vec<f64> = (-(n as i64) / 2 + 1..=(n as i64) / 2).map(|k| k as f64).collect();
    let row = circulant_row(n, &modes, |k, d| k * k * (k * d).cos());
    circulant(n, &row, false)
}

/// Fourier matrix of `d/dx`, skew-symmetric. Periodic spin uses integer modes
/// (Nyquist mode dropped); antiperiodic uses the half-integers.
pub fn first_derivative_matrix(n: usize, spin: Spin) -> Matrix {
    let half = (n / 2) as i64;
    let modes: Vec<f64> = match spin {
        Spin::Periodic => (1..half).map(|k| k as f64).collect(),
        Spin::Antiperiodic => (0..half).map(|k| k as f64 + 0.5).collect(),
    };
    // i k e^{ikΔ} + i(-k) e^{-ikΔ} = -2k sin(kΔ); Δ is not reduced mod 2π
    // because half-integer modes change sign across the period
    let h = 2.0 * PI / n as f64;
    Matrix::from_fn(n, |j, l| {
        let d = h * (j as f64 - l as f64);
        modes.iter().map(|&k| -2.0 * k * (k * d).sin()).sum::<f64>() / n as f64
    })
}

/// Conformal Laplacian of the flat 2-torus. In dimension 2 the scalar
/// curvature term drops out and the operator is `Δ = -∂²_x - ∂²_y`, with
/// bidegree `((n-2)/2, (n+2)/2) = (0, 2)`.
pub fn conformal_laplacian_torus(domain: Arc<Domain>) -> Result<CovariantOperator> {
    if domain.kind() != DomainKind::Torus2 {
        return Err(Error::WrongDomain { op: "conformal_laplacian_torus", expected: "torus2" });
    }
    let n = domain.resolution();
    let d2 = second_derivative_matrix(n);
    let size = n * n;
    let mut lap = Matrix::zeros(size);
    for iy in 0..n {
        for ix in 0..n {
            let row = iy * n + ix;
            for jx in 0..n {
                lap[(row, iy * n + jx)] += d2[(ix, jx)];
            }
            for jy in 0..n {
                lap[(row, jy * n + ix)] += d2[(iy, jy)];
            }
        }
    }
    // the bundle isometry relating fibers of conformal metrics is the identity
    // for the trivial line bundle
    Ok(CovariantOperator {
        name: format!("conformal_laplacian_torus({n})"),
        kind: OperatorKind::ConformalLaplacianTorus,
        bidegree: Bidegree::new(0.0, 2.0)?,
        rank: 1,
        order: 2,
        background: lap,
        domain,
        exact_oracle: None,
    })
}

/// Dirac operator `-i d/dθ` on the circle, written on the real rank-2 bundle
/// `u = u₁ + i u₂` as `(u₁, u₂) ↦ (u₂', -u₁')`. Bidegree
/// `((n-1)/2, (n+1)/2) = (0, 1)`.
///
/// For periodic spin the Nyquist mode has no real skew derivative; it is
/// assigned the eigenvalue `+n/2` (acting identically on both components) so
/// the kernel is exactly the constant spinors.
pub fn dirac_circle(domain: Arc<Domain>, spin: Spin) -> Result<CovariantOperator> {
    if domain.kind() != DomainKind::Circle {
        return Err(Error::WrongDomain { op: "dirac_circle", expected: "circle" });
    }
    let n = domain.resolution();
    let d1 = first_derivative_matrix(n, spin);
    let mut dirac = Matrix::zeros(2 * n);
    for j in 0..n {
        for l in 0..n {
            dirac[(j, n + l)] = d1[(j, l)];
            dirac[(n + j, l)] = -d1[(j, l)];
        }
    }
    if spin == Spin::Periodic {
        let nyq = (n / 2) as f64;
        for j in 0..n {
            for l in 0..n {
                let sign = if (j + l) % 2 == 0 { 1.0 } else { -1.0 };
                let q = nyq * sign / n as f64;
                dirac[(j, l)] += q;
                dirac[(n + j, n + l)] += q;
            }
        }
    }
    // spinor bundle trivialized; the conformal identification of fibers is the
    // identity here
    let label = match spin {
        Spin::Periodic => "periodic",
        Spin::Antiperiodic => "antiperiodic",
    };
    Ok(CovariantOperator {
        name: format!("dirac_circle({n},{label})"),
        kind: OperatorKind::DiracCircle { spin },
        bidegree: Bidegree::new(0.0, 1.0)?,
        rank: 2,
        order: 1,
        background: dirac,
        domain,
        exact_oracle: Some(ExactOracle::DiracArcLength { spin }),
    })
}

/// `base^power` with a caller-supplied bidegree. A test instance for higher
/// order; no geometric claim is attached to its deformations.
pub fn synthetic_power(base: &CovariantOperator, power: u32, bidegree: Bidegree) -> Result<CovariantOperator> {
    if power == 0 {
        return Err(Error::InvalidPower);
    }
    let bidegree = Bidegree::new(bidegree.a, bidegree.b)?;
    let mut m = base.background.clone();
    for _ in 1..power {
        m = m.matmul(&base.background);
    }
    let kind = if power == 1 {
        base.kind.clone()
    } else {
        OperatorKind::SyntheticPower { base: Box::new(base.kind.clone()), power }
    };
    Ok(CovariantOperator {
        name: if power == 1 { base.name.clone() } else { format!("{}^{power}", base.name) },
        kind,
        bidegree,
        rank: base.rank,
        order: base.order * power,
        background: m,
        domain: base.domain.clone(),
        exact_oracle: if power == 1 { base.exact_oracle } else { None },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    ConformalLaplacianTorus,
    DiracCircle,
}

/// Serialized operator: `{"name","kind","resolution","spin"?,"power"?,"bidegree":{"a","b"}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorDescriptor {
    #[serde(default)]
    pub name: String,
    pub kind: DescriptorKind,
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<Spin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<u32>,
    #[serde(default)]
    pub bidegree: Option<Bidegree>,
}

impl OperatorDescriptor {
    pub fn torus_laplacian(resolution: usize) -> Self {
        Self {
            name: "torus".into(),
            kind: DescriptorKind::ConformalLaplacianTorus,
            resolution,
            spin: None,
            power: None,
            bidegree: Some(Bidegree { a: 0.0, b: 2.0 }),
        }
    }

    pub fn dirac(resolution: usize, spin: Spin) -> Self {
        Self {
            name: "dirac".into(),
            kind: DescriptorKind::DiracCircle,
            resolution,
            spin: Some(spin),
            power: None,
            bidegree: Some(Bidegree { a: 0.0, b: 1.0 }),
        }
    }

    pub fn build(&self) -> Result<CovariantOperator> {
        let base = match self.kind {
            DescriptorKind::ConformalLaplacianTorus => {
                conformal_laplacian_torus(make_domain(DomainKind::Torus2, self.resolution)?)?
            }
            DescriptorKind::DiracCircle => dirac_circle(
                make_domain(DomainKind::Circle, self.resolution)?,
                self.spin.unwrap_or(Spin::Antiperiodic),
            )?,
        };
        let power = self.power.unwrap_or(1);
        let mut op = match (power, self.bidegree) {
            (1, None) => base,
            (1, Some(bd)) => {
                if bd != base.bidegree {
                    return Err(Error::Config(format!(
                        "bidegree ({}, {}) does not match the geometric instance ({}, {})",
                        bd.a, bd.b, base.bidegree.a, base.bidegree.b
                    )));
                }
                base
            }
            (_, None) => {
                return Err(Error::Config("synthetic powers need an explicit bidegree".into()))
            }
            (p, Some(bd)) => synthetic_power(&base, p, bd)?,
        };
        if !self.name.is_empty() {
            op.name = self.name.clone();
        }
        Ok(op)
    }
}

/// The family `ε ↦ A_f(ε)` for one operator and one conformal factor.
#[derive(Debug, Clone)]
pub struct ConjugatedFamily {
    pub operator: Arc<CovariantOperator>,
    pub factor: ConformalFactor,
    /// `η f(x)` repeated per fiber component.
    exponent: Vec<f64>,
    lifted_factor: Vec<f64>,
}

impl ConjugatedFamily {
    pub fn new(operator: Arc<CovariantOperator>, factor: ConformalFactor) -> Result<Self> {
        if factor.values().len() != operator.domain.len() {
            return Err(Error::Mismatch);
        }
        let eta = operator.eta();
        let lifted_factor = factor.lifted(operator.rank);
        let exponent = lifted_factor.iter().map(|f| eta * f).collect();
        Ok(Self { operator, factor, exponent, lifted_factor })
    }

    pub fn eta(&self) -> f64 {
        self.operator.eta()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.operator.weights()
    }

    pub fn exponent(&self) -> &[f64] {
        &self.exponent
    }

    pub fn lifted_factor(&self) -> &[f64] {
        &self.lifted_factor
    }

    /// Diagonal of `E(ε) = e^{ηεf}`.
    pub fn conjugator(&self, eps: f64) -> Vec<f64> {
        self.exponent.iter().map(|x| (eps * x).exp()).collect()
    }

    /// `A_f(ε) = E(ε) P E(ε)`.
    pub fn family_matrix(&self, eps: f64) -> Matrix {
        if eps == 0.0 {
            return self.operator.background.clone();
        }
        let e = self.conjugator(eps);
        self.operator.background.diag_sandwich(&e, &e)
    }

    /// `d^k/dε^k A_f(ε)` at `ε = 0`:
    /// `η^k Σ_l C(k,l) f^{k-l} P (f^l ·)`.
    pub fn derivative_matrix(&self, k: u32) -> Matrix {
        self.derivative_matrix_at(0.0, k)
    }

    /// `d^k/dε^k A_f(ε)` at any `ε`; same binomial sum with `A_f(ε)` in
    /// place of `P`.
    pub fn derivative_matrix_at(&self, eps: f64, k: u32) -> Matrix {
        let a = self.family_matrix(eps);
        let f = &self.lifted_factor;
        let eta_k = self.eta().powi(k as i32);
        let binom = binomials(k);
        let n = a.dim();
        Matrix::from_fn(n, |i, j| {
            let mut s = 0.0;
            for (l, c) in binom.iter().enumerate() {
                s += c * f[i].powi((k as usize - l) as i32) * f[j].powi(l as i32);
            }
            eta_k * s * a[(i, j)]
        })
    }
}

fn binomials(k: u32) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..k {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundSample {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeBoundReport {
    pub k: u32,
    pub factor: f64,
    pub samples: Vec<BoundSample>,
    pub all_pass: bool,
}

/// Checks `‖A^(k) u‖ ≤ (2|η|‖f‖∞)^k / k! · ‖A u‖` with `A^(k)` the k-th
/// Taylor coefficient `(1/k!) d^k/dε^k A_f` at 0.
pub fn derivative_bound_check(family: &ConjugatedFamily, k: u32, samples: &[Vec<f64>]) -> DerivativeBoundReport {
    let w = family.weights();
    let kfact = factorial(k);
    let taylor = family.derivative_matrix(k).scaled(1.0 / kfact);
    let p = &family.operator.background;
    let factor = (2.0 * family.eta().abs() * family.factor.sup_norm()).powi(k as i32) / kfact;
    let samples: Vec<BoundSample> = samples
        .iter()
        .map(|u| {
            let lhs = wnorm(&w, &taylor.matvec(u));
            let rhs = factor * wnorm(&w, &p.matvec(u));
            BoundSample { lhs, rhs, pass: lhs <= rhs * (1.0 + 1e-8) }
        })
        .collect();
    let all_pass = samples.iter().all(|s| s.pass);
    DerivativeBoundReport { k, factor, samples, all_pass }
}

/// Reproducible random coefficient vectors with entries uniform in `[-1, 1]`.
pub fn random_sections(len: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect()
}
