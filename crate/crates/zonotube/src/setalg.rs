//! Zonotope and matrix-zonotope arithmetic.
//!
//! A zonotope `⟨c, G⟩` is the set `{c + Gβ : ‖β‖∞ ≤ 1}`; a matrix zonotope
//! is the same construction over matrices, `{C + Σᵢ βᵢGᵢ : ‖β‖∞ ≤ 1}`.
//! Operations that grow the generator count (Minkowski sums, set products)
//! prune all-zero generator columns so order reduction and membership
//! programs stay minimal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::seed::Rng;
use crate::solver::{solve_qp, QpProblem, SolveOutcome};
use crate::Result;

/// Residual tolerance for membership programs. Containment near the boundary
/// is decided in favor of "contained" within this tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// Guards for exact vertex enumeration (2^γ sign patterns).
pub const VERTEX_MAX_DIM: usize = 3;
pub const VERTEX_MAX_GENS: usize = 12;

/// `{center + G·β : ‖β‖∞ ≤ 1}`. Generators are the columns of `G`;
/// zero columns encode nothing and are pruned by the arithmetic ops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ZonotopeJson", into = "ZonotopeJson")]
pub struct Zonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
}

impl Zonotope {
    /// `generators` must have one row per center coordinate.
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        if generators.nrows() != center.len() {
            return Err(Error::DimensionMismatch {
                op: "Zonotope::new",
                detail: format!(
                    "center dim {} vs generator rows {}",
                    center.len(),
                    generators.nrows()
                ),
            });
        }
        Ok(Zonotope { center, generators })
    }

    /// The singleton `{center}` (no generators).
    pub fn singleton(center: DVector<f64>) -> Self {
        let n = center.len();
        Zonotope {
            center,
            generators: DMatrix::zeros(n, 0),
        }
    }

    /// Axis-aligned box: `⟨center, diag(radii)⟩`.
    pub fn from_box(center: DVector<f64>, radii: &DVector<f64>) -> Result<Self> {
        if center.len() != radii.len() {
            return Err(Error::DimensionMismatch {
                op: "Zonotope::from_box",
                detail: format!("center dim {} vs radii dim {}", center.len(), radii.len()),
            });
        }
        let generators = DMatrix::from_diagonal(radii);
        Ok(Zonotope { center, generators })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    /// Interval radius per coordinate: `rᵢ = Σⱼ |Gᵢⱼ|`.
    pub fn radius(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.dim());
        for j in 0..self.generators.ncols() {
            for i in 0..self.dim() {
                r[i] += self.generators[(i, j)].abs();
            }
        }
        r
    }

    /// Same set with every generator scaled by `factor ≥ 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Zonotope {
            center: self.center.clone(),
            generators: &self.generators * factor,
        }
    }
}

/// JSON form: center as a list, generators column-major (a list of columns).
#[derive(Serialize, Deserialize)]
struct ZonotopeJson {
    center: Vec<f64>,
    generators: Vec<Vec<f64>>,
}

impl From<Zonotope> for ZonotopeJson {
    fn from(z: Zonotope) -> Self {
        let generators = z
            .generators
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        ZonotopeJson {
            center: z.center.iter().copied().collect(),
            generators,
        }
    }
}

impl TryFrom<ZonotopeJson> for Zonotope {
    type Error = Error;
    fn try_from(j: ZonotopeJson) -> Result<Self> {
        let n = j.center.len();
        for (k, col) in j.generators.iter().enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    op: "Zonotope::deserialize",
                    detail: format!("generator {k} has {} entries, expected {n}", col.len()),
                });
            }
        }
        let gens = DMatrix::from_fn(n, j.generators.len(), |i, k| j.generators[k][i]);
        Zonotope::new(DVector::from_vec(j.center), gens)
    }
}

/// `{C + Σᵢ βᵢGᵢ : ‖β‖∞ ≤ 1}` over n×p matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixZonotopeJson", into = "MatrixZonotopeJson")]
pub struct MatrixZonotope {
    center: DMatrix<f64>,
    generators: Vec<DMatrix<f64>>,
}

impl MatrixZonotope {
    /// Every generator must share the center's shape.
    pub fn new(center: DMatrix<f64>, generators: Vec<DMatrix<f64>>) -> Result<Self> {
        for (k, g) in generators.iter().enumerate() {
            if g.shape() != center.shape() {
                return Err(Error::DimensionMismatch {
                    op: "MatrixZonotope::new",
                    detail: format!(
                        "generator {k} shape {:?} vs center shape {:?}",
                        g.shape(),
                        center.shape()
                    ),
                });
            }
        }
        Ok(MatrixZonotope { center, generators })
    }

    pub fn singleton(center: DMatrix<f64>) -> Self {
        MatrixZonotope {
            center,
            generators: Vec::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.center.shape()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn center(&self) -> &DMatrix<f64> {
        &self.center
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    /// Entrywise interval radius: `R_ab = Σᵢ |Gᵢ[a,b]|`.
    pub fn entry_radius(&self) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut out = DMatrix::zeros(r, c);
        for g in &self.generators {
            for a in 0..r {
                for b in 0..c {
                    out[(a, b)] += g[(a, b)].abs();
                }
            }
        }
        out
    }
}

/// JSON form: matrices row-major (a list of rows).
#[derive(Serialize, Deserialize)]
struct MatrixZonotopeJson {
    center: Vec<Vec<f64>>,
    generators: Vec<Vec<Vec<f64>>>,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::DimensionMismatch {
            op: "MatrixZonotope::deserialize",
            detail: format!("{what}: ragged rows"),
        });
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl From<MatrixZonotope> for MatrixZonotopeJson {
    fn from(m: MatrixZonotope) -> Self {
        MatrixZonotopeJson {
            center: matrix_to_rows(&m.center),
            generators: m.generators.iter().map(matrix_to_rows).collect(),
        }
    }
}

impl TryFrom<MatrixZonotopeJson> for MatrixZonotope {
    type Error = Error;
    fn try_from(j: MatrixZonotopeJson) -> Result<Self> {
        let center = matrix_from_rows(&j.center, "center")?;
        let generators = j
            .generators
            .iter()
            .map(|g| matrix_from_rows(g, "generator"))
            .collect::<Result<Vec<_>>>()?;
        MatrixZonotope::new(center, generators)
    }
}

/// Tightest axis-aligned box `[lower, upper]` around a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl IntervalBox {
    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        (0..p.len()).all(|i| p[i] >= self.lower[i] - tol && p[i] <= self.upper[i] + tol)
    }

    pub fn radius(&self) -> DVector<f64> {
        (&self.upper - &self.lower) * 0.5
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.upper + &self.lower) * 0.5
    }
}

fn prune_zero_columns(g: &DMatrix<f64>) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..g.ncols())
        .filter(|&j| g.column(j).iter().any(|&v| v != 0.0))
        .collect();
    if keep.len() == g.ncols() {
        return g.clone();
    }
    DMatrix::from_fn(g.nrows(), keep.len(), |i, k| g[(i, keep[k])])
}

/// `{a + b : a ∈ A, b ∈ B}`: centers add, generators stack.
pub fn minkowski_sum(a: &Zonotope, b: &Zonotope) -> Result<Zonotope> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            op: "minkowski_sum",
            detail: format!("dims {} vs {}", a.dim(), b.dim()),
        });
    }
    let mut g = DMatrix::zeros(a.dim(), a.num_generators() + b.num_generators());
    g.columns_mut(0, a.num_generators()).copy_from(&a.generators);
    g.columns_mut(a.num_generators(), b.num_generators())
        .copy_from(&b.generators);
    Ok(Zonotope {
        center: &a.center + &b.center,
        generators: prune_zero_columns(&g),
    })
}

/// Image under the linear map `T`: `⟨T·c, T·G⟩`.
pub fn linear_map(t: &DMatrix<f64>, z: &Zonotope) -> Result<Zonotope> {
    if t.ncols() != z.dim() {
        return Err(Error::DimensionMismatch {
            op: "linear_map",
            detail: format!("map cols {} vs zonotope dim {}", t.ncols(), z.dim()),
        });
    }
    Ok(Zonotope {
        center: t * &z.center,
        generators: prune_zero_columns(&(t * &z.generators)),
    })
}

/// Cartesian product `A × B`: dimensions stack, generators block-diagonal.
pub fn cartesian_product(a: &Zonotope, b: &Zonotope) -> Zonotope {
    let (na, nb) = (a.dim(), b.dim());
    let (ga, gb) = (a.num_generators(), b.num_generators());
    let mut center = DVector::zeros(na + nb);
    center.rows_mut(0, na).copy_from(&a.center);
    center.rows_mut(na, nb).copy_from(&b.center);
    let mut g = DMatrix::zeros(na + nb, ga + gb);
    g.view_mut((0, 0), (na, ga)).copy_from(&a.generators);
    g.view_mut((na, ga), (nb, gb)).copy_from(&b.generators);
    Zonotope {
        center,
        generators: prune_zero_columns(&g),
    }
}

/// Tightest axis-aligned box containing `z`.
pub fn interval_hull(z: &Zonotope) -> IntervalBox {
    let r = z.radius();
    IntervalBox {
        lower: &z.center - &r,
        upper: &z.center + &r,
    }
}

/// Box order reduction: `⟨c, diag(r)⟩` with `rᵢ = Σⱼ |Gᵢⱼ|`. Contains the
/// input; always exactly n generators (order 1).
pub fn reduce_order_box(z: &Zonotope) -> Zonotope {
    Zonotope {
        center: z.center.clone(),
        generators: DMatrix::from_diagonal(&z.radius()),
    }
}

/// Girard order reduction: keeps the `cap − n` generators that are least
/// box-like (largest `‖g‖₁ − ‖g‖∞`) and boxes the rest into at most n
/// axis-aligned generators. Contains the input; returns the input unchanged
/// when it already fits the cap. `cap` is floored at n (pure box).
pub fn reduce_order_girard(z: &Zonotope, cap: usize) -> Zonotope {
    let n = z.dim();
    let gamma = z.num_generators();
    let cap = cap.max(n);
    if gamma <= cap {
        return z.clone();
    }
    let keep = cap - n;
    let mut scored: Vec<(f64, usize)> = (0..gamma)
        .map(|j| {
            let g = z.generators.column(j);
            (g.lp_norm(1) - g.amax(), j)
        })
        .collect();
    // Descending score; ties broken by column index for determinism.
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut kept = DMatrix::zeros(n, keep);
    for (slot, &(_, j)) in scored[..keep].iter().enumerate() {
        kept.set_column(slot, &z.generators.column(j));
    }
    let mut boxed = DVector::zeros(n);
    for &(_, j) in &scored[keep..] {
        for i in 0..n {
            boxed[i] += z.generators[(i, j)].abs();
        }
    }
    let mut generators = DMatrix::zeros(n, keep + n);
    generators.view_mut((0, 0), (n, keep)).copy_from(&kept);
    for i in 0..n {
        generators[(i, keep + i)] = boxed[i];
    }
    Zonotope {
        center: z.center.clone(),
        generators: prune_zero_columns(&generators),
    }
}

/// Entrywise box reduction of a matrix zonotope: one single-entry generator
/// per nonzero entry of the interval radius. Contains the input.
pub fn mz_reduce_order_box(m: &MatrixZonotope) -> MatrixZonotope {
    if m.generators.is_empty() {
        return m.clone();
    }
    let radius = m.entry_radius();
    let (r, c) = m.shape();
    let mut generators = Vec::new();
    for a in 0..r {
        for b in 0..c {
            if radius[(a, b)] != 0.0 {
                let mut g = DMatrix::zeros(r, c);
                g[(a, b)] = radius[(a, b)];
                generators.push(g);
            }
        }
    }
    MatrixZonotope {
        center: m.center.clone(),
        generators,
    }
}

/// Right-multiplies center and every generator by `R`.
pub fn mz_linear_map_right(m: &MatrixZonotope, r: &DMatrix<f64>) -> Result<MatrixZonotope> {
    if r.nrows() != m.shape().1 {
        return Err(Error::DimensionMismatch {
            op: "mz_linear_map_right",
            detail: format!("R rows {} vs zonotope cols {}", r.nrows(), m.shape().1),
        });
    }
    Ok(MatrixZonotope {
        center: &m.center * r,
        generators: m.generators.iter().map(|g| g * r).collect(),
    })
}

/// Shifts the center by `−C0`; generators unchanged.
pub fn mz_shift(m: &MatrixZonotope, c0: &DMatrix<f64>) -> Result<MatrixZonotope> {
    if c0.shape() != m.shape() {
        return Err(Error::DimensionMismatch {
            op: "mz_shift",
            detail: format!("shift shape {:?} vs zonotope shape {:?}", c0.shape(), m.shape()),
        });
    }
    Ok(MatrixZonotope {
        center: &m.center - c0,
        generators: m.generators.clone(),
    })
}

/// Over-approximation of the set product `{X·v : X ∈ m, v ∈ z}`.
///
/// Cross terms `βᵢδⱼ` are treated as fresh independent factors, so the result
/// `⟨C·c, [C·G_z | Gᵢ·c | Gᵢ·gⱼ]⟩` is a superset of the exact product; it is
/// exact when either operand is a singleton.
pub fn mz_times_zonotope(m: &MatrixZonotope, z: &Zonotope) -> Result<Zonotope> {
    let (rows, cols) = m.shape();
    if cols != z.dim() {
        return Err(Error::DimensionMismatch {
            op: "mz_times_zonotope",
            detail: format!("matrix cols {cols} vs zonotope dim {}", z.dim()),
        });
    }
    let gz = z.num_generators();
    let gm = m.num_generators();
    let total = gz + gm + gm * gz;
    let mut g = DMatrix::zeros(rows, total);
    g.columns_mut(0, gz).copy_from(&(&m.center * &z.generators));
    for (i, gi) in m.generators.iter().enumerate() {
        g.column_mut(gz + i).copy_from(&(gi * &z.center));
        let block = gi * &z.generators;
        g.columns_mut(gz + gm + i * gz, gz).copy_from(&block);
    }
    Ok(Zonotope {
        center: &m.center * &z.center,
        generators: prune_zero_columns(&g),
    })
}

/// Membership `p ∈ z`, decided by a linear feasibility program: minimize the
/// ∞-norm residual of `c + Gβ = p` over `‖β‖∞ ≤ 1` and accept when it is at
/// most [`MEMBERSHIP_TOL`]. Solver failure is an error, distinct from a
/// negative answer.
pub fn contains_point(z: &Zonotope, p: &DVector<f64>) -> Result<bool> {
    if p.len() != z.dim() {
        return Err(Error::DimensionMismatch {
            op: "contains_point",
            detail: format!("point dim {} vs zonotope dim {}", p.len(), z.dim()),
        });
    }
    let d = p - &z.center;
    min_residual_membership(&z.generators, d.as_slice())
}

/// Membership `X ∈ m` for a matrix zonotope, via the same feasibility program
/// on vectorized entries.
pub fn mz_contains(m: &MatrixZonotope, x: &DMatrix<f64>) -> Result<bool> {
    if x.shape() != m.shape() {
        return Err(Error::DimensionMismatch {
            op: "mz_contains",
            detail: format!("candidate shape {:?} vs zonotope shape {:?}", x.shape(), m.shape()),
        });
    }
    let diff = x - &m.center;
    let d: Vec<f64> = diff.iter().copied().collect();
    let rows = d.len();
    let gens = DMatrix::from_fn(rows, m.num_generators(), |i, k| m.generators[k][i]);
    min_residual_membership(&gens, &d)
}

/// Solves `min t  s.t. ‖Gβ − d‖∞ ≤ t, ‖β‖∞ ≤ 1` and tests `t ≤ MEMBERSHIP_TOL`.
fn min_residual_membership(g: &DMatrix<f64>, d: &[f64]) -> Result<bool> {
    let (rows, gens) = (g.nrows(), g.ncols());
    if gens == 0 {
        return Ok(d.iter().all(|&v| v.abs() <= MEMBERSHIP_TOL));
    }
    // Variables: β (gens), then t.
    let tvar = gens;
    let mut p = QpProblem::new(gens + 1);
    p.lin[tvar] = 1.0;
    for i in 0..rows {
        let row: Vec<(usize, f64)> = (0..gens)
            .filter(|&j| g[(i, j)] != 0.0)
            .map(|j| (j, g[(i, j)]))
            .collect();
        let mut pos = row.clone();
        pos.push((tvar, -1.0));
        p.ineq.push((pos, d[i])); // (Gβ)ᵢ − t ≤ dᵢ
        let mut neg: Vec<(usize, f64)> = row.iter().map(|&(j, v)| (j, -v)).collect();
        neg.push((tvar, -1.0));
        p.ineq.push((neg, -d[i])); // −(Gβ)ᵢ − t ≤ −dᵢ
    }
    for j in 0..gens {
        p.ineq.push((vec![(j, 1.0)], 1.0));
        p.ineq.push((vec![(j, -1.0)], 1.0));
    }
    p.ineq.push((vec![(tvar, -1.0)], 0.0));
    match solve_qp(&p) {
        SolveOutcome::Optimal(sol) => Ok(sol.x[tvar] <= MEMBERSHIP_TOL),
        SolveOutcome::Infeasible => Err(Error::SolverFailure {
            status: "membership program reported infeasible, but it is feasible by construction"
                .into(),
        }),
        SolveOutcome::Failed(status) => Err(Error::SolverFailure { status }),
    }
}

/// Exact vertex set of a low-dimensional zonotope.
///
/// Enumerates the 2^γ sign patterns and keeps `c + Σ σⱼgⱼ` exactly when the
/// pattern's normal cone has interior, i.e. some direction `d` satisfies
/// `σⱼ·gⱼᵀd ≥ 1` for every j — the exact extreme-point filter. Guarded by
/// [`VERTEX_MAX_DIM`] / [`VERTEX_MAX_GENS`].
pub fn zonotope_vertices(z: &Zonotope) -> Result<Vec<DVector<f64>>> {
    let (dim, gens) = (z.dim(), z.num_generators());
    if dim > VERTEX_MAX_DIM || gens > VERTEX_MAX_GENS {
        return Err(Error::VertexLimits {
            dim,
            max_dim: VERTEX_MAX_DIM,
            gens,
            max_gens: VERTEX_MAX_GENS,
        });
    }
    if gens == 0 {
        return Ok(vec![z.center.clone()]);
    }
    let mut vertices: Vec<DVector<f64>> = Vec::new();
    for pattern in 0u32..(1 << gens) {
        let signs: Vec<f64> = (0..gens)
            .map(|j| if pattern >> j & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        // Feasibility: ∃d with σⱼ gⱼᵀ d ≥ 1 ∀j  ⇔  −σⱼ gⱼᵀ d ≤ −1.
        let mut p = QpProblem::new(dim);
        for j in 0..gens {
            let row: Vec<(usize, f64)> = (0..dim)
                .map(|i| (i, -signs[j] * z.generators[(i, j)]))
                .collect();
            p.ineq.push((row, -1.0));
        }
        // Bounded objective keeps the program well-posed.
        for i in 0..dim {
            p.quad.push((i, i, 1.0));
        }
        let feasible = match solve_qp(&p) {
            SolveOutcome::Optimal(_) => true,
            SolveOutcome::Infeasible => false,
            SolveOutcome::Failed(status) => return Err(Error::SolverFailure { status }),
        };
        if feasible {
            let mut v = z.center.clone();
            for j in 0..gens {
                v += z.generators.column(j) * signs[j];
            }
            if !vertices.iter().any(|u| (u - &v).amax() <= 1e-9) {
                vertices.push(v);
            }
        }
    }
    Ok(vertices)
}

/// Uniform-in-factor sample: `c + Gβ` with `β` uniform on `[−1,1]^γ`.
pub fn sample_point(z: &Zonotope, rng: &mut Rng) -> DVector<f64> {
    use rand::Rng as _;
    let mut p = z.center.clone();
    for j in 0..z.num_generators() {
        let beta: f64 = rng.random_range(-1.0..=1.0);
        p += z.generators.column(j) * beta;
    }
    p
}

/// Uniform-in-factor sample of a member matrix.
pub fn mz_sample(m: &MatrixZonotope, rng: &mut Rng) -> DMatrix<f64> {
    use rand::Rng as _;
    let mut x = m.center.clone();
    for g in &m.generators {
        let beta: f64 = rng.random_range(-1.0..=1.0);
        x += g * beta;
    }
    x
}
