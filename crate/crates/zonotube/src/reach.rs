//! Offline learning phase: trajectory collection, persistent-excitation
//! certification, and the matrix zonotope of data-consistent models.
//!
//! Given one input-state trajectory of `x⁺ = A₀x + B₀u + w` with `w ∈ Z_w`,
//! every model that could have produced the data lies in
//! `M_D = (X₊ − M_{Z_w,T})·[X₋; U₋]†`, a matrix zonotope with one generator
//! per (noise generator, time column) pair. The true `[A₀ B₀]` is always a
//! member.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::seed::Rng;
use crate::setalg::{mz_reduce_order_box, zonotope_vertices, MatrixZonotope, Zonotope};
use crate::Result;

/// Relative singular-value threshold for the persistent-excitation check.
pub const RANK_THRESHOLD: f64 = 1e-8;

/// Relative singular-value cutoff for the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// The unknown true plant: `x⁺ = A0·x + B0·u + w`, `w ∈ noise`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantModel {
    pub a0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub noise: Zonotope,
}

impl PlantModel {
    /// `a0` square, `b0` row-matched, noise zonotope containing the origin.
    pub fn new(a0: DMatrix<f64>, b0: DMatrix<f64>, noise: Zonotope) -> Result<Self> {
        if a0.nrows() != a0.ncols() || b0.nrows() != a0.nrows() || noise.dim() != a0.nrows() {
            return Err(Error::DimensionMismatch {
                op: "PlantModel::new",
                detail: format!(
                    "A {:?}, B {:?}, noise dim {}",
                    a0.shape(),
                    b0.shape(),
                    noise.dim()
                ),
            });
        }
        let zero = DVector::zeros(noise.dim());
        if !crate::setalg::contains_point(&noise, &zero)? {
            return Err(Error::InvalidSpec(
                "noise zonotope must contain the origin".into(),
            ));
        }
        Ok(PlantModel { a0, b0, noise })
    }

    pub fn state_dim(&self) -> usize {
        self.a0.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b0.ncols()
    }
}

/// Excitation law for offline data collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputLaw {
    /// Standard normal draw per input coordinate (the default).
    StandardNormal,
    /// Uniform-in-factor draw from a zonotope.
    UniformIn { set: Zonotope },
}

/// Noise draw per simulation step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseLaw {
    /// Uniform-in-factor draw from the noise zonotope.
    UniformInZonotope,
    /// Uniform draw over the noise zonotope's vertex set (worst case).
    VertexAdversarial,
}

impl NoiseLaw {
    /// Pre-computes whatever the law needs for repeated draws from `noise`.
    pub fn sampler(&self, noise: &Zonotope) -> Result<NoiseSampler> {
        match self {
            NoiseLaw::UniformInZonotope => Ok(NoiseSampler::Uniform(noise.clone())),
            NoiseLaw::VertexAdversarial => {
                Ok(NoiseSampler::Vertices(zonotope_vertices(noise)?))
            }
        }
    }
}

/// Resolved noise sampler (vertices enumerated once).
pub enum NoiseSampler {
    Uniform(Zonotope),
    Vertices(Vec<DVector<f64>>),
}

impl NoiseSampler {
    pub fn draw(&self, rng: &mut Rng) -> DVector<f64> {
        use rand::Rng as _;
        match self {
            NoiseSampler::Uniform(z) => crate::setalg::sample_point(z, rng),
            NoiseSampler::Vertices(vs) => vs[rng.random_range(0..vs.len())].clone(),
        }
    }
}

/// One collected trajectory, split into the standard data matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSet {
    pub x_minus: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
    pub u_minus: DMatrix<f64>,
}

impl DataSet {
    /// All blocks must share the column count (the sample count T).
    pub fn new(x_minus: DMatrix<f64>, x_plus: DMatrix<f64>, u_minus: DMatrix<f64>) -> Result<Self> {
        let t = x_minus.ncols();
        if x_plus.ncols() != t || u_minus.ncols() != t || x_plus.nrows() != x_minus.nrows() {
            return Err(Error::DimensionMismatch {
                op: "DataSet::new",
                detail: format!(
                    "X₋ {:?}, X₊ {:?}, U₋ {:?}",
                    x_minus.shape(),
                    x_plus.shape(),
                    u_minus.shape()
                ),
            });
        }
        Ok(DataSet {
            x_minus,
            x_plus,
            u_minus,
        })
    }

    pub fn len(&self) -> usize {
        self.x_minus.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The stacked regressor `[X₋; U₋]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, m, t) = (self.x_minus.nrows(), self.u_minus.nrows(), self.len());
        let mut p = DMatrix::zeros(n + m, t);
        p.rows_mut(0, n).copy_from(&self.x_minus);
        p.rows_mut(n, m).copy_from(&self.u_minus);
        p
    }

    /// Persistent-excitation certificate: `[X₋; U₋]` has full row rank,
    /// measured as σ_min/σ_max > [`RANK_THRESHOLD`].
    pub fn rank_certificate(&self) -> Result<()> {
        let p = self.stacked();
        let nrows = p.nrows();
        let svd = p.svd(false, false);
        let smax = svd.singular_values.max();
        let smin = if svd.singular_values.len() < nrows {
            0.0
        } else {
            svd.singular_values.min()
        };
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        if ratio <= RANK_THRESHOLD {
            return Err(Error::RankDeficient {
                ratio,
                threshold: RANK_THRESHOLD,
            });
        }
        Ok(())
    }
}

/// Simulates the plant for `t_samples` steps from `x0` and assembles the data
/// matrices. Fails if the collected data is not persistently exciting.
pub fn collect_trajectory(
    plant: &PlantModel,
    x0: &DVector<f64>,
    t_samples: usize,
    input_law: &InputLaw,
    noise_law: &NoiseLaw,
    rng: &mut Rng,
) -> Result<DataSet> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    if t_samples < n + m {
        return Err(Error::InvalidSpec(format!(
            "need at least n+m = {} samples, got {t_samples}",
            n + m
        )));
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            op: "collect_trajectory",
            detail: format!("x0 dim {} vs state dim {n}", x0.len()),
        });
    }
    let sampler = noise_law.sampler(&plant.noise)?;
    let mut x_minus = DMatrix::zeros(n, t_samples);
    let mut x_plus = DMatrix::zeros(n, t_samples);
    let mut u_minus = DMatrix::zeros(m, t_samples);
    let mut x = x0.clone();
    for t in 0..t_samples {
        let u = draw_input(input_law, m, rng)?;
        let w = sampler.draw(rng);
        let x_next = &plant.a0 * &x + &plant.b0 * &u + w;
        x_minus.set_column(t, &x);
        u_minus.set_column(t, &u);
        x_plus.set_column(t, &x_next);
        x = x_next;
    }
    let data = DataSet::new(x_minus, x_plus, u_minus)?;
    data.rank_certificate()?;
    Ok(data)
}

fn draw_input(law: &InputLaw, m: usize, rng: &mut Rng) -> Result<DVector<f64>> {
    match law {
        InputLaw::StandardNormal => {
            use rand_distr::{Distribution, StandardNormal};
            Ok(DVector::from_fn(m, |_, _| {
                StandardNormal.sample(rng)
            }))
        }
        InputLaw::UniformIn { set } => {
            if set.dim() != m {
                return Err(Error::DimensionMismatch {
                    op: "draw_input",
                    detail: format!("input set dim {} vs input dim {m}", set.dim()),
                });
            }
            Ok(crate::setalg::sample_point(set, rng))
        }
    }
}

/// Moore–Penrose pseudo-inverse with relative singular-value cutoff
/// [`PINV_CUTOFF`], consistent with the rank certificate.
pub fn pseudo_inverse(p: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = p.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = PINV_CUTOFF * smax;
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            sinv[(i, i)] = 1.0 / s;
        }
    }
    vt.transpose() * sinv * u.transpose()
}

/// Builds the matrix zonotope of all models consistent with the data:
/// center `(X₊ − C_{w,T})·P†`, one generator `−E_{jk}·P†` per (noise
/// generator j, time column k), where `E_{jk}` places noise generator j in
/// column k. Contains every `(A, B)` consistent with the data, in particular
/// the true model.
///
/// The result is entrywise box-reduced to order 1 (as the downstream tube
/// recursion expects) unless `reduce` is false.
pub fn build_consistent_set(data: &DataSet, noise: &Zonotope, reduce: bool) -> Result<MatrixZonotope> {
    let n = data.x_minus.nrows();
    if noise.dim() != n {
        return Err(Error::DimensionMismatch {
            op: "build_consistent_set",
            detail: format!("noise dim {} vs state dim {n}", noise.dim()),
        });
    }
    data.rank_certificate()?;
    let t = data.len();
    let p_dagger = pseudo_inverse(&data.stacked());

    // Center: (X₊ − C_{w,T})·P† with the noise center repeated per column.
    let mut shifted = data.x_plus.clone();
    for k in 0..t {
        let mut col = shifted.column_mut(k);
        col -= noise.center();
    }
    let center = &shifted * &p_dagger;

    // Generator (j, k) = −(noise generator j at column k)·P†
    //                  = −gⱼ · (row k of P†).
    let mut generators = Vec::with_capacity(noise.num_generators() * t);
    for j in 0..noise.num_generators() {
        let gj = noise.generators().column(j);
        for k in 0..t {
            let row_k = p_dagger.row(k);
            let gen = -(gj * row_k);
            generators.push(gen);
        }
    }
    let m_d = MatrixZonotope::new(center, generators)?;
    Ok(if reduce { mz_reduce_order_box(&m_d) } else { m_d })
}

/// Exact binomial-sum bound on the vertex count of the min-max program's
/// uncertainty polytope: `2(Σ_{i<n(n+m)} C(Tγ_w−1, i) + Σ_{i<nN} C(Nγ_w−1, i))`,
/// with `C(a,b) = 0` when `b > a`. Grows with the horizon N, unlike the tube
/// program's per-step constraint count.
pub fn minmax_vertex_bound(n: usize, m: usize, t: usize, gamma_w: usize, horizon: usize) -> BigUint {
    let first: BigUint = (0..n * (n + m))
        .map(|i| binomial(t * gamma_w - 1, i))
        .sum();
    let second: BigUint = (0..n * horizon)
        .map(|i| binomial(horizon * gamma_w - 1, i))
        .sum();
    (first + second) * 2u32
}

fn binomial(a: usize, b: usize) -> BigUint {
    if b > a {
        return BigUint::ZERO;
    }
    let mut result = BigUint::from(1u32);
    for i in 0..b.min(a - b) {
        result = result * BigUint::from(a - i) / BigUint::from(i + 1);
    }
    result
}
