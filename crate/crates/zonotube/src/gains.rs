//! Probabilistic selection of the feedback gain `K`.
//!
//! Models `(A, B)` are sampled uniformly in the generator factors of the
//! consistent set. A candidate gain is *verified* by checking
//! `ρ(A + BK) < 1` on a batch whose size gives, with confidence `1 − δ`,
//! violation probability at most `ε` under the sampling measure. A gain is
//! *synthesized* by finding a common Lyapunov certificate `X ≻ 0`,
//! `Z = KX` satisfying the Schur-form stability LMI on a sampled batch,
//! then passing the same verification.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::seed::{rng_for, Rng};
use crate::setalg::{mz_sample, MatrixZonotope};
use crate::Result;

/// Margin required of the Lyapunov decrease on every synthesis sample.
pub const LYAPUNOV_MARGIN: f64 = 1e-9;

/// Default cap on the number of LMI samples actually enforced during
/// synthesis; the probabilistic guarantee comes from the subsequent
/// verification pass, not from this cap.
pub const DEFAULT_SYNTHESIS_CAP: usize = 256;

/// Accuracy/confidence pair for the sampling lemmas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbSpec {
    pub epsilon: f64,
    pub delta: f64,
}

impl ProbSpec {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0 && delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "epsilon and delta must lie in (0,1): got ε={epsilon}, δ={delta}"
            )));
        }
        Ok(ProbSpec { epsilon, delta })
    }
}

/// Evidence that a gain stabilizes the sampled model set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GainCertificateJson", into = "GainCertificateJson")]
pub struct GainCertificate {
    /// The certified gain, m×n.
    pub k: DMatrix<f64>,
    /// Verification batch size.
    pub num_samples: u64,
    pub prob_spec: ProbSpec,
    /// Largest ρ(A+BK) over the verification batch; < 1 by construction.
    pub max_spectral_radius: f64,
    /// Common Lyapunov matrix from synthesis, when the gain was synthesized.
    pub lyapunov_p: Option<DMatrix<f64>>,
    /// Seed that reproduces the verification batch.
    pub batch_seed: u64,
    /// Synthesis bookkeeping: (formula sample size, enforced sample count).
    pub synthesis_samples: Option<(u64, usize)>,
}

/// JSON mirror with matrices row-major.
#[derive(Serialize, Deserialize)]
struct GainCertificateJson {
    k: Vec<Vec<f64>>,
    num_samples: u64,
    prob_spec: ProbSpec,
    max_spectral_radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lyapunov_p: Option<Vec<Vec<f64>>>,
    batch_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    synthesis_samples: Option<(u64, usize)>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_of(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::InvalidSpec("ragged matrix in certificate".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl From<GainCertificate> for GainCertificateJson {
    fn from(c: GainCertificate) -> Self {
        GainCertificateJson {
            k: rows_of(&c.k),
            num_samples: c.num_samples,
            prob_spec: c.prob_spec,
            max_spectral_radius: c.max_spectral_radius,
            lyapunov_p: c.lyapunov_p.as_ref().map(rows_of),
            batch_seed: c.batch_seed,
            synthesis_samples: c.synthesis_samples,
        }
    }
}

impl TryFrom<GainCertificateJson> for GainCertificate {
    type Error = Error;
    fn try_from(j: GainCertificateJson) -> Result<Self> {
        Ok(GainCertificate {
            k: matrix_of(&j.k)?,
            num_samples: j.num_samples,
            prob_spec: j.prob_spec,
            max_spectral_radius: j.max_spectral_radius,
            lyapunov_p: j.lyapunov_p.as_deref().map(matrix_of).transpose()?,
            batch_seed: j.batch_seed,
            synthesis_samples: j.synthesis_samples,
        })
    }
}

/// Outcome of gain verification.
#[derive(Debug, Clone)]
pub enum VerifyOutcome {
    Certified(GainCertificate),
    /// First sampled model with ρ(A+BK) ≥ 1.
    Rejected {
        sample_index: u64,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        spectral_radius: f64,
    },
}

/// Splits a member of an n×(n+m) model zonotope into its (A, B) blocks.
pub fn sample_model(m: &MatrixZonotope, rng: &mut Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.shape().0;
    let ab = mz_sample(m, rng);
    let a = ab.columns(0, n).into_owned();
    let b = ab.columns(n, ab.ncols() - n).into_owned();
    (a, b)
}

/// `ρ(M)`: largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Verification batch size: `⌈ln(1/δ) / ln(1/(1−ε))⌉`.
pub fn verification_sample_size(spec: &ProbSpec) -> u64 {
    ((1.0 / spec.delta).ln() / (1.0 / (1.0 - spec.epsilon)).ln()).ceil() as u64
}

/// Synthesis batch size: `⌈(5/ε)(ln(4/δ) + d·ln(40/ε))⌉` with VC dimension
/// bound `d = 2nm·log₂(2e·n²(n+1))` (real-valued).
pub fn synthesis_sample_size(spec: &ProbSpec, n: usize, m: usize) -> u64 {
    let (nf, mf) = (n as f64, m as f64);
    let d = 2.0 * nf * mf * (2.0 * std::f64::consts::E * nf * nf * (nf + 1.0)).log2();
    (5.0 / spec.epsilon * ((4.0 / spec.delta).ln() + d * (40.0 / spec.epsilon).ln())).ceil() as u64
}

/// Draws the full verification batch and checks `ρ(A+BK) < 1` on every
/// sample. The batch is reproducible from `batch_seed` alone.
pub fn verify_gain(
    k: &DMatrix<f64>,
    m: &MatrixZonotope,
    spec: &ProbSpec,
    batch_seed: u64,
) -> Result<VerifyOutcome> {
    let (n, ncols) = m.shape();
    let input_dim = ncols - n;
    if k.nrows() != input_dim || k.ncols() != n {
        return Err(Error::DimensionMismatch {
            op: "verify_gain",
            detail: format!("K shape {:?}, expected {input_dim}×{n}", k.shape()),
        });
    }
    let num = verification_sample_size(spec);
    let mut rng = rng_for(batch_seed, "gain-verify", 0);
    let mut max_rho: f64 = 0.0;
    for i in 0..num {
        let (a, b) = sample_model(m, &mut rng);
        let rho = spectral_radius(&(&a + &b * k));
        if rho >= 1.0 {
            return Ok(VerifyOutcome::Rejected {
                sample_index: i,
                a,
                b,
                spectral_radius: rho,
            });
        }
        max_rho = max_rho.max(rho);
    }
    Ok(VerifyOutcome::Certified(GainCertificate {
        k: k.clone(),
        num_samples: num,
        prob_spec: *spec,
        max_spectral_radius: max_rho,
        lyapunov_p: None,
        batch_seed,
        synthesis_samples: None,
    }))
}

/// Symmetric-variable bookkeeping for the LMI feasibility search:
/// `y = (vech X, vec Z)` with `X` n×n symmetric and `Z` m×n.
struct LmiVars {
    n: usize,
    m: usize,
}

impl LmiVars {
    fn dim(&self) -> usize {
        self.n * (self.n + 1) / 2 + self.m * self.n
    }

    fn unpack(&self, y: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut x = DMatrix::zeros(self.n, self.n);
        let mut idx = 0;
        for i in 0..self.n {
            for j in i..self.n {
                x[(i, j)] = y[idx];
                x[(j, i)] = y[idx];
                idx += 1;
            }
        }
        let mut z = DMatrix::zeros(self.m, self.n);
        for a in 0..self.m {
            for b in 0..self.n {
                z[(a, b)] = y[idx];
                idx += 1;
            }
        }
        (x, z)
    }

    /// Gradient of `v ↦ vᵀ·blockLMI(A,B; y)·v` with respect to `y`
    /// (the map is linear and homogeneous in `y`).
    fn lmi_gradient(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, v: &DVector<f64>) -> Vec<f64> {
        let n = self.n;
        let v1 = v.rows(0, n).into_owned();
        let v2 = v.rows(n, n).into_owned();
        let atv2 = a.transpose() * &v2;
        let btv2 = b.transpose() * &v2;
        let mut g = vec![0.0; self.dim()];
        let mut idx = 0;
        // vᵀSv = v1ᵀXv1 + v2ᵀXv2 + 2·v2ᵀ(AX + BZ)v1
        for i in 0..n {
            for j in i..n {
                g[idx] = if i == j {
                    v1[i] * v1[i] + v2[i] * v2[i] + 2.0 * atv2[i] * v1[i]
                } else {
                    2.0 * (v1[i] * v1[j] + v2[i] * v2[j]) + 2.0 * (atv2[i] * v1[j] + atv2[j] * v1[i])
                };
                idx += 1;
            }
        }
        for aa in 0..self.m {
            for bb in 0..n {
                g[idx] = 2.0 * btv2[aa] * v1[bb];
                idx += 1;
            }
        }
        g
    }

    /// Gradient of `v ↦ vᵀXv` with respect to `y` (X-positivity cut).
    fn x_gradient(&self, v: &DVector<f64>) -> Vec<f64> {
        let n = self.n;
        let mut g = vec![0.0; self.dim()];
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                g[idx] = if i == j { v[i] * v[i] } else { 2.0 * v[i] * v[j] };
                idx += 1;
            }
        }
        g
    }
}

fn block_lmi(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let axbz = a * x + b * z;
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    s.view_mut((0, 0), (n, n)).copy_from(x);
    s.view_mut((n, n), (n, n)).copy_from(x);
    s.view_mut((n, 0), (n, n)).copy_from(&axbz);
    s.view_mut((0, n), (n, n)).copy_from(&axbz.transpose());
    s
}

fn min_eig(s: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = nalgebra::SymmetricEigen::new(s.clone());
    let mut best = 0usize;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    (eig.eigenvalues[best], eig.eigenvectors.column(best).into_owned())
}

/// Finds `(X, Z)` with `X ⪰ margin·I` and every sampled block LMI
/// `⪰ margin·I` by the ellipsoid method on the homogeneous variable
/// `y = (vech X, vec Z)`. Deterministic. Returns `None` when the iteration
/// budget is exhausted.
fn lmi_feasible_point(
    models: &[(DMatrix<f64>, DMatrix<f64>)],
    n: usize,
    m: usize,
    margin: f64,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let vars = LmiVars { n, m };
    let d = vars.dim();
    let df = d as f64;
    let radius = 10.0 * df.sqrt();
    let mut y = vec![0.0; d];
    // Shape matrix of the ellipsoid, kept as a dense symmetric matrix.
    let mut p = DMatrix::<f64>::identity(d, d) * radius * radius;
    let max_iter = 1000 * d * d;
    for _ in 0..max_iter {
        // Oracle: most binding violated constraint, or success.
        let (x, z) = vars.unpack(&y);
        let mut cut: Option<Vec<f64>> = None;
        let (ev, evec) = min_eig(&x);
        if ev < margin {
            cut = Some(vars.x_gradient(&evec));
        } else {
            for (a, b) in models {
                let s = block_lmi(a, b, &x, &z);
                let (ev, evec) = min_eig(&s);
                if ev < margin {
                    cut = Some(vars.lmi_gradient(a, b, &evec));
                    break;
                }
            }
        }
        let Some(g) = cut else {
            return Some((x, z));
        };
        // Central-cut ellipsoid update along the violated direction −g.
        let gv = DVector::from_vec(g);
        let pg = &p * &gv;
        let denom = (gv.dot(&pg)).sqrt();
        if !denom.is_finite() || denom < 1e-300 {
            return None;
        }
        let step = &pg / denom;
        for i in 0..d {
            y[i] += step[i] / (df + 1.0);
        }
        let scale = df * df / (df * df - 1.0);
        p = (&p - (&step * step.transpose()) * (2.0 / (df + 1.0))) * scale;
    }
    None
}

/// Synthesizes a gain from sampled stability LMIs.
///
/// Draws `min(formula N, cap)` models, finds a common `(X, Z)` certificate,
/// returns `K = Z·X⁻¹` with `P = X⁻¹` — after `K` additionally passes
/// [`verify_gain`] at the same spec. The enforced-sample cap is recorded in
/// the certificate; the probabilistic guarantee rests on the verification
/// pass.
pub fn synthesize_gain(
    m_d: &MatrixZonotope,
    spec: &ProbSpec,
    cap: usize,
    batch_seed: u64,
) -> Result<GainCertificate> {
    let (n, ncols) = m_d.shape();
    let input_dim = ncols - n;
    if input_dim == 0 {
        return Err(Error::InvalidSpec(
            "model zonotope must include at least one input column".into(),
        ));
    }
    let formula_n = synthesis_sample_size(spec, n, input_dim);
    let enforced = (formula_n.min(usize::MAX as u64) as usize).min(cap.max(1));
    let mut rng = rng_for(batch_seed, "gain-synth", 0);
    let models: Vec<_> = (0..enforced).map(|_| sample_model(m_d, &mut rng)).collect();

    // Feasibility margin well above the certificate requirement; the LMI is
    // homogeneous, so any positive margin scales.
    let vars_dim = n * (n + 1) / 2 + input_dim * n;
    let (x, z) = lmi_feasible_point(&models, n, input_dim, 1e-3).ok_or(
        Error::SynthesisInfeasible {
            iterations: 1000 * vars_dim * vars_dim,
        },
    )?;

    let x_inv = x.clone().try_inverse().ok_or_else(|| Error::SolverFailure {
        status: "synthesized X not invertible".into(),
    })?;
    let k = &z * &x_inv;
    let p = x_inv;

    // Certificate invariant: strict Lyapunov decrease on every enforced sample.
    for (a, b) in &models {
        let acl = a + b * &k;
        let diff = acl.transpose() * &p * &acl - &p;
        let top = nalgebra::SymmetricEigen::new(0.5 * (&diff + diff.transpose()))
            .eigenvalues
            .max();
        if top > -LYAPUNOV_MARGIN {
            return Err(Error::SynthesisInfeasible {
                iterations: 1000 * vars_dim * vars_dim,
            });
        }
    }

    match verify_gain(&k, m_d, spec, batch_seed)? {
        VerifyOutcome::Certified(mut cert) => {
            cert.lyapunov_p = Some(p);
            cert.synthesis_samples = Some((formula_n, enforced));
            Ok(cert)
        }
        VerifyOutcome::Rejected { spectral_radius, .. } => Err(Error::SolverFailure {
            status: format!(
                "synthesized gain failed verification: sampled ρ = {spectral_radius:.6}"
            ),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setalg::mz_contains;
    use nalgebra::dmatrix;

    #[test]
    fn spectral_radius_of_diagonal() {
        assert!((spectral_radius(&dmatrix![0.5, 0.0; 0.0, -0.9]) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_of_scaled_rotation() {
        let r = 0.7;
        let th = 0.3f64;
        let m = dmatrix![r*th.cos(), -r*th.sin(); r*th.sin(), r*th.cos()];
        assert!((spectral_radius(&m) - r).abs() < 1e-9);
    }

    #[test]
    fn spectral_radius_golden_ratio() {
        // Companion matrix of z² − z − 1.
        let m = dmatrix![0.0, 1.0; 1.0, 1.0];
        assert!((spectral_radius(&m) - 1.618_033_988_7).abs() < 1e-6);
    }

    #[test]
    fn verification_size_frozen_values() {
        let spec = ProbSpec::new(1e-2, 1e-5).unwrap();
        assert_eq!(verification_sample_size(&spec), 1146);
        let spec = ProbSpec::new(0.5, 0.5).unwrap();
        assert_eq!(verification_sample_size(&spec), 1);
    }

    #[test]
    fn verification_size_monotone_in_delta() {
        let mut last = 0;
        for &delta in &[0.2, 0.1, 0.01, 1e-3, 1e-4] {
            let n = verification_sample_size(&ProbSpec::new(0.05, delta).unwrap());
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn synthesis_size_monotone_in_dims() {
        let spec = ProbSpec::new(0.1, 0.1).unwrap();
        assert!(synthesis_sample_size(&spec, 2, 1) < synthesis_sample_size(&spec, 3, 1));
        assert!(synthesis_sample_size(&spec, 2, 1) < synthesis_sample_size(&spec, 2, 2));
    }

    #[test]
    fn prob_spec_rejects_degenerate_values() {
        assert!(ProbSpec::new(0.0, 0.1).is_err());
        assert!(ProbSpec::new(0.1, 1.0).is_err());
    }

    #[test]
    fn samples_are_members_and_reproducible() {
        let m = MatrixZonotope::new(
            dmatrix![1.0, 0.0, 0.5; 0.0, 1.0, 1.0],
            vec![
                dmatrix![0.1, 0.0, 0.0; 0.0, 0.1, 0.0],
                dmatrix![0.0, 0.05, 0.0; 0.05, 0.0, 0.02],
            ],
        )
        .unwrap();
        let mut r1 = rng_for(11, "gains-test", 0);
        let mut r2 = rng_for(11, "gains-test", 0);
        for _ in 0..10 {
            let (a1, b1) = sample_model(&m, &mut r1);
            let (a2, b2) = sample_model(&m, &mut r2);
            assert_eq!(a1, a2);
            assert_eq!(b1, b2);
            let mut ab = DMatrix::zeros(2, 3);
            ab.view_mut((0, 0), (2, 2)).copy_from(&a1);
            ab.view_mut((0, 2), (2, 1)).copy_from(&b1);
            assert!(mz_contains(&m, &ab).unwrap());
        }
    }

    #[test]
    fn stable_singleton_certifies_k_zero() {
        let m = MatrixZonotope::singleton(dmatrix![0.5, 0.0, 1.0; 0.0, 0.5, 2.0]);
        let spec = ProbSpec::new(0.1, 0.1).unwrap();
        let k = DMatrix::zeros(1, 2);
        match verify_gain(&k, &m, &spec, 7).unwrap() {
            VerifyOutcome::Certified(cert) => {
                assert!((cert.max_spectral_radius - 0.5).abs() < 1e-12);
            }
            other => panic!("expected certification, got {other:?}"),
        }
    }

    #[test]
    fn unstable_singleton_rejects_k_zero() {
        let m = MatrixZonotope::singleton(dmatrix![1.1, 0.0, 0.0; 0.0, 1.1, 0.0]);
        let spec = ProbSpec::new(0.1, 0.1).unwrap();
        let k = DMatrix::zeros(1, 2);
        match verify_gain(&k, &m, &spec, 7).unwrap() {
            VerifyOutcome::Rejected { spectral_radius, sample_index, .. } => {
                assert_eq!(sample_index, 0);
                assert!((spectral_radius - 1.1).abs() < 1e-9);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn synthesis_stabilizes_controllable_singleton() {
        // Double integrator: unstable open loop, controllable.
        let m = MatrixZonotope::singleton(dmatrix![1.0, 1.0, 0.5; 0.0, 1.0, 1.0]);
        let spec = ProbSpec::new(0.1, 0.1).unwrap();
        let cert = synthesize_gain(&m, &spec, 64, 5).unwrap();
        assert!(cert.max_spectral_radius < 1.0);
        let p = cert.lyapunov_p.as_ref().unwrap();
        // P ≻ 0 and decrease holds on the (single) model.
        assert!(nalgebra::SymmetricEigen::new(p.clone()).eigenvalues.min() > 0.0);
        let acl = dmatrix![1.0, 1.0; 0.0, 1.0] + dmatrix![0.5; 1.0] * &cert.k;
        let diff = acl.transpose() * p * &acl - p;
        assert!(nalgebra::SymmetricEigen::new(0.5 * (&diff + diff.transpose())).eigenvalues.max() < -LYAPUNOV_MARGIN);
    }

    #[test]
    fn all_stable_family_with_zero_b_accepts_some_gain() {
        // Every member is Schur with B = 0, so any K (including the returned
        // one) leaves the closed loop stable; synthesis must succeed.
        let m = MatrixZonotope::new(
            dmatrix![0.3, 0.0, 0.0; 0.0, 0.3, 0.0],
            vec![dmatrix![0.05, 0.0, 0.0; 0.0, 0.05, 0.0]],
        )
        .unwrap();
        let spec = ProbSpec::new(0.1, 0.1).unwrap();
        let cert = synthesize_gain(&m, &spec, 32, 9).unwrap();
        assert!(cert.max_spectral_radius < 1.0);
    }

    #[test]
    fn certificate_round_trips_through_json() {
        let cert = GainCertificate {
            k: dmatrix![-0.561, -1.385],
            num_samples: 1146,
            prob_spec: ProbSpec::new(1e-2, 1e-5).unwrap(),
            max_spectral_radius: 0.62,
            lyapunov_p: Some(dmatrix![2.0, 0.1; 0.1, 1.0]),
            batch_seed: 42,
            synthesis_samples: Some((7408, 256)),
        };
        let s = serde_json::to_string(&cert).unwrap();
        let back: GainCertificate = serde_json::from_str(&s).unwrap();
        assert_eq!(back.k, cert.k);
        assert_eq!(back.num_samples, 1146);
        assert_eq!(back.lyapunov_p, cert.lyapunov_p);
        assert_eq!(back.synthesis_samples, Some((7408, 256)));
    }
}
