//! Experiment configuration: one JSON document covering the plant, the
//! data-collection run, the gain stage, tube reduction, and the receding
//! horizon. `validate` names the offending field in every rejection and
//! runs before any compute.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use zonotube::gains::{ProbSpec, DEFAULT_SYNTHESIS_CAP};
use zonotube::ocp::{OcpSpec, TighteningMode};
use zonotube::reach::{InputLaw, NoiseLaw, PlantModel};
use zonotube::seed::sub_seed;
use zonotube::setalg::Zonotope;
use zonotube::tube::{ReductionMethod, ReductionPolicy};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Worst-case tube table length when the config does not say otherwise.
pub const DEFAULT_TUBE_TABLE_STEPS: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub plant: PlantSection,
    pub data: DataSection,
    pub gain: GainSection,
    #[serde(default)]
    pub tube: TubeSection,
    pub ocp: OcpSection,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_replicates() -> usize {
    1
}

/// True plant used for simulation; matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub noise: Zonotope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Number of recorded transitions T.
    pub t_samples: usize,
    #[serde(default = "default_input_law")]
    pub input_law: InputLaw,
    /// Noise draw used both while collecting data and in closed loop.
    #[serde(default = "default_noise_law")]
    pub noise_law: NoiseLaw,
    /// Box-reduce the consistent model set (the default operating point).
    #[serde(default = "default_true")]
    pub reduce_model_set: bool,
    /// Overrides the derived collection sub-seed when set.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_input_law() -> InputLaw {
    InputLaw::StandardNormal
}

fn default_noise_law() -> NoiseLaw {
    NoiseLaw::VertexAdversarial
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainModeSpec {
    /// Check a user-supplied gain against the sampled model family.
    Verify,
    /// Search for a gain by sampled common-Lyapunov feasibility.
    Synthesize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSection {
    pub mode: GainModeSpec,
    /// Row-major m×n gain; required in verify mode.
    #[serde(default)]
    pub k: Option<Vec<Vec<f64>>>,
    pub epsilon: f64,
    pub delta: f64,
    /// Cap on the enforced synthesis sample count.
    #[serde(default = "default_synthesis_cap")]
    pub synthesis_cap: usize,
}

fn default_synthesis_cap() -> usize {
    DEFAULT_SYNTHESIS_CAP
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeSection {
    /// Reduction method; Girard when omitted.
    #[serde(default)]
    pub reduction: Option<ReductionMethod>,
    /// Generator cap; 4n when omitted.
    #[serde(default)]
    pub order_cap: Option<usize>,
    /// Optional truncation window for the error recursion.
    #[serde(default)]
    pub k0: Option<usize>,
    /// Steps tabulated in the worst-case tube artifact.
    #[serde(default)]
    pub table_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpSection {
    /// Prediction horizon N.
    pub horizon: usize,
    /// Closed-loop steps M.
    pub total_steps: usize,
    pub state_constraint: Zonotope,
    pub input_constraint: Zonotope,
    /// Row-major positive-semidefinite state weight.
    pub q: Vec<Vec<f64>>,
    /// Optional linear state cost per stage.
    #[serde(default)]
    pub linear_state: Option<Vec<f64>>,
    /// Weight on the input 1-norm.
    pub c_u: f64,
    #[serde(default = "default_mode")]
    pub tightening_mode: TighteningMode,
}

fn default_mode() -> TighteningMode {
    TighteningMode::Coupled
}

/// Gain stage after validation.
#[derive(Debug, Clone)]
pub enum GainMode {
    Verify(DMatrix<f64>),
    Synthesize { cap: usize },
}

/// Config after validation: nalgebra types, derived seeds, one built
/// `OcpSpec`. Everything downstream consumes this, never the raw JSON.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub plant: PlantModel,
    pub x0: DVector<f64>,
    pub t_samples: usize,
    pub input_law: InputLaw,
    pub noise_law: NoiseLaw,
    pub reduce_model_set: bool,
    pub collect_seed: u64,
    pub gain_mode: GainMode,
    pub prob_spec: ProbSpec,
    pub gain_seed: u64,
    pub policy: ReductionPolicy,
    pub k0: Option<usize>,
    pub tube_table_steps: usize,
    pub ocp_spec: OcpSpec,
    pub total_steps: usize,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    pub replicates: usize,
}

fn matrix_field(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, String> {
    if rows.is_empty() {
        return Err(format!("{field}: matrix must have at least one row"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(format!("{field}: matrix rows must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(format!("{field}: rows have inconsistent lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    /// The shipped double-integrator scenario: T = 100 standard-normal
    /// inputs, vertex-adversarial noise, given gain K = [−0.561, −1.385]
    /// verified at (ε, δ) = (1e−2, 1e−5), horizon 2, 12 closed-loop steps.
    pub fn double_integrator() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            plant: PlantSection {
                a: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
                b: vec![vec![0.5], vec![1.0]],
                x0: vec![-5.0, -2.0],
                noise: Zonotope::new(
                    DVector::zeros(2),
                    DMatrix::from_column_slice(2, 2, &[0.1, 0.05, 0.05, 0.1]),
                )
                .expect("preset noise set"),
            },
            data: DataSection {
                t_samples: 100,
                input_law: InputLaw::StandardNormal,
                noise_law: NoiseLaw::VertexAdversarial,
                reduce_model_set: true,
                seed: None,
            },
            gain: GainSection {
                mode: GainModeSpec::Verify,
                k: Some(vec![vec![-0.561, -1.385]]),
                epsilon: 1e-2,
                delta: 1e-5,
                synthesis_cap: DEFAULT_SYNTHESIS_CAP,
            },
            tube: TubeSection::default(),
            ocp: OcpSection {
                horizon: 2,
                total_steps: 12,
                state_constraint: Zonotope::new(
                    DVector::from_column_slice(&[-4.0, 0.0]),
                    DMatrix::from_column_slice(2, 2, &[4.0, 0.0, 0.0, 2.0]),
                )
                .expect("preset state set"),
                input_constraint: Zonotope::new(
                    DVector::zeros(1),
                    DMatrix::from_element(1, 1, 1.0),
                )
                .expect("preset input set"),
                q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                linear_state: None,
                c_u: 1e-2,
                tightening_mode: TighteningMode::Coupled,
            },
            out_dir: default_out_dir(),
            master_seed: 0,
            replicates: 1,
        }
    }

    /// Scales the state-constraint generators by `1 + pct/100` (opt-in
    /// relaxation; the default pipeline runs the original set).
    pub fn enlarge_state_constraint(&mut self, pct: f64) -> Result<(), String> {
        if !(pct.is_finite() && pct > -100.0) {
            return Err(format!(
                "ocp.state_constraint: enlargement must be a finite percentage > -100, got {pct}"
            ));
        }
        let z = &self.ocp.state_constraint;
        let scaled = z.generators() * (1.0 + pct / 100.0);
        self.ocp.state_constraint =
            Zonotope::new(z.center().clone(), scaled).map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Full validation pass. Every rejection names the config field.
    pub fn resolve(&self) -> Result<ResolvedConfig, String> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(format!(
                "schema_version: expected {CONFIG_SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        let a = matrix_field(&self.plant.a, "plant.a")?;
        if a.nrows() != a.ncols() {
            return Err(format!("plant.a: must be square, got {:?}", a.shape()));
        }
        let n = a.nrows();
        let b = matrix_field(&self.plant.b, "plant.b")?;
        if b.nrows() != n {
            return Err(format!(
                "plant.b: {} rows but plant.a is {n}x{n}",
                b.nrows()
            ));
        }
        let m = b.ncols();
        if self.plant.x0.len() != n {
            return Err(format!(
                "plant.x0: length {} but the state dimension is {n}",
                self.plant.x0.len()
            ));
        }
        let x0 = DVector::from_column_slice(&self.plant.x0);
        if self.plant.noise.dim() != n {
            return Err(format!(
                "plant.noise: dimension {} but the state dimension is {n}",
                self.plant.noise.dim()
            ));
        }
        let plant = PlantModel::new(a, b, self.plant.noise.clone()).map_err(|e| {
            format!("plant: {e}")
        })?;

        if self.data.t_samples < n + m {
            return Err(format!(
                "data.t_samples: need at least n+m = {} samples, got {}",
                n + m,
                self.data.t_samples
            ));
        }
        if let InputLaw::UniformIn { set } = &self.data.input_law {
            if set.dim() != m {
                return Err(format!(
                    "data.input_law.set: dimension {} but the input dimension is {m}",
                    set.dim()
                ));
            }
        }

        let prob_spec = ProbSpec::new(self.gain.epsilon, self.gain.delta)
            .map_err(|e| format!("gain.epsilon/gain.delta: {e}"))?;
        let gain_mode = match self.gain.mode {
            GainModeSpec::Verify => {
                let rows = self
                    .gain
                    .k
                    .as_ref()
                    .ok_or("gain.k: required when gain.mode is \"verify\"")?;
                let k = matrix_field(rows, "gain.k")?;
                if k.nrows() != m || k.ncols() != n {
                    return Err(format!(
                        "gain.k: shape {:?} but the plant needs {m}x{n}",
                        k.shape()
                    ));
                }
                GainMode::Verify(k)
            }
            GainModeSpec::Synthesize => {
                if self.gain.synthesis_cap == 0 {
                    return Err("gain.synthesis_cap: must be at least 1".into());
                }
                GainMode::Synthesize {
                    cap: self.gain.synthesis_cap,
                }
            }
        };

        let method = self.tube.reduction.unwrap_or(ReductionMethod::Girard);
        let cap = match self.tube.order_cap {
            Some(0) => return Err("tube.order_cap: must be at least 1".into()),
            Some(c) => c,
            None => ReductionPolicy::girard(n).cap,
        };
        let policy = ReductionPolicy { method, cap };
        if self.tube.k0 == Some(0) {
            return Err("tube.k0: must be at least 1".into());
        }
        let tube_table_steps = match self.tube.table_steps {
            Some(0) => return Err("tube.table_steps: must be at least 1".into()),
            Some(s) => s,
            None => DEFAULT_TUBE_TABLE_STEPS,
        };

        if self.ocp.total_steps == 0 {
            return Err("ocp.total_steps: must be at least 1".into());
        }
        if self.ocp.state_constraint.dim() != n {
            return Err(format!(
                "ocp.state_constraint: dimension {} but the state dimension is {n}",
                self.ocp.state_constraint.dim()
            ));
        }
        if self.ocp.input_constraint.dim() != m {
            return Err(format!(
                "ocp.input_constraint: dimension {} but the input dimension is {m}",
                self.ocp.input_constraint.dim()
            ));
        }
        let q = matrix_field(&self.ocp.q, "ocp.q")?;
        if let Some(l) = &self.ocp.linear_state {
            if l.len() != n {
                return Err(format!(
                    "ocp.linear_state: length {} but the state dimension is {n}",
                    l.len()
                ));
            }
        }
        let mut ocp_spec = OcpSpec::new(
            self.ocp.horizon,
            self.ocp.state_constraint.clone(),
            self.ocp.input_constraint.clone(),
            q,
            self.ocp.c_u,
        )
        .map_err(|e| format!("ocp: {e}"))?
        .with_mode(self.ocp.tightening_mode);
        ocp_spec.reduction = policy;
        ocp_spec.linear_state = self
            .ocp
            .linear_state
            .as_ref()
            .map(|l| DVector::from_column_slice(l));

        if self.replicates == 0 {
            return Err("replicates: must be at least 1".into());
        }

        Ok(ResolvedConfig {
            plant,
            x0,
            t_samples: self.data.t_samples,
            input_law: self.data.input_law.clone(),
            noise_law: self.data.noise_law.clone(),
            reduce_model_set: self.data.reduce_model_set,
            collect_seed: self
                .data
                .seed
                .unwrap_or_else(|| sub_seed(self.master_seed, "collect", 0)),
            gain_mode,
            prob_spec,
            gain_seed: sub_seed(self.master_seed, "gain", 0),
            policy,
            k0: self.tube.k0,
            tube_table_steps,
            ocp_spec,
            total_steps: self.ocp.total_steps,
            out_dir: self.out_dir.clone(),
            master_seed: self.master_seed,
            replicates: self.replicates,
        })
    }
}
