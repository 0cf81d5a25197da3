use serde::{Deserialize, Serialize};

/// Integrator controls for the negative gradient flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Horizon used by basin classification.
    pub t_max: f64,
    /// Convergence radius around a critical point.
    pub r_conv: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings { rel_tol: 1e-10, abs_tol: 1e-12, max_step: 0.5, t_max: 200.0, r_conv: 1e-4 }
    }
}

/// Every numeric threshold used anywhere in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub flow: FlowSettings,
    pub crit_tol: f64,
    pub degeneracy_tol: f64,
    /// Transversality threshold on normalized margins.
    pub tau: f64,
    /// Radius of linear unstable disks.
    pub epsilon: f64,
    /// Mesh samples per parameter axis for intersection searches.
    pub mesh_density: usize,
    /// Seeds per dimension for critical point search.
    pub grid_density: usize,
    /// Unstable-coordinate tolerance for saddle basin membership.
    pub saddle_tol: f64,
    /// Newton residual tolerance for intersection refinement.
    pub newton_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            flow: FlowSettings::default(),
            crit_tol: 1e-9,
            degeneracy_tol: 1e-8,
            tau: 1e-6,
            epsilon: 0.01,
            mesh_density: 24,
            grid_density: 8,
            saddle_tol: 1e-10,
            newton_tol: 1e-11,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> crate::Result<()> {
        let positives = [
            ("rel_tol", self.flow.rel_tol),
            ("abs_tol", self.flow.abs_tol),
            ("max_step", self.flow.max_step),
            ("t_max", self.flow.t_max),
            ("r_conv", self.flow.r_conv),
            ("crit_tol", self.crit_tol),
            ("degeneracy_tol", self.degeneracy_tol),
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("saddle_tol", self.saddle_tol),
            ("newton_tol", self.newton_tol),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(crate::Error::Config(format!("tolerance `{name}` must be positive, got {v}")));
            }
        }
        if self.mesh_density < 4 {
            return Err(crate::Error::Config("mesh_density must be at least 4".into()));
        }
        if self.grid_density < 8 {
            return Err(crate::Error::Config("grid_density must be at least 8".into()));
        }
        Ok(())
    }
}
