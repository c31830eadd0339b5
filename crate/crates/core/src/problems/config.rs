use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pollutant::{PollutantOptions, COAST, CONTROL_REGION, OBSERVATION_REGION};
use super::qg::{QgOptions, QgTarget};
use super::{Distribution, ParameterBox, ProblemKind, SamplingPlan};
use crate::error::{Error, Result};
use crate::mesh::{generate_rect_mesh, load_mesh, BoundaryPlan, Mesh, Rect, Region};
use crate::truth::NewtonOptions;

/// Where the mesh comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeshSource {
    /// Structured unit square with `cells` cells per side and the
    /// problem's default labels.
    Generated { cells: usize },
    /// `romocp-mesh 1` text file; relative paths resolve against the
    /// configuration file.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Constant {
        value: f64,
    },
    /// Quasi-geostrophic only: state solve with `f = −sin(πy)` at `mu`.
    Forcing {
        mu: Vec<f64>,
    },
}

/// Problem configuration file (JSON). Every field except `problem` has a
/// problem-specific default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    /// Nondimensionalizing constant L (pollutant only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_box: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingPlan>,
    /// Number of POD modes N kept per variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton: Option<NewtonOptions>,
}

/// Reads and validates a configuration file, resolving a relative mesh path
/// against the file's directory.
pub fn load_config(path: &Path) -> Result<ProblemConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config: ProblemConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(MeshSource::File { path: mesh_path }) = &mut config.mesh {
        if mesh_path.is_relative() {
            if let Some(dir) = path.parent() {
                *mesh_path = dir.join(&*mesh_path);
            }
        }
    }
    config.validate()?;
    Ok(config)
}

impl ProblemConfig {
    pub fn new(problem: ProblemKind) -> Self {
        ProblemConfig {
            problem,
            mesh: None,
            alpha: None,
            target: None,
            scale: None,
            parameter_box: None,
            sampling: None,
            basis_size: None,
            newton: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(MeshSource::Generated { cells: 0 }) = self.mesh {
            return Err(Error::Config(
                "mesh needs at least one cell per side".into(),
            ));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("alpha must be positive, got {a}")));
            }
        }
        if self.basis_size == Some(0) {
            return Err(Error::Config("basis_size must be at least 1".into()));
        }
        if self.sampling().size == 0 {
            return Err(Error::Config("sampling size must be at least 1".into()));
        }
        if let (ProblemKind::Pollutant, Some(TargetSpec::Forcing { .. })) =
            (self.problem, &self.target)
        {
            return Err(Error::Config(
                "forcing targets only apply to quasi-geostrophic problems".into(),
            ));
        }
        let b = self.parameter_box()?;
        let expected = if self.problem == ProblemKind::QgLinear {
            2
        } else {
            3
        };
        if b.dim() != expected {
            return Err(Error::Config(format!(
                "{} takes {expected} parameters, box has {}",
                self.problem.id(),
                b.dim()
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        match self.mesh {
            Some(MeshSource::Generated { cells }) => cells,
            _ => match self.problem {
                ProblemKind::Pollutant => 50,
                _ => 36,
            },
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        if let Some(MeshSource::File { path }) = &self.mesh {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return load_mesh(&text);
        }
        let n = self.cells();
        match self.problem {
            ProblemKind::Pollutant => {
                let plan = BoundaryPlan {
                    bottom: COAST,
                    right: COAST,
                    top: 2,
                    left: 2,
                };
                let regions = [
                    Region {
                        label: CONTROL_REGION,
                        rect: Rect::new(0.2, 0.4, 0.2, 0.4),
                    },
                    Region {
                        label: OBSERVATION_REGION,
                        rect: Rect::new(0.6, 0.8, 0.6, 0.8),
                    },
                ];
                generate_rect_mesh(n, n, Rect::UNIT, plan, &regions).map_err(|e| match e {
                    Error::Alignment(m) => Error::Config(format!(
                        "{n} cells per side do not align with the control and observation boxes ({m})"
                    )),
                    other => other,
                })
            }
            _ => generate_rect_mesh(n, n, Rect::UNIT, BoundaryPlan::uniform(1), &[]),
        }
    }

    pub fn parameter_box(&self) -> Result<ParameterBox> {
        match &self.parameter_box {
            Some(b) => ParameterBox::new(b.clone()),
            None => Ok(match self.problem {
                ProblemKind::Pollutant => PollutantOptions::default().parameter_box,
                ProblemKind::QgLinear => QgOptions::linear().parameter_box,
                ProblemKind::QgNonlinear => QgOptions::nonlinear().parameter_box,
            }),
        }
    }

    pub fn sampling(&self) -> SamplingPlan {
        self.sampling.clone().unwrap_or(SamplingPlan {
            distribution: match self.problem {
                ProblemKind::Pollutant => Distribution::Uniform,
                ProblemKind::QgLinear => Distribution::LogUniform,
                ProblemKind::QgNonlinear => Distribution::LogEquispaced,
            },
            size: 100,
            seed: 1,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.basis_size.unwrap_or(match self.problem {
            ProblemKind::Pollutant => 20,
            _ => 25,
        })
    }

    pub fn newton(&self) -> NewtonOptions {
        self.newton.clone().unwrap_or_default()
    }

    pub fn pollutant_options(&self) -> Result<PollutantOptions> {
        let d = PollutantOptions::default();
        let y_d = match &self.target {
            None => d.y_d,
            Some(TargetSpec::Constant { value }) => *value,
            Some(TargetSpec::Forcing { .. }) => {
                return Err(Error::Config(
                    "forcing targets only apply to quasi-geostrophic problems".into(),
                ))
            }
        };
        Ok(PollutantOptions {
            alpha: self.alpha.unwrap_or(d.alpha),
            y_d,
            scale: self.scale.unwrap_or(d.scale),
            parameter_box: self.parameter_box()?,
        })
    }

    pub fn qg_options(&self) -> Result<QgOptions> {
        let d = if self.problem == ProblemKind::QgLinear {
            QgOptions::linear()
        } else {
            QgOptions::nonlinear()
        };
        let target = match &self.target {
            None => d.target,
            Some(TargetSpec::Constant { value }) => QgTarget::Constant(*value),
            Some(TargetSpec::Forcing { mu }) => QgTarget::Forcing(mu.clone()),
        };
        Ok(QgOptions {
            alpha: self.alpha.unwrap_or(d.alpha),
            target,
            parameter_box: self.parameter_box()?,
            newton: self.newton(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c: ProblemConfig = serde_json::from_str(r#"{"problem": "pollutant"}"#).unwrap();
        c.validate().unwrap();
        assert_eq!(c.cells(), 50);
        assert_eq!(c.basis_size(), 20);
        assert_eq!(c.sampling().distribution, Distribution::Uniform);
        let o = c.pollutant_options().unwrap();
        assert_eq!((o.alpha, o.y_d, o.scale), (1e-2, 0.2, 1e3));
    }

    #[test]
    fn full_config_round_trip() {
        let text = r#"{
            "problem": "qg-nonlinear",
            "mesh": {"kind": "generated", "cells": 12},
            "alpha": 1e-5,
            "target": {"kind": "forcing", "mu": [1e-4, 0.000343, 0.0049]},
            "parameter_box": [[0.000343, 1], [1e-4, 1], [1e-4, 0.002025]],
            "sampling": {"distribution": "log-equispaced", "size": 27, "seed": 4},
            "basis_size": 5
        }"#;
        let c: ProblemConfig = serde_json::from_str(text).unwrap();
        c.validate().unwrap();
        let again: ProblemConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{"problem": "pollutant", "alpha": -1}"#,
            r#"{"problem": "qg-linear", "parameter_box": [[0, 1]]}"#,
            r#"{"problem": "pollutant", "target": {"kind": "forcing", "mu": [1, 1]}}"#,
            r#"{"problem": "pollutant", "basis_size": 0}"#,
        ] {
            let c: ProblemConfig = serde_json::from_str(text).unwrap();
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{text}");
        }
        assert!(serde_json::from_str::<ProblemConfig>(r#"{"problem": "heat"}"#).is_err());
        assert!(
            serde_json::from_str::<ProblemConfig>(r#"{"problem": "pollutant", "typo": 1}"#)
                .is_err()
        );
    }

    #[test]
    fn unaligned_pollutant_mesh() {
        let mut c = ProblemConfig::new(ProblemKind::Pollutant);
        c.mesh = Some(MeshSource::Generated { cells: 7 });
        assert!(matches!(c.build_mesh(), Err(Error::Config(_))));
    }
}
