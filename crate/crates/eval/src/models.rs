//! Model artifacts named by experiment configs.

use std::path::PathBuf;

use nbv_core::planning::{GainMode, PlannerConfig, PlannerModels, SamplerKind};
use nbv_models::{load_cvae, load_gain, load_imitation, Cvae, GainNet, Imitation};
use serde::{Deserialize, Serialize};

use crate::EvalError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub cvae: Option<PathBuf>,
    pub gain_mlp: Option<PathBuf>,
    pub gain_cnn: Option<PathBuf>,
    pub imitation: Option<PathBuf>,
}

impl ModelPaths {
    pub fn resolve_relative_to(&mut self, dir: &std::path::Path) {
        for p in [
            &mut self.cvae,
            &mut self.gain_mlp,
            &mut self.gain_cnn,
            &mut self.imitation,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedModels {
    pub cvae: Option<Cvae<f32>>,
    pub gain_mlp: Option<GainNet<f32>>,
    pub gain_cnn: Option<GainNet<f32>>,
    pub imitation: Option<Imitation<f32>>,
}

impl LoadedModels {
    /// Loads exactly the models the planner configs need. Every missing
    /// path or file is reported at once; kinds are checked on load.
    pub fn load_for(paths: &ModelPaths, configs: &[PlannerConfig]) -> Result<Self, EvalError> {
        let uses = |f: &dyn Fn(&PlannerConfig) -> bool| configs.iter().any(f);
        let need_cvae = uses(&|c| c.sampler == SamplerKind::Cvae);
        let need_joint = uses(&|c| c.gain_mode == GainMode::Joint);
        let need_imitation = uses(&|c| c.sampler == SamplerKind::Imitation);
        let need_mlp = uses(&|c| c.gain_mode == GainMode::LearnedMlp);
        let need_cnn = uses(&|c| c.gain_mode == GainMode::LearnedCnn);

        let mut missing = Vec::new();
        let mut check = |needed: bool, name: &str, path: &Option<PathBuf>| -> Option<PathBuf> {
            if !needed {
                return None;
            }
            match path {
                None => missing.push(format!("{name} model (no path configured)")),
                Some(p) if !p.is_file() => missing.push(format!("{name} model {}", p.display())),
                Some(p) => return Some(p.clone()),
            }
            None
        };
        let cvae = check(need_cvae, "cvae", &paths.cvae);
        let imitation = check(need_imitation, "imitation", &paths.imitation);
        let mlp = check(need_mlp, "gain_mlp", &paths.gain_mlp);
        let cnn = check(need_cnn, "gain_cnn", &paths.gain_cnn);
        if !missing.is_empty() {
            return Err(EvalError::MissingArtifacts(missing));
        }

        let loaded = Self {
            cvae: cvae.map(load_cvae).transpose()?,
            gain_mlp: mlp.map(load_gain).transpose()?,
            gain_cnn: cnn.map(load_gain).transpose()?,
            imitation: imitation.map(load_imitation).transpose()?,
        };
        if need_joint && loaded.cvae.as_ref().is_some_and(|m| !m.joint) {
            return Err(EvalError::Config(
                "joint gain mode needs a cvae trained with the gain output (cvae_joint)".into(),
            ));
        }
        for (m, want, name) in [
            (&loaded.gain_mlp, nbv_models::EncoderKind::Pooling, "gain_mlp"),
            (&loaded.gain_cnn, nbv_models::EncoderKind::Cnn, "gain_cnn"),
        ] {
            if let Some(m) = m {
                if m.kind != want {
                    return Err(EvalError::Config(format!(
                        "{name} path holds a {:?} gain model",
                        m.kind
                    )));
                }
            }
        }
        Ok(loaded)
    }

    pub fn planner_models(&self) -> PlannerModels<'_> {
        PlannerModels {
            cvae: self.cvae.as_ref().map(|m| m as _),
            imitation: self.imitation.as_ref().map(|m| m as _),
            gain_mlp: self.gain_mlp.as_ref().map(|m| m as _),
            gain_cnn: self.gain_cnn.as_ref().map(|m| m as _),
        }
    }
}
