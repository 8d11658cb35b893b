//! Conversion of observation windows into batched network inputs.

use super::config::{EgoKind, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::representation::{reference_for_window, to_motion_states, BoundingBox, MotionState, ReferenceTrajectory};

/// One observation window: `m_obs` boxes and the matching ego signal.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub boxes: &'a [BoundingBox],
    pub ego: &'a [f64],
}

/// Batched inputs: motion states `[B, m_obs, 8]`, ego features
/// `[B, m_obs, E]`, and the CV-CS reference for each window.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub states: Tensor,
    pub ego: Tensor,
    pub references: Vec<ReferenceTrajectory>,
}

impl ModelInput {
    pub fn batch_size(&self) -> usize {
        self.references.len()
    }

    pub fn build<'a>(cfg: &ModelConfig, obs: impl IntoIterator<Item = Observation<'a>>) -> Result<Self> {
        let m = cfg.m_obs;
        let e = cfg.ego_kind.feature_dim();
        let mut states = Vec::new();
        let mut ego = Vec::new();
        let mut references = Vec::new();
        for o in obs {
            if o.boxes.len() != m {
                return Err(Error::LengthMismatch {
                    what: "observed boxes vs m_obs",
                    left: o.boxes.len(),
                    right: m,
                });
            }
            states.extend(motion_features(o.boxes, cfg)?);
            ego.extend(ego_features(o.ego, cfg)?);
            references.push(reference_for_window(o.boxes, cfg.n_pred)?);
        }
        let b = references.len();
        if b == 0 {
            return Err(Error::EmptyDataset("model input batch"));
        }
        Ok(ModelInput {
            states: Tensor::new(&[b, m, MotionState::DIM], states)?,
            ego: Tensor::new(&[b, m, e], ego)?,
            references,
        })
    }
}

/// Flattened `[m_obs × 8]` motion-state features, optionally divided by
/// the image size (x, w, vx, dw by width; y, h, vy, dh by height).
pub fn motion_features(boxes: &[BoundingBox], cfg: &ModelConfig) -> Result<Vec<f64>> {
    let states = to_motion_states(boxes)?;
    let (sx, sy) = if cfg.normalize {
        (1.0 / cfg.image_width, 1.0 / cfg.image_height)
    } else {
        (1.0, 1.0)
    };
    let scale = [sx, sy, sx, sy, sx, sy, sx, sy];
    Ok(states
        .iter()
        .flat_map(|s| {
            let a = s.to_array();
            (0..MotionState::DIM).map(move |i| a[i] * scale[i])
        })
        .collect())
}

/// Per-frame ego features: the (optionally standardized) speed, or a
/// one-hot behavior label.
pub fn ego_features(ego: &[f64], cfg: &ModelConfig) -> Result<Vec<f64>> {
    if ego.len() != cfg.m_obs {
        return Err(Error::LengthMismatch {
            what: "ego signal vs m_obs",
            left: ego.len(),
            right: cfg.m_obs,
        });
    }
    match cfg.ego_kind {
        EgoKind::Speed => {
            if let Some(v) = ego.iter().find(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("non-finite ego speed {v}")));
            }
            Ok(if cfg.ego_zscore {
                ego.iter().map(|v| (v - cfg.ego_mean) / cfg.ego_std).collect()
            } else {
                ego.to_vec()
            })
        }
        EgoKind::Behavior => {
            let mut out = vec![0.0; ego.len() * EgoKind::NUM_BEHAVIORS];
            for (t, &v) in ego.iter().enumerate() {
                out[t * EgoKind::NUM_BEHAVIORS + behavior_label(v)?] = 1.0;
            }
            Ok(out)
        }
    }
}

/// Validates an integer behavior label in `0..=4`.
pub fn behavior_label(v: f64) -> Result<usize> {
    if v.fract() == 0.0 && (0.0..EgoKind::NUM_BEHAVIORS as f64).contains(&v) {
        Ok(v as usize)
    } else {
        Err(Error::Domain(format!(
            "behavior label {v} outside 0..={}",
            EgoKind::NUM_BEHAVIORS - 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn behavior_one_hot_and_errors() {
        let cfg = ModelConfig {
            m_obs: 3,
            ego_kind: EgoKind::Behavior,
            ..ModelConfig::default()
        };
        let f = ego_features(&[0.0, 4.0, 2.0], &cfg).unwrap();
        assert_eq!(f, vec![1., 0., 0., 0., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0., 0.]);
        assert!(ego_features(&[0.0, 7.0, 2.0], &cfg).is_err());
        assert!(ego_features(&[0.0, 1.5, 2.0], &cfg).is_err());
        assert!(ego_features(&[0.0, -1.0, 2.0], &cfg).is_err());
        assert!(ego_features(&[0.0, 1.0], &cfg).is_err());
    }

    #[test]
    fn speed_zscore_and_normalization() {
        let mut cfg = ModelConfig {
            m_obs: 2,
            ego_zscore: true,
            ego_mean: 10.0,
            ego_std: 2.0,
            ..ModelConfig::default()
        };
        assert_eq!(ego_features(&[10.0, 14.0], &cfg).unwrap(), vec![0.0, 2.0]);
        cfg.normalize = true;
        cfg.image_width = 100.0;
        cfg.image_height = 50.0;
        let boxes = [
            BoundingBox::new(10., 10., 20., 20.).unwrap(),
            BoundingBox::new(20., 15., 20., 30.).unwrap(),
        ];
        let f = motion_features(&boxes, &cfg).unwrap();
        assert_eq!(&f[8..], &[0.2, 0.3, 0.2, 0.6, 0.1, 0.1, 0.0, 0.2]);
    }
}
