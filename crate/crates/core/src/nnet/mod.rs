//! Neural building blocks with hand-written forward and backward passes.

pub mod cnn;
pub mod gradcheck;
pub mod lstm;
pub mod params;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cnn::{CnnShape, FeatureCnn};
pub use gradcheck::{grad_check, FdScheme, GradCheckReport};
pub use lstm::{cifg_step, LstmShape, LstmStack};
pub use params::{rng_for, Init, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout mask: each unit is kept with probability `1 - p` and
/// scaled by `1 / (1 - p)`.
pub fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Tool,
    Video,
    Combined,
}

/// Per-instant LSTM input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn tool(values: Vec<f64>) -> Self {
        Self { kind: FeatureKind::Tool, values }
    }

    pub fn video(values: Vec<f64>) -> Self {
        Self { kind: FeatureKind::Video, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `[video || tool]`.
pub fn concat_features(video: &FeatureVector, tool: &FeatureVector) -> Result<FeatureVector> {
    if video.kind != FeatureKind::Video || tool.kind != FeatureKind::Tool {
        return Err(Error::invalid(format!(
            "concatenation expects (video, tool), got ({:?}, {:?})",
            video.kind, tool.kind
        )));
    }
    let mut values = Vec::with_capacity(video.len() + tool.len());
    values.extend_from_slice(&video.values);
    values.extend_from_slice(&tool.values);
    Ok(FeatureVector { kind: FeatureKind::Combined, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_order_and_widths() {
        let v = FeatureVector::video(vec![0.5; 4096]);
        let t = FeatureVector::tool(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(concat_features(&v, &t).unwrap().len(), 4100);

        let v = FeatureVector::video((0..32).map(|k| k as f64 / 100.0).collect());
        let c = concat_features(&v, &t).unwrap();
        assert_eq!(c.len(), 36);
        assert_eq!(c.kind, FeatureKind::Combined);
        assert_eq!(&c.values[32..], &t.values[..]);
        assert_eq!(&c.values[..32], &v.values[..]);
        assert!(concat_features(&t, &v).is_err());
        assert!(concat_features(&c, &t).is_err());
    }

    #[test]
    fn dropout_mask_scaling() {
        let mut rng = rng_for(1);
        let m = dropout_mask(&mut rng, 1000, 0.25);
        assert!(m.iter().all(|v| *v == 0.0 || (*v - 4.0 / 3.0).abs() < 1e-15));
        assert_eq!(dropout_mask(&mut rng, 3, 0.0), vec![1.0; 3]);
    }
}
