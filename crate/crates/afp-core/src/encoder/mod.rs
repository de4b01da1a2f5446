//! Fingerprint encoder: a stack of separable convolutions feeding a
//! split-subvector projection head, trained with a temperature-scaled
//! contrastive objective. Gradients are computed by hand for the fixed
//! layer set and validated against finite differences.

mod exchange;
mod loss;
mod net;
mod train;

pub use exchange::{export_embeddings, import_embeddings};
pub use loss::{batch_loss, batch_loss_with_grad, pair_loss};
pub use net::{forward, EncoderConfig, EncoderParams};
pub use train::{
    assemble_batch, batch_parameter_gradient, gradient_check, max_rel_error_against_fd, train,
    validation_similarity, Batch, TrainConfig, TrainOutcome,
};

use crate::{Error, Result};

const NORM_KEEP_TOL: f64 = 1e-6;
const NORM_FIX_TOL: f64 = 1e-3;

/// Unit-L2-norm fingerprint vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Validate (and if needed gently renormalize) a candidate vector.
    ///
    /// Norm error up to 1e-6 is kept bit-exact, up to 1e-3 renormalized,
    /// anything further off is rejected, as are non-finite values.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::BadEmbedding("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadEmbedding("non-finite component".into()));
        }
        let norm = values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        let err = (norm - 1.0).abs();
        if err <= NORM_KEEP_TOL {
            Ok(Embedding { values })
        } else if err <= NORM_FIX_TOL {
            let values = values.iter().map(|v| (*v as f64 / norm) as f32).collect();
            Ok(Embedding { values })
        } else {
            Err(Error::BadEmbedding(format!(
                "norm {norm:.6} outside unit tolerance 1e-3"
            )))
        }
    }

    /// Normalize an f64 vector exactly, then narrow to f32.
    pub fn from_f64_normalized(v: &[f64]) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::NonFiniteActivation);
        }
        Ok(Embedding {
            values: v.iter().map(|x| (x / norm) as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// Cosine similarity; for unit-norm embeddings this is the inner product.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| *x as f64 * *y as f64)
        .sum()
}

/// Mel front-end plus forward pass for one 1 s segment.
pub fn embed_segment(
    params: &EncoderParams,
    segment: &crate::dsp::AudioBuffer,
) -> Result<Embedding> {
    forward(params, &crate::dsp::mel_spectrogram(segment)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_norm_policy() {
        let unit = vec![1.0f32, 0.0, 0.0];
        let e = Embedding::new(unit.clone()).unwrap();
        assert_eq!(e.values(), &unit[..]); // bit-exact keep

        let slightly_off = vec![1.0005f32, 0.0, 0.0];
        let e = Embedding::new(slightly_off).unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-6);

        let way_off = vec![0.9f32, 0.0, 0.0];
        assert!(matches!(Embedding::new(way_off), Err(Error::BadEmbedding(_))));

        assert!(Embedding::new(vec![f32::NAN, 0.0]).is_err());
        assert!(Embedding::new(vec![]).is_err());
    }

    #[test]
    fn cosine_of_identical_unit_vectors_is_one() {
        let e = Embedding::new(vec![0.6f32, 0.8, 0.0]).unwrap();
        assert!((cosine(&e, &e) - 1.0).abs() < 1e-6);
    }
}
