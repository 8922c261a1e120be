use sha2::{Digest, Sha256};

use super::{ClassProbabilities, FeatureSet, FeatureSource};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{self, no_grad, Tensor};
use crate::transfer::Classifier;

/// Maps `[N, C, H, W]` images in `[-1, 1]` to features and class probabilities.
pub trait FeatureExtractor {
    /// Identifies the network and its weights; scores from different ids are
    /// not comparable.
    fn id(&self) -> &str;
    fn features(&self, images: &Tensor) -> Result<(usize, Vec<f64>)>;
    fn class_probabilities(&self, images: &Tensor) -> Result<ClassProbabilities>;
}

/// Pretrained classifier in eval mode: pooled backbone features and the
/// softmax of its head.
pub struct BackboneExtractor {
    classifier: Classifier,
    id: String,
    batch_size: usize,
}

impl BackboneExtractor {
    pub fn new(classifier: Classifier) -> Self {
        let mut h = Sha256::new();
        for rec in crate::transfer::WeightStore::from_module(&classifier).records() {
            h.update(rec.name.as_bytes());
            for v in &rec.values {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        let widths = &classifier.backbone.config().stage_channels;
        let id = format!(
            "resnet-{}-{}",
            widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x"),
            hex
        );
        BackboneExtractor {
            classifier,
            id,
            batch_size: 64,
        }
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    fn chunks(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::shape("extractor input", s, &[0, 3, 0, 0]));
        }
        let per = s[1] * s[2] * s[3];
        let data = images.data();
        data.chunks(self.batch_size * per)
            .map(|c| Tensor::new(&[c.len() / per, s[1], s[2], s[3]], c.to_vec()))
            .collect()
    }
}

impl FeatureExtractor for BackboneExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn features(&self, images: &Tensor) -> Result<(usize, Vec<f64>)> {
        let dim = self.classifier.backbone.feature_dim();
        let mut out = Vec::with_capacity(images.shape().first().copied().unwrap_or(0) * dim);
        for chunk in self.chunks(images)? {
            let f = no_grad(|| self.classifier.backbone.forward(&chunk, Mode::Eval))?;
            out.extend_from_slice(&f.data());
        }
        Ok((dim, out))
    }

    fn class_probabilities(&self, images: &Tensor) -> Result<ClassProbabilities> {
        let c = self.classifier.n_classes();
        let mut out = Vec::new();
        for chunk in self.chunks(images)? {
            let logits = no_grad(|| self.classifier.forward(&chunk, Mode::Eval))?;
            out.extend(tensor::softmax_rows(&logits.data(), c));
        }
        ClassProbabilities::new(out.len() / c, c, out)
    }
}

pub fn extract_features(images: &Tensor, extractor: &dyn FeatureExtractor, source: FeatureSource) -> Result<FeatureSet> {
    let (dim, data) = extractor.features(images)?;
    FeatureSet::new(data.len() / dim, dim, data, source, extractor.id())
}
