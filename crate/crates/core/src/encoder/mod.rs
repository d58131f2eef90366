//! The embedding network and the colour-histogram baseline.
//!
//! [`embed`] maps images to rows of an [`EmbeddingMatrix`]. Training goes
//! through [`loss_gradient`]: the caller supplies a closure that turns the
//! batch's embeddings into a loss and its gradient with respect to every
//! embedding row, and the encoder backpropagates that into the flat
//! parameter vector. Rows whose gradient is exactly zero are skipped.

mod checkpoint;
mod color_hist;
mod embedding;
mod tiny_conv;

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CheckpointHeader,
};
pub use color_hist::{color_histogram_embed, BACKGROUND_TOLERANCE, DEFAULT_BINS};
pub use embedding::{euclidean, EmbeddingMatrix};
pub use tiny_conv::tiny_conv_param_count;

use crate::dataset::Image;
use crate::{rng_from_seed, Error, Result};
use tiny_conv::{TinyConv, Workspace};

pub const DEFAULT_WIDTHS: [usize; 3] = [8, 16, 32];
pub const DEFAULT_EMBEDDING_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Architecture {
    /// Three stride-2 conv blocks of the given widths, global average
    /// pooling, linear projection.
    TinyConv { widths: [usize; 3] },
    /// A frozen, user-supplied feature extractor followed by a trainable
    /// linear projection. Only the projection is stored in checkpoints.
    BackboneAdapter { backbone: String, feature_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    pub embedding_dim: usize,
    /// Images must be `input_size x input_size`.
    pub input_size: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::tiny(DEFAULT_EMBEDDING_DIM, 64, 0)
    }
}

impl EncoderConfig {
    pub fn tiny(embedding_dim: usize, input_size: usize, init_seed: u64) -> Self {
        Self {
            architecture: Architecture::TinyConv {
                widths: DEFAULT_WIDTHS,
            },
            embedding_dim,
            input_size,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::Parameter(format!(
                "embedding_dim must be >= 2, got {}",
                self.embedding_dim
            )));
        }
        if self.input_size < crate::dataset::MIN_SIDE {
            return Err(Error::Parameter(format!(
                "input_size must be >= {}, got {}",
                crate::dataset::MIN_SIDE,
                self.input_size
            )));
        }
        match &self.architecture {
            Architecture::TinyConv { widths } => {
                if widths.contains(&0) {
                    return Err(Error::Parameter("conv widths must be positive".into()));
                }
                if self.input_size % 8 != 0 {
                    return Err(Error::Parameter(format!(
                        "tiny-conv input_size must be a multiple of 8, got {}",
                        self.input_size
                    )));
                }
            }
            Architecture::BackboneAdapter { feature_dim, .. } => {
                if *feature_dim == 0 {
                    return Err(Error::Parameter("backbone feature_dim must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match &self.architecture {
            Architecture::TinyConv { widths } => tiny_conv_param_count(*widths, self.embedding_dim),
            Architecture::BackboneAdapter { feature_dim, .. } => {
                feature_dim * self.embedding_dim + self.embedding_dim
            }
        }
    }
}

/// A frozen feature extractor plugged in front of a trainable projection.
pub trait Backbone: Send + Sync {
    fn name(&self) -> &str;
    fn feature_dim(&self) -> usize;
    fn features(&self, image: &Image) -> Result<Vec<f64>>;
}

/// Joint HSV histogram as a backbone.
#[derive(Debug, Clone, Copy)]
pub struct ColorHistogramBackbone {
    pub bins_per_channel: usize,
}

impl Backbone for ColorHistogramBackbone {
    fn name(&self) -> &str {
        "color-hist"
    }

    fn feature_dim(&self) -> usize {
        self.bins_per_channel.pow(3)
    }

    fn features(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(color_histogram_embed(image, self.bins_per_channel))
    }
}

/// Configuration plus flat parameter vector.
#[derive(Clone)]
pub struct EncoderState {
    config: EncoderConfig,
    params: Vec<f64>,
    backbone: Option<Arc<dyn Backbone>>,
}

impl fmt::Debug for EncoderState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncoderState")
            .field("config", &self.config)
            .field("params", &self.params.len())
            .field("backbone", &self.backbone.as_ref().map(|b| b.name().to_string()))
            .finish()
    }
}

impl PartialEq for EncoderState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl EncoderState {
    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Shape(format!(
                "config needs {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            params,
            backbone: None,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Attaches the feature extractor a backbone-adapter config refers to.
    pub fn with_backbone(mut self, backbone: Arc<dyn Backbone>) -> Result<Self> {
        match &self.config.architecture {
            Architecture::BackboneAdapter {
                backbone: name,
                feature_dim,
            } if name == backbone.name() && *feature_dim == backbone.feature_dim() => {
                self.backbone = Some(backbone);
                Ok(self)
            }
            Architecture::BackboneAdapter { backbone: name, feature_dim } => Err(Error::Config(format!(
                "config expects backbone {name:?} with {feature_dim} features, got {:?} with {}",
                backbone.name(),
                backbone.feature_dim()
            ))),
            Architecture::TinyConv { .. } => {
                Err(Error::Config("tiny-conv encoders take no backbone".into()))
            }
        }
    }

    /// Range of the final linear projection inside the parameter vector.
    pub fn projection_range(&self) -> std::ops::Range<usize> {
        match &self.config.architecture {
            Architecture::TinyConv { widths } => {
                TinyConv::new(*widths, self.config.embedding_dim, self.config.input_size)
                    .projection_range()
            }
            Architecture::BackboneAdapter { .. } => 0..self.params.len(),
        }
    }

    fn network(&self) -> Result<Network<'_>> {
        match &self.config.architecture {
            Architecture::TinyConv { widths } => Ok(Network::Conv(TinyConv::new(
                *widths,
                self.config.embedding_dim,
                self.config.input_size,
            ))),
            Architecture::BackboneAdapter { feature_dim, .. } => {
                let backbone = self.backbone.as_deref().ok_or_else(|| {
                    Error::Config("backbone adapter used without an attached backbone".into())
                })?;
                Ok(Network::Adapter {
                    backbone,
                    features: *feature_dim,
                    dim: self.config.embedding_dim,
                })
            }
        }
    }
}

enum Network<'a> {
    Conv(TinyConv),
    Adapter {
        backbone: &'a dyn Backbone,
        features: usize,
        dim: usize,
    },
}

impl Network<'_> {
    fn forward(&self, params: &[f64], image: &Image, ws: &mut AnyWorkspace, out: &mut [f64]) -> Result<()> {
        match self {
            Network::Conv(net) => {
                net.forward(params, image, &mut ws.conv, out);
                Ok(())
            }
            Network::Adapter {
                backbone,
                features,
                dim,
            } => {
                let f = backbone.features(image)?;
                if f.len() != *features {
                    return Err(Error::Shape(format!(
                        "backbone produced {} features, expected {features}",
                        f.len()
                    )));
                }
                let bias = features * dim;
                for (d, o) in out.iter_mut().enumerate() {
                    let w = &params[d * features..(d + 1) * features];
                    *o = params[bias + d] + w.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
                }
                ws.features = f;
                Ok(())
            }
        }
    }

    fn backward(&self, params: &[f64], ws: &mut AnyWorkspace, d_out: &[f64], grad: &mut [f64]) {
        match self {
            Network::Conv(net) => net.backward(params, &mut ws.conv, d_out, grad),
            Network::Adapter { features, dim, .. } => {
                let bias = features * dim;
                for (d, &g) in d_out.iter().enumerate() {
                    grad[bias + d] += g;
                    for (gw, x) in grad[d * features..(d + 1) * features].iter_mut().zip(&ws.features) {
                        *gw += g * x;
                    }
                }
            }
        }
    }
}

#[derive(Default)]
struct AnyWorkspace {
    conv: Workspace,
    features: Vec<f64>,
}

/// Deterministic fan-in-scaled initialization: conv weights ~ N(0, 2/fan_in)
/// (He), projection weights ~ N(0, 1/fan_in), biases zero.
pub fn init_encoder(config: &EncoderConfig) -> Result<EncoderState> {
    config.validate()?;
    let mut rng = rng_from_seed(config.init_seed);
    let mut params = vec![0.0; config.param_count()];
    let blocks: Vec<(std::ops::Range<usize>, usize, bool)> = match &config.architecture {
        Architecture::TinyConv { widths } => {
            TinyConv::new(*widths, config.embedding_dim, config.input_size).weight_blocks()
        }
        Architecture::BackboneAdapter { feature_dim, .. } => {
            vec![(0..feature_dim * config.embedding_dim, *feature_dim, false)]
        }
    };
    for (range, fan_in, relu) in blocks {
        let gain = if relu { 2.0 } else { 1.0 };
        let std = (gain / fan_in as f64).sqrt();
        for p in &mut params[range] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = std * z;
        }
    }
    EncoderState::from_params(config.clone(), params)
}

fn check_image(config: &EncoderConfig, i: usize, image: &Image) -> Result<()> {
    if image.height() != config.input_size || image.width() != config.input_size {
        return Err(Error::Shape(format!(
            "image {i} is {}x{}, encoder expects {}x{}",
            image.height(),
            image.width(),
            config.input_size,
            config.input_size
        )));
    }
    Ok(())
}

/// Embeds a batch; row `i` depends only on `images[i]`.
pub fn embed(state: &EncoderState, images: &[&Image]) -> Result<EmbeddingMatrix> {
    let net = state.network()?;
    let dim = state.config.embedding_dim;
    let mut out = EmbeddingMatrix::zeros(images.len(), dim);
    let mut ws = AnyWorkspace::default();
    for (i, image) in images.iter().enumerate() {
        check_image(&state.config, i, image)?;
        net.forward(&state.params, image, &mut ws, out.row_mut(i))?;
    }
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite embedding produced".into()));
    }
    Ok(out)
}

/// Evaluates a loss defined on the batch's embeddings and returns it together
/// with its gradient with respect to the encoder parameters.
///
/// `loss` receives the `n x dim` embeddings of `images` and must return the
/// loss value and `d loss / d embeddings` with the same shape.
pub fn loss_gradient<F>(state: &EncoderState, images: &[&Image], loss: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&EmbeddingMatrix) -> Result<(f64, EmbeddingMatrix)>,
{
    let embeddings = embed(state, images)?;
    let (value, d_emb) = loss(&embeddings)?;
    if !value.is_finite() {
        let max_abs = embeddings.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        return Err(Error::Numeric(format!(
            "loss evaluated to {value} (batch of {}, max |embedding| = {max_abs:.3e})",
            images.len()
        )));
    }
    if d_emb.rows() != embeddings.rows() || d_emb.cols() != embeddings.cols() {
        return Err(Error::Shape(format!(
            "loss gradient is {}x{}, embeddings are {}x{}",
            d_emb.rows(),
            d_emb.cols(),
            embeddings.rows(),
            embeddings.cols()
        )));
    }
    if !d_emb.is_finite() {
        return Err(Error::Numeric("non-finite gradient with respect to embeddings".into()));
    }

    let net = state.network()?;
    let mut grad = vec![0.0; state.params.len()];
    let mut ws = AnyWorkspace::default();
    let mut scratch = vec![0.0; state.config.embedding_dim];
    for (i, image) in images.iter().enumerate() {
        let g = d_emb.row(i);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        net.forward(&state.params, image, &mut ws, &mut scratch)?;
        net.backward(&state.params, &mut ws, g, &mut grad);
    }
    Ok((value, grad))
}
