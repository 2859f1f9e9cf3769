use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::seeding::subseed;

use super::layers::{BatchNorm, Conv1d, Dense, Layer, Mode, Sequential, Tape};
use super::{sigmoid, NetError, Real, Result, Tensor3};

/// SampleCNN-style encoder geometry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_length: usize,
    pub n_blocks: usize,
    pub base_channels: usize,
    pub embedding_dim: usize,
}

impl EncoderConfig {
    /// 59,049-sample input, 512-dim embedding.
    pub fn full() -> Self {
        Self {
            input_length: 59_049,
            n_blocks: 9,
            base_channels: 128,
            embedding_dim: 512,
        }
    }

    /// 2,187-sample input, 64-dim embedding.
    pub fn desk() -> Self {
        Self {
            input_length: 2_187,
            n_blocks: 6,
            base_channels: 16,
            embedding_dim: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reduced = 3usize.checked_pow(self.n_blocks as u32 + 1);
        if reduced != Some(self.input_length) {
            return Err(NetError::Config(format!(
                "input_length {} must equal 3^(n_blocks + 1) = 3^{}",
                self.input_length,
                self.n_blocks + 1
            )));
        }
        if self.base_channels == 0 || self.embedding_dim == 0 {
            return Err(NetError::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Output channels of the stem and of each block.
    pub fn channel_plan(&self) -> Vec<usize> {
        let mut plan = vec![self.base_channels.min(self.embedding_dim)];
        for block in 0..self.n_blocks {
            let width = if block + 1 == self.n_blocks {
                self.embedding_dim
            } else {
                (self.base_channels << block.div_ceil(2)).min(self.embedding_dim)
            };
            plan.push(width);
        }
        plan
    }
}

/// Geometry of all four networks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub projection_dim: usize,
    pub dc_hidden: [usize; 2],
    pub lp_hidden: usize,
    pub n_tags: usize,
}

impl ModelConfig {
    pub fn with_encoder(encoder: EncoderConfig, n_tags: usize) -> Self {
        let emb = encoder.embedding_dim;
        Self {
            projection_dim: (emb / 4).max(1),
            dc_hidden: [256, 64],
            lp_hidden: (emb / 2).max(1),
            n_tags,
            encoder,
        }
    }

    pub fn full() -> Self {
        Self::with_encoder(EncoderConfig::full(), 50)
    }

    pub fn desk() -> Self {
        Self::with_encoder(EncoderConfig::desk(), 8)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.projection_dim == 0
            || self.lp_hidden == 0
            || self.n_tags == 0
            || self.dc_hidden.contains(&0)
        {
            return Err(NetError::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// Parameter collections that train and freeze together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    /// Feature extractor: encoder plus projector.
    Fe,
    Dc,
    Lp,
}

impl Collection {
    pub const ALL: [Collection; 3] = [Collection::Fe, Collection::Dc, Collection::Lp];
}

/// Encoder, projector, domain classifier and label predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub encoder: Sequential<T>,
    pub projector: Sequential<T>,
    pub dc: Sequential<T>,
    pub lp: Sequential<T>,
}

impl<T: Real> Model<T> {
    /// Fresh parameters. Each network draws from its own stream, so e.g. the
    /// label predictor is initialized identically whatever else is built.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            encoder: build_encoder(&config.encoder, seed),
            projector: build_projector(&config, seed),
            dc: build_dc(&config, seed),
            lp: build_lp(&config, seed),
            config,
        })
    }

    fn check_waveforms(&self, x: &Tensor3<T>) -> Result<()> {
        if x.c != 1 || x.l != self.config.encoder.input_length {
            return Err(NetError::ShapeMismatch(format!(
                "encoder expects [n, 1, {}], got [n, {}, {}]",
                self.config.encoder.input_length, x.c, x.l
            )));
        }
        Ok(())
    }

    fn check_embeddings(&self, e: &Tensor3<T>) -> Result<()> {
        if e.l != 1 || e.c != self.config.encoder.embedding_dim {
            return Err(NetError::ShapeMismatch(format!(
                "expected [n, {}, 1] embeddings, got [n, {}, {}]",
                self.config.encoder.embedding_dim, e.c, e.l
            )));
        }
        Ok(())
    }

    /// Waveforms `[n, 1, input_length]` to embeddings `[n, embedding_dim, 1]`.
    pub fn fe_forward(&self, waveforms: &Tensor3<T>, mode: Mode) -> Result<(Tensor3<T>, Tape<T>)> {
        self.check_waveforms(waveforms)?;
        self.encoder.forward(waveforms, mode)
    }

    /// Inference-mode embeddings.
    pub fn embed(&self, waveforms: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_waveforms(waveforms)?;
        self.encoder.infer(waveforms)
    }

    pub fn projector_forward(
        &self,
        embeddings: &Tensor3<T>,
        mode: Mode,
    ) -> Result<(Tensor3<T>, Tape<T>)> {
        self.check_embeddings(embeddings)?;
        self.projector.forward(embeddings, mode)
    }

    /// Domain logits, one per item.
    pub fn dc_logits(&self, embeddings: &Tensor3<T>, mode: Mode) -> Result<(Tensor3<T>, Tape<T>)> {
        self.check_embeddings(embeddings)?;
        self.dc.forward(embeddings, mode)
    }

    /// Inference-mode probability that each embedding comes from the noisy
    /// domain, strictly inside (0, 1).
    pub fn dc_forward(&self, embeddings: &Tensor3<T>) -> Result<Vec<T>> {
        self.check_embeddings(embeddings)?;
        let logits = self.dc.infer(embeddings)?;
        let eps = T::epsilon();
        Ok(logits
            .data
            .iter()
            .map(|&z| sigmoid(z).max(eps).min(T::one() - eps))
            .collect())
    }

    /// Tag logits `[n, n_tags, 1]`.
    pub fn lp_forward(&self, embeddings: &Tensor3<T>, mode: Mode) -> Result<(Tensor3<T>, Tape<T>)> {
        self.check_embeddings(embeddings)?;
        self.lp.forward(embeddings, mode)
    }

    pub fn networks(&self, collection: Collection) -> Vec<(&'static str, &Sequential<T>)> {
        match collection {
            Collection::Fe => vec![("encoder", &self.encoder), ("projector", &self.projector)],
            Collection::Dc => vec![("dc", &self.dc)],
            Collection::Lp => vec![("lp", &self.lp)],
        }
    }

    fn networks_mut(&mut self, collection: Collection) -> Vec<(&'static str, &mut Sequential<T>)> {
        match collection {
            Collection::Fe => vec![
                ("encoder", &mut self.encoder),
                ("projector", &mut self.projector),
            ],
            Collection::Dc => vec![("dc", &mut self.dc)],
            Collection::Lp => vec![("lp", &mut self.lp)],
        }
    }

    /// SHA-256 over every stored tensor of `collection` (parameters and
    /// running statistics), as little-endian `f64`.
    pub fn digest(&self, collection: Collection) -> String {
        let mut hasher = Sha256::new();
        for (net_name, net) in self.networks(collection) {
            for (name, values) in net.named_tensors() {
                hasher.update(net_name.as_bytes());
                hasher.update(name.as_bytes());
                for v in values {
                    hasher.update(v.as_f64().to_le_bytes());
                }
            }
        }
        format!("{:x}", hasher.finalize())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            projector: self.projector.cast(),
            dc: self.dc.cast(),
            lp: self.lp.cast(),
        }
    }

    pub fn all_finite(&self) -> bool {
        Collection::ALL.iter().all(|&c| {
            self.networks(c).iter().all(|(_, net)| {
                net.named_tensors()
                    .iter()
                    .all(|(_, v)| v.iter().all(|x| x.is_finite()))
            })
        })
    }

    pub fn to_state(&self) -> ModelState {
        let mut collections = BTreeMap::new();
        for c in Collection::ALL {
            let tensors = self
                .networks(c)
                .into_iter()
                .flat_map(|(net_name, net)| {
                    net.named_tensors()
                        .into_iter()
                        .map(move |(name, values)| NamedTensor {
                            name: format!("{net_name}.{name}"),
                            values: values.iter().map(|v| v.as_f64()).collect(),
                        })
                })
                .collect();
            collections.insert(c, tensors);
        }
        ModelState {
            config: self.config.clone(),
            collections,
        }
    }

    pub fn from_state(state: &ModelState) -> Result<Self> {
        let mut model = Self::init(state.config.clone(), 0)?;
        for c in Collection::ALL {
            let stored = state
                .collections
                .get(&c)
                .ok_or_else(|| NetError::StateMismatch(format!("missing collection {c:?}")))?;
            let mut slots: Vec<(String, &mut Vec<T>)> = model
                .networks_mut(c)
                .into_iter()
                .flat_map(|(net_name, net)| {
                    net.named_tensors_mut()
                        .into_iter()
                        .map(move |(name, v)| (format!("{net_name}.{name}"), v))
                })
                .collect();
            if slots.len() != stored.len() {
                return Err(NetError::StateMismatch(format!(
                    "{c:?}: {} tensors stored, model has {}",
                    stored.len(),
                    slots.len()
                )));
            }
            for ((name, slot), tensor) in slots.iter_mut().zip(stored) {
                if *name != tensor.name || slot.len() != tensor.values.len() {
                    return Err(NetError::StateMismatch(format!(
                        "tensor {} does not match {name}",
                        tensor.name
                    )));
                }
                for (dst, &src) in slot.iter_mut().zip(&tensor.values) {
                    *dst = T::of(src);
                }
            }
        }
        Ok(model)
    }

    /// Copies one collection from `other`, which must share the config.
    pub fn copy_collection_from(&mut self, other: &Model<T>, collection: Collection) -> Result<()> {
        if self.config != other.config {
            return Err(NetError::StateMismatch("model configs differ".into()));
        }
        match collection {
            Collection::Fe => {
                self.encoder = other.encoder.clone();
                self.projector = other.projector.clone();
            }
            Collection::Dc => self.dc = other.dc.clone(),
            Collection::Lp => self.lp = other.lp.clone(),
        }
        Ok(())
    }
}

/// Precision-independent copy of every tensor, grouped by collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub collections: BTreeMap<Collection, Vec<NamedTensor>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(with = "crate::codec::f64_base64")]
    pub values: Vec<f64>,
}

fn build_encoder<T: Real>(cfg: &EncoderConfig, seed: u64) -> Sequential<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, "encoder"));
    let plan = cfg.channel_plan();
    let mut layers = vec![
        Layer::Conv(Conv1d::init(1, plan[0], 3, 0, &mut rng)),
        Layer::Norm(BatchNorm::new(plan[0])),
        Layer::Relu,
    ];
    for pair in plan.windows(2) {
        layers.push(Layer::Conv(Conv1d::init(pair[0], pair[1], 1, 1, &mut rng)));
        layers.push(Layer::Norm(BatchNorm::new(pair[1])));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool3);
    }
    Sequential::new(layers)
}

fn build_projector<T: Real>(cfg: &ModelConfig, seed: u64) -> Sequential<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, "projector"));
    let emb = cfg.encoder.embedding_dim;
    Sequential::new(vec![
        Layer::Dense(Dense::init(emb, emb, &mut rng)),
        Layer::Relu,
        Layer::Dense(Dense::init(emb, cfg.projection_dim, &mut rng)),
    ])
}

fn build_dc<T: Real>(cfg: &ModelConfig, seed: u64) -> Sequential<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, "dc"));
    let [h1, h2] = cfg.dc_hidden;
    Sequential::new(vec![
        Layer::Dense(Dense::init(cfg.encoder.embedding_dim, h1, &mut rng)),
        Layer::Norm(BatchNorm::new(h1)),
        Layer::Relu,
        Layer::Dense(Dense::init(h1, h2, &mut rng)),
        Layer::Norm(BatchNorm::new(h2)),
        Layer::Relu,
        Layer::Dense(Dense::init(h2, 1, &mut rng)),
    ])
}

fn build_lp<T: Real>(cfg: &ModelConfig, seed: u64) -> Sequential<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, "lp"));
    Sequential::new(vec![
        Layer::Dense(Dense::init(
            cfg.encoder.embedding_dim,
            cfg.lp_hidden,
            &mut rng,
        )),
        Layer::Relu,
        Layer::Dense(Dense::init(cfg.lp_hidden, cfg.n_tags, &mut rng)),
    ])
}
