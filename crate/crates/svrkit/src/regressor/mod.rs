//! Learnable map from a 2D slice to its 9-parameter anchor triplet.
//!
//! A small convolutional network with three linear regression heads (plane
//! centre and two corners) is trained by SGD with momentum on the summed
//! per-head squared landmark loss. Training is single-threaded and
//! bit-reproducible for a fixed seed. The full-scale reference topology is
//! available as a configuration for parameter accounting but is not meant
//! to be trained at desk scale.

mod net;

pub use net::{LayerSpec, Network, Tape};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, SvrError};
use crate::geometry::{pose_from_anchors, AnchorTriplet, RigidPose};
use crate::losses::anchor_loss;
use crate::sampling::SliceImage;

/// Network and optimizer configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    /// Backbone layers; three 3-output regression heads are always appended.
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl NetConfig {
    /// Desk-scale default: 3 conv + 2 fc on 64 x 64 inputs.
    pub fn desk_default() -> Self {
        Self {
            input_size: 64,
            layers: vec![
                LayerSpec::Conv { out_channels: 8, kernel: 5, stride: 2, pad: 2, groups: 1 },
                LayerSpec::Pool { kernel: 2, stride: 2 },
                LayerSpec::Conv { out_channels: 16, kernel: 3, stride: 1, pad: 1, groups: 1 },
                LayerSpec::Pool { kernel: 2, stride: 2 },
                LayerSpec::Conv { out_channels: 32, kernel: 3, stride: 1, pad: 1, groups: 1 },
                LayerSpec::Pool { kernel: 2, stride: 2 },
                LayerSpec::Fc { width: 128 },
                LayerSpec::Fc { width: 64 },
            ],
            seed: 0,
            learning_rate: 2e-5,
            momentum: 0.9,
            batch_size: 16,
            epochs: 60,
        }
    }

    /// The CaffeNet-derived full-scale topology on 256 x 256 inputs.
    ///
    /// Kept for parameter accounting and as a loadable configuration; its
    /// 73M parameters are not desk-trainable.
    pub fn reference_topology() -> Self {
        Self {
            input_size: 256,
            layers: vec![
                LayerSpec::Conv { out_channels: 96, kernel: 11, stride: 4, pad: 0, groups: 1 },
                LayerSpec::Pool { kernel: 3, stride: 2 },
                LayerSpec::Lrn { local_size: 5, alpha: 1e-4, beta: 0.75, k: 1.0 },
                LayerSpec::Conv { out_channels: 256, kernel: 5, stride: 1, pad: 2, groups: 2 },
                LayerSpec::Pool { kernel: 3, stride: 2 },
                LayerSpec::Lrn { local_size: 5, alpha: 1e-4, beta: 0.75, k: 1.0 },
                LayerSpec::Conv { out_channels: 384, kernel: 3, stride: 1, pad: 1, groups: 1 },
                LayerSpec::Conv { out_channels: 384, kernel: 3, stride: 1, pad: 1, groups: 2 },
                LayerSpec::Conv { out_channels: 256, kernel: 3, stride: 1, pad: 1, groups: 2 },
                LayerSpec::Pool { kernel: 3, stride: 2 },
                LayerSpec::Fc { width: 4096 },
                LayerSpec::Fc { width: 4096 },
                LayerSpec::Fc { width: 1000 },
            ],
            seed: 0,
            learning_rate: 1e-5,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
        }
    }

    pub fn network(&self) -> Result<Network> {
        Network::resolve(self.input_size, &self.layers)
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_anchor_error_mm: f64,
}

/// Trainable parameters plus configuration echo and training log.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: NetConfig,
    /// Flat parameter vector; see `net` for the layout.
    pub params: Vec<f32>,
    pub log: Vec<EpochStats>,
    network: Network,
}

impl ModelState {
    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Widened copy of the parameters for the f64 compute path.
    pub fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&p| p as f64).collect()
    }
}

/// Initializes a model deterministically from its config seed.
///
/// Weights are fan-in-scaled uniform (`+- 1/sqrt(fan_in)`), biases zero.
pub fn init_model(config: &NetConfig) -> Result<ModelState> {
    let network = config.network()?;
    let mut params = vec![0.0f32; network.total_params];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for layer in &network.layers {
        let fan_in = match layer.spec {
            LayerSpec::Conv { kernel, groups, .. } => {
                kernel * kernel * layer.in_channels / groups
            }
            LayerSpec::Fc { .. } => layer.in_features,
            _ => continue,
        };
        let limit = 1.0 / (fan_in as f64).sqrt();
        for w in params[layer.weight_offset..layer.weight_offset + layer.weight_len].iter_mut() {
            *w = rng.gen_range(-limit..limit) as f32;
        }
    }
    let limit = 1.0 / (network.feature_len as f64).sqrt();
    for h in 0..3 {
        let base = network.head_weight_offsets[h];
        for w in params[base..base + 3 * network.feature_len].iter_mut() {
            *w = rng.gen_range(-limit..limit) as f32;
        }
    }
    Ok(ModelState { config: config.clone(), params, log: Vec::new(), network })
}

fn image_to_f64(image: &SliceImage) -> Vec<f64> {
    image.data().iter().map(|&v| v as f64).collect()
}

/// Forward pass for one image.
pub fn forward_single(m: &ModelState, image: &SliceImage) -> Result<AnchorTriplet> {
    check_input_size(m, image)?;
    let out = m.network.forward(&m.params_f64(), &image_to_f64(image), None);
    Ok(AnchorTriplet::from_array(&out))
}

fn check_input_size(m: &ModelState, image: &SliceImage) -> Result<()> {
    if image.size() != m.config.input_size {
        return Err(SvrError::ShapeMismatch(format!(
            "image size {} does not match network input {}",
            image.size(),
            m.config.input_size
        )));
    }
    Ok(())
}

/// Forward pass for a batch; identical to mapping [`forward_single`].
pub fn forward(m: &ModelState, images: &[&SliceImage]) -> Result<Vec<AnchorTriplet>> {
    let params = m.params_f64();
    images
        .iter()
        .map(|img| {
            check_input_size(m, img)?;
            let out = m.network.forward(&params, &image_to_f64(img), None);
            Ok(AnchorTriplet::from_array(&out))
        })
        .collect()
}

/// A prediction: the regressed anchors and, when they are non-degenerate,
/// the recovered rigid pose.
#[derive(Debug, Clone)]
pub struct PosePrediction {
    pub anchors: AnchorTriplet,
    /// `None` when the anchors are collinear (prediction failure); such
    /// slices are excluded by robust statistics downstream.
    pub pose: Option<RigidPose>,
}

/// Predicts a slice pose: forward pass then anchor-to-pose recovery.
pub fn predict(m: &ModelState, image: &SliceImage) -> Result<PosePrediction> {
    let anchors = forward_single(m, image)?;
    let pose = pose_from_anchors(&anchors).ok();
    Ok(PosePrediction { anchors, pose })
}

/// Trains in place with SGD plus momentum on the summed three-head
/// landmark loss.
///
/// Deterministic for a fixed config seed: sample order, batch boundaries
/// and updates are all sequential. Returns an error if the loss stops
/// being finite.
pub fn train(m: &mut ModelState, data: &[(&SliceImage, AnchorTriplet)]) -> Result<()> {
    if data.is_empty() {
        return Err(SvrError::EmptyInput("empty training set".into()));
    }
    for (img, _) in data {
        if img.size() != m.config.input_size {
            return Err(SvrError::ShapeMismatch(format!(
                "training image size {} does not match network input {}",
                img.size(),
                m.config.input_size
            )));
        }
    }
    let batch_size = m.config.batch_size.max(1);
    let images: Vec<Vec<f64>> = data.iter().map(|(img, _)| image_to_f64(img)).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(m.config.seed.wrapping_add(1));
    let mut velocity = vec![0.0f64; m.network.total_params];
    let mut grad = vec![0.0f64; m.network.total_params];
    let mut params = m.params_f64();
    let mut tape = Tape::default();
    let start_epoch = m.log.len();

    for epoch in 0..m.config.epochs {
        // Fisher-Yates with the run's RNG keeps the whole schedule a pure
        // function of the seed.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut loss_sum = 0.0;
        let mut err_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &idx in chunk {
                let out = m.network.forward(&params, &images[idx], Some(&mut tape));
                let predicted = AnchorTriplet::from_array(&out);
                let target = &data[idx].1;
                let (loss, _) = anchor_loss(&predicted, target);
                loss_sum += loss.value;
                err_sum += crate::geometry::anchor_error(target, &predicted);
                let mut grad_out = [0.0; 9];
                for (g, v) in grad_out.iter_mut().zip(loss.grad.iter()) {
                    *g = v * scale;
                }
                m.network.backward(&params, &tape, &grad_out, &mut grad);
            }
            // The f32 vector stays the source of truth; the f64 working
            // copy mirrors it after the rounded update.
            for i in 0..m.params.len() {
                velocity[i] = m.config.momentum * velocity[i] - m.config.learning_rate * grad[i];
                m.params[i] = (params[i] + velocity[i]) as f32;
                params[i] = m.params[i] as f64;
            }
        }
        let mean_loss = loss_sum / data.len() as f64;
        if !mean_loss.is_finite() {
            return Err(SvrError::Diverged(format!(
                "mean loss {mean_loss} at epoch {epoch}; lower the learning rate"
            )));
        }
        m.log.push(EpochStats {
            epoch: start_epoch + epoch,
            mean_loss,
            mean_anchor_error_mm: err_sum / data.len() as f64,
        });
    }
    Ok(())
}

/// Mean anchor error of a model over labeled samples, in mm.
pub fn mean_anchor_error(m: &ModelState, data: &[(&SliceImage, AnchorTriplet)]) -> Result<f64> {
    if data.is_empty() {
        return Err(SvrError::EmptyInput("no evaluation samples".into()));
    }
    let params = m.params_f64();
    let mut sum = 0.0;
    for (img, target) in data {
        check_input_size(m, img)?;
        let out = m.network.forward(&params, &image_to_f64(img), None);
        sum += crate::geometry::anchor_error(target, &AnchorTriplet::from_array(&out));
    }
    Ok(sum / data.len() as f64)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SVRKCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a checkpoint: magic, version, config JSON, log JSON, then the raw
/// little-endian f32 parameter blob.
pub fn save_checkpoint(m: &ModelState, path: &Path) -> Result<()> {
    let config_json = serde_json::to_vec(&m.config)?;
    let log_json = serde_json::to_vec(&m.log)?;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())?;
    w.write_all(&config_json)?;
    w.write_all(&(log_json.len() as u64).to_le_bytes())?;
    w.write_all(&log_json)?;
    w.write_all(&(m.params.len() as u64).to_le_bytes())?;
    for p in &m.params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let fmt = |reason: String| SvrError::Format { path: path.display().to_string(), reason };
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(fmt("bad magic; not a checkpoint file".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(fmt(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut u64buf = [0u8; 8];

    r.read_exact(&mut u64buf)?;
    let config_len = u64::from_le_bytes(u64buf) as usize;
    let mut config_json = vec![0u8; config_len];
    r.read_exact(&mut config_json)?;
    let config: NetConfig =
        serde_json::from_slice(&config_json).map_err(|e| fmt(format!("config: {e}")))?;

    r.read_exact(&mut u64buf)?;
    let log_len = u64::from_le_bytes(u64buf) as usize;
    let mut log_json = vec![0u8; log_len];
    r.read_exact(&mut log_json)?;
    let log: Vec<EpochStats> =
        serde_json::from_slice(&log_json).map_err(|e| fmt(format!("log: {e}")))?;

    let network = config.network()?;
    r.read_exact(&mut u64buf)?;
    let param_count = u64::from_le_bytes(u64buf) as usize;
    if param_count != network.total_params {
        return Err(fmt(format!(
            "parameter blob holds {param_count} values but the config needs {}",
            network.total_params
        )));
    }
    let mut params = vec![0.0f32; param_count];
    let mut f32buf = [0u8; 4];
    for p in params.iter_mut() {
        r.read_exact(&mut f32buf)?;
        *p = f32::from_le_bytes(f32buf);
    }
    // Trailing garbage means a corrupt or truncated-then-extended file.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(fmt("trailing bytes after parameter blob".into()));
    }
    Ok(ModelState { config, params, log, network })
}
