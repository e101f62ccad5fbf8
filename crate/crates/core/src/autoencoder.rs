//! 3D convolutional autoencoder over one-hot material lattices.
//!
//! Encoder: three blocks of (3x3x3 conv, ReLU, 2x2x2 ceil-mode max pool),
//! then a linear dense layer to the latent vector. Decoder: dense + ReLU back
//! to the pooled volume, two blocks of (nearest upsample, conv, ReLU), a last
//! upsample, a centre crop to the lattice size, conv + ReLU and a pointwise
//! conv to the five material logits.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{
    adam_step, center_crop, center_crop_backward, conv3d_backward_accumulate, conv3d_forward,
    dense_backward_accumulate, dense_forward, glorot_uniform, maxpool3d, maxpool3d_backward, pooled_dim,
    relu_backward_inplace, relu_inplace, softmax_ce_loss_scaled, upsample_nearest, upsample_nearest_backward,
    weights, AdamConfig, LayerState, Scalar, Tensor, TensorError,
};
use crate::voxel::{dims_error, from_onehot, to_onehot, Dims, Material, MaterialLattice, OneHotLattice, VoxelError};

pub type LatentVector = Vec<f64>;

/// Independent gradient partial sums per minibatch. Fixed, so the reduction
/// order does not depend on the thread count.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Error)]
pub enum AutoencoderError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("evaluation set is empty")]
    EmptySet,
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub lattice: Dims,
    pub latent_dim: usize,
    pub encoder_channels: [usize; 3],
    pub decoder_channels: [usize; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            lattice: Dims::cube(20),
            latent_dim: 256,
            encoder_channels: [16, 32, 64],
            decoder_channels: [32, 16, 16],
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AutoencoderConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.lattice.is_empty() {
            return Err("autoencoder.lattice dims must be positive".into());
        }
        if self.latent_dim == 0 || self.encoder_channels.contains(&0) || self.decoder_channels.contains(&0) {
            return Err("autoencoder widths must be positive".into());
        }
        if self.batch_size == 0 {
            return Err("autoencoder.batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("autoencoder.learning_rate must be positive".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return Err("autoencoder Adam betas must lie in [0, 1) and epsilon be positive".into());
        }
        Ok(())
    }

    /// Spatial size after the three pools, in tensor axis order `(y, z, x)`.
    fn pooled(&self) -> [usize; 3] {
        let p = |d: usize| pooled_dim(pooled_dim(pooled_dim(d)));
        [p(self.lattice.y), p(self.lattice.z), p(self.lattice.x)]
    }

    fn spatial(&self) -> [usize; 3] {
        [self.lattice.y, self.lattice.z, self.lattice.x]
    }

    fn flat(&self) -> usize {
        self.encoder_channels[2] * self.pooled().iter().product::<usize>()
    }

    /// `(name, weight shape, fan_in, fan_out)` per layer, in order.
    fn layout(&self) -> Vec<(&'static str, Vec<usize>, usize, usize)> {
        let [e1, e2, e3] = self.encoder_channels;
        let [d1, d2, d3] = self.decoder_channels;
        let c = Material::COUNT;
        let conv = |name, o: usize, i: usize| (name, vec![o, i, 3, 3, 3], i * 27, o * 27);
        vec![
            conv("encoder.conv1", e1, c),
            conv("encoder.conv2", e2, e1),
            conv("encoder.conv3", e3, e2),
            ("encoder.latent", vec![self.latent_dim, self.flat()], self.flat(), self.latent_dim),
            ("decoder.dense", vec![self.flat(), self.latent_dim], self.latent_dim, self.flat()),
            conv("decoder.conv1", d1, e3),
            conv("decoder.conv2", d2, d1),
            conv("decoder.conv3", d3, d2),
            ("decoder.logits", vec![c, d3, 1, 1, 1], d3, c),
        ]
    }
}

const ENC1: usize = 0;
const ENC2: usize = 1;
const ENC3: usize = 2;
const LATENT: usize = 3;
const DEC_DENSE: usize = 4;
const DEC1: usize = 5;
const DEC2: usize = 6;
const DEC3: usize = 7;
const LOGITS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder<T> {
    config: AutoencoderConfig,
    seed: u64,
    layers: Vec<LayerState<T>>,
    history: Vec<f64>,
    data_fingerprint: Option<String>,
}

pub type Autoencoder32 = Autoencoder<f32>;
pub type Autoencoder64 = Autoencoder<f64>;

/// Activations kept for the backward pass of one sample.
struct Trace<T> {
    x: Tensor<T>,
    a1: Tensor<T>,
    p1: Tensor<T>,
    i1: Vec<usize>,
    a2: Tensor<T>,
    p2: Tensor<T>,
    i2: Vec<usize>,
    a3: Tensor<T>,
    i3: Vec<usize>,
    flat: Tensor<T>,
    dec: DecoderTrace<T>,
}

struct DecoderTrace<T> {
    z: Tensor<T>,
    h: Tensor<T>,
    u1: Tensor<T>,
    b1: Tensor<T>,
    u2: Tensor<T>,
    b2: Tensor<T>,
    u3_shape: Vec<usize>,
    c: Tensor<T>,
    b3: Tensor<T>,
    logits: Tensor<T>,
}

/// Per-layer `(weights, bias)` gradient sums.
type GradBuffers<T> = Vec<(Vec<T>, Vec<T>)>;

impl<T: Scalar> Autoencoder<T> {
    /// A freshly initialized model: Glorot-uniform weights, zero biases.
    pub fn new(config: AutoencoderConfig, seed: u64) -> Self {
        let layers = Self::init_layers(&config, seed);
        Self {
            config,
            seed,
            layers,
            history: Vec::new(),
            data_fingerprint: None,
        }
    }

    fn init_layers(config: &AutoencoderConfig, seed: u64) -> Vec<LayerState<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        config
            .layout()
            .into_iter()
            .map(|(_, shape, fan_in, fan_out)| {
                let w = glorot_uniform(&shape, fan_in, fan_out, &mut rng);
                LayerState::new(w, Tensor::zeros(&[shape[0]]))
            })
            .collect()
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean training loss per epoch of the last training run.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn data_fingerprint(&self) -> Option<&str> {
        self.data_fingerprint.as_deref()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_dims(&self, lattice: &MaterialLattice) -> Result<(), AutoencoderError> {
        if lattice.dims() != self.config.lattice {
            return Err(dims_error(self.config.lattice, lattice.dims()).into());
        }
        Ok(())
    }

    fn conv(&self, layer: usize, x: &Tensor<T>) -> Tensor<T> {
        let l = &self.layers[layer];
        conv3d_forward(x, &l.weights.value, &l.bias.value).expect("layer shapes fixed by config")
    }

    fn dense(&self, layer: usize, x: &Tensor<T>) -> Tensor<T> {
        let l = &self.layers[layer];
        dense_forward(x, &l.weights.value, &l.bias.value).expect("layer shapes fixed by config")
    }

    fn forward(&self, x: Tensor<T>) -> Trace<T> {
        let pool = |t: &Tensor<T>| maxpool3d(t).expect("rank 5");
        let mut a1 = self.conv(ENC1, &x);
        relu_inplace(&mut a1);
        let (p1, i1) = pool(&a1);
        let mut a2 = self.conv(ENC2, &p1);
        relu_inplace(&mut a2);
        let (p2, i2) = pool(&a2);
        let mut a3 = self.conv(ENC3, &p2);
        relu_inplace(&mut a3);
        let (p3, i3) = pool(&a3);
        let flat = p3.reshape(&[1, self.config.flat()]).expect("same length");
        let z = self.dense(LATENT, &flat);
        let dec = self.decode_traced(z);
        Trace {
            x,
            a1,
            p1,
            i1,
            a2,
            p2,
            i2,
            a3,
            i3,
            flat,
            dec,
        }
    }

    fn decode_traced(&self, z: Tensor<T>) -> DecoderTrace<T> {
        let [q0, q1, q2] = self.config.pooled();
        let up = |t: &Tensor<T>| upsample_nearest(t, 2).expect("rank 5");
        let mut h = self.dense(DEC_DENSE, &z);
        relu_inplace(&mut h);
        let h = h.reshape(&[1, self.config.encoder_channels[2], q0, q1, q2]).expect("same length");
        let u1 = up(&h);
        let mut b1 = self.conv(DEC1, &u1);
        relu_inplace(&mut b1);
        let u2 = up(&b1);
        let mut b2 = self.conv(DEC2, &u2);
        relu_inplace(&mut b2);
        let u3 = up(&b2);
        let u3_shape = u3.shape().to_vec();
        let c = center_crop(&u3, self.config.spatial()).expect("upsampled volume covers the lattice");
        let mut b3 = self.conv(DEC3, &c);
        relu_inplace(&mut b3);
        let logits = self.conv(LOGITS, &b3);
        DecoderTrace {
            z,
            h,
            u1,
            b1,
            u2,
            b2,
            u3_shape,
            c,
            b3,
            logits,
        }
    }

    /// Adds this sample's parameter gradients into `grads`; returns the summed loss.
    fn backward(&self, t: Trace<T>, target: &Tensor<T>, normalizer: usize, grads: &mut GradBuffers<T>) -> f64 {
        let Trace { dec: d, .. } = &t;
        let (loss, g) = softmax_ce_loss_scaled(&d.logits, target, normalizer).expect("one-hot target");
        let conv_back = |layer: usize, input: &Tensor<T>, gy: &Tensor<T>, grads: &mut GradBuffers<T>, need: bool| {
            let (gw, gb) = &mut grads[layer];
            let mut gx = need.then(|| Tensor::zeros(input.shape()));
            conv3d_backward_accumulate(input, &self.layers[layer].weights.value, gy, gw, gb, gx.as_mut())
                .expect("shapes fixed by config");
            gx
        };
        let dense_back = |layer: usize, input: &Tensor<T>, gy: &Tensor<T>, grads: &mut GradBuffers<T>| {
            let (gw, gb) = &mut grads[layer];
            dense_backward_accumulate(input, &self.layers[layer].weights.value, gy, gw, gb)
                .expect("shapes fixed by config")
        };
        let unpool = |gy: &Tensor<T>, idx: &[usize], shape: &[usize]| maxpool3d_backward(gy, idx, shape).expect("shapes");
        let down = |gy: &Tensor<T>| upsample_nearest_backward(gy, 2).expect("even dims");

        let mut g_b3 = conv_back(LOGITS, &d.b3, &g, grads, true).expect("requested");
        relu_backward_inplace(&d.b3, &mut g_b3);
        let g_c = conv_back(DEC3, &d.c, &g_b3, grads, true).expect("requested");
        let g_u3 = center_crop_backward(&g_c, &d.u3_shape).expect("shapes");
        let mut g_b2 = down(&g_u3);
        relu_backward_inplace(&d.b2, &mut g_b2);
        let g_u2 = conv_back(DEC2, &d.u2, &g_b2, grads, true).expect("requested");
        let mut g_b1 = down(&g_u2);
        relu_backward_inplace(&d.b1, &mut g_b1);
        let g_u1 = conv_back(DEC1, &d.u1, &g_b1, grads, true).expect("requested");
        let g_h = down(&g_u1);
        let mut g_h = g_h.reshape(&[1, self.config.flat()]).expect("same length");
        let h_flat = d.h.clone().reshape(&[1, self.config.flat()]).expect("same length");
        relu_backward_inplace(&h_flat, &mut g_h);
        let g_z = dense_back(DEC_DENSE, &d.z, &g_h, grads);
        let g_flat = dense_back(LATENT, &t.flat, &g_z, grads);
        let [q0, q1, q2] = self.config.pooled();
        let g_p3 = g_flat.reshape(&[1, self.config.encoder_channels[2], q0, q1, q2]).expect("same length");
        let mut g_a3 = unpool(&g_p3, &t.i3, t.a3.shape());
        relu_backward_inplace(&t.a3, &mut g_a3);
        let g_p2 = conv_back(ENC3, &t.p2, &g_a3, grads, true).expect("requested");
        let mut g_a2 = unpool(&g_p2, &t.i2, t.a2.shape());
        relu_backward_inplace(&t.a2, &mut g_a2);
        let g_p1 = conv_back(ENC2, &t.p1, &g_a2, grads, true).expect("requested");
        let mut g_a1 = unpool(&g_p1, &t.i1, t.a1.shape());
        relu_backward_inplace(&t.a1, &mut g_a1);
        conv_back(ENC1, &t.x, &g_a1, grads, false);
        loss
    }

    fn zero_buffers(&self) -> GradBuffers<T> {
        self.layers
            .iter()
            .map(|l| (vec![T::zero(); l.weights.value.len()], vec![T::zero(); l.bias.value.len()]))
            .collect()
    }

    /// Loss and gradient of one minibatch, summed over `GRAD_CHUNKS` fixed
    /// chunks so the result is independent of scheduling.
    fn batch_gradients(&self, batch: &[Tensor<T>]) -> (f64, GradBuffers<T>) {
        let voxels = self.config.lattice.len();
        let normalizer = batch.len() * voxels;
        let per = batch.len().div_ceil(GRAD_CHUNKS).max(1);
        let partials: Vec<(f64, GradBuffers<T>)> = batch
            .par_chunks(per)
            .map(|chunk| {
                let mut grads = self.zero_buffers();
                let mut loss = 0.0;
                for x in chunk {
                    let trace = self.forward(x.clone());
                    loss += self.backward(trace, x, normalizer, &mut grads);
                }
                (loss, grads)
            })
            .collect();
        let mut iter = partials.into_iter();
        let (mut loss, mut total) = iter.next().expect("non-empty batch");
        for (l, g) in iter {
            loss += l;
            for ((tw, tb), (gw, gb)) in total.iter_mut().zip(g) {
                tw.iter_mut().zip(gw).for_each(|(a, b)| *a += b);
                tb.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
            }
        }
        (loss / normalizer as f64, total)
    }

    fn apply(&mut self, grads: GradBuffers<T>) {
        let adam = self.config.adam();
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads) {
            layer.weights.grad.data_mut().copy_from_slice(&gw);
            layer.bias.grad.data_mut().copy_from_slice(&gb);
            adam_step(layer, &adam);
        }
    }

    /// Re-initializes from the model seed, then runs minibatch Adam on
    /// softmax cross-entropy for `epochs` shuffled passes. The last partial
    /// batch of an epoch is kept.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        lattices: &[MaterialLattice],
        epochs: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<(), AutoencoderError> {
        self.train_with(lattices, epochs, batch_size, rng, |_, _| {})
    }

    /// [`Autoencoder::train`] with a callback receiving `(epoch, mean loss)`.
    pub fn train_with<R: Rng + ?Sized>(
        &mut self,
        lattices: &[MaterialLattice],
        epochs: usize,
        batch_size: usize,
        rng: &mut R,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<(), AutoencoderError> {
        if lattices.is_empty() {
            return Err(AutoencoderError::EmptyTrainingSet);
        }
        for l in lattices {
            self.check_dims(l)?;
        }
        let data: Vec<Tensor<T>> = lattices.iter().map(|l| to_onehot::<T>(l).to_tensor()).collect();
        self.layers = Self::init_layers(&self.config, self.seed);
        self.history.clear();
        self.data_fingerprint = Some(fingerprint(lattices));
        let mut order: Vec<usize> = (0..data.len()).collect();
        let batch_size = batch_size.max(1);
        for epoch in 0..epochs {
            order.shuffle(rng);
            let mut loss_sum = 0.0;
            for idx in order.chunks(batch_size) {
                let batch: Vec<Tensor<T>> = idx.iter().map(|&i| data[i].clone()).collect();
                let (loss, grads) = self.batch_gradients(&batch);
                loss_sum += loss * idx.len() as f64;
                self.apply(grads);
            }
            let mean = loss_sum / data.len() as f64;
            self.history.push(mean);
            on_epoch(epoch, mean);
        }
        Ok(())
    }

    /// Mean cross-entropy per voxel over `lattices` under the current weights.
    pub fn loss(&self, lattices: &[MaterialLattice]) -> Result<f64, AutoencoderError> {
        if lattices.is_empty() {
            return Err(AutoencoderError::EmptySet);
        }
        let mut total = 0.0;
        for l in lattices {
            self.check_dims(l)?;
            let x = to_onehot::<T>(l).to_tensor();
            let logits = self.forward(x.clone()).dec.logits;
            let (loss, _) = softmax_ce_loss_scaled(&logits, &x, 1)?;
            total += loss / self.config.lattice.len() as f64;
        }
        Ok(total / lattices.len() as f64)
    }

    fn encode_tensor(&self, x: &Tensor<T>) -> Tensor<T> {
        let pool = |t: &Tensor<T>| maxpool3d(t).expect("rank 5").0;
        let mut a = self.conv(ENC1, x);
        relu_inplace(&mut a);
        let mut a = self.conv(ENC2, &pool(&a));
        relu_inplace(&mut a);
        let mut a = self.conv(ENC3, &pool(&a));
        relu_inplace(&mut a);
        let flat = pool(&a).reshape(&[1, self.config.flat()]).expect("same length");
        self.dense(LATENT, &flat)
    }

    pub fn encode(&self, lattice: &MaterialLattice) -> Result<LatentVector, AutoencoderError> {
        self.check_dims(lattice)?;
        let z = self.encode_tensor(&to_onehot::<T>(lattice).to_tensor());
        Ok(z.data().iter().map(|v| v.to_f64().expect("finite")).collect())
    }

    /// Encodes many lattices in parallel; output order follows input order.
    pub fn encode_all(&self, lattices: &[MaterialLattice]) -> Result<Vec<LatentVector>, AutoencoderError> {
        lattices.par_iter().map(|l| self.encode(l)).collect()
    }

    /// Decoder logits for a latent vector as a one-hot-shaped lattice.
    pub fn decode(&self, latent: &[f64]) -> Result<OneHotLattice<T>, AutoencoderError> {
        if latent.len() != self.config.latent_dim {
            return Err(VoxelError::DimensionMismatch {
                expected: vec![self.config.latent_dim],
                got: vec![latent.len()],
            }
            .into());
        }
        let z = Tensor::from_vec(
            &[1, self.config.latent_dim],
            latent.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )?;
        let logits = self.decode_traced(z).logits;
        Ok(OneHotLattice::from_tensor(self.config.lattice, &logits)?)
    }

    pub fn reconstruct(&self, lattice: &MaterialLattice) -> Result<MaterialLattice, AutoencoderError> {
        self.check_dims(lattice)?;
        let logits = self.forward(to_onehot::<T>(lattice).to_tensor()).dec.logits;
        Ok(from_onehot(&OneHotLattice::from_tensor(self.config.lattice, &logits)?))
    }

    /// Mean over lattices of the percentage of misclassified voxels.
    pub fn reconstruction_error(&self, lattices: &[MaterialLattice]) -> Result<f64, AutoencoderError> {
        Ok(mean(&self.reconstruction_errors(lattices)?))
    }

    /// Per-lattice misclassification percentages.
    pub fn reconstruction_errors(&self, lattices: &[MaterialLattice]) -> Result<Vec<f64>, AutoencoderError> {
        if lattices.is_empty() {
            return Err(AutoencoderError::EmptySet);
        }
        lattices
            .par_iter()
            .map(|l| {
                let r = self.reconstruct(l)?;
                let wrong = l.cells().iter().zip(r.cells()).filter(|(a, b)| a != b).count();
                Ok(100.0 * wrong as f64 / l.cells().len() as f64)
            })
            .collect()
    }

    pub fn weight_bytes(&self) -> Vec<u8> {
        let layout = self.config.layout();
        let names: Vec<(String, &Tensor<T>)> = layout
            .iter()
            .zip(&self.layers)
            .flat_map(|((name, ..), l)| {
                [
                    (format!("{name}.weight"), &l.weights.value),
                    (format!("{name}.bias"), &l.bias.value),
                ]
            })
            .collect();
        let refs: Vec<(&str, &Tensor<T>)> = names.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        weights::encode(&refs)
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            format: MANIFEST_FORMAT,
            architecture: self.config.clone(),
            seed: self.seed,
            epochs: self.history.len(),
            data_fingerprint: self.data_fingerprint.clone(),
            history: self.history.clone(),
            weights_sha256: hex(&Sha256::digest(self.weight_bytes())),
        }
    }

    /// Rebuilds a model from its manifest and weight file.
    pub fn from_parts(manifest: &ModelManifest, bytes: &[u8]) -> Result<Self, AutoencoderError> {
        if manifest.format != MANIFEST_FORMAT {
            return Err(AutoencoderError::Format(format!("unsupported manifest format {}", manifest.format)));
        }
        if hex(&Sha256::digest(bytes)) != manifest.weights_sha256 {
            return Err(AutoencoderError::Format("weight file does not match manifest hash".into()));
        }
        let tensors = weights::decode::<T>(bytes)?;
        let layout = manifest.architecture.layout();
        if tensors.len() != 2 * layout.len() {
            return Err(AutoencoderError::Format(format!(
                "expected {} tensors, found {}",
                2 * layout.len(),
                tensors.len()
            )));
        }
        let mut layers = Vec::with_capacity(layout.len());
        for ((name, shape, ..), pair) in layout.iter().zip(tensors.chunks(2)) {
            let [(wn, w), (bn, b)] = pair else { unreachable!() };
            if *wn != format!("{name}.weight") || *bn != format!("{name}.bias") {
                return Err(AutoencoderError::Format(format!("unexpected tensors {wn}, {bn} for layer {name}")));
            }
            if w.shape() != shape.as_slice() || b.shape() != [shape[0]] {
                return Err(AutoencoderError::Format(format!("shape mismatch in layer {name}")));
            }
            layers.push(LayerState::new(w.clone(), b.clone()));
        }
        Ok(Self {
            config: manifest.architecture.clone(),
            seed: manifest.seed,
            layers,
            history: manifest.history.clone(),
            data_fingerprint: manifest.data_fingerprint.clone(),
        })
    }
}

pub const MANIFEST_FORMAT: u32 = 1;

/// JSON sidecar of a weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: u32,
    pub architecture: AutoencoderConfig,
    pub seed: u64,
    pub epochs: usize,
    pub data_fingerprint: Option<String>,
    pub history: Vec<f64>,
    pub weights_sha256: String,
}

/// SHA-256 over the material ids of every lattice, in order.
pub fn fingerprint(lattices: &[MaterialLattice]) -> String {
    let mut h = Sha256::new();
    for l in lattices {
        let d = l.dims();
        for v in [d.x, d.y, d.z] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(l.ids());
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
