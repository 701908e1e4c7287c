//! Encoder, decoder, discriminators, code regressor, and the two auxiliary
//! convolutional classifiers.
//!
//! All image tensors are NHWC with values in [-1, 1].

mod checkpoint;

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprcode::CodeLayout;
use crate::nn::{leaky_relu, sigmoid, softmax, BatchNorm, Conv, Linear, NormMode, ParamStore};
use crate::seed::rng_for;

pub use checkpoint::{checkpoint_files, CheckpointMeta, CHECKPOINT_FORMAT};
pub(crate) use checkpoint::{load_tensors, save_tensors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub resolution: usize,
    pub image_channels: usize,
    /// Length of the identity code g(x).
    pub id_dim: usize,
    pub layout: CodeLayout,
    /// Five stride-2 downsampling stages.
    pub encoder_channels: Vec<usize>,
    /// Channels of the 1x1 map produced by the decoder's input FC layer.
    pub decoder_input_channels: usize,
    /// One entry per upsampling stage; the last equals `image_channels`.
    pub decoder_channels: Vec<usize>,
    /// Four stride-2 stages of the image discriminator trunk.
    pub disc_channels: Vec<usize>,
    /// Width of the trunk representation shared by D_img and Q.
    pub disc_feature_dim: usize,
    pub q_hidden: usize,
    pub code_disc_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub generator_batch_norm: bool,
    /// Number of identities the feature network is trained to separate.
    pub feature_net_classes: usize,
}

impl ArchitectureSpec {
    /// 64x64 configuration that trains on a CPU.
    pub fn desk(layout: CodeLayout, feature_net_classes: usize) -> Self {
        Self {
            resolution: 64,
            image_channels: 3,
            id_dim: 32,
            layout,
            encoder_channels: vec![32, 64, 128, 256, 512],
            decoder_input_channels: 512,
            decoder_channels: vec![256, 128, 64, 32, 16, 3],
            disc_channels: vec![16, 32, 64, 128],
            disc_feature_dim: 1024,
            q_hidden: 64,
            code_disc_hidden: vec![64, 32, 16],
            leaky_slope: 0.2,
            generator_batch_norm: false,
            feature_net_classes,
        }
    }

    /// 128x128 configuration with the published layer widths.
    pub fn paper(layout: CodeLayout, feature_net_classes: usize) -> Self {
        Self {
            resolution: 128,
            image_channels: 3,
            id_dim: 50,
            layout,
            encoder_channels: vec![64, 128, 256, 512, 1024],
            decoder_input_channels: 1024,
            decoder_channels: vec![512, 256, 128, 64, 32, 16, 3],
            disc_channels: vec![16, 32, 64, 128],
            disc_feature_dim: 1024,
            q_hidden: 64,
            code_disc_hidden: vec![64, 32, 16],
            leaky_slope: 0.2,
            generator_batch_norm: false,
            feature_net_classes,
        }
    }

    /// 32x32 configuration with narrow layers for smoke tests.
    pub fn tiny(layout: CodeLayout, feature_net_classes: usize) -> Self {
        Self {
            resolution: 32,
            image_channels: 3,
            id_dim: 4,
            layout,
            encoder_channels: vec![4, 4, 8, 8, 8],
            decoder_input_channels: 8,
            decoder_channels: vec![8, 8, 8, 4, 3],
            disc_channels: vec![4, 4, 8, 8],
            disc_feature_dim: 16,
            q_hidden: 8,
            code_disc_hidden: vec![8, 4, 4],
            leaky_slope: 0.2,
            generator_batch_norm: false,
            feature_net_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let bad = |field: &str, reason: String| Err(Error::validation(field, reason));
        if self.encoder_channels.len() != 5 {
            return bad("encoder_channels", format!("need 5 stages, got {}", self.encoder_channels.len()));
        }
        if self.resolution < 32 || self.resolution % 32 != 0 {
            return bad("resolution", format!("{} is not a positive multiple of 32", self.resolution));
        }
        if 1usize << self.decoder_channels.len() != self.resolution {
            return bad(
                "decoder_channels",
                format!("{} upsampling stages from 1x1 do not reach {}", self.decoder_channels.len(), self.resolution),
            );
        }
        if self.decoder_channels.last() != Some(&self.image_channels) {
            return bad("decoder_channels", "last stage must output the image channels".into());
        }
        if self.disc_channels.len() != 4 {
            return bad("disc_channels", format!("need 4 stages, got {}", self.disc_channels.len()));
        }
        if self.id_dim == 0 || self.disc_feature_dim == 0 || self.q_hidden == 0 {
            return bad("dims", "zero-width layer".into());
        }
        if self.feature_net_classes < 2 {
            return bad("feature_net_classes", "need at least 2 identities".into());
        }
        Ok(())
    }

    fn encoder_flat(&self) -> usize {
        let s = self.resolution / 32;
        s * s * self.encoder_channels[4]
    }

    fn disc_flat(&self) -> usize {
        let s = self.resolution / 16;
        s * s * self.disc_channels[3]
    }

    pub fn image_dims(&self) -> [usize; 3] {
        [self.resolution, self.resolution, self.image_channels]
    }

    fn check_images(&self, x: &Tensor) -> Result<usize> {
        let (b, h, w, c) = x.dims4().map_err(|_| Error::Shape(format!("expected NHWC images, got {:?}", x.dims())))?;
        if [h, w, c] != self.image_dims() {
            return Err(Error::Shape(format!("images are {h}x{w}x{c}, architecture expects {:?}", self.image_dims())));
        }
        Ok(b)
    }

    fn check_rows(&self, t: &Tensor, width: usize, what: &str) -> Result<usize> {
        match t.dims() {
            [b, w] if *w == width => Ok(*b),
            dims => Err(Error::Shape(format!("{what} has shape {dims:?}, expected (batch, {width})"))),
        }
    }
}

fn conv_stack<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    c_in: usize,
    channels: &[usize],
    rng: &mut R,
) -> Result<Vec<Conv>> {
    let mut prev = c_in;
    let mut convs = Vec::with_capacity(channels.len());
    for (i, c) in channels.iter().enumerate() {
        convs.push(Conv::down(store, &format!("{prefix}.conv{i}"), prev, *c, rng)?);
        prev = *c;
    }
    Ok(convs)
}

fn optional_norms(store: &mut ParamStore, prefix: &str, channels: &[usize], enabled: bool) -> Result<Vec<BatchNorm>> {
    if !enabled {
        return Ok(Vec::new());
    }
    channels
        .iter()
        .enumerate()
        .map(|(i, c)| BatchNorm::new(store, &format!("{prefix}.bn{i}"), *c))
        .collect()
}

/// G_enc: five downsampling blocks and a FC layer, squashed by `tanh`.
#[derive(Debug)]
pub struct Encoder {
    store: ParamStore,
    convs: Vec<Conv>,
    norms: Vec<BatchNorm>,
    fc: Linear,
    spec: ArchitectureSpec,
}

impl Encoder {
    pub fn new<R: Rng>(spec: &ArchitectureSpec, dtype: DType, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let convs = conv_stack(&mut store, "enc", spec.image_channels, &spec.encoder_channels, rng)?;
        let norms = optional_norms(&mut store, "enc", &spec.encoder_channels, spec.generator_batch_norm)?;
        let fc = Linear::new(&mut store, "enc.fc", spec.encoder_flat(), spec.id_dim, rng)?;
        Ok(Self {
            store,
            convs,
            norms,
            fc,
            spec: spec.clone(),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.spec.check_images(x)?;
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if let Some(bn) = self.norms.get(i) {
                h = bn.forward(&h)?;
            }
            h = h.relu()?;
        }
        Ok(self.fc.forward(&h.reshape((b, ()))?)?.tanh()?)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}

/// G_dec: FC to a 1x1 map, then upsample-and-convolve blocks, `tanh` output.
#[derive(Debug)]
pub struct Decoder {
    store: ParamStore,
    fc: Linear,
    ups: Vec<Conv>,
    norms: Vec<BatchNorm>,
    spec: ArchitectureSpec,
}

impl Decoder {
    pub fn new<R: Rng>(spec: &ArchitectureSpec, dtype: DType, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let fc = Linear::new(
            &mut store,
            "dec.fc",
            spec.id_dim + spec.layout.len(),
            spec.decoder_input_channels,
            rng,
        )?;
        let mut ups = Vec::new();
        let mut prev = spec.decoder_input_channels;
        for (i, c) in spec.decoder_channels.iter().enumerate() {
            ups.push(Conv::up(&mut store, &format!("dec.up{i}"), prev, *c, rng)?);
            prev = *c;
        }
        let hidden = &spec.decoder_channels[..spec.decoder_channels.len() - 1];
        let norms = optional_norms(&mut store, "dec", hidden, spec.generator_batch_norm)?;
        Ok(Self {
            store,
            fc,
            ups,
            norms,
            spec: spec.clone(),
        })
    }

    pub fn forward(&self, g: &Tensor, c: &Tensor) -> Result<Tensor> {
        let b = self.spec.check_rows(g, self.spec.id_dim, "identity code")?;
        let bc = self.spec.check_rows(c, self.spec.layout.len(), "expression code")?;
        if b != bc {
            return Err(Error::Shape(format!("identity batch {b} vs code batch {bc}")));
        }
        let input = Tensor::cat(&[g, c], 1)?;
        let mut h = self
            .fc
            .forward(&input)?
            .relu()?
            .reshape((b, 1, 1, self.spec.decoder_input_channels))?;
        let last = self.ups.len() - 1;
        for (i, up) in self.ups.iter().enumerate() {
            h = up.forward(&h)?;
            if i < last {
                if let Some(bn) = self.norms.get(i) {
                    h = bn.forward(&h)?;
                }
                h = h.relu()?;
            }
        }
        Ok(h.tanh()?)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}

/// Output of the image discriminator trunk.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    /// `(batch, 1)` probability that the pair is real.
    pub prob: Tensor,
    /// `(batch, disc_feature_dim)` representation shared with Q.
    pub features: Tensor,
}

/// D_img: label-conditioned trunk (label tiled as constant channels) with a
/// real/fake head.
#[derive(Debug)]
pub struct ImageDiscriminator {
    store: ParamStore,
    convs: Vec<Conv>,
    norms: Vec<BatchNorm>,
    fc: Linear,
    fc_norm: BatchNorm,
    head: Linear,
    spec: ArchitectureSpec,
}

impl ImageDiscriminator {
    pub fn new<R: Rng>(spec: &ArchitectureSpec, dtype: DType, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let c_in = spec.image_channels + spec.layout.classes;
        let convs = conv_stack(&mut store, "dimg", c_in, &spec.disc_channels, rng)?;
        // first stage is left unnormalized
        let norms = spec.disc_channels[1..]
            .iter()
            .enumerate()
            .map(|(i, c)| BatchNorm::new(&mut store, &format!("dimg.bn{}", i + 1), *c))
            .collect::<Result<Vec<_>>>()?;
        let fc = Linear::new(&mut store, "dimg.fc", spec.disc_flat(), spec.disc_feature_dim, rng)?;
        let fc_norm = BatchNorm::new(&mut store, "dimg.fc_bn", spec.disc_feature_dim)?;
        let head = Linear::with_std(&mut store, "dimg.head", spec.disc_feature_dim, 1, 0.02, rng)?;
        Ok(Self {
            store,
            convs,
            norms,
            fc,
            fc_norm,
            head,
            spec: spec.clone(),
        })
    }

    /// `labels` is the `(batch, K)` one-hot matrix.
    pub fn forward(&self, x: &Tensor, labels: &Tensor) -> Result<DiscOutput> {
        let b = self.spec.check_images(x)?;
        let k = self.spec.layout.classes;
        if self.spec.check_rows(labels, k, "labels")? != b {
            return Err(Error::Shape("label batch differs from image batch".into()));
        }
        let r = self.spec.resolution;
        let tiled = labels.reshape((b, 1, 1, k))?.broadcast_as((b, r, r, k))?;
        let mut h = Tensor::cat(&[x, &tiled.to_dtype(x.dtype())?], 3)?;
        let slope = self.spec.leaky_slope;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i > 0 {
                h = self.norms[i - 1].forward(&h)?;
            }
            h = leaky_relu(&h, slope)?;
        }
        let features = self.fc.forward(&h.reshape((b, ()))?)?;
        let features = leaky_relu(&self.fc_norm.forward(&features)?, slope)?;
        let prob = sigmoid(&self.head.forward(&features)?)?;
        Ok(DiscOutput { prob, features })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}

/// Q: K branches of two FC layers, each predicting the mean of one code block.
#[derive(Debug)]
pub struct CodeRegressor {
    store: ParamStore,
    branches: Vec<(Linear, Linear)>,
    spec: ArchitectureSpec,
}

impl CodeRegressor {
    pub fn new<R: Rng>(spec: &ArchitectureSpec, dtype: DType, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let mut branches = Vec::new();
        for i in 0..spec.layout.classes {
            let hidden = Linear::new(&mut store, &format!("q{i}.fc0"), spec.disc_feature_dim, spec.q_hidden, rng)?;
            let out = Linear::new(&mut store, &format!("q{i}.fc1"), spec.q_hidden, spec.layout.block, rng)?;
            branches.push((hidden, out));
        }
        Ok(Self {
            store,
            branches,
            spec: spec.clone(),
        })
    }

    /// Every branch's prediction, `(batch, K, d)`.
    pub fn predict_all(&self, features: &Tensor) -> Result<Tensor> {
        self.spec.check_rows(features, self.spec.disc_feature_dim, "shared features")?;
        let outs = self
            .branches
            .iter()
            .map(|(h, o)| o.forward(&leaky_relu(&h.forward(features)?, self.spec.leaky_slope)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&outs, 1)?)
    }

    /// Prediction of branch `classes[i]` for row `i`, `(batch, d)`.
    pub fn predict(&self, features: &Tensor, classes: &[usize]) -> Result<Tensor> {
        let b = self.spec.check_rows(features, self.spec.disc_feature_dim, "shared features")?;
        if classes.len() != b {
            return Err(Error::Shape(format!("{} labels for batch {b}", classes.len())));
        }
        let k = self.spec.layout.classes;
        if let Some(bad) = classes.iter().find(|c| **c >= k) {
            return Err(Error::OutOfRange {
                what: "class",
                index: *bad,
                len: k,
            });
        }
        let all = self.predict_all(features)?;
        let mut mask = vec![0f32; b * k];
        for (i, c) in classes.iter().enumerate() {
            mask[i * k + c] = 1.0;
        }
        let mask = Tensor::from_vec(mask, (b, k, 1), &Device::Cpu)?.to_dtype(all.dtype())?;
        Ok(all.broadcast_mul(&mask)?.sum(1)?)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}

/// D_z: FC stack on identity codes.
#[derive(Debug)]
pub struct CodeDiscriminator {
    store: ParamStore,
    hidden: Vec<(Linear, BatchNorm)>,
    out: Linear,
    spec: ArchitectureSpec,
}

impl CodeDiscriminator {
    pub fn new<R: Rng>(spec: &ArchitectureSpec, dtype: DType, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let mut hidden = Vec::new();
        let mut prev = spec.id_dim;
        for (i, w) in spec.code_disc_hidden.iter().enumerate() {
            let fc = Linear::new(&mut store, &format!("dz.fc{i}"), prev, *w, rng)?;
            let bn = BatchNorm::new(&mut store, &format!("dz.bn{i}"), *w)?;
            hidden.push((fc, bn));
            prev = *w;
        }
        let out = Linear::new(&mut store, "dz.out", prev, 1, rng)?;
        Ok(Self {
            store,
            hidden,
            out,
            spec: spec.clone(),
        })
    }

    pub fn forward(&self, g: &Tensor) -> Result<Tensor> {
        self.spec.check_rows(g, self.spec.id_dim, "identity code")?;
        let mut h = g.clone();
        for (fc, bn) in &self.hidden {
            h = leaky_relu(&bn.forward(&fc.forward(&h)?)?, self.spec.leaky_slope)?;
        }
        sigmoid(&self.out.forward(&h)?)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}

/// Encoder-shaped convolutional classifier: five downsampling blocks, a FC
/// layer of `id_dim` units, and a FC output layer.
#[derive(Debug)]
pub struct ConvClassifier {
    store: ParamStore,
    convs: Vec<Conv>,
    fc: Linear,
    out: Linear,
    spec: ArchitectureSpec,
    classes: usize,
}

impl ConvClassifier {
    pub fn new<R: Rng>(spec: &ArchitectureSpec, classes: usize, prefix: &str, dtype: DType, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let convs = conv_stack(&mut store, prefix, spec.image_channels, &spec.encoder_channels, rng)?;
        let fc = Linear::new(&mut store, &format!("{prefix}.fc"), spec.encoder_flat(), spec.id_dim, rng)?;
        let out = Linear::new(&mut store, &format!("{prefix}.out"), spec.id_dim, classes, rng)?;
        Ok(Self {
            store,
            convs,
            fc,
            out,
            spec: spec.clone(),
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Post-activation output of each convolution stage.
    pub fn taps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.spec.check_images(x)?;
        let mut h = x.clone();
        let mut taps = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
            taps.push(h.clone());
        }
        Ok(taps)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.spec.check_images(x)?;
        let last = self.taps(x)?.pop().expect("five stages");
        let h = self.fc.forward(&last.reshape((b, ()))?)?.relu()?;
        self.out.forward(&h)
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        softmax(&self.logits(x)?)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}

/// φ: an identity classifier whose five stage activations serve as the
/// feature space of the identity-preserving loss.
#[derive(Debug)]
pub struct FeatureNet {
    net: ConvClassifier,
    trained: bool,
}

impl FeatureNet {
    pub fn new<R: Rng>(spec: &ArchitectureSpec, dtype: DType, rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: ConvClassifier::new(spec, spec.feature_net_classes, "phi", dtype, rng)?,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
        self.net.store().set_trainable(false);
    }

    pub fn classifier(&self) -> &ConvClassifier {
        &self.net
    }

    pub fn feature_maps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if !self.trained {
            return Err(Error::FeatureNetUninitialized);
        }
        self.net.taps(x)
    }
}

/// Identifies one subnetwork of a [`ModelBundle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subnet {
    Encoder,
    Decoder,
    ImageDisc,
    Q,
    CodeDisc,
    Classifier,
    FeatureNet,
}

impl Subnet {
    pub const ALL: [Subnet; 7] = [
        Subnet::Encoder,
        Subnet::Decoder,
        Subnet::ImageDisc,
        Subnet::Q,
        Subnet::CodeDisc,
        Subnet::Classifier,
        Subnet::FeatureNet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Subnet::Encoder => "g_enc",
            Subnet::Decoder => "g_dec",
            Subnet::ImageDisc => "d_img",
            Subnet::Q => "q",
            Subnet::CodeDisc => "d_z",
            Subnet::Classifier => "classifier",
            Subnet::FeatureNet => "phi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub init: u64,
}

/// Every subnetwork plus the architecture and training-stage tag.
#[derive(Debug)]
pub struct ModelBundle {
    pub spec: ArchitectureSpec,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub image_disc: ImageDiscriminator,
    pub q: CodeRegressor,
    pub code_disc: CodeDiscriminator,
    pub classifier: ConvClassifier,
    pub feature_net: FeatureNet,
    /// Last completed curriculum stage (0 = freshly initialized).
    pub stage: u8,
    pub classifier_trained: bool,
    pub seeds: SeedRecord,
}

impl ModelBundle {
    pub fn new(spec: ArchitectureSpec, init_seed: u64) -> Result<Self> {
        Self::with_dtype(spec, init_seed, DType::F32)
    }

    pub fn with_dtype(spec: ArchitectureSpec, init_seed: u64, dtype: DType) -> Result<Self> {
        spec.validate()?;
        let rng = |s: Subnet| rng_for(init_seed, &["init", s.name()]);
        Ok(Self {
            encoder: Encoder::new(&spec, dtype, &mut rng(Subnet::Encoder))?,
            decoder: Decoder::new(&spec, dtype, &mut rng(Subnet::Decoder))?,
            image_disc: ImageDiscriminator::new(&spec, dtype, &mut rng(Subnet::ImageDisc))?,
            q: CodeRegressor::new(&spec, dtype, &mut rng(Subnet::Q))?,
            code_disc: CodeDiscriminator::new(&spec, dtype, &mut rng(Subnet::CodeDisc))?,
            classifier: ConvClassifier::new(&spec, spec.layout.classes, "cls", dtype, &mut rng(Subnet::Classifier))?,
            feature_net: FeatureNet::new(&spec, dtype, &mut rng(Subnet::FeatureNet))?,
            stage: 0,
            classifier_trained: false,
            seeds: SeedRecord { init: init_seed },
            spec,
        })
    }

    pub fn store(&self, subnet: Subnet) -> &ParamStore {
        match subnet {
            Subnet::Encoder => self.encoder.store(),
            Subnet::Decoder => self.decoder.store(),
            Subnet::ImageDisc => self.image_disc.store(),
            Subnet::Q => self.q.store(),
            Subnet::CodeDisc => self.code_disc.store(),
            Subnet::Classifier => self.classifier.store(),
            Subnet::FeatureNet => self.feature_net.classifier().store(),
        }
    }

    pub fn param_counts(&self) -> Vec<(Subnet, usize)> {
        Subnet::ALL.iter().map(|s| (*s, self.store(*s).param_count())).collect()
    }

    /// Put every subnetwork in inference configuration: no gradients,
    /// running statistics for normalization.
    pub fn set_eval(&self) {
        for s in Subnet::ALL {
            let store = self.store(s);
            store.set_trainable(false);
            store.set_norm_mode(NormMode::Eval);
        }
    }

    pub fn all_finite(&self) -> Result<bool> {
        for s in Subnet::ALL {
            if !self.store(s).all_finite()? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `g(x)` for a batch.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, g: &Tensor, c: &Tensor) -> Result<Tensor> {
        self.decoder.forward(g, c)
    }
}
