//! Patch-wise autoencoders for the binocular (vergence) and temporal
//! (pan/tilt) visual streams.
//!
//! Each autoencoder sees a 32×32 crop. The encoder is an 8×8/stride-4
//! convolution followed by a 1×1 bottleneck; the decoder is a single 1×1
//! convolution whose `8·8·C` output channels are the reconstruction of the
//! receptive field at each of the 7×7 encoder locations. The loss compares
//! every decoded patch with the (overlapping) input patch it came from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{BinocularObservation, Crop, CROP};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{
    conv2d, conv2d_grads, glorot_uniform, im2col, pairwise_sum, relu_backward, relu_inplace, AdamConfig,
    AdamState, ConvShape, Scalar, Tensor,
};

pub const PATCH: usize = 8;
pub const PATCH_STRIDE: usize = 4;
/// Encoder locations per side for a 32×32 input.
pub const GRID: usize = (CROP - PATCH) / PATCH_STRIDE + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Binocular,
    Temporal,
}

impl Stream {
    pub const ALL: [Stream; 2] = [Stream::Binocular, Stream::Temporal];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Binocular => "binocular",
            Stream::Temporal => "temporal",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Stream::Binocular => 6,
            Stream::Temporal => 12,
        }
    }

    pub fn hidden(self) -> usize {
        match self {
            Stream::Binocular => 96,
            Stream::Temporal => 192,
        }
    }

    pub fn bottleneck(self) -> usize {
        match self {
            Stream::Binocular => 24,
            Stream::Temporal => 48,
        }
    }

    /// Decoder output channels: one reconstructed 8×8×C patch.
    pub fn patch_len(self) -> usize {
        PATCH * PATCH * self.channels()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Fine,
    Coarse,
}

impl Scale {
    pub const ALL: [Scale; 2] = [Scale::Fine, Scale::Coarse];

    pub fn name(self) -> &'static str {
        match self {
            Scale::Fine => "fine",
            Scale::Coarse => "coarse",
        }
    }
}

/// Streams are centered so hidden units do not share a large positive
/// common mode, which otherwise silences about half of the ReLU bottleneck
/// channels from initialization on.
pub const PIXEL_MEAN: f32 = 0.5;

fn interleave(crops: &[&Crop]) -> Tensor {
    let per = 3 * crops.len();
    let mut data = vec![0.0f32; CROP * CROP * per];
    for (px, out) in data.chunks_exact_mut(per).enumerate() {
        for (i, crop) in crops.iter().enumerate() {
            for (o, &v) in out[3 * i..3 * i + 3].iter_mut().zip(&crop.data()[3 * px..3 * px + 3]) {
                *o = v - PIXEL_MEAN;
            }
        }
    }
    Tensor::from_vec(&[CROP, CROP, per], data).expect("crop geometry")
}

/// `[L.rgb, R.rgb]` at time t.
pub fn build_vergence_stream(obs: &BinocularObservation, scale: Scale) -> Tensor {
    let v = obs.scale(scale);
    interleave(&[&v.left, &v.right])
}

/// `[L_t, R_t, L_{t-1}, R_{t-1}]`, RGB each.
pub fn build_temporal_stream(obs: &BinocularObservation, scale: Scale) -> Tensor {
    let v = obs.scale(scale);
    interleave(&[&v.left, &v.right, &v.prev_left, &v.prev_right])
}

pub fn build_stream(obs: &BinocularObservation, stream: Stream, scale: Scale) -> Tensor {
    match stream {
        Stream::Binocular => build_vergence_stream(obs, scale),
        Stream::Temporal => build_temporal_stream(obs, scale),
    }
}

// Parameter layout shared by every autoencoder.
const ENC0_W: usize = 0;
const ENC0_B: usize = 1;
const ENC1_W: usize = 2;
const ENC1_B: usize = 3;
const DEC0_W: usize = 4;
const DEC0_B: usize = 5;
const LAYER_NAMES: [&str; 6] = ["enc.0.w", "enc.0.b", "enc.1.w", "enc.1.b", "dec.0.w", "dec.0.b"];

/// Parameter shapes in storage order.
pub fn ae_param_shapes(stream: Stream) -> Vec<Vec<usize>> {
    let (c, h, z, p) = (stream.channels(), stream.hidden(), stream.bottleneck(), stream.patch_len());
    vec![
        vec![PATCH, PATCH, c, h],
        vec![h],
        vec![1, 1, h, z],
        vec![z],
        vec![1, 1, z, p],
        vec![p],
    ]
}

/// Parameters of one (stream, scale) autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub stream: Stream,
    pub scale: Scale,
    pub params: Vec<Tensor>,
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(stream: Stream, scale: Scale, rng: &mut R) -> Self {
        let params = ae_param_shapes(stream)
            .iter()
            .map(|shape| match shape.as_slice() {
                [k, _, cin, cout] => glorot_uniform(shape, k * k * cin, k * k * cout, rng),
                _ => Tensor::zeros(shape),
            })
            .collect();
        Self { stream, scale, params }
    }

    pub fn prefix(stream: Stream, scale: Scale) -> String {
        format!("ae.{}.{}", stream.name(), scale.name())
    }

    pub fn param_names(&self) -> Vec<String> {
        let prefix = Self::prefix(self.stream, self.scale);
        LAYER_NAMES.iter().map(|l| format!("{prefix}.{l}")).collect()
    }

    fn check_input(&self, v: &Tensor) -> Result<()> {
        let c = self.stream.channels();
        let ok = match v.shape() {
            [h, w, ch] | [_, h, w, ch] => *h == CROP && *w == CROP && *ch == c,
            _ => false,
        };
        if !ok {
            return shape_err(
                "autoencoder",
                format!("{} stream expects [.., {CROP}, {CROP}, {c}], got {:?}", self.stream.name(), v.shape()),
            );
        }
        Ok(())
    }

    pub fn encode(&self, v: &Tensor) -> Result<Tensor> {
        self.check_input(v)?;
        ae_encode(&self.params, v)
    }

    /// Mean squared reconstruction error over all decoded patch elements.
    pub fn reconstruction_loss(&self, v: &Tensor) -> Result<f32> {
        self.check_input(v)?;
        Ok(ae_forward(&self.params, v)?.loss)
    }

    /// Encoding and per-item reconstruction loss for a single input or a batch.
    pub fn encode_with_loss(&self, v: &Tensor) -> Result<(Tensor, Vec<f32>)> {
        self.check_input(v)?;
        let fwd = ae_forward(&self.params, v)?;
        let losses = fwd.item_losses();
        Ok((fwd.code, losses))
    }

    pub fn loss_and_grads(&self, batch: &Tensor) -> Result<(f32, Vec<Tensor>)> {
        self.check_input(batch)?;
        ae_loss_and_grads(&self.params, batch)
    }
}

/// Forward activations kept for the backward pass.
pub struct AeForward<T: Scalar> {
    pub hidden: Tensor<T>,
    pub code: Tensor<T>,
    /// `rows × patch_len` reconstruction minus target.
    pub residual: Vec<T>,
    pub rows: usize,
    pub patch_len: usize,
    pub loss: T,
}

impl<T: Scalar> AeForward<T> {
    fn item_losses(&self) -> Vec<T> {
        let per_item = GRID * GRID * self.patch_len;
        let n = T::cast_from(per_item as f64);
        self.residual
            .chunks_exact(per_item)
            .map(|r| pairwise_sum(&r.iter().map(|&e| e * e).collect::<Vec<_>>()) / n)
            .collect()
    }
}

pub fn ae_encode<T: Scalar>(params: &[Tensor<T>], v: &Tensor<T>) -> Result<Tensor<T>> {
    let mut h = conv2d(v, &params[ENC0_W], &params[ENC0_B], PATCH_STRIDE)?;
    relu_inplace(&mut h);
    let mut s = conv2d(&h, &params[ENC1_W], &params[ENC1_B], 1)?;
    relu_inplace(&mut s);
    Ok(s)
}

pub fn ae_forward<T: Scalar>(params: &[Tensor<T>], v: &Tensor<T>) -> Result<AeForward<T>> {
    let mut hidden = conv2d(v, &params[ENC0_W], &params[ENC0_B], PATCH_STRIDE)?;
    relu_inplace(&mut hidden);
    let mut code = conv2d(&hidden, &params[ENC1_W], &params[ENC1_B], 1)?;
    relu_inplace(&mut code);
    let recon = conv2d(&code, &params[DEC0_W], &params[DEC0_B], 1)?;

    let cs = ConvShape::resolve(v.shape(), params[ENC0_W].shape(), PATCH_STRIDE)?;
    let target = im2col(v.data(), &cs);
    let (rows, patch_len) = (cs.rows(), cs.patch_len());
    if recon.len() != target.len() {
        return shape_err(
            "reconstruction",
            format!("decoder emits {} values for {} patch values", recon.len(), target.len()),
        );
    }
    let residual: Vec<T> = recon.data().iter().zip(target.iter()).map(|(&r, &t)| r - t).collect();
    let squares: Vec<T> = residual.iter().map(|&e| e * e).collect();
    let loss = pairwise_sum(&squares) / T::cast_from((rows * patch_len) as f64);
    Ok(AeForward {
        hidden,
        code,
        residual,
        rows,
        patch_len,
        loss,
    })
}

/// Mean reconstruction loss over the batch and its gradient for every parameter.
pub fn ae_loss_and_grads<T: Scalar>(params: &[Tensor<T>], v: &Tensor<T>) -> Result<(T, Vec<Tensor<T>>)> {
    let fwd = ae_forward(params, v)?;
    let scale = T::cast_from(2.0 / (fwd.rows * fwd.patch_len) as f64);
    let mut d_recon_shape = fwd.code.shape().to_vec();
    *d_recon_shape.last_mut().expect("rank >= 3") = fwd.patch_len;
    let d_recon = Tensor::from_vec(&d_recon_shape, fwd.residual.iter().map(|&e| e * scale).collect())?;

    let dec = conv2d_grads(&fwd.code, &params[DEC0_W], 1, &d_recon, true)?;
    let d_code = relu_backward(&fwd.code, &dec.input.expect("requested"))?;
    let enc1 = conv2d_grads(&fwd.hidden, &params[ENC1_W], 1, &d_code, true)?;
    let d_hidden = relu_backward(&fwd.hidden, &enc1.input.expect("requested"))?;
    let enc0 = conv2d_grads(v, &params[ENC0_W], PATCH_STRIDE, &d_hidden, false)?;

    Ok((
        fwd.loss,
        vec![enc0.weights, enc0.bias, enc1.weights, enc1.bias, dec.weights, dec.bias],
    ))
}

/// `(l_fine + l_coarse) / 2`.
pub fn combined_stream_loss(fine: f32, coarse: f32) -> f32 {
    0.5 * (fine + coarse)
}

/// The four autoencoders, indexed by stream and scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Perception {
    pub models: Vec<Autoencoder>,
}

impl Perception {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut models = Vec::with_capacity(4);
        for stream in Stream::ALL {
            for scale in Scale::ALL {
                models.push(Autoencoder::new(stream, scale, rng));
            }
        }
        Self { models }
    }

    fn index(stream: Stream, scale: Scale) -> usize {
        2 * (stream as usize) + scale as usize
    }

    pub fn get(&self, stream: Stream, scale: Scale) -> &Autoencoder {
        &self.models[Self::index(stream, scale)]
    }

    pub fn get_mut(&mut self, stream: Stream, scale: Scale) -> &mut Autoencoder {
        &mut self.models[Self::index(stream, scale)]
    }

    /// Encodes one observation with all four autoencoders.
    pub fn perceive(&self, obs: &BinocularObservation) -> Result<Percept> {
        let mut codes = Vec::with_capacity(4);
        let mut losses = [[0.0f32; 2]; 2];
        for stream in Stream::ALL {
            for scale in Scale::ALL {
                let v = build_stream(obs, stream, scale);
                let (code, l) = self.get(stream, scale).encode_with_loss(&v)?;
                if !l[0].is_finite() || !code.is_finite() {
                    return Err(Error::NonFinite(format!("{} {} encoding", stream.name(), scale.name())));
                }
                losses[stream as usize][scale as usize] = l[0];
                codes.push(code);
            }
        }
        Ok(Percept { codes, losses })
    }
}

/// Encodings and reconstruction losses of one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Percept {
    /// `[binocular fine, binocular coarse, temporal fine, temporal coarse]`.
    pub codes: Vec<Tensor>,
    /// `losses[stream][scale]`.
    pub losses: [[f32; 2]; 2],
}

impl Percept {
    pub fn code(&self, stream: Stream, scale: Scale) -> &Tensor {
        &self.codes[Perception::index(stream, scale)]
    }

    pub fn loss(&self, stream: Stream, scale: Scale) -> f32 {
        self.losses[stream as usize][scale as usize]
    }

    pub fn combined_loss(&self, stream: Stream) -> f32 {
        combined_stream_loss(self.loss(stream, Scale::Fine), self.loss(stream, Scale::Coarse))
    }
}

/// One Adam state per autoencoder tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AeOptimizer {
    pub states: Vec<AdamState>,
}

impl AeOptimizer {
    pub fn new(stream: Stream, config: AdamConfig) -> Self {
        Self {
            states: ae_param_shapes(stream).iter().map(|s| AdamState::new(s, config)).collect(),
        }
    }

    /// Adam deltas for one step against the batch loss; the model is untouched.
    pub fn deltas(&mut self, model: &Autoencoder, batch: &Tensor) -> Result<(f32, Vec<Tensor>)> {
        let (loss, grads) = model.loss_and_grads(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("reconstruction loss".into()));
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", model.param_names()[bad])));
        }
        let deltas = self
            .states
            .iter_mut()
            .zip(&grads)
            .map(|(s, g)| s.delta(g))
            .collect::<Result<Vec<_>>>()?;
        Ok((loss, deltas))
    }
}

/// One Adam step on the mean batch reconstruction loss.
pub fn ae_train_step(batch: &Tensor, model: &mut Autoencoder, opt: &mut AeOptimizer) -> Result<f32> {
    let (loss, deltas) = opt.deltas(model, batch)?;
    for (p, d) in model.params.iter_mut().zip(&deltas) {
        p.add_assign(d)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{Image, ScaleView};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn crop(seed: u64) -> Crop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(CROP, CROP, 0, 0, (0..CROP * CROP * 3).map(|_| rng.gen()).collect())
    }

    fn view(l: Crop, r: Crop, pl: Crop, pr: Crop) -> ScaleView {
        ScaleView {
            left: l,
            right: r,
            prev_left: pl,
            prev_right: pr,
        }
    }

    fn obs(l: u64, r: u64, pl: u64, pr: u64) -> BinocularObservation {
        BinocularObservation {
            fine: view(crop(l), crop(r), crop(pl), crop(pr)),
            coarse: view(crop(l + 100), crop(r + 100), crop(pl + 100), crop(pr + 100)),
        }
    }

    fn channel_blocks(t: &Tensor, block: usize) -> Vec<Vec<f32>> {
        let c = t.shape()[2];
        (0..c / block)
            .map(|b| t.data().chunks_exact(c).flat_map(|px| px[b * block..(b + 1) * block].to_vec()).collect())
            .collect()
    }

    #[test]
    fn stream_layouts() {
        let o = obs(1, 1, 2, 3);
        let v = build_vergence_stream(&o, Scale::Fine);
        assert_eq!(v.shape(), [32, 32, 6]);
        let b = channel_blocks(&v, 3);
        assert_eq!(b[0], b[1]);
        let centered = |c: &Crop| c.data().iter().map(|v| v - PIXEL_MEAN).collect::<Vec<f32>>();
        assert_eq!(b[0], centered(&o.fine.left));
        assert_eq!(v, build_vergence_stream(&o, Scale::Fine));

        let t = build_temporal_stream(&o, Scale::Coarse);
        assert_eq!(t.shape(), [32, 32, 12]);
        let b = channel_blocks(&t, 3);
        let centered = |c: &Crop| c.data().iter().map(|v| v - PIXEL_MEAN).collect::<Vec<f32>>();
        assert_eq!(b[2], centered(&o.coarse.prev_left));
        assert_eq!(b[3], centered(&o.coarse.prev_right));
    }

    #[test]
    fn temporal_halves_equal_when_previous_is_current() {
        let o = obs(4, 5, 4, 5);
        let t = build_temporal_stream(&o, Scale::Fine);
        let halves = channel_blocks(&t, 6);
        assert_eq!(halves[0], halves[1]);
    }

    #[test]
    fn encoding_shapes_and_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bin = Autoencoder::new(Stream::Binocular, Scale::Fine, &mut rng);
        let tmp = Autoencoder::new(Stream::Temporal, Scale::Coarse, &mut rng);
        assert_eq!(bin.encode(&Tensor::zeros(&[32, 32, 6])).unwrap(), Tensor::zeros(&[7, 7, 24]));
        assert_eq!(tmp.encode(&Tensor::zeros(&[32, 32, 12])).unwrap().shape(), [7, 7, 48]);
        assert!(bin.encode(&Tensor::zeros(&[32, 32, 12])).is_err());
        assert!(bin.encode(&Tensor::zeros(&[28, 32, 6])).is_err());
    }

    #[test]
    fn loss_reference_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ae = Autoencoder::new(Stream::Binocular, Scale::Fine, &mut rng);
        for p in &mut ae.params {
            *p = Tensor::zeros(p.shape());
        }
        let zeros = Tensor::zeros(&[32, 32, 6]);
        assert_eq!(ae.reconstruction_loss(&zeros).unwrap(), 0.0);
        ae.params[DEC0_B] = Tensor::full(&[Stream::Binocular.patch_len()], 1.0);
        assert_eq!(ae.reconstruction_loss(&zeros).unwrap(), 1.0);
    }

    #[test]
    fn combined_loss() {
        assert_eq!(combined_stream_loss(0.3, 0.3), 0.3);
        assert!((combined_stream_loss(0.2, 0.4) - 0.3).abs() < 1e-7);
        assert_eq!(combined_stream_loss(0.1, 0.7), combined_stream_loss(0.7, 0.1));
    }

    #[test]
    fn eye_swap_symmetry_when_images_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ae = Autoencoder::new(Stream::Binocular, Scale::Fine, &mut rng);
        let o = obs(9, 9, 9, 9);
        let v = build_vergence_stream(&o, Scale::Fine);
        let swapped: Vec<f32> = v.data().chunks_exact(6).flat_map(|px| [&px[3..], &px[..3]].concat()).collect();
        let swapped = Tensor::from_vec(&[32, 32, 6], swapped).unwrap();
        let d = ae.reconstruction_loss(&v).unwrap() - ae.reconstruction_loss(&swapped).unwrap();
        assert!(d.abs() < 1e-6);
    }

    #[test]
    fn overfits_single_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ae = Autoencoder::new(Stream::Binocular, Scale::Fine, &mut rng);
        let mut opt = AeOptimizer::new(Stream::Binocular, AdamConfig::with_learning_rate(1e-3));
        let v = build_vergence_stream(&obs(1, 2, 3, 4), Scale::Fine).reshape(&[1, 32, 32, 6]).unwrap();
        let first = ae_train_step(&v, &mut ae, &mut opt).unwrap();
        let mut last = first;
        for _ in 0..199 {
            last = ae_train_step(&v, &mut ae, &mut opt).unwrap();
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ae = Autoencoder::new(Stream::Temporal, Scale::Fine, &mut rng);
        let before = ae.clone();
        let mut opt = AeOptimizer::new(Stream::Temporal, AdamConfig::with_learning_rate(0.0));
        let v = build_temporal_stream(&obs(1, 2, 3, 4), Scale::Fine);
        ae_train_step(&v, &mut ae, &mut opt).unwrap();
        assert_eq!(ae, before);
    }

    #[test]
    fn perceive_orders_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Perception::new(&mut rng);
        let o = obs(1, 2, 3, 4);
        let percept = p.perceive(&o).unwrap();
        for stream in Stream::ALL {
            for scale in Scale::ALL {
                let v = build_stream(&o, stream, scale);
                let m = p.get(stream, scale);
                assert_eq!((m.stream, m.scale), (stream, scale));
                assert_eq!(percept.loss(stream, scale), m.reconstruction_loss(&v).unwrap());
                assert_eq!(percept.code(stream, scale), &m.encode(&v).unwrap());
            }
        }
    }

    #[test]
    fn names_follow_schema() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ae = Autoencoder::new(Stream::Temporal, Scale::Coarse, &mut rng);
        assert_eq!(ae.param_names()[0], "ae.temporal.coarse.enc.0.w");
        assert_eq!(ae.param_names()[5], "ae.temporal.coarse.dec.0.b");
        assert_eq!(ae.params[4].shape(), [1, 1, 48, 768]);
    }
}
