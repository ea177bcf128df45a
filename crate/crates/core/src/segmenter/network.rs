//! Forward and backward passes of the dual-head encoder-decoder.
//!
//! Encoder stage `i`: dropout, 3x3 convolution, tanh, 2x2 mean pooling.
//! Decoder stage `i` (deepest first): 2x nearest upsampling, concatenation with
//! the stage-`i` encoder activation, 3x3 convolution, tanh. Two sibling 1x1
//! heads produce object logits and contour logits at full resolution.

use rand::Rng;

use super::config::{LossConfig, NetworkConfig};
use super::layers::{self, Tensor};
use super::params::Parameters;
use crate::error::{Error, Result};
use crate::grid::{Image, LabelMask, UNLABELED};

/// Per-pixel logits for one head, row-major `(row, col, class)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    height: usize,
    width: usize,
    classes: usize,
    values: Vec<f64>,
}

impl Logits {
    pub fn new(height: usize, width: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * classes {
            return Err(Error::shape(height * width * classes, values.len()));
        }
        Ok(Logits {
            height,
            width,
            classes,
            values,
        })
    }

    fn from_tensor(t: &Tensor) -> Self {
        let n = t.h * t.w;
        let mut values = vec![0.0; t.data.len()];
        for k in 0..t.c {
            for (p, v) in t.plane(k).iter().enumerate() {
                values[p * t.c + k] = *v;
            }
        }
        debug_assert_eq!(values.len(), n * t.c);
        Logits {
            height: t.h,
            width: t.w,
            classes: t.c,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.values[index * self.classes..(index + 1) * self.classes]
    }
}

/// Keep/drop decisions for the input of every encoder stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep_scale: f64,
    shapes: Vec<(usize, usize, usize)>,
    layers: Vec<Vec<bool>>,
}

impl DropoutMask {
    /// Number of gated layers (one per encoder stage).
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// `(channels, height, width)` of the activation gated by `layer`.
    pub fn shape(&self, layer: usize) -> (usize, usize, usize) {
        self.shapes[layer]
    }

    pub fn layer(&self, layer: usize) -> &[bool] {
        &self.layers[layer]
    }

    /// Scale applied to kept units, `1 / (1 - p)`.
    pub fn keep_scale(&self) -> f64 {
        self.keep_scale
    }

    pub fn kept_fraction(&self) -> f64 {
        let total: usize = self.layers.iter().map(Vec::len).sum();
        let kept: usize = self.layers.iter().flatten().filter(|k| **k).count();
        kept as f64 / total as f64
    }
}

/// Draws an independent keep decision (probability `1 - p`) for every unit.
pub fn sample_dropout_mask<R: Rng + ?Sized>(
    config: &NetworkConfig,
    height: usize,
    width: usize,
    rng: &mut R,
) -> DropoutMask {
    let p = config.dropout_rate;
    let mut shapes = Vec::with_capacity(config.encoder_blocks);
    let mut layers = Vec::with_capacity(config.encoder_blocks);
    for i in 0..config.encoder_blocks {
        let c = if i == 0 {
            config.input_channels
        } else {
            config.stage_width(i - 1)
        };
        let shape = (c, height >> i, width >> i);
        let len = shape.0 * shape.1 * shape.2;
        let units = if p == 0.0 {
            vec![true; len]
        } else {
            (0..len).map(|_| rng.gen::<f64>() >= p).collect()
        };
        shapes.push(shape);
        layers.push(units);
    }
    DropoutMask {
        keep_scale: 1.0 / (1.0 - p),
        shapes,
        layers,
    }
}

/// Network input together with its per-pixel supervision.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    input: Tensor,
    labels: LabelMask,
    contours: LabelMask,
    train_mask: Vec<bool>,
}

impl TrainingSample {
    pub fn new(
        image: &Image,
        labels: LabelMask,
        contours: LabelMask,
        train_mask: Vec<bool>,
    ) -> Result<Self> {
        let (h, w) = (image.height(), image.width());
        labels.same_shape(h, w)?;
        contours.same_shape(h, w)?;
        if train_mask.len() != h * w {
            return Err(Error::shape(h * w, train_mask.len()));
        }
        Ok(TrainingSample {
            input: Tensor::from_image(image),
            labels,
            contours,
            train_mask,
        })
    }

    pub fn labels(&self) -> &LabelMask {
        &self.labels
    }

    pub fn contours(&self) -> &LabelMask {
        &self.contours
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    pub fn labeled_pixels(&self) -> usize {
        self.train_mask.iter().filter(|m| **m).count()
    }

    pub fn height(&self) -> usize {
        self.input.h
    }

    pub fn width(&self) -> usize {
        self.input.w
    }
}

/// Value of the training objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub regularization: f64,
    pub main_ce: f64,
    pub aux_ce: f64,
    /// Set when no pixel was marked for training; only the regularizer contributes.
    pub data_free: bool,
}

struct Cache {
    dropped: Vec<Tensor>,
    encoded: Vec<Tensor>,
    // indexed by stage
    dec_in: Vec<Option<Tensor>>,
    dec_out: Vec<Option<Tensor>>,
    main: Tensor,
    aux: Tensor,
}

fn check_input(params: &Parameters, h: usize, w: usize, c: usize) -> Result<()> {
    let cfg = params.config();
    let div = cfg.size_divisor();
    if h % div != 0 || w % div != 0 {
        return Err(Error::invalid(format!(
            "image {h}x{w} is not divisible by {div} ({} encoder blocks)",
            cfg.encoder_blocks
        )));
    }
    if c != cfg.input_channels {
        return Err(Error::invalid(format!(
            "image has {c} channels, network expects {}",
            cfg.input_channels
        )));
    }
    Ok(())
}

pub(crate) fn check_image(params: &Parameters, image: &Image) -> Result<()> {
    check_input(params, image.height(), image.width(), image.channels())
}

pub(crate) fn check_sample(params: &Parameters, sample: &TrainingSample) -> Result<()> {
    check_input(params, sample.input.h, sample.input.w, sample.input.c)?;
    let classes = params.config().classes;
    sample.labels.validate(classes)?;
    sample.contours.validate(classes)
}

fn check_mask(mask: &DropoutMask, cfg: &NetworkConfig, h: usize, w: usize) -> Result<()> {
    if mask.layers.len() != cfg.encoder_blocks {
        return Err(Error::shape(cfg.encoder_blocks, mask.layers.len()));
    }
    for (i, &(c, mh, mw)) in mask.shapes.iter().enumerate() {
        let want_c = if i == 0 {
            cfg.input_channels
        } else {
            cfg.stage_width(i - 1)
        };
        if (c, mh, mw) != (want_c, h >> i, w >> i) {
            return Err(Error::shape(
                format!("{want_c}x{}x{}", h >> i, w >> i),
                format!("{c}x{mh}x{mw}"),
            ));
        }
    }
    Ok(())
}

fn forward_cached(params: &Parameters, input: &Tensor, mask: Option<&DropoutMask>) -> Cache {
    let cfg = params.config();
    let b = cfg.encoder_blocks;
    let layout = params.layers();
    let mut dropped = Vec::with_capacity(b);
    let mut encoded = Vec::with_capacity(b);
    let mut x = input.clone();
    for i in 0..b {
        if let Some(m) = mask {
            let scale = m.keep_scale;
            for (v, keep) in x.data.iter_mut().zip(&m.layers[i]) {
                *v = if *keep { *v * scale } else { 0.0 };
            }
        }
        let l = &layout[i];
        let mut e = layers::conv_forward(&x, params.weights(l), params.biases(l), 3);
        layers::tanh_forward(&mut e);
        let pooled = layers::avg_pool_forward(&e);
        dropped.push(std::mem::replace(&mut x, pooled));
        encoded.push(e);
    }
    let mut dec_in = vec![None; b];
    let mut dec_out = vec![None; b];
    let mut d = x;
    for i in (0..b).rev() {
        let up = layers::upsample_forward(&d);
        let cat = Tensor::concat(&up, &encoded[i]);
        let l = &layout[b + (b - 1 - i)];
        let mut out = layers::conv_forward(&cat, params.weights(l), params.biases(l), 3);
        layers::tanh_forward(&mut out);
        dec_in[i] = Some(cat);
        d = out.clone();
        dec_out[i] = Some(out);
    }
    let lm = &layout[2 * b];
    let la = &layout[2 * b + 1];
    let main = layers::conv_forward(&d, params.weights(lm), params.biases(lm), 1);
    let aux = layers::conv_forward(&d, params.weights(la), params.biases(la), 1);
    Cache {
        dropped,
        encoded,
        dec_in,
        dec_out,
        main,
        aux,
    }
}

/// Runs both heads. `None` means a deterministic pass with no dropout.
pub fn forward(
    params: &Parameters,
    image: &Image,
    mask: Option<&DropoutMask>,
) -> Result<(Logits, Logits)> {
    check_input(params, image.height(), image.width(), image.channels())?;
    if let Some(m) = mask {
        check_mask(m, params.config(), image.height(), image.width())?;
    }
    let cache = forward_cached(params, &Tensor::from_image(image), mask);
    Ok((Logits::from_tensor(&cache.main), Logits::from_tensor(&cache.aux)))
}

/// Main-head logits only, channel-major; used by inference hot paths.
pub(crate) fn forward_main(params: &Parameters, input: &Tensor, mask: Option<&DropoutMask>) -> Tensor {
    forward_cached(params, input, mask).main
}

pub(crate) fn tensor_of(image: &Image) -> Tensor {
    Tensor::from_image(image)
}

/// Mean cross-entropy over marked pixels, accumulating `scale * dCE/dlogit` into `grad`.
///
/// `logit(k, p)` addresses class `k` of pixel `p` as `values[k * class_stride + p * pixel_stride]`.
#[allow(clippy::too_many_arguments)]
fn masked_cross_entropy(
    values: &[f64],
    classes: usize,
    class_stride: usize,
    pixel_stride: usize,
    labels: &LabelMask,
    train_mask: &[bool],
    count: usize,
    mut grad: Option<(&mut [f64], f64)>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut probs = vec![0.0; classes];
    for (p, _) in train_mask.iter().enumerate().filter(|(_, m)| **m) {
        let label = labels.labels()[p];
        if label == UNLABELED || label as usize >= classes {
            return Err(Error::invalid(format!(
                "pixel ({}, {}) is marked for training but has label {label}",
                p / labels.width(),
                p % labels.width()
            )));
        }
        let base = p * pixel_stride;
        let mut max = f64::NEG_INFINITY;
        for k in 0..classes {
            probs[k] = values[base + k * class_stride];
            max = max.max(probs[k]);
        }
        let mut sum = 0.0;
        for v in probs.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let target = values[base + label as usize * class_stride];
        total += sum.ln() + max - target;
        if let Some((g, scale)) = grad.as_mut() {
            let s = *scale / count as f64;
            for k in 0..classes {
                let pk = probs[k] / sum;
                let y = if k == label as usize { 1.0 } else { 0.0 };
                g[base + k * class_stride] += s * (pk - y);
            }
        }
    }
    Ok(total / count as f64)
}

fn validate_supervision(
    h: usize,
    w: usize,
    classes: usize,
    labels: &LabelMask,
    contours: &LabelMask,
    train_mask: &[bool],
) -> Result<()> {
    labels.same_shape(h, w)?;
    contours.same_shape(h, w)?;
    if train_mask.len() != h * w {
        return Err(Error::shape(h * w, train_mask.len()));
    }
    if classes == 0 {
        return Err(Error::invalid("zero classes"));
    }
    Ok(())
}

/// The training objective evaluated on precomputed logits:
/// `λ·½‖W‖² + w·CE(aux, contours) + CE(main, labels)`, with both
/// cross-entropies averaged over `train_mask` pixels only.
pub fn loss(
    main: &Logits,
    aux: &Logits,
    labels: &LabelMask,
    contours: &LabelMask,
    train_mask: &[bool],
    params: &Parameters,
    cfg: &LossConfig,
) -> Result<LossValue> {
    let (h, w, c) = (main.height, main.width, main.classes);
    if (aux.height, aux.width, aux.classes) != (h, w, c) {
        return Err(Error::shape(
            format!("{h}x{w}x{c}"),
            format!("{}x{}x{}", aux.height, aux.width, aux.classes),
        ));
    }
    validate_supervision(h, w, c, labels, contours, train_mask)?;
    let regularization = cfg.lambda * params.weight_decay();
    let count = train_mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Ok(LossValue {
            total: regularization,
            regularization,
            main_ce: 0.0,
            aux_ce: 0.0,
            data_free: true,
        });
    }
    let main_ce = masked_cross_entropy(&main.values, c, 1, c, labels, train_mask, count, None)?;
    let aux_ce = masked_cross_entropy(&aux.values, c, 1, c, contours, train_mask, count, None)?;
    Ok(LossValue {
        total: regularization + cfg.aux_weight * aux_ce + main_ce,
        regularization,
        main_ce,
        aux_ce,
        data_free: false,
    })
}

/// Objective and its exact gradient for one sample under a fixed dropout mask.
pub fn loss_and_gradient(
    params: &Parameters,
    sample: &TrainingSample,
    mask: Option<&DropoutMask>,
    cfg: &LossConfig,
) -> Result<(LossValue, Parameters)> {
    check_sample(params, sample)?;
    if let Some(m) = mask {
        check_mask(m, params.config(), sample.input.h, sample.input.w)?;
    }
    gradient_unchecked(params, sample, mask, cfg)
}

pub(crate) fn gradient_unchecked(
    params: &Parameters,
    sample: &TrainingSample,
    mask: Option<&DropoutMask>,
    cfg: &LossConfig,
) -> Result<(LossValue, Parameters)> {
    let config = params.config();
    let b = config.encoder_blocks;
    let classes = config.classes;
    let n = sample.input.h * sample.input.w;
    let mut grad = Parameters::zeros(config)?;

    // regularizer
    let regularization = cfg.lambda * params.weight_decay();
    for layer in params.layers() {
        let range = layer.weight_range();
        let (g, p) = (&mut grad.as_mut_slice()[range.clone()], &params.as_slice()[range]);
        for (gv, pv) in g.iter_mut().zip(p) {
            *gv = cfg.lambda * pv;
        }
    }
    let count = sample.labeled_pixels();
    if count == 0 {
        return Ok((
            LossValue {
                total: regularization,
                regularization,
                main_ce: 0.0,
                aux_ce: 0.0,
                data_free: true,
            },
            grad,
        ));
    }

    let cache = forward_cached(params, &sample.input, mask);
    let mut g_main = Tensor::zeros(classes, sample.input.h, sample.input.w);
    let mut g_aux = Tensor::zeros(classes, sample.input.h, sample.input.w);
    let main_ce = masked_cross_entropy(
        &cache.main.data,
        classes,
        n,
        1,
        &sample.labels,
        &sample.train_mask,
        count,
        Some((&mut g_main.data, 1.0)),
    )?;
    let aux_ce = masked_cross_entropy(
        &cache.aux.data,
        classes,
        n,
        1,
        &sample.contours,
        &sample.train_mask,
        count,
        Some((&mut g_aux.data, cfg.aux_weight)),
    )?;

    let layout = params.layers().to_vec();
    let gslice = grad.as_mut_slice();
    let d0 = cache.dec_out[0].as_ref().expect("decoder output");

    let mut split_grad = |layer: usize, input: &Tensor, gout: &Tensor, k: usize, want: bool| {
        let l = &layout[layer];
        let (wr, br) = (l.weight_range(), l.bias_range());
        let (head, tail) = gslice.split_at_mut(l.bias_offset);
        layers::conv_backward(
            input,
            gout,
            params.weights(l),
            k,
            &mut head[wr],
            &mut tail[..br.len()],
            want,
        )
    };

    let mut gd = split_grad(2 * b, d0, &g_main, 1, true).expect("input grad");
    let gd_aux = split_grad(2 * b + 1, d0, &g_aux, 1, true).expect("input grad");
    gd.data.iter_mut().zip(&gd_aux.data).for_each(|(a, c)| *a += c);

    let mut skip_grads: Vec<Option<Tensor>> = vec![None; b];
    for i in 0..b {
        let out = cache.dec_out[i].as_ref().expect("decoder output");
        layers::tanh_backward(out, &mut gd);
        let cat = cache.dec_in[i].as_ref().expect("decoder input");
        let gcat = split_grad(b + (b - 1 - i), cat, &gd, 3, true).expect("input grad");
        let up_channels = cat.c - cache.encoded[i].c;
        let (g_up, g_skip) = gcat.split(up_channels);
        skip_grads[i] = Some(g_skip);
        gd = layers::upsample_backward(&g_up);
    }

    let mut gx = gd;
    for i in (0..b).rev() {
        let mut ge = layers::avg_pool_backward(&gx);
        let skip = skip_grads[i].take().expect("skip grad");
        ge.data.iter_mut().zip(&skip.data).for_each(|(a, s)| *a += s);
        layers::tanh_backward(&cache.encoded[i], &mut ge);
        let gin = split_grad(i, &cache.dropped[i], &ge, 3, i > 0);
        if let Some(mut g) = gin {
            if let Some(m) = mask {
                let scale = m.keep_scale;
                for (v, keep) in g.data.iter_mut().zip(&m.layers[i]) {
                    *v = if *keep { *v * scale } else { 0.0 };
                }
            }
            gx = g;
        }
    }

    Ok((
        LossValue {
            total: regularization + cfg.aux_weight * aux_ce + main_ce,
            regularization,
            main_ce,
            aux_ce,
            data_free: false,
        },
        grad,
    ))
}

/// Objective for one sample, evaluated through a full forward pass.
pub fn sample_loss(
    params: &Parameters,
    sample: &TrainingSample,
    mask: Option<&DropoutMask>,
    cfg: &LossConfig,
) -> Result<LossValue> {
    let (h, w) = (sample.input.h, sample.input.w);
    check_input(params, h, w, sample.input.c)?;
    let cache = forward_cached(params, &sample.input, mask);
    let main = Logits::from_tensor(&cache.main);
    let aux = Logits::from_tensor(&cache.aux);
    loss(
        &main,
        &aux,
        &sample.labels,
        &sample.contours,
        &sample.train_mask,
        params,
        cfg,
    )
}
