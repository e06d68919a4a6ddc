//! Forward pass, cross-entropy cost and exact back-propagation.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::arch::{Layer, NetworkParams};
use super::conv::{conv3d_valid, conv3d_valid_backward};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::volume::{check_upsample_target, downsample2_raw, upsample2_raw};

/// Floor applied to the true-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Channel-wise PReLU: `x` where `x >= 0`, `a_c * x` otherwise.
pub fn prelu(x: &Tensor, slopes: &[f64]) -> Tensor {
    let mut out = x.clone();
    prelu_in_place(&mut out, slopes);
    out
}

fn prelu_in_place(x: &mut Tensor, slopes: &[f64]) {
    for (c, &a) in slopes.iter().enumerate().take(x.channels) {
        for v in x.channel_mut(c) {
            if *v < 0.0 {
                *v *= a;
            }
        }
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Pre-softmax class scores.
    pub scores: Tensor,
    /// Per-voxel softmax over classes.
    pub probs: Tensor,
}

/// Activations kept for back-propagation through one layer.
struct LayerCache {
    input: Tensor,
    /// Pre-activation output; only stored for PReLU layers.
    pre: Option<Tensor>,
}

struct PathCache {
    layers: Vec<LayerCache>,
}

struct ForwardCache {
    main: PathCache,
    context: Option<ContextCache>,
    fc: PathCache,
    classifier_input: Tensor,
    prediction: Prediction,
}

struct ContextCache {
    path: PathCache,
    low_dims: [usize; 3],
}

fn run_layer(layer: &Layer, input: Tensor, keep: bool, cache: &mut Vec<LayerCache>) -> Result<Tensor> {
    if input.channels != layer.in_channels {
        return Err(Error::Shape(format!(
            "layer expects {} input channels, got {}",
            layer.in_channels, input.channels
        )));
    }
    let mut out = conv3d_valid(&input, &layer.weights, &layer.bias, layer.kernel_size)?;
    let pre = match &layer.slopes {
        Some(slopes) => {
            let pre = keep.then(|| out.clone());
            prelu_in_place(&mut out, slopes);
            pre
        }
        None => None,
    };
    if keep {
        cache.push(LayerCache { input, pre });
    }
    Ok(out)
}

fn run_path(layers: &[Layer], input: Tensor, keep: bool) -> Result<(Tensor, PathCache)> {
    let mut cache = Vec::new();
    let mut x = input;
    for layer in layers {
        x = run_layer(layer, x, keep, &mut cache)?;
    }
    Ok((x, PathCache { layers: cache }))
}

fn softmax(scores: &Tensor) -> Tensor {
    let n = scores.plane();
    let c = scores.channels;
    let mut probs = scores.clone();
    for v in 0..n {
        let mut max = f64::NEG_INFINITY;
        for k in 0..c {
            max = max.max(scores.data[k * n + v]);
        }
        let mut sum = 0.0;
        for k in 0..c {
            let e = (scores.data[k * n + v] - max).exp();
            probs.data[k * n + v] = e;
            sum += e;
        }
        for k in 0..c {
            probs.data[k * n + v] /= sum;
        }
    }
    probs
}

fn concat(a: Tensor, b: Tensor) -> Tensor {
    debug_assert_eq!(a.dims, b.dims);
    let mut data = a.data;
    data.extend_from_slice(&b.data);
    Tensor {
        channels: a.channels + b.channels,
        dims: a.dims,
        data,
    }
}

fn check_inputs(params: &NetworkParams, main_in: &Tensor, context_in: Option<&Tensor>) -> Result<[usize; 3]> {
    let arch = &params.arch;
    if main_in.channels != 1 {
        return Err(Error::Shape(format!("main input has {} channels, expected 1", main_in.channels)));
    }
    let mut out = [0; 3];
    for a in 0..3 {
        out[a] = arch.output_size(main_in.dims[a]).ok_or_else(|| {
            Error::Shape(format!(
                "main input {:?} smaller than receptive field {}",
                main_in.dims,
                arch.receptive_field()
            ))
        })?;
    }
    match (arch.dual_path, context_in) {
        (true, Some(ctx)) => {
            let want: [usize; 3] = core::array::from_fn(|a| arch.context_size(out[a]));
            if ctx.dims != want || ctx.channels != 1 {
                return Err(Error::Shape(format!("context input {:?}, expected {want:?}", ctx.dims)));
            }
        }
        (true, None) => return Err(Error::Shape("dual-path network needs a context input".into())),
        (false, Some(_)) => return Err(Error::Shape("single-path network given a context input".into())),
        (false, None) => {}
    }
    Ok(out)
}

fn forward_impl(
    params: &NetworkParams,
    main_in: &Tensor,
    context_in: Option<&Tensor>,
    keep: bool,
) -> Result<ForwardCache> {
    let out_dims = check_inputs(params, main_in, context_in)?;
    let (main_out, main_cache) = run_path(&params.main, main_in.clone(), keep)?;
    let (fused, context) = match context_in {
        Some(ctx) => {
            let (low, low_dims) = downsample2_raw(&ctx.data, ctx.dims);
            let (ctx_out, path) = run_path(&params.context, Tensor::from_single(low_dims, low), keep)?;
            let small = ctx_out.dims;
            check_upsample_target(small, out_dims)?;
            let mut up = Tensor::zeros(ctx_out.channels, out_dims);
            for c in 0..ctx_out.channels {
                up.channel_mut(c)
                    .copy_from_slice(&upsample2_raw(ctx_out.channel(c), small, out_dims));
            }
            (concat(main_out, up), Some(ContextCache { path, low_dims: small }))
        }
        None => (main_out, None),
    };
    let (fc_out, fc_cache) = run_path(&params.fc, fused, keep)?;
    let scores = conv3d_valid(&fc_out, &params.classifier.weights, &params.classifier.bias, 1)?;
    let probs = softmax(&scores);
    Ok(ForwardCache {
        main: main_cache,
        context,
        fc: fc_cache,
        classifier_input: if keep { fc_out } else { Tensor::zeros(0, [1, 1, 1]) },
        prediction: Prediction { scores, probs },
    })
}

/// Class scores and softmax map for one main block and its context block.
pub fn forward(params: &NetworkParams, main_in: &Tensor, context_in: Option<&Tensor>) -> Result<Prediction> {
    Ok(forward_impl(params, main_in, context_in, false)?.prediction)
}

/// Mean negative log-probability of the true class over every voxel of
/// every map in `probs`.
pub fn loss(probs: &[&Tensor], labels: &[&[u8]]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch(probs.len(), labels.len()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, l) in probs.iter().zip(labels) {
        let n = p.plane();
        if l.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} output voxels", l.len())));
        }
        for (v, &c) in l.iter().enumerate() {
            let c = c as usize;
            if c >= p.channels {
                return Err(Error::Shape(format!("label {c} outside {} classes", p.channels)));
            }
            total -= p.data[c * n + v].max(PROB_FLOOR).ln();
        }
        count += n;
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(total / count as f64)
}

/// One training example: main block, optional context block, output labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub main: Tensor,
    pub context: Option<Tensor>,
    /// Class per output voxel, x fastest.
    pub labels: Vec<u8>,
}

/// Back-propagates `grad` (w.r.t. the layer output) through a path, writing
/// parameter gradients into `grads` and returning the gradient at the path input.
fn backprop_path(
    layers: &[Layer],
    cache: PathCache,
    grads: &mut [Layer],
    mut grad: Tensor,
    need_input: bool,
) -> Result<Tensor> {
    for (i, ((layer, lc), g)) in layers.iter().zip(cache.layers).zip(grads.iter_mut()).enumerate().rev() {
        if let (Some(slopes), Some(pre)) = (&layer.slopes, &lc.pre) {
            let gs = g.slopes.as_mut().expect("gradient layout mirrors params");
            for c in 0..pre.channels {
                let a = slopes[c];
                let mut ds = 0.0;
                for (gv, &z) in grad.channel_mut(c).iter_mut().zip(pre.channel(c)) {
                    if z < 0.0 {
                        ds += *gv * z;
                        *gv *= a;
                    }
                }
                gs[c] += ds;
            }
        }
        let want_input = need_input || i > 0;
        let cg = conv3d_valid_backward(&lc.input, &layer.weights, layer.kernel_size, &grad, want_input)?;
        for (a, b) in g.weights.iter_mut().zip(&cg.weights) {
            *a += b;
        }
        for (a, b) in g.bias.iter_mut().zip(&cg.bias) {
            *a += b;
        }
        grad = cg.input;
    }
    Ok(grad)
}

/// Mean cost over the batch and its exact gradient w.r.t. every trainable tensor.
pub fn backward(params: &NetworkParams, batch: &[Sample]) -> Result<(f64, NetworkParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut grads = params.zeros_like();
    let mut total_voxels = 0usize;
    for s in batch {
        total_voxels += s.labels.len();
    }
    if total_voxels == 0 {
        return Err(Error::EmptyDataset);
    }
    let scale = 1.0 / total_voxels as f64;
    let mut total_loss = 0.0;
    for s in batch {
        let cache = forward_impl(params, &s.main, s.context.as_ref(), true)?;
        let probs = &cache.prediction.probs;
        let n = probs.plane();
        if s.labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} output voxels", s.labels.len())));
        }
        // d(-log p_y)/d score_k = p_k - [k == y], zero where the floor is active.
        let mut grad = Tensor::zeros(probs.channels, probs.dims);
        for (v, &y) in s.labels.iter().enumerate() {
            let y = y as usize;
            let py = probs.data[y * n + v];
            total_loss -= py.max(PROB_FLOOR).ln();
            if py < PROB_FLOOR {
                continue;
            }
            for k in 0..probs.channels {
                let ind = if k == y { 1.0 } else { 0.0 };
                grad.data[k * n + v] = scale * (probs.data[k * n + v] - ind);
            }
        }

        let cg = conv3d_valid_backward(&cache.classifier_input, &params.classifier.weights, 1, &grad, true)?;
        for (a, b) in grads.classifier.weights.iter_mut().zip(&cg.weights) {
            *a += b;
        }
        for (a, b) in grads.classifier.bias.iter_mut().zip(&cg.bias) {
            *a += b;
        }
        let fused = backprop_path(&params.fc, cache.fc, &mut grads.fc, cg.input, true)?;

        let main_channels = params.main.last().map_or(0, |l| l.out_channels);
        let plane = fused.plane();
        let main_grad = Tensor {
            channels: main_channels,
            dims: fused.dims,
            data: fused.data[..main_channels * plane].to_vec(),
        };
        if let Some(ctx) = cache.context {
            // Adjoint of nearest up-sampling + centre crop: scatter-add back.
            let up_channels = fused.channels - main_channels;
            let low = ctx.low_dims;
            let out_dims = fused.dims;
            let mut low_grad = Tensor::zeros(up_channels, low);
            let off: [usize; 3] = core::array::from_fn(|a| (2 * low[a] - out_dims[a]) / 2);
            for c in 0..up_channels {
                let src = &fused.data[(main_channels + c) * plane..(main_channels + c + 1) * plane];
                let dst = low_grad.channel_mut(c);
                for w in 0..out_dims[2] {
                    let z = (w + off[2]) / 2;
                    for v in 0..out_dims[1] {
                        let y = (v + off[1]) / 2;
                        for u in 0..out_dims[0] {
                            let x = (u + off[0]) / 2;
                            dst[x + low[0] * (y + low[1] * z)] += src[u + out_dims[0] * (v + out_dims[1] * w)];
                        }
                    }
                }
            }
            backprop_path(&params.context, ctx.path, &mut grads.context, low_grad, false)?;
        }
        backprop_path(&params.main, cache.main, &mut grads.main, main_grad, false)?;
    }
    Ok((total_loss * scale, grads))
}
