use super::arch::{ConvSpec, StreamRole};
use super::ops::{
    conv_backward, conv_forward, global_avg_pool, linear, linear_backward, relu_in_place, relu_mask, ConvGeom,
};
use super::params::{PmsmParams, StreamParams};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{triplet_loss_with_grad, DistanceKind, IndexTriplet};
use crate::mining::{crop_part, Rect};

const RES_SPEC: ConvSpec = ConvSpec {
    out_channels: 0,
    kernel: 3,
    stride: 1,
    padding: 1,
};

/// The three stream inputs for one image, each CHW at the stream input size.
#[derive(Clone, Debug, PartialEq)]
pub struct Views {
    pub whole: Vec<f64>,
    pub part_m: Vec<f64>,
    pub part_i: Vec<f64>,
}

impl Views {
    /// Crops the whole frame and both parts to `px × px`.
    pub fn prepare(image: &Image, part_m: &Rect, part_i: &Rect, px: usize) -> Self {
        Self {
            whole: crop_part(image, &Rect::FULL, px).to_chw(),
            part_m: crop_part(image, part_m, px).to_chw(),
            part_i: crop_part(image, part_i, px).to_chw(),
        }
    }

    pub fn get(&self, role: StreamRole) -> &[f64] {
        match role {
            StreamRole::Whole => &self.whole,
            StreamRole::PartM => &self.part_m,
            StreamRole::PartI => &self.part_i,
        }
    }
}

/// Activations of one stream pass. `acts[0]` is the input; each conv stage
/// appends its ReLU output, and with residual blocks also the inner branch
/// activation and the block output.
#[derive(Clone, Debug)]
pub struct StreamCache {
    acts: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

fn check_finite(values: &[f64], layer: usize, what: impl FnOnce() -> String) -> Result<()> {
    if values.iter().sum::<f64>().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { layer, what: what() })
    }
}

fn stage_geoms(p: &StreamParams) -> Vec<(ConvGeom, Option<ConvGeom>)> {
    let mut c = p.arch.in_channels;
    let mut side = p.arch.input_px;
    p.arch
        .convs
        .iter()
        .map(|spec| {
            let g = ConvGeom::new(spec, c, side);
            c = g.c_out;
            side = g.side_out;
            let r = p.arch.residual.then(|| {
                ConvGeom::new(
                    &ConvSpec {
                        out_channels: c,
                        ..RES_SPEC
                    },
                    c,
                    side,
                )
            });
            (g, r)
        })
        .collect()
}

fn stride_of(residual: bool) -> usize {
    if residual {
        6
    } else {
        2
    }
}

fn stream_forward_cached(p: &StreamParams, input: &[f64]) -> Result<(Vec<f64>, StreamCache)> {
    if input.len() != p.arch.input_len() {
        return Err(Error::Shape(format!(
            "stream input has {} values, expected {}",
            input.len(),
            p.arch.input_len()
        )));
    }
    let t = &p.tensors;
    let step = stride_of(p.arch.residual);
    let mut acts = vec![input.to_vec()];
    let mut layer = 0;
    for (i, (g, r)) in stage_geoms(p).iter().enumerate() {
        let base = i * step;
        let mut a = conv_forward(g, acts.last().unwrap(), &t[base].data, &t[base + 1].data);
        relu_in_place(&mut a);
        check_finite(&a, layer, || format!("conv{i}"))?;
        layer += 1;
        if let Some(r) = r {
            let mut inner = conv_forward(r, &a, &t[base + 2].data, &t[base + 3].data);
            relu_in_place(&mut inner);
            check_finite(&inner, layer, || format!("res{i}.a"))?;
            layer += 1;
            let mut y = conv_forward(r, &inner, &t[base + 4].data, &t[base + 5].data);
            for (v, s) in y.iter_mut().zip(&a) {
                *v += s;
            }
            relu_in_place(&mut y);
            check_finite(&y, layer, || format!("res{i}.b"))?;
            layer += 1;
            acts.push(a);
            acts.push(inner);
            acts.push(y);
        } else {
            acts.push(a);
        }
    }
    let (channels, _) = p.arch.final_shape();
    let pooled = global_avg_pool(acts.last().unwrap(), channels);
    let n = t.len();
    let out = linear(&t[n - 2].data, &t[n - 1].data, &pooled);
    check_finite(&out, layer, || "fc".into())?;
    Ok((out, StreamCache { acts, pooled }))
}

/// Accumulates parameter gradients of one stream into `grads`.
fn stream_backward(p: &StreamParams, cache: &StreamCache, d_out: &[f64], grads: &mut StreamParams) {
    let n = p.tensors.len();
    let (fc_w, rest) = grads.tensors[n - 2..].split_at_mut(1);
    let d_pooled = linear_backward(&p.tensors[n - 2].data, &cache.pooled, d_out, &mut fc_w[0].data, &mut rest[0].data);
    let last = cache.acts.last().unwrap();
    let plane = last.len() / d_pooled.len();
    let mut d: Vec<f64> = d_pooled
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
        .collect();

    let residual = p.arch.residual;
    let step = stride_of(residual);
    let per_stage = if residual { 3 } else { 1 };
    let geoms = stage_geoms(p);
    for (i, (g, r)) in geoms.iter().enumerate().rev() {
        let base = i * step;
        let a_idx = 1 + i * per_stage;
        if let Some(r) = r {
            let (a, inner, y) = (&cache.acts[a_idx], &cache.acts[a_idx + 1], &cache.acts[a_idx + 2]);
            relu_mask(&mut d, y);
            let [_, _, ra_w, ra_b, rb_w, rb_b] = &mut grads.tensors[base..base + 6] else {
                unreachable!()
            };
            let mut d_inner = conv_backward(
                r,
                inner,
                &p.tensors[base + 4].data,
                &d,
                &mut rb_w.data,
                &mut rb_b.data,
                true,
            )
            .unwrap();
            relu_mask(&mut d_inner, inner);
            let d_branch = conv_backward(
                r,
                a,
                &p.tensors[base + 2].data,
                &d_inner,
                &mut ra_w.data,
                &mut ra_b.data,
                true,
            )
            .unwrap();
            for (x, b) in d.iter_mut().zip(&d_branch) {
                *x += b;
            }
        }
        relu_mask(&mut d, &cache.acts[a_idx]);
        let (w, b) = grads.tensors[base..base + 2].split_at_mut(1);
        let d_in = conv_backward(
            g,
            &cache.acts[a_idx - 1],
            &p.tensors[base].data,
            &d,
            &mut w[0].data,
            &mut b[0].data,
            i > 0,
        );
        if let Some(d_in) = d_in {
            d = d_in;
        }
    }
}

pub fn forward_stream(params: &StreamParams, input: &[f64]) -> Result<Vec<f64>> {
    stream_forward_cached(params, input).map(|(out, _)| out)
}

/// Everything the backward pass of one image needs.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    streams: Vec<StreamCache>,
    concat: Vec<f64>,
}

impl ForwardCache {
    /// Hash of every ReLU on/off state; equal signatures mean the network is
    /// the same affine map around both parameter points.
    pub fn relu_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in &self.streams {
            for act in &s.acts[1..] {
                for &v in act {
                    h ^= (v > 0.0) as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

pub fn forward_pmsm_cached(params: &PmsmParams, views: &Views) -> Result<(Vec<f64>, ForwardCache)> {
    let mut concat = Vec::with_capacity(params.arch.fusion_in());
    let mut streams = Vec::with_capacity(params.streams.len());
    for (s, &role) in params.streams.iter().zip(&params.arch.roles) {
        let (out, cache) = stream_forward_cached(s, views.get(role)).map_err(|e| match e {
            Error::NonFinite { layer, what } => Error::NonFinite {
                layer,
                what: format!("{}.{what}", role.name()),
            },
            e => e,
        })?;
        concat.extend(out);
        streams.push(cache);
    }
    let embedding = linear(&params.fusion_w.data, &params.fusion_b.data, &concat);
    let fusion_layer = params.arch.stream.convs.len() * if params.arch.stream.residual { 3 } else { 1 } + 1;
    check_finite(&embedding, fusion_layer, || "fusion".into())?;
    Ok((embedding, ForwardCache { streams, concat }))
}

/// `fusion(concat(stream outputs))`, one stream per role of the architecture.
pub fn forward_pmsm(params: &PmsmParams, views: &Views) -> Result<Vec<f64>> {
    forward_pmsm_cached(params, views).map(|(e, _)| e)
}

/// Accumulates `∂(d_embedding · f)/∂θ` into `grads`.
pub fn backward_pmsm(params: &PmsmParams, cache: &ForwardCache, d_embedding: &[f64], grads: &mut PmsmParams) {
    let d_concat = linear_backward(
        &params.fusion_w.data,
        &cache.concat,
        d_embedding,
        &mut grads.fusion_w.data,
        &mut grads.fusion_b.data,
    );
    let out_dim = params.arch.stream.out_dim;
    for (i, (s, c)) in params.streams.iter().zip(&cache.streams).enumerate() {
        stream_backward(s, c, &d_concat[i * out_dim..(i + 1) * out_dim], &mut grads.streams[i]);
    }
}

#[derive(Clone, Debug)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: PmsmParams,
    /// Hinge state per triplet.
    pub active: Vec<bool>,
    pub embeddings: Vec<Vec<f64>>,
    /// Combined ReLU and hinge pattern, see [`ForwardCache::relu_signature`].
    pub signature: u64,
}

/// `(a, p, n)` index triples for a batch serialized as `a, p, n, a, p, n, ...`.
pub fn interleaved_triplets(n: usize) -> Vec<IndexTriplet> {
    (0..n)
        .map(|i| IndexTriplet {
            anchor: 3 * i,
            positive: 3 * i + 1,
            negative: 3 * i + 2,
        })
        .collect()
}

/// Summed hinge loss over `triplets` (indices into `batch`) and its gradient
/// with respect to every parameter.
pub fn loss_and_gradients(
    params: &PmsmParams,
    batch: &[Views],
    triplets: &[IndexTriplet],
    margin: f64,
    kind: DistanceKind,
) -> Result<LossAndGrads> {
    let mut embeddings = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for v in batch {
        let (e, c) = forward_pmsm_cached(params, v)?;
        embeddings.push(e);
        caches.push(c);
    }
    let out = triplet_loss_with_grad(&embeddings, triplets, margin, kind)?;
    let mut grads = params.zeros_like();
    for (c, d) in caches.iter().zip(&out.grads) {
        if d.iter().any(|&g| g != 0.0) {
            backward_pmsm(params, c, d, &mut grads);
        }
    }
    let mut signature = 0u64;
    for c in &caches {
        signature = signature.rotate_left(7) ^ c.relu_signature();
    }
    for &a in &out.active {
        signature = signature.rotate_left(1) ^ a as u64;
    }
    Ok(LossAndGrads {
        loss: out.loss,
        grads,
        active: out.active,
        embeddings,
        signature,
    })
}
