//! Dense CHW kernels for the streams: convolution, ReLU, global average pool,
//! linear layers, and their adjoints.

use super::arch::ConvSpec;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub side_in: usize,
    pub c_out: usize,
    pub side_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(spec: &ConvSpec, c_in: usize, side_in: usize) -> Self {
        Self {
            c_in,
            side_in,
            c_out: spec.out_channels,
            side_out: spec.output_side(side_in),
            k: spec.kernel,
            stride: spec.stride,
            pad: spec.padding,
        }
    }

    /// Output index range along one axis whose input tap `o*stride + tap - pad` is in bounds.
    #[inline]
    fn valid_range(&self, tap: usize) -> (usize, usize) {
        let lo = if tap >= self.pad {
            0
        } else {
            (self.pad - tap).div_ceil(self.stride)
        };
        // o*stride + tap - pad <= side_in - 1
        let limit = self.side_in + self.pad;
        let hi = if limit > tap {
            ((limit - tap - 1) / self.stride + 1).min(self.side_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (si, so) = (g.side_in, g.side_out);
    let plane_out = so * so;
    let mut out = vec![0.0; g.c_out * plane_out];
    for oc in 0..g.c_out {
        let o = &mut out[oc * plane_out..(oc + 1) * plane_out];
        o.fill(bias[oc]);
        for ic in 0..g.c_in {
            let inp = &input[ic * si * si..(ic + 1) * si * si];
            for ky in 0..g.k {
                let (oy0, oy1) = g.valid_range(ky);
                for kx in 0..g.k {
                    let w = weight[((oc * g.c_in + ic) * g.k + ky) * g.k + kx];
                    if w == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = g.valid_range(kx);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row_in = &inp[iy * si..(iy + 1) * si];
                        let row_out = &mut o[oy * so..(oy + 1) * so];
                        for ox in ox0..ox1 {
                            row_out[ox] += w * row_in[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let (si, so) = (g.side_in, g.side_out);
    let plane_out = so * so;
    let mut d_in = want_input_grad.then(|| vec![0.0; g.c_in * si * si]);
    for oc in 0..g.c_out {
        let dout = &d_out[oc * plane_out..(oc + 1) * plane_out];
        d_bias[oc] += dout.iter().sum::<f64>();
        for ic in 0..g.c_in {
            let inp = &input[ic * si * si..(ic + 1) * si * si];
            for ky in 0..g.k {
                let (oy0, oy1) = g.valid_range(ky);
                for kx in 0..g.k {
                    let widx = ((oc * g.c_in + ic) * g.k + ky) * g.k + kx;
                    let (ox0, ox1) = g.valid_range(kx);
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row_in = &inp[iy * si..(iy + 1) * si];
                        let row_d = &dout[oy * so..(oy + 1) * so];
                        for ox in ox0..ox1 {
                            acc += row_d[ox] * row_in[ox * g.stride + kx - g.pad];
                        }
                    }
                    d_weight[widx] += acc;
                    if let Some(d_in) = d_in.as_mut() {
                        let w = weight[widx];
                        if w == 0.0 {
                            continue;
                        }
                        let dplane = &mut d_in[ic * si * si..(ic + 1) * si * si];
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let row_d = &dout[oy * so..(oy + 1) * so];
                            let row_in = &mut dplane[iy * si..(iy + 1) * si];
                            for ox in ox0..ox1 {
                                row_in[ox * g.stride + kx - g.pad] += w * row_d[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` where the post-ReLU activation is not positive.
pub(crate) fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn global_avg_pool(x: &[f64], channels: usize) -> Vec<f64> {
    let plane = x.len() / channels;
    x.chunks_exact(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect()
}

/// `W x + b`, `W` row-major `out × in`.
pub(crate) fn linear(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            bias + w[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect()
}

/// Accumulates `dW += dy xᵀ`, `db += dy`; returns `Wᵀ dy`.
pub(crate) fn linear_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight definition of a padded, strided convolution.
    fn conv_naive(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.c_out * g.side_out * g.side_out];
        for oc in 0..g.c_out {
            for oy in 0..g.side_out {
                for ox in 0..g.side_out {
                    let mut acc = bias[oc];
                    for ic in 0..g.c_in {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.side_in as isize || ix >= g.side_in as isize {
                                    continue;
                                }
                                acc += weight[((oc * g.c_in + ic) * g.k + ky) * g.k + kx]
                                    * input[(ic * g.side_in + iy as usize) * g.side_in + ix as usize];
                            }
                        }
                    }
                    out[(oc * g.side_out + oy) * g.side_out + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, salt: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + salt) * 0.731).sin()).collect()
    }

    #[test]
    fn conv_matches_naive_for_several_geometries() {
        for (k, stride, pad, side) in [(3, 2, 1, 9), (3, 1, 1, 5), (1, 1, 0, 4), (5, 2, 2, 8), (3, 3, 0, 10)] {
            let spec = ConvSpec {
                out_channels: 3,
                kernel: k,
                stride,
                padding: pad,
            };
            let g = ConvGeom::new(&spec, 2, side);
            let x = pseudo(2 * side * side, 0.3);
            let w = pseudo(3 * 2 * k * k, 1.7);
            let b = pseudo(3, 4.1);
            let fast = conv_forward(&g, &x, &w, &b);
            let slow = conv_naive(&g, &x, &w, &b);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "k{k} s{stride} p{pad}");
            }
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <conv(x), dy> is linear in x and w, so its gradients are exact.
        let spec = ConvSpec {
            out_channels: 2,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let g = ConvGeom::new(&spec, 3, 7);
        let x = pseudo(3 * 49, 0.1);
        let w = pseudo(2 * 3 * 9, 2.2);
        let b = vec![0.0; 2];
        let dy = pseudo(2 * g.side_out * g.side_out, 5.0);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 2];
        let dx = conv_backward(&g, &x, &w, &dy, &mut dw, &mut db, true).unwrap();
        let dot = |y: &[f64]| y.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        for i in [0, 5, 40, 100, 146] {
            let mut e = vec![0.0; x.len()];
            e[i] = 1.0;
            let expect = dot(&conv_naive(&g, &e, &w, &b));
            assert!((dx[i] - expect).abs() < 1e-12);
        }
        for i in 0..w.len() {
            let mut e = vec![0.0; w.len()];
            e[i] = 1.0;
            let expect = dot(&conv_naive(&g, &x, &e, &b));
            assert!((dw[i] - expect).abs() < 1e-12);
        }
        assert!((db[0] - dy[..16].iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn linear_round_trip() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = linear(&w, &[0.5, -0.5], &[1.0, 0.0, -1.0]);
        assert_eq!(y, vec![-1.5, -2.5]);
        let mut dw = [0.0; 6];
        let mut db = [0.0; 2];
        let dx = linear_backward(&w, &[1.0, 0.0, -1.0], &[1.0, 2.0], &mut dw, &mut db);
        assert_eq!(dx, vec![9.0, 12.0, 15.0]);
        assert_eq!(dw, [1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(db, [1.0, 2.0]);
    }
}
