//! Channel-major activation tensors and the layer kernels used by the network.
//!
//! Every forward kernel has a matching backward kernel that accumulates into
//! caller-provided gradient buffers.

use crate::grid::Image;

/// Subtracted from every input intensity before the first layer.
pub(crate) const INPUT_CENTER: f64 = 0.5;

/// Activation volume stored channel-major: `data[(c * h + y) * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    /// Channel-major copy of `image` with intensities shifted from [0, 1] to
    /// [-0.5, 0.5]. Without the shift the first layer sees a large constant
    /// offset and SGD stalls on an all-background solution for hundreds of steps.
    pub fn from_image(image: &Image) -> Self {
        let (h, w, c) = (image.height(), image.width(), image.channels());
        let mut t = Tensor::zeros(c, h, w);
        for (i, px) in image.values().chunks_exact(c).enumerate() {
            for (ch, v) in px.iter().enumerate() {
                t.data[ch * h * w + i] = *v - INPUT_CENTER;
            }
        }
        t
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Splits along channels at `at`, the inverse of [`Tensor::concat`].
    pub fn split(self, at: usize) -> (Tensor, Tensor) {
        let n = self.h * self.w;
        let mut data = self.data;
        let tail = data.split_off(at * n);
        (
            Tensor {
                c: at,
                h: self.h,
                w: self.w,
                data,
            },
            Tensor {
                c: self.c - at,
                h: self.h,
                w: self.w,
                data: tail,
            },
        )
    }
}

/// Same-padded square convolution (`kernel` is 1 or 3) with bias.
pub(crate) fn conv_forward(input: &Tensor, weights: &[f64], bias: &[f64], kernel: usize) -> Tensor {
    let (h, w) = (input.h, input.w);
    let cout = bias.len();
    let cin = input.c;
    let kk = kernel * kernel;
    let pad = (kernel / 2) as isize;
    let mut out = Tensor::zeros(cout, h, w);
    for o in 0..cout {
        let out_plane = out.plane_mut(o);
        out_plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..cin {
            let in_plane = input.plane(i);
            let wbase = (o * cin + i) * kk;
            for ky in 0..kernel {
                let dy = ky as isize - pad;
                for kx in 0..kernel {
                    let dx = kx as isize - pad;
                    let wv = weights[wbase + ky * kernel + kx];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &in_plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst = &mut out_plane[y * w..(y + 1) * w];
                        let sx0 = (x0 as isize + dx) as usize;
                        for (d, s) in dst[x0..x1].iter_mut().zip(&src[sx0..sx0 + (x1 - x0)]) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Dot product with four independent partial sums, which lets the compiler vectorize it.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            lanes[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Backward pass of [`conv_forward`]. Accumulates weight and bias gradients and
/// returns the input gradient when `want_input` is set.
pub(crate) fn conv_backward(
    input: &Tensor,
    grad_out: &Tensor,
    weights: &[f64],
    kernel: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input: bool,
) -> Option<Tensor> {
    let (h, w) = (input.h, input.w);
    let cin = input.c;
    let cout = grad_out.c;
    let kk = kernel * kernel;
    let pad = (kernel / 2) as isize;
    let mut grad_in = want_input.then(|| Tensor::zeros(cin, h, w));
    for o in 0..cout {
        let go = grad_out.plane(o);
        grad_b[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let in_plane = input.plane(i);
            let wbase = (o * cin + i) * kk;
            for ky in 0..kernel {
                let dy = ky as isize - pad;
                for kx in 0..kernel {
                    let dx = kx as isize - pad;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let wv = weights[wbase + ky * kernel + kx];
                    let mut acc = 0.0;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &in_plane[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                        let g = &go[y * w + x0..y * w + x1];
                        acc += dot(g, src);
                        if let Some(gi) = grad_in.as_mut() {
                            let dst = &mut gi.plane_mut(i)
                                [sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    grad_w[wbase + ky * kernel + kx] += acc;
                }
            }
        }
    }
    grad_in
}

pub(crate) fn tanh_forward(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.tanh());
}

/// Turns a gradient w.r.t. `tanh` outputs into one w.r.t. its inputs.
pub(crate) fn tanh_backward(activated: &Tensor, grad: &mut Tensor) {
    for (g, a) in grad.data.iter_mut().zip(&activated.data) {
        *g *= 1.0 - a * a;
    }
}

/// 2x2 mean pooling.
pub(crate) fn avg_pool_forward(input: &Tensor) -> Tensor {
    let (h2, w2) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.c, h2, w2);
    for c in 0..input.c {
        let src = input.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h2 {
            let r0 = &src[2 * y * input.w..(2 * y + 1) * input.w];
            let r1 = &src[(2 * y + 1) * input.w..(2 * y + 2) * input.w];
            for x in 0..w2 {
                dst[y * w2 + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(grad_out: &Tensor) -> Tensor {
    let (h, w) = (grad_out.h * 2, grad_out.w * 2);
    let mut out = Tensor::zeros(grad_out.c, h, w);
    for c in 0..grad_out.c {
        let src = grad_out.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * grad_out.w + x / 2];
            }
        }
    }
    out
}

/// 2x nearest-neighbour upsampling.
pub(crate) fn upsample_forward(input: &Tensor) -> Tensor {
    let (h, w) = (input.h * 2, input.w * 2);
    let mut out = Tensor::zeros(input.c, h, w);
    for c in 0..input.c {
        let src = input.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * input.w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(grad_out: &Tensor) -> Tensor {
    let (h2, w2) = (grad_out.h / 2, grad_out.w / 2);
    let mut out = Tensor::zeros(grad_out.c, h2, w2);
    for c in 0..grad_out.c {
        let src = grad_out.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..grad_out.h {
            for x in 0..grad_out.w {
                dst[(y / 2) * w2 + x / 2] += src[y * grad_out.w + x];
            }
        }
    }
    out
}
