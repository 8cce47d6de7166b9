//! Reverse-mode differentiation over the real-pair representation of all
//! complex operations: a recording tape whose primitives cover the FFT
//! pair, spectrum crop/embed, elementwise complex arithmetic, the network
//! layers, and the scalar loss reductions.

use num_complex::Complex64;

use crate::error::{FpmError, Result};
use crate::field::{self, fft2_centered, ifft2_centered, ComplexField};
use crate::forward::MeasurementStack;
use crate::geometry::make_pupil;
use crate::losses::LossWeights;
use crate::lwgnet::{
    channel_fc, channel_moments, complex_conv2d, ctanh, ctanh_scale, instance_norm2d, LwgNetParams,
    ModelKind, Slot, IN_EPS,
};
use crate::solvers::initialize_object;

/// A tape value: a channel list of equally-sized complex fields. Scalars
/// are a single 1x1 channel; real quantities carry zero imaginary parts.
pub type Channels = Vec<ComplexField>;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Fft2 { inverse: bool },
    /// M x M window starting at (sy, sx) out of an n x n grid.
    Crop { sy: usize, sx: usize, m: usize },
    /// Adjoint placement of an M x M field into an n x n grid.
    Embed { sy: usize, sx: usize, n: usize },
    /// Elementwise complex product of two nodes.
    CMul,
    /// a + alpha * b with a real constant alpha.
    Axpy { alpha: f64 },
    /// |z|^2 into the real part.
    Intensity,
    /// |z| into the real part.
    Magnitude,
    /// atan2(im, re) into the real part; 0 at z = 0.
    Phase,
    /// Concatenate single-channel inputs into one multi-channel value.
    Stack,
    /// scale * sum over channels, down to one channel.
    SumChannels { scale: f64 },
    /// inputs: [x, kernels, bias].
    Conv { out_ch: usize, full: bool },
    /// inputs: [x, gamma, beta].
    InstanceNorm { eps: f64 },
    CTanh,
    /// inputs: [x, weights, bias]; per-pixel C -> 1 complex linear map.
    ChannelFc,
    /// Scalar mean of squared real parts over all channels and pixels.
    MeanSqRe,
    /// Scalar mean of |real part|.
    MeanAbsRe,
    /// Weighted sum of scalar nodes.
    WeightedSum { weights: Vec<f64> },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Channels,
    needs_grad: bool,
}

/// Append-only computation graph; inputs always precede consumers, so the
/// recorded graph is acyclic by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn scalar(v: f64) -> Channels {
    vec![ComplexField { height: 1, width: 1, data: vec![Complex64::new(v, 0.0)] }]
}

fn zeros_like(c: &Channels) -> Channels {
    c.iter().map(|f| ComplexField::zeros(f.height, f.width)).collect()
}

fn add_assign(acc: &mut Channels, inc: &Channels) {
    for (a, b) in acc.iter_mut().zip(inc) {
        for (x, y) in a.data.iter_mut().zip(&b.data) {
            *x += y;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Channels {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Channels) -> NodeId {
        let needs_grad = match op {
            Op::Leaf { trainable } => trainable,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node { op, inputs, value, needs_grad });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Channels, trainable: bool) -> NodeId {
        self.push(Op::Leaf { trainable }, vec![], value)
    }

    pub fn constant(&mut self, field: ComplexField) -> NodeId {
        self.leaf(vec![field], false)
    }

    pub fn fft2(&mut self, x: NodeId, inverse: bool) -> NodeId {
        let value = self.nodes[x]
            .value
            .iter()
            .map(|f| if inverse { ifft2_centered(f) } else { fft2_centered(f) })
            .collect();
        self.push(Op::Fft2 { inverse }, vec![x], value)
    }

    pub fn crop(&mut self, x: NodeId, sy: usize, sx: usize, m: usize) -> NodeId {
        let value = self.nodes[x]
            .value
            .iter()
            .map(|f| {
                let mut out = ComplexField::zeros(m, m);
                for y in 0..m {
                    let src = (sy + y) * f.width + sx;
                    out.data[y * m..(y + 1) * m].copy_from_slice(&f.data[src..src + m]);
                }
                out
            })
            .collect();
        self.push(Op::Crop { sy, sx, m }, vec![x], value)
    }

    pub fn embed(&mut self, x: NodeId, sy: usize, sx: usize, n: usize) -> NodeId {
        let value = self.nodes[x]
            .value
            .iter()
            .map(|f| {
                let m = f.height;
                let mut out = ComplexField::zeros(n, n);
                for y in 0..m {
                    let dst = (sy + y) * n + sx;
                    out.data[dst..dst + m].copy_from_slice(&f.data[y * m..(y + 1) * m]);
                }
                out
            })
            .collect();
        self.push(Op::Embed { sy, sx, n }, vec![x], value)
    }

    pub fn cmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x.cmul(y))
            .collect();
        self.push(Op::CMul, vec![a, b], value)
    }

    pub fn axpy(&mut self, a: NodeId, b: NodeId, alpha: f64) -> NodeId {
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x.axpy(alpha, y))
            .collect();
        self.push(Op::Axpy { alpha }, vec![a, b], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.axpy(a, b, 1.0)
    }

    pub fn intensity(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x]
            .value
            .iter()
            .map(|f| ComplexField {
                height: f.height,
                width: f.width,
                data: f.data.iter().map(|z| Complex64::new(z.norm_sqr(), 0.0)).collect(),
            })
            .collect();
        self.push(Op::Intensity, vec![x], value)
    }

    pub fn magnitude(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x]
            .value
            .iter()
            .map(|f| ComplexField {
                height: f.height,
                width: f.width,
                data: f.data.iter().map(|z| Complex64::new(z.norm(), 0.0)).collect(),
            })
            .collect();
        self.push(Op::Magnitude, vec![x], value)
    }

    pub fn phase(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x]
            .value
            .iter()
            .map(|f| ComplexField {
                height: f.height,
                width: f.width,
                data: f
                    .data
                    .iter()
                    .map(|z| {
                        let p = if z.norm_sqr() == 0.0 { 0.0 } else { z.im.atan2(z.re) };
                        Complex64::new(p, 0.0)
                    })
                    .collect(),
            })
            .collect();
        self.push(Op::Phase, vec![x], value)
    }

    pub fn stack(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        for &p in parts {
            value.extend(self.nodes[p].value.iter().cloned());
        }
        self.push(Op::Stack, parts.to_vec(), value)
    }

    pub fn sum_channels(&mut self, x: NodeId, scale: f64) -> NodeId {
        let chans = &self.nodes[x].value;
        let mut acc = ComplexField::zeros(chans[0].height, chans[0].width);
        for f in chans {
            acc = acc.add(f);
        }
        self.push(Op::SumChannels { scale }, vec![x], vec![acc.scale(scale)])
    }

    pub fn conv(&mut self, x: NodeId, kernels: NodeId, bias: NodeId, out_ch: usize, full: bool) -> Result<NodeId> {
        let value = complex_conv2d(
            &self.nodes[x].value,
            &self.nodes[kernels].value,
            &self.nodes[bias].value,
            out_ch,
            full,
        )?;
        Ok(self.push(Op::Conv { out_ch, full }, vec![x, kernels, bias], value))
    }

    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let value = instance_norm2d(
            &self.nodes[x].value,
            &self.nodes[gamma].value,
            &self.nodes[beta].value,
            eps,
        )?;
        Ok(self.push(Op::InstanceNorm { eps }, vec![x, gamma, beta], value))
    }

    pub fn ctanh(&mut self, x: NodeId) -> NodeId {
        let value = ctanh(&self.nodes[x].value);
        self.push(Op::CTanh, vec![x], value)
    }

    pub fn channel_fc(&mut self, x: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = channel_fc(
            &self.nodes[x].value,
            &self.nodes[weights].value,
            &self.nodes[bias].value[0],
        )?;
        Ok(self.push(Op::ChannelFc, vec![x, weights, bias], vec![value]))
    }

    pub fn mean_sq_re(&mut self, x: NodeId) -> NodeId {
        let chans = &self.nodes[x].value;
        let n: usize = chans.iter().map(|f| f.data.len()).sum();
        let total: f64 = chans.iter().flat_map(|f| f.data.iter()).map(|z| z.re * z.re).sum();
        self.push(Op::MeanSqRe, vec![x], scalar(total / n as f64))
    }

    pub fn mean_abs_re(&mut self, x: NodeId) -> NodeId {
        let chans = &self.nodes[x].value;
        let n: usize = chans.iter().map(|f| f.data.len()).sum();
        let total: f64 = chans.iter().flat_map(|f| f.data.iter()).map(|z| z.re.abs()).sum();
        self.push(Op::MeanAbsRe, vec![x], scalar(total / n as f64))
    }

    pub fn weighted_sum(&mut self, parts: &[NodeId], weights: &[f64]) -> NodeId {
        let total: f64 = parts
            .iter()
            .zip(weights)
            .map(|(&p, &w)| self.nodes[p].value[0].data[0].re * w)
            .sum();
        self.push(Op::WeightedSum { weights: weights.to_vec() }, parts.to_vec(), scalar(total))
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0].data[0].re
    }

    /// Reverse pass from a scalar root. Returns one cotangent per node,
    /// populated for trainable leaves (and None wherever no gradient
    /// flows). Intermediate cotangents are freed as the pass consumes
    /// them.
    pub fn backward(&self, root: NodeId) -> Result<Vec<Option<Channels>>> {
        let root_val = &self.nodes[root].value;
        if root_val.len() != 1 || root_val[0].data.len() != 1 {
            return Err(FpmError::Shape("backward requires a scalar root".into()));
        }
        let mut cot: Vec<Option<Channels>> = (0..self.nodes.len()).map(|_| None).collect();
        cot[root] = Some(scalar(1.0));

        for id in (0..=root).rev() {
            if !self.nodes[id].needs_grad {
                cot[id] = None;
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf { .. }) {
                continue; // keep harvested leaf cotangents
            }
            let d = match cot[id].take() {
                Some(d) => d,
                None => continue,
            };
            self.backprop_node(id, &d, &mut cot);
        }
        Ok(cot)
    }

    fn bump(&self, cot: &mut Vec<Option<Channels>>, node: NodeId, contribution: Channels) {
        if !self.nodes[node].needs_grad {
            return;
        }
        match &mut cot[node] {
            Some(acc) => add_assign(acc, &contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn backprop_node(&self, id: NodeId, d: &Channels, cot: &mut Vec<Option<Channels>>) {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Fft2 { inverse } => {
                // The centered transform is unitary, so the real-pair
                // adjoint is exactly the opposite-direction transform.
                let g = d
                    .iter()
                    .map(|f| if *inverse { fft2_centered(f) } else { ifft2_centered(f) })
                    .collect();
                self.bump(cot, ins[0], g);
            }
            Op::Crop { sy, sx, m } => {
                let src = &self.nodes[ins[0]].value;
                let n = src[0].height;
                let g = d
                    .iter()
                    .map(|f| {
                        let mut out = ComplexField::zeros(n, n);
                        for y in 0..*m {
                            let dst = (sy + y) * n + sx;
                            out.data[dst..dst + m].copy_from_slice(&f.data[y * m..(y + 1) * m]);
                        }
                        out
                    })
                    .collect();
                self.bump(cot, ins[0], g);
            }
            Op::Embed { sy, sx, n } => {
                let m = self.nodes[ins[0]].value[0].height;
                let g = d
                    .iter()
                    .map(|f| {
                        let mut out = ComplexField::zeros(m, m);
                        for y in 0..m {
                            let src = (sy + y) * n + sx;
                            out.data[y * m..(y + 1) * m].copy_from_slice(&f.data[src..src + m]);
                        }
                        out
                    })
                    .collect();
                self.bump(cot, ins[0], g);
            }
            Op::CMul => {
                let a = &self.nodes[ins[0]].value;
                let b = &self.nodes[ins[1]].value;
                if self.nodes[ins[0]].needs_grad {
                    let g = d.iter().zip(b).map(|(df, bf)| df.cmul(&bf.conj())).collect();
                    self.bump(cot, ins[0], g);
                }
                if self.nodes[ins[1]].needs_grad {
                    let g = d.iter().zip(a).map(|(df, af)| df.cmul(&af.conj())).collect();
                    self.bump(cot, ins[1], g);
                }
            }
            Op::Axpy { alpha } => {
                self.bump(cot, ins[0], d.clone());
                if self.nodes[ins[1]].needs_grad {
                    let g = d.iter().map(|f| f.scale(*alpha)).collect();
                    self.bump(cot, ins[1], g);
                }
            }
            Op::Intensity => {
                let z = &self.nodes[ins[0]].value;
                let g = d
                    .iter()
                    .zip(z)
                    .map(|(df, zf)| ComplexField {
                        height: zf.height,
                        width: zf.width,
                        data: df
                            .data
                            .iter()
                            .zip(&zf.data)
                            .map(|(dv, zv)| Complex64::new(2.0 * zv.re * dv.re, 2.0 * zv.im * dv.re))
                            .collect(),
                    })
                    .collect();
                self.bump(cot, ins[0], g);
            }
            Op::Magnitude => {
                let z = &self.nodes[ins[0]].value;
                let g = d
                    .iter()
                    .zip(z)
                    .map(|(df, zf)| ComplexField {
                        height: zf.height,
                        width: zf.width,
                        data: df
                            .data
                            .iter()
                            .zip(&zf.data)
                            .map(|(dv, zv)| {
                                let r = zv.norm();
                                if r == 0.0 {
                                    Complex64::new(0.0, 0.0)
                                } else {
                                    Complex64::new(dv.re * zv.re / r, dv.re * zv.im / r)
                                }
                            })
                            .collect(),
                    })
                    .collect();
                self.bump(cot, ins[0], g);
            }
            Op::Phase => {
                let z = &self.nodes[ins[0]].value;
                let g = d
                    .iter()
                    .zip(z)
                    .map(|(df, zf)| ComplexField {
                        height: zf.height,
                        width: zf.width,
                        data: df
                            .data
                            .iter()
                            .zip(&zf.data)
                            .map(|(dv, zv)| {
                                let r2 = zv.norm_sqr();
                                if r2 == 0.0 {
                                    Complex64::new(0.0, 0.0)
                                } else {
                                    Complex64::new(-dv.re * zv.im / r2, dv.re * zv.re / r2)
                                }
                            })
                            .collect(),
                    })
                    .collect();
                self.bump(cot, ins[0], g);
            }
            Op::Stack => {
                let mut offset = 0;
                for &p in ins {
                    let ch = self.nodes[p].value.len();
                    if self.nodes[p].needs_grad {
                        self.bump(cot, p, d[offset..offset + ch].to_vec());
                    }
                    offset += ch;
                }
            }
            Op::SumChannels { scale } => {
                let ch = self.nodes[ins[0]].value.len();
                let g: Channels = (0..ch).map(|_| d[0].scale(*scale)).collect();
                self.bump(cot, ins[0], g);
            }
            Op::Conv { out_ch, full } => {
                self.backprop_conv(ins, d, *out_ch, *full, cot);
            }
            Op::InstanceNorm { eps } => {
                self.backprop_instance_norm(ins, d, *eps, cot);
            }
            Op::CTanh => {
                let z = &self.nodes[ins[0]].value;
                let g = d
                    .iter()
                    .zip(z)
                    .map(|(df, zf)| ComplexField {
                        height: zf.height,
                        width: zf.width,
                        data: df
                            .data
                            .iter()
                            .zip(&zf.data)
                            .map(|(dv, zv)| {
                                let r = zv.norm();
                                let s = ctanh_scale(r);
                                // q = (d/dr)(tanh(r)/r) / r, finite at 0.
                                let q = if r < 1e-4 {
                                    -2.0 / 3.0 + 8.0 / 15.0 * r * r
                                } else {
                                    let t = r.tanh();
                                    ((1.0 - t * t) * r - t) / (r * r * r)
                                };
                                let (x, y) = (zv.re, zv.im);
                                Complex64::new(
                                    dv.re * (s + q * x * x) + dv.im * q * x * y,
                                    dv.re * q * x * y + dv.im * (s + q * y * y),
                                )
                            })
                            .collect(),
                    })
                    .collect();
                self.bump(cot, ins[0], g);
            }
            Op::ChannelFc => {
                let x = &self.nodes[ins[0]].value;
                let w = &self.nodes[ins[1]].value;
                let df = &d[0];
                if self.nodes[ins[0]].needs_grad {
                    let g: Channels = w
                        .iter()
                        .map(|wc| {
                            let wconj = wc.data[0].conj();
                            ComplexField {
                                height: df.height,
                                width: df.width,
                                data: df.data.iter().map(|dv| dv * wconj).collect(),
                            }
                        })
                        .collect();
                    self.bump(cot, ins[0], g);
                }
                if self.nodes[ins[1]].needs_grad {
                    let g: Channels = x
                        .iter()
                        .map(|xc| {
                            let acc: Complex64 =
                                df.data.iter().zip(&xc.data).map(|(dv, xv)| dv * xv.conj()).sum();
                            ComplexField { height: 1, width: 1, data: vec![acc] }
                        })
                        .collect();
                    self.bump(cot, ins[1], g);
                }
                if self.nodes[ins[2]].needs_grad {
                    let acc: Complex64 = df.data.iter().sum();
                    self.bump(cot, ins[2], vec![ComplexField { height: 1, width: 1, data: vec![acc] }]);
                }
            }
            Op::MeanSqRe => {
                let x = &self.nodes[ins[0]].value;
                let n: usize = x.iter().map(|f| f.data.len()).sum();
                let w = 2.0 * d[0].data[0].re / n as f64;
                let g = x
                    .iter()
                    .map(|f| ComplexField {
                        height: f.height,
                        width: f.width,
                        data: f.data.iter().map(|z| Complex64::new(w * z.re, 0.0)).collect(),
                    })
                    .collect();
                self.bump(cot, ins[0], g);
            }
            Op::MeanAbsRe => {
                let x = &self.nodes[ins[0]].value;
                let n: usize = x.iter().map(|f| f.data.len()).sum();
                let w = d[0].data[0].re / n as f64;
                let g = x
                    .iter()
                    .map(|f| ComplexField {
                        height: f.height,
                        width: f.width,
                        data: f
                            .data
                            .iter()
                            .map(|z| Complex64::new(w * z.re.signum() * (z.re != 0.0) as i32 as f64, 0.0))
                            .collect(),
                    })
                    .collect();
                self.bump(cot, ins[0], g);
            }
            Op::WeightedSum { weights } => {
                for (&p, &w) in ins.iter().zip(weights) {
                    if self.nodes[p].needs_grad {
                        self.bump(cot, p, scalar(w * d[0].data[0].re));
                    }
                }
            }
        }
    }

    fn backprop_conv(&self, ins: &[NodeId], d: &Channels, out_ch: usize, full: bool, cot: &mut Vec<Option<Channels>>) {
        let x = &self.nodes[ins[0]].value;
        let kernels = &self.nodes[ins[1]].value;
        let in_ch = x.len();
        let h = x[0].height;
        let w = x[0].width;

        if self.nodes[ins[0]].needs_grad {
            // dX is the cross-correlation of the output cotangent with the
            // 180-degree-rotated (and, for the full product, conjugated)
            // kernel; the split form keeps its decoupled structure.
            let mut gx = zeros_like(x);
            for o in 0..out_ch {
                let df = &d[o];
                for (i, gxi) in gx.iter_mut().enumerate() {
                    let kern = &kernels[o * in_ch + i];
                    let mut rot = [Complex64::new(0.0, 0.0); 9];
                    for (t, r) in rot.iter_mut().enumerate() {
                        let k = kern.data[8 - t];
                        *r = if full { k.conj() } else { k };
                    }
                    crate::lwgnet::conv_pair_accumulate(&mut gxi.data, &df.data, &rot, h, w, full);
                }
            }
            self.bump(cot, ins[0], gx);
        }

        if self.nodes[ins[1]].needs_grad {
            let mut gk: Channels = (0..out_ch * in_ch).map(|_| ComplexField::zeros(3, 3)).collect();
            let zero_row = vec![Complex64::new(0.0, 0.0); w];
            for o in 0..out_ch {
                let df = &d[o];
                for i in 0..in_ch {
                    let xi = &x[i];
                    let mut acc = [Complex64::new(0.0, 0.0); 9];
                    for y in 0..h {
                        let up = if y > 0 { &xi.data[(y - 1) * w..y * w] } else { &zero_row[..] };
                        let mid = &xi.data[y * w..(y + 1) * w];
                        let down = if y + 1 < h { &xi.data[(y + 1) * w..(y + 2) * w] } else { &zero_row[..] };
                        let d_row = &df.data[y * w..(y + 1) * w];
                        for xp in 0..w {
                            let dv = d_row[xp];
                            let mut tap = |slot: usize, z: Complex64| {
                                if full {
                                    acc[slot] += dv * z.conj();
                                } else {
                                    acc[slot].re += dv.re * z.re;
                                    acc[slot].im += dv.im * z.im;
                                }
                            };
                            if xp > 0 {
                                tap(0, up[xp - 1]);
                                tap(3, mid[xp - 1]);
                                tap(6, down[xp - 1]);
                            }
                            tap(1, up[xp]);
                            tap(4, mid[xp]);
                            tap(7, down[xp]);
                            if xp + 1 < w {
                                tap(2, up[xp + 1]);
                                tap(5, mid[xp + 1]);
                                tap(8, down[xp + 1]);
                            }
                        }
                    }
                    gk[o * in_ch + i].data.copy_from_slice(&acc);
                }
            }
            self.bump(cot, ins[1], gk);
        }

        if self.nodes[ins[2]].needs_grad {
            let g: Channels = (0..out_ch)
                .map(|o| {
                    let acc: Complex64 = d[o].data.iter().sum();
                    ComplexField { height: 1, width: 1, data: vec![acc] }
                })
                .collect();
            self.bump(cot, ins[2], g);
        }
    }

    fn backprop_instance_norm(&self, ins: &[NodeId], d: &Channels, eps: f64, cot: &mut Vec<Option<Channels>>) {
        let x = &self.nodes[ins[0]].value;
        let gamma = &self.nodes[ins[1]].value;
        let mut gx = if self.nodes[ins[0]].needs_grad { Some(zeros_like(x)) } else { None };
        let mut gg = if self.nodes[ins[1]].needs_grad {
            Some(vec![ComplexField::zeros(1, 1); gamma.len()])
        } else {
            None
        };
        let mut gb = if self.nodes[ins[2]].needs_grad {
            Some(vec![ComplexField::zeros(1, 1); gamma.len()])
        } else {
            None
        };

        for c in 0..x.len() {
            let xf = &x[c];
            let df = &d[c];
            let n = xf.data.len() as f64;
            let (mu_re, mu_im, var_re, var_im) = channel_moments(xf);
            let s_re = (var_re + eps).sqrt();
            let s_im = (var_im + eps).sqrt();
            let g = gamma[c].data[0];

            // Accumulate the three reductions per part in one pass.
            let mut sum_d = Complex64::new(0.0, 0.0);
            let mut sum_dxhat = Complex64::new(0.0, 0.0);
            for (zv, dv) in xf.data.iter().zip(&df.data) {
                let xhat_re = (zv.re - mu_re) / s_re;
                let xhat_im = (zv.im - mu_im) / s_im;
                sum_d += *dv;
                sum_dxhat += Complex64::new(dv.re * xhat_re, dv.im * xhat_im);
            }
            if let Some(gb) = &mut gb {
                gb[c].data[0] += sum_d;
            }
            if let Some(gg) = &mut gg {
                gg[c].data[0] += sum_dxhat;
            }
            if let Some(gx) = &mut gx {
                let mean_d = sum_d / n;
                let mean_dxhat = sum_dxhat / n;
                for ((zv, dv), gv) in xf.data.iter().zip(&df.data).zip(gx[c].data.iter_mut()) {
                    let xhat_re = (zv.re - mu_re) / s_re;
                    let xhat_im = (zv.im - mu_im) / s_im;
                    gv.re += g.re * (dv.re - mean_d.re - xhat_re * mean_dxhat.re) / s_re;
                    gv.im += g.im * (dv.im - mean_d.im - xhat_im * mean_dxhat.im) / s_im;
                }
            }
        }
        if let Some(gx) = gx {
            self.bump(cot, ins[0], gx);
        }
        if let Some(gg) = gg {
            self.bump(cot, ins[1], gg);
        }
        if let Some(gb) = gb {
            self.bump(cot, ins[2], gb);
        }
    }
}

/// A taped forward + loss build over one measurement stack.
pub struct LossGraph {
    pub tape: Tape,
    /// Trainable leaf ids in the canonical parameter-tensor order.
    pub param_ids: Vec<NodeId>,
    /// Network output field.
    pub output: NodeId,
    /// Scalar total-loss root.
    pub loss: NodeId,
}

/// Record the full unrolled forward pass plus the weighted loss against a
/// ground-truth field onto a fresh tape.
pub fn build_loss_graph(
    meas: &MeasurementStack,
    gt: &ComplexField,
    params: &LwgNetParams,
    weights: &LossWeights,
) -> Result<LossGraph> {
    let mut tape = Tape::new();
    let param_ids: Vec<NodeId> =
        params.tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let output = build_forward(&mut tape, meas, params, &param_ids)?;
    let loss = build_total_loss(&mut tape, output, gt, weights)?;
    Ok(LossGraph { tape, param_ids, output, loss })
}

/// Record only the forward pass (used by the taped-vs-eager equality test).
pub fn build_forward_graph(meas: &MeasurementStack, params: &LwgNetParams) -> Result<LossGraph> {
    let mut tape = Tape::new();
    let param_ids: Vec<NodeId> =
        params.tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let output = build_forward(&mut tape, meas, params, &param_ids)?;
    Ok(LossGraph { tape, param_ids, output, loss: output })
}

struct SweepConsts {
    pupil: NodeId,
    pupil_conj: NodeId,
    intensities: Vec<NodeId>,
    bounds: Vec<(usize, usize)>,
    n: usize,
    m: usize,
}

fn sweep_consts(tape: &mut Tape, meas: &MeasurementStack) -> Result<SweepConsts> {
    meas.validate()?;
    let g = &meas.geometry;
    let pupil_mask = make_pupil(g)?;
    let pupil = tape.constant(pupil_mask.values.clone());
    let pupil_conj = tape.constant(pupil_mask.values.conj());
    let mut intensities = Vec::with_capacity(meas.led_count());
    let mut bounds = Vec::with_capacity(meas.led_count());
    for l in 0..meas.led_count() {
        intensities.push(tape.constant(ComplexField::from_real(&meas.images[l])));
        bounds.push(field::window_bounds(meas.k_vector(l)?, g, g.obj_size_px)?);
    }
    Ok(SweepConsts { pupil, pupil_conj, intensities, bounds, n: g.obj_size_px, m: g.meas_size_px })
}

/// One per-LED gradient term: A_l^H{(|A_l{phi}|^2 - I_l) . A_l{phi}}.
fn taped_gradient_term(tape: &mut Tape, phi_spec: NodeId, consts: &SweepConsts, l: usize) -> NodeId {
    let (sy, sx) = consts.bounds[l];
    let window = tape.crop(phi_spec, sy, sx, consts.m);
    let masked = tape.cmul(window, consts.pupil);
    let low = tape.fft2(masked, true);
    let inten = tape.intensity(low);
    let diff = tape.axpy(inten, consts.intensities[l], -1.0);
    let weighted = tape.cmul(diff, low);
    let spec = tape.fft2(weighted, false);
    let corrected = tape.cmul(spec, consts.pupil_conj);
    let embedded = tape.embed(corrected, sy, sx, consts.n);
    tape.fft2(embedded, true)
}

fn taped_sweep(
    tape: &mut Tape,
    obj: NodeId,
    consts: &SweepConsts,
    eta: f64,
) -> (Vec<NodeId>, NodeId) {
    let mut phi = obj;
    let mut grads = Vec::with_capacity(consts.intensities.len());
    for l in 0..consts.intensities.len() {
        let phi_spec = tape.fft2(phi, false);
        let g = taped_gradient_term(tape, phi_spec, consts, l);
        phi = tape.axpy(phi, g, -eta);
        grads.push(g);
    }
    (grads, phi)
}

fn taped_regular_stack(tape: &mut Tape, obj: NodeId, consts: &SweepConsts) -> Vec<NodeId> {
    let spec = tape.fft2(obj, false);
    (0..consts.intensities.len())
        .map(|l| taped_gradient_term(tape, spec, consts, l))
        .collect()
}

fn taped_psi(
    tape: &mut Tape,
    input: NodeId,
    params: &LwgNetParams,
    param_ids: &[NodeId],
    stage: usize,
) -> Result<NodeId> {
    use crate::lwgnet::{slot_index, STAGE_TENSORS};
    let base = stage * STAGE_TENSORS;
    let id = |slot: Slot| param_ids[base + slot_index(slot)];
    let full = params.meta.full_complex_conv;
    let mut x = input;
    for layer in 0..3 {
        let (_, out_ch) = params.conv_dims(layer);
        x = tape.conv(x, id(Slot::ConvKernels(layer)), id(Slot::ConvBias(layer)), out_ch, full)?;
        x = tape.instance_norm(x, id(Slot::NormGamma(layer)), id(Slot::NormBeta(layer)), IN_EPS)?;
        x = tape.ctanh(x);
    }
    tape.channel_fc(x, id(Slot::FcWeights), id(Slot::FcBias))
}

fn build_forward(
    tape: &mut Tape,
    meas: &MeasurementStack,
    params: &LwgNetParams,
    param_ids: &[NodeId],
) -> Result<NodeId> {
    let consts = sweep_consts(tape, meas)?;
    let init = initialize_object(meas, &meas.geometry, params.meta.init_sqrt)?;
    let mut obj = tape.constant(init);
    let eta = params.meta.eta;
    match params.meta.kind {
        ModelKind::Lwgnet => {
            for stage in 0..params.meta.stages {
                let (grads, _) = taped_sweep(tape, obj, &consts, eta);
                let stacked = tape.stack(&grads);
                let update = taped_psi(tape, stacked, params, param_ids, stage)?;
                obj = tape.add(obj, update);
            }
        }
        ModelKind::RegularGradient => {
            for stage in 0..params.meta.stages {
                let grads = taped_regular_stack(tape, obj, &consts);
                let stacked = tape.stack(&grads);
                let update = taped_psi(tape, stacked, params, param_ids, stage)?;
                obj = tape.add(obj, update);
            }
        }
        ModelKind::PostNetwork => {
            let inv_l = 1.0 / consts.intensities.len() as f64;
            for _ in 0..params.meta.sweeps {
                let (grads, _) = taped_sweep(tape, obj, &consts, eta);
                let stacked = tape.stack(&grads);
                let mean = tape.sum_channels(stacked, inv_l);
                obj = tape.axpy(obj, mean, -eta);
            }
            for stage in 0..params.meta.stages {
                let update = taped_psi(tape, obj, params, param_ids, stage)?;
                obj = tape.add(obj, update);
            }
        }
    }
    Ok(obj)
}

/// Taped counterpart of the eager loss: lambda1 * (phase MSE + magnitude
/// MSE) + lambda2 * Fourier magnitude MAE against constant ground truth.
pub fn build_total_loss(
    tape: &mut Tape,
    pred: NodeId,
    gt: &ComplexField,
    weights: &LossWeights,
) -> Result<NodeId> {
    let pred_shape = {
        let v = &tape.value(pred)[0];
        (v.height, v.width)
    };
    if pred_shape != (gt.height, gt.width) {
        return Err(FpmError::Shape("loss: prediction and ground truth differ in shape".into()));
    }
    let gt_phase = tape.constant(ComplexField::from_real(&gt.phase()));
    let gt_mag = tape.constant(ComplexField::from_real(&gt.magnitude()));
    let gt_fmag = tape.constant(ComplexField::from_real(&fft2_centered(gt).magnitude()));

    let p_phase = tape.phase(pred);
    let phase_diff = tape.axpy(p_phase, gt_phase, -1.0);
    let phase_mse = tape.mean_sq_re(phase_diff);

    let p_mag = tape.magnitude(pred);
    let mag_diff = tape.axpy(p_mag, gt_mag, -1.0);
    let mag_mse = tape.mean_sq_re(mag_diff);

    let p_spec = tape.fft2(pred, false);
    let p_fmag = tape.magnitude(p_spec);
    let fmag_diff = tape.axpy(p_fmag, gt_fmag, -1.0);
    let fmae = tape.mean_abs_re(fmag_diff);

    Ok(tape.weighted_sum(&[phase_mse, mag_mse, fmae], &[weights.lambda1, weights.lambda1, weights.lambda2]))
}

/// Loss value and parameter gradients for one (stack, ground truth) pair.
pub fn loss_and_gradients(
    meas: &MeasurementStack,
    gt: &ComplexField,
    params: &LwgNetParams,
    weights: &LossWeights,
) -> Result<(f64, Vec<Channels>)> {
    let graph = build_loss_graph(meas, gt, params, weights)?;
    let loss = graph.tape.scalar_value(graph.loss);
    let mut cot = graph.tape.backward(graph.loss)?;
    let grads = graph
        .param_ids
        .iter()
        .map(|&id| cot[id].take().unwrap_or_else(|| zeros_like(graph.tape.value(id))))
        .collect();
    Ok((loss, grads))
}
