//! Per-element shallow tanh networks evaluated as batched layers.
//!
//! Every forward pass carries a first-order jet per point: the value and its
//! partial derivatives with respect to every input coordinate. Reverse mode
//! runs through the jet, so losses may depend on `∇u` as well as `u`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DgnnError, Result};

/// `tanh` through one `exp` away from the origin, where cancellation in
/// `1 − 2/(e^{2x} + 1)` costs no more than a couple of ulps.
#[inline]
pub fn fast_tanh(x: f64) -> f64 {
    if x.abs() < 0.35 {
        x.tanh()
    } else {
        let e = (2.0 * x.clamp(-20.0, 20.0)).exp();
        1.0 - 2.0 / (e + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    /// Number of input coordinates (space, then time).
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
}

impl NetArch {
    pub fn new(input_dim: usize, hidden_layers: usize, width: usize) -> Result<Self> {
        let a = Self { input_dim, hidden_layers, width };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.input_dim > 3 {
            return Err(DgnnError::InvalidArgument(format!("input dim {} not in 1..=3", self.input_dim)));
        }
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(DgnnError::InvalidArgument("need at least one hidden layer of positive width".into()));
        }
        Ok(())
    }

    /// `(out, in)` for every affine layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut d = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.input_dim;
        for _ in 0..self.hidden_layers {
            d.push((self.width, prev));
            prev = self.width;
        }
        d.push((1, prev));
        d
    }

    pub fn params_per_element(&self) -> usize {
        self.layer_dims().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Jet length per point (value plus one partial per input).
    pub fn jet(&self) -> usize {
        self.input_dim + 1
    }
}

/// `N` independent networks. Parameters are stored element-major: element
/// `e` owns `params[e * stride .. (e + 1) * stride]`, holding `W_j`
/// (row-major `out × in`) then `b_j` for every layer in order.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseNet {
    pub arch: NetArch,
    pub n_elements: usize,
    pub params: Vec<f64>,
    pub seed: u64,
    offsets: Vec<(usize, usize)>,
    /// Per-element input map `x̃ = (x − shift) · scale`, `N × d` each;
    /// identity unless set.
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
}

/// Cached jets of one element's forward pass. Columns are `point * jet + c`.
#[derive(Debug, Clone)]
pub struct ElementTape {
    pub n_points: usize,
    input: DMatrix<f64>,
    pre: Vec<DMatrix<f64>>,
    post: Vec<DMatrix<f64>>,
    /// Output jets, `[u, ∂u/∂x_1, …]` per point.
    pub output: Vec<f64>,
}

impl ElementTape {
    pub fn value(&self, p: usize) -> f64 {
        self.output[p * self.jet()]
    }

    pub fn jet(&self) -> usize {
        self.input.nrows() + 1
    }
}

#[derive(Debug, Clone)]
pub struct GradientTape {
    pub elements: Vec<ElementTape>,
    n_params: usize,
}

impl PiecewiseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn init(n_elements: usize, arch: NetArch, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(n_elements, arch)?;
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = arch.layer_dims();
        let stride = arch.params_per_element();
        for e in 0..n_elements {
            for (l, &(o, i)) in dims.iter().enumerate() {
                let limit = (6.0 / (o + i) as f64).sqrt();
                let w0 = e * stride + net.offsets[l].0;
                for v in &mut net.params[w0..w0 + o * i] {
                    *v = rng.gen_range(-limit..limit);
                }
            }
        }
        Ok(net)
    }

    pub fn zeros(n_elements: usize, arch: NetArch) -> Result<Self> {
        arch.validate()?;
        if n_elements == 0 {
            return Err(DgnnError::InvalidArgument("network needs at least one element".into()));
        }
        let mut offsets = Vec::new();
        let mut at = 0;
        for (o, i) in arch.layer_dims() {
            offsets.push((at, at + o * i));
            at += o * i + o;
        }
        let params = vec![0.0; n_elements * at];
        let d = arch.input_dim;
        Ok(Self {
            arch,
            n_elements,
            params,
            seed: 0,
            offsets,
            input_shift: vec![0.0; n_elements * d],
            input_scale: vec![1.0; n_elements * d],
        })
    }

    /// Feeds element `e` the coordinates `(x − shift) · scale` instead of
    /// `x`; output partials stay with respect to `x`.
    pub fn set_input_map(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        let n = self.n_elements * self.arch.input_dim;
        if shift.len() != n || scale.len() != n {
            return Err(DgnnError::ShapeMismatch(format!("input map needs {n} entries")));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s != 0.0)) || shift.iter().any(|s| !s.is_finite()) {
            return Err(DgnnError::InvalidArgument("input map must be finite with non-zero scales".into()));
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    pub fn input_map(&self) -> (&[f64], &[f64]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn has_input_map(&self) -> bool {
        self.input_shift.iter().any(|v| *v != 0.0) || self.input_scale.iter().any(|v| *v != 1.0)
    }

    pub fn stride(&self) -> usize {
        self.arch.params_per_element()
    }

    pub fn element_params(&self, e: usize) -> &[f64] {
        let s = self.stride();
        &self.params[e * s..(e + 1) * s]
    }

    /// Batched shapes `[N, out, in]` and `[N, out]` for each layer.
    pub fn layer_shapes(&self) -> Vec<([usize; 3], [usize; 2])> {
        self.arch.layer_dims().iter().map(|&(o, i)| ([self.n_elements, o, i], [self.n_elements, o])).collect()
    }

    fn weight(&self, e: usize, l: usize) -> DMatrix<f64> {
        let (o, i) = self.arch.layer_dims()[l];
        let p = self.element_params(e);
        let w0 = self.offsets[l].0;
        DMatrix::from_row_slice(o, i, &p[w0..w0 + o * i])
    }

    fn bias(&self, e: usize, l: usize) -> &[f64] {
        let (o, _) = self.arch.layer_dims()[l];
        let b0 = self.offsets[l].1;
        &self.element_params(e)[b0..b0 + o]
    }

    /// Forward pass of element `e` on points stored row-major (`P × d`).
    pub fn forward_element(&self, e: usize, points: &[f64]) -> Result<ElementTape> {
        let d = self.arch.input_dim;
        if e >= self.n_elements {
            return Err(DgnnError::ShapeMismatch(format!("element {e} out of range")));
        }
        if points.len() % d != 0 {
            return Err(DgnnError::ShapeMismatch(format!("{} coordinates is not a multiple of {d}", points.len())));
        }
        let np = points.len() / d;
        let j = d + 1;
        let shift = &self.input_shift[e * d..(e + 1) * d];
        let scale = &self.input_scale[e * d..(e + 1) * d];
        let mut input = DMatrix::zeros(d, np * j);
        for p in 0..np {
            for i in 0..d {
                input[(i, p * j)] = (points[p * d + i] - shift[i]) * scale[i];
                input[(i, p * j + 1 + i)] = scale[i];
            }
        }
        let nl = self.arch.hidden_layers;
        let mut pre = Vec::with_capacity(nl);
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(nl);
        for l in 0..nl {
            let w = self.weight(e, l);
            let mut z = if l == 0 { &w * &input } else { &w * &post[l - 1] };
            let b = self.bias(e, l);
            let h = z.nrows();
            let mut a = DMatrix::zeros(h, z.ncols());
            for p in 0..np {
                let c0 = p * j;
                let zs = &mut z.as_mut_slice()[c0 * h..(c0 + j) * h];
                let asl = &mut a.as_mut_slice()[c0 * h..(c0 + j) * h];
                let (z0, zc) = zs.split_at_mut(h);
                let (a0, ac) = asl.split_at_mut(h);
                for o in 0..h {
                    z0[o] += b[o];
                    let v = fast_tanh(z0[o]);
                    a0[o] = v;
                    let s = 1.0 - v * v;
                    for c in 0..j - 1 {
                        ac[c * h + o] = s * zc[c * h + o];
                    }
                }
            }
            pre.push(z);
            post.push(a);
        }
        let w = self.weight(e, nl);
        let out = &w * &post[nl - 1];
        let b = self.bias(e, nl)[0];
        let mut output: Vec<f64> = out.iter().copied().collect();
        for p in 0..np {
            output[p * j] += b;
        }
        Ok(ElementTape { n_points: np, input, pre, post, output })
    }

    /// Batched forward over one point group per element.
    pub fn forward<P: AsRef<[f64]> + Sync>(&self, points: &[P]) -> Result<(Vec<Vec<f64>>, GradientTape)> {
        if points.len() != self.n_elements {
            return Err(DgnnError::ShapeMismatch(format!("{} point groups for {} elements", points.len(), self.n_elements)));
        }
        let elements: Vec<ElementTape> =
            points.par_iter().enumerate().map(|(e, p)| self.forward_element(e, p.as_ref())).collect::<Result<_>>()?;
        let values = elements.iter().map(|t| (0..t.n_points).map(|p| t.value(p)).collect()).collect();
        Ok((values, GradientTape { elements, n_params: self.params.len() }))
    }

    fn check_tape(&self, tape: &GradientTape) -> Result<()> {
        if tape.n_params != self.params.len() || tape.elements.len() != self.n_elements {
            return Err(DgnnError::ShapeMismatch("tape does not belong to this network".into()));
        }
        Ok(())
    }

    /// Input gradients `P × d` per element.
    pub fn input_gradient(&self, tape: &GradientTape) -> Result<Vec<Vec<f64>>> {
        self.check_tape(tape)?;
        let d = self.arch.input_dim;
        Ok(tape
            .elements
            .iter()
            .map(|t| {
                let j = t.jet();
                (0..t.n_points).flat_map(|p| t.output[p * j + 1..p * j + 1 + d].iter().copied()).collect()
            })
            .collect())
    }

    /// Adds `∂L/∂θ_e` into `grad` (this element's slice) given cotangents
    /// on the output jet (`P × (d + 1)`).
    pub fn backward_element(&self, e: usize, t: &ElementTape, cot: &[f64], grad: &mut [f64]) -> Result<()> {
        let j = t.jet();
        let np = t.n_points;
        if cot.len() != np * j || grad.len() != self.stride() {
            return Err(DgnnError::ShapeMismatch(format!(
                "cotangent {} (want {}), gradient slice {} (want {})",
                cot.len(),
                np * j,
                grad.len(),
                self.stride()
            )));
        }
        let nl = self.arch.hidden_layers;
        let ubar = DMatrix::from_row_slice(1, np * j, cot);
        let (wo, bo) = self.offsets[nl];
        let last = &t.post[nl - 1];
        let gw = &ubar * last.transpose();
        for (k, v) in gw.iter().enumerate() {
            grad[wo + k] += v;
        }
        grad[bo] += (0..np).map(|p| cot[p * j]).sum::<f64>();
        let mut abar = self.weight(e, nl).transpose() * &ubar;
        for l in (0..nl).rev() {
            let z = &t.pre[l];
            let a = &t.post[l];
            let h = z.nrows();
            let mut zbar = DMatrix::zeros(h, np * j);
            for p in 0..np {
                let c0 = p * j;
                let rng = c0 * h..(c0 + j) * h;
                let (zs, asl, ab) = (&z.as_slice()[rng.clone()], &a.as_slice()[rng.clone()], &abar.as_slice()[rng.clone()]);
                let zb = &mut zbar.as_mut_slice()[rng];
                for o in 0..h {
                    let v = asl[o];
                    let s = 1.0 - v * v;
                    let mut acc = 0.0;
                    for c in 1..j {
                        let k = c * h + o;
                        zb[k] = s * ab[k];
                        acc += ab[k] * zs[k];
                    }
                    zb[o] = s * ab[o] - 2.0 * v * s * acc;
                }
            }
            let prev = if l == 0 { &t.input } else { &t.post[l - 1] };
            let gw = &zbar * prev.transpose();
            let (w0, b0) = self.offsets[l];
            let cols = prev.nrows();
            for o in 0..h {
                for k in 0..cols {
                    grad[w0 + o * cols + k] += gw[(o, k)];
                }
                grad[b0 + o] += (0..np).map(|p| zbar[(o, p * j)]).sum::<f64>();
            }
            if l > 0 {
                abar = self.weight(e, l).transpose() * &zbar;
            }
        }
        Ok(())
    }

    /// Full parameter gradient from per-element output-jet cotangents.
    pub fn parameter_gradient(&self, tape: &GradientTape, cotangents: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_tape(tape)?;
        if cotangents.len() != self.n_elements {
            return Err(DgnnError::ShapeMismatch("one cotangent group per element required".into()));
        }
        let stride = self.stride();
        let mut grad = vec![0.0; self.params.len()];
        grad.par_chunks_mut(stride).enumerate().try_for_each(|(e, g)| {
            self.backward_element(e, &tape.elements[e], &cotangents[e], g)
        })?;
        Ok(grad)
    }

    /// Plain single-network evaluation of element `e` at one point; the
    /// reference for the batched path.
    pub fn eval_point(&self, e: usize, x: &[f64]) -> f64 {
        let dims = self.arch.layer_dims();
        let p = self.element_params(e);
        let d = self.arch.input_dim;
        let mut h: Vec<f64> =
            (0..d).map(|i| (x[i] - self.input_shift[e * d + i]) * self.input_scale[e * d + i]).collect();
        for (l, &(o, i)) in dims.iter().enumerate() {
            let (w0, b0) = self.offsets[l];
            let mut z: Vec<f64> = (0..o).map(|r| p[b0 + r] + (0..i).map(|k| p[w0 + r * i + k] * h[k]).sum::<f64>()).collect();
            if l + 1 < dims.len() {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            h = z;
        }
        h[0]
    }

    /// Parameters of layer `l` in batched order: `W` as `[N, out, in]`, then `b` as `[N, out]`.
    pub fn layer_arrays(&self, l: usize) -> (Vec<f64>, Vec<f64>) {
        let (o, i) = self.arch.layer_dims()[l];
        let (w0, b0) = self.offsets[l];
        let mut w = Vec::with_capacity(self.n_elements * o * i);
        let mut b = Vec::with_capacity(self.n_elements * o);
        for e in 0..self.n_elements {
            let p = self.element_params(e);
            w.extend_from_slice(&p[w0..w0 + o * i]);
            b.extend_from_slice(&p[b0..b0 + o]);
        }
        (w, b)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DGNNCKPT";

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub format: String,
    pub arch: NetArch,
    pub n_elements: usize,
    pub seed: u64,
    pub iteration: usize,
    /// `[[N, out, in], [N, out]]` per layer in file order.
    pub shapes: Vec<Vec<usize>>,
    pub n_values: usize,
    #[serde(default)]
    pub config: serde_json::Value,
    /// Element input map (`N × d` each); absent means identity.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_shift: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_scale: Vec<f64>,
}

/// Layout: 8-byte magic `DGNNCKPT`, u64 LE header length, UTF-8 JSON header,
/// then `n_values` little-endian f64: for each layer its `W [N, out, in]`
/// followed by `b [N, out]`, all row-major.
pub fn write_checkpoint(path: &Path, net: &PiecewiseNet, iteration: usize, config: serde_json::Value) -> Result<()> {
    let mut shapes = Vec::new();
    for ([n, o, i], [_, _]) in net.layer_shapes() {
        shapes.push(vec![n, o, i]);
        shapes.push(vec![n, o]);
    }
    let header = CheckpointHeader {
        format: "dgnn-checkpoint-v1".into(),
        arch: net.arch,
        n_elements: net.n_elements,
        seed: net.seed,
        iteration,
        shapes,
        n_values: net.params.len(),
        config,
        input_shift: if net.has_input_map() { net.input_shift.clone() } else { Vec::new() },
        input_scale: if net.has_input_map() { net.input_scale.clone() } else { Vec::new() },
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * net.params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for l in 0..=net.arch.hidden_layers {
        let (w, b) = net.layer_arrays(l);
        for v in w.iter().chain(&b) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(PiecewiseNet, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| DgnnError::Parse(format!("checkpoint {}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen])?;
    let mut net = PiecewiseNet::zeros(header.n_elements, header.arch)?;
    net.seed = header.seed;
    if !header.input_shift.is_empty() || !header.input_scale.is_empty() {
        net.set_input_map(header.input_shift.clone(), header.input_scale.clone()).map_err(|e| bad(&e.to_string()))?;
    }
    let body = &bytes[16 + hlen..];
    if header.n_values != net.params.len() || body.len() != 8 * net.params.len() {
        return Err(bad("parameter count does not match architecture"));
    }
    let mut vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let stride = net.stride();
    for l in 0..=header.arch.hidden_layers {
        let (o, i) = header.arch.layer_dims()[l];
        let (w0, b0) = net.offsets[l];
        for e in 0..net.n_elements {
            for k in 0..o * i {
                net.params[e * stride + w0 + k] = vals.next().unwrap();
            }
        }
        for e in 0..net.n_elements {
            for k in 0..o {
                net.params[e * stride + b0 + k] = vals.next().unwrap();
            }
        }
    }
    Ok((net, header))
}
