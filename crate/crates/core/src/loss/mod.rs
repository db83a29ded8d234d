//! Weak-form training objective.
//!
//! The pipeline has three stages: evaluate the trial field's jets (value and
//! input gradient) at every cached point, compute residuals, penalties and
//! their cotangents on those jets, then pull the cotangents back through the
//! network. The middle stage does not care where the jets came from, which
//! lets analytic fields stand in for the network.

mod cache;

pub use cache::{
    time_grid, AssemblyCache, CacheSpec, Convection, ElementData, Face, PdeCoefficients, SpaceFn, SpaceTimeFn,
};

use serde::Serialize;

use crate::error::{DgnnError, Result};
use crate::geometry::{EdgeKind, Point2};
use crate::net::PiecewiseNet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossOptions {
    /// `(σ₀, σ₁, σ₂)` weighting `L_eq`, `L_ic`, `L_penalty`.
    pub sigma: [f64; 3],
    /// Number of element residuals kept in the objective; `None` keeps all.
    pub top_k: Option<usize>,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { sigma: [1.0; 3], top_k: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// `L_{E_i} = Σ_j τ_j Σ_b R_{ijb}²` for every element.
    pub element_losses: Vec<f64>,
    /// Sum over all elements.
    pub l_eq: f64,
    /// Sum over the selected elements, the part entering `total`.
    pub l_eq_selected: f64,
    pub l_penalty: f64,
    /// Share of `l_penalty` from periodic pairings.
    pub l_periodic: f64,
    pub l_ic: f64,
    pub sigma: [f64; 3],
    pub total: f64,
    /// Selected elements, largest loss first.
    pub selected: Vec<usize>,
}

impl LossBreakdown {
    pub fn recombine(&self) -> f64 {
        self.sigma[0] * self.l_eq_selected + self.sigma[1] * self.l_ic + self.sigma[2] * self.l_penalty
    }

    /// `(loss, element)` of the worst element.
    pub fn max_element(&self) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &l) in self.element_losses.iter().enumerate() {
            if l > best.0 || l.is_nan() {
                best = (l, i);
            }
        }
        best
    }
}

/// `½(f_own + f_other) − c (u_own − u_other)`.
pub fn numeric_flux(f_own: f64, f_other: f64, u_own: f64, u_other: f64, c: f64) -> f64 {
    0.5 * (f_own + f_other) - c * (u_own - u_other)
}

/// The state on the far side of a face.
#[derive(Debug, Clone, Copy)]
pub enum OtherTrace<'a> {
    /// Neighbour jet `[u, ∇u…]`.
    Element(&'a [f64]),
    /// Dirichlet value.
    Boundary(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatTrace {
    pub u_avg: f64,
    /// `u_own − u_other`, with `g` as the other state on Dirichlet faces.
    pub u_jump: f64,
    /// Hatted normal flux `(D∇u − F(u))^ · n` seen from the owning side.
    pub flux: f64,
}

fn normal_flux(coeffs: &PdeCoefficients, jet: &[f64], ds: usize, n: Point2) -> f64 {
    let (f, _) = coeffs.convection.eval(jet[0]);
    (0..ds).map(|k| (coeffs.diffusion * jet[1 + k] - f[k]) * n[k]).sum()
}

/// Numerical flux on one face point. `own` is the jet of the element whose
/// outward normal is `n`.
pub fn flux_trace(coeffs: &PdeCoefficients, ds: usize, n: Point2, own: &[f64], other: OtherTrace) -> HatTrace {
    let c = coeffs.jump_coefficient;
    match other {
        OtherTrace::Element(o) => HatTrace {
            u_avg: 0.5 * (own[0] + o[0]),
            u_jump: own[0] - o[0],
            flux: numeric_flux(normal_flux(coeffs, own, ds, n), normal_flux(coeffs, o, ds, n), own[0], o[0], c),
        },
        OtherTrace::Boundary(g) => {
            let (fg, _) = coeffs.convection.eval(g);
            let diff: f64 = (0..ds).map(|k| (coeffs.diffusion * own[1 + k] - fg[k]) * n[k]).sum();
            HatTrace { u_avg: g, u_jump: own[0] - g, flux: diff - c * (own[0] - g) }
        }
    }
}

/// Partials of `flux_trace(..).flux` with respect to the own and other jets
/// (value then spatial gradient).
fn flux_partials(coeffs: &PdeCoefficients, ds: usize, n: Point2, own: &[f64], other: OtherTrace) -> ([f64; 3], [f64; 3]) {
    let c = coeffs.jump_coefficient;
    let d = coeffs.diffusion;
    let mut po = [0.0; 3];
    let mut pn = [0.0; 3];
    match other {
        OtherTrace::Element(o) => {
            let (_, fo) = coeffs.convection.eval(own[0]);
            let (_, fn_) = coeffs.convection.eval(o[0]);
            let dot = |v: Point2| (0..ds).map(|k| v[k] * n[k]).sum::<f64>();
            po[0] = -0.5 * dot(fo) - c;
            pn[0] = -0.5 * dot(fn_) + c;
            for k in 0..ds {
                po[1 + k] = 0.5 * d * n[k];
                pn[1 + k] = 0.5 * d * n[k];
            }
        }
        OtherTrace::Boundary(_) => {
            po[0] = -c;
            for k in 0..ds {
                po[1 + k] = d * n[k];
            }
        }
    }
    (po, pn)
}

/// Face slot seen from element `e`: the owning-side normal, the other trace
/// location if any, and the face.
struct SlotView<'a> {
    face: &'a Face,
    normal: Point2,
    other: Option<(usize, usize)>,
}

fn slot_view(cache: &AssemblyCache, e: usize, slot: usize) -> SlotView<'_> {
    let (fi, is_owner) = cache.elements[e].faces[slot];
    let face = &cache.faces[fi];
    if is_owner {
        SlotView { face, normal: face.normal, other: face.neighbor }
    } else {
        SlotView { face, normal: [-face.normal[0], -face.normal[1]], other: Some((face.owner, face.owner_slot)) }
    }
}

fn point_jet<'a>(jets: &[&'a [f64]], j_len: usize, e: usize, idx: usize) -> &'a [f64] {
    &jets[e][idx * j_len..(idx + 1) * j_len]
}

fn check_jets(cache: &AssemblyCache, jets: &[&[f64]]) -> Result<()> {
    if jets.len() != cache.n_elements() {
        return Err(DgnnError::ShapeMismatch(format!("{} jet groups for {} elements", jets.len(), cache.n_elements())));
    }
    let jl = cache.jet();
    for (e, j) in jets.iter().enumerate() {
        if j.len() != cache.elements[e].n_points() * jl {
            return Err(DgnnError::ShapeMismatch(format!("element {e}: jet length {} (want {})", j.len(), cache.elements[e].n_points() * jl)));
        }
    }
    Ok(())
}

/// Residual vector `R_b`, one entry per test function, of element `e` at
/// time node `j`.
pub fn element_residual(cache: &AssemblyCache, coeffs: &PdeCoefficients, jets: &[&[f64]], e: usize, j: usize) -> Vec<f64> {
    let el = &cache.elements[e];
    let ds = cache.spatial_dim;
    let jl = cache.jet();
    let nb = cache.n_basis;
    let nq = el.n_volume();
    let mut r = vec![0.0; nb];
    for q in 0..nq {
        let u = point_jet(jets, jl, e, el.vol_index(j, q));
        let (f, _) = coeffs.convection.eval(u[0]);
        let w = el.weights[q];
        let src = el.source[j * nq + q];
        let ut = if cache.transient { u[1 + ds] } else { 0.0 };
        for (b, rb) in r.iter_mut().enumerate() {
            let p = el.test_values[b * nq + q];
            let gp = el.test_grads[b * nq + q];
            let mut v = ut * p - src * p;
            for k in 0..ds {
                v += coeffs.diffusion * u[1 + k] * gp[k] - gp[k] * f[k];
            }
            *rb += w * v;
        }
    }
    for slot in 0..el.faces.len() {
        let sv = slot_view(cache, e, slot);
        let ns = sv.face.len();
        let tests = &el.face_tests[slot];
        for s in 0..ns {
            let own = point_jet(jets, jl, e, el.face_index(slot, ns, j, s));
            let other = match sv.other {
                Some((oe, os)) => OtherTrace::Element(point_jet(jets, jl, oe, cache.elements[oe].face_index(os, ns, j, s))),
                None => OtherTrace::Boundary(sv.face.dirichlet[j * ns + s]),
            };
            let g = flux_trace(coeffs, ds, sv.normal, own, other).flux;
            let w = sv.face.weights[s];
            for (b, rb) in r.iter_mut().enumerate() {
                *rb -= w * g * tests[b * ns + s];
            }
        }
    }
    r
}

/// `(L_penalty, periodic share)`: squared value and spatial-gradient jumps at
/// every face point and time node; Dirichlet faces compare values with `g`.
pub fn penalty_loss(cache: &AssemblyCache, jets: &[&[f64]]) -> (f64, f64) {
    let mut total = 0.0;
    let mut periodic = 0.0;
    let ds = cache.spatial_dim;
    let jl = cache.jet();
    for face in &cache.faces {
        let ns = face.len();
        let own_el = &cache.elements[face.owner];
        let mut part = 0.0;
        for j in 0..cache.time_nodes.len() {
            for s in 0..ns {
                let u = point_jet(jets, jl, face.owner, own_el.face_index(face.owner_slot, ns, j, s));
                match face.neighbor {
                    Some((r, rs)) => {
                        let v = point_jet(jets, jl, r, cache.elements[r].face_index(rs, ns, j, s));
                        part += (u[0] - v[0]).powi(2);
                        for k in 0..ds {
                            part += (u[1 + k] - v[1 + k]).powi(2);
                        }
                    }
                    None => part += (u[0] - face.dirichlet[j * ns + s]).powi(2),
                }
            }
        }
        total += part;
        if face.kind == EdgeKind::Periodic {
            periodic += part;
        }
    }
    (total, periodic)
}

/// Plain sum of squared initial misfits at the volume points.
pub fn initial_loss(cache: &AssemblyCache, jets: &[&[f64]]) -> Result<f64> {
    if !cache.transient {
        return Err(DgnnError::InvalidArgument("initial loss requested for a stationary problem".into()));
    }
    let jl = cache.jet();
    let mut s = 0.0;
    for (e, el) in cache.elements.iter().enumerate() {
        for (q, u0) in el.initial.iter().enumerate() {
            s += (point_jet(jets, jl, e, el.ic_index(q))[0] - u0).powi(2);
        }
    }
    Ok(s)
}

/// Indices of the `k` largest losses, largest first (ties by index).
pub fn top_k(losses: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > losses.len() {
        return Err(DgnnError::InvalidArgument(format!("top-K with K = {k} and {} elements", losses.len())));
    }
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Loss on precomputed jets with optional cotangents on every jet entry.
///
/// `selection` overrides the top-K choice (used to freeze it during a line
/// search).
pub fn evaluate_jets(
    cache: &AssemblyCache,
    coeffs: &PdeCoefficients,
    jets: &[&[f64]],
    opts: &LossOptions,
    selection: Option<&[usize]>,
    want_cotangents: bool,
) -> Result<(LossBreakdown, Option<Vec<Vec<f64>>>)> {
    check_jets(cache, jets)?;
    let n = cache.n_elements();
    let nt = cache.time_nodes.len();
    let residuals: Vec<Vec<Vec<f64>>> =
        (0..n).map(|e| (0..nt).map(|j| element_residual(cache, coeffs, jets, e, j)).collect()).collect();
    let element_losses: Vec<f64> = residuals
        .iter()
        .map(|rs| rs.iter().zip(&cache.time_weights).map(|(r, tw)| tw * r.iter().map(|v| v * v).sum::<f64>()).sum())
        .collect();
    let selected = match selection {
        Some(s) => {
            if s.iter().any(|&e| e >= n) {
                return Err(DgnnError::InvalidArgument("selection references a missing element".into()));
            }
            s.to_vec()
        }
        None => top_k(&element_losses, opts.top_k.unwrap_or(n))?,
    };
    let l_eq: f64 = element_losses.iter().sum();
    let l_eq_selected: f64 = selected.iter().map(|&e| element_losses[e]).sum();
    let (l_penalty, l_periodic) = penalty_loss(cache, jets);
    let l_ic = if cache.transient { initial_loss(cache, jets)? } else { 0.0 };
    let sigma = opts.sigma;
    let mut br = LossBreakdown {
        element_losses,
        l_eq,
        l_eq_selected,
        l_penalty,
        l_periodic,
        l_ic,
        sigma,
        total: 0.0,
        selected,
    };
    br.total = br.recombine();
    if !want_cotangents {
        return Ok((br, None));
    }

    let ds = cache.spatial_dim;
    let jl = cache.jet();
    let mut cot: Vec<Vec<f64>> = jets.iter().map(|j| vec![0.0; j.len()]).collect();
    let nb = cache.n_basis;
    for &e in &br.selected {
        let el = &cache.elements[e];
        let nq = el.n_volume();
        for j in 0..nt {
            let rbar: Vec<f64> = residuals[e][j].iter().map(|r| 2.0 * sigma[0] * cache.time_weights[j] * r).collect();
            for q in 0..nq {
                let idx = el.vol_index(j, q);
                let u = point_jet(jets, jl, e, idx);
                let (_, fp) = coeffs.convection.eval(u[0]);
                let w = el.weights[q];
                let c = &mut cot[e][idx * jl..(idx + 1) * jl];
                for (b, rb) in rbar.iter().enumerate() {
                    let p = el.test_values[b * nq + q];
                    let gp = el.test_grads[b * nq + q];
                    let s = rb * w;
                    for k in 0..ds {
                        c[0] -= s * gp[k] * fp[k];
                        c[1 + k] += s * coeffs.diffusion * gp[k];
                    }
                    if cache.transient {
                        c[1 + ds] += s * p;
                    }
                }
            }
            for slot in 0..el.faces.len() {
                let sv = slot_view(cache, e, slot);
                let ns = sv.face.len();
                let tests = &el.face_tests[slot];
                for s in 0..ns {
                    let w = sv.face.weights[s];
                    let gbar: f64 = -(0..nb).map(|b| rbar[b] * w * tests[b * ns + s]).sum::<f64>();
                    if gbar == 0.0 {
                        continue;
                    }
                    let oi = el.face_index(slot, ns, j, s);
                    let own = point_jet(jets, jl, e, oi);
                    let (other, oloc) = match sv.other {
                        Some((oe, os)) => {
                            let idx = cache.elements[oe].face_index(os, ns, j, s);
                            (OtherTrace::Element(point_jet(jets, jl, oe, idx)), Some((oe, idx)))
                        }
                        None => (OtherTrace::Boundary(sv.face.dirichlet[j * ns + s]), None),
                    };
                    let (po, pn) = flux_partials(coeffs, ds, sv.normal, own, other);
                    for k in 0..=ds {
                        cot[e][oi * jl + k] += gbar * po[k];
                    }
                    if let Some((oe, idx)) = oloc {
                        for k in 0..=ds {
                            cot[oe][idx * jl + k] += gbar * pn[k];
                        }
                    }
                }
            }
        }
    }

    let s2 = 2.0 * sigma[2];
    for face in &cache.faces {
        let ns = face.len();
        for j in 0..nt {
            for s in 0..ns {
                let oi = cache.elements[face.owner].face_index(face.owner_slot, ns, j, s);
                let u = point_jet(jets, jl, face.owner, oi);
                match face.neighbor {
                    Some((r, rs)) => {
                        let ri = cache.elements[r].face_index(rs, ns, j, s);
                        let v = point_jet(jets, jl, r, ri);
                        for k in 0..=ds {
                            let d = s2 * (u[k] - v[k]);
                            cot[face.owner][oi * jl + k] += d;
                            cot[r][ri * jl + k] -= d;
                        }
                    }
                    None => cot[face.owner][oi * jl] += s2 * (u[0] - face.dirichlet[j * ns + s]),
                }
            }
        }
    }

    if cache.transient {
        let s1 = 2.0 * sigma[1];
        for (e, el) in cache.elements.iter().enumerate() {
            for (q, u0) in el.initial.iter().enumerate() {
                let i = el.ic_index(q);
                cot[e][i * jl] += s1 * (jets[e][i * jl] - u0);
            }
        }
    }
    Ok((br, Some(cot)))
}

/// Loss of the network without gradients.
pub fn total_loss(net: &PiecewiseNet, cache: &AssemblyCache, coeffs: &PdeCoefficients, opts: &LossOptions) -> Result<LossBreakdown> {
    let (_, tape) = forward_checked(net, cache)?;
    let views: Vec<&[f64]> = tape.elements.iter().map(|t| t.output.as_slice()).collect();
    Ok(evaluate_jets(cache, coeffs, &views, opts, None, false)?.0)
}

fn forward_checked(net: &PiecewiseNet, cache: &AssemblyCache) -> Result<(Vec<Vec<f64>>, crate::net::GradientTape)> {
    if net.n_elements != cache.n_elements() || net.arch.input_dim != cache.input_dim() {
        return Err(DgnnError::ShapeMismatch(format!(
            "network with {} elements / input dim {} against cache with {} / {}",
            net.n_elements,
            net.arch.input_dim,
            cache.n_elements(),
            cache.input_dim()
        )));
    }
    let groups: Vec<&[f64]> = cache.elements.iter().map(|e| e.inputs.as_slice()).collect();
    net.forward(&groups)
}

/// Loss and its gradient with respect to the flat parameter vector.
pub fn loss_and_gradient(
    net: &PiecewiseNet,
    cache: &AssemblyCache,
    coeffs: &PdeCoefficients,
    opts: &LossOptions,
    selection: Option<&[usize]>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (_, tape) = forward_checked(net, cache)?;
    let views: Vec<&[f64]> = tape.elements.iter().map(|t| t.output.as_slice()).collect();
    let (br, cot) = evaluate_jets(cache, coeffs, &views, opts, selection, true)?;
    let grad = net.parameter_gradient(&tape, &cot.expect("cotangents requested"))?;
    Ok((br, grad))
}

/// Jets of an analytic field `x ↦ [u, ∂u/∂x_1, …]` at every cached point.
pub fn analytic_jets(cache: &AssemblyCache, field: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let d = cache.input_dim();
    let jl = cache.jet();
    cache
        .elements
        .iter()
        .map(|el| {
            let mut out = Vec::with_capacity(el.n_points() * jl);
            for x in el.inputs.chunks_exact(d) {
                let v = field(x);
                debug_assert_eq!(v.len(), jl);
                out.extend_from_slice(&v);
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests;
