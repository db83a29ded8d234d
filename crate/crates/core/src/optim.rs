//! Adam and L-BFGS over a flat parameter vector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{DgnnError, Result};

/// Something that can be differentiated at a point.
pub trait Objective {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps skipped because of a non-finite gradient.
    pub rejected: u64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n], rejected: 0 }
    }

    /// One bias-corrected update. Returns `false` (and leaves everything
    /// untouched) when the gradient has a NaN or infinity.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<bool> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DgnnError::ShapeMismatch(format!(
                "adam state holds {} entries, got params {} / grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !all_finite(grads) {
            self.rejected += 1;
            return Ok(false);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineSearch {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch { c1: 1e-4, c2: 0.9, max_evals: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepKind {
    Wolfe,
    /// Line search gave up; a halved gradient step was taken instead.
    Fallback,
    /// Nothing decreased the loss; parameters unchanged.
    Stalled,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub kind: StepKind,
    pub loss: f64,
    pub evals: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsState {
    pub history: usize,
    pub line_search: LineSearch,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    pub iterations: u64,
    pub fallbacks: u64,
    pub discarded: u64,
}

/// Pairs with `sᵀy` at or below this are thrown away.
pub const CURVATURE_FLOOR: f64 = 1e-12;

impl LbfgsState {
    pub fn new(history: usize) -> Self {
        LbfgsState {
            history: history.max(1),
            line_search: LineSearch::default(),
            pairs: VecDeque::new(),
            iterations: 0,
            fallbacks: 0,
            discarded: 0,
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.pairs.iter().map(|(s, y, _)| (s.as_slice(), y.as_slice()))
    }

    pub fn reset(&mut self) {
        self.pairs.clear();
    }

    /// Two-loop recursion: returns `-H g`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > CURVATURE_FLOOR) {
            self.discarded += 1;
            return;
        }
        if self.pairs.len() == self.history {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// One outer iteration from `(x, f, g)`. On return `x`, `f`, `g` hold the
    /// new point. The objective must be deterministic for the whole call.
    pub fn step<O: Objective + ?Sized>(&mut self, obj: &mut O, x: &mut Vec<f64>, f: &mut f64, g: &mut Vec<f64>) -> Result<StepReport> {
        self.iterations += 1;
        let mut d = self.direction(g);
        let mut dg = dot(&d, g);
        if !(dg < 0.0) {
            self.reset();
            d = g.iter().map(|v| -v).collect();
            dg = dot(&d, g);
        }
        if dg == 0.0 {
            return Ok(StepReport { kind: StepKind::Stalled, loss: *f, evals: 0, alpha: 0.0 });
        }
        let alpha0 = if self.pairs.is_empty() {
            let gn: f64 = g.iter().map(|v| v.abs()).sum();
            (1.0 / gn).min(1.0)
        } else {
            1.0
        };
        let ls = self.line_search;
        let found = strong_wolfe(obj, x, *f, dg, &d, alpha0, ls)?;
        match found {
            Search::Found { alpha, f: fnew, g: gnew, evals } => {
                let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
                let y: Vec<f64> = gnew.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
                for (xi, si) in x.iter_mut().zip(&s) {
                    *xi += si;
                }
                self.push(s, y);
                *f = fnew;
                *g = gnew;
                Ok(StepReport { kind: StepKind::Wolfe, loss: fnew, evals, alpha })
            }
            Search::Failed { evals } => {
                self.fallbacks += 1;
                self.reset();
                let r = halving_step(obj, x, f, g, ls.c1)?;
                Ok(StepReport { evals: evals + r.evals, ..r })
            }
        }
    }
}

enum Search {
    Found { alpha: f64, f: f64, g: Vec<f64>, evals: usize },
    Failed { evals: usize },
}

fn probe<O: Objective + ?Sized>(obj: &mut O, x: &[f64], d: &[f64], alpha: f64) -> Result<Option<(f64, Vec<f64>, f64)>> {
    let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    let (f, g) = obj.eval(&xt)?;
    if !f.is_finite() || !all_finite(&g) {
        return Ok(None);
    }
    let dg = dot(&g, d);
    Ok(Some((f, g, dg)))
}

/// Minimiser of the cubic through two points with slopes, clamped to the
/// bracket; bisection when the cubic is degenerate.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if disc >= 0.0 {
        let d2 = disc.sqrt() * (b - a).signum();
        let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if t.is_finite() {
            let w = hi - lo;
            return t.clamp(lo + 0.1 * w, hi - 0.1 * w);
        }
    }
    0.5 * (lo + hi)
}

fn strong_wolfe<O: Objective + ?Sized>(obj: &mut O, x: &[f64], f0: f64, dg0: f64, d: &[f64], alpha0: f64, ls: LineSearch) -> Result<Search> {
    let mut evals = 0;
    let (mut a_prev, mut f_prev, mut dg_prev) = (0.0, f0, dg0);
    let mut alpha = alpha0;
    // bracketing phase
    let bracket = loop {
        if evals >= ls.max_evals {
            return Ok(Search::Failed { evals });
        }
        evals += 1;
        let Some((fa, ga, dga)) = probe(obj, x, d, alpha)? else {
            // shrink into the finite region
            alpha = 0.5 * (a_prev + alpha);
            continue;
        };
        if fa > f0 + ls.c1 * alpha * dg0 || (evals > 1 && fa >= f_prev) {
            break (a_prev, f_prev, dg_prev, alpha, fa, dga);
        }
        if dga.abs() <= -ls.c2 * dg0 {
            return Ok(Search::Found { alpha, f: fa, g: ga, evals });
        }
        if dga >= 0.0 {
            break (alpha, fa, dga, a_prev, f_prev, dg_prev);
        }
        a_prev = alpha;
        f_prev = fa;
        dg_prev = dga;
        alpha *= 2.0;
    };
    // zoom phase; lo always satisfies sufficient decrease
    let (mut lo, mut flo, mut dlo, mut hi, mut fhi, mut dhi) = bracket;
    while evals < ls.max_evals {
        if (hi - lo).abs() < 1e-16 * lo.abs().max(1.0) {
            break;
        }
        let a = cubic_min(lo, flo, dlo, hi, fhi, dhi);
        evals += 1;
        let Some((fa, ga, dga)) = probe(obj, x, d, a)? else {
            hi = a;
            fhi = f64::INFINITY;
            dhi = 0.0;
            continue;
        };
        if fa > f0 + ls.c1 * a * dg0 || fa >= flo {
            hi = a;
            fhi = fa;
            dhi = dga;
        } else {
            if dga.abs() <= -ls.c2 * dg0 {
                return Ok(Search::Found { alpha: a, f: fa, g: ga, evals });
            }
            if dga * (hi - lo) >= 0.0 {
                hi = lo;
                fhi = flo;
                dhi = dlo;
            }
            lo = a;
            flo = fa;
            dlo = dga;
        }
    }
    Ok(Search::Failed { evals })
}

/// Steepest descent with step halving; accepts the first Armijo point.
fn halving_step<O: Objective + ?Sized>(obj: &mut O, x: &mut [f64], f: &mut f64, g: &mut Vec<f64>, c1: f64) -> Result<StepReport> {
    let gg = dot(g, g);
    let d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut alpha = (1.0 / gg.sqrt()).min(1.0);
    let mut evals = 0;
    for _ in 0..40 {
        evals += 1;
        if let Some((fa, ga, _)) = probe(obj, x, &d, alpha)? {
            if fa <= *f - c1 * alpha * gg {
                for (xi, di) in x.iter_mut().zip(&d) {
                    *xi += alpha * di;
                }
                *f = fa;
                *g = ga;
                return Ok(StepReport { kind: StepKind::Fallback, loss: fa, evals, alpha });
            }
        }
        alpha *= 0.5;
    }
    Ok(StepReport { kind: StepKind::Stalled, loss: *f, evals, alpha: 0.0 })
}

/// Adam for the first `adam_fraction` of `max_iters`, L-BFGS afterwards.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Schedule {
    pub max_iters: usize,
    pub adam_fraction: f64,
    pub lr: f64,
    pub history: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { max_iters: 1000, adam_fraction: 0.2, lr: 1e-4, history: 20 }
    }
}

impl Schedule {
    pub fn adam_iters(&self) -> usize {
        ((self.max_iters as f64) * self.adam_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.adam_fraction) {
            return Err(DgnnError::InvalidArgument(format!("adam fraction {} outside [0, 1]", self.adam_fraction)));
        }
        if !(self.lr > 0.0) {
            return Err(DgnnError::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.history == 0 {
            return Err(DgnnError::InvalidArgument("L-BFGS history must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(h: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let g: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a * b).collect();
            Ok((0.5 * dot(x, &g), g))
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut st = AdamState::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 3.0];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_has_lr_magnitude() {
        let mut st = AdamState::new(1, 0.1);
        let mut p = vec![1.0];
        st.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut st = AdamState::new(2, 0.1);
        let mut p = vec![1.0, 1.0];
        assert!(!st.step(&mut p, &[f64::NAN, 0.0]).unwrap());
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(st.step, 0);
        assert_eq!(st.rejected, 1);
        assert!(st.step(&mut p, &[1.0]).is_err());
    }

    #[test]
    fn adam_ill_conditioned_quadratic() {
        let mut f = quad(vec![1.0, 100.0]);
        let mut st = AdamState::new(2, 0.01);
        let mut p = vec![1.0, 1.0];
        let mut n = 0;
        while n < 5000 {
            let (_, g) = f(&p).unwrap();
            st.step(&mut p, &g).unwrap();
            n += 1;
            if dot(&p, &p).sqrt() <= 1e-4 {
                break;
            }
        }
        assert!(dot(&p, &p).sqrt() <= 1e-4, "{p:?} after {n}");
    }

    #[test]
    fn lbfgs_quadratic_exact() {
        let h = vec![1.0, 3.0, 10.0, 30.0, 100.0];
        let mut obj = quad(h.clone());
        let mut x = vec![1.0, -1.0, 0.5, 2.0, -0.3];
        let (mut f, mut g) = obj.eval(&x).unwrap();
        let mut st = LbfgsState::new(20);
        // finite termination needs (near) exact line minimisation
        st.line_search.c2 = 1e-8;
        let mut iters = 0;
        while dot(&x, &x).sqrt() > 1e-10 && iters < h.len() + 2 {
            st.step(&mut obj, &mut x, &mut f, &mut g).unwrap();
            iters += 1;
        }
        assert!(dot(&x, &x).sqrt() <= 1e-10, "{x:?} in {iters}");
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let mut obj = rosenbrock;
        let mut x = vec![-1.2, 1.0];
        let (mut f, mut g) = obj.eval(&x).unwrap();
        let mut st = LbfgsState::new(20);
        let mut n = 0;
        while n < 200 {
            let r = st.step(&mut obj, &mut x, &mut f, &mut g).unwrap();
            n += 1;
            if ((x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2)).sqrt() <= 1e-6 || r.kind == StepKind::Stalled {
                break;
            }
        }
        let err = ((x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2)).sqrt();
        assert!(err <= 1e-6, "error {err} after {n}");
    }

    #[test]
    fn lbfgs_descent_and_curvature_pairs() {
        let mut obj = rosenbrock;
        let mut x = vec![-1.2, 1.0];
        let (mut f, mut g) = obj.eval(&x).unwrap();
        let mut st = LbfgsState::new(5);
        for _ in 0..60 {
            let before = f;
            st.step(&mut obj, &mut x, &mut f, &mut g).unwrap();
            assert!(f <= before);
            assert!(st.n_pairs() <= 5);
            for (s, y) in st.pairs() {
                assert!(dot(s, y) > CURVATURE_FLOOR);
            }
        }
    }

    #[test]
    fn fallback_when_search_cannot_satisfy_wolfe() {
        // slope far from any curvature-satisfying point within one evaluation
        let mut obj = rosenbrock;
        let mut x = vec![-1.2, 1.0];
        let (mut f, mut g) = obj.eval(&x).unwrap();
        let mut st = LbfgsState::new(20);
        st.line_search.max_evals = 1;
        st.line_search.c2 = 1e-9;
        let before = f;
        let r = st.step(&mut obj, &mut x, &mut f, &mut g).unwrap();
        assert_eq!(r.kind, StepKind::Fallback);
        assert_eq!(st.fallbacks, 1);
        assert!(f < before);
    }

    #[test]
    fn schedule_split() {
        let s = Schedule { max_iters: 1000, ..Default::default() };
        assert_eq!(s.adam_iters(), 200);
        assert!(Schedule { adam_fraction: 1.5, ..s }.validate().is_err());
    }
}
