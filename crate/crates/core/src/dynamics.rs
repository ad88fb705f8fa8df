//! Reflected and penalized diffusions, local time, invariant measures and the
//! generator `Lf = ½Tr(σσᵀ∇²f) + bᵀ∇f`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nested_points, tensor_grid, DomainSpec};
use crate::scalar::{dist, dot, gram, Real};
use crate::stats::{path_rng, Estimate};

pub type VectorField<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;
pub type ScalarField<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Potential `U` with gradient and (row-major) Hessian.
#[derive(Clone)]
pub struct Potential<T> {
    pub label: String,
    value: ScalarField<T>,
    gradient: VectorField<T>,
    hessian: VectorField<T>,
}

impl<T: Real> Potential<T> {
    pub fn new(
        label: impl Into<String>,
        value: impl Fn(&[T]) -> T + Send + Sync + 'static,
        gradient: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
        hessian: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }

    /// `U = k|x|²/2`.
    pub fn quadratic(k: T) -> Self {
        Self::new(
            format!("quadratic(k={k})"),
            move |x: &[T]| k * dot(x, x) / T::lit(2.0),
            move |x: &[T], g: &mut [T]| {
                for (gi, &xi) in g.iter_mut().zip(x) {
                    *gi = k * xi;
                }
            },
            move |x: &[T], h: &mut [T]| {
                let d = x.len();
                h.iter_mut().for_each(|v| *v = T::zero());
                for i in 0..d {
                    h[i * d + i] = k;
                }
            },
        )
    }

    /// `U = |x|⁴`.
    pub fn quartic() -> Self {
        Self::new(
            "quartic",
            |x: &[T]| {
                let r2 = dot(x, x);
                r2 * r2
            },
            |x: &[T], g: &mut [T]| {
                let r2 = dot(x, x);
                for (gi, &xi) in g.iter_mut().zip(x) {
                    *gi = T::lit(4.0) * r2 * xi;
                }
            },
            |x: &[T], h: &mut [T]| {
                let d = x.len();
                let r2 = dot(x, x);
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { T::lit(4.0) * r2 } else { T::zero() };
                        h[i * d + j] = delta + T::lit(8.0) * x[i] * x[j];
                    }
                }
            },
        )
    }

    pub fn constant(c: T) -> Self {
        Self::new(
            "constant",
            move |_: &[T]| c,
            |_: &[T], g: &mut [T]| g.iter_mut().for_each(|v| *v = T::zero()),
            |_: &[T], h: &mut [T]| h.iter_mut().for_each(|v| *v = T::zero()),
        )
    }

    pub fn value(&self, x: &[T]) -> T {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); x.len()];
        (self.gradient)(x, &mut g);
        g
    }

    pub fn hessian(&self, x: &[T]) -> Vec<T> {
        let d = x.len();
        let mut h = vec![T::zero(); d * d];
        (self.hessian)(x, &mut h);
        h
    }

    /// `U + ξ|x|²/2`.
    pub fn plus_quadratic(&self, xi: T) -> Self {
        let (v, g, h) = (self.value.clone(), self.gradient.clone(), self.hessian.clone());
        Self::new(
            format!("{}+{}|x|^2/2", self.label, xi),
            move |x: &[T]| v(x) + xi * dot(x, x) / T::lit(2.0),
            move |x: &[T], out: &mut [T]| {
                g(x, out);
                for (o, &xv) in out.iter_mut().zip(x) {
                    *o = *o + xi * xv;
                }
            },
            move |x: &[T], out: &mut [T]| {
                h(x, out);
                let d = x.len();
                for i in 0..d {
                    out[i * d + i] = out[i * d + i] + xi;
                }
            },
        )
    }
}

/// A twice differentiable test function.
pub trait C2Field<T: Real> {
    fn value(&self, x: &[T]) -> T;
    fn gradient(&self, x: &[T]) -> Vec<T>;
    fn hessian(&self, x: &[T]) -> Vec<T>;
}

/// φ of a domain as a [`C2Field`].
pub struct PhiField<'a, T>(pub &'a DomainSpec<T>);

impl<T: Real> C2Field<T> for PhiField<'_, T> {
    fn value(&self, x: &[T]) -> T {
        self.0.phi(x)
    }
    fn gradient(&self, x: &[T]) -> Vec<T> {
        self.0.grad_phi(x)
    }
    fn hessian(&self, x: &[T]) -> Vec<T> {
        self.0.hess_phi(x)
    }
}

/// Reflected SDE `dX = b dt + σ dW + ∇φ dK`.
#[derive(Clone)]
pub struct SdeModel<T> {
    pub label: String,
    dim: usize,
    drift: VectorField<T>,
    diffusion: VectorField<T>,
    constant_sigma: Option<Vec<T>>,
    potential: Option<Potential<T>>,
}

impl<T> fmt::Debug for SdeModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("kolmogorov", &self.potential.is_some())
            .finish()
    }
}

impl<T: Real> SdeModel<T> {
    /// General model. `diffusion` writes σ(x) row-major `d x d`.
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        drift: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
        diffusion: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            dim,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            constant_sigma: None,
            potential: None,
        }
    }

    /// Model with constant σ (row-major `d x d`).
    pub fn with_constant_sigma(
        label: impl Into<String>,
        dim: usize,
        drift: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
        sigma: Vec<T>,
    ) -> Self {
        assert_eq!(sigma.len(), dim * dim, "sigma must be d x d");
        let s = sigma.clone();
        let mut m = Self::new(label, dim, drift, move |_, out: &mut [T]| out.copy_from_slice(&s));
        m.constant_sigma = Some(sigma);
        m
    }

    /// Kolmogorov process: `b = -∇U`, `σ = √2 I`.
    pub fn kolmogorov(potential: Potential<T>, dim: usize) -> Self {
        let p = potential.clone();
        let mut sigma = vec![T::zero(); dim * dim];
        for i in 0..dim {
            sigma[i * dim + i] = T::lit(2.0).sqrt();
        }
        let mut m = Self::with_constant_sigma(
            format!("kolmogorov[{}]", potential.label),
            dim,
            move |x, out| {
                (p.gradient)(x, out);
                out.iter_mut().for_each(|v| *v = -*v);
            },
            sigma,
        );
        m.potential = Some(potential);
        m
    }

    /// `b = -κx`, `σ = s I`.
    pub fn ornstein_uhlenbeck(kappa: T, s: T, dim: usize) -> Self {
        let mut sigma = vec![T::zero(); dim * dim];
        for i in 0..dim {
            sigma[i * dim + i] = s;
        }
        Self::with_constant_sigma(
            format!("ou(kappa={kappa},s={s})"),
            dim,
            move |x, out| {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = -kappa * v;
                }
            },
            sigma,
        )
    }

    /// `b = -x`, `σ(x) = diag(x_i)`: degenerate at the origin.
    pub fn degenerate_diagonal(dim: usize) -> Self {
        Self::new(
            "degenerate_diagonal",
            dim,
            |x, out| {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = -v;
                }
            },
            move |x, out| {
                let d = x.len();
                out.iter_mut().for_each(|v| *v = T::zero());
                for i in 0..d {
                    out[i * d + i] = x[i];
                }
            },
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn potential(&self) -> Option<&Potential<T>> {
        self.potential.as_ref()
    }

    pub fn require_potential(&self) -> Result<&Potential<T>> {
        self.potential.as_ref().ok_or(Error::NotKolmogorov)
    }

    pub fn constant_sigma(&self) -> Option<&[T]> {
        self.constant_sigma.as_deref()
    }

    #[inline]
    pub fn drift_into(&self, x: &[T], out: &mut [T]) {
        (self.drift)(x, out)
    }

    #[inline]
    pub fn sigma_into(&self, x: &[T], out: &mut [T]) {
        (self.diffusion)(x, out)
    }

    pub fn drift(&self, x: &[T]) -> Vec<T> {
        let mut b = vec![T::zero(); self.dim];
        self.drift_into(x, &mut b);
        b
    }

    pub fn sigma(&self, x: &[T]) -> Vec<T> {
        let mut s = vec![T::zero(); self.dim * self.dim];
        self.sigma_into(x, &mut s);
        s
    }

    /// `b̃ = b - ξx` with the same σ.
    pub fn shifted(&self, xi: T) -> Self {
        let b = self.drift.clone();
        let mut m = self.clone();
        m.label = format!("{}-shift({xi})", self.label);
        m.drift = Arc::new(move |x: &[T], out: &mut [T]| {
            b(x, out);
            for (o, &v) in out.iter_mut().zip(x) {
                *o = *o - xi * v;
            }
        });
        m.potential = self.potential.as_ref().map(|p| p.plus_quadratic(xi));
        m
    }

    /// `b + extra(x)` with the same σ; drops the potential.
    pub fn with_extra_drift(&self, label: impl Into<String>, extra: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        let b = self.drift.clone();
        let d = self.dim;
        let mut m = self.clone();
        m.label = label.into();
        m.potential = None;
        m.drift = Arc::new(move |x: &[T], out: &mut [T]| {
            b(x, out);
            let mut e = vec![T::zero(); d];
            extra(x, &mut e);
            for (o, ev) in out.iter_mut().zip(e) {
                *o = *o + ev;
            }
        });
        m
    }

    /// `Lf(x) = ½Tr(σσᵀ∇²f) + bᵀ∇f`.
    pub fn generator_apply(&self, f: &dyn C2Field<T>, x: &[T]) -> T {
        let d = self.dim;
        let a = gram(&self.sigma(x), d);
        let h = f.hessian(x);
        let tr: T = (0..d * d).map(|k| a[k] * h[k]).sum();
        tr / T::lit(2.0) + dot(&self.drift(x), &f.gradient(x))
    }

    pub fn l_phi(&self, domain: &DomainSpec<T>, x: &[T]) -> T {
        self.generator_apply(&PhiField(domain), x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionScheme {
    /// Mirror the overshoot across the tangent plane; `ΔK` = reflected length.
    #[default]
    Mirror,
    /// Project onto Ḡ; `ΔK` = projection distance.
    Projection,
}

/// One reflected Euler step. Returns the new state and `ΔK ≥ 0`.
pub fn step_reflected<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    x: &[T],
    h: T,
    noise: &[T],
    scheme: ReflectionScheme,
) -> Result<(Vec<T>, T)> {
    let mut st = Stepper::new(model.dim());
    let mut out = vec![T::zero(); x.len()];
    let dk = st.step(model, domain, x, h, noise, scheme, &mut out)?;
    Ok((out, dk))
}

struct Stepper<T> {
    b: Vec<T>,
    s: Vec<T>,
    pre: Vec<T>,
    diameter: Option<T>,
}

impl<T: Real> Stepper<T> {
    fn new(d: usize) -> Self {
        Self {
            b: vec![T::zero(); d],
            s: vec![T::zero(); d * d],
            pre: vec![T::zero(); d],
            diameter: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        model: &SdeModel<T>,
        domain: &DomainSpec<T>,
        x: &[T],
        h: T,
        noise: &[T],
        scheme: ReflectionScheme,
        out: &mut [T],
    ) -> Result<T> {
        let d = x.len();
        model.drift_into(x, &mut self.b);
        model.sigma_into(x, &mut self.s);
        let sh = h.sqrt();
        let mut disp2 = T::zero();
        for i in 0..d {
            let mut v = self.b[i] * h;
            for j in 0..d {
                v = v + self.s[i * d + j] * sh * noise[j];
            }
            self.pre[i] = x[i] + v;
            disp2 = disp2 + v * v;
        }
        let diameter = *self.diameter.get_or_insert_with(|| domain.diameter());
        if disp2.sqrt() > diameter {
            return Err(Error::StepTooLarge {
                displacement: disp2.sqrt().to_f64_lossy(),
                diameter: diameter.to_f64_lossy(),
            });
        }
        if domain.phi(&self.pre) >= T::zero() {
            out.copy_from_slice(&self.pre);
            return Ok(T::zero());
        }
        let p = domain.project(&self.pre)?;
        match scheme {
            ReflectionScheme::Projection => {
                let dk = dist(&p, &self.pre);
                out.copy_from_slice(&p);
                Ok(dk)
            }
            ReflectionScheme::Mirror => {
                for i in 0..d {
                    out[i] = p[i] + p[i] - self.pre[i];
                }
                let mut dk = dist(out, &self.pre);
                if domain.phi(out) < T::zero() {
                    let q = domain.project(out)?;
                    dk = dk + dist(&q, out);
                    out.copy_from_slice(&q);
                }
                Ok(dk)
            }
        }
    }
}

/// What a visitor sees for each step `X_i → X_{i+1}`.
pub struct StepView<'a, T> {
    pub index: usize,
    pub x: &'a [T],
    pub next: &'a [T],
    pub noise: &'a [T],
    pub dk: T,
}

/// Runs `steps` reflected Euler steps from `x0`, calling `visit` after each.
/// Returns the final state and the accumulated local time.
#[allow(clippy::too_many_arguments)]
pub fn simulate_streaming<T: Real, R: Rng + ?Sized>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    x0: &[T],
    steps: usize,
    h: T,
    scheme: ReflectionScheme,
    rng: &mut R,
    mut visit: impl FnMut(&StepView<'_, T>),
) -> Result<(Vec<T>, T)> {
    let d = model.dim();
    let mut st = Stepper::new(d);
    let mut x = x0.to_vec();
    let mut next = vec![T::zero(); d];
    let mut noise = vec![T::zero(); d];
    let mut k = T::zero();
    for index in 0..steps {
        for z in noise.iter_mut() {
            *z = T::standard_normal(rng);
        }
        let dk = st.step(model, domain, &x, h, &noise, scheme, &mut next)?;
        k = k + dk;
        visit(&StepView {
            index,
            x: &x,
            next: &next,
            noise: &noise,
            dk,
        });
        std::mem::swap(&mut x, &mut next);
    }
    Ok((x, k))
}

/// Stored discrete trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ReflectedPath<T> {
    pub h: T,
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub local_time: Vec<T>,
    pub noises: Vec<Vec<T>>,
    pub reflection_events: Vec<usize>,
}

pub(crate) fn step_count<T: Real>(horizon: T, h: T) -> Result<usize> {
    if !(h > T::zero()) || horizon < T::zero() {
        return Err(Error::InvalidArgument("need h > 0 and horizon >= 0".into()));
    }
    let n = (horizon / h).round();
    if (n * h - horizon).abs() > T::lit(1e-4) * h {
        return Err(Error::InvalidArgument(format!("horizon {horizon} is not a multiple of h = {h}")));
    }
    n.to_usize()
        .ok_or_else(|| Error::InvalidArgument("step count overflow".into()))
}

/// Simulates one path on `[0, horizon]`, deterministic given `seed`.
#[allow(clippy::too_many_arguments)]
pub fn simulate<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    x0: &[T],
    horizon: T,
    h: T,
    seed: u64,
    scheme: ReflectionScheme,
) -> Result<ReflectedPath<T>> {
    let n = step_count(horizon, h)?;
    let mut rng = path_rng(seed, 0);
    let mut path = ReflectedPath {
        h,
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        local_time: Vec::with_capacity(n + 1),
        noises: Vec::with_capacity(n),
        reflection_events: Vec::new(),
    };
    path.times.push(T::zero());
    path.states.push(x0.to_vec());
    path.local_time.push(T::zero());
    let mut k = T::zero();
    simulate_streaming(model, domain, x0, n, h, scheme, &mut rng, |s| {
        k = k + s.dk;
        path.times.push(h * T::from_usize_lossy(s.index + 1));
        path.states.push(s.next.to_vec());
        path.local_time.push(k);
        path.noises.push(s.noise.to_vec());
        if s.dk > T::zero() {
            path.reflection_events.push(s.index + 1);
        }
    })?;
    Ok(path)
}

/// How to start a path that should be (approximately) stationary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
#[serde(rename_all = "snake_case")]
pub enum StationaryStart<T> {
    /// Exact draw from the Gibbs measure (Kolmogorov models only).
    Gibbs,
    /// Run from the centroid for the given duration first.
    BurnIn { duration: T },
    Fixed(Vec<T>),
    /// Gibbs when a potential is present, otherwise burn-in `20/|η|`.
    Auto,
}

/// Rejection sampler for `ν ∝ e^{-U} 1_Ḡ`.
pub struct GibbsSampler<'a, T> {
    potential: &'a Potential<T>,
    domain: &'a DomainSpec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
    umin: T,
}

impl<'a, T: Real> GibbsSampler<'a, T> {
    pub fn new(model: &'a SdeModel<T>, domain: &'a DomainSpec<T>) -> Result<Self> {
        let potential = model.require_potential()?;
        let (lo, hi) = domain.bounding_box();
        let umin = domain
            .sample_inside(33)
            .iter()
            .map(|p| potential.value(p))
            .fold(T::infinity(), T::min);
        Ok(Self {
            potential,
            domain,
            lo,
            hi,
            umin,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let d = self.lo.len();
        let mut x = vec![T::zero(); d];
        loop {
            for k in 0..d {
                let u: f64 = rng.random();
                x[k] = self.lo[k] + (self.hi[k] - self.lo[k]) * T::lit(u);
            }
            if !self.domain.contains(&x) {
                continue;
            }
            let acc = (self.umin - self.potential.value(&x)).exp().min(T::one());
            let u: f64 = rng.random();
            if T::lit(u) < acc {
                return x;
            }
        }
    }
}

/// Burn-in duration used when no Gibbs formula is available.
pub fn default_burn_in<T: Real>(model: &SdeModel<T>, domain: &DomainSpec<T>) -> T {
    let eta = crate::hypotheses::estimate_eta(model, domain, 17);
    if eta < T::zero() {
        T::lit(20.0) / eta.abs()
    } else {
        T::lit(20.0)
    }
}

/// Resolved starting rule shared by a batch of paths.
pub(crate) enum StartRule<'a, T> {
    Gibbs(GibbsSampler<'a, T>),
    BurnIn(usize, Vec<T>),
    Fixed(Vec<T>),
}

impl<'a, T: Real> StartRule<'a, T> {
    pub(crate) fn resolve(
        start: &StationaryStart<T>,
        model: &'a SdeModel<T>,
        domain: &'a DomainSpec<T>,
        h: T,
    ) -> Result<Self> {
        Ok(match start {
            StationaryStart::Gibbs => StartRule::Gibbs(GibbsSampler::new(model, domain)?),
            StationaryStart::Fixed(x) => StartRule::Fixed(x.clone()),
            StationaryStart::BurnIn { duration } => {
                StartRule::BurnIn(burn_steps(*duration, h), domain.centroid())
            }
            StationaryStart::Auto => {
                if model.potential().is_some() {
                    StartRule::Gibbs(GibbsSampler::new(model, domain)?)
                } else {
                    StartRule::BurnIn(burn_steps(default_burn_in(model, domain), h), domain.centroid())
                }
            }
        })
    }

    pub(crate) fn draw<R: Rng + ?Sized>(
        &self,
        model: &SdeModel<T>,
        domain: &DomainSpec<T>,
        h: T,
        scheme: ReflectionScheme,
        rng: &mut R,
    ) -> Result<Vec<T>> {
        match self {
            StartRule::Gibbs(s) => Ok(s.sample(rng)),
            StartRule::Fixed(x) => Ok(x.clone()),
            StartRule::BurnIn(n, x0) => {
                Ok(simulate_streaming(model, domain, x0, *n, h, scheme, rng, |_| {})?.0)
            }
        }
    }
}

fn burn_steps<T: Real>(duration: T, h: T) -> usize {
    (duration / h).ceil().to_usize().unwrap_or(0)
}

/// Shared Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct McSettings<T> {
    pub horizon: T,
    pub h: T,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: ReflectionScheme,
}

impl<T: Real> McSettings<T> {
    pub fn new(horizon: T, h: T, paths: usize, seed: u64) -> Self {
        Self {
            horizon,
            h,
            paths,
            seed,
            scheme: ReflectionScheme::Mirror,
        }
    }
}

/// Per-path time averages `(1/T)Σ f(X_i) h` and `K_T/T` from a stationary start.
pub fn time_averages<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    f: &(dyn Fn(&[T]) -> T + Sync),
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Vec<(T, T)>> {
    let n = step_count(mc.horizon, mc.h)?;
    let rule = StartRule::resolve(start, model, domain, mc.h)?;
    (0..mc.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(mc.seed, p as u64);
            let x0 = rule.draw(model, domain, mc.h, mc.scheme, &mut rng)?;
            let mut acc = T::zero();
            let (_, k) = simulate_streaming(model, domain, &x0, n, mc.h, mc.scheme, &mut rng, |s| {
                acc = acc + f(s.x);
            })?;
            let nf = T::from_usize_lossy(n.max(1));
            Ok((acc / nf, k / mc.horizon))
        })
        .collect()
}

/// Estimate of `E[K_T]/T` from a stationary start.
pub fn expected_k_rate<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Estimate<T>> {
    let per = time_averages(model, domain, &|_| T::zero(), mc, start)?;
    let ks: Vec<T> = per.iter().map(|p| p.1).collect();
    Ok(Estimate::from_samples(&ks))
}

/// Frequency of `(1/T)Σ f(X_i)h ≤ mean - eps` across paths.
pub fn deviation_probability<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    f: &(dyn Fn(&[T]) -> T + Sync),
    mean: T,
    eps: T,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Estimate<T>> {
    let per = time_averages(model, domain, f, mc, start)?;
    let hits: Vec<T> = per
        .iter()
        .map(|p| if p.0 <= mean - eps { T::one() } else { T::zero() })
        .collect();
    Ok(Estimate::from_samples(&hits))
}

/// Mean local time on a time grid, and the smallest `C` with `E[K_t] ≤ C(1+t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KGrowth<T> {
    pub times: Vec<T>,
    pub mean_k: Vec<T>,
    pub constant: T,
}

pub fn k_growth<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    x0: &[T],
    checkpoints: usize,
    mc: &McSettings<T>,
) -> Result<KGrowth<T>> {
    let n = step_count(mc.horizon, mc.h)?;
    let every = (n / checkpoints.max(1)).max(1);
    let per: Vec<Vec<T>> = (0..mc.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(mc.seed, p as u64);
            let mut ks = Vec::new();
            let mut k = T::zero();
            simulate_streaming(model, domain, x0, n, mc.h, mc.scheme, &mut rng, |s| {
                k = k + s.dk;
                if (s.index + 1) % every == 0 {
                    ks.push(k);
                }
            })?;
            Ok(ks)
        })
        .collect::<Result<_>>()?;
    let m = per.first().map_or(0, Vec::len);
    let pf = T::from_usize_lossy(mc.paths.max(1));
    let mean_k: Vec<T> = (0..m).map(|j| per.iter().map(|v| v[j]).sum::<T>() / pf).collect();
    let times: Vec<T> = (0..m)
        .map(|j| mc.h * T::from_usize_lossy((j + 1) * every))
        .collect();
    let constant = times
        .iter()
        .zip(&mean_k)
        .map(|(&t, &k)| k / (T::one() + t))
        .fold(T::zero(), T::max);
    Ok(KGrowth {
        times,
        mean_k,
        constant,
    })
}

/// Occupation histogram of the first coordinate over `bins` equal bins of
/// the bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Histogram<T> {
    pub centers: Vec<T>,
    pub mass: Vec<T>,
    pub width: T,
}

impl<T: Real> Histogram<T> {
    pub fn density(&self) -> Vec<T> {
        self.mass.iter().map(|&m| m / self.width).collect()
    }
}

pub fn occupation_histogram<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    bins: usize,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Histogram<T>> {
    let n = step_count(mc.horizon, mc.h)?;
    let (lo, hi) = domain.bounding_box();
    let (a, b) = (lo[0], hi[0]);
    let width = (b - a) / T::from_usize_lossy(bins);
    let rule = StartRule::resolve(start, model, domain, mc.h)?;
    let counts: Vec<Vec<u64>> = (0..mc.paths.max(1))
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(mc.seed, p as u64);
            let x0 = rule.draw(model, domain, mc.h, mc.scheme, &mut rng)?;
            let mut c = vec![0u64; bins];
            simulate_streaming(model, domain, &x0, n, mc.h, mc.scheme, &mut rng, |s| {
                let j = ((s.next[0] - a) / width).floor().to_usize().unwrap_or(0).min(bins - 1);
                c[j] += 1;
            })?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let total: u64 = counts.iter().flatten().sum();
    let mass = (0..bins)
        .map(|j| T::lit(counts.iter().map(|c| c[j]).sum::<u64>() as f64 / total.max(1) as f64))
        .collect();
    let centers = (0..bins)
        .map(|j| a + width * (T::from_usize_lossy(j) + T::lit(0.5)))
        .collect();
    Ok(Histogram { centers, mass, width })
}

/// Pathwise distances of two paths driven by the same noise.
pub fn coupled_distances<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    x: &[T],
    y: &[T],
    horizon: T,
    h: T,
    seed: u64,
    scheme: ReflectionScheme,
) -> Result<Vec<T>> {
    let n = step_count(horizon, h)?;
    let mut rng = path_rng(seed, 0);
    let d = model.dim();
    let mut sx = Stepper::new(d);
    let mut sy = Stepper::new(d);
    let (mut a, mut b) = (x.to_vec(), y.to_vec());
    let (mut na, mut nb) = (vec![T::zero(); d], vec![T::zero(); d]);
    let mut noise = vec![T::zero(); d];
    let mut out = Vec::with_capacity(n + 1);
    out.push(dist(&a, &b));
    for _ in 0..n {
        for z in noise.iter_mut() {
            *z = T::standard_normal(&mut rng);
        }
        sx.step(model, domain, &a, h, &noise, scheme, &mut na)?;
        sy.step(model, domain, &b, h, &noise, scheme, &mut nb)?;
        std::mem::swap(&mut a, &mut na);
        std::mem::swap(&mut b, &mut nb);
        out.push(dist(&a, &b));
    }
    Ok(out)
}

/// Discrete local-time identity gap
/// `K_T - (φ(X_T) - φ(x0) - Σ Lφ(X_i)h - Σ ∇φ(X_i)ᵀσ(X_i)√h ξ_i)`.
pub fn local_time_identity_gap<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    x0: &[T],
    horizon: T,
    h: T,
    seed: u64,
    scheme: ReflectionScheme,
) -> Result<T> {
    let n = step_count(horizon, h)?;
    let mut rng = path_rng(seed, 0);
    let d = model.dim();
    let sh = h.sqrt();
    let mut drift_sum = T::zero();
    let mut mart = T::zero();
    let mut s = vec![T::zero(); d * d];
    let (xt, k) = simulate_streaming(model, domain, x0, n, h, scheme, &mut rng, |st| {
        drift_sum = drift_sum + model.l_phi(domain, st.x) * h;
        let g = domain.grad_phi(st.x);
        model.sigma_into(st.x, &mut s);
        for j in 0..d {
            let gs: T = (0..d).map(|i| g[i] * s[i * d + j]).sum();
            mart = mart + gs * sh * st.noise[j];
        }
    })?;
    Ok(k - (domain.phi(&xt) - domain.phi(x0) - drift_sum - mart))
}

/// Euler step of the unreflected penalized Kolmogorov SDE with
/// `U_n = U + n d²(·, Ḡ)`.
pub fn step_penalized<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    n: T,
    x: &[T],
    h: T,
    noise: &[T],
) -> Result<Vec<T>> {
    let pot = model.require_potential()?;
    let g = pot.gradient(x);
    let p = domain.project(x)?;
    let two = T::lit(2.0);
    let s = (two * h).sqrt();
    Ok((0..x.len())
        .map(|i| x[i] - (g[i] + two * n * (x[i] - p[i])) * h + s * noise[i])
        .collect())
}

/// Moments of the penalized stationary law: `E[X]` and `E|X|²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Moments<T> {
    pub first: Estimate<T>,
    pub second: Estimate<T>,
}

/// Long-run moments of the penalized process (first coordinate mean, `E|X|²`).
pub fn penalized_moments<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    n: T,
    burn_in: T,
    mc: &McSettings<T>,
) -> Result<Moments<T>> {
    let steps = step_count(mc.horizon, mc.h)?;
    let burn = burn_steps(burn_in, mc.h);
    let d = model.dim();
    let per: Vec<(T, T)> = (0..mc.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(mc.seed, p as u64);
            let mut x = domain.centroid();
            let mut noise = vec![T::zero(); d];
            let (mut m1, mut m2) = (T::zero(), T::zero());
            for i in 0..burn + steps {
                for z in noise.iter_mut() {
                    *z = T::standard_normal(&mut rng);
                }
                x = step_penalized(model, domain, n, &x, mc.h, &noise)?;
                if i >= burn {
                    m1 = m1 + x[0];
                    m2 = m2 + dot(&x, &x);
                }
            }
            let nf = T::from_usize_lossy(steps.max(1));
            Ok((m1 / nf, m2 / nf))
        })
        .collect::<Result<_>>()?;
    let a: Vec<T> = per.iter().map(|p| p.0).collect();
    let b: Vec<T> = per.iter().map(|p| p.1).collect();
    Ok(Moments {
        first: Estimate::from_samples(&a),
        second: Estimate::from_samples(&b),
    })
}

/// Long-run moments of the reflected process (same layout as
/// [`penalized_moments`]), from a stationary start.
pub fn reflected_moments<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Moments<T>> {
    let m1 = time_averages(model, domain, &|x: &[T]| x[0], mc, start)?;
    let m2 = time_averages(model, domain, &|x: &[T]| dot(x, x), mc, start)?;
    Ok(Moments {
        first: Estimate::from_samples(&m1.iter().map(|p| p.0).collect::<Vec<_>>()),
        second: Estimate::from_samples(&m2.iter().map(|p| p.0).collect::<Vec<_>>()),
    })
}

/// Normalized Gibbs density on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct InvariantDensity<T> {
    pub points: Vec<Vec<T>>,
    pub density: Vec<T>,
    pub normalization: T,
}

/// Quadrature nodes and weights over Ḡ: composite Simpson in 1-d,
/// sub-sampled cell midpoints in 2-d.
pub fn quadrature_nodes<T: Real>(domain: &DomainSpec<T>, resolution: usize) -> Result<(Vec<Vec<T>>, Vec<T>)> {
    let (lo, hi) = domain.bounding_box();
    match domain.dim() {
        1 => {
            let n = nested_points(resolution.max(3));
            let pts = tensor_grid(&lo, &hi, n);
            let h = (hi[0] - lo[0]) / T::from_usize_lossy(n - 1);
            let w = (0..n)
                .map(|i| {
                    let c = if i == 0 || i == n - 1 {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    T::lit(c) * h / T::lit(3.0)
                })
                .collect();
            Ok((pts, w))
        }
        2 => {
            let n = resolution.max(8);
            let sub = 4usize;
            let m = n * sub;
            let hx = (hi[0] - lo[0]) / T::from_usize_lossy(m);
            let hy = (hi[1] - lo[1]) / T::from_usize_lossy(m);
            let mut pts = Vec::new();
            for j in 0..m {
                for i in 0..m {
                    let p = vec![
                        lo[0] + hx * (T::from_usize_lossy(i) + T::lit(0.5)),
                        lo[1] + hy * (T::from_usize_lossy(j) + T::lit(0.5)),
                    ];
                    if domain.contains(&p) {
                        pts.push(p);
                    }
                }
            }
            let w = vec![hx * hy; pts.len()];
            Ok((pts, w))
        }
        d => Err(Error::UnsupportedDimension {
            dim: d,
            what: "Gibbs quadrature",
        }),
    }
}

/// `e^{-U}/N` on the nested 1-d grid or the 2-d box grid (zero outside Ḡ).
pub fn invariant_density<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    resolution: usize,
) -> Result<InvariantDensity<T>> {
    let pot = model.require_potential()?;
    let (qp, qw) = quadrature_nodes(domain, resolution)?;
    let normalization: T = qp.iter().zip(&qw).map(|(p, &w)| w * (-pot.value(p)).exp()).sum();
    let n = nested_points(resolution);
    let points = domain.box_points(n);
    let density = points
        .iter()
        .map(|p| {
            if domain.contains(p) {
                (-pot.value(p)).exp() / normalization
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(InvariantDensity {
        points,
        density,
        normalization,
    })
}

/// `E^ν[f]` for the Gibbs measure, by quadrature.
pub fn gibbs_expectation<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    f: &dyn Fn(&[T]) -> T,
    resolution: usize,
) -> Result<T> {
    let pot = model.require_potential()?;
    let (qp, qw) = quadrature_nodes(domain, resolution)?;
    let mut num = T::zero();
    let mut den = T::zero();
    for (p, &w) in qp.iter().zip(&qw) {
        let e = w * (-pot.value(p)).exp();
        num = num + e * f(p);
        den = den + e;
    }
    Ok(num / den)
}

/// Gibbs mass of `[a, b]` along the first axis (1-d only).
pub fn gibbs_bin_mass<T: Real>(model: &SdeModel<T>, domain: &DomainSpec<T>, a: T, b: T, resolution: usize) -> Result<T> {
    gibbs_expectation(
        model,
        domain,
        &|x: &[T]| if x[0] >= a && x[0] < b { T::one() } else { T::zero() },
        resolution,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval() -> DomainSpec<f64> {
        DomainSpec::interval(1.0)
    }

    #[test]
    fn interior_step_without_noise_is_plain_euler() {
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 1);
        let (y, dk) = step_reflected(&m, &interval(), &[0.2], 0.01, &[0.0], ReflectionScheme::Mirror).unwrap();
        assert!((y[0] - (0.2 - 0.002)).abs() < 1e-15);
        assert_eq!(dk, 0.0);
    }

    #[test]
    fn projection_step_on_interval() {
        let m = SdeModel::with_constant_sigma("bm", 1, |_, o: &mut [f64]| o[0] = 0.0, vec![1.0]);
        let (y, dk) = step_reflected(&m, &interval(), &[1.0], 0.01, &[1.0], ReflectionScheme::Projection).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15);
        assert!((dk - 0.1).abs() < 1e-12);
        let (y, dk) = step_reflected(&m, &interval(), &[1.0], 0.01, &[1.0], ReflectionScheme::Mirror).unwrap();
        assert!((y[0] - 0.9).abs() < 1e-12);
        assert!((dk - 0.2).abs() < 1e-12);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let m = SdeModel::with_constant_sigma("bm", 1, |_, o: &mut [f64]| o[0] = 0.0, vec![1.0]);
        let e = step_reflected(&m, &interval(), &[0.0], 1.0, &[3.0], ReflectionScheme::Mirror).unwrap_err();
        assert!(matches!(e, Error::StepTooLarge { .. }));
    }

    #[test]
    fn zero_horizon_and_frozen_dynamics() {
        let m = SdeModel::with_constant_sigma("still", 1, |_, o: &mut [f64]| o[0] = 0.0, vec![0.0]);
        let p = simulate(&m, &interval(), &[0.3], 0.0, 0.01, 1, ReflectionScheme::Mirror).unwrap();
        assert_eq!(p.states.len(), 1);
        let p = simulate(&m, &interval(), &[0.3], 1.0, 0.01, 1, ReflectionScheme::Mirror).unwrap();
        assert_eq!(p.states.len(), 101);
        assert!(p.states.iter().all(|s| s[0] == 0.3));
        assert_eq!(*p.local_time.last().unwrap(), 0.0);
    }

    #[test]
    fn horizon_must_be_a_multiple_of_h() {
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 1);
        assert!(simulate(&m, &interval(), &[0.0], 1.005, 0.01, 1, ReflectionScheme::Mirror).is_err());
    }

    #[test]
    fn generator_on_phi() {
        let m = SdeModel::kolmogorov(Potential::quadratic(1.0), 1);
        let d = interval();
        for &x in &[-0.7, 0.0, 0.4, 1.0] {
            assert!((m.l_phi(&d, &[x]) - (x * x - 1.0)).abs() < 1e-12);
        }
        // constants and linear functions
        struct Lin;
        impl C2Field<f64> for Lin {
            fn value(&self, x: &[f64]) -> f64 {
                2.0 * x[0]
            }
            fn gradient(&self, _: &[f64]) -> Vec<f64> {
                vec![2.0]
            }
            fn hessian(&self, _: &[f64]) -> Vec<f64> {
                vec![0.0]
            }
        }
        assert!((m.generator_apply(&Lin, &[0.5]) - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn penalized_step_examples() {
        let m = SdeModel::kolmogorov(Potential::constant(0.0), 1);
        let h = 0.001;
        let y = step_penalized(&m, &interval(), 10.0, &[1.5], h, &[0.0]).unwrap();
        assert!((y[0] - (1.5 - 10.0 * h)).abs() < 1e-12);
        let q = SdeModel::kolmogorov(Potential::quadratic(1.0), 1);
        let y = step_penalized(&q, &interval(), 10.0, &[0.5], h, &[0.3]).unwrap();
        let plain = 0.5 - 0.5 * h + (2.0 * h).sqrt() * 0.3;
        assert!((y[0] - plain).abs() < 1e-15);
    }

    #[test]
    fn constant_potential_gives_uniform_density() {
        let m = SdeModel::kolmogorov(Potential::constant(0.3), 1);
        let dens = invariant_density(&m, &interval(), 65).unwrap();
        for v in dens.density {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn not_kolmogorov_errors() {
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 1);
        assert_eq!(invariant_density(&m, &interval(), 9).unwrap_err(), Error::NotKolmogorov);
    }
}
