//! Parameterized building blocks shared by the three networks.

use std::rc::Rc;

use rand::Rng;

use crate::autograd::{Bound, Conv1dSpec, ParamId, ParamStore, Tensor, Var};

pub(crate) const NORM_EPS: f64 = 1e-5;

pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self::with_gain(ps, name, fan_in, fan_out, 1.0, rng)
    }

    /// Uniform init with bound `gain / sqrt(fan_in)`; `sqrt(6)` keeps unit
    /// variance through a ReLU-like activation.
    pub fn with_gain(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain / (fan_in as f64).sqrt();
        Self {
            w: ps.add_uniform(format!("{name}.w"), vec![fan_out, fan_in], bound, rng),
            b: ps.add(format!("{name}.b"), Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        x.linear(&p.var(self.w), &p.var(self.b))
    }
}

pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    spec: Conv1dSpec,
}

impl Conv {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: Conv1dSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((cin * kernel) as f64).sqrt();
        Self {
            w: ps.add_uniform(format!("{name}.w"), vec![cout, cin, kernel], bound, rng),
            b: ps.add(format!("{name}.b"), Tensor::zeros(vec![cout])),
            spec,
        }
    }

    /// Length-preserving kernel-3 convolution.
    pub fn same(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self::new(ps, name, cin, cout, 3, Conv1dSpec::same(), rng)
    }

    pub fn pointwise(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self::new(ps, name, cin, cout, 1, Conv1dSpec { stride: 1, padding: 0 }, rng)
    }

    /// Kernel-4 stride-2 convolution halving an even length.
    pub fn down(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self::new(ps, name, cin, cout, 4, Conv1dSpec { stride: 2, padding: 1 }, rng)
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        x.conv1d(&p.var(self.w), &p.var(self.b), self.spec)
    }

    pub fn bias_mut<'a>(&self, ps: &'a mut ParamStore) -> &'a mut Tensor {
        ps.get_mut(self.b)
    }
}

pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl Norm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        Self {
            gamma: ps.add(format!("{name}.gamma"), Tensor::full(vec![channels], 1.0)),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            groups,
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        x.group_norm(self.groups, &p.var(self.gamma), &p.var(self.beta), NORM_EPS)
    }
}

/// Per-channel scale and shift predicted from a conditioning vector.
/// The scale head predicts `gamma - 1` so a zero head is the identity.
pub(crate) struct FilmHead {
    scale: Linear,
    shift: Linear,
}

impl FilmHead {
    pub fn new(ps: &mut ParamStore, name: &str, cond_dim: usize, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            scale: Linear::new(ps, &format!("{name}.scale"), cond_dim, channels, rng),
            shift: Linear::new(ps, &format!("{name}.shift"), cond_dim, channels, rng),
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, cond: Var<'g>) -> Var<'g> {
        let gamma = self.scale.forward(p, cond).affine(1.0, 1.0);
        let beta = self.shift.forward(p, cond);
        film(x, gamma, beta)
    }
}

/// `gamma * x + beta` per channel of `x [B, C, T]`, with `gamma, beta: [B, C]`.
pub fn film<'g>(x: Var<'g>, gamma: Var<'g>, beta: Var<'g>) -> Var<'g> {
    x.scale_shift(&gamma, &beta)
}

/// Pre-activation residual block: GN, SiLU, conv, GN, optional FiLM, SiLU,
/// conv, plus a (projected) identity path.
pub(crate) struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
    film: Option<FilmHead>,
}

impl ResBlock {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        groups: usize,
        cond_dim: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            norm1: Norm::new(ps, &format!("{name}.norm1"), cin, groups),
            conv1: Conv::same(ps, &format!("{name}.conv1"), cin, cout, rng),
            norm2: Norm::new(ps, &format!("{name}.norm2"), cout, groups),
            conv2: Conv::same(ps, &format!("{name}.conv2"), cout, cout, rng),
            skip: (cin != cout).then(|| Conv::pointwise(ps, &format!("{name}.skip"), cin, cout, rng)),
            film: cond_dim.map(|d| FilmHead::new(ps, &format!("{name}.film"), d, cout, rng)),
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, cond: Option<Var<'g>>) -> Var<'g> {
        let h = self.conv1.forward(p, self.norm1.forward(p, x).silu());
        let mut h = self.norm2.forward(p, h);
        if let (Some(film), Some(cond)) = (&self.film, cond) {
            h = film.forward(p, h, cond);
        }
        let h = self.conv2.forward(p, h.silu());
        let identity = match &self.skip {
            Some(skip) => skip.forward(p, x),
            None => x,
        };
        identity.add(&h)
    }
}

/// Reflection indices extending a length-`len` axis to `target`.
pub(crate) fn reflect_index(len: usize, target: usize) -> Rc<Vec<usize>> {
    let period = 2 * len.saturating_sub(1);
    Rc::new(
        (0..target)
            .map(|j| {
                if period == 0 {
                    return 0;
                }
                let r = j % period;
                if r < len {
                    r
                } else {
                    period - r
                }
            })
            .collect(),
    )
}

/// Nearest-neighbour doubling of the last axis.
pub(crate) fn upsample_index(len: usize) -> Rc<Vec<usize>> {
    Rc::new((0..2 * len).map(|j| j / 2).collect())
}

/// First `len` positions of the last axis.
pub(crate) fn crop_index(len: usize) -> Rc<Vec<usize>> {
    Rc::new((0..len).collect())
}
