//! Differentiable STFT and iSTFT on autograd tensors.
//!
//! Both maps are linear, so their backward rules are the adjoint maps the
//! [`StftEngine`] exposes.

use std::sync::Arc;

use super::{StftEngine, LOG_EPS};
use crate::autograd::{Function, Tensor, Var};

/// Guards the magnitude gradient at exactly-zero bins.
const MAGNITUDE_DELTA: f64 = 1e-18;

struct StftFn {
    engine: Arc<StftEngine>,
}

impl Function for StftFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (batch, len) = (inputs[0].shape()[0], inputs[0].shape()[1]);
        let cells = self.engine.bins() * self.engine.frames(len);
        let mut gx = Tensor::zeros(vec![batch, len]);
        for (b, out) in gx.data_mut().chunks_mut(len).enumerate() {
            let g = &grad.data()[b * 2 * cells..(b + 1) * 2 * cells];
            let (gre, gim) = g.split_at(cells);
            self.engine.analyze_adjoint(gre, gim, out);
        }
        vec![Some(gx)]
    }
}

/// `[B, L]` signals to `[B, 2, bins, frames]` (real, imaginary) spectra.
pub fn stft_var<'g>(x: Var<'g>, engine: &Arc<StftEngine>) -> Var<'g> {
    let value = x.value();
    let (batch, len) = (value.shape()[0], value.shape()[1]);
    let (bins, frames) = (engine.bins(), engine.frames(len));
    let cells = bins * frames;
    let mut data = vec![0.0; batch * 2 * cells];
    for (b, out) in data.chunks_mut(2 * cells).enumerate() {
        let (re, im) = out.split_at_mut(cells);
        engine
            .analyze(&value.data()[b * len..(b + 1) * len], re, im)
            .expect("signal long enough for the STFT");
    }
    x.graph().apply(
        Box::new(StftFn {
            engine: Arc::clone(engine),
        }),
        &[x],
        Tensor::new(vec![batch, 2, bins, frames], data),
    )
}

struct IstftFn {
    engine: Arc<StftEngine>,
}

impl Function for IstftFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let shape = inputs[0].shape();
        let (bins, frames) = (shape[2], shape[3]);
        let len = grad.shape()[1];
        let cells = bins * frames;
        let mut gs = Tensor::zeros(shape.to_vec());
        for (b, out) in gs.data_mut().chunks_mut(2 * cells).enumerate() {
            let (re, im) = out.split_at_mut(cells);
            self.engine
                .synthesize_adjoint(&grad.data()[b * len..(b + 1) * len], frames, re, im);
        }
        vec![Some(gs)]
    }
}

/// `[B, 2, bins, frames]` spectra to `[B, len]` signals.
pub fn istft_var<'g>(spec: Var<'g>, engine: &Arc<StftEngine>, len: usize) -> Var<'g> {
    let value = spec.value();
    let shape = value.shape();
    assert_eq!(shape.len(), 4, "istft_var expects [B, 2, bins, frames]");
    assert_eq!(shape[1], 2);
    assert_eq!(shape[2], engine.bins(), "istft_var: bin count");
    let (batch, frames) = (shape[0], shape[3]);
    let cells = engine.bins() * frames;
    let mut data = Vec::with_capacity(batch * len);
    for chunk in value.data().chunks(2 * cells) {
        let (re, im) = chunk.split_at(cells);
        data.extend(engine.synthesize(re, im, frames, len));
    }
    spec.graph().apply(
        Box::new(IstftFn {
            engine: Arc::clone(engine),
        }),
        &[spec],
        Tensor::new(vec![batch, len], data),
    )
}

/// Magnitude and `log(|z| + LOG_EPS)` of `[B, L]` signals, each `[B, bins, frames]`.
pub fn log_magnitude_var<'g>(x: Var<'g>, engine: &Arc<StftEngine>) -> (Var<'g>, Var<'g>) {
    let mag = stft_var(x, engine).complex_abs(MAGNITUDE_DELTA);
    let log_mag = mag.affine(1.0, LOG_EPS).ln();
    (mag, log_mag)
}
