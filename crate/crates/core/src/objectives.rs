//! Training objectives: spectral reconstruction, hinge adversarial losses
//! and the weighted generator total.
//!
//! Every loss exists as a plain function on waveforms or scores and as a
//! graph function on [`Var`]s used by the trainer. Both forms share the same
//! reductions, so logged values and evaluation numbers use the same units.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Function, Tensor, Var};
use crate::dsp::{
    log_magnitude, multiscale_spectral_distance, stft, stft_var, StftEngine, StftParams, Waveform, LOG_EPS,
    MULTISCALE_FFT_SIZES,
};
use crate::{Error, Result};

/// Weight of the reconstruction loss in the generator total.
pub const LAMBDA_REC: f64 = 2.5;
/// Weight of the commitment loss in the generator total.
pub const LAMBDA_VQ: f64 = 100.0;

/// Per-step loss values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub vq: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(rec: f64, adv_g: f64, adv_d: f64, vq: f64, weights: LossWeights) -> Self {
        Self {
            rec,
            adv_g,
            adv_d,
            vq,
            total: weights.total(adv_g, rec, vq),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.rec, self.adv_g, self.adv_d, self.vq, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Coefficients of the generator total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub vq: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: LAMBDA_REC,
            vq: LAMBDA_VQ,
        }
    }
}

impl LossWeights {
    pub fn total(&self, adv_g: f64, rec: f64, vq: f64) -> f64 {
        adv_g + self.rec * rec + self.vq * vq
    }
}

/// `adv_g + 2.5 rec + 100 vq`.
pub fn total_generator_loss(adv_g: f64, rec: f64, vq: f64) -> f64 {
    LossWeights::default().total(adv_g, rec, vq)
}

/// Graph form of the weighted generator total.
pub fn total_generator_loss_var<'g>(adv_g: Var<'g>, rec: Var<'g>, vq: Var<'g>, weights: LossWeights) -> Var<'g> {
    adv_g.add(&rec.scale(weights.rec)).add(&vq.scale(weights.vq))
}

/// Mean over bins and frames of `|log|STFT(a)| - log|STFT(b)||` with the
/// default STFT parameters.
pub fn log_spectral_l1(a: &Waveform, b: &Waveform) -> Result<f64> {
    check_lengths(a, b)?;
    let params = StftParams::default();
    let la = log_magnitude(&stft(a, &params)?).data;
    let lb = log_magnitude(&stft(b, &params)?).data;
    Ok(la.iter().zip(lb.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / la.len() as f64)
}

fn check_lengths(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Log-spectral L1 plus the multi-scale spectral distance.
pub fn reconstruction_loss(pred: &Waveform, target: &Waveform) -> Result<f64> {
    Ok(log_spectral_l1(pred, target)? + multiscale_spectral_distance(pred, target, &MULTISCALE_FFT_SIZES)?)
}

/// Guards the magnitude gradient at exactly-zero bins.
const MAGNITUDE_DELTA: f64 = 1e-18;

/// One STFT resolution of the reconstruction loss with its weights on the
/// linear and log magnitude distances.
struct Term {
    engine: Arc<StftEngine>,
    lin: f64,
    log: f64,
}

/// Differentiable reconstruction loss over `[B, L]` batches, averaged over
/// the batch.
///
/// Resolutions shared by the log-spectral term and the multi-scale term are
/// evaluated once, and each resolution is a single fused graph operation.
pub struct ReconstructionLoss {
    terms: Vec<Term>,
}

/// Target magnitudes at every resolution of a [`ReconstructionLoss`].
pub struct ReconstructionTarget {
    mags: Vec<Arc<Tensor>>,
}

impl Default for ReconstructionLoss {
    fn default() -> Self {
        Self::new(StftParams::default(), &MULTISCALE_FFT_SIZES).expect("default STFT parameters are valid")
    }
}

impl ReconstructionLoss {
    pub fn new(main: StftParams, scales: &[usize]) -> Result<Self> {
        let mut terms = vec![Term {
            engine: Arc::new(StftEngine::new(main)),
            lin: 0.0,
            log: 1.0,
        }];
        for &n in scales {
            let params = StftParams::hann(n, n / 4)?;
            match terms.iter_mut().find(|t| *t.engine.params() == params) {
                Some(t) => {
                    t.lin += 1.0;
                    t.log += 1.0;
                }
                None => terms.push(Term {
                    engine: Arc::new(StftEngine::new(params)),
                    lin: 1.0,
                    log: 1.0,
                }),
            }
        }
        Ok(Self { terms })
    }

    /// Magnitudes of a `[B, L]` target batch, computed outside any graph.
    pub fn target(&self, target: &Tensor) -> ReconstructionTarget {
        let (batch, len) = (target.shape()[0], target.shape()[1]);
        let mags = self
            .terms
            .iter()
            .map(|t| {
                let (bins, frames) = (t.engine.bins(), t.engine.frames(len));
                let cells = bins * frames;
                let mut re = vec![0.0; cells];
                let mut im = vec![0.0; cells];
                let mut out = Vec::with_capacity(batch * cells);
                for x in target.data().chunks(len) {
                    t.engine.analyze(x, &mut re, &mut im).expect("target long enough for the STFT");
                    out.extend(re.iter().zip(&im).map(|(a, b)| (a * a + b * b + MAGNITUDE_DELTA).sqrt()));
                }
                Arc::new(Tensor::new(vec![batch, bins, frames], out))
            })
            .collect();
        ReconstructionTarget { mags }
    }

    pub fn forward<'g>(&self, pred: Var<'g>, target: &Tensor) -> Var<'g> {
        assert_eq!(pred.shape(), target.shape(), "reconstruction: shape mismatch");
        self.forward_with(pred, &self.target(target))
    }

    /// Loss against magnitudes prepared by [`ReconstructionLoss::target`].
    pub fn forward_with<'g>(&self, pred: Var<'g>, target: &ReconstructionTarget) -> Var<'g> {
        let mut loss: Option<Var<'g>> = None;
        for (term, mag) in self.terms.iter().zip(&target.mags) {
            let d = spectral_l1(stft_var(pred, &term.engine), mag, term.lin, term.log);
            loss = Some(match loss {
                Some(l) => l.add(&d),
                None => d,
            });
        }
        loss.expect("at least one resolution")
    }
}

/// `lin * mean|M - T| + log * mean|log(M + eps) - log(T + eps)|` where `M`
/// is the magnitude of the `[B, 2, bins, frames]` spectrum `spec`.
fn spectral_l1<'g>(spec: Var<'g>, target: &Arc<Tensor>, lin: f64, log: f64) -> Var<'g> {
    let value = spec.value();
    let inner = target.len() / target.shape()[0];
    assert_eq!(value.len(), 2 * target.len(), "spectral_l1: target shape");
    let mut total = 0.0;
    for (chunk, t) in value.data().chunks(2 * inner).zip(target.data().chunks(inner)) {
        let (re, im) = chunk.split_at(inner);
        for i in 0..inner {
            let m = (re[i] * re[i] + im[i] * im[i] + MAGNITUDE_DELTA).sqrt();
            total += lin * (m - t[i]).abs() + log * ((m + LOG_EPS).ln() - (t[i] + LOG_EPS).ln()).abs();
        }
    }
    let n = target.len() as f64;
    spec.graph().apply(
        Box::new(SpectralL1Fn {
            target: Arc::clone(target),
            lin,
            log,
        }),
        &[spec],
        Tensor::scalar(total / n),
    )
}

struct SpectralL1Fn {
    target: Arc<Tensor>,
    lin: f64,
    log: f64,
}

impl Function for SpectralL1Fn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let spec = inputs[0];
        let inner = self.target.len() / self.target.shape()[0];
        let scale = grad.item() / self.target.len() as f64;
        let mut gx = Tensor::zeros(spec.shape().to_vec());
        let chunks = spec.data().chunks(2 * inner).zip(self.target.data().chunks(inner));
        for ((chunk, t), out) in chunks.zip(gx.data_mut().chunks_mut(2 * inner)) {
            let (re, im) = chunk.split_at(inner);
            let (gre, gim) = out.split_at_mut(inner);
            for i in 0..inner {
                let m = (re[i] * re[i] + im[i] * im[i] + MAGNITUDE_DELTA).sqrt();
                let d_lin = sign(m - t[i]);
                let d_log = sign((m + LOG_EPS).ln() - (t[i] + LOG_EPS).ln()) / (m + LOG_EPS);
                let s = scale * (self.lin * d_lin + self.log * d_log) / m;
                gre[i] = s * re[i];
                gim[i] = s * im[i];
            }
        }
        vec![Some(gx)]
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean(max(0, 1 - real)) + mean(max(0, 1 + fake))`.
pub fn adversarial_d_loss(real: &[f64], fake: &[f64]) -> f64 {
    let r = real.iter().map(|s| (1.0 - s).max(0.0)).sum::<f64>() / real.len() as f64;
    let f = fake.iter().map(|s| (1.0 + s).max(0.0)).sum::<f64>() / fake.len() as f64;
    r + f
}

pub fn adversarial_d_loss_var<'g>(real: Var<'g>, fake: Var<'g>) -> Var<'g> {
    let r = real.neg().affine(1.0, 1.0).relu().mean();
    let f = fake.affine(1.0, 1.0).relu().mean();
    r.add(&f)
}

/// `-mean(fake)`.
pub fn adversarial_g_loss(fake: &[f64]) -> f64 {
    -fake.iter().sum::<f64>() / fake.len() as f64
}

pub fn adversarial_g_loss_var(fake: Var<'_>) -> Var<'_> {
    fake.mean().neg()
}
