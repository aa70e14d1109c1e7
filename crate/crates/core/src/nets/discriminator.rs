use rand::Rng;

use super::layers::{Conv, Norm, ResBlock};
use super::{inference_graph, Network, NetworkConfig};
use crate::autograd::{Bound, ParamStore, Tensor, Var};
use crate::dsp::LogMagnitudeSpectrogram;

/// Patch-style critic over log-magnitude frames. Scores are averaged over
/// the remaining time positions into one unbounded value per item.
pub struct Discriminator {
    pub params: ParamStore,
    conv_in: Conv,
    levels: Vec<(ResBlock, Option<Conv>)>,
    norm_out: Norm,
    conv_out: Conv,
}

impl Network for Discriminator {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl Discriminator {
    pub fn new(config: &NetworkConfig, bins: usize, rng: &mut impl Rng) -> Self {
        let ps = &mut ParamStore::new();
        let widths = &config.discriminator_widths;
        let conv_in = Conv::same(ps, "conv_in", bins, widths[0], rng);
        let levels = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let block = ResBlock::new(ps, &format!("level{i}.block"), w, w, config.groups, None, rng);
                let down = widths
                    .get(i + 1)
                    .map(|&next| Conv::down(ps, &format!("level{i}.down"), w, next, rng));
                (block, down)
            })
            .collect();
        let last = *widths.last().unwrap();
        let norm_out = Norm::new(ps, "norm_out", last, config.groups);
        let conv_out = Conv::pointwise(ps, "conv_out", last, 1, rng);
        Self {
            params: std::mem::take(ps),
            conv_in,
            levels,
            norm_out,
            conv_out,
        }
    }

    /// `[B, bins, frames]` log-magnitudes to `[B]` scores.
    pub fn forward<'g>(&self, p: &Bound<'g>, log_mag: Var<'g>) -> Var<'g> {
        let batch = log_mag.shape()[0];
        let mut h = self.conv_in.forward(p, log_mag);
        for (block, down) in &self.levels {
            h = block.forward(p, h, None);
            if let Some(down) = down {
                h = down.forward(p, h.leaky_relu(0.2));
            }
        }
        let h = self.conv_out.forward(p, self.norm_out.forward(p, h).leaky_relu(0.2));
        h.mean_last().reshape(vec![batch])
    }

    pub fn discriminate(&self, log_mag: &LogMagnitudeSpectrogram) -> f64 {
        let g = inference_graph();
        let p = self.params.bind(&g, false);
        let x = g.constant(Tensor::new(
            vec![1, log_mag.bins(), log_mag.frames()],
            log_mag.data.iter().copied().collect(),
        ));
        self.forward(&p, x).item()
    }
}
