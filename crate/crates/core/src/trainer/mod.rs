//! End-to-end training: session set-up with k-means codebook
//! initialization, alternating discriminator and generator updates, EMA
//! codebook maintenance, CSV telemetry and resumable checkpoints.
//!
//! Each step first updates the discriminator on real targets against
//! detached generator outputs, then updates the style encoder, projection
//! and generator on the weighted generator loss, and finally moves the
//! codebook toward the codes assigned in the batch. Batches are processed
//! in micro-batches whose gradients are summed, so peak memory does not
//! depend on the batch size.

mod adam;
mod checkpoint;
mod config;
mod model;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Archive, FORMAT_VERSION};
pub use config::{NetworkPreset, TrainConfig};
pub use model::Model;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::data::{sample_example, StemPool, TrainingExample};
use crate::dsp::{log_magnitude_var, StftEngine, StftParams, CROP_LEN};
use crate::nets::{mixture_phase, Discriminator};
use crate::objectives::{
    adversarial_d_loss_var, adversarial_g_loss_var, total_generator_loss_var, LossBreakdown, ReconstructionLoss,
};
use crate::vq::{commitment_loss, kmeans_init, quantize_batch, straight_through, usage_stats, Assignments, UsageStats};
use crate::{Error, Result};

use model::{build_networks, load_params, store_params};

/// Header line of the training log.
pub const LOG_HEADER: &str = "step,rec,adv_g,adv_d,vq,total,perplexity,active_codes";

/// Outcome of one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub losses: LossBreakdown,
    pub usage: UsageStats,
    pub assignments: Vec<usize>,
}

impl StepReport {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, l.rec, l.adv_g, l.adv_d, l.vq, l.total, self.usage.perplexity, self.usage.active_codes
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionMeta {
    config: TrainConfig,
    step: u64,
    rng: RngState,
    codebook_decay: f64,
    codebook_step: u64,
    adam_g_t: u64,
    adam_d_t: u64,
}

/// Per-example inputs shared by both update phases.
struct Prepared {
    mel_ref: Tensor,
    mix_mag: Tensor,
    mix_phase: Tensor,
    targ: Tensor,
    targ_log_mag: Tensor,
}

/// All mutable training state.
pub struct Session {
    pub config: TrainConfig,
    pub model: Model,
    pub discriminator: Discriminator,
    pub step: u64,
    opt_g: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    pool: Arc<StemPool>,
    engine: Arc<StftEngine>,
    rec: ReconstructionLoss,
    /// Where to write diagnostics when a loss turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

fn generator_params(model: &Model) -> impl Iterator<Item = &Tensor> {
    model
        .encoder
        .params
        .iter()
        .chain(model.projection.params.iter())
        .chain(model.generator.params.iter())
        .map(|(_, t)| t)
}

fn add_grads(acc: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) {
    match acc {
        Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
        None => *acc = Some(grads),
    }
}

fn stack(rows: &[&Tensor]) -> Tensor {
    let mut shape = vec![rows.len()];
    shape.extend_from_slice(rows[0].shape());
    Tensor::new(shape, rows.iter().flat_map(|t| t.data().iter().copied()).collect())
}

impl Session {
    /// Builds the networks, draws the first batch and initializes the
    /// codebook by k-means over its projected reference codes.
    pub fn initialize(config: TrainConfig, pool: Arc<StemPool>) -> Result<Self> {
        config.validate()?;
        let network = config.network_config();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let engine = Arc::new(StftEngine::new(StftParams::default()));
        let (encoder, projection, generator) = build_networks(&network, engine.clone(), &mut rng);
        let discriminator = Discriminator::new(&network, engine.bins(), &mut rng);

        let mut session = Self {
            opt_g: Adam::new(config.adam_g(), std::iter::empty()),
            opt_d: Adam::new(config.adam_d(), discriminator.params.iter().map(|(_, t)| t)),
            model: Model {
                network,
                encoder,
                projection,
                generator,
                codebook: crate::vq::Codebook::from_entries(crate::vq::CODE_DIM, vec![1.0; crate::vq::CODE_DIM])?,
            },
            discriminator,
            step: 0,
            rng,
            pool,
            engine,
            rec: ReconstructionLoss::default(),
            dump_dir: None,
            config,
        };
        session.opt_g = Adam::new(session.config.adam_g(), generator_params(&session.model));

        let batch = session.draw_batch()?;
        let refs: Vec<_> = batch.iter().map(|e| &e.x_ref).collect();
        let codes = session.model.project_batch(&refs)?;
        session.model.codebook = kmeans_init(
            codes.data(),
            crate::vq::CODE_DIM,
            session.config.codebook_size,
            session.config.kmeans_iters,
            &mut session.rng,
        )?;
        Ok(session)
    }

    pub fn pool(&self) -> &Arc<StemPool> {
        &self.pool
    }

    pub fn draw_batch(&mut self) -> Result<Vec<TrainingExample>> {
        let policy = self.config.silence();
        (0..self.config.batch_size)
            .map(|_| sample_example(&self.pool, &mut self.rng, self.config.max_extra_stems, &policy))
            .collect()
    }

    fn prepare(&self, ex: &TrainingExample) -> Result<Prepared> {
        let bins = self.engine.bins();
        let mel = self.model.encoder.mel_batch(&[&ex.x_ref])?;
        let mel_ref = mel.reshaped(vec![crate::dsp::N_MELS, self.engine.frames(ex.x_ref.len())]);
        let mix_spec = self.engine.stft(&ex.x_mix)?;
        let mix = mix_spec.magnitude().data;
        let frames = mix.ncols();
        let targ = Tensor::new(vec![ex.x_targ.len()], ex.x_targ.samples().to_vec());
        let log = crate::dsp::log_magnitude(&self.engine.stft(&ex.x_targ)?).data;
        Ok(Prepared {
            mel_ref,
            mix_mag: Tensor::new(vec![bins, frames], mix.iter().copied().collect()),
            mix_phase: mixture_phase(&mix_spec),
            targ,
            targ_log_mag: Tensor::new(vec![bins, frames], log.iter().copied().collect()),
        })
    }

    /// One discriminator update followed by one generator-side update and
    /// an EMA codebook update.
    pub fn train_step(&mut self, batch: &[TrainingExample]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        for ex in batch {
            if ex.x_mix.len() != CROP_LEN || ex.x_targ.len() != CROP_LEN || ex.x_ref.len() != CROP_LEN {
                return Err(Error::Shape(format!("training crops must be {CROP_LEN} samples")));
            }
        }
        let prepared = batch.iter().map(|ex| self.prepare(ex)).collect::<Result<Vec<_>>>()?;
        let total = batch.len() as f64;
        let weights = self.config.weights();
        let micro = self.config.micro_batch;

        // Discriminator phase.
        let mut grads_d = None;
        let mut adv_d = 0.0;
        for chunk in prepared.chunks(micro) {
            let share = chunk.len() as f64 / total;
            let mel = stack(&chunk.iter().map(|p| &p.mel_ref).collect::<Vec<_>>());
            let mix = stack(&chunk.iter().map(|p| &p.mix_mag).collect::<Vec<_>>());
            let phase = stack(&chunk.iter().map(|p| &p.mix_phase).collect::<Vec<_>>());
            let fake_log_mag = {
                let g = Graph::new();
                let pe = self.model.encoder.params.bind(&g, false);
                let pp = self.model.projection.params.bind(&g, false);
                let pg = self.model.generator.params.bind(&g, false);
                let z = self.model.encoder.forward(&pe, g.constant(mel));
                let zf = self.model.projection.forward(&pp, z);
                let (_, q) = quantize_batch(&zf.value(), &self.model.codebook);
                let out = self
                    .model
                    .generator
                    .forward(&pg, g.constant(mix), g.constant(phase), g.constant(q), CROP_LEN);
                let (_, lm) = log_magnitude_var(out.waveform, &self.engine);
                (*lm.value()).clone()
            };
            let g = Graph::new();
            let pd = self.discriminator.params.bind(&g, true);
            let real = self
                .discriminator
                .forward(&pd, g.constant(stack(&chunk.iter().map(|p| &p.targ_log_mag).collect::<Vec<_>>())));
            let fake = self.discriminator.forward(&pd, g.constant(fake_log_mag));
            let loss = adversarial_d_loss_var(real, fake);
            adv_d += share * loss.item();
            add_grads(&mut grads_d, pd.grads(&g.backward(loss.scale(share))));
        }
        if !adv_d.is_finite() {
            return Err(self.non_finite(batch, "discriminator loss", LossBreakdown { adv_d, ..Default::default() }));
        }
        self.opt_d
            .step(self.discriminator.params.values_mut(), &grads_d.expect("non-empty batch"));

        // Generator phase.
        let mut grads_g = None;
        let (mut rec, mut adv_g, mut vq) = (0.0, 0.0, 0.0);
        let mut assignments = Assignments::zeros(self.model.codebook.size(), self.model.codebook.dim());
        let mut indices = Vec::with_capacity(batch.len());
        for chunk in prepared.chunks(micro) {
            let share = chunk.len() as f64 / total;
            let g = Graph::new();
            let pe = self.model.encoder.params.bind(&g, true);
            let pp = self.model.projection.params.bind(&g, true);
            let pg = self.model.generator.params.bind(&g, true);
            let pd = self.discriminator.params.bind(&g, false);
            let mel = stack(&chunk.iter().map(|p| &p.mel_ref).collect::<Vec<_>>());
            let mix = stack(&chunk.iter().map(|p| &p.mix_mag).collect::<Vec<_>>());
            let phase = stack(&chunk.iter().map(|p| &p.mix_phase).collect::<Vec<_>>());
            let targ = stack(&chunk.iter().map(|p| &p.targ).collect::<Vec<_>>());
            let z = self.model.encoder.forward(&pe, g.constant(mel));
            let zf = self.model.projection.forward(&pp, z);
            let zf_value = zf.value();
            let (results, q) = quantize_batch(&zf_value, &self.model.codebook);
            let q = g.constant(q);
            let code = straight_through(zf, q);
            let commit = commitment_loss(zf, q);
            let out = self
                .model
                .generator
                .forward(&pg, g.constant(mix), g.constant(phase), code, CROP_LEN);
            let rec_loss = self.rec.forward(out.waveform, &targ);
            let (_, lm) = log_magnitude_var(out.waveform, &self.engine);
            let adv = adversarial_g_loss_var(self.discriminator.forward(&pd, lm));
            let loss = total_generator_loss_var(adv, rec_loss, commit, weights);
            rec += share * rec_loss.item();
            adv_g += share * adv.item();
            vq += share * commit.item();
            let grads = g.backward(loss.scale(share));
            let mut all = pe.grads(&grads);
            all.extend(pp.grads(&grads));
            all.extend(pg.grads(&grads));
            add_grads(&mut grads_g, all);
            for (r, row) in results.iter().zip(zf_value.data().chunks(crate::vq::CODE_DIM)) {
                assignments.add(r.code_index, row);
                indices.push(r.code_index);
            }
        }
        let losses = LossBreakdown::new(rec, adv_g, adv_d, vq, weights);
        if !losses.is_finite() {
            return Err(self.non_finite(batch, "generator loss", losses));
        }
        let model = &mut self.model;
        let params = model
            .encoder
            .params
            .values_mut()
            .chain(model.projection.params.values_mut())
            .chain(model.generator.params.values_mut());
        self.opt_g.step(params, &grads_g.expect("non-empty batch"));
        model.codebook.ema_update(&assignments);

        self.step += 1;
        Ok(StepReport {
            step: self.step,
            losses,
            usage: usage_stats(model.codebook.size(), &indices)?,
            assignments: indices,
        })
    }

    fn non_finite(&self, batch: &[TrainingExample], what: &str, losses: LossBreakdown) -> Error {
        let msg = format!("{what} is not finite at step {}", self.step + 1);
        if let Some(dir) = &self.dump_dir {
            let items: Vec<_> = batch
                .iter()
                .map(|e| {
                    serde_json::json!({
                        "stem": e.stem,
                        "extra_stems": e.extra_stems,
                        "k": e.k,
                        "rms_mix": e.x_mix.rms(),
                        "rms_targ": e.x_targ.rms(),
                        "rms_ref": e.x_ref.rms(),
                    })
                })
                .collect();
            let dump = serde_json::json!({"step": self.step + 1, "what": what, "losses": losses, "batch": items});
            let path = dir.join(format!("nonfinite_step_{:08}.json", self.step + 1));
            match fs::create_dir_all(dir).and_then(|_| fs::write(&path, dump.to_string())) {
                Ok(()) => return Error::NonFinite(format!("{msg}; inputs dumped to {}", path.display())),
                Err(e) => warn!("could not write diagnostic dump: {e}"),
            }
        }
        Error::NonFinite(msg)
    }

    /// Draws a batch and trains on it.
    pub fn step_once(&mut self) -> Result<StepReport> {
        let batch = self.draw_batch()?;
        self.train_step(&batch)
    }

    /// Trains until `total_steps`, appending to `<run_dir>/train_log.csv`
    /// and writing `<run_dir>/checkpoints/step_XXXXXXXX.ckpt` every
    /// `checkpoint_every` steps and at the end.
    pub fn fit(&mut self, run_dir: &Path, mut on_step: impl FnMut(&StepReport)) -> Result<Archive> {
        let ckpt_dir = run_dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir)?;
        let log_path = run_dir.join("train_log.csv");
        let fresh = !log_path.exists();
        let mut log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if fresh {
            writeln!(log, "{LOG_HEADER}")?;
        }
        self.dump_dir.get_or_insert_with(|| run_dir.to_path_buf());
        while self.step < self.config.total_steps {
            let report = self.step_once()?;
            writeln!(log, "{}", report.csv_row())?;
            if report.step % 10 == 0 || report.step == 1 {
                let l = &report.losses;
                info!(
                    "step {} rec {:.4} adv_g {:.4} adv_d {:.4} vq {:.5} perplexity {:.2}",
                    report.step, l.rec, l.adv_g, l.adv_d, l.vq, report.usage.perplexity
                );
            }
            on_step(&report);
            if report.step % self.config.checkpoint_every == 0 || report.step == self.config.total_steps {
                log.flush()?;
                let path = ckpt_dir.join(format!("step_{:08}.ckpt", report.step));
                self.to_archive().save(&path)?;
                info!("wrote {}", path.display());
            }
        }
        log.flush()?;
        Ok(self.to_archive())
    }

    /// Full training state.
    pub fn to_archive(&self) -> Archive {
        let meta = SessionMeta {
            config: self.config.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            codebook_decay: self.model.codebook.decay(),
            codebook_step: self.model.codebook.step(),
            adam_g_t: self.opt_g.t,
            adam_d_t: self.opt_d.t,
        };
        let mut archive = Archive {
            meta: serde_json::to_value(meta).expect("metadata serializes"),
            tensors: Vec::new(),
        };
        self.model.store(&mut archive);
        store_params(&mut archive, "discriminator", &self.discriminator.params);
        for (name, opt) in [("adam_g", &self.opt_g), ("adam_d", &self.opt_d)] {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                archive.push(format!("{name}/m/{i}"), m.clone());
                archive.push(format!("{name}/v/{i}"), v.clone());
            }
        }
        archive
    }

    /// Restores a session saved by [`Session::to_archive`].
    pub fn from_archive(archive: &Archive, pool: Arc<StemPool>) -> Result<Self> {
        let meta: SessionMeta = serde_json::from_value(archive.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("bad session metadata: {e}")))?;
        let network = meta.config.network_config();
        let model = Model::restore(archive, &network, meta.codebook_decay, meta.codebook_step)?;
        let engine = model.generator.engine().clone();
        let mut discriminator = Discriminator::new(&network, engine.bins(), &mut ChaCha8Rng::seed_from_u64(0));
        load_params(archive, "discriminator", &mut discriminator.params)?;
        let restore_adam = |name: &str, config: AdamConfig, t: u64, params: Vec<&Tensor>| -> Result<Adam> {
            let mut opt = Adam::new(config, params);
            opt.t = t;
            for i in 0..opt.m.len() {
                opt.m[i] = archive.require(&format!("{name}/m/{i}"))?.clone();
                opt.v[i] = archive.require(&format!("{name}/v/{i}"))?.clone();
            }
            Ok(opt)
        };
        let opt_g = restore_adam("adam_g", meta.config.adam_g(), meta.adam_g_t, generator_params(&model).collect())?;
        let opt_d = restore_adam(
            "adam_d",
            meta.config.adam_d(),
            meta.adam_d_t,
            discriminator.params.iter().map(|(_, t)| t).collect(),
        )?;
        Ok(Self {
            rng: meta.rng.restore()?,
            step: meta.step,
            config: meta.config,
            model,
            discriminator,
            opt_g,
            opt_d,
            pool,
            engine,
            rec: ReconstructionLoss::default(),
            dump_dir: None,
        })
    }
}

/// Inference model stored in a checkpoint.
pub fn load_model(path: &Path) -> Result<(Model, TrainConfig)> {
    let archive = Archive::load(path)?;
    let meta: SessionMeta = serde_json::from_value(archive.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("bad session metadata: {e}")))?;
    let model = Model::restore(&archive, &meta.config.network_config(), meta.codebook_decay, meta.codebook_step)?;
    Ok((model, meta.config))
}
