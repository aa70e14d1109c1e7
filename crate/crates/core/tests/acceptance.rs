//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The toy-reproduction run is resumable: its checkpoints live under
//! `VQSEP_TOY_DIR` (default `<target>/tmp/toy-acceptance`), and since training
//! is bit-reproducible a cached checkpoint is the same model a fresh run
//! would produce. `VQSEP_TOY_STEPS` overrides the step budget.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vqsep::autograd::{Graph, Tensor, Var};
use vqsep::data::{make_toy_corpus, Manifest, SilencePolicy, StemPool};
use vqsep::dsp::{istft, log_magnitude_var, sine, stft, StftParams, Waveform, CROP_LEN};
use vqsep::evalsuite::{build_trials, eval_absent, eval_clusters, eval_l1, export_reports, OracleExtractor, K_EVAL};
use vqsep::nets::{mixture_phase, Discriminator, NetworkConfig};
use vqsep::objectives::{
    adversarial_d_loss, adversarial_d_loss_var, adversarial_g_loss, adversarial_g_loss_var, total_generator_loss_var,
    LossWeights, ReconstructionLoss,
};
use vqsep::separator::separate;
use vqsep::trainer::{Archive, Model, Session, TrainConfig};
use vqsep::vq::{
    commitment_loss, quantize_batch, straight_through, Assignments, Codebook, CODE_DIM, EMA_DECAY, LAPLACE_EPS,
};

/// Toy acceptance training budget.
const TOY_STEPS: u64 = 17_000;
/// Learning rate of the toy acceptance run.
const TOY_LR: f64 = 1e-4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: [(&str, &str, fn() -> vqsep::Result<Outcome>); 6] = [
        ("P1", "STFT round trip and COLA", p1),
        ("P2", "codebook EMA and quantization oracles", p2),
        ("P3", "gradient checks", p3),
        ("P4", "determinism", p4),
        ("P5", "toy-corpus reproduction", p5),
        ("P6", "evaluation harness integrity", p6),
    ];
    let only = std::env::var("VQSEP_ONLY").ok();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.as_deref().is_some_and(|o| !o.split(',').any(|x| x == id)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{id} {} {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v = normal(rng, n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn p1() -> vqsep::Result<Outcome> {
    let params = StftParams::default();
    let cola = params.cola_deviation();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let len = rng.random_range(4096..3 * 44_100);
        let samples = match i % 4 {
            0 => normal(&mut rng, len).iter().map(|v| 0.3 * v).collect(),
            1 => sine(rng.random_range(20.0..20_000.0), 0.8, len).into_samples(),
            // Impulse train.
            2 => (0..len).map(|n| if n % 997 == 0 { 1.0 } else { 0.0 }).collect(),
            _ => {
                let chirp_rate = rng.random_range(100.0..5000.0);
                (0..len)
                    .map(|n| {
                        let t = n as f64 / 44_100.0;
                        (std::f64::consts::TAU * (50.0 * t + chirp_rate * t * t)).sin() * (1.0 - t / 3.0)
                    })
                    .collect()
            }
        };
        let x = Waveform::from_samples(samples);
        let spec = stft(&x, &params)?;
        let y = istft(&spec.magnitude(), &spec.phase(), &params, Some(x.len()))?;
        let err = x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(err / x.samples().iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(outcome(
        worst < 1e-5 && cola <= 1e-6,
        format!("worst relative L2 {worst:.2e} over 100 signals, COLA deviation {cola:.2e}"),
    ))
}

/// Closed-form EMA written out per scalar, independently of the codebook code.
struct EmaOracle {
    sizes: Vec<f64>,
    sums: Vec<Vec<f64>>,
}

impl EmaOracle {
    fn step(&mut self, counts: &[f64], sums: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.sizes.len();
        for i in 0..n {
            self.sizes[i] = EMA_DECAY * self.sizes[i] + (1.0 - EMA_DECAY) * counts[i];
            for d in 0..CODE_DIM {
                self.sums[i][d] = EMA_DECAY * self.sums[i][d] + (1.0 - EMA_DECAY) * sums[i][d];
            }
        }
        let total: f64 = self.sizes.iter().sum();
        (0..n)
            .map(|i| {
                let smoothed = (self.sizes[i] + LAPLACE_EPS) / (total + n as f64 * LAPLACE_EPS) * total;
                let mean: Vec<f64> = self.sums[i].iter().map(|s| s / smoothed).collect();
                let norm = dot(&mean, &mean).sqrt();
                mean.iter().map(|m| m / norm).collect()
            })
            .collect()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, cb: &Codebook, size: usize) -> (Assignments, Vec<f64>, Vec<Vec<f64>>) {
    let n = cb.size();
    let mut batch = Assignments::zeros(n, CODE_DIM);
    let mut counts = vec![0.0; n];
    let mut sums = vec![vec![0.0; CODE_DIM]; n];
    for _ in 0..size {
        let z = unit(rng, CODE_DIM);
        let i = cb.nearest(&z);
        batch.add(i, &z);
        counts[i] += 1.0;
        sums[i].iter_mut().zip(&z).for_each(|(s, v)| *s += v);
    }
    (batch, counts, sums)
}

fn p2() -> vqsep::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let entries: Vec<f64> = (0..16).flat_map(|_| unit(&mut rng, CODE_DIM)).collect();
    let mut cb = Codebook::from_entries(CODE_DIM, entries)?;
    let mut oracle = EmaOracle {
        sizes: cb.ema_cluster_size().to_vec(),
        sums: cb.ema_embed_sum().chunks(CODE_DIM).map(<[f64]>::to_vec).collect(),
    };
    let mut ema_err = 0.0f64;
    for _ in 0..100 {
        let (batch, counts, sums) = random_batch(&mut rng, &cb, 32);
        cb.ema_update(&batch);
        let expected = oracle.step(&counts, &sums);
        for (i, row) in expected.iter().enumerate() {
            for d in 0..CODE_DIM {
                ema_err = ema_err.max((cb.entry(i)[d] - row[d]).abs());
                ema_err = ema_err.max((cb.ema_embed_sum()[i * CODE_DIM + d] - oracle.sums[i][d]).abs());
            }
            ema_err = ema_err.max((cb.ema_cluster_size()[i] - oracle.sizes[i]).abs());
        }
    }

    let mut agree = 0;
    for _ in 0..1000 {
        let z = normal(&mut rng, CODE_DIM);
        let zn = dot(&z, &z).sqrt();
        let best = (0..cb.size())
            .map(|i| {
                let e = cb.entry(i);
                dot(&z, e) / (zn * dot(e, e).sqrt())
            })
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
        agree += usize::from(cb.quantize(&z).code_index == best.0);
    }

    for _ in 0..1000 {
        let (batch, _, _) = random_batch(&mut rng, &cb, 32);
        cb.ema_update(&batch);
    }
    let drift = cb.max_norm_deviation();
    Ok(outcome(
        ema_err <= 1e-9 && agree == 1000 && drift <= 1e-6,
        format!("EMA max error {ema_err:.1e}, quantize agreement {agree}/1000, norm drift {drift:.1e} after 1000 updates"),
    ))
}

fn numeric_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max elementwise error relative to the largest gradient magnitude.
fn rel_err(analytic: &Tensor, numeric: &[f64]) -> f64 {
    let scale = numeric.iter().map(|v| v.abs()).fold(1e-12, f64::max);
    analytic.data().iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

/// Draws values that stay at least `margin` away from the hinge kinks at +-1.
fn off_kink(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> Tensor {
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-2.0..2.0);
            if (v.abs() - 1.0).abs() > margin {
                break v;
            }
        })
        .collect();
    Tensor::new(vec![n], data)
}

fn p3() -> vqsep::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut errs = Vec::new();

    let rec = ReconstructionLoss::new(StftParams::hann(64, 16)?, &[64, 32, 16])?;
    let x = Tensor::new(vec![2, 160], normal(&mut rng, 320));
    let t = Tensor::new(vec![2, 160], normal(&mut rng, 320));
    let g = Graph::new();
    let xv = g.param(x.clone());
    let analytic = g.backward(rec.forward(xv, &t)).get_or_zeros(xv);
    let numeric = numeric_grad(&x, 1e-6, |v| rec.forward(Graph::new().constant(v.clone()), &t).item());
    errs.push(("rec", rel_err(&analytic, &numeric)));

    let real = off_kink(&mut rng, 16, 1e-3);
    let fake = off_kink(&mut rng, 16, 1e-3);
    let g = Graph::new();
    let (rv, fv) = (g.param(real.clone()), g.param(fake.clone()));
    let grads = g.backward(adversarial_d_loss_var(rv, fv));
    let nr = numeric_grad(&real, 1e-6, |v| adversarial_d_loss(v.data(), fake.data()));
    let nf = numeric_grad(&fake, 1e-6, |v| adversarial_d_loss(real.data(), v.data()));
    errs.push(("hinge-D", rel_err(&grads.get_or_zeros(rv), &nr).max(rel_err(&grads.get_or_zeros(fv), &nf))));

    let g = Graph::new();
    let fv = g.param(fake.clone());
    let analytic = g.backward(adversarial_g_loss_var(fv)).get_or_zeros(fv);
    errs.push(("hinge-G", rel_err(&analytic, &numeric_grad(&fake, 1e-6, |v| adversarial_g_loss(v.data())))));

    let z = Tensor::new(vec![4, CODE_DIM], normal(&mut rng, 4 * CODE_DIM));
    let q = Tensor::new(vec![4, CODE_DIM], (0..4).flat_map(|_| unit(&mut rng, CODE_DIM)).collect());
    let g = Graph::new();
    let zv = g.param(z.clone());
    let analytic = g.backward(commitment_loss(zv, g.constant(q.clone()))).get_or_zeros(zv);
    let numeric = numeric_grad(&z, 1e-6, |v| {
        let g = Graph::new();
        commitment_loss(g.constant(v.clone()), g.constant(q.clone())).item()
    });
    errs.push(("commitment", rel_err(&analytic, &numeric)));

    let (encoder_grad, codebook_grad) = straight_through_flow(&mut rng)?;
    let fd_ok = errs.iter().all(|(_, e)| *e < 1e-3);
    let listed: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Ok(outcome(
        fd_ok && encoder_grad > 0.0 && codebook_grad.unwrap_or(0.0) == 0.0,
        format!(
            "FD relative errors [{}], encoder gradient norm {encoder_grad:.2e}, codebook task-gradient {}",
            listed.join(", "),
            codebook_grad.map_or("absent".to_string(), |v| format!("{v:e}"))
        ),
    ))
}

/// Runs the full generator-side loss through encoder, projection, quantizer
/// and generator on one item. Codebook entries enter the graph as a
/// trainable leaf through a one-hot lookup. Returns the encoder gradient norm
/// and the largest codebook gradient magnitude, `None` when no gradient path
/// reaches the codebook at all.
fn straight_through_flow(rng: &mut ChaCha8Rng) -> vqsep::Result<(f64, Option<f64>)> {
    let network = NetworkConfig::tiny();
    let entries: Vec<f64> = (0..4).flat_map(|_| unit(rng, CODE_DIM)).collect();
    let model = Model::untrained(&network, Codebook::from_entries(CODE_DIM, entries)?, &mut ChaCha8Rng::seed_from_u64(3));
    let engine = model.generator.engine().clone();
    let disc = Discriminator::new(&network, engine.bins(), rng);
    let (reference, mix, target) = (
        sine(440.0, 0.3, CROP_LEN),
        Waveform::from_samples(normal(rng, CROP_LEN).iter().map(|v| 0.1 * v).collect()),
        sine(220.0, 0.3, CROP_LEN),
    );
    let mel = model.encoder.mel_batch(&[&reference])?;
    let spec = engine.stft(&mix)?;
    let mag = spec.magnitude().data;
    let mix_mag = Tensor::new(vec![1, engine.bins(), mag.ncols()], mag.iter().copied().collect());
    let phase = mixture_phase(&spec);
    let phase = phase.clone().reshaped([vec![1], phase.shape().to_vec()].concat());

    let g = Graph::new();
    let pe = model.encoder.params.bind(&g, true);
    let pp = model.projection.params.bind(&g, true);
    let pg = model.generator.params.bind(&g, true);
    let pd = disc.params.bind(&g, false);
    let zf = model.projection.forward(&pp, model.encoder.forward(&pe, g.constant(mel)));
    let (results, _) = quantize_batch(&zf.value(), &model.codebook);
    let mut onehot = vec![0.0; model.codebook.size()];
    onehot[results[0].code_index] = 1.0;
    let mut transposed = vec![0.0; CODE_DIM * model.codebook.size()];
    for i in 0..model.codebook.size() {
        for d in 0..CODE_DIM {
            transposed[d * model.codebook.size() + i] = model.codebook.entry(i)[d];
        }
    }
    let codebook: Var = g.param(Tensor::new(vec![CODE_DIM, model.codebook.size()], transposed));
    let q = g
        .constant(Tensor::new(vec![1, model.codebook.size()], onehot))
        .linear(&codebook, &g.constant(Tensor::zeros(vec![CODE_DIM])));
    let out = model
        .generator
        .forward(&pg, g.constant(mix_mag), g.constant(phase), straight_through(zf, q), CROP_LEN);
    let rec = ReconstructionLoss::default().forward(out.waveform, &Tensor::new(vec![1, CROP_LEN], target.into_samples()));
    let (_, lm) = log_magnitude_var(out.waveform, &engine);
    let adv = adversarial_g_loss_var(disc.forward(&pd, lm));
    let loss = total_generator_loss_var(adv, rec, commitment_loss(zf, q), LossWeights::default());
    let grads = g.backward(loss);
    let encoder_norm = pe.grads(&grads).iter().flat_map(|t| t.data().iter()).map(|v| v * v).sum::<f64>().sqrt();
    let codebook_max = grads.get(codebook).map(|t| t.data().iter().map(|v| v.abs()).fold(0.0, f64::max));
    Ok((encoder_norm, codebook_max))
}

fn toy_pool(dir: &Path, seed: u64, per_class: Option<usize>) -> vqsep::Result<Arc<StemPool>> {
    if !dir.exists() {
        make_toy_corpus(dir, seed)?;
    }
    let mut manifest = Manifest::ingest(dir)?;
    if let Some(n) = per_class {
        let keep: Vec<String> = (0..n).map(|i| format!("_{i:02}")).collect();
        manifest.records.retain(|r| keep.iter().any(|k| r.id.ends_with(k.as_str())));
    }
    Ok(Arc::new(StemPool::load(&manifest)?))
}

fn p4() -> vqsep::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let pool = toy_pool(&dir.path().join("toy"), 40, Some(4))?;
    let config = TrainConfig {
        dataset: Some(dir.path().join("toy")),
        total_steps: 100,
        seed: 4,
        ..TrainConfig::tiny()
    };
    let mut a = Session::initialize(config, pool.clone())?;
    let mut straight = Vec::new();
    let ckpt = dir.path().join("step_50.ckpt");
    while a.step < 100 {
        straight.push(a.step_once()?);
        if a.step == 50 {
            a.to_archive().save(&ckpt)?;
        }
    }
    let mut b = Session::from_archive(&Archive::load(&ckpt)?, pool)?;
    let mut resumed = Vec::new();
    while b.step < 100 {
        resumed.push(b.step_once()?);
    }
    let trajectories_equal = straight[50..] == resumed[..];
    let states_equal = a.to_archive() == b.to_archive();

    let mix = Waveform::from_samples(
        sine(330.0, 0.3, 100_000).samples().iter().zip(sine(2500.0, 0.2, 100_000).samples()).map(|(x, y)| x + y).collect(),
    );
    let first = separate(&mix, &b.model)?;
    let second = separate(&mix, &b.model)?;
    let separate_equal = first
        .sources
        .iter()
        .zip(&second.sources)
        .all(|(x, y)| x.samples().iter().zip(y.samples()).all(|(p, q)| p.to_bits() == q.to_bits()));
    Ok(outcome(
        trajectories_equal && states_equal && separate_equal,
        format!(
            "steps 51-100 after resume identical: {trajectories_equal}, final state identical: {states_equal}, separate() identical: {separate_equal}"
        ),
    ))
}

fn toy_config(train_dir: PathBuf, steps: u64) -> TrainConfig {
    TrainConfig {
        dataset: Some(train_dir),
        total_steps: steps,
        lr_g: TOY_LR,
        lr_d: TOY_LR,
        checkpoint_every: 250,
        ..TrainConfig::tiny()
    }
}

/// Latest checkpoint in `dir` whose session config equals `config`, at or
/// before its step budget.
fn latest_matching(dir: &Path, config: &TrainConfig, pool: &Arc<StemPool>) -> vqsep::Result<Option<Session>> {
    let Ok(entries) = std::fs::read_dir(dir) else { return Ok(None) };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    for path in paths.iter().rev() {
        let session = Session::from_archive(&Archive::load(path)?, pool.clone())?;
        let same = TrainConfig { total_steps: config.total_steps, ..session.config.clone() } == *config;
        if same && session.step <= config.total_steps {
            return Ok(Some(session));
        }
    }
    Ok(None)
}

fn p5() -> vqsep::Result<Outcome> {
    let root = std::env::var_os("VQSEP_TOY_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("toy-acceptance"));
    let steps = match std::env::var("VQSEP_TOY_STEPS") {
        Ok(s) => s.parse().map_err(|_| vqsep::Error::Config(format!("VQSEP_TOY_STEPS={s} is not a step count")))?,
        Err(_) => TOY_STEPS,
    };
    let (train_dir, test_dir) = (root.join("train"), root.join("test"));
    let train = toy_pool(&train_dir, 0, None)?;
    let test = toy_pool(&test_dir, 1, None)?;
    let config = toy_config(train_dir, steps);
    let ckpt_dir = root.join("checkpoints");
    let mut session = match latest_matching(&ckpt_dir, &config, &train)? {
        Some(s) => s,
        None => Session::initialize(config.clone(), train)?,
    };
    session.config.total_steps = steps;
    let start_step = session.step;
    std::fs::create_dir_all(&ckpt_dir)?;
    while session.step < steps {
        session.step_once()?;
        if session.step % config.checkpoint_every == 0 || session.step == steps {
            session.to_archive().save(&ckpt_dir.join(format!("step_{:08}.ckpt", session.step)))?;
        }
    }

    let model = &session.model;
    let policy = config.silence();
    let trials = build_trials(&test, model.codebook.size(), K_EVAL, 7, &policy)?;
    let hist = eval_clusters(&trials, model)?;
    let table = eval_l1(&trials, model)?;
    let absent = eval_absent(&test, &hist, model, 50, 9, &policy)?;
    let classes = hist.classes.len();
    let pure = (0..classes).filter(|&c| hist.purity(c) >= 0.8).count();
    let l1_wins = (0..classes).filter(|&c| table.l1_target[c] < table.l1_random[c]).count();
    let quiet = absent.iter().filter(|t| t.attenuation_db() >= 10.0).count();
    let per_class: Vec<String> = (0..classes)
        .map(|c| {
            format!(
                "{} purity {:.2} L1 {:.3}/{:.3}",
                hist.classes[c],
                hist.purity(c),
                table.l1_target[c],
                table.l1_random[c]
            )
        })
        .collect();
    let (a, b, c) = (pure >= 3, l1_wins == classes && classes == 4, quiet * 10 >= 50 * 7);
    Ok(outcome(
        a && b && c,
        format!(
            "{steps} steps (resumed from {start_step}); (a) {pure}/4 classes with purity >= 0.8 [{}]; (b) L1_target < L1_random for {l1_wins}/4 [{}]; (c) {quiet}/50 absent-class trials >= 10 dB down [{}]; {}",
            if a { "pass" } else { "fail" },
            if b { "pass" } else { "fail" },
            if c { "pass" } else { "fail" },
            per_class.join("; ")
        ),
    ))
}

fn p6() -> vqsep::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let pool = toy_pool(&dir.path().join("toy"), 60, Some(3))?;
    let policy = SilencePolicy::default();
    let oracle = OracleExtractor { codes: 16 };
    let trials = build_trials(&pool, 16, K_EVAL, 5, &policy)?;
    let table = eval_l1(&trials, &oracle)?;
    let zero = table.l1_target.iter().all(|&v| v == 0.0);
    let hist = eval_clusters(&trials, &oracle)?;
    let conserved = (0..hist.classes.len()).all(|c| hist.column_total(c) == table.counts[c])
        && hist.counts.iter().flatten().sum::<usize>() == trials.len();

    let example = &trials[0].mix;
    let panels: Vec<Waveform> = (0..16).map(|_| example.clone()).collect();
    let paths = export_reports(&dir.path().join("report"), &table, &hist, Some((example, &panels)))?;
    let csv = std::fs::read_to_string(&paths.table_csv)?;
    let rows: Vec<&str> = csv.lines().collect();
    let c = hist.classes.len();
    let shape_ok = rows.len() == 3 && rows.iter().all(|r| r.split(',').count() == c + 1);
    let pngs_ok = [Some(&paths.clusters_png), paths.grid_png.as_ref()]
        .iter()
        .all(|p| p.is_some_and(|p| std::fs::metadata(p).is_ok_and(|m| m.len() > 0)));
    Ok(outcome(
        zero && conserved && shape_ok && pngs_ok,
        format!(
            "oracle L1_target all zero: {zero}, histogram sums conserved: {conserved}, table {} data rows x {} classes, PNGs written: {pngs_ok}",
            rows.len().saturating_sub(1),
            rows.first().map_or(0, |r| r.split(',').count() - 1)
        ),
    ))
}
