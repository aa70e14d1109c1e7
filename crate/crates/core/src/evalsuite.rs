//! Desk-scale evaluation: a per-class L1 table against a random-code
//! baseline, a code-versus-class histogram, an absent-class silence probe
//! and the report files built from them.
//!
//! Every test stem yields one [`Trial`]: an audible target crop, an audible
//! reference crop of the same stem and a mixture of the target with
//! `k_eval` crops of other stems. The reference's code and a uniformly
//! random code are scored on the same mixture, so the two table rows are a
//! paired comparison. Each trial draws from its own RNG stream derived from
//! the seed, which makes the suite reproducible item by item.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SilencePolicy, StemPool};
use crate::dsp::{mel_spectrogram, Waveform, CROP_LEN};
use crate::objectives::log_spectral_l1;
use crate::separator::source_energy;
use crate::trainer::Model;
use crate::{Error, Result};

/// Other sources mixed with each evaluation target.
pub const K_EVAL: usize = 4;

/// Crops tried per stem when looking for audible material.
const CROP_RETRIES: usize = 16;

/// Anything that maps a reference to a code and renders a mixture under a
/// code. The true target is passed along so that oracle stubs can be
/// scored through the same path as a trained model.
pub trait Extractor {
    fn codebook_size(&self) -> usize;
    fn assign(&self, reference: &Waveform) -> Result<usize>;
    fn extract(&self, mix: &Waveform, target: &Waveform, code: usize) -> Result<Waveform>;
}

impl Extractor for Model {
    fn codebook_size(&self) -> usize {
        self.codebook.size()
    }

    fn assign(&self, reference: &Waveform) -> Result<usize> {
        Ok(self.code_for(reference)?.code_index)
    }

    fn extract(&self, mix: &Waveform, _target: &Waveform, code: usize) -> Result<Waveform> {
        self.render_entry(mix, code)
    }
}

/// Returns the true target for every code and sends every reference to
/// code 0.
#[derive(Debug, Clone, Copy)]
pub struct OracleExtractor {
    pub codes: usize,
}

impl Extractor for OracleExtractor {
    fn codebook_size(&self) -> usize {
        self.codes
    }

    fn assign(&self, _reference: &Waveform) -> Result<usize> {
        Ok(0)
    }

    fn extract(&self, _mix: &Waveform, target: &Waveform, _code: usize) -> Result<Waveform> {
        Ok(target.clone())
    }
}

/// One evaluation item.
#[derive(Debug, Clone)]
pub struct Trial {
    pub stem: usize,
    pub class: String,
    pub target: Waveform,
    pub reference: Waveform,
    pub mix: Waveform,
    pub others: Vec<usize>,
    /// Baseline code, uniform over the whole codebook.
    pub random_code: usize,
}

fn item_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn audible(pool: &StemPool, stem: usize, policy: &SilencePolicy, rng: &mut ChaCha8Rng) -> Option<Waveform> {
    (0..CROP_RETRIES).find_map(|_| pool.audible_crop(stem, policy, rng))
}

fn sum(parts: &[&Waveform]) -> Waveform {
    let mut out = vec![0.0; parts[0].len()];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p.samples()) {
            *o += v;
        }
    }
    Waveform::from_samples(out)
}

/// One trial per labelled stem of `pool`. Stems without a label or without
/// an audible crop are skipped with a warning.
pub fn build_trials(
    pool: &StemPool,
    codebook_size: usize,
    k_eval: usize,
    seed: u64,
    policy: &SilencePolicy,
) -> Result<Vec<Trial>> {
    if pool.len() < 2 {
        return Err(Error::Empty("evaluation needs at least two stems".into()));
    }
    if codebook_size == 0 {
        return Err(Error::Config("codebook is empty".into()));
    }
    let mut trials = Vec::with_capacity(pool.len());
    for stem in 0..pool.len() {
        let Some(class) = pool.label(stem) else {
            warn!("stem {stem} has no class label; skipped");
            continue;
        };
        let mut rng = item_rng(seed, stem as u64);
        let (Some(target), Some(reference)) = (audible(pool, stem, policy, &mut rng), audible(pool, stem, policy, &mut rng))
        else {
            warn!("stem {stem} has no audible {CROP_LEN}-sample crop; skipped");
            continue;
        };
        let others: Vec<usize> = (0..k_eval).map(|_| pool.other_stem(stem, &mut rng)).collect();
        let crops: Vec<Waveform> = others.iter().map(|&o| pool.random_crop(o, &mut rng)).collect();
        let mut parts = vec![&target];
        parts.extend(crops.iter());
        let mix = sum(&parts);
        trials.push(Trial {
            stem,
            class: class.to_string(),
            random_code: rng.random_range(0..codebook_size),
            target,
            reference,
            mix,
            others,
        });
    }
    Ok(trials)
}

/// Sorted distinct classes of `trials`.
fn classes_of(trials: &[Trial]) -> Vec<String> {
    let mut classes: Vec<String> = trials.iter().map(|t| t.class.clone()).collect();
    classes.sort();
    classes.dedup();
    classes
}

/// Scores of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub stem: usize,
    pub class: String,
    pub code: usize,
    pub random_code: usize,
    pub l1_target: f64,
    pub l1_random: f64,
}

/// Mean L1 between log-magnitude spectrograms of output and target, per
/// class, under the reference's code and under a random code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Table {
    pub classes: Vec<String>,
    pub l1_target: Vec<f64>,
    pub l1_random: Vec<f64>,
    pub counts: Vec<usize>,
    pub items: Vec<TrialScore>,
}

impl L1Table {
    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

pub fn eval_l1(trials: &[Trial], extractor: &dyn Extractor) -> Result<L1Table> {
    let classes = classes_of(trials);
    let c = classes.len();
    let (mut target, mut random, mut counts) = (vec![0.0; c], vec![0.0; c], vec![0usize; c]);
    let mut items = Vec::with_capacity(trials.len());
    for t in trials {
        let code = extractor.assign(&t.reference)?;
        let l1_target = log_spectral_l1(&extractor.extract(&t.mix, &t.target, code)?, &t.target)?;
        let l1_random = log_spectral_l1(&extractor.extract(&t.mix, &t.target, t.random_code)?, &t.target)?;
        let ci = classes.binary_search(&t.class).expect("class listed");
        target[ci] += l1_target;
        random[ci] += l1_random;
        counts[ci] += 1;
        items.push(TrialScore {
            stem: t.stem,
            class: t.class.clone(),
            code,
            random_code: t.random_code,
            l1_target,
            l1_random,
        });
    }
    for ci in 0..c {
        target[ci] /= counts[ci] as f64;
        random[ci] /= counts[ci] as f64;
    }
    Ok(L1Table {
        classes,
        l1_target: target,
        l1_random: random,
        counts,
        items,
    })
}

/// `counts[code][class]` over the trials' reference crops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterHistogram {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ClusterHistogram {
    pub fn column_total(&self, class: usize) -> usize {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// Code holding most of `class`, lowest index on ties.
    pub fn dominant_code(&self, class: usize) -> usize {
        let mut best = 0;
        for (i, row) in self.counts.iter().enumerate() {
            if row[class] > self.counts[best][class] {
                best = i;
            }
        }
        best
    }

    /// Share of `class` that lands on its dominant code.
    pub fn purity(&self, class: usize) -> f64 {
        let total = self.column_total(class);
        if total == 0 {
            return 0.0;
        }
        self.counts[self.dominant_code(class)][class] as f64 / total as f64
    }
}

pub fn eval_clusters(trials: &[Trial], extractor: &dyn Extractor) -> Result<ClusterHistogram> {
    let classes = classes_of(trials);
    let mut counts = vec![vec![0; classes.len()]; extractor.codebook_size()];
    for t in trials {
        let code = extractor.assign(&t.reference)?;
        let row = counts
            .get_mut(code)
            .ok_or_else(|| Error::Shape(format!("code {code} outside the codebook")))?;
        row[classes.binary_search(&t.class).expect("class listed")] += 1;
    }
    Ok(ClusterHistogram { classes, counts })
}

/// One absent-class probe: a mixture of two classes rendered under the
/// dominant code of a third.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsentTrial {
    pub present: [String; 2],
    pub absent: String,
    pub code: usize,
    pub mix_dbfs: f64,
    pub output_dbfs: f64,
}

impl AbsentTrial {
    /// Output level below the mixture, in dB.
    pub fn attenuation_db(&self) -> f64 {
        self.mix_dbfs - self.output_dbfs
    }
}

/// `trials` absent-class probes on random audible crops of `pool`.
pub fn eval_absent(
    pool: &StemPool,
    histogram: &ClusterHistogram,
    extractor: &dyn Extractor,
    trials: usize,
    seed: u64,
    policy: &SilencePolicy,
) -> Result<Vec<AbsentTrial>> {
    let classes = &histogram.classes;
    if classes.len() < 3 {
        return Err(Error::Config("absent-class probes need at least three classes".into()));
    }
    let by_class: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| (0..pool.len()).filter(|&i| pool.label(i) == Some(c.as_str())).collect())
        .collect();
    let mut out = Vec::with_capacity(trials);
    for n in 0..trials {
        let mut rng = item_rng(seed, n as u64);
        let picks = rand::seq::index::sample(&mut rng, classes.len(), 3).into_vec();
        let (a, b, absent) = (picks[0], picks[1], picks[2]);
        let mut crops = Vec::with_capacity(2);
        for class in [a, b] {
            let stem = *by_class[class]
                .choose(&mut rng)
                .ok_or_else(|| Error::Empty(format!("no stems of class {}", classes[class])))?;
            let crop = audible(pool, stem, policy, &mut rng)
                .ok_or_else(|| Error::Empty(format!("stem {stem} has no audible crop")))?;
            crops.push(crop);
        }
        let mix = sum(&[&crops[0], &crops[1]]);
        let code = histogram.dominant_code(absent);
        let silent = Waveform::zeros(mix.len());
        let output = extractor.extract(&mix, &silent, code)?;
        out.push(AbsentTrial {
            present: [classes[a].clone(), classes[b].clone()],
            absent: classes[absent].clone(),
            code,
            mix_dbfs: source_energy(&mix),
            output_dbfs: source_energy(&output),
        });
    }
    Ok(out)
}

/// Paths written by [`export_reports`].
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub table_csv: PathBuf,
    pub clusters_csv: PathBuf,
    pub clusters_png: PathBuf,
    pub grid_png: Option<PathBuf>,
}

/// Writes `table.csv` (header plus rows `l1_target`, `l1_random` over the
/// classes), `clusters.csv`, `clusters.png` and, given an example mixture
/// with its per-code outputs, `grid.png`.
pub fn export_reports(
    out_dir: &Path,
    table: &L1Table,
    histogram: &ClusterHistogram,
    example: Option<(&Waveform, &[Waveform])>,
) -> Result<ReportPaths> {
    fs::create_dir_all(out_dir)?;
    let table_csv = out_dir.join("table.csv");
    let mut csv = format!("metric,{}\n", table.classes.join(","));
    for (name, row) in [("l1_target", &table.l1_target), ("l1_random", &table.l1_random)] {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        csv.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    fs::write(&table_csv, csv)?;

    let clusters_csv = out_dir.join("clusters.csv");
    let mut csv = format!("code,{}\n", histogram.classes.join(","));
    for (i, row) in histogram.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        csv.push_str(&format!("{i},{}\n", cells.join(",")));
    }
    fs::write(&clusters_csv, csv)?;

    let clusters_png = out_dir.join("clusters.png");
    render::heatmap(histogram).save(&clusters_png)?;

    let grid_png = match example {
        Some((mix, outputs)) => {
            let path = out_dir.join("grid.png");
            let mut panels = vec![("MIX".to_string(), mel_spectrogram(mix)?)];
            for (i, o) in outputs.iter().enumerate() {
                panels.push((i.to_string(), mel_spectrogram(o)?));
            }
            render::grid(&panels).save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(ReportPaths {
        table_csv,
        clusters_csv,
        clusters_png,
        grid_png,
    })
}

mod render {
    //! Tiny RGB raster with a 3x5 bitmap font, enough for labelled
    //! heatmaps and spectrogram grids.

    use std::path::Path;

    use super::*;
    use crate::dsp::MelSpectrogram;

    const SCALE: usize = 2;
    const CELL: usize = 28;
    const LABEL_H: usize = 5 * SCALE + 4;
    const BACKGROUND: [u8; 3] = [255, 255, 255];
    const INK: [u8; 3] = [0, 0, 0];
    /// Spectrogram dynamic range in natural-log units (80 dB).
    const LOG_RANGE: f64 = 80.0 / 20.0 * std::f64::consts::LN_10;

    pub struct Image {
        pub width: usize,
        pub height: usize,
        pub rgb: Vec<u8>,
    }

    impl Image {
        fn new(width: usize, height: usize) -> Self {
            Self {
                width,
                height,
                rgb: BACKGROUND.repeat(width * height),
            }
        }

        fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
            if x < self.width && y < self.height {
                let i = 3 * (y * self.width + x);
                self.rgb[i..i + 3].copy_from_slice(&c);
            }
        }

        fn fill(&mut self, x0: usize, y0: usize, w: usize, h: usize, c: [u8; 3]) {
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    self.put(x, y, c);
                }
            }
        }

        fn text(&mut self, x0: usize, y0: usize, s: &str) {
            for (k, ch) in s.chars().enumerate() {
                let rows = glyph(ch);
                for (r, bits) in rows.iter().enumerate() {
                    for col in 0..3 {
                        if bits >> (2 - col) & 1 == 1 {
                            let x = x0 + (4 * k + col) * SCALE;
                            self.fill(x, y0 + r * SCALE, SCALE, SCALE, INK);
                        }
                    }
                }
            }
        }

        pub fn save(&self, path: &Path) -> Result<()> {
            let file = BufWriter::new(File::create(path)?);
            let mut encoder = png::Encoder::new(file, self.width as u32, self.height as u32);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&self.rgb)?;
            writer.finish()?;
            Ok(())
        }
    }

    /// Rows of a 3x5 glyph, most significant bit on the left.
    fn glyph(c: char) -> [u8; 5] {
        match c.to_ascii_uppercase() {
            '0' => [7, 5, 5, 5, 7],
            '1' => [2, 6, 2, 2, 7],
            '2' => [7, 1, 7, 4, 7],
            '3' => [7, 1, 7, 1, 7],
            '4' => [5, 5, 7, 1, 1],
            '5' => [7, 4, 7, 1, 7],
            '6' => [7, 4, 7, 5, 7],
            '7' => [7, 1, 1, 1, 1],
            '8' => [7, 5, 7, 5, 7],
            '9' => [7, 5, 7, 1, 7],
            'A' => [2, 5, 7, 5, 5],
            'B' => [6, 5, 6, 5, 6],
            'C' => [7, 4, 4, 4, 7],
            'D' => [6, 5, 5, 5, 6],
            'E' => [7, 4, 6, 4, 7],
            'F' => [7, 4, 6, 4, 4],
            'G' => [7, 4, 5, 5, 7],
            'H' => [5, 5, 7, 5, 5],
            'I' => [7, 2, 2, 2, 7],
            'J' => [1, 1, 1, 5, 7],
            'K' => [5, 5, 6, 5, 5],
            'L' => [4, 4, 4, 4, 7],
            'M' => [5, 7, 7, 5, 5],
            'N' => [6, 5, 5, 5, 5],
            'O' => [7, 5, 5, 5, 7],
            'P' => [7, 5, 7, 4, 4],
            'Q' => [7, 5, 5, 7, 1],
            'R' => [6, 5, 6, 5, 5],
            'S' => [7, 4, 7, 1, 7],
            'T' => [7, 2, 2, 2, 2],
            'U' => [5, 5, 5, 5, 7],
            'V' => [5, 5, 5, 5, 2],
            'W' => [5, 5, 7, 7, 5],
            'X' => [5, 5, 2, 5, 5],
            'Y' => [5, 5, 2, 2, 2],
            'Z' => [7, 1, 2, 4, 7],
            '_' => [0, 0, 0, 0, 7],
            '-' => [0, 0, 7, 0, 0],
            _ => [0; 5],
        }
    }

    fn text_width(s: &str) -> usize {
        4 * SCALE * s.chars().count()
    }

    /// Dark blue through orange to pale yellow.
    fn colormap(t: f64) -> [u8; 3] {
        const STOPS: [[f64; 3]; 4] = [[10.0, 8.0, 40.0], [120.0, 30.0, 110.0], [235.0, 110.0, 40.0], [252.0, 250.0, 190.0]];
        let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
        let i = (t.floor() as usize).min(STOPS.len() - 2);
        let f = t - i as f64;
        let mut c = [0u8; 3];
        for k in 0..3 {
            c[k] = (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
        }
        c
    }

    /// Codes down, classes across; each column scaled by its own total.
    pub fn heatmap(h: &ClusterHistogram) -> Image {
        let (rows, cols) = (h.counts.len(), h.classes.len());
        let left = text_width("00") + 6;
        let top = LABEL_H;
        let mut img = Image::new(left + cols * CELL + 2, top + rows * CELL + LABEL_H + 2);
        for (j, class) in h.classes.iter().enumerate() {
            // Column headers are abbreviated to fit a cell; the full names
            // are in clusters.csv.
            let short: String = class.chars().take(CELL / (4 * SCALE)).collect();
            img.text(left + j * CELL + 1, 2, &short);
            let total = h.column_total(j).max(1) as f64;
            for i in 0..rows {
                let c = colormap(h.counts[i][j] as f64 / total);
                img.fill(left + j * CELL, top + i * CELL, CELL - 1, CELL - 1, c);
            }
        }
        for i in 0..rows {
            img.text(2, top + i * CELL + (CELL - 5 * SCALE) / 2, &format!("{i:02}"));
        }
        img
    }

    /// Labelled mel-spectrogram panels, low frequencies at the bottom,
    /// sharing one colour scale.
    pub fn grid(panels: &[(String, MelSpectrogram)]) -> Image {
        let cols = panels.len().min(6);
        let rows = panels.len().div_ceil(cols);
        let (ph, pw) = (
            panels[0].1.data.nrows(),
            panels.iter().map(|p| p.1.frames()).max().unwrap_or(1),
        );
        let top = panels
            .iter()
            .flat_map(|p| p.1.data.iter().copied())
            .fold(f64::MIN, f64::max);
        let (bw, bh) = (pw + 8, ph + LABEL_H + 8);
        let mut img = Image::new(cols * bw, rows * bh);
        for (k, (label, mel)) in panels.iter().enumerate() {
            let (x0, y0) = ((k % cols) * bw + 4, (k / cols) * bh + 4);
            img.text(x0, y0, label);
            let y0 = y0 + LABEL_H;
            for (band, row) in mel.data.outer_iter().enumerate() {
                for (t, &v) in row.iter().enumerate() {
                    let c = colormap((v - (top - LOG_RANGE)) / LOG_RANGE);
                    img.put(x0 + t, y0 + ph - 1 - band, c);
                }
            }
        }
        img
    }
}
