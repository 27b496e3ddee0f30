//! Synthetic ingestion data with planted biases and exact ground truth.
//!
//! Each planted bias is a question template, an optional visual word and an
//! answer given with probability `fire_rate`. Records carry an attention grid
//! and a per-cell feature map (`grid * grid * feature_dim` values, cell-major)
//! whose cells near the attended spot are drawn around the planted codeword's
//! reference centroid, so cropping and pooling recover the planted word.
//! Ground-truth counts are recounted over the emitted records.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::vocab::{tokenize_question, visual_token, IngestRecord, TokenizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBias {
    pub question_template: Vec<String>,
    #[serde(default)]
    pub visual_word: Option<u32>,
    pub answer: String,
    pub fire_rate: f64,
    /// Relative share of records drawn from this template.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Delta,
    #[default]
    Blob,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub biases: Vec<PlantedBias>,
    pub noise_vocab: Vec<String>,
    pub noise_answers: Vec<String>,
    /// Relative share of distractor records, on the same scale as bias weights.
    pub noise_weight: f64,
    pub record_count: usize,
    pub seed: u64,
    pub attention_mode: AttentionMode,
    pub grid: usize,
    pub blob_sigma: f64,
    pub feature_dim: usize,
    pub codebook_size: usize,
    /// Distance between reference centroids along their axes, in units of
    /// the per-cell feature noise.
    pub separation: f64,
    /// Up to this many distractor words are appended to bias questions.
    pub max_filler: usize,
    /// Probability that a distractor question borrows one template word.
    pub overlap: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            biases: Vec::new(),
            noise_vocab: default_noise_vocab(),
            noise_answers: default_noise_answers(),
            noise_weight: 1.0,
            record_count: 1000,
            seed: 0,
            attention_mode: AttentionMode::Blob,
            grid: 14,
            blob_sigma: 1.0,
            feature_dim: 8,
            codebook_size: 8,
            separation: 10.0,
            max_filler: 1,
            overlap: 0.0,
        }
    }
}

fn default_noise_vocab() -> Vec<String> {
    [
        "where", "who", "which", "why", "man", "woman", "dog", "cat", "table", "car", "sky", "tree",
        "bus", "train", "plate", "bird", "window", "street", "sign", "horse", "boat", "water", "light",
        "wall", "chair", "shirt", "hat", "bag", "phone", "clock", "truck", "bike", "road", "cake",
        "field", "snow", "beach", "kite", "board", "sheep", "cow", "bear", "fence", "door", "floor",
        "cup", "bowl", "bench", "pole", "roof",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn default_noise_answers() -> Vec<String> {
    [
        "yes", "no", "red", "blue", "white", "black", "1", "3", "left", "right", "wood", "metal",
        "outside", "summer", "pizza", "dog",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl SynthSpec {
    /// Five planted rules over 10,000 records: fire rates 0.6 to 1.0 and
    /// supports between 200 and 2000.
    pub fn five_biases(seed: u64) -> Self {
        let bias = |t: &str, v: Option<u32>, a: &str, fire: f64, w: f64| PlantedBias {
            question_template: t.split(' ').map(str::to_string).collect(),
            visual_word: v,
            answer: a.into(),
            fire_rate: fire,
            weight: w,
        };
        SynthSpec {
            biases: vec![
                bias("what color grass", Some(0), "green", 1.0, 500.0),
                bias("what sport playing", Some(1), "tennis", 0.9, 1500.0),
                bias("what time day", Some(2), "afternoon", 0.7, 800.0),
                bias("what room", None, "kitchen", 0.6, 500.0),
                bias("how many giraffes", Some(3), "2", 0.8, 2200.0),
            ],
            noise_weight: 4500.0,
            record_count: 10_000,
            seed,
            ..SynthSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.record_count == 0 {
            return bad("record_count must be at least 1".into());
        }
        if self.biases.is_empty() {
            return bad("at least one planted bias is required".into());
        }
        if self.grid == 0 || self.feature_dim == 0 || self.codebook_size == 0 {
            return bad("grid, feature_dim and codebook_size must be positive".into());
        }
        if self.codebook_size > self.feature_dim {
            return bad(format!(
                "codebook_size {} exceeds feature_dim {}: reference centroids need one axis each",
                self.codebook_size, self.feature_dim
            ));
        }
        if !(self.separation > 0.0) || !(self.blob_sigma > 0.0) {
            return bad("separation and blob_sigma must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1]".into());
        }
        if !(self.noise_weight >= 0.0) {
            return bad("noise_weight must be non-negative".into());
        }
        for (i, b) in self.biases.iter().enumerate() {
            if b.question_template.is_empty() {
                return bad(format!("bias {i} has an empty template"));
            }
            if !(b.fire_rate > 0.0 && b.fire_rate <= 1.0) {
                return bad(format!("bias {i} fire_rate {} outside (0, 1]", b.fire_rate));
            }
            if !(b.weight > 0.0) {
                return bad(format!("bias {i} weight must be positive"));
            }
            if b.answer.trim().is_empty() {
                return bad(format!("bias {i} has an empty answer"));
            }
            if let Some(v) = b.visual_word {
                if v as usize >= self.codebook_size {
                    return bad(format!("bias {i} visual word {v} outside codebook of {}", self.codebook_size));
                }
            }
            if b.fire_rate < 1.0 && self.noise_answers.is_empty() {
                return bad(format!("bias {i} needs noise_answers for misfires"));
            }
        }
        if self.noise_weight > 0.0 && (self.noise_vocab.is_empty() || self.noise_answers.is_empty()) {
            return bad("distractor records need noise_vocab and noise_answers".into());
        }
        Ok(())
    }

    /// Reference centroid `j` sits at `separation * e_j`.
    pub fn reference_codebook(&self) -> Result<Codebook> {
        let mut c = vec![0.0; self.codebook_size * self.feature_dim];
        for j in 0..self.codebook_size {
            c[j * self.feature_dim + j] = self.separation;
        }
        Codebook::new(self.codebook_size, self.feature_dim, c)
    }
}

/// A planted rule with counts recomputed over the generated records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedRule {
    /// Template tokens, then `v:<k>` when the bias has a visual word.
    pub antecedent: Vec<String>,
    pub answer: String,
    /// Records containing antecedent and answer.
    pub support: u64,
    /// Records containing the antecedent.
    pub antecedent_support: u64,
    /// Same counts with the visual word dropped from the antecedent.
    pub question_only_support: u64,
    pub question_only_antecedent_support: u64,
}

impl PlantedRule {
    pub fn confidence(&self) -> f64 {
        self.support as f64 / self.antecedent_support as f64
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub records: Vec<IngestRecord>,
    /// Codeword each record was planted with, parallel to `records`.
    pub planted_codewords: Vec<u32>,
    pub ground_truth: Vec<PlantedRule>,
    pub codebook: Codebook,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Splits `total` into integer shares proportional to `weights`
/// (largest remainder, ties to the lower index).
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..weights.len()).collect();
    rest.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = total - counts.iter().sum::<usize>();
    for &i in rest.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    background: Vec<u32>,
}

impl Generator<'_> {
    fn pick<'b, T>(&mut self, xs: &'b [T]) -> &'b T {
        &xs[self.rng.random_range(0..xs.len())]
    }

    fn attention(&mut self) -> (Vec<Vec<f64>>, (usize, usize)) {
        let g = self.spec.grid;
        let margin = if self.spec.attention_mode == AttentionMode::Blob && g > 4 { 2 } else { 0 };
        let center = (
            self.rng.random_range(margin..g - margin),
            self.rng.random_range(margin..g - margin),
        );
        let map = match self.spec.attention_mode {
            AttentionMode::Delta => {
                let mut m = vec![vec![0.0; g]; g];
                m[center.0][center.1] = 1.0;
                m
            }
            AttentionMode::Uniform => vec![vec![1.0; g]; g],
            AttentionMode::Blob => {
                let s2 = 2.0 * self.spec.blob_sigma * self.spec.blob_sigma;
                (0..g)
                    .map(|r| {
                        (0..g)
                            .map(|c| {
                                let dr = r as f64 - center.0 as f64;
                                let dc = c as f64 - center.1 as f64;
                                round4((-(dr * dr + dc * dc) / s2).exp())
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        (map, center)
    }

    /// Cells near the attended spot carry the codeword's centroid plus noise;
    /// every other cell is zero.
    fn feature_map(&mut self, codeword: u32, center: (usize, usize)) -> Vec<f64> {
        let (g, d) = (self.spec.grid, self.spec.feature_dim);
        let mut out = vec![0.0; g * g * d];
        for r in 0..g {
            for c in 0..g {
                let planted = match self.spec.attention_mode {
                    AttentionMode::Delta => (r, c) == center,
                    AttentionMode::Uniform => true,
                    AttentionMode::Blob => r.abs_diff(center.0) <= 2 && c.abs_diff(center.1) <= 2,
                };
                if !planted {
                    continue;
                }
                let cell = &mut out[(r * g + c) * d..(r * g + c + 1) * d];
                for (k, v) in cell.iter_mut().enumerate() {
                    let base = if k == codeword as usize { self.spec.separation } else { 0.0 };
                    *v = round4(base + self.noise.sample(&mut self.rng));
                }
            }
        }
        out
    }

    fn background_codeword(&mut self) -> u32 {
        if self.background.is_empty() {
            self.rng.random_range(0..self.spec.codebook_size as u32)
        } else {
            let bg = std::mem::take(&mut self.background);
            let v = *self.pick(&bg);
            self.background = bg;
            v
        }
    }

    fn record(&mut self, id: usize, bias: Option<&PlantedBias>) -> (IngestRecord, u32) {
        let spec = self.spec;
        let (mut words, codeword, answer) = match bias {
            Some(b) => {
                let mut words = b.question_template.clone();
                let filler = self.rng.random_range(0..=spec.max_filler);
                for _ in 0..filler {
                    words.push(self.pick(&spec.noise_vocab).clone());
                }
                let cw = match b.visual_word {
                    Some(v) => v,
                    None => self.background_codeword(),
                };
                let answer = if self.rng.random_bool(b.fire_rate) {
                    b.answer.clone()
                } else {
                    self.pick(&spec.noise_answers).clone()
                };
                (words, cw, answer)
            }
            None => {
                let len = self.rng.random_range(3..=6);
                let mut words: Vec<String> = (0..len).map(|_| self.pick(&spec.noise_vocab).clone()).collect();
                if spec.overlap > 0.0 && self.rng.random_bool(spec.overlap) {
                    let b = self.pick(&spec.biases);
                    let w = self.pick(&b.question_template).clone();
                    words.push(w);
                }
                let cw = self.background_codeword();
                (words, cw, self.pick(&spec.noise_answers).clone())
            }
        };
        words.shuffle(&mut self.rng);
        let (attention, center) = self.attention();
        let feature = self.feature_map(codeword, center);
        let record = IngestRecord {
            record_id: format!("syn{id:06}"),
            question: format!("{}?", words.join(" ")),
            answer,
            attention: Some(attention),
            feature: Some(feature),
            codeword: None,
        };
        (record, codeword)
    }
}

/// Generates records, ground truth and the reference codebook. Output is a
/// pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let codebook = spec.reference_codebook()?;
    let planted: HashSet<u32> = spec.biases.iter().filter_map(|b| b.visual_word).collect();
    let background = (0..spec.codebook_size as u32).filter(|v| !planted.contains(v)).collect();
    let mut gen = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        noise: Normal::new(0.0, 1.0).unwrap(),
        background,
    };

    let mut weights: Vec<f64> = spec.biases.iter().map(|b| b.weight).collect();
    weights.push(spec.noise_weight);
    let counts = apportion(&weights, spec.record_count);
    let mut slots: Vec<Option<usize>> = Vec::with_capacity(spec.record_count);
    for (i, &n) in counts.iter().enumerate() {
        let which = (i < spec.biases.len()).then_some(i);
        slots.extend(std::iter::repeat_n(which, n));
    }
    slots.shuffle(&mut gen.rng);

    let mut records = Vec::with_capacity(slots.len());
    let mut codewords = Vec::with_capacity(slots.len());
    for (id, slot) in slots.into_iter().enumerate() {
        let (r, cw) = gen.record(id, slot.map(|i| &spec.biases[i]));
        records.push(r);
        codewords.push(cw);
    }

    let ground_truth = recount(spec, &records, &codewords);
    Ok(SynthOutput {
        records,
        planted_codewords: codewords,
        ground_truth,
        codebook,
    })
}

/// Counts each planted rule directly over the records with the default
/// tokenizer and the planted codewords.
pub fn recount(spec: &SynthSpec, records: &[IngestRecord], codewords: &[u32]) -> Vec<PlantedRule> {
    let tokenizer = TokenizerConfig::default();
    let token_sets: Vec<HashSet<String>> = records
        .iter()
        .map(|r| tokenize_question(&r.question, &tokenizer).into_iter().collect())
        .collect();
    let answers: Vec<String> = records
        .iter()
        .map(|r| r.answer.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .collect();

    spec.biases
        .iter()
        .map(|b| {
            let template: Vec<String> = {
                let mut seen = HashSet::new();
                tokenize_question(&b.question_template.join(" "), &tokenizer)
                    .into_iter()
                    .filter(|t| seen.insert(t.clone()))
                    .collect()
            };
            let answer = b.answer.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
            let (mut sup, mut ant, mut qsup, mut qant) = (0, 0, 0, 0);
            for i in 0..records.len() {
                if !template.iter().all(|t| token_sets[i].contains(t)) {
                    continue;
                }
                let hit = answers[i] == answer;
                qant += 1;
                qsup += hit as u64;
                if b.visual_word.is_none_or(|v| v == codewords[i]) {
                    ant += 1;
                    sup += hit as u64;
                }
            }
            let mut antecedent = template;
            if let Some(v) = b.visual_word {
                antecedent.push(visual_token(v));
            }
            PlantedRule {
                antecedent,
                answer,
                support: sup,
                antecedent_support: ant,
                question_only_support: qsup,
                question_only_antecedent_support: qant,
            }
        })
        .collect()
}

pub fn write_records<W: Write>(records: &[IngestRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ground_truth<W: Write>(rules: &[PlantedRule], mut w: W) -> Result<()> {
    for r in rules {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `records.jsonl`, `ground_truth.jsonl` and `codebook.bin` into `dir`.
pub fn write_output(out: &SynthOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_records(&out.records, BufWriter::new(File::create(dir.join("records.jsonl"))?))?;
    write_ground_truth(&out.ground_truth, BufWriter::new(File::create(dir.join("ground_truth.jsonl"))?))?;
    out.codebook.save(dir.join("codebook.bin"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crop::{min_enclosing_box, AttentionMap, CropConfig};

    fn one_bias(fire: f64, records: usize) -> SynthSpec {
        SynthSpec {
            biases: vec![PlantedBias {
                question_template: vec!["what".into(), "color".into(), "grass".into()],
                visual_word: Some(0),
                answer: "green".into(),
                fire_rate: fire,
                weight: 1.0,
            }],
            noise_weight: 0.0,
            record_count: records,
            seed: 4,
            max_filler: 0,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_planting() {
        let out = generate(&one_bias(1.0, 100)).unwrap();
        assert_eq!(out.records.len(), 100);
        let gt = &out.ground_truth[0];
        assert_eq!(gt.antecedent, ["what", "color", "grass", "v:0"]);
        assert_eq!((gt.support, gt.antecedent_support), (100, 100));
        assert_eq!(gt.confidence(), 1.0);
    }

    #[test]
    fn realized_confidence_is_counted() {
        let mut spec = one_bias(0.8, 10_000);
        spec.grid = 4;
        spec.feature_dim = 2;
        spec.codebook_size = 2;
        let out = generate(&spec).unwrap();
        let gt = &out.ground_truth[0];
        let direct = out.records.iter().filter(|r| r.answer == "green").count() as u64;
        assert_eq!(gt.support, direct);
        assert_eq!(gt.antecedent_support, 10_000);
        // 6 sigma of Binomial(10000, 0.8).
        assert!((gt.confidence() - 0.8).abs() < 6.0 * (0.8f64 * 0.2 / 10_000.0).sqrt());
    }

    #[test]
    fn reproducible() {
        let spec = SynthSpec {
            record_count: 300,
            ..SynthSpec::five_biases(9)
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        let bytes = |o: &SynthOutput| {
            let mut v = Vec::new();
            write_records(&o.records, &mut v).unwrap();
            write_ground_truth(&o.ground_truth, &mut v).unwrap();
            v
        };
        assert_eq!(bytes(&a), bytes(&b));
        let c = generate(&SynthSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    fn recovered(mode: AttentionMode) {
        let spec = SynthSpec {
            attention_mode: mode,
            record_count: 400,
            ..SynthSpec::five_biases(2)
        };
        let out = generate(&spec).unwrap();
        let g = spec.grid;
        let d = spec.feature_dim;
        for (r, &cw) in out.records.iter().zip(&out.planted_codewords) {
            let map = AttentionMap::from_rows(r.attention.as_ref().unwrap()).unwrap();
            let b = min_enclosing_box(&map, &CropConfig::default()).unwrap();
            let f = r.feature.as_ref().unwrap();
            let mut pooled = vec![0.0; d];
            for row in b.top..=b.bottom {
                for col in b.left..=b.right {
                    for k in 0..d {
                        pooled[k] += f[(row * g + col) * d + k];
                    }
                }
            }
            assert_eq!(out.codebook.assign(&pooled).unwrap(), cw, "{mode:?} {}", r.record_id);
        }
    }

    #[test]
    fn crop_and_assign_recover_planted_words() {
        recovered(AttentionMode::Delta);
        recovered(AttentionMode::Blob);
        recovered(AttentionMode::Uniform);
    }

    #[test]
    fn delta_at_fixed_cell() {
        let mut spec = one_bias(1.0, 50);
        spec.attention_mode = AttentionMode::Delta;
        let out = generate(&spec).unwrap();
        for r in &out.records {
            let map = AttentionMap::from_rows(r.attention.as_ref().unwrap()).unwrap();
            let b = min_enclosing_box(&map, &CropConfig::default()).unwrap();
            assert_eq!(b.area(), 1);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = one_bias(1.0, 10);
        s.codebook_size = 9;
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
        let mut s = one_bias(1.0, 10);
        s.biases.clear();
        assert!(generate(&s).is_err());
        let mut s = one_bias(1.5, 10);
        assert!(generate(&s).is_err());
        s = one_bias(1.0, 0);
        assert!(generate(&s).is_err());
        s = one_bias(1.0, 10);
        s.biases[0].visual_word = Some(8);
        assert!(generate(&s).is_err());
    }

    #[test]
    fn five_bias_preset_shape() {
        let out = generate(&SynthSpec::five_biases(1)).unwrap();
        assert_eq!(out.records.len(), 10_000);
        assert_eq!(out.ground_truth.len(), 5);
        for gt in &out.ground_truth {
            assert!((200..=2000).contains(&gt.support), "{gt:?}");
        }
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(apportion(&[500.0, 4500.0], 10_000), vec![1000, 9000]);
    }
}
