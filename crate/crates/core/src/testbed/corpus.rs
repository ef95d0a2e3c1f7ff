//! Seeded synthetic speech-like corpus: phones with prototype spectra strung
//! into words, a slowly drifting latent, and target units that are a
//! quantized function of the clean frames. Comes with word/phone/utterance
//! spans and judged utterance pairs so every analysis has something to find.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::TargetStream;
use crate::error::{Error, Result};
use crate::featio::{self, Dtype, EmbeddingTable, SpanAnnotation, SpanKind};
use crate::stats::JudgedPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub utterances: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub phones: usize,
    pub words: usize,
    /// Inclusive range of words per utterance.
    pub words_per_utterance: (usize, usize),
    /// Inclusive range of phones per word.
    pub phones_per_word: (usize, usize),
    /// Inclusive range of frames per phone.
    pub frames_per_phone: (usize, usize),
    /// Weight of the drifting latent in each frame.
    pub drift: f64,
    /// Std of the per-frame observation noise.
    pub noise: f64,
    pub period_ms: u32,
    pub seed: u64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            utterances: 64,
            input_dim: 16,
            num_classes: 8,
            phones: 12,
            words: 24,
            words_per_utterance: (3, 5),
            phones_per_word: (2, 3),
            frames_per_phone: (2, 4),
            drift: 0.5,
            noise: 0.3,
            period_ms: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T x input_dim`
    pub frames: DMatrix<f64>,
    pub targets: TargetStream,
    /// Word labels in order.
    pub words: Vec<String>,
    /// Word, phone and utterance spans in base frames.
    pub spans: Vec<SpanAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub options: CorpusOptions,
    pub utterances: Vec<Utterance>,
}

fn pick(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

fn check_options(o: &CorpusOptions) -> Result<()> {
    let mut p = Vec::new();
    if o.utterances == 0 {
        p.push("utterances: must be positive".to_string());
    }
    if o.input_dim == 0 || o.num_classes < 2 || o.phones == 0 || o.words == 0 {
        p.push("input_dim, num_classes, phones, words: must be positive (num_classes at least 2)".into());
    }
    for (name, (lo, hi)) in [
        ("words_per_utterance", o.words_per_utterance),
        ("phones_per_word", o.phones_per_word),
        ("frames_per_phone", o.frames_per_phone),
    ] {
        if lo == 0 || lo > hi {
            p.push(format!("{name}: bad range {lo}..={hi}"));
        }
    }
    if !(o.noise >= 0.0 && o.drift >= 0.0) {
        p.push("noise, drift: must be non-negative".into());
    }
    if p.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(p))
    }
}

impl Corpus {
    pub fn generate(options: CorpusOptions) -> Result<Self> {
        check_options(&options)?;
        let o = &options;
        let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
        let d = o.input_dim;
        let protos: Vec<DVector<f64>> = (0..o.phones)
            .map(|_| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let readout = DMatrix::from_fn(o.num_classes, d, |_, _| StandardNormal.sample(&mut rng));
        let lexicon: Vec<Vec<usize>> = (0..o.words)
            .map(|_| {
                let n = pick(&mut rng, o.phones_per_word);
                (0..n).map(|_| rng.random_range(0..o.phones)).collect()
            })
            .collect();
        let innovation = Normal::new(0.0, (1.0f64 - 0.81).sqrt()).expect("valid std");
        let noise = Normal::new(0.0, o.noise).expect("valid std");
        let mut utterances = Vec::with_capacity(o.utterances);
        for u in 0..o.utterances {
            let id = format!("utt{u:04}");
            let n_words = pick(&mut rng, o.words_per_utterance);
            let mut rows: Vec<DVector<f64>> = Vec::new();
            let mut units = Vec::new();
            let mut words = Vec::new();
            let mut spans = Vec::new();
            let mut latent = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            for _ in 0..n_words {
                let w = rng.random_range(0..o.words);
                let word_start = rows.len();
                for &ph in &lexicon[w] {
                    let phone_start = rows.len();
                    for _ in 0..pick(&mut rng, o.frames_per_phone) {
                        latent = latent * 0.9 + DVector::from_fn(d, |_, _| innovation.sample(&mut rng));
                        let clean = &protos[ph] + &latent * o.drift;
                        units.push((&readout * &clean).argmax().0);
                        rows.push(clean + DVector::from_fn(d, |_, _| noise.sample(&mut rng)));
                    }
                    spans.push(SpanAnnotation::new(&id, format!("p{ph:02}"), SpanKind::Phone, phone_start, rows.len())?);
                }
                let label = format!("w{w:02}");
                spans.push(SpanAnnotation::new(&id, &label, SpanKind::Word, word_start, rows.len())?);
                words.push(label);
            }
            spans.push(SpanAnnotation::new(&id, &id, SpanKind::Utterance, 0, rows.len())?);
            let frames = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
            utterances.push(Utterance {
                id,
                frames,
                targets: TargetStream::new(units, o.period_ms),
                words,
                spans,
            });
        }
        Ok(Self { options, utterances })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn annotations(&self) -> Vec<SpanAnnotation> {
        self.utterances.iter().flat_map(|u| u.spans.iter().cloned()).collect()
    }

    /// Word vocabulary actually used, sorted.
    pub fn word_labels(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.utterances.iter().flat_map(|u| &u.words).collect();
        set.into_iter().cloned().collect()
    }

    pub fn phone_labels(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .utterances
            .iter()
            .flat_map(|u| u.spans.iter().filter(|s| s.kind == SpanKind::Phone).map(|s| &s.label))
            .collect();
        set.into_iter().cloned().collect()
    }

    /// Pairs of distinct utterances scored by word-set overlap (Jaccard,
    /// scaled to 0..5) plus a little rater noise.
    pub fn judged_pairs(&self, n: usize, seed: u64) -> Result<Vec<JudgedPair>> {
        if self.len() < 2 {
            return Err(Error::Invalid("need at least two utterances for pairs".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rater = Normal::new(0.0, 0.25).expect("valid std");
        let bags: Vec<BTreeSet<&String>> = self.utterances.iter().map(|u| u.words.iter().collect()).collect();
        Ok((0..n)
            .map(|_| {
                let a = rng.random_range(0..self.len());
                let b = (a + rng.random_range(1..self.len())) % self.len();
                let inter = bags[a].intersection(&bags[b]).count() as f64;
                let union = bags[a].union(&bags[b]).count() as f64;
                let score: f64 = 5.0 * inter / union + rater.sample(&mut rng);
                JudgedPair {
                    utt_a: self.utterances[a].id.clone(),
                    utt_b: self.utterances[b].id.clone(),
                    human_score: (score.clamp(0.0, 5.0) * 1000.0).round() / 1000.0,
                }
            })
            .collect())
    }

    /// Writes `corpus.json`, `frames/<utt>.prbf`, `targets.tsv` and
    /// `annotations.tsv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        let index = CorpusIndex {
            options: self.options.clone(),
            utterances: self.utterances.iter().map(|u| u.id.clone()).collect(),
        };
        let path = dir.join("corpus.json");
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let mut targets = String::new();
        for u in &self.utterances {
            featio::write_matrix(&frames_dir.join(format!("{}.prbf", u.id)), &u.frames, Dtype::F64)?;
            let units: Vec<String> = u.targets.units.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(targets, "{}\t{}", u.id, units.join(" "));
        }
        let path = dir.join("targets.tsv");
        fs::write(&path, targets).map_err(|e| Error::io(&path, e))?;
        featio::write_annotations(&dir.join("annotations.tsv"), &self.annotations())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("corpus.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: CorpusIndex = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let path = dir.join("targets.tsv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut targets = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let (id, units) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&path, i + 1, "expected utterance id and units"))?;
            let units: Vec<usize> = units
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::parse(&path, i + 1, format!("bad unit {t:?}"))))
                .collect::<Result<_>>()?;
            targets.insert(id.to_string(), units);
        }
        let annotations = featio::read_annotations(&dir.join("annotations.tsv"))?;
        let mut utterances = Vec::with_capacity(index.utterances.len());
        for id in index.utterances {
            let (frames, _) = featio::read_matrix(&dir.join("frames").join(format!("{id}.prbf")))?;
            let units = targets
                .remove(&id)
                .ok_or_else(|| Error::format(&path, format!("no targets for {id}")))?;
            if units.len() != frames.nrows() {
                return Err(Error::format(
                    &path,
                    format!("{id}: {} targets for {} frames", units.len(), frames.nrows()),
                ));
            }
            let spans: Vec<SpanAnnotation> = annotations.iter().filter(|s| s.utterance_id == id).cloned().collect();
            let words = spans
                .iter()
                .filter(|s| s.kind == SpanKind::Word)
                .map(|s| s.label.clone())
                .collect();
            utterances.push(Utterance {
                targets: TargetStream::new(units, index.options.period_ms),
                id,
                frames,
                words,
                spans,
            });
        }
        Ok(Self {
            options: index.options,
            utterances,
        })
    }

    pub fn word_table(&self) -> EmbeddingTable {
        EmbeddingTable::one_hot(&self.word_labels())
    }

    pub fn phone_table(&self) -> EmbeddingTable {
        EmbeddingTable::one_hot(&self.phone_labels())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusIndex {
    options: CorpusOptions,
    utterances: Vec<String>,
}
