//! Discriminator training data: positive augmentations of real sequences,
//! label-reversed negatives and bigram-sampled question sequences.
//!
//! The four positive augmentations are also exposed as [`Augmentation`]
//! strategies in an [`AugmentationRegistry`], so the trainer and the CLI can
//! pick them by name from configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::corpus::{join_concepts, Catalog, CorpusStats, Step, CSV_HEADER};
use crate::error::{Error, Result};

/// Which discriminator set a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    /// Real logged sequences.
    Real,
    /// Augmented real sequences (positives).
    Augmented,
    /// Responses produced by the generator (negatives).
    Generative,
    /// Real sequences with flipped responses (negatives).
    Reversed,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::Real => "R",
            Provenance::Augmented => "T",
            Provenance::Generative => "E",
            Provenance::Reversed => "V",
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Provenance::Real | Provenance::Augmented)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R" => Ok(Provenance::Real),
            "T" => Ok(Provenance::Augmented),
            "E" | "G" => Ok(Provenance::Generative),
            "V" => Ok(Provenance::Reversed),
            other => Err(Error::Validation(format!("unknown provenance tag {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedSample {
    pub steps: Vec<Step>,
    pub provenance: Provenance,
}

impl AugmentedSample {
    pub fn new(steps: Vec<Step>, provenance: Provenance) -> Self {
        debug_assert!(!steps.is_empty());
        Self { steps, provenance }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn questions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.question).collect()
    }

    pub fn responses(&self) -> Vec<u8> {
        self.steps.iter().map(|s| s.response).collect()
    }
}

fn check_rate(name: &str, rate: f64, allow_one: bool) -> Result<()> {
    let ok = rate > 0.0 && (rate < 1.0 || (allow_one && rate == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!("{name} must be in (0, 1{}, got {rate}", if allow_one { "]" } else { ")" })))
    }
}

fn check_non_empty(steps: &[Step]) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::Contract("cannot augment an empty sequence".into()));
    }
    Ok(())
}

/// Replaces each question by `mask_id` with probability `rate`, redrawing
/// until at least one step stays visible.
pub fn mask_aug<R: Rng + ?Sized>(steps: &[Step], rate: f64, mask_id: usize, rng: &mut R) -> Result<AugmentedSample> {
    check_non_empty(steps)?;
    check_rate("mask rate", rate, false)?;
    loop {
        let out: Vec<Step> = steps
            .iter()
            .map(|s| {
                if rng.gen_bool(rate) {
                    Step::new(mask_id, s.response)
                } else {
                    *s
                }
            })
            .collect();
        if out.iter().any(|s| s.question != mask_id) {
            return Ok(AugmentedSample::new(out, Provenance::Augmented));
        }
    }
}

/// A contiguous window of `⌈fraction·T⌉` steps at a uniform offset.
pub fn crop_aug<R: Rng + ?Sized>(steps: &[Step], fraction: f64, rng: &mut R) -> Result<AugmentedSample> {
    check_non_empty(steps)?;
    check_rate("crop fraction", fraction, true)?;
    let len = crop_len(steps.len(), fraction);
    let start = rng.gen_range(0..=steps.len() - len);
    Ok(AugmentedSample::new(steps[start..start + len].to_vec(), Provenance::Augmented))
}

pub fn crop_len(t: usize, fraction: f64) -> usize {
    ((fraction * t as f64).ceil() as usize).clamp(1, t)
}

/// Shuffles the pairs inside one uniformly placed window of `span` steps.
pub fn permute_aug<R: Rng + ?Sized>(steps: &[Step], span: usize, rng: &mut R) -> Result<AugmentedSample> {
    if span < 2 || span > steps.len() {
        return Err(Error::Contract(format!(
            "permute span {span} must lie in [2, {}]",
            steps.len()
        )));
    }
    let start = rng.gen_range(0..=steps.len() - span);
    let mut out = steps.to_vec();
    out[start..start + span].shuffle(rng);
    Ok(AugmentedSample::new(out, Provenance::Augmented))
}

/// Default permute span for a sequence of length `t`: `⌈fraction·t⌉`, at
/// least 2. `None` when the sequence is too short to permute.
pub fn permute_span(t: usize, fraction: f64) -> Option<usize> {
    (t >= 2).then(|| ((fraction * t as f64).ceil() as usize).clamp(2, t))
}

/// Swaps selected questions for easier ones when answered correctly and for
/// harder ones otherwise. Steps without an eligible replacement stay as they
/// are, as do masked or unknown questions.
pub fn replace_aug<R: Rng + ?Sized>(
    steps: &[Step],
    stats: &CorpusStats,
    rate: f64,
    rng: &mut R,
) -> Result<AugmentedSample> {
    check_non_empty(steps)?;
    check_rate("replace rate", rate, false)?;
    let out = steps
        .iter()
        .map(|s| {
            if !rng.gen_bool(rate) || s.question >= stats.n_questions() {
                return *s;
            }
            let pool = if s.response == 1 {
                stats.easier_than(s.question)
            } else {
                stats.harder_than(s.question)
            };
            match pool.choose(rng) {
                Some(&q) => Step::new(q, s.response),
                None => *s,
            }
        })
        .collect();
    Ok(AugmentedSample::new(out, Provenance::Augmented))
}

/// Flips each response with probability `flip_prob`, redrawing until at least
/// one response changed.
pub fn reverse_labels<R: Rng + ?Sized>(steps: &[Step], flip_prob: f64, rng: &mut R) -> Result<AugmentedSample> {
    check_non_empty(steps)?;
    check_rate("flip probability", flip_prob, true)?;
    loop {
        let mut flipped = false;
        let out: Vec<Step> = steps
            .iter()
            .map(|s| {
                if rng.gen_bool(flip_prob) {
                    flipped = true;
                    Step::new(s.question, 1 - s.response)
                } else {
                    *s
                }
            })
            .collect();
        if flipped {
            return Ok(AugmentedSample::new(out, Provenance::Reversed));
        }
    }
}

/// Draws a question sequence from the bigram chain. Dead ends restart from
/// the initial distribution.
pub fn sample_synthetic_questions<R: Rng + ?Sized>(stats: &CorpusStats, rng: &mut R) -> Vec<usize> {
    let len = stats.length_dist.sample(rng);
    let mut out = Vec::with_capacity(len);
    out.push(stats.initial_dist.sample(rng));
    while out.len() < len {
        let prev = *out.last().expect("non-empty");
        let next = match stats.transitions(prev) {
            Some(dist) => dist.sample(rng),
            None => stats.initial_dist.sample(rng),
        };
        out.push(next);
    }
    out
}

/// Knobs of the positive augmentations and the reversal negatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRates {
    pub mask: f64,
    pub crop: f64,
    /// Permute span as a fraction of the sequence length.
    pub permute: f64,
    pub replace: f64,
    pub flip: f64,
}

impl Default for AugmentRates {
    fn default() -> Self {
        Self {
            mask: 0.15,
            crop: 0.8,
            permute: 0.2,
            replace: 0.2,
            flip: 0.5,
        }
    }
}

/// Everything a strategy may need besides the sequence itself.
pub struct AugmentContext<'a> {
    pub stats: &'a CorpusStats,
    pub mask_id: usize,
    pub rates: AugmentRates,
}

pub trait Augmentation: Send + Sync {
    fn name(&self) -> &'static str;

    fn apply(&self, steps: &[Step], ctx: &AugmentContext<'_>, rng: &mut dyn RngCore) -> Result<AugmentedSample>;
}

struct Mask;
struct Crop;
struct Permute;
struct Replace;

impl Augmentation for Mask {
    fn name(&self) -> &'static str {
        "mask"
    }

    fn apply(&self, steps: &[Step], ctx: &AugmentContext<'_>, rng: &mut dyn RngCore) -> Result<AugmentedSample> {
        mask_aug(steps, ctx.rates.mask, ctx.mask_id, rng)
    }
}

impl Augmentation for Crop {
    fn name(&self) -> &'static str {
        "crop"
    }

    fn apply(&self, steps: &[Step], ctx: &AugmentContext<'_>, rng: &mut dyn RngCore) -> Result<AugmentedSample> {
        crop_aug(steps, ctx.rates.crop, rng)
    }
}

impl Augmentation for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }

    // A single step has nothing to shuffle; it passes through unchanged.
    fn apply(&self, steps: &[Step], ctx: &AugmentContext<'_>, rng: &mut dyn RngCore) -> Result<AugmentedSample> {
        check_non_empty(steps)?;
        match permute_span(steps.len(), ctx.rates.permute) {
            Some(span) => permute_aug(steps, span, rng),
            None => Ok(AugmentedSample::new(steps.to_vec(), Provenance::Augmented)),
        }
    }
}

impl Augmentation for Replace {
    fn name(&self) -> &'static str {
        "replace"
    }

    fn apply(&self, steps: &[Step], ctx: &AugmentContext<'_>, rng: &mut dyn RngCore) -> Result<AugmentedSample> {
        replace_aug(steps, ctx.stats, ctx.rates.replace, rng)
    }
}

/// Augmentation strategies keyed by name.
pub struct AugmentationRegistry {
    entries: BTreeMap<&'static str, Box<dyn Augmentation>>,
}

impl Default for AugmentationRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Mask));
        r.register(Box::new(Crop));
        r.register(Box::new(Permute));
        r.register(Box::new(Replace));
        r
    }
}

impl AugmentationRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Adds or replaces a strategy under its own name.
    pub fn register(&mut self, aug: Box<dyn Augmentation>) {
        self.entries.insert(aug.name(), aug);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Augmentation> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    /// Resolves names in the given order; unknown names are a config error.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<&dyn Augmentation>> {
        names
            .iter()
            .map(|n| {
                self.get(n.as_ref()).ok_or_else(|| {
                    Error::Config(format!(
                        "unknown augmentation {:?} (known: {})",
                        n.as_ref(),
                        self.names().collect::<Vec<_>>().join(", ")
                    ))
                })
            })
            .collect()
    }
}

/// Writes samples in the log CSV format with an extra provenance column.
/// Masked steps print `MASK` with an empty concept list; `student_id` is the
/// sample's index.
pub fn write_samples_csv<W: Write>(catalog: &Catalog, samples: &[AugmentedSample], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER},provenance")?;
    for (i, s) in samples.iter().enumerate() {
        for (t, st) in s.steps.iter().enumerate() {
            let (qid, concepts) = if catalog.is_mask(st.question) {
                ("MASK".to_string(), String::new())
            } else {
                let q = catalog.question(st.question)?;
                (catalog.question_label(st.question).to_string(), join_concepts(catalog, q))
            };
            writeln!(w, "{},{},{},{},{},{}", i, t + 1, qid, concepts, st.response, s.provenance)?;
        }
    }
    Ok(())
}
