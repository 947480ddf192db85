//! Adversarial training: per-sequence loss graphs, batch assembly and the
//! alternating generator / discriminator schedule.
//!
//! Sequences in a batch are processed on separate tapes in parallel, so no
//! padding is needed; per-sequence gradients are then summed in batch order,
//! which keeps runs bit-reproducible regardless of thread count.

pub mod config;
pub mod losses;

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{
    reverse_labels, sample_synthetic_questions, AugmentContext, Augmentation, AugmentationRegistry, AugmentedSample,
    Provenance,
};
use crate::corpus::{compute_stats, CorpusStats, Dataset, Step};
use crate::discriminator::{DiscriminatorDims, DiscriminatorModel};
use crate::error::{Error, Result};
use crate::eval::{acc, auc, predict};
use crate::generator::{GeneratorDims, GeneratorModel, Mode};
use crate::params::{Adam, Gradients};
use crate::tape::{Tape, Var};

pub use config::TrainConfig;
pub use losses::{AdvSign, DiscSign};
use losses::{rewards, tape_adv, tape_ar, tape_bce, tape_gradient_penalty};

pub const METRICS_HEADER: &str = "epoch,l_bce,l_adv,l_ar,l_dist,gp,val_acc,val_auc";

/// Wraps real sequences as provenance-`R` samples.
pub fn real_samples(dataset: &Dataset) -> Vec<AugmentedSample> {
    dataset
        .sequences
        .iter()
        .map(|s| AugmentedSample::new(s.steps.clone(), Provenance::Real))
        .collect()
}

/// A generator batch. Only real sequences are admitted: augmented, reversed
/// and generated samples exist for the discriminator alone.
pub struct GeneratorBatch<'a> {
    samples: Vec<&'a AugmentedSample>,
}

impl<'a> GeneratorBatch<'a> {
    pub fn assemble(samples: impl IntoIterator<Item = &'a AugmentedSample>) -> Result<Self> {
        let samples: Vec<_> = samples.into_iter().collect();
        if let Some(bad) = samples.iter().find(|s| s.provenance != Provenance::Real) {
            return Err(Error::Contract(format!(
                "generator batch received a sample of provenance {}",
                bad.provenance
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[&'a AugmentedSample] {
        &self.samples
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GenLossParts {
    pub bce: f64,
    pub adv: f64,
    pub ar: f64,
    pub total: f64,
}

pub struct GenSequenceOutput {
    pub grads: Gradients,
    pub parts: GenLossParts,
    pub branches: Vec<bool>,
}

/// Generator loss of one sequence under a multi-step rollout.
///
/// The adversarial term is only built when `lambda1 != 0`; rewards come from
/// the frozen discriminator's prefix scores of the generated responses and
/// enter as constants. `forced` replays branch decisions (see
/// [`crate::generator::GenGraph::rollout`]).
pub fn generator_sequence_loss(
    gen: &GeneratorModel,
    disc: &DiscriminatorModel,
    steps: &[Step],
    cfg: &TrainConfig,
    forced: Option<&[bool]>,
) -> Result<GenSequenceOutput> {
    let qs: Vec<usize> = steps.iter().map(|s| s.question).collect();
    let labels: Vec<u8> = steps.iter().map(|s| s.response).collect();
    let mut g = gen.graph();
    let roll = g.rollout(&qs, None, Mode::MultiStep, forced)?;

    let bce = tape_bce(&mut g.tape, &roll.probs, &labels);
    let adv = if cfg.lambda1 != 0.0 {
        let hard: Vec<u8> = roll.branches.iter().map(|&b| u8::from(b)).collect();
        let scores = disc.score_prefixes(&qs, &hard)?.scores;
        let r = rewards(&scores, cfg.gamma);
        Some(tape_adv(&mut g.tape, &roll.probs, &r, cfg.adv_sign))
    } else {
        None
    };
    let dists: Vec<Var> = roll.interactions[..qs.len() - 1]
        .iter()
        .map(|&x| g.next_question_distribution(x))
        .collect();
    let ar = tape_ar(&mut g.tape, &dists, &qs);

    let tape = &mut g.tape;
    let mut total = bce;
    if let Some(a) = adv {
        let w = tape.scale(a, cfg.lambda1);
        total = tape.add(total, w);
    }
    let w = tape.scale(ar, cfg.lambda2);
    total = tape.add(total, w);

    let parts = GenLossParts {
        bce: tape.value(bce).item(),
        adv: adv.map(|a| tape.value(a).item()).unwrap_or(0.0),
        ar: tape.value(ar).item(),
        total: tape.value(total).item(),
    };
    let grads = g.params.gradients(&gen.params, g.tape.backward(total));
    Ok(GenSequenceOutput {
        grads,
        parts,
        branches: roll.branches,
    })
}

pub struct GenBatchOutput {
    /// Mean over sequences.
    pub grads: Gradients,
    pub parts: GenLossParts,
    pub branches: Vec<Vec<bool>>,
}

pub fn generator_batch_loss(
    gen: &GeneratorModel,
    disc: &DiscriminatorModel,
    batch: &GeneratorBatch<'_>,
    cfg: &TrainConfig,
    forced: Option<&[Vec<bool>]>,
) -> Result<GenBatchOutput> {
    let outs: Vec<GenSequenceOutput> = batch
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| generator_sequence_loss(gen, disc, &s.steps, cfg, forced.map(|f| f[i].as_slice())))
        .collect::<Result<_>>()?;
    let n = outs.len() as f64;
    let mut grads = gen.params.zero_grads();
    let mut parts = GenLossParts::default();
    let mut branches = Vec::with_capacity(outs.len());
    for o in outs {
        grads.add_assign(&o.grads);
        parts.bce += o.parts.bce / n;
        parts.adv += o.parts.adv / n;
        parts.ar += o.parts.ar / n;
        parts.total += o.parts.total / n;
        branches.push(o.branches);
    }
    grads.scale(1.0 / n);
    Ok(GenBatchOutput { grads, parts, branches })
}

pub struct DiscBatchOutput {
    pub grads: Gradients,
    pub loss: f64,
    pub dist: f64,
    /// Mean penalty over all samples, already multiplied by `alpha`.
    pub gp: f64,
    pub scores: Vec<f64>,
}

/// Discriminator loss over a batch of positives (`R`, `T`) and negatives
/// (`E`, `V`). The separation term is linear in the scores, so each sample
/// gets its own tape with weight `±1/|P|` or `±1/|N|`, plus `1/n` of its
/// gradient penalty.
pub fn discriminator_batch_loss(
    disc: &DiscriminatorModel,
    samples: &[AugmentedSample],
    cfg: &TrainConfig,
) -> Result<DiscBatchOutput> {
    let n_pos = samples.iter().filter(|s| s.provenance.is_positive()).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Contract(
            "discriminator batch needs positive and negative samples".into(),
        ));
    }
    let sign = cfg.disc_sign.factor();
    let n = samples.len() as f64;
    let per: Vec<(Gradients, f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let w = if s.provenance.is_positive() {
                -sign / n_pos as f64
            } else {
                sign / n_neg as f64
            };
            let mut tape = Tape::new();
            let p = disc.params.load(&mut tape);
            let pass = disc.forward(&mut tape, &p, &s.questions(), &s.responses())?;
            let score = tape.row(pass.scores, pass.len - 1);
            let g = disc.last_score_gradient(&mut tape, &p, &pass);
            let gp = tape_gradient_penalty(&mut tape, g, cfg.alpha);
            let a = tape.scale(score, w);
            let b = tape.scale(gp, 1.0 / n);
            let loss = tape.add(a, b);
            let score_v = tape.value(score).item();
            let gp_v = tape.value(gp).item();
            let grads = p.gradients(&disc.params, tape.backward(loss));
            Ok((grads, score_v, gp_v))
        })
        .collect::<Result<_>>()?;

    let mut grads = disc.params.zero_grads();
    let (mut pos_sum, mut neg_sum, mut gp_sum) = (0.0, 0.0, 0.0);
    let mut scores = Vec::with_capacity(per.len());
    for (s, (g, score, gp)) in samples.iter().zip(per) {
        grads.add_assign(&g);
        if s.provenance.is_positive() {
            pos_sum += score;
        } else {
            neg_sum += score;
        }
        gp_sum += gp;
        scores.push(score);
    }
    let dist = neg_sum / n_neg as f64 - pos_sum / n_pos as f64;
    let gp = gp_sum / n;
    Ok(DiscBatchOutput {
        grads,
        loss: losses::discriminator_loss(dist, gp, cfg.disc_sign),
        dist,
        gp,
        scores,
    })
}

/// Deterministic per-purpose random streams.
pub fn stream_rng(seed: u64, purpose: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.set_stream(((epoch as u64) << 32) | index as u64);
    r
}

const SHUFFLE_G: u64 = 1;
const SHUFFLE_D: u64 = 2;
const SAMPLES_D: u64 = 3;

/// Builds one positive and one negative per real sequence.
pub fn build_discriminator_samples(
    gen: &GeneratorModel,
    real: &[&AugmentedSample],
    stats: &CorpusStats,
    augs: &[&dyn Augmentation],
    cfg: &TrainConfig,
    epoch: usize,
    first_index: usize,
) -> Result<Vec<AugmentedSample>> {
    let ctx = AugmentContext {
        stats,
        mask_id: gen.catalog.mask_id(),
        rates: cfg.rates,
    };
    let pairs: Vec<[AugmentedSample; 2]> = real
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream_rng(cfg.seed, SAMPLES_D, epoch, first_index + i);
            let positive = if !augs.is_empty() && rng.gen_bool(cfg.augmented_share) {
                let aug = augs[rng.gen_range(0..augs.len())];
                aug.apply(&s.steps, &ctx, &mut rng)?
            } else {
                AugmentedSample::new(s.steps.clone(), Provenance::Real)
            };
            let negative = if rng.gen_bool(cfg.reversed_share) {
                reverse_labels(&s.steps, cfg.rates.flip, &mut rng)?
            } else {
                let mut qs = if rng.gen_bool(cfg.synthetic_share) {
                    sample_synthetic_questions(stats, &mut rng)
                } else {
                    s.questions()
                };
                qs.truncate(cfg.max_len);
                let hard = gen.rollout(&qs, None, Mode::MultiStep)?.hard_responses();
                let steps = qs.into_iter().zip(hard).map(|(q, r)| Step::new(q, r)).collect();
                AugmentedSample::new(steps, Provenance::Generative)
            };
            Ok([positive, negative])
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_bce: f64,
    pub l_adv: f64,
    pub l_ar: f64,
    /// Present only in epochs that updated the discriminator.
    pub l_dist: Option<f64>,
    pub gp: Option<f64>,
    pub val_acc: f64,
    pub val_auc: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        format!(
            "{},{:.9},{:.9},{:.9},{},{},{:.9},{:.9}",
            self.epoch,
            self.l_bce,
            self.l_adv,
            self.l_ar,
            opt(self.l_dist),
            opt(self.gp),
            self.val_acc,
            self.val_auc
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    /// Generator and discriminator as of the best epoch.
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub stopped_early: bool,
    /// Which random streams each epoch consumed.
    pub rng_log: Vec<String>,
}

impl TrainRun {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{METRICS_HEADER}");
        for r in &self.history {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        s
    }
}

/// Passed to the observer after every epoch.
pub struct EpochEvent<'a> {
    pub record: &'a EpochRecord,
    pub generator: &'a GeneratorModel,
    pub discriminator: &'a DiscriminatorModel,
    pub is_best: bool,
}

pub fn generator_dims(cfg: &TrainConfig) -> GeneratorDims {
    GeneratorDims {
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
        max_len: cfg.max_len,
    }
}

pub fn discriminator_dims(cfg: &TrainConfig) -> DiscriminatorDims {
    DiscriminatorDims {
        embed_dim: cfg.embed_dim,
        heads: cfg.heads,
        max_len: cfg.max_len,
    }
}

pub fn train(cfg: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<TrainRun> {
    train_observed(cfg, train, val, |_| Ok(()))
}

/// Trains, calling `observe` after each epoch (for checkpointing). A
/// non-finite loss, gradient or parameter aborts with [`Error::Diverged`];
/// whatever the observer saved for earlier epochs is the last good state.
pub fn train_observed<F>(cfg: &TrainConfig, train: &Dataset, val: &Dataset, mut observe: F) -> Result<TrainRun>
where
    F: FnMut(&EpochEvent<'_>) -> Result<()>,
{
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract("training and validation sets must be non-empty".into()));
    }
    if !Arc::ptr_eq(&train.catalog, &val.catalog) && train.catalog != val.catalog {
        return Err(Error::Contract("training and validation sets use different catalogs".into()));
    }
    let too_long = train.sequences.iter().chain(&val.sequences).any(|s| s.len() > cfg.max_len);
    if too_long {
        return Err(Error::Contract(format!("a sequence is longer than max_len {}", cfg.max_len)));
    }

    let catalog = Arc::clone(&train.catalog);
    let mut gen = GeneratorModel::new(Arc::clone(&catalog), generator_dims(cfg), cfg.seed);
    let mut disc = DiscriminatorModel::new(
        catalog.n_questions(),
        catalog.n_concepts(),
        discriminator_dims(cfg),
        cfg.seed.wrapping_add(1),
    );
    let mut opt_g = Adam::new(&gen.params, cfg.lr_g);
    let mut opt_d = Adam::new(&disc.params, cfg.lr_d);
    let stats = compute_stats(train, cfg.difficulty_smoothing)?;
    let registry = AugmentationRegistry::default();
    let augs = registry.select(&cfg.augmentations)?;
    let real = real_samples(train);

    let mut history = Vec::new();
    let mut rng_log = Vec::new();
    let mut best: Option<(usize, f64, GeneratorModel, DiscriminatorModel)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut l_dist = None;
        let mut gp = None;
        if cfg.updates_discriminator(epoch) {
            let mut order: Vec<usize> = (0..real.len()).collect();
            order.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_D, epoch, 0));
            rng_log.push(format!(
                "epoch {epoch}: discriminator shuffle stream ({SHUFFLE_D}, {epoch}, 0), sample streams ({SAMPLES_D}, {epoch}, 0..{})",
                real.len()
            ));
            let (mut dist_sum, mut gp_sum, mut n_batches) = (0.0, 0.0, 0usize);
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch_real: Vec<&AugmentedSample> = chunk.iter().map(|&i| &real[i]).collect();
                let samples = build_discriminator_samples(
                    &gen,
                    &batch_real,
                    &stats,
                    &augs,
                    cfg,
                    epoch,
                    b * cfg.batch_size,
                )?;
                let out = discriminator_batch_loss(&disc, &samples, cfg)?;
                check_finite(out.loss, &out.grads, epoch, b, "discriminator loss")?;
                opt_d.apply(&mut disc.params, &out.grads);
                if !disc.params.all_finite() {
                    return Err(diverged(epoch, b, "discriminator parameters"));
                }
                dist_sum += out.dist;
                gp_sum += out.gp;
                n_batches += 1;
            }
            l_dist = Some(dist_sum / n_batches as f64);
            gp = Some(gp_sum / n_batches as f64);
        }

        let mut order: Vec<usize> = (0..real.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_G, epoch, 0));
        rng_log.push(format!("epoch {epoch}: generator shuffle stream ({SHUFFLE_G}, {epoch}, 0)"));
        let (mut bce, mut adv, mut ar, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = GeneratorBatch::assemble(chunk.iter().map(|&i| &real[i]))?;
            let out = generator_batch_loss(&gen, &disc, &batch, cfg, None)?;
            check_finite(out.parts.total, &out.grads, epoch, b, "generator loss")?;
            opt_g.apply(&mut gen.params, &out.grads);
            if !gen.params.all_finite() {
                return Err(diverged(epoch, b, "generator parameters"));
            }
            let k = chunk.len() as f64;
            bce += out.parts.bce * k;
            adv += out.parts.adv * k;
            ar += out.parts.ar * k;
            seen += chunk.len();
        }

        let preds = predict(&gen, val, Mode::MultiStep)?;
        let record = EpochRecord {
            epoch,
            l_bce: bce / seen as f64,
            l_adv: adv / seen as f64,
            l_ar: ar / seen as f64,
            l_dist,
            gp,
            val_acc: acc(&preds.labels, &preds.scores, 0.5)?,
            val_auc: auc(&preds.labels, &preds.scores)?,
        };
        let is_best = best.as_ref().is_none_or(|(_, a, _, _)| record.val_auc > *a);
        if is_best {
            best = Some((epoch, record.val_auc, gen.clone(), disc.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        observe(&EpochEvent {
            record: &record,
            generator: &gen,
            discriminator: &disc,
            is_best,
        })?;
        history.push(record);
        if stale >= cfg.patience {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let (best_epoch, best_val_auc, generator, discriminator) = best.expect("at least one epoch");
    Ok(TrainRun {
        config: cfg.clone(),
        history,
        best_epoch,
        best_val_auc,
        generator,
        discriminator,
        stopped_early,
        rng_log,
    })
}

fn diverged(epoch: usize, batch: usize, what: &str) -> Error {
    Error::Diverged {
        epoch,
        batch,
        what: what.to_string(),
    }
}

fn check_finite(loss: f64, grads: &Gradients, epoch: usize, batch: usize, what: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(diverged(epoch, batch, what));
    }
    if !grads.all_finite() {
        return Err(diverged(epoch, batch, &format!("gradient of the {what}")));
    }
    Ok(())
}
