//! Test-side oracles and fixtures, independent of the library's own math.
#![allow(dead_code)]

use std::sync::Arc;

use advkt::augment::AugmentedSample;
use advkt::corpus::{compute_stats, Catalog, Dataset, LearningSequence, Step};
use advkt::discriminator::DiscriminatorModel;
use advkt::generator::GeneratorModel;
use advkt::trainer::{
    build_discriminator_samples, discriminator_batch_loss, discriminator_dims, generator_batch_loss,
    generator_dims, real_samples, GeneratorBatch, TrainConfig,
};
use advkt::augment::AugmentationRegistry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central differences of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(&x);
            x[i] = orig - eps;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps entries that are zero
/// up to rounding from dominating.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub struct GradReport {
    pub max_rel: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n: usize,
}

pub fn compare(analytic: &[f64], numeric: &[f64], floor: f64) -> GradReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut rep = GradReport {
        max_rel: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        n: analytic.len(),
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a, n, floor);
        if e > rep.max_rel {
            rep = GradReport {
                max_rel: e,
                worst_index: i,
                analytic: a,
                numeric: n,
                n: analytic.len(),
            };
        }
    }
    rep
}

/// A catalog of `n_q` questions over `n_c` concepts, some with two concepts.
pub fn catalog(n_q: usize, n_c: usize) -> Arc<Catalog> {
    let concepts = (0..n_q)
        .map(|q| {
            let mut c = vec![q % n_c];
            if q % 3 == 0 && n_c > 1 {
                c.push((q + 1) % n_c);
                c.sort_unstable();
            }
            c
        })
        .collect();
    Arc::new(Catalog::from_parts((0..n_q as i64).collect(), (0..n_c as i64).collect(), concepts).unwrap())
}

pub fn random_dataset(catalog: &Arc<Catalog>, n_students: usize, len: std::ops::RangeInclusive<usize>, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_q = catalog.n_questions();
    let sequences = (0..n_students)
        .map(|i| {
            let t = rng.gen_range(len.clone());
            let steps = (0..t)
                .map(|_| Step::new(rng.gen_range(0..n_q), rng.gen_range(0..=1)))
                .collect();
            LearningSequence::new(i as i64 + 1, steps)
        })
        .collect();
    Dataset::new(Arc::clone(catalog), sequences).unwrap()
}

/// The gradient-check configuration: d = d_h = 4, 2 heads, |Q| = 10,
/// |C| = 4, T = 6, batch 2.
pub struct TinySetup {
    pub cfg: TrainConfig,
    pub data: Dataset,
    pub gen: GeneratorModel,
    pub disc: DiscriminatorModel,
}

pub fn tiny_setup() -> TinySetup {
    let mut cfg = TrainConfig::default();
    for kv in ["embed_dim=4", "hidden_dim=4", "heads=2", "max_len=12", "batch_size=2", "seed=9"] {
        cfg.apply_override(kv).unwrap();
    }
    let cat = catalog(10, 4);
    let data = random_dataset(&cat, 2, 6..=6, 21);
    let gen = GeneratorModel::new(Arc::clone(&cat), generator_dims(&cfg), 4);
    let disc = DiscriminatorModel::new(10, 4, discriminator_dims(&cfg), 5);
    TinySetup { cfg, data, gen, disc }
}

/// Analytic and finite-difference gradients of the mean generator loss over
/// the batch, with branch decisions frozen at the unperturbed pass.
pub fn generator_gradients(s: &TinySetup, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let real = real_samples(&s.data);
    let batch = GeneratorBatch::assemble(real.iter()).unwrap();
    let base = generator_batch_loss(&s.gen, &s.disc, &batch, &s.cfg, None).unwrap();
    let analytic = base.grads.flatten();
    let mut probe = s.gen.clone();
    let numeric = central_diff(
        |x| {
            probe.params.set_flat(x);
            generator_batch_loss(&probe, &s.disc, &batch, &s.cfg, Some(&base.branches))
                .unwrap()
                .parts
                .total
        },
        &s.gen.params.flatten(),
        eps,
    );
    (analytic, numeric)
}

/// A fixed discriminator batch built from the tiny setup.
pub fn discriminator_batch(s: &TinySetup) -> Vec<AugmentedSample> {
    let stats = compute_stats(&s.data, 0.0).unwrap();
    let reg = AugmentationRegistry::default();
    let augs = reg.select(&s.cfg.augmentations).unwrap();
    let real = real_samples(&s.data);
    let refs: Vec<&AugmentedSample> = real.iter().collect();
    build_discriminator_samples(&s.gen, &refs, &stats, &augs, &s.cfg, 1, 0).unwrap()
}

pub fn discriminator_gradients(s: &TinySetup, samples: &[AugmentedSample], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let analytic = discriminator_batch_loss(&s.disc, samples, &s.cfg).unwrap().grads.flatten();
    let mut probe = s.disc.clone();
    let numeric = central_diff(
        |x| {
            probe.params.set_flat(x);
            discriminator_batch_loss(&probe, samples, &s.cfg).unwrap().loss
        },
        &s.disc.params.flatten(),
        eps,
    );
    (analytic, numeric)
}

/// Exhaustive pairwise AUC with ties worth one half.
pub fn brute_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}
