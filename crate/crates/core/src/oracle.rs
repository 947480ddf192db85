//! Synthetic students with known learning dynamics.
//!
//! Each student holds an ability per concept (a shared student level plus a
//! concept offset). The chance of answering question `q` is
//! `guess + (1 - guess - slip) * sigmoid(mean ability over C^q - difficulty_q)`,
//! and every attempt raises the ability on the attempted concepts by
//! `learning_gain`. Questions are picked by a concept-sticky walk, so there is
//! sequential structure to learn. The true probabilities are returned next to
//! the data and bound the AUC any model can reach.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::corpus::{Catalog, Dataset, LearningSequence, Step};
use crate::error::{Error, Result};
use crate::tape::sigmoid;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub n_students: usize,
    pub n_questions: usize,
    pub n_concepts: usize,
    pub ability_mean: f64,
    /// Spread of the per-student level shared by all concepts.
    pub student_sd: f64,
    /// Spread of per-concept offsets around the student level.
    pub concept_sd: f64,
    pub learning_gain: f64,
    pub difficulty_mean: f64,
    pub difficulty_sd: f64,
    pub guess: f64,
    pub slip: f64,
    /// Probability that a question carries a second concept.
    pub second_concept_prob: f64,
    /// Probability that the next question shares a concept with the last.
    pub stay_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_students: 300,
            n_questions: 100,
            n_concepts: 10,
            ability_mean: 0.0,
            student_sd: 1.0,
            concept_sd: 0.5,
            learning_gain: 0.05,
            difficulty_mean: 0.0,
            difficulty_sd: 1.0,
            guess: 0.1,
            slip: 0.1,
            second_concept_prob: 0.3,
            stay_prob: 0.7,
            min_len: 100,
            max_len: 200,
            seed: 1,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.n_students == 0 || self.n_questions == 0 || self.n_concepts == 0 {
            return bad("student, question and concept counts must be positive");
        }
        for (name, p) in [
            ("guess", self.guess),
            ("slip", self.slip),
            ("second_concept_prob", self.second_concept_prob),
            ("stay_prob", self.stay_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.guess + self.slip > 1.0 {
            return bad("guess + slip must not exceed 1");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if !(self.student_sd >= 0.0 && self.concept_sd >= 0.0 && self.difficulty_sd >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        if !self.learning_gain.is_finite() {
            return bad("learning_gain must be finite");
        }
        Ok(())
    }
}

/// Ground truth hidden from any model.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTruth {
    pub difficulty: Vec<f64>,
    /// True correctness probability per sequence and step.
    pub p_true: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub dataset: Dataset,
    pub truth: OracleTruth,
}

impl Simulation {
    /// Sidecar CSV `student_id,order,p_true` aligned with the corpus rows.
    pub fn write_truth_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "student_id,order,p_true")?;
        for (s, ps) in self.dataset.sequences.iter().zip(&self.truth.p_true) {
            for (t, p) in ps.iter().enumerate() {
                writeln!(w, "{},{},{p:.9}", s.student_id, t + 1)?;
            }
        }
        Ok(())
    }
}

/// One simulated learner.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentState {
    pub ability: Vec<f64>,
}

impl StudentState {
    pub fn p_correct(&self, concepts: &[usize], difficulty: f64, guess: f64, slip: f64) -> f64 {
        let mean = concepts.iter().map(|&c| self.ability[c]).sum::<f64>() / concepts.len() as f64;
        guess + (1.0 - guess - slip) * sigmoid(mean - difficulty)
    }

    pub fn learn(&mut self, concepts: &[usize], gain: f64) {
        for &c in concepts {
            self.ability[c] += gain;
        }
    }
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated standard deviation")
}

pub fn simulate(cfg: &OracleConfig) -> Result<Simulation> {
    cfg.validate()?;
    // Stream 0 builds the question bank; student i draws from stream i + 1.
    let mut bank_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let diff_dist = normal(cfg.difficulty_mean, cfg.difficulty_sd);
    let mut concepts_of = Vec::with_capacity(cfg.n_questions);
    let mut difficulty = Vec::with_capacity(cfg.n_questions);
    for q in 0..cfg.n_questions {
        // Round-robin primary concepts so every concept has questions.
        let primary = q % cfg.n_concepts;
        let mut cs = vec![primary];
        if cfg.n_concepts > 1 && bank_rng.gen_bool(cfg.second_concept_prob) {
            let mut other = bank_rng.gen_range(0..cfg.n_concepts - 1);
            if other >= primary {
                other += 1;
            }
            cs.push(other);
            cs.sort_unstable();
        }
        concepts_of.push(cs);
        difficulty.push(diff_dist.sample(&mut bank_rng));
    }
    let mut by_concept = vec![Vec::new(); cfg.n_concepts];
    for (q, cs) in concepts_of.iter().enumerate() {
        for &c in cs {
            by_concept[c].push(q);
        }
    }

    let students: Vec<(LearningSequence, Vec<f64>)> = (0..cfg.n_students)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            simulate_student(cfg, i, &concepts_of, &difficulty, &by_concept, &mut rng)
        })
        .collect();

    let catalog = Catalog::from_parts(
        (0..cfg.n_questions as i64).collect(),
        (0..cfg.n_concepts as i64).collect(),
        concepts_of,
    )?;
    let (sequences, p_true): (Vec<_>, Vec<_>) = students.into_iter().unzip();
    Ok(Simulation {
        dataset: Dataset::new(Arc::new(catalog), sequences)?,
        truth: OracleTruth { difficulty, p_true },
    })
}

fn simulate_student(
    cfg: &OracleConfig,
    index: usize,
    concepts_of: &[Vec<usize>],
    difficulty: &[f64],
    by_concept: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> (LearningSequence, Vec<f64>) {
    let level = normal(cfg.ability_mean, cfg.student_sd).sample(rng);
    let offset = normal(0.0, cfg.concept_sd);
    let mut student = StudentState {
        ability: (0..cfg.n_concepts).map(|_| level + offset.sample(rng)).collect(),
    };
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let mut steps = Vec::with_capacity(len);
    let mut probs = Vec::with_capacity(len);
    let mut q = rng.gen_range(0..cfg.n_questions);
    for t in 0..len {
        if t > 0 {
            q = if rng.gen_bool(cfg.stay_prob) {
                let c = *concepts_of[q].choose(rng).expect("non-empty concepts");
                *by_concept[c].choose(rng).expect("concept has questions")
            } else {
                rng.gen_range(0..cfg.n_questions)
            };
        }
        let cs = &concepts_of[q];
        let p = student.p_correct(cs, difficulty[q], cfg.guess, cfg.slip);
        let r = u8::from(rng.gen_bool(p));
        steps.push(Step::new(q, r));
        probs.push(p);
        student.learn(cs, cfg.learning_gain);
    }
    (LearningSequence::new(index as i64 + 1, steps), probs)
}
