//! The student simulator.
//!
//! At step `t` the generator attends from the current question representation
//! `v_q` over the representations of earlier questions (keys) and the hidden
//! states that followed them (values), predicts
//! `sigmoid(pred_head(v_q ⊕ h_{t-1} ⊕ a_t))`, then feeds the interaction vector
//!
//! ```text
//! x_t = v_q ⊕ a_t ⊕ 0 ⊕ 0   if the response signal >= 0.5
//!       0 ⊕ 0 ⊕ v_q ⊕ a_t   otherwise
//! ```
//!
//! into a GRU. In multi-step mode the response signal is the generator's own
//! prediction; in single-step mode it is the ground-truth label. The branch is
//! a constant for differentiation: gradients flow through `v_q`, `a_t` and the
//! recurrence but not through the choice.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Catalog;
use crate::embeddings::{EmbeddingTables, TableSizes};
use crate::error::{Error, Result};
use crate::nn::{GruCell, TwoLayerHead};
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    MultiStep,
    SingleStep,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::MultiStep => "multi_step",
            Mode::SingleStep => "single_step",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_step" | "multi-step" => Ok(Mode::MultiStep),
            "single_step" | "single-step" => Ok(Mode::SingleStep),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
}

impl GeneratorDims {
    pub fn repr_width(&self) -> usize {
        2 * self.embed_dim
    }

    /// Width of the interaction vector `x_t`.
    pub fn interaction_width(&self) -> usize {
        2 * (2 * self.embed_dim + self.hidden_dim)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub catalog: Arc<Catalog>,
    pub dims: GeneratorDims,
    pub params: ParamStore,
    pub tables: EmbeddingTables,
    pub gru: GruCell,
    pub pred_head: TwoLayerHead,
    pub ar_head: TwoLayerHead,
}

impl GeneratorModel {
    pub fn new(catalog: Arc<Catalog>, dims: GeneratorDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (d, dh) = (dims.embed_dim, dims.hidden_dim);
        let tables = EmbeddingTables::register(
            &mut params,
            "gen.emb",
            Self::table_sizes(&catalog, &dims),
            &mut rng,
        );
        let x_width = dims.interaction_width();
        let gru = GruCell::register(&mut params, "gen.gru", x_width, dh, &mut rng);
        let pred_head = TwoLayerHead::register(&mut params, "gen.pred", 2 * d + 2 * dh, 2 * dh, 1, &mut rng);
        let ar_head = TwoLayerHead::register(
            &mut params,
            "gen.ar",
            x_width,
            2 * dh,
            catalog.n_questions(),
            &mut rng,
        );
        Self {
            catalog,
            dims,
            params,
            tables,
            gru,
            pred_head,
            ar_head,
        }
    }

    fn table_sizes(catalog: &Catalog, dims: &GeneratorDims) -> TableSizes {
        TableSizes {
            n_questions: catalog.n_questions(),
            n_concepts: catalog.n_concepts(),
            max_len: dims.max_len,
            dim: dims.embed_dim,
        }
    }

    /// Rebuilds a model around previously saved parameters.
    pub fn from_params(catalog: Arc<Catalog>, dims: GeneratorDims, params: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(catalog, dims, 0);
        if fresh.params.len() != params.len() {
            return Err(Error::Checkpoint("generator parameter count differs".into()));
        }
        for (a, b) in fresh.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value.rows != b.value.rows || a.value.cols != b.value.cols {
                return Err(Error::Checkpoint(format!(
                    "generator parameter {} does not match {}",
                    b.name, a.name
                )));
            }
        }
        fresh.params = params;
        Ok(fresh)
    }

    pub fn graph(&self) -> GenGraph<'_> {
        let mut tape = Tape::new();
        let params = self.params.load(&mut tape);
        GenGraph {
            model: self,
            tape,
            params,
        }
    }

    /// Forward-only rollout.
    pub fn rollout(&self, questions: &[usize], responses: Option<&[u8]>, mode: Mode) -> Result<Rollout> {
        let mut g = self.graph();
        let r = g.rollout(questions, responses, mode, None)?;
        Ok(r.values(&g.tape))
    }

    /// Distribution over the next question given an interaction vector.
    pub fn predict_next_question(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dims.interaction_width() {
            return Err(Error::Contract(format!(
                "interaction vector has width {}, expected {}",
                x.len(),
                self.dims.interaction_width()
            )));
        }
        let mut g = self.graph();
        let xv = g.tape.constant(Tensor::row_vector(x.to_vec()));
        let p = g.next_question_distribution(xv);
        Ok(g.tape.value(p).data.clone())
    }
}

/// Recurrent state during a rollout: `h_{t-1}` plus the attention memory.
#[derive(Clone, Debug)]
pub struct RolloutState {
    pub hidden: Var,
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
}

impl RolloutState {
    /// 1-based index of the next step.
    pub fn t(&self) -> usize {
        self.keys.len() + 1
    }
}

pub struct StepOutput {
    pub repr: Var,
    pub attention: Var,
    pub prob: Var,
}

/// Per-step nodes of a rollout recorded on a tape.
pub struct TapeRollout {
    pub probs: Vec<Var>,
    pub interactions: Vec<Var>,
    pub attentions: Vec<Var>,
    /// `true` where the first-half ("correct") branch was taken.
    pub branches: Vec<bool>,
}

impl TapeRollout {
    pub fn values(&self, tape: &Tape) -> Rollout {
        Rollout {
            probs: self.probs.iter().map(|&p| tape.value(p).item()).collect(),
            interactions: self
                .interactions
                .iter()
                .map(|&x| tape.value(x).data.clone())
                .collect(),
            attention_weights: self
                .attentions
                .iter()
                .map(|&a| tape.attention_weights(a).map(<[f64]>::to_vec).unwrap_or_default())
                .collect(),
            branches: self.branches.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub probs: Vec<f64>,
    pub interactions: Vec<Vec<f64>>,
    /// Attention weights per step; empty at the first step.
    pub attention_weights: Vec<Vec<f64>>,
    pub branches: Vec<bool>,
}

impl Rollout {
    /// Responses implied by the predictions (`p >= 0.5`).
    pub fn hard_responses(&self) -> Vec<u8> {
        self.probs.iter().map(|&p| u8::from(p >= 0.5)).collect()
    }
}

/// A generator bound to a tape.
pub struct GenGraph<'m> {
    pub model: &'m GeneratorModel,
    pub tape: Tape,
    pub params: Bound,
}

impl GenGraph<'_> {
    pub fn initial_state(&mut self) -> RolloutState {
        RolloutState {
            hidden: self.tape.zeros(1, self.model.dims.hidden_dim),
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn step(&mut self, state: &RolloutState, q: usize) -> Result<StepOutput> {
        let m = self.model;
        let repr = m.tables.question_repr(&mut self.tape, &self.params, &m.catalog, q)?;
        let attention = if state.keys.is_empty() {
            self.tape.zeros(1, m.dims.hidden_dim)
        } else {
            let scale = 1.0 / (m.dims.repr_width() as f64).sqrt();
            self.tape.attend(repr, &state.keys, &state.values, scale)
        };
        let input = self.tape.concat_cols(&[repr, state.hidden, attention]);
        let logit = m.pred_head.forward(&mut self.tape, &self.params, input);
        let prob = self.tape.sigmoid(logit);
        Ok(StepOutput {
            repr,
            attention,
            prob,
        })
    }

    pub fn build_interaction(&mut self, repr: Var, attention: Var, correct: bool) -> Var {
        let zr = self.tape.zeros(1, self.model.dims.repr_width());
        let za = self.tape.zeros(1, self.model.dims.hidden_dim);
        if correct {
            self.tape.concat_cols(&[repr, attention, zr, za])
        } else {
            self.tape.concat_cols(&[zr, za, repr, attention])
        }
    }

    pub fn advance(&mut self, state: RolloutState, repr: Var, x: Var) -> RolloutState {
        let hidden = self.model.gru.step(&mut self.tape, &self.params, x, state.hidden);
        let mut keys = state.keys;
        let mut values = state.values;
        keys.push(repr);
        values.push(hidden);
        RolloutState {
            hidden,
            keys,
            values,
        }
    }

    /// Softmax over the autoregressive head's logits.
    pub fn next_question_distribution(&mut self, x: Var) -> Var {
        let logits = self.model.ar_head.forward(&mut self.tape, &self.params, x);
        self.tape.softmax(logits)
    }

    /// Runs the recurrence over `questions`.
    ///
    /// `forced_branches` replays a previous pass's branch decisions, which
    /// keeps the computation smooth for finite-difference checks.
    pub fn rollout(
        &mut self,
        questions: &[usize],
        responses: Option<&[u8]>,
        mode: Mode,
        forced_branches: Option<&[bool]>,
    ) -> Result<TapeRollout> {
        if mode == Mode::SingleStep {
            match responses {
                Some(r) if r.len() == questions.len() => {}
                Some(r) => {
                    return Err(Error::Contract(format!(
                        "single-step rollout has {} questions but {} responses",
                        questions.len(),
                        r.len()
                    )))
                }
                None => return Err(Error::Contract("single-step rollout needs responses".into())),
            }
        }
        if let Some(f) = forced_branches {
            if f.len() != questions.len() {
                return Err(Error::Contract("forced branch count differs from length".into()));
            }
        }
        let n = questions.len();
        let mut out = TapeRollout {
            probs: Vec::with_capacity(n),
            interactions: Vec::with_capacity(n),
            attentions: Vec::with_capacity(n),
            branches: Vec::with_capacity(n),
        };
        let mut state = self.initial_state();
        for (t, &q) in questions.iter().enumerate() {
            let step = self.step(&state, q)?;
            let correct = match (forced_branches, mode) {
                (Some(f), _) => f[t],
                (None, Mode::MultiStep) => self.tape.value(step.prob).item() >= 0.5,
                (None, Mode::SingleStep) => responses.expect("checked above")[t] >= 1,
            };
            let x = self.build_interaction(step.repr, step.attention, correct);
            state = self.advance(state, step.repr, x);
            out.probs.push(step.prob);
            out.interactions.push(x);
            out.attentions.push(step.attention);
            out.branches.push(correct);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(n_q: usize) -> Arc<Catalog> {
        Arc::new(
            Catalog::from_parts(
                (0..n_q as i64).collect(),
                vec![0, 1, 2],
                (0..n_q).map(|q| vec![q % 3, (q + 1) % 3]).collect(),
            )
            .unwrap(),
        )
    }

    fn model(seed: u64) -> GeneratorModel {
        GeneratorModel::new(
            catalog(10),
            GeneratorDims {
                embed_dim: 4,
                hidden_dim: 3,
                max_len: 20,
            },
            seed,
        )
    }

    #[test]
    fn first_step_attention_is_zero() {
        let m = model(1);
        let mut g = m.graph();
        let s = g.initial_state();
        let out = g.step(&s, 2).unwrap();
        assert_eq!(g.tape.value(out.attention).data, vec![0.0; 3]);
    }

    #[test]
    fn single_history_item_attention_returns_it() {
        let m = model(2);
        let mut g = m.graph();
        let s = g.initial_state();
        let out = g.step(&s, 1).unwrap();
        let x = g.build_interaction(out.repr, out.attention, true);
        let s = g.advance(s, out.repr, x);
        let h1 = g.tape.value(s.hidden).data.clone();
        let out2 = g.step(&s, 5).unwrap();
        assert_eq!(g.tape.value(out2.attention).data, h1);
        assert_eq!(s.t(), 2);
    }

    #[test]
    fn interaction_branches() {
        let m = model(3);
        let mut g = m.graph();
        let s = g.initial_state();
        let out = g.step(&s, 0).unwrap();
        let w = m.dims.repr_width() + m.dims.hidden_dim;
        let hi = g.build_interaction(out.repr, out.attention, true);
        let lo = g.build_interaction(out.repr, out.attention, false);
        let hi = &g.tape.value(hi).data;
        let lo = &g.tape.value(lo).data;
        assert_eq!(hi.len(), m.dims.interaction_width());
        assert!(hi[..w].iter().any(|&x| x != 0.0));
        assert!(hi[w..].iter().all(|&x| x == 0.0));
        assert!(lo[..w].iter().all(|&x| x == 0.0));
        assert_eq!(&lo[w..], &hi[..w]);
    }

    #[test]
    fn threshold_is_inclusive_at_one_half() {
        // zero prediction head output gives sigmoid(0) = 0.5 exactly
        let mut m = model(4);
        for p in m.params.iter_mut().filter(|p| p.name.starts_with("gen.pred")) {
            p.value.data.iter_mut().for_each(|x| *x = 0.0);
        }
        let r = m.rollout(&[1, 2, 3], None, Mode::MultiStep).unwrap();
        assert!(r.probs.iter().all(|&p| p == 0.5));
        assert_eq!(r.branches, vec![true, true, true]);
    }

    #[test]
    fn advance_keeps_hidden_size() {
        let m = model(5);
        let mut g = m.graph();
        let mut s = g.initial_state();
        for q in [0, 3, 7] {
            let out = g.step(&s, q).unwrap();
            let x = g.build_interaction(out.repr, out.attention, false);
            let t = s.t();
            s = g.advance(s, out.repr, x);
            assert_eq!(s.t(), t + 1);
            assert_eq!(g.tape.value(s.hidden).len(), 3);
        }
    }

    #[test]
    fn multi_step_ignores_responses() {
        let m = model(6);
        let qs = [0, 4, 2, 9, 1, 1, 3];
        let a = m.rollout(&qs, Some(&[1, 1, 1, 1, 1, 1, 1]), Mode::MultiStep).unwrap();
        let b = m.rollout(&qs, Some(&[0, 1, 0, 0, 1, 0, 1]), Mode::MultiStep).unwrap();
        let c = m.rollout(&qs, None, Mode::MultiStep).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn single_step_contract() {
        let m = model(7);
        assert!(matches!(m.rollout(&[1, 2], None, Mode::SingleStep), Err(Error::Contract(_))));
        assert!(matches!(
            m.rollout(&[1, 2], Some(&[1]), Mode::SingleStep),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_and_multi_diverge_after_a_disagreement() {
        // label the first step against the model's own prediction
        let m = model(8);
        let qs = [3, 1, 4, 1, 5];
        let multi = m.rollout(&qs, None, Mode::MultiStep).unwrap();
        let first = u8::from(multi.probs[0] < 0.5);
        let labels = [first, 0, 1, 0, 1];
        let single = m.rollout(&qs, Some(&labels), Mode::SingleStep).unwrap();
        assert_eq!(single.probs[0], multi.probs[0]);
        assert_ne!(single.probs[1], multi.probs[1]);
    }

    #[test]
    fn next_question_distribution_is_a_softmax() {
        let m = model(9);
        let r = m.rollout(&[0, 1], None, Mode::MultiStep).unwrap();
        let p = m.predict_next_question(&r.interactions[1]).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let mut flat = model(9);
        for p in flat.params.iter_mut().filter(|p| p.name.starts_with("gen.ar.out")) {
            p.value.data.iter_mut().for_each(|x| *x = 0.0);
        }
        let p = flat.predict_next_question(&r.interactions[1]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
    }

    #[test]
    fn attention_weights_form_a_distribution() {
        let m = model(10);
        let r = m.rollout(&[0, 1, 2, 3, 4, 5], None, Mode::MultiStep).unwrap();
        assert!(r.attention_weights[0].is_empty());
        for (t, w) in r.attention_weights.iter().enumerate().skip(1) {
            assert_eq!(w.len(), t);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
