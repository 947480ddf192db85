//! Sequence realism scorer.
//!
//! Question-position rows `e_q ⊕ e_o` and response-position rows `e_r ⊕ e_o`
//! each pass through a causally masked self-attention block; a third block
//! attends from the question stream to the response stream with values
//! `w_q ⊕ w_r`. A two-layer head maps each row of the result `D_o` to a
//! score, and because every block is causal, `scores[t]` is the score of the
//! prefix ending at `t`, all from one pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{EmbeddingTables, TableSizes};
use crate::error::{Error, Result};
use crate::nn::{MultiHeadBlock, TwoLayerHead};
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorDims {
    pub embed_dim: usize,
    pub heads: usize,
    pub max_len: usize,
}

impl DiscriminatorDims {
    /// Width of `V_q`, `V_r`, `w_q`, `w_r` and `D_o` rows.
    pub fn model_width(&self) -> usize {
        2 * self.embed_dim
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorModel {
    pub dims: DiscriminatorDims,
    pub n_questions: usize,
    pub params: ParamStore,
    pub tables: EmbeddingTables,
    pub question_block: MultiHeadBlock,
    pub response_block: MultiHeadBlock,
    pub cross_block: MultiHeadBlock,
    pub pred_head: TwoLayerHead,
}

/// Tape nodes of one scoring pass.
pub struct DiscPass {
    /// `T x 2d`.
    pub d_o: Var,
    /// `T x 2d` hidden activations of the head.
    pub head_hidden: Var,
    /// `T x 1` prefix scores.
    pub scores: Var,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefixScores {
    pub scores: Vec<f64>,
    pub d_o: Tensor,
}

impl PrefixScores {
    /// Score of the whole sequence (the last prefix).
    pub fn sequence_score(&self) -> f64 {
        *self.scores.last().expect("non-empty sequence")
    }
}

impl DiscriminatorModel {
    pub fn new(n_questions: usize, n_concepts: usize, dims: DiscriminatorDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let w = dims.model_width();
        let tables = EmbeddingTables::register(
            &mut params,
            "disc.emb",
            TableSizes {
                n_questions,
                n_concepts,
                max_len: dims.max_len,
                dim: dims.embed_dim,
            },
            &mut rng,
        );
        let question_block = MultiHeadBlock::register(&mut params, "disc.mh_q", w, w, w, w, dims.heads, &mut rng);
        let response_block = MultiHeadBlock::register(&mut params, "disc.mh_r", w, w, w, w, dims.heads, &mut rng);
        let cross_block = MultiHeadBlock::register(&mut params, "disc.mh_d", w, w, 2 * w, w, dims.heads, &mut rng);
        let pred_head = TwoLayerHead::register(&mut params, "disc.pred", w, w, 1, &mut rng);
        Self {
            dims,
            n_questions,
            params,
            tables,
            question_block,
            response_block,
            cross_block,
            pred_head,
        }
    }

    pub fn from_params(
        n_questions: usize,
        n_concepts: usize,
        dims: DiscriminatorDims,
        params: ParamStore,
    ) -> Result<Self> {
        let mut fresh = Self::new(n_questions, n_concepts, dims, 0);
        if fresh.params.len() != params.len() {
            return Err(Error::Checkpoint("discriminator parameter count differs".into()));
        }
        for (a, b) in fresh.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value.rows != b.value.rows || a.value.cols != b.value.cols {
                return Err(Error::Checkpoint(format!(
                    "discriminator parameter {} does not match {}",
                    b.name, a.name
                )));
            }
        }
        fresh.params = params;
        Ok(fresh)
    }

    fn check(&self, questions: &[usize], responses: &[u8]) -> Result<()> {
        if questions.len() != responses.len() {
            return Err(Error::Contract(format!(
                "{} questions but {} responses",
                questions.len(),
                responses.len()
            )));
        }
        if questions.is_empty() {
            return Err(Error::Contract("cannot score an empty sequence".into()));
        }
        if questions.len() > self.dims.max_len {
            return Err(Error::Contract(format!(
                "sequence of length {} exceeds max_len {}",
                questions.len(),
                self.dims.max_len
            )));
        }
        if let Some(q) = questions.iter().find(|&&q| q > self.n_questions) {
            return Err(Error::Lookup(format!("unknown question id {q}")));
        }
        if responses.iter().any(|&r| r > 1) {
            return Err(Error::Contract("responses must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Records a scoring pass on `tape`. `[MASK]` is question id `n_questions`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, questions: &[usize], responses: &[u8]) -> Result<DiscPass> {
        self.check(questions, responses)?;
        let t = &self.tables;
        let v_q = t.with_positions(tape, p, t.question, questions);
        let resp: Vec<usize> = responses.iter().map(|&r| r as usize).collect();
        let v_r = t.with_positions(tape, p, t.response, &resp);

        let w_q = self.question_block.forward(tape, p, v_q, v_q, v_q);
        let w_r = self.response_block.forward(tape, p, v_r, v_r, v_r);
        let w_qr = tape.concat_cols(&[w_q, w_r]);
        let d_o = self.cross_block.forward(tape, p, w_q, w_r, w_qr);

        let head = self.pred_head.forward_parts(tape, p, d_o);
        let scores = tape.sigmoid(head.logits);
        Ok(DiscPass {
            d_o,
            head_hidden: head.hidden,
            scores,
            len: questions.len(),
        })
    }

    /// Gradient of the last prefix score w.r.t. the last `D_o` row, as tape
    /// nodes (so a penalty on it can be differentiated again).
    pub fn last_score_gradient(&self, tape: &mut Tape, p: &Bound, pass: &DiscPass) -> Var {
        let last = pass.len - 1;
        let hidden = tape.row(pass.head_hidden, last);
        let score = tape.row(pass.scores, last);
        self.pred_head.sigmoid_input_gradient(tape, p, hidden, score)
    }

    pub fn score_prefixes(&self, questions: &[usize], responses: &[u8]) -> Result<PrefixScores> {
        let mut tape = Tape::new();
        let p = self.params.load(&mut tape);
        let pass = self.forward(&mut tape, &p, questions, responses)?;
        Ok(PrefixScores {
            scores: tape.value(pass.scores).data.clone(),
            d_o: tape.value(pass.d_o).clone(),
        })
    }
}
