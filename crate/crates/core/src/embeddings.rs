//! The four lookup tables (question, concept, position, response) and the
//! composite question representation `e_q ⊕ mean(e_c for c in concepts(q))`.
//!
//! The question table has one extra row for the `[MASK]` token, whose
//! concept half is the zero vector. Positions are 0-based.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Catalog;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TableSizes {
    pub n_questions: usize,
    pub n_concepts: usize,
    pub max_len: usize,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTables {
    pub question: ParamId,
    pub concept: ParamId,
    pub position: ParamId,
    pub response: ParamId,
    pub sizes: TableSizes,
}

impl EmbeddingTables {
    /// Registers the tables in `store`, entries uniform on `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn register<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        sizes: TableSizes,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.dim > 0, "embedding size must be positive");
        let b = 1.0 / (sizes.dim as f64).sqrt();
        let d = sizes.dim;
        Self {
            question: store.add_uniform(format!("{prefix}.question"), sizes.n_questions + 1, d, b, rng),
            concept: store.add_uniform(format!("{prefix}.concept"), sizes.n_concepts, d, b, rng),
            position: store.add_uniform(format!("{prefix}.position"), sizes.max_len, d, b, rng),
            response: store.add_uniform(format!("{prefix}.response"), 2, d, b, rng),
            sizes,
        }
    }

    /// Looks up previously registered tables by name.
    pub fn find(store: &ParamStore, prefix: &str, sizes: TableSizes) -> Result<Self> {
        let get = |t: &str| {
            store
                .find(&format!("{prefix}.{t}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing table {prefix}.{t}")))
        };
        Ok(Self {
            question: get("question")?,
            concept: get("concept")?,
            position: get("position")?,
            response: get("response")?,
            sizes,
        })
    }

    pub fn dim(&self) -> usize {
        self.sizes.dim
    }

    pub fn mask_id(&self) -> usize {
        self.sizes.n_questions
    }

    /// Question representation of width `2d` on the tape.
    pub fn question_repr(&self, tape: &mut Tape, p: &Bound, catalog: &Catalog, q: usize) -> Result<Var> {
        let e_q = tape.gather(p.var(self.question), &[q]);
        let concepts = if q == self.mask_id() {
            tape.zeros(1, self.dim())
        } else {
            let ids = &catalog.question(q)?.concept_ids;
            let rows = tape.gather(p.var(self.concept), ids);
            tape.mean_rows(rows)
        };
        Ok(tape.concat_cols(&[e_q, concepts]))
    }

    /// Value of [`EmbeddingTables::question_repr`].
    pub fn question_repr_value(&self, store: &ParamStore, catalog: &Catalog, q: usize) -> Result<Vec<f64>> {
        if q > self.mask_id() {
            return Err(Error::Lookup(format!("unknown question id {q}")));
        }
        let mut tape = Tape::new();
        let p = store.load(&mut tape);
        let v = self.question_repr(&mut tape, &p, catalog, q)?;
        Ok(tape.value(v).data.clone())
    }

    /// `e_x ⊕ e_position` rows for a sequence of ids from `table`.
    pub fn with_positions(&self, tape: &mut Tape, p: &Bound, table: ParamId, ids: &[usize]) -> Var {
        let rows = tape.gather(p.var(table), ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather(p.var(self.position), &positions);
        tape.concat_cols(&[rows, pos])
    }
}

/// Stand-alone tables in a fresh store.
pub fn init_tables(sizes: TableSizes, seed: u64) -> (ParamStore, EmbeddingTables) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = EmbeddingTables::register(&mut store, "emb", sizes, &mut rng);
    (store, tables)
}
