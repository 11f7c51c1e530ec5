//! Trainable projections from MM-DiT hidden width `d` to teacher width `e`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::multi_head_attention;
use crate::params::{Bound, Linear, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionVariant {
    /// Point-wise two-layer MLP; keeps one output row per image token.
    Mlp,
    /// Learnable queries cross-attending over the image tokens; `M` output rows.
    QueryPooler,
}

impl std::str::FromStr for ProjectionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Self::Mlp),
            "query_pooler" => Ok(Self::QueryPooler),
            other => Err(Error::Config(format!("unknown projection variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Layout {
    Mlp {
        fc1: Linear,
        fc2: Linear,
    },
    QueryPooler {
        queries: ParamId,
        key: Linear,
        value: Linear,
        out: Linear,
    },
}

#[derive(Debug, Clone)]
pub struct ProjectionHead {
    variant: ProjectionVariant,
    hidden_dim: usize,
    teacher_dim: usize,
    layout: Layout,
}

impl ProjectionHead {
    /// `num_queries` is only used by [`ProjectionVariant::QueryPooler`].
    pub fn new<R: Rng + ?Sized>(
        variant: ProjectionVariant,
        hidden_dim: usize,
        teacher_dim: usize,
        num_queries: usize,
        rng: &mut R,
    ) -> Result<(Self, ParamStore)> {
        if hidden_dim == 0 || teacher_dim == 0 {
            return Err(Error::invalid("projection_head", "widths must be positive"));
        }
        let mut store = ParamStore::new();
        let layout = match variant {
            ProjectionVariant::Mlp => Layout::Mlp {
                fc1: Linear::new(&mut store, "head.fc1", hidden_dim, hidden_dim, rng),
                fc2: Linear::new(&mut store, "head.fc2", hidden_dim, teacher_dim, rng),
            },
            ProjectionVariant::QueryPooler => {
                if num_queries == 0 {
                    return Err(Error::invalid("projection_head", "query pooler needs at least one query"));
                }
                let bound = 1.0 / (hidden_dim as f64).sqrt();
                Layout::QueryPooler {
                    queries: store.add(
                        "head.queries",
                        Tensor::rand_uniform([num_queries, hidden_dim], -bound, bound, rng),
                    ),
                    key: Linear::new(&mut store, "head.key", hidden_dim, hidden_dim, rng),
                    value: Linear::new(&mut store, "head.value", hidden_dim, hidden_dim, rng),
                    out: Linear::new(&mut store, "head.out", hidden_dim, teacher_dim, rng),
                }
            }
        };
        Ok((
            Self {
                variant,
                hidden_dim,
                teacher_dim,
                layout,
            },
            store,
        ))
    }

    pub fn variant(&self) -> ProjectionVariant {
        self.variant
    }

    pub fn teacher_dim(&self) -> usize {
        self.teacher_dim
    }

    /// Maps tapped features `[P×d]` to `[P×e]` (MLP) or `[M×e]` (query pooler).
    pub fn project(&self, tape: &mut Tape, p: &Bound, features: Var) -> Result<Var> {
        let (_, d) = tape.value(features).dims2("project")?;
        if d != self.hidden_dim {
            return Err(Error::shape("project", tape.value(features).shape(), &[0, self.hidden_dim]));
        }
        match &self.layout {
            Layout::Mlp { fc1, fc2 } => {
                let h = fc1.forward(tape, p, features)?;
                let h = tape.silu(h)?;
                fc2.forward(tape, p, h)
            }
            Layout::QueryPooler { queries, key, value, out } => {
                let k = key.forward(tape, p, features)?;
                let v = value.forward(tape, p, features)?;
                let pooled = multi_head_attention(tape, p.var(*queries), k, v, 1)?;
                out.forward(tape, p, pooled)
            }
        }
    }
}
