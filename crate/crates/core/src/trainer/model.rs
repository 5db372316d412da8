//! Parameters and forward passes of the full recommender.

use rand::Rng;

use crate::corpus::{window, ItemId, UserId};
use crate::encoders::{
    gru_forward, lightgcn_forward, transformer_forward, AttentionHead, Backbone, BlockWeights, GraphEncoderConfig,
    GruWeights, LightGcnOutput, SeqEncoderConfig, TransformerWeights,
};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::interest::{dynamic_route, fused_scores, project_capsule, CapsuleConfig};
use crate::numerics::{Checkpoint, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::views::ViewSample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_items: usize,
    pub num_users: usize,
    pub seq: SeqEncoderConfig,
    pub graph: GraphEncoderConfig,
    pub capsules: CapsuleConfig,
    pub init_std: f64,
}

pub const ITEM_TABLE: &str = "item_emb";
pub const USER_TABLE: &str = "user_emb";
pub const GCN_ALPHA: &str = "gcn_alpha";

pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
}

/// Projected interests and the user vector for one history.
pub struct UserState {
    pub interests: Vec<Var>,
    pub user: Var,
}

fn gru_names() -> [&'static str; 9] {
    [
        "gru.w_r", "gru.u_r", "gru.b_r", "gru.w_u", "gru.u_u", "gru.b_u", "gru.w_n", "gru.u_n", "gru.b_n",
    ]
}

impl<T: Scalar> Model<T> {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let d = config.seq.dim;
        let std = config.init_std;
        let mut store = ParamStore::new();
        let mut items = Tensor::random_normal(config.num_items + 1, d, std, rng);
        items.row_mut(0).fill(T::zero());
        store.register(ITEM_TABLE, items)?;
        store.register(USER_TABLE, Tensor::random_normal(config.num_users, d, std, rng))?;
        let layers = config.graph.layers;
        store.register(
            GCN_ALPHA,
            Tensor::full(1, layers + 1, T::one() / T::from_usize_lossy(layers + 1)),
        )?;
        match config.seq.backbone {
            Backbone::Transformer => {
                let dh = d / config.seq.heads;
                store.register("pos_emb", Tensor::random_normal(config.seq.max_len, d, std, rng))?;
                for b in 0..config.seq.blocks {
                    for h in 0..config.seq.heads {
                        for m in ["wq", "wk", "wv"] {
                            store.register(format!("tf{b}.h{h}.{m}"), Tensor::xavier(d, dh, rng))?;
                        }
                    }
                    store.register(format!("tf{b}.wo"), Tensor::xavier(d, d, rng))?;
                    store.register(format!("tf{b}.ffn_w1"), Tensor::xavier(d, d, rng))?;
                    store.register(format!("tf{b}.ffn_b1"), Tensor::zeros(1, d))?;
                    store.register(format!("tf{b}.ffn_w2"), Tensor::xavier(d, d, rng))?;
                    store.register(format!("tf{b}.ffn_b2"), Tensor::zeros(1, d))?;
                }
            }
            Backbone::Gru => {
                for name in gru_names() {
                    let t = if name.contains(".b_") {
                        Tensor::zeros(1, d)
                    } else {
                        Tensor::xavier(d, d, rng)
                    };
                    store.register(name, t)?;
                }
            }
        }
        store.register("wz", Tensor::xavier(d, d, rng))?;
        for r in 0..config.capsules.capsules {
            store.register(format!("caps{r}.wo"), Tensor::xavier(d, d, rng))?;
        }
        Ok(Model { config, store })
    }

    pub fn item_table(&self) -> &Tensor<T> {
        self.store.get(ITEM_TABLE).expect("item table registered")
    }

    fn p(&self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        Ok(tape.param(&self.store, name)?)
    }

    /// `Z` for a window of item ids.
    pub fn encode_sequence(&self, tape: &mut Tape<T>, items: &[ItemId], mask: &[bool]) -> Result<Var> {
        let table = self.p(tape, ITEM_TABLE)?;
        let ids: Vec<usize> = items.iter().map(|i| i.index()).collect();
        let s = tape.select_rows(table, &ids)?;
        let wz = self.p(tape, "wz")?;
        match self.config.seq.backbone {
            Backbone::Transformer => {
                let mut blocks = Vec::with_capacity(self.config.seq.blocks);
                for b in 0..self.config.seq.blocks {
                    let mut heads = Vec::with_capacity(self.config.seq.heads);
                    for h in 0..self.config.seq.heads {
                        heads.push(AttentionHead {
                            wq: self.p(tape, &format!("tf{b}.h{h}.wq"))?,
                            wk: self.p(tape, &format!("tf{b}.h{h}.wk"))?,
                            wv: self.p(tape, &format!("tf{b}.h{h}.wv"))?,
                        });
                    }
                    blocks.push(BlockWeights {
                        heads,
                        wo: self.p(tape, &format!("tf{b}.wo"))?,
                        ffn_w1: self.p(tape, &format!("tf{b}.ffn_w1"))?,
                        ffn_b1: self.p(tape, &format!("tf{b}.ffn_b1"))?,
                        ffn_w2: self.p(tape, &format!("tf{b}.ffn_w2"))?,
                        ffn_b2: self.p(tape, &format!("tf{b}.ffn_b2"))?,
                    });
                }
                let positions = self.p(tape, "pos_emb")?;
                let weights = TransformerWeights { positions, blocks, wz };
                transformer_forward(tape, s, mask, &weights)
            }
            Backbone::Gru => {
                let g: Vec<Var> = gru_names()
                    .iter()
                    .map(|n| self.p(tape, n))
                    .collect::<Result<_>>()?;
                let weights = GruWeights {
                    w_r: g[0],
                    u_r: g[1],
                    b_r: g[2],
                    w_u: g[3],
                    u_u: g[4],
                    b_u: g[5],
                    w_n: g[6],
                    u_n: g[7],
                    b_n: g[8],
                    wz,
                };
                gru_forward(tape, s, mask, &weights)
            }
        }
    }

    /// Sequence encoder, routing and projection for the most recent
    /// `max_len` items of `prefix`.
    pub fn encode_user(&self, tape: &mut Tape<T>, user: UserId, prefix: &[ItemId]) -> Result<UserState> {
        if prefix.is_empty() {
            return Err(Error::Config(format!("user {} has an empty history", user.0)));
        }
        if user.index() >= self.config.num_users {
            return Err(Error::Config(format!("user {} is outside the trained user table", user.0)));
        }
        let w = window(prefix, self.config.seq.max_len);
        let z = self.encode_sequence(tape, &w.items, &w.mask)?;
        let capsules = dynamic_route(tape, z, &w.mask, &self.config.capsules)?;
        let mut interests = Vec::with_capacity(capsules.len());
        for (r, o) in capsules.into_iter().enumerate() {
            let wo = self.p(tape, &format!("caps{r}.wo"))?;
            interests.push(project_capsule(tape, o, wo)?);
        }
        let users = self.p(tape, USER_TABLE)?;
        let user = tape.select_rows(users, &[user.index()])?;
        Ok(UserState { interests, user })
    }

    /// LightGCN over one sampled view.
    pub fn embed_view(&self, tape: &mut Tape<T>, view: &ViewSample) -> Result<LightGcnOutput> {
        let table = self.p(tape, ITEM_TABLE)?;
        let alpha = self.p(tape, GCN_ALPHA)?;
        lightgcn_forward(tape, view, table, alpha, &self.config.graph)
    }

    /// Checkpoint with every parameter in registration order.
    pub fn to_checkpoint(&self, metadata: String) -> Checkpoint<T> {
        Checkpoint {
            metadata,
            tensors: self.store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    /// Rebuilds the parameter layout from `config` and fills it from
    /// `checkpoint`; every name must be present with a matching shape.
    pub fn from_checkpoint(config: ModelConfig, checkpoint: &Checkpoint<T>) -> Result<Self> {
        let mut rng = crate::rng::stream(0, &[]);
        let mut model = Model::init(config, &mut rng)?;
        let names: Vec<String> = model.store.iter().map(|(n, _)| n.to_string()).collect();
        if names.len() != checkpoint.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                checkpoint.tensors.len()
            )));
        }
        for name in names {
            let t = checkpoint
                .tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            model
                .store
                .set(&name, t)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        }
        Ok(model)
    }
}

impl<T: Scalar> Scorer<T> for Model<T> {
    fn score_all(&self, user: UserId, prefix: &[ItemId]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let state = self.encode_user(&mut tape, user, prefix)?;
        let interests = Tensor::from_rows(
            &state
                .interests
                .iter()
                .map(|&v| tape.value(v).row(0).to_vec())
                .collect::<Vec<_>>(),
        );
        let u = tape.value(state.user).row(0).to_vec();
        let mut scores = fused_scores(&interests, &u, self.item_table());
        scores[0] = T::neg_infinity();
        Ok(scores)
    }
}
