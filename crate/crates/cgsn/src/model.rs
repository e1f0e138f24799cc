//! Parameter storage and the assembled selector model.
//!
//! Parameters live outside any tape as plain tensors, keyed by name in
//! insertion order (which is also the checkpoint blob order). Each forward
//! pass re-binds them: as gradient-tracked tape leaves during training, as
//! constants during inference. Initialization and binding walk the exact
//! same construction code, so the ordering is identical in both modes and
//! deterministic for a given config and seed.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::blocks::{
    AttnHead, BiLstmParams, FuseParams, GateParams, GatedReceiveParams, LstmDir, MhaParams,
};
use crate::encoder::{EncoderLayer, EncoderParams, Vocabulary};
use crate::evidence_memory::MemoryWriteParams;
use crate::global_graph::{BankInit, EnhanceParams, GlobalPairParams, ReceptionParams, SelectionHead};
use crate::local_graph::{GatParams, GatPair, LevelInteractParams};
use crate::numerics::{Tape, Tensor, Value};
use crate::pipeline::config::ModelConfig;

/// Ordered map of named parameter tensors.
#[derive(Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Append a named tensor; names must be unique.
    pub(crate) fn push(&mut self, name: String, t: Tensor) {
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn set(&mut self, name: &str, t: Tensor) {
        let i = self.index[name];
        assert_eq!(self.tensors[i].shape(), t.shape(), "shape change for {name}");
        self.tensors[i] = t;
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

enum CtxMode<'a> {
    /// Create tensors with seeded init and register them in the store.
    Init {
        store: &'a mut ParamStore,
        rng: &'a mut ChaCha20Rng,
    },
    /// Fetch stored tensors; bind as tape leaves when a tape is given.
    Bind {
        store: &'a ParamStore,
        tape: Option<&'a Tape>,
        leaves: Vec<Value>,
    },
}

/// One traversal context used both to initialize and to bind parameters.
pub struct ParamCtx<'a> {
    mode: CtxMode<'a>,
    prefix: Vec<String>,
}

impl<'a> ParamCtx<'a> {
    pub fn init(store: &'a mut ParamStore, rng: &'a mut ChaCha20Rng) -> ParamCtx<'a> {
        ParamCtx {
            mode: CtxMode::Init { store, rng },
            prefix: Vec::new(),
        }
    }

    pub fn bind(store: &'a ParamStore, tape: Option<&'a Tape>) -> ParamCtx<'a> {
        ParamCtx {
            mode: CtxMode::Bind {
                store,
                tape,
                leaves: Vec::new(),
            },
            prefix: Vec::new(),
        }
    }

    /// Run `f` with `name` pushed onto the dotted path prefix.
    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut ParamCtx) -> T) -> T {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix.join("."), name)
        }
    }

    fn take(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        init: impl FnOnce(&mut ChaCha20Rng) -> Tensor,
    ) -> Value {
        let full = self.full_name(name);
        match &mut self.mode {
            CtxMode::Init { store, rng } => {
                let t = init(rng);
                assert_eq!(t.shape(), &shape[..]);
                store.push(full, t.clone());
                Value::constant(t)
            }
            CtxMode::Bind { store, tape, leaves } => {
                let t = store
                    .get(&full)
                    .unwrap_or_else(|| panic!("missing parameter {full}"))
                    .clone();
                assert_eq!(t.shape(), &shape[..], "shape drift for {full}");
                match tape {
                    Some(tape) => {
                        let v = tape.param(t);
                        leaves.push(v.clone());
                        v
                    }
                    None => Value::constant(t),
                }
            }
        }
    }

    /// Glorot-uniform weight matrix.
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Value {
        self.take(name, vec![rows, cols], |rng| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor::new(vec![rows, cols], data)
        })
    }

    /// Zero-initialized `[1, cols]` bias row.
    pub fn bias(&mut self, name: &str, cols: usize) -> Value {
        self.take(name, vec![1, cols], |_| Tensor::zeros(vec![1, cols]))
    }

    /// A parameter initialized to the same values as `source`.
    pub fn copy_of(&mut self, name: &str, source: &Value) -> Value {
        let t = source.tensor().clone();
        self.take(name, t.shape().to_vec(), move |_| t)
    }

    /// Tape leaves bound so far, in traversal order (bind mode only).
    pub fn into_leaves(self) -> Vec<Value> {
        match self.mode {
            CtxMode::Bind { leaves, .. } => leaves,
            CtxMode::Init { .. } => Vec::new(),
        }
    }

    // ── shared block constructors ───────────────────────────────────

    pub fn mha(&mut self, name: &str, heads: usize, d_model: usize, d_z: usize) -> MhaParams {
        self.scoped(name, |ctx| {
            let heads = (0..heads)
                .map(|h| {
                    ctx.scoped(&format!("head{h}"), |ctx| AttnHead {
                        wq: ctx.weight("wq", d_model, d_z),
                        wk: ctx.weight("wk", d_model, d_z),
                        wv: ctx.weight("wv", d_model, d_z),
                    })
                })
                .collect();
            MhaParams { heads, d_z }
        })
    }

    /// Concat -> linear -> tanh fusion over two `d`-wide inputs.
    pub fn fuse(&mut self, name: &str, d: usize) -> FuseParams {
        self.scoped(name, |ctx| FuseParams {
            w: ctx.weight("w", 2 * d, d),
            b: ctx.bias("b", d),
        })
    }

    /// Scalar gate over a `width`-wide input. `bias_init` sets the initial
    /// openness: negative starts the gate mostly closed (retentive),
    /// positive mostly open.
    pub fn gate(&mut self, name: &str, width: usize, bias_init: f64) -> GateParams {
        self.scoped(name, |ctx| GateParams {
            w: ctx.weight("w", width, 1),
            b: ctx.take("b", vec![1, 1], |_| Tensor::new(vec![1, 1], vec![bias_init])),
        })
    }

    pub fn gated_receive(
        &mut self,
        name: &str,
        heads: usize,
        d: usize,
        d_z: usize,
        gate_bias_init: f64,
    ) -> GatedReceiveParams {
        self.scoped(name, |ctx| GatedReceiveParams {
            mha: ctx.mha("mha", heads, d, d_z),
            ffnn: ctx.fuse("ffnn", d),
            gate: ctx.gate("gate", d, gate_bias_init),
        })
    }

    fn lstm_dir(&mut self, name: &str, d_in: usize, hidden: usize) -> LstmDir {
        self.scoped(name, |ctx| LstmDir {
            w_x: ctx.weight("w_x", d_in, 4 * hidden),
            w_h: ctx.weight("w_h", hidden, 4 * hidden),
            b: ctx.bias("b", 4 * hidden),
        })
    }

    pub fn bilstm(&mut self, name: &str, d_in: usize, hidden: usize) -> BiLstmParams {
        self.scoped(name, |ctx| BiLstmParams {
            fwd: ctx.lstm_dir("fwd", d_in, hidden),
            bwd: ctx.lstm_dir("bwd", d_in, hidden),
            hidden,
        })
    }

    pub fn level_interact(&mut self, name: &str, d_h: usize) -> LevelInteractParams {
        self.scoped(name, |ctx| LevelInteractParams {
            lstm: ctx.bilstm("lstm", d_h, d_h / 2),
            fuse: ctx.fuse("fuse", d_h),
        })
    }

    pub fn gat_pair(&mut self, name: &str, heads: usize, d: usize, d_z: usize) -> GatPair {
        self.scoped(name, |ctx| GatPair {
            mha: ctx.mha("mha", heads, d, d_z),
            fuse: ctx.fuse("fuse", d),
        })
    }
}

/// Every learnable tensor of the model, bound as `Value`s for one pass.
pub struct CgsnParams {
    pub encoder: EncoderParams,
    pub token_interact: LevelInteractParams,
    pub sentence_interact: LevelInteractParams,
    pub paragraph_interact: LevelInteractParams,
    pub local_hops: Vec<GatParams>,
    pub reception: ReceptionParams,
    pub global_pairs: [GlobalPairParams; 3],
    pub bank_init: BankInit,
    pub enhance: EnhanceParams,
    pub head: SelectionHead,
    pub memory: MemoryWriteParams,
}

impl CgsnParams {
    fn build(ctx: &mut ParamCtx, config: &ModelConfig, vocab_size: usize) -> CgsnParams {
        let d = config.d_h;
        let d_z = d / config.heads;
        let heads = config.heads;

        let encoder = ctx.scoped("encoder", |ctx| {
            let embed = ctx.weight("embed", vocab_size, config.d_w);
            let pos = ctx.weight("pos", config.max_pair_len, config.d_w);
            let proj_w = ctx.weight("proj_w", config.d_w, d);
            let proj_b = ctx.bias("proj_b", d);
            let layers = (0..config.encoder_depth)
                .map(|l| {
                    ctx.scoped(&format!("layer{l}"), |ctx| EncoderLayer {
                        mha: ctx.mha("mha", heads, d, d_z),
                        fuse: ctx.fuse("fuse", d),
                    })
                })
                .collect();
            EncoderParams {
                embed,
                pos,
                proj_w,
                proj_b,
                layers,
                d_w: config.d_w,
                d_h: d,
                max_pair_len: config.max_pair_len,
            }
        });

        let (token_interact, sentence_interact, paragraph_interact) = ctx.scoped("local", |ctx| {
            (
                ctx.level_interact("interact_token", d),
                ctx.level_interact("interact_sentence", d),
                ctx.level_interact("interact_paragraph", d),
            )
        });

        let local_hops = (0..config.local_hops)
            .map(|h| {
                ctx.scoped(&format!("local.hop{h}"), |ctx| GatParams {
                    token_to_sentence: ctx.gat_pair("token_to_sentence", heads, d, d_z),
                    sentence_to_paragraph: ctx.gat_pair("sentence_to_paragraph", heads, d, d_z),
                    paragraph_to_segment: ctx.gat_pair("paragraph_to_segment", heads, d, d_z),
                })
            })
            .collect();

        // Bank-update gates start balanced; the memory-write gate starts
        // open so the cached summary lands in the paragraph bank with
        // force. All of it is learnable from there.
        const RETAIN: f64 = 0.0;
        const WRITE: f64 = 1.0;

        let reception = ctx.scoped("global.reception", |ctx| ReceptionParams {
            sentence: ctx.gated_receive("sentence", heads, d, d_z, RETAIN),
            paragraph: ctx.gated_receive("paragraph", heads, d, d_z, RETAIN),
            document: ctx.gated_receive("document", heads, d, d_z, RETAIN),
        });

        // Cross-level cycle; parameters are shared across global hops.
        let pair_names = ["sent_para", "para_doc", "doc_sent"];
        let mut pairs_iter = pair_names.iter().map(|name| {
            ctx.scoped(&format!("global.pair_{name}"), |ctx| GlobalPairParams {
                forward: ctx.gated_receive("forward", heads, d, d_z, RETAIN),
                backward: ctx.gated_receive("backward", heads, d, d_z, RETAIN),
            })
        });
        let global_pairs = [
            pairs_iter.next().unwrap(),
            pairs_iter.next().unwrap(),
            pairs_iter.next().unwrap(),
        ];
        drop(pairs_iter);

        let bank_init = ctx.scoped("global.bank_init", |ctx| BankInit {
            sentence: ctx.weight("sentence", config.n_global_sent, d),
            paragraph: ctx.weight("paragraph", config.n_global_para, d),
            document: ctx.weight("document", config.n_global_doc, d),
        });

        let enhance = ctx.scoped("enhance", |ctx| EnhanceParams {
            mha: ctx.mha("mha", heads, d, d_z),
            fuse: ctx.fuse("fuse", d),
        });

        let head = ctx.scoped("head", |ctx| SelectionHead {
            w: ctx.weight("w", d, 1),
            b: ctx.bias("b", 1),
        });

        let memory = ctx.scoped("memory", |ctx| MemoryWriteParams {
            ffnn_w: ctx.weight("ffnn_w", 2 * d, d),
            ffnn_b: ctx.bias("ffnn_b", d),
            gate: ctx.gate("gate", 2 * d, WRITE),
        });

        CgsnParams {
            encoder,
            token_interact,
            sentence_interact,
            paragraph_interact,
            local_hops,
            reception,
            global_pairs,
            bank_init,
            enhance,
            head,
            memory,
        }
    }
}

/// The trainable selector: config, vocabulary, and parameter tensors.
pub struct CgsnModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
}

impl CgsnModel {
    /// Fresh model with seeded initialization (`config.seed`).
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> CgsnModel {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        {
            let mut ctx = ParamCtx::init(&mut store, &mut rng);
            CgsnParams::build(&mut ctx, &config, vocab.size());
        }
        CgsnModel {
            config,
            vocab,
            store,
        }
    }

    /// Rebuild from existing tensors (checkpoint load).
    pub fn from_store(config: ModelConfig, vocab: Vocabulary, store: ParamStore) -> CgsnModel {
        CgsnModel {
            config,
            vocab,
            store,
        }
    }

    /// Bind every parameter for one forward pass. With a tape the returned
    /// leaves (in store order) are gradient-tracked.
    pub fn bind(&self, tape: Option<&Tape>) -> (CgsnParams, Vec<Value>) {
        let mut ctx = ParamCtx::bind(&self.store, tape);
        let params = CgsnParams::build(&mut ctx, &self.config, self.vocab.size());
        (params, ctx.into_leaves())
    }
}
