//! The trajectory network: pedestrian motion encoder (PME), ego-motion
//! encoder (EME), ego-motion-guided decoder (EMGD) or post-fusion decoder
//! (PFD), and the future trajectory generator (FTG) that emits residual
//! offsets on top of the CV-CS reference.

mod config;
mod features;
mod gru;

pub(crate) use config::parse_value as config_parse_value;
pub use config::{Backbone, Decoding, EgoKind, ModelConfig, PfdSlots};
pub use features::{behavior_label, ego_features, motion_features, ModelInput, Observation};
pub use gru::{gru_forward, GruParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{concat, uniform_fan_in, Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::representation::{boxes_from_offsets, BoundingBox, MotionState, OffsetSequence};
use crate::ssm::{mamba_stack_forward, randomize_block, MambaBlockParams};

/// Offsets per future step: `(Δx, Δy, Δw, Δh)`.
pub const OFFSET_DIM: usize = 4;

/// Central-difference step for whole-model gradient checks. At 1e-5 the
/// difference quotient carries ~1e-11 of loss roundoff, which swamps the
/// smallest SSM-parameter gradients (~1e-9) under a relative metric.
pub const GRAD_CHECK_EPS: f64 = 1e-4;

/// Two-layer perceptron `silu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    fn init(
        store: &mut ParamStore,
        prefix: &str,
        dims: (usize, usize, usize),
        zero_last: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let (i, h, o) = dims;
        let w1 = store.add(format!("{prefix}.fc1.w"), uniform_fan_in(rng, &[i, h], i));
        let b1 = store.add(format!("{prefix}.fc1.b"), uniform_fan_in(rng, &[h], i));
        let (w2, b2) = if zero_last {
            (Tensor::zeros(&[h, o]), Tensor::zeros(&[o]))
        } else {
            (uniform_fan_in(rng, &[h, o], h), uniform_fan_in(rng, &[o], h))
        };
        Mlp {
            w1,
            b1,
            w2: store.add(format!("{prefix}.fc2.w"), w2),
            b2: store.add(format!("{prefix}.fc2.b"), b2),
        }
    }

    fn forward<'g>(&self, x: Var<'g>, w: &Bound<'g>) -> Result<Var<'g>> {
        x.linear(w.get(self.w1), w.get(self.b1))?
            .silu()
            .linear(w.get(self.w2), w.get(self.b2))
    }
}

/// Sequence model used by each encoder and the decoder.
#[derive(Debug, Clone)]
pub enum Stack {
    Mamba(Vec<MambaBlockParams>),
    Gru(GruParams),
}

impl Stack {
    fn init(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        match cfg.backbone {
            Backbone::Mamba => Stack::Mamba(
                (0..cfg.n_blocks)
                    .map(|i| MambaBlockParams::init(store, &format!("{prefix}.{i}"), cfg.mamba_dims(), rng))
                    .collect(),
            ),
            Backbone::Gru => Stack::Gru(GruParams::init(
                store,
                &format!("{prefix}.gru"),
                cfg.d_model,
                cfg.d_model,
                rng,
            )),
        }
    }

    fn forward<'g>(&self, x: Var<'g>, w: &Bound<'g>) -> Result<Var<'g>> {
        match self {
            Stack::Mamba(blocks) => mamba_stack_forward(x, blocks, w),
            Stack::Gru(p) => gru_forward(x, p, w),
        }
    }
}

#[derive(Debug, Clone)]
struct Layout {
    ped_embed: Mlp,
    ego_embed: Mlp,
    pme: Stack,
    eme: Stack,
    /// PFD only: `[2D, D]` projection of the concatenated features.
    fusion: Option<(ParamId, ParamId)>,
    decoder: Stack,
    ftg: Mlp,
}

/// Configuration plus named parameters.
#[derive(Debug, Clone)]
pub struct TrajMamba {
    config: ModelConfig,
    store: ParamStore,
    layout: Layout,
}

impl TrajMamba {
    /// Fresh parameters drawn from `config.seed`. The FTG output layer
    /// starts at zero, so an untrained model predicts the CV-CS reference.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let e = config.ego_kind.feature_dim();
        let s = &mut store;
        let ped_embed = Mlp::init(s, "ped_embed", (MotionState::DIM, d, d), false, &mut rng);
        let ego_embed = Mlp::init(s, "ego_embed", (e, d, d), false, &mut rng);
        let pme = Stack::init(s, "pme", &config, &mut rng);
        let eme = Stack::init(s, "eme", &config, &mut rng);
        let fusion = (config.decoding == Decoding::Pfd).then(|| {
            let w = s.add("fusion.w", uniform_fan_in(&mut rng, &[2 * d, d], 2 * d));
            let b = s.add("fusion.b", uniform_fan_in(&mut rng, &[d], 2 * d));
            (w, b)
        });
        let decoder = Stack::init(s, "decoder", &config, &mut rng);
        let ftg = Mlp::init(s, "ftg", (d, d, OFFSET_DIM), true, &mut rng);
        Ok(TrajMamba {
            config,
            store,
            layout: Layout {
                ped_embed,
                ego_embed,
                pme,
                eme,
                fusion,
                decoder,
                ftg,
            },
        })
    }

    /// Rebuilds a model from stored parameters. Names and shapes must match
    /// the layout implied by `config`, in order.
    pub fn from_parameters(config: ModelConfig, params: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = TrajMamba::new(config)?;
        if params.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.store.len(),
                params.len()
            )));
        }
        for (i, (name, t)) in params.into_iter().enumerate() {
            let want = &model.store.names()[i];
            let shape = model.store.tensors()[i].shape();
            if &name != want || t.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {i}: expected {want} {shape:?}, found {name} {:?}",
                    t.shape()
                )));
            }
            model.store.tensors_mut()[i] = t;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Sets the speed standardization statistics. The parameter layout is
    /// unaffected.
    pub fn set_ego_statistics(&mut self, ego_mean: f64, ego_std: f64) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.ego_mean = ego_mean;
        cfg.ego_std = ego_std;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Exact number of learnable scalars.
    pub fn count_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Motion states `[B, m, 8]` → `F_pm [B, m, D]`.
    pub fn pme_forward<'g>(&self, states: Var<'g>, w: &Bound<'g>) -> Result<Var<'g>> {
        let e = self.layout.ped_embed.forward(states, w)?;
        self.layout.pme.forward(e, w)
    }

    /// Ego features `[B, m, E]` → `F_em [B, m, D]`.
    pub fn eme_forward<'g>(&self, ego: Var<'g>, w: &Bound<'g>) -> Result<Var<'g>> {
        let e = self.layout.ego_embed.forward(ego, w)?;
        self.layout.eme.forward(e, w)
    }

    /// Decoder input `[F_pm; F_em[T] repeated n_pred times]`; returns the
    /// last `n_pred` decoder outputs.
    pub fn emgd_forward<'g>(&self, f_pm: Var<'g>, f_em: Var<'g>, w: &Bound<'g>) -> Result<Var<'g>> {
        let m = f_em.shape()[1];
        let n = self.config.n_pred;
        let guide = f_em.narrow(1, m - 1, 1)?.repeat(1, n)?;
        let f_in = concat(&[f_pm, guide], 1)?;
        self.run_decoder(f_in, m, w)
    }

    /// Decoder input `[(F_pm ‖ F_em) W + b; future slots]`, the slots being
    /// copies of the last fused step or zeros per `pfd_slots`.
    pub fn pfd_forward<'g>(&self, f_pm: Var<'g>, f_em: Var<'g>, w: &Bound<'g>) -> Result<Var<'g>> {
        let (fw, fb) = self
            .layout
            .fusion
            .ok_or_else(|| Error::Config("post-fusion decoding needs decoding = pfd".into()))?;
        let shape = f_pm.shape();
        let (b, m, d) = (shape[0], shape[1], shape[2]);
        let fused = concat(&[f_pm, f_em], 2)?.linear(w.get(fw), w.get(fb))?;
        let n = self.config.n_pred;
        let slots = match self.config.pfd_slots {
            PfdSlots::RepeatLast => fused.narrow(1, m - 1, 1)?.repeat(1, n)?,
            PfdSlots::Zeros => f_pm.graph().constant(Tensor::zeros(&[b, n, d])),
        };
        let f_in = concat(&[fused, slots], 1)?;
        self.run_decoder(f_in, m, w)
    }

    fn run_decoder<'g>(&self, f_in: Var<'g>, m: usize, w: &Bound<'g>) -> Result<Var<'g>> {
        let out = self.layout.decoder.forward(f_in, w)?;
        out.narrow(1, m, self.config.n_pred)
    }

    /// `F_de [B, n, D]` → offsets `[B, n, 4]`.
    pub fn ftg_forward<'g>(&self, f_de: Var<'g>, w: &Bound<'g>) -> Result<Var<'g>> {
        self.layout.ftg.forward(f_de, w)
    }

    /// Full network up to the offsets. With `ablate_ego_zero` the ego
    /// encoder output is replaced by zeros before decoding.
    pub fn forward_offsets<'g>(
        &self,
        g: &'g Graph,
        input: &ModelInput,
        w: &Bound<'g>,
        ablate_ego_zero: bool,
    ) -> Result<Var<'g>> {
        let f_pm = self.pme_forward(g.constant(input.states.clone()), w)?;
        let f_em = if ablate_ego_zero {
            g.constant(Tensor::zeros(&f_pm.shape()))
        } else {
            self.eme_forward(g.constant(input.ego.clone()), w)?
        };
        let f_de = match self.config.decoding {
            Decoding::Emgd => self.emgd_forward(f_pm, f_em, w)?,
            Decoding::Pfd => self.pfd_forward(f_pm, f_em, w)?,
        };
        self.ftg_forward(f_de, w)
    }

    /// Offsets `[B, n, 4]` without recording gradients.
    pub fn predict_offsets(&self, input: &ModelInput, ablate_ego_zero: bool) -> Result<Tensor> {
        let g = Graph::new();
        let w = self.store.bind(&g, false);
        Ok(self.forward_offsets(&g, input, &w, ablate_ego_zero)?.value())
    }

    /// Predicted future boxes for each window in the batch.
    pub fn predict_batch(&self, input: &ModelInput, ablate_ego_zero: bool) -> Result<Vec<Vec<BoundingBox>>> {
        let off = self.predict_offsets(input, ablate_ego_zero)?;
        let n = self.config.n_pred;
        input
            .references
            .iter()
            .enumerate()
            .map(|(i, reference)| {
                let rows = &off.data()[i * n * OFFSET_DIM..(i + 1) * n * OFFSET_DIM];
                let seq = OffsetSequence {
                    offsets: rows.chunks(OFFSET_DIM).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
                };
                boxes_from_offsets(reference, &seq)
            })
            .collect()
    }

    /// Future boxes for one observation window.
    pub fn predict(&self, boxes: &[BoundingBox], ego: &[f64]) -> Result<Vec<BoundingBox>> {
        let input = ModelInput::build(&self.config, [Observation { boxes, ego }])?;
        Ok(self.predict_batch(&input, false)?.remove(0))
    }

    /// Moves every Mamba block and the FTG output layer away from their
    /// initial values so gradient checks see non-trivial sensitivities.
    pub fn randomize_for_grad_check(&mut self, rng: &mut impl Rng) {
        for stack in [&self.layout.pme, &self.layout.eme, &self.layout.decoder] {
            if let Stack::Mamba(blocks) = stack {
                for p in blocks {
                    randomize_block(&mut self.store, p, rng);
                }
            }
        }
        let d = self.config.d_model;
        let bound = 1.0 / (d as f64).sqrt();
        for id in [self.layout.ftg.w2, self.layout.ftg.b2] {
            for v in self.store.get_mut(id).data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
    }
}
