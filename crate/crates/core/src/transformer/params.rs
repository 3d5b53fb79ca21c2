use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::StackConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Initial depth-head bias: predictions start near `exp(DEPTH_PRIOR_LOG)`.
pub const DEPTH_PRIOR_LOG: f64 = 1.386_294_361_119_890_6;

/// Pre-norm attention block weights. Projections are `c×c`, applied as
/// `x·W`; the MLP hidden width is `4c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub q_proj: Tensor,
    pub k_proj: Tensor,
    pub v_proj: Tensor,
    pub o_proj: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub mlp_in: Tensor,
    pub mlp_in_bias: Tensor,
    pub mlp_out: Tensor,
    pub mlp_out_bias: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::uniform(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng)
}

impl LayerParams {
    pub fn random(c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln1_gain: Tensor::full(&[c], 1.0),
            ln1_bias: Tensor::zeros(&[c]),
            q_proj: uniform(rng, c, c),
            k_proj: uniform(rng, c, c),
            v_proj: uniform(rng, c, c),
            o_proj: uniform(rng, c, c),
            ln2_gain: Tensor::full(&[c], 1.0),
            ln2_bias: Tensor::zeros(&[c]),
            mlp_in: uniform(rng, c, 4 * c),
            mlp_in_bias: Tensor::zeros(&[4 * c]),
            mlp_out: uniform(rng, 4 * c, c),
            mlp_out_bias: Tensor::zeros(&[c]),
        }
    }

    pub fn channels(&self) -> usize {
        self.q_proj.shape()[0]
    }

    /// Zeroes the value/output projections and the MLP output so the block
    /// is an exact identity on its input.
    pub fn make_identity(&mut self) {
        let c = self.channels();
        self.v_proj = Tensor::zeros(&[c, c]);
        self.o_proj = Tensor::zeros(&[c, c]);
        self.mlp_out = Tensor::zeros(&[4 * c, c]);
        self.mlp_out_bias = Tensor::zeros(&[c]);
    }

    fn fields(&self) -> [(&'static str, &Tensor); 12] {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("q_proj", &self.q_proj),
            ("k_proj", &self.k_proj),
            ("v_proj", &self.v_proj),
            ("o_proj", &self.o_proj),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("mlp_in", &self.mlp_in),
            ("mlp_in_bias", &self.mlp_in_bias),
            ("mlp_out", &self.mlp_out),
            ("mlp_out_bias", &self.mlp_out_bias),
        ]
    }
}

/// A linear readout `x·weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Head {
    fn random(c: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: uniform(rng, c, out),
            bias: Tensor::zeros(&[out]),
        }
    }
}

/// Every weight of the coarse and refiner stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct StackParams {
    pub config: StackConfig,
    /// Patch embedding, `(patch²·3)×c`.
    pub embed: Tensor,
    pub coarse: Vec<LayerParams>,
    pub coarse_pose: Head,
    pub refine: Vec<LayerParams>,
    pub refine_pose: Head,
    pub refine_depth: Head,
}

impl StackParams {
    /// Seeded uniform `±1/√fan_in` weights, unit gains, zero biases.
    pub fn init(config: &StackConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.channels;
        let embed = uniform(&mut rng, config.patch * config.patch * 3, c);
        let coarse = (0..config.depth_coarse)
            .map(|_| LayerParams::random(c, &mut rng))
            .collect();
        let coarse_pose = Head::random(c, 7, &mut rng);
        let refine = (0..config.depth_refine)
            .map(|_| LayerParams::random(c, &mut rng))
            .collect();
        let refine_pose = Head::random(c, 7, &mut rng);
        let r2 = config.refine_patch * config.refine_patch;
        let mut refine_depth = Head::random(c, r2, &mut rng);
        refine_depth.bias = Tensor::full(&[r2], DEPTH_PRIOR_LOG);
        Ok(Self {
            config: config.clone(),
            embed,
            coarse,
            coarse_pose,
            refine,
            refine_pose,
            refine_depth,
        })
    }

    /// Parameters keyed by checkpoint name, e.g. `coarse.layer03.q_proj`.
    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert("embed".to_string(), self.embed.clone());
        for (stack, layers) in [("coarse", &self.coarse), ("refine", &self.refine)] {
            for (l, p) in layers.iter().enumerate() {
                for (name, t) in p.fields() {
                    out.insert(format!("{stack}.layer{:02}.{name}", l + 1), t.clone());
                }
            }
        }
        for (name, head) in [
            ("coarse.pose", &self.coarse_pose),
            ("refine.pose", &self.refine_pose),
            ("refine.depth", &self.refine_depth),
        ] {
            out.insert(format!("{name}.weight"), head.weight.clone());
            out.insert(format!("{name}.bias"), head.bias.clone());
        }
        out
    }

    /// Rebuilds parameters from named tensors, checking every shape against
    /// a fresh initialisation of `config`.
    pub fn from_named(config: &StackConfig, named: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut p = Self::init(config)?;
        let take = |name: String, slot: &mut Tensor| -> Result<()> {
            let t = named
                .get(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
            Ok(())
        };
        take("embed".into(), &mut p.embed)?;
        for (stack, layers) in [("coarse", &mut p.coarse), ("refine", &mut p.refine)] {
            for (l, lp) in layers.iter_mut().enumerate() {
                let prefix = format!("{stack}.layer{:02}", l + 1);
                let slots: [(&str, &mut Tensor); 12] = [
                    ("ln1_gain", &mut lp.ln1_gain),
                    ("ln1_bias", &mut lp.ln1_bias),
                    ("q_proj", &mut lp.q_proj),
                    ("k_proj", &mut lp.k_proj),
                    ("v_proj", &mut lp.v_proj),
                    ("o_proj", &mut lp.o_proj),
                    ("ln2_gain", &mut lp.ln2_gain),
                    ("ln2_bias", &mut lp.ln2_bias),
                    ("mlp_in", &mut lp.mlp_in),
                    ("mlp_in_bias", &mut lp.mlp_in_bias),
                    ("mlp_out", &mut lp.mlp_out),
                    ("mlp_out_bias", &mut lp.mlp_out_bias),
                ];
                for (name, slot) in slots {
                    take(format!("{prefix}.{name}"), slot)?;
                }
            }
        }
        for (name, head) in [
            ("coarse.pose", &mut p.coarse_pose),
            ("refine.pose", &mut p.refine_pose),
            ("refine.depth", &mut p.refine_depth),
        ] {
            take(format!("{name}.weight"), &mut head.weight)?;
            take(format!("{name}.bias"), &mut head.bias)?;
        }
        Ok(p)
    }
}
