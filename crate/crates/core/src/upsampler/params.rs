use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hidden width of the first guidance convolution.
pub const GUIDE_HIDDEN: usize = 16;

/// Convolution weights of the guidance, feature and fusion networks.
/// Kernels are `3×3×Cin×Cout`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsamplerParams {
    pub guide0_kernel: Tensor,
    pub guide0_bias: Tensor,
    pub guide1_kernel: Tensor,
    pub guide1_bias: Tensor,
    pub feat_kernel: Tensor,
    pub feat_bias: Tensor,
    pub fuse0_kernel: Tensor,
    pub fuse0_bias: Tensor,
    pub fuse1_kernel: Tensor,
    pub fuse1_bias: Tensor,
}

pub(crate) const NAMES: [&str; 10] = [
    "guide0.kernel",
    "guide0.bias",
    "guide1.kernel",
    "guide1.bias",
    "feat.kernel",
    "feat.bias",
    "fuse0.kernel",
    "fuse0.bias",
    "fuse1.kernel",
    "fuse1.bias",
];

fn kernel(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(&[3, 3, cin, cout], 1.0 / ((9 * cin) as f64).sqrt(), rng).with_grad(true)
}

fn bias(c: usize) -> Tensor {
    Tensor::zeros(&[c]).with_grad(true)
}

/// Centre-tap kernel copying input channels `offset..offset+cout` through.
pub(crate) fn centre_identity(cin: usize, cout: usize, offset: usize) -> Tensor {
    let mut k = Tensor::zeros(&[3, 3, cin, cout]);
    let centre = 4 * cin * cout;
    for o in 0..cout {
        k.data_mut()[centre + (offset + o) * cout + o] = 1.0;
    }
    k.with_grad(true)
}

impl UpsamplerParams {
    /// Seeded uniform `±1/√fan_in` kernels with zero biases.
    pub fn init_uniform(c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            guide0_kernel: kernel(3, GUIDE_HIDDEN, &mut rng),
            guide0_bias: bias(GUIDE_HIDDEN),
            guide1_kernel: kernel(GUIDE_HIDDEN, c, &mut rng),
            guide1_bias: bias(c),
            feat_kernel: kernel(c, c, &mut rng),
            feat_bias: bias(c),
            fuse0_kernel: kernel(2 * c, c, &mut rng),
            fuse0_bias: bias(c),
            fuse1_kernel: kernel(c, c, &mut rng),
            fuse1_bias: bias(c),
        }
    }

    /// Uniform guidance network; feature and fusion networks start as an
    /// exact pass-through of the interpolated features wherever channel `k`
    /// satisfies `f_k + offsets[k] ≥ 0`, so training begins at the bilinear
    /// baseline.
    pub fn init_pass_through(c: usize, seed: u64, offsets: &[f64]) -> Result<Self> {
        if offsets.len() != c {
            return Err(Error::shape("pass-through offsets", &[offsets.len()], &[c]));
        }
        let mut p = Self::init_uniform(c, seed);
        p.feat_kernel = centre_identity(c, c, 0);
        p.feat_bias = Tensor::new(vec![c], offsets.to_vec())?.with_grad(true);
        p.fuse0_kernel = centre_identity(2 * c, c, c);
        p.fuse0_bias = bias(c);
        p.fuse1_kernel = centre_identity(c, c, 0);
        p.fuse1_bias = Tensor::from_fn(&[c], |k| -offsets[k]).with_grad(true);
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.feat_kernel.shape()[3]
    }

    pub fn tensors(&self) -> [&Tensor; 10] {
        [
            &self.guide0_kernel,
            &self.guide0_bias,
            &self.guide1_kernel,
            &self.guide1_bias,
            &self.feat_kernel,
            &self.feat_bias,
            &self.fuse0_kernel,
            &self.fuse0_bias,
            &self.fuse1_kernel,
            &self.fuse1_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 10] {
        [
            &mut self.guide0_kernel,
            &mut self.guide0_bias,
            &mut self.guide1_kernel,
            &mut self.guide1_bias,
            &mut self.feat_kernel,
            &mut self.feat_bias,
            &mut self.fuse0_kernel,
            &mut self.fuse0_bias,
            &mut self.fuse1_kernel,
            &mut self.fuse1_bias,
        ]
    }

    /// Parameters keyed `upsampler.<net>.<kernel|bias>`.
    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        NAMES
            .iter()
            .zip(self.tensors())
            .map(|(n, t)| (format!("upsampler.{n}"), t.clone()))
            .collect()
    }

    pub fn from_named(c: usize, named: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut p = Self::init_uniform(c, 0);
        for (name, slot) in NAMES.iter().zip(p.tensors_mut()) {
            let key = format!("upsampler.{name}");
            let t = named
                .get(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {key}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Config(format!(
                    "parameter {key} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone().with_grad(true);
        }
        Ok(p)
    }

    /// Byte-exact equality of every tensor.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.bitwise_eq(b))
    }
}
