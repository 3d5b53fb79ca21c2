use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiply-add counts of the attention sublayers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub qk_flops: u64,
    pub av_flops: u64,
    pub proj_flops: u64,
    pub total: u64,
}

impl FlopCount {
    pub fn new(qk_flops: u64, av_flops: u64, proj_flops: u64) -> Self {
        Self {
            qk_flops,
            av_flops,
            proj_flops,
            total: qk_flops + av_flops + proj_flops,
        }
    }
}

impl std::ops::Add for FlopCount {
    type Output = FlopCount;

    fn add(self, o: FlopCount) -> FlopCount {
        FlopCount::new(
            self.qk_flops + o.qk_flops,
            self.av_flops + o.av_flops,
            self.proj_flops + o.proj_flops,
        )
    }
}

/// Multiply-adds actually executed, accumulated by the forward passes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounter {
    pub qk: u64,
    pub av: u64,
    pub proj: u64,
    pub mlp: u64,
    /// Patch embedding and the pose/depth heads.
    pub heads: u64,
    pub conv: u64,
}

impl FlopCounter {
    pub fn attention(&self) -> FlopCount {
        FlopCount::new(self.qk, self.av, self.proj)
    }

    pub fn total(&self) -> u64 {
        self.qk + self.av + self.proj + self.mlp + self.heads + self.conv
    }

    pub fn merge(&mut self, o: &FlopCounter) {
        self.qk += o.qk;
        self.av += o.av;
        self.proj += o.proj;
        self.mlp += o.mlp;
        self.heads += o.heads;
        self.conv += o.conv;
    }
}

/// Exact attention multiply-adds of `layers` layers over `n` views of `k`
/// tokens with `c` channels, globally or in windows of `window` tokens.
pub fn count_attention_flops(
    n: usize,
    k: usize,
    c: usize,
    layers: usize,
    window: Option<usize>,
) -> Result<FlopCount> {
    if n == 0 || k == 0 || c == 0 || layers == 0 {
        return Err(Error::Config(format!(
            "attention flop count needs positive arguments, got N={n} K={k} c={c} layers={layers}"
        )));
    }
    let (n, k, c, l) = (n as u64, k as u64, c as u64, layers as u64);
    let pairs = match window {
        None => (n * k) * (n * k),
        Some(w) => {
            let w = w as u64;
            if w == 0 || k % w != 0 {
                return Err(Error::Config(format!(
                    "window {w} does not divide {k} tokens"
                )));
            }
            n * (k / w) * w * w
        }
    };
    Ok(FlopCount::new(
        l * pairs * c,
        l * pairs * c,
        l * 4 * n * k * c * c,
    ))
}
