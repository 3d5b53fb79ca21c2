use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn d_coarse() -> usize {
    6
}
fn d_refine() -> usize {
    2
}
fn d_channels() -> usize {
    32
}
fn d_heads() -> usize {
    4
}
fn d_patch() -> usize {
    8
}
fn d_window() -> usize {
    16
}
fn d_refine_patch() -> usize {
    4
}
fn d_low() -> usize {
    32
}
fn d_high() -> usize {
    64
}

/// Sizes of the coarse and refiner stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    #[serde(default = "d_coarse")]
    pub depth_coarse: usize,
    #[serde(default = "d_refine")]
    pub depth_refine: usize,
    #[serde(default = "d_channels")]
    pub channels: usize,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_patch")]
    pub patch: usize,
    /// Tokens per non-overlapping refiner attention window.
    #[serde(default = "d_window")]
    pub refine_window: usize,
    /// Edge of the depth patch each refiner token regresses.
    #[serde(default = "d_refine_patch")]
    pub refine_patch: usize,
    #[serde(default = "d_low")]
    pub low_height: usize,
    #[serde(default = "d_low")]
    pub low_width: usize,
    #[serde(default = "d_high")]
    pub high_height: usize,
    #[serde(default = "d_high")]
    pub high_width: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            depth_coarse: d_coarse(),
            depth_refine: d_refine(),
            channels: d_channels(),
            heads: d_heads(),
            patch: d_patch(),
            refine_window: d_window(),
            refine_patch: d_refine_patch(),
            low_height: d_low(),
            low_width: d_low(),
            high_height: d_high(),
            high_width: d_high(),
            seed: 0,
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("stack.{field}: {why}")));
        if self.channels == 0 || self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return bad(
                "heads",
                format!(
                    "{} heads do not divide {} channels",
                    self.heads, self.channels
                ),
            );
        }
        if !self.channels.is_multiple_of(4) {
            return bad(
                "channels",
                format!("{} is not a multiple of 4", self.channels),
            );
        }
        if self.depth_coarse == 0 {
            return bad("depth_coarse", "must be positive".into());
        }
        if self.depth_refine == 0 || self.depth_refine >= self.depth_coarse {
            return bad(
                "depth_refine",
                format!("{} must lie in [1, depth_coarse)", self.depth_refine),
            );
        }
        if self.patch == 0
            || !self.low_height.is_multiple_of(self.patch)
            || !self.low_width.is_multiple_of(self.patch)
            || self.low_height == 0
            || self.low_width == 0
        {
            return bad(
                "patch",
                format!(
                    "{} must divide the low resolution {}×{}",
                    self.patch, self.low_height, self.low_width
                ),
            );
        }
        let s = self.high_height / self.low_height;
        if s == 0
            || self.high_height != s * self.low_height
            || self.high_width != s * self.low_width
        {
            return bad(
                "high_height",
                format!(
                    "{}×{} is not an integer multiple of {}×{}",
                    self.high_height, self.high_width, self.low_height, self.low_width
                ),
            );
        }
        if self.refine_patch == 0
            || !self
                .high_height
                .is_multiple_of(self.high_grid().0 * self.refine_patch)
            || !self
                .high_width
                .is_multiple_of(self.high_grid().1 * self.refine_patch)
        {
            return bad(
                "refine_patch",
                format!("{} does not tile the high resolution", self.refine_patch),
            );
        }
        let k = self.high_tokens();
        if self.refine_window == 0 || !k.is_multiple_of(self.refine_window) {
            return bad(
                "refine_window",
                format!("{} does not divide {k} refiner tokens", self.refine_window),
            );
        }
        Ok(())
    }

    /// Integer resolution ratio between the high and low branches.
    pub fn scale(&self) -> usize {
        self.high_height / self.low_height
    }

    pub fn low_grid(&self) -> (usize, usize) {
        (self.low_height / self.patch, self.low_width / self.patch)
    }

    /// Token grid of the upsampled feature map the refiner consumes.
    pub fn high_grid(&self) -> (usize, usize) {
        let (h, w) = self.low_grid();
        (h * self.scale(), w * self.scale())
    }

    pub fn low_tokens(&self) -> usize {
        let (h, w) = self.low_grid();
        h * w
    }

    pub fn high_tokens(&self) -> usize {
        let (h, w) = self.high_grid();
        h * w
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}
