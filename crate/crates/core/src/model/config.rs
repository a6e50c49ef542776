use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    #[default]
    Mini,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "mini" => Ok(Profile::Mini),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected paper or mini)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Supervised,
    Denoising,
    Zeroshot,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Supervised, Task::Denoising, Task::Zeroshot];

    pub fn name(self) -> &'static str {
        match self {
            Task::Supervised => "supervised",
            Task::Denoising => "denoising",
            Task::Zeroshot => "zeroshot",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Task::Supervised),
            "denoising" => Ok(Task::Denoising),
            "zeroshot" | "zero-shot" => Ok(Task::Zeroshot),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature width.
    pub c: usize,
    /// Output points.
    pub n: usize,
    /// Neighbourhood size of the point encoder.
    pub k: usize,
    pub heads: usize,
    pub n_blocks: usize,
    pub n_img_blocks: usize,
    pub block_points: usize,
    pub image_side: usize,
    pub ffn_mult: usize,
    pub profile: Profile,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            c: 256,
            n: 2048,
            k: 16,
            heads: 4,
            n_blocks: 16,
            n_img_blocks: 8,
            block_points: 128,
            image_side: 224,
            ffn_mult: 2,
            profile: Profile::Paper,
        }
    }

    pub fn mini() -> Self {
        Self {
            c: 32,
            n: 256,
            k: 8,
            heads: 4,
            n_blocks: 4,
            n_img_blocks: 2,
            block_points: 64,
            image_side: 32,
            ffn_mult: 2,
            profile: Profile::Mini,
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Mini => Self::mini(),
        }
    }

    /// Default image/point block split for a task: all image blocks for
    /// supervised completion, all point blocks for denoising, an even split
    /// for zero-shot.
    pub fn for_task(profile: Profile, task: Task) -> Self {
        let mut cfg = Self::for_profile(profile);
        cfg.n_img_blocks = match task {
            Task::Supervised => cfg.n_blocks,
            Task::Denoising => 0,
            Task::Zeroshot => cfg.n_blocks / 2,
        };
        cfg
    }

    pub fn n_pc_blocks(&self) -> usize {
        self.n_blocks - self.n_img_blocks
    }

    /// Rows of the encoded point features.
    pub fn n_point_rows(&self) -> usize {
        self.n / 16
    }

    /// Rows of the encoded image features.
    pub fn n_image_rows(&self) -> usize {
        (self.image_side / 16).pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.c == 0 || self.n == 0 || self.k == 0 || self.heads == 0 || self.block_points == 0 {
            return err("model dimensions must be positive".into());
        }
        if self.n % 16 != 0 {
            return err(format!("n = {} is not divisible by 16", self.n));
        }
        if self.n_blocks * self.block_points != self.n {
            return err(format!(
                "n_blocks × block_points = {} × {} != n = {}",
                self.n_blocks, self.block_points, self.n
            ));
        }
        if self.n_img_blocks > self.n_blocks {
            return err(format!(
                "n_img_blocks = {} exceeds n_blocks = {}",
                self.n_img_blocks, self.n_blocks
            ));
        }
        if self.c % self.heads != 0 {
            return err(format!("c = {} is not divisible by heads = {}", self.c, self.heads));
        }
        if self.c % 8 != 0 {
            return err(format!("c = {} is not divisible by 8", self.c));
        }
        if self.image_side == 0 || self.image_side % 16 != 0 {
            return err(format!("image_side = {} is not a positive multiple of 16", self.image_side));
        }
        if self.k > self.n / 16 {
            return err(format!("k = {} exceeds the {} points of the second stage", self.k, self.n / 16));
        }
        if self.ffn_mult == 0 {
            return err("ffn_mult must be positive".into());
        }
        Ok(())
    }

    /// Checks an (image blocks, point blocks) partition against this config.
    pub fn with_partition(&self, n_img: usize, n_pc: usize) -> Result<Self> {
        if n_img + n_pc != self.n_blocks {
            return Err(Error::Config(format!(
                "partition ({n_img}, {n_pc}) sums to {} but n_blocks = {}",
                n_img + n_pc,
                self.n_blocks
            )));
        }
        let cfg = Self {
            n_img_blocks: n_img,
            ..*self
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::mini().validate().unwrap();
        let p = ModelConfig::paper();
        assert_eq!((p.n_point_rows(), p.n_image_rows()), (128, 196));
        let m = ModelConfig::mini();
        assert_eq!((m.n_point_rows(), m.n_image_rows()), (16, 4));
    }

    #[test]
    fn invariants_are_enforced() {
        let mut c = ModelConfig::mini();
        c.n_img_blocks = 5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::mini();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::mini();
        c.n = 250;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::mini();
        c.block_points = 32;
        assert!(c.validate().is_err());
    }

    #[test]
    fn partitions() {
        let p = ModelConfig::paper();
        for (i, j) in [(0, 16), (4, 12), (8, 8), (12, 4), (16, 0)] {
            assert_eq!(p.with_partition(i, j).unwrap().n_pc_blocks(), j);
        }
        let e = p.with_partition(5, 12).unwrap_err().to_string();
        assert!(e.contains("sums to 17"), "{e}");
    }

    #[test]
    fn task_defaults() {
        assert_eq!(ModelConfig::for_task(Profile::Paper, Task::Supervised).n_img_blocks, 16);
        assert_eq!(ModelConfig::for_task(Profile::Paper, Task::Denoising).n_img_blocks, 0);
        assert_eq!(ModelConfig::for_task(Profile::Mini, Task::Zeroshot).n_img_blocks, 2);
    }
}
