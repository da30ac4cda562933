use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::serialization::{CurveOrder, Paradigm};

/// Shape and switches of one hybrid block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridBlockConfig {
    /// Local region side `w`, in cells.
    pub window: u64,
    /// Curve used by the global sub-block; its side also bounds token coordinates.
    pub curve: CurveOrder,
    pub bidirectional: bool,
    /// Local scans along both in-region axes, averaged.
    pub xy_fusion: bool,
    pub state: usize,
    pub channels: usize,
    /// Positional-embedding frequency count; 0 disables the embedding.
    pub frequencies: usize,
    pub local: bool,
    pub global: bool,
    /// Per-token RMS normalization of each sub-block's input before its scan.
    pub norm: bool,
}

impl Default for HybridBlockConfig {
    fn default() -> Self {
        HybridBlockConfig {
            window: 4,
            curve: CurveOrder::new(Paradigm::Hilbert, 8).expect("valid order"),
            bidirectional: true,
            xy_fusion: true,
            state: 8,
            channels: 8,
            frequencies: 4,
            local: true,
            global: true,
            norm: true,
        }
    }
}

impl HybridBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invalid("window must be at least 1"));
        }
        if self.channels == 0 || !self.channels.is_multiple_of(2) {
            return Err(Error::invalid(format!("channel count {} must be even and positive", self.channels)));
        }
        if self.state == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        Ok(())
    }

    /// Coordinate extent of the curve in cells (also the local y extent).
    pub fn side(&self) -> u64 {
        self.curve.side()
    }
}

/// Full pipeline configuration: block shape, stack depths and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub block: HybridBlockConfig,
    pub align_depth: usize,
    pub image_depth: usize,
    pub bev_depth: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { block: HybridBlockConfig::default(), align_depth: 2, image_depth: 2, bev_depth: 2, seed: 0 }
    }
}

const KEYS: [&str; 15] = [
    "window",
    "paradigm",
    "order",
    "bidirectional",
    "xy_fusion",
    "state",
    "channels",
    "frequencies",
    "local",
    "global",
    "norm",
    "align_depth",
    "image_depth",
    "bev_depth",
    "seed",
];

impl PipelineConfig {
    /// Reads a `key = value` file; absent keys take their defaults, unknown keys are rejected.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(Error::format(format!("unknown config key `{k}`")));
        }
        let d = PipelineConfig::default();
        let paradigm: Paradigm = kv.get_or("paradigm", d.block.curve.paradigm())?;
        let order = kv.get_or("order", d.block.curve.order())?;
        let block = HybridBlockConfig {
            window: kv.get_or("window", d.block.window)?,
            curve: CurveOrder::new(paradigm, order)?,
            bidirectional: kv.get_or("bidirectional", d.block.bidirectional)?,
            xy_fusion: kv.get_or("xy_fusion", d.block.xy_fusion)?,
            state: kv.get_or("state", d.block.state)?,
            channels: kv.get_or("channels", d.block.channels)?,
            frequencies: kv.get_or("frequencies", d.block.frequencies)?,
            local: kv.get_or("local", d.block.local)?,
            global: kv.get_or("global", d.block.global)?,
            norm: kv.get_or("norm", d.block.norm)?,
        };
        block.validate()?;
        Ok(PipelineConfig {
            block,
            align_depth: kv.get_or("align_depth", d.align_depth)?,
            image_depth: kv.get_or("image_depth", d.image_depth)?,
            bev_depth: kv.get_or("bev_depth", d.bev_depth)?,
            seed: kv.get_or("seed", d.seed)?,
        })
    }

    pub fn to_kv(&self) -> KvFile {
        let b = &self.block;
        let mut kv = KvFile::default();
        kv.insert("window", b.window);
        kv.insert("paradigm", b.curve.paradigm().as_str());
        kv.insert("order", b.curve.order());
        kv.insert("bidirectional", b.bidirectional);
        kv.insert("xy_fusion", b.xy_fusion);
        kv.insert("state", b.state);
        kv.insert("channels", b.channels);
        kv.insert("frequencies", b.frequencies);
        kv.insert("local", b.local);
        kv.insert("global", b.global);
        kv.insert("norm", b.norm);
        kv.insert("align_depth", self.align_depth);
        kv.insert("image_depth", self.image_depth);
        kv.insert("bev_depth", self.bev_depth);
        kv.insert("seed", self.seed);
        kv
    }
}

impl FromStr for PipelineConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PipelineConfig::from_kv(&KvFile::parse(s)?)
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_kv().fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let cfg: PipelineConfig = "window = 2\nparadigm = zorder\norder = 5\nbidirectional = false\nseed = 9".parse().unwrap();
        assert_eq!(cfg.block.window, 2);
        assert_eq!(cfg.block.curve.paradigm(), Paradigm::Zorder);
        assert!(!cfg.block.bidirectional);
        assert_eq!(cfg.block.channels, 8);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.to_string().parse::<PipelineConfig>().unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!("channels = 3".parse::<PipelineConfig>().is_err());
        assert!("window = 0".parse::<PipelineConfig>().is_err());
        assert!("windw = 2".parse::<PipelineConfig>().is_err());
        assert!("order = 0".parse::<PipelineConfig>().is_err());
    }
}
