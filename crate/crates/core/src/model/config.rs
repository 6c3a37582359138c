use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pitch_codec::N_BINS;

/// Number of encoder (and decoder) stages; fixes the `2^5` downsampling.
pub const STAGES: usize = 5;
/// Frames and mel bins must be multiples of this.
pub const FRAME_MULTIPLE: usize = 1 << STAGES;

/// Only supported GRU gate formulation; recorded in checkpoints.
pub const GRU_VARIANT: &str = "v3";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Standard,
    Toy,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "toy" => Ok(Self::Toy),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected toy or standard)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Toy => "toy",
        })
    }
}

/// How a decoder stage fuses its skip feature with the upsampled state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipMode {
    Concat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub mel_bins: usize,
    pub bins_out: usize,
    pub encoder_channels: [usize; STAGES],
    pub rcb_per_block: usize,
    pub icb_count: usize,
    pub gru_hidden: usize,
    pub skip_mode: SkipMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl ModelConfig {
    pub fn standard() -> Self {
        Self {
            mel_bins: 256,
            bins_out: N_BINS,
            encoder_channels: [16, 32, 64, 128, 256],
            rcb_per_block: 4,
            icb_count: 4,
            gru_hidden: 256,
            skip_mode: SkipMode::Concat,
        }
    }

    pub fn toy() -> Self {
        Self {
            encoder_channels: [2, 4, 8, 16, 32],
            gru_hidden: 32,
            ..Self::standard()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Standard => Self::standard(),
            Preset::Toy => Self::toy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mel_bins == 0 || self.mel_bins % FRAME_MULTIPLE != 0 {
            return Err(Error::Config(format!(
                "mel_bins must be a positive multiple of {FRAME_MULTIPLE}, got {}",
                self.mel_bins
            )));
        }
        if self.bins_out == 0 {
            return Err(Error::Config("bins_out must be positive".into()));
        }
        if self.encoder_channels.contains(&0) {
            return Err(Error::Config(
                "encoder channel counts must be positive".into(),
            ));
        }
        if self.encoder_channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "encoder channels must be non-decreasing, got {:?}",
                self.encoder_channels
            )));
        }
        if self.rcb_per_block == 0 || self.icb_count == 0 || self.gru_hidden == 0 {
            return Err(Error::Config(
                "rcb_per_block, icb_count and gru_hidden must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Deepest channel count, used by the intermediate blocks.
    pub fn bottleneck_channels(&self) -> usize {
        self.encoder_channels[STAGES - 1]
    }

    /// Number of trainable scalars of the network this config describes.
    pub fn parameter_count(&self) -> usize {
        let r = self.rcb_per_block;
        let c = &self.encoder_channels;
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let rcb = |ci: usize, co: usize| {
            conv(ci, co, 3) + conv(co, co, 3) + 4 * co + if ci != co { conv(ci, co, 1) } else { 0 }
        };
        let mut total = 2; // input batch norm
        let mut prev = 1;
        for &ck in c {
            total += rcb(prev, ck) + (r - 1) * rcb(ck, ck);
            total += rcb(ck, ck); // skip filter
            prev = ck;
        }
        total += self.icb_count * r * rcb(prev, prev);
        for k in 0..STAGES {
            let cin = if k + 1 < STAGES { c[k + 1] } else { c[k] };
            total += conv(cin, c[k], 3) + rcb(2 * c[k], c[k]) + (r - 1) * rcb(c[k], c[k]);
        }
        total += conv(c[0], 1, 3);
        let h = self.gru_hidden;
        total += 2 * (3 * h * self.mel_bins + 3 * h * h + 3 * h);
        total += self.bins_out * 2 * h + self.bins_out;
        total
    }

    /// `key = value` lines, one per field.
    pub fn to_text(&self) -> String {
        let channels: Vec<String> = self
            .encoder_channels
            .iter()
            .map(|c| c.to_string())
            .collect();
        format!(
            "mel_bins = {}\nbins_out = {}\nencoder_channels = {}\nrcb_per_block = {}\nicb_count = {}\ngru_hidden = {}\nskip_mode = concat\ngru_variant = {GRU_VARIANT}\n",
            self.mel_bins,
            self.bins_out,
            channels.join(","),
            self.rcb_per_block,
            self.icb_count,
            self.gru_hidden,
        )
    }

    /// Parses [`ModelConfig::to_text`] output. Returns the config and any
    /// extra keys, which checkpoints use for training state.
    pub fn from_text(text: &str) -> Result<(Self, BTreeMap<String, String>)> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn take<V: FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<V> {
            let raw = map
                .remove(key)
                .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::Config(format!("bad value `{raw}` for `{key}`")))
        }
        let channels: String = take(&mut map, "encoder_channels")?;
        let parsed: Vec<usize> = channels
            .split(',')
            .map(|c| c.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad encoder_channels `{channels}`")))?;
        let encoder_channels: [usize; STAGES] = parsed.try_into().map_err(|v: Vec<usize>| {
            Error::Config(format!(
                "expected {STAGES} encoder channels, got {}",
                v.len()
            ))
        })?;
        let skip: String = take(&mut map, "skip_mode")?;
        if skip != "concat" {
            return Err(Error::Config(format!("unsupported skip_mode `{skip}`")));
        }
        let variant: String = take(&mut map, "gru_variant")?;
        if variant != GRU_VARIANT {
            return Err(Error::Config(format!(
                "unsupported gru_variant `{variant}`"
            )));
        }
        let cfg = Self {
            mel_bins: take(&mut map, "mel_bins")?,
            bins_out: take(&mut map, "bins_out")?,
            encoder_channels,
            rcb_per_block: take(&mut map, "rcb_per_block")?,
            icb_count: take(&mut map, "icb_count")?,
            gru_hidden: take(&mut map, "gru_hidden")?,
            skip_mode: SkipMode::Concat,
        };
        cfg.validate()?;
        Ok((cfg, map))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [ModelConfig::standard(), ModelConfig::toy()] {
            let (back, extra) = ModelConfig::from_text(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
            assert!(extra.is_empty());
        }
    }

    #[test]
    fn extra_keys_are_returned() {
        let text = format!("{}epoch = 3\n", ModelConfig::toy().to_text());
        let (_, extra) = ModelConfig::from_text(&text).unwrap();
        assert_eq!(extra.get("epoch").map(String::as_str), Some("3"));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::toy();
        c.mel_bins = 250;
        assert!(c.validate().is_err());
        let text = ModelConfig::toy().to_text().replace("2,4,8,16,32", "2,4,8");
        assert!(ModelConfig::from_text(&text).is_err());
        let text = ModelConfig::toy().to_text().replace("v3", "v1");
        assert!(ModelConfig::from_text(&text).is_err());
    }
}
