//! Flat `key=value` config file shared by all subcommands.
//!
//! Unprefixed training keys apply to both stages; `cnn.` and `lstm.`
//! prefixes restrict a key to one stage. Keys unknown to every command are
//! rejected when the file is loaded.

use std::path::Path;

use anyhow::{Context, Result};
use vbfs_core::armax::ArmaxOrders;
use vbfs_core::optim::{parse_kv, Stage, TrainConfig};
use vbfs_core::synth::SynthConfig;
use vbfs_core::video::{PreprocessConfig, RoiMode, TrackerConfig};
use vbfs_core::Error;

pub const PREP_KEYS: &[&str] = &["delta", "causal", "roi_h", "roi_w", "roi_mode", "input_size", "smoothing", "min_threshold"];
pub const CNN_KEYS: &[&str] = &["conv_widths", "fc_width"];
pub const ARMAX_KEYS: &[&str] = &["na", "nb", "nc", "nk"];
pub const EVAL_KEYS: &[&str] = &["sigmas", "sequences"];

/// Desk-scale preprocessing defaults for 64x64 frames.
pub fn desk_preprocess() -> PreprocessConfig {
    PreprocessConfig {
        tracker: TrackerConfig { box_height: 40, box_width: 60, ..TrackerConfig::default() },
        out_size: 32,
        ..PreprocessConfig::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: Vec<(String, String)>,
}

fn stage_prefix(key: &str) -> Option<(Stage, &str)> {
    if let Some(k) = key.strip_prefix("cnn.") {
        Some((Stage::Cnn, k))
    } else {
        key.strip_prefix("lstm.").map(|k| (Stage::Lstm, k))
    }
}

fn is_known(key: &str) -> bool {
    if let Some((_, k)) = stage_prefix(key) {
        return TrainConfig::KEYS.contains(&k) || CNN_KEYS.contains(&k);
    }
    [TrainConfig::KEYS, SynthConfig::KEYS, PREP_KEYS, CNN_KEYS, ARMAX_KEYS, EVAL_KEYS].iter().any(|ks| ks.contains(&key))
}

fn bad(key: &str, v: &str) -> Error {
    Error::Config(format!("invalid value '{v}' for {key}"))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let entries = parse_kv(text)?;
        if let Some((k, _)) = entries.iter().find(|(k, _)| !is_known(k)) {
            return Err(Error::Config(format!("unknown config key '{k}'")));
        }
        Ok(Self { entries })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Ok(Self::parse(&text).with_context(|| format!("in config {}", p.display()))?)
            }
        }
    }

    /// Last value given for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Training entries for a stage, prefixed keys stripped.
    fn stage_entries(&self, stage: Stage) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().filter_map(move |(k, v)| match stage_prefix(k) {
            Some((s, rest)) if s == stage => Some((rest, v.as_str())),
            Some(_) => None,
            None => Some((k.as_str(), v.as_str())),
        })
    }

    pub fn train(&self, stage: Stage) -> Result<TrainConfig, Error> {
        let mut c = TrainConfig::for_stage(stage);
        for (k, v) in self.stage_entries(stage) {
            if TrainConfig::KEYS.contains(&k) && k != "stage" {
                c.set(k, v)?;
            }
        }
        c.stage = stage;
        Ok(c)
    }

    /// CNN layout overrides: `(conv widths, fc width)`.
    pub fn cnn_layout(&self) -> Result<(Option<Vec<usize>>, Option<usize>), Error> {
        let mut widths = None;
        let mut fc = None;
        for (k, v) in self.stage_entries(Stage::Cnn) {
            match k {
                "conv_widths" => {
                    let w: std::result::Result<Vec<usize>, _> = v.split(',').map(|x| x.trim().parse()).collect();
                    widths = Some(w.map_err(|_| bad(k, v))?);
                }
                "fc_width" => fc = Some(v.parse().map_err(|_| bad(k, v))?),
                _ => {}
            }
        }
        Ok((widths, fc))
    }

    pub fn synth(&self) -> Result<SynthConfig, Error> {
        let mut c = SynthConfig::default();
        for (k, v) in &self.entries {
            if SynthConfig::KEYS.contains(&k.as_str()) {
                c.set(k, v)?;
            }
        }
        Ok(c)
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig, Error> {
        let mut c = desk_preprocess();
        for (k, v) in &self.entries {
            let v = v.as_str();
            match k.as_str() {
                "delta" => c.delta = v.parse().map_err(|_| bad(k, v))?,
                "causal" => {
                    let on = matches!(v, "1" | "true" | "yes" | "on");
                    if !on && !matches!(v, "0" | "false" | "no" | "off") {
                        return Err(bad(k, v));
                    }
                    c.causal_mean = on;
                    c.causal_space_time = on;
                }
                "roi_h" => c.tracker.box_height = v.parse().map_err(|_| bad(k, v))?,
                "roi_w" => c.tracker.box_width = v.parse().map_err(|_| bad(k, v))?,
                "smoothing" => c.tracker.smoothing = v.parse().map_err(|_| bad(k, v))?,
                "min_threshold" => c.tracker.min_threshold = v.parse().map_err(|_| bad(k, v))?,
                "input_size" => c.out_size = v.parse().map_err(|_| bad(k, v))?,
                "roi_mode" => {
                    c.roi_mode = match v {
                        "tracker" => RoiMode::Tracker,
                        "tool" => RoiMode::Tool,
                        "fixed" => RoiMode::Fixed,
                        _ => return Err(bad(k, v)),
                    }
                }
                _ => {}
            }
        }
        Ok(c)
    }

    pub fn armax(&self) -> Result<ArmaxOrders, Error> {
        let mut o = ArmaxOrders::default();
        for (k, v) in &self.entries {
            let slot = match k.as_str() {
                "na" => &mut o.na,
                "nb" => &mut o.nb,
                "nc" => &mut o.nc,
                "nk" => &mut o.nk,
                _ => continue,
            };
            *slot = v.parse().map_err(|_| bad(k, v))?;
        }
        Ok(o)
    }

    pub fn sigmas(&self) -> Result<Option<Vec<f64>>, Error> {
        self.get("sigmas")
            .map(|v| v.split(',').map(|x| x.trim().parse().map_err(|_| bad("sigmas", v))).collect())
            .transpose()
    }

    pub fn sequences(&self) -> Option<Vec<String>> {
        self.get("sequences").map(|v| v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_prefixes() {
        let c = ConfigFile::parse("lr=0.5\ncnn.lr=0.01\nlstm.iters=7\ncase=I\nna=3\nk1=400").unwrap();
        assert_eq!(c.train(Stage::Cnn).unwrap().lr, 0.01);
        let l = c.train(Stage::Lstm).unwrap();
        assert_eq!((l.lr, l.iters), (0.5, 7));
        assert_eq!(c.armax().unwrap().na, 3);
        assert_eq!(c.synth().unwrap().scene.k1, 400.0);
    }

    #[test]
    fn unknown_and_malformed_keys() {
        assert!(ConfigFile::parse("bogus=1").is_err());
        assert!(ConfigFile::parse("cnn.k1=1").is_err());
        assert!(ConfigFile::parse("lr").is_err());
        assert!(ConfigFile::parse("case=IV").unwrap().train(Stage::Lstm).is_err());
        assert!(ConfigFile::parse("roi_mode=x").unwrap().preprocess().is_err());
    }

    #[test]
    fn preprocess_keys() {
        let c = ConfigFile::parse("delta=5\ncausal=on\nroi_mode=tool\ninput_size=16").unwrap();
        let p = c.preprocess().unwrap();
        assert_eq!(p.delta, 5);
        assert!(p.causal_mean && p.causal_space_time);
        assert_eq!(p.out_size, 16);
        let d = ConfigFile::default().preprocess().unwrap();
        assert_eq!((d.delta, d.tracker.box_height, d.tracker.box_width), (15, 40, 60));
    }

    #[test]
    fn lists() {
        let c = ConfigFile::parse("sigmas=0.2, 0,0.1\nsequences=a,b\nconv_widths=4,8").unwrap();
        assert_eq!(c.sigmas().unwrap().unwrap(), vec![0.2, 0.0, 0.1]);
        assert_eq!(c.sequences().unwrap(), vec!["a", "b"]);
        assert_eq!(c.cnn_layout().unwrap().0.unwrap(), vec![4, 8]);
    }
}
