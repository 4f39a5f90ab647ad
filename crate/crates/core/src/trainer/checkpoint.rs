use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Nets, TrainConfig};
use crate::error::{Error, Result};
use crate::netzoo::{read_archive, write_archive, ArchiveTensor, NetConfig, Network, TensorArchive};
use crate::tensor::Tensor;

/// Trained networks plus the configuration and selection statistics.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs when these weights were selected.
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub val_dice: Option<f64>,
    pub nets: Nets,
}

#[derive(Serialize, Deserialize)]
struct NetMeta {
    config: NetConfig,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: TrainConfig,
    epoch: usize,
    val_loss: Option<f64>,
    val_dice: Option<f64>,
    nets: BTreeMap<String, NetMeta>,
}

const SLOTS: [&str; 4] = ["g_ab", "g_ba", "d_forward", "d_backward"];

impl Checkpoint {
    fn slots(&self) -> [Option<&Network>; 4] {
        [
            Some(&self.nets.g_ab),
            self.nets.g_ba.as_ref(),
            self.nets.d_forward.as_ref(),
            self.nets.d_backward.as_ref(),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut nets = BTreeMap::new();
        let mut tensors = Vec::new();
        for (slot, net) in SLOTS.iter().zip(self.slots()) {
            let Some(net) = net else { continue };
            nets.insert(
                slot.to_string(),
                NetMeta {
                    config: net.config().clone(),
                    seed: net.seed(),
                },
            );
            for (name, t) in net.named_params() {
                tensors.push(ArchiveTensor {
                    name: format!("{slot}.{name}"),
                    shape: t.shape(),
                    data: t.data().to_vec(),
                });
            }
        }
        let meta = Meta {
            config: self.config.clone(),
            epoch: self.epoch,
            val_loss: self.val_loss,
            val_dice: self.val_dice,
            nets,
        };
        write_archive(
            path,
            &TensorArchive {
                meta: serde_json::to_value(meta)?,
                tensors,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = read_archive(path)?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let meta: Meta = serde_json::from_value(archive.meta).map_err(|e| bad(e.to_string()))?;
        meta.config.validate()?;
        let mut grouped: BTreeMap<String, BTreeMap<String, Tensor<f32>>> = BTreeMap::new();
        for t in archive.tensors {
            let (slot, name) = t
                .name
                .split_once('.')
                .ok_or_else(|| bad(format!("tensor `{}` has no network prefix", t.name)))?;
            grouped
                .entry(slot.to_string())
                .or_default()
                .insert(name.to_string(), Tensor::from_vec(t.shape, t.data)?);
        }
        let mut take = |slot: &str| -> Result<Option<Network>> {
            let Some(m) = meta.nets.get(slot) else {
                return Ok(None);
            };
            let params = grouped.remove(slot).unwrap_or_default();
            Network::from_named(m.config.clone(), m.seed, params)
                .map(Some)
                .map_err(|e| e.context(format!("network `{slot}`")))
        };
        let g_ab = take("g_ab")?.ok_or_else(|| bad("missing network `g_ab`".into()))?;
        let nets = Nets {
            g_ab,
            g_ba: take("g_ba")?,
            d_forward: take("d_forward")?,
            d_backward: take("d_backward")?,
        };
        if let Some(extra) = grouped.keys().next() {
            return Err(bad(format!("unexpected network `{extra}`")));
        }
        let regime = meta.config.regime;
        let want = [
            true,
            regime.uses_backward(),
            regime.uses_forward_disc(),
            regime.uses_backward(),
        ];
        let have = [
            true,
            nets.g_ba.is_some(),
            nets.d_forward.is_some(),
            nets.d_backward.is_some(),
        ];
        if want != have {
            return Err(bad(format!(
                "network set {have:?} does not match regime {}",
                regime.as_str()
            )));
        }
        Ok(Self {
            config: meta.config,
            epoch: meta.epoch,
            val_loss: meta.val_loss,
            val_dice: meta.val_dice,
            nets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netzoo::GeneratorConfig;
    use crate::trainer::build_nets;

    #[test]
    fn save_load_preserves_weights() {
        let cfg = TrainConfig {
            generator: GeneratorConfig::unet(4, 2),
            disc_base_width: 4,
            epochs: 0,
            decay_start_epoch: 0,
            ..TrainConfig::default()
        };
        let ckpt = Checkpoint {
            config: cfg.clone(),
            epoch: 0,
            val_loss: Some(0.25),
            val_dice: None,
            nets: build_nets(&cfg).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        ckpt.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.val_loss, Some(0.25));
        assert_eq!(back.nets.g_ab.flat_params(), ckpt.nets.g_ab.flat_params());
        assert_eq!(
            back.nets.d_backward.as_ref().unwrap().flat_params(),
            ckpt.nets.d_backward.as_ref().unwrap().flat_params()
        );
        let bytes = std::fs::read(&p).unwrap();
        ckpt.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }
}
