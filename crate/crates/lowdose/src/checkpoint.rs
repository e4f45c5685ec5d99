//! Model checkpoints and training history.
//!
//! A checkpoint is a text header terminated by a line `end`, followed by the
//! parameters as little-endian f32: all generator tensors in layout order
//! (`enc.k.weight`, `enc.k.bias`, ..., `dec.k.weight`, `dec.k.bias`, ...,
//! `mod.k.weight`), then the discriminator tensors when present.
//!
//! ```text
//! lowdose-checkpoint 1
//! enc_layers=2
//! mod_channels=8
//! dec_layers=3
//! hidden=32
//! channels=1
//! residual=true
//! seed=7
//! steps=2000
//! generator_params=2361
//! disc_widths=8,16
//! disc_params=1401
//! end
//! ```
//!
//! The two `disc_` lines are omitted when the model has no discriminator.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lowdose_core::model::{ArchConfig, DiscArch, ModelParams, StepRecord, TrainHistory};

use crate::error::{AppError, AppResult, Context};
use crate::format::write_bytes;

const MAGIC: &str = "lowdose-checkpoint";
const VERSION: u32 = 1;
const END: &[u8] = b"end\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub steps: usize,
}

fn bad(msg: impl Into<String>) -> AppError {
    AppError::Data(msg.into())
}

pub fn encode(c: &Checkpoint) -> Vec<u8> {
    let a = &c.params.arch;
    let mut head = format!(
        "{MAGIC} {VERSION}\nenc_layers={}\nmod_channels={}\ndec_layers={}\nhidden={}\nchannels={}\nresidual={}\nseed={}\nsteps={}\ngenerator_params={}\n",
        a.enc_layers, a.mod_channels, a.dec_layers, a.hidden, a.channels, a.residual, c.seed, c.steps,
        c.params.generator.len()
    );
    if let Some((d, w)) = &c.params.discriminator {
        head += &format!("disc_widths={},{}\ndisc_params={}\n", d.widths[0], d.widths[1], w.len());
    }
    let mut out = head.into_bytes();
    out.extend_from_slice(END);
    let disc = c.params.discriminator.iter().flat_map(|(_, w)| w.iter());
    for x in c.params.generator.iter().chain(disc) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn field<T: std::str::FromStr>(kv: &BTreeMap<&str, &str>, key: &str) -> AppResult<T> {
    let v = kv.get(key).ok_or_else(|| bad(format!("checkpoint header is missing {key}")))?;
    v.parse().map_err(|_| bad(format!("checkpoint header has a bad {key} value {v:?}")))
}

fn floats(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

pub fn decode(bytes: &[u8]) -> AppResult<Checkpoint> {
    let end = bytes
        .windows(END.len() + 1)
        .position(|w| w[0] == b'\n' && &w[1..] == END)
        .ok_or_else(|| bad("checkpoint header is not terminated"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("checkpoint header is not UTF-8"))?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    match first.split_once(' ') {
        Some((MAGIC, v)) if v == VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(bad(format!("unsupported checkpoint version {v}"))),
        _ => return Err(bad("not a checkpoint file")),
    }
    let mut kv = BTreeMap::new();
    for line in lines {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad checkpoint header line {line:?}")))?;
        kv.insert(k, v);
    }
    let arch = ArchConfig {
        enc_layers: field(&kv, "enc_layers")?,
        mod_channels: field(&kv, "mod_channels")?,
        dec_layers: field(&kv, "dec_layers")?,
        hidden: field(&kv, "hidden")?,
        channels: field(&kv, "channels")?,
        residual: field(&kv, "residual")?,
    };
    arch.validate()?;
    let n_gen: usize = field(&kv, "generator_params")?;
    if n_gen != arch.param_count() {
        return Err(bad(format!(
            "checkpoint declares {n_gen} generator parameters, architecture implies {}",
            arch.param_count()
        )));
    }
    let disc = match kv.get("disc_widths") {
        None => None,
        Some(w) => {
            let ws: Vec<usize> = w.split(',').map(|s| s.parse()).collect::<Result<_, _>>()
                .map_err(|_| bad(format!("bad disc_widths {w:?}")))?;
            let widths: [usize; 2] = ws.try_into().map_err(|_| bad("disc_widths needs two values"))?;
            let n: usize = field(&kv, "disc_params")?;
            Some((DiscArch { widths }, n))
        }
    };
    let n_disc = disc.as_ref().map_or(0, |(_, n)| *n);
    let payload = &bytes[end + 1 + END.len()..];
    if payload.len() != 4 * (n_gen + n_disc) {
        return Err(bad(format!(
            "checkpoint payload has {} bytes, header implies {}",
            payload.len(),
            4 * (n_gen + n_disc)
        )));
    }
    let generator = floats(&payload[..4 * n_gen]);
    let discriminator = disc.map(|(d, _)| (d, floats(&payload[4 * n_gen..])));
    Ok(Checkpoint {
        params: ModelParams::new(arch, generator, discriminator)?,
        seed: field(&kv, "seed")?,
        steps: field(&kv, "steps")?,
    })
}

pub fn save(path: &Path, c: &Checkpoint) -> AppResult<()> {
    write_bytes(path, &encode(c))
}

pub fn load(path: &Path) -> AppResult<Checkpoint> {
    decode(&fs::read(path).context(path.display())?).context(path.display())
}

pub const HISTORY_HEADER: [&str; 5] = ["step", "l1_loss", "adv_loss", "reg_loss", "total"];

pub fn write_history(path: &Path, h: &TrainHistory) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HISTORY_HEADER)?;
    for r in &h.records {
        w.write_record([r.step.to_string(), r.l1.to_string(), r.adv.to_string(), r.reg.to_string(), r.total.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| bad(e.to_string()))?;
    write_bytes(path, &bytes)
}

pub fn read_history(path: &Path) -> AppResult<TrainHistory> {
    let mut r = csv::Reader::from_path(path).context(path.display())?;
    if r.headers()?.iter().ne(HISTORY_HEADER) {
        return Err(bad(format!("{}: unexpected history columns", path.display())));
    }
    let mut records = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| -> AppResult<f64> {
            row[i].parse().map_err(|_| bad(format!("{}: bad number {:?}", path.display(), &row[i])))
        };
        records.push(StepRecord {
            step: row[0].parse().map_err(|_| bad(format!("{}: bad step {:?}", path.display(), &row[0])))?,
            l1: num(1)?,
            adv: num(2)?,
            reg: num(3)?,
            total: num(4)?,
        });
    }
    Ok(TrainHistory { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lowdose_core::grid::{CoordGrid, Stack};
    use lowdose_core::model::{forward, init_model};

    fn sample(with_disc: bool) -> Checkpoint {
        let arch = ArchConfig { enc_layers: 1, mod_channels: 2, dec_layers: 2, hidden: 4, channels: 1, residual: false };
        let mut params = init_model(&arch, 3).unwrap();
        if with_disc {
            let d = DiscArch::default();
            let w = (0..d.param_count()).map(|i| i as f32 * 0.001 - 0.3).collect();
            params = ModelParams::new(arch, params.generator, Some((d, w))).unwrap();
        }
        Checkpoint { params, seed: 3, steps: 12 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for disc in [false, true] {
            let c = sample(disc);
            let back = decode(&encode(&c)).unwrap();
            assert_eq!(back, c);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back.params.generator), bits(&c.params.generator));
        }
    }

    #[test]
    fn loaded_model_predicts_the_same() {
        let c = sample(false);
        let back = decode(&encode(&c)).unwrap();
        let patch = Stack::from_planes(&[lowdose_core::grid::Plane::from_fn(6, 4, |r, c| (r as f64 - c as f64) * 0.2)]).unwrap();
        let coords = CoordGrid::regular(6, 4);
        assert_eq!(forward(&back.params, &patch, &coords).unwrap(), forward(&c.params, &patch, &coords).unwrap());
    }

    #[test]
    fn truncated_or_mismatched_files_fail() {
        let bytes = encode(&sample(true));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let text = String::from_utf8_lossy(&bytes).replace("hidden=4", "hidden=5");
        assert!(decode(text.as_bytes()).is_err());
        let mut v2 = bytes.clone();
        v2[MAGIC.len() + 1] = b'9';
        assert!(decode(&v2).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("history.csv");
        let h = TrainHistory {
            records: vec![
                StepRecord { step: 1, l1: 0.5, adv: 0.0, reg: 1e-7, total: 0.5000001 },
                StepRecord { step: 2, l1: 0.25, adv: 0.125, reg: 2e-7, total: 0.3750002 },
            ],
        };
        write_history(&p, &h).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("step,l1_loss,adv_loss,reg_loss,total\n"));
        assert_eq!(read_history(&p).unwrap(), h);
    }
}
