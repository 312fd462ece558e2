//! Binary network checkpoints.
//!
//! Layout: the magic bytes `BDNET\0`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header, then every parameter as
//! a little-endian `f64` in [`TinyDenoiserNet::parameters`] order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::diffusion::net::{Dense, ModelMode, NetConfig, NormStats, TinyDenoiserNet};
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::DenoiserU;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"BDNET\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    mode: ModelMode,
    joints: usize,
    config: NetConfig,
    alpha_bar: Vec<f64>,
    stats: NormStats,
    layer_shapes: Vec<(usize, usize)>,
    training_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training_config: Option<serde_json::Value>,
}

/// Serializes a network. `training_config` is echoed into the header as-is.
pub fn write_checkpoint<W: Write>(
    net: &TinyDenoiserNet,
    training_config: Option<serde_json::Value>,
    mut out: W,
) -> Result<()> {
    let header = Header {
        mode: net.mode(),
        joints: net.joints(),
        config: net.config().clone(),
        alpha_bar: DenoiserU::schedule(net).alpha_bars().to_vec(),
        stats: net.stats().clone(),
        layer_shapes: net.layers.iter().map(|l| l.w.dim()).collect(),
        training_loss: net.training_loss(),
        training_config,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(net.parameter_count() * 8);
    for p in net.parameters() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<TinyDenoiserNet> {
    let mut magic = [0u8; 6];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a network checkpoint".into()));
    }
    let mut word = [0u8; 4];
    input
        .read_exact(&mut word)
        .map_err(|_| Error::Checkpoint("truncated version".into()))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::FormatVersion(version.into()));
    }
    let mut len = [0u8; 8];
    input
        .read_exact(&mut len)
        .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
    let len = u64::from_le_bytes(len);
    if len > 64 << 20 {
        return Err(Error::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    input
        .read_exact(&mut json)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    let expected = header
        .config
        .layer_shapes(header.mode, header.joints * crate::motion::DIMS);
    if expected != header.layer_shapes {
        return Err(Error::Checkpoint(format!(
            "shape table {:?} does not match configuration {:?}",
            header.layer_shapes, expected
        )));
    }
    let schedule = NoiseSchedule::from_alpha_bar(header.alpha_bar)?;
    let mut layers = Vec::with_capacity(expected.len());
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> Result<f64> {
        input
            .read_exact(&mut word)
            .map_err(|_| Error::Checkpoint("truncated parameters".into()))?;
        Ok(f64::from_le_bytes(word))
    };
    for &(rows, cols) in &expected {
        let mut w = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            w.push(next(&mut input)?);
        }
        let mut b = Vec::with_capacity(cols);
        for _ in 0..cols {
            b.push(next(&mut input)?);
        }
        layers.push(Dense {
            w: Array2::from_shape_vec((rows, cols), w).expect("sized above"),
            b: Array1::from_vec(b),
        });
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    if layers
        .iter()
        .any(|l| l.w.iter().chain(l.b.iter()).any(|x| !x.is_finite()))
    {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    TinyDenoiserNet::from_parts(
        header.mode,
        header.config,
        schedule,
        header.joints,
        header.stats,
        layers,
        header.training_loss,
    )
}

pub fn save_checkpoint(
    net: &TinyDenoiserNet,
    training_config: Option<serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(net, training_config, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TinyDenoiserNet> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> TinyDenoiserNet {
        let stats = NormStats {
            mean: vec![0.0; 6],
            std: vec![1.0; 6],
        };
        let config = NetConfig {
            hidden: 5,
            depth: 2,
            window: 1,
            time_features: 4,
        };
        TinyDenoiserNet::new(ModelMode::R, config, NoiseSchedule::cosine(20).unwrap(), 2, stats, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let n = net();
        let mut buf = Vec::new();
        write_checkpoint(&n, Some(serde_json::json!({"steps": 5})), &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let n = net();
        let mut buf = Vec::new();
        write_checkpoint(&n, None, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut ver = buf.clone();
        ver[6] = 2;
        assert!(matches!(read_checkpoint(ver.as_slice()), Err(Error::FormatVersion(2))));
    }
}
