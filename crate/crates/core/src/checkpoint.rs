//! Checkpoints: a self-describing text header (format version, epoch,
//! dimensions, tensor layout, embedded config snapshot and final metrics)
//! followed by the parameter tensors as little-endian f64, in the canonical
//! tensor order. Save -> load -> save is byte-identical.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Affine, ModelDims, ModelParams, TENSOR_NAMES};

pub const CHECKPOINT_MAGIC: &str = "stochastic-gaze-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ModelParams,
    /// Raw TOML snapshot of the experiment config, stored verbatim.
    pub config_snapshot: String,
    /// JSON line of the final epoch's metrics, empty when untrained.
    pub final_metrics: String,
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let dims = ckpt.params.dims;
    writeln!(w, "{CHECKPOINT_MAGIC} version {FORMAT_VERSION}")?;
    writeln!(w, "epoch {}", ckpt.epoch)?;
    writeln!(w, "dims {} {} {} {}", dims.d, dims.h, dims.c, dims.k)?;
    for (name, tensor) in TENSOR_NAMES.iter().zip(ckpt.params.tensors()) {
        writeln!(w, "tensor {name} {}", tensor.len())?;
    }
    writeln!(w, "config_bytes {}", ckpt.config_snapshot.len())?;
    writeln!(w, "metrics_bytes {}", ckpt.final_metrics.len())?;
    writeln!(w, "end_header")?;
    w.write_all(ckpt.config_snapshot.as_bytes())?;
    w.write_all(ckpt.final_metrics.as_bytes())?;
    for tensor in ckpt.params.tensors() {
        for &v in tensor {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let header_end = find_header_end(&bytes)
        .ok_or_else(|| format_err(path, "missing end_header marker"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| format_err(path, "header is not utf-8"))?;
    let mut lines = header.lines();

    let magic_line = lines.next().ok_or_else(|| format_err(path, "empty file"))?;
    let mut mp = magic_line.split_whitespace();
    if mp.next() != Some(CHECKPOINT_MAGIC) || mp.next() != Some("version") {
        return Err(format_err(path, "not a checkpoint file"));
    }
    let version: u32 = mp
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(path, "bad version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    fn field(
        lines: &mut std::str::Lines,
        name: &str,
        path: &Path,
    ) -> Result<Vec<usize>> {
        let line = lines
            .next()
            .ok_or_else(|| format_err(path, format!("missing '{name}'")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(name) {
            return Err(format_err(path, format!("expected '{name}' line, got '{line}'")));
        }
        parts
            .map(|p| {
                p.parse()
                    .map_err(|_| format_err(path, format!("bad integer in '{name}'")))
            })
            .collect()
    }

    let epoch = field(&mut lines, "epoch", path)?[0];
    let dims_v = field(&mut lines, "dims", path)?;
    if dims_v.len() != 4 {
        return Err(format_err(path, "dims needs 4 values"));
    }
    let dims = ModelDims {
        d: dims_v[0],
        h: dims_v[1],
        c: dims_v[2],
        k: dims_v[3],
    };
    dims.validate()?;

    let mut tensor_lens = Vec::with_capacity(8);
    for name in TENSOR_NAMES {
        let line = lines
            .next()
            .ok_or_else(|| format_err(path, "missing tensor line"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "tensor" || parts[1] != name {
            return Err(format_err(path, format!("expected tensor '{name}', got '{line}'")));
        }
        tensor_lens.push(
            parts[2]
                .parse::<usize>()
                .map_err(|_| format_err(path, "bad tensor length"))?,
        );
    }
    let expected_lens = [
        dims.h * dims.d,
        dims.h,
        dims.h,
        1,
        dims.c * dims.h,
        dims.c,
        dims.k * dims.c,
        dims.k,
    ];
    if tensor_lens != expected_lens {
        return Err(format_err(path, "tensor lengths inconsistent with dims"));
    }

    let config_bytes = field(&mut lines, "config_bytes", path)?[0];
    let metrics_bytes = field(&mut lines, "metrics_bytes", path)?[0];

    let body = &bytes[header_end..];
    let tensor_total: usize = tensor_lens.iter().sum::<usize>() * 8;
    if body.len() != config_bytes + metrics_bytes + tensor_total {
        return Err(format_err(
            path,
            format!(
                "body is {} bytes, expected {}",
                body.len(),
                config_bytes + metrics_bytes + tensor_total
            ),
        ));
    }
    let config_snapshot = String::from_utf8(body[..config_bytes].to_vec())
        .map_err(|_| format_err(path, "config snapshot is not utf-8"))?;
    let final_metrics =
        String::from_utf8(body[config_bytes..config_bytes + metrics_bytes].to_vec())
            .map_err(|_| format_err(path, "metrics are not utf-8"))?;

    let mut cursor = config_bytes + metrics_bytes;
    let mut read_tensor = |len: usize| -> Vec<f64> {
        let out: Vec<f64> = body[cursor..cursor + len * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        cursor += len * 8;
        out
    };
    let mut params = ModelParams {
        dims,
        encoder: Affine::zeros(dims.h, dims.d),
        gaze_head: Affine::zeros(1, dims.h),
        feature_head: Affine::zeros(dims.c, dims.h),
        classifier: Affine::zeros(dims.k, dims.c),
    };
    for (i, tensor) in params.tensors_mut().into_iter().enumerate() {
        *tensor = read_tensor(tensor_lens[i]);
    }
    if params
        .tensors()
        .iter()
        .any(|t| t.iter().any(|v| !v.is_finite()))
    {
        return Err(format_err(path, "non-finite parameter value"));
    }

    Ok(Checkpoint {
        epoch,
        params,
        config_snapshot,
        final_metrics,
    })
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header\n";
    bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_checkpoint() -> Checkpoint {
        let dims = ModelDims { d: 3, h: 4, c: 2, k: 3 };
        Checkpoint {
            epoch: 12,
            params: ModelParams::init(dims, 42).unwrap(),
            config_snapshot: "seed = 42\n".to_string(),
            final_metrics: "{\"epoch\":11}".to_string(),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ckpt = sample_checkpoint();
        save(&p1, &ckpt).unwrap();
        let loaded = load(&p1).unwrap();
        assert_eq!(ckpt, loaded);
        save(&p2, &loaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn version_mismatch_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save(&path, &sample_checkpoint()).unwrap();
        let bytes = fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes).replacen("version 1", "version 9", 1);
        fs::write(&path, text.as_bytes()).unwrap();
        match load(&path) {
            Err(Error::VersionMismatch { found: 9, .. }) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncated_body_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        save(&path, &sample_checkpoint()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load(&path).is_err());
    }
}
