//! Dataset persistence: a human-inspectable text manifest (labels, grid
//! shape, gaze records, blob offsets) next to a companion binary blob of
//! little-endian f64 descriptors.
//!
//! The manifest lives at the given path; the blob at the same path with
//! `.blob` appended.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::model::ClipSample;
use crate::prior::{GazeKind, GazeRecord};

pub const MANIFEST_MAGIC: &str = "stochastic-gaze-dataset";
pub const FORMAT_VERSION: u32 = 1;

/// An on-disk dataset: global grid shape and widths, a train/test split
/// point, and the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub shape: GridShape,
    pub d: usize,
    pub k: usize,
    pub n_train: usize,
    pub samples: Vec<ClipSample>,
}

impl DatasetFile {
    pub fn train_samples(&self) -> &[ClipSample] {
        &self.samples[..self.n_train]
    }

    pub fn test_samples(&self) -> &[ClipSample] {
        &self.samples[self.n_train..]
    }
}

pub fn blob_path(manifest_path: &Path) -> PathBuf {
    let mut os = manifest_path.as_os_str().to_owned();
    os.push(".blob");
    PathBuf::from(os)
}

fn kind_name(kind: GazeKind) -> &'static str {
    match kind {
        GazeKind::Fixation => "fixation",
        GazeKind::Saccade => "saccade",
        GazeKind::Unknown => "unknown",
        GazeKind::Untracked => "untracked",
    }
}

fn kind_from(name: &str, path: &Path) -> Result<GazeKind> {
    match name {
        "fixation" => Ok(GazeKind::Fixation),
        "saccade" => Ok(GazeKind::Saccade),
        "unknown" => Ok(GazeKind::Unknown),
        "untracked" => Ok(GazeKind::Untracked),
        other => Err(format_err(path, format!("unknown gaze kind '{other}'"))),
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn write_dataset(manifest_path: &Path, ds: &DatasetFile) -> Result<()> {
    if ds.n_train > ds.samples.len() {
        return Err(Error::Validation("n_train exceeds sample count".into()));
    }
    let cells = ds.shape.cells();
    for (i, s) in ds.samples.iter().enumerate() {
        if s.shape != ds.shape || s.features.len() != cells * ds.d {
            return Err(Error::Validation(format!("sample {i} shape mismatch")));
        }
        if s.label >= ds.k {
            return Err(Error::Validation(format!("sample {i} label out of range")));
        }
    }

    let mut manifest = BufWriter::new(fs::File::create(manifest_path)?);
    let mut blob = BufWriter::new(fs::File::create(blob_path(manifest_path))?);

    writeln!(manifest, "{MANIFEST_MAGIC} version {FORMAT_VERSION}")?;
    writeln!(
        manifest,
        "grid {} {} {}",
        ds.shape.t, ds.shape.m, ds.shape.n
    )?;
    writeln!(manifest, "channels {}", ds.d)?;
    writeln!(manifest, "classes {}", ds.k)?;
    writeln!(manifest, "split {}", ds.n_train)?;
    writeln!(manifest, "count {}", ds.samples.len())?;

    let record_bytes = cells * ds.d * 8;
    for (i, s) in ds.samples.iter().enumerate() {
        writeln!(
            manifest,
            "sample {i} label {} offset {} gaze {}",
            s.label,
            i * record_bytes,
            s.gaze.len()
        )?;
        for g in &s.gaze {
            match g.position {
                Some((u, v)) => {
                    writeln!(manifest, "g {} {} {} {}", g.frame_index, kind_name(g.kind), u, v)?
                }
                None => writeln!(manifest, "g {} {}", g.frame_index, kind_name(g.kind))?,
            }
        }
        for &f in &s.features {
            blob.write_all(&f.to_le_bytes())?;
        }
    }
    manifest.flush()?;
    blob.flush()?;
    Ok(())
}

pub fn read_dataset(manifest_path: &Path) -> Result<DatasetFile> {
    let text = fs::read_to_string(manifest_path)?;
    let blob = fs::read(blob_path(manifest_path))?;
    let mut lines = text.lines();

    let header = lines
        .next()
        .ok_or_else(|| format_err(manifest_path, "empty manifest"))?;
    let mut hp = header.split_whitespace();
    if hp.next() != Some(MANIFEST_MAGIC) || hp.next() != Some("version") {
        return Err(format_err(manifest_path, "not a dataset manifest"));
    }
    let version: u32 = hp
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(manifest_path, "bad version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let mut parse_kv = |expected: &str| -> Result<Vec<String>> {
        let line = lines
            .next()
            .ok_or_else(|| format_err(manifest_path, format!("missing '{expected}' line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(expected) {
            return Err(format_err(manifest_path, format!("expected '{expected}' line")));
        }
        Ok(parts.map(str::to_string).collect())
    };
    let grid = parse_kv("grid")?;
    if grid.len() != 3 {
        return Err(format_err(manifest_path, "grid needs 3 dimensions"));
    }
    let parse_usize = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| format_err(manifest_path, format!("bad integer '{s}'")))
    };
    let shape = GridShape::new(
        parse_usize(&grid[0])?,
        parse_usize(&grid[1])?,
        parse_usize(&grid[2])?,
    )?;
    let d = parse_usize(&parse_kv("channels")?[0])?;
    let k = parse_usize(&parse_kv("classes")?[0])?;
    let n_train = parse_usize(&parse_kv("split")?[0])?;
    let count = parse_usize(&parse_kv("count")?[0])?;

    let cells = shape.cells();
    let record_bytes = cells * d * 8;
    if blob.len() != count * record_bytes {
        return Err(format_err(
            manifest_path,
            format!("blob is {} bytes, expected {}", blob.len(), count * record_bytes),
        ));
    }

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| format_err(manifest_path, format!("missing sample {i}")))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 8 || parts[0] != "sample" {
            return Err(format_err(manifest_path, format!("bad sample line: '{line}'")));
        }
        let idx = parse_usize(parts[1])?;
        if idx != i || parts[2] != "label" || parts[4] != "offset" || parts[6] != "gaze" {
            return Err(format_err(manifest_path, format!("bad sample line: '{line}'")));
        }
        let label = parse_usize(parts[3])?;
        let offset = parse_usize(parts[5])?;
        if label >= k {
            return Err(format_err(manifest_path, format!("sample {i}: label {label} >= {k}")));
        }
        if offset + record_bytes > blob.len() {
            return Err(format_err(manifest_path, format!("sample {i}: offset out of range")));
        }
        let gaze_count = parse_usize(parts[7])?;
        let mut gaze = Vec::with_capacity(gaze_count);
        for _ in 0..gaze_count {
            let gline = lines
                .next()
                .ok_or_else(|| format_err(manifest_path, "missing gaze record"))?;
            let gp: Vec<&str> = gline.split_whitespace().collect();
            if gp.len() < 3 || gp[0] != "g" {
                return Err(format_err(manifest_path, format!("bad gaze line: '{gline}'")));
            }
            let frame_index = parse_usize(gp[1])?;
            let kind = kind_from(gp[2], manifest_path)?;
            let position = match gp.len() {
                3 => None,
                5 => {
                    let u: f64 = gp[3]
                        .parse()
                        .map_err(|_| format_err(manifest_path, "bad coordinate"))?;
                    let v: f64 = gp[4]
                        .parse()
                        .map_err(|_| format_err(manifest_path, "bad coordinate"))?;
                    Some((u, v))
                }
                _ => return Err(format_err(manifest_path, format!("bad gaze line: '{gline}'"))),
            };
            gaze.push(GazeRecord {
                frame_index,
                kind,
                position,
            });
        }
        let features: Vec<f64> = blob[offset..offset + record_bytes]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(ClipSample {
            shape,
            features,
            gaze,
            label,
        });
    }
    if n_train > samples.len() {
        return Err(format_err(manifest_path, "split exceeds sample count"));
    }
    Ok(DatasetFile {
        shape,
        d,
        k,
        n_train,
        samples,
    })
}
