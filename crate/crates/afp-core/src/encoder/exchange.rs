//! Embedding-exchange file: lets external encoders feed the index without
//! shipping their weights. Little-endian binary rows plus a JSON sidecar
//! carrying the (song_id, segment_index) for every row.

use std::path::{Path, PathBuf};

use super::Embedding;
use crate::dsp::SegmentRef;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"AFPE";
const VERSION: u16 = 1;

/// `<file>.json` next to the embedding file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Write rows as f32 plus the aligned sidecar.
pub fn export_embeddings(
    path: impl AsRef<Path>,
    rows: &[(SegmentRef, Embedding)],
) -> Result<()> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to export".into()));
    }
    let dim = rows[0].1.dim();
    if rows.iter().any(|(_, e)| e.dim() != dim) {
        return Err(Error::InvalidArgument("mixed embedding dimensions".into()));
    }
    let mut bytes = Vec::with_capacity(18 + rows.len() * dim * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for (_, e) in rows {
        for v in e.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;

    let refs: Vec<SegmentRef> = rows.iter().map(|(r, _)| *r).collect();
    let sidecar = sidecar_path(path);
    std::fs::write(&sidecar, serde_json::to_vec_pretty(&refs)?)
        .map_err(|e| Error::io(sidecar.display().to_string(), e))
}

/// Read an embedding file and its sidecar; rows must be unit-norm within
/// 1e-3 (see [`Embedding::new`] for the keep/renormalize/reject rule).
pub fn import_embeddings(path: impl AsRef<Path>) -> Result<Vec<(SegmentRef, Embedding)>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
    let bad = |reason: String| Error::BadFileFormat {
        path: display.clone(),
        reason,
    };
    if bytes.len() < 18 || &bytes[0..4] != MAGIC {
        return Err(bad("missing AFPE magic".into()));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(bad("zero dimension".into()));
    }
    if bytes.len() != 18 + count * dim * 4 {
        return Err(bad(format!(
            "size mismatch: {} bytes for {count} rows of dim {dim}",
            bytes.len()
        )));
    }

    let sidecar = sidecar_path(path);
    let refs: Vec<SegmentRef> = serde_json::from_str(
        &std::fs::read_to_string(&sidecar)
            .map_err(|e| Error::io(sidecar.display().to_string(), e))?,
    )?;
    if refs.len() != count {
        return Err(bad(format!(
            "sidecar holds {} refs for {count} rows",
            refs.len()
        )));
    }

    let mut out = Vec::with_capacity(count);
    for (row, r) in refs.into_iter().enumerate() {
        let base = 18 + row * dim * 4;
        let values: Vec<f32> = (0..dim)
            .map(|d| {
                let o = base + d * 4;
                f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap())
            })
            .collect();
        let embedding = Embedding::new(values).map_err(|e| match e {
            Error::BadEmbedding(msg) => Error::BadEmbedding(format!("row {row}: {msg}")),
            other => other,
        })?;
        out.push((r, embedding));
    }
    Ok(out)
}
