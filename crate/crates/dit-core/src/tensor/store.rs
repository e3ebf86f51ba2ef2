use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::TensorError;

/// One named learnable tensor.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// A named, ordered collection of learnable tensors, serializable to a
/// checkpoint.
///
/// Checkpoint layout (single file): optional `# key = value` header lines,
/// one manifest line per tensor (`name rank extents...`), a `---` separator
/// line, then the little-endian f64 value blob concatenated in manifest
/// order.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn new() -> ModelParams {
        ModelParams::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn register(
        &mut self,
        name: &str,
        shape: &[usize],
        values: Vec<f64>,
    ) -> Result<usize, TensorError> {
        if name.split_whitespace().count() != 1 {
            return Err(TensorError::Checkpoint(format!(
                "parameter name `{name}` may not contain whitespace"
            )));
        }
        if self.index.contains_key(name) {
            return Err(TensorError::Checkpoint(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        if values.len() != shape.iter().product::<usize>() {
            return Err(TensorError::ShapeMismatch {
                op: "register",
                details: format!("`{name}`: {} values for shape {shape:?}", values.len()),
            });
        }
        let i = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
        });
        self.index.insert(name.to_string(), i);
        Ok(i)
    }

    /// Writes the checkpoint; `header` pairs become leading `# key = value`
    /// comment lines.
    pub fn save(&self, path: &Path, header: &[(String, String)]) -> Result<(), TensorError> {
        let io_err = |source| TensorError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut text = String::new();
        for (k, v) in header {
            text.push_str(&format!("# {k} = {v}\n"));
        }
        for e in &self.entries {
            text.push_str(&e.name);
            text.push(' ');
            text.push_str(&e.shape.len().to_string());
            for d in &e.shape {
                text.push(' ');
                text.push_str(&d.to_string());
            }
            text.push('\n');
        }
        text.push_str("---\n");
        let mut file = std::fs::File::create(path).map_err(io_err)?;
        file.write_all(text.as_bytes()).map_err(io_err)?;
        let mut blob = Vec::with_capacity(self.value_count() * 8);
        for e in &self.entries {
            for v in &e.values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        file.write_all(&blob).map_err(io_err)?;
        Ok(())
    }

    /// Loads a checkpoint, returning the parameters and any header pairs.
    pub fn load(path: &Path) -> Result<(ModelParams, Vec<(String, String)>), TensorError> {
        let bytes = std::fs::read(path).map_err(|source| TensorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let bad = |msg: String| TensorError::Checkpoint(format!("{}: {msg}", path.display()));

        let mut header = Vec::new();
        let mut manifest: Vec<(String, Vec<usize>)> = Vec::new();
        let mut cursor = 0usize;
        loop {
            let rest = &bytes[cursor..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("missing `---` separator".into()))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| bad("manifest is not utf-8".into()))?
                .trim_end_matches('\r');
            cursor += end + 1;
            if line == "---" {
                break;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().ok_or_else(|| bad("empty manifest line".into()))?;
            let rank: usize = parts
                .next()
                .ok_or_else(|| bad(format!("`{name}`: missing rank")))?
                .parse()
                .map_err(|e| bad(format!("`{name}`: bad rank: {e}")))?;
            let shape: Vec<usize> = parts
                .map(|p| p.parse::<usize>().map_err(|e| bad(format!("`{name}`: bad extent: {e}"))))
                .collect::<Result<_, _>>()?;
            if shape.len() != rank {
                return Err(bad(format!(
                    "`{name}`: rank {rank} but {} extents",
                    shape.len()
                )));
            }
            manifest.push((name.to_string(), shape));
        }

        let blob = &bytes[cursor..];
        let expected: usize = manifest
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        if blob.len() != expected * 8 {
            return Err(bad(format!(
                "blob holds {} bytes, manifest expects {}",
                blob.len(),
                expected * 8
            )));
        }
        let mut params = ModelParams::new();
        let mut offset = 0usize;
        for (name, shape) in manifest {
            let count: usize = shape.iter().product();
            let values: Vec<f64> = (0..count)
                .map(|i| {
                    let at = (offset + i) * 8;
                    f64::from_le_bytes(blob[at..at + 8].try_into().unwrap())
                })
                .collect();
            offset += count;
            params.register(&name, &shape, values)?;
        }
        Ok((params, header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_rejects_duplicates_and_bad_shapes() {
        let mut p = ModelParams::new();
        p.register("a.w", &[2, 2], vec![1.0; 4]).unwrap();
        assert!(p.register("a.w", &[2], vec![0.0; 2]).is_err());
        assert!(p.register("b", &[3], vec![0.0; 2]).is_err());
        assert!(p.register("bad name", &[1], vec![0.0]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut p = ModelParams::new();
        p.register("enc.w", &[2, 3], vec![1.5, -2.25, 1e-300, 0.0, f64::MIN_POSITIVE, 42.0])
            .unwrap();
        p.register("enc.b", &[3], vec![0.1, 0.2, 0.3]).unwrap();
        let header = vec![("d_model".to_string(), "64".to_string())];
        p.save(&path, &header).unwrap();

        let (loaded, hdr) = ModelParams::load(&path).unwrap();
        assert_eq!(hdr, header);
        assert_eq!(loaded.len(), 2);
        for (a, b) in p.entries().iter().zip(loaded.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut p = ModelParams::new();
        p.register("w", &[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        p.save(&path, &[]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            ModelParams::load(&path),
            Err(TensorError::Checkpoint(_))
        ));
    }
}
