//! Versioned model container.
//!
//! ```text
//! gestop-model v=1
//! feature-layout=1
//! arch=static
//! sizes=49,64,6
//! labels=["none","open_palm",...]
//! params=3526
//! crc32=1a2b3c4d
//! ---
//! <params × f64 little-endian>
//! ```
//!
//! The checksum covers the binary payload. See `docs/model-format.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Model, Network, NnError};
use crate::features::FEATURE_LAYOUT_VERSION;

pub const MODEL_SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "gestop-model";
const SEPARATOR: &[u8] = b"---\n";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelHeader {
    pub schema_version: u32,
    pub feature_layout: u32,
    pub arch: String,
    pub sizes: Vec<usize>,
    pub labels: Vec<String>,
    pub params: usize,
    pub crc32: u32,
}

impl ModelHeader {
    fn render(&self) -> String {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        format!(
            "{MAGIC} v={}\nfeature-layout={}\narch={}\nsizes={}\nlabels={}\nparams={}\ncrc32={:08x}\n",
            self.schema_version,
            self.feature_layout,
            self.arch,
            sizes.join(","),
            serde_json::to_string(&self.labels).expect("string list serializes"),
            self.params,
            self.crc32,
        )
    }

    fn parse(text: &str) -> Result<Self, NnError> {
        let corrupt = |m: &str| NnError::CorruptModelFile(m.to_string());
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| corrupt("empty header"))?;
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|r| r.trim().strip_prefix("v="))
            .ok_or_else(|| corrupt("missing magic line"))?;
        let schema_version: u32 = version.parse().map_err(|_| corrupt("bad schema version"))?;
        if schema_version != MODEL_SCHEMA_VERSION {
            return Err(NnError::IncompatibleModelVersion(format!(
                "schema version {schema_version}, supported {MODEL_SCHEMA_VERSION}"
            )));
        }
        let mut header = ModelHeader {
            schema_version,
            feature_layout: 0,
            arch: String::new(),
            sizes: Vec::new(),
            labels: Vec::new(),
            params: 0,
            crc32: 0,
        };
        let mut seen = 0u8;
        for line in lines {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| corrupt("bad header line"))?;
            match key {
                "feature-layout" => {
                    header.feature_layout =
                        value.parse().map_err(|_| corrupt("bad feature-layout"))?;
                    seen |= 1;
                }
                "arch" => {
                    header.arch = value.to_string();
                    seen |= 2;
                }
                "sizes" => {
                    header.sizes = value
                        .split(',')
                        .map(|s| s.parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| corrupt("bad sizes"))?;
                    seen |= 4;
                }
                "labels" => {
                    header.labels =
                        serde_json::from_str(value).map_err(|_| corrupt("bad labels"))?;
                    seen |= 8;
                }
                "params" => {
                    header.params = value.parse().map_err(|_| corrupt("bad params count"))?;
                    seen |= 16;
                }
                "crc32" => {
                    header.crc32 =
                        u32::from_str_radix(value, 16).map_err(|_| corrupt("bad crc32"))?;
                    seen |= 32;
                }
                other => return Err(corrupt(&format!("unknown header key '{other}'"))),
            }
        }
        if seen != 63 {
            return Err(corrupt("incomplete header"));
        }
        if header.feature_layout != FEATURE_LAYOUT_VERSION {
            return Err(NnError::IncompatibleModelVersion(format!(
                "feature layout {}, supported {FEATURE_LAYOUT_VERSION}",
                header.feature_layout
            )));
        }
        Ok(header)
    }
}

fn split_file(bytes: &[u8]) -> Result<(ModelHeader, &[u8]), NnError> {
    let pos = bytes
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| NnError::CorruptModelFile("missing header terminator".into()))?;
    let text = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| NnError::CorruptModelFile("header is not UTF-8".into()))?;
    let header = ModelHeader::parse(text)?;
    Ok((header, &bytes[pos + SEPARATOR.len()..]))
}

/// Reads only the header, e.g. to find out which architecture a file holds.
pub fn peek_header(path: impl AsRef<Path>) -> Result<ModelHeader, NnError> {
    let bytes = fs::read(path)?;
    Ok(split_file(&bytes)?.0)
}

pub fn save_model<N: Network>(model: &Model<N>, path: impl AsRef<Path>) -> Result<(), NnError> {
    let params = model.net.params();
    let mut payload = Vec::with_capacity(params.len() * 8);
    for p in params {
        payload.extend_from_slice(&p.to_le_bytes());
    }
    let header = ModelHeader {
        schema_version: MODEL_SCHEMA_VERSION,
        feature_layout: FEATURE_LAYOUT_VERSION,
        arch: N::ARCH.to_string(),
        sizes: model.net.sizes(),
        labels: model.labels.clone(),
        params: params.len(),
        crc32: crc32fast::hash(&payload),
    };
    let mut f = fs::File::create(path)?;
    f.write_all(header.render().as_bytes())?;
    f.write_all(SEPARATOR)?;
    f.write_all(&payload)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_model<N: Network>(path: impl AsRef<Path>) -> Result<Model<N>, NnError> {
    let bytes = fs::read(path)?;
    let (header, payload) = split_file(&bytes)?;
    if header.arch != N::ARCH {
        return Err(NnError::ArchitectureMismatch {
            expected: N::ARCH.to_string(),
            found: header.arch,
        });
    }
    if payload.len() != header.params * 8 {
        return Err(NnError::CorruptModelFile(format!(
            "expected {} payload bytes, found {}",
            header.params * 8,
            payload.len()
        )));
    }
    if crc32fast::hash(payload) != header.crc32 {
        return Err(NnError::CorruptModelFile("checksum mismatch".into()));
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(NnError::CorruptModelFile("non-finite weight".into()));
    }
    let net = N::from_parts(&header.sizes, params)
        .map_err(|e| NnError::CorruptModelFile(e.to_string()))?;
    Model::new(header.labels, net).map_err(|e| NnError::CorruptModelFile(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{DynamicFeatureSequence, DYNAMIC_WIDTH};
    use crate::nn::{DynamicNet, StaticNet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize) -> Vec<String> {
        (0..n)
            .map(|i| {
                if i == 0 {
                    "none".into()
                } else {
                    format!("g {i}")
                }
            })
            .collect()
    }

    #[test]
    fn static_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.model");
        let model = Model::new(labels(4), StaticNet::new(16, 4, 9)).unwrap();
        save_model(&model, &path).unwrap();
        let back: Model<StaticNet> = load_model(&path).unwrap();
        assert_eq!(back, model);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..49).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = model.net.logits(&x).unwrap();
            let b = back.net.logits(&x).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn dynamic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.model");
        let model = Model::new(labels(3), DynamicNet::new(4, 5, 3, 1)).unwrap();
        save_model(&model, &path).unwrap();
        let back: Model<DynamicNet> = load_model(&path).unwrap();
        assert_eq!(back, model);
        let seq = DynamicFeatureSequence::from_rows(&vec![vec![0.1; DYNAMIC_WIDTH]; 3]).unwrap();
        assert_eq!(
            model.net.logits(&seq).unwrap(),
            back.net.logits(&seq).unwrap()
        );
        assert_eq!(peek_header(&path).unwrap().arch, "dynamic");
        assert!(matches!(
            load_model::<StaticNet>(&path),
            Err(NnError::ArchitectureMismatch { .. })
        ));
    }

    #[test]
    fn same_model_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(labels(2), StaticNet::new(4, 2, 3)).unwrap();
        save_model(&model, dir.path().join("a")).unwrap();
        save_model(&model, dir.path().join("b")).unwrap();
        assert_eq!(
            fs::read(dir.path().join("a")).unwrap(),
            fs::read(dir.path().join("b")).unwrap()
        );
    }

    #[test]
    fn feature_layout_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m");
        save_model(
            &Model::new(labels(2), StaticNet::new(4, 2, 3)).unwrap(),
            &path,
        )
        .unwrap();
        let bytes = fs::read(&path).unwrap();
        let patched =
            String::from_utf8_lossy(&bytes).replacen("feature-layout=1", "feature-layout=7", 1);
        let mut out = patched.as_bytes()[..patched.find("---\n").unwrap()].to_vec();
        let pos = bytes.windows(4).position(|w| w == b"---\n").unwrap();
        out.extend_from_slice(&bytes[pos..]);
        fs::write(&path, out).unwrap();
        assert!(matches!(
            load_model::<StaticNet>(&path),
            Err(NnError::IncompatibleModelVersion(_))
        ));
    }

    #[test]
    fn truncated_or_damaged_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m");
        save_model(
            &Model::new(labels(2), StaticNet::new(4, 2, 3)).unwrap(),
            &path,
        )
        .unwrap();
        let bytes = fs::read(&path).unwrap();

        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_model::<StaticNet>(&path),
            Err(NnError::CorruptModelFile(_))
        ));

        fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(
            load_model::<StaticNet>(&path),
            Err(NnError::CorruptModelFile(_))
        ));

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(
            load_model::<StaticNet>(&path),
            Err(NnError::CorruptModelFile(_))
        ));
    }
}
