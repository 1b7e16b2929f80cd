//! Versioned JSON container for model weights.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so saving and loading is bit-exact for finite values.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    payload: T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn save<T: Serialize>(path: &Path, format: &str, payload: &T) -> Result<()> {
    let env = Envelope {
        format: format.to_string(),
        version: CHECKPOINT_VERSION,
        payload,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, serde_json::to_vec_pretty(&env)?)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let header: Header = serde_json::from_slice(&bytes)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if header.format != format {
        return Err(Error::Config(format!(
            "{} holds a `{}` checkpoint, expected `{format}`",
            path.display(),
            header.format
        )));
    }
    let env: Envelope<T> = serde_json::from_slice(&bytes)?;
    Ok(env.payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, MlpParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = MlpParams::init("h", &[5, 9, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save(&path, "mlp", &mlp).unwrap();
        let back: MlpParams = load(&path, "mlp").unwrap();
        for (a, b) in mlp.layers.iter().zip(&back.layers) {
            let bits = |t: &crate::autodiff::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weight), bits(&b.weight));
            assert_eq!(bits(&a.bias), bits(&b.bias));
        }
        assert_eq!(mlp, back);
    }

    #[test]
    fn version_and_format_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"format":"mlp","version":99,"payload":null}"#).unwrap();
        assert!(matches!(load::<()>(&path, "mlp"), Err(Error::Version { found: 99, .. })));
        save(&path, "other", &()).unwrap();
        assert!(matches!(load::<()>(&path, "mlp"), Err(Error::Config(_))));
        assert!(matches!(
            load::<()>(&dir.path().join("missing.json"), "mlp"),
            Err(Error::MissingArtifact(_))
        ));
    }
}
