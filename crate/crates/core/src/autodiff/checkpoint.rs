use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON envelope around a parameter bundle. Tensors serialize as
/// `{"shape": [...], "data": [...]}` and floats round-trip exactly.
#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    params: T,
}

pub fn save_checkpoint<T: Serialize>(path: &Path, format: &str, params: &T) -> Result<()> {
    let env = Envelope {
        format: format.to_string(),
        version: CHECKPOINT_VERSION,
        params,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &env)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if env.format != format {
        return Err(Error::Invalid(format!(
            "checkpoint {} has format {:?}, expected {format:?}",
            path.display(),
            env.format
        )));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(Error::Invalid(format!(
            "unsupported checkpoint version {}",
            env.version
        )));
    }
    Ok(env.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, Mlp, MlpSpec};
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = MlpSpec::new(vec![3, 7, 2], Activation::Silu, Activation::Tanh);
        let mlp = Mlp::new(&spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&path, "mlp", &mlp).unwrap();
        let back: Mlp = load_checkpoint(&path, "mlp").unwrap();
        for (a, b) in mlp.parameters().iter().zip(back.parameters()) {
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        assert!(load_checkpoint::<Mlp>(&path, "other").is_err());
    }
}
