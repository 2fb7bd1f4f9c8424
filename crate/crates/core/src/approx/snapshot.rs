use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Mlp};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &str = "AES-MLP-1";

/// On-disk parameter snapshot: a versioned JSON document with the layer sizes
/// header followed by the flat row-major parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSnapshot {
    pub format: String,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

impl From<&Mlp> for MlpSnapshot {
    fn from(net: &Mlp) -> Self {
        Self {
            format: SNAPSHOT_MAGIC.to_string(),
            layer_sizes: net.sizes().to_vec(),
            activations: net.activations().to_vec(),
            params: net.params().to_vec(),
        }
    }
}

impl MlpSnapshot {
    pub fn into_mlp(self) -> Result<Mlp> {
        if self.format != SNAPSHOT_MAGIC {
            return Err(Error::invalid(format!(
                "unsupported snapshot format {:?}, expected {SNAPSHOT_MAGIC:?}",
                self.format
            )));
        }
        Mlp::from_params(&self.layer_sizes, &self.activations, self.params)
    }
}

impl Mlp {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&MlpSnapshot::from(self)).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<MlpSnapshot>(text)?.into_mlp()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_wrong_magic() {
        let net = Mlp::new(&[2, 3, 1], &[Activation::Tanh, Activation::Identity], 1).unwrap();
        let text = net.to_json().replace(SNAPSHOT_MAGIC, "AES-MLP-0");
        assert!(matches!(Mlp::from_json(&text), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_truncated_params() {
        let mut snap = MlpSnapshot::from(&Mlp::new(&[2, 1], &[Activation::Identity], 1).unwrap());
        snap.params.pop();
        assert!(snap.into_mlp().is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..9) {
            let net = Mlp::new(&[3, hidden, 2], &[Activation::Relu, Activation::Sigmoid], seed).unwrap();
            let back = Mlp::from_json(&net.to_json()).unwrap();
            prop_assert_eq!(back, net);
        }
    }
}
