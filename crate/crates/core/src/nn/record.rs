//! Versioned, lossless serialization of [`DenseNet`].
//!
//! Schema (JSON):
//!
//! ```text
//! {
//!   "format": "uvls-densenet",
//!   "version": 1,
//!   "layers": [
//!     { "inputs": 20, "outputs": 128, "activation": "leaky_relu",
//!       "weights": [/* outputs*inputs values, row-major */],
//!       "bias": [/* outputs values */] },
//!     ...
//!   ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so `parse(render(net)) == net`
//! bit for bit.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::dense::{Activation, Dense, DenseNet};
use crate::error::{Error, Result};

pub const NET_FORMAT: &str = "uvls-densenet";
pub const NET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub format: String,
    pub version: u32,
    pub layers: Vec<LayerRecord>,
}

impl From<&DenseNet> for NetRecord {
    fn from(net: &DenseNet) -> Self {
        NetRecord {
            format: NET_FORMAT.to_string(),
            version: NET_VERSION,
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetRecord> for DenseNet {
    type Error = Error;

    fn try_from(rec: NetRecord) -> Result<Self> {
        if rec.format != NET_FORMAT {
            return Err(Error::Parse(format!("unexpected format tag {:?}", rec.format)));
        }
        if rec.version != NET_VERSION {
            return Err(Error::Version {
                kind: "network checkpoint",
                found: rec.version,
                expected: NET_VERSION,
            });
        }
        let layers = rec
            .layers
            .into_iter()
            .map(|l| {
                let expected = l
                    .inputs
                    .checked_mul(l.outputs)
                    .ok_or_else(|| Error::Parse("layer dimensions overflow".into()))?;
                if l.weights.len() != expected {
                    return Err(Error::shape("checkpoint weights", expected, l.weights.len()));
                }
                if l.bias.len() != l.outputs {
                    return Err(Error::shape("checkpoint bias", l.outputs, l.bias.len()));
                }
                if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("checkpoint parameters"));
                }
                let weights = Array2::from_shape_vec((l.outputs, l.inputs), l.weights)
                    .map_err(|e| Error::Parse(e.to_string()))?;
                Ok(Dense {
                    weights,
                    bias: Array1::from(l.bias),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DenseNet::from_layers(layers)
    }
}

impl DenseNet {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&NetRecord::from(self)).expect("net record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: NetRecord = serde_json::from_str(text)?;
        DenseNet::try_from(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = DenseNet::new(&[3, hidden, 2], Activation::LeakyRelu, Activation::Linear, &mut rng).unwrap();
            let back = DenseNet::from_json(&net.to_json()).unwrap();
            for (a, b) in net.layers().iter().zip(back.layers()) {
                prop_assert!(a.weights.iter().zip(b.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
                prop_assert!(a.bias.iter().zip(b.bias.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
                prop_assert_eq!(a.activation, b.activation);
            }
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DenseNet::new(&[2, 2], Activation::Linear, Activation::Linear, &mut rng).unwrap();
        let mut rec = NetRecord::from(&net);
        rec.version = 7;
        let text = serde_json::to_string(&rec).unwrap();
        assert!(matches!(
            DenseNet::from_json(&text),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn truncated_weights_rejected() {
        let text = r#"{"format":"uvls-densenet","version":1,"layers":[{"inputs":2,"outputs":1,"activation":"linear","weights":[1.0],"bias":[0.0]}]}"#;
        assert!(matches!(DenseNet::from_json(text), Err(Error::Shape { .. })));
    }
}
