//! Plain JSON layout for networks: one object per layer with a row-major
//! nested weight array, an optional bias and the activation name.

use peftlab_core::{Activation, DenseNet, Layer, Matrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub weight: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetFile {
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("layer {layer}: unknown activation `{name}`")]
    Activation { layer: usize, name: String },
    #[error("layer {layer}: {source}")]
    Layer { layer: usize, source: peftlab_core::Error },
}

impl NetFile {
    pub fn from_net(net: &DenseNet) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| LayerFile {
                weight: (0..l.weight.rows()).map(|i| l.weight.row(i).to_vec()).collect(),
                bias: l.bias.clone(),
                activation: l.activation.name().to_string(),
            })
            .collect();
        Self { layers }
    }

    pub fn to_net(&self) -> Result<DenseNet, FormatError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let activation =
                Activation::from_name(&l.activation).ok_or_else(|| FormatError::Activation { layer: i, name: l.activation.clone() })?;
            let rows: Vec<&[f64]> = l.weight.iter().map(Vec::as_slice).collect();
            let weight = Matrix::from_rows(&rows).map_err(|source| FormatError::Layer { layer: i, source })?;
            layers.push(Layer::new(weight, l.bias.clone(), activation).map_err(|source| FormatError::Layer { layer: i, source })?);
        }
        DenseNet::new(layers).map_err(|source| FormatError::Layer { layer: self.layers.len(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use peftlab_core::rng;

    #[test]
    fn round_trips_through_json() {
        let net = DenseNet::random(&[3, 4, 2], &[Activation::GeluApprox, Activation::Identity], true, &mut rng::from_seed(1)).unwrap();
        let text = serde_json::to_string(&NetFile::from_net(&net)).unwrap();
        let back: NetFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_net().unwrap(), net);
    }

    #[test]
    fn rejects_bad_layers() {
        let bad: NetFile = serde_json::from_str(r#"{"layers":[{"weight":[[1.0]],"activation":"swish"}]}"#).unwrap();
        assert!(matches!(bad.to_net(), Err(FormatError::Activation { .. })));
        let ragged: NetFile = serde_json::from_str(r#"{"layers":[{"weight":[[1.0],[1.0,2.0]],"activation":"relu"}]}"#).unwrap();
        assert!(ragged.to_net().is_err());
    }
}
