//! Named-tensor persistence in the safetensors container.
//!
//! All metadata travels as one JSON string under a single key so that the
//! serialized header is byte-stable.

use crate::param::Parameterized;
use crate::tensor::Tensor;
use crate::{NnError, Result};
use safetensors::tensor::{Dtype, TensorView};
use std::collections::{BTreeMap, HashMap};

const META_KEY: &str = "mvfuse";

/// Serialises `tensors` plus an opaque metadata string.
pub fn to_bytes(tensors: &BTreeMap<String, Tensor>, metadata: &str) -> Result<Vec<u8>> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, t)| {
            let raw = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (k.clone(), t.shape().to_vec(), raw)
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(k, s, b)| {
            TensorView::new(Dtype::F32, s.clone(), b)
                .map(|v| (k.clone(), v))
                .map_err(|e| NnError::Format(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([(META_KEY.to_string(), metadata.to_string())]);
    safetensors::serialize(views, Some(meta)).map_err(|e| NnError::Format(e.to_string()))
}

/// Parses a safetensors buffer. Non-f32 tensors are rejected.
pub fn from_bytes(buf: &[u8]) -> Result<(BTreeMap<String, Tensor>, Option<String>)> {
    let st = safetensors::SafeTensors::deserialize(buf).map_err(|e| NnError::Format(e.to_string()))?;
    let (_, meta) = safetensors::SafeTensors::read_metadata(buf).map_err(|e| NnError::Format(e.to_string()))?;
    let metadata = meta.metadata().as_ref().and_then(|m| m.get(META_KEY).cloned());
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(NnError::Format(format!("tensor {name} has dtype {:?}, expected F32", view.dtype())));
        }
        let data = view.data().chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.insert(name, Tensor::from_vec(view.shape(), data)?);
    }
    Ok((out, metadata))
}

/// Every parameter and buffer of `model`, keyed by prefixed name.
pub fn state_dict(model: &dyn Parameterized, prefix: &str) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    model.visit_params(prefix, &mut |n, p| {
        out.insert(n.to_string(), p.value.clone());
    });
    out
}

/// Copies matching tensors into `model`. Every model parameter must be
/// present with the same shape.
pub fn load_state_dict(model: &mut dyn Parameterized, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut err = None;
    model.visit_params_mut(prefix, &mut |n, p| {
        if err.is_some() {
            return;
        }
        match tensors.get(n) {
            None => err = Some(NnError::MissingTensor(n.to_string())),
            Some(t) if t.shape() != p.value.shape() => {
                err = Some(NnError::Shape(format!(
                    "{n}: checkpoint shape {:?} vs model {:?}",
                    t.shape(),
                    p.value.shape()
                )))
            }
            Some(t) => p.value = t.clone(),
        }
    });
    err.map_or(Ok(()), Err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in proptest::collection::vec(any::<f32>(), 1..64)) {
            let mut m = BTreeMap::new();
            m.insert("a.weight".to_string(), Tensor::from_vec(&[vals.len()], vals.clone()).unwrap());
            m.insert("b".to_string(), Tensor::zeros(&[2, 3]));
            let bytes = to_bytes(&m, "{\"k\":1}").unwrap();
            let (back, meta) = from_bytes(&bytes).unwrap();
            prop_assert_eq!(meta.as_deref(), Some("{\"k\":1}"));
            let got: Vec<u32> = back["a.weight"].data().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = vals.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
            prop_assert_eq!(bytes.clone(), to_bytes(&m, "{\"k\":1}").unwrap());
        }
    }
}
