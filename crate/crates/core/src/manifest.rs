//! Model-shape manifests used for parameter and compression accounting.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Decoder,
    Embedding,
    LmHead,
    Norm,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub d_out: u64,
    pub d_in: u64,
    pub role: LayerRole,
    pub quantize: bool,
}

impl LayerSpec {
    pub fn params(&self) -> u64 {
        self.d_out * self.d_in
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub tied_embedding: bool,
    pub layers: Vec<LayerSpec>,
}

impl ModelManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelManifest =
            serde_json::from_str(text).map_err(|e| Error::format(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for l in &self.layers {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::param(format!("duplicate layer name {:?}", l.name)));
            }
            if l.d_out == 0 || l.d_in == 0 {
                return Err(Error::param(format!(
                    "layer {:?} has a nonpositive dimension",
                    l.name
                )));
            }
        }
        Ok(())
    }

    /// Layers that occupy storage. A tied `lm_head` shares the embedding
    /// tensor and is skipped.
    pub fn counted_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        let tied = self.tied_embedding;
        self.layers
            .iter()
            .filter(move |l| !(tied && l.role == LayerRole::LmHead))
    }

    pub fn total_params(&self) -> u64 {
        self.counted_layers().map(LayerSpec::params).sum()
    }

    pub fn quantized_params(&self) -> u64 {
        self.counted_layers()
            .filter(|l| l.quantize)
            .map(LayerSpec::params)
            .sum()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ModelManifest> {
    ModelManifest::from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_layer() {
        let m = ModelManifest::from_json(
            r#"{"tied_embedding":false,"layers":[
                {"name":"w","d_out":256,"d_in":256,"role":"decoder","quantize":true}]}"#,
        )
        .unwrap();
        assert_eq!(m.quantized_params(), 65_536);
        assert_eq!(m.total_params(), 65_536);
    }

    #[test]
    fn norms_excluded_from_quantized_total() {
        let m = ModelManifest::from_json(
            r#"{"tied_embedding":false,"layers":[
                {"name":"w","d_out":4,"d_in":8,"role":"decoder","quantize":true},
                {"name":"n","d_out":1,"d_in":8,"role":"norm","quantize":false}]}"#,
        )
        .unwrap();
        assert_eq!(m.total_params(), 40);
        assert_eq!(m.quantized_params(), 32);
    }

    #[test]
    fn tied_head_counted_once() {
        let text = |tied: bool| {
            format!(
                r#"{{"tied_embedding":{tied},"layers":[
                {{"name":"emb","d_out":10,"d_in":4,"role":"embedding","quantize":true}},
                {{"name":"head","d_out":10,"d_in":4,"role":"lm_head","quantize":true}}]}}"#
            )
        };
        assert_eq!(
            ModelManifest::from_json(&text(true))
                .unwrap()
                .total_params(),
            40
        );
        assert_eq!(
            ModelManifest::from_json(&text(false))
                .unwrap()
                .total_params(),
            80
        );
    }

    #[test]
    fn rejects_bad_manifests() {
        let dup = r#"{"tied_embedding":false,"layers":[
            {"name":"a","d_out":1,"d_in":1,"role":"decoder","quantize":true},
            {"name":"a","d_out":1,"d_in":1,"role":"decoder","quantize":true}]}"#;
        assert!(matches!(
            ModelManifest::from_json(dup),
            Err(Error::InvalidParam(_))
        ));
        let zero = r#"{"tied_embedding":false,"layers":[
            {"name":"a","d_out":0,"d_in":1,"role":"decoder","quantize":true}]}"#;
        assert!(ModelManifest::from_json(zero).is_err());
        let neg = r#"{"tied_embedding":false,"layers":[
            {"name":"a","d_out":-3,"d_in":1,"role":"decoder","quantize":true}]}"#;
        assert!(ModelManifest::from_json(neg).is_err());
        let role = r#"{"tied_embedding":false,"layers":[
            {"name":"a","d_out":1,"d_in":1,"role":"attention","quantize":true}]}"#;
        assert!(matches!(
            ModelManifest::from_json(role),
            Err(Error::Format(_))
        ));
    }
}
