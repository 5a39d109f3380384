//! JSON shapes shared by the `explain` command and the HTTP service.

use std::collections::BTreeMap;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use csm_core::explain::{ConceptActivation, Explanation};
use csm_core::fine::ConceptModel;

/// Per-class values keyed by class name, in class order.
#[derive(Debug, Clone, PartialEq)]
pub struct ByClass(pub Vec<(String, f64)>);

impl Serialize for ByClass {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptView {
    /// Position in the core set; the handle for interventions.
    pub position: usize,
    /// Library index of the concept.
    pub index: usize,
    pub concept: String,
    pub raw: f64,
    pub normalized: f64,
    pub contribs: ByClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterventionView {
    pub concept_index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationView {
    pub id: String,
    pub predicted: usize,
    pub predicted_name: String,
    pub true_label: Option<usize>,
    pub top: Vec<ConceptView>,
    pub bottom: Vec<ConceptView>,
    pub logits: Vec<f64>,
    pub bias: Vec<f64>,
    pub interventions: Vec<InterventionView>,
}

fn concept_view(model: &ConceptModel, c: &ConceptActivation) -> ConceptView {
    ConceptView {
        position: c.position,
        index: model.core_indices[c.position],
        concept: c.concept.clone(),
        raw: c.raw,
        normalized: c.normalized,
        contribs: ByClass(
            model
                .class_names
                .iter()
                .cloned()
                .zip(c.contributions.iter().copied())
                .collect(),
        ),
    }
}

pub fn explanation_view(
    model: &ConceptModel,
    e: &Explanation,
    interventions: &BTreeMap<usize, f64>,
) -> ExplanationView {
    ExplanationView {
        id: e.image_id.clone(),
        predicted: e.predicted,
        predicted_name: model.class_names[e.predicted].clone(),
        true_label: e.true_label,
        top: e.top.iter().map(|c| concept_view(model, c)).collect(),
        bottom: e.bottom.iter().map(|c| concept_view(model, c)).collect(),
        logits: e.logits.clone(),
        bias: e.bias.clone(),
        interventions: interventions
            .iter()
            .map(|(&concept_index, &value)| InterventionView {
                concept_index,
                value,
            })
            .collect(),
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("view serializes");
    s.push('\n');
    s
}
