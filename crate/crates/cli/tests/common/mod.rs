#![allow(dead_code)]

use std::path::Path;

use csm_core::bundle::{save_bundle, EmbeddingBundle};
use csm_core::fine::{ColumnScaling, ConceptModel, LinearHead, TrainConfig};
use csm_core::matrix::Matrix;
use csm_core::{ConceptLibrary, ImageSet};

/// Two axis concepts ("fur", "snout") and a third unused one.
pub fn pet_concepts() -> EmbeddingBundle {
    EmbeddingBundle::concepts(
        2,
        vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8],
        vec!["fur".into(), "snout".into(), "paw".into()],
    )
    .unwrap()
}

/// Four images; `bear_1` has a strong snout and is mistaken for a dog.
pub fn pet_images() -> EmbeddingBundle {
    EmbeddingBundle::images(2, vec![0.9, 1.0, 0.2, 1.5, 1.0, 0.1, 1.2, 0.0])
        .unwrap()
        .with_labels(vec![1, 0, 1, 1], 2)
        .unwrap()
        .with_class_names(vec!["dog".into(), "bear".into()])
        .unwrap()
        .with_ids(vec!["bear_1".into(), "dog_1".into(), "bear_2".into(), "bear_3".into()])
        .unwrap()
}

/// dog = fur + 2 snout, bear = 1.5 fur.
pub fn pet_model() -> ConceptModel {
    ConceptModel {
        core_indices: vec![0, 1],
        concept_names: vec!["fur".into(), "snout".into()],
        class_names: vec!["dog".into(), "bear".into()],
        head: LinearHead {
            weights: Matrix::from_rows(&[vec![1.0, 2.0], vec![1.5, 0.0]]),
            bias: vec![0.0, 0.0],
        },
        display: ColumnScaling::fit(&Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]])),
        mask: None,
        config: TrainConfig::default(),
    }
}

pub fn pet_library() -> ConceptLibrary {
    ConceptLibrary::new(pet_concepts()).unwrap()
}

pub fn pet_test() -> ImageSet {
    ImageSet::new(pet_images()).unwrap()
}

/// Writes the pet fixture as `concepts/`, `test/` and `model/` under `dir`.
pub fn write_pet_fixture(dir: &Path) {
    save_bundle(&pet_concepts(), dir.join("concepts")).unwrap();
    save_bundle(&pet_images(), dir.join("test")).unwrap();
    pet_model().save(dir.join("model")).unwrap();
}
