//! Vocabulary, examples, on-disk corpora and augmentation plans.

mod augment;
mod files;
mod toy;
mod vocab;

pub use augment::{
    augment_plan, augment_plan_with_scales, AugmentPlan, Corner, Crop, CropSize, Mirror, Variant,
    DEFAULT_BASE, DEFAULT_CROP, DEFAULT_REDUCED_CROP, SCALES,
};
pub use files::{
    parse_captions, parse_features, read_captions, read_features, write_features, FeatureTable,
    FEATURE_MAGIC,
};
pub use toy::{make_toy_dataset, ToyDataset};
pub use vocab::{tokenize, Vocabulary, BOUNDARY_TOKEN, DEFAULT_MIN_COUNT, UNK_TOKEN};

use crate::error::{Error, Result};
use crate::numcore::Vector;

/// One image/caption training pair. Tokens are in natural reading order
/// and carry no boundary markers.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionedExample {
    pub image_id: String,
    pub feature: Vector,
    pub tokens: Vec<usize>,
}

pub fn encode_example(
    vocab: &Vocabulary,
    image_id: &str,
    text: &str,
    feature: Vector,
) -> Result<CaptionedExample> {
    let tokens = vocab.encode(text);
    if tokens.is_empty() {
        return Err(Error::Data(format!(
            "caption for `{image_id}` has no tokens after tokenization"
        )));
    }
    Ok(CaptionedExample {
        image_id: image_id.to_owned(),
        feature,
        tokens,
    })
}

/// Pairs every caption with its image's feature vector, in caption order.
pub fn assemble_examples(
    vocab: &Vocabulary,
    captions: &[(String, String)],
    features: &FeatureTable,
) -> Result<Vec<CaptionedExample>> {
    captions
        .iter()
        .map(|(id, text)| {
            let feature = features
                .get(id)
                .ok_or_else(|| Error::Data(format!("no feature vector for image `{id}`")))?;
            encode_example(vocab, id, text, feature.clone())
        })
        .collect()
}
