use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CaptionedExample, Vocabulary};
use crate::error::{Error, Result};
use crate::numcore::Vector;

const MIN_LEN: usize = 3;
const MAX_LEN: usize = 6;
const MIN_FEATURE_GAP: f64 = 0.1;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub vocab: Vocabulary,
    pub examples: Vec<CaptionedExample>,
}

/// Synthetic, learnable captioning set. Captions are 3 to 6 distinct-per-image
/// words drawn from `w2..w{K-1}`; each image's feature is the mean of fixed
/// random ±1 codes, one per (position, word) pair of its caption, so the
/// feature determines the caption.
pub fn make_toy_dataset(
    n_images: usize,
    vocab_k: usize,
    feat_dim: usize,
    seed: u64,
) -> Result<ToyDataset> {
    if vocab_k < 4 {
        return Err(Error::Config(format!("toy vocabulary needs K >= 4, got {vocab_k}")));
    }
    if feat_dim == 0 {
        return Err(Error::Config("toy feature dimension must be at least 1".into()));
    }
    let words: Vec<String> = (2..vocab_k).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::from_words(&words);
    let content: Vec<usize> = (2..vocab_k).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<Vec<Vec<f64>>> = (0..MAX_LEN)
        .map(|_| {
            (0..vocab_k)
                .map(|_| {
                    (0..feat_dim)
                        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut examples: Vec<CaptionedExample> = Vec::with_capacity(n_images);
    let mut attempts = 0;
    while examples.len() < n_images {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Data(format!(
                "could not draw {n_images} distinguishable toy captions from K={vocab_k}"
            )));
        }
        let len = rng.gen_range(MIN_LEN..=MAX_LEN);
        let tokens: Vec<usize> = (0..len)
            .map(|_| *content.choose(&mut rng).expect("K >= 4"))
            .collect();
        let mut feature = Vector::zeros(feat_dim);
        for (pos, &tok) in tokens.iter().enumerate() {
            feature.add_assign(&codes[pos][tok]);
        }
        for v in feature.iter_mut() {
            *v /= len as f64;
        }
        let distinct = examples.iter().all(|e| {
            e.tokens != tokens
                && e.feature
                    .iter()
                    .zip(feature.iter())
                    .any(|(a, b)| (a - b).abs() >= MIN_FEATURE_GAP)
        });
        if distinct {
            examples.push(CaptionedExample {
                image_id: format!("toy{:03}", examples.len()),
                feature,
                tokens,
            });
        }
    }
    Ok(ToyDataset { vocab, examples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(make_toy_dataset(10, 20, 8, 3).unwrap(), make_toy_dataset(10, 20, 8, 3).unwrap());
        assert_ne!(make_toy_dataset(10, 20, 8, 3).unwrap(), make_toy_dataset(10, 20, 8, 4).unwrap());
    }

    #[test]
    fn features_are_separated_and_tokens_in_range() {
        let ds = make_toy_dataset(10, 20, 8, 3).unwrap();
        assert_eq!(ds.vocab.len(), 20);
        for (i, a) in ds.examples.iter().enumerate() {
            assert!((MIN_LEN..=MAX_LEN).contains(&a.tokens.len()));
            assert!(a.tokens.iter().all(|&t| (2..20).contains(&t)));
            for b in &ds.examples[i + 1..] {
                assert!(a.feature.iter().zip(b.feature.iter()).any(|(x, y)| (x - y).abs() >= 0.1));
            }
        }
    }

    #[test]
    fn small_vocab_rejected() {
        assert!(make_toy_dataset(3, 3, 4, 0).is_err());
        assert!(make_toy_dataset(3, 4, 4, 0).is_ok());
    }
}
