//! Text embeddings: provider trait plus a deterministic hashing fallback.
//!
//! The fallback embeds a string as a bag of character trigrams hashed into
//! a fixed number of buckets (feature hashing with sign bits), then
//! L2-normalizes. It needs no model weights and is fully deterministic, so
//! offline runs and tests can rely on it.

use crate::error::Result;

pub const HASH_EMBED_DIM: usize = 256;

pub trait Embedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
    fn dim(&self) -> usize;
}

/// Character-trigram feature-hashing embedder.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: HASH_EMBED_DIM }
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim }
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return v;
        }
        if chars.len() < 3 {
            bump(&mut v, fnv1a(text.as_bytes()));
        } else {
            for w in chars.windows(3) {
                let gram: String = w.iter().collect();
                bump(&mut v, fnv1a(gram.as_bytes()));
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

fn bump(v: &mut [f64], hash: u64) {
    let sign = if hash & 1 == 0 { 1.0 } else { -1.0 };
    let idx = ((hash >> 1) % v.len() as u64) as usize;
    v[idx] += sign;
}

// FNV-1a: stable across platforms and releases, unlike the stdlib hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Cosine similarity; zero vectors yield 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_are_unit_norm_and_deterministic() {
        let e = HashingEmbedder::default();
        let out = e.embed(&["pale ale".to_string(), "pale ale".to_string()]).unwrap();
        assert_eq!(out[0], out[1]);
        let norm: f64 = out[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_string_embeds_to_zero() {
        let e = HashingEmbedder::default();
        let out = e.embed(&[String::new()]).unwrap();
        assert!(out[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn similar_strings_score_higher_than_unrelated() {
        let e = HashingEmbedder::default();
        let out = e
            .embed(&[
                "india pale ale".to_string(),
                "imperial pale ale".to_string(),
                "9941".to_string(),
            ])
            .unwrap();
        assert!(cosine(&out[0], &out[1]) > cosine(&out[0], &out[2]));
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![0.5, -1.0, 2.0];
        let scaled: Vec<f64> = a.iter().map(|x| x * 7.5).collect();
        assert!((cosine(&a, &b) - cosine(&scaled, &b)).abs() < 1e-12);
    }
}
