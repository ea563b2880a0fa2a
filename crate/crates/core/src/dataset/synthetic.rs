//! Deterministic latent-attribute corpus.
//!
//! Each class owns a binary attribute vector. Sender views are a fixed random
//! linear map of the (±1-coded) attributes plus Gaussian noise; the receiver
//! view of a class is one word vector per attribute value, so its mean is a
//! second, unrelated linear map of the same attributes. "Hard pairs" share all
//! attributes but one, which makes them the confusable classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{make_splits, ClassEntry, DataError, Dataset, SplitCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_attributes: usize,
    pub sender_dim: usize,
    pub receiver_dim: usize,
    pub views_per_class: usize,
    /// Standard deviation of the per-view Gaussian noise.
    pub noise: f64,
    /// Number of class pairs differing in a single attribute.
    pub hard_pairs: usize,
    /// Vectors per sender view (1 = pooled features).
    pub sender_set_size: usize,
    pub seed: u64,
    /// The last `held_out` classes form the out-of-domain split.
    pub held_out: usize,
    pub train_views: usize,
    pub val_views: usize,
    pub test_views: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_attributes: 6,
            sender_dim: 16,
            receiver_dim: 16,
            views_per_class: 64,
            noise: 0.5,
            hard_pairs: 2,
            sender_set_size: 1,
            seed: 0,
            held_out: 0,
            train_views: 48,
            val_views: 8,
            test_views: 8,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Spec(m));
        if self.n_classes == 0 || self.n_attributes == 0 {
            return bad("need at least one class and one attribute".into());
        }
        if self.n_attributes < usize::BITS as usize && self.n_classes > 1 << self.n_attributes {
            return bad(format!(
                "{} classes cannot have distinct {}-bit attribute vectors",
                self.n_classes, self.n_attributes
            ));
        }
        if 2 * self.hard_pairs > self.n_classes {
            return bad(format!(
                "{} hard pairs need {} classes, spec has {}",
                self.hard_pairs,
                2 * self.hard_pairs,
                self.n_classes
            ));
        }
        if self.sender_dim == 0 || self.receiver_dim == 0 || self.sender_set_size == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.views_per_class == 0 {
            return bad("views_per_class must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be a finite non-negative number, got {}", self.noise));
        }
        if self.held_out >= self.n_classes {
            return bad("at least one class must stay in-domain".into());
        }
        if self.train_views + self.val_views + self.test_views > self.views_per_class {
            return bad("train + val + test views exceed views_per_class".into());
        }
        Ok(())
    }

    pub fn split_counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train_views,
            val: self.val_views,
            test: self.test_views,
            out_of_domain: if self.held_out > 0 { self.views_per_class } else { 0 },
            transfer: 0,
        }
    }
}

/// A generated corpus plus the latent structure behind it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub latents: Vec<Vec<u8>>,
    /// Whether each class belongs to a hard pair.
    pub paired: Vec<bool>,
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn far_enough(z: &[u8], others: &[Vec<u8>], min: usize) -> bool {
    others.iter().all(|o| hamming(z, o) >= min)
}

fn draw_latents(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    const TRIES: usize = 10_000;
    let n = spec.n_attributes;
    let random = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..n).map(|_| rng.random_range(0..2u8)).collect() };
    let mut latents: Vec<Vec<u8>> = Vec::with_capacity(spec.n_classes);
    // first try keeps every non-partner at distance >= 2; fall back to distinct codes
    for min in [2usize, 1] {
        latents.clear();
        let mut ok = true;
        for _ in 0..spec.hard_pairs {
            let found = (0..TRIES).find_map(|_| {
                let a = random(rng);
                let mut b = a.clone();
                let k = rng.random_range(0..n);
                b[k] ^= 1;
                (far_enough(&a, &latents, min) && far_enough(&b, &latents, min)).then_some((a, b))
            });
            match found {
                Some((a, b)) => {
                    latents.push(a);
                    latents.push(b);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        while ok && latents.len() < spec.n_classes {
            match (0..TRIES).map(|_| random(rng)).find(|z| far_enough(z, &latents, min)) {
                Some(z) => latents.push(z),
                None => ok = false,
            }
        }
        if ok {
            if min < 2 {
                log::warn!("synthetic latents could not keep unpaired classes two attributes apart");
            }
            return latents;
        }
    }
    // exhaustive enumeration always succeeds since n_classes <= 2^n
    for c in 0..(1usize << n.min(20)) {
        if latents.len() >= spec.n_classes {
            break;
        }
        let z: Vec<u8> = (0..n).map(|k| ((c >> k) & 1) as u8).collect();
        if !latents.contains(&z) {
            latents.push(z);
        }
    }
    latents
}

impl SyntheticData {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self, DataError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let latents = draw_latents(spec, &mut rng);
        let n = spec.n_attributes;
        let scale = 1.0 / (n as f64).sqrt();
        let sender_map: Vec<f64> = (0..spec.sender_dim * n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        // word vector for every (attribute, value) pair
        let words: Vec<Vec<f32>> = (0..2 * n)
            .map(|_| {
                (0..spec.receiver_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                    .collect()
            })
            .collect();

        let mut classes = Vec::with_capacity(spec.n_classes);
        for (i, z) in latents.iter().enumerate() {
            let signed: Vec<f64> = z.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }).collect();
            let clean: Vec<f64> = (0..spec.sender_dim)
                .map(|r| {
                    (0..n)
                        .map(|k| sender_map[r * n + k] * signed[k])
                        .sum()
                })
                .collect();
            let mut sender_views =
                Vec::with_capacity(spec.views_per_class * spec.sender_set_size * spec.sender_dim);
            for _ in 0..spec.views_per_class * spec.sender_set_size {
                for &c in &clean {
                    let e: f64 = rng.sample(StandardNormal);
                    sender_views.push((c + spec.noise * e) as f32);
                }
            }
            let receiver_words = z
                .iter()
                .enumerate()
                .flat_map(|(k, &b)| words[2 * k + b as usize].iter().copied())
                .collect();
            let nearest = latents
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| hamming(z, o))
                .min();
            let difficulty = nearest.map_or(1.0, |d| d as f64 / n as f64);
            let name = if i < 2 * spec.hard_pairs {
                format!("pair{}{}", i / 2, if i % 2 == 0 { 'a' } else { 'b' })
            } else {
                format!("solo{i}")
            };
            classes.push(ClassEntry {
                id: i as u32,
                name,
                difficulty: Some(difficulty),
                sender_views,
                receiver_words,
            });
        }
        let dataset = Dataset {
            sender_dim: spec.sender_dim,
            sender_set_size: spec.sender_set_size,
            receiver_dim: spec.receiver_dim,
            classes,
            splits: Vec::new(),
        };
        dataset.validate()?;
        let paired = (0..spec.n_classes).map(|i| i < 2 * spec.hard_pairs).collect();
        Ok(Self {
            dataset,
            latents,
            paired,
        })
    }
}

/// Generates the corpus; the per-class difficulty column holds
/// `1 - (attribute overlap with the nearest other class) / n_attributes`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    Ok(SyntheticData::generate(spec)?.dataset)
}

/// Generates the corpus and applies the spec's split plan.
pub fn synthetic_with_splits(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    let d = generate_synthetic(spec)?;
    let in_domain: Vec<usize> = (0..spec.n_classes - spec.held_out).collect();
    let held: Vec<usize> = (spec.n_classes - spec.held_out..spec.n_classes).collect();
    make_splits(&d, &in_domain, &held, &[], &spec.split_counts())
}
