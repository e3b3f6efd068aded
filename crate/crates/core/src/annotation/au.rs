//! Action-unit registry, a mock intensity backend, and `aus.json` I/O.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coeffspace::{coeffs_to_params, Emotion, ExpressionSequence};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// Upper end of the intensity scale.
pub const MAX_INTENSITY: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionUnit {
    pub id: u8,
    pub phrase: &'static str,
    pub adjectives: [&'static str; 3],
}

impl ActionUnit {
    /// Registry phrase qualified by the level adjective, e.g. "slightly raised inner brows".
    pub fn describe(&self, level: u8) -> Result<String> {
        match level {
            1..=3 => Ok(format!("{} {}", self.adjectives[level as usize - 1], self.phrase)),
            _ => Err(Error::Data(format!("AU{} level {level} outside 1..=3", self.id))),
        }
    }
}

const DEGREE: [&str; 3] = ["slightly", "moderately", "strongly"];

pub const AU_REGISTRY: [ActionUnit; 17] = [
    ActionUnit { id: 1, phrase: "raised inner brows", adjectives: DEGREE },
    ActionUnit { id: 2, phrase: "raised outer brows", adjectives: DEGREE },
    ActionUnit { id: 4, phrase: "lowered brows", adjectives: DEGREE },
    ActionUnit { id: 5, phrase: "raised upper lids", adjectives: DEGREE },
    ActionUnit { id: 6, phrase: "raised cheeks", adjectives: DEGREE },
    ActionUnit { id: 7, phrase: "tightened lids", adjectives: DEGREE },
    ActionUnit { id: 9, phrase: "wrinkled nose", adjectives: DEGREE },
    ActionUnit { id: 10, phrase: "raised upper lip", adjectives: DEGREE },
    ActionUnit { id: 12, phrase: "pulled lip corners", adjectives: DEGREE },
    ActionUnit { id: 14, phrase: "dimpled cheeks", adjectives: DEGREE },
    ActionUnit { id: 15, phrase: "depressed lip corners", adjectives: DEGREE },
    ActionUnit { id: 17, phrase: "raised chin", adjectives: DEGREE },
    ActionUnit { id: 20, phrase: "stretched lips", adjectives: DEGREE },
    ActionUnit { id: 23, phrase: "tightened lips", adjectives: DEGREE },
    ActionUnit { id: 25, phrase: "parted lips", adjectives: DEGREE },
    ActionUnit { id: 26, phrase: "dropped jaw", adjectives: DEGREE },
    ActionUnit { id: 45, phrase: "blinking eyes", adjectives: DEGREE },
];

pub fn lookup(id: u8) -> Result<&'static ActionUnit> {
    AU_REGISTRY
        .iter()
        .find(|a| a.id == id)
        .ok_or_else(|| Error::Data(format!("AU{id} is not in the registry")))
}

/// Typical intensities per emotion, as `(au_id, intensity)` pairs.
fn prototype(emotion: Emotion) -> &'static [(u8, f64)] {
    match emotion {
        Emotion::Neutral => &[],
        Emotion::Angry => &[(4, 3.5), (5, 2.0), (7, 2.5), (23, 2.5)],
        Emotion::Contempt => &[(12, 1.4), (14, 3.0)],
        Emotion::Disgusted => &[(9, 3.5), (10, 2.5), (15, 1.4), (17, 2.0)],
        Emotion::Fear => &[(1, 3.0), (2, 2.0), (4, 2.0), (5, 3.2), (20, 2.5)],
        Emotion::Happy => &[(6, 3.5), (12, 4.0)],
        Emotion::Sad => &[(1, 2.5), (4, 2.0), (15, 3.2)],
        Emotion::Surprised => &[(1, 3.5), (2, 3.5), (5, 3.0), (26, 3.5)],
    }
}

/// Per-video intensities for every registry AU, keyed by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuIntensities {
    pub video_id: String,
    pub intensities: Vec<AuIntensity>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuIntensity {
    pub au_id: u8,
    pub intensity: f64,
}

impl AuIntensities {
    /// Intensities in registry order; every registry AU must be present once.
    pub fn ordered(&self) -> Result<Vec<f64>> {
        AU_REGISTRY
            .iter()
            .map(|au| {
                let mut hits = self.intensities.iter().filter(|x| x.au_id == au.id);
                match (hits.next(), hits.next()) {
                    (Some(x), None) => Ok(x.intensity),
                    (None, _) => Err(Error::Data(format!("{}: AU{} missing", self.video_id, au.id))),
                    _ => Err(Error::Data(format!("{}: AU{} listed twice", self.video_id, au.id))),
                }
            })
            .collect()
    }
}

/// Stand-in for a facial-behaviour analyser: emotion prototype, lip parting
/// and jaw drop from the mean mouth opening of the sequence, and seeded
/// jitter, clamped to `[0, 5]`.
pub fn mock_au_intensities(emotion: Emotion, sequence: &ExpressionSequence, seed: u64) -> Result<AuIntensities> {
    let mut mouth = 0.0;
    for row in sequence.values().rows() {
        mouth += coeffs_to_params(row.as_slice().unwrap_or(&row.to_vec()))?.mouth_open;
    }
    mouth /= sequence.num_frames() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intensities = AU_REGISTRY
        .iter()
        .map(|au| {
            let base = prototype(emotion).iter().find(|(id, _)| *id == au.id).map_or(0.0, |p| p.1);
            let speech = match au.id {
                25 => 3.0 * mouth,
                26 => 1.5 * mouth,
                _ => 0.0,
            };
            let jitter: f64 = rng.random_range(-0.3..0.3);
            AuIntensity { au_id: au.id, intensity: (base + speech + jitter).clamp(0.0, MAX_INTENSITY) }
        })
        .collect();
    Ok(AuIntensities { video_id: sequence.video_id().to_string(), intensities })
}

pub fn write_aus(path: &Path, aus: &AuIntensities) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(aus)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_aus(path: &Path) -> Result<AuIntensities> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
