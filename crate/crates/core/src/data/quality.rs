//! Speech-quality proxies, segment filtering and transcription noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SEGMENT_S: f64 = 3.0;
pub const MAX_SEGMENT_S: f64 = 30.0;
pub const MIN_QUALITY: f64 = 3.2;
/// Silence floor of `mean_volume_db`.
pub const SILENCE_DB: f64 = -120.0;

/// Reference speaking rates for natural and hesitant speech, chars/s.
pub const NATURAL_CHARS_PER_SECOND: f64 = 16.88;
pub const HESITANT_CHARS_PER_SECOND: f64 = 7.51;

pub fn chars_per_second(transcript: &str, duration_s: f64) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid(format!("duration must be positive, got {duration_s}")));
    }
    Ok(transcript.trim().chars().count() as f64 / duration_s)
}

/// 20·log10 of the RMS of `samples`, floored at -120 dB.
pub fn mean_volume_db(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("mean_volume_db of an empty signal"));
    }
    let ms = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
    if ms == 0.0 {
        return Ok(SILENCE_DB);
    }
    Ok((10.0 * ms.log10()).max(SILENCE_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Duration,
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub duration_s: f64,
    pub score: f64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// Indices of kept segments, in input order.
    pub kept: Vec<usize>,
    pub rejected: Vec<Rejection>,
}

/// Keeps segments lasting 3 to 30 seconds with a quality score above 3.2.
/// When both rules fail the duration rule is reported.
pub fn filter_segments(segments: &[(f64, f64)]) -> Result<FilterOutcome> {
    let mut out = FilterOutcome::default();
    for (index, &(duration_s, score)) in segments.iter().enumerate() {
        if duration_s < 0.0 || duration_s.is_nan() {
            return Err(Error::invalid(format!("segment {index} has duration {duration_s}")));
        }
        let reason = if !(MIN_SEGMENT_S..=MAX_SEGMENT_S).contains(&duration_s) {
            Some(RejectReason::Duration)
        } else if !(score > MIN_QUALITY) {
            Some(RejectReason::Score)
        } else {
            None
        };
        match reason {
            None => out.kept.push(index),
            Some(reason) => out.rejected.push(Rejection { index, duration_s, score, reason }),
        }
    }
    Ok(out)
}

/// Replaces each token, with probability `rate`, by a uniformly drawn
/// vocabulary token.
pub fn corrupt_transcription(tokens: &[u32], rate: f64, vocab: usize, seed: u64) -> Result<Vec<u32>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("rate must be in [0, 1], got {rate}")));
    }
    if vocab == 0 {
        return Err(Error::invalid("empty vocabulary"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(tokens
        .iter()
        .map(|&t| {
            if rng.random_bool(rate) {
                rng.random_range(0..vocab as u32)
            } else {
                t
            }
        })
        .collect())
}

/// Unique-to-total word ratio over a set of token sequences; 0 when empty.
pub fn lexical_diversity<'a>(texts: impl IntoIterator<Item = &'a [u32]>) -> f64 {
    let mut seen = std::collections::HashSet::new();
    let mut total = 0usize;
    for t in texts {
        total += t.len();
        seen.extend(t.iter().copied());
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn speaking_rate() {
        assert_eq!(chars_per_second("abcdefg", 1.0).unwrap(), 7.0);
        assert_eq!(chars_per_second("  abc  ", 0.5).unwrap(), 6.0);
        assert_eq!(chars_per_second("", 2.0).unwrap(), 0.0);
        assert!(chars_per_second("a", 0.0).is_err());
        assert!(chars_per_second("a", -1.0).is_err());
    }

    #[test]
    fn volume_levels() {
        assert_eq!(mean_volume_db(&[0.0; 16]).unwrap(), -120.0);
        let square: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(mean_volume_db(&square).unwrap().abs() < 1e-12);
        let n = 10_000;
        let sine: Vec<f64> =
            (0..n).map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin()).collect();
        assert!((mean_volume_db(&sine).unwrap() + 3.0103).abs() < 1e-4);
        assert!(mean_volume_db(&[]).is_err());
        assert_eq!(mean_volume_db(&[1e-200]).unwrap(), -120.0);
    }

    #[test]
    fn segment_rules() {
        let out = filter_segments(&[(10.0, 3.5), (2.0, 4.0), (10.0, 3.2), (31.0, 2.0), (3.0, 3.21)])
            .unwrap();
        assert_eq!(out.kept, vec![0, 4]);
        let reasons: Vec<_> = out.rejected.iter().map(|r| (r.index, r.reason)).collect();
        assert_eq!(
            reasons,
            vec![(1, RejectReason::Duration), (2, RejectReason::Score), (3, RejectReason::Duration)]
        );
        assert!(filter_segments(&[(-1.0, 4.0)]).is_err());
    }

    #[test]
    fn corruption_rates() {
        let toks: Vec<u32> = (0..10_000).map(|i| (i % 500) as u32).collect();
        assert_eq!(corrupt_transcription(&toks, 0.0, 512, 1).unwrap(), toks);
        let full = corrupt_transcription(&toks, 1.0, 512, 1).unwrap();
        let same = full.iter().zip(&toks).filter(|(a, b)| a == b).count() as f64 / 10_000.0;
        assert!((same - 1.0 / 512.0).abs() < 0.003, "{same}");
        let part = corrupt_transcription(&toks, 0.2, 512, 2).unwrap();
        // a replacement can redraw the original token; account for it
        let changed = part.iter().zip(&toks).filter(|(a, b)| a != b).count() as f64 / 10_000.0;
        let expected = 0.2 * (1.0 - 1.0 / 512.0);
        assert!((changed - expected).abs() <= 0.01, "{changed}");
        assert_eq!(part, corrupt_transcription(&toks, 0.2, 512, 2).unwrap());
        assert!(corrupt_transcription(&toks, 1.5, 512, 2).is_err());
    }

    #[test]
    fn diversity() {
        assert_eq!(lexical_diversity([[1u32, 2, 2, 3].as_slice()]), 0.75);
        assert_eq!(lexical_diversity(std::iter::empty::<&[u32]>()), 0.0);
    }

    proptest! {
        #[test]
        fn filter_matches_predicate_scan(segs in prop::collection::vec((0.0f64..40.0, 2.0f64..5.0), 0..50)) {
            let out = filter_segments(&segs).unwrap();
            let oracle: Vec<usize> = segs
                .iter()
                .enumerate()
                .filter(|(_, s)| s.0 >= 3.0 && s.0 <= 30.0 && s.1 > 3.2)
                .map(|(i, _)| i)
                .collect();
            prop_assert_eq!(&out.kept, &oracle);
            prop_assert_eq!(out.kept.len() + out.rejected.len(), segs.len());
        }
    }
}
