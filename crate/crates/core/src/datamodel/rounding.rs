//! Random rounding of death counts for publication.
//!
//! Counts below 6 become 0 or 6; larger counts become one of the two
//! neighbouring multiples of 3. The chance of moving to a neighbour falls
//! linearly with its distance, so the rounded count has the true count as its
//! expectation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::panel::CountPanel;

const SMALL_COUNT_CEILING: u64 = 6;
const BASE: u64 = 3;

/// Rounds `count` given a uniform draw `u` in `[0, 1)`.
pub fn round_count(count: u64, u: f64) -> u64 {
    if count < SMALL_COUNT_CEILING {
        let p_up = count as f64 / SMALL_COUNT_CEILING as f64;
        return if u < p_up { SMALL_COUNT_CEILING } else { 0 };
    }
    let below = count / BASE * BASE;
    let rem = count - below;
    if rem == 0 {
        return count;
    }
    let p_up = rem as f64 / BASE as f64;
    if u < p_up {
        below + BASE
    } else {
        below
    }
}

pub fn round_count_with<R: Rng + ?Sized>(count: u64, rng: &mut R) -> u64 {
    round_count(count, rng.random::<f64>())
}

/// Randomly rounds every cell of a panel. Each cell draws from its own
/// stream of a seeded generator, so the result depends only on `seed`.
pub fn random_round(panel: &CountPanel, seed: u64) -> CountPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    panel.map_counts(|cell, c| {
        rng.set_stream(cell as u64);
        rng.set_word_pos(0);
        round_count_with(c, &mut rng)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{MonthRange, StratumKey};
    use proptest::prelude::*;

    #[test]
    fn fixed_points() {
        for u in [0.0, 0.5, 0.999] {
            assert_eq!(round_count(0, u), 0);
            assert_eq!(round_count(9, u), 9);
            assert_eq!(round_count(6, u), 6);
        }
    }

    #[test]
    fn eight_goes_to_nine_two_thirds_of_the_time() {
        assert_eq!(round_count(8, 0.66), 9);
        assert_eq!(round_count(8, 0.67), 6);
    }

    #[test]
    fn five_goes_to_six_five_sixths_of_the_time() {
        assert_eq!(round_count(5, 0.83), 6);
        assert_eq!(round_count(5, 0.84), 0);
    }

    #[test]
    fn panel_rounding_is_seed_deterministic() {
        let range = MonthRange::years(2014, 2014).unwrap();
        let panel = CountPanel::from_fn(range, |s: StratumKey, m| (s.index() as u64 + m.month() as u64) % 17);
        assert_eq!(random_round(&panel, 7), random_round(&panel, 7));
        assert_ne!(random_round(&panel, 7), random_round(&panel, 8));
    }

    proptest! {
        #[test]
        fn support_rule(count in 0u64..10_000, u in 0.0f64..1.0) {
            let r = round_count(count, u);
            if count < 6 {
                prop_assert!(r == 0 || r == 6);
            } else {
                prop_assert_eq!(r % 3, 0);
                prop_assert!(r.abs_diff(count) <= 2);
                prop_assert!(r >= 6);
            }
        }
    }
}
