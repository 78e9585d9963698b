//! Joint masking: pick which joints to hide and overwrite their embedded
//! features with the learnable mask token.
//!
//! Three strategies: a fixed set of body-part regions, `k` regions sampled
//! per call, or a random fraction of individual joints. Region masks hide
//! semantically coherent groups (a whole arm), joint masks scatter. A mask
//! never covers all joints and never none.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, TensorId};
use crate::skeleton::SkeletonLayout;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How to choose the masked joint set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskStrategy {
    /// Union of a fixed region set; deterministic, rng unused.
    BodyParts { regions: Vec<usize> },
    /// `count` regions sampled uniformly without replacement per call.
    RandomRegions { count: usize },
    /// `round(ratio * N)` joints sampled uniformly, clamped to `[1, N-1]`.
    Random { ratio: f64 },
}

impl Default for MaskStrategy {
    /// One region per sample.
    fn default() -> Self {
        MaskStrategy::RandomRegions { count: 1 }
    }
}

/// A strategy plus the seed its random draws key off.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub strategy: MaskStrategy,
    #[serde(default)]
    pub rng_seed: u64,
}

impl MaskStrategy {
    pub fn validate(&self, layout: &SkeletonLayout) -> Result<()> {
        let regions = layout.region_count();
        match self {
            MaskStrategy::BodyParts { regions: set } => {
                if set.is_empty() {
                    return Err(Error::Config("body-part mask set is empty".into()));
                }
                if set.len() >= regions {
                    return Err(Error::Config(format!(
                        "body-part mask names {} of {regions} regions; masking every region is not allowed",
                        set.len()
                    )));
                }
                let mut seen = vec![false; regions];
                for &r in set {
                    if r >= regions {
                        return Err(Error::Config(format!(
                            "region id {r} out of range (layout has {regions} regions)"
                        )));
                    }
                    if seen[r] {
                        return Err(Error::Config(format!("region id {r} listed twice")));
                    }
                    seen[r] = true;
                }
                Ok(())
            }
            MaskStrategy::RandomRegions { count } => {
                if *count == 0 || *count >= regions {
                    return Err(Error::Config(format!(
                        "region sample count must be in [1, {}], got {count}",
                        regions - 1
                    )));
                }
                Ok(())
            }
            MaskStrategy::Random { ratio } => {
                if !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(Error::Config(format!(
                        "mask ratio must lie strictly inside (0, 1), got {ratio}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// A short stable name for reports and CSV rows.
    pub fn label(&self) -> String {
        match self {
            MaskStrategy::BodyParts { regions } => {
                let ids: Vec<String> = regions.iter().map(|r| r.to_string()).collect();
                format!("body_parts({})", ids.join("+"))
            }
            MaskStrategy::RandomRegions { count } => format!("random_regions({count})"),
            MaskStrategy::Random { ratio } => format!("random({:.0}%)", ratio * 100.0),
        }
    }
}

/// Joint count masked by `Random { ratio }` on `n` joints: round-half-up,
/// clamped to `[1, n-1]`.
pub fn masked_joint_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n - 1)
}

/// Number of joints a strategy will mask (region strategies are exact for
/// fixed sets; sampled regions report the count for the given draw).
pub fn mask_size(mask: &[usize]) -> usize {
    mask.len()
}

fn sample_distinct(pool: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    // Partial Fisher-Yates: first k slots of a virtual shuffle.
    let mut idx: Vec<usize> = (0..pool).collect();
    for i in 0..k {
        let j = rng.random_range(i..pool);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Resolves a strategy to a sorted set of masked joint indices.
/// Body-part masks ignore the rng entirely.
pub fn resolve_mask(
    strategy: &MaskStrategy,
    layout: &SkeletonLayout,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    strategy.validate(layout)?;
    let mut joints = match strategy {
        MaskStrategy::BodyParts { regions } => {
            let mut j: Vec<usize> = regions
                .iter()
                .flat_map(|&r| layout.region(r).iter().copied())
                .collect();
            j.sort_unstable();
            j
        }
        MaskStrategy::RandomRegions { count } => {
            let picked = sample_distinct(layout.region_count(), *count, rng);
            let mut j: Vec<usize> = picked
                .iter()
                .flat_map(|&r| layout.region(r).iter().copied())
                .collect();
            j.sort_unstable();
            j
        }
        MaskStrategy::Random { ratio } => {
            let k = masked_joint_count(*ratio, layout.joint_count());
            let mut j = sample_distinct(layout.joint_count(), k, rng);
            j.sort_unstable();
            j
        }
    };
    joints.dedup();
    debug_assert!(!joints.is_empty() && joints.len() < layout.joint_count());
    Ok(joints)
}

/// Replaces the masked rows of `x` (shape `[N, D]`) with the mask token
/// (shape `[D]` or `[1, D]`), leaving every other row bit-identical. The
/// token tensor is shared, so gradients flow back into it once per masked
/// row.
pub fn apply_mask<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorId,
    mask: &[usize],
    token: TensorId,
) -> Result<TensorId> {
    let n = *tape
        .shape(x)
        .first()
        .ok_or_else(|| Error::Numeric("apply_mask expects a rank-2 input".into()))?;
    if mask.is_empty() {
        return Err(Error::Config("mask is empty; at least one joint required".into()));
    }
    for &j in mask {
        if j >= n {
            return Err(Error::Config(format!(
                "masked joint index {j} out of range for {n} joints"
            )));
        }
    }
    let tokens = tape.repeat_rows(token, mask.len())?;
    tape.replace_rows(x, mask, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stream;

    fn coco() -> SkeletonLayout {
        SkeletonLayout::coco17()
    }

    #[test]
    fn fixed_region_set_resolves_to_the_union_of_regions() {
        let mut rng = stream(0, "mask", 0, 0);
        let m = resolve_mask(
            &MaskStrategy::BodyParts { regions: vec![3, 5] },
            &coco(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(m, vec![8, 10, 14, 16]);
        let head = resolve_mask(
            &MaskStrategy::BodyParts { regions: vec![0] },
            &coco(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(head, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn body_part_masks_do_not_depend_on_the_seed() {
        let s = MaskStrategy::BodyParts { regions: vec![1, 4] };
        let a = resolve_mask(&s, &coco(), &mut stream(1, "mask", 0, 0)).unwrap();
        let b = resolve_mask(&s, &coco(), &mut stream(999, "mask", 5, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_full_region_sets_are_rejected() {
        let mut rng = stream(0, "mask", 0, 0);
        assert!(resolve_mask(
            &MaskStrategy::BodyParts { regions: vec![] },
            &coco(),
            &mut rng
        )
        .is_err());
        assert!(resolve_mask(
            &MaskStrategy::BodyParts {
                regions: vec![0, 1, 2, 3, 4, 5]
            },
            &coco(),
            &mut rng
        )
        .is_err());
        assert!(MaskStrategy::RandomRegions { count: 6 }.validate(&coco()).is_err());
        assert!(MaskStrategy::Random { ratio: 1.0 }.validate(&coco()).is_err());
        assert!(MaskStrategy::Random { ratio: 0.0 }.validate(&coco()).is_err());
    }

    #[test]
    fn half_ratio_on_17_joints_masks_exactly_9() {
        let mut rng = stream(4, "mask", 0, 0);
        let m = resolve_mask(&MaskStrategy::Random { ratio: 0.5 }, &coco(), &mut rng).unwrap();
        assert_eq!(m.len(), 9);
    }

    #[test]
    fn ratio_table_cardinalities_match_rounding_rule() {
        for (ratio, expect) in [(0.3, 5), (0.5, 9), (0.7, 12), (0.9, 15)] {
            assert_eq!(masked_joint_count(ratio, 17), expect, "ratio {ratio}");
        }
    }

    #[test]
    fn random_masks_are_reproducible_and_within_bounds() {
        let s = MaskStrategy::Random { ratio: 0.7 };
        let a = resolve_mask(&s, &coco(), &mut stream(7, "mask", 2, 9)).unwrap();
        let b = resolve_mask(&s, &coco(), &mut stream(7, "mask", 2, 9)).unwrap();
        assert_eq!(a, b);
        let c = resolve_mask(&s, &coco(), &mut stream(7, "mask", 2, 10)).unwrap();
        assert_ne!(a, c, "different stream index should move the mask");
        for m in [&a, &c] {
            assert!(!m.is_empty() && m.len() < 17);
            assert!(m.windows(2).all(|w| w[0] < w[1]), "sorted, distinct");
        }
    }

    #[test]
    fn region_sampling_draws_whole_regions() {
        let layout = coco();
        for i in 0..20 {
            let mut rng = stream(3, "mask", 0, i);
            let m = resolve_mask(&MaskStrategy::RandomRegions { count: 2 }, &layout, &mut rng)
                .unwrap();
            // The mask must be a union of exactly two regions.
            let covered: usize = (0..layout.region_count())
                .filter(|&r| layout.region(r).iter().all(|j| m.contains(j)))
                .map(|r| layout.region(r).len())
                .sum();
            assert_eq!(covered, m.len());
        }
    }

    #[test]
    fn zero_token_zeroes_only_the_masked_row() {
        let mut tape = Tape::<f64>::new();
        let x_data: Vec<f64> = (0..17 * 3).map(|i| i as f64 + 1.0).collect();
        let x = tape.constant(x_data.clone(), &[17, 3]).unwrap();
        let token = tape.constant(vec![0.0; 3], &[3]).unwrap();
        let out = apply_mask(&mut tape, x, &[0], token).unwrap();
        assert_eq!(&tape.value(out)[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&tape.value(out)[3..], &x_data[3..]);
    }

    #[test]
    fn masking_a_token_valued_input_is_a_fixed_point() {
        let mut tape = Tape::<f64>::new();
        let token_vals = vec![0.3, -1.2, 0.8];
        let token = tape.constant(token_vals.clone(), &[3]).unwrap();
        let x = tape.repeat_rows(token, 17).unwrap();
        let out = apply_mask(&mut tape, x, &[2, 5, 11], token).unwrap();
        assert_eq!(tape.value(out), tape.value(x));
    }

    #[test]
    fn token_gradient_counts_the_masked_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![1.0; 17 * 4], &[17, 4]).unwrap();
        let token = tape.leaf(vec![0.5, 0.5, 0.5, 0.5], &[4], true).unwrap();
        let out = apply_mask(&mut tape, x, &[3, 7, 9], token).unwrap();
        let loss = tape.sum_all(out).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(token).unwrap(), &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn out_of_range_joint_index_is_a_config_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![0.0; 17 * 2], &[17, 2]).unwrap();
        let token = tape.constant(vec![0.0; 2], &[2]).unwrap();
        let err = apply_mask(&mut tape, x, &[17], token).unwrap_err();
        assert!(err.to_string().contains("17"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn spec_json_round_trip_keeps_values() {
        let spec = MaskSpec {
            strategy: MaskStrategy::BodyParts { regions: vec![3, 5] },
            rng_seed: 11,
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: MaskSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        let err = serde_json::from_str::<MaskSpec>(
            "{\"strategy\":{\"kind\":\"random\",\"ratio\":0.5},\"rng_seed\":1,\"extra\":2}",
        );
        assert!(err.is_err(), "unknown keys must be rejected");
    }
}
