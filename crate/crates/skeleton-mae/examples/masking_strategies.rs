//! Shows what each masking strategy hides: fixed body-part unions,
//! randomly drawn regions, and joint-ratio masks, with the joint counts
//! the ratios resolve to on the 17-joint layout.
//!
//!     cargo run --example masking_strategies

use skeleton_mae::masking::{masked_joint_count, resolve_mask, MaskStrategy};
use skeleton_mae::numerics::stream;
use skeleton_mae::skeleton::SkeletonLayout;

fn main() -> skeleton_mae::Result<()> {
    let layout = SkeletonLayout::coco17();
    for r in 0..layout.region_count() {
        println!("region {r}: joints {:?}", layout.region(r));
    }
    println!();

    let strategies = [
        MaskStrategy::BodyParts { regions: vec![3] },
        MaskStrategy::BodyParts {
            regions: vec![3, 5],
        },
        MaskStrategy::RandomRegions { count: 1 },
        MaskStrategy::RandomRegions { count: 2 },
        MaskStrategy::Random { ratio: 0.3 },
        MaskStrategy::Random { ratio: 0.5 },
        MaskStrategy::Random { ratio: 0.7 },
        MaskStrategy::Random { ratio: 0.9 },
    ];
    for (i, strategy) in strategies.iter().enumerate() {
        let mut rng = stream(42, "mask", 0, i as u64);
        let mask = resolve_mask(strategy, &layout, &mut rng)?;
        println!(
            "{:<18} -> {} joints: {:?}",
            strategy.label(),
            mask.len(),
            mask
        );
    }

    println!();
    println!("joints hidden by each ratio on 17 joints:");
    for ratio in [0.3, 0.5, 0.7, 0.9] {
        println!("  {:>3.0}% -> {}", ratio * 100.0, masked_joint_count(ratio, 17));
    }
    Ok(())
}
