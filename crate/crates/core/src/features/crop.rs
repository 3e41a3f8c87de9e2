use rand::Rng as _;

use super::FeatureStack;
use crate::seed::Rng;

/// Window of `target` frames starting at `offset`, shared by every layer.
/// Clips shorter than `target` are wrap-padded from frame 0.
pub fn crop_at(stack: &FeatureStack, offset: usize, target: usize) -> FeatureStack {
    let frames = stack.frames();
    if frames == target && offset == 0 {
        return stack.clone();
    }
    let mut values = Vec::with_capacity(stack.layers() * target * stack.dim());
    for l in 0..stack.layers() {
        for i in 0..target {
            values.extend_from_slice(stack.frame(l, (offset + i) % frames));
        }
    }
    FeatureStack::new(stack.layers(), target, stack.dim(), values).expect("cropping preserves stack invariants")
}

/// Training crop: uniform offset in `[0, T - target]`.
pub fn random_crop(stack: &FeatureStack, target: usize, rng: &mut Rng) -> FeatureStack {
    assert!(target >= 1, "crop target must be at least one frame");
    let offset = if stack.frames() > target {
        rng.random_range(0..=stack.frames() - target)
    } else {
        0
    };
    crop_at(stack, offset, target)
}

/// Deterministic evaluation crop.
pub fn center_crop(stack: &FeatureStack, target: usize) -> FeatureStack {
    assert!(target >= 1, "crop target must be at least one frame");
    let offset = stack.frames().saturating_sub(target) / 2;
    crop_at(stack, offset, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    fn ramp(layers: usize, frames: usize, dim: usize) -> FeatureStack {
        let values = (0..layers * frames * dim).map(|v| v as f32).collect();
        FeatureStack::new(layers, frames, dim, values).unwrap()
    }

    #[test]
    fn equal_length_is_identity() {
        let s = ramp(3, 5, 2);
        let mut rng = rng_for(1, "crop");
        assert_eq!(random_crop(&s, 5, &mut rng), s);
        assert_eq!(center_crop(&s, 5), s);
    }

    #[test]
    fn window_is_contiguous_and_shared_across_layers() {
        let s = ramp(3, 10, 2);
        let mut seen = [false; 7];
        for seed in 0..200 {
            let mut rng = rng_for(seed, "crop");
            let c = random_crop(&s, 4, &mut rng);
            let hit: Vec<usize> = (0..=6)
                .filter(|&o| (0..3).all(|l| (0..4).all(|i| c.frame(l, i) == s.frame(l, o + i))))
                .collect();
            assert_eq!(hit.len(), 1, "crop must match exactly one window");
            seen[hit[0]] = true;
        }
        assert!(seen.iter().all(|&b| b), "every offset reachable: {seen:?}");
    }

    #[test]
    fn short_clips_wrap_from_frame_zero() {
        let s = ramp(2, 3, 1);
        let mut rng = rng_for(0, "crop");
        let c = random_crop(&s, 5, &mut rng);
        for l in 0..2 {
            let got: Vec<f32> = (0..5).map(|t| c.frame(l, t)[0]).collect();
            let want: Vec<f32> = [0, 1, 2, 0, 1].iter().map(|&t| s.frame(l, t)[0]).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn center_crop_offset() {
        let s = ramp(1, 10, 1);
        let c = center_crop(&s, 4);
        assert_eq!(c.frame(0, 0), s.frame(0, 3));
    }
}
