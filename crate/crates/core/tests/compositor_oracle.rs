mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::oracle;
use tableau_core::compositor::{build_generation_input, render_live};

#[test]
fn live_render_matches_per_pixel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let (scene, frames) = oracle::random_scene(&mut rng);
        let got = render_live(&scene, &frames).unwrap();
        let want = oracle::live_render(&scene, &frames);
        assert_eq!(oracle::diff_count(&got, &want), 0, "case {case}");
    }
}

#[test]
fn generation_mask_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 100 {
        let (mut scene, frames) = oracle::random_scene(&mut rng);
        if scene.feeds.is_empty() {
            continue;
        }
        for f in &mut scene.feeds {
            f.preservation = rand::Rng::random_range(&mut rng, 0.0..=1.0);
        }
        let input = build_generation_input(&scene, &frames).unwrap();
        for (x, y, v) in input.mask.enumerate_pixels() {
            assert_eq!(v[0], oracle::mask_value(&scene, x, y), "({x},{y})");
        }
        checked += 1;
    }
}
