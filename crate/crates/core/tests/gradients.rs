use modseg::fisher::GmmFitOptions;
use modseg::imaging::{ImagePlane, Mask};
use modseg::lr::UnrollConfig;
use modseg::vit::{fit_patch_gmm, gradient_check, SegModel, Variant, VitConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-5;

fn config(variant: Variant) -> VitConfig {
    VitConfig {
        image_size: 16,
        patch_size: 8,
        channels: 3,
        embed_dim: 16,
        layers: 2,
        heads: 2,
        mlp_dim: 16,
        variant,
        fv_components: 2,
        unroll: UnrollConfig {
            stages: 2,
            psf_size: 3,
            embed_dim: 8,
            heads: 2,
            mlp_dim: 8,
            patch_size: 4,
        },
    }
}

fn image(rng: &mut ChaCha8Rng) -> ImagePlane {
    ImagePlane::from_fn(16, 16, 3, |_, _, _| rng.random_range(0.05..0.95))
}

/// A model whose every parameter, including the zero-initialized decoder
/// projections, is moved off its initial value.
fn perturbed(variant: Variant, rng: &mut ChaCha8Rng) -> SegModel {
    let gmm = if variant.has_fv() {
        let imgs: Vec<ImagePlane> = (0..4).map(|_| image(rng)).collect();
        let opts = GmmFitOptions { components: 2, seed: 1, ..Default::default() };
        Some(fit_patch_gmm(&imgs, 8, &opts).unwrap().model)
    } else {
        None
    };
    let mut model = SegModel::init(config(variant), gmm, 7).unwrap();
    for t in model.params.values_mut() {
        for v in &mut t.data {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    model
}

#[test]
fn every_group_of_every_variant_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for variant in Variant::ALL {
        let model = perturbed(variant, &mut rng);
        let img = image(&mut rng);
        let mask = Mask::from_fn(16, 16, |y, x| (y as i32 - 8).pow(2) + (x as i32 - 6).pow(2) < 20);
        let checks = gradient_check(&model, &img, &mask, STEP, 4).unwrap();
        let groups = model.param_groups();
        assert_eq!(checks.len(), groups.len());
        for c in &checks {
            assert!(c.probed > 0, "{variant}: {} probed nothing", c.group);
            assert!(
                c.rel_error <= TOLERANCE,
                "{variant}: group {} relative error {:e}",
                c.group,
                c.rel_error
            );
        }
        if variant.has_lr() {
            assert!(checks.iter().any(|c| c.group.starts_with("lr.")));
        }
        if variant.has_fv() {
            assert!(checks.iter().any(|c| c.group == "fv_proj"));
        }
    }
}
