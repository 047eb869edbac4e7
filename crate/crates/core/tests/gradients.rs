//! End-to-end gradient verification: the analytic gradients of the full
//! joint objective (and each loss term alone) with respect to every
//! parameter tensor must match central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vkge_core::data::{gen_synthetic, Dataset, SynthConfig};
use vkge_core::gradcheck::{fd_grad, max_rel_err, DEFAULT_STEP};
use vkge_core::objectives::JointLossWeights;
use vkge_core::training::{
    joint_batch_grad, joint_batch_loss, EncoderKind, KgAssign, KgSampler, ModelState, TrainConfig,
};

#[derive(Clone)]
struct GradScene {
    state: ModelState,
    ds: Dataset,
    batch: Vec<usize>,
    assigns: Vec<Option<KgAssign>>,
    weights: JointLossWeights,
    cfg: TrainConfig,
}

impl GradScene {
    fn eval(&self) -> f64 {
        joint_batch_loss(
            &self.state,
            &self.ds,
            &self.batch,
            &self.assigns,
            &self.weights,
            &self.cfg.kge,
        )
        .unwrap()
    }
}

fn scene(seed: u64, encoder: EncoderKind, weights: JointLossWeights) -> GradScene {
    let ds = gen_synthetic(&SynthConfig {
        entities: 16,
        relations: 4,
        triplets: 20,
        latent_dim: 4,
        seed,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        embed_dim: 5,
        hidden_dim: 6,
        encoder,
        // moderate temperature keeps the contrastive term well conditioned
        // for finite differences; τ itself is still a checked parameter
        tau_init: 0.8,
        seed,
        ..Default::default()
    };
    let state = ModelState::new(&ds, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch: Vec<usize> = (0..4).map(|_| rng.gen_range(0..ds.video_count())).collect();
    let sampler = KgSampler::new(&ds);
    let assigns: Vec<Option<KgAssign>> = batch
        .iter()
        .map(|&i| sampler.draw(&ds, vkge_core::VideoId(i as u32), 3, &mut rng))
        .collect();
    GradScene {
        state,
        ds,
        batch,
        assigns,
        weights,
        cfg,
    }
}

fn check_scene(scene: &GradScene) {
    let (_, grads) = joint_batch_grad(
        &scene.state,
        &scene.ds,
        &scene.batch,
        &scene.assigns,
        &scene.weights,
        &scene.cfg.kge,
    )
    .unwrap();
    for id in scene.state.present_ids() {
        let fd = fd_grad(
            scene,
            DEFAULT_STEP,
            |s| s.state.param_mut(id).unwrap(),
            |s| s.eval(),
        );
        let err = max_rel_err(grads.get(id), &fd);
        assert!(
            err < 1e-4,
            "{id:?} gradient off by {err:.3e} (weights {:?})",
            scene.weights
        );
    }
}

#[test]
fn joint_objective_gradients_match_finite_differences() {
    let mixes = [
        JointLossWeights {
            kg: 0.35,
            clip: 0.35,
            tag: 0.3,
        },
        JointLossWeights {
            kg: 1.0,
            clip: 0.0,
            tag: 0.0,
        },
        JointLossWeights {
            kg: 0.0,
            clip: 1.0,
            tag: 0.0,
        },
        JointLossWeights {
            kg: 0.0,
            clip: 0.0,
            tag: 1.0,
        },
    ];
    for seed in 0..5u64 {
        for encoder in [EncoderKind::Lookup, EncoderKind::Mlp] {
            for weights in mixes {
                check_scene(&scene(seed, encoder, weights));
            }
        }
    }
}

#[test]
fn combined_gradient_is_the_weighted_sum_of_parts() {
    let weights = JointLossWeights {
        kg: 0.35,
        clip: 0.35,
        tag: 0.3,
    };
    let s = scene(11, EncoderKind::Lookup, weights);
    let (_, combined) = joint_batch_grad(&s.state, &s.ds, &s.batch, &s.assigns, &weights, &s.cfg.kge).unwrap();
    let solo = |w: JointLossWeights| {
        joint_batch_grad(&s.state, &s.ds, &s.batch, &s.assigns, &w, &s.cfg.kge)
            .unwrap()
            .1
    };
    let kg = solo(JointLossWeights { kg: 1.0, clip: 0.0, tag: 0.0 });
    let clip = solo(JointLossWeights { kg: 0.0, clip: 1.0, tag: 0.0 });
    let tag = solo(JointLossWeights { kg: 0.0, clip: 0.0, tag: 1.0 });
    for id in s.state.present_ids() {
        let c = combined.get(id);
        let (a, b, d) = (kg.get(id), clip.get(id), tag.get(id));
        for i in 0..c.as_slice().len() {
            let expect = 0.35 * a.as_slice()[i] + 0.35 * b.as_slice()[i] + 0.3 * d.as_slice()[i];
            assert!(
                (c.as_slice()[i] - expect).abs() < 1e-12,
                "{id:?}[{i}] combined {} vs weighted sum {expect}",
                c.as_slice()[i]
            );
        }
    }
}
