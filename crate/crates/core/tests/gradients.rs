//! Analytic gradients against central finite differences.

mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnt::encoder::{encode_backward, encode_batch, EncoderConfig, EncoderParams, FilmParams};
use tnt::model::{episode_loss_and_grads, Trainable, Variant};
use tnt::nn::NormScope;
use tnt::trainer::{gradient_check, gradient_check_against, GradCheckOptions};

fn rel_err(a: f64, n: f64) -> f64 {
    let s = a.abs().max(n.abs());
    if s < 1e-8 {
        0.0
    } else {
        (a - n).abs() / s
    }
}

fn random_film<R: Rng>(dims: &[usize], rng: &mut R) -> FilmParams {
    let mut f = FilmParams::identity(dims);
    for s in &mut f.stages {
        s.gamma.mapv_inplace(|_| 1.0 + 0.5 * (rng.random::<f64>() - 0.5));
        s.beta.mapv_inplace(|_| 0.5 * (rng.random::<f64>() - 0.5));
    }
    f
}

fn film_slot(f: &mut FilmParams, stage: usize, c: usize, which: usize) -> &mut f64 {
    if which == 0 {
        &mut f.stages[stage].gamma[c]
    } else {
        &mut f.stages[stage].beta[c]
    }
}

fn check_encoder(scope: NormScope, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = EncoderConfig::new(3, vec![4, 5], 3);
    cfg.norm = scope;
    let params = EncoderParams::init(&cfg, &mut rng).unwrap();
    let film = random_film(&cfg.stage_dims, &mut rng);
    let videos: Vec<Array2<f64>> = (0..3)
        .map(|_| Array2::from_shape_simple_fn((4, 3), || rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    let refs: Vec<&Array2<f64>> = videos.iter().collect();
    let weights = Array2::from_shape_simple_fn((3, 3), || rng.random::<f64>() - 0.5);
    let objective = |p: &EncoderParams, f: &FilmParams| (encode_batch(&refs, p, f).unwrap().0 * &weights).sum();

    let (_, trace) = encode_batch(&refs, &params, &film).unwrap();
    let (g_params, g_film) = encode_backward(&trace, &params, &film, &weights);
    let h = 1e-5;
    let mut worst: f64 = 0.0;

    for s in 0..params.stages.len() {
        for idx in 0..params.stages[s].weight.len() {
            let mut p = params.clone();
            let w = p.stages[s].weight.as_slice_mut().unwrap();
            w[idx] += h;
            let plus = objective(&p, &film);
            p.stages[s].weight.as_slice_mut().unwrap()[idx] -= 2.0 * h;
            let minus = objective(&p, &film);
            let n = (plus - minus) / (2.0 * h);
            worst = worst.max(rel_err(g_params.stages[s].weight.as_slice().unwrap()[idx], n));
        }
        for c in 0..film.stages[s].gamma.len() {
            for which in 0..2 {
                let mut f = film.clone();
                *film_slot(&mut f, s, c, which) += h;
                let plus = objective(&params, &f);
                *film_slot(&mut f, s, c, which) -= 2.0 * h;
                let minus = objective(&params, &f);
                let n = (plus - minus) / (2.0 * h);
                let mut g = g_film.clone();
                worst = worst.max(rel_err(*film_slot(&mut g, s, c, which), n));
            }
        }
    }
    for idx in 0..params.projection.weight.len() {
        let mut p = params.clone();
        p.projection.weight.as_slice_mut().unwrap()[idx] += h;
        let plus = objective(&p, &film);
        p.projection.weight.as_slice_mut().unwrap()[idx] -= 2.0 * h;
        let minus = objective(&p, &film);
        let n = (plus - minus) / (2.0 * h);
        worst = worst.max(rel_err(g_params.projection.weight.as_slice().unwrap()[idx], n));
    }
    assert!(worst <= 1e-4, "{scope:?} seed {seed}: max rel err {worst:e}");
}

#[test]
fn encoder_and_film_gradients_match_finite_differences() {
    for seed in 0..4 {
        check_encoder(NormScope::Features, seed);
        check_encoder(NormScope::Time, seed);
    }
}

fn all_groups() -> Trainable {
    Trainable {
        encoder: true,
        conditioner: true,
        attention: true,
    }
}

#[test]
fn full_pipeline_gradients_for_every_variant() {
    let ds = small_dataset(3);
    let e = embedder();
    for variant in Variant::ALL {
        for seed in 0..2 {
            let model = small_model(variant, ds.frame_dim(), e.dim(), seed);
            let ep = episode(&ds, 3, 2, 6, seed, 0);
            let report = gradient_check(
                &model,
                &ep,
                &e,
                &GradCheckOptions {
                    samples: 250,
                    seed,
                    groups: Some(all_groups()),
                    ..GradCheckOptions::default()
                },
            )
            .unwrap();
            assert!(report.checked > 50, "{variant}: {report:?}");
            assert!(
                report.max_relative_error <= 1e-4,
                "{variant} seed {seed}: {report:?}"
            );
        }
    }
}

#[test]
fn corrupted_gradient_is_detected() {
    let ds = small_dataset(5);
    let e = embedder();
    let model = small_model(Variant::Tnt, ds.frame_dim(), e.dim(), 1);
    let ep = episode(&ds, 3, 1, 6, 9, 0);
    let mut grads = episode_loss_and_grads(&model, &ep, &e, Variant::Tnt).unwrap().grads;
    // Corrupt the largest attention gradient and check only that tensor.
    let w_q = grads.attention.w_q.as_slice_mut().unwrap();
    let (idx, _) = w_q
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .unwrap();
    w_q[idx] *= 1.1;
    let report = gradient_check_against(
        &model,
        &ep,
        &e,
        &grads,
        &GradCheckOptions {
            samples: 10_000,
            groups: Some(Trainable {
                encoder: false,
                conditioner: false,
                attention: true,
            }),
            ..GradCheckOptions::default()
        },
    )
    .unwrap();
    assert!(report.max_relative_error > 1e-2, "{report:?}");
    assert_eq!(report.worst.unwrap().tensor, "attention.w_q");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn random_text_transductive_episodes_pass_gradcheck(seed in 0u64..1000, k in 1usize..3) {
        let ds = small_dataset(seed);
        let e = embedder();
        let model = small_model(Variant::Tnt, ds.frame_dim(), e.dim(), seed);
        let ep = episode(&ds, 3, k, 6, seed, 1);
        let report = gradient_check(&model, &ep, &e, &GradCheckOptions { samples: 60, seed, ..GradCheckOptions::default() }).unwrap();
        prop_assert!(report.max_relative_error <= 1e-4, "{:?}", report);
    }
}
