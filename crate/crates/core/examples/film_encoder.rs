//! Encodes one video with and without FiLM modulation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnt::encoder::{encode_video, film, EncoderConfig, EncoderParams, FilmParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let rows = ndarray::array![[2.0, -1.0]];
    let out = film(rows.view(), &ndarray::array![3.0, 0.5], &ndarray::array![1.0, 0.0])?;
    println!("film([2, -1]; gamma [3, 0.5], beta [1, 0]) = {out}");

    let cfg = EncoderConfig::new(8, vec![16, 12], 6);
    let params = EncoderParams::init(&cfg, &mut rng)?;
    let video = Array2::from_shape_simple_fn((5, 8), || rng.random::<f64>() * 2.0 - 1.0);

    let plain = encode_video(&video, &params, &FilmParams::identity(&cfg.stage_dims))?;
    println!("identity modulation: {plain:.4}");

    let mut modulated = FilmParams::identity(&cfg.stage_dims);
    for stage in &mut modulated.stages {
        stage.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        stage.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let v = encode_video(&video, &params, &modulated)?;
    println!("random modulation:   {v:.4}");

    // Mean pooling over frames ignores their order.
    let mut reversed = video.clone();
    reversed.invert_axis(ndarray::Axis(0));
    let r = encode_video(&reversed, &params, &modulated)?;
    println!("max change after reversing frames: {:.2e}", (&r - &v).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));
    Ok(())
}
