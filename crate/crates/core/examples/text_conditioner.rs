//! Turns support texts into class embeddings, a task embedding and FiLM
//! parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnt::conditioner::{
    class_embedding, embed_texts, generate_film, task_embedding, ConditionerConfig, ConditionerKind, ConditionerParams,
    TaskEncoder, TextEmbedder,
};
use tnt::encoder::EncoderConfig;
use tnt::nn::Linear;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let embedder = TextEmbedder::hashed(256)?;
    let texts = [
        "put plate down",
        "put cup down",
        "place aubergine onto pan",
        "place carrot onto pan",
    ];
    let labels = [0, 0, 1, 1];
    let e = embed_texts(&texts, &embedder)?;
    println!("text embeddings: {} x {}", e.nrows(), e.ncols());

    let encoder = EncoderConfig::new(32, vec![16], 8);
    let cfg = ConditionerConfig {
        kind: ConditionerKind::Text,
        input_dim: embedder.dim(),
        task_dim: 4,
        hidden_dim: 10,
        video_stage_dims: vec![8],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ConditionerParams::init(&cfg, &encoder, &mut rng)?;
    let TaskEncoder::Text { class_proj, task_proj } = &params.task_encoder else {
        unreachable!("text conditioner")
    };

    let e_class = class_embedding(&e, &labels, 2, class_proj)?;
    let e_task = task_embedding(&e, task_proj)?;
    println!("class embeddings:\n{e_class:.3}");
    println!("task embedding: {e_task:.3}");

    let (film, _) = generate_film(&e_task, &params.film_generator, &encoder)?;
    println!("fresh generator, gamma[0..4] = {:.3}", film.stages[0].gamma.slice(ndarray::s![..4]));

    // A trained generator has a non-zero output layer.
    let out = &params.film_generator.output;
    params.film_generator.output = Linear::random(out.input_dim(), out.output_dim(), 0.5, &mut rng);
    let (film, _) = generate_film(&e_task, &params.film_generator, &encoder)?;
    println!("perturbed generator, gamma[0..4] = {:.3}", film.stages[0].gamma.slice(ndarray::s![..4]));
    println!("perturbed generator, beta[0..4]  = {:.3}", film.stages[0].beta.slice(ndarray::s![..4]));
    Ok(())
}
