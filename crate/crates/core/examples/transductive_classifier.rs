//! Runs the classifier head on hand-made embeddings: attention over the query
//! set refines the prototypes, then queries are scored by Mahalanobis
//! distance.

use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tnt::classifier::{head_forward, AttentionParams, ClassifierConfig, Inference};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.6)?;
    let centers = array![[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
    let (n_way, k_shot, per_class) = (3, 1, 4);

    let jitter = |c: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..3).map(|d| centers[[c, d]] + noise.sample(rng)).collect()
    };
    let support_labels: Vec<usize> = (0..n_way).collect();
    let mut support = Array2::zeros((n_way * k_shot, 3));
    for (i, &c) in support_labels.iter().enumerate() {
        support.row_mut(i).assign(&ndarray::Array1::from(jitter(c, &mut rng)));
    }
    let query_labels: Vec<usize> = (0..n_way * per_class).map(|i| i % n_way).collect();
    let mut query = Array2::zeros((query_labels.len(), 3));
    for (i, &c) in query_labels.iter().enumerate() {
        query.row_mut(i).assign(&ndarray::Array1::from(jitter(c, &mut rng)));
    }

    // Class embeddings as a text conditioner might produce them.
    let e_class = centers.clone();
    let attention = AttentionParams::identity(3);
    let config = ClassifierConfig::default();

    for inference in [Inference::Inductive, Inference::Transductive] {
        let e = matches!(inference, Inference::Transductive).then_some(&e_class);
        let head = head_forward(e, &query, &support, &support_labels, n_way, &attention, &config, inference)?;
        let probs = head.probabilities();
        let correct = query_labels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| {
                let row = probs.row(i);
                row.iter().enumerate().all(|(j, &p)| j == l || p < row[l])
            })
            .count();
        println!("{inference:?}: {correct}/{} queries correct", query_labels.len());
        println!("prototypes:\n{:.3}", head.model.prototypes);
        if matches!(inference, Inference::Transductive) {
            println!("attention over queries:\n{:.2}", head.relevance.attention_block());
        }
    }
    Ok(())
}
