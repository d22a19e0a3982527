//! Meta-splits over classes and N-way K-shot episode sampling.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::{MultimodalDataset, MultimodalInstance};
use crate::error::{Error, Result};

/// Disjoint meta-train / meta-val / meta-test class partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    pub train_classes: BTreeSet<String>,
    pub val_classes: BTreeSet<String>,
    pub test_classes: BTreeSet<String>,
}

/// Randomly partitions `class_ids` into sets of exactly `counts` sizes.
pub fn make_class_split(
    class_ids: &BTreeSet<String>,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<ClassSplit> {
    let (n_train, n_val, n_test) = counts;
    if n_train + n_val + n_test != class_ids.len() {
        return Err(Error::Config(format!(
            "split counts {n_train}+{n_val}+{n_test} do not add up to {} classes",
            class_ids.len()
        )));
    }
    let mut ids: Vec<&String> = class_ids.iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| ids[range].iter().map(|s| (*s).clone()).collect();
    Ok(ClassSplit {
        train_classes: take(0..n_train),
        val_classes: take(n_train..n_train + n_val),
        test_classes: take(n_train + n_val..ids.len()),
    })
}

/// One N-way K-shot task. Labels are local (`0..n_way`), assigned in the
/// order the classes were sampled; `classes[label]` recovers the class id.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    pub support: Vec<(&'a MultimodalInstance, usize)>,
    pub query: Vec<(&'a MultimodalInstance, usize)>,
    pub classes: Vec<String>,
    pub n_way: usize,
    pub k_shot: usize,
    pub query_size: usize,
}

impl<'a> Episode<'a> {
    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|(_, l)| *l).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|(_, l)| *l).collect()
    }

    /// Checks every structural invariant of an episode.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Internal(format!("episode invariant violated: {m}")));
        if self.support.len() != self.n_way * self.k_shot {
            return fail(format!("|support| = {}", self.support.len()));
        }
        if self.query.len() != self.query_size {
            return fail(format!("|query| = {}", self.query.len()));
        }
        if self.classes.len() != self.n_way {
            return fail(format!("{} classes for {}-way", self.classes.len(), self.n_way));
        }
        let mut support_counts = vec![0usize; self.n_way];
        let mut query_counts = vec![0usize; self.n_way];
        for (inst, label) in &self.support {
            if *label >= self.n_way || inst.class_id != self.classes[*label] {
                return fail(format!("support label {label} for `{}`", inst.instance_id));
            }
            support_counts[*label] += 1;
        }
        for (inst, label) in &self.query {
            if *label >= self.n_way || inst.class_id != self.classes[*label] {
                return fail(format!("query label {label} for `{}`", inst.instance_id));
            }
            query_counts[*label] += 1;
        }
        if support_counts.iter().any(|&c| c != self.k_shot) {
            return fail(format!("support counts {support_counts:?}"));
        }
        if self.query_size % self.n_way != 0
            || query_counts.iter().any(|&c| c != self.query_size / self.n_way)
        {
            return fail(format!("query counts {query_counts:?}"));
        }
        let support_ids: HashSet<&str> = self
            .support
            .iter()
            .map(|(i, _)| i.instance_id.as_str())
            .collect();
        if support_ids.len() != self.support.len() {
            return fail("duplicate support instance".into());
        }
        let mut query_ids = HashSet::new();
        for (inst, _) in &self.query {
            if support_ids.contains(inst.instance_id.as_str())
                || !query_ids.insert(inst.instance_id.as_str())
            {
                return fail(format!("instance `{}` reused", inst.instance_id));
            }
        }
        Ok(())
    }
}

/// Samples a balanced episode: `k_shot` support and `query_size / n_way`
/// query instances per class, all distinct.
pub fn sample_episode<'a, R: Rng + ?Sized>(
    dataset: &'a MultimodalDataset,
    classes: &BTreeSet<String>,
    n_way: usize,
    k_shot: usize,
    query_size: usize,
    rng: &mut R,
) -> Result<Episode<'a>> {
    if n_way == 0 || k_shot == 0 || query_size == 0 {
        return Err(Error::Sampling(
            "n_way, k_shot and query_size must be positive".into(),
        ));
    }
    if query_size % n_way != 0 {
        return Err(Error::Sampling(format!(
            "query_size {query_size} is not divisible by n_way {n_way}"
        )));
    }
    if classes.len() < n_way {
        return Err(Error::Sampling(format!(
            "{n_way}-way episode requested from only {} classes",
            classes.len()
        )));
    }
    let per_class_query = query_size / n_way;
    let needed = k_shot + per_class_query;
    let pool: Vec<&String> = classes.iter().collect();
    let chosen: Vec<&String> = pool.choose_multiple(rng, n_way).copied().collect();

    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut query = Vec::with_capacity(query_size);
    for (label, class) in chosen.iter().enumerate() {
        let members = dataset.class_members(class);
        if members.len() < needed {
            return Err(Error::Sampling(format!(
                "class `{class}` has {} instances, episode needs {needed}",
                members.len()
            )));
        }
        let picked: Vec<usize> = members.choose_multiple(rng, needed).copied().collect();
        let instances = dataset.instances();
        support.extend(picked[..k_shot].iter().map(|&i| (&instances[i], label)));
        query.extend(picked[k_shot..].iter().map(|&i| (&instances[i], label)));
    }
    query.shuffle(rng);
    Ok(Episode {
        support,
        query,
        classes: chosen.into_iter().cloned().collect(),
        n_way,
        k_shot,
        query_size,
    })
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of episode `index` under `base_seed`: `splitmix64(base + (index+1)·γ)`.
///
/// Episode `i` depends only on `(base_seed, i)`, so episodes can be sampled in
/// any order or in parallel.
pub fn episode_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn episode_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(episode_seed(base_seed, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, SyntheticSpec};

    fn ids(n: usize) -> BTreeSet<String> {
        (0..n).map(|i| format!("class{i:03}")).collect()
    }

    fn dataset() -> MultimodalDataset {
        generate_dataset(&SyntheticSpec {
            n_classes: 10,
            instances_per_class: 20,
            frame_count: 2,
            frame_dim: 3,
            latent_dim: 2,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn split_sizes_follow_counts() {
        let split = make_class_split(&ids(100), (64, 12, 24), 5).unwrap();
        assert_eq!(split.train_classes.len(), 64);
        assert_eq!(split.val_classes.len(), 12);
        assert_eq!(split.test_classes.len(), 24);
        let union: BTreeSet<_> = split
            .train_classes
            .iter()
            .chain(&split.val_classes)
            .chain(&split.test_classes)
            .cloned()
            .collect();
        assert_eq!(union, ids(100));
    }

    #[test]
    fn degenerate_split_puts_everything_in_train() {
        let split = make_class_split(&ids(7), (7, 0, 0), 1).unwrap();
        assert_eq!(split.train_classes, ids(7));
        assert!(split.val_classes.is_empty() && split.test_classes.is_empty());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let a = make_class_split(&ids(10), (4, 3, 3), 9).unwrap();
        assert_eq!(a, make_class_split(&ids(10), (4, 3, 3), 9).unwrap());
        assert_ne!(a, make_class_split(&ids(10), (4, 3, 3), 10).unwrap());
    }

    #[test]
    fn split_count_mismatch_is_config_error() {
        let err = make_class_split(&ids(10), (4, 3, 2), 0).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn five_way_five_shot_fifty_queries() {
        let ds = dataset();
        let mut rng = episode_rng(1, 0);
        let ep = sample_episode(&ds, ds.classes(), 5, 5, 50, &mut rng).unwrap();
        ep.validate().unwrap();
        assert_eq!(ep.support.len(), 25);
        assert_eq!(ep.query.len(), 50);
        for label in 0..5 {
            assert_eq!(ep.query_labels().iter().filter(|&&l| l == label).count(), 10);
        }
    }

    #[test]
    fn one_shot_support_has_each_class_once() {
        let ds = dataset();
        let ep = sample_episode(&ds, ds.classes(), 5, 1, 5, &mut episode_rng(2, 3)).unwrap();
        let mut labels = ep.support_labels();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn sampling_errors_name_the_problem() {
        let ds = dataset();
        let few: BTreeSet<String> = ds.classes().iter().take(3).cloned().collect();
        let err = sample_episode(&ds, &few, 5, 1, 5, &mut episode_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
        let err = sample_episode(&ds, ds.classes(), 5, 5, 7, &mut episode_rng(0, 0)).unwrap_err();
        assert!(err.to_string().contains("divisible"));
        let err = sample_episode(&ds, ds.classes(), 5, 15, 50, &mut episode_rng(0, 0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("class `") && msg.contains("needs 25"), "{msg}");
    }

    #[test]
    fn episode_seed_is_order_independent() {
        let ds = dataset();
        let direct = sample_episode(&ds, ds.classes(), 5, 1, 10, &mut episode_rng(42, 7)).unwrap();
        for i in 0..7 {
            sample_episode(&ds, ds.classes(), 5, 1, 10, &mut episode_rng(42, i)).unwrap();
        }
        let again = sample_episode(&ds, ds.classes(), 5, 1, 10, &mut episode_rng(42, 7)).unwrap();
        let ids = |e: &Episode<'_>| {
            e.support
                .iter()
                .chain(&e.query)
                .map(|(i, l)| (i.instance_id.clone(), *l))
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&direct), ids(&again));
        assert_ne!(episode_seed(42, 7), episode_seed(42, 8));
        assert_ne!(episode_seed(42, 7), episode_seed(43, 7));
    }
}
