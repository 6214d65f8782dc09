use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;

/// References drawn per generation when scoring unconditional corpora.
pub const DEFAULT_REFERENCES_PER_GENERATION: usize = 4;

/// For each generation, indices of `k` distinct references drawn without
/// replacement from one seeded stream, generations visited in order.
pub fn pair_unconditional_indices(
    n_generations: usize,
    n_references: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if k > n_references {
        return Err(Error::validation(format!(
            "cannot draw {k} references from a pool of {n_references}"
        )));
    }
    let mut rng = rng::rng_from(seed);
    Ok((0..n_generations)
        .map(|_| index::sample(&mut rng, n_references, k).into_vec())
        .collect())
}

pub fn pair_unconditional(
    generations: &[String],
    references: &[String],
    k: usize,
    seed: u64,
) -> Result<Vec<(String, Vec<String>)>> {
    let picks = pair_unconditional_indices(generations.len(), references.len(), k, seed)?;
    Ok(generations
        .iter()
        .zip(picks)
        .map(|(g, idx)| (g.clone(), idx.into_iter().map(|i| references[i].clone()).collect()))
        .collect())
}
