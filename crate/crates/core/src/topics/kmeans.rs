use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TopicError;

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-6;
/// Independent seedings per fit; the one with the highest total cosine
/// similarity to its centroids wins.
pub const RESTARTS: usize = 10;

/// Result of one spherical k-means fit. Cluster ids are relabeled by order
/// of first appearance in the input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales `v` to unit length; returns false for the zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot(row, centroid);
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

fn plus_plus_init(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.gen_range(0..rows.len())];
    let mut d2: Vec<f64> = rows.iter().map(|r| (2.0 - 2.0 * dot(r, &rows[chosen[0]])).max(0.0)).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = rows.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            let free: Vec<usize> = (0..rows.len()).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min((2.0 - 2.0 * dot(r, &rows[next])).max(0.0));
        }
    }
    chosen.into_iter().map(|i| rows[i].clone()).collect()
}

fn centroid_of(rows: &[Vec<f64>], members: impl Iterator<Item = usize>, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    let mut any = false;
    for i in members {
        any = true;
        sum.iter_mut().zip(&rows[i]).for_each(|(s, x)| *s += x);
    }
    (any && normalize(&mut sum)).then_some(sum)
}

/// Gives each empty cluster the point farthest from its own centroid among
/// clusters that have more than one member. Returns whether anything moved.
fn reseed_empty(rows: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) -> bool {
    let k = centroids.len();
    let mut moved = false;
    loop {
        let mut sizes = vec![0usize; k];
        assignments.iter().for_each(|&a| sizes[a] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return moved };
        let donor = (0..rows.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .map(|i| (i, dot(&rows[i], &centroids[assignments[i]])))
            .fold(None::<(usize, f64)>, |best, (i, s)| match best {
                Some((_, bs)) if bs <= s => best,
                _ => Some((i, s)),
            });
        let Some((point, _)) = donor else { return moved };
        assignments[point] = empty;
        centroids[empty] = rows[point].clone();
        moved = true;
    }
}

/// Seeded spherical k-means over unit-length rows: k-means++ seeding,
/// cosine assignment, at most [`MAX_ITERATIONS`] rounds, stopping once no
/// centroid moves by more than [`TOLERANCE`]. The best of [`RESTARTS`]
/// runs is kept.
pub fn cluster_topics(embeddings: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering, TopicError> {
    cluster_topics_with(embeddings, k, seed, RESTARTS)
}

pub fn cluster_topics_with(embeddings: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<Clustering, TopicError> {
    if k == 0 {
        return Err(TopicError::Validation("k must be positive".into()));
    }
    if k > embeddings.len() {
        return Err(TopicError::Validation(format!("k = {k} exceeds the {} rows", embeddings.len())));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|r| r.len() != dim) {
        return Err(TopicError::Validation("rows differ in dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Clustering)> = None;
    for _ in 0..restarts.max(1) {
        let run = single_run(embeddings, k, dim, &mut rng);
        let score: f64 = embeddings.iter().zip(&run.assignments).map(|(r, &a)| dot(r, &run.centroids[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| score > *b + 1e-12) {
            best = Some((score, run));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn single_run(embeddings: &[Vec<f64>], k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Clustering {
    let mut centroids = plus_plus_init(embeddings, k, rng);
    let mut assignments = vec![0usize; embeddings.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (i, row) in embeddings.iter().enumerate() {
            assignments[i] = nearest(row, &centroids);
        }
        reseed_empty(embeddings, &mut assignments, &mut centroids);
        let mut shift: f64 = 0.0;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members = (0..embeddings.len()).filter(|&i| assignments[i] == c);
            if let Some(next) = centroid_of(embeddings, members, dim) {
                let d = centroid.iter().zip(&next).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                shift = shift.max(d);
                *centroid = next;
            }
        }
        if shift <= TOLERANCE {
            break;
        }
    }
    reseed_empty(embeddings, &mut assignments, &mut centroids);
    relabel(assignments, centroids, iterations)
}

fn relabel(assignments: Vec<usize>, centroids: Vec<Vec<f64>>, iterations: usize) -> Clustering {
    let k = centroids.len();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &a in &assignments {
        if map[a] == usize::MAX {
            map[a] = next;
            next += 1;
        }
    }
    for slot in map.iter_mut().filter(|m| **m == usize::MAX) {
        *slot = next;
        next += 1;
    }
    let mut relabeled = vec![Vec::new(); k];
    for (old, c) in centroids.into_iter().enumerate() {
        relabeled[map[old]] = c;
    }
    Clustering { assignments: assignments.into_iter().map(|a| map[a]).collect(), centroids: relabeled, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let mut v = v.to_vec();
        normalize(&mut v);
        v
    }

    #[test]
    fn single_cluster() {
        let rows = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0]), unit(&[1.0, 1.0])];
        assert_eq!(cluster_topics(&rows, 1, 7).unwrap().assignments, vec![0, 0, 0]);
    }

    #[test]
    fn k_equals_rows_leaves_no_cluster_empty() {
        let rows = vec![unit(&[1.0, 0.0]), unit(&[1.0, 0.0]), unit(&[0.0, 1.0]), unit(&[1.0, 0.0])];
        let c = cluster_topics(&rows, 4, 3).unwrap();
        let mut seen = c.assignments.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn invalid_k() {
        let rows = vec![unit(&[1.0, 0.0])];
        assert!(cluster_topics(&rows, 0, 1).is_err());
        assert!(cluster_topics(&rows, 2, 1).is_err());
    }

    #[test]
    fn labels_follow_first_occurrence() {
        let rows = vec![unit(&[0.0, 1.0]), unit(&[1.0, 0.0]), unit(&[0.1, 1.0]), unit(&[1.0, 0.1])];
        for seed in 0..10 {
            assert_eq!(cluster_topics(&rows, 2, seed).unwrap().assignments, vec![0, 1, 0, 1]);
        }
    }
}
