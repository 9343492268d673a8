//! Shared top-K selection with a fixed tie rule: higher score wins, equal
//! scores go to the lower item index.

/// Indices of the K highest-scoring items among those `allowed`, ordered by
/// (score desc, index asc).
pub fn topk_by_score<F: Fn(usize) -> bool>(scores: &[f64], k: usize, allowed: F) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| allowed(i)).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
