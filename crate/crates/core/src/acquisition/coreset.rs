//! k-center greedy over backbone features.

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{check_dim, Error, Result};

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Repeatedly picks the candidate farthest from every labeled or already
/// picked feature vector. With no labeled points the first pick is
/// candidate 0. Ties go to the lowest index.
pub fn select_coreset(features: ArrayView2<f64>, labeled: ArrayView2<f64>, k: usize) -> Result<Vec<usize>> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::Empty("candidate pool"));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("batch size {k} for {n} candidates")));
    }
    if labeled.nrows() > 0 {
        check_dim(features.ncols(), labeled.ncols())?;
    }
    let mut d_min: Vec<f64> = features
        .outer_iter()
        .map(|f| {
            labeled
                .outer_iter()
                .map(|l| sq_dist(f, l))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; n];
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            if best.is_none_or(|b| d_min[i] > d_min[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("candidates remain");
        taken[pick] = true;
        chosen.push(pick);
        let centre = features.row(pick);
        for (i, d) in d_min.iter_mut().enumerate() {
            if !taken[i] {
                *d = d.min(sq_dist(features.row(i), centre));
            }
        }
    }
    Ok(chosen)
}

/// Largest distance from a candidate to its nearest center, where centers
/// are the labeled points plus the chosen candidates.
pub fn cover_radius(features: ArrayView2<f64>, labeled: ArrayView2<f64>, chosen: &[usize]) -> f64 {
    features
        .outer_iter()
        .map(|f| {
            let to_labeled = labeled.outer_iter().map(|l| sq_dist(f, l));
            let to_chosen = chosen.iter().map(|&c| sq_dist(f, features.row(c)));
            to_labeled.chain(to_chosen).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}
