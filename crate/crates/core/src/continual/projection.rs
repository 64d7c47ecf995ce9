//! Gradient projections for GEM and A-GEM.

use nalgebra::{DMatrix, DVector};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A-GEM: removes the component of `g` that opposes `g_ref`.
pub fn project_agem(g: &[f64], g_ref: &[f64]) -> Vec<f64> {
    let d = dot(g, g_ref);
    let rr = dot(g_ref, g_ref);
    if d >= 0.0 || rr == 0.0 {
        return g.to_vec();
    }
    let c = d / rr;
    g.iter().zip(g_ref).map(|(x, r)| x - c * r).collect()
}

/// GEM: the closest vector to `g` with a non-negative inner product with every
/// memory gradient, via the dual QP `min_{v≥0} ½vᵀGGᵀv + gᵀGᵀv` solved by
/// enumerating active sets.
pub fn project_gem(g: &[f64], memories: &[Vec<f64>]) -> Vec<f64> {
    if memories.iter().all(|m| dot(g, m) >= 0.0) {
        return g.to_vec();
    }
    let k = memories.len();
    let gram = DMatrix::from_fn(k, k, |i, j| dot(&memories[i], &memories[j]));
    let gg = DVector::from_fn(k, |i, _| dot(g, &memories[i]));
    let scale = gram.diagonal().amax().max(gg.amax()).max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale;

    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
        let m = active.len();
        let sub = DMatrix::from_fn(m, m, |a, b| gram[(active[a], active[b])]);
        let rhs = DVector::from_fn(m, |a, _| -gg[active[a]]);
        let Some(vs) = sub.lu().solve(&rhs) else {
            continue;
        };
        if vs.iter().any(|&x| !(x >= -tol)) {
            continue;
        }
        let mut v = DVector::zeros(k);
        for (a, &i) in active.iter().enumerate() {
            v[i] = vs[a].max(0.0);
        }
        // Primal feasibility of the inactive constraints.
        let slack = &gram * &v + &gg;
        if (0..k).any(|i| mask & (1 << i) == 0 && slack[i] < -tol) {
            continue;
        }
        let obj = 0.5 * v.dot(&(&gram * &v)) + gg.dot(&v);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, v));
        }
    }
    let Some((_, v)) = best else {
        return g.to_vec();
    };
    let mut out = g.to_vec();
    for (i, m) in memories.iter().enumerate() {
        if v[i] != 0.0 {
            for (o, x) in out.iter_mut().zip(m) {
                *o += v[i] * x;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agem_example() {
        assert_eq!(project_agem(&[1.0, -1.0], &[0.0, 1.0]), vec![1.0, 0.0]);
        assert_eq!(project_agem(&[1.0, 1.0], &[0.0, 1.0]), vec![1.0, 1.0]);
        assert_eq!(project_agem(&[1.0, -1.0], &[0.0, 0.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn gem_feasible_unchanged() {
        let g = vec![1.0, 2.0, 3.0];
        assert_eq!(project_gem(&g, &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]), g);
    }

    #[test]
    fn gem_single_memory_equals_agem() {
        let g = vec![0.3, -1.2, 0.5, 2.0];
        let r = vec![-0.1, 0.8, 0.0, -0.4];
        let a = project_agem(&g, &r);
        let b = project_gem(&g, std::slice::from_ref(&r));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gem_two_constraints() {
        // Both constraints violated; the projection lands on their intersection.
        let g = vec![-1.0, -1.0];
        let out = project_gem(&g, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }
}
