use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::points::PointSet;
use crate::scalar::Scalar;

use super::Coreset;

/// One greedy pass over coreset slots: each slot is replaced by the pool
/// candidate that most lowers `MMD^2(all points, coreset)`, keeping the
/// incumbent unless a candidate is strictly better. Candidates already in
/// the coreset are skipped, so a duplicate-free coreset stays duplicate-free.
///
/// The pool Gram matrix is cached, and the per-candidate sums
/// `S(z) = sum_p k(z, p)` over all points reuse it for pool members, so the
/// pass costs `|pool| (N - |pool|) + |pool| (|pool| + 1) / 2` kernel calls.
pub fn kt_swap_refine<T: Scalar>(
    points: &PointSet<T>,
    pool: &[usize],
    coreset: Coreset,
    kernel: &KernelSpec<T>,
) -> Result<Coreset> {
    let n = points.len();
    let m = coreset.len();
    if m == 0 || pool.is_empty() {
        return Ok(coreset);
    }
    let mut pos_of = vec![usize::MAX; n];
    for (p, &i) in pool.iter().enumerate() {
        if i >= n {
            return Err(Error::Precondition(format!("pool index {i} out of range")));
        }
        if pos_of[i] != usize::MAX {
            return Err(Error::Precondition(format!("pool index {i} repeated")));
        }
        pos_of[i] = p;
    }
    let mut slots = Vec::with_capacity(m);
    for &c in &coreset.indices {
        match pos_of.get(c) {
            Some(&p) if p != usize::MAX => slots.push(p),
            _ => {
                return Err(Error::Precondition(format!(
                    "coreset index {c} is not in the candidate pool"
                )))
            }
        }
    }

    let q = pool.len();
    let mut evals = 0u64;
    let mut gram = vec![T::zero(); q * q];
    for a in 0..q {
        for b in a..q {
            let v = kernel.eval(points.row(pool[a]), points.row(pool[b]));
            gram[a * q + b] = v;
            gram[b * q + a] = v;
        }
    }
    evals += (q * (q + 1) / 2) as u64;

    let mut sums: Vec<T> = (0..q).map(|a| gram[a * q..(a + 1) * q].iter().copied().sum()).collect();
    for (p, row) in points.rows().enumerate() {
        if pos_of[p] != usize::MAX {
            continue;
        }
        for (a, s) in sums.iter_mut().enumerate() {
            *s = *s + kernel.eval(points.row(pool[a]), row);
        }
    }
    evals += (q * (n - q)) as u64;

    // Sum of kernel values from each candidate to the current coreset.
    let mut to_coreset = vec![T::zero(); q];
    let mut in_coreset = vec![0u32; q];
    for &s in &slots {
        in_coreset[s] += 1;
        for (a, v) in to_coreset.iter_mut().enumerate() {
            *v = *v + gram[a * q + s];
        }
    }

    let mf = T::from_usize_lossy(m);
    let inv_m2 = T::one() / (mf * mf);
    let cross = T::lit(2.0) / (T::from_usize_lossy(n) * mf);
    let diag_max = (0..q).map(|a| gram[a * q + a].abs()).fold(T::zero(), T::max);
    let tol = T::epsilon() * T::lit(64.0) * diag_max.max(T::one()) * inv_m2;

    for slot in slots.iter_mut() {
        let cur = *slot;
        let mut best = cur;
        let mut best_gain = T::zero();
        for z in 0..q {
            if z == cur || in_coreset[z] > 0 {
                continue;
            }
            let change = inv_m2
                * (T::lit(2.0) * (to_coreset[z] - gram[z * q + cur]) + gram[z * q + z]
                    - T::lit(2.0) * to_coreset[cur]
                    + gram[cur * q + cur])
                - cross * (sums[z] - sums[cur]);
            if change < best_gain - tol {
                best_gain = change;
                best = z;
            }
        }
        if best != cur {
            for (a, v) in to_coreset.iter_mut().enumerate() {
                *v = *v + gram[a * q + best] - gram[a * q + cur];
            }
            in_coreset[cur] -= 1;
            in_coreset[best] += 1;
            *slot = best;
        }
    }

    let mut out = Coreset::from_indices(slots.into_iter().map(|p| pool[p]).collect());
    out.cost = coreset.cost;
    out.cost.swap = evals;
    Ok(out)
}

/// Squared MMD between the uniform measure on all points and the coreset's
/// uniform measure (with multiplicity). Quadratic cost; used for diagnostics.
pub fn mmd_sq<T: Scalar>(points: &PointSet<T>, coreset: &Coreset, kernel: &KernelSpec<T>) -> T {
    let n = points.len();
    let m = coreset.len();
    let mut pp = T::zero();
    for a in points.rows() {
        for b in points.rows() {
            pp = pp + kernel.eval(a, b);
        }
    }
    let mut pc = T::zero();
    for a in points.rows() {
        for &c in &coreset.indices {
            pc = pc + kernel.eval(a, points.row(c));
        }
    }
    let mut cc = T::zero();
    for &c in &coreset.indices {
        for &e in &coreset.indices {
            cc = cc + kernel.eval(points.row(c), points.row(e));
        }
    }
    let nf = T::from_usize_lossy(n);
    let mf = T::from_usize_lossy(m);
    pp / (nf * nf) - T::lit(2.0) * pc / (nf * mf) + cc / (mf * mf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{std_normal, stream, Purpose};
    use crate::thinning::compress_with_pool;

    fn cloud(n: usize, d: usize, seed: u64) -> PointSet<f64> {
        let mut rng = stream(seed, Purpose::Bench, 0, 0);
        PointSet::new((0..n * d).map(|_| std_normal(&mut rng)).collect(), d).unwrap()
    }

    #[test]
    fn never_increases_mmd() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        for seed in 0..20 {
            let pts = cloud(64, 1, seed);
            let mut rng = stream(seed, Purpose::Thin, 0, 0);
            let out = compress_with_pool(&pts, &k, 0, 0.5, &mut rng).unwrap();
            let before = mmd_sq(&pts, &out.coreset, &k);
            let refined = kt_swap_refine(&pts, &out.pool, out.coreset, &k).unwrap();
            let after = mmd_sq(&pts, &refined, &k);
            assert_eq!(refined.len(), 8);
            assert!(after <= before + 1e-15, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn pool_equal_to_coreset_is_a_fixed_point() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let pts = cloud(64, 2, 3);
        let c = Coreset::from_indices(vec![3, 9, 27, 40]);
        let out = kt_swap_refine(&pts, &[3, 9, 27, 40], c.clone(), &k).unwrap();
        assert_eq!(out.indices, c.indices);
    }

    #[test]
    fn global_minimizer_is_kept() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let pts = cloud(16, 1, 4);
        let pool: Vec<usize> = (0..6).collect();
        // Brute force the best size-2 subset of the pool.
        let mut best = (f64::INFINITY, vec![]);
        for a in 0..6 {
            for b in a + 1..6 {
                let c = Coreset::from_indices(vec![a, b]);
                let v = mmd_sq(&pts, &c, &k);
                if v < best.0 {
                    best = (v, vec![a, b]);
                }
            }
        }
        let out = kt_swap_refine(&pts, &pool, Coreset::from_indices(best.1.clone()), &k).unwrap();
        assert_eq!(out.indices, best.1);
    }

    #[test]
    fn swap_cost_is_counted() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let pts = cloud(64, 1, 5);
        let mut rng = stream(5, Purpose::Thin, 0, 0);
        let out = compress_with_pool(&pts, &k, 0, 0.5, &mut rng).unwrap();
        let refined = kt_swap_refine(&pts, &out.pool, out.coreset, &k).unwrap();
        assert_eq!(refined.cost.swap, (16 * 48 + 16 * 17 / 2) as u64);
    }

    #[test]
    fn coreset_outside_pool_rejected() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let pts = cloud(8, 1, 6);
        assert!(kt_swap_refine(&pts, &[0, 1], Coreset::from_indices(vec![5]), &k).is_err());
    }
}
