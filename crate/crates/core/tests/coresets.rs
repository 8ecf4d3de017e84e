use proptest::prelude::*;
use thinned_mfld::kernels::KernelSpec;
use thinned_mfld::points::PointSet;
use thinned_mfld::rng::{fill_std_normal, stream, Purpose};
use thinned_mfld::thinning::{
    integration_error, rbm_partition, select_coreset, InteractionStrategy, KtParams,
};

fn normal_cloud(n: usize, dim: usize, seed: u64) -> PointSet<f64> {
    let mut data = vec![0.0; n * dim];
    fill_std_normal(&mut stream(seed, Purpose::Init, 0, 0), &mut data);
    PointSet::new(data, dim).unwrap()
}

fn strategies() -> Vec<InteractionStrategy<f64>> {
    let k = KernelSpec::gaussian(1.0).unwrap();
    vec![
        InteractionStrategy::Full,
        InteractionStrategy::KtSplitCompress(KtParams::new(0, k)),
        InteractionStrategy::KtSplitCompress(KtParams::new(1, k)),
        InteractionStrategy::KtCompress(KtParams::new(0, k)),
        InteractionStrategy::KtCompress(KtParams::new(1, k)),
        InteractionStrategy::UniformRandom { g: 0 },
        InteractionStrategy::UniformRandom { g: 1 },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coresets_have_the_target_size_and_valid_indices(
        log4 in 2u32..5,
        dim in 1usize..4,
        seed in 0u64..1000,
    ) {
        let n = 4usize.pow(log4);
        let pts = normal_cloud(n, dim, seed);
        for s in strategies() {
            let cs = select_coreset(&s, &pts, &mut stream(seed, Purpose::Thin, 0, 0)).unwrap();
            prop_assert_eq!(cs.len(), s.target_size(n));
            prop_assert!(cs.indices.iter().all(|&i| i < n));
            if !matches!(s, InteractionStrategy::UniformRandom { .. }) {
                let mut sorted = cs.indices.clone();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), cs.len(), "{:?} repeated an index", s);
            }
        }
    }

    #[test]
    fn the_same_stream_gives_the_same_coreset(log4 in 2u32..5, seed in 0u64..1000) {
        let n = 4usize.pow(log4);
        let pts = normal_cloud(n, 2, seed);
        for s in strategies() {
            let a = select_coreset(&s, &pts, &mut stream(seed, Purpose::Thin, 5, 0)).unwrap();
            let b = select_coreset(&s, &pts, &mut stream(seed, Purpose::Thin, 5, 0)).unwrap();
            prop_assert_eq!(a.indices, b.indices);
        }
    }

    #[test]
    fn random_batches_partition_the_particles(n in 1usize..300, p in 1usize..40, seed in 0u64..1000) {
        prop_assume!(p <= n);
        let part = rbm_partition(n, p, &mut stream(seed, Purpose::Thin, 0, 0)).unwrap();
        let owners = part.owners(n);
        prop_assert_eq!(owners.len(), n);
        let mut seen = vec![false; n];
        for batch in &part.batches {
            prop_assert!(!batch.is_empty() && batch.len() <= p);
            for &i in batch {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }
}

#[test]
fn non_power_of_four_sizes_are_rejected_for_kernel_thinning() {
    let k = KernelSpec::gaussian(1.0).unwrap();
    let pts = normal_cloud(100, 2, 0);
    for s in [
        InteractionStrategy::KtSplitCompress(KtParams::new(0, k)),
        InteractionStrategy::KtCompress(KtParams::new(0, k)),
    ] {
        assert!(select_coreset(&s, &pts, &mut stream(0, Purpose::Thin, 0, 0)).is_err());
    }
    let random = InteractionStrategy::UniformRandom { g: 0 };
    assert_eq!(select_coreset(&random, &pts, &mut stream(0, Purpose::Thin, 0, 0)).unwrap().len(), 10);
}

#[test]
fn refined_kernel_thinning_integrates_better_than_random_subsampling() {
    let k = KernelSpec::gaussian(1.0).unwrap();
    let n = 256;
    let kt = InteractionStrategy::KtCompress(KtParams::new(1, k));
    let random = InteractionStrategy::UniformRandom { g: 1 };
    let median = |s: &InteractionStrategy<f64>| {
        let mut errs: Vec<f64> = (0..31)
            .map(|seed| {
                let pts = normal_cloud(n, 2, seed);
                let f: Vec<f64> = pts.rows().map(|x| k.eval(&[0.0, 0.0], x)).collect();
                let cs = select_coreset(s, &pts, &mut stream(seed, Purpose::Thin, 0, 0)).unwrap();
                integration_error(&f, &cs)
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        errs[errs.len() / 2]
    };
    let (a, b) = (median(&kt), median(&random));
    assert!(a < 0.5 * b, "kt {a} vs random {b}");
}
