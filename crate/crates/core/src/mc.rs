//! Deterministic Monte Carlo reductions.
//!
//! Sample indices are cut into fixed-size chunks. Each chunk is summed
//! pairwise, and chunk totals are combined pairwise in chunk order, so the
//! result is bit-identical whatever the rayon pool size.

use rayon::prelude::*;

/// Samples per partition. Independent of the worker count.
pub const CHUNK: usize = 4096;

const PAIRWISE_BASE: usize = 32;

/// Pairwise (cascade) summation with a naive base case.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BASE {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Column sums of a virtual `count × width` table whose row `i` is filled
/// by `row(scratch, i, out)`. `init` builds per-chunk scratch space.
pub fn sum_rows<S, I, F>(count: usize, width: usize, init: I, row: F) -> Vec<f64>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, usize, &mut [f64]) + Sync,
{
    if count == 0 || width == 0 {
        return vec![0.0; width];
    }
    let chunks = count.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(count);
            let len = hi - lo;
            let mut scratch = init();
            // column-major so each column is contiguous for the pairwise pass
            let mut table = vec![0.0; len * width];
            let mut buf = vec![0.0; width];
            for i in lo..hi {
                row(&mut scratch, i, &mut buf);
                for (j, v) in buf.iter().enumerate() {
                    table[j * len + (i - lo)] = *v;
                }
            }
            (0..width)
                .map(|j| pairwise_sum(&table[j * len..(j + 1) * len]))
                .collect()
        })
        .collect();
    (0..width)
        .map(|j| {
            let column: Vec<f64> = partials.iter().map(|p| p[j]).collect();
            pairwise_sum(&column)
        })
        .collect()
}

/// Sample mean and standard error of the mean from running sums.
pub fn mean_and_se(sum: f64, sum_sq: f64, count: usize) -> (f64, f64) {
    let n = count as f64;
    let mean = sum / n;
    if count < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }

    #[test]
    fn thread_count_does_not_change_sums() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    sum_rows(50_000, 2, || (), |_, i, out| {
                        let x = (i as f64 * 0.37).sin();
                        out[0] = x;
                        out[1] = x * x;
                    })
                })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn mean_and_se_of_constant() {
        let (m, se) = mean_and_se(30.0, 300.0, 3);
        assert_eq!(m, 10.0);
        assert_eq!(se, 0.0);
    }
}
