use gmac_amp::coupling::{BaseMatrix, DesignOperator, OperatorKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn forward_and_adjoint_are_transposes() {
    let cases = [
        (BaseMatrix::trivial(), 30, 8, 4),
        (BaseMatrix::new(3, 7, 0.0).unwrap(), 45, 14, 4),
        (BaseMatrix::new(2, 5, 0.1).unwrap(), 36, 10, 8),
    ];
    for kind in [OperatorKind::DenseGaussian, OperatorKind::StructuredDct] {
        for (base, n, l, b) in &cases {
            let op = DesignOperator::sample(base, *n, *l, *b, kind, 17).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..100 {
                let x = gaussian(op.cols(), &mut rng);
                let y = gaussian(op.n(), &mut rng);
                let lhs = dot(&op.apply_forward(&x).unwrap(), &y);
                let rhs = dot(&x, &op.apply_adjoint(&y).unwrap());
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0),
                    "{kind:?}: {lhs} vs {rhs}"
                );
            }
        }
    }
}

#[test]
fn dense_column_norms_have_unit_mean() {
    let base = BaseMatrix::trivial();
    let resamples = 10_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for seed in 0..resamples {
        let a = DesignOperator::sample(&base, 4, 2, 2, OperatorKind::DenseGaussian, seed)
            .unwrap()
            .to_dense();
        for j in 0..4 {
            let v: f64 = (0..4).map(|i| a[i * 4 + j].powi(2)).sum();
            sum += v;
            sum_sq += v * v;
        }
    }
    let k = (4 * resamples) as f64;
    let mean = sum / k;
    let se = ((sum_sq / k - mean * mean) / k).sqrt();
    // each squared norm is chi-square(4)/4 with variance 1/2
    assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn dense_block_variances_follow_base_matrix() {
    let base = BaseMatrix::new(2, 3, 0.2).unwrap();
    // R = 4, C = 3; 1000 x 300 gives 25 000 entries per block
    let (n, l, b) = (1000, 75, 4);
    let op = DesignOperator::sample(&base, n, l, b, OperatorKind::DenseGaussian, 99).unwrap();
    let a = op.to_dense();
    let maps = *op.maps();
    let cols = op.cols();
    for r in 0..base.rows() {
        for c in 0..base.cols() {
            let want = base.get(r, c) / (n / base.rows()) as f64;
            let mut count = 0usize;
            let mut s2 = 0.0;
            for i in maps.row_range(r) {
                for j in maps.col_range(c) {
                    s2 += a[i * cols + j].powi(2);
                    count += 1;
                }
            }
            let var = s2 / count as f64;
            // the squared entry has variance 2 want^2
            let se = (2.0f64).sqrt() * want / (count as f64).sqrt();
            assert!((var - want).abs() <= 3.0 * se, "block ({r},{c}): {var} vs {want}");
        }
    }
}

#[test]
fn dense_variance_over_many_draws() {
    // 10^5 entries of a single-block design
    let base = BaseMatrix::trivial();
    let op = DesignOperator::sample(&base, 250, 100, 4, OperatorKind::DenseGaussian, 3).unwrap();
    let a = op.to_dense();
    assert_eq!(a.len(), 100_000);
    let want = 1.0 / 250.0;
    let var = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
    let se = (2.0f64).sqrt() * want / (a.len() as f64).sqrt();
    assert!((var - want).abs() <= 3.0 * se);
}

#[test]
fn dct_zero_blocks_are_exact() {
    let base = BaseMatrix::new(3, 7, 0.0).unwrap();
    let op = DesignOperator::sample(&base, 36, 14, 2, OperatorKind::StructuredDct, 8).unwrap();
    let a = op.to_dense();
    let maps = *op.maps();
    let cols = op.cols();
    for r in 0..base.rows() {
        for c in 0..base.cols() {
            let energy: f64 = maps
                .row_range(r)
                .flat_map(|i| maps.col_range(c).map(move |j| (i, j)))
                .map(|(i, j)| a[i * cols + j].powi(2))
                .sum();
            if base.get(r, c) == 0.0 {
                assert_eq!(energy, 0.0, "block ({r},{c})");
            } else {
                assert!(energy > 0.0);
            }
        }
    }
}

#[test]
fn dct_column_energy_matches_dense_in_expectation() {
    // wide blocks keep only m of P rows, so column norms are 1 on average
    let base = BaseMatrix::new(2, 4, 0.1).unwrap();
    let (n, l, b) = (50, 40, 8);
    let mut total = 0.0;
    let seeds = 40;
    for seed in 0..seeds {
        let op = DesignOperator::sample(&base, n, l, b, OperatorKind::StructuredDct, seed).unwrap();
        let a = op.to_dense();
        total += a.iter().map(|v| v * v).sum::<f64>() / op.cols() as f64;
    }
    let mean = total / seeds as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
}

#[test]
fn block_scaled_adjoint_matches_entrywise_oracle() {
    // n = 12, L = 4, B = 2 with R = 3, C = 2
    let base = BaseMatrix::with_short_length(2, 2, 0.3).unwrap();
    assert_eq!((base.rows(), base.cols()), (3, 2));
    for kind in [OperatorKind::DenseGaussian, OperatorKind::StructuredDct] {
        let op = DesignOperator::sample(&base, 12, 4, 2, kind, 21).unwrap();
        let a = op.to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = gaussian(12, &mut rng);
        let s: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..3.0)).collect();
        let got = op.apply_adjoint_scaled(&q, &s).unwrap();
        for j in 0..8 {
            let c = j / 4;
            let want: f64 = (0..12).map(|i| s[(i / 4) * 2 + c] * a[i * 8 + j] * q[i]).sum();
            assert!((got[j] - want).abs() <= 1e-10 * want.abs().max(1.0), "{kind:?} col {j}");
        }
        let plain = op.apply_adjoint(&q).unwrap();
        let ones = op.apply_adjoint_scaled(&q, &[1.0; 6]).unwrap();
        assert_eq!(plain, ones);
        let zero = op.apply_adjoint_scaled(&[0.0; 12], &s).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn scaled_adjoint_with_wide_column_blocks() {
    // 400 columns per block: wider than one parallel work chunk
    let base = BaseMatrix::new(2, 3, 0.1).unwrap();
    let (n, l, b) = (40, 300, 4);
    let op = DesignOperator::sample(&base, n, l, b, OperatorKind::DenseGaussian, 5).unwrap();
    let a = op.to_dense();
    let cols = l * b;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = gaussian(n, &mut rng);
    let s: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..3.0)).collect();
    let got = op.apply_adjoint_scaled(&q, &s).unwrap();
    let (rl, cl) = (n / 4, cols / 3);
    for j in 0..cols {
        let want: f64 = (0..n).map(|i| s[(i / rl) * 3 + j / cl] * a[i * cols + j] * q[i]).sum();
        assert!((got[j] - want).abs() <= 1e-10 * want.abs().max(1.0), "col {j}");
    }
}

#[test]
fn snapshot_round_trip() {
    let base = BaseMatrix::new(2, 3, 0.05).unwrap();
    for kind in [OperatorKind::DenseGaussian, OperatorKind::StructuredDct] {
        let op = DesignOperator::sample(&base, 20, 6, 4, kind, 77).unwrap();
        let mut bytes = Vec::new();
        op.write_snapshot(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"GMACOP\0\x01");
        let back = DesignOperator::read_snapshot(bytes.as_slice()).unwrap();
        assert_eq!(back.kind(), kind);
        assert_eq!(back.seed(), 77);
        assert_eq!(back.to_dense(), op.to_dense());
        bytes[0] = b'X';
        assert!(DesignOperator::read_snapshot(bytes.as_slice()).is_err());
    }
}

#[test]
fn same_seed_same_operator() {
    let base = BaseMatrix::new(2, 3, 0.0).unwrap();
    for kind in [OperatorKind::DenseGaussian, OperatorKind::StructuredDct] {
        let a = DesignOperator::sample(&base, 20, 6, 4, kind, 1).unwrap().to_dense();
        let b = DesignOperator::sample(&base, 20, 6, 4, kind, 1).unwrap().to_dense();
        let c = DesignOperator::sample(&base, 20, 6, 4, kind, 2).unwrap().to_dense();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
