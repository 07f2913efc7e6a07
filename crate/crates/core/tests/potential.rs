use gmac_amp::potential_region::converse_min_ebn0;
use gmac_amp::potential_region::{
    largest_stationary, min_ebn0, minimizer_set, potential, potential_derivative, sigma2_for_ebn0_db,
    tau_star, EbN0Search, ScanSettings, Scheme,
};
use gmac_amp::priors::{ScalarChannel, SectionPrior};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn flat(b: usize) -> ScalarChannel {
    let p = SectionPrior::flat(b, 1.0).unwrap();
    ScalarChannel::new(p).with_energy(p.payload_bits()).unwrap()
}

#[test]
fn derivative_matches_centered_differences() {
    let ch = flat(4);
    let e = ch.energy();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 20 {
        let mu = rng.random_range(0.1..2.0);
        let s2 = rng.random_range(0.02..2.0);
        let psi = rng.random_range(0.05 * e..0.95 * e);
        let h = 1e-5 * e;
        let fd = (potential(&ch, mu, s2, psi + h) - potential(&ch, mu, s2, psi - h)) / (2.0 * h);
        let d = potential_derivative(&ch, mu, s2, psi);
        if d.abs() < 1e-6 {
            continue;
        }
        assert!((fd - d).abs() <= 1e-4 * d.abs(), "mu={mu} s2={s2} psi={psi}: {fd} vs {d}");
        checked += 1;
    }
}

#[test]
fn stationary_points_are_fixed_points_of_the_recursion() {
    let ch = flat(4);
    for (mu, db) in [(0.6, 6.0), (1.0, 8.0), (1.1, 5.0)] {
        let s2 = sigma2_for_ebn0_db(db);
        let scan = ScanSettings::default();
        let psi = largest_stationary(&ch, mu, s2, &scan).unwrap();
        let m = ch.mmse_at_tau(s2 + mu * psi);
        assert!((m - psi).abs() <= 1e-7 * ch.energy(), "{m} vs {psi}");
        for p in minimizer_set(&ch, mu, s2, &scan).unwrap().psi {
            let m = ch.mmse_at_tau(s2 + mu * p);
            assert!((m - p).abs() <= 1e-6 * ch.energy().max(p));
        }
        // the global minimizer is never above the largest stationary point
        assert!(tau_star(&ch, mu, s2, &scan).unwrap() <= s2 + mu * psi + 1e-12);
    }
}

#[test]
fn scheme_thresholds_are_ordered() {
    let ch = flat(4);
    let search = EbN0Search {
        tol_db: 1e-2,
        ..EbN0Search::default()
    };
    let scan = ScanSettings::default();
    let mut prev_sc = f64::NEG_INFINITY;
    for mu in [0.3, 0.6, 0.9, 1.2] {
        let iid = min_ebn0(Scheme::IidAmp, &ch, mu, 1e-3, &search, &scan).unwrap();
        let sc = min_ebn0(Scheme::ScAmp, &ch, mu, 1e-3, &search, &scan).unwrap();
        let conv = min_ebn0(Scheme::Converse, &ch, mu, 1e-3, &search, &scan).unwrap();
        assert!(sc.db <= iid.db + 0.02, "mu={mu}");
        assert!(conv.db <= sc.db, "mu={mu}: converse {} vs sc {}", conv.db, sc.db);
        assert!(sc.db >= prev_sc - 0.02, "coupled threshold not monotone in mu");
        prev_sc = sc.db;
    }
}

#[test]
fn converse_vanishing_error_limit() {
    for (mu, bits) in [(0.5, 2.0), (0.1, 8.0), (1.0, 4.0)] {
        let s: f64 = mu * bits;
        let limit = ((2.0 * s).exp2() - 1.0) / (2.0 * s);
        let b = converse_min_ebn0(mu, bits, 1e-12).unwrap();
        assert!((b.second - limit).abs() <= 1e-3 * limit, "{} vs {limit}", b.second);
    }
}
