use nalgebra::Vector3;
use nsalpha_core::particles;
use nsalpha_core::spectral::{minimum_image, wrap_coordinate};
use nsalpha_core::{AlphaKernel, GridSpec, SpectralField};
use proptest::prelude::*;

fn grid(m: usize) -> GridSpec {
    GridSpec::new(m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fft_round_trip(seed in any::<u64>(), band in 1usize..7) {
        let w = SpectralField::random_band_limited(grid(16), band, seed).unwrap();
        let back = w.to_physical().to_spectral();
        prop_assert!((&back - &w).max_abs() <= 1e-13 * w.max_abs());
    }

    #[test]
    fn velocity_is_divergence_free(seed in any::<u64>(), alpha in 0.05f64..2.0) {
        let w = SpectralField::random_band_limited(grid(16), 5, seed).unwrap();
        let u = AlphaKernel::new(alpha, grid(16)).unwrap().velocity_from_vorticity(&w).unwrap();
        prop_assert!(u.divergence_defect() <= 1e-13 * u.max_abs());
    }

    #[test]
    fn wrapping_lands_in_the_cell(x in -1e6f64..1e6) {
        let w = wrap_coordinate(x);
        prop_assert!((0.0..std::f64::consts::TAU).contains(&w));
        let d = minimum_image(&Vector3::new(x, -x, 0.5 * x));
        prop_assert!(d.iter().all(|c| (-std::f64::consts::PI..std::f64::consts::PI).contains(c)));
    }

    #[test]
    fn empirical_field_ignores_particle_order(seed in any::<u64>(), shift in 1usize..63) {
        let g = grid(16);
        let w = SpectralField::random_band_limited(g, 3, seed).unwrap();
        let ens = particles::init_importance(&w, 64, 0.25, seed ^ 1).unwrap();
        let perm: Vec<usize> = (0..64).map(|i| (i + shift) % 64).collect();
        let a = particles::empirical_field(&ens, g).unwrap();
        let b = particles::empirical_field(&ens.permuted(&perm), g).unwrap();
        prop_assert_eq!(a, b);
    }
}
