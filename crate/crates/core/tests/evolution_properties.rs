use eat_core::evolution::{
    best_individual, crossover_elementwise, crossover_matrix_form, evolve, mutation_elementwise,
    mutation_matrix_form, sphere, CrossoverConfig, MutationConfig, Population,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn crossover_forms_agree(seed in any::<u64>(), rate in 0.0f64..=1.0, l in 2usize..6, d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Population::random(l, d, &mut rng);
        let (t, x) = (0, l - 1);
        let (child, mask) = crossover_elementwise(&pop, t, x, &CrossoverConfig::new(rate).unwrap(), &mut rng).unwrap();
        prop_assert!(mask.iter().all(|&m| m <= 1));
        let matrix = crossover_matrix_form(pop.get(t).unwrap(), pop.get(x).unwrap(), &mask).unwrap();
        prop_assert_eq!(
            child.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            matrix.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn mutation_forms_agree(seed in any::<u64>(), rate in 0.0f64..=1.0, lo in -2.0f64..1.0, span in 0.0f64..2.0, d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ind = Population::random(1, d, &mut rng).individuals()[0].clone();
        let cfg = MutationConfig::uniform(rate, d, lo, lo + span).unwrap();
        let (out, w) = mutation_elementwise(&ind, &cfg, &mut rng).unwrap();
        for &wj in &w {
            prop_assert!(wj == 1.0 || (lo <= wj && wj <= lo + span));
        }
        let matrix = mutation_matrix_form(&ind, &w).unwrap();
        prop_assert_eq!(
            out.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            matrix.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn elitism_never_worsens(seed in any::<u64>(), gens in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Population::random(6, 4, &mut rng);
        let out = evolve(&pop, sphere, gens, &CrossoverConfig::new(0.7).unwrap(),
            &MutationConfig::uniform(0.3, 4, 0.5, 1.2).unwrap(), &mut rng).unwrap();
        prop_assert_eq!(out.trace.len(), gens + 1);
        prop_assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        let (_, best) = best_individual(&out.population, sphere).unwrap();
        prop_assert_eq!(sphere(&best), *out.trace.last().unwrap());
    }

    #[test]
    fn zero_rates_keep_population(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Population::random(5, 3, &mut rng);
        let out = evolve(&pop, sphere, 10, &CrossoverConfig::new(0.0).unwrap(),
            &MutationConfig::uniform(0.0, 3, 0.1, 3.0).unwrap(), &mut rng).unwrap();
        prop_assert_eq!(out.population, pop);
    }

    #[test]
    fn best_matches_scan(seed in any::<u64>(), l in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Population::random(l, 3, &mut rng);
        let scores: Vec<f64> = pop.individuals().iter().map(|x| sphere(x)).collect();
        let mut expected = 0;
        for i in 1..l {
            if scores[i] < scores[expected] {
                expected = i;
            }
        }
        prop_assert_eq!(best_individual(&pop, sphere).unwrap().0, expected);
    }
}
