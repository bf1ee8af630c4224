//! A small evolutionary algorithm whose crossover and mutation operators
//! come in two forms: per-feature sampling and the equivalent diagonal
//! matrix products.
//!
//! All draws are uniform in `[0, 1)`, so a rate of 0 never fires and a rate
//! of 1 always does. Fitness is minimized.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Individual = Vec<f64>;

/// `l` individuals of equal width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    individuals: Vec<Individual>,
}

impl Population {
    pub fn new(individuals: Vec<Individual>) -> Result<Self> {
        if let Some(first) = individuals.first() {
            for ind in &individuals {
                if ind.len() != first.len() {
                    return Err(Error::LengthMismatch {
                        expected: first.len(),
                        actual: ind.len(),
                    });
                }
                if ind.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig("individuals must be finite".into()));
                }
            }
        }
        Ok(Population { individuals })
    }

    /// Standard-normal entries.
    pub fn random<R: Rng>(size: usize, dim: usize, rng: &mut R) -> Self {
        let individuals = (0..size)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Population { individuals }
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.individuals.first().map_or(0, Vec::len)
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn get(&self, index: usize) -> Result<&Individual> {
        self.individuals.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossoverConfig {
    /// Probability of taking each feature from the donor.
    pub rate: f64,
}

impl CrossoverConfig {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate("crossover", rate)?;
        Ok(CrossoverConfig { rate })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationConfig {
    /// Probability of rescaling each feature.
    pub rate: f64,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl MutationConfig {
    pub fn new(rate: f64, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        let cfg = MutationConfig { rate, low, high };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The same bounds for every feature.
    pub fn uniform(rate: f64, dim: usize, low: f64, high: f64) -> Result<Self> {
        Self::new(rate, vec![low; dim], vec![high; dim])
    }

    pub fn validate(&self) -> Result<()> {
        check_rate("mutation", self.rate)?;
        if self.low.len() != self.high.len() {
            return Err(Error::LengthMismatch {
                expected: self.low.len(),
                actual: self.high.len(),
            });
        }
        if let Some(j) = (0..self.low.len()).find(|&j| self.low[j].partial_cmp(&self.high[j]).is_none_or(|o| o.is_gt())) {
            return Err(Error::InvalidConfig(format!(
                "mutation bounds inverted at feature {j}: {} > {}",
                self.low[j], self.high[j]
            )));
        }
        Ok(())
    }
}

fn check_rate(what: &str, rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} rate {rate} outside [0, 1]")))
    }
}

/// Builds a child of `target`, taking feature `j` from `donor` when the
/// `j`-th draw is at most the crossover rate. Returns the child and the
/// realized 0/1 mask.
pub fn crossover_elementwise<R: Rng>(
    pop: &Population,
    target: usize,
    donor: usize,
    cfg: &CrossoverConfig,
    rng: &mut R,
) -> Result<(Individual, Vec<u8>)> {
    let t = pop.get(target)?;
    let x = pop.get(donor)?;
    if target == donor {
        return Err(Error::SameIndividual(target));
    }
    let mut child = Vec::with_capacity(t.len());
    let mut mask = Vec::with_capacity(t.len());
    for j in 0..t.len() {
        let draw: f64 = rng.gen();
        if draw <= cfg.rate {
            child.push(x[j]);
            mask.push(1);
        } else {
            child.push(t[j]);
            mask.push(0);
        }
    }
    Ok((child, mask))
}

/// `Diag(1 - mask) target + Diag(mask) donor`.
pub fn crossover_matrix_form(target: &[f64], donor: &[f64], mask: &[u8]) -> Result<Individual> {
    for len in [donor.len(), mask.len()] {
        if len != target.len() {
            return Err(Error::LengthMismatch {
                expected: target.len(),
                actual: len,
            });
        }
    }
    Ok(target
        .iter()
        .zip(donor)
        .zip(mask)
        .map(|((&t, &x), &m)| {
            let m = f64::from(m);
            (1.0 - m) * t + m * x
        })
        .collect())
}

/// Rescales feature `j` by a uniform draw in `[low[j], high[j]]` when its
/// trigger draw is at most the mutation rate. Returns the mutant and the
/// realized weights (1 where nothing fired).
pub fn mutation_elementwise<R: Rng>(
    ind: &[f64],
    cfg: &MutationConfig,
    rng: &mut R,
) -> Result<(Individual, Vec<f64>)> {
    cfg.validate()?;
    if cfg.low.len() != ind.len() {
        return Err(Error::LengthMismatch {
            expected: cfg.low.len(),
            actual: ind.len(),
        });
    }
    let mut out = Vec::with_capacity(ind.len());
    let mut weights = Vec::with_capacity(ind.len());
    for (j, &x) in ind.iter().enumerate() {
        let trigger: f64 = rng.gen();
        let w = if trigger <= cfg.rate {
            let u: f64 = rng.gen();
            cfg.low[j] + (cfg.high[j] - cfg.low[j]) * u
        } else {
            1.0
        };
        weights.push(w);
        out.push(w * x);
    }
    Ok((out, weights))
}

/// `Diag(weights) ind`.
pub fn mutation_matrix_form(ind: &[f64], weights: &[f64]) -> Result<Individual> {
    if weights.len() != ind.len() {
        return Err(Error::LengthMismatch {
            expected: ind.len(),
            actual: weights.len(),
        });
    }
    Ok(weights.iter().zip(ind).map(|(&w, &x)| w * x).collect())
}

/// Argmin of `fitness`; the lowest index wins ties.
pub fn best_individual<F: Fn(&[f64]) -> f64>(pop: &Population, fitness: F) -> Result<(usize, Individual)> {
    let (idx, _) = best_index(pop.individuals(), &fitness).ok_or(Error::EmptyPopulation)?;
    Ok((idx, pop.individuals[idx].clone()))
}

fn best_index<F: Fn(&[f64]) -> f64>(inds: &[Individual], fitness: &F) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, ind) in inds.iter().enumerate() {
        let f = fitness(ind);
        if best.is_none_or(|(_, b)| f < b) {
            best = Some((i, f));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveResult {
    pub population: Population,
    /// Best fitness before the first generation and after each one.
    pub trace: Vec<f64>,
}

/// Runs `generations` rounds. Every individual breeds one child (crossover
/// with a uniformly chosen other individual, then mutation) from the current
/// population, and the child replaces its parent only when strictly fitter.
pub fn evolve<R: Rng, F: Fn(&[f64]) -> f64>(
    pop: &Population,
    fitness: F,
    generations: usize,
    crossover: &CrossoverConfig,
    mutation: &MutationConfig,
    rng: &mut R,
) -> Result<EvolveResult> {
    if pop.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    mutation.validate()?;
    let l = pop.len();
    let mut current = pop.clone();
    let mut scores: Vec<f64> = current.individuals.iter().map(|x| fitness(x)).collect();
    let best = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    let mut trace = vec![best(&scores)];
    for _ in 0..generations {
        let mut children = Vec::with_capacity(l);
        for i in 0..l {
            let crossed = if l >= 2 {
                let mut donor = rng.gen_range(0..l - 1);
                if donor >= i {
                    donor += 1;
                }
                crossover_elementwise(&current, i, donor, crossover, rng)?.0
            } else {
                current.individuals[i].clone()
            };
            children.push(mutation_elementwise(&crossed, mutation, rng)?.0);
        }
        for (i, child) in children.into_iter().enumerate() {
            let f = fitness(&child);
            if f < scores[i] {
                current.individuals[i] = child;
                scores[i] = f;
            }
        }
        trace.push(best(&scores));
    }
    Ok(EvolveResult {
        population: current,
        trace,
    })
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn crossover_boundaries() {
        let pop = Population::random(3, 6, &mut rng(1));
        let (all, mask) = crossover_elementwise(&pop, 0, 2, &CrossoverConfig::new(1.0).unwrap(), &mut rng(2)).unwrap();
        assert_eq!(&all, pop.get(2).unwrap());
        assert!(mask.iter().all(|&m| m == 1));
        let (none, mask) = crossover_elementwise(&pop, 0, 2, &CrossoverConfig::new(0.0).unwrap(), &mut rng(2)).unwrap();
        assert_eq!(&none, pop.get(0).unwrap());
        assert!(mask.iter().all(|&m| m == 0));
    }

    #[test]
    fn crossover_errors() {
        let pop = Population::random(2, 3, &mut rng(0));
        let cfg = CrossoverConfig::new(0.5).unwrap();
        assert!(matches!(
            crossover_elementwise(&pop, 1, 1, &cfg, &mut rng(0)),
            Err(Error::SameIndividual(1))
        ));
        assert!(matches!(
            crossover_elementwise(&pop, 0, 5, &cfg, &mut rng(0)),
            Err(Error::IndexOutOfRange { index: 5, len: 2 })
        ));
        assert!(CrossoverConfig::new(1.5).is_err());
        assert!(crossover_matrix_form(&[1.0], &[1.0, 2.0], &[0]).is_err());
    }

    #[test]
    fn crossover_replays_recorded_draws() {
        let pop = Population::random(4, 4, &mut rng(3));
        let cfg = CrossoverConfig::new(0.5).unwrap();
        let (child, mask) = crossover_elementwise(&pop, 1, 3, &cfg, &mut rng(7)).unwrap();
        let mut replay = rng(7);
        let draws: Vec<f64> = (0..4).map(|_| replay.gen()).collect();
        let (t, x) = (pop.get(1).unwrap(), pop.get(3).unwrap());
        let expected: Vec<f64> = (0..4).map(|j| if draws[j] <= 0.5 { x[j] } else { t[j] }).collect();
        assert_eq!(child, expected);
        assert_eq!(crossover_matrix_form(t, x, &mask).unwrap(), child);
    }

    #[test]
    fn mutation_boundaries() {
        let ind = vec![1.0, -2.0, 3.5];
        let (same, w) = mutation_elementwise(&ind, &MutationConfig::uniform(0.0, 3, 0.5, 1.5).unwrap(), &mut rng(0)).unwrap();
        assert_eq!((same, w), (ind.clone(), vec![1.0; 3]));
        let (scaled, _) = mutation_elementwise(&ind, &MutationConfig::uniform(1.0, 3, 2.0, 2.0).unwrap(), &mut rng(0)).unwrap();
        assert_eq!(scaled, vec![2.0, -4.0, 7.0]);
        assert_eq!(mutation_matrix_form(&ind, &[0.0; 3]).unwrap(), vec![0.0, -0.0, 0.0]);
        assert!(MutationConfig::uniform(0.5, 2, 1.0, 0.5).is_err());
    }

    #[test]
    fn evolve_edge_cases() {
        let pop = Population::random(5, 3, &mut rng(0));
        let cx = CrossoverConfig::new(0.9).unwrap();
        let mu = MutationConfig::uniform(0.3, 3, 0.5, 1.5).unwrap();
        let zero = evolve(&pop, sphere, 0, &cx, &mu, &mut rng(1)).unwrap();
        assert_eq!(zero.population, pop);
        assert_eq!(zero.trace.len(), 1);
        let flat = evolve(&pop, |_| 1.0, 20, &cx, &mu, &mut rng(1)).unwrap();
        assert_eq!(flat.population, pop);
        let empty = Population::new(vec![]).unwrap();
        assert!(matches!(evolve(&empty, sphere, 1, &cx, &mu, &mut rng(1)), Err(Error::EmptyPopulation)));
    }

    #[test]
    fn best_individual_examples() {
        let pop = Population::new(vec![vec![3.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(best_individual(&pop, |x| x[0]).unwrap().0, 1);
        let single = Population::new(vec![vec![9.0]]).unwrap();
        assert_eq!(best_individual(&single, sphere).unwrap().0, 0);
        let tied = Population::new(vec![vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(best_individual(&tied, sphere).unwrap().0, 0);
        assert!(best_individual(&Population::new(vec![]).unwrap(), sphere).is_err());
    }
}
