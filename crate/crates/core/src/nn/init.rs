use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Parameter initializer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Normal with standard deviation `1/√fan_in`, redrawn beyond two sigmas.
    TruncatedNormal { fan_in: usize },
    /// Uniform on `±√(6/(fan_in+fan_out))`.
    GlorotUniform { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

impl Init {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Init::TruncatedNormal { fan_in } => {
                let std = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| loop {
                        let z: f64 = StandardNormal.sample(rng);
                        if z.abs() <= 2.0 {
                            break z * std;
                        }
                    })
                    .collect()
            }
            Init::GlorotUniform { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truncated_normal_bounds_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Init::TruncatedNormal { fan_in: 100 }.sample(20_000, &mut rng);
        assert!(v.iter().all(|x| x.abs() <= 0.2 + 1e-12));
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        // variance of a standard normal truncated at ±2 is ≈ 0.774
        assert!((var / 0.01 - 0.774).abs() < 0.03, "{var}");
    }

    #[test]
    fn glorot_within_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Init::GlorotUniform { fan_in: 4, fan_out: 2 }.sample(1000, &mut rng);
        assert!(v.iter().all(|x| x.abs() <= 1.0));
    }
}
