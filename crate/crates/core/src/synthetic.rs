//! Reproducible teacher-student datasets with standard normal inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::net::{forward_batch, Dataset, Net};

/// `n × d` row-major i.i.d. standard normal samples.
pub fn gaussian_inputs(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Labels `n` Gaussian inputs with the teacher network; noise-free.
pub fn teacher_dataset(teacher: &Net, theta: &[f64], n: usize, seed: u64) -> Result<Dataset> {
    teacher.check_params(theta)?;
    let d = teacher.input_dim();
    let x = gaussian_inputs(n, d, seed);
    let unlabeled = Dataset::new(d, teacher.output_dim(), x, vec![0.0; n * teacher.output_dim()])?;
    let y = forward_batch(teacher, theta, &unlabeled)?;
    Dataset::new(d, teacher.output_dim(), unlabeled.inputs().to_vec(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use crate::net::init_params;

    #[test]
    fn inputs_are_seeded_and_standard() {
        let a = gaussian_inputs(20_000, 2, 7);
        assert_eq!(a, gaussian_inputs(20_000, 2, 7));
        assert_ne!(a, gaussian_inputs(20_000, 2, 8));
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03);
    }

    #[test]
    fn teacher_labels_are_exact() {
        let net = Net::chain(&[3, 2, 1], ActivationKind::ErfScaled, true).unwrap();
        let theta = init_params(&net, 1, 1.0).unwrap();
        let data = teacher_dataset(&net, &theta, 50, 3).unwrap();
        assert_eq!(data.len(), 50);
        for i in 0..50 {
            let y = crate::net::forward(&net, &theta, data.input(i)).unwrap();
            assert_eq!(y[0], data.target(i)[0]);
        }
        let loss = crate::derivatives::loss(&net, &theta, &data, &Default::default()).unwrap();
        assert_eq!(loss, 0.0);
    }
}
