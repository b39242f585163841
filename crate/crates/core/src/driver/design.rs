use rand::seq::SliceRandom;
use rand::Rng;

/// Latin-hypercube sample of `n` points in `[0, 1]^dim`: every axis is cut
/// into `n` strata and each stratum holds exactly one point.
pub fn latin_hypercube<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in points.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_point_per_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(7, 3, &mut rng);
        for d in 0..3 {
            let mut seen = vec![false; 7];
            for p in &pts {
                assert!((0.0..1.0).contains(&p[d]));
                let s = (p[d] * 7.0) as usize;
                assert!(!seen[s]);
                seen[s] = true;
            }
        }
    }
}
