use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shortfall::risk::empirical_shortfall;

fn main() {
    let t = 20000;
    let (crash, q) = (0.03f64, 0.10f64);
    let drift = crash * q / (1.0 - q);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = DMatrix::zeros(t, 3);
    for i in 0..t {
        m[(i, 0)] = 0.01 * rng.sample::<f64, _>(StandardNormal);
        let u: f64 = rng.gen();
        m[(i, 1)] = if u < q { -crash } else { drift };
        m[(i, 2)] = 0.001 * rng.sample::<f64, _>(StandardNormal);
    }
    for p in [0.6, 0.9] {
        print!("p={p}: ");
        for e in [-1.0f64, -0.6, -0.3, -0.15, -0.05, 0.0, 0.05, 0.15, 0.3, 0.6, 1.0] {
            let w = DVector::from_vec(vec![1.0, e, -e]);
            let returns = &m * &w;
            let s = empirical_shortfall(returns.as_slice(), p).unwrap().value;
            print!("s({e})={s:.5} ");
        }
        println!();
    }
}
