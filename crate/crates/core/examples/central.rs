// Scratch: does plain centralized SGD learn the synthetic task? Not part of
// the deliverable.

use fedaudit_core::data::{gen_synthetic, ImageShape};
use fedaudit_core::nn::{self, Activation, Batch, ModelSpec, MomentumState};
use fedaudit_core::seeds;
use rand::seq::SliceRandom;

fn main() {
    let pool = gen_synthetic(10, ImageShape::new(3, 8, 8), 2500, 101).unwrap();
    let data = fedaudit_core::data::Dataset::new(
        pool.images()[..2000].to_vec(),
        10,
        ImageShape::new(3, 8, 8),
    )
    .unwrap();
    let eval = fedaudit_core::data::Dataset::new(
        pool.images()[2000..].to_vec(),
        10,
        ImageShape::new(3, 8, 8),
    )
    .unwrap();
    let eval_batch = eval.to_batch();
    let spec = ModelSpec::new(vec![192, 64, 10], Activation::Relu).unwrap();
    let mut params = nn::init_params(&spec, 1);
    let mut momentum = MomentumState::new(params.len(), 0.9).unwrap();
    let mut rng = seeds::rng(7);

    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(30);

    let mut indices: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(32) {
            let mut sorted = chunk.to_vec();
            sorted.sort_unstable();
            let batch: Batch = data.batch_of(&sorted);
            let (_, grad) = nn::loss_and_grad(&params, &batch).unwrap();
            let (p, m) = nn::sgd_step(&params, &grad, lr, &momentum).unwrap();
            params = p;
            momentum = m;
        }
        if epoch % 5 == 0 || epoch == epochs - 1 {
            let (acc, loss) = nn::evaluate(&params, &eval_batch).unwrap();
            let wnorm: f64 = params.values().iter().map(|v| v * v).sum::<f64>().sqrt();
            println!("epoch {epoch:3} acc={acc:.3} loss={loss:.3} |w|={wnorm:.2}");
        }
    }
}
