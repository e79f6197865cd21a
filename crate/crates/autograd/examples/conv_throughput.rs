//! Times forward+backward of a 3-layer strided conv encoder on a batch of images.

use std::time::Instant;

use corelnet_autograd::{Graph, Init, ParamStore, Tensor};
use rand::SeedableRng;

fn main() -> corelnet_autograd::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let batch = args.first().copied().unwrap_or(64);
    let size = args.get(1).copied().unwrap_or(32);
    let layers = args.get(2).copied().unwrap_or(3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let mut convs = Vec::new();
    let mut c = 3;
    let mut s = size;
    for l in 0..layers {
        convs.push(store.add(format!("conv{l}"), &[32, c, 4, 4], Init::FanIn(c * 16), &mut rng));
        c = 32;
        s /= 2;
    }
    let fc = store.add("fc", &[32 * s * s, 256], Init::FanIn(32 * s * s), &mut rng);
    let out = store.add("out", &[256, 128], Init::FanIn(256), &mut rng);
    let images = Tensor::new([batch, 3, size, size], (0..batch * 3 * size * size).map(|i| (i % 7) as f32 / 7.0).collect())?;
    let reps = 10;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new();
        let mut x = g.constant(images.clone());
        for &w in &convs {
            let wv = g.param(&store, w);
            x = g.conv2d(x, wv, 2, 1)?;
            x = g.relu(x)?;
        }
        let x = g.flatten(x)?;
        let f = g.param(&store, fc);
        let h = g.matmul(x, f)?;
        let h = g.relu(h)?;
        let o = g.param(&store, out);
        let z = g.matmul(h, o)?;
        let l = g.l1_norm(z)?;
        g.backward(l)?.accumulate_into(&mut store);
    }
    let per = t0.elapsed().as_secs_f64() / reps as f64;
    println!("batch {batch} size {size} layers {layers}: {:.1} ms per forward+backward", per * 1e3);
    Ok(())
}
