//! Reverse-mode gradients validated against finite differences.
//!
//! Builds a small computation mixing dense layers, a gating
//! nonlinearity, and the forward-kinematics node, backpropagates, and
//! compares a sample of analytic partial derivatives against central
//! differences.

use motionlab::autodiff::{central_difference, Graph, GraphError, NodeId, ParamSet, Tensor};
use motionlab::skeleton::Skeleton;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::sync::Arc;

fn build(
    g: &mut Graph,
    params: &ParamSet,
    x: &Tensor,
    skeleton: &Arc<Skeleton>,
) -> Result<NodeId, GraphError> {
    let x = g.input(x.clone());
    let w1 = g.param(params, "w1")?;
    let b1 = g.param(params, "b1")?;
    let w2 = g.param(params, "w2")?;
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.tanh(h);
    let gate = g.sigmoid(h);
    let h = g.mul(h, gate)?;
    let twists = g.matmul(h, w2)?;
    let joints = g.fk(twists, skeleton.clone())?;
    let norms = g.l2_norm_rows(joints)?;
    Ok(g.mean(norms))
}

fn loss(params: &ParamSet, x: &Tensor, skeleton: &Arc<Skeleton>) -> f64 {
    let mut g = Graph::new();
    let l = build(&mut g, params, x, skeleton).expect("graph builds");
    g.value(l).item().expect("scalar loss")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = StdRng::seed_from_u64(3);
    let skeleton = Arc::new(Skeleton::default_h36m16());
    let mut params = ParamSet::new();
    let mut rand_tensor = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap()
    };
    params.define("w1", rand_tensor(&[10, 24]))?;
    params.define("b1", rand_tensor(&[24]))?;
    params.define("w2", rand_tensor(&[24, 96]))?;
    let x = rand_tensor(&[4, 10]);

    // One backward pass for the analytic gradients.
    let mut g = Graph::new();
    let l = build(&mut g, &params, &x, &skeleton)?;
    println!("loss = {:.6}", g.value(l).item()?);
    g.backward(l, &mut params)?;

    let mut worst = 0.0f64;
    let mut checks = 0;
    for name in ["w1", "b1", "w2"] {
        let len = params.value(name).unwrap().len();
        for k in 0..8 {
            let idx = (k * 997) % len;
            let analytic = params.grad(name).unwrap().data()[idx];
            let numeric =
                central_difference(&mut params, name, idx, 1e-5, |p| loss(p, &x, &skeleton));
            let rel = (analytic - numeric).abs() / analytic.abs().max(1e-8);
            worst = worst.max(rel);
            checks += 1;
        }
    }
    println!("{checks} finite-difference checks: worst relative error {worst:.3e}");
    Ok(())
}
