//! Finite-difference validation of every differentiable op and of the
//! composed losses (MLP + cross-entropy, sliced Wasserstein).
//!
//! The oracle is `finite_diff_gradient`, which never touches the tape.
//! Kink neighborhoods (relu/abs inputs near 0, near-tied projections)
//! are excluded by resampling, matching the documented contracts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swd_core::{
    finite_diff_gradient, sample_projections, swd_node, CostKind, NodeId, Result, Tape, Tensor,
};

const H: f64 = 1e-5;
const INSTANCES: usize = 50;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Max guarded relative error between the tape gradient and central
/// finite differences, for the leaf returned by `build`.
fn grad_error<F>(build: &F, x: &Tensor) -> f64
where
    F: Fn(&mut Tape, &Tensor) -> Result<(NodeId, NodeId)>,
{
    let mut tape = Tape::new();
    let (leaf, loss) = build(&mut tape, x).unwrap();
    tape.backward(loss).unwrap();
    let analytic = tape.grad(leaf).unwrap().to_vec();

    let fd = finite_diff_gradient(
        |probe| {
            let mut t = Tape::new();
            let (_, out) = build(&mut t, probe)?;
            t.scalar(out)
        },
        x,
        H,
    )
    .unwrap();

    analytic
        .iter()
        .zip(fd.values())
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn assert_op_gradients<F>(name: &str, tol: f64, mut make_instance: F)
where
    F: FnMut(&mut ChaCha8Rng) -> (Tensor, Box<dyn Fn(&mut Tape, &Tensor) -> Result<(NodeId, NodeId)>>),
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + name.len() as u64);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let (x, build) = make_instance(&mut rng);
        worst = worst.max(grad_error(&build, &x));
    }
    assert!(worst < tol, "{name}: max rel err {worst:.3e} >= {tol:.0e}");
}

#[test]
fn matmul_gradient_wrt_left_operand() {
    assert_op_gradients("matmul_left", 1e-6, |rng| {
        let a = rand_tensor(rng, 3, 3, -2.0, 2.0);
        let b = rand_tensor(rng, 3, 3, -2.0, 2.0);
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let pa = tape.leaf(probe.clone().requiring_grad());
            let pb = tape.leaf(b.clone());
            let prod = tape.matmul(pa, pb)?;
            let loss = tape.sum_all(prod)?;
            Ok((pa, loss))
        };
        (a, Box::new(build))
    });
}

#[test]
fn matmul_gradient_wrt_right_operand() {
    assert_op_gradients("matmul_right", 1e-6, |rng| {
        let a = rand_tensor(rng, 2, 4, -2.0, 2.0);
        let b = rand_tensor(rng, 4, 3, -2.0, 2.0);
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let pa = tape.leaf(a.clone());
            let pb = tape.leaf(probe.clone().requiring_grad());
            let prod = tape.matmul(pa, pb)?;
            let loss = tape.sum_all(prod)?;
            Ok((pb, loss))
        };
        (b, Box::new(build))
    });
}

#[test]
fn add_bias_gradient_wrt_bias() {
    assert_op_gradients("add_bias", 1e-6, |rng| {
        let x = rand_tensor(rng, 4, 2, -2.0, 2.0);
        let bias = rand_tensor(rng, 1, 2, -2.0, 2.0);
        let weights = rand_tensor(rng, 4, 2, -2.0, 2.0);
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let px = tape.leaf(x.clone());
            let pb = tape.leaf(probe.clone().requiring_grad());
            let w = tape.leaf(weights.clone());
            let sum = tape.add_bias(px, pb)?;
            let weighted = tape.mul(sum, w)?;
            let loss = tape.sum_all(weighted)?;
            Ok((pb, loss))
        };
        (bias, Box::new(build))
    });
}

#[test]
fn relu_gradient_away_from_kinks() {
    assert_op_gradients("relu", 1e-6, |rng| {
        let mut x = rand_tensor(rng, 2, 5, -2.0, 2.0);
        while x.values().iter().any(|v| v.abs() < 1e-3) {
            x = rand_tensor(rng, 2, 5, -2.0, 2.0);
        }
        let w = rand_tensor(rng, 2, 5, -2.0, 2.0);
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let px = tape.leaf(probe.clone().requiring_grad());
            let pw = tape.leaf(w.clone());
            let r = tape.relu(px)?;
            let weighted = tape.mul(r, pw)?;
            let loss = tape.sum_all(weighted)?;
            Ok((px, loss))
        };
        (x, Box::new(build))
    });
}

#[test]
fn abs_gradient_away_from_kinks() {
    assert_op_gradients("abs", 1e-6, |rng| {
        let mut x = rand_tensor(rng, 1, 6, -2.0, 2.0);
        while x.values().iter().any(|v| v.abs() < 1e-3) {
            x = rand_tensor(rng, 1, 6, -2.0, 2.0);
        }
        let build = |tape: &mut Tape, probe: &Tensor| {
            let px = tape.leaf(probe.clone().requiring_grad());
            let a = tape.abs(px)?;
            let loss = tape.sum_all(a)?;
            Ok((px, loss))
        };
        (x, Box::new(build))
    });
}

#[test]
fn composed_relu_matmul_gradient() {
    // Pre-activations are required to clear the kink band.
    assert_op_gradients("relu_matmul", 1e-5, |rng| {
        let (x, w) = loop {
            let x = rand_tensor(rng, 2, 3, -2.0, 2.0);
            let w = rand_tensor(rng, 3, 4, -2.0, 2.0);
            let mut tape = Tape::new();
            let px = tape.leaf(x.clone());
            let pw = tape.leaf(w.clone());
            let pre = tape.matmul(px, pw).unwrap();
            if tape.values(pre).iter().all(|v| v.abs() > 1e-3) {
                break (x, w);
            }
        };
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let px = tape.leaf(probe.clone().requiring_grad());
            let pw = tape.leaf(w.clone());
            let pre = tape.matmul(px, pw)?;
            let post = tape.relu(pre)?;
            let loss = tape.sum_all(post)?;
            Ok((px, loss))
        };
        (x, Box::new(build))
    });
}

#[test]
fn softmax_gradient() {
    assert_op_gradients("softmax", 1e-6, |rng| {
        let x = rand_tensor(rng, 3, 4, -2.0, 2.0);
        let w = rand_tensor(rng, 3, 4, -2.0, 2.0);
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let px = tape.leaf(probe.clone().requiring_grad());
            let pw = tape.leaf(w.clone());
            let s = tape.softmax(px)?;
            let weighted = tape.mul(s, pw)?;
            let loss = tape.sum_all(weighted)?;
            Ok((px, loss))
        };
        (x, Box::new(build))
    });
}

#[test]
fn cross_entropy_gradient() {
    assert_op_gradients("cross_entropy", 1e-6, |rng| {
        let logits = rand_tensor(rng, 5, 3, -2.0, 2.0);
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3usize)).collect();
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let pl = tape.leaf(probe.clone().requiring_grad());
            let loss = tape.softmax_cross_entropy_mean(pl, &labels)?;
            Ok((pl, loss))
        };
        (logits, Box::new(build))
    });
}

#[test]
fn gather_gradient_through_sum_of_squares() {
    assert_op_gradients("gather", 1e-6, |rng| {
        let x = rand_tensor(rng, 1, 7, -2.0, 2.0);
        let mut perm: Vec<usize> = (0..7).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let px = tape.leaf(probe.clone().requiring_grad());
            let g = tape.gather(px, &perm)?;
            let sq = tape.mul(g, g)?;
            let loss = tape.sum_all(sq)?;
            Ok((px, loss))
        };
        (x, Box::new(build))
    });
}

#[test]
fn scale_add_sub_reshape_transpose_gradients() {
    assert_op_gradients("arith_chain", 1e-6, |rng| {
        let x = rand_tensor(rng, 3, 2, -2.0, 2.0);
        let y = rand_tensor(rng, 3, 2, -2.0, 2.0);
        let w = rand_tensor(rng, 2, 3, -2.0, 2.0);
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let px = tape.leaf(probe.clone().requiring_grad());
            let py = tape.leaf(y.clone());
            let pw = tape.leaf(w.clone());
            let scaled = tape.scale(px, -1.7)?;
            let mixed = tape.sub(scaled, py)?;
            let summed = tape.add(mixed, px)?;
            let t = tape.transpose(summed)?;
            let weighted = tape.mul(t, pw)?;
            let flat = tape.reshape(weighted, 1, 6)?;
            let r0 = tape.row_slice(flat, 0)?;
            let loss = tape.sum_all(r0)?;
            Ok((px, loss))
        };
        (x, Box::new(build))
    });
}

#[test]
fn project_gradient_through_quadratic() {
    assert_op_gradients("project", 1e-6, |rng| {
        let points = rand_tensor(rng, 4, 3, -2.0, 2.0);
        let dirs = sample_projections(5, 3, rng.random()).unwrap();
        let build = move |tape: &mut Tape, probe: &Tensor| {
            let p = tape.leaf(probe.clone().requiring_grad());
            let proj = swd_core::ot::project_node(tape, p, &dirs)?;
            let sq = tape.mul(proj, proj)?;
            let loss = tape.sum_all(sq)?;
            Ok((p, loss))
        };
        (points, Box::new(build))
    });
}

/// Smallest gap between consecutive sorted projections of either
/// measure, over all directions; used to exclude near-ties.
fn min_projection_gap(p1: &Tensor, p2: &Tensor, dirs: &swd_core::ProjectionSet) -> f64 {
    let mut min_gap = f64::INFINITY;
    for m in 0..dirs.len() {
        let dir = dirs.direction(m);
        for points in [p1, p2] {
            let mut proj: Vec<f64> = (0..points.rows())
                .map(|i| {
                    points
                        .row(i)
                        .iter()
                        .zip(dir)
                        .map(|(&a, &b)| a * b)
                        .sum::<f64>()
                })
                .collect();
            proj.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in proj.windows(2) {
                min_gap = min_gap.min(w[1] - w[0]);
            }
        }
    }
    min_gap
}

#[test]
fn swd_gradient_wrt_both_measures() {
    for cost in [CostKind::Quadratic, CostKind::Absolute] {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11C_E5 + matches!(cost, CostKind::Absolute) as u64);
        let mut worst = 0.0f64;
        for _ in 0..INSTANCES {
            let (p1, p2, dirs) = loop {
                let p1 = rand_tensor(&mut rng, 5, 3, -2.0, 2.0);
                let p2 = rand_tensor(&mut rng, 5, 3, -2.0, 2.0);
                let dirs = sample_projections(6, 3, rng.random()).unwrap();
                if min_projection_gap(&p1, &p2, &dirs) > 1e-6 {
                    break (p1, p2, dirs);
                }
            };
            for first in [true, false] {
                let p_other = if first { p2.clone() } else { p1.clone() };
                let dirs = dirs.clone();
                let build = move |tape: &mut Tape, probe: &Tensor| {
                    let a = tape.leaf(probe.clone().requiring_grad());
                    let b = tape.leaf(p_other.clone());
                    let loss = if first {
                        swd_node(tape, a, b, &dirs, cost)?
                    } else {
                        swd_node(tape, b, a, &dirs, cost)?
                    };
                    Ok((a, loss))
                };
                let x = if first { p1.clone() } else { p2.clone() };
                worst = worst.max(grad_error(&build, &x));
            }
        }
        assert!(worst < 1e-4, "swd {cost:?}: max rel err {worst:.3e}");
    }
}

#[test]
fn full_mlp_cross_entropy_gradient_on_every_parameter() {
    // 2-layer MLP: logits = relu(x·W1 + b1)·W2 + b2, CE loss.
    let mut rng = ChaCha8Rng::seed_from_u64(0x1A2B);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut rng, 4, 3, -2.0, 2.0);
        let w1 = rand_tensor(&mut rng, 3, 6, -1.0, 1.0);
        let b1 = rand_tensor(&mut rng, 1, 6, -1.0, 1.0);
        let w2 = rand_tensor(&mut rng, 6, 3, -1.0, 1.0);
        let b2 = rand_tensor(&mut rng, 1, 3, -1.0, 1.0);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3usize)).collect();

        // Skip draws whose hidden pre-activations sit in the kink band.
        {
            let mut t = Tape::new();
            let px = t.leaf(x.clone());
            let pw1 = t.leaf(w1.clone());
            let pb1 = t.leaf(b1.clone());
            let mm = t.matmul(px, pw1).unwrap();
            let pre = t.add_bias(mm, pb1).unwrap();
            if t.values(pre).iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
        }

        let params: [(usize, Tensor); 4] = [
            (0, w1.clone()),
            (1, b1.clone()),
            (2, w2.clone()),
            (3, b2.clone()),
        ];
        for (which, value) in params {
            let (x, w1, b1, w2, b2, labels) = (
                x.clone(),
                w1.clone(),
                b1.clone(),
                w2.clone(),
                b2.clone(),
                labels.clone(),
            );
            let build = move |tape: &mut Tape, probe: &Tensor| {
                let pick = |tape: &mut Tape, idx: usize, default: &Tensor| {
                    if idx == which {
                        tape.leaf(probe.clone().requiring_grad())
                    } else {
                        tape.leaf(default.clone())
                    }
                };
                let px = tape.leaf(x.clone());
                let pw1 = pick(tape, 0, &w1);
                let pb1 = pick(tape, 1, &b1);
                let pw2 = pick(tape, 2, &w2);
                let pb2 = pick(tape, 3, &b2);
                let mm1 = tape.matmul(px, pw1)?;
                let pre = tape.add_bias(mm1, pb1)?;
                let hidden = tape.relu(pre)?;
                let mm2 = tape.matmul(hidden, pw2)?;
                let logits = tape.add_bias(mm2, pb2)?;
                let loss = tape.softmax_cross_entropy_mean(logits, &labels)?;
                let target = match which {
                    0 => pw1,
                    1 => pb1,
                    2 => pw2,
                    _ => pb2,
                };
                Ok((target, loss))
            };
            worst = worst.max(grad_error(&build, &value));
        }
    }
    assert!(worst < 1e-5, "mlp: max rel err {worst:.3e}");
}
