// Central finite-difference oracle for every differentiable tape op.
//
// Each probe builds a scalar loss `Σ (op(inputs) − r)²` with a random target
// `r`, computes gradients through the tape, and compares them with central
// differences of the eager forward path.

use mirlab::numerics::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

type Forward = dyn Fn(&[Tensor<f64>]) -> Tensor<f64>;
type Recorded = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub eager: Box<Forward>,
    pub taped: Box<Recorded>,
}

fn draw(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    // keep clear of the ReLU kink so a step of STEP never crosses it
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut d = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.01..1.0)).collect();
        let z: f64 = raw.iter().sum();
        d.extend(raw.iter().map(|v| v / z));
    }
    Tensor::new(vec![rows, cols], d).unwrap()
}

pub fn cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = stochastic(&mut rng, 2, 5);
    let targets_taped = targets.clone();
    vec![
        OpCase {
            name: "matmul",
            shapes: vec![vec![2, 5], vec![5, 2]],
            eager: Box::new(|x| x[0].matmul(&x[1]).unwrap()),
            taped: Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "matmul_t",
            shapes: vec![vec![2, 5], vec![3, 5]],
            eager: Box::new(|x| x[0].matmul_t(&x[1]).unwrap()),
            taped: Box::new(|t, v| t.matmul_t(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "conv2d_stride1",
            shapes: vec![vec![2, 2, 4, 5], vec![3, 2, 3, 3], vec![3]],
            eager: Box::new(|x| x[0].conv2d(&x[1], &x[2], 1).unwrap()),
            taped: Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 1).unwrap()),
        },
        OpCase {
            name: "conv2d_stride2",
            shapes: vec![vec![1, 2, 5, 4], vec![2, 2, 3, 3], vec![2]],
            eager: Box::new(|x| x[0].conv2d(&x[1], &x[2], 2).unwrap()),
            taped: Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 2).unwrap()),
        },
        OpCase {
            name: "relu",
            shapes: vec![vec![10]],
            eager: Box::new(|x| x[0].relu()),
            taped: Box::new(|t, v| t.relu(v[0])),
        },
        OpCase {
            name: "add",
            shapes: vec![vec![10], vec![10]],
            eager: Box::new(|x| x[0].add(&x[1]).unwrap()),
            taped: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "add_bias",
            shapes: vec![vec![2, 5], vec![5]],
            eager: Box::new(|x| x[0].add_bias(&x[1]).unwrap()),
            taped: Box::new(|t, v| t.add_bias(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "scale",
            shapes: vec![vec![10]],
            eager: Box::new(|x| x[0].scale(-1.7)),
            taped: Box::new(|t, v| t.scale(v[0], -1.7)),
        },
        OpCase {
            name: "concat",
            shapes: vec![vec![2, 2], vec![2, 3]],
            eager: Box::new(|x| Tensor::concat(&[&x[0], &x[1]], 1).unwrap()),
            taped: Box::new(|t, v| t.concat(&[v[0], v[1]], 1).unwrap()),
        },
        OpCase {
            name: "reshape",
            shapes: vec![vec![2, 5]],
            eager: Box::new(|x| x[0].reshape(&[5, 2]).unwrap()),
            taped: Box::new(|t, v| t.reshape(v[0], &[5, 2]).unwrap()),
        },
        OpCase {
            name: "select_rows",
            shapes: vec![vec![5, 2]],
            eager: Box::new(|x| x[0].select_rows(&[4, 0, 4]).unwrap()),
            taped: Box::new(|t, v| t.select_rows(v[0], &[4, 0, 4]).unwrap()),
        },
        OpCase {
            name: "sum",
            shapes: vec![vec![10]],
            eager: Box::new(|x| x[0].sum()),
            taped: Box::new(|t, v| t.sum(v[0])),
        },
        OpCase {
            name: "mse",
            shapes: vec![vec![10], vec![10]],
            eager: Box::new(|x| x[0].mse(&x[1]).unwrap()),
            taped: Box::new(|t, v| t.mse(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "softmax_xent_soft",
            shapes: vec![vec![2, 5]],
            eager: Box::new(move |x| x[0].softmax_xent_soft(&targets).unwrap()),
            taped: Box::new(move |t, v| t.softmax_xent_soft(v[0], &targets_taped).unwrap()),
        },
    ]
}

fn loss_eager(case: &OpCase, inputs: &[Tensor<f64>], r: &Tensor<f64>) -> f64 {
    (case.eager)(inputs).reshape(&[r.numel()]).unwrap().mse(r).unwrap().data()[0]
}

fn elem_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        // both gradients vanish; compare absolutely
        if (a - n).abs() < 1e-8 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - n).abs() / scale
    }
}

/// Worst relative error over `probes` random draws for one op.
pub fn check(case: &OpCase, probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let inputs: Vec<Tensor<f64>> = case.shapes.iter().map(|s| draw(&mut rng, s)).collect();
        let out_len = (case.eager)(&inputs).numel();
        let r = draw(&mut rng, &[out_len]);

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = (case.taped)(&mut tape, &vars);
        let flat = tape.reshape(out, &[out_len]).unwrap();
        let rv = tape.leaf(r.clone());
        let loss = tape.mse(flat, rv).unwrap();
        tape.backward(loss).unwrap();

        for (k, x) in inputs.iter().enumerate() {
            let analytic = tape.grad_or_zeros(vars[k]);
            for i in 0..x.numel() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += STEP;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= STEP;
                let numeric = (loss_eager(case, &plus, &r) - loss_eager(case, &minus, &r)) / (2.0 * STEP);
                worst = worst.max(elem_err(analytic[i], numeric));
            }
        }
    }
    worst
}

/// Every op's worst relative error.
pub fn run_all(probes: usize, seed: u64) -> Vec<(&'static str, f64)> {
    cases(seed)
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name, check(c, probes, seed.wrapping_add(1000 + i as u64))))
        .collect()
}
