//! Central finite differences against `backward` for every differentiable op.

use hsr_autodiff::{Real, Tape, Tensor, Var};
use proptest::prelude::*;

const H: Real = 1e-5;
const REL_TOL: Real = 1e-4;

fn rel_err(a: Real, b: Real) -> Real {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares analytic and numeric gradients of `f` w.r.t. each input tensor.
fn check<F>(inputs: &[Tensor], f: F) -> Real
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &leaves);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| Tensor::zeros(l.shape())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Real {
        let tape = Tape::new();
        let leaves: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &leaves).item()
    };
    let mut worst: Real = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}

fn tensor(shape: &[usize], data: Vec<Real>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn values(n: usize, lo: Real, hi: Real) -> impl Strategy<Value = Vec<Real>> {
    prop::collection::vec(lo..hi, n)
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum<'t>(tape: &'t Tape, y: Var<'t>) -> Var<'t> {
    let shape = y.shape();
    let n: usize = shape.iter().product();
    let w: Vec<Real> = (0..n).map(|i| 0.3 + 0.17 * i as Real).collect();
    let w = tape.constant(Tensor::new(shape, w).unwrap());
    y.mul(w).unwrap().sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn binary_ops_with_broadcast(a in values(6, -2.0, 2.0), b in values(3, 0.5, 2.0)) {
        let inputs = [tensor(&[2, 3], a), tensor(&[3], b)];
        for op in 0..4 {
            let err = check(&inputs, |tape, x| {
                let y = match op {
                    0 => x[0].add(x[1]),
                    1 => x[0].sub(x[1]),
                    2 => x[0].mul(x[1]),
                    _ => x[0].div(x[1]),
                }
                .unwrap();
                weighted_sum(tape, y)
            });
            prop_assert!(err < REL_TOL, "op {op}: {err}");
        }
    }

    #[test]
    fn smooth_unary_ops(a in values(5, -1.5, 1.5)) {
        let inputs = [tensor(&[5], a)];
        let ops: Vec<fn(Var) -> Var> = vec![
            |x| x.neg(),
            |x| x.exp(),
            |x| x.square().offset(0.5).log(),
            |x| x.softplus(100.0),
            |x| x.softplus(1.0),
            |x| x.sigmoid(),
            |x| x.tanh(),
            |x| x.sin(),
            |x| x.cos(),
            |x| x.square().offset(0.1).sqrt(),
            |x| x.scale(-2.5),
            |x| x.offset(3.0),
        ];
        for (k, op) in ops.iter().enumerate() {
            let err = check(&inputs, |tape, x| weighted_sum(tape, op(x[0])));
            prop_assert!(err < REL_TOL, "unary op {k}: {err}");
        }
    }

    #[test]
    fn kinked_unary_ops_away_from_kink(a in values(5, 0.01, 1.0), sign in values(5, -1.0, 1.0)) {
        let data: Vec<Real> = a.iter().zip(&sign).map(|(x, s)| if *s < 0.0 { -x } else { *x }).collect();
        let inputs = [tensor(&[5], data)];
        for k in 0..3 {
            let err = check(&inputs, |tape, x| {
                let y = match k {
                    0 => x[0].abs(),
                    1 => x[0].relu(),
                    _ => x[0].clamp_min(0.0),
                };
                weighted_sum(tape, y)
            });
            prop_assert!(err < REL_TOL, "kinked op {k}: {err}");
        }
    }

    #[test]
    fn matmul_all_transposes(a in values(6, -1.0, 1.0), b in values(8, -1.0, 1.0)) {
        // a: [3,2], b: [2,4]
        let inputs = [tensor(&[3, 2], a.clone()), tensor(&[2, 4], b.clone())];
        let err = check(&inputs, |tape, x| weighted_sum(tape, x[0].matmul(x[1]).unwrap()));
        prop_assert!(err < REL_TOL);
        // a·bᵀ with b stored [4,2]
        let inputs = [tensor(&[3, 2], a), tensor(&[4, 2], b)];
        let err = check(&inputs, |tape, x| weighted_sum(tape, x[0].matmul_t(x[1]).unwrap()));
        prop_assert!(err < REL_TOL);
    }

    #[test]
    fn linear_layer(x in values(6, -1.0, 1.0), w in values(12, -1.0, 1.0), b in values(4, -1.0, 1.0)) {
        let inputs = [tensor(&[2, 3], x), tensor(&[3, 4], w), tensor(&[4], b)];
        let err = check(&inputs, |tape, v| weighted_sum(tape, v[0].linear(v[1], v[2]).unwrap()));
        prop_assert!(err < REL_TOL);
    }

    #[test]
    fn weight_norm_random_4x4(v in values(16, -1.0, 1.0), g in values(4, 0.5, 2.0)) {
        let inputs = [tensor(&[4, 4], v), tensor(&[4], g)];
        let err = check(&inputs, |tape, x| weighted_sum(tape, x[0].weight_norm(x[1]).unwrap()));
        prop_assert!(err < REL_TOL, "{err}");
    }

    #[test]
    fn reductions_and_layout(a in values(12, -1.0, 1.0), b in values(4, -1.0, 1.0)) {
        let inputs = [tensor(&[3, 4], a), tensor(&[1, 4], b)];
        let err = check(&inputs, |tape, x| {
            let s0 = x[0].sum_axis(0).unwrap();
            let s1 = x[0].sum_axis(1).unwrap().broadcast_to(&[3, 4]).unwrap();
            let c = tape.concat(&[x[0], x[1]], 0).unwrap();
            let sl = c.slice(0, 1, 4).unwrap().slice(1, 1, 3).unwrap();
            let r = x[0].reshape(&[2, 6]).unwrap();
            let total = weighted_sum(tape, s0)
                .add(weighted_sum(tape, s1)).unwrap()
                .add(weighted_sum(tape, sl)).unwrap()
                .add(weighted_sum(tape, r)).unwrap()
                .add(x[1].broadcast_to(&[3, 4]).unwrap().mean()).unwrap();
            total
        });
        prop_assert!(err < REL_TOL, "{err}");
    }

    #[test]
    fn cumulative_ops(a in values(10, 0.05, 0.95)) {
        let inputs = [tensor(&[2, 5], a)];
        let err = check(&inputs, |tape, x| weighted_sum(tape, x[0].cumsum_exclusive()));
        prop_assert!(err < REL_TOL);
        let err = check(&inputs, |tape, x| weighted_sum(tape, x[0].cumprod_exclusive()));
        prop_assert!(err < REL_TOL, "{err}");
    }

    #[test]
    fn activation_ranges(a in values(32, -30.0, 30.0)) {
        let tape = Tape::new();
        let x = tape.constant(tensor(&[32], a));
        let sp = x.softplus(100.0).value();
        let sg = x.sigmoid().value();
        let th = x.scale(0.5).tanh().value();
        prop_assert!(sp.data().iter().all(|&v| v >= 0.0));
        prop_assert!(sg.data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(th.data().iter().all(|&v| v > -1.0 && v < 1.0));
    }
}

#[test]
fn cumprod_gradient_through_exact_zero() {
    // A zero factor must not poison the gradient of earlier factors.
    let inputs = [tensor(&[4], vec![0.5, 0.0, 0.7, 0.2])];
    let err = check(&inputs, |tape, x| weighted_sum(tape, x[0].cumprod_exclusive()));
    assert!(err < REL_TOL, "{err}");
}

#[test]
fn softplus_is_monotone() {
    let tape = Tape::new();
    let xs: Vec<Real> = (0..200).map(|i| -1.0 + i as Real * 0.01).collect();
    let y = tape.constant(tensor(&[200], xs)).softplus(100.0).value();
    assert!(y.data().windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn tape_evaluation_is_deterministic() {
    let run = || {
        let tape = Tape::new();
        let x = tape.leaf(tensor(&[3, 3], (0..9).map(|i| (i as Real * 0.37).sin()).collect()));
        let w = tape.leaf(tensor(&[3, 2], (0..6).map(|i| (i as Real * 1.3).cos()).collect()));
        let y = x.matmul(w).unwrap().softplus(100.0).sum();
        tape.backward(y).unwrap();
        (y.item().to_bits(), w.grad().unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}
