use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradcheck::{check, random_tensor};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(17)
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3, 5]));
    let y = x.softmax_rows().value();
    assert!(y.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn dft_round_trip_and_parseval() {
    let mut r = rng();
    for len in [64, 63, 8, 1] {
        let x = random_tensor(&[3, len], &mut r);
        let tape = Tape::new();
        let v = tape.constant(x.clone());
        let spec = v.rdft();
        let back = spec.irdft(len).unwrap().value();
        assert!(back.max_abs_diff(&x) < 1e-9, "len {len}");

        let s = spec.value();
        let bins = len / 2 + 1;
        for row in 0..3 {
            let energy: f64 = x.row(row).iter().map(|a| a * a).sum();
            let block = &s.data()[row * 2 * bins..(row + 1) * 2 * bins];
            let mut spectral = 0.0;
            for k in 0..bins {
                let w = if k == 0 || 2 * k == len { 1.0 } else { 2.0 };
                spectral += w * (block[k].powi(2) + block[bins + k].powi(2));
            }
            assert!((energy - spectral / len as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn glu_with_zero_gate_halves_value() {
    let mut r = rng();
    let v = random_tensor(&[2, 3, 4], &mut r);
    let x = Tensor::new(
        vec![2, 6, 4],
        (0..2)
            .flat_map(|b| {
                let mut chunk = v.data()[b * 12..(b + 1) * 12].to_vec();
                chunk.extend([0.0; 12]);
                chunk
            })
            .collect(),
    )
    .unwrap();
    let tape = Tape::new();
    let out = tape.constant(x).glu().unwrap().value();
    assert!(out.max_abs_diff(&v.map(|a| 0.5 * a)) < 1e-15);
}

#[test]
fn sum_gradient_is_ones() {
    let tape = Tape::new();
    let x = tape.leaf("x", Tensor::vector(vec![1.0, -2.0, 3.0]));
    let g = tape.backward(x.sum()).unwrap();
    assert_eq!(g.get("x").unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn unused_leaf_has_exactly_zero_gradient() {
    let tape = Tape::new();
    let x = tape.leaf("x", Tensor::vector(vec![1.0, 2.0]));
    let _unused = tape.leaf("u", Tensor::vector(vec![5.0, 6.0]));
    let g = tape.backward(x.square().sum()).unwrap();
    assert_eq!(g.get("u").unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn backward_twice_fails() {
    let tape = Tape::new();
    let x = tape.leaf("x", Tensor::vector(vec![1.0]));
    let loss = x.sum();
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
}

#[test]
fn non_scalar_loss_rejected() {
    let tape = Tape::new();
    let x = tape.leaf("x", Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn shape_errors_name_the_op() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = a.matmul(&b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    assert!(a.add(&tape.constant(Tensor::zeros(&[3, 2]))).is_err());
}

#[test]
fn mse_of_linear_map_matches_finite_differences() {
    let mut r = rng();
    for _ in 0..5 {
        let w = random_tensor(&[3, 3], &mut r);
        let x = random_tensor(&[3, 1], &mut r);
        let y = random_tensor(&[3, 1], &mut r);
        let err = check(&[("w", w), ("x", x), ("y", y)], STEP, |_, v| {
            v[0].matmul(&v[1])?.mse(&v[2])
        });
        assert!(err < TOL, "{err}");
    }
}

#[test]
fn elementwise_and_reduction_ops_match_finite_differences() {
    let mut r = rng();
    let a = random_tensor(&[3, 4], &mut r);
    let b = random_tensor(&[3, 4], &mut r);
    let bias = random_tensor(&[4], &mut r);
    let rows = random_tensor(&[3], &mut r);
    let err = check(
        &[("a", a), ("b", b), ("bias", bias), ("rows", rows)],
        STEP,
        |_, v| {
            let t = v[0].mul(&v[1])?.add_row(&v[2])?.tanh();
            let s = v[0].sub(&v[1])?.sigmoid().mul_rows(&v[3])?;
            let u = v[1].mul_cols(&v[2])?.exp().scale(0.3).add_scalar(1.0).powf(1.5);
            let lse = t.add(&s)?.logsumexp_rows();
            let sm = s.softmax_rows().square().sum_rows();
            Ok(lse.mul(&sm)?.sum().add(&u.mean())?.add(&t.transpose()?.sum())?)
        },
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn structural_ops_match_finite_differences() {
    let mut r = rng();
    let a = random_tensor(&[2, 3, 4], &mut r);
    let b = random_tensor(&[2, 2, 4], &mut r);
    let err = check(&[("a", a), ("b", b)], STEP, |_, v| {
        let c = Var::concat(&[v[0], v[1]], 1)?;
        let s = c.slice(1, 1, 3)?.slice(2, 1, 2)?;
        let m = s.reshape(vec![6, 2])?;
        Ok(m.square().sum().add(&c.slice(0, 1, 1)?.tanh().sum())?)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn conv_glu_and_dft_match_finite_differences() {
    let mut r = rng();
    let x = random_tensor(&[2, 8], &mut r);
    let w = random_tensor(&[4, 2, 3], &mut r);
    let b = random_tensor(&[4], &mut r);
    let target = random_tensor(&[2, 8], &mut r);
    let err = check(
        &[("x", x), ("w", w), ("b", b), ("y", target)],
        STEP,
        |_, v| {
            let spec = v[0].rdft(); // [2, 2, 5]
            let h = spec.conv1d(&v[1], &v[2])?.glu()?; // [2, 2, 5]
            h.irdft(8)?.mse(&v[3])
        },
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn cross_entropy_matches_finite_differences() {
    let mut r = rng();
    let logits = random_tensor(&[5, 2], &mut r);
    let labels = [0, 1, 1, 0, 1];
    let err = check(&[("z", logits)], STEP, |_, v| v[0].cross_entropy(&labels));
    assert!(err < TOL, "{err}");
}

#[test]
fn symmetric_eigenvectors_are_orthonormal_and_differentiable() {
    let mut r = rng();
    for n in [1, 2, 4] {
        let m = random_tensor(&[n, n], &mut r);
        let sym = Tensor::new(
            vec![n, n],
            (0..n * n)
                .map(|k| (m.data()[k] + m.data()[(k % n) * n + k / n]) / 2.0)
                .collect(),
        )
        .unwrap();
        let (vals, u) = symmetric_eigen(&sym).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let utu = u.transpose().matmul(&u).unwrap();
        assert!(utu.max_abs_diff(&Tensor::identity(n)) < 1e-12);

        let gains = random_tensor(&[n], &mut r);
        let x = random_tensor(&[n, 3], &mut r);
        let err = check(&[("m", m), ("g", gains), ("x", x)], STEP, |_, v| {
            let s = v[0].add(&v[0].transpose()?)?.scale(0.5);
            let (u, _) = s.sym_eigvecs()?;
            let filtered = u.transpose()?.matmul(&v[2])?.mul_rows(&v[1])?;
            Ok(u.matmul(&filtered)?.tanh().sum())
        });
        assert!(err < TOL, "n={n}: {err}");
    }
}
