//! Self-attention adjacency over the nodes of one input window.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Default attention dimension.
pub const DEFAULT_ATTN_DIM: usize = 32;

/// Query and key projections, both `input_len x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub proj_q: Tensor,
    pub proj_k: Tensor,
}

impl AttentionParams {
    pub fn new(proj_q: Tensor, proj_k: Tensor) -> Result<Self> {
        if proj_q.shape().len() != 2 || proj_q.shape() != proj_k.shape() || proj_q.cols() == 0 {
            return Err(Error::shape(
                "attention params",
                format!("{:?} vs {:?}", proj_q.shape(), proj_k.shape()),
            ));
        }
        Ok(Self { proj_q, proj_k })
    }

    pub fn dim(&self) -> usize {
        self.proj_q.cols()
    }

    pub fn build_adjacency(&self, window: &Tensor) -> Result<AdjacencyMatrix> {
        let tape = Tape::new();
        let a = attention_adjacency(
            tape.constant(window.clone()),
            tape.constant(self.proj_q.clone()),
            tape.constant(self.proj_k.clone()),
        )?;
        Ok(AdjacencyMatrix {
            weights: a.value().as_ref().clone(),
        })
    }
}

/// Row-softmax of `(X Wq)(X Wk)^T / sqrt(d)` for an `N x T` window.
pub fn attention_adjacency<'t>(window: Var<'t>, proj_q: Var<'t>, proj_k: Var<'t>) -> Result<Var<'t>> {
    let (ws, qs) = (window.shape(), proj_q.shape());
    if ws.len() != 2 || qs.len() != 2 || ws[1] != qs[0] || proj_k.shape() != qs {
        return Err(Error::shape(
            "attention",
            format!("window {ws:?}, proj_q {qs:?}, proj_k {:?}", proj_k.shape()),
        ));
    }
    let q = window.matmul(&proj_q)?;
    let k = window.matmul(&proj_k)?;
    Ok(q.matmul(&k.transpose()?)?
        .scale(1.0 / (qs[1] as f64).sqrt())
        .softmax_rows())
}

/// Row-stochastic `N x N` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub weights: Tensor,
}

impl AdjacencyMatrix {
    /// `(A + A^T) / 2`.
    pub fn symmetrized(&self) -> Tensor {
        let t = self.weights.transpose();
        let data = self
            .weights
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        Tensor::new(self.weights.shape().to_vec(), data).expect("square")
    }

    /// Element-wise mean of several adjacencies of equal shape.
    pub fn mean(items: &[AdjacencyMatrix]) -> Result<AdjacencyMatrix> {
        let first = items.first().ok_or_else(|| Error::Config("no adjacency to average".into()))?;
        let mut acc = vec![0.0; first.weights.len()];
        for a in items {
            if a.weights.shape() != first.weights.shape() {
                return Err(Error::shape("adjacency mean", format!("{:?}", a.weights.shape())));
            }
            acc.iter_mut().zip(a.weights.data()).for_each(|(s, v)| *s += v);
        }
        let k = items.len() as f64;
        let data = acc.into_iter().map(|v| v / k).collect();
        Ok(AdjacencyMatrix {
            weights: Tensor::new(first.weights.shape().to_vec(), data)?,
        })
    }

    /// Writes the weights as CSV with a leading symbol column and header row.
    pub fn write_csv(&self, path: &Path, symbols: &[String]) -> Result<()> {
        let n = self.weights.rows();
        if symbols.len() != n {
            return Err(Error::shape("adjacency csv", format!("{} symbols for N = {n}", symbols.len())));
        }
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "symbol,{}", symbols.join(",")).map_err(io)?;
        for (i, s) in symbols.iter().enumerate() {
            let row: Vec<String> = self.weights.row(i).iter().map(f64::to_string).collect();
            writeln!(w, "{s},{}", row.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gradcheck::{check, random_tensor};

    fn params(t: usize, d: usize, rng: &mut ChaCha8Rng) -> AttentionParams {
        AttentionParams::new(random_tensor(&[t, d], rng), random_tensor(&[t, d], rng)).unwrap()
    }

    fn oracle(x: &Tensor, p: &AttentionParams) -> Vec<Vec<f64>> {
        let (n, t, d) = (x.rows(), x.cols(), p.dim());
        let proj = |w: &Tensor| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..d).map(|c| (0..t).map(|k| x.at(i, k) * w.at(k, c)).sum()).collect())
                .collect()
        };
        let (q, k) = (proj(&p.proj_q), proj(&p.proj_k));
        (0..n)
            .map(|i| {
                let logits: Vec<f64> = (0..n)
                    .map(|j| (0..d).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                logits.iter().map(|l| l.exp() / z).collect()
            })
            .collect()
    }

    #[test]
    fn single_node_is_one() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let p = params(5, 4, &mut r);
        let a = p.build_adjacency(&random_tensor(&[1, 5], &mut r)).unwrap();
        assert_eq!(a.weights.data(), &[1.0]);
    }

    #[test]
    fn zero_window_is_uniform() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let p = params(6, DEFAULT_ATTN_DIM, &mut r);
        let a = p.build_adjacency(&Tensor::zeros(&[4, 6])).unwrap();
        assert!(a.weights.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn matches_two_step_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let p = params(8, 4, &mut r);
        let x = random_tensor(&[3, 8], &mut r);
        let a = p.build_adjacency(&x).unwrap();
        let o = oracle(&x, &p);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.weights.at(i, j) - o[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let p = params(8, 4, &mut r);
        assert!(p.build_adjacency(&Tensor::zeros(&[3, 7])).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let x = random_tensor(&[4, 6], &mut r);
            let q = random_tensor(&[6, 3], &mut r);
            let k = random_tensor(&[6, 3], &mut r);
            let w = random_tensor(&[4, 4], &mut r);
            let err = check(&[("x", x), ("q", q), ("k", k), ("w", w)], 1e-5, |_, v| {
                Ok(attention_adjacency(v[0], v[1], v[2])?.mul(&v[3])?.sum())
            });
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let a = AdjacencyMatrix {
            weights: Tensor::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap(),
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        a.write_csv(f.path(), &["a".into(), "b".into()]).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(text, "symbol,a,b\na,0.5,0.5\nb,0.25,0.75\n");
        assert!((a.symmetrized().at(0, 1) - 0.375).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rows_stochastic_and_permutation_equivariant(
            seed in 0u64..1000,
            n in 1usize..6,
            scale in 0.1f64..5.0,
        ) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let p = params(5, 4, &mut r);
            let x = random_tensor(&[n, 5], &mut r).map(|v| v * scale);
            let a = p.build_adjacency(&x).unwrap();
            for i in 0..n {
                prop_assert!((a.weights.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(a.weights.row(i).iter().all(|&v| v > 0.0 && v <= 1.0));
            }
            let perm: Vec<usize> = (0..n).rev().collect();
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| x.row(i).to_vec()).collect();
            let ap = p.build_adjacency(&Tensor::from_rows(&rows).unwrap()).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((ap.weights.at(i, j) - a.weights.at(perm[i], perm[j])).abs() < 1e-12);
                }
            }
        }
    }
}
