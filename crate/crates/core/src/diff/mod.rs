//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod kernels;
mod optim;
mod tape;
mod value;

pub use optim::{OptimizerState, UpdateRule};
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use value::DiffValue;


#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    /// Central differences of `f` around `x`.
    fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = xp[i];
                xp[i] = orig + h;
                let up = f(&xp);
                xp[i] = orig - h;
                let dn = f(&xp);
                xp[i] = orig;
                (up - dn) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad_close(analytic: &[f64], numeric: &[f64], what: &str) {
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let ok = if n.abs() < 1e-6 && a.abs() < 1e-6 {
                (a - n).abs() <= 1e-8
            } else {
                (a - n).abs() / a.abs().max(n.abs()) <= 1e-4
            };
            assert!(ok, "{what}: component {i}: analytic {a} vs numeric {n}");
        }
    }

    /// Builds `f(inputs)` on a tape with every input differentiable; returns
    /// loss and gradients per input.
    fn run(
        shapes: &[Vec<usize>],
        data: &[Vec<f64>],
        build: &dyn Fn(&mut Tape, &[Var]) -> Var,
    ) -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(data)
            .map(|(s, d)| tape.input(s.clone(), d.clone(), true).unwrap())
            .collect();
        let out = build(&mut tape, &vars);
        tape.backward(out).unwrap();
        let loss = tape.scalar(out);
        let grads = vars
            .iter()
            .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(v).len()]))
            .collect();
        (loss, grads)
    }

    fn check_op(name: &str, shapes: Vec<Vec<usize>>, scale: f64, build: &dyn Fn(&mut Tape, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
        for _ in 0..50 {
            let data: Vec<Vec<f64>> = shapes
                .iter()
                .map(|s| rand_vec(&mut rng, s.iter().product(), scale))
                .collect();
            let (_, grads) = run(&shapes, &data, build);
            for k in 0..shapes.len() {
                let f = |x: &[f64]| {
                    let mut d = data.clone();
                    d[k] = x.to_vec();
                    let mut tape = Tape::new();
                    let vars: Vec<Var> = shapes
                        .iter()
                        .zip(&d)
                        .map(|(s, v)| tape.input(s.clone(), v.clone(), false).unwrap())
                        .collect();
                    let out = build(&mut tape, &vars);
                    tape.scalar(out)
                };
                let numeric = fd_grad(&f, &data[k], 1e-5);
                assert_grad_close(&grads[k], &numeric, &format!("{name} input {k}"));
            }
        }
    }

    /// Random fixed weights turn any tensor-valued op into a scalar.
    fn weighted_sum(t: &mut Tape, v: Var) -> Var {
        let n = t.value(v).len();
        let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.913 + 0.3).sin()).collect();
        let shape = t.shape(v).to_vec();
        let wv = t.constant(shape, w).unwrap();
        let prod = t.mul(v, wv).unwrap();
        let flat = t.reshape(prod, vec![1, n]).unwrap();
        let ones = t.constant(vec![n, 1], vec![1.0; n]).unwrap();
        let s = t.matmul(flat, ones).unwrap();
        t.reshape(s, vec![1]).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut t = Tape::new();
        let eye = t.constant(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a_data: Vec<f64> = (0..9).map(|i| i as f64 * 1.5 - 3.0).collect();
        let a = t.constant(vec![3, 3], a_data.clone()).unwrap();
        let ia = t.matmul(eye, a).unwrap();
        assert_eq!(t.value(ia), &a_data[..]);

        let m = t.constant(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let ones = t.constant(vec![2, 1], vec![1., 1.]).unwrap();
        let r = t.matmul(m, ones).unwrap();
        assert_eq!(t.value(r), &[3.0, 7.0]);
        assert_eq!(t.shape(r), &[2, 1]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_vec(&mut rng, 20, 1.0);
        let b = rand_vec(&mut rng, 12, 1.0);
        let mut expect = vec![0.0; 15];
        for i in 0..5 {
            for j in 0..3 {
                for k in 0..4 {
                    expect[i * 3 + j] += a[i * 4 + k] * b[k * 3 + j];
                }
            }
        }
        let mut t = Tape::new();
        let va = t.constant(vec![5, 4], a).unwrap();
        let vb = t.constant(vec![4, 3], b).unwrap();
        let c = t.matmul(va, vb).unwrap();
        for (x, y) in t.value(c).iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let msg = t.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let z = t.constant(vec![4], vec![0.0; 4]).unwrap();
        let s = t.softmax(z).unwrap();
        assert_eq!(t.value(s), &[0.25; 4]);

        let big = t.constant(vec![2], vec![1000.0, 0.0]).unwrap();
        let s = t.softmax(big).unwrap();
        assert!((t.value(s)[0] - 1.0).abs() < 1e-12);
        assert!(t.value(s)[1] < 1e-12);
        assert!(t.value(s).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_matches_extended_precision_oracle() {
        // Oracle: exp/sum with compensated (Kahan) summation.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = rand_vec(&mut rng, 8, 5.0);
            let exps: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for e in &exps {
                let y = e - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            let mut t = Tape::new();
            let v = t.constant(vec![8], x).unwrap();
            let s = t.softmax(v).unwrap();
            let total: f64 = t.value(s).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (a, e) in t.value(s).iter().zip(&exps) {
                assert!((a - e / sum).abs() < 1e-12);
                assert!(*a > 0.0);
            }
        }
    }

    #[test]
    fn softmax_rejects_empty() {
        let mut t = Tape::new();
        assert!(t.input(vec![0], vec![], false).is_err());
    }

    #[test]
    fn mse_examples() {
        let mut t = Tape::new();
        let p = t.constant(vec![2], vec![0.0, 0.0]).unwrap();
        let q = t.constant(vec![2], vec![3.0, 4.0]).unwrap();
        let l = t.mse_distance(p, q).unwrap();
        assert_eq!(t.scalar(l), 12.5);
        let l0 = t.mse_distance(q, q).unwrap();
        assert_eq!(t.scalar(l0), 0.0);

        let bad = t.constant(vec![3], vec![0.0; 3]).unwrap();
        assert!(t.mse_distance(p, bad).is_err());
    }

    #[test]
    fn mse_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_vec(&mut rng, 16, 2.0);
        let b = rand_vec(&mut rng, 16, 2.0);
        let mut oracle = 0.0;
        for i in 0..16 {
            oracle += (a[i] - b[i]).powi(2);
        }
        oracle /= 16.0;
        let mut t = Tape::new();
        let p = t.constant(vec![16], a).unwrap();
        let q = t.constant(vec![16], b).unwrap();
        let l = t.mse_distance(p, q).unwrap();
        let r = t.mse_distance(q, p).unwrap();
        assert!((t.scalar(l) - oracle).abs() < 1e-12);
        assert_eq!(t.scalar(l), t.scalar(r));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let z = t.constant(vec![4], vec![0.0; 4]).unwrap();
        let l = t.cross_entropy_distance(z, z).unwrap();
        assert!((t.scalar(l) - 4f64.ln()).abs() < 1e-12);

        let p = t.constant(vec![3], vec![0.2, -1.0, 2.5]).unwrap();
        let l = t.cross_entropy_distance(p, p).unwrap();
        let ex: Vec<f64> = [0.2f64, -1.0, 2.5].iter().map(|v| v.exp()).collect();
        let z: f64 = ex.iter().sum();
        let s: Vec<f64> = ex.iter().map(|e| e / z).collect();
        let entropy: f64 = -s.iter().map(|x| x * x.ln()).sum::<f64>();
        assert!((t.scalar(l) - entropy).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_two_pass_oracle_and_bounds_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = rand_vec(&mut rng, 8, 3.0);
            let b = rand_vec(&mut rng, 8, 3.0);
            let sa: Vec<f64> = {
                let z: f64 = a.iter().map(|v| v.exp()).sum();
                a.iter().map(|v| v.exp() / z).collect()
            };
            let lb: Vec<f64> = {
                let z: f64 = b.iter().map(|v| v.exp()).sum();
                b.iter().map(|v| v - z.ln()).collect()
            };
            let oracle: f64 = -sa.iter().zip(&lb).map(|(x, y)| x * y).sum::<f64>();
            let entropy: f64 = -sa.iter().map(|x| x * x.ln()).sum::<f64>();
            let mut t = Tape::new();
            let p = t.constant(vec![8], a).unwrap();
            let q = t.constant(vec![8], b).unwrap();
            let l = t.cross_entropy_distance(p, q).unwrap();
            assert!((t.scalar(l) - oracle).abs() < 1e-10);
            assert!(t.scalar(l) >= entropy - 1e-12);
        }
    }

    #[test]
    fn backward_square_and_constant() {
        let mut t = Tape::new();
        let x = t.input(vec![1], vec![3.0], true).unwrap();
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);

        let mut t = Tape::new();
        let x = t.input(vec![1], vec![3.0], true).unwrap();
        let c = t.constant(vec![1], vec![7.0]).unwrap();
        let zero = t.scale(x, 0.0);
        let y = t.add(c, zero).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_accumulates_and_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.input(vec![2], vec![1.0, 2.0], true).unwrap();
        let s = t.mse_distance(x, x).unwrap();
        let y = t.scale(x, 2.0);
        assert!(matches!(t.backward(y), Err(crate::Error::Contract(_))));
        let x2 = t.mul(x, x).unwrap();
        let w = weighted_sum(&mut t, x2);
        t.backward(w).unwrap();
        let once = t.grad(x).unwrap().to_vec();
        t.backward(w).unwrap();
        let twice = t.grad(x).unwrap().to_vec();
        for (b, a) in twice.iter().zip(&once) {
            assert_eq!(*b, 2.0 * a);
        }
        let _ = s;
    }

    #[test]
    fn frozen_leaves_receive_no_gradient() {
        let w = DiffValue::param(vec![2], vec![1.0, -1.0]).unwrap();
        let mut t = Tape::new();
        let frozen = t.bind_frozen(&w);
        let live = t.bind(&w);
        let l = t.mse_distance(frozen, live).unwrap();
        let l2 = t.add(l, l).unwrap();
        t.backward(l2).unwrap();
        assert!(t.grad(frozen).is_none());
        assert!(t.grad(live).is_some());
    }

    // ----- finite-difference checks, one per op -------------------------

    #[test]
    fn fd_matmul() {
        check_op("matmul", vec![vec![3, 4], vec![4, 2]], 1.0, &|t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, m)
        });
    }

    #[test]
    fn fd_softmax() {
        check_op("softmax", vec![vec![6]], 2.0, &|t, v| {
            let s = t.softmax(v[0]).unwrap();
            weighted_sum(t, s)
        });
        check_op("softmax-rows", vec![vec![3, 4]], 2.0, &|t, v| {
            let s = t.softmax(v[0]).unwrap();
            weighted_sum(t, s)
        });
    }

    #[test]
    fn fd_causal_softmax() {
        check_op("causal_softmax", vec![vec![4, 4]], 2.0, &|t, v| {
            let s = t.causal_softmax(v[0]).unwrap();
            weighted_sum(t, s)
        });
    }

    #[test]
    fn fd_mse_distance() {
        check_op("mse", vec![vec![7], vec![7]], 2.0, &|t, v| t.mse_distance(v[0], v[1]).unwrap());
    }

    #[test]
    fn fd_cross_entropy_distance() {
        check_op("ce", vec![vec![7], vec![7]], 2.0, &|t, v| {
            t.cross_entropy_distance(v[0], v[1]).unwrap()
        });
    }

    #[test]
    fn fd_elementwise_and_gelu() {
        check_op("add-sub-mul", vec![vec![2, 3], vec![2, 3]], 1.5, &|t, v| {
            let a = t.add(v[0], v[1]).unwrap();
            let s = t.sub(v[0], v[1]).unwrap();
            let m = t.mul(a, s).unwrap();
            let g = t.gelu(m);
            let sc = t.scale(g, -1.7);
            weighted_sum(t, sc)
        });
    }

    #[test]
    fn fd_layer_norm() {
        check_op("layer_norm", vec![vec![3, 5], vec![5], vec![5]], 1.5, &|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
            weighted_sum(t, y)
        });
    }

    #[test]
    fn fd_indexing_ops() {
        check_op("gather-mean", vec![vec![5, 3]], 1.0, &|t, v| {
            let g = t.gather(v[0], &[4, 0, 4, 2]).unwrap();
            let m = t.mean_rows(g).unwrap();
            weighted_sum(t, m)
        });
        check_op("slice-concat-transpose", vec![vec![3, 4], vec![3, 2]], 1.0, &|t, v| {
            let a = t.slice_cols(v[0], 1, 2).unwrap();
            let b = t.slice_rows(v[0], 1, 2).unwrap();
            let c = t.concat_cols(&[a, v[1]]).unwrap();
            let ct = t.transpose(c).unwrap();
            let w1 = weighted_sum(t, ct);
            let w2 = weighted_sum(t, b);
            t.sum(&[w1, w2]).unwrap()
        });
        check_op("add_row", vec![vec![3, 4], vec![4]], 1.0, &|t, v| {
            let a = t.add_row(v[0], v[1]).unwrap();
            let g = t.gelu(a);
            weighted_sum(t, g)
        });
    }

    #[test]
    fn fd_nll() {
        check_op("nll", vec![vec![3, 5]], 2.0, &|t, v| t.nll(v[0], &[1, 4, 0]).unwrap());
    }

    #[test]
    fn fd_composed_attention() {
        check_op("attention", vec![vec![4, 6], vec![6, 6], vec![6, 6]], 0.8, &|t, v| {
            let q = t.matmul(v[0], v[1]).unwrap();
            let k = t.matmul(v[0], v[2]).unwrap();
            let kt = t.transpose(k).unwrap();
            let s = t.matmul(q, kt).unwrap();
            let s = t.scale(s, 0.4);
            let a = t.causal_softmax(s).unwrap();
            let o = t.matmul(a, v[0]).unwrap();
            let m = t.mean_rows(o).unwrap();
            let z = t.constant(vec![6], vec![0.1; 6]).unwrap();
            t.cross_entropy_distance(z, m).unwrap()
        });
    }

    #[test]
    fn determinism_bit_identical() {
        let build = || {
            let mut t = Tape::new();
            let a = t.constant(vec![3, 3], (0..9).map(|i| (i as f64).sin()).collect()).unwrap();
            let b = t.matmul(a, a).unwrap();
            let s = t.softmax(b).unwrap();
            t.value(s).iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(build(), build());
    }
}
