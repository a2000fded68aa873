//! Minimal reverse-mode differentiation over dense f64 tensors.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_with, GradCheckReport};
pub use params::{Gradients, ParamId, ParamSet, Parameter};
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_row;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(values: &[(&str, Tensor)]) -> ParamSet {
        let mut p = ParamSet::new();
        for (n, t) in values {
            p.add(*n, t.clone());
        }
        p
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Central differences computed directly, independent of `check_gradients`.
    fn fd_max_rel_error(params: &ParamSet, f: &dyn Fn(&mut Tape<'_>) -> Var) -> f64 {
        let eps = 1e-5;
        let mut tape = Tape::new(params);
        let loss = f(&mut tape);
        let grads = tape.backward(loss).unwrap();
        let mut worst: f64 = 0.0;
        let mut work = params.clone();
        for id in params.ids() {
            let analytic = grads.dense(params, id);
            for i in 0..analytic.len() {
                let orig = params.value(id).data()[i];
                let at = |w: f64, work: &mut ParamSet| {
                    work.get_mut(id).value.data_mut()[i] = w;
                    let mut t = Tape::new(work);
                    let l = f(&mut t);
                    t.value(l).data()[0]
                };
                let plus = at(orig + eps, &mut work);
                let minus = at(orig - eps, &mut work);
                work.get_mut(id).value.data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[i];
                worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
            }
        }
        worst
    }

    /// Contracts the op output against a fixed random weighting so every
    /// output entry contributes to the scalar.
    fn weighted_sum(tape: &mut Tape<'_>, out: Var, seed: u64) -> Var {
        let shape = tape.value(out).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.constant(random(&mut rng, &shape)).unwrap();
        let m = tape.mul(out, w).unwrap();
        tape.sum(m).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let p = ParamSet::new();
        let mut t = Tape::new(&p);
        let x = t.constant(Tensor::vector(vec![0.0]).unwrap()).unwrap();
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.5]);
    }

    #[test]
    fn softmax_of_equal_scores_is_uniform() {
        let p = ParamSet::new();
        let mut t = Tape::new(&p);
        let x = t
            .constant(Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap())
            .unwrap();
        let y = t.softmax(x, 0.5).unwrap();
        for v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matvec_by_hand() {
        let p = ParamSet::new();
        let mut t = Tape::new(&p);
        let w = t
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let x = t.constant(Tensor::vector(vec![1.0, 1.0]).unwrap()).unwrap();
        let y = t.matvec(w, x).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let p = set(&[("w", Tensor::vector(vec![1.0, -2.0]).unwrap())]);
        let mut t = Tape::new(&p);
        let w = t.param(ParamId(0)).unwrap();
        let sq = t.mul(w, w).unwrap();
        let l = t.sum(sq).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let p = set(&[("w", Tensor::scalar(0.0))]);
        let mut t = Tape::new(&p);
        let w = t.param(ParamId(0)).unwrap();
        let s = t.sigmoid(w).unwrap();
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap(), &[0.25]);
    }

    #[test]
    fn quadratic_gradcheck_is_exact() {
        // Dyadic weights and steps keep w ± eps and the squares exact, so
        // central differences carry no rounding error across the eps range.
        let p = set(&[("w", Tensor::vector(vec![0.25, -1.75, 2.5]).unwrap())]);
        for eps in [2f64.powi(-23), 2f64.powi(-17), 2f64.powi(-10)] {
            let r = check_gradients(&p, eps, |t| {
                let w = t.param(ParamId(0))?;
                let sq = t.mul(w, w)?;
                let s = t.scale(sq, 3.0)?;
                t.sum(s)
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-10, "eps {eps}: {}", r.max_rel_error);
            assert_eq!(r.scalars_checked, 3);
        }
    }

    #[test]
    fn gradcheck_rejects_bad_eps_and_nondeterminism() {
        let p = set(&[("w", Tensor::scalar(1.0))]);
        let f = |t: &mut Tape<'_>| t.param(ParamId(0));
        assert!(matches!(
            check_gradients(&p, 1e-2, f),
            Err(Error::InvalidArgument(_))
        ));

        let mut calls = 0.0;
        let res = check_gradients(&p, 1e-5, |t| {
            calls += 1.0;
            let w = t.param(ParamId(0))?;
            t.add_scalar(w, calls)
        });
        assert!(matches!(res, Err(Error::NonDeterministic { .. })));
    }

    #[test]
    fn errors_are_reported() {
        let p = set(&[("w", Tensor::vector(vec![1.0, 2.0]).unwrap())]);
        let mut t = Tape::new(&p);
        let w = t.param(ParamId(0)).unwrap();
        let m = t
            .constant(Tensor::matrix(3, 3, vec![0.0; 9]).unwrap())
            .unwrap();
        assert!(matches!(t.matvec(m, w), Err(Error::Shape { .. })));
        let big = t.constant(Tensor::vector(vec![1000.0]).unwrap()).unwrap();
        assert!(matches!(t.exp(big), Err(Error::NonFinite { .. })));
        assert!(matches!(
            "frobnicate".parse::<OpKind>(),
            Err(Error::UnknownOp(_))
        ));
        assert!(matches!(t.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn op_kinds_parse_and_dispatch() {
        let p = ParamSet::new();
        let mut t = Tape::new(&p);
        let x = t
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let kind: OpKind = "row-select:1,1".parse().unwrap();
        let y = t.apply(&kind, &[x]).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 4.0, 3.0, 4.0]);
        let kind: OpKind = "scale:0.5".parse().unwrap();
        let y = t.apply(&kind, &[x]).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 1.0, 1.5, 2.0]);
        assert!(t.apply(&OpKind::Add, &[x]).is_err());
        assert_eq!(
            OpKind::SquaredEuclideanRows.to_string(),
            "squared-euclidean-rows"
        );
    }

    #[test]
    fn cross_entropy_value() {
        let p = ParamSet::new();
        let mut t = Tape::new(&p);
        let x = t
            .constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap())
            .unwrap();
        let l = t.cross_entropy(x, &[1]).unwrap();
        assert!((t.value(l).data()[0] - 2f64.ln()).abs() < 1e-15);
    }

    type Build = fn(&mut Tape<'_>, &[Var]) -> Var;

    /// (name, input shapes, op application)
    fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
        vec![
            ("matvec", vec![vec![3, 4], vec![4]], |t, v| {
                t.matvec(v[0], v[1]).unwrap()
            }),
            ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
                t.matmul(v[0], v[1]).unwrap()
            }),
            ("matmul_nt", vec![vec![3, 4], vec![5, 4]], |t, v| {
                t.matmul_nt(v[0], v[1]).unwrap()
            }),
            ("add", vec![vec![2, 3], vec![2, 3]], |t, v| {
                t.add(v[0], v[1]).unwrap()
            }),
            ("sub", vec![vec![2, 3], vec![2, 3]], |t, v| {
                t.sub(v[0], v[1]).unwrap()
            }),
            ("mul", vec![vec![2, 3], vec![2, 3]], |t, v| {
                t.mul(v[0], v[1]).unwrap()
            }),
            ("add_bias", vec![vec![2, 3], vec![3]], |t, v| {
                t.add_bias(v[0], v[1]).unwrap()
            }),
            ("mul_row", vec![vec![2, 3], vec![3]], |t, v| {
                t.mul_row(v[0], v[1]).unwrap()
            }),
            ("sigmoid", vec![vec![2, 3]], |t, v| t.sigmoid(v[0]).unwrap()),
            ("tanh", vec![vec![2, 3]], |t, v| t.tanh(v[0]).unwrap()),
            ("exp", vec![vec![2, 3]], |t, v| t.exp(v[0]).unwrap()),
            ("negate", vec![vec![2, 3]], |t, v| t.neg(v[0]).unwrap()),
            ("scale", vec![vec![2, 3]], |t, v| {
                t.scale(v[0], -1.7).unwrap()
            }),
            ("sum", vec![vec![2, 3]], |t, v| t.sum(v[0]).unwrap()),
            ("concat_cols", vec![vec![2, 3], vec![2, 1]], |t, v| {
                t.concat_cols(v).unwrap()
            }),
            ("concat_rows", vec![vec![2, 3], vec![1, 3]], |t, v| {
                t.concat_rows(v).unwrap()
            }),
            ("slice_rows", vec![vec![4, 3]], |t, v| {
                t.slice_rows(v[0], 1, 2).unwrap()
            }),
            ("slice_cols", vec![vec![2, 5]], |t, v| {
                t.slice_cols(v[0], 2, 2).unwrap()
            }),
            ("row_select", vec![vec![4, 3]], |t, v| {
                t.gather_rows(v[0], &[2, 0, 2]).unwrap()
            }),
            ("softmax", vec![vec![3, 4]], |t, v| {
                t.softmax(v[0], 0.7).unwrap()
            }),
            ("sq_dist", vec![vec![3, 4], vec![4, 5]], |t, v| {
                t.sq_dist(v[0], v[1]).unwrap()
            }),
            ("sqrt", vec![vec![2, 3]], |t, v| {
                let e = t.exp(v[0]).unwrap();
                t.sqrt(e).unwrap()
            }),
            ("cross_entropy", vec![vec![3, 4]], |t, v| {
                t.cross_entropy(v[0], &[0, 3, 1]).unwrap()
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn every_op_matches_finite_differences(seed in any::<u64>()) {
            for (name, shapes, build) in op_cases() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut p = ParamSet::new();
                for (i, s) in shapes.iter().enumerate() {
                    p.add(format!("x{i}"), random(&mut rng, s));
                }
                let f = |t: &mut Tape<'_>| {
                    let vars: Vec<Var> = p.ids().map(|id| t.param(id).unwrap()).collect();
                    let out = build(t, &vars);
                    weighted_sum(t, out, seed ^ 0x5eed)
                };
                let err = fd_max_rel_error(&p, &f);
                prop_assert!(err <= 1e-6, "{name}: relative error {err}");
            }
        }

        #[test]
        fn softmax_is_on_the_simplex_and_shift_invariant(
            scores in prop::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
            tau in 1e-3f64..1e3,
        ) {
            let p = ParamSet::new();
            let mut t = Tape::new(&p);
            let x = t.constant(Tensor::vector(scores.clone()).unwrap()).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let xs = t.constant(Tensor::vector(shifted).unwrap()).unwrap();
            let y = t.softmax(x, tau).unwrap();
            let ys = t.softmax(xs, tau).unwrap();
            let (a, b) = (t.value(y).data(), t.value(ys).data());
            prop_assert!(a.iter().all(|&v| v >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (u, v) in a.iter().zip(b) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
        }

        #[test]
        fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = ParamSet::new();
            let w = p.add("w", random(&mut rng, &[3, 3]));
            let x = p.add("x", random(&mut rng, &[3]));
            let l1 = |t: &mut Tape<'_>| {
                let (w, x) = (t.param(w).unwrap(), t.param(x).unwrap());
                let y = t.matvec(w, x).unwrap();
                let y = t.tanh(y).unwrap();
                t.sum(y).unwrap()
            };
            let l2 = |t: &mut Tape<'_>| {
                let x = t.param(x).unwrap();
                let e = t.exp(x).unwrap();
                let s = t.softmax(e, 0.5).unwrap();
                let m = t.mul(s, x).unwrap();
                t.sum(m).unwrap()
            };
            let grads = |f: &dyn Fn(&mut Tape<'_>) -> Var| {
                let mut t = Tape::new(&p);
                let l = f(&mut t);
                t.backward(l).unwrap()
            };
            let g1 = grads(&l1);
            let g2 = grads(&l2);
            let combined = grads(&|t: &mut Tape<'_>| {
                let u = l1(t);
                let v = l2(t);
                let u = t.scale(u, a).unwrap();
                let v = t.scale(v, b).unwrap();
                t.add(u, v).unwrap()
            });
            for id in p.ids() {
                let (c, x1, x2) = (combined.dense(&p, id), g1.dense(&p, id), g2.dense(&p, id));
                for i in 0..c.len() {
                    prop_assert!((c[i] - (a * x1[i] + b * x2[i])).abs() <= 1e-12);
                }
            }
        }
    }
}
