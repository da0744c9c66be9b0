mod rng {
    use flowlab::tensor::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
        for _ in 0..1_000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn children_are_distinct_and_reproducible() {
        let root = RngState::new(7);
        let mut c0 = root.child(0);
        let mut c1 = root.child(1);
        let mut c0b = RngState::new(7).child(0);
        let x0 = c0.uniform();
        assert_ne!(x0, c1.uniform());
        assert_eq!(x0, c0b.uniform());
        let mut g = root.child(0).child(0);
        assert_ne!(g.uniform(), RngState::new(7).child(0).uniform());
    }

    #[test]
    fn truncated_normal_bounds() {
        let mut r = RngState::new(1);
        for _ in 0..10_000 {
            assert!(r.truncated_normal(0.5).abs() <= 1.0);
        }
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RngState::new(9);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}

mod container {
    use flowlab::tensor::*;
    use flowlab::Error;
    use proptest::prelude::*;

    #[test]
    fn layout_is_documented_bytes() {
        let t = Tensor::new(vec![2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &t).unwrap();
        let mut expected = b"FLT1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &t).unwrap();
        let short = &buf[..buf.len() - 3];
        assert!(matches!(
            read_tensor_from(&mut &short[..]),
            Err(Error::TruncatedFile(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor_from(&mut &bad[..]), Err(Error::BadMagic { .. })));
    }

    proptest! {
        #[test]
        fn roundtrip(shape in proptest::collection::vec(0usize..5, 0..4), seed in 0u64..1000) {
            let n: usize = shape.iter().product();
            let mut rng = flowlab::tensor::RngState::new(seed);
            let data: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let t = Tensor::new(shape, data).unwrap();
            let mut buf = Vec::new();
            write_tensor_to(&mut buf, &t).unwrap();
            let back = read_tensor_from(&mut &buf[..]).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn extents_must_match_length(shape in proptest::collection::vec(1usize..5, 1..4), extra in 1usize..3) {
            let n: usize = shape.iter().product();
            prop_assert!(Tensor::new(shape.clone(), vec![0.0; n + extra]).is_err());
            prop_assert!(Tensor::new(shape.clone(), vec![0.0; n - 1]).is_err());
            prop_assert_eq!(Tensor::new(shape, vec![0.0; n]).unwrap().len(), n);
        }
    }
}

mod linalg {
    use flowlab::tensor::*;
    use flowlab::Error;
    use proptest::prelude::*;

    fn random_matrix(n: usize, rng: &mut RngState) -> SquareMatrix {
        // Diagonal shift keeps these comfortably conditioned.
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, rng.normal() * 0.5 + if i == j { 2.0 } else { 0.0 });
            }
        }
        m
    }

    #[test]
    fn logabsdet_identity() {
        let (l, s) = SquareMatrix::identity(3).lu_logabsdet().unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn logabsdet_diagonal() {
        let m = SquareMatrix::from_rows(&[[2.0, 0.0], [0.0, 3.0]]);
        let (l, s) = m.lu_logabsdet().unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-15);
        assert!((l - 1.791759).abs() < 1e-6);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn logabsdet_permutation() {
        let m = SquareMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let (l, s) = m.lu_logabsdet().unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(s, -1.0);
    }

    #[test]
    fn singular_detected() {
        let m = SquareMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(m.lu_logabsdet(), Err(Error::SingularMatrix { .. })));
        assert!(matches!(m.inverse(), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn det_matches_cofactor_expansion() {
        let m = SquareMatrix::from_rows(&[[1.0, 2.0, 3.0], [0.5, -1.0, 4.0], [2.0, 0.0, 1.0]]);
        let cof = 1.0 * (-1.0 * 1.0 - 4.0 * 0.0) - 2.0 * (0.5 * 1.0 - 4.0 * 2.0) + 3.0 * (0.5 * 0.0 - (-1.0) * 2.0);
        let det = m.determinant().unwrap();
        assert!((det - cof).abs() < 1e-10 * cof.abs());
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(SquareMatrix::identity(4).inverse().unwrap(), SquareMatrix::identity(4));
        let m = SquareMatrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]);
        let inv = m.inverse().unwrap();
        assert_eq!(inv, SquareMatrix::from_rows(&[[0.5, 0.0], [0.0, 0.25]]));
    }

    #[test]
    fn inverse_residual_random_5x5() {
        let mut rng = RngState::new(11);
        let m = random_matrix(5, &mut rng);
        let inv = m.inverse().unwrap();
        let resid = m.matmul(&inv).max_abs_diff(&SquareMatrix::identity(5));
        assert!(resid < 1e-8, "residual {resid}");
    }

    #[test]
    fn orthonormalized_rotation() {
        let mut rng = RngState::new(3);
        let q = random_matrix(4, &mut rng).orthonormalized().unwrap();
        let qqt = q.matmul(&q.transpose());
        assert!(qqt.max_abs_diff(&SquareMatrix::identity(4)) < 1e-12);
        let (l, s) = q.lu_logabsdet().unwrap();
        assert!(l.abs() < 1e-12);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn spectral_norm_diagonal() {
        let m = SquareMatrix::diagonal(&[1.0, -3.0, 2.0]);
        assert!((m.spectral_norm() - 3.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn logabsdet_is_multiplicative(seed in 0u64..10_000, n in 1usize..6) {
            let mut rng = RngState::new(seed);
            let a = random_matrix(n, &mut rng);
            let b = random_matrix(n, &mut rng);
            let (la, sa) = a.lu_logabsdet().unwrap();
            let (lb, sb) = b.lu_logabsdet().unwrap();
            let (lab, sab) = a.matmul(&b).lu_logabsdet().unwrap();
            prop_assert!((lab - (la + lb)).abs() < 1e-8);
            prop_assert_eq!(sab, sa * sb);
        }

        #[test]
        fn exp_logabsdet_recovers_det(seed in 0u64..10_000) {
            let mut rng = RngState::new(seed);
            let m = random_matrix(2, &mut rng);
            let det = m.get(0, 0) * m.get(1, 1) - m.get(0, 1) * m.get(1, 0);
            let (l, s) = m.lu_logabsdet().unwrap();
            prop_assert!((s * l.exp() - det).abs() <= 1e-10 * det.abs());
        }
    }
}

mod finite_diff {
    use flowlab::tensor::*;

    #[test]
    fn identity_jacobian() {
        let j = finite_diff_jacobian(|x| x.to_vec(), &[0.3, -1.2, 4.0], DEFAULT_FD_EPS);
        assert!(j.max_abs_diff(&SquareMatrix::identity(3)) < 1e-9);
    }

    #[test]
    fn linear_map_recovered() {
        let u = SquareMatrix::from_rows(&[[1.0, 2.0, 0.5], [-0.3, 0.7, 1.1], [2.0, 0.0, -1.0]]);
        let j = finite_diff_jacobian(|x| u.matvec(x), &[0.1, 0.2, 0.3], DEFAULT_FD_EPS);
        assert!(j.max_abs_diff(&u) < 1e-6);
    }

    #[test]
    fn quadratic_hessians() {
        let h = finite_diff_hessian_diag(
            |x| -0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            &[0.5, -0.25, 1.0],
            1e-3,
        );
        for v in h {
            assert!((v + 1.0).abs() < 1e-6, "{v}");
        }
        let h = finite_diff_hessian_diag(
            |x| -0.5 * x.iter().map(|v| v * v).sum::<f64>() / 4.0,
            &[0.5, -0.25],
            1e-3,
        );
        for v in h {
            assert!((v + 0.25).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn gradient_of_quadratic() {
        let g = finite_diff_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], DEFAULT_FD_EPS);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }
}
