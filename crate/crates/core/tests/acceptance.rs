//! Acceptance gate, run with a custom harness so every criterion prints its
//! PASS/FAIL line. A positional argument filters criteria by name; criterion
//! 11 runs only with `--ignored` or `--include-ignored`.

use std::time::{Duration, Instant};

use flowlab::data::{downsample2x, gen_two_moons, gen_uniform_random, load_idx, scale_pixels, scale_pixels_fixed};
use flowlab::flow::{build_model, ExampleShape, FlowLayer, FlowModel, KernelInit, Mixer, ModelConfig, Variant};
use flowlab::likelihood::{log_likelihood, mean_total, Prior};
use flowlab::ood::{
    alpha_coeffs, compute_moments, concentration_check, gray_images, hadamard_check, hessian_check_cv,
    jacobian_diag_check, likelihood_bound_check, predict_gap_cv, predict_gap_from_sums, second_order_gap,
    simulate_bounds, trend_slope, AlphaCoefficients, DataMoments, SweepConfig, VOLUME_HESSIAN_TOL,
};
use flowlab::tensor::{finite_diff_jacobian, RngState, SquareMatrix, Tensor, DEFAULT_FD_EPS};
use flowlab::train::{loss_and_grad, train, TrainConfig, TrainData};

const SVHN_SUMS: [f64; 3] = [49.6, 52.7, 53.6];
const CIFAR_SUMS: [f64; 3] = [61.9, 59.2, 68.1];

fn report(id: &str, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let pass = pass && elapsed < limit;
    println!(
        "criterion {id}: {} | {detail} | {:.2}s (limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn config(shape: ExampleShape, variant: Variant) -> ModelConfig {
    ModelConfig {
        input_shape: shape,
        variant,
        couplings: 2,
        hidden: 8,
        ..ModelConfig::default()
    }
}

fn random_input(d: usize, rng: &mut RngState) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

fn set_kernels(model: &mut FlowModel, kernels: &[SquareMatrix]) {
    let mut it = kernels.iter();
    for layer in model.layers_mut() {
        if let FlowLayer::InvConv1x1(c) = layer {
            c.kernel = it.next().expect("one kernel per conv").clone();
        }
    }
}

fn conv_count(model: &FlowModel) -> usize {
    model
        .layers()
        .iter()
        .filter(|l| matches!(l, FlowLayer::InvConv1x1(_)))
        .count()
}

fn moons(n: usize, rng: &mut RngState) -> Tensor {
    gen_two_moons(n, 0.1, rng).unwrap().points
}

fn trained_moons_model(variant: Variant, steps: usize, seed: u64) -> (FlowModel, Tensor) {
    let mut rng = RngState::new(seed);
    let x = moons(2000, &mut rng);
    let cfg = ModelConfig {
        input_shape: ExampleShape::flat(2),
        variant,
        couplings: 4,
        hidden: 32,
        ..ModelConfig::default()
    };
    let mut model = build_model(&cfg, &mut rng.child(1)).unwrap();
    let tc = TrainConfig {
        lr: 1e-3,
        steps,
        batch_size: 64,
        seed,
        eval_every: steps.max(1),
        ..TrainConfig::default()
    };
    train(&mut model, &Prior::default(), TrainData { train: &x, eval: None }, &tc).unwrap();
    (model, x)
}

fn criterion_01_invertibility() {
    let t = Instant::now();
    let mut rng = RngState::new(101);
    let variants = [Variant::NvpExp, Variant::NvpSigmoid, Variant::Cv];
    let mut worst: f64 = 0.0;
    let mut models = 0;
    for i in 0..120 {
        let variant = variants[i % 3];
        let image = i % 2 == 1;
        let mut cfg = config(
            if image {
                ExampleShape::new(4, 4, 4)
            } else {
                ExampleShape::flat(2)
            },
            variant,
        );
        cfg.couplings = 1 + rng.index(3);
        cfg.hidden = 4 + rng.index(8);
        if image {
            cfg.blocks = 1 + rng.index(2);
            cfg.multiscale = rng.index(2) == 1;
            cfg.net_kernel = [1, 3][rng.index(2)];
        }
        if rng.index(2) == 1 {
            cfg.mixer = Some([Mixer::Conv1x1, Mixer::Reverse][rng.index(2)]);
        }
        let mut model = build_model(&cfg, &mut rng.child(i as u64)).unwrap();
        model.perturb_params(&mut rng.child(1000 + i as u64), 0.3);
        let n = 4;
        let x = Tensor::new(
            [vec![n], cfg.input_shape.dims()].concat(),
            (0..n * model.dim()).map(|_| 2.0 * rng.normal()).collect(),
        )
        .unwrap();
        let out = model.model_forward(&x).unwrap();
        let back = model.model_inverse(&out.z).unwrap();
        worst = worst.max(back.max_abs_diff(&x));
        models += 1;
    }
    report(
        "01",
        models >= 100 && worst < 1e-6,
        t.elapsed(),
        Duration::from_secs(30),
        &format!("{models} models, worst round-trip inf-error {worst:.2e} (tol 1e-6)"),
    );
}

fn criterion_02_logdet_fidelity() {
    let t = Instant::now();
    let mut rng = RngState::new(202);
    let shapes = [
        ExampleShape::flat(2),
        ExampleShape::flat(4),
        ExampleShape::flat(8),
        ExampleShape::new(2, 2, 2),
        ExampleShape::new(2, 2, 1),
    ];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &shape in &shapes {
        for variant in [Variant::NvpExp, Variant::NvpSigmoid, Variant::Cv] {
            for mixer in [Mixer::Conv1x1, Mixer::Reverse] {
                let mut cfg = config(shape, variant);
                cfg.mixer = Some(mixer);
                if shape.h == 2 {
                    cfg.blocks = if shape.c == 1 { 1 } else { 2 };
                    cfg.multiscale = shape.c == 2;
                }
                let mut model = build_model(&cfg, &mut rng.child(cases)).unwrap();
                model.perturb_params(&mut rng.child(500 + cases), 0.4);
                for _ in 0..3 {
                    let x0 = random_input(model.dim(), &mut rng);
                    let (_, ld) = model.forward_example(&x0).unwrap();
                    let jac = finite_diff_jacobian(|x| model.forward_example(x).unwrap().0, &x0, DEFAULT_FD_EPS);
                    let (fd, _) = jac.lu_logabsdet().unwrap();
                    worst = worst.max(rel_err(ld, fd));
                }
                cases += 1;
            }
        }
    }
    report(
        "02",
        worst < 1e-4,
        t.elapsed(),
        Duration::from_secs(60),
        &format!("{cases} models x 3 points, worst rel. err {worst:.2e} (tol 1e-4)"),
    );
}

fn criterion_03_gradient_fidelity() {
    let t = Instant::now();
    let mut rng = RngState::new(303);
    let prior = Prior::default();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for variant in [Variant::NvpExp, Variant::NvpSigmoid, Variant::Cv] {
        for (mixer, l2) in [(Mixer::Conv1x1, 0.0), (Mixer::Reverse, 0.05)] {
            let mut cfg = config(ExampleShape::flat(4), variant);
            cfg.mixer = Some(mixer);
            let mut model = build_model(&cfg, &mut rng.child(checked as u64)).unwrap();
            model.perturb_params(&mut rng.child(99 + checked as u64), 0.3);
            let batch = Tensor::new(vec![6, 4], (0..24).map(|_| rng.normal()).collect()).unwrap();
            let (_, grads) = loss_and_grad(&model, &prior, &batch, l2).unwrap();
            let analytic: Vec<f64> = grads.concat();
            let theta = model.flat_params();
            let mut probe = model.clone();
            let mut loss_at = |p: &[f64]| {
                probe.set_flat_params(p).unwrap();
                loss_and_grad(&probe, &prior, &batch, l2).unwrap().0
            };
            for i in 0..theta.len() {
                let mut p = theta.clone();
                p[i] = theta[i] + DEFAULT_FD_EPS;
                let up = loss_at(&p);
                p[i] = theta[i] - DEFAULT_FD_EPS;
                let down = loss_at(&p);
                let fd = (up - down) / (2.0 * DEFAULT_FD_EPS);
                worst = worst.max(rel_err(analytic[i], fd));
                checked += 1;
            }
        }
    }
    report(
        "03",
        worst < 1e-4,
        t.elapsed(),
        Duration::from_secs(60),
        &format!("{checked} parameters on D=4 models, worst rel. err {worst:.2e} (tol 1e-4)"),
    );
}

/// Composite Simpson weights for `n` (even) intervals of width `h`.
fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

fn integrate_density(model: &FlowModel, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let w = simpson_weights(n, h);
    let grid: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
    let mut pts = Vec::with_capacity((n + 1) * (n + 1) * 2);
    for &a in &grid {
        for &b in &grid {
            pts.extend([a, b]);
        }
    }
    let x = Tensor::new(vec![(n + 1) * (n + 1), 2], pts).unwrap();
    let rows = log_likelihood(model, &Prior::default(), &x).unwrap();
    let mut mass = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            mass += w[i] * w[j] * rows[i * (n + 1) + j].total.exp();
        }
    }
    mass
}

fn criterion_04_normalization() {
    let t = Instant::now();
    let (model, _) = trained_moons_model(Variant::NvpExp, 3000, 404);
    let mass = integrate_density(&model, -7.0, 7.0, 700);
    report(
        "04",
        (mass - 1.0).abs() < 1e-2,
        t.elapsed(),
        Duration::from_secs(120),
        &format!("two-moons NVP, 3000 steps, Simpson mass over [-7,7]^2 = {mass:.5} (tol 1e-2)"),
    );
}

fn zero_net_cv(couplings: usize, init: KernelInit, seed: u64) -> FlowModel {
    let mut cfg = config(ExampleShape::new(2, 2, 3), Variant::Cv);
    cfg.couplings = couplings;
    cfg.kernel_init = init;
    build_model(&cfg, &mut RngState::new(seed)).unwrap()
}

struct Residuals {
    jac: f64,
    hess: f64,
    vol: f64,
}

fn curvature_residuals(model: &FlowModel, sigma: f64, rng: &mut RngState) -> Residuals {
    let prior = Prior::gaussian(sigma).unwrap();
    let mut out = Residuals {
        jac: 0.0,
        hess: 0.0,
        vol: 0.0,
    };
    for _ in 0..3 {
        let x0 = random_input(model.dim(), rng);
        let j = jacobian_diag_check(model, &x0).unwrap();
        let h = hessian_check_cv(model, &prior, &x0).unwrap();
        out.jac = out.jac.max(j.residual_alpha);
        out.hess = out.hess.max(h.residual_closed_form);
        out.vol = out.vol.max(h.volume_max_abs);
    }
    out
}

fn criterion_05_alpha_curvature_diagonal_kernels() {
    let t = Instant::now();
    let mut rng = RngState::new(505);
    let mut worst = Residuals {
        jac: 0.0,
        hess: 0.0,
        vol: 0.0,
    };
    for seed in 0..6 {
        let mut model = zero_net_cv(1 + seed as usize % 3, KernelInit::Identity, seed);
        if seed >= 2 {
            let kernels: Vec<SquareMatrix> = (0..conv_count(&model))
                .map(|_| {
                    SquareMatrix::diagonal(
                        &(0..3)
                            .map(|_| rng.uniform_range(0.5, 1.5) * [1.0, -1.0][rng.index(2)])
                            .collect::<Vec<_>>(),
                    )
                })
                .collect();
            set_kernels(&mut model, &kernels);
        }
        let r = curvature_residuals(&model, rng.uniform_range(0.5, 2.0), &mut rng);
        worst.jac = worst.jac.max(r.jac);
        worst.hess = worst.hess.max(r.hess);
        worst.vol = worst.vol.max(r.vol);
    }
    report(
        "05a",
        worst.jac < 1e-5 && worst.hess < 1e-4 && worst.vol < VOLUME_HESSIAN_TOL,
        t.elapsed(),
        Duration::from_secs(30),
        &format!(
            "identity/diagonal kernels: jacobian vs alpha {:.2e} (tol 1e-5), hessian vs -alpha^2/sigma^2 {:.2e} (tol 1e-4), volume hessian {:.2e}",
            worst.jac, worst.hess, worst.vol
        ),
    );
}

fn criterion_05_alpha_curvature_general_kernels() {
    let t = Instant::now();
    let mut rng = RngState::new(506);
    let mut worst = Residuals {
        jac: 0.0,
        hess: 0.0,
        vol: 0.0,
    };
    let mut exact_hess: f64 = 0.0;
    for seed in 0..4 {
        let model = zero_net_cv(1 + seed as usize % 3, KernelInit::Rotation, 50 + seed);
        let sigma = rng.uniform_range(0.5, 2.0);
        let r = curvature_residuals(&model, sigma, &mut rng);
        worst.jac = worst.jac.max(r.jac);
        worst.hess = worst.hess.max(r.hess);
        worst.vol = worst.vol.max(r.vol);
        let x0 = random_input(model.dim(), &mut rng);
        exact_hess = exact_hess.max(
            hessian_check_cv(&model, &Prior::gaussian(sigma).unwrap(), &x0)
                .unwrap()
                .residual_exact_form,
        );
    }
    report(
        "05b",
        worst.jac < 1e-5 && worst.hess < 1e-4 && worst.vol < VOLUME_HESSIAN_TOL,
        t.elapsed(),
        Duration::from_secs(30),
        &format!(
            "random rotation kernels: jacobian vs alpha {:.2e} (tol 1e-5), hessian vs -alpha^2/sigma^2 {:.2e} (tol 1e-4), volume hessian {:.2e}; exact -|W e_c|^2/sigma^2 form residual {:.2e}",
            worst.jac, worst.hess, worst.vol, exact_hess
        ),
    );
}

fn criterion_06_reference_gap() {
    let t = Instant::now();
    let mut rng = RngState::new(606);
    let mut min_gap = f64::INFINITY;
    for draw in 0..1000u64 {
        let mut cfg = config(ExampleShape::new(2, 2, 3), Variant::Cv);
        cfg.couplings = 1 + rng.index(4);
        cfg.hidden = 4;
        let mut model = build_model(&cfg, &mut rng.child(draw)).unwrap();
        model.perturb_params(&mut rng.child(5000 + draw), rng.uniform_range(0.1, 1.0));
        let alpha = alpha_coeffs(&model).unwrap();
        let sigma = rng.uniform_range(0.25, 4.0);
        let g = predict_gap_cv(
            &alpha,
            &DataMoments::from_channel_sums(&SVHN_SUMS),
            &DataMoments::from_channel_sums(&CIFAR_SUMS),
            sigma,
        )
        .unwrap();
        min_gap = min_gap.min(g.total);
    }
    let unit = predict_gap_from_sums(&[1.0; 3], &SVHN_SUMS, &CIFAR_SUMS, 1.0)
        .unwrap()
        .total;
    let oracle = 0.5 * ((61.9 - 49.6) + (59.2 - 52.7) + (68.1 - 53.6));
    report(
        "06",
        min_gap >= 0.0 && (unit - 16.65).abs() < 1e-9 && (unit - oracle).abs() < 1e-12,
        t.elapsed(),
        Duration::from_secs(5),
        &format!(
            "min gap over 1000 CV draws {min_gap:.4e} (>= 0); alpha = 1, sigma = 1 gives {unit:.6} (expect 16.65)"
        ),
    );
}

fn criterion_07_second_order_exactness() {
    let t = Instant::now();
    let mut rng = RngState::new(707);
    let shape = ExampleShape::new(2, 2, 3);
    let model = zero_net_cv(3, KernelInit::Rotation, 7);
    let prior = Prior::default();
    let d = shape.len();
    let mean = vec![0.3; d];
    let var_q: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.2, 1.0)).collect();
    let var_p: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.2, 1.0)).collect();
    let moments = |var: &[f64]| DataMoments {
        shape,
        mean: mean.clone(),
        variance: var.to_vec(),
        channel_variance_sums: (0..3).map(|c| (0..4).map(|p| var[p * 3 + c]).sum()).collect(),
        count: usize::MAX,
    };
    let predicted = second_order_gap(&model, &prior, &mean, &moments(&var_q), &moments(&var_p)).unwrap();

    let n = 100_000;
    let sample_ll = |var: &[f64], rng: &mut RngState| -> Vec<f64> {
        let data: Vec<f64> = (0..n * d)
            .map(|i| mean[i % d] + var[i % d].sqrt() * rng.normal())
            .collect();
        let x = Tensor::new(vec![n, 2, 2, 3], data).unwrap();
        log_likelihood(&model, &prior, &x)
            .unwrap()
            .iter()
            .map(|r| r.total)
            .collect()
    };
    let lq = sample_ll(&var_q, &mut rng.child(1));
    let lp = sample_ll(&var_p, &mut rng.child(2));
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, s2)
    };
    let ((mq, sq), (mp, sp)) = (stats(&lq), stats(&lp));
    let mc = mq - mp;
    let se = (sq / n as f64 + sp / n as f64).sqrt();
    report(
        "07",
        (predicted.total - mc).abs() < 3.0 * se,
        t.elapsed(),
        Duration::from_secs(60),
        &format!(
            "linear CV, D = {d}: second-order gap {:.5}, MC gap {mc:.5} +/- {se:.5} (3 SE window)",
            predicted.total
        ),
    );
}

/// `P(|x| >= a)` for standard normal `x`, by Simpson integration of the density.
fn normal_two_sided_tail(a: f64) -> f64 {
    let n = 2000;
    let h = a / n as f64;
    let w = simpson_weights(n, h);
    let inner: f64 = (0..=n)
        .map(|i| {
            let x = i as f64 * h;
            w[i] * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
        })
        .sum();
    1.0 - 2.0 * inner
}

fn criterion_08_bound_checks() {
    let t = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for (variant, seed) in [(Variant::NvpExp, 80), (Variant::NvpSigmoid, 81)] {
        let (model, x) = trained_moons_model(variant, 1000, seed);
        let pts = x.select(&(0..100).collect::<Vec<_>>());
        let had = hadamard_check(&model, &pts).unwrap();
        let lik = likelihood_bound_check(&model, &Prior::default(), &pts, had.lipschitz_estimate).unwrap();
        pass &= had.hadamard.satisfied && had.lipschitz.satisfied && lik.satisfied && had.hadamard.checked == 100;
        details.push(format!(
            "{variant}: hadamard {}/100, likelihood bound {}/100",
            100 - had.hadamard.violations,
            100 - lik.violations
        ));
    }

    let mut rng = RngState::new(808);
    let mut conc_ok = true;
    for d in [2usize, 3, 5] {
        let a = SquareMatrix::new(d, (0..d * d).map(|_| rng.normal()).collect()).unwrap();
        let l = a.spectral_norm();
        let mu: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let sd: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.3, 1.5)).collect();
        let scale = l * sd.iter().map(|s| s * s).sum::<f64>().sqrt();
        let deltas: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 3.0, 5.0].iter().map(|k| k * scale).collect();
        let (mu2, sd2) = (mu.clone(), sd.clone());
        let r = concentration_check(
            |x| a.matvec(x),
            l,
            &mu,
            move |rng| mu2.iter().zip(&sd2).map(|(m, s)| m + s * rng.normal()).collect(),
            &deltas,
            20_000,
            &mut rng.child(d as u64),
        )
        .unwrap();
        conc_ok &= r.report.satisfied;
    }
    pass &= conc_ok;
    details.push(format!(
        "linear-map Chebyshev grid {}",
        if conc_ok { "holds" } else { "violated" }
    ));

    let spot = concentration_check(
        |x| vec![2.0 * x[0]],
        2.0,
        &[0.0],
        |rng| vec![rng.normal()],
        &[3.0],
        200_000,
        &mut rng.child(99),
    )
    .unwrap();
    let row = &spot.rows[0];
    let tail = normal_two_sided_tail(1.5);
    let se = (tail * (1.0 - tail) / 200_000.0).sqrt();
    let spot_ok = (row.bound - 4.0 / 9.0).abs() < 0.01 && (row.empirical - tail).abs() < 4.0 * se && row.satisfied;
    pass &= spot_ok;
    details.push(format!(
        "f(x)=2x, delta=3: bound {:.4} (4/9 = {:.4}), empirical {:.4} (analytic {:.4})",
        row.bound,
        4.0 / 9.0,
        row.empirical,
        tail
    ));
    report("08", pass, t.elapsed(), Duration::from_secs(120), &details.join("; "));
}

fn criterion_09_dimensionality_sweep() {
    let t = Instant::now();
    let dims = [2usize, 8, 32, 64];
    let cfg = SweepConfig::default();
    let xs: Vec<f64> = dims.iter().map(|&d| d as f64).collect();
    let exp = simulate_bounds(&dims, Variant::NvpExp, &cfg).unwrap();
    let sig = simulate_bounds(&dims, Variant::NvpSigmoid, &cfg).unwrap();
    let slope = |rows: &[flowlab::ood::SweepRow], f: fn(&flowlab::ood::SweepRow) -> f64| {
        trend_slope(&xs, &rows.iter().map(f).collect::<Vec<_>>())
    };
    let (ev, ep) = (slope(&exp, |r| r.volume_mean), slope(&exp, |r| r.prior_mean));
    let (sv, sp) = (slope(&sig, |r| r.volume_mean), slope(&sig, |r| r.prior_mean));
    let sig_nonpos = sig.iter().all(|r| r.volume_nonpositive);
    for r in exp.iter().chain(&sig) {
        println!(
            "  D {:>2}: prior {:>9.3} volume {:>9.3} max volume {:>8.3}",
            r.dim, r.prior_mean, r.volume_mean, r.volume_max
        );
    }
    report(
        "09",
        ev > 0.0 && ep < 0.0 && sig_nonpos && sv <= 0.0 && sp <= 0.0,
        t.elapsed(),
        Duration::from_secs(900),
        &format!(
            "exp slopes volume {ev:+.3} prior {ep:+.3}; sigmoid slopes volume {sv:+.3} prior {sp:+.3}, volume <= 0 everywhere: {sig_nonpos}"
        ),
    );
}

fn criterion_10_graying_law() {
    let t = Instant::now();
    let mut rng = RngState::new(1010);
    let raw = gen_uniform_random(ExampleShape::new(4, 4, 3), 400, &mut rng);
    let x = scale_pixels(&raw, &mut rng).unwrap().images;
    let base = compute_moments(&x).unwrap();
    let model = zero_net_cv(3, KernelInit::Rotation, 10);
    let alpha: AlphaCoefficients = alpha_coeffs(&model).unwrap();
    let mut var_err: f64 = 0.0;
    let mut gaps = Vec::new();
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let m = compute_moments(&gray_images(&x, lambda).unwrap()).unwrap();
        for (a, b) in m.variance.iter().zip(&base.variance) {
            var_err = var_err.max((a - lambda * lambda * b).abs());
        }
        gaps.push(predict_gap_cv(&alpha, &m, &base, 1.0).unwrap().total);
    }
    let nonneg = gaps.iter().all(|g| *g >= 0.0);
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    report(
        "10",
        var_err < 1e-10 && nonneg && monotone,
        t.elapsed(),
        Duration::from_secs(10),
        &format!("variance law error {var_err:.2e} (tol 1e-10); gaps over lambda grid {gaps:.4?}"),
    );
}

fn env_path(key: &str) -> String {
    std::env::var(key).unwrap_or_else(|_| panic!("set {key} to an IDX image file to run this test"))
}

fn criterion_11_fashion_vs_mnist() {
    let t = Instant::now();
    let steps: usize = std::env::var("FLOWLAB_LONG_STEPS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(5000);
    let load = |key: &str| downsample2x(&load_idx(env_path(key)).unwrap()).unwrap();
    let train_raw = load("FLOWLAB_FASHION_TRAIN");
    let fashion = scale_pixels_fixed(&load("FLOWLAB_FASHION_TEST"), 1).unwrap().images;
    let mnist = scale_pixels_fixed(&load("FLOWLAB_MNIST_TEST"), 2).unwrap().images;
    let cfg = ModelConfig {
        input_shape: ExampleShape::new(14, 14, 1),
        variant: Variant::Cv,
        blocks: 1,
        couplings: 8,
        hidden: 64,
        net_kernel: 3,
        ..ModelConfig::default()
    };
    let mut model = build_model(&cfg, &mut RngState::new(11)).unwrap();
    let tc = TrainConfig {
        lr: 1e-3,
        steps,
        batch_size: 32,
        l2: 0.0,
        seed: 11,
        eval_every: 500,
        dequantize: true,
        ..TrainConfig::default()
    };
    let outcome = train(
        &mut model,
        &Prior::default(),
        TrainData {
            train: &train_raw.images,
            eval: None,
        },
        &tc,
    )
    .unwrap();
    for r in &outcome.metrics {
        println!("  step {:>5} train bpd {:.4}", r.step, r.train_bpd);
    }
    let lf = mean_total(&log_likelihood(&model, &Prior::default(), &fashion).unwrap());
    let lm = mean_total(&log_likelihood(&model, &Prior::default(), &mnist).unwrap());
    report(
        "11",
        lm > lf,
        t.elapsed(),
        Duration::from_secs(7200),
        &format!("{steps} steps: mean log-likelihood MNIST {lm:.2} vs FashionMNIST {lf:.2} nats"),
    );
}

type Criterion = (&'static str, fn());

const CRITERIA: [Criterion; 11] = [
    ("criterion_01_invertibility", criterion_01_invertibility),
    ("criterion_02_logdet_fidelity", criterion_02_logdet_fidelity),
    ("criterion_03_gradient_fidelity", criterion_03_gradient_fidelity),
    ("criterion_04_normalization", criterion_04_normalization),
    (
        "criterion_05_alpha_curvature_diagonal_kernels",
        criterion_05_alpha_curvature_diagonal_kernels,
    ),
    (
        "criterion_05_alpha_curvature_general_kernels",
        criterion_05_alpha_curvature_general_kernels,
    ),
    ("criterion_06_reference_gap", criterion_06_reference_gap),
    (
        "criterion_07_second_order_exactness",
        criterion_07_second_order_exactness,
    ),
    ("criterion_08_bound_checks", criterion_08_bound_checks),
    ("criterion_09_dimensionality_sweep", criterion_09_dimensionality_sweep),
    ("criterion_10_graying_law", criterion_10_graying_law),
];

fn main() -> std::process::ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let long = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let only_long = args.iter().any(|a| a == "--ignored");
    let filter = args.iter().find(|a| !a.starts_with('-'));
    let mut all: Vec<Criterion> = CRITERIA.to_vec();
    all.push(("criterion_11_fashion_vs_mnist", criterion_11_fashion_vs_mnist));

    let (mut passed, mut failed, mut skipped) = (Vec::new(), Vec::new(), 0);
    for (name, f) in all {
        if filter.is_some_and(|p| !name.contains(p.as_str())) {
            continue;
        }
        let is_long = name.starts_with("criterion_11");
        if is_long != only_long && !(is_long && long) {
            if is_long {
                println!("criterion 11: SKIP | opt-in, pass --ignored with the dataset variables set");
            }
            skipped += 1;
            continue;
        }
        match std::panic::catch_unwind(f) {
            Ok(()) => passed.push(name),
            Err(_) => failed.push(name),
        }
    }
    println!(
        "\nacceptance: {} passed, {} failed, {skipped} skipped",
        passed.len(),
        failed.len()
    );
    for name in &failed {
        println!("  failed: {name}");
    }
    if failed.is_empty() {
        std::process::ExitCode::SUCCESS
    } else {
        std::process::ExitCode::FAILURE
    }
}
