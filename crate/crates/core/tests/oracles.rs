//! Library results checked against independently coded references and
//! finite differences.

mod common;

use dpcpt::divergence::{objective, score_sequence};
use dpcpt::ingarch::{intensity_and_gradient_filter, intensity_filter, simulate};
use dpcpt::mdpde::{self, ParamBox};
use dpcpt::{change_test, fit, CountSeries, DpOrder, FitOptions, ModelSpec, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LIN: ModelSpec = ModelSpec::Linear;

fn order(a: f64) -> DpOrder {
    DpOrder::new(a).unwrap()
}

fn random_theta(rng: &mut ChaCha8Rng) -> ParamVector {
    let a = rng.random_range(0.0..0.5);
    let b = rng.random_range(0.0..(0.9 - a));
    ParamVector::linear(rng.random_range(0.5..4.0), a, b)
}

#[test]
fn intensity_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..30 {
        let th = random_theta(&mut rng);
        let x = simulate(&LIN, &th, 80, 100, case).unwrap().series;
        let path = intensity_and_gradient_filter(&LIN, &th, &x, x.mean()).unwrap();
        for i in 0..3 {
            let h = 1e-6 * th.as_slice()[i].abs().max(1.0);
            let mut up = th.clone();
            up.as_mut_slice()[i] += h;
            let mut dn = th.clone();
            dn.as_mut_slice()[i] -= h;
            let lu = intensity_filter(&LIN, &up, &x, x.mean()).unwrap().lambda;
            let ld = intensity_filter(&LIN, &dn, &x, x.mean()).unwrap().lambda;
            for t in 0..x.len() {
                let fd = (lu[t] - ld[t]) / (2.0 * h);
                let an = path.grad(t)[i];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "case {case} t {t} i {i}: {fd} vs {an}");
            }
        }
    }
}

#[test]
fn likelihood_scores_match_independent_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..20 {
        let th = random_theta(&mut rng);
        let x = simulate(&LIN, &th, 120, 100, 100 + case).unwrap().series;
        let lam1 = x.mean();
        let ours = score_sequence(&LIN, &th, &x, DpOrder::LIKELIHOOD, lam1).unwrap();
        let t3 = [th.as_slice()[0], th.as_slice()[1], th.as_slice()[2]];
        let theirs = common::likelihood_scores(t3, x.as_slice(), lam1);
        for (t, row) in theirs.iter().enumerate() {
            for i in 0..3 {
                let a = ours.term(t)[i];
                assert!((a - row[i]).abs() <= 1e-10 * row[i].abs().max(1.0), "case {case} t {t}: {a} vs {}", row[i]);
            }
        }
    }
}

#[test]
fn divergence_objective_matches_independent_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..10 {
        let th = random_theta(&mut rng);
        let x = simulate(&LIN, &th, 60, 100, 200 + case).unwrap().series;
        let alpha = [0.1, 0.5, 1.0][case as usize % 3];
        let lam = common::recursion([th.as_slice()[0], th.as_slice()[1], th.as_slice()[2]], x.as_slice(), x.mean()).lambda;
        let theirs: f64 = lam.iter().zip(x.as_slice()).map(|(&l, &xi)| common::dp_loss(l, xi, alpha)).sum();
        let ours = objective(&LIN, &th, &x, order(alpha), x.mean()).unwrap();
        assert!((ours - theirs).abs() <= 1e-10 * theirs.abs().max(1.0), "{ours} vs {theirs}");
    }
}

#[test]
fn k_hat_matches_independent_outer_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..5 {
        let th = random_theta(&mut rng);
        let x = simulate(&LIN, &th, 200, 100, 300 + case).unwrap().series;
        let alpha = [0.0, 0.2, 0.5, 1.0, 0.3][case as usize];
        let lam1 = x.mean();
        let t3 = [th.as_slice()[0], th.as_slice()[1], th.as_slice()[2]];
        let scores = if alpha == 0.0 {
            common::likelihood_scores(t3, x.as_slice(), lam1)
        } else {
            common::dp_scores(t3, x.as_slice(), lam1, alpha)
        };
        let n = x.len() as f64;
        let k = mdpde::k_hat(&LIN, &th, &x, order(alpha), lam1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let oracle: f64 = scores.iter().map(|s| s[i] * s[j]).sum::<f64>() / ((1.0 + alpha).powi(2) * n);
                assert!((k[(i, j)] - oracle).abs() <= 1e-10 * oracle.abs(), "α={alpha} ({i},{j}): {} vs {oracle}", k[(i, j)]);
            }
        }
    }
}

#[test]
fn j_hat_is_poisson_fisher_information_without_dynamics() {
    // a = b = 0 pinned by the box: the w-entry is the Poisson Fisher information, about 1/x̄
    let x = simulate(&LIN, &ParamVector::linear(3.0, 0.0, 0.0), 2000, 0, 8).unwrap().series;
    let mut opts = FitOptions::default();
    opts.parameter_box = Some(ParamBox { lower: vec![1e-4, 0.0, 0.0], upper: vec![20.0, 0.0, 0.0] });
    let f = fit(&LIN, &x, DpOrder::LIKELIHOOD, &opts).unwrap();
    // λ̃_1 is fixed, so only t ≥ 2 carries information about w
    let n = x.len() as f64;
    let w_hat = common::mean(&x.as_slice()[1..]);
    assert!((f.theta_hat.as_slice()[0] - w_hat).abs() < 1e-6);
    let fisher = (n - 1.0) / (n * w_hat);
    assert!((f.j_hat[(0, 0)] - fisher).abs() < 1e-6 * fisher, "{} vs {fisher}", f.j_hat[(0, 0)]);
    assert!((f.j_hat[(0, 0)] - 1.0 / x.mean()).abs() < 1e-2 / x.mean());
    assert_eq!(f.j_hat, f.j_hat.transpose());
}

#[test]
fn j_hat_matches_second_differences_of_objective() {
    let th = ParamVector::linear(2.0, 0.2, 0.3);
    let x = simulate(&LIN, &th, 400, 100, 9).unwrap().series;
    for alpha in [0.0, 0.3, 1.0] {
        let lam1 = x.mean();
        let j = mdpde::j_hat(&LIN, &th, &x, order(alpha), lam1).unwrap();
        let n = x.len() as f64;
        let h = 1e-4;
        let at = |di: usize, si: f64, dj: usize, sj: f64| {
            let mut t = th.clone();
            t.as_mut_slice()[di] += si * h;
            t.as_mut_slice()[dj] += sj * h;
            objective(&LIN, &t, &x, order(alpha), lam1).unwrap()
        };
        for i in 0..3 {
            for k in 0..3 {
                let second = (at(i, 1.0, k, 1.0) - at(i, 1.0, k, -1.0) - at(i, -1.0, k, 1.0) + at(i, -1.0, k, -1.0)) / (4.0 * h * h);
                let oracle = second / ((1.0 + alpha) * n);
                let scale = (j[(i, i)] * j[(k, k)]).sqrt();
                assert!((j[(i, k)] - oracle).abs() <= 1e-3 * oracle.abs().max(1e-2 * scale), "α={alpha} ({i},{k}): {} vs {oracle}", j[(i, k)]);
            }
        }
    }
}

#[test]
fn likelihood_fit_matches_independent_mle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0;
    let mut seed = 0;
    while checked < 20 {
        seed += 1;
        assert!(seed < 200, "too few interior instances");
        let th = ParamVector::linear(rng.random_range(1.0..3.0), rng.random_range(0.2..0.4), rng.random_range(0.2..0.4));
        let x = simulate(&LIN, &th, 800, 500, seed).unwrap().series;
        let lam1 = x.mean();
        let Some(mle) = common::newton_mle(x.as_slice(), lam1, [th.as_slice()[0], th.as_slice()[1], th.as_slice()[2]]) else { continue };
        if mle[1] < 0.01 || mle[2] < 0.01 || mle[1] + mle[2] > 0.95 {
            continue;
        }
        let f = fit(&LIN, &x, DpOrder::LIKELIHOOD, &FitOptions::default()).unwrap();
        for i in 0..3 {
            assert!((f.theta_hat.as_slice()[i] - mle[i]).abs() < 1e-4, "seed {seed}: {:?} vs {mle:?}", f.theta_hat);
        }
        checked += 1;
    }
}

#[test]
fn fit_matches_two_parameter_grid_search() {
    // a pinned to 0: minimize over (w, b) on a 1e-3 grid around a coarse optimum
    for (seed, alpha) in [(11u64, 0.0), (12, 0.5)] {
        let x = simulate(&LIN, &ParamVector::linear(1.0, 0.0, 0.5), 50, 100, seed).unwrap().series;
        let lam1 = x.mean();
        let w_max = (5.0 * x.mean()).max(1.0);
        let mut opts = FitOptions::default();
        opts.parameter_box = Some(ParamBox { lower: vec![1e-4, 0.0, 0.0], upper: vec![w_max, 0.0, 0.999] });
        let f = fit(&LIN, &x, order(alpha), &opts).unwrap();

        let obj = |w: f64, b: f64| objective(&LIN, &ParamVector::linear(w, 0.0, b), &x, order(alpha), lam1).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut w = 0.05;
        while w <= w_max {
            let mut b = 0.0;
            while b <= 0.999 {
                let v = obj(w, b);
                if v < best.0 {
                    best = (v, w, b);
                }
                b += 0.02;
            }
            w += 0.02;
        }
        let (_, wc, bc) = best;
        for iw in -100..=100 {
            let w = wc + iw as f64 * 1e-3;
            if w < 1e-4 || w > w_max {
                continue;
            }
            for ib in -100..=100 {
                let b = bc + ib as f64 * 1e-3;
                if !(0.0..=0.999).contains(&b) {
                    continue;
                }
                let v = obj(w, b);
                if v < best.0 {
                    best = (v, w, b);
                }
            }
        }
        let th = f.theta_hat.as_slice();
        assert!((th[0] - best.1).abs() <= 2e-3 && (th[2] - best.2).abs() <= 2e-3, "α={alpha}: fit {th:?} grid ({}, {})", best.1, best.2);
    }
}

#[test]
fn likelihood_statistic_matches_independent_score_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    let mut seed = 1000;
    while checked < 20 {
        seed += 1;
        assert!(seed < 1200, "too few interior instances");
        let th = ParamVector::linear(rng.random_range(1.0..3.0), rng.random_range(0.2..0.4), rng.random_range(0.2..0.4));
        let x = simulate(&LIN, &th, 500, 500, seed).unwrap().series;
        let lam1 = x.mean();
        let Some(mle) = common::newton_mle(x.as_slice(), lam1, [th.as_slice()[0], th.as_slice()[1], th.as_slice()[2]]) else { continue };
        if mle[1] < 0.01 || mle[2] < 0.01 || mle[1] + mle[2] > 0.95 {
            continue;
        }
        let oracle = common::score_test(mle, x.as_slice(), lam1);
        let t = change_test::dp_score_statistic(&LIN, &x, DpOrder::LIKELIHOOD, &FitOptions::default(), &[0.05]).unwrap();
        assert!((t.statistic - oracle).abs() <= 1e-6 * oracle, "seed {seed}: {} vs {oracle}", t.statistic);
        checked += 1;
    }
}

#[test]
fn series_input_is_not_mutated_by_fit() {
    let x = CountSeries::new(vec![1, 3, 2, 0, 4, 2, 1, 5, 3, 2, 2, 1]).unwrap();
    let copy = x.clone();
    let _ = fit(&LIN, &x, order(0.3), &FitOptions::default());
    assert_eq!(x, copy);
}
