use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use yulenet::nn::{Graph, ParameterStore, gradcheck};
use yulenet::rng;
use yulenet::simulators::Model;
use yulenet::summaries::{
    Ar2AcfVariant, YuleNet, YuleNetConfig, autocorr_features, theoretical_autocorr_ar2,
    theoretical_autocorr_ma2,
};

const SEEDS: u64 = 200;
const N_S: usize = 4096;

/// Per-lag mean and standard error of `r̂(1..=4)` over independent series.
fn empirical_lags(model: Model, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..SEEDS)
        .map(|s| {
            let mut r = rng::stream(77, 0, s);
            let x = model
                .simulate(theta, N_S, &mut r)
                .unwrap()
                .expect("valid series");
            autocorr_features(x.values(), 5).unwrap()[1..].to_vec()
        })
        .collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..4)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let se = (0..4)
        .map(|j| {
            let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            (v / n).sqrt()
        })
        .collect();
    (mean, se)
}

fn within(mean: &[f64], se: &[f64], theory: &[f64], k: f64) -> bool {
    mean.iter()
        .zip(se)
        .zip(theory)
        .all(|((m, s), t)| (m - t).abs() <= k * s)
}

#[test]
fn ma2_sample_autocorrelation_matches_closed_form() {
    let theta = [0.5, -0.75];
    let (mean, se) = empirical_lags(Model::Ma2, &theta);
    let theory = theoretical_autocorr_ma2(&theta, 4).unwrap();
    assert!(
        within(&mean, &se, &theory, 4.0),
        "{mean:?} ± {se:?} vs {theory:?}"
    );
    assert!((mean[0] - 0.0198).abs() < 0.01 && (mean[1] + 0.4752).abs() < 0.01);
}

#[test]
fn simulation_selects_the_yule_walker_ar2_variant() {
    let theta = [0.5, -0.75];
    let (mean, se) = empirical_lags(Model::BimodalAr2, &theta);
    let yw = theoretical_autocorr_ar2(&theta, 4, Ar2AcfVariant::YuleWalker).unwrap();
    let lit = theoretical_autocorr_ar2(&theta, 4, Ar2AcfVariant::AppendixLiteral).unwrap();
    assert!(within(&mean, &se, &yw, 4.0), "{mean:?} ± {se:?} vs {yw:?}");
    assert!(!within(&mean, &se, &lit, 4.0));
}

#[test]
fn ar2_variants_agree_with_simulation_for_positive_k2() {
    let theta = [0.3, 0.4];
    let (mean, se) = empirical_lags(Model::BimodalAr2, &theta);
    for v in [Ar2AcfVariant::YuleWalker, Ar2AcfVariant::AppendixLiteral] {
        let t = theoretical_autocorr_ar2(&theta, 4, v).unwrap();
        assert!(
            within(&mean, &se, &t, 4.0),
            "{v:?}: {mean:?} ± {se:?} vs {t:?}"
        );
    }
}

#[test]
fn yulenet_parameter_gradients_match_finite_differences() {
    let n_s = 512;
    let mut store = ParameterStore::new();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let net = YuleNet::new(YuleNetConfig::new(n_s, 3), &mut store, &mut r).unwrap();
    let mut xr = ChaCha8Rng::seed_from_u64(6);
    let series: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            (0..n_s)
                .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut xr))
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
    let weights = [0.7, -1.3, 0.4, 1.1, -0.2, 0.9];

    let loss = |store: &ParameterStore, grads: bool| {
        let mut g = Graph::new();
        let p = g.bind(store);
        // training mode with a fixed stream: the dropout mask is identical on every call
        let y = net
            .forward_series(&mut g, &p, &refs, true, &mut rng::stream(1, 0, 0))
            .unwrap();
        let w = g.input(weights.to_vec(), &[2, 3]).unwrap();
        let prod = g.mul(y, w).unwrap();
        let l = g.sum(prod);
        let value = g.scalar(l);
        let gs = if grads {
            g.backward(l).unwrap();
            Some(g.param_grads(&p, store))
        } else {
            None
        };
        (value, gs)
    };

    let (_, grads) = loss(&store, true);
    let grads = grads.unwrap();
    let mut pick = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (slot, &id) in ids.iter().enumerate() {
        let n = store.get(id).data.len();
        for _ in 0..8 {
            let i = rand::Rng::random_range(&mut pick, 0..n);
            let orig = store.get(id).data[i];
            store.get_mut(id).data[i] = orig + gradcheck::FD_STEP;
            let up = loss(&store, false).0;
            store.get_mut(id).data[i] = orig - gradcheck::FD_STEP;
            let down = loss(&store, false).0;
            store.get_mut(id).data[i] = orig;
            let fd = (up - down) / (2.0 * gradcheck::FD_STEP);
            worst = worst.max(gradcheck::relative_error(grads[slot][i], fd));
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}
